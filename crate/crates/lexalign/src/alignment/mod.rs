//! Learning the linear map between embedding spaces: the discriminator, the
//! three mapping losses, joint training, the β orthogonality-projection
//! baseline, and the unsupervised model-selection criterion.

mod discriminator;
mod losses;
mod train;

pub use discriminator::{
    loss_discriminator, loss_discriminator_value, loss_generator_adv, DiscriminatorGrads,
    DiscriminatorParams, PROB_CLAMP,
};
pub use losses::{
    build_csls_context, loss_orthogonality, loss_supervised, CslsContext, SimilarityFn,
};
pub use train::{train, TrainOutcome};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metric::{self, RetrievalMethod, RetrievalOptions};

const MAPPING_MAGIC: &[u8; 4] = b"LEXW";
const MAPPING_VERSION: u16 = 1;

/// Where a mapping matrix came from.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub mode: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance { mode: "unspecified".to_string(), seed: 0, config_hash: String::new() }
    }
}

/// A d×d linear map from the source space to the target space.
#[derive(Debug, Clone)]
pub struct MappingMatrix {
    w: Array2<f64>,
    provenance: Provenance,
}

impl MappingMatrix {
    pub fn identity(d: usize) -> Self {
        MappingMatrix { w: Array2::eye(d), provenance: Provenance::default() }
    }

    pub fn from_matrix(w: Array2<f64>) -> Result<Self> {
        if w.nrows() != w.ncols() {
            return Err(Error::invalid(format!(
                "mapping matrix must be square, got {}×{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("mapping matrix has non-finite entries".to_string()));
        }
        Ok(MappingMatrix { w, provenance: Provenance::default() })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    /// `Wx`.
    pub fn apply(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.w.dot(&x)
    }

    /// Map every row: returns `rows · Wᵀ`.
    pub fn map_rows(&self, rows: ArrayView2<'_, f64>) -> Array2<f64> {
        rows.dot(&self.w.t())
    }

    /// Text format: a line holding `d`, then d rows of d decimals. Values use
    /// the shortest decimal form that round-trips.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let go = |out: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(out, "{}", self.dim())?;
            for row in self.w.rows() {
                let mut first = true;
                for v in row.iter() {
                    if !first {
                        write!(out, " ")?;
                    }
                    write!(out, "{v}")?;
                    first = false;
                }
                writeln!(out)?;
            }
            out.flush()
        };
        go(&mut out).map_err(|e| Error::io(path, e))
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty mapping file"))?
            .map_err(|e| Error::io(path, e))?;
        let d: usize = header
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, 1, "expected dimension on first line"))?;
        let mut data = Vec::with_capacity(d * d);
        for (i, line) in lines.enumerate().take(d) {
            let line = line.map_err(|e| Error::io(path, e))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, i + 2, "non-numeric matrix entry"))?;
            if row.len() != d {
                return Err(Error::parse(path, i + 2, format!("expected {d} entries")));
            }
            data.extend(row);
        }
        if data.len() != d * d {
            return Err(Error::parse(path, 0, "truncated mapping file"));
        }
        let w = Array2::from_shape_vec((d, d), data).expect("shape checked");
        MappingMatrix::from_matrix(w)
            .map(|m| m.with_provenance(Provenance { mode: "loaded".into(), ..Default::default() }))
    }

    /// Versioned binary format; round-trips the matrix bit-exactly and keeps
    /// the provenance record.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let go = |out: &mut BufWriter<File>| -> std::io::Result<()> {
            out.write_all(MAPPING_MAGIC)?;
            out.write_all(&MAPPING_VERSION.to_le_bytes())?;
            out.write_all(&(self.dim() as u64).to_le_bytes())?;
            for v in self.w.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
            let mode = self.provenance.mode.as_bytes();
            out.write_all(&(mode.len() as u32).to_le_bytes())?;
            out.write_all(mode)?;
            out.write_all(&self.provenance.seed.to_le_bytes())?;
            let hash = self.provenance.config_hash.as_bytes();
            out.write_all(&(hash.len() as u32).to_le_bytes())?;
            out.write_all(hash)?;
            out.flush()
        };
        go(&mut out).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad =
            |msg: &str| Error::CacheFormat { path: path.to_path_buf(), msg: msg.to_string() };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != MAPPING_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2).map_err(|e| Error::io(path, e))?;
        if u16::from_le_bytes(b2) != MAPPING_VERSION {
            return Err(bad("unsupported version"));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|e| Error::io(path, e))?;
        let d = u64::from_le_bytes(b8) as usize;
        let mut data = Vec::with_capacity(d * d);
        for _ in 0..d * d {
            r.read_exact(&mut b8).map_err(|e| Error::io(path, e))?;
            data.push(f64::from_le_bytes(b8));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|e| Error::io(path, e))?;
        let mut mode = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut mode).map_err(|e| Error::io(path, e))?;
        r.read_exact(&mut b8).map_err(|e| Error::io(path, e))?;
        let seed = u64::from_le_bytes(b8);
        r.read_exact(&mut b4).map_err(|e| Error::io(path, e))?;
        let mut hash = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut hash).map_err(|e| Error::io(path, e))?;
        let w = Array2::from_shape_vec((d, d), data).map_err(|_| bad("truncated matrix"))?;
        Ok(MappingMatrix::from_matrix(w)?.with_provenance(Provenance {
            mode: String::from_utf8(mode).map_err(|_| bad("invalid mode string"))?,
            seed,
            config_hash: String::from_utf8(hash).map_err(|_| bad("invalid hash string"))?,
        }))
    }
}

/// Scaling of the three mapping-loss terms. The joint loss is an unweighted
/// sum by default; the weights stay configurable.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub adv: f64,
    pub sup: f64,
    pub orth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { adv: 1.0, sup: 1.0, orth: 1.0 }
    }
}

/// Supervision regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Unsupervised,
    Supervised,
    Semi,
}

/// Mapping initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WInit {
    Identity,
    RandomOrthogonal,
}

/// Optimizer for the supervised loss term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupOptimizer {
    Sgd,
    Adam,
}

/// Full training configuration. Defaults follow the reference hyperparameter
/// set: batch 32, SGD with lr 0.1 decayed ×0.98 per round and halved after
/// two rounds without criterion improvement, top-75000 training vocabulary,
/// discriminator 2048×2048 with input dropout 0.1, label smoothing 0.1, and
/// LeakyReLU slope 0.2; CSLS neighborhoods of 10 and hubness threshold 20.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub f_s: SimilarityFn,
    pub loss_weights: LossWeights,
    pub batch_size: usize,
    pub vocab_cap: usize,
    pub dis_steps_per_map_step: usize,
    pub rounds: usize,
    pub iters_per_round: usize,
    pub lr: f64,
    pub lr_decay_per_round: f64,
    pub lr_halving_patience: usize,
    /// Discriminator learning rate; defaults to `lr` when unset.
    pub dis_lr: Option<f64>,
    pub csls_k: usize,
    pub hubness_threshold: usize,
    pub seed: u64,
    pub dis_hidden: usize,
    pub dis_input_dropout: f64,
    pub dis_label_smoothing: f64,
    pub dis_leaky_slope: f64,
    pub w_init: WInit,
    pub sup_optimizer: SupOptimizer,
    /// Mapping steps between rebuilds of the frozen CSLS neighbor sets.
    pub csls_refresh_steps: usize,
    /// Most-frequent source words scored by the unsupervised criterion.
    pub criterion_vocab: usize,
    /// Target vocabulary cap for retrieval and the criterion.
    pub retrieval_vocab: usize,
    /// Candidate pool per side for dictionary expansion.
    pub expansion_vocab: usize,
    pub refine_rounds: usize,
    /// Emit a log record every this many mapping steps (0: rounds only).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Unsupervised,
            f_s: SimilarityFn::Cosine,
            loss_weights: LossWeights::default(),
            batch_size: 32,
            vocab_cap: 75_000,
            dis_steps_per_map_step: 5,
            rounds: 15,
            iters_per_round: 10_000,
            lr: 0.1,
            lr_decay_per_round: 0.98,
            lr_halving_patience: 2,
            dis_lr: None,
            csls_k: 10,
            hubness_threshold: 20,
            seed: 0,
            dis_hidden: 2048,
            dis_input_dropout: 0.1,
            dis_label_smoothing: 0.1,
            dis_leaky_slope: 0.2,
            w_init: WInit::Identity,
            sup_optimizer: SupOptimizer::Sgd,
            csls_refresh_steps: 500,
            criterion_vocab: 10_000,
            retrieval_vocab: 200_000,
            expansion_vocab: 15_000,
            refine_rounds: 5,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    /// Preset for the 2-d shape dataset: a reduced discriminator and a short
    /// schedule sized so a full run takes seconds.
    pub fn toy(seed: u64) -> Self {
        TrainConfig {
            dis_hidden: 64,
            rounds: 10,
            iters_per_round: 300,
            dis_steps_per_map_step: 3,
            csls_k: 5,
            criterion_vocab: 2000,
            expansion_vocab: 5000,
            seed,
            ..Default::default()
        }
    }

    /// Hex SHA-256 of the serialized config, recorded in provenance.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

/// Combined mapping loss: `λ_adv·L_adv + λ_sup·L_sup + λ_orth·L_orth`, with
/// absent terms dropped.
pub fn total_map_loss(
    weights: &LossWeights,
    adv: Option<f64>,
    sup: Option<f64>,
    orth: Option<f64>,
) -> f64 {
    weights.adv * adv.unwrap_or(0.0)
        + weights.sup * sup.unwrap_or(0.0)
        + weights.orth * orth.unwrap_or(0.0)
}

/// One step of the hard orthogonality-projection baseline:
/// `W ← (1 + β)W − β(WWᵀ)W`.
pub fn beta_projection_step(w: &MappingMatrix, beta: f64) -> Result<MappingMatrix> {
    if beta <= 0.0 {
        return Err(Error::invalid("beta must be positive"));
    }
    let m = w.matrix();
    let wwt = m.dot(&m.t());
    let next = m.to_owned() * (1.0 + beta) - wwt.dot(&m) * beta;
    MappingMatrix::from_matrix(next).map(|n| n.with_provenance(w.provenance().clone()))
}

/// Model-selection signal needing no gold dictionary: translate the most
/// frequent source words by CSLS rank-1 retrieval and average the cosine
/// between each mapped source word and its retrieved translation.
pub fn unsupervised_criterion(
    w: &MappingMatrix,
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<f64> {
    let m_val = cfg.criterion_vocab.min(src.len()).max(1);
    let query_ids: Vec<usize> = (0..m_val).collect();
    let tgt_capped;
    let tgt_ref = if tgt.len() > cfg.retrieval_vocab {
        tgt_capped = tgt.truncated(cfg.retrieval_vocab);
        &tgt_capped
    } else {
        tgt
    };
    let opts = RetrievalOptions {
        method: RetrievalMethod::Csls,
        k: cfg.csls_k.min(tgt_ref.len()).min(src.len()),
        topn: 1,
        ..Default::default()
    };
    let index = metric::nn_retrieve_subset(src, &query_ids, w, tgt_ref, &opts)?;
    let mut total = 0.0;
    for (pos, &qid) in index.queries().iter().enumerate() {
        let (t, _) = index.neighbors(pos)[0];
        let mapped = w.apply(src.row(qid));
        total += metric::cosine(mapped.view(), tgt_ref.row(t))?;
    }
    Ok(total / query_ids.len() as f64)
}
