//! The joint training loop: alternating discriminator updates and mapping
//! updates on the combined loss, with per-round learning-rate decay, halving
//! on criterion stagnation, and best-criterion checkpointing.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::alignment::{
    build_csls_context, loss_discriminator, loss_generator_adv, loss_orthogonality,
    loss_supervised, total_map_loss, unsupervised_criterion, CslsContext, DiscriminatorParams,
    MappingMatrix, Provenance, SimilarityFn, SupOptimizer, TrainConfig, TrainMode, WInit,
};
use crate::embeddings::{AlignedLexicon, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval;
use crate::metric::{self, RetrievalMethod, RetrievalOptions};

/// One line of the training log. Loss fields hold running means since the
/// previous record; absent terms and not-yet-computed values are `null`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub round: usize,
    pub loss_dis: Option<f64>,
    pub loss_adv: Option<f64>,
    pub loss_sup: Option<f64>,
    pub loss_orth: Option<f64>,
    pub lr: f64,
    pub criterion: Option<f64>,
    pub precision: Option<f64>,
}

/// Line-delimited JSON training log.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for rec in &self.records {
            let line = serde_json::to_string(rec)
                .map_err(|e| Error::invalid(format!("log serialization: {e}")))?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, i + 1, format!("bad log record: {e}")))?;
            records.push(rec);
        }
        Ok(TrainLog { records })
    }
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    /// The checkpoint with the best unsupervised criterion seen.
    pub mapping: MappingMatrix,
    pub log: TrainLog,
    pub best_criterion: f64,
    /// True when training stopped on a non-finite loss; `mapping` then holds
    /// the last finite checkpoint.
    pub diverged: bool,
}

struct RunningMeans {
    dis: (f64, usize),
    adv: (f64, usize),
    sup: (f64, usize),
    orth: (f64, usize),
}

impl RunningMeans {
    fn new() -> Self {
        RunningMeans { dis: (0.0, 0), adv: (0.0, 0), sup: (0.0, 0), orth: (0.0, 0) }
    }

    fn mean(slot: &(f64, usize)) -> Option<f64> {
        (slot.1 > 0).then(|| slot.0 / slot.1 as f64)
    }
}

/// Adam state for the supervised term, used when
/// [`SupOptimizer::Adam`] is selected.
struct AdamState {
    m: Array2<f64>,
    v: Array2<f64>,
    t: u64,
}

impl AdamState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(d: usize) -> Self {
        AdamState { m: Array2::zeros((d, d)), v: Array2::zeros((d, d)), t: 0 }
    }

    fn step(&mut self, w: &mut Array2<f64>, grad: &Array2<f64>, lr: f64) {
        self.t += 1;
        self.m.zip_mut_with(grad, |m, &g| *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g);
        self.v.zip_mut_with(grad, |v, &g| *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g);
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for ((w, &m), &v) in w.iter_mut().zip(self.m.iter()).zip(self.v.iter()) {
            *w -= lr * (m / bc1) / ((v / bc2).sqrt() + Self::EPS);
        }
    }
}

fn init_mapping(d: usize, init: WInit, rng: &mut ChaCha8Rng) -> Array2<f64> {
    match init {
        WInit::Identity => Array2::eye(d),
        WInit::RandomOrthogonal => {
            let gauss = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
            let m = nalgebra::DMatrix::from_row_iterator(d, d, gauss.iter().copied());
            let qr = m.qr();
            let mut q = qr.q();
            let r = qr.r();
            // Fix signs so the factorization is unique: diag(R) ≥ 0.
            for j in 0..d {
                if r[(j, j)] < 0.0 {
                    for i in 0..d {
                        q[(i, j)] = -q[(i, j)];
                    }
                }
            }
            Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)])
        }
    }
}

fn sample_batch_rows(
    table: &EmbeddingTable,
    cap: usize,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let cap = cap.min(table.len()).max(1);
    let ids: Vec<usize> = (0..batch).map(|_| rng.random_range(0..cap)).collect();
    table.vectors().select(Axis(0), &ids)
}

fn precision_at_one(
    w: &MappingMatrix,
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    gold: &AlignedLexicon,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut query_ids: Vec<usize> = gold.pairs().iter().map(|&(s, _)| s).collect();
    query_ids.sort_unstable();
    query_ids.dedup();
    let opts = RetrievalOptions {
        method: RetrievalMethod::Csls,
        k: cfg.csls_k.min(tgt.len()).min(src.len()),
        topn: 1,
        ..Default::default()
    };
    let index = metric::nn_retrieve_subset(src, &query_ids, w, tgt, &opts)?;
    eval::precision_at_k(&index, gold, 1)
}

/// Train a mapping from `src` to `tgt`.
///
/// Per iteration: `dis_steps_per_map_step` discriminator updates on fresh
/// uniform batches drawn from the top `vocab_cap` rows, then one mapping
/// update on the combined loss. Per round: the criterion is evaluated, the
/// best checkpoint kept, the learning rate decayed, and halved after
/// `lr_halving_patience` rounds without improvement. `eval_lexicon`, when
/// given, adds gold precision@1 to each round's log record.
pub fn train(
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    lexicon: Option<&AlignedLexicon>,
    cfg: &TrainConfig,
    eval_lexicon: Option<&AlignedLexicon>,
) -> Result<TrainOutcome> {
    if src.dim() != tgt.dim() {
        return Err(Error::invalid(format!(
            "source dim {} != target dim {}",
            src.dim(),
            tgt.dim()
        )));
    }
    let lexicon = match cfg.mode {
        TrainMode::Unsupervised => None,
        TrainMode::Supervised | TrainMode::Semi => {
            let lex = lexicon.ok_or_else(|| {
                Error::empty("supervised/semi training requires a lexicon")
            })?;
            if lex.is_empty() {
                return Err(Error::empty("supervised/semi training with an empty lexicon"));
            }
            Some(lex)
        }
    };
    let d = src.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut w = init_mapping(d, cfg.w_init, &mut rng);
    let adv_active = cfg.loss_weights.adv > 0.0;
    let orth_active = cfg.loss_weights.orth > 0.0;
    let sup_active = lexicon.is_some() && cfg.loss_weights.sup > 0.0;

    let mut dis = if adv_active {
        Some(DiscriminatorParams::init(
            d,
            cfg.dis_hidden,
            cfg.dis_input_dropout,
            cfg.dis_leaky_slope,
            cfg.dis_label_smoothing,
            &mut rng,
        )?)
    } else {
        None
    };

    let provenance = Provenance {
        mode: format!("{:?}", cfg.mode).to_lowercase(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
    };
    let as_mapping = |w: &Array2<f64>| -> Result<MappingMatrix> {
        Ok(MappingMatrix::from_matrix(w.clone())?.with_provenance(provenance.clone()))
    };

    let mut csls_ctx: Option<CslsContext> = None;
    let mut adam_state: Option<AdamState> = None;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Array2<f64>)> = None;
    let mut last_finite = w.clone();
    let mut lr = cfg.lr;
    let mut dis_lr = cfg.dis_lr.unwrap_or(cfg.lr);
    let mut rounds_since_improve = 0usize;
    let mut diverged = false;
    let mut global_iter = 0usize;
    let mut means = RunningMeans::new();

    'rounds: for round in 0..cfg.rounds {
        for _ in 0..cfg.iters_per_round {
            global_iter += 1;

            // Discriminator phase.
            if let Some(dis_params) = dis.as_mut() {
                let mapping = MappingMatrix::from_matrix(w.clone())?;
                for _ in 0..cfg.dis_steps_per_map_step {
                    let src_batch =
                        sample_batch_rows(src, cfg.vocab_cap, cfg.batch_size, &mut rng);
                    let tgt_batch =
                        sample_batch_rows(tgt, cfg.vocab_cap, cfg.batch_size, &mut rng);
                    let mapped = mapping.map_rows(src_batch.view());
                    let (loss, grads) = loss_discriminator(
                        dis_params,
                        mapped.view(),
                        tgt_batch.view(),
                        Some(&mut rng),
                    )?;
                    if !loss.is_finite() {
                        diverged = true;
                        break 'rounds;
                    }
                    means.dis.0 += loss;
                    means.dis.1 += 1;
                    dis_params.sgd_step(&grads, dis_lr);
                }
            }

            // Mapping phase: all active terms on the same iteration.
            let mapping = as_mapping(&w)?;
            let mut sgd_grad = Array2::<f64>::zeros((d, d));
            let mut adv_val = None;
            let mut orth_val = None;
            let mut sup_val = None;
            let mut sup_grad: Option<Array2<f64>> = None;

            let adv_batch = if adv_active || orth_active {
                Some(sample_batch_rows(src, cfg.vocab_cap, cfg.batch_size, &mut rng))
            } else {
                None
            };
            if adv_active {
                let batch = adv_batch.as_ref().expect("adversarial batch");
                let (loss, grad) =
                    loss_generator_adv(dis.as_ref().expect("discriminator"), &mapping, batch.view())?;
                adv_val = Some(loss);
                sgd_grad.scaled_add(cfg.loss_weights.adv, &grad);
            }
            if orth_active {
                let batch = adv_batch.as_ref().expect("orthogonality batch");
                let (loss, grad) = loss_orthogonality(&mapping, batch.view())?;
                orth_val = Some(loss);
                sgd_grad.scaled_add(cfg.loss_weights.orth, &grad);
            }
            if sup_active {
                let lex = lexicon.expect("lexicon");
                if cfg.f_s == SimilarityFn::Csls {
                    let stale = (global_iter - 1) % cfg.csls_refresh_steps.max(1) == 0;
                    if csls_ctx.is_none() || stale {
                        csls_ctx =
                            Some(build_csls_context(&mapping, src, tgt, lex, cfg.csls_k)?);
                    }
                }
                let batch: Vec<(usize, usize)> = (0..cfg.batch_size)
                    .map(|_| lex.pairs()[rng.random_range(0..lex.len())])
                    .collect();
                let (loss, grad) =
                    loss_supervised(&mapping, src, tgt, &batch, cfg.f_s, csls_ctx.as_ref())?;
                sup_val = Some(loss);
                match cfg.sup_optimizer {
                    SupOptimizer::Sgd => sgd_grad.scaled_add(cfg.loss_weights.sup, &grad),
                    SupOptimizer::Adam => sup_grad = Some(grad * cfg.loss_weights.sup),
                }
            }

            let total = total_map_loss(&cfg.loss_weights, adv_val, sup_val, orth_val);
            let grads_finite = total.is_finite()
                && sgd_grad.iter().all(|v| v.is_finite())
                && sup_grad.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()));
            if !grads_finite {
                diverged = true;
                break 'rounds;
            }
            if let Some(v) = adv_val {
                means.adv.0 += v;
                means.adv.1 += 1;
            }
            if let Some(v) = sup_val {
                means.sup.0 += v;
                means.sup.1 += 1;
            }
            if let Some(v) = orth_val {
                means.orth.0 += v;
                means.orth.1 += 1;
            }

            w.scaled_add(-lr, &sgd_grad);
            if let Some(grad) = sup_grad {
                let adam = adam_state.get_or_insert_with(|| AdamState::new(d));
                adam.step(&mut w, &grad, lr);
            }
            if w.iter().any(|v| !v.is_finite()) {
                diverged = true;
                break 'rounds;
            }

            if cfg.log_every > 0 && global_iter % cfg.log_every == 0 {
                log.records.push(TrainRecord {
                    iter: global_iter,
                    round,
                    loss_dis: RunningMeans::mean(&means.dis),
                    loss_adv: RunningMeans::mean(&means.adv),
                    loss_sup: RunningMeans::mean(&means.sup),
                    loss_orth: RunningMeans::mean(&means.orth),
                    lr,
                    criterion: None,
                    precision: None,
                });
                means = RunningMeans::new();
            }
        }

        // Round boundary: criterion, checkpoint, schedule.
        let mapping = match as_mapping(&w) {
            Ok(m) => m,
            Err(_) => {
                diverged = true;
                break 'rounds;
            }
        };
        let criterion = match unsupervised_criterion(&mapping, src, tgt, cfg) {
            Ok(c) if c.is_finite() => c,
            _ => {
                diverged = true;
                break 'rounds;
            }
        };
        last_finite = w.clone();
        let precision = match eval_lexicon {
            Some(gold) if !gold.is_empty() => {
                Some(precision_at_one(&mapping, src, tgt, gold, cfg)?)
            }
            _ => None,
        };
        log.records.push(TrainRecord {
            iter: global_iter,
            round,
            loss_dis: RunningMeans::mean(&means.dis),
            loss_adv: RunningMeans::mean(&means.adv),
            loss_sup: RunningMeans::mean(&means.sup),
            loss_orth: RunningMeans::mean(&means.orth),
            lr,
            criterion: Some(criterion),
            precision,
        });
        means = RunningMeans::new();

        let improved = best.as_ref().is_none_or(|(c, _)| criterion > *c);
        if improved {
            best = Some((criterion, w.clone()));
            rounds_since_improve = 0;
        } else {
            rounds_since_improve += 1;
        }
        lr *= cfg.lr_decay_per_round;
        dis_lr *= cfg.lr_decay_per_round;
        if rounds_since_improve >= cfg.lr_halving_patience.max(1) {
            lr *= 0.5;
            dis_lr *= 0.5;
            rounds_since_improve = 0;
        }
    }

    let (best_criterion, best_w) = match best {
        Some((c, m)) => (c, m),
        // Divergence before the first round boundary: last finite state.
        None => {
            let mapping = as_mapping(&last_finite)?;
            let c = unsupervised_criterion(&mapping, src, tgt, cfg).unwrap_or(f64::NEG_INFINITY);
            (c, last_finite)
        }
    };
    Ok(TrainOutcome {
        mapping: MappingMatrix::from_matrix(best_w)?.with_provenance(provenance),
        log,
        best_criterion,
        diverged,
    })
}
