//! Mapping losses: supervised pair alignment (cosine or CSLS) and the weak
//! orthogonality (cyclic consistency) loss. Every loss returns its value
//! together with the analytic gradient w.r.t. the mapping matrix.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::alignment::MappingMatrix;
use crate::embeddings::{AlignedLexicon, EmbeddingTable};
use crate::error::{Error, Result};
use crate::metric;

/// Similarity function used for the supervised loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityFn {
    Cosine,
    Csls,
}

/// Frozen CSLS neighbor sets for the supervised loss.
///
/// Recomputing nearest neighbors at every step is intractable and makes the
/// loss non-differentiable at set boundaries, so the sets are rebuilt only
/// every `csls_refresh_steps` mapping updates; between rebuilds the Γ terms
/// are differentiated through `cos(Wx, ·)` with the membership held fixed.
#[derive(Debug, Clone)]
pub struct CslsContext {
    k: usize,
    /// For each lexicon source id: the k nearest target ids to `Wx`.
    tgt_sets: HashMap<usize, Vec<usize>>,
    /// For each lexicon target id: the k nearest mapped-source ids to `y`.
    src_sets: HashMap<usize, Vec<usize>>,
}

impl CslsContext {
    pub fn k(&self) -> usize {
        self.k
    }
}

fn unique(ids: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = ids.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Build the frozen neighbor sets for every pair in the lexicon, under the
/// current mapping. Neighborhoods are taken over the full loaded tables.
pub fn build_csls_context(
    w: &MappingMatrix,
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    lexicon: &AlignedLexicon,
    k: usize,
) -> Result<CslsContext> {
    if lexicon.is_empty() {
        return Err(Error::empty("csls context over an empty lexicon"));
    }
    if k == 0 || k > tgt.len() || k > src.len() {
        return Err(Error::invalid(format!("csls k = {k} out of range")));
    }
    let mapped = w.map_rows(src.vectors());
    let qhat = metric::row_normalized(mapped.view(), "mapped source")?;
    let that = metric::row_normalized(tgt.vectors(), "target")?;

    let src_ids = unique(lexicon.pairs().iter().map(|&(s, _)| s));
    let tgt_ids = unique(lexicon.pairs().iter().map(|&(_, t)| t));

    let mut tgt_sets = HashMap::with_capacity(src_ids.len());
    for &s in &src_ids {
        let sims = that.dot(&qhat.row(s));
        tgt_sets.insert(s, top_ids(sims.view(), k));
    }
    let mut src_sets = HashMap::with_capacity(tgt_ids.len());
    for &t in &tgt_ids {
        let sims = qhat.dot(&that.row(t));
        src_sets.insert(t, top_ids(sims.view(), k));
    }
    Ok(CslsContext { k, tgt_sets, src_sets })
}

fn top_ids(sims: ArrayView1<'_, f64>, k: usize) -> Vec<usize> {
    let mut pairs: Vec<(usize, f64)> = sims.iter().copied().enumerate().collect();
    pairs.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    pairs.truncate(k);
    pairs.into_iter().map(|(i, _)| i).collect()
}

/// ∂cos(z, y)/∂z for fixed `y`.
fn cosine_grad_wrt_first(z: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let nz = z.dot(&z).sqrt();
    let ny = y.dot(&y).sqrt();
    if nz == 0.0 || ny == 0.0 {
        return Err(Error::Divergence("cosine gradient at a zero vector".to_string()));
    }
    let dot = z.dot(&y);
    let mut g = y.to_owned() / (nz * ny);
    g.scaled_add(-dot / (nz * nz * nz * ny), &z.to_owned());
    Ok(g)
}

fn cosine_value(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    metric::cosine(u, v)
}

/// Supervised loss `−mean f_s(Wxᵢ, yᵢ)` over a batch of lexicon pairs, with
/// its gradient w.r.t. `W`. `context` is required for `f_s = Csls`.
pub fn loss_supervised(
    w: &MappingMatrix,
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    batch: &[(usize, usize)],
    f_s: SimilarityFn,
    context: Option<&CslsContext>,
) -> Result<(f64, Array2<f64>)> {
    if batch.is_empty() {
        return Err(Error::empty("supervised loss over an empty batch"));
    }
    match f_s {
        SimilarityFn::Cosine => loss_supervised_cosine(w, src, tgt, batch),
        SimilarityFn::Csls => {
            let ctx = context
                .ok_or_else(|| Error::invalid("f_s = csls requires a CslsContext"))?;
            loss_supervised_csls(w, src, tgt, batch, ctx)
        }
    }
}

fn loss_supervised_cosine(
    w: &MappingMatrix,
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    batch: &[(usize, usize)],
) -> Result<(f64, Array2<f64>)> {
    let d = w.dim();
    let scale = -1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((d, d));
    for &(s, t) in batch {
        let x = src.row(s);
        let y = tgt.row(t);
        let z = w.apply(x);
        loss += scale * cosine_value(z.view(), y)?;
        let g = cosine_grad_wrt_first(z.view(), y)?;
        accumulate_outer(&mut grad, scale, &g, x);
    }
    Ok((loss, grad))
}

/// Each CSLS term is a signed sum of cosines `cos(W·x_a, y_b)`; the gradient
/// is the matching signed sum of cosine gradients pushed through `W`.
fn loss_supervised_csls(
    w: &MappingMatrix,
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    batch: &[(usize, usize)],
    ctx: &CslsContext,
) -> Result<(f64, Array2<f64>)> {
    let d = w.dim();
    let b = batch.len() as f64;
    let k = ctx.k as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((d, d));
    let mut mapped_cache: HashMap<usize, Array1<f64>> = HashMap::new();
    let mut mapped = |id: usize, w: &MappingMatrix, src: &EmbeddingTable| -> Array1<f64> {
        mapped_cache.entry(id).or_insert_with(|| w.apply(src.row(id))).clone()
    };

    for &(s, t) in batch {
        let tgt_set = ctx
            .tgt_sets
            .get(&s)
            .ok_or_else(|| Error::invalid(format!("source id {s} missing from csls context")))?;
        let src_set = ctx
            .src_sets
            .get(&t)
            .ok_or_else(|| Error::invalid(format!("target id {t} missing from csls context")))?;

        // −(1/B) · 2 cos(Wx_s, y_t)
        let z = mapped(s, w, src);
        let y = tgt.row(t);
        loss += (-2.0 / b) * cosine_value(z.view(), y)?;
        let g = cosine_grad_wrt_first(z.view(), y)?;
        accumulate_outer(&mut grad, -2.0 / b, &g, src.row(s));

        // +(1/Bk) Σ_{j ∈ N_tgt(s)} cos(Wx_s, y_j)
        for &j in tgt_set {
            let yj = tgt.row(j);
            loss += (1.0 / (b * k)) * cosine_value(z.view(), yj)?;
            let g = cosine_grad_wrt_first(z.view(), yj)?;
            accumulate_outer(&mut grad, 1.0 / (b * k), &g, src.row(s));
        }

        // +(1/Bk) Σ_{u ∈ N_src(t)} cos(Wx_u, y_t)
        for &u in src_set {
            let zu = mapped(u, w, src);
            loss += (1.0 / (b * k)) * cosine_value(zu.view(), y)?;
            let g = cosine_grad_wrt_first(zu.view(), y)?;
            accumulate_outer(&mut grad, 1.0 / (b * k), &g, src.row(u));
        }
    }
    Ok((loss, grad))
}

/// Weak orthogonality loss `−mean cos(x, WᵀWx)` with gradient w.r.t. `W`.
///
/// With z = WᵀWx and g = ∂cos(x, z)/∂z, the chain rule through both factors
/// of WᵀW gives ∂cos/∂W = (Wx)gᵀ + (Wg)xᵀ.
pub fn loss_orthogonality(
    w: &MappingMatrix,
    batch: ArrayView2<'_, f64>,
) -> Result<(f64, Array2<f64>)> {
    if batch.nrows() == 0 {
        return Err(Error::empty("orthogonality loss over an empty batch"));
    }
    let d = w.dim();
    let scale = -1.0 / batch.nrows() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((d, d));
    let wm = w.matrix();
    for x in batch.rows() {
        let wx = wm.dot(&x);
        let z = wm.t().dot(&wx);
        loss += scale * cosine_value(x, z.view())?;
        let g = cosine_grad_wrt_first(z.view(), x)?; // cos is symmetric in its args
        let wg = wm.dot(&g);
        accumulate_outer(&mut grad, scale, &wx, g.view());
        accumulate_outer(&mut grad, scale, &wg, x);
    }
    Ok((loss, grad))
}

/// `grad += scale · col · rowᵀ`.
fn accumulate_outer(
    grad: &mut Array2<f64>,
    scale: f64,
    col: &Array1<f64>,
    row: ArrayView1<'_, f64>,
) {
    for (i, &c) in col.iter().enumerate() {
        let coef = scale * c;
        for (j, &r) in row.iter().enumerate() {
            grad[(i, j)] += coef * r;
        }
    }
}
