//! Quantifying how far two embedding spaces are from isometric.
//!
//! The Gromov-Hausdorff distance between the spaces is intractable to
//! compute exactly, but it is lower-bounded by the bottleneck distance
//! between the degree-0 persistence diagrams of the two point clouds. This
//! module computes that bound, a Laplacian eigenvalue similarity over
//! mutual-kNN graphs, the `‖I − WᵀW‖²` residual of a trained mapping, and
//! the correlation statistics used to relate all three to task accuracy.

mod bottleneck;
mod persistence;

pub use bottleneck::bottleneck_distance;
pub use persistence::{rips_persistence_deg0, PersistenceDiagram};

use ndarray::{Array2, ArrayView2, Axis};

use crate::alignment::MappingMatrix;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

/// Isometry estimates for one choice of `n_points`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct IsometryReport {
    pub n_points: usize,
    pub gh_lower_bound: f64,
    pub eigenvector_similarity: f64,
    /// `‖I − WᵀW‖²` of a supplied mapping; independent of `n_points`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orthogonality_residual: Option<f64>,
}

/// Mean-center rows, then scale each to unit norm.
fn center_and_normalize(points: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = points.to_owned();
    let mean = out
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::empty("cannot center an empty point set"))?;
    out -= &mean;
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::invalid(format!(
                "row {i} coincides with the centroid; cannot normalize"
            )));
        }
        row /= norm;
    }
    Ok(out)
}

/// Lower bound on the Gromov-Hausdorff distance between the two spaces:
/// take the `n_points` most frequent words of each side, mean-center and
/// unit-normalize them, and return the bottleneck distance between their
/// degree-0 persistence diagrams.
pub fn gh_lower_bound(
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    n_points: usize,
) -> Result<f64> {
    if n_points < 2 {
        return Err(Error::invalid("gh lower bound needs at least 2 points"));
    }
    if n_points > src.len() || n_points > tgt.len() {
        return Err(Error::invalid(format!(
            "n_points = {n_points} exceeds vocabulary ({} / {})",
            src.len(),
            tgt.len()
        )));
    }
    let a = center_and_normalize(src.vectors().slice(ndarray::s![..n_points, ..]))?;
    let b = center_and_normalize(tgt.vectors().slice(ndarray::s![..n_points, ..]))?;
    let da = rips_persistence_deg0(a.view())?;
    let db = rips_persistence_deg0(b.view())?;
    bottleneck_distance(&da, &db)
}

/// Unnormalized Laplacian eigenvalues of the mutual-kNN graph over the top
/// `n_points` rows, sorted descending.
fn laplacian_spectrum(table: &EmbeddingTable, n_points: usize, knn_k: usize) -> Result<Vec<f64>> {
    let points = table.vectors().slice(ndarray::s![..n_points, ..]);
    let unit = crate::metric::row_normalized(points, "embedding")?;
    let sims = unit.dot(&unit.t());

    // k nearest neighbors by cosine, self excluded.
    let mut knn: Vec<Vec<usize>> = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let mut order: Vec<usize> = (0..n_points).filter(|&j| j != i).collect();
        order.sort_unstable_by(|&a, &b| {
            sims[(i, b)].total_cmp(&sims[(i, a)]).then_with(|| a.cmp(&b))
        });
        order.truncate(knn_k);
        order.sort_unstable();
        knn.push(order);
    }

    let mut lap = nalgebra::DMatrix::<f64>::zeros(n_points, n_points);
    for i in 0..n_points {
        for &j in &knn[i] {
            if j > i && knn[j].binary_search(&i).is_ok() {
                lap[(i, j)] = -1.0;
                lap[(j, i)] = -1.0;
                lap[(i, i)] += 1.0;
                lap[(j, j)] += 1.0;
            }
        }
    }
    let eigen = nalgebra::SymmetricEigen::new(lap);
    let mut values: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// Index count such that the partial sum of the descending eigenvalues first
/// exceeds 90% of the total.
fn energy_rank(values: &[f64]) -> usize {
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return values.len();
    }
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if acc > 0.9 * total {
            return i + 1;
        }
    }
    values.len()
}

/// Laplacian eigenvalue similarity between the two spaces: mutual-kNN graphs
/// on each side's top `n_points`, then `Σᵢ (λ¹ᵢ − λ²ᵢ)²` over the leading
/// `r` eigenvalues, where `r` is the smaller of the two sides' 90%-energy
/// ranks. Identical or permuted tables give 0; the metric grows with
/// structural distortion.
pub fn eigenvector_similarity(
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    n_points: usize,
    knn_k: usize,
) -> Result<f64> {
    if knn_k == 0 {
        return Err(Error::invalid("knn_k must be positive"));
    }
    if n_points < knn_k + 1 {
        return Err(Error::invalid(format!(
            "n_points = {n_points} must exceed knn_k = {knn_k}"
        )));
    }
    if n_points > src.len() || n_points > tgt.len() {
        return Err(Error::invalid(format!(
            "n_points = {n_points} exceeds vocabulary ({} / {})",
            src.len(),
            tgt.len()
        )));
    }
    let a = laplacian_spectrum(src, n_points, knn_k)?;
    let b = laplacian_spectrum(tgt, n_points, knn_k)?;
    let r = energy_rank(&a).min(energy_rank(&b));
    Ok(a.iter().zip(&b).take(r).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Squared Frobenius norm of `I − WᵀW`.
pub fn orthogonality_residual(w: &MappingMatrix) -> f64 {
    let m = w.matrix();
    let wtw = m.t().dot(&m);
    let d = w.dim();
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            let diff = target - wtw[(i, j)];
            total += diff * diff;
        }
    }
    total
}

/// Sample Pearson correlation coefficient. Requires equal lengths ≥ 3.
pub fn pearson_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("correlation inputs must have equal length"));
    }
    if a.len() < 3 {
        return Err(Error::invalid("correlation needs at least 3 pairs"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::invalid("correlation undefined for a constant series"));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Spearman rank correlation (Pearson over average-ranked values).
pub fn spearman_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson_correlation(&ranks(a), &ranks(b))
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

/// Drop pairs where either side is missing, returning the complete columns.
pub fn complete_pairs(a: &[Option<f64>], b: &[Option<f64>]) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            xs.push(*x);
            ys.push(*y);
        }
    }
    (xs, ys)
}
