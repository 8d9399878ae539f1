//! Translation accuracy metrics, training-stability extraction, and the 2-d
//! shape dataset that demonstrates the failure mode of purely unsupervised
//! distribution matching.
//!
//! The shape dataset draws six classes from three disjoint regions — a disc,
//! a rectangle, and a triangle — where each region hosts a dense and a
//! sparse sub-cluster (its two classes). The bulk layout is symmetric enough
//! that adversarial matching can align it under two different transforms;
//! only the sub-cluster densities tell them apart, so unsupervised runs
//! split between the planted transform and a spurious rotation, while a few
//! anchor pairs per sub-cluster disambiguate reliably.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::{MappingMatrix, TrainLog};
use crate::embeddings::{AlignedLexicon, EmbeddingTable};
use crate::error::{Error, Result};
use crate::metric::NeighborIndex;

/// Default Frobenius tolerance for [`check_toy_transform`]: the two
/// convergence points of the shape dataset differ by ≈ 2 in Frobenius norm,
/// so 0.15 separates them unambiguously.
pub const DEFAULT_TOY_TOL: f64 = 0.15;

/// Accuracy report for a retrieval run against a gold dictionary.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    /// precision@k per requested k; non-decreasing in k.
    pub precision_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
    pub oov_queries: usize,
    pub criterion_value: f64,
    /// Per-query predictions, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Vec<PredictionRecord>>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PredictionRecord {
    pub source: String,
    pub gold: Vec<String>,
    pub predicted: Vec<String>,
}

/// Fraction of gold source words with any gold target among their top-`k`
/// predictions. One-to-many gold entries count as a hit on any match.
pub fn precision_at_k(
    predictions: &NeighborIndex,
    gold: &AlignedLexicon,
    k: usize,
) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::empty("precision against an empty gold lexicon"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let mut gold_by_source: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(s, t) in gold.pairs() {
        gold_by_source.entry(s).or_default().push(t);
    }
    let mut hits = 0usize;
    for (&source, targets) in &gold_by_source {
        let ranked = predictions.neighbors_of(source).ok_or_else(|| {
            Error::invalid(format!("predictions missing gold source id {source}"))
        })?;
        let top = ranked.iter().take(k);
        let mut hit = false;
        for (tid, _) in top {
            if targets.contains(tid) {
                hit = true;
                break;
            }
        }
        if hit {
            hits += 1;
        }
    }
    Ok(hits as f64 / gold_by_source.len() as f64)
}

/// Class regions of the shape dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
enum Shape {
    Disc,
    Rect,
    Triangle,
}

/// Generator parameters for the 2-d shape dataset. Defaults: disc of radius
/// 1 at the origin, a 2×1 rectangle offset right, a unit triangle offset up,
/// 150/50 points per dense/sparse sub-cluster, and the planted transform
/// equal to a clockwise 90° rotation composed with an x-axis reflection.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub dense_points: usize,
    pub sparse_points: usize,
    pub anchors_per_subcluster: usize,
    /// Planted orthogonal transform, row-major.
    pub transform: [[f64; 2]; 2],
    pub seed: u64,
    pub disc_radius: f64,
    pub rect_width: f64,
    pub rect_height: f64,
    /// x of the rectangle center.
    pub rect_offset: f64,
    /// y of the triangle base.
    pub tri_base_y: f64,
    /// Base width (and height) of the triangle.
    pub tri_size: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            dense_points: 150,
            sparse_points: 50,
            anchors_per_subcluster: 0,
            transform: [[0.0, 1.0], [1.0, 0.0]],
            seed: 0,
            disc_radius: 1.0,
            rect_width: 2.0,
            rect_height: 1.0,
            rect_offset: 2.5,
            tri_base_y: 1.5,
            tri_size: 1.0,
        }
    }
}

impl ToySpec {
    pub fn planted_transform(&self) -> MappingMatrix {
        let w = Array2::from_shape_fn((2, 2), |(i, j)| self.transform[i][j]);
        MappingMatrix::from_matrix(w).expect("planted transform is finite")
    }

    /// The six classes: `(class number, shape, dense?)`.
    fn classes(&self) -> [(usize, Shape, bool); 6] {
        [
            (1, Shape::Disc, true),
            (2, Shape::Disc, false),
            (3, Shape::Rect, true),
            (4, Shape::Rect, false),
            (5, Shape::Triangle, true),
            (6, Shape::Triangle, false),
        ]
    }

    fn class_size(&self, dense: bool) -> usize {
        if dense {
            self.dense_points
        } else {
            self.sparse_points
        }
    }

    /// Sample one point of a class. Dense sub-clusters live in one half of
    /// their shape, sparse ones in the other, so the density contrast is
    /// spatial and breaks the mirror symmetry of the bulk layout.
    fn sample(&self, shape: Shape, dense: bool, rng: &mut ChaCha8Rng) -> (f64, f64) {
        match shape {
            Shape::Disc => {
                let r = self.disc_radius * rng.random::<f64>().sqrt();
                // Dense: upper half; sparse: lower half.
                let theta = std::f64::consts::PI * rng.random::<f64>();
                let theta = if dense { theta } else { -theta };
                (r * theta.cos(), r * theta.sin())
            }
            Shape::Rect => {
                let x = self.rect_offset + self.rect_width * (rng.random::<f64>() - 0.5);
                let half = self.rect_height / 2.0;
                let y = half * rng.random::<f64>();
                (x, if dense { y } else { -y })
            }
            Shape::Triangle => {
                // Uniform over the triangle via the square-root trick, then
                // rejection onto the requested half (dense: left of the
                // median, sparse: right).
                let half = self.tri_size / 2.0;
                let v1 = (-half, self.tri_base_y);
                let v2 = (half, self.tri_base_y);
                let v3 = (0.0, self.tri_base_y + self.tri_size);
                loop {
                    let su = rng.random::<f64>().sqrt();
                    let v = rng.random::<f64>();
                    let x = (1.0 - su) * v1.0 + su * (1.0 - v) * v2.0 + su * v * v3.0;
                    let y = (1.0 - su) * v1.1 + su * (1.0 - v) * v2.1 + su * v * v3.1;
                    if (x < 0.0) == dense {
                        return (x, y);
                    }
                }
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (Vec<(f64, f64)>, Vec<usize>) {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (class, shape, dense) in self.classes() {
            for _ in 0..self.class_size(dense) {
                points.push(self.sample(shape, dense, rng));
                labels.push(class);
            }
        }
        (points, labels)
    }
}

/// A generated shape dataset: tables, anchor lexicon, and class labels
/// (parallel to the table rows).
#[derive(Debug)]
pub struct ToyDataset {
    pub src: EmbeddingTable,
    pub tgt: EmbeddingTable,
    pub anchors: AlignedLexicon,
    pub src_labels: Vec<usize>,
    pub tgt_labels: Vec<usize>,
}

fn to_table(points: &[(f64, f64)], labels: &[usize]) -> EmbeddingTable {
    let mut counters = [0usize; 7];
    let words = labels
        .iter()
        .map(|&c| {
            let i = counters[c];
            counters[c] += 1;
            format!("c{c}_{i}")
        })
        .collect();
    let mut rows = Array2::zeros((points.len(), 2));
    for (i, &(x, y)) in points.iter().enumerate() {
        rows[(i, 0)] = x;
        rows[(i, 1)] = y;
    }
    EmbeddingTable::new(words, rows).expect("generated tokens are unique")
}

/// Generate the dataset: the source is one draw from the spec, the target an
/// independent draw pushed through the planted transform. Anchor pairs link
/// each sampled source point to the target point (same class) whose preimage
/// lies closest, giving near-exact supervision inside every sub-cluster.
pub fn generate_toy(spec: &ToySpec) -> Result<ToyDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (src_points, src_labels) = spec.draw(&mut rng);
    let (tgt_pre, tgt_labels) = spec.draw(&mut rng);
    let planted = spec.planted_transform();
    let tgt_points: Vec<(f64, f64)> = tgt_pre
        .iter()
        .map(|&(x, y)| {
            let v = planted.apply(Array1::from_vec(vec![x, y]).view());
            (v[0], v[1])
        })
        .collect();

    let src = to_table(&src_points, &src_labels);
    let tgt = to_table(&tgt_points, &tgt_labels);

    let mut pairs = Vec::new();
    if spec.anchors_per_subcluster > 0 {
        for (class, _, _) in spec.classes() {
            let src_ids: Vec<usize> = src_labels
                .iter()
                .enumerate()
                .filter(|&(_, &c)| c == class)
                .map(|(i, _)| i)
                .collect();
            let tgt_ids: Vec<usize> = tgt_labels
                .iter()
                .enumerate()
                .filter(|&(_, &c)| c == class)
                .map(|(i, _)| i)
                .collect();
            if src_ids.is_empty() || tgt_ids.is_empty() {
                continue;
            }
            for _ in 0..spec.anchors_per_subcluster {
                let s = src_ids[rng.random_range(0..src_ids.len())];
                let sp = src_points[s];
                // Closest preimage within the class.
                let t = *tgt_ids
                    .iter()
                    .min_by(|&&a, &&b| {
                        let da = dist2(tgt_pre[a], sp);
                        let db = dist2(tgt_pre[b], sp);
                        da.total_cmp(&db)
                    })
                    .expect("class has target points");
                pairs.push((s, t));
            }
        }
    }
    let anchors = AlignedLexicon::new(pairs, src.len(), tgt.len())?;
    Ok(ToyDataset { src, tgt, anchors, src_labels, tgt_labels })
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0) * (a.0 - b.0) + (a.1 - b.1) * (a.1 - b.1)
}

/// True iff `w` lies within `tol` of the planted transform in Frobenius norm.
pub fn check_toy_transform(w: &MappingMatrix, spec: &ToySpec, tol: f64) -> bool {
    if w.dim() != 2 {
        return false;
    }
    let planted = spec.planted_transform();
    let diff = &w.matrix().to_owned() - &planted.matrix().to_owned();
    diff.iter().map(|v| v * v).sum::<f64>().sqrt() < tol
}

/// One per-round point of a training trajectory.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StabilityPoint {
    pub round: usize,
    /// Gold precision@1 when the run logged one.
    pub accuracy: Option<f64>,
    pub criterion: f64,
}

/// Extract the per-round (criterion, accuracy-proxy) series from a training
/// log, for plotting or stability comparison.
pub fn stability_trace(log: &TrainLog) -> Vec<StabilityPoint> {
    log.records
        .iter()
        .filter_map(|r| {
            r.criterion.map(|criterion| StabilityPoint {
                round: r.round,
                accuracy: r.precision,
                criterion,
            })
        })
        .collect()
}
