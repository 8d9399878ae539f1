//! Orthogonal Procrustes solving, CSLS dictionary expansion with mutual
//! matching, hubness filtering, and the iterative refinement loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};

use crate::alignment::{unsupervised_criterion, MappingMatrix, Provenance, TrainConfig};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metric::{self, NeighborIndex, RetrievalMethod, RetrievalOptions};

/// A dictionary induced from mutually-matched pairs under a mapping.
#[derive(Debug, Clone)]
pub struct ExpansionDictionary {
    /// `(source index, target index, csls score)`, mutual rank-1 matches only.
    pairs: Vec<(usize, usize, f64)>,
    /// Refinement round that produced this dictionary.
    pub round: usize,
}

impl ExpansionDictionary {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize, f64)] {
        &self.pairs
    }

    /// Write as the two-token dictionary format plus a third score column.
    pub fn write(
        &self,
        src: &EmbeddingTable,
        tgt: &EmbeddingTable,
        path: &Path,
    ) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for &(s, t, score) in &self.pairs {
            writeln!(out, "{} {} {}", src.word(s), tgt.word(t), score)
                .map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Outcome of a Procrustes solve.
#[derive(Debug)]
pub struct ProcrustesSolution {
    pub mapping: MappingMatrix,
    /// Set when the cross-covariance was (numerically) rank deficient; the
    /// returned matrix is still orthogonal but not unique.
    pub degenerate: bool,
}

/// The orthogonal `W` minimizing `‖WX − Y‖_F` over paired rows: with
/// `UΣVᵀ = svd(YᵀX)`, the solution is `W = UVᵀ`.
pub fn procrustes_solve(
    src_vectors: ArrayView2<'_, f64>,
    tgt_vectors: ArrayView2<'_, f64>,
) -> Result<ProcrustesSolution> {
    let n = src_vectors.nrows();
    let d = src_vectors.ncols();
    if n == 0 {
        return Err(Error::empty("procrustes over zero pairs"));
    }
    if tgt_vectors.nrows() != n || tgt_vectors.ncols() != d {
        return Err(Error::invalid("procrustes inputs must have matching shapes"));
    }
    let cross = tgt_vectors.t().dot(&src_vectors); // d × d
    let m = nalgebra::DMatrix::from_row_iterator(d, d, cross.iter().copied());
    let svd = m.svd(true, true);
    let mut u = svd.u.ok_or_else(|| Error::invalid("svd did not produce U"))?;
    let mut v_t = svd.v_t.ok_or_else(|| Error::invalid("svd did not produce Vᵀ"))?;

    // Deterministic sign convention: the largest-magnitude entry of each left
    // singular vector is positive; the matching right vector flips with it.
    for j in 0..d {
        let mut arg = 0;
        let mut best = 0.0f64;
        for i in 0..d {
            if u[(i, j)].abs() > best {
                best = u[(i, j)].abs();
                arg = i;
            }
        }
        if u[(arg, j)] < 0.0 {
            for i in 0..d {
                u[(i, j)] = -u[(i, j)];
                v_t[(j, i)] = -v_t[(j, i)];
            }
        }
    }

    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let degenerate = svd
        .singular_values
        .iter()
        .any(|&s| s <= sigma_max * 1e-12 || sigma_max == 0.0);

    let w_na = u * v_t;
    let w = Array2::from_shape_fn((d, d), |(i, j)| w_na[(i, j)]);
    Ok(ProcrustesSolution {
        mapping: MappingMatrix::from_matrix(w)?
            .with_provenance(Provenance { mode: "procrustes".into(), ..Default::default() }),
        degenerate,
    })
}

/// Mutual CSLS rank-1 matches between the top `expansion_vocab` words of each
/// side under `w`, scored by CSLS. Also returns the forward rank-1 index over
/// the pool, which hubness filtering consumes.
pub fn expand_dictionary(
    w: &MappingMatrix,
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    cfg: &TrainConfig,
    round: usize,
) -> Result<(ExpansionDictionary, NeighborIndex)> {
    let src_pool = src.truncated(cfg.expansion_vocab);
    let tgt_pool = tgt.truncated(cfg.expansion_vocab);
    if src_pool.is_empty() || tgt_pool.is_empty() {
        return Err(Error::empty("dictionary expansion over an empty pool"));
    }
    let k = cfg.csls_k.min(src_pool.len()).min(tgt_pool.len());
    let opts = RetrievalOptions {
        method: RetrievalMethod::Csls,
        k,
        topn: 1,
        ..Default::default()
    };

    // Forward: best target per source.
    let forward = metric::nn_retrieve(&src_pool, w, &tgt_pool, &opts)?;
    // Backward: best source per target under the same score matrix, found by
    // scanning the forward scores transposed.
    let mapped = w.map_rows(src_pool.vectors());
    let qhat = metric::row_normalized(mapped.view(), "mapped source")?;
    let that = metric::row_normalized(tgt_pool.vectors(), "target")?;
    let (gamma_q, gamma_t) = metric::knn_gammas(&qhat, &that, k, false, opts.memory_budget)?;

    let m = tgt_pool.len();
    let mut best_src_for_tgt: Vec<(usize, f64)> = vec![(usize::MAX, f64::NEG_INFINITY); m];
    let chunk = (opts.memory_budget / (8 * m.max(1))).clamp(1, 8192);
    for start in (0..src_pool.len()).step_by(chunk) {
        let end = (start + chunk).min(src_pool.len());
        let block = qhat.slice(ndarray::s![start..end, ..]).dot(&that.t());
        for (bi, row) in block.rows().into_iter().enumerate() {
            let i = start + bi;
            for (j, &c) in row.iter().enumerate() {
                let score = 2.0 * c - gamma_q[i] - gamma_t[j];
                let (cur_i, cur_s) = best_src_for_tgt[j];
                if score > cur_s || (score == cur_s && i < cur_i) {
                    best_src_for_tgt[j] = (i, score);
                }
            }
        }
    }

    let mut pairs = Vec::new();
    for (pos, &qid) in forward.queries().iter().enumerate() {
        let (t, score) = forward.neighbors(pos)[0];
        if best_src_for_tgt[t].0 == qid {
            pairs.push((qid, t, score));
        }
    }
    if pairs.is_empty() {
        return Err(Error::empty(format!("no mutual matches in expansion round {round}")));
    }
    Ok((ExpansionDictionary { pairs, round }, forward))
}

/// Drop every pair whose target is the rank-1 neighbor of more than
/// `threshold` queries in `index`.
pub fn hubness_filter(
    dict: ExpansionDictionary,
    index: &NeighborIndex,
    threshold: usize,
) -> ExpansionDictionary {
    let counts = metric::hubness_counts(index);
    let pairs = dict
        .pairs
        .into_iter()
        .filter(|&(_, t, _)| counts[t] <= threshold)
        .collect();
    ExpansionDictionary { pairs, round: dict.round }
}

/// Per-round summary emitted by [`iterative_refine`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct RefineRound {
    pub round: usize,
    pub pairs_before_filter: usize,
    pub pairs_after_filter: usize,
    pub criterion: f64,
    pub degenerate: bool,
}

#[derive(Debug)]
pub struct RefineOutcome {
    pub mapping: MappingMatrix,
    pub best_criterion: f64,
    pub rounds: Vec<RefineRound>,
}

/// Iterate expand → filter → Procrustes for `rounds` rounds, returning the
/// mapping with the best unsupervised criterion across rounds, the input
/// included. Stops early when a round filters away every pair or fails to
/// improve the criterion.
pub fn iterative_refine(
    w0: &MappingMatrix,
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    cfg: &TrainConfig,
    rounds: usize,
    filter_hubs: bool,
) -> Result<RefineOutcome> {
    let mut best = (unsupervised_criterion(w0, src, tgt, cfg)?, w0.clone());
    let mut current = w0.clone();
    let mut summary = Vec::new();
    for round in 0..rounds {
        let (dict, forward) = match expand_dictionary(&current, src, tgt, cfg, round) {
            Ok(v) => v,
            Err(Error::EmptyInput(_)) => break,
            Err(e) => return Err(e),
        };
        let before = dict.len();
        let dict = if filter_hubs {
            hubness_filter(dict, &forward, cfg.hubness_threshold)
        } else {
            dict
        };
        if dict.is_empty() {
            break;
        }
        let src_ids: Vec<usize> = dict.pairs().iter().map(|&(s, _, _)| s).collect();
        let tgt_ids: Vec<usize> = dict.pairs().iter().map(|&(_, t, _)| t).collect();
        let x = src.vectors().select(Axis(0), &src_ids);
        let y = tgt.vectors().select(Axis(0), &tgt_ids);
        let solved = procrustes_solve(x.view(), y.view())?;
        let criterion = unsupervised_criterion(&solved.mapping, src, tgt, cfg)?;
        summary.push(RefineRound {
            round,
            pairs_before_filter: before,
            pairs_after_filter: dict.len(),
            criterion,
            degenerate: solved.degenerate,
        });
        let improved = criterion > best.0;
        if improved {
            best = (criterion, solved.mapping.clone());
        }
        current = solved.mapping;
        if !improved {
            break;
        }
    }
    Ok(RefineOutcome { mapping: best.1, best_criterion: best.0, rounds: summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn frob(m: ArrayView2<f64>) -> f64 {
        m.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn orthogonality_gap(w: &MappingMatrix) -> f64 {
        let wtw = w.matrix().t().dot(&w.matrix());
        frob((&wtw - &Array2::eye(w.dim())).view())
    }

    fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let gauss = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
        let m = nalgebra::DMatrix::from_row_iterator(d, d, gauss.iter().copied());
        let qr = m.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..d {
            if r[(j, j)] < 0.0 {
                for i in 0..d {
                    q[(i, j)] = -q[(i, j)];
                }
            }
        }
        Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)])
    }

    #[test]
    fn identity_when_targets_equal_sources() {
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let sol = procrustes_solve(x.view(), x.view()).unwrap();
        let gap = frob((&sol.mapping.matrix().to_owned() - &Array2::eye(2)).view());
        assert!(gap < 1e-10, "gap {gap}");
    }

    #[test]
    fn recovers_planted_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for d in [2usize, 4, 8] {
            let rot = random_rotation(d, &mut rng);
            let x = Array2::from_shape_fn((3 * d, d), |_| rng.sample::<f64, _>(StandardNormal));
            let y = x.dot(&rot.t());
            let sol = procrustes_solve(x.view(), y.view()).unwrap();
            let gap = frob((&sol.mapping.matrix().to_owned() - &rot).view());
            assert!(gap < 1e-8, "d={d} gap={gap}");
            assert!(orthogonality_gap(&sol.mapping) < 1e-10);
        }
    }

    #[test]
    fn output_is_orthogonal_even_when_degenerate() {
        // Rank-1 cross-covariance: all points on a line.
        let x = array![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        let y = array![[0.0, 1.0], [0.0, 2.0], [0.0, 3.0]];
        let sol = procrustes_solve(x.view(), y.view()).unwrap();
        assert!(sol.degenerate);
        assert!(orthogonality_gap(&sol.mapping) < 1e-10);
    }

    #[test]
    fn left_rotation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let d = 3;
        let x = Array2::from_shape_fn((12, d), |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array2::from_shape_fn((12, d), |_| rng.sample::<f64, _>(StandardNormal));
        let r = random_rotation(d, &mut rng);
        let w = procrustes_solve(x.view(), y.view()).unwrap().mapping;
        let y_rot = y.dot(&r.t());
        let w_rot = procrustes_solve(x.view(), y_rot.view()).unwrap().mapping;
        let expect = r.dot(&w.matrix());
        let gap = frob((&w_rot.matrix().to_owned() - &expect).view());
        assert!(gap < 1e-8, "gap {gap}");
    }

    fn table(rows: Array2<f64>) -> EmbeddingTable {
        let words = (0..rows.nrows()).map(|i| format!("w{i}")).collect();
        EmbeddingTable::new(words, rows).unwrap()
    }

    #[test]
    fn expansion_recovers_exact_permutation() {
        let src = table(array![[1.0, 0.0], [0.0, 1.0], [0.7, 0.7], [-0.5, 0.8]]);
        let perm = [3usize, 0, 2, 1];
        let mut rows = Array2::zeros((4, 2));
        for (t, &s) in perm.iter().enumerate() {
            rows.row_mut(t).assign(&src.row(s));
        }
        let tgt = table(rows);
        let cfg = TrainConfig { csls_k: 2, expansion_vocab: 10, ..Default::default() };
        let (dict, _) =
            expand_dictionary(&MappingMatrix::identity(2), &src, &tgt, &cfg, 0).unwrap();
        assert_eq!(dict.len(), 4);
        for &(s, t, _) in dict.pairs() {
            assert_eq!(perm[t], s);
        }
    }

    #[test]
    fn non_mutual_match_is_excluded() {
        // Five points; source 4 points at target 0's direction, but target 0's
        // best source is 0, so (4, 0) must not survive mutual matching.
        let src = table(array![
            [1.0, 0.0],
            [0.0, 1.0],
            [-1.0, 0.0],
            [0.0, -1.0],
            [0.995, 0.0999]
        ]);
        let tgt = table(array![
            [1.0, 0.0],
            [0.0, 1.0],
            [-1.0, 0.0],
            [0.0, -1.0],
            [-0.7, -0.7]
        ]);
        let cfg = TrainConfig { csls_k: 2, expansion_vocab: 10, ..Default::default() };
        let (dict, _) =
            expand_dictionary(&MappingMatrix::identity(2), &src, &tgt, &cfg, 0).unwrap();
        let sources: Vec<usize> = dict.pairs().iter().map(|&(s, _, _)| s).collect();
        assert!(!sources.contains(&4), "non-mutual pair kept: {:?}", dict.pairs());
    }

    #[test]
    fn expansion_scores_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let src = table(Array2::from_shape_fn((10, 3), |_| {
            rng.sample::<f64, _>(StandardNormal)
        }));
        let tgt = table(Array2::from_shape_fn((10, 3), |_| {
            rng.sample::<f64, _>(StandardNormal)
        }));
        let w = MappingMatrix::identity(3);
        let k = 3;
        let cfg = TrainConfig { csls_k: k, expansion_vocab: 100, ..Default::default() };
        let (dict, _) = expand_dictionary(&w, &src, &tgt, &cfg, 0).unwrap();
        for &(s, t, score) in dict.pairs() {
            // Brute-force CSLS.
            let z = w.apply(src.row(s));
            let mut to_tgt: Vec<f64> = (0..tgt.len())
                .map(|j| metric::cosine(z.view(), tgt.row(j)).unwrap())
                .collect();
            to_tgt.sort_by(|a, b| b.total_cmp(a));
            let gq: f64 = to_tgt[..k].iter().sum::<f64>() / k as f64;
            let mut to_src: Vec<f64> = (0..src.len())
                .map(|i| {
                    let zi = w.apply(src.row(i));
                    metric::cosine(zi.view(), tgt.row(t)).unwrap()
                })
                .collect();
            to_src.sort_by(|a, b| b.total_cmp(a));
            let gt: f64 = to_src[..k].iter().sum::<f64>() / k as f64;
            let brute =
                2.0 * metric::cosine(z.view(), tgt.row(t)).unwrap() - gq - gt;
            assert_abs_diff_eq!(score, brute, epsilon = 1e-10);
        }
    }

    #[test]
    fn hubness_filter_thresholds() {
        let dict = ExpansionDictionary {
            pairs: vec![(0, 0, 1.0), (1, 1, 1.0), (2, 1, 0.9)],
            round: 0,
        };
        // Queries 1..=3 all point at target 1 (count 3); query 0 at target 0.
        let index = NeighborIndex::from_parts(
            1,
            2,
            vec![0, 1, 2, 3],
            vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(1, 0.9)], vec![(1, 0.8)]],
        )
        .unwrap();

        let kept = hubness_filter(dict.clone(), &index, 20);
        assert_eq!(kept.len(), 3, "all counts ≤ 20 keeps dict unchanged");

        let kept = hubness_filter(dict.clone(), &index, 2);
        assert_eq!(
            kept.pairs().iter().map(|&(s, _, _)| s).collect::<Vec<_>>(),
            vec![0],
            "target with count 3 over threshold 2 is dropped"
        );

        let kept = hubness_filter(dict, &index, 0);
        assert!(kept.is_empty(), "threshold 0 drops every rank-1 target");
    }

    #[test]
    fn refine_is_stable_at_exact_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let rows = Array2::from_shape_fn((20, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let t = table(rows).normalize(crate::embeddings::NormScheme::Unit).unwrap();
        let w0 = MappingMatrix::identity(3);
        let cfg = TrainConfig { csls_k: 3, expansion_vocab: 100, ..Default::default() };
        let out = iterative_refine(&w0, &t, &t, &cfg, 3, true).unwrap();
        let drift = frob((&out.mapping.matrix().to_owned() - &Array2::eye(3)).view());
        assert!(drift < 1e-6, "drift {drift}");
        assert!(out.best_criterion >= 1.0 - 1e-9);
    }
}
