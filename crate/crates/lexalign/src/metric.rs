//! Similarity kernels and retrieval: cosine, mean k-NN similarity, CSLS,
//! nearest-neighbor retrieval, and hubness counts.
//!
//! CSLS rescales the cosine between a mapped query and a candidate by both
//! points' average similarity to their own k nearest neighbors, which
//! penalizes hub candidates that are close to everything:
//! `csls(x, y) = 2·cos(Wx, y) − Γ_tgt(Wx) − Γ_src(y)`.

use std::io::Write;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::alignment::MappingMatrix;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

/// Scoring rule used by [`nn_retrieve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMethod {
    NnCosine,
    Csls,
}

/// Knobs for [`nn_retrieve`].
#[derive(Debug, Clone)]
pub struct RetrievalOptions {
    pub method: RetrievalMethod,
    /// Neighborhood size for both Γ terms.
    pub k: usize,
    /// Ranked hits kept per query.
    pub topn: usize,
    /// Skip the candidate whose index equals the query id. Only meaningful
    /// when queries and targets are the same table.
    pub self_exclude: bool,
    /// Score-matrix memory budget in bytes; retrieval runs in row chunks.
    pub memory_budget: usize,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        RetrievalOptions {
            method: RetrievalMethod::Csls,
            k: 10,
            topn: 1,
            self_exclude: false,
            memory_budget: 64 << 20,
        }
    }
}

/// Ranked neighbors for a set of queries against a fixed candidate set.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    k: usize,
    n_targets: usize,
    queries: Vec<usize>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl NeighborIndex {
    /// Assemble an index from explicit per-query neighbor lists. Lists must be
    /// sorted by descending score.
    pub fn from_parts(
        k: usize,
        n_targets: usize,
        queries: Vec<usize>,
        neighbors: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        if queries.len() != neighbors.len() {
            return Err(Error::invalid("query and neighbor list lengths differ"));
        }
        for list in &neighbors {
            for pair in list.windows(2) {
                if pair[0].1 < pair[1].1 {
                    return Err(Error::invalid("neighbor list not sorted by descending score"));
                }
            }
            if let Some(&(id, _)) = list.iter().find(|(id, _)| *id >= n_targets) {
                return Err(Error::invalid(format!("neighbor id {id} out of range")));
            }
        }
        Ok(NeighborIndex { k, n_targets, queries, neighbors })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Query ids (row indices into the query table), in retrieval order.
    pub fn queries(&self) -> &[usize] {
        &self.queries
    }

    /// Ranked `(target id, score)` hits for the `i`-th query.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Ranked hits for a query id, if it was retrieved.
    pub fn neighbors_of(&self, query_id: usize) -> Option<&[(usize, f64)]> {
        let i = self.queries.iter().position(|&q| q == query_id)?;
        Some(&self.neighbors[i])
    }

    /// Write the index as TSV: `query_word  rank  target_word  score`.
    pub fn export_tsv<W: Write>(
        &self,
        query_words: &[String],
        target_words: &[String],
        out: &mut W,
    ) -> std::io::Result<()> {
        for (qi, list) in self.queries.iter().zip(&self.neighbors) {
            for (rank, (tid, score)) in list.iter().enumerate() {
                writeln!(out, "{}\t{}\t{}\t{}", query_words[*qi], rank + 1, target_words[*tid], score)?;
            }
        }
        Ok(())
    }
}

/// Cosine similarity. Errors on a zero vector.
pub fn cosine(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine of a zero vector"));
    }
    Ok(u.dot(&v) / (nu * nv))
}

/// Mean cosine similarity between `b` and its `k` most-similar candidates.
pub fn knn_mean_sim(b: ArrayView1<'_, f64>, candidates: &EmbeddingTable, k: usize) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::empty("knn_mean_sim over an empty candidate set"));
    }
    if k == 0 || k > candidates.len() {
        return Err(Error::invalid(format!(
            "k = {k} out of range for {} candidates",
            candidates.len()
        )));
    }
    let mut sims = Vec::with_capacity(candidates.len());
    for (i, row) in candidates.vectors().rows().into_iter().enumerate() {
        sims.push((i, cosine(b, row)?));
    }
    let top = top_k(&mut sims, k);
    Ok(top.iter().map(|&(_, s)| s).sum::<f64>() / k as f64)
}

/// CSLS score from a mapped query, a candidate, and precomputed Γ terms.
/// `gamma_src` is the mean k-NN similarity of `Wx` in the target space;
/// `gamma_tgt` is the mean k-NN similarity of `y` among the mapped sources.
pub fn csls(
    x: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
    w: &MappingMatrix,
    gamma_src: f64,
    gamma_tgt: f64,
) -> Result<f64> {
    let mapped = w.apply(x);
    Ok(2.0 * cosine(mapped.view(), y)? - gamma_src - gamma_tgt)
}

/// Keep the `k` highest-scoring entries, ties broken by lower index.
/// Returns them sorted by descending score.
fn top_k(entries: &mut Vec<(usize, f64)>, k: usize) -> &[(usize, f64)] {
    let k = k.min(entries.len());
    if k == 0 {
        return &[];
    }
    let cmp = |a: &(usize, f64), b: &(usize, f64)| {
        b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
    };
    if k < entries.len() {
        entries.select_nth_unstable_by(k - 1, cmp);
        entries.truncate(k);
    }
    entries.sort_unstable_by(cmp);
    &entries[..k]
}

/// Rows scaled to unit norm; errors if any row is zero or non-finite.
pub(crate) fn row_normalized(m: ArrayView2<'_, f64>, what: &str) -> Result<Array2<f64>> {
    let mut out = m.to_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Divergence(format!("{what} row {i} has zero or non-finite norm")));
        }
        row /= norm;
    }
    Ok(out)
}

fn chunk_rows(budget: usize, m: usize) -> usize {
    (budget / (8 * m.max(1))).clamp(1, 8192)
}

/// Mean top-`k` cosine per query row and per target column of `qhat · thatᵀ`,
/// computed in row chunks. `exclude_diag` skips the `(i, i)` cell, for
/// intra-space neighborhoods.
pub(crate) fn knn_gammas(
    qhat: &Array2<f64>,
    that: &Array2<f64>,
    k: usize,
    exclude_diag: bool,
    budget: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = qhat.nrows();
    let m = that.nrows();
    let limit = if exclude_diag { m.saturating_sub(1) } else { m };
    if k == 0 || k > limit {
        return Err(Error::invalid(format!("k = {k} out of range for {limit} candidates")));
    }
    let mut gamma_q = vec![0.0; n];
    // Per-target running top-k over all queries, as ascending sorted buffers.
    let mut target_top: Vec<Vec<f64>> = vec![Vec::with_capacity(k + 1); m];
    let chunk = chunk_rows(budget, m);
    let mut row_buf: Vec<(usize, f64)> = Vec::with_capacity(m);
    for start in (0..n).step_by(chunk) {
        let end = (start + chunk).min(n);
        let block = qhat.slice(ndarray::s![start..end, ..]).dot(&that.t());
        for (bi, row) in block.rows().into_iter().enumerate() {
            let qi = start + bi;
            row_buf.clear();
            for (j, &s) in row.iter().enumerate() {
                if exclude_diag && j == qi {
                    continue;
                }
                row_buf.push((j, s));
                let heap = &mut target_top[j];
                if heap.len() < k {
                    let pos = heap.partition_point(|&v| v < s);
                    heap.insert(pos, s);
                } else if s > heap[0] {
                    heap.remove(0);
                    let pos = heap.partition_point(|&v| v < s);
                    heap.insert(pos, s);
                }
            }
            let top = top_k(&mut row_buf, k);
            gamma_q[qi] = top.iter().map(|&(_, s)| s).sum::<f64>() / k as f64;
        }
    }
    let gamma_t: Vec<f64> = target_top
        .iter()
        .map(|heap| {
            let take = heap.len().min(k);
            heap.iter().rev().take(take).sum::<f64>() / take.max(1) as f64
        })
        .collect();
    Ok((gamma_q, gamma_t))
}

/// Retrieve the `topn` best targets for every query row (or for `query_ids`
/// when given), ranking by plain cosine or CSLS. Both Γ terms are computed
/// over the full mapped-query set and the full target set.
pub fn nn_retrieve(
    queries: &EmbeddingTable,
    w: &MappingMatrix,
    targets: &EmbeddingTable,
    opts: &RetrievalOptions,
) -> Result<NeighborIndex> {
    let all: Vec<usize> = (0..queries.len()).collect();
    nn_retrieve_subset(queries, &all, w, targets, opts)
}

/// Like [`nn_retrieve`], but only the listed query rows are ranked. The Γ
/// penalty on candidates still uses all query rows.
pub fn nn_retrieve_subset(
    queries: &EmbeddingTable,
    query_ids: &[usize],
    w: &MappingMatrix,
    targets: &EmbeddingTable,
    opts: &RetrievalOptions,
) -> Result<NeighborIndex> {
    if targets.is_empty() {
        return Err(Error::empty("retrieval against an empty target table"));
    }
    if queries.is_empty() {
        return Err(Error::empty("retrieval with an empty query table"));
    }
    let mapped = w.map_rows(queries.vectors());
    let qhat = row_normalized(mapped.view(), "mapped query")?;
    let that = row_normalized(targets.vectors(), "target")?;
    let m = targets.len();

    let (gamma_q, gamma_t) = match opts.method {
        RetrievalMethod::Csls => {
            let (gq, gt) = knn_gammas(&qhat, &that, opts.k, opts.self_exclude, opts.memory_budget)?;
            (Some(gq), Some(gt))
        }
        RetrievalMethod::NnCosine => (None, None),
    };

    let mut neighbors = Vec::with_capacity(query_ids.len());
    let chunk = chunk_rows(opts.memory_budget, m);
    let mut row_buf: Vec<(usize, f64)> = Vec::with_capacity(m);
    for ids in query_ids.chunks(chunk) {
        let sub = qhat.select(ndarray::Axis(0), ids);
        let block = sub.dot(&that.t());
        for (bi, row) in block.rows().into_iter().enumerate() {
            let qi = ids[bi];
            row_buf.clear();
            for (j, &c) in row.iter().enumerate() {
                if opts.self_exclude && j == qi {
                    continue;
                }
                let score = match opts.method {
                    RetrievalMethod::NnCosine => c,
                    RetrievalMethod::Csls => {
                        2.0 * c
                            - gamma_q.as_ref().expect("csls gammas")[qi]
                            - gamma_t.as_ref().expect("csls gammas")[j]
                    }
                };
                row_buf.push((j, score));
            }
            neighbors.push(top_k(&mut row_buf, opts.topn).to_vec());
        }
    }
    Ok(NeighborIndex { k: opts.k, n_targets: m, queries: query_ids.to_vec(), neighbors })
}

/// For each target, the number of queries whose rank-1 neighbor it is.
/// Targets never at rank 1 report 0. The counts sum to the query count.
pub fn hubness_counts(index: &NeighborIndex) -> Vec<usize> {
    let mut counts = vec![0usize; index.n_targets()];
    for list in &index.neighbors {
        if let Some(&(best, _)) = list.first() {
            counts[best] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::EmbeddingTable;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Array2};

    fn table(rows: Array2<f64>) -> EmbeddingTable {
        let words = (0..rows.nrows()).map(|i| format!("w{i}")).collect();
        EmbeddingTable::new(words, rows).unwrap()
    }

    fn ident(d: usize) -> MappingMatrix {
        MappingMatrix::identity(d)
    }

    /// O(n·m) CSLS recomputed from raw tables, used as an oracle.
    fn brute_csls(
        queries: &EmbeddingTable,
        w: &MappingMatrix,
        targets: &EmbeddingTable,
        k: usize,
        qi: usize,
        tj: usize,
        self_exclude: bool,
    ) -> f64 {
        let mapped: Vec<Array1<f64>> =
            (0..queries.len()).map(|i| w.apply(queries.row(i))).collect();
        let cos = |u: &Array1<f64>, v: ArrayView1<f64>| cosine(u.view(), v).unwrap();
        let mut sims: Vec<f64> = (0..targets.len())
            .filter(|&j| !(self_exclude && j == qi))
            .map(|j| cos(&mapped[qi], targets.row(j)))
            .collect();
        sims.sort_by(|a, b| b.total_cmp(a));
        let gamma_src: f64 = sims[..k].iter().sum::<f64>() / k as f64;
        let mut sims_t: Vec<f64> = (0..queries.len())
            .filter(|&i| !(self_exclude && i == tj))
            .map(|i| cos(&mapped[i], targets.row(tj)))
            .collect();
        sims_t.sort_by(|a, b| b.total_cmp(a));
        let gamma_tgt: f64 = sims_t[..k].iter().sum::<f64>() / k as f64;
        2.0 * cos(&mapped[qi], targets.row(tj)) - gamma_src - gamma_tgt
    }

    #[test]
    fn cosine_basics() {
        assert_abs_diff_eq!(
            cosine(array![1.0, 0.0].view(), array![0.0, 1.0].view()).unwrap(),
            0.0
        );
        assert_abs_diff_eq!(
            cosine(array![1.0, 0.0].view(), array![1.0, 0.0].view()).unwrap(),
            1.0
        );
        assert_abs_diff_eq!(
            cosine(array![3.0, 4.0].view(), array![4.0, 3.0].view()).unwrap(),
            0.96,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cosine_zero_vector_errors() {
        assert!(cosine(array![0.0, 0.0].view(), array![1.0, 0.0].view()).is_err());
    }

    #[test]
    fn knn_mean_sim_cases() {
        let cands = table(array![[1.0, 0.0], [0.0, 1.0]]);
        let b = array![1.0, 0.0];
        assert_abs_diff_eq!(knn_mean_sim(b.view(), &cands, 1).unwrap(), 1.0);
        assert_abs_diff_eq!(knn_mean_sim(b.view(), &cands, 2).unwrap(), 0.5);

        let cands3 = table(array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]);
        let b2 = array![0.0, 1.0];
        assert_abs_diff_eq!(knn_mean_sim(b2.view(), &cands3, 2).unwrap(), 0.5);
    }

    #[test]
    fn knn_mean_sim_k_too_large_errors() {
        let cands = table(array![[1.0, 0.0]]);
        assert!(knn_mean_sim(array![1.0, 0.0].view(), &cands, 2).is_err());
    }

    #[test]
    fn csls_hand_values() {
        let x = array![1.0, 0.0];
        let y = array![1.0, 0.0];
        let w = ident(2);
        assert_abs_diff_eq!(csls(x.view(), y.view(), &w, 1.0, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(csls(x.view(), y.view(), &w, 0.5, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn csls_two_point_space_with_self_exclusion() {
        // X = Y = {(1,0), (0,1)}, W = I, k = 1: both Γ terms are 0 because the
        // only non-self neighbor is orthogonal, so csls(x0, y0) = 2.
        let t = table(array![[1.0, 0.0], [0.0, 1.0]]);
        let w = ident(2);
        let brute = brute_csls(&t, &w, &t, 1, 0, 0, true);
        assert_abs_diff_eq!(brute, 2.0, epsilon = 1e-12);
        let gamma_src = 0.0;
        let gamma_tgt = 0.0;
        let v = csls(t.row(0), t.row(0), &w, gamma_src, gamma_tgt).unwrap();
        assert_abs_diff_eq!(v, brute, epsilon = 1e-12);
    }

    #[test]
    fn retrieval_identity_returns_self_at_rank_one() {
        let t = table(array![[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]]);
        let opts = RetrievalOptions {
            method: RetrievalMethod::NnCosine,
            topn: 2,
            ..Default::default()
        };
        let idx = nn_retrieve(&t, &ident(2), &t, &opts).unwrap();
        for (qi, _) in idx.queries().iter().enumerate() {
            assert_eq!(idx.neighbors(qi)[0].0, qi);
        }
    }

    #[test]
    fn retrieval_recovers_planted_permutation_under_rotation() {
        // Target rows are a rotation of the shuffled source rows; mapping by
        // the same rotation must recover the permutation.
        let angle: f64 = 0.7;
        let (c, s) = (angle.cos(), angle.sin());
        let rot = array![[c, -s], [s, c]];
        let src = table(array![[1.0, 0.0], [0.0, 1.0], [-0.6, 0.8]]);
        let perm = [2usize, 0, 1];
        let mut tgt_rows = Array2::zeros((3, 2));
        for (tj, &si) in perm.iter().enumerate() {
            let mapped = rot.dot(&src.row(si).to_owned());
            tgt_rows.row_mut(tj).assign(&mapped);
        }
        let tgt = table(tgt_rows);
        let w = MappingMatrix::from_matrix(rot).unwrap();
        for method in [RetrievalMethod::NnCosine, RetrievalMethod::Csls] {
            let opts = RetrievalOptions { method, k: 2, topn: 1, ..Default::default() };
            let idx = nn_retrieve(&src, &w, &tgt, &opts).unwrap();
            for (qpos, &qid) in idx.queries().iter().enumerate() {
                let expect = perm.iter().position(|&si| si == qid).unwrap();
                assert_eq!(idx.neighbors(qpos)[0].0, expect, "method {method:?}");
            }
        }
    }

    #[test]
    fn csls_demotes_hub_for_some_query() {
        // Target 0 sits near every query (a hub); targets 1..3 are the true
        // matches. CSLS must rank the hub strictly lower than plain cosine
        // ranks it for at least one query.
        let src = table(array![[1.0, 0.05], [0.9, 0.35], [0.9, -0.25]]);
        let tgt = table(array![
            [1.0, 0.0],    // hub: high cosine to everything
            [0.92, 0.39],  // match for query 1
            [0.93, -0.33], // match for query 2
            [0.0, 1.0]     // decoy far away
        ]);
        let w = ident(2);
        let nn_opts = RetrievalOptions {
            method: RetrievalMethod::NnCosine,
            k: 2,
            topn: 4,
            ..Default::default()
        };
        let csls_opts = RetrievalOptions { method: RetrievalMethod::Csls, ..nn_opts.clone() };
        let nn = nn_retrieve(&src, &w, &tgt, &nn_opts).unwrap();
        let cs = nn_retrieve(&src, &w, &tgt, &csls_opts).unwrap();
        let rank_of_hub = |idx: &NeighborIndex, q: usize| {
            idx.neighbors(q).iter().position(|&(t, _)| t == 0).unwrap()
        };
        let mut demoted = false;
        for q in 0..src.len() {
            if rank_of_hub(&cs, q) > rank_of_hub(&nn, q) {
                demoted = true;
            }
        }
        assert!(demoted, "csls never demoted the hub");
    }

    #[test]
    fn csls_scores_match_brute_force() {
        // Pseudo-random 12-point tables, every (query, target) score checked.
        let mut v = 0.5f64;
        let mut next = || {
            v = (v * 997.0 + 0.123).rem_euclid(2.0) - 1.0;
            v
        };
        let src = table(Array2::from_shape_fn((12, 3), |_| next() + 1.5));
        let tgt = table(Array2::from_shape_fn((12, 3), |_| next() + 1.5));
        let w = ident(3);
        let k = 3;
        let opts =
            RetrievalOptions { method: RetrievalMethod::Csls, k, topn: 12, ..Default::default() };
        let idx = nn_retrieve(&src, &w, &tgt, &opts).unwrap();
        for (qpos, &qi) in idx.queries().iter().enumerate() {
            for &(tj, score) in idx.neighbors(qpos) {
                let brute = brute_csls(&src, &w, &tgt, k, qi, tj, false);
                assert_abs_diff_eq!(score, brute, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn hubness_counts_hand_nn_table() {
        // 1-d points at 0, 1, 3; Euclidean nearest neighbor with self excluded:
        // 0 → 1, 1 → 0, 3 → 1.
        let idx = NeighborIndex::from_parts(
            1,
            3,
            vec![0, 1, 2],
            vec![vec![(1, -1.0)], vec![(0, -1.0)], vec![(1, -2.0)]],
        )
        .unwrap();
        let counts = hubness_counts(&idx);
        assert_eq!(counts, vec![1, 2, 0]);
        assert_eq!(counts.iter().sum::<usize>(), 3);
    }

    #[test]
    fn hubness_counts_permutation_and_single_target() {
        let perm = NeighborIndex::from_parts(
            1,
            3,
            vec![0, 1, 2],
            vec![vec![(2, 1.0)], vec![(0, 1.0)], vec![(1, 1.0)]],
        )
        .unwrap();
        assert_eq!(hubness_counts(&perm), vec![1, 1, 1]);

        let single = NeighborIndex::from_parts(
            1,
            1,
            vec![0, 1, 2, 3],
            vec![vec![(0, 0.5)]; 4],
        )
        .unwrap();
        assert_eq!(hubness_counts(&single), vec![4]);
    }

    #[test]
    fn tsv_export_shape() {
        let t = table(array![[1.0, 0.0], [0.0, 1.0]]);
        let opts = RetrievalOptions {
            method: RetrievalMethod::NnCosine,
            topn: 2,
            ..Default::default()
        };
        let idx = nn_retrieve(&t, &ident(2), &t, &opts).unwrap();
        let mut buf = Vec::new();
        idx.export_tsv(&t.words().to_vec(), &t.words().to_vec(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("w0\t1\tw0\t"));
    }
}
