//! Degree-0 Vietoris-Rips persistence.
//!
//! At degree 0 the persistence deaths are exactly the merge distances of
//! single-linkage clustering, which are the edge weights of the Euclidean
//! minimum spanning tree. Prim's algorithm over implicit pairwise distances
//! gives the diagram without any simplicial machinery.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// A multiset of (birth, death) intervals. For degree-0 Rips every birth is
/// 0; the one never-dying component per connected input is dropped and
/// counted instead of being capped.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    intervals: Vec<(f64, f64)>,
    pub dropped_infinite: usize,
}

impl PersistenceDiagram {
    /// Build from explicit intervals; rejects finite intervals with
    /// `death < birth` or non-finite endpoints.
    pub fn new(intervals: Vec<(f64, f64)>, dropped_infinite: usize) -> Result<Self> {
        for &(b, d) in &intervals {
            if !b.is_finite() || !d.is_finite() {
                return Err(Error::invalid("diagram intervals must be finite"));
            }
            if d < b {
                return Err(Error::invalid(format!("interval ({b}, {d}) dies before birth")));
            }
        }
        Ok(PersistenceDiagram { intervals, dropped_infinite })
    }

    pub fn empty() -> Self {
        PersistenceDiagram { intervals: Vec::new(), dropped_infinite: 0 }
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    /// Interval persistences (death − birth), the quantity the diagonal
    /// distance is built from.
    pub fn persistences(&self) -> impl Iterator<Item = f64> + '_ {
        self.intervals.iter().map(|&(b, d)| d - b)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Degree-0 Rips persistence of a point cloud under the Euclidean metric:
/// one `(0, w)` interval per minimum-spanning-tree edge weight `w`, sorted
/// ascending, with the single infinite component dropped and counted.
/// Duplicate points are allowed and produce death-0 intervals.
pub fn rips_persistence_deg0(points: ArrayView2<'_, f64>) -> Result<PersistenceDiagram> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::invalid("persistence needs at least 2 points"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("points must be finite"));
    }
    let rows: Vec<&[f64]> = (0..n)
        .map(|i| points.row(i).to_slice().expect("contiguous row"))
        .collect();

    // Prim's algorithm with an O(n²) scan; distances evaluated on demand.
    let mut in_tree = vec![false; n];
    let mut best_dist = vec![f64::INFINITY; n];
    let mut deaths = Vec::with_capacity(n - 1);
    in_tree[0] = true;
    for j in 1..n {
        best_dist[j] = euclidean(rows[0], rows[j]);
    }
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_dist = f64::INFINITY;
        for j in 0..n {
            if !in_tree[j] && best_dist[j] < next_dist {
                next = j;
                next_dist = best_dist[j];
            }
        }
        in_tree[next] = true;
        deaths.push(next_dist);
        for j in 0..n {
            if !in_tree[j] {
                let d = euclidean(rows[next], rows[j]);
                if d < best_dist[j] {
                    best_dist[j] = d;
                }
            }
        }
    }
    deaths.sort_by(f64::total_cmp);
    let intervals = deaths.into_iter().map(|d| (0.0, d)).collect();
    Ok(PersistenceDiagram { intervals, dropped_infinite: 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn two_identical_points() {
        let d = rips_persistence_deg0(array![[1.0, 2.0], [1.0, 2.0]].view()).unwrap();
        assert_eq!(d.intervals(), &[(0.0, 0.0)]);
        assert_eq!(d.dropped_infinite, 1);
    }

    #[test]
    fn collinear_points() {
        let d = rips_persistence_deg0(array![[0.0], [1.0], [3.0]].view()).unwrap();
        assert_eq!(d.len(), 2);
        assert_abs_diff_eq!(d.intervals()[0].1, 1.0);
        assert_abs_diff_eq!(d.intervals()[1].1, 2.0);
        assert!(d.intervals().iter().all(|&(b, _)| b == 0.0));
    }

    #[test]
    fn diagram_is_invariant_under_rigid_motion() {
        let pts = array![
            [0.0, 0.0],
            [1.0, 0.2],
            [-0.3, 0.9],
            [2.0, 2.0],
            [1.7, -0.4]
        ];
        let angle: f64 = 0.93;
        let (c, s) = (angle.cos(), angle.sin());
        let mut moved = pts.clone();
        for mut row in moved.rows_mut() {
            let (x, y) = (row[0], row[1]);
            row[0] = c * x - s * y + 5.0;
            row[1] = s * x + c * y - 2.0;
        }
        let a = rips_persistence_deg0(pts.view()).unwrap();
        let b = rips_persistence_deg0(moved.view()).unwrap();
        for (ia, ib) in a.intervals().iter().zip(b.intervals()) {
            assert_abs_diff_eq!(ia.1, ib.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_point_is_an_error() {
        assert!(rips_persistence_deg0(array![[0.0, 0.0]].view()).is_err());
    }

    /// Independent single-linkage oracle: agglomerative clustering that
    /// tracks cluster-to-cluster minimum distances directly.
    fn single_linkage_merge_heights(points: ArrayView2<'_, f64>) -> Vec<f64> {
        let n = points.nrows();
        let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let dist = |a: usize, b: usize| {
            points
                .row(a)
                .iter()
                .zip(points.row(b).iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        };
        let mut heights = Vec::with_capacity(n - 1);
        while clusters.len() > 1 {
            let mut best = (0usize, 1usize, f64::INFINITY);
            for i in 0..clusters.len() {
                for j in i + 1..clusters.len() {
                    let mut min_d = f64::INFINITY;
                    for &a in &clusters[i] {
                        for &b in &clusters[j] {
                            min_d = min_d.min(dist(a, b));
                        }
                    }
                    if min_d < best.2 {
                        best = (i, j, min_d);
                    }
                }
            }
            heights.push(best.2);
            let merged = clusters.remove(best.1);
            clusters[best.0].extend(merged);
        }
        heights.sort_by(f64::total_cmp);
        heights
    }

    #[test]
    fn deaths_equal_single_linkage_merge_heights() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..20 {
            let n = 5 + (trial % 14);
            let d = 1 + (trial % 4);
            let pts = ndarray::Array2::from_shape_fn((n, d), |_| next() * 4.0 - 2.0);
            let diagram = rips_persistence_deg0(pts.view()).unwrap();
            let oracle = single_linkage_merge_heights(pts.view());
            assert_eq!(diagram.len(), oracle.len());
            for (interval, h) in diagram.intervals().iter().zip(&oracle) {
                assert_eq!(interval.1, *h, "trial {trial}");
            }
        }
    }
}
