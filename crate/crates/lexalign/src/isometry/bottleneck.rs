//! Exact bottleneck distance between persistence diagrams.
//!
//! The distance is the smallest `t` such that the two diagrams admit a
//! perfect matching where matched points are within L∞ distance `t` and
//! unmatched points are within `t` of the diagonal. The optimum is always
//! one of finitely many candidate costs (point-point L∞ distances and
//! point-diagonal costs), so a binary search over the sorted candidates with
//! a bipartite-matching feasibility test is exact.

use crate::error::Result;
use crate::isometry::PersistenceDiagram;

fn linf(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

/// L∞ distance from an interval to its closest diagonal point.
fn diagonal_cost(p: (f64, f64)) -> f64 {
    (p.1 - p.0) / 2.0
}

/// Bipartite feasibility at threshold `t`. Left vertices are the points of
/// `f` followed by one diagonal slot per point of `g`; right vertices are
/// the points of `g` followed by one diagonal slot per point of `f`.
/// Diagonal-to-diagonal edges are free, so feasibility reduces to a perfect
/// matching on `|f| + |g|` vertices per side.
struct Matcher<'a> {
    f: &'a [(f64, f64)],
    g: &'a [(f64, f64)],
    t: f64,
}

impl Matcher<'_> {
    fn left_count(&self) -> usize {
        self.f.len() + self.g.len()
    }

    fn right_count(&self) -> usize {
        self.g.len() + self.f.len()
    }

    fn edge(&self, left: usize, right: usize) -> bool {
        let nf = self.f.len();
        let ng = self.g.len();
        match (left < nf, right < ng) {
            (true, true) => linf(self.f[left], self.g[right]) <= self.t,
            (true, false) => diagonal_cost(self.f[left]) <= self.t,
            (false, true) => diagonal_cost(self.g[right]) <= self.t,
            (false, false) => true,
        }
    }

    fn try_augment(&self, left: usize, seen: &mut [bool], matches: &mut [Option<usize>]) -> bool {
        for right in 0..self.right_count() {
            if seen[right] || !self.edge(left, right) {
                continue;
            }
            seen[right] = true;
            let free = match matches[right] {
                None => true,
                Some(prev) => self.try_augment(prev, seen, matches),
            };
            if free {
                matches[right] = Some(left);
                return true;
            }
        }
        false
    }

    fn has_perfect_matching(&self) -> bool {
        let mut matches = vec![None; self.right_count()];
        let mut seen = vec![false; self.right_count()];
        for left in 0..self.left_count() {
            seen.fill(false);
            if !self.try_augment(left, &mut seen, &mut matches) {
                return false;
            }
        }
        true
    }
}

/// Exact bottleneck distance between two finite diagrams. Two empty diagrams
/// are at distance 0.
pub fn bottleneck_distance(f: &PersistenceDiagram, g: &PersistenceDiagram) -> Result<f64> {
    let fp = f.intervals();
    let gp = g.intervals();
    if fp.is_empty() && gp.is_empty() {
        return Ok(0.0);
    }
    // Candidate costs: every point-point L∞ distance plus every diagonal cost.
    let mut candidates: Vec<f64> = Vec::with_capacity(fp.len() * gp.len() + fp.len() + gp.len() + 1);
    candidates.push(0.0);
    for &u in fp {
        candidates.push(diagonal_cost(u));
        for &v in gp {
            candidates.push(linf(u, v));
        }
    }
    for &v in gp {
        candidates.push(diagonal_cost(v));
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let feasible = |t: f64| Matcher { f: fp, g: gp, t }.has_perfect_matching();

    // Smallest feasible candidate; the largest is always feasible (every
    // cost, diagonal costs included, is a candidate).
    let mut lo = 0usize;
    let mut hi = candidates.len() - 1;
    debug_assert!(feasible(candidates[hi]));
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if feasible(candidates[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(candidates[lo])
}
