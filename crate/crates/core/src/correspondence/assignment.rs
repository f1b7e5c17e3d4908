//! Linear assignment: shortest-augmenting-path Hungarian solver and an
//! epsilon-scaling auction solver on integer-scaled costs.

use crate::error::{Error, Result};
use crate::sum::compensated_sum;

/// Square cost matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::InvalidParameter(format!(
                "cost matrix of order {n} needs {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("assignment cost {bad}")));
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParameter("cost matrix must be square".into()));
        }
        Self::new(n, rows.concat())
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn total(&self, perm: &[usize]) -> f64 {
        compensated_sum(perm.iter().enumerate().map(|(i, &j)| self.get(i, j)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssignmentSolver {
    /// Exact on floating-point costs, `O(n^3)`.
    #[default]
    Hungarian,
    /// Forward auction with epsilon scaling on costs rounded to
    /// [`AUCTION_RESOLUTION`].
    Auction,
}

/// Cost quantum used by the auction solver.
pub const AUCTION_RESOLUTION: f64 = 1e-9;

/// Minimum-cost permutation `perm[i] = j` and its total cost.
pub fn solve_assignment(cost: &CostMatrix) -> (Vec<usize>, f64) {
    solve_assignment_with(cost, AssignmentSolver::Hungarian)
}

pub fn solve_assignment_with(cost: &CostMatrix, solver: AssignmentSolver) -> (Vec<usize>, f64) {
    let perm = match solver {
        AssignmentSolver::Hungarian => hungarian(cost),
        AssignmentSolver::Auction => auction(cost),
    };
    let total = cost.total(&perm);
    (perm, total)
}

/// Shortest augmenting path with dual potentials (Kuhn-Munkres in the
/// Jonker-Volgenant formulation).
pub fn hungarian(cost: &CostMatrix) -> Vec<usize> {
    let n = cost.order();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is a virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    perm
}

/// Gauss-Seidel forward auction. Costs are rounded to integer multiples of
/// [`AUCTION_RESOLUTION`] and multiplied by `n + 1`; running the final phase
/// at `eps = 1` then yields an optimal assignment of the rounded costs.
/// Epsilon is divided by 4 between phases, starting from a quarter of the
/// largest scaled cost.
pub fn auction(cost: &CostMatrix) -> Vec<usize> {
    let n = cost.order();
    if n <= 1 {
        return (0..n).collect();
    }
    let scale = (n + 1) as i64;
    let min = cost.data.iter().copied().fold(f64::INFINITY, f64::min);
    // benefit = -(scaled cost), shifted to be non-positive.
    let benefit: Vec<i64> = cost
        .data
        .iter()
        .map(|c| -((c - min) / AUCTION_RESOLUTION).round() as i64 * scale)
        .collect();
    let spread = benefit.iter().map(|b| -b).max().unwrap_or(0);
    let mut eps = (spread / 4).max(1);
    let mut price = vec![0i64; n];
    let mut owner = vec![usize::MAX; n];
    let mut assigned = vec![usize::MAX; n];
    loop {
        owner.iter_mut().for_each(|o| *o = usize::MAX);
        assigned.iter_mut().for_each(|a| *a = usize::MAX);
        let mut queue: std::collections::VecDeque<usize> = (0..n).collect();
        while let Some(i) = queue.pop_front() {
            let row = &benefit[i * n..(i + 1) * n];
            let (mut best_j, mut best, mut second) = (0, i64::MIN, i64::MIN);
            for (j, (&b, &p)) in row.iter().zip(&price).enumerate() {
                let val = b - p;
                if val > best {
                    second = best;
                    best = val;
                    best_j = j;
                } else if val > second {
                    second = val;
                }
            }
            let increment = if second == i64::MIN {
                eps
            } else {
                best - second + eps
            };
            price[best_j] += increment;
            let prev = owner[best_j];
            owner[best_j] = i;
            assigned[i] = best_j;
            if prev != usize::MAX {
                assigned[prev] = usize::MAX;
                queue.push_back(prev);
            }
        }
        if eps == 1 {
            break;
        }
        eps = (eps / 4).max(1);
    }
    assigned
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn enumerate_min(cost: &CostMatrix) -> f64 {
        fn rec(cost: &CostMatrix, i: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let n = cost.order();
            if i == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(cost, i + 1, used, acc + cost.get(i, j), best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.order()], 0.0, &mut best);
        best
    }

    #[test]
    fn two_by_two() {
        let c = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(solve_assignment(&c), (vec![0, 1], 0.0));
        let c = CostMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(solve_assignment(&c), (vec![1, 0], 0.0));
        assert_eq!(auction(&c), vec![1, 0]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            CostMatrix::from_rows(&[vec![0.0, f64::NAN], vec![1.0, 0.0]]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn both_solvers_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=7 {
            for _ in 0..20 {
                let c = CostMatrix::new(n, (0..n * n).map(|_| rng.random_range(0.0..4.0)).collect())
                    .unwrap();
                let oracle = enumerate_min(&c);
                let (_, h) = solve_assignment(&c);
                assert!((h - oracle).abs() <= 1e-12 * oracle.max(1.0), "{h} {oracle}");
                let (_, a) = solve_assignment_with(&c, AssignmentSolver::Auction);
                assert!(a - oracle <= n as f64 * AUCTION_RESOLUTION, "{a} {oracle}");
            }
        }
    }

    #[test]
    fn auction_cross_checks_hungarian_on_larger_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [16, 40, 64] {
            let c = CostMatrix::new(n, (0..n * n).map(|_| rng.random_range(0.0..12.0)).collect())
                .unwrap();
            let (_, h) = solve_assignment(&c);
            let (perm, a) = solve_assignment_with(&c, AssignmentSolver::Auction);
            let mut seen = perm.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            assert!(a >= h - 1e-12);
            assert!(a - h <= n as f64 * AUCTION_RESOLUTION);
        }
    }
}
