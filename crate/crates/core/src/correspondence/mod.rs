//! Conditional minimization over correspondences, and local refinement.
//!
//! For a fixed motion the closest-point energy is minimized by sending every
//! transformed source point to its nearest target point, and the bijective
//! energy by a linear assignment on squared distances. Procrustes solves the
//! complementary problem (best motion for fixed correspondences) and ICP
//! alternates the two.

pub mod assignment;
pub mod dtgrid;
pub mod kdtree;

use nalgebra::{Matrix3, Vector3};

pub use assignment::{solve_assignment, solve_assignment_with, AssignmentSolver, CostMatrix};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidMotion, RotationVec};
use crate::sum::CompensatedSum;
use dtgrid::DtGrid;
use kdtree::KdTree;

/// Map from source indices to target indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondence {
    pub mapping: Vec<usize>,
    pub bijective: bool,
}

impl Correspondence {
    pub fn identity(n: usize, bijective: bool) -> Self {
        Self {
            mapping: (0..n).collect(),
            bijective,
        }
    }

    /// Checks the mapping against target size `m`.
    pub fn validate(&self, m: usize) -> Result<()> {
        if let Some(&bad) = self.mapping.iter().find(|&&j| j >= m) {
            return Err(Error::InvalidParameter(format!(
                "correspondence target {bad} out of range for {m} points"
            )));
        }
        if self.bijective {
            if self.mapping.len() != m {
                return Err(Error::CountMismatch {
                    source_len: self.mapping.len(),
                    target_len: m,
                });
            }
            let mut seen = vec![false; m];
            for &j in &self.mapping {
                if std::mem::replace(&mut seen[j], true) {
                    return Err(Error::InvalidParameter(format!(
                        "bijective correspondence repeats target {j}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Conditionally minimized energy and its minimizing correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyEval {
    pub value: f64,
    pub corr: Correspondence,
    /// Set when the value came from the distance-transform grid.
    pub approximate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpMode {
    Exact,
    DtGrid { resolution: usize },
}

#[derive(Debug, Clone)]
enum Lookup {
    Exact(KdTree),
    Grid(DtGrid),
}

/// Closest-point structure over a target cloud. Immutable and shareable
/// across threads.
#[derive(Debug, Clone)]
pub struct CpIndex {
    target: PointCloud,
    lookup: Lookup,
}

/// Builds a closest-point index in the requested mode.
pub fn build_cp_index(target: &PointCloud, mode: CpMode) -> Result<CpIndex> {
    if target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let lookup = match mode {
        CpMode::Exact => Lookup::Exact(KdTree::build(target.points(), target.dim())),
        CpMode::DtGrid { resolution } => {
            if resolution < 2 {
                return Err(Error::InvalidParameter(format!(
                    "grid resolution must be at least 2, got {resolution}"
                )));
            }
            let cells = (resolution as u128).pow(target.dim() as u32);
            if cells > u32::MAX as u128 {
                return Err(Error::InvalidParameter(format!(
                    "grid resolution {resolution} too large"
                )));
            }
            Lookup::Grid(DtGrid::build(target.points(), target.dim(), resolution))
        }
    };
    Ok(CpIndex {
        target: target.clone(),
        lookup,
    })
}

impl CpIndex {
    pub fn target(&self) -> &PointCloud {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn is_approximate(&self) -> bool {
        matches!(self.lookup, Lookup::Grid(_))
    }

    /// Cell diagonal of the grid, zero in exact mode.
    pub fn grid_diagonal(&self) -> f64 {
        match &self.lookup {
            Lookup::Exact(_) => 0.0,
            Lookup::Grid(g) => g.cell_diagonal(),
        }
    }

    /// `(target index, squared distance)` for the point `x`.
    #[inline]
    pub fn nearest(&self, x: &Vector3<f64>) -> (usize, f64) {
        match &self.lookup {
            Lookup::Exact(tree) => tree.nearest(x),
            Lookup::Grid(grid) => {
                let j = grid.site(x);
                (j, (self.target.points()[j] - x).norm_squared())
            }
        }
    }

    /// Mean squared closest-point distance of `rotated + t`.
    pub(crate) fn energy(&self, rotated: &[Vector3<f64>], t: &Vector3<f64>) -> f64 {
        let mut acc = CompensatedSum::new();
        for p in rotated {
            acc.add(self.nearest(&(p + t)).1);
        }
        acc.value() / rotated.len() as f64
    }

    /// Closest-point distances (not squared) of `rotated + t`, together with
    /// their mean squared value.
    pub(crate) fn residuals(
        &self,
        rotated: &[Vector3<f64>],
        t: &Vector3<f64>,
        out: &mut Vec<f64>,
    ) -> f64 {
        out.clear();
        let mut acc = CompensatedSum::new();
        for p in rotated {
            let d2 = self.nearest(&(p + t)).1;
            acc.add(d2);
            out.push(d2.sqrt());
        }
        acc.value() / rotated.len() as f64
    }
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Closest-point energy `(1/n) sum_i min_j |R p_i + t - q_j|^2` and its
/// minimizing map.
pub fn eval_f_cp(source: &PointCloud, index: &CpIndex, motion: &RigidMotion) -> Result<EnergyEval> {
    if source.is_empty() {
        return Err(Error::EmptyCloud);
    }
    check_same_dim(index.dim(), source.dim())?;
    check_same_dim(source.dim(), motion.dim())?;
    let rot = motion.rot.matrix3();
    let t = motion.trans_vector();
    let mut acc = CompensatedSum::new();
    let mut mapping = Vec::with_capacity(source.len());
    for p in source.points() {
        let (j, d2) = index.nearest(&(rot * p + t));
        acc.add(d2);
        mapping.push(j);
    }
    Ok(EnergyEval {
        value: acc.value() / source.len() as f64,
        corr: Correspondence {
            mapping,
            bijective: false,
        },
        approximate: index.is_approximate(),
    })
}

pub(crate) fn bijective_cost(rotated: &[Vector3<f64>], target: &PointCloud) -> CostMatrix {
    let n = rotated.len();
    let mut data = Vec::with_capacity(n * n);
    for p in rotated {
        for q in target.points() {
            data.push((p - q).norm_squared());
        }
    }
    CostMatrix::new(n, data).expect("finite cost")
}

pub(crate) fn bijective_energy(rotated: &[Vector3<f64>], target: &PointCloud) -> (f64, Vec<usize>) {
    let cost = bijective_cost(rotated, target);
    let (perm, total) = solve_assignment(&cost);
    (total / rotated.len() as f64, perm)
}

/// Bijective energy `min_perm (1/n) sum_i |R p_i - q_perm(i)|^2`.
pub fn eval_f_bi(source: &PointCloud, target: &PointCloud, rot: &RotationVec) -> Result<EnergyEval> {
    if source.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if source.len() != target.len() {
        return Err(Error::CountMismatch {
            source_len: source.len(),
            target_len: target.len(),
        });
    }
    check_same_dim(source.dim(), target.dim())?;
    check_same_dim(source.dim(), rot.dim())?;
    let r = rot.matrix3();
    let rotated: Vec<_> = source.points().iter().map(|p| r * p).collect();
    let (value, mapping) = bijective_energy(&rotated, target);
    Ok(EnergyEval {
        value,
        corr: Correspondence {
            mapping,
            bijective: true,
        },
        approximate: false,
    })
}

/// Output of [`procrustes`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProcrustesFit {
    pub motion: RigidMotion,
    /// The optimum is not unique (rank-deficient cross-covariance); the
    /// returned motion is one of the minimizers.
    pub degenerate: bool,
}

const RANK_TOL: f64 = 1e-12;

/// Best rigid motion for fixed correspondences, via the SVD of the
/// cross-covariance with a determinant correction.
pub fn procrustes(
    source: &PointCloud,
    target: &PointCloud,
    corr: &Correspondence,
    solve_translation: bool,
) -> Result<ProcrustesFit> {
    if source.is_empty() {
        return Err(Error::EmptyCloud);
    }
    check_same_dim(source.dim(), target.dim())?;
    if corr.mapping.len() != source.len() {
        return Err(Error::CountMismatch {
            source_len: source.len(),
            target_len: corr.mapping.len(),
        });
    }
    corr.validate(target.len())?;
    let dim = source.dim();
    let n = source.len() as f64;
    let pairs = || {
        source
            .points()
            .iter()
            .zip(&corr.mapping)
            .map(|(p, &j)| (p, &target.points()[j]))
    };
    let (cp, cq) = if solve_translation {
        let (sp, sq) = pairs().fold((Vector3::zeros(), Vector3::zeros()), |(a, b), (p, q)| {
            (a + p, b + q)
        });
        (sp / n, sq / n)
    } else {
        (Vector3::zeros(), Vector3::zeros())
    };
    let mut h = Matrix3::<f64>::zeros();
    for (p, q) in pairs() {
        h += (p - cp) * (q - cq).transpose();
    }

    let (rot, degenerate) = if dim == 2 {
        let sin = h[(0, 1)] - h[(1, 0)];
        let cos = h[(0, 0)] + h[(1, 1)];
        let scale = h.norm();
        let angle = sin.atan2(cos);
        (
            RotationVec::planar(angle),
            sin.hypot(cos) <= RANK_TOL * scale.max(f64::MIN_POSITIVE),
        )
    } else {
        let svd = h.svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let s = svd.singular_values;
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
        let smallest = order[2];
        let v = v_t.transpose();
        let det = (v * u.transpose()).determinant();
        let mut d = Matrix3::identity();
        if det < 0.0 {
            d[(smallest, smallest)] = -1.0;
        }
        let r = v * d * u.transpose();
        let top = s[order[0]].max(f64::MIN_POSITIVE);
        let rank_deficient = s[order[1]] <= RANK_TOL * top;
        let reflected_tie = det < 0.0 && (s[order[1]] - s[order[2]]) <= RANK_TOL * top;
        (
            RotationVec::from_matrix3(&r, 3),
            rank_deficient || reflected_tie,
        )
    };
    let trans = if solve_translation {
        let t = cq - rot.matrix3() * cp;
        t.as_slice()[..dim].to_vec()
    } else {
        vec![0.0; dim]
    };
    Ok(ProcrustesFit {
        motion: RigidMotion { rot, trans },
        degenerate,
    })
}

/// Target of an ICP refinement.
#[derive(Debug, Clone, Copy)]
pub enum IcpMode<'a> {
    /// Closest-point correspondences with translation.
    ClosestPoint(&'a CpIndex),
    /// Permutations, translation fixed at zero.
    Bijective(&'a PointCloud),
}

pub const ICP_MAX_ITERATIONS: usize = 200;
pub const ICP_MIN_DECREASE: f64 = 1e-12;

/// Result of [`icp_refine`].
#[derive(Debug, Clone, PartialEq)]
pub struct IcpOutcome {
    pub motion: RigidMotion,
    pub eval: EnergyEval,
    /// Energy after each accepted iteration, starting with the start energy.
    pub history: Vec<f64>,
}

fn eval_mode(source: &PointCloud, mode: IcpMode<'_>, motion: &RigidMotion) -> Result<EnergyEval> {
    match mode {
        IcpMode::ClosestPoint(index) => eval_f_cp(source, index, motion),
        IcpMode::Bijective(target) => eval_f_bi(source, target, &motion.rot),
    }
}

/// Alternates exact correspondence and Procrustes steps from `start` until
/// the energy decrease drops below [`ICP_MIN_DECREASE`] or
/// [`ICP_MAX_ITERATIONS`] is reached. The energy never increases.
pub fn icp_refine(
    source: &PointCloud,
    mode: IcpMode<'_>,
    start: &RigidMotion,
) -> Result<IcpOutcome> {
    let (target, with_translation) = match mode {
        IcpMode::ClosestPoint(index) => (index.target(), true),
        IcpMode::Bijective(target) => (target, false),
    };
    let mut motion = start.clone();
    if !with_translation {
        motion.trans = vec![0.0; source.dim()];
    }
    let mut eval = eval_mode(source, mode, &motion)?;
    let mut history = vec![eval.value];
    for _ in 0..ICP_MAX_ITERATIONS {
        let fit = procrustes(source, target, &eval.corr, with_translation)?;
        let next = eval_mode(source, mode, &fit.motion)?;
        if next.value > eval.value {
            break;
        }
        let decrease = eval.value - next.value;
        motion = fit.motion;
        eval = next;
        history.push(eval.value);
        if decrease < ICP_MIN_DECREASE {
            break;
        }
    }
    Ok(IcpOutcome {
        motion,
        eval,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PointCloud;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PointCloud {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        PointCloud::new(&rows).unwrap()
    }

    fn random_motion(rng: &mut ChaCha8Rng, dim: usize) -> RigidMotion {
        let rot = if dim == 2 {
            RotationVec::planar(rng.random_range(-3.0..3.0))
        } else {
            RotationVec::spatial(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
            )
        };
        let trans = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
        RigidMotion { rot, trans }
    }

    fn brute_cp(p: &PointCloud, q: &PointCloud, m: &RigidMotion) -> f64 {
        let r = m.rot.matrix3();
        let t = m.trans_vector();
        p.points()
            .iter()
            .map(|x| {
                q.points()
                    .iter()
                    .map(|y| (r * x + t - y).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / p.len() as f64
    }

    #[test]
    fn cp_identity_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_cloud(&mut rng, 30, 3);
        let idx = build_cp_index(&p, CpMode::Exact).unwrap();
        let e = eval_f_cp(&p, &idx, &RigidMotion::identity(3)).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.corr, Correspondence::identity(30, false));
    }

    #[test]
    fn cp_nearer_of_two_sites() {
        let p = PointCloud::new(&[vec![1.0, 0.0]]).unwrap();
        let q = PointCloud::new(&[vec![0.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let idx = build_cp_index(&q, CpMode::Exact).unwrap();
        let e = eval_f_cp(&p, &idx, &RigidMotion::identity(2)).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.corr.mapping, vec![0]);
    }

    #[test]
    fn cp_single_target_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = PointCloud::new(&[vec![0.1, 0.2, 0.3]]).unwrap();
        let idx = build_cp_index(&q, CpMode::Exact).unwrap();
        let p = random_cloud(&mut rng, 15, 3);
        let e = eval_f_cp(&p, &idx, &random_motion(&mut rng, 3)).unwrap();
        assert!(e.corr.mapping.iter().all(|&j| j == 0));
    }

    #[test]
    fn cp_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in [2, 3] {
            for _ in 0..20 {
                let p = random_cloud(&mut rng, 20, dim);
                let q = random_cloud(&mut rng, 30, dim);
                let idx = build_cp_index(&q, CpMode::Exact).unwrap();
                let m = random_motion(&mut rng, dim);
                let e = eval_f_cp(&p, &idx, &m).unwrap();
                let b = brute_cp(&p, &q, &m);
                assert!((e.value - b).abs() <= 1e-12 * b.max(1e-300));
            }
        }
    }

    #[test]
    fn cp_errors() {
        let p2 = PointCloud::new(&[vec![0.0, 0.0]]).unwrap();
        let p3 = PointCloud::new(&[vec![0.0, 0.0, 0.0]]).unwrap();
        let idx = build_cp_index(&p3, CpMode::Exact).unwrap();
        assert!(matches!(
            eval_f_cp(&p2, &idx, &RigidMotion::identity(2)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            build_cp_index(&p3, CpMode::DtGrid { resolution: 1 }),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn grid_mode_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_cloud(&mut rng, 40, 2);
        let idx = build_cp_index(&q, CpMode::DtGrid { resolution: 64 }).unwrap();
        let e = eval_f_cp(&q, &idx, &RigidMotion::identity(2)).unwrap();
        assert!(e.approximate);
    }

    #[test]
    fn bijective_identity_and_rotated_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_cloud(&mut rng, 12, 3);
        let e = eval_f_bi(&p, &p, &RotationVec::zero(3)).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.corr.mapping, (0..12).collect::<Vec<_>>());

        let r0 = RotationVec::spatial(0.4, -1.0, 2.0);
        let q = p.transformed(&RigidMotion {
            rot: r0.clone(),
            trans: vec![0.0; 3],
        });
        assert!(eval_f_bi(&p, &q, &r0).unwrap().value <= 1e-12);
    }

    #[test]
    fn bijective_rejects_unequal_counts() {
        let p = PointCloud::new(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let q = PointCloud::new(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            eval_f_bi(&p, &q, &RotationVec::zero(2)),
            Err(Error::CountMismatch { .. })
        ));
    }

    #[test]
    fn procrustes_recovers_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for dim in [2, 3] {
            for _ in 0..10 {
                let p = random_cloud(&mut rng, 25, dim);
                let m = random_motion(&mut rng, dim);
                let q = p.transformed(&m);
                let fit = procrustes(&p, &q, &Correspondence::identity(25, true), true).unwrap();
                assert!(!fit.degenerate);
                for (a, b) in fit.motion.rot.as_slice().iter().zip(m.rot.as_slice()) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-9);
                }
                for (a, b) in fit.motion.trans.iter().zip(&m.trans) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn procrustes_identity_and_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_cloud(&mut rng, 10, 3);
        let fit = procrustes(&p, &p, &Correspondence::identity(10, true), true).unwrap();
        assert!(fit.motion.rot.norm() < 1e-12);
        // Collinear points: rotation about the line is free.
        let line = PointCloud::new(&[
            vec![0.0, 0.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![2.0, 2.0, 2.0],
        ])
        .unwrap();
        let fit = procrustes(&line, &line, &Correspondence::identity(3, true), true).unwrap();
        assert!(fit.degenerate);
    }

    #[test]
    fn icp_fixed_point_and_local_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_cloud(&mut rng, 40, 3);
        let truth = random_motion(&mut rng, 3);
        let q = p.transformed(&truth);
        let idx = build_cp_index(&q, CpMode::Exact).unwrap();

        let at_truth = icp_refine(&p, IcpMode::ClosestPoint(&idx), &truth).unwrap();
        assert!(at_truth.eval.value <= at_truth.history[0] + 1e-12);
        assert!(at_truth.eval.value <= 1e-12);

        let mut start = truth.clone();
        start.rot = RotationVec::spatial(
            truth.rot.as_slice()[0] + 0.05,
            truth.rot.as_slice()[1] - 0.05,
            truth.rot.as_slice()[2] + 0.04,
        );
        let out = icp_refine(&p, IcpMode::ClosestPoint(&idx), &start).unwrap();
        assert!(out.eval.value <= 1e-10, "{}", out.eval.value);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
