//! Global registration searches and their certificates.
//!
//! * Bijective problems search the rotation cube `[-pi, pi]^s` with the
//!   breadth-first engine (or best-first on request).
//! * Closest-point problems use the nested search by default: best-first over
//!   rotation cubes with an inner translation search over `[-1, 1]^d`. The
//!   breadth-first strategy searches rotation and translation jointly.
//!
//! Inputs are expected to be normalized (zero mean, coordinates in
//! `[-1, 1]`); see [`crate::geometry::normalize_pair`].

pub mod engine;
pub mod nested;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::bounds::{self, BoundParams};
use crate::correspondence::{
    bijective_energy, build_cp_index, eval_f_bi, eval_f_cp, icp_refine, Correspondence, CpIndex,
    CpMode, IcpMode,
};
use crate::error::{Error, Result};
use crate::geometry::{rotation_params, Cube, PointCloud, RigidMotion, RotationVec};
use engine::{
    best_first_search, bfs_search, CubeEval, CubeEvaluator, EngineLimits, EngineOutcome,
    GenerationView,
};
pub use nested::inner_translation_search;
use nested::NestedEvaluator;

/// Default safety cap on objective evaluations.
pub const DEFAULT_MAX_EVALS: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[serde(rename = "cp")]
    ClosestPoint,
    Bijective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Quasi,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Bfs,
    BestFirst,
}

impl Strategy {
    /// Strategy used when none is requested.
    pub fn default_for(mode: Mode) -> Self {
        match mode {
            Mode::Bijective => Strategy::Bfs,
            Mode::ClosestPoint => Strategy::BestFirst,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub epsilon: f64,
    pub bound_kind: BoundKind,
    pub strategy: Strategy,
    pub max_evals: u64,
    pub allow_reflections: bool,
    /// Run ICP whenever the best-first incumbent improves.
    pub refine_with_icp: bool,
}

impl SearchConfig {
    pub fn new(epsilon: f64, bound_kind: BoundKind, strategy: Strategy) -> Self {
        Self {
            epsilon,
            bound_kind,
            strategy,
            max_evals: DEFAULT_MAX_EVALS,
            allow_reflections: false,
            refine_with_icp: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_evals == 0 {
            return Err(Error::InvalidParameter("max_evals must be at least 1".into()));
        }
        Ok(())
    }

    fn limits(&self) -> EngineLimits {
        EngineLimits {
            epsilon: self.epsilon,
            max_evals: self.max_evals,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Converged,
    MaxEvalsExceeded,
}

/// Statistics of one search depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub g: u32,
    pub evals: u64,
    /// Cubes evaluated at this depth.
    pub live: u64,
    pub ub: f64,
    pub lb: f64,
}

/// A certified registration result.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// Best motion found. When `reflected` is set it applies to the source
    /// mirrored through its first axis.
    pub minimizer: RigidMotion,
    pub ub: f64,
    pub lb: f64,
    pub corr: Correspondence,
    pub generations: Vec<GenerationStats>,
    pub total_evals: u64,
    pub status: SearchStatus,
    /// `status` is converged and no approximate closest-point lookup was used.
    pub certificate_valid: bool,
    pub reflected: bool,
}

impl SearchResult {
    pub fn evals_per_generation(&self) -> Vec<u64> {
        self.generations.iter().map(|g| g.evals).collect()
    }

    pub fn gap(&self) -> f64 {
        self.ub - self.lb
    }
}

/// Source and target clouds plus the energy to minimize.
#[derive(Debug, Clone)]
pub struct RegistrationProblem {
    pub source: PointCloud,
    pub target: PointCloud,
    pub mode: Mode,
    pub cp_mode: CpMode,
}

impl RegistrationProblem {
    pub fn new(source: PointCloud, target: PointCloud, mode: Mode) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: source.dim(),
                found: target.dim(),
            });
        }
        if mode == Mode::Bijective && source.len() != target.len() {
            return Err(Error::CountMismatch {
                source_len: source.len(),
                target_len: target.len(),
            });
        }
        Ok(Self {
            source,
            target,
            mode,
            cp_mode: CpMode::Exact,
        })
    }

    /// Uses the distance-transform grid for closest points. Only meaningful
    /// for closest-point problems; results are then marked approximate.
    pub fn with_grid(mut self, resolution: usize) -> Result<Self> {
        if self.mode != Mode::ClosestPoint {
            return Err(Error::InvalidParameter(
                "the distance-transform grid is only available for closest-point problems".into(),
            ));
        }
        self.cp_mode = CpMode::DtGrid { resolution };
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    /// Dimension of the space the breadth-first engine searches.
    pub fn search_dim(&self) -> usize {
        let s = rotation_params(self.dim());
        match self.mode {
            Mode::Bijective => s,
            Mode::ClosestPoint => s + self.dim(),
        }
    }
}

/// Evaluator for the bijective energy over rotation cubes.
pub struct BijectiveEvaluator<'a> {
    source: &'a PointCloud,
    target: &'a PointCloud,
    params: BoundParams,
    bound: BoundKind,
}

impl<'a> BijectiveEvaluator<'a> {
    pub fn new(source: &'a PointCloud, target: &'a PointCloud, bound: BoundKind) -> Self {
        Self {
            source,
            target,
            params: BoundParams::for_clouds(source, target, rotation_params(source.dim())),
            bound,
        }
    }

    pub fn params(&self) -> &BoundParams {
        &self.params
    }

    pub fn objective(&self, r: &[f64]) -> Result<f64> {
        let rot = RotationVec::new(r.to_vec())?.matrix3();
        let rotated: Vec<_> = self.source.points().iter().map(|p| rot * p).collect();
        Ok(bijective_energy(&rotated, self.target).0)
    }

    pub fn bound(&self, value: f64, delta: f64) -> Result<f64> {
        match self.bound {
            BoundKind::Quasi => bounds::quasi_lb_bijective(value, delta, &self.params),
            BoundKind::Linear => bounds::linear_lb_bijective(value, delta, &self.params),
        }
    }
}

impl CubeEvaluator for BijectiveEvaluator<'_> {
    fn evaluate(&self, cube: &Cube, _incumbent: f64) -> Result<CubeEval> {
        let value = self.objective(&cube.center)?;
        Ok(CubeEval {
            value,
            point: cube.center.clone(),
            lower: self.bound(value, cube.corner_distance())?,
            evals: 1,
        })
    }

    fn refine(&self, point: &[f64], value: f64) -> Result<Option<(Vec<f64>, f64)>> {
        let start = RigidMotion::identity(self.source.dim());
        let start = RigidMotion {
            rot: RotationVec::new(point.to_vec())?,
            ..start
        };
        let out = icp_refine(self.source, IcpMode::Bijective(self.target), &start)?;
        Ok((out.eval.value < value).then(|| (out.motion.rot.into_vec(), out.eval.value)))
    }
}

/// Evaluator for the closest-point energy over joint rotation/translation
/// cubes. Translation coordinates are scaled by `pi` so that the root cube
/// `[-pi, pi]^(s+d)` covers rotations in `[-pi, pi]^s` and translations in
/// `[-1, 1]^d`.
pub struct JointCpEvaluator<'a> {
    source: &'a PointCloud,
    index: &'a CpIndex,
    params: BoundParams,
    bound: BoundKind,
    norms: Vec<f64>,
}

impl<'a> JointCpEvaluator<'a> {
    pub fn new(source: &'a PointCloud, index: &'a CpIndex, bound: BoundKind) -> Self {
        let d = source.dim();
        Self {
            source,
            index,
            params: BoundParams::for_clouds(source, index.target(), rotation_params(d) + d),
            bound,
            norms: source.points().iter().map(|p| p.norm()).collect(),
        }
    }

    pub fn point_to_motion(&self, u: &[f64]) -> RigidMotion {
        let s = rotation_params(self.source.dim());
        RigidMotion {
            rot: RotationVec::new(u[..s].to_vec()).expect("rotation length"),
            trans: u[s..].iter().map(|v| v / PI).collect(),
        }
    }
}

impl CubeEvaluator for JointCpEvaluator<'_> {
    fn evaluate(&self, cube: &Cube, incumbent: f64) -> Result<CubeEval> {
        let motion = self.point_to_motion(&cube.center);
        let rot = motion.rot.matrix3();
        let rotated: Vec<_> = self.source.points().iter().map(|p| rot * p).collect();
        let t = motion.trans_vector();
        let d = self.source.dim();
        let s = rotation_params(d);
        let delta1 = (s as f64).sqrt() * cube.half_edge;
        let delta2 = (d as f64).sqrt() * cube.half_edge / PI;
        let (value, lower) = match self.bound {
            BoundKind::Quasi => {
                let value = self.index.energy(&rotated, &t);
                let p = self.params.with_f_star(incumbent.min(value));
                (value, bounds::quasi_lb_cp(value, delta1, delta2, &p)?)
            }
            BoundKind::Linear => {
                let mut res = Vec::with_capacity(rotated.len());
                let value = self.index.residuals(&rotated, &t, &mut res);
                let lower = bounds::linear_lb_cp_unchecked(
                    self.norms.iter().copied(),
                    &res,
                    delta1,
                    delta2,
                );
                (value, lower)
            }
        };
        Ok(CubeEval {
            value,
            point: cube.center.clone(),
            lower,
            evals: 1,
        })
    }
}

/// Root cube of the bijective search, `[-pi, pi]^s`.
pub fn rotation_root(dim: usize) -> Cube {
    Cube::root(vec![0.0; rotation_params(dim)], PI)
}

/// Breadth-first search over `root` with an observer called after every
/// generation.
pub fn bfs_qbnb<E: CubeEvaluator>(
    evaluator: &E,
    root: Cube,
    config: &SearchConfig,
    observer: &mut dyn FnMut(&GenerationView<'_>),
) -> Result<EngineOutcome> {
    config.validate()?;
    bfs_search(evaluator, root, config.limits(), observer)
}

fn run_oriented(
    source: &PointCloud,
    problem: &RegistrationProblem,
    index: Option<&CpIndex>,
    config: &SearchConfig,
) -> Result<SearchResult> {
    let dim = problem.dim();
    let limits = config.limits();
    let (outcome, motion) = match (problem.mode, config.strategy) {
        (Mode::Bijective, strategy) => {
            let ev = BijectiveEvaluator::new(source, &problem.target, config.bound_kind);
            let out = match strategy {
                Strategy::Bfs => bfs_search(&ev, rotation_root(dim), limits, &mut |_| {})?,
                Strategy::BestFirst => {
                    best_first_search(&ev, rotation_root(dim), limits, config.refine_with_icp)?
                }
            };
            let motion = RigidMotion {
                rot: RotationVec::new(out.best_point.clone())?,
                trans: vec![0.0; dim],
            };
            (out, motion)
        }
        (Mode::ClosestPoint, Strategy::BestFirst) => {
            let index = index.expect("closest-point index");
            let ev = NestedEvaluator::new(source, index, config.bound_kind, config.epsilon);
            let out =
                best_first_search(&ev, rotation_root(dim), limits, config.refine_with_icp)?;
            let motion = ev.point_to_motion(&out.best_point);
            (out, motion)
        }
        (Mode::ClosestPoint, Strategy::Bfs) => {
            let index = index.expect("closest-point index");
            let ev = JointCpEvaluator::new(source, index, config.bound_kind);
            let root = Cube::root(vec![0.0; problem.search_dim()], PI);
            let out = bfs_search(&ev, root, limits, &mut |_| {})?;
            let motion = ev.point_to_motion(&out.best_point);
            (out, motion)
        }
    };
    let (corr, approximate) = match problem.mode {
        Mode::Bijective => (eval_f_bi(source, &problem.target, &motion.rot)?.corr, false),
        Mode::ClosestPoint => {
            let index = index.expect("closest-point index");
            (eval_f_cp(source, index, &motion)?.corr, index.is_approximate())
        }
    };
    Ok(SearchResult {
        minimizer: motion,
        ub: outcome.ub,
        lb: outcome.lb,
        corr,
        generations: outcome.generations,
        total_evals: outcome.total_evals,
        status: outcome.status,
        certificate_valid: outcome.status == SearchStatus::Converged && !approximate,
        reflected: false,
    })
}

fn merge_generations(a: &[GenerationStats], b: &[GenerationStats]) -> Vec<GenerationStats> {
    let len = a.len().max(b.len());
    (0..len)
        .map(|g| match (a.get(g), b.get(g)) {
            (Some(x), Some(y)) => GenerationStats {
                g: g as u32,
                evals: x.evals + y.evals,
                live: x.live + y.live,
                ub: x.ub.min(y.ub),
                lb: x.lb.min(y.lb),
            },
            (Some(x), None) | (None, Some(x)) => x.clone(),
            (None, None) => unreachable!(),
        })
        .collect()
}

/// Solves `problem` to the accuracy in `config`. With reflections allowed
/// the search runs on the source and on its mirror image and keeps the
/// better certificate.
pub fn register(problem: &RegistrationProblem, config: &SearchConfig) -> Result<SearchResult> {
    config.validate()?;
    let index = match problem.mode {
        Mode::ClosestPoint => Some(build_cp_index(&problem.target, problem.cp_mode)?),
        Mode::Bijective => None,
    };
    let direct = run_oriented(&problem.source, problem, index.as_ref(), config)?;
    if !config.allow_reflections {
        return Ok(direct);
    }
    let mirrored = run_oriented(&problem.source.reflected(), problem, index.as_ref(), config)?;
    let generations = merge_generations(&direct.generations, &mirrored.generations);
    let total_evals = direct.total_evals + mirrored.total_evals;
    let lb = direct.lb.min(mirrored.lb);
    let status = if direct.status == SearchStatus::Converged
        && mirrored.status == SearchStatus::Converged
    {
        SearchStatus::Converged
    } else {
        SearchStatus::MaxEvalsExceeded
    };
    let certificate_valid = direct.certificate_valid && mirrored.certificate_valid;
    let (best, reflected) = if mirrored.ub < direct.ub {
        (mirrored, true)
    } else {
        (direct, false)
    };
    Ok(SearchResult {
        lb,
        generations,
        total_evals,
        status,
        certificate_valid,
        reflected,
        ..best
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalize_pair;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(seed: u64, n: usize, dim: usize, noise: f64) -> (PointCloud, PointCloud) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let p = PointCloud::new(&rows).unwrap();
        let rot = if dim == 2 {
            RotationVec::planar(rng.random_range(-3.0..3.0))
        } else {
            RotationVec::spatial(0.5, -1.0, 0.8)
        };
        let q = p.transformed(&RigidMotion {
            rot,
            trans: vec![0.1; dim],
        });
        let q = PointCloud::new(
            &q.rows()
                .into_iter()
                .map(|r| r.into_iter().map(|v| v + noise * rng.random_range(-1.0..1.0)).collect())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let np = normalize_pair(&p, &q).unwrap();
        (np.source, np.target)
    }

    #[test]
    fn bijective_self_registration_is_immediate() {
        let (p, _) = pair(1, 12, 2, 0.0);
        let prob = RegistrationProblem::new(p.clone(), p, Mode::Bijective).unwrap();
        let res = register(&prob, &SearchConfig::new(1e-6, BoundKind::Quasi, Strategy::Bfs)).unwrap();
        assert_eq!(res.ub, 0.0);
        assert!(res.certificate_valid);
        assert!(res.generations.len() <= 2);
    }

    #[test]
    fn bijective_quasi_and_linear_agree() {
        let (p, q) = pair(2, 10, 2, 0.1);
        let prob = RegistrationProblem::new(p, q, Mode::Bijective).unwrap();
        let quasi = register(&prob, &SearchConfig::new(1e-5, BoundKind::Quasi, Strategy::Bfs)).unwrap();
        let linear = register(&prob, &SearchConfig::new(1e-5, BoundKind::Linear, Strategy::Bfs)).unwrap();
        assert!((quasi.ub - linear.ub).abs() <= 2e-5);
        assert!(quasi.total_evals < linear.total_evals);
        let best_first =
            register(&prob, &SearchConfig::new(1e-5, BoundKind::Quasi, Strategy::BestFirst)).unwrap();
        assert!((best_first.ub - quasi.ub).abs() <= 2e-5);
    }

    #[test]
    fn joint_cp_bfs_in_2d_matches_nested() {
        let (p, q) = pair(3, 12, 2, 0.05);
        let prob = RegistrationProblem::new(p, q, Mode::ClosestPoint).unwrap();
        let joint = register(&prob, &SearchConfig::new(1e-3, BoundKind::Quasi, Strategy::Bfs)).unwrap();
        let nested =
            register(&prob, &SearchConfig::new(1e-3, BoundKind::Quasi, Strategy::BestFirst)).unwrap();
        assert_eq!(joint.status, SearchStatus::Converged);
        assert!(joint.gap() <= 1e-3 && nested.gap() <= 1e-3);
        assert!((joint.ub - nested.ub).abs() <= 2e-3);
    }

    #[test]
    fn config_validation() {
        let mut c = SearchConfig::new(0.0, BoundKind::Quasi, Strategy::Bfs);
        assert!(c.validate().is_err());
        c.epsilon = 1e-3;
        c.max_evals = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn grid_only_for_closest_point() {
        let (p, q) = pair(4, 8, 2, 0.0);
        let prob = RegistrationProblem::new(p, q, Mode::Bijective).unwrap();
        assert!(prob.with_grid(100).is_err());
    }
}
