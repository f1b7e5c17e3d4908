//! Globally optimal rigid registration of point clouds.
//!
//! The crate solves the rigid closest-point problem (each transformed source
//! point is matched to its nearest target point) and the rigid bijective
//! problem (correspondences restricted to permutations) in two and three
//! dimensions. Both are solved to a certified accuracy `epsilon` by
//! branch-and-bound over the rotation (and translation) parameters.
//!
//! Two families of bounds are provided:
//!
//! * quadratic *quasi*-lower bounds, which are only lower bounds on cubes that
//!   contain a global minimizer but are enough to keep the search globally
//!   optimal, and which give a search whose cost grows like `log(1/epsilon)`;
//! * classical Lipschitz (linear) lower bounds, which are valid everywhere and
//!   serve as the baseline.
//!
//! Module map:
//!
//! * [`geometry`]: point clouds, the exponential map, search cubes.
//! * [`correspondence`]: closest-point queries, linear assignment, Procrustes
//!   and ICP refinement.
//! * [`bounds`]: quasi-lower and linear lower bound functionals.
//! * [`search`]: breadth-first and best-first engines, the nested rigid-CP
//!   search and the registration entry points.
//! * [`synth`]: synthetic instances, run records, statistics, pairwise
//!   distance matrices.

pub mod bounds;
pub mod correspondence;
pub mod error;
pub mod geometry;
pub mod search;
pub mod synth;

mod sum;

pub use correspondence::{
    build_cp_index, eval_f_bi, eval_f_cp, icp_refine, procrustes, solve_assignment, CpIndex,
    CpMode, Correspondence, EnergyEval, IcpMode,
};
pub use error::{Error, Result};
pub use geometry::{
    cloud_norms, exp_rotation, normalize_cloud, normalize_pair, skew, subdivide, Cube, PointCloud,
    RigidMotion, RotationVec,
};
pub use search::{
    register, BoundKind, GenerationStats, Mode, RegistrationProblem, SearchConfig, SearchResult,
    SearchStatus, Strategy,
};
