//! Synthetic instances, run records and experiment helpers.
//!
//! All randomness comes from `ChaCha8Rng` seeded with `seed_from_u64`, a
//! counter-based generator with a published reference implementation, so a
//! seed reproduces the same instance on every platform.

mod pairwise;
mod record;

pub use pairwise::{farthest_point_subsample, pairwise_matrix, PairwiseCell, PairwiseMatrix};
pub use record::{
    generations_csv, per_generation_stats, ConfigRecord, GenerationTable, ResultRecord, RunRecord,
    MIN_GENERATIONS_FOR_FIT,
};

use std::f64::consts::PI;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_pair, PointCloud, RigidMotion, RotationVec};
use crate::search::Mode;

/// Parameters of one synthetic instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub dim: usize,
    pub mode: Mode,
}

impl SynthSpec {
    pub fn new(n: usize, sigma: f64, seed: u64, dim: usize, mode: Mode) -> Result<Self> {
        let spec = Self {
            n,
            sigma,
            seed,
            dim,
            mode,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::UnsupportedDimension(self.dim));
        }
        if self.n < self.dim + 1 {
            return Err(Error::InvalidParameter(format!(
                "need at least {} points in dimension {}, got {}",
                self.dim + 1,
                self.dim,
                self.n
            )));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::NegativeArgument {
                name: "sigma",
                value: self.sigma,
            });
        }
        Ok(())
    }
}

/// A generated registration pair. `source` and `target` are normalized;
/// `truth` maps the raw source onto the raw target.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub source: PointCloud,
    pub target: PointCloud,
    pub truth: RigidMotion,
    pub source_shift: Vec<f64>,
    pub target_shift: Vec<f64>,
    pub scale: f64,
}

impl SyntheticInstance {
    /// Ground truth expressed between the normalized clouds.
    pub fn truth_normalized(&self) -> RigidMotion {
        let rot = self.truth.rot.matrix3();
        let pad = |v: &[f64]| {
            let mut out = Vector3::zeros();
            out.as_mut_slice()[..v.len()].copy_from_slice(v);
            out
        };
        let t = (rot * pad(&self.source_shift) + self.truth.trans_vector()
            - pad(&self.target_shift))
            * self.scale;
        RigidMotion {
            rot: self.truth.rot.clone(),
            trans: t.as_slice()[..self.truth.dim()].to_vec(),
        }
    }
}

fn sample_rigid(rng: &mut ChaCha8Rng, dim: usize) -> RigidMotion {
    let rot = if dim == 2 {
        RotationVec::planar(rng.random_range(-PI..PI))
    } else {
        // Normalized Gaussian 4-vectors are uniform on S^3, hence Haar on SO(3).
        let mut q = [0.0f64; 4];
        for v in &mut q {
            *v = StandardNormal.sample(rng);
        }
        if q[0] < 0.0 {
            q.iter_mut().for_each(|v| *v = -*v);
        }
        let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        RotationVec::from_matrix3(uq.to_rotation_matrix().matrix(), 3)
    };
    let trans = (0..dim).map(|_| rng.random_range(-0.5..=0.5)).collect();
    RigidMotion { rot, trans }
}

/// Uniformly distributed rotation with a translation in `[-0.5, 0.5]^d`.
pub fn random_rigid(seed: u64, dim: usize) -> Result<RigidMotion> {
    if dim != 2 && dim != 3 {
        return Err(Error::UnsupportedDimension(dim));
    }
    Ok(sample_rigid(&mut ChaCha8Rng::seed_from_u64(seed), dim))
}

/// Samples `n` points uniformly in `[-1, 1]^d`, applies a random rigid
/// motion and isotropic Gaussian noise, and normalizes both clouds with a
/// shared scale.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<SyntheticInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rows: Vec<Vec<f64>> = (0..spec.n)
        .map(|_| (0..spec.dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let raw_p = PointCloud::new(&rows)?;
    let truth = sample_rigid(&mut rng, spec.dim);
    let moved = raw_p.transformed(&truth);
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let noisy: Vec<Vec<f64>> = moved
        .rows()
        .into_iter()
        .map(|r| {
            r.into_iter()
                .map(|v| if spec.sigma > 0.0 { v + noise.sample(&mut rng) } else { v })
                .collect()
        })
        .collect();
    let raw_q = PointCloud::new(&noisy)?;
    let np = normalize_pair(&raw_p, &raw_q)?;
    Ok(SyntheticInstance {
        source: np.source,
        target: np.target,
        truth,
        source_shift: np.source_shift,
        target_shift: np.target_shift,
        scale: np.scale,
    })
}
