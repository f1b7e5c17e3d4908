//! Bound functionals for the branch-and-bound searches.
//!
//! A *quasi*-lower bound for a cube is a lower bound on the global minimum
//! that is only guaranteed when the cube contains a global minimizer. It is
//! quadratic in the cube size, where Lipschitz bounds are linear. Both kinds
//! are clamped at zero because every energy here is non-negative.
//!
//! `delta` arguments are distances in parameter space, normally the
//! center-to-corner distance `sqrt(D) h` of a cube.

use crate::error::{Error, Result};
use crate::geometry::{rotation_params, PointCloud};

fn non_negative(name: &'static str, value: f64) -> Result<()> {
    if value < 0.0 || value.is_nan() {
        return Err(Error::NegativeArgument { name, value });
    }
    Ok(())
}

/// Remainder of the exponential series, `e^x - sum_{j<k} x^j / j!`, for
/// `k` in `{1, 2}`.
pub fn psi(k: u32, x: f64) -> Result<f64> {
    non_negative("x", x)?;
    match k {
        1 => Ok(x.exp_m1()),
        2 => Ok(psi2(x)),
        _ => Err(Error::InvalidParameter(format!(
            "psi is defined here for k in {{1, 2}}, got {k}"
        ))),
    }
}

fn psi2(x: f64) -> f64 {
    if x < 0.5 {
        // Series from the quadratic term; avoids cancellation in
        // exp_m1(x) - x near zero.
        let mut term = 0.5 * x * x;
        let mut sum = 0.0;
        let mut j = 2.0;
        while term > sum * 1e-17 {
            sum += term;
            j += 1.0;
            term *= x / j;
        }
        sum
    } else {
        x.exp_m1() - x
    }
}

/// Instance constants consumed by the bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    /// Number of source points.
    pub n: usize,
    /// Frobenius norm of the source points.
    pub sigma_p: f64,
    /// Frobenius norm of the target points.
    pub sigma_q: f64,
    /// Sum of source point norms.
    pub sum_norms_p: f64,
    /// Any upper bound on the global minimum.
    pub f_star: f64,
    /// Point dimension.
    pub dim_d: usize,
    /// Search-space dimension.
    pub dim_search: usize,
}

impl BoundParams {
    pub fn for_clouds(source: &PointCloud, target: &PointCloud, dim_search: usize) -> Self {
        Self {
            n: source.len(),
            sigma_p: source.frob_norm(),
            sigma_q: target.frob_norm(),
            sum_norms_p: source.sum_norms(),
            f_star: f64::INFINITY,
            dim_d: source.dim(),
            dim_search,
        }
    }

    pub fn with_f_star(mut self, f_star: f64) -> Self {
        self.f_star = f_star;
        self
    }

    fn inv_n(&self) -> f64 {
        1.0 / self.n as f64
    }
}

/// `(2/n) sigma_p sigma_q psi_2(delta)`: the largest possible excess of the
/// bijective energy at distance `delta` from a global minimizer.
pub fn quasi_delta_bijective(delta: f64, p: &BoundParams) -> Result<f64> {
    non_negative("delta", delta)?;
    Ok(2.0 * p.inv_n() * p.sigma_p * p.sigma_q * psi2(delta))
}

pub fn quasi_lb_bijective(f_at_center: f64, delta: f64, p: &BoundParams) -> Result<f64> {
    Ok((f_at_center - quasi_delta_bijective(delta, p)?).max(0.0))
}

/// Joint rotation/translation excess for the closest-point energy, with
/// rotation distance `delta1` and translation distance `delta2`:
/// `(1/n) [2 psi_2(d1)(sigma_p^2 + sigma_p sqrt(n f*)) + 2 d2 psi_1(d1) sum|p_i| + n d2^2]`.
pub fn quasi_delta_cp(delta1: f64, delta2: f64, p: &BoundParams) -> Result<f64> {
    non_negative("delta1", delta1)?;
    non_negative("delta2", delta2)?;
    let n = p.n as f64;
    let rot = if delta1 > 0.0 {
        2.0 * psi2(delta1) * (p.sigma_p * p.sigma_p + p.sigma_p * (n * p.f_star).sqrt())
    } else {
        0.0
    };
    let cross = 2.0 * delta2 * delta1.exp_m1() * p.sum_norms_p;
    Ok((rot + cross + n * delta2 * delta2) / n)
}

pub fn quasi_lb_cp(f_at_center: f64, delta1: f64, delta2: f64, p: &BoundParams) -> Result<f64> {
    Ok((f_at_center - quasi_delta_cp(delta1, delta2, p)?).max(0.0))
}

/// Outer (rotation-cube) quasi-lower bound of the nested closest-point
/// search. `ebar_at_center` is the translation-minimized energy at the cube
/// center and `h` the rotation half-edge.
pub fn quasi_lb_cp_rotation(ebar_at_center: f64, h: f64, p: &BoundParams) -> Result<f64> {
    non_negative("h", h)?;
    let delta1 = (rotation_params(p.dim_d) as f64).sqrt() * h;
    quasi_lb_cp(ebar_at_center, delta1, 0.0, p)
}

/// Inner (translation-cube) quasi-lower bound: `e - d h^2`. For a fixed
/// correspondence the energy is exactly quadratic in `t` with unit
/// curvature, and `sqrt(d) h` is the center-to-corner distance.
pub fn quasi_lb_cp_translation(e_at_center: f64, h: f64, dim_d: usize) -> Result<f64> {
    non_negative("h", h)?;
    Ok((e_at_center - dim_d as f64 * h * h).max(0.0))
}

/// Lipschitz constant of the bijective energy in the rotation vector.
pub fn lipschitz_bijective(p: &BoundParams) -> f64 {
    2.0 * p.inv_n() * p.sigma_p * p.sigma_q
}

/// Linear lower bound `f - (2/n) sigma_p sigma_q delta`, valid on any cube.
pub fn linear_lb_bijective(f_at_center: f64, delta: f64, p: &BoundParams) -> Result<f64> {
    non_negative("delta", delta)?;
    Ok((f_at_center - lipschitz_bijective(p) * delta).max(0.0))
}

/// Per-point linear lower bound for the closest-point energy:
/// `(1/n) sum_i max(e_i - delta1 |p_i| - delta2, 0)^2`, where `e_i` is the
/// closest-point distance of point `i` at the cube center.
pub fn linear_lb_cp(
    source: &PointCloud,
    per_point_errors: &[f64],
    delta1: f64,
    delta2: f64,
) -> Result<f64> {
    non_negative("delta1", delta1)?;
    non_negative("delta2", delta2)?;
    if per_point_errors.len() != source.len() {
        return Err(Error::CountMismatch {
            source_len: source.len(),
            target_len: per_point_errors.len(),
        });
    }
    Ok(linear_lb_cp_unchecked(
        source.points().iter().map(|p| p.norm()),
        per_point_errors,
        delta1,
        delta2,
    ))
}

pub(crate) fn linear_lb_cp_unchecked(
    norms: impl Iterator<Item = f64>,
    per_point_errors: &[f64],
    delta1: f64,
    delta2: f64,
) -> f64 {
    let mut acc = crate::sum::CompensatedSum::new();
    for (e, pn) in per_point_errors.iter().zip(norms) {
        let r = (e - delta1 * pn - delta2).max(0.0);
        acc.add(r * r);
    }
    acc.value() / per_point_errors.len() as f64
}
