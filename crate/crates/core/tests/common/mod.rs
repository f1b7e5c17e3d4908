//! Reference implementations used as test oracles. They share no code with
//! the library beyond the assignment solver, which is itself checked against
//! enumeration.

#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use qbnb_core::correspondence::CostMatrix;
use qbnb_core::{solve_assignment, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Skew matrix with the below-diagonal entries filled column by column.
pub fn skew3(r: &[f64]) -> Matrix3<f64> {
    match r.len() {
        1 => Matrix3::new(0.0, -r[0], 0.0, r[0], 0.0, 0.0, 0.0, 0.0, 0.0),
        3 => Matrix3::new(0.0, -r[0], -r[1], r[0], 0.0, -r[2], r[1], r[2], 0.0),
        n => panic!("no rotation with {n} parameters"),
    }
}

/// Matrix exponential by scaling and squaring of a truncated power series.
pub fn expm(a: &Matrix3<f64>) -> Matrix3<f64> {
    let squarings = 8;
    let b = a / f64::from(1u32 << squarings);
    let mut term = Matrix3::identity();
    let mut sum = Matrix3::identity();
    for k in 1..=20 {
        term = term * b / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

pub fn rotation(r: &[f64]) -> Matrix3<f64> {
    if r.len() == 1 {
        let (s, c) = r[0].sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    } else {
        expm(&skew3(r))
    }
}

pub fn pad(v: &[f64]) -> Vector3<f64> {
    let mut out = Vector3::zeros();
    out.as_mut_slice()[..v.len()].copy_from_slice(v);
    out
}

/// Closest-point energy by exhaustive scan.
pub fn cp_energy(src: &PointCloud, tgt: &PointCloud, rot: &Matrix3<f64>, t: &Vector3<f64>) -> f64 {
    let sum: f64 = src
        .points()
        .iter()
        .map(|p| {
            let x = rot * p + t;
            tgt.points()
                .iter()
                .map(|q| (x - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    sum / src.len() as f64
}

/// Bijective energy at a rotation.
pub fn bi_energy(src: &PointCloud, tgt: &PointCloud, rot: &Matrix3<f64>) -> f64 {
    let rows: Vec<Vec<f64>> = src
        .points()
        .iter()
        .map(|p| {
            let x = rot * p;
            tgt.points().iter().map(|q| (x - q).norm_squared()).collect()
        })
        .collect();
    let (_, total) = solve_assignment(&CostMatrix::from_rows(&rows).unwrap());
    total / src.len() as f64
}

/// Plain point-to-point ICP with exhaustive matching and SVD Procrustes.
pub fn icp(
    src: &PointCloud,
    tgt: &PointCloud,
    mut rot: Matrix3<f64>,
    mut t: Vector3<f64>,
) -> (Matrix3<f64>, Vector3<f64>, f64) {
    let dim = src.dim();
    let mut value = cp_energy(src, tgt, &rot, &t);
    for _ in 0..500 {
        let matched: Vec<Vector3<f64>> = src
            .points()
            .iter()
            .map(|p| {
                let x = rot * p + t;
                *tgt.points()
                    .iter()
                    .min_by(|a, b| (x - *a).norm_squared().total_cmp(&(x - *b).norm_squared()))
                    .unwrap()
            })
            .collect();
        let n = src.len() as f64;
        let mp = src.points().iter().sum::<Vector3<f64>>() / n;
        let mq = matched.iter().sum::<Vector3<f64>>() / n;
        let mut h = Matrix3::zeros();
        for (p, q) in src.points().iter().zip(&matched) {
            h += (q - mq) * (p - mp).transpose();
        }
        let new_rot = if dim == 2 {
            let angle = (h[(1, 0)] - h[(0, 1)]).atan2(h[(0, 0)] + h[(1, 1)]);
            rotation(&[angle])
        } else {
            let svd = h.svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let mut d = Matrix3::identity();
            d[(2, 2)] = (u * vt).determinant().signum();
            u * d * vt
        };
        let new_t = mq - new_rot * mp;
        let new_value = cp_energy(src, tgt, &new_rot, &new_t);
        if new_value >= value - 1e-15 {
            if new_value < value {
                rot = new_rot;
                t = new_t;
                value = new_value;
            }
            break;
        }
        rot = new_rot;
        t = new_t;
        value = new_value;
    }
    (rot, t, value)
}

pub fn uniform_point(rng: &mut ChaCha8Rng, half: f64, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-half..=half)).collect()
}
