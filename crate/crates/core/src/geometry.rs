//! Point clouds, rotation parameterization and search cubes.
//!
//! Rotations are parameterized through the exponential map: a vector
//! `r` of length `s = d(d-1)/2` fills the strictly-lower triangle of a
//! skew-symmetric matrix `[r]`, and the rotation is `exp([r])`. The
//! lower-triangle entries are read column-major, i.e. `(2,1), (3,1), (3,2)`
//! for `d = 3`.
//!
//! Points are stored as `Vector3` for both dimensions; planar clouds keep a
//! zero third coordinate and planar rotations act on the first two axes only.

use nalgebra::{DMatrix, Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sum::{compensated_sum, CompensatedSum};

/// Below this angle the closed-form exponential is replaced by its
/// second-order Taylor polynomial.
const SMALL_ANGLE: f64 = 1e-8;

fn check_dim(dim: usize) -> Result<()> {
    match dim {
        2 | 3 => Ok(()),
        other => Err(Error::UnsupportedDimension(other)),
    }
}

/// Number of rotation parameters for point dimension `dim`.
pub fn rotation_params(dim: usize) -> usize {
    dim * (dim - 1) / 2
}

/// An ordered list of 2D or 3D points with cached norm quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    points: Vec<Vector3<f64>>,
    frob_norm: f64,
    sum_norms: f64,
}

impl PointCloud {
    /// Builds a cloud from coordinate rows. All rows must have the same
    /// length, either 2 or 3.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyCloud)?;
        let dim = first.len();
        check_dim(dim)?;
        let mut points = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("point coordinates {row:?}")));
            }
            let z = if dim == 3 { row[2] } else { 0.0 };
            points.push(Vector3::new(row[0], row[1], z));
        }
        Ok(Self::from_vectors(dim, points))
    }

    /// Builds a cloud from padded vectors. For `dim == 2` the third
    /// coordinate is forced to zero.
    pub fn from_vectors(dim: usize, mut points: Vec<Vector3<f64>>) -> Self {
        assert!(dim == 2 || dim == 3, "unsupported dimension {dim}");
        if dim == 2 {
            for p in &mut points {
                p.z = 0.0;
            }
        }
        let frob_norm = compensated_sum(points.iter().map(|p| p.norm_squared())).sqrt();
        let sum_norms = compensated_sum(points.iter().map(|p| p.norm()));
        Self {
            dim,
            points,
            frob_norm,
            sum_norms,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    /// Coordinates of point `i`, `dim` entries.
    pub fn coords(&self, i: usize) -> Vec<f64> {
        self.points[i].as_slice()[..self.dim].to_vec()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.coords(i)).collect()
    }

    /// Frobenius norm of the `d x n` matrix whose columns are the points.
    pub fn frob_norm(&self) -> f64 {
        self.frob_norm
    }

    /// Sum of the point norms.
    pub fn sum_norms(&self) -> f64 {
        self.sum_norms
    }

    pub fn mean(&self) -> Vector3<f64> {
        let n = self.len() as f64;
        let mut acc = [CompensatedSum::new(); 3];
        for p in &self.points {
            for (a, v) in acc.iter_mut().zip(p.iter()) {
                a.add(*v);
            }
        }
        Vector3::new(acc[0].value() / n, acc[1].value() / n, acc[2].value() / n)
    }

    pub fn max_abs_coord(&self) -> f64 {
        self.points
            .iter()
            .flat_map(|p| p.iter().take(self.dim).copied())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Applies `p -> R p + t`.
    pub fn transformed(&self, motion: &RigidMotion) -> Self {
        let rot = motion.rot.matrix3();
        let t = motion.trans_vector();
        Self::from_vectors(self.dim, self.points.iter().map(|p| rot * p + t).collect())
    }

    /// Mirror image through the hyperplane orthogonal to the first axis.
    pub fn reflected(&self) -> Self {
        Self::from_vectors(
            self.dim,
            self.points
                .iter()
                .map(|p| Vector3::new(-p.x, p.y, p.z))
                .collect(),
        )
    }

    fn map_points(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Self {
        Self::from_vectors(self.dim, self.points.iter().map(f).collect())
    }
}

/// `(frob_norm, sum_norms)` of a cloud.
pub fn cloud_norms(cloud: &PointCloud) -> (f64, f64) {
    (cloud.frob_norm(), cloud.sum_norms())
}

/// Result of [`normalize_cloud`]: `normalized = (original - shift) * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub cloud: PointCloud,
    pub shift: Vec<f64>,
    pub scale: f64,
}

/// Centers a cloud at the origin and scales it uniformly so that its largest
/// absolute coordinate is exactly one.
pub fn normalize_cloud(cloud: &PointCloud) -> Result<Normalized> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mean = cloud.mean();
    let centered = cloud.map_points(|p| p - mean);
    let extent = centered.max_abs_coord();
    if extent == 0.0 {
        return Err(Error::DegenerateCloud);
    }
    // Dividing (rather than multiplying by the reciprocal) makes the extreme
    // coordinate land on exactly +-1.
    let cloud_out = centered.map_points(|p| p / extent);
    Ok(Normalized {
        cloud: cloud_out,
        shift: mean.as_slice()[..cloud.dim()].to_vec(),
        scale: 1.0 / extent,
    })
}

/// Joint normalization of a registration pair.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPair {
    pub source: PointCloud,
    pub target: PointCloud,
    pub source_shift: Vec<f64>,
    pub target_shift: Vec<f64>,
    /// Common scale applied to both clouds after centering.
    pub scale: f64,
}

/// Centers each cloud at the origin and applies one common scale so that the
/// largest absolute coordinate over both clouds is one. A shared scale keeps
/// a rigid image of the source a rigid image after normalization.
pub fn normalize_pair(source: &PointCloud, target: &PointCloud) -> Result<NormalizedPair> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            found: target.dim(),
        });
    }
    let ms = source.mean();
    let mt = target.mean();
    let cs = source.map_points(|p| p - ms);
    let ct = target.map_points(|p| p - mt);
    let extent = cs.max_abs_coord().max(ct.max_abs_coord());
    if extent == 0.0 {
        return Err(Error::DegenerateCloud);
    }
    let d = source.dim();
    Ok(NormalizedPair {
        source: cs.map_points(|p| p / extent),
        target: ct.map_points(|p| p / extent),
        source_shift: ms.as_slice()[..d].to_vec(),
        target_shift: mt.as_slice()[..d].to_vec(),
        scale: 1.0 / extent,
    })
}

impl NormalizedPair {
    /// Expresses a motion between the normalized clouds in the original
    /// frames. With `reflected` the motion applies to the source mirrored
    /// through its first axis, as returned by a search with reflections.
    pub fn original_motion(&self, motion: &RigidMotion, reflected: bool) -> RigidMotion {
        let pad = |v: &[f64]| {
            let mut out = Vector3::zeros();
            out.as_mut_slice()[..v.len()].copy_from_slice(v);
            out
        };
        let mut ms = pad(&self.source_shift);
        if reflected {
            ms.x = -ms.x;
        }
        let t = pad(&self.target_shift) - motion.rot.matrix3() * ms
            + motion.trans_vector() / self.scale;
        RigidMotion {
            rot: motion.rot.clone(),
            trans: t.as_slice()[..motion.dim()].to_vec(),
        }
    }
}

/// Exponential-map coordinates of a rotation: one angle in 2D, three
/// lower-triangle entries of `[r]` in 3D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RotationVec(Vec<f64>);

impl RotationVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        match values.len() {
            1 | 3 => Ok(Self(values)),
            other => Err(Error::InvalidParameter(format!(
                "rotation vector must have 1 or 3 entries, got {other}"
            ))),
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self(vec![0.0; rotation_params(dim)])
    }

    pub fn planar(angle: f64) -> Self {
        Self(vec![angle])
    }

    pub fn spatial(r1: f64, r2: f64, r3: f64) -> Self {
        Self(vec![r1, r2, r3])
    }

    /// Point dimension this vector parameterizes.
    pub fn dim(&self) -> usize {
        if self.0.len() == 1 {
            2
        } else {
            3
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn neg(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }

    /// The standard angular-velocity vector `w` with `hat(w) = [r]`.
    fn omega(&self) -> Vector3<f64> {
        match self.0.as_slice() {
            [theta] => Vector3::new(0.0, 0.0, *theta),
            [r1, r2, r3] => Vector3::new(*r3, -*r2, *r1),
            _ => unreachable!(),
        }
    }

    /// `exp([r])` embedded in a 3x3 matrix; planar rotations leave the third
    /// axis fixed.
    pub fn matrix3(&self) -> Matrix3<f64> {
        let w = self.omega();
        let theta = w.norm();
        let k = w.cross_matrix();
        let (a, b) = if theta < SMALL_ANGLE {
            (1.0, 0.5)
        } else {
            let half = 0.5 * theta;
            let s = half.sin() / half;
            (theta.sin() / theta, 0.5 * s * s)
        };
        Matrix3::identity() + k * a + k * k * b
    }

    /// Matrix logarithm of a rotation, returning the vector of minimal norm
    /// (angle in `[0, pi]`). `matrix` is the 3x3 embedding; `dim` selects the
    /// parameterization.
    pub fn from_matrix3(matrix: &Matrix3<f64>, dim: usize) -> Self {
        if dim == 2 {
            return Self::planar(matrix[(1, 0)].atan2(matrix[(0, 0)]));
        }
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*matrix));
        let (mut w, mut v) = (q.w, q.imag());
        if w < 0.0 {
            w = -w;
            v = -v;
        }
        let vn = v.norm();
        let omega = if vn < 1e-300 {
            Vector3::zeros()
        } else {
            v * (2.0 * vn.atan2(w) / vn)
        };
        Self::spatial(omega.z, -omega.y, omega.x)
    }
}

/// The `d x d` skew-symmetric matrix `[r]`.
pub fn skew(r: &RotationVec, dim: usize) -> Result<DMatrix<f64>> {
    if r.as_slice().len() != rotation_params(dim) {
        return Err(Error::DimensionMismatch {
            expected: rotation_params(dim),
            found: r.as_slice().len(),
        });
    }
    let mut m = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for col in 0..dim {
        for row in col + 1..dim {
            m[(row, col)] = r.as_slice()[k];
            m[(col, row)] = -r.as_slice()[k];
            k += 1;
        }
    }
    Ok(m)
}

/// `exp([r])` as a `d x d` rotation matrix.
pub fn exp_rotation(r: &RotationVec) -> DMatrix<f64> {
    let dim = r.dim();
    let m = r.matrix3();
    DMatrix::from_fn(dim, dim, |i, j| m[(i, j)])
}

/// Geodesic angle between two rotations.
pub fn rotation_distance(a: &RotationVec, b: &RotationVec) -> f64 {
    let rel = a.matrix3().transpose() * b.matrix3();
    RotationVec::from_matrix3(&rel, a.dim()).norm()
}

/// A rotation and translation. In bijective mode the translation is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidMotion {
    pub rot: RotationVec,
    pub trans: Vec<f64>,
}

impl RigidMotion {
    pub fn identity(dim: usize) -> Self {
        Self {
            rot: RotationVec::zero(dim),
            trans: vec![0.0; dim],
        }
    }

    pub fn new(rot: RotationVec, trans: Vec<f64>) -> Result<Self> {
        if trans.len() != rot.dim() {
            return Err(Error::DimensionMismatch {
                expected: rot.dim(),
                found: trans.len(),
            });
        }
        Ok(Self { rot, trans })
    }

    pub fn dim(&self) -> usize {
        self.rot.dim()
    }

    pub fn trans_vector(&self) -> Vector3<f64> {
        let mut t = Vector3::zeros();
        for (dst, src) in t.iter_mut().zip(&self.trans) {
            *dst = *src;
        }
        t
    }
}

/// Axis-aligned cube `center +- half_edge` in the search space.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub center: Vec<f64>,
    pub half_edge: f64,
    pub generation: u32,
}

impl Cube {
    pub fn root(center: Vec<f64>, half_edge: f64) -> Self {
        Self {
            center,
            half_edge,
            generation: 0,
        }
    }

    /// Search-space dimension.
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Distance from the center to a corner, `sqrt(D) h`.
    pub fn corner_distance(&self) -> f64 {
        (self.dim() as f64).sqrt() * self.half_edge
    }

    pub fn volume(&self) -> f64 {
        (2.0 * self.half_edge).powi(self.dim() as i32)
    }

    /// Half-open membership: `center - h <= x < center + h` on every axis.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && self
                .center
                .iter()
                .zip(x)
                .all(|(c, v)| *v >= c - self.half_edge && *v < c + self.half_edge)
    }

    /// Closed membership, used for bound validity.
    pub fn contains_closed(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && self
                .center
                .iter()
                .zip(x)
                .all(|(c, v)| (v - c).abs() <= self.half_edge)
    }

    /// The `2^D` children. Bit `j` of the child index selects the upper
    /// half along axis `j`.
    pub fn subdivide(&self) -> Vec<Cube> {
        let dim = self.dim();
        let h = 0.5 * self.half_edge;
        (0..1usize << dim)
            .map(|k| Cube {
                center: self
                    .center
                    .iter()
                    .enumerate()
                    .map(|(j, c)| if k >> j & 1 == 1 { c + h } else { c - h })
                    .collect(),
                half_edge: h,
                generation: self.generation + 1,
            })
            .collect()
    }
}

/// Free-function form of [`Cube::subdivide`].
pub fn subdivide(cube: &Cube) -> Vec<Cube> {
    cube.subdivide()
}
