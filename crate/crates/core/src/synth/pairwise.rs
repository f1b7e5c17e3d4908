use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{normalize_pair, PointCloud, RigidMotion};
use crate::search::{register, Mode, RegistrationProblem, SearchConfig, SearchResult};

/// `k` points chosen greedily to be far from each other, starting from the
/// point nearest the centroid. Ties go to the lowest index.
pub fn farthest_point_subsample(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    if k == 0 || k > cloud.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot pick {k} of {} points",
            cloud.len()
        )));
    }
    let pts = cloud.points();
    let centroid = cloud.mean();
    let first = argmax(pts.iter().map(|p| -(p - centroid).norm_squared()));
    let mut dist: Vec<f64> = pts.iter().map(|p| (p - pts[first]).norm_squared()).collect();
    let mut picked = vec![first];
    while picked.len() < k {
        let next = argmax(dist.iter().copied());
        picked.push(next);
        for (d, p) in dist.iter_mut().zip(pts) {
            *d = d.min((p - pts[next]).norm_squared());
        }
    }
    let chosen: Vec<Vector3<f64>> = picked.iter().map(|&i| pts[i]).collect();
    Ok(PointCloud::from_vectors(cloud.dim(), chosen))
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairwiseCell {
    Diagonal,
    Solved {
        distance: f64,
        lb: f64,
        motion: RigidMotion,
        reflected: bool,
        certificate_valid: bool,
    },
    Failed(String),
}

impl PairwiseCell {
    pub fn distance(&self) -> Option<f64> {
        match self {
            PairwiseCell::Diagonal => Some(0.0),
            PairwiseCell::Solved { distance, .. } => Some(*distance),
            PairwiseCell::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMatrix {
    pub cells: Vec<Vec<PairwiseCell>>,
}

impl PairwiseMatrix {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn distance(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i][j].distance()
    }
}

fn solve_cell(a: &PointCloud, b: &PointCloud, mode: Mode, config: &SearchConfig) -> Result<SearchResult> {
    let np = normalize_pair(a, b)?;
    register(&RegistrationProblem::new(np.source, np.target, mode)?, config)
}

/// Certified registration energy between every ordered pair of clouds. Each
/// pair is normalized jointly. In bijective mode all clouds are first
/// subsampled to the smallest point count.
pub fn pairwise_matrix(clouds: &[PointCloud], mode: Mode, config: &SearchConfig) -> Result<PairwiseMatrix> {
    config.validate()?;
    let Some(first) = clouds.first() else {
        return Ok(PairwiseMatrix { cells: Vec::new() });
    };
    if let Some(c) = clouds.iter().find(|c| c.dim() != first.dim()) {
        return Err(Error::DimensionMismatch {
            expected: first.dim(),
            found: c.dim(),
        });
    }
    let prepared: Vec<PointCloud> = match mode {
        Mode::Bijective => {
            let k = clouds.iter().map(PointCloud::len).min().unwrap_or(0);
            clouds
                .iter()
                .map(|c| if c.len() == k { Ok(c.clone()) } else { farthest_point_subsample(c, k) })
                .collect::<Result<_>>()?
        }
        Mode::ClosestPoint => clouds.to_vec(),
    };
    let n = prepared.len();
    let flat: Vec<PairwiseCell> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i == j {
                return PairwiseCell::Diagonal;
            }
            match solve_cell(&prepared[i], &prepared[j], mode, config) {
                Ok(r) => PairwiseCell::Solved {
                    distance: r.ub,
                    lb: r.lb,
                    motion: r.minimizer,
                    reflected: r.reflected,
                    certificate_valid: r.certificate_valid,
                },
                Err(e) => PairwiseCell::Failed(e.to_string()),
            }
        })
        .collect();
    let cells = flat.chunks(n).map(<[PairwiseCell]>::to_vec).collect();
    Ok(PairwiseMatrix { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RotationVec;
    use crate::search::{BoundKind, Strategy};
    use crate::synth::{gen_synthetic, SynthSpec};

    #[test]
    fn subsample_starts_near_centroid_and_spreads() {
        let rows: Vec<Vec<f64>> = vec![
            vec![5.0, 0.0],
            vec![0.1, 0.0],
            vec![-5.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ];
        let c = PointCloud::new(&rows).unwrap();
        let s = farthest_point_subsample(&c, 3).unwrap();
        assert_eq!(s.rows(), vec![vec![0.1, 0.0], vec![-5.0, 0.0], vec![5.0, 0.0]]);
        assert!(farthest_point_subsample(&c, 6).is_err());
    }

    #[test]
    fn matrix_of_rigid_copies() {
        let a = gen_synthetic(&SynthSpec::new(8, 0.0, 1, 2, Mode::Bijective).unwrap())
            .unwrap()
            .source;
        let b = a.transformed(&RigidMotion {
            rot: RotationVec::planar(1.1),
            trans: vec![0.2, -0.3],
        });
        let c = gen_synthetic(&SynthSpec::new(8, 0.0, 2, 2, Mode::Bijective).unwrap())
            .unwrap()
            .source;
        let eps = 1e-4;
        let config = SearchConfig::new(eps, BoundKind::Quasi, Strategy::Bfs);
        let m = pairwise_matrix(&[a, b, c], Mode::Bijective, &config).unwrap();
        assert_eq!(m.distance(0, 0), Some(0.0));
        assert!(m.distance(0, 1).unwrap() <= eps);
        assert!(m.distance(1, 0).unwrap() <= eps);
        for i in 0..3 {
            for j in 0..3 {
                let d = (m.distance(i, j).unwrap() - m.distance(j, i).unwrap()).abs();
                assert!(d <= 2.0 * eps, "{i},{j}: {d}");
            }
        }
        assert!(m.distance(0, 2).unwrap() > m.distance(0, 1).unwrap());
        assert!(m.distance(1, 2).unwrap() > m.distance(0, 1).unwrap());
    }
}
