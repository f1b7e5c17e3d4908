//! Nearest-site lattice built with a separable Euclidean distance transform.
//!
//! Sites are rasterized onto an `N^d` cell grid over `[-1.25, 1.25]^d`; each
//! cell stores the index of the site nearest to it (in rasterized
//! coordinates). A query returns the exact distance to the stored site, so
//! reported distances are never below the true nearest distance and exceed it
//! by at most two cell diagonals.

use nalgebra::Vector3;

pub const GRID_MARGIN: f64 = 0.25;
const GRID_LO: f64 = -1.0 - GRID_MARGIN;
const GRID_SPAN: f64 = 2.0 + 2.0 * GRID_MARGIN;
const NO_SITE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct DtGrid {
    dim: usize,
    resolution: usize,
    width: f64,
    nearest: Vec<u32>,
}

impl DtGrid {
    pub fn build(sites: &[Vector3<f64>], dim: usize, resolution: usize) -> Self {
        let n = resolution;
        let width = GRID_SPAN / n as f64;
        let cells = n.pow(dim as u32);
        let mut dist = vec![f32::INFINITY; cells];
        let mut feat = vec![NO_SITE; cells];
        let mut grid = Self {
            dim,
            resolution,
            width,
            nearest: Vec::new(),
        };
        for (j, s) in sites.iter().enumerate() {
            let c = grid.cell_of(s);
            if feat[c] == NO_SITE {
                feat[c] = j as u32;
                dist[c] = 0.0;
            }
        }

        let mut f = vec![0.0f64; n];
        let mut fin = vec![NO_SITE; n];
        let mut out_d = vec![0.0f64; n];
        let mut out_arg = vec![0usize; n];
        let mut v = vec![0usize; n];
        let mut z = vec![0.0f64; n + 1];
        for axis in 0..dim {
            let stride = n.pow(axis as u32);
            for base in 0..cells {
                // Visit each line once, from the cell whose coordinate along
                // `axis` is zero.
                if !(base / stride).is_multiple_of(n) {
                    continue;
                }
                for q in 0..n {
                    let c = base + q * stride;
                    f[q] = dist[c] as f64;
                    fin[q] = feat[c];
                }
                if !lower_envelope(&f, &mut v, &mut z, &mut out_d, &mut out_arg) {
                    continue;
                }
                for q in 0..n {
                    let c = base + q * stride;
                    dist[c] = out_d[q] as f32;
                    feat[c] = fin[out_arg[q]];
                }
            }
        }
        grid.nearest = feat;
        grid
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Length of one cell diagonal.
    pub fn cell_diagonal(&self) -> f64 {
        self.width * (self.dim as f64).sqrt()
    }

    /// Whether `x` lies inside the gridded box.
    pub fn covers(&self, x: &Vector3<f64>) -> bool {
        (0..self.dim).all(|k| x[k] >= GRID_LO && x[k] <= GRID_LO + GRID_SPAN)
    }

    fn cell_of(&self, x: &Vector3<f64>) -> usize {
        let n = self.resolution;
        let mut c = 0;
        let mut stride = 1;
        for k in 0..self.dim {
            let i = ((x[k] - GRID_LO) / self.width).floor();
            let i = if i.is_nan() { 0 } else { (i.max(0.0) as usize).min(n - 1) };
            c += i * stride;
            stride *= n;
        }
        c
    }

    /// Site index stored for the cell containing `x`; queries outside the
    /// box are clamped to the boundary cell.
    pub fn site(&self, x: &Vector3<f64>) -> usize {
        self.nearest[self.cell_of(x)] as usize
    }
}

/// One-dimensional squared distance transform of sampled function `f`
/// (infinite entries are absent). Returns false if `f` has no finite entry.
fn lower_envelope(
    f: &[f64],
    v: &mut [usize],
    z: &mut [f64],
    out_d: &mut [f64],
    out_arg: &mut [usize],
) -> bool {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let pf = p as f64;
            let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf));
            if s <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = s;
            z[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        return false;
    }
    let mut j = 0;
    for q in 0..n {
        let qf = q as f64;
        while z[j + 1] < qf {
            j += 1;
        }
        let p = v[j];
        out_d[q] = (qf - p as f64).powi(2) + f[p];
        out_arg[q] = p;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(sites: &[Vector3<f64>], q: &Vector3<f64>) -> f64 {
        sites
            .iter()
            .map(|s| (s - q).norm())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn within_two_cell_diagonals_in_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sites: Vec<_> = (0..60)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let grid = DtGrid::build(&sites, 3, 40);
        let tol = 2.0 * grid.cell_diagonal();
        for _ in 0..2000 {
            let q = Vector3::new(
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
                rng.random_range(-1.2..1.2),
            );
            let approx = (sites[grid.site(&q)] - q).norm();
            let exact = brute(&sites, &q);
            assert!(approx >= exact - 1e-12);
            assert!(approx - exact <= tol, "{approx} vs {exact}");
        }
    }

    #[test]
    fn single_site_fills_grid() {
        let sites = [Vector3::new(0.3, -0.2, 0.0)];
        let grid = DtGrid::build(&sites, 2, 17);
        assert!(grid.nearest.iter().all(|&s| s == 0));
    }

    #[test]
    fn outside_queries_clamp() {
        let sites = [Vector3::new(-1.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        let grid = DtGrid::build(&sites, 2, 50);
        let far = Vector3::new(9.0, 0.1, 0.0);
        assert!(!grid.covers(&far));
        assert_eq!(grid.site(&far), 1);
    }
}
