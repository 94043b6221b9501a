//! Finite metric measure spaces.
//!
//! A space is a distance matrix `rho` (symmetric, zero diagonal, triangle
//! inequality) plus a strictly positive weight `mu` per point. Balls are
//! *open*: `B(x,r) = { y : rho(x,y) < r }`, so `B(x,r)` contains `x` exactly
//! when `r > 0`, and on a unit-distance graph `B(x,1) = {x}`.
//!
//! Derived geometry:
//!
//! | quantity | definition |
//! |----------|------------|
//! | doubling `K` | `max mu(B(x,2r))/mu(B(x,r))` over points and grid radii |
//! | dimension `d` | `log2 K` |
//! | reverse doubling `K_*` | same ratio minimized over `r <= diam/3` |
//! | `kappa` | `log2 K_*` |
//! | non-collapsing `c0` | `min_x mu(B(x,1))` |
//!
//! The radius grid is every distinct positive distance plus the midpoints of
//! consecutive ones; sweeping it visits every set-distinct ball the space has.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack for triangle-inequality validation; exact on integer-weight
/// graphs, absorbs shortest-path float rounding on weighted ones.
pub const TRIANGLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MetricMeasureSpace {
    dist: Array2<f64>,
    mu: Array1<f64>,
    // per point: (distance, id) sorted ascending, ties by id; prefix mu sums
    sorted: Vec<Vec<(f64, usize)>>,
    prefix_mu: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometryReport {
    pub n: usize,
    pub total_measure: f64,
    pub diameter: f64,
    pub min_positive_distance: f64,
    pub doubling_k: f64,
    /// d = log2(K); the default homogeneous dimension used in norm weights.
    pub dim_d: f64,
    pub reverse_doubling_kstar: f64,
    pub dim_kappa: f64,
    /// c0 = min_x mu(B(x,1)).
    pub noncollapse_c0: f64,
}

impl MetricMeasureSpace {
    /// Validates and indexes a distance matrix and measure vector.
    pub fn new(dist: Array2<f64>, mu: Array1<f64>) -> Result<Self> {
        let n = mu.len();
        if dist.nrows() != n || dist.ncols() != n {
            return Err(Error::InvalidParams(format!(
                "distance matrix {}x{} does not match {} measures",
                dist.nrows(),
                dist.ncols(),
                n
            )));
        }
        if n == 0 {
            return Err(Error::InvalidParams("empty space".into()));
        }
        for i in 0..n {
            if !(mu[i] > 0.0) {
                return Err(Error::NonpositiveMeasure { i, mu: mu[i] });
            }
            if dist[(i, i)] != 0.0 {
                return Err(Error::InvalidParams(format!(
                    "nonzero self-distance {} at point {i}",
                    dist[(i, i)]
                )));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let dij = dist[(i, j)];
                let dji = dist[(j, i)];
                if !dij.is_finite() || dij <= 0.0 {
                    return Err(Error::InvalidParams(format!(
                        "distance between distinct points ({i},{j}) must be positive and finite, got {dij}"
                    )));
                }
                if dij != dji {
                    return Err(Error::AsymmetricDistance { i, j, dij, dji });
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                let dik = dist[(i, k)];
                for j in 0..n {
                    let dij = dist[(i, j)];
                    let dkj = dist[(k, j)];
                    if dij > dik + dkj + TRIANGLE_TOL * dij.max(1.0) {
                        return Err(Error::TriangleInequalityViolation { i, j, k, dij, dik, dkj });
                    }
                }
            }
        }

        let mut sorted = Vec::with_capacity(n);
        let mut prefix_mu = Vec::with_capacity(n);
        for i in 0..n {
            let mut row: Vec<(f64, usize)> = (0..n).map(|j| (dist[(i, j)], j)).collect();
            row.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut acc = 0.0;
            let pm = row
                .iter()
                .map(|&(_, j)| {
                    acc += mu[j];
                    acc
                })
                .collect();
            sorted.push(row);
            prefix_mu.push(pm);
        }
        Ok(Self { dist, mu, sorted, prefix_mu })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[(i, j)]
    }

    pub fn dist_matrix(&self) -> &Array2<f64> {
        &self.dist
    }

    pub fn mu(&self, i: usize) -> f64 {
        self.mu[i]
    }

    pub fn mu_vec(&self) -> &Array1<f64> {
        &self.mu
    }

    pub fn total_measure(&self) -> f64 {
        self.mu.sum()
    }

    /// Members of the open ball B(x,r), ascending by distance then id.
    pub fn ball(&self, x: usize, r: f64) -> Vec<usize> {
        let row = &self.sorted[x];
        let cut = row.partition_point(|&(d, _)| d < r);
        row[..cut].iter().map(|&(_, j)| j).collect()
    }

    /// mu(B(x,r)) for the open ball; 0 when r <= 0.
    pub fn ball_measure(&self, x: usize, r: f64) -> f64 {
        let row = &self.sorted[x];
        let cut = row.partition_point(|&(d, _)| d < r);
        if cut == 0 {
            0.0
        } else {
            self.prefix_mu[x][cut - 1]
        }
    }

    /// Ball measure that never vanishes: an empty open ball (only possible for
    /// r <= 0) falls back to mu({x}); returns (measure, fell_back).
    pub fn ball_measure_nonzero(&self, x: usize, r: f64) -> (f64, bool) {
        let m = self.ball_measure(x, r);
        if m > 0.0 {
            (m, false)
        } else {
            (self.mu[x], true)
        }
    }

    pub fn diameter(&self) -> f64 {
        self.dist.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_positive_distance(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.n() {
            for j in (i + 1)..self.n() {
                if self.dist[(i, j)] > 0.0 {
                    m = m.min(self.dist[(i, j)]);
                }
            }
        }
        m
    }

    /// Sorted distinct positive distances plus midpoints of consecutive ones.
    /// The midpoints matter: open balls change membership exactly at distance
    /// values, so radii strictly between consecutive distances realize the
    /// balls that *include* the inner shell.
    pub fn radius_grid(&self) -> Vec<f64> {
        let mut ds: Vec<f64> = Vec::new();
        for i in 0..self.n() {
            for j in (i + 1)..self.n() {
                ds.push(self.dist[(i, j)]);
            }
        }
        ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ds.dedup();
        let mut grid = Vec::with_capacity(ds.len() * 2);
        for (idx, &d) in ds.iter().enumerate() {
            grid.push(d);
            if idx + 1 < ds.len() {
                grid.push(0.5 * (d + ds[idx + 1]));
            }
        }
        grid
    }

    /// Measured doubling/reverse-doubling/non-collapsing constants.
    pub fn geometry_report(&self) -> GeometryReport {
        let n = self.n();
        let diam = self.diameter();
        let grid = self.radius_grid();
        let mut k_doub: f64 = 1.0;
        let mut k_star = f64::INFINITY;
        for &r in &grid {
            for x in 0..n {
                let small = self.ball_measure(x, r);
                if small <= 0.0 {
                    continue;
                }
                let ratio = self.ball_measure(x, 2.0 * r) / small;
                k_doub = k_doub.max(ratio);
                if r <= diam / 3.0 {
                    k_star = k_star.min(ratio);
                }
            }
        }
        if !k_star.is_finite() {
            // degenerate: no grid radius below diam/3 (e.g. single point)
            k_star = 1.0;
        }
        let c0 = (0..n).map(|x| self.ball_measure(x, 1.0)).fold(f64::INFINITY, f64::min);
        GeometryReport {
            n,
            total_measure: self.total_measure(),
            diameter: diam,
            min_positive_distance: self.min_positive_distance(),
            doubling_k: k_doub,
            dim_d: k_doub.log2(),
            reverse_doubling_kstar: k_star,
            dim_kappa: k_star.log2(),
            noncollapse_c0: c0,
        }
    }

    /// Same space with measure scaled to total 1.
    pub fn normalized_measure(&self) -> Result<Self> {
        let t = self.total_measure();
        Self::new(self.dist.clone(), self.mu.clone() / t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use proptest::prelude::*;

    /// Cycle graph metric, built directly from the circular index distance.
    fn cycle_space(n: usize) -> MetricMeasureSpace {
        let mut d = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let k = (i as i64 - j as i64).unsigned_abs() as usize % n;
                d[(i, j)] = k.min(n - k) as f64;
            }
        }
        MetricMeasureSpace::new(d, Array1::ones(n)).unwrap()
    }

    #[test]
    fn unit_ball_on_unit_graph_is_singleton() {
        let s = cycle_space(8);
        assert_eq!(s.ball(0, 1.0), vec![0]);
        assert_eq!(s.ball_measure(0, 1.0), 1.0);
        let mut b = s.ball(0, 1.5);
        b.sort_unstable();
        assert_eq!(b, vec![0, 1, 7]);
    }

    #[test]
    fn empty_open_ball_falls_back_to_point_mass() {
        let s = cycle_space(4);
        assert_eq!(s.ball_measure(2, 0.0), 0.0);
        assert_eq!(s.ball_measure_nonzero(2, 0.0), (1.0, true));
        assert_eq!(s.ball_measure_nonzero(2, 0.5), (1.0, false));
    }

    #[test]
    fn asymmetric_distance_rejected() {
        let mut d = Array2::zeros((2, 2));
        d[(0, 1)] = 1.0;
        d[(1, 0)] = 2.0;
        let e = MetricMeasureSpace::new(d, Array1::ones(2)).unwrap_err();
        assert!(matches!(e, Error::AsymmetricDistance { .. }));
    }

    #[test]
    fn triangle_violation_rejected() {
        let mut d = Array2::zeros((3, 3));
        for (i, j, v) in [(0, 1, 1.0), (0, 2, 5.0), (1, 2, 1.0)] {
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
        let e = MetricMeasureSpace::new(d, Array1::ones(3)).unwrap_err();
        assert!(matches!(e, Error::TriangleInequalityViolation { .. }));
    }

    #[test]
    fn nonpositive_measure_rejected() {
        let mut d = Array2::zeros((2, 2));
        d[(0, 1)] = 1.0;
        d[(1, 0)] = 1.0;
        let e = MetricMeasureSpace::new(d, arr1(&[1.0, 0.0])).unwrap_err();
        assert!(matches!(e, Error::NonpositiveMeasure { i: 1, .. }));
    }

    #[test]
    fn cycle_geometry_constants() {
        let s = cycle_space(16);
        let g = s.geometry_report();
        assert_eq!(g.diameter, 8.0);
        assert_eq!(g.min_positive_distance, 1.0);
        assert_eq!(g.noncollapse_c0, 1.0);
        // doubling peaks for B(x,r)={x}, B(x,2r) = 3 points (r in (0.5,1])
        assert_eq!(g.doubling_k, 3.0);
        assert!(g.dim_d > 1.0 && g.dim_d < 2.0);
        assert!(g.reverse_doubling_kstar > 1.0);
    }

    #[test]
    fn radius_grid_realizes_every_ball() {
        let s = cycle_space(8);
        let grid = s.radius_grid();
        // distances 1..4 and midpoints between them
        assert_eq!(grid, vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]);
        // ball membership counts at successive radii grow one shell at a time
        let sizes: Vec<usize> = grid.iter().map(|&r| s.ball(0, r).len()).collect();
        assert_eq!(sizes, vec![1, 3, 3, 5, 5, 7, 7]);
    }

    proptest! {
        #[test]
        fn ball_measure_monotone_in_radius(n in 3usize..12, seed in 0u64..500) {
            // scrambled-measure cycle; radii swept across the grid
            let mut s = cycle_space(n);
            let mut mu = Array1::ones(n);
            for i in 0..n {
                mu[i] = 1.0 + ((seed.wrapping_mul(i as u64 + 1) % 7) as f64) * 0.25;
            }
            s = MetricMeasureSpace::new(s.dist.clone(), mu).unwrap();
            let grid = s.radius_grid();
            for x in 0..n {
                let mut prev = 0.0;
                for &r in &grid {
                    let m = s.ball_measure(x, r);
                    prop_assert!(m >= prev);
                    prev = m;
                }
                prop_assert!((s.ball_measure(x, s.diameter() + 1.0) - s.total_measure()).abs() < 1e-12);
            }
        }

        #[test]
        fn ball_always_contains_center(n in 2usize..10, r in 0.01f64..20.0) {
            let s = cycle_space(n);
            for x in 0..n {
                prop_assert!(s.ball(x, r).contains(&x));
            }
        }
    }
}
