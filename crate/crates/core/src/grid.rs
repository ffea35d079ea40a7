//! Time grids and finite-difference differentiation matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered sample times `t_0 < t_1 < ... < t_{T-1}`.
///
/// When `periodic` is set, the state is assumed to satisfy
/// `u(t_0) = u(t_{T-1})`, i.e. the last sample is the first one again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
    periodic: bool,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>, periodic: bool) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 samples, got {}",
                points.len()
            )));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("non-finite time stamp".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("time stamps must be strictly increasing".into()));
        }
        Ok(Self { points, periodic })
    }

    /// `n` equispaced samples on `[0, t_end]`, `t_k = t_end * k / (n - 1)`.
    pub fn uniform(n: usize, t_end: f64, periodic: bool) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 samples, got {n}")));
        }
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::InvalidGrid(format!("t_end must be positive, got {t_end}")));
        }
        let last = (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|k| t_end * k as f64 / last).collect();
        points[n - 1] = t_end;
        Self::new(points, periodic)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }
}

/// Convenience wrapper matching the uniform construction used by the experiments.
pub fn build_uniform_grid(n: usize, t_end: f64, periodic: bool) -> Result<TimeGrid> {
    TimeGrid::uniform(n, t_end, periodic)
}

/// Weights of the three-point Lagrange derivative at `x` through nodes `a, b, c`.
fn lagrange3_deriv(a: f64, b: f64, c: f64, x: f64) -> [f64; 3] {
    [
        ((x - b) + (x - c)) / ((a - b) * (a - c)),
        ((x - a) + (x - c)) / ((b - a) * (b - c)),
        ((x - a) + (x - b)) / ((c - a) * (c - b)),
    ]
}

/// Finite-difference stencil family used for the discrete time derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffScheme {
    /// Central differences; circulant on periodic grids, one-sided second
    /// order at the ends otherwise.
    #[default]
    Central,
    /// Second-order backward differences (BDF2 stencil) from the third
    /// sample on; the first two rows use the forward and central stencils.
    Backward,
}

/// Differentiation matrix for the requested scheme. `Backward` ignores the
/// periodic flag.
pub fn build_diff_matrix_with(grid: &TimeGrid, scheme: DiffScheme) -> DMatrix<f64> {
    match scheme {
        DiffScheme::Central => build_diff_matrix(grid),
        DiffScheme::Backward => {
            let t = grid.points();
            let n = t.len();
            let mut d = DMatrix::zeros(n, n);
            let w = lagrange3_deriv(t[0], t[1], t[2], t[0]);
            d[(0, 0)] = w[0];
            d[(0, 1)] = w[1];
            d[(0, 2)] = w[2];
            let w = lagrange3_deriv(t[0], t[1], t[2], t[1]);
            d[(1, 0)] = w[0];
            d[(1, 1)] = w[1];
            d[(1, 2)] = w[2];
            for k in 2..n {
                let w = lagrange3_deriv(t[k - 2], t[k - 1], t[k], t[k]);
                d[(k, k - 2)] = w[0];
                d[(k, k - 1)] = w[1];
                d[(k, k)] = w[2];
            }
            d
        }
    }
}

/// Second-order differentiation matrix on `grid`.
///
/// Periodic grids use central differences with wraparound, where index `T-1`
/// is the same physical sample as index 0 (so rows 0 and `T-1` coincide and
/// the wrap neighbour of sample 0 is sample `T-2`). Non-periodic grids use
/// central differences in the interior and one-sided second-order stencils
/// at both ends. Non-uniform spacing is handled through Lagrange weights.
pub fn build_diff_matrix(grid: &TimeGrid) -> DMatrix<f64> {
    let t = grid.points();
    let n = t.len();
    let mut d = DMatrix::zeros(n, n);

    for k in 1..n - 1 {
        let w = lagrange3_deriv(t[k - 1], t[k], t[k + 1], t[k]);
        d[(k, k - 1)] = w[0];
        d[(k, k)] = w[1];
        d[(k, k + 1)] = w[2];
    }

    if grid.is_periodic() {
        let period = t[n - 1] - t[0];
        let w = lagrange3_deriv(t[n - 2] - period, t[0], t[1], t[0]);
        for row in [0, n - 1] {
            d[(row, n - 2)] += w[0];
            d[(row, 0)] += w[1];
            d[(row, 1)] += w[2];
        }
        // Row T-1 evaluates the derivative at the same point as row 0 but through
        // its own unknown: move the centre weight onto column T-1.
        let centre = d[(n - 1, 0)];
        d[(n - 1, 0)] = 0.0;
        d[(n - 1, n - 1)] = centre;
    } else {
        let w = lagrange3_deriv(t[0], t[1], t[2], t[0]);
        d[(0, 0)] = w[0];
        d[(0, 1)] = w[1];
        d[(0, 2)] = w[2];
        let w = lagrange3_deriv(t[n - 3], t[n - 2], t[n - 1], t[n - 1]);
        d[(n - 1, n - 3)] = w[0];
        d[(n - 1, n - 2)] = w[1];
        d[(n - 1, n - 1)] = w[2];
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn paper_grid_endpoints() {
        let g = build_uniform_grid(100, 2.0 * PI, true).unwrap();
        assert_eq!(g.points()[0], 0.0);
        assert_eq!(g.points()[99], 2.0 * PI);
        for (k, t) in g.points().iter().enumerate() {
            let exact = 2.0 * PI * k as f64 / 99.0;
            assert!((t - exact).abs() <= f64::EPSILON * exact, "k={k}");
        }
        assert!(g.is_periodic());
    }

    #[test]
    fn three_point_grid() {
        let g = build_uniform_grid(3, 2.0, false).unwrap();
        assert_eq!(g.points(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn rejects_short_grid() {
        assert!(matches!(build_uniform_grid(2, 1.0, false), Err(Error::InvalidGrid(_))));
        assert!(build_uniform_grid(5, 0.0, false).is_err());
        assert!(TimeGrid::new(vec![0.0, 1.0, 1.0], false).is_err());
    }

    #[test]
    fn constants_are_annihilated() {
        for periodic in [false, true] {
            let g = build_uniform_grid(17, 3.0, periodic).unwrap();
            let d = build_diff_matrix(&g);
            let u = nalgebra::DVector::from_element(17, 2.5);
            let du = &d * u;
            assert!(du.amax() < 1e-12, "periodic={periodic}: {}", du.amax());
        }
    }

    #[test]
    fn linear_is_exact_non_periodic() {
        let g = TimeGrid::new(vec![0.0, 0.3, 0.5, 1.1, 1.2, 2.0], false).unwrap();
        let d = build_diff_matrix(&g);
        let u = nalgebra::DVector::from_column_slice(g.points());
        let du = &d * u;
        for v in du.iter() {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-12);
        }
        // quadratics are exact too for three-point stencils
        let q = nalgebra::DVector::from_iterator(6, g.points().iter().map(|t| t * t));
        let dq = &d * q;
        for (v, t) in dq.iter().zip(g.points()) {
            assert_relative_eq!(*v, 2.0 * t, epsilon = 1e-10);
        }
    }

    #[test]
    fn periodic_sine_truncation_error() {
        let n = 100;
        let g = build_uniform_grid(n, 2.0 * PI, true).unwrap();
        let d = build_diff_matrix(&g);
        let dt = 2.0 * PI / (n as f64 - 1.0);
        let u = nalgebra::DVector::from_iterator(n, g.points().iter().map(|t| t.sin()));
        let du = &d * u;
        let err = du
            .iter()
            .zip(g.points())
            .map(|(a, t)| (a - t.cos()).abs())
            .fold(0.0, f64::max);
        // central differences: error = dt^2/6 |u'''| + O(dt^4)
        let c = err / (dt * dt);
        assert!(c <= 1.0, "C = {c}");
        assert!(c > 0.1, "C = {c}");
    }

    #[test]
    fn periodic_rows_coincide() {
        let g = build_uniform_grid(9, 1.0, true).unwrap();
        let d = build_diff_matrix(&g);
        let u = nalgebra::DVector::from_iterator(9, (0..9).map(|k| ((k % 8) as f64).sqrt()));
        let du = &d * u;
        assert_relative_eq!(du[0], du[8], epsilon = 1e-14);
    }
}
