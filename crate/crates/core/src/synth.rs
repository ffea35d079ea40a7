//! Synthetic data: ground-truth dynamics, forward integration and noise.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::basis::BasisLibrary;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{DataVector, ParamMatrix, Trajectory};

pub const DEFAULT_REL_TOL: f64 = 1e-9;
pub const DEFAULT_ABS_TOL: f64 = 1e-11;

/// Initial-value problem `u' = f(u; m)`, `u(t_0) = u0`, with
/// `f_h(u) = sum_j sum_h' m[h' + U*j, h] phi_j(u_h')`.
#[derive(Debug, Clone)]
pub struct CauchySpec {
    pub basis: BasisLibrary,
    pub m_true: ParamMatrix,
    pub u0: Vec<f64>,
    pub grid: Arc<TimeGrid>,
}

impl CauchySpec {
    pub fn new(basis: BasisLibrary, m_true: ParamMatrix, u0: Vec<f64>, grid: Arc<TimeGrid>) -> Result<Self> {
        let nu = u0.len();
        if nu == 0 {
            return Err(Error::dim("initial state", ">= 1", 0));
        }
        let expected = (basis.len() * nu, nu);
        if m_true.shape() != expected {
            return Err(Error::dim(
                "cauchy parameters",
                format!("{}x{}", expected.0, expected.1),
                format!("{}x{}", m_true.shape().0, m_true.shape().1),
            ));
        }
        Ok(Self {
            basis,
            m_true,
            u0,
            grid,
        })
    }

    pub fn rhs(&self, u: &DVector<f64>) -> DVector<f64> {
        let nu = u.len();
        let m = self.m_true.values();
        let mut out = DVector::zeros(nu);
        for (j, e) in self.basis.entries().iter().enumerate() {
            for hp in 0..nu {
                let phi = e.eval(u[hp]);
                let r = hp + nu * j;
                for h in 0..nu {
                    out[h] += m[(r, h)] * phi;
                }
            }
        }
        out
    }
}

// Dormand-Prince 5(4) tableau; the system is autonomous so the nodes are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// 5th-order weights equal the last row of A; E holds b5 - b4.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn error_norm(err: &DVector<f64>, y: &DVector<f64>, y_new: &DVector<f64>, rtol: f64, atol: f64) -> f64 {
    let n = err.len() as f64;
    let s: f64 = (0..err.len())
        .map(|i| {
            let sc = atol + rtol * y[i].abs().max(y_new[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn non_finite(t: f64, last: &DVector<f64>) -> Error {
    Error::Divergence {
        context: format!("cauchy integration at t = {t}"),
        reason: "non-finite state".into(),
        last_finite: Some(Box::new(DMatrix::from_column_slice(1, last.len(), last.as_slice()))),
    }
}

/// Integrate with an adaptive Dormand-Prince 5(4) pair, landing exactly on
/// every grid point. Row `k` of the result is the state at `t_k`.
pub fn integrate_cauchy(spec: &CauchySpec, rel_tol: f64, abs_tol: f64) -> Result<Trajectory> {
    if !(rel_tol > 0.0 && abs_tol > 0.0) {
        return Err(Error::Config(format!(
            "integration tolerances must be positive, got rel={rel_tol} abs={abs_tol}"
        )));
    }
    let times = spec.grid.points();
    let nu = spec.u0.len();
    let mut out = DMatrix::zeros(times.len(), nu);
    let mut y = DVector::from_column_slice(&spec.u0);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(non_finite(times[0], &y));
    }
    out.row_mut(0).copy_from(&y.transpose());

    let span = times[times.len() - 1] - times[0];
    let mut t = times[0];
    let mut k1 = spec.rhs(&y);
    // Initial step from the scale of the derivative.
    let d0 = error_norm(&y, &y, &y, rel_tol, abs_tol);
    let d1 = error_norm(&k1, &y, &y, rel_tol, abs_tol);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(span);

    let mut k: Vec<DVector<f64>> = vec![DVector::zeros(nu); 7];
    for (idx, &target) in times.iter().enumerate().skip(1) {
        while t < target {
            let remaining = target - t;
            let last_step = h >= remaining;
            let step = if last_step { remaining } else { h };
            if step < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Stiffness { t, h: step });
            }

            k[0] = k1.clone();
            for s in 1..7 {
                let mut ys = y.clone();
                for (r, kr) in k.iter().enumerate().take(s) {
                    let a = A[s][r];
                    if a != 0.0 {
                        ys.axpy(step * a, kr, 1.0);
                    }
                }
                k[s] = spec.rhs(&ys);
            }
            let mut y_new = y.clone();
            for (r, kr) in k.iter().enumerate().take(6) {
                let b = A[6][r];
                if b != 0.0 {
                    y_new.axpy(step * b, kr, 1.0);
                }
            }
            let mut err = DVector::zeros(nu);
            for (r, kr) in k.iter().enumerate() {
                if E[r] != 0.0 {
                    err.axpy(step * E[r], kr, 1.0);
                }
            }
            if y_new.iter().any(|v| !v.is_finite()) {
                return Err(non_finite(t, &y));
            }
            let en = error_norm(&err, &y, &y_new, rel_tol, abs_tol);
            if en <= 1.0 {
                t = if last_step { target } else { t + step };
                y = y_new;
                k1 = k[6].clone();
                let factor = if en == 0.0 {
                    5.0
                } else {
                    (0.9 * en.powf(-0.2)).clamp(0.2, 5.0)
                };
                // a clipped final step says nothing about the natural step size
                if !last_step || factor < 1.0 {
                    h = step * factor;
                }
            } else {
                h = step * (0.9 * en.powf(-0.2)).clamp(0.2, 1.0);
            }
        }
        out.row_mut(idx).copy_from(&y.transpose());
    }
    Trajectory::new(spec.grid.clone(), out)
}

/// Gaussian measurement noise. `stream` selects an independent ChaCha20
/// stream under the same `seed`, so trials can share one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
    pub stream: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        Self::with_stream(sigma, seed, 0)
    }

    pub fn with_stream(sigma: f64, seed: u64, stream: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
        }
        Ok(Self { sigma, seed, stream })
    }

    /// Noise for trial `trial` of cell `(truth_index, sigma_index)` under `master_seed`.
    ///
    /// Stream id layout: bits 48.. truth index, bits 32..48 sigma index, bits 0..32 trial.
    pub fn for_trial(
        master_seed: u64,
        truth_index: usize,
        sigma_index: usize,
        trial: usize,
        sigma: f64,
    ) -> Result<Self> {
        let stream =
            ((truth_index as u64) << 48) | ((sigma_index as u64 & 0xffff) << 32) | (trial as u64 & 0xffff_ffff);
        Self::with_stream(sigma, master_seed, stream)
    }
}

/// `d = u + eta`, `eta ~ N(0, sigma^2)` i.i.d. per entry, drawn in row-major
/// order (time outer, component inner).
pub fn add_noise(u: &Trajectory, spec: &NoiseSpec) -> Result<DataVector> {
    let mut values = u.values().clone();
    if spec.sigma > 0.0 {
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        rng.set_stream(spec.stream);
        let normal = Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(e.to_string()))?;
        for k in 0..values.nrows() {
            for h in 0..values.ncols() {
                values[(k, h)] += normal.sample(&mut rng);
            }
        }
    }
    DataVector::new(u.grid().clone(), values, spec.sigma, spec.seed)
}

/// A named ground-truth coefficient vector for the single-component experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub name: String,
    pub coeffs: Vec<f64>,
}

impl GroundTruth {
    pub fn params(&self) -> ParamMatrix {
        ParamMatrix::from_column(&self.coeffs).expect("ground truths are finite and non-empty")
    }

    pub fn sparsity(&self) -> usize {
        self.coeffs.iter().filter(|c| **c != 0.0).count()
    }
}

/// The sparse truth `m1` and the denser `m2` over the six-term cosine basis.
pub fn ground_truths() -> [GroundTruth; 2] {
    [
        GroundTruth {
            name: "m1".into(),
            coeffs: vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0],
        },
        GroundTruth {
            name: "m2".into(),
            coeffs: vec![-1.5, 1.5, -1.5, 1.0, -1.0, 0.0],
        },
    ]
}

pub fn ground_truth(name: &str) -> Option<GroundTruth> {
    ground_truths().into_iter().find(|g| g.name == name)
}

/// `|u(t_0) - u(t_{T-1})|` per component, i.e. how far a trajectory is from
/// satisfying the periodicity assumption.
pub fn periodicity_mismatch(u: &Trajectory) -> Vec<f64> {
    let v = u.values();
    let last = v.nrows() - 1;
    (0..v.ncols()).map(|h| (v[(0, h)] - v[(last, h)]).abs()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::cosine_basis;
    use crate::grid::build_uniform_grid;
    use std::f64::consts::PI;

    fn paper_grid() -> Arc<TimeGrid> {
        Arc::new(build_uniform_grid(100, 2.0 * PI, true).unwrap())
    }

    fn spec(coeffs: &[f64]) -> CauchySpec {
        CauchySpec::new(
            cosine_basis(6).unwrap(),
            ParamMatrix::from_column(coeffs).unwrap(),
            vec![0.2],
            paper_grid(),
        )
        .unwrap()
    }

    #[test]
    fn zero_dynamics_is_constant() {
        let u = integrate_cauchy(&spec(&[0.0; 6]), 1e-9, 1e-11).unwrap();
        assert!(u.values().iter().all(|v| *v == 0.2));
    }

    #[test]
    fn initial_slope_of_m1() {
        let s = spec(&[1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        let slope = s.rhs(&DVector::from_vec(vec![0.2]))[0];
        assert!((slope - 0.059_006).abs() < 1e-6, "{slope}");
    }

    #[test]
    fn logistic_like_problem_matches_closed_form() {
        // u' = 1 - u^2 has u(t) = tanh(t + atanh(u0)); use a custom basis.
        let mut b = BasisLibrary::new();
        b.register("one", |_| 1.0, |_| 0.0).unwrap();
        b.register("sq", |x| x * x, |x| 2.0 * x).unwrap();
        let grid = Arc::new(build_uniform_grid(21, 3.0, false).unwrap());
        let s = CauchySpec::new(
            b,
            ParamMatrix::from_column(&[1.0, -1.0]).unwrap(),
            vec![0.1],
            grid.clone(),
        )
        .unwrap();
        let u = integrate_cauchy(&s, 1e-10, 1e-12).unwrap();
        for (k, t) in grid.points().iter().enumerate() {
            let exact = (t + 0.1f64.atanh()).tanh();
            assert!((u.values()[(k, 0)] - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn tolerance_halving_self_consistency() {
        let s = spec(&[1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        let rtol = 1e-6;
        let a = integrate_cauchy(&s, rtol, rtol * 1e-2).unwrap();
        let b = integrate_cauchy(&s, rtol / 2.0, rtol * 0.5e-2).unwrap();
        let scale = a.values().amax();
        assert!((a.values() - b.values()).amax() <= 10.0 * rtol * scale);
    }

    #[test]
    fn multi_component_rhs_indexing() {
        // U = 2, D = 1: f_h(u) = sum_h' m[h', h] cos(u_h')
        let grid = Arc::new(build_uniform_grid(5, 1.0, false).unwrap());
        let m = ParamMatrix::from_flat(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = CauchySpec::new(cosine_basis(1).unwrap(), m, vec![0.0, 0.5], grid).unwrap();
        let f = s.rhs(&DVector::from_vec(vec![0.0, 0.5]));
        let c = 0.5f64.cos();
        assert!((f[0] - (1.0 + 3.0 * c)).abs() < 1e-15);
        assert!((f[1] - (2.0 + 4.0 * c)).abs() < 1e-15);
    }

    #[test]
    fn blow_up_is_reported() {
        let mut b = BasisLibrary::new();
        b.register("sq", |x| x * x, |x| 2.0 * x).unwrap();
        let grid = Arc::new(build_uniform_grid(11, 2.0, false).unwrap());
        // u' = u^2, u0 = 1 blows up at t = 1
        let s = CauchySpec::new(b, ParamMatrix::from_column(&[1.0]).unwrap(), vec![1.0], grid).unwrap();
        let err = integrate_cauchy(&s, 1e-8, 1e-10).unwrap_err();
        assert!(
            matches!(err, Error::Stiffness { .. } | Error::Divergence { .. }),
            "{err}"
        );
    }

    #[test]
    fn noise_is_seeded_and_exact_at_zero_sigma() {
        let u = integrate_cauchy(&spec(&[1.0, -1.0, 0.0, 0.0, 0.0, 0.0]), 1e-9, 1e-11).unwrap();
        let d0 = add_noise(&u, &NoiseSpec::new(0.0, 3).unwrap()).unwrap();
        assert_eq!(d0.values(), u.values());

        let n = NoiseSpec::with_stream(0.1, 42, 7).unwrap();
        assert_eq!(add_noise(&u, &n).unwrap(), add_noise(&u, &n).unwrap());
        let other = NoiseSpec::with_stream(0.1, 42, 8).unwrap();
        assert_ne!(
            add_noise(&u, &n).unwrap().values(),
            add_noise(&u, &other).unwrap().values()
        );
        assert!(NoiseSpec::new(-0.1, 1).is_err());
    }

    #[test]
    fn noise_sample_variance() {
        let grid = Arc::new(build_uniform_grid(10_000, 1.0, false).unwrap());
        let u = Trajectory::new(grid, DMatrix::zeros(10_000, 1)).unwrap();
        let d = add_noise(&u, &NoiseSpec::new(0.1, 2024).unwrap()).unwrap();
        let n = d.values().len() as f64;
        let mean = d.values().sum() / n;
        let var = d.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.01).abs() <= 0.05 * 0.01, "{var}");
    }

    #[test]
    fn ground_truth_values() {
        let [m1, m2] = ground_truths();
        assert_eq!(m1.coeffs, vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(m2.coeffs, vec![-1.5, 1.5, -1.5, 1.0, -1.0, 0.0]);
        assert_eq!(m1.sparsity(), 2);
        assert_eq!(m2.sparsity(), 5);
        assert_eq!(ground_truth("m2").unwrap(), m2);
        assert!(ground_truth("m3").is_none());
    }
}
