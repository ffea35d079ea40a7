#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regpath_core::grid::{build_diff_matrix_with, DiffScheme};
use regpath_core::model::{CollocationModel, ImplicitModel, ParamMatrix};
use regpath_core::optimizer::{data_loss, data_loss_grad, lagrangian_grad_m, smooth_l1, RegularizerSpec};
use regpath_core::solvers::{newton_solve, NewtonConfig};
use regpath_core::{build_uniform_grid, cosine_basis};

/// Small collocation problem (T=20, U=1, D=3) with tight solver tolerances,
/// used to check the adjoint gradient against finite differences.
/// Forward and adjoint systems are solved to 1e-12.
pub struct GradientOracle {
    pub model: CollocationModel,
    pub d: DMatrix<f64>,
    pub m_true: ParamMatrix,
    pub u_ref: DMatrix<f64>,
    pub alpha: f64,
    pub spec: RegularizerSpec,
    pub newton: NewtonConfig,
}

impl GradientOracle {
    pub fn new() -> Self {
        let grid = Arc::new(build_uniform_grid(20, 2.0 * PI, false).unwrap());
        let diff = build_diff_matrix_with(&grid, DiffScheme::Backward);
        let model = CollocationModel::new(cosine_basis(3).unwrap(), grid, 1)
            .unwrap()
            .with_diff_matrix(diff)
            .unwrap()
            .with_initial_anchor(vec![0.2])
            .unwrap();
        let m_true = ParamMatrix::from_column(&[1.0, -1.0, 0.0]).unwrap();
        let newton = NewtonConfig::new(100, 1e-12, 1.0).unwrap();
        let (u_ref, rep) = newton_solve(&model, &m_true, &DMatrix::from_element(20, 1, 0.2), &newton).unwrap();
        assert!(rep.converged, "reference forward solve did not converge: {rep:?}");
        let d = DMatrix::from_fn(20, 1, |k, _| u_ref[(k, 0)] + 0.05 * (1.7 * k as f64).sin());
        Self {
            model,
            d,
            m_true,
            u_ref,
            alpha: 1e-2,
            spec: RegularizerSpec::new(1e-4, false).unwrap(),
            newton,
        }
    }

    pub fn forward(&self, m: &ParamMatrix) -> DMatrix<f64> {
        let (u, rep) = newton_solve(&self.model, m, &self.u_ref, &self.newton).unwrap();
        assert!(rep.converged, "forward solve did not converge");
        u
    }

    /// `m -> h_d(u_m) + alpha g(m)`.
    pub fn reduced_objective(&self, m: &ParamMatrix) -> f64 {
        data_loss(&self.forward(m), &self.d).unwrap() + self.alpha * smooth_l1(m, &self.spec)
    }

    pub fn adjoint_gradient(&self, m: &ParamMatrix) -> Vec<f64> {
        let u = self.forward(m);
        let rhs = data_loss_grad(&u, &self.d).unwrap();
        // Direct solve: near folds cond(J) reaches ~1e3 and Landweber would
        // need ~1e8 iterations for a 1e-12 residual.
        let jt = self.model.jac_u(&u, m).unwrap().transpose();
        let b = DVector::from_column_slice(rhs.as_slice());
        let lam = jt.clone().lu().solve(&b).expect("singular adjoint system");
        assert!((&jt * &lam - &b).norm() <= 1e-12 * b.norm().max(1.0));
        let lam = DMatrix::from_column_slice(20, 1, lam.as_slice());
        lagrangian_grad_m(&self.model, &u, m, &lam, self.alpha, &self.spec)
            .unwrap()
            .flatten()
    }

    pub fn fd_gradient(&self, m: &ParamMatrix, h: f64) -> Vec<f64> {
        let p = m.flatten();
        (0..p.len())
            .map(|i| {
                let (mut a, mut b) = (p.clone(), p.clone());
                a[i] += h;
                b[i] -= h;
                let fa = self.reduced_objective(&ParamMatrix::from_column(&a).unwrap());
                let fb = self.reduced_objective(&ParamMatrix::from_column(&b).unwrap());
                (fa - fb) / (2.0 * h)
            })
            .collect()
    }

    /// `n` points within 0.1 of the truth in every coordinate.
    pub fn sample_points(&self, n: usize, seed: u64) -> Vec<ParamMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let p: Vec<f64> = self
                    .m_true
                    .flatten()
                    .iter()
                    .map(|v| v + rng.random_range(-0.1..0.1))
                    .collect();
                ParamMatrix::from_column(&p).unwrap()
            })
            .collect()
    }
}

pub fn relative_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}
