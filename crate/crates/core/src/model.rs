//! State, data and parameter containers plus the implicit-model contract.
//!
//! Matrices of shape `T x U` hold one column per state component. When such a
//! matrix is flattened (for Jacobians), component `h` at time `k` sits at
//! index `h * T + k`, so the state Jacobian is block-structured by component.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisLibrary;
use crate::error::{Error, Result};
use crate::grid::{build_diff_matrix, TimeGrid};

fn check_finite(values: &DMatrix<f64>, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            context: what.to_string(),
            reason: "non-finite entries".into(),
            last_finite: None,
        })
    }
}

/// Discretized state `u[k, h] = u_h(t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Arc<TimeGrid>,
    values: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(grid: Arc<TimeGrid>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != grid.len() {
            return Err(Error::dim("trajectory rows", grid.len(), values.nrows()));
        }
        if values.ncols() == 0 {
            return Err(Error::dim("trajectory columns", ">= 1", 0));
        }
        check_finite(&values, "trajectory")?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn n_times(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.values.ncols()
    }
}

/// Noisy observations `d = u + eta` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DataVector {
    grid: Arc<TimeGrid>,
    values: DMatrix<f64>,
    noise_sigma: f64,
    seed: u64,
}

impl DataVector {
    pub fn new(grid: Arc<TimeGrid>, values: DMatrix<f64>, noise_sigma: f64, seed: u64) -> Result<Self> {
        if values.nrows() != grid.len() {
            return Err(Error::dim("data rows", grid.len(), values.nrows()));
        }
        if values.ncols() == 0 {
            return Err(Error::dim("data columns", ">= 1", 0));
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {noise_sigma}")));
        }
        check_finite(&values, "data")?;
        Ok(Self {
            grid,
            values,
            noise_sigma,
            seed,
        })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn as_trajectory(&self) -> Trajectory {
        Trajectory {
            grid: self.grid.clone(),
            values: self.values.clone(),
        }
    }
}

/// Coefficient matrix `m[h' + U*j, h]`, of shape `(D*U) x U` for the
/// collocation model.
///
/// The flat layout is row-major: entry `(r, c)` is flat index `r * ncols + c`.
/// For a single state component the flat vector is simply `(m_0, ..., m_{D-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatrix {
    values: DMatrix<f64>,
}

impl ParamMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::dim("parameter matrix", "M > 0", 0));
        }
        check_finite(&values, "parameters")?;
        Ok(Self { values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            values: DMatrix::zeros(rows, cols),
        }
    }

    /// Single-component parameters from a flat coefficient list.
    pub fn from_column(coeffs: &[f64]) -> Result<Self> {
        Self::from_flat(coeffs.len(), 1, coeffs)
    }

    pub fn from_flat(rows: usize, cols: usize, flat: &[f64]) -> Result<Self> {
        if rows * cols != flat.len() {
            return Err(Error::dim("flat parameters", rows * cols, flat.len()));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, flat))
    }

    pub fn flatten(&self) -> Vec<f64> {
        let (r, c) = self.values.shape();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(self.values[(i, j)]);
            }
        }
        out
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// Flat length `M`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }
}

/// Lagrange multipliers paired with the residual of an implicit model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointField {
    values: DMatrix<f64>,
}

impl AdjointField {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        check_finite(&values, "adjoint field")?;
        Ok(Self { values })
    }

    pub fn zeros(t: usize, u: usize) -> Self {
        Self {
            values: DMatrix::zeros(t, u),
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub times: usize,
    pub components: usize,
    pub param_rows: usize,
    pub param_cols: usize,
}

impl ModelDims {
    pub fn state_len(&self) -> usize {
        self.times * self.components
    }

    pub fn param_len(&self) -> usize {
        self.param_rows * self.param_cols
    }
}

/// Discretized implicit constraint `F(u, m) = 0` with its two Jacobians.
///
/// `jac_u` is materialized densely over the flattened state; `jac_m` is only
/// needed through its forward and transposed actions.
pub trait ImplicitModel: Send + Sync {
    fn dims(&self) -> ModelDims;

    fn residual(&self, u: &DMatrix<f64>, m: &ParamMatrix) -> Result<DMatrix<f64>>;

    /// Dense `(T*U) x (T*U)` Jacobian with respect to the flattened state.
    fn jac_u(&self, u: &DMatrix<f64>, m: &ParamMatrix) -> Result<DMatrix<f64>>;

    /// `dF/dm . dm`, shaped like the residual.
    fn jac_m_apply(&self, u: &DMatrix<f64>, m: &ParamMatrix, dm: &ParamMatrix) -> Result<DMatrix<f64>>;

    /// `<lambda, dF/dm>`, shaped like the parameters.
    fn jac_m_transpose_apply(&self, u: &DMatrix<f64>, m: &ParamMatrix, lambda: &DMatrix<f64>) -> Result<ParamMatrix>;

    fn check_state(&self, u: &DMatrix<f64>) -> Result<()> {
        let d = self.dims();
        if u.shape() != (d.times, d.components) {
            return Err(Error::dim(
                "state shape",
                format!("{}x{}", d.times, d.components),
                format!("{}x{}", u.nrows(), u.ncols()),
            ));
        }
        Ok(())
    }

    fn check_params(&self, m: &ParamMatrix) -> Result<()> {
        let d = self.dims();
        if m.shape() != (d.param_rows, d.param_cols) {
            return Err(Error::dim(
                "parameter shape",
                format!("{}x{}", d.param_rows, d.param_cols),
                format!("{}x{}", m.shape().0, m.shape().1),
            ));
        }
        Ok(())
    }
}

/// Flatten a `T x U` matrix component-major (`h * T + k`).
pub fn flatten_state(u: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra storage is column-major, which is exactly this layout.
    DVector::from_column_slice(u.as_slice())
}

pub fn unflatten_state(v: &DVector<f64>, times: usize, components: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(times, components, v.as_slice())
}

/// Collocation residual `F(u, m) = D u - Phi(u) m`.
///
/// `D` is the differentiation matrix of the grid applied to each component and
/// `Phi(u)` the `T x (D*U)` design matrix whose column `h' + U*j` holds
/// `phi_j(u_{h'})` at every sample.
#[derive(Debug, Clone)]
pub struct CollocationModel {
    basis: BasisLibrary,
    grid: Arc<TimeGrid>,
    diff: DMatrix<f64>,
    components: usize,
    anchor: Option<InitialAnchor>,
}

/// Known initial state imposed in place of the first collocation row:
/// `F[0, h] = weight * (u[0, h] - u0[h])`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialAnchor {
    pub u0: Vec<f64>,
    pub weight: f64,
}

impl CollocationModel {
    pub fn new(basis: BasisLibrary, grid: Arc<TimeGrid>, components: usize) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::Config("empty basis library".into()));
        }
        if components == 0 {
            return Err(Error::Config("state must have at least one component".into()));
        }
        let diff = build_diff_matrix(&grid);
        Ok(Self {
            basis,
            grid,
            diff,
            components,
            anchor: None,
        })
    }

    /// Impose `u(t_0) = u0`, replacing the collocation equation at `t_0`.
    /// The row is scaled by `1 / (t_1 - t_0)` to match the derivative rows.
    pub fn with_initial_anchor(mut self, u0: Vec<f64>) -> Result<Self> {
        if u0.len() != self.components {
            return Err(Error::dim("initial anchor", self.components, u0.len()));
        }
        if u0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("initial anchor must be finite".into()));
        }
        let p = self.grid.points();
        self.anchor = Some(InitialAnchor {
            u0,
            weight: 1.0 / (p[1] - p[0]),
        });
        Ok(self)
    }

    pub fn anchor(&self) -> Option<&InitialAnchor> {
        self.anchor.as_ref()
    }

    /// Replace the differentiation matrix, e.g. to compare schemes.
    pub fn with_diff_matrix(mut self, diff: DMatrix<f64>) -> Result<Self> {
        let t = self.grid.len();
        if diff.shape() != (t, t) {
            return Err(Error::dim(
                "diff matrix",
                format!("{t}x{t}"),
                format!("{:?}", diff.shape()),
            ));
        }
        self.diff = diff;
        Ok(self)
    }

    pub fn basis(&self) -> &BasisLibrary {
        &self.basis
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn diff(&self) -> &DMatrix<f64> {
        &self.diff
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn zero_params(&self) -> ParamMatrix {
        ParamMatrix::zeros(self.basis.len() * self.components, self.components)
    }

    /// Design matrix `Phi(u)`, `T x (D*U)`.
    pub fn basis_matrix(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_state(u)?;
        let (t, nu) = (self.grid.len(), self.components);
        let mut phi = DMatrix::zeros(t, self.basis.len() * nu);
        for (j, e) in self.basis.entries().iter().enumerate() {
            for h in 0..nu {
                let col = h + nu * j;
                for k in 0..t {
                    phi[(k, col)] = e.eval(u[(k, h)]);
                }
            }
        }
        Ok(phi)
    }

    fn basis_deriv_matrix(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let (t, nu) = (self.grid.len(), self.components);
        let mut dphi = DMatrix::zeros(t, self.basis.len() * nu);
        for (j, e) in self.basis.entries().iter().enumerate() {
            for h in 0..nu {
                let col = h + nu * j;
                for k in 0..t {
                    dphi[(k, col)] = e.deriv(u[(k, h)]);
                }
            }
        }
        dphi
    }

    /// Right-hand side `f(u, m) = Phi(u) m`, one row per sample.
    pub fn dynamics(&self, u: &DMatrix<f64>, m: &ParamMatrix) -> Result<DMatrix<f64>> {
        self.check_params(m)?;
        Ok(self.basis_matrix(u)? * m.values())
    }
}

impl ImplicitModel for CollocationModel {
    fn dims(&self) -> ModelDims {
        ModelDims {
            times: self.grid.len(),
            components: self.components,
            param_rows: self.basis.len() * self.components,
            param_cols: self.components,
        }
    }

    fn residual(&self, u: &DMatrix<f64>, m: &ParamMatrix) -> Result<DMatrix<f64>> {
        let f = self.dynamics(u, m)?;
        let mut r = &self.diff * u - f;
        if let Some(a) = &self.anchor {
            for h in 0..self.components {
                r[(0, h)] = a.weight * (u[(0, h)] - a.u0[h]);
            }
        }
        Ok(r)
    }

    fn jac_u(&self, u: &DMatrix<f64>, m: &ParamMatrix) -> Result<DMatrix<f64>> {
        self.check_state(u)?;
        self.check_params(m)?;
        let (t, nu) = (self.grid.len(), self.components);
        let dphi = self.basis_deriv_matrix(u);
        let mut jac = DMatrix::zeros(t * nu, t * nu);
        for h in 0..nu {
            jac.view_mut((h * t, h * t), (t, t)).copy_from(&self.diff);
        }
        // dF[k,h]/du[k,h'] = -sum_j m[h'+U*j, h] * phi_j'(u[k,h'])
        let mv = m.values();
        for h in 0..nu {
            for hp in 0..nu {
                for k in 0..t {
                    let mut s = 0.0;
                    for j in 0..self.basis.len() {
                        let r = hp + nu * j;
                        s += mv[(r, h)] * dphi[(k, r)];
                    }
                    jac[(h * t + k, hp * t + k)] -= s;
                }
            }
        }
        if let Some(a) = &self.anchor {
            for h in 0..nu {
                let row = h * t;
                jac.row_mut(row).fill(0.0);
                jac[(row, row)] = a.weight;
            }
        }
        Ok(jac)
    }

    fn jac_m_apply(&self, u: &DMatrix<f64>, m: &ParamMatrix, dm: &ParamMatrix) -> Result<DMatrix<f64>> {
        self.check_params(m)?;
        self.check_params(dm)?;
        let mut out = -(self.basis_matrix(u)? * dm.values());
        if self.anchor.is_some() {
            out.row_mut(0).fill(0.0);
        }
        Ok(out)
    }

    fn jac_m_transpose_apply(&self, u: &DMatrix<f64>, m: &ParamMatrix, lambda: &DMatrix<f64>) -> Result<ParamMatrix> {
        self.check_params(m)?;
        self.check_state(lambda)?;
        let mut phi = self.basis_matrix(u)?;
        if self.anchor.is_some() {
            phi.row_mut(0).fill(0.0);
        }
        Ok(ParamMatrix {
            values: -(phi.transpose() * lambda),
        })
    }
}

impl CollocationModel {
    /// `jac_u` at `m = 0` for one component: the differentiation matrix with
    /// the anchor row substituted when an anchor is set.
    pub fn linear_part(&self) -> DMatrix<f64> {
        let mut a = self.diff.clone();
        if let Some(anchor) = &self.anchor {
            a.row_mut(0).fill(0.0);
            a[(0, 0)] = anchor.weight;
        }
        a
    }

    /// Integral form `A^-1 F(u, m)` with `A` = [`Self::linear_part`]. Needs an
    /// invertible `A`, i.e. an initial anchor on a non-periodic grid.
    pub fn into_integral_form(self) -> Result<LeftPreconditioned<Self>> {
        let a = self.linear_part();
        let sv = a.singular_values();
        let singular = || {
            Error::Config("integral form needs an invertible differentiation operator (set an initial anchor)".into())
        };
        if !(sv.min() > 1e-10 * sv.max()) {
            return Err(singular());
        }
        let p = a.lu().try_inverse().ok_or_else(singular)?;
        LeftPreconditioned::new(self, p)
    }
}

/// `P F(u, m)` for a fixed invertible `T x T` matrix `P` applied to every
/// component. The zero set in `u` is that of `F`, so forward solutions and the
/// reduced objective are unchanged; the linear systems seen by the inner
/// solvers are `P`-scaled.
#[derive(Debug, Clone)]
pub struct LeftPreconditioned<M> {
    inner: M,
    p: DMatrix<f64>,
}

impl<M: ImplicitModel> LeftPreconditioned<M> {
    pub fn new(inner: M, p: DMatrix<f64>) -> Result<Self> {
        let t = inner.dims().times;
        if p.shape() != (t, t) {
            return Err(Error::dim(
                "preconditioner",
                format!("{t}x{t}"),
                format!("{:?}", p.shape()),
            ));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("preconditioner must be finite".into()));
        }
        Ok(Self { inner, p })
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }
}

impl<M: ImplicitModel> ImplicitModel for LeftPreconditioned<M> {
    fn dims(&self) -> ModelDims {
        self.inner.dims()
    }

    fn residual(&self, u: &DMatrix<f64>, m: &ParamMatrix) -> Result<DMatrix<f64>> {
        Ok(&self.p * self.inner.residual(u, m)?)
    }

    fn jac_u(&self, u: &DMatrix<f64>, m: &ParamMatrix) -> Result<DMatrix<f64>> {
        let j = self.inner.jac_u(u, m)?;
        let t = self.p.nrows();
        let mut out = DMatrix::zeros(j.nrows(), j.ncols());
        for h in 0..j.nrows() / t {
            let block = &self.p * j.rows(h * t, t);
            out.rows_mut(h * t, t).copy_from(&block);
        }
        Ok(out)
    }

    fn jac_m_apply(&self, u: &DMatrix<f64>, m: &ParamMatrix, dm: &ParamMatrix) -> Result<DMatrix<f64>> {
        Ok(&self.p * self.inner.jac_m_apply(u, m, dm)?)
    }

    fn jac_m_transpose_apply(&self, u: &DMatrix<f64>, m: &ParamMatrix, lambda: &DMatrix<f64>) -> Result<ParamMatrix> {
        self.check_state(lambda)?;
        self.inner.jac_m_transpose_apply(u, m, &(self.p.transpose() * lambda))
    }
}

/// Dense form of `jac_m` over the flattened state and parameters, used by
/// tests and diagnostics.
pub fn dense_jac_m(model: &dyn ImplicitModel, u: &DMatrix<f64>, m: &ParamMatrix) -> Result<DMatrix<f64>> {
    let d = model.dims();
    let mut out = DMatrix::zeros(d.state_len(), d.param_len());
    let mut e = vec![0.0; d.param_len()];
    for p in 0..d.param_len() {
        e[p] = 1.0;
        let dm = ParamMatrix::from_flat(d.param_rows, d.param_cols, &e)?;
        let col = model.jac_m_apply(u, m, &dm)?;
        out.set_column(p, &flatten_state(&col));
        e[p] = 0.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::cosine_basis;
    use crate::grid::build_uniform_grid;
    use std::f64::consts::PI;

    fn model(t: usize, d: usize, u: usize, periodic: bool) -> CollocationModel {
        let grid = Arc::new(build_uniform_grid(t, 2.0 * PI, periodic).unwrap());
        CollocationModel::new(cosine_basis(d).unwrap(), grid, u).unwrap()
    }

    #[test]
    fn basis_matrix_constant_states() {
        let m = model(10, 6, 1, false);
        let phi = m.basis_matrix(&DMatrix::zeros(10, 1)).unwrap();
        assert_eq!(phi.shape(), (10, 6));
        assert!(phi.iter().all(|v| *v == 1.0));

        let m2 = model(10, 2, 1, false);
        let phi = m2.basis_matrix(&DMatrix::from_element(10, 1, PI / 2.0)).unwrap();
        for k in 0..10 {
            assert!(phi[(k, 0)].abs() < 1e-15);
            assert!((phi[(k, 1)] + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn basis_matrix_column_layout_multi_component() {
        let m = model(5, 3, 2, false);
        let u = DMatrix::from_fn(5, 2, |k, h| 0.1 * k as f64 - 0.3 * h as f64);
        let phi = m.basis_matrix(&u).unwrap();
        for j in 0..3 {
            for h in 0..2 {
                for k in 0..5 {
                    assert_eq!(phi[(k, h + 2 * j)], ((j + 1) as f64 * u[(k, h)]).cos());
                }
            }
        }
        assert!(m.basis_matrix(&DMatrix::zeros(5, 1)).is_err());
    }

    #[test]
    fn residual_examples() {
        let m = model(12, 6, 1, true);
        let zero = m.zero_params();
        let r = m.residual(&DMatrix::from_element(12, 1, 0.7), &zero).unwrap();
        assert!(r.amax() < 1e-13);

        let p = ParamMatrix::from_column(&[1.0, -1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let r = m.residual(&DMatrix::zeros(12, 1), &p).unwrap();
        assert!(r.amax() == 0.0);

        let p = ParamMatrix::from_column(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let r = m.residual(&DMatrix::zeros(12, 1), &p).unwrap();
        assert!(r.iter().all(|v| *v == -1.0));

        let bad = ParamMatrix::from_column(&[1.0, 0.0]).unwrap();
        assert!(m.residual(&DMatrix::zeros(12, 1), &bad).is_err());
    }

    #[test]
    fn jacobians_at_simple_points() {
        let m = model(8, 6, 1, false);
        let ju = m.jac_u(&DMatrix::from_element(8, 1, 0.4), &m.zero_params()).unwrap();
        assert_eq!(&ju, m.diff());

        let jm = dense_jac_m(&m, &DMatrix::zeros(8, 1), &m.zero_params()).unwrap();
        assert_eq!(jm.shape(), (8, 6));
        assert!(jm.iter().all(|v| *v == -1.0));
    }

    #[test]
    fn param_flatten_round_trip() {
        let flat: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
        let p = ParamMatrix::from_flat(6, 2, &flat).unwrap();
        assert_eq!(p.flatten(), flat);
        assert_eq!(p.values()[(1, 0)], flat[2]);
        assert!(ParamMatrix::from_flat(5, 2, &flat).is_err());
    }

    #[test]
    fn trajectory_shape_checks() {
        let grid = Arc::new(build_uniform_grid(4, 1.0, false).unwrap());
        assert!(Trajectory::new(grid.clone(), DMatrix::zeros(3, 1)).is_err());
        assert!(Trajectory::new(grid.clone(), DMatrix::from_element(4, 1, f64::NAN)).is_err());
        assert!(Trajectory::new(grid, DMatrix::zeros(4, 2)).is_ok());
    }
}
