//! Candidate basis functions for the dynamics library.
//!
//! Each entry is a scalar map applied elementwise to the state, paired with
//! its hand-written derivative. User-supplied entries are checked against
//! central finite differences before they are accepted.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Step used by the registration-time derivative check.
pub const FD_CHECK_STEP: f64 = 1e-6;
/// Accepted error of the registration-time derivative check, relative to
/// `max(|f'(x)|, 1)`.
pub const FD_CHECK_TOL: f64 = 1e-6;

#[derive(Clone)]
pub struct BasisEntry {
    name: String,
    value: ScalarFn,
    deriv: ScalarFn,
}

impl BasisEntry {
    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        (self.deriv)(x)
    }
}

impl fmt::Debug for BasisEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BasisEntry").field("name", &self.name).finish()
    }
}

/// Ordered library `phi_0, ..., phi_{D-1}`.
#[derive(Clone, Debug, Default)]
pub struct BasisLibrary {
    entries: Vec<BasisEntry>,
}

impl BasisLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// `cos((j+1) u)` for `j = 0..d`.
    pub fn cosine(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("basis size must be at least 1".into()));
        }
        let entries = (1..=d)
            .map(|k| {
                let w = k as f64;
                BasisEntry {
                    name: format!("cos({k}u)"),
                    value: Arc::new(move |x: f64| (w * x).cos()),
                    deriv: Arc::new(move |x: f64| -w * (w * x).sin()),
                }
            })
            .collect();
        Ok(Self { entries })
    }

    /// Add a user-defined entry. The derivative is checked at a fixed set of
    /// pseudo-random points in `[-3, 3]`; a mismatch rejects the entry.
    pub fn register<F, G>(&mut self, name: impl Into<String>, value: F, deriv: G) -> Result<()>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let entry = BasisEntry {
            name: name.into(),
            value: Arc::new(value),
            deriv: Arc::new(deriv),
        };
        let rel_err = derivative_check(&entry);
        if !(rel_err <= FD_CHECK_TOL) {
            return Err(Error::BasisCheck {
                index: self.entries.len(),
                name: entry.name,
                rel_err,
            });
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BasisEntry] {
        &self.entries
    }

    pub fn entry(&self, j: usize) -> &BasisEntry {
        &self.entries[j]
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }
}

pub fn cosine_basis(d: usize) -> Result<BasisLibrary> {
    BasisLibrary::cosine(d)
}

/// Worst scaled central-difference mismatch of an entry's derivative.
/// Returns NaN when the entry produces non-finite values.
pub fn derivative_check(entry: &BasisEntry) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0062_6173_6973);
    let h = FD_CHECK_STEP;
    let mut worst: f64 = 0.0;
    for _ in 0..32 {
        let x: f64 = rng.random_range(-3.0..3.0);
        let fd = (entry.eval(x + h) - entry.eval(x - h)) / (2.0 * h);
        let exact = entry.deriv(x);
        let e = (fd - exact).abs() / exact.abs().max(1.0);
        if !e.is_finite() {
            return f64::NAN;
        }
        worst = worst.max(e);
    }
    worst
}
