use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamMatrix;

/// Which smoothing of the L1 norm to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothL1Form {
    /// `sum_p sqrt(m_p^2 + eps^2)`.
    #[default]
    Squared,
    /// `sum_p sqrt(m_p + eps^2)`, kept for comparison only. Undefined (NaN)
    /// for `m_p < -eps^2`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    epsilon: f64,
    thresholding: bool,
    form: SmoothL1Form,
}

impl RegularizerSpec {
    pub fn new(epsilon: f64, thresholding: bool) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            epsilon,
            thresholding,
            form: SmoothL1Form::Squared,
        })
    }

    pub fn with_form(mut self, form: SmoothL1Form) -> Self {
        self.form = form;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn thresholding(&self) -> bool {
        self.thresholding
    }

    pub fn form(&self) -> SmoothL1Form {
        self.form
    }
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            thresholding: true,
            form: SmoothL1Form::Squared,
        }
    }
}

/// Smoothed L1 penalty `g(m)`.
pub fn smooth_l1(m: &ParamMatrix, spec: &RegularizerSpec) -> f64 {
    let e2 = spec.epsilon * spec.epsilon;
    match spec.form {
        SmoothL1Form::Squared => m.values().iter().map(|v| (v * v + e2).sqrt()).sum(),
        SmoothL1Form::Literal => m.values().iter().map(|v| (v + e2).sqrt()).sum(),
    }
}

/// Gradient of [`smooth_l1`], shaped like `m`.
pub fn smooth_l1_grad(m: &ParamMatrix, spec: &RegularizerSpec) -> ParamMatrix {
    let e2 = spec.epsilon * spec.epsilon;
    let mut g = m.clone();
    match spec.form {
        SmoothL1Form::Squared => g.values_mut().apply(|v| *v /= (*v * *v + e2).sqrt()),
        SmoothL1Form::Literal => g.values_mut().apply(|v| *v = 0.5 / (*v + e2).sqrt()),
    }
    g
}

/// Zero every entry with `|m_p| < alpha / 2`; entries on the boundary survive.
pub fn hard_threshold(m: &ParamMatrix, alpha: f64) -> ParamMatrix {
    let cut = alpha / 2.0;
    let mut out = m.clone();
    out.values_mut().apply(|v| {
        if v.abs() < cut {
            *v = 0.0;
        }
    });
    out
}
