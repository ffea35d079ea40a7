//! Declarative run configuration.
//!
//! A [`RunConfig`] is a TOML document with one table per component. Two
//! built-in profiles exist: `paper`, whose experimental constants are pinned,
//! and `ci`, a reduced-size variant for quick runs.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{cosine_basis, BasisLibrary};
use crate::error::{Error, Result};
use crate::grid::{build_diff_matrix_with, build_uniform_grid, DiffScheme, TimeGrid};
use crate::model::{CollocationModel, ImplicitModel};
use crate::optimizer::{make_log_schedule, AdjointStart, HomotopySchedule, InnerConfig, RegularizerSpec, SmoothL1Form};
use crate::solvers::{LandweberConfig, LandweberStep, NewtonConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Ci,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Ci => "ci",
        })
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "ci" => Ok(Profile::Ci),
            other => Err(Error::Config(format!(
                "unknown profile '{other}' (expected paper or ci)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub times: usize,
    pub t_end: f64,
    pub periodic: bool,
    pub scheme: DiffScheme,
    /// Replace the first collocation row by the known initial condition.
    pub anchor_initial: bool,
    #[serde(default)]
    pub form: ConstraintForm,
}

/// Residual handed to the solvers: the collocation residual itself, or the
/// same residual left-multiplied by the inverse of its linear part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintForm {
    Differential,
    #[default]
    Integral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub alpha_hi: f64,
    pub alpha_lo: f64,
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerSection {
    pub tau: f64,
    pub n_max: usize,
    pub n_es: usize,
    pub adjoint_start: AdjointStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonSection {
    pub max_iter: usize,
    pub residual_tol: f64,
    pub damping: f64,
    pub max_halvings: usize,
}

/// `"auto"` or a positive number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSetting {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandweberSection {
    pub max_iter: usize,
    pub step: StepSetting,
    pub residual_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSection {
    pub epsilon: f64,
    pub thresholding: bool,
    pub form: SmoothL1Form,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub sigmas: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub rel_tol: f64,
    pub abs_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    pub u0: Vec<f64>,
    /// Ground-truth names, see [`crate::synth::ground_truths`].
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub grid: GridSection,
    pub basis: BasisSection,
    pub schedule: ScheduleSection,
    pub inner: InnerSection,
    pub newton: NewtonSection,
    pub landweber: LandweberSection,
    pub regularizer: RegularizerSection,
    pub noise: NoiseSection,
    pub integrator: IntegratorSection,
    pub truth: TruthSection,
}

pub const DEFAULT_MASTER_SEED: u64 = 20_240_601;

impl RunConfig {
    pub fn paper() -> Self {
        Self {
            profile: Profile::Paper,
            grid: GridSection {
                times: 100,
                t_end: 2.0 * std::f64::consts::PI,
                periodic: false,
                scheme: DiffScheme::Backward,
                anchor_initial: true,
                form: ConstraintForm::Integral,
            },
            basis: BasisSection { size: 6 },
            schedule: ScheduleSection {
                alpha_hi: 1.0,
                alpha_lo: 1e-6,
                levels: 100,
            },
            inner: InnerSection {
                tau: 1e-3,
                n_max: 1000,
                n_es: 5,
                adjoint_start: AdjointStart::Warm,
            },
            newton: NewtonSection {
                max_iter: 50,
                residual_tol: 1e-8,
                damping: 1.0,
                max_halvings: 5,
            },
            landweber: LandweberSection {
                max_iter: 100,
                step: StepSetting::Named("auto".into()),
                residual_tol: 1e-8,
            },
            regularizer: RegularizerSection {
                epsilon: 1e-4,
                thresholding: true,
                form: SmoothL1Form::Squared,
            },
            noise: NoiseSection {
                sigmas: vec![0.01, 0.1, 0.2],
                trials: 20,
                master_seed: DEFAULT_MASTER_SEED,
            },
            integrator: IntegratorSection {
                rel_tol: crate::synth::DEFAULT_REL_TOL,
                abs_tol: crate::synth::DEFAULT_ABS_TOL,
            },
            truth: TruthSection {
                u0: vec![0.2],
                names: vec!["m1".into(), "m2".into()],
            },
        }
    }

    /// Five trials, 30 levels, 200 inner iterations.
    pub fn ci() -> Self {
        let mut cfg = Self::paper();
        cfg.profile = Profile::Ci;
        cfg.noise.trials = 5;
        cfg.schedule.levels = 30;
        cfg.inner.n_max = 200;
        cfg
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Ci => Self::ci(),
        }
    }

    /// Parse and validate. Pinned values of the paper profile are enforced
    /// unless `unsafe_override` is set.
    pub fn from_toml_str(text: &str, unsafe_override: bool) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate(unsafe_override)?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config tables always serialize")
    }

    /// SHA-256 of the canonical TOML serialization, lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Names of pinned paper-profile values this config changes.
    pub fn pinned_violations(&self) -> Vec<String> {
        let p = Self::paper();
        let mut out = Vec::new();
        let mut check = |name: &str, same: bool| {
            if !same {
                out.push(name.to_string());
            }
        };
        check("grid.times", self.grid.times == p.grid.times);
        check("grid.t_end", self.grid.t_end == p.grid.t_end);
        check("basis.size", self.basis.size == p.basis.size);
        check("schedule.levels", self.schedule.levels == p.schedule.levels);
        check("schedule.alpha_hi", self.schedule.alpha_hi == p.schedule.alpha_hi);
        check("schedule.alpha_lo", self.schedule.alpha_lo == p.schedule.alpha_lo);
        check("inner.tau", self.inner.tau == p.inner.tau);
        check("inner.n_max", self.inner.n_max == p.inner.n_max);
        check("inner.n_es", self.inner.n_es == p.inner.n_es);
        check("newton.max_iter", self.newton.max_iter == p.newton.max_iter);
        check("landweber.max_iter", self.landweber.max_iter == p.landweber.max_iter);
        check("truth.u0", self.truth.u0 == p.truth.u0);
        out
    }

    pub fn validate(&self, unsafe_override: bool) -> Result<()> {
        if self.profile == Profile::Paper && !unsafe_override {
            let v = self.pinned_violations();
            if !v.is_empty() {
                return Err(Error::Config(format!(
                    "paper profile pins {}; pass --unsafe-override to change them",
                    v.join(", ")
                )));
            }
        }
        self.build_grid()?;
        self.build_basis()?;
        self.build_solver_model()?;
        self.build_schedule()?;
        self.build_inner()?;
        self.build_regularizer()?;
        if self.noise.sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("noise.sigmas must be finite and nonnegative".into()));
        }
        if self.noise.trials == 0 {
            return Err(Error::Config("noise.trials must be >= 1".into()));
        }
        if !(self.integrator.rel_tol > 0.0) || !(self.integrator.abs_tol > 0.0) {
            return Err(Error::Config("integrator tolerances must be positive".into()));
        }
        if self.truth.u0.is_empty() {
            return Err(Error::Config("truth.u0 must not be empty".into()));
        }
        for name in &self.truth.names {
            let gt = crate::synth::ground_truth(name)
                .ok_or_else(|| Error::Config(format!("unknown ground truth '{name}'")))?;
            if gt.coeffs.len() != self.basis.size * self.truth.u0.len() * self.truth.u0.len() {
                return Err(Error::Config(format!(
                    "ground truth '{name}' has {} coefficients, basis and state need {}",
                    gt.coeffs.len(),
                    self.basis.size * self.truth.u0.len() * self.truth.u0.len()
                )));
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Arc<TimeGrid>> {
        Ok(Arc::new(build_uniform_grid(
            self.grid.times,
            self.grid.t_end,
            self.grid.periodic,
        )?))
    }

    pub fn build_basis(&self) -> Result<BasisLibrary> {
        cosine_basis(self.basis.size)
    }

    /// Collocation model with the configured difference scheme and anchor.
    pub fn build_model(&self) -> Result<CollocationModel> {
        let grid = self.build_grid()?;
        let diff = build_diff_matrix_with(&grid, self.grid.scheme);
        let model = CollocationModel::new(self.build_basis()?, grid, self.truth.u0.len())?.with_diff_matrix(diff)?;
        if self.grid.anchor_initial {
            model.with_initial_anchor(self.truth.u0.clone())
        } else {
            Ok(model)
        }
    }

    /// Model the optimizer runs on, in the configured constraint form.
    pub fn build_solver_model(&self) -> Result<Box<dyn ImplicitModel>> {
        let model = self.build_model()?;
        Ok(match self.grid.form {
            ConstraintForm::Differential => Box::new(model),
            ConstraintForm::Integral => Box::new(model.into_integral_form()?),
        })
    }

    pub fn build_schedule(&self) -> Result<HomotopySchedule> {
        make_log_schedule(self.schedule.alpha_hi, self.schedule.alpha_lo, self.schedule.levels)
    }

    pub fn build_inner(&self) -> Result<InnerConfig> {
        let newton = NewtonConfig::new(self.newton.max_iter, self.newton.residual_tol, self.newton.damping)?
            .with_max_halvings(self.newton.max_halvings);
        let step = match &self.landweber.step {
            StepSetting::Fixed(v) => LandweberStep::Fixed(*v),
            StepSetting::Named(s) if s == "auto" => LandweberStep::Auto,
            StepSetting::Named(s) => {
                return Err(Error::Config(format!(
                    "landweber.step must be \"auto\" or a number, got '{s}'"
                )))
            }
        };
        let landweber = LandweberConfig::new(self.landweber.max_iter, step, self.landweber.residual_tol)?;
        Ok(
            InnerConfig::new(self.inner.tau, self.inner.n_max, self.inner.n_es, newton, landweber)?
                .with_adjoint_start(self.inner.adjoint_start),
        )
    }

    pub fn build_regularizer(&self) -> Result<RegularizerSpec> {
        Ok(
            RegularizerSpec::new(self.regularizer.epsilon, self.regularizer.thresholding)?
                .with_form(self.regularizer.form),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_round_trip() {
        for cfg in [RunConfig::paper(), RunConfig::ci()] {
            let text = cfg.to_toml_string();
            let back = RunConfig::from_toml_str(&text, false).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_toml_string(), text);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn paper_profile_values() {
        let c = RunConfig::paper();
        let s = c.build_schedule().unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s.alphas()[0], 1.0);
        assert_eq!(s.alphas()[99], 1e-6);
        let inner = c.build_inner().unwrap();
        assert_eq!(inner.tau(), 1e-3);
        assert_eq!(inner.n_max(), 1000);
        assert_eq!(inner.n_es(), 5);
        assert_eq!(inner.newton().max_iter(), 50);
        assert_eq!(inner.landweber().max_iter(), 100);
        assert!(c.pinned_violations().is_empty());
    }

    #[test]
    fn pinned_values_need_override() {
        let mut c = RunConfig::paper();
        c.inner.tau = 1e-2;
        let text = c.to_toml_string();
        let err = RunConfig::from_toml_str(&text, false).unwrap_err();
        assert!(err.to_string().contains("inner.tau"));
        assert!(RunConfig::from_toml_str(&text, true).is_ok());

        let mut ci = RunConfig::ci();
        ci.inner.tau = 1e-2;
        assert!(RunConfig::from_toml_str(&ci.to_toml_string(), false).is_ok());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::ci();
        let mut b = a.clone();
        b.noise.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(RunConfig::from_toml_str("profile = \"ci\"", false).is_err());
        let mut c = RunConfig::ci();
        c.landweber.step = StepSetting::Named("fast".into());
        assert!(RunConfig::from_toml_str(&c.to_toml_string(), false).is_err());
        let mut c = RunConfig::ci();
        c.landweber.step = StepSetting::Fixed(0.01);
        assert!(RunConfig::from_toml_str(&c.to_toml_string(), false).is_ok());
        let mut c = RunConfig::ci();
        c.truth.names = vec!["m9".into()];
        assert!(c.validate(false).is_err());
        let text = RunConfig::ci().to_toml_string().replace("[grid]", "[grid]\nextra = 1");
        assert!(RunConfig::from_toml_str(&text, false).is_err());
        assert!("paper".parse::<Profile>().is_ok());
        assert!("fast".parse::<Profile>().is_err());
    }
}
