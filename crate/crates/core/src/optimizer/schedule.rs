use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regularization weights `alpha_0 > alpha_1 > ... > alpha_L > 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomotopySchedule {
    alphas: Vec<f64>,
}

impl HomotopySchedule {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::Config("schedule must contain at least one alpha".into()));
        }
        if alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::Config("schedule alphas must be positive and finite".into()));
        }
        if alphas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("schedule alphas must be strictly decreasing".into()));
        }
        Ok(Self { alphas })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}

impl<'de> Deserialize<'de> for HomotopySchedule {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            alphas: Vec<f64>,
        }
        let raw = Raw::deserialize(de)?;
        HomotopySchedule::new(raw.alphas).map_err(serde::de::Error::custom)
    }
}

/// `levels` log-equispaced weights from `alpha_hi` down to `alpha_lo`.
pub fn make_log_schedule(alpha_hi: f64, alpha_lo: f64, levels: usize) -> Result<HomotopySchedule> {
    if levels < 2 {
        return Err(Error::Config(format!(
            "log schedule needs at least 2 levels, got {levels}"
        )));
    }
    if !(alpha_hi > alpha_lo && alpha_lo > 0.0) {
        return Err(Error::Config(format!(
            "log schedule needs alpha_hi > alpha_lo > 0, got {alpha_hi} and {alpha_lo}"
        )));
    }
    let (a, b) = (alpha_hi.log10(), alpha_lo.log10());
    let last = (levels - 1) as f64;
    let alphas = (0..levels)
        .map(|l| {
            if l == 0 {
                alpha_hi
            } else if l == levels - 1 {
                alpha_lo
            } else {
                10f64.powf(a + (b - a) * l as f64 / last)
            }
        })
        .collect();
    HomotopySchedule::new(alphas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_schedule() {
        let s = make_log_schedule(1.0, 1e-6, 100).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s.alphas()[0], 1.0);
        assert_eq!(s.alphas()[99], 1e-6);
        let a50 = s.alphas()[50];
        assert!((a50 - 10f64.powf(-6.0 * 50.0 / 99.0)).abs() < 1e-18);
        assert!((a50 - 9.3260e-4).abs() < 1e-7, "{a50}");
    }

    #[test]
    fn rejects_bad_schedules() {
        assert!(make_log_schedule(1e-2, 1e-2, 5).is_err());
        assert!(make_log_schedule(1.0, 1e-2, 1).is_err());
        assert!(make_log_schedule(1.0, 0.0, 5).is_err());
        assert!(HomotopySchedule::new(vec![1.0, 0.5, 0.5]).is_err());
        assert!(HomotopySchedule::new(vec![1.0, -0.5]).is_err());
        assert!(HomotopySchedule::new(vec![]).is_err());
        assert!(HomotopySchedule::new(vec![0.3]).is_ok());
    }

    proptest! {
        #[test]
        fn constructed_schedules_are_valid(values in proptest::collection::vec(-1.0f64..2.0, 1..30)) {
            match HomotopySchedule::new(values.clone()) {
                Ok(s) => {
                    prop_assert!(s.alphas().iter().all(|a| *a > 0.0));
                    prop_assert!(s.alphas().windows(2).all(|w| w[0] > w[1]));
                }
                Err(_) => {
                    let valid = values.iter().all(|a| *a > 0.0) && values.windows(2).all(|w| w[0] > w[1]);
                    prop_assert!(!valid);
                }
            }
        }

        #[test]
        fn log_schedules_are_valid(hi in 1e-3f64..10.0, ratio in 1.5f64..1e6, n in 2usize..200) {
            let s = make_log_schedule(hi, hi / ratio, n).unwrap();
            prop_assert_eq!(s.len(), n);
            prop_assert!(s.alphas().windows(2).all(|w| w[0] > w[1]));
        }
    }
}
