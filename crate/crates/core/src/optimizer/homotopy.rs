use std::fmt;

use nalgebra::DMatrix;

use super::inner::{inner_solve, InnerConfig, PathRecord, WarmStart};
use super::regularizer::RegularizerSpec;
use super::schedule::HomotopySchedule;
use crate::error::Error;
use crate::model::ImplicitModel;

/// A homotopy run that failed part-way; `records` holds the completed levels.
#[derive(Debug)]
pub struct PathFailure {
    pub level: usize,
    pub records: Vec<PathRecord>,
    pub source: Error,
}

impl fmt::Display for PathFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "homotopy failed at level {} after {} completed levels: {}",
            self.level,
            self.records.len(),
            self.source
        )
    }
}

impl std::error::Error for PathFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<PathFailure> for Error {
    fn from(f: PathFailure) -> Self {
        let level = f.level;
        f.source.with_context(format!("level {level}"))
    }
}

/// Trace the regularization path: one inner solve per weight, each level
/// warm-started from the previous one's `(u, m, lambda)`.
pub fn homotopy_run(
    model: &dyn ImplicitModel,
    d: &DMatrix<f64>,
    schedule: &HomotopySchedule,
    init: &WarmStart,
    cfg: &InnerConfig,
    spec: &RegularizerSpec,
) -> Result<Vec<PathRecord>, PathFailure> {
    let mut records: Vec<PathRecord> = Vec::with_capacity(schedule.len());
    for (level, &alpha) in schedule.alphas().iter().enumerate() {
        let warm = match records.last() {
            Some(prev) => prev.warm_start(),
            None => init.clone(),
        };
        match inner_solve(model, d, alpha, &warm, cfg, spec) {
            Ok(mut rec) => {
                rec.level = level;
                records.push(rec);
            }
            Err(source) => return Err(PathFailure { level, records, source }),
        }
    }
    Ok(records)
}
