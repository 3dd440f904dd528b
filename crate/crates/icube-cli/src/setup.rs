//! Session construction and exclusion-log replay shared by the service and
//! the `replay` command.

use icube_core::masking::{MaskingMode, Session, SessionConfig};
use icube_core::models::LearnerSpec;
use icube_core::procedures::split_halves;
use icube_core::{rng, Dataset, Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Which units a session tests. With `half`, the units are that half of the
/// crossfit split drawn from the session seed and the complement is the other
/// half, matching the library's crossfit run for the same seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitSplit {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complement: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half: Option<usize>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub fn unit_count(dataset: &Dataset, mode: MaskingMode) -> Result<usize> {
    if mode.is_paired() {
        Ok(dataset.pairs().ok_or_else(|| invalid("paired mode needs a paired dataset"))?.len())
    } else {
        Ok(dataset.n())
    }
}

pub fn session_config(dataset: &Dataset, mode: MaskingMode, alpha: f64, split: &UnitSplit, seed: u64) -> Result<SessionConfig> {
    let n = unit_count(dataset, mode)?;
    let (units, complement) = match split.half {
        Some(h) => {
            if h > 1 {
                return Err(invalid("half must be 0 or 1"));
            }
            if split.units.is_some() || split.complement.is_some() {
                return Err(invalid("give either half or explicit units"));
            }
            let halves = split_halves(n, rng::derive(seed, rng::SPLIT));
            (halves[h].clone(), halves[1 - h].clone())
        }
        None => {
            let complement = split.complement.clone().unwrap_or_default();
            let units = split.units.clone().unwrap_or_else(|| (0..n).filter(|i| !complement.contains(i)).collect());
            (units, complement)
        }
    };
    Ok(SessionConfig {
        mode,
        alpha,
        units,
        complement,
        outcome_model: LearnerSpec::forest_regressor(rng::derive(seed, rng::OUTCOME_MODEL)),
    })
}

/// One line of an exported exclusion log: the receipt's `t` and the unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub t: usize,
    pub unit_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub stopped: bool,
    pub t: usize,
    /// Empty unless the log reaches the stopping time.
    pub rejected: Vec<usize>,
    pub fdr_hat_trajectory: Vec<f64>,
    pub exclusions: Vec<usize>,
}

/// Re-runs a recorded exclusion sequence.
pub fn replay(dataset: Arc<Dataset>, config: &SessionConfig, log: &[LogEntry]) -> Result<ReplayOutcome> {
    let mut session = Session::open(dataset, config)?;
    for (k, e) in log.iter().enumerate() {
        if e.t != k + 1 {
            return Err(invalid(format!("log entry {k} has t={}, expected {}", e.t, k + 1)));
        }
        session.exclude(e.unit_id)?;
    }
    let ledger = session.ledger();
    Ok(ReplayOutcome {
        stopped: ledger.stopped(),
        t: ledger.t(),
        rejected: if ledger.stopped() { session.rejection_set()? } else { Vec::new() },
        fdr_hat_trajectory: ledger.trajectory().to_vec(),
        exclusions: ledger.exclusions().to_vec(),
    })
}
