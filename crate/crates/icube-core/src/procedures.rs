//! Drivers that run an automated explorer against a masked session, and the
//! crossfit variants that split units in two halves tested at `α/2` each.

use crate::baselines::linear_bh;
use crate::data::{Dataset, GroundTruth, Grouping, Labels};
use crate::error::{invalid, Result};
use crate::masking::{MaskingMode, Session, SessionConfig};
use crate::metrics::{evaluate, NullKind};
use crate::models::LearnerSpec;
use crate::rng;
use crate::strategy::{build, Strategy, StrategyKind, StrategySpec};
use crate::subgroup::{run_subgroup_bh, run_subgroup_interactive, subgroup_pvalues, PValueMethod};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Single masked run over all subjects with crossfit masking.
    I3,
    CrossfitI3,
    MayI3,
    PairedCrossfitI3,
    PairedMayI3,
    LinearBh,
    SubgroupInteractive,
    SubgroupBh,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::I3,
        Method::CrossfitI3,
        Method::MayI3,
        Method::PairedCrossfitI3,
        Method::PairedMayI3,
        Method::LinearBh,
        Method::SubgroupInteractive,
        Method::SubgroupBh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::I3 => "i3",
            Method::CrossfitI3 => "crossfit-i3",
            Method::MayI3 => "may-i3",
            Method::PairedCrossfitI3 => "paired-crossfit-i3",
            Method::PairedMayI3 => "paired-may-i3",
            Method::LinearBh => "linear-bh",
            Method::SubgroupInteractive => "subgroup-interactive",
            Method::SubgroupBh => "subgroup-bh",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.replace('_', "-"))
            .ok_or_else(|| invalid(format!("unknown method `{s}`")))
    }

    /// Masking mode of the masked methods.
    pub fn mode(self) -> Option<MaskingMode> {
        match self {
            Method::I3 | Method::CrossfitI3 => Some(MaskingMode::Crossfit),
            Method::MayI3 => Some(MaskingMode::May),
            Method::PairedCrossfitI3 => Some(MaskingMode::PairedCrossfit),
            Method::PairedMayI3 => Some(MaskingMode::PairedMay),
            _ => None,
        }
    }

    pub fn unit_level(self) -> UnitLevel {
        match self {
            Method::PairedCrossfitI3 | Method::PairedMayI3 => UnitLevel::Pair,
            Method::SubgroupInteractive | Method::SubgroupBh => UnitLevel::Group,
            _ => UnitLevel::Subject,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitLevel {
    Subject,
    Pair,
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcedureSpec {
    pub method: Method,
    pub alpha: f64,
    pub strategy: StrategySpec,
    pub split_seed: u64,
    pub outcome_model: LearnerSpec,
    pub pvalue_method: PValueMethod,
    pub permutations: usize,
    pub pvalue_seed: u64,
}

impl ProcedureSpec {
    /// Defaults for `method`, with every stochastic piece derived from `seed`.
    pub fn new(method: Method, alpha: f64, seed: u64) -> Self {
        let kind = match method.mode() {
            Some(mode) => StrategyKind::default_for(mode),
            None => StrategyKind::MinProb,
        };
        let mut strategy = StrategySpec::new(kind, rng::derive(seed, rng::STRATEGY));
        if method == Method::SubgroupInteractive {
            strategy.refit_every = 5;
        }
        ProcedureSpec {
            method,
            alpha,
            strategy,
            split_seed: rng::derive(seed, rng::SPLIT),
            outcome_model: LearnerSpec::forest_regressor(rng::derive(seed, rng::OUTCOME_MODEL)),
            pvalue_method: PValueMethod::MeanDifference,
            permutations: 999,
            pvalue_seed: rng::derive(seed, rng::PERMUTATION),
        }
    }

    pub fn with_strategy(mut self, kind: StrategyKind) -> Self {
        self.strategy.kind = kind;
        self
    }
}

/// One masked run over a unit set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfRun {
    pub units: Vec<usize>,
    pub rejected: Vec<usize>,
    pub tau: usize,
    pub trajectory: Vec<f64>,
    pub exclusions: Vec<usize>,
    pub masked_reads: usize,
}

/// Lets `strategy` drive `session` to its stopping time.
pub fn drive(session: &mut Session, strategy: &mut dyn Strategy) -> Result<HalfRun> {
    while !session.ledger().stopped() {
        let id = {
            let view = session.view();
            strategy.select_next(&view)?
        };
        session.exclude(id)?;
    }
    let ledger = session.ledger();
    Ok(HalfRun {
        units: ledger.exclusions().iter().chain(ledger.candidates()).copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect(),
        rejected: session.rejection_set()?,
        tau: ledger.t(),
        trajectory: ledger.trajectory().to_vec(),
        exclusions: ledger.exclusions().to_vec(),
        masked_reads: session.audit().masked_reads(),
    })
}

/// Opens a session on `config` and lets `strategy` drive it.
pub fn run_i3(dataset: &Arc<Dataset>, config: &SessionConfig, strategy: &mut dyn Strategy) -> Result<HalfRun> {
    let mut session = Session::open(dataset.clone(), config)?;
    drive(&mut session, strategy)
}

/// Random halves of `0..n`: the first has `⌊n/2⌋` units. Both are sorted.
pub fn split_halves(n: usize, seed: u64) -> [Vec<usize>; 2] {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng::rng(seed));
    let mut second = ids.split_off(n / 2);
    ids.sort_unstable();
    second.sort_unstable();
    [ids, second]
}

/// Runs each half at `α/2` with the other half revealed; rejects the union.
/// Each half gets its own strategy instance.
pub fn run_crossfit(
    dataset: &Arc<Dataset>,
    mode: MaskingMode,
    alpha: f64,
    strategy: &StrategySpec,
    split_seed: u64,
    outcome_model: &LearnerSpec,
) -> Result<[HalfRun; 2]> {
    let n_units = if mode.is_paired() {
        dataset.pairs().ok_or_else(|| invalid("paired method on unpaired data"))?.len()
    } else {
        dataset.n()
    };
    if n_units < 2 {
        return Err(invalid("crossfit needs at least two units"));
    }
    let halves = split_halves(n_units, split_seed);
    let run = |h: usize| -> Result<HalfRun> {
        let config = SessionConfig {
            mode,
            alpha: alpha / 2.0,
            units: halves[h].clone(),
            complement: halves[1 - h].clone(),
            outcome_model: *outcome_model,
        };
        let spec = StrategySpec { seed: rng::derive(strategy.seed, h as u64), ..*strategy };
        let mut s = build(&spec, mode)?;
        run_i3(dataset, &config, s.as_mut())
    };
    Ok([run(0)?, run(1)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub alpha: f64,
    pub unit_level: UnitLevel,
    pub rejected: Vec<usize>,
    /// Stopping time of each masked run (one entry per half).
    pub tau_per_half: Vec<usize>,
    /// Estimated FDP after each exclusion, halves concatenated; half `h`
    /// contributes `tau_per_half[h] + 1` entries.
    pub fdr_hat_trajectory: Vec<f64>,
    pub exclusions: Vec<Vec<usize>>,
    pub masked_reads: usize,
    pub warnings: Vec<String>,
    pub timings: Timings,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fdp_zero_null: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fdp_nonpositive_null: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub power: Option<f64>,
}

impl RunReport {
    fn from_halves(method: Method, alpha: f64, halves: &[HalfRun], elapsed: f64) -> Self {
        let mut rejected: Vec<usize> = halves.iter().flat_map(|h| h.rejected.iter().copied()).collect();
        rejected.sort_unstable();
        RunReport {
            method,
            alpha,
            unit_level: method.unit_level(),
            rejected,
            tau_per_half: halves.iter().map(|h| h.tau).collect(),
            fdr_hat_trajectory: halves.iter().flat_map(|h| h.trajectory.iter().copied()).collect(),
            exclusions: halves.iter().map(|h| h.exclusions.clone()).collect(),
            masked_reads: halves.iter().map(|h| h.masked_reads).sum(),
            warnings: Vec::new(),
            timings: Timings { total_ms: elapsed },
            fdp_zero_null: None,
            fdp_nonpositive_null: None,
            power: None,
        }
    }

    /// Labels matching this report's unit level.
    pub fn labels(&self, dataset: &Dataset, truth: &GroundTruth, grouping: Option<&Grouping>) -> Result<Labels> {
        match self.unit_level {
            UnitLevel::Subject => Ok(truth.labels()),
            UnitLevel::Pair => Ok(truth.pair_labels(dataset.pairs().ok_or_else(|| invalid("dataset is not paired"))?)),
            UnitLevel::Group => Ok(truth.group_labels(grouping.ok_or_else(|| invalid("group-level truth needs a grouping"))?)),
        }
    }

    pub fn attach_truth(&mut self, dataset: &Dataset, truth: &GroundTruth, grouping: Option<&Grouping>) -> Result<()> {
        if truth.records.len() != dataset.n() {
            return Err(invalid("truth and dataset sizes differ"));
        }
        let labels = self.labels(dataset, truth, grouping)?;
        let z = evaluate(&self.rejected, &labels, NullKind::Zero);
        let p = evaluate(&self.rejected, &labels, NullKind::Nonpositive);
        self.fdp_zero_null = Some(z.fdp);
        self.fdp_nonpositive_null = Some(p.fdp);
        self.power = Some(z.power);
        Ok(())
    }
}

/// Runs any method. Group-level methods need `grouping`.
pub fn run_procedure(dataset: &Arc<Dataset>, spec: &ProcedureSpec, grouping: Option<&Grouping>) -> Result<RunReport> {
    let start = Instant::now();
    let ms = |s: Instant| s.elapsed().as_secs_f64() * 1e3;
    let method = spec.method;
    match method {
        Method::I3 => {
            let config = SessionConfig {
                mode: MaskingMode::Crossfit,
                alpha: spec.alpha,
                units: (0..dataset.n()).collect(),
                complement: Vec::new(),
                outcome_model: spec.outcome_model,
            };
            let mut s = build(&spec.strategy, MaskingMode::Crossfit)?;
            let half = run_i3(dataset, &config, s.as_mut())?;
            Ok(RunReport::from_halves(method, spec.alpha, &[half], ms(start)))
        }
        Method::CrossfitI3 | Method::MayI3 | Method::PairedCrossfitI3 | Method::PairedMayI3 => {
            let mode = method.mode().expect("masked method");
            let halves = run_crossfit(dataset, mode, spec.alpha, &spec.strategy, spec.split_seed, &spec.outcome_model)?;
            Ok(RunReport::from_halves(method, spec.alpha, &halves, ms(start)))
        }
        Method::LinearBh => {
            let res = linear_bh(dataset, spec.alpha)?;
            let mut r = RunReport::from_halves(method, spec.alpha, &[], ms(start));
            r.rejected = res.rejected;
            if res.ridge_fallback {
                r.warnings.push("rank-deficient design: ridge fallback used".into());
            }
            Ok(r)
        }
        Method::SubgroupInteractive | Method::SubgroupBh => {
            let grouping = grouping.ok_or_else(|| invalid("subgroup methods need a grouping"))?;
            let p = subgroup_pvalues(dataset, grouping, spec.pvalue_method, spec.permutations, spec.pvalue_seed)?;
            let mut r = RunReport::from_halves(method, spec.alpha, &[], 0.0);
            if method == Method::SubgroupBh {
                r.rejected = run_subgroup_bh(&p, spec.alpha);
            } else {
                let half = run_subgroup_interactive(dataset, grouping, &p, spec.alpha, &spec.strategy)?;
                r = RunReport::from_halves(method, spec.alpha, &[half], 0.0);
            }
            r.timings.total_ms = ms(start);
            Ok(r)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_partition_units() {
        let [a, b] = split_halves(11, 3);
        assert_eq!(a.len(), 5);
        assert_eq!(b.len(), 6);
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("knockoffs").is_err());
    }
}
