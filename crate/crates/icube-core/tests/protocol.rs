//! Masking-protocol properties checked against brute-force recounts.

use icube_core::baselines::bc_threshold;
use icube_core::masking::{ExplorerView, MaskingMode, Session, SessionConfig, SignLedger};
use icube_core::models::LearnerSpec;
use icube_core::procedures::{drive, run_crossfit, run_i3};
use icube_core::strategy::{build, StrategyKind, StrategySpec};
use icube_core::{data, Dataset, EffectModel, Error, Strategy};
use proptest::prelude::*;
use std::sync::Arc;

fn recount(signs: &[(usize, bool)], remaining: &[usize]) -> (usize, usize) {
    let pos = remaining.iter().filter(|&&id| signs.iter().any(|&(u, s)| u == id && s)).count();
    (pos, remaining.len() - pos)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ledger_matches_recount(
        signs in prop::collection::vec(any::<bool>(), 1..40),
        order in prop::collection::vec(any::<prop::sample::Index>(), 0..40),
        alpha in 0.05f64..0.6,
    ) {
        let units: Vec<(usize, bool)> = signs.iter().copied().enumerate().collect();
        let mut ledger = SignLedger::new(alpha, &units).unwrap();
        let mut remaining: Vec<usize> = (0..signs.len()).collect();
        let check = |ledger: &SignLedger, remaining: &[usize]| {
            let (pos, neg) = recount(&units, remaining);
            assert_eq!((ledger.pos_count(), ledger.neg_count()), (pos, neg));
            let fdr = (neg as f64 + 1.0) / pos.max(1) as f64;
            assert_eq!(ledger.fdr_hat(), fdr);
            assert_eq!(ledger.stopped(), fdr <= alpha || remaining.is_empty());
        };
        check(&ledger, &remaining);
        for idx in order {
            if remaining.is_empty() {
                break;
            }
            let id = remaining[idx.index(remaining.len())];
            if ledger.stopped() {
                prop_assert!(matches!(ledger.exclude(id), Err(Error::IllegalState(_))));
                break;
            }
            let receipt = ledger.exclude(id).unwrap();
            remaining.retain(|&u| u != id);
            prop_assert_eq!(receipt.t, signs.len() - remaining.len());
            prop_assert!(matches!(ledger.exclude(id), Err(Error::InvalidArgument(_))));
            check(&ledger, &remaining);
        }
        if ledger.stopped() {
            let mut expect: Vec<usize> = remaining.iter().copied().filter(|&u| signs[u]).collect();
            expect.sort_unstable();
            prop_assert_eq!(ledger.rejection_set().unwrap(), expect);
        } else {
            prop_assert!(matches!(ledger.rejection_set(), Err(Error::IllegalState(_))));
        }
    }

    #[test]
    fn min_abs_matches_bc_threshold(
        y in prop::collection::vec(-5.0f64..5.0, 4..80),
        coins in prop::collection::vec(any::<bool>(), 80),
        alpha in 0.1f64..0.5,
    ) {
        let n = y.len();
        let a: Vec<u8> = coins[..n].iter().map(|&c| c as u8).collect();
        let ds = Arc::new(Dataset::new(y.clone(), a.clone(), vec![], 0, None).unwrap());
        let config = SessionConfig {
            mode: MaskingMode::Crossfit,
            alpha,
            units: (0..n).collect(),
            complement: vec![],
            outcome_model: LearnerSpec::least_squares(),
        };
        let mut s = build(&StrategySpec::new(StrategyKind::MinAbs, 0), MaskingMode::Crossfit).unwrap();
        let run = run_i3(&ds, &config, s.as_mut()).unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        let v: Vec<f64> = (0..n).map(|i| 4.0 * (a[i] as f64 - 0.5) * (y[i] - mean)).collect();
        let (_, expect) = bc_threshold(&v, alpha);
        prop_assert_eq!(run.rejected, expect);
        prop_assert_eq!(run.masked_reads, 0);
    }
}

struct PeekAssignments;

impl Strategy for PeekAssignments {
    fn scores(&mut self, view: &ExplorerView) -> icube_core::Result<Vec<(usize, f64)>> {
        view.candidates().map(|id| Ok((id, view.a(id)?[0] as f64))).collect()
    }
}

#[test]
fn forbidden_read_fails_loudly() {
    let (ds, _) = data::generate_unpaired(60, EffectModel::BiasSparse { scale: 2.0 }, 5).unwrap();
    let config = SessionConfig {
        mode: MaskingMode::Crossfit,
        alpha: 0.2,
        units: (0..60).collect(),
        complement: vec![],
        outcome_model: LearnerSpec::forest_regressor(1),
    };
    let mut session = Session::open(Arc::new(ds), &config).unwrap();
    if session.ledger().stopped() {
        return;
    }
    let err = drive(&mut session, &mut PeekAssignments).unwrap_err();
    assert!(matches!(err, Error::MaskedRead { field: "a", .. }), "{err:?}");
    assert_eq!(session.audit().masked_reads(), 1);
    assert_eq!(session.ledger().t(), 0);
}

#[test]
fn automated_strategies_never_read_masked_fields() {
    let model = EffectModel::BiasSparse { scale: 2.0 };
    let (unpaired, _) = data::generate_unpaired(160, model, 2).unwrap();
    let (paired, _) = data::generate_paired(80, model, 0.5, 2).unwrap();
    let unpaired = Arc::new(unpaired);
    let paired = Arc::new(paired);
    let kinds = [
        StrategyKind::MinProb,
        StrategyKind::MinEffect,
        StrategyKind::MinAbs,
        StrategyKind::ImputedMinProb,
        StrategyKind::OracleCovariateMean,
        StrategyKind::Random,
    ];
    let modes = [MaskingMode::Crossfit, MaskingMode::May, MaskingMode::PairedCrossfit, MaskingMode::PairedMay];
    for mode in modes {
        for kind in kinds.into_iter().filter(|k| k.supports(mode)) {
            let ds = if mode.is_paired() { &paired } else { &unpaired };
            let mut spec = StrategySpec::new(kind, 9);
            spec.refit_every = 7;
            let halves = run_crossfit(ds, mode, 0.2, &spec, 3, &LearnerSpec::forest_regressor(4)).unwrap();
            for h in &halves {
                assert_eq!(h.masked_reads, 0, "{kind:?} under {mode:?}");
                assert_eq!(h.trajectory.len(), h.tau + 1);
            }
        }
    }
}

#[test]
fn unsupported_strategy_is_rejected() {
    let spec = StrategySpec::new(StrategyKind::MinProb, 0);
    assert!(matches!(build(&spec, MaskingMode::May), Err(Error::InvalidArgument(_))));
}

#[test]
fn swapping_pair_members_keeps_paired_rejections() {
    for seed in 0..5 {
        let (ds, _) = data::generate_paired(120, EffectModel::BiasSparse { scale: 2.0 }, 0.5, seed).unwrap();
        let swapped = Arc::new(ds.swap_pair_members().unwrap());
        let ds = Arc::new(ds);
        for kind in [StrategyKind::MinAbs, StrategyKind::MinProb] {
            let spec = StrategySpec::new(kind, seed);
            let model = LearnerSpec::forest_regressor(seed);
            let a = run_crossfit(&ds, MaskingMode::PairedCrossfit, 0.2, &spec, seed, &model).unwrap();
            let b = run_crossfit(&swapped, MaskingMode::PairedCrossfit, 0.2, &spec, seed, &model).unwrap();
            assert_eq!(a, b, "{kind:?} seed {seed}");
        }
    }
}

#[test]
fn may_session_needs_complement() {
    let (ds, _) = data::generate_unpaired(20, EffectModel::BiasSparse { scale: 1.0 }, 1).unwrap();
    let config = SessionConfig {
        mode: MaskingMode::May,
        alpha: 0.2,
        units: (0..20).collect(),
        complement: vec![],
        outcome_model: LearnerSpec::forest_regressor(1),
    };
    assert!(matches!(Session::open(Arc::new(ds), &config), Err(Error::InvalidArgument(_))));
}
