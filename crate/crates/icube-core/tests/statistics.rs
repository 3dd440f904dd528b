//! Generators, learners, p-values and metrics.

use icube_core::baselines::bh_step_up;
use icube_core::data::{self, Grouping};
use icube_core::models::{fit, Features, LearnerSpec};
use icube_core::subgroup::{subgroup_pvalues, PValueMethod};
use icube_core::sweep::{preset, run_sweep};
use icube_core::{evaluate, normal, rng, Dataset, EffectModel, GroundTruth, Labels, NullKind, Summary};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn models() -> impl Strategy<Value = EffectModel> {
    (0.0f64..4.0, 0usize..4).prop_map(|(s, k)| match k {
        0 => EffectModel::BiasSparse { scale: s },
        1 => EffectModel::LinearBoth { scale: s },
        2 => EffectModel::SparseOneside { scale: s },
        _ => EffectModel::SparseTwoside { scale: s },
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn observed_outcome_is_assigned_potential_outcome(model in models(), seed in any::<u64>(), n in 2usize..200) {
        let (ds, truth) = data::generate_unpaired(n, model, seed).unwrap();
        for i in 0..n {
            let r = truth.records[i];
            prop_assert_eq!(ds.y(i), if ds.a(i) == 1 { r.y_t } else { r.y_c });
            prop_assert!((r.y_t - r.y_c - model.effect(ds.x(i))).abs() < 1e-9);
            prop_assert_eq!(r.is_positive, !r.is_nonpositive_null);
        }
    }

    #[test]
    fn pairs_have_one_treated_member(model in models(), seed in any::<u64>(), n in 1usize..100, eps in 0.0f64..3.0) {
        let (ds, truth) = data::generate_paired(n, model, eps, seed).unwrap();
        for p in ds.pairs().unwrap() {
            prop_assert_eq!(ds.a(p[0]) + ds.a(p[1]), 1);
            for &i in p {
                let r = truth.records[i];
                prop_assert_eq!(ds.y(i), if ds.a(i) == 1 { r.y_t } else { r.y_c });
            }
        }
    }

    #[test]
    fn dataset_csv_round_trip(model in models(), seed in any::<u64>(), n in 1usize..60, paired in any::<bool>()) {
        let (ds, truth) = if paired {
            data::generate_paired(n, model, 0.5, seed).unwrap()
        } else {
            data::generate_unpaired(n + 1, model, seed).unwrap()
        };
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        prop_assert_eq!(&Dataset::read_csv(&buf[..]).unwrap(), &ds);
        let mut buf = Vec::new();
        truth.write_csv(&mut buf).unwrap();
        prop_assert_eq!(GroundTruth::read_csv(&buf[..]).unwrap(), truth);
        let groups = Grouping { group_of: (0..ds.n()).map(|i| (i * 7) % 5).collect() };
        let mut buf = Vec::new();
        groups.write_csv(&mut buf).unwrap();
        prop_assert_eq!(Grouping::read_csv(&buf[..]).unwrap(), groups);
    }

    #[test]
    fn evaluate_ignores_order_and_repeats(
        flags in prop::collection::vec((any::<bool>(), any::<bool>()), 1..50),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 0..30),
    ) {
        let labels = Labels {
            ids: (0..flags.len()).collect(),
            zero_null: flags.iter().map(|f| f.0).collect(),
            nonpositive_null: flags.iter().map(|f| f.0 || f.1).collect(),
            positive: flags.iter().map(|f| !(f.0 || f.1)).collect(),
        };
        let mut rejected: Vec<usize> = picks.iter().map(|i| i.index(flags.len())).collect();
        rejected.sort_unstable();
        rejected.dedup();
        let mut reversed = rejected.clone();
        reversed.reverse();
        for kind in [NullKind::Zero, NullKind::Nonpositive] {
            let e = evaluate(&rejected, &labels, kind);
            prop_assert_eq!(e, evaluate(&reversed, &labels, kind));
            prop_assert_eq!(e, evaluate(&rejected, &labels, kind));
            prop_assert!((0.0..=1.0).contains(&e.fdp) && (0.0..=1.0).contains(&e.power));
        }
    }
}

#[test]
fn treatment_is_balanced() {
    let (ds, _) = data::generate_unpaired(20000, EffectModel::BiasSparse { scale: 1.0 }, 3).unwrap();
    let frac = ds.assignments().iter().map(|&a| a as f64).sum::<f64>() / 20000.0;
    assert!((frac - 0.5).abs() < 4.0 * (0.25f64 / 20000.0).sqrt(), "{frac}");
}

#[test]
fn mismatch_flips_binary_covariate_at_rate_eps() {
    let (ds, _) = data::generate_paired(20000, EffectModel::BiasSparse { scale: 1.0 }, 0.5, 4).unwrap();
    let pairs = ds.pairs().unwrap();
    let flipped = pairs.iter().filter(|p| ds.x(p[0])[0] != ds.x(p[1])[0]).count() as f64 / pairs.len() as f64;
    assert!((flipped - 0.5).abs() < 0.02, "{flipped}");
    let (exact, _) = data::generate_paired(200, EffectModel::BiasSparse { scale: 1.0 }, 0.0, 4).unwrap();
    assert!(exact.pairs().unwrap().iter().all(|p| exact.x(p[0]) == exact.x(p[1])));
}

#[test]
fn gaussian_treated_non_nulls_center_on_signal() {
    let n = 20000;
    let (ds, truth) = data::generate_gaussian_sequence(n, 0.5, 0.2, false, 8).unwrap();
    let mu = data::gaussian_signal(n, 0.5);
    let ys: Vec<f64> = (0..n).filter(|&i| truth.records[i].is_positive && ds.a(i) == 1).map(|i| ds.y(i)).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    assert!((mean - mu).abs() < 3.0 / (ys.len() as f64).sqrt(), "{mean} vs {mu}");
    assert_eq!(truth.records.iter().filter(|r| r.is_positive).count(), data::gaussian_non_nulls(n, 0.2));
}

#[test]
fn forest_beats_constant_predictor() {
    let mut r = rng::rng(12);
    let mut draw = |n: usize| {
        let mut x = Features::new(3);
        let mut y = Vec::new();
        for _ in 0..n {
            let row: [f64; 3] = [r.random(), r.random(), r.sample(StandardNormal)];
            y.push(5.0 * (row[0] + row[1] + row[2]) + r.sample::<f64, _>(StandardNormal));
            x.push(&row);
        }
        (x, y)
    };
    let (xtr, ytr) = draw(400);
    let (xte, yte) = draw(400);
    let model = fit(&LearnerSpec::forest_regressor(3), &xtr, &ytr).unwrap();
    let mean = yte.iter().sum::<f64>() / yte.len() as f64;
    let var = yte.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / yte.len() as f64;
    let mse = (0..400).map(|i| (model.predict(xte.row(i)) - yte[i]).powi(2)).sum::<f64>() / 400.0;
    assert!(mse < 0.5 * var, "mse {mse} var {var}");
}

#[test]
fn null_subgroup_pvalues_are_super_uniform() {
    let null = EffectModel::ConstantEvenCovariate { delta: 0.0, sparse: false };
    for method in [PValueMethod::MeanDifference, PValueMethod::RankSum] {
        for paired in [false, true] {
            let mut p = Vec::new();
            for seed in 0..25 {
                let n = if paired { 400 } else { 800 };
                let (ds, _, g) = data::generate_subgroup_experiment(n, null, paired, seed).unwrap();
                p.extend(subgroup_pvalues(&ds, &g, method, 199, seed).unwrap());
            }
            let m = p.len() as f64;
            for u in [0.05, 0.1, 0.25, 0.5] {
                let frac = p.iter().filter(|&&v| v <= u).count() as f64 / m;
                assert!(frac <= u + 3.0 * (u * (1.0 - u) / m).sqrt(), "{method:?} paired={paired} u={u}: {frac}");
            }
        }
    }
}

#[test]
fn singleton_group_pvalues_are_half_or_one() {
    let (ds, _) = data::generate_unpaired(300, EffectModel::BiasSparse { scale: 3.0 }, 6).unwrap();
    let g = Grouping { group_of: (0..300).collect() };
    let p = subgroup_pvalues(&ds, &g, PValueMethod::MeanDifference, 99, 1).unwrap();
    assert!(p.iter().all(|&v| v == 0.5 || v == 1.0));
    assert!(bh_step_up(&p, 0.2).is_empty());
}

#[test]
fn subgroup_rejects_pair_split_across_groups() {
    let (ds, _) = data::generate_paired(10, EffectModel::BiasSparse { scale: 1.0 }, 0.0, 1).unwrap();
    let g = Grouping { group_of: (0..20).map(|i| i % 2).collect() };
    assert!(subgroup_pvalues(&ds, &g, PValueMethod::MeanDifference, 99, 1).is_err());
}

#[test]
fn bh_controls_fdr_on_independent_uniforms() {
    let (m, m0, alpha, reps) = (200, 160, 0.2, 400);
    let mut r = rng::rng(77);
    let fdp: Vec<f64> = (0..reps)
        .map(|_| {
            let p: Vec<f64> = (0..m)
                .map(|i| if i < m0 { r.random::<f64>() } else { normal::sf(r.sample::<f64, _>(StandardNormal) + 3.0) })
                .collect();
            let rej = bh_step_up(&p, alpha);
            rej.iter().filter(|&&i| i < m0).count() as f64 / rej.len().max(1) as f64
        })
        .collect();
    let s = Summary::of(&fdp);
    assert!(s.mean <= alpha * m0 as f64 / m as f64 + 3.0 * s.se, "{s:?}");
}

#[test]
fn sweep_is_independent_of_parallelism() {
    let mut spec = preset("figure5").unwrap();
    spec.strengths = vec![2.0];
    spec.n = 100;
    spec.reps = 6;
    spec.seed = 4;
    let serial = run_sweep(&spec).unwrap();
    spec.parallelism = 4;
    assert_eq!(run_sweep(&spec).unwrap(), serial);
}
