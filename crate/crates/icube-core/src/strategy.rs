//! Automated explorer strategies. Each strategy scores the current
//! candidates from what the view reveals; the lowest score, meaning the
//! least likely to carry a positive effect, is excluded next. Ties go to the
//! lowest unit id. Models are refit at `t = 0` and every `refit_every`
//! exclusions; between refits cached scores are reused.

use crate::error::{invalid, Result};
use crate::masking::{ExplorerView, MaskingMode, Role};
use crate::models::{fit, Features, FittedModel, LearnerKind, LearnerSpec};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Forest-classifier probability of a positive sign, from outcome,
    /// covariates and residual.
    MinProb,
    /// Forest prediction of a doubly robust effect estimate from covariates.
    MinEffect,
    /// Smallest `|Δ̂|` computable from the visible data.
    MinAbs,
    /// [`StrategyKind::MinProb`] on outcome and residual imputed from covariates.
    ImputedMinProb,
    /// Mean revealed `Δ̂` among units with the same covariate vector.
    OracleCovariateMean,
    Random,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::MinProb => "min_prob",
            StrategyKind::MinEffect => "min_effect",
            StrategyKind::MinAbs => "min_abs",
            StrategyKind::ImputedMinProb => "imputed_min_prob",
            StrategyKind::OracleCovariateMean => "oracle_covariate_mean",
            StrategyKind::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "min_prob" => StrategyKind::MinProb,
            "min_effect" => StrategyKind::MinEffect,
            "min_abs" => StrategyKind::MinAbs,
            "imputed_min_prob" => StrategyKind::ImputedMinProb,
            "oracle_covariate_mean" => StrategyKind::OracleCovariateMean,
            "random" => StrategyKind::Random,
            other => return Err(invalid(format!("unknown strategy `{other}`"))),
        })
    }

    pub fn supports(self, mode: MaskingMode) -> bool {
        use MaskingMode::*;
        match self {
            StrategyKind::MinProb | StrategyKind::MinAbs => matches!(mode, Crossfit | PairedCrossfit),
            StrategyKind::ImputedMinProb => mode == May,
            StrategyKind::OracleCovariateMean => matches!(mode, Crossfit | May),
            StrategyKind::MinEffect | StrategyKind::Random => true,
        }
    }

    /// Default for a masking mode.
    pub fn default_for(mode: MaskingMode) -> Self {
        if mode.masks_outcome() {
            StrategyKind::MinEffect
        } else {
            StrategyKind::MinProb
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub refit_every: usize,
    /// Tree settings for the strategy's forests; the kind field is ignored.
    pub learner: LearnerSpec,
    pub seed: u64,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind, seed: u64) -> Self {
        StrategySpec { kind, refit_every: 100, learner: LearnerSpec::forest_regressor(seed), seed }
    }
}

/// Scores candidates; the explorer excludes the argmin.
pub trait Strategy: Send {
    fn scores(&mut self, view: &ExplorerView) -> Result<Vec<(usize, f64)>>;

    fn select_next(&mut self, view: &ExplorerView) -> Result<usize> {
        let scored = self.scores(view)?;
        argmin(&scored).ok_or_else(|| invalid("no candidates left"))
    }
}

/// Lowest score, ties to the lowest id.
pub fn argmin(scored: &[(usize, f64)]) -> Option<usize> {
    scored
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(id, _)| id)
}

/// Builds a strategy; errors if the kind needs data the mode masks.
pub fn build(spec: &StrategySpec, mode: MaskingMode) -> Result<Box<dyn Strategy>> {
    if !spec.kind.supports(mode) {
        return Err(invalid(format!("strategy {:?} is not available under {:?} masking", spec.kind, mode)));
    }
    if spec.refit_every == 0 {
        return Err(invalid("refit_every must be positive"));
    }
    Ok(Box::new(Cached { spec: *spec, last_fit: None, fits: 0, cache: HashMap::new() }))
}

struct Cached {
    spec: StrategySpec,
    last_fit: Option<usize>,
    fits: u64,
    cache: HashMap<usize, f64>,
}

impl Strategy for Cached {
    fn scores(&mut self, view: &ExplorerView) -> Result<Vec<(usize, f64)>> {
        let t = view.t();
        let due = self.last_fit.is_none_or(|last| t >= last + self.spec.refit_every);
        if due {
            let seed = rng::derive(self.spec.seed, self.fits);
            self.cache = score_all(&self.spec, seed, view)?.into_iter().collect();
            self.last_fit = Some(t);
            self.fits += 1;
        }
        Ok(view.candidates().map(|id| (id, self.cache.get(&id).copied().unwrap_or(f64::INFINITY))).collect())
    }
}

/// Features of one unit as seen by min_prob-style classifiers.
struct Row {
    id: usize,
    features: Vec<f64>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Outcome-bearing features. Pair members are ordered by outcome, larger first,
/// so the features do not depend on which member is listed first.
fn outcome_features(view: &ExplorerView, id: usize) -> Result<Vec<f64>> {
    let y = view.y(id)?;
    let x = view.x(id)?;
    let mut f = Vec::new();
    if y.len() == 2 {
        let (hi, lo) = if y[1] > y[0] { (1, 0) } else { (0, 1) };
        f.push(y[hi]);
        f.push(y[lo]);
        f.extend_from_slice(x[hi]);
        f.extend_from_slice(x[lo]);
    } else {
        f.push(y[0]);
        f.extend_from_slice(x[0]);
        f.push(view.residual(id)?);
    }
    Ok(f)
}

/// Covariate-only features; pair members are ordered lexicographically.
fn covariate_features(view: &ExplorerView, id: usize) -> Result<Vec<f64>> {
    let mut x = view.x(id)?;
    x.sort_by(|a, b| a.iter().zip(b.iter()).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    Ok(x.concat())
}

fn fit_rows(spec: &LearnerSpec, kind: LearnerKind, seed: u64, rows: &[Vec<f64>], labels: &[f64]) -> Result<FittedModel> {
    let d = rows.first().map_or(0, Vec::len);
    let mut x = Features::new(d);
    if d > 0 {
        rows.iter().for_each(|r| x.push(r));
    }
    fit(&spec.with_kind(kind).with_seed(seed), &x, labels)
}

fn min_abs_scores(view: &ExplorerView) -> Result<Vec<(usize, f64)>> {
    view.candidates()
        .map(|id| {
            let s = if view.mode().is_paired() {
                let y = view.y(id)?;
                (y[0] - y[1]).abs()
            } else {
                2.0 * view.residual(id)?.abs()
            };
            Ok((id, s))
        })
        .collect()
}

fn score_all(spec: &StrategySpec, seed: u64, view: &ExplorerView) -> Result<Vec<(usize, f64)>> {
    let revealed: Vec<usize> = view.revealed().collect();
    match spec.kind {
        StrategyKind::Random => {
            let mut r = rng::rng(seed);
            Ok(view.candidates().map(|id| (id, r.random::<f64>())).collect())
        }
        StrategyKind::MinAbs => min_abs_scores(view),
        StrategyKind::MinProb => {
            if revealed.is_empty() {
                return min_abs_scores(view);
            }
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for &j in &revealed {
                rows.push(outcome_features(view, j)?);
                labels.push(sign(view.delta_hat(j)?));
            }
            let model = fit_rows(&spec.learner, LearnerKind::ForestClassifier, seed, &rows, &labels)?;
            let cands = view
                .candidates()
                .map(|id| Ok(Row { id, features: outcome_features(view, id)? }))
                .collect::<Result<Vec<_>>>()?;
            Ok(cands.into_iter().map(|r| (r.id, model.predict(&r.features))).collect())
        }
        StrategyKind::MinEffect => min_effect(spec, seed, view, &revealed),
        StrategyKind::ImputedMinProb => imputed_min_prob(spec, seed, view, &revealed),
        StrategyKind::OracleCovariateMean => {
            let mut sums: HashMap<Vec<u64>, (f64, usize)> = HashMap::new();
            let (mut total, mut count) = (0.0, 0usize);
            for &j in &revealed {
                let key: Vec<u64> = view.x(j)?[0].iter().map(|v| v.to_bits()).collect();
                let dh = view.delta_hat(j)?;
                let e = sums.entry(key).or_insert((0.0, 0));
                e.0 += dh;
                e.1 += 1;
                total += dh;
                count += 1;
            }
            let fallback = if count > 0 { total / count as f64 } else { 0.0 };
            view.candidates()
                .map(|id| {
                    let key: Vec<u64> = view.x(id)?[0].iter().map(|v| v.to_bits()).collect();
                    Ok((id, sums.get(&key).map_or(fallback, |(s, c)| s / *c as f64)))
                })
                .collect()
        }
    }
}

/// Doubly robust effect `4(A−½)(Y − μ̂_A) + μ̂₁ − μ̂₀`.
pub fn doubly_robust(a: u8, y: f64, mu0: f64, mu1: f64) -> f64 {
    let mu_a = if a == 1 { mu1 } else { mu0 };
    4.0 * (a as f64 - 0.5) * (y - mu_a) + mu1 - mu0
}

/// [`doubly_robust`] for every row, with per-arm forest regressions fit on the rows.
pub fn doubly_robust_effects(
    learner: &LearnerSpec,
    seed: u64,
    y: &[f64],
    a: &[u8],
    x: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let arm = |k: u8, s: u64| -> Result<Option<FittedModel>> {
        let rows: Vec<Vec<f64>> = (0..y.len()).filter(|&i| a[i] == k).map(|i| x[i].clone()).collect();
        let labels: Vec<f64> = (0..y.len()).filter(|&i| a[i] == k).map(|i| y[i]).collect();
        if labels.is_empty() {
            return Ok(None);
        }
        fit_rows(learner, LearnerKind::ForestRegressor, s, &rows, &labels).map(Some)
    };
    let (Some(m0), Some(m1)) = (arm(0, rng::derive(seed, 10))?, arm(1, rng::derive(seed, 11))?) else {
        return Err(invalid("both arms need at least one revealed unit"));
    };
    Ok((0..y.len())
        .map(|i| doubly_robust(a[i], y[i], m0.predict(&x[i]), m1.predict(&x[i])))
        .collect())
}

fn min_effect(spec: &StrategySpec, seed: u64, view: &ExplorerView, revealed: &[usize]) -> Result<Vec<(usize, f64)>> {
    let cands: Vec<usize> = view.candidates().collect();
    if revealed.is_empty() {
        return Ok(cands.into_iter().map(|id| (id, 0.0)).collect());
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    if view.mode().is_paired() {
        for &j in revealed {
            rows.push(covariate_features(view, j)?);
            labels.push(view.delta_hat(j)?);
        }
    } else {
        let (mut y, mut a) = (Vec::new(), Vec::new());
        for &j in revealed {
            y.push(view.y(j)?[0]);
            a.push(view.a(j)?[0]);
            rows.push(view.x(j)?[0].to_vec());
        }
        labels = match doubly_robust_effects(&spec.learner, seed, &y, &a, &rows) {
            Ok(v) => v,
            Err(_) => revealed.iter().map(|&j| view.delta_hat(j)).collect::<Result<_>>()?,
        };
    }
    let model = fit_rows(&spec.learner, LearnerKind::ForestRegressor, rng::derive(seed, 12), &rows, &labels)?;
    cands.into_iter().map(|id| Ok((id, model.predict(&covariate_features(view, id)?)))).collect()
}

fn imputed_min_prob(spec: &StrategySpec, seed: u64, view: &ExplorerView, revealed: &[usize]) -> Result<Vec<(usize, f64)>> {
    if revealed.is_empty() {
        return Ok(view.candidates().map(|id| (id, 0.0)).collect());
    }
    let (mut xs, mut ys, mut es, mut labels) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &j in revealed {
        xs.push(view.x(j)?[0].to_vec());
        ys.push(view.y(j)?[0]);
        es.push(view.residual(j)?);
        labels.push(sign(view.delta_hat(j)?));
    }
    let y_model = fit_rows(&spec.learner, LearnerKind::ForestRegressor, rng::derive(seed, 20), &xs, &ys)?;
    let e_model = fit_rows(&spec.learner, LearnerKind::ForestRegressor, rng::derive(seed, 21), &xs, &es)?;
    let feats = |x: &[f64]| {
        let mut f = vec![y_model.predict(x)];
        f.extend_from_slice(x);
        f.push(e_model.predict(x));
        f
    };
    let rows: Vec<Vec<f64>> = xs.iter().map(|x| feats(x)).collect();
    let clf = fit_rows(&spec.learner, LearnerKind::ForestClassifier, rng::derive(seed, 22), &rows, &labels)?;
    view.candidates()
        .map(|id| {
            debug_assert_eq!(view.role(id), Some(Role::Candidate));
            Ok((id, clf.predict(&feats(view.x(id)?[0]))))
        })
        .collect()
}
