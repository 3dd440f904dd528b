//! Interactive identification of subgroups with positive effects.
//!
//! Each group gets a one-sided randomization p-value `P`. The explorer sees
//! `P¹ = min(P, 1−P)` together with outcomes and covariates, while `P` itself,
//! the sign `P² = 2·1{P < ½} − 1` and the assignments stay masked until the
//! group is excluded. Stopping and rejection follow the same sign ledger as
//! the unit-level procedures, with `P² = +1` playing the role of `Δ̂ > 0`.

use crate::baselines::bh_step_up;
use crate::data::{Dataset, Grouping};
use crate::error::{invalid, Error, Result};
use crate::masking::{AuditEntry, AuditLog, Field, SignLedger};
use crate::models::{fit, Features, LearnerKind};
use crate::procedures::HalfRun;
use crate::rng;
use crate::strategy::{StrategyKind, StrategySpec};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    /// Treated mean minus control mean; an empty arm has mean zero.
    MeanDifference,
    /// Sum over treated subjects of within-group rank minus its average.
    RankSum,
}

/// Groups whose randomization has at most `2^EXACT_BLOCKS` outcomes are
/// enumerated exactly instead of sampled.
pub const EXACT_BLOCKS: usize = 10;

/// Randomization blocks: single subjects (coin flip) or pairs (swap).
fn blocks(dataset: &Dataset, members: &[usize]) -> Result<Vec<Vec<usize>>> {
    match dataset.pair_of() {
        None => Ok(members.iter().map(|&i| vec![i]).collect()),
        Some(pair_of) => {
            let pairs = dataset.pairs().expect("paired");
            let mut seen = std::collections::BTreeSet::new();
            for &i in members {
                seen.insert(pair_of[i]);
            }
            let set: std::collections::BTreeSet<usize> = members.iter().copied().collect();
            seen.into_iter()
                .map(|p| {
                    let m = pairs[p];
                    if !set.contains(&m[0]) || !set.contains(&m[1]) {
                        return Err(invalid(format!("pair {p} is split across groups")));
                    }
                    Ok(m.to_vec())
                })
                .collect()
        }
    }
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

struct GroupStat {
    z: Vec<f64>,
    a: Vec<u8>,
    blocks: Vec<Vec<usize>>,
    method: PValueMethod,
}

impl GroupStat {
    fn value(&self, flips: &dyn Fn(usize) -> bool) -> f64 {
        let (mut st, mut nt, mut sc, mut nc) = (0.0, 0usize, 0.0, 0usize);
        let center = (self.z.len() as f64 + 1.0) / 2.0;
        for (b, block) in self.blocks.iter().enumerate() {
            let flip = flips(b);
            for &k in block {
                let treated = (self.a[k] == 1) != flip;
                if treated {
                    st += self.z[k];
                    nt += 1;
                } else {
                    sc += self.z[k];
                    nc += 1;
                }
            }
        }
        match self.method {
            PValueMethod::RankSum => st - nt as f64 * center,
            PValueMethod::MeanDifference => {
                let mt = if nt > 0 { st / nt as f64 } else { 0.0 };
                let mc = if nc > 0 { sc / nc as f64 } else { 0.0 };
                mt - mc
            }
        }
    }
}

/// One-sided randomization p-value of one group, large statistics being
/// evidence of a positive effect.
fn group_pvalue(stat: &GroupStat, permutations: usize, seed: u64) -> f64 {
    let observed = stat.value(&|_| false);
    let scale = stat.z.iter().map(|v| v.abs()).sum::<f64>() / stat.z.len().max(1) as f64 + 1.0;
    let tol = 1e-12 * scale;
    let k = stat.blocks.len();
    if k <= EXACT_BLOCKS {
        let total = 1usize << k;
        let hits = (0..total).filter(|&mask| stat.value(&|b| mask >> b & 1 == 1) >= observed - tol).count();
        hits as f64 / total as f64
    } else {
        let mut r = rng::rng(seed);
        let mut flips = vec![false; k];
        let mut hits = 0usize;
        for _ in 0..permutations {
            flips.iter_mut().for_each(|f| *f = r.random_bool(0.5));
            if stat.value(&|b| flips[b]) >= observed - tol {
                hits += 1;
            }
        }
        (hits + 1) as f64 / (permutations + 1) as f64
    }
}

/// Randomization p-values for every group. Small groups are enumerated
/// exactly; larger ones use `permutations` random re-randomizations.
pub fn subgroup_pvalues(
    dataset: &Dataset,
    grouping: &Grouping,
    method: PValueMethod,
    permutations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if permutations < 99 {
        return Err(invalid("at least 99 permutations are required"));
    }
    if grouping.group_of.len() != dataset.n() {
        return Err(invalid("grouping does not cover the dataset"));
    }
    let members = grouping.members();
    members
        .iter()
        .enumerate()
        .map(|(g, m)| {
            if m.is_empty() {
                return Err(invalid(format!("group {g} has no members")));
            }
            let global = blocks(dataset, m)?;
            let local: std::collections::HashMap<usize, usize> = m.iter().enumerate().map(|(k, &i)| (i, k)).collect();
            let y: Vec<f64> = m.iter().map(|&i| dataset.y(i)).collect();
            let stat = GroupStat {
                z: if method == PValueMethod::RankSum { ranks(&y) } else { y },
                a: m.iter().map(|&i| dataset.a(i)).collect(),
                blocks: global.into_iter().map(|b| b.into_iter().map(|i| local[&i]).collect()).collect(),
                method,
            };
            Ok(group_pvalue(&stat, permutations, rng::derive(seed, g as u64)))
        })
        .collect()
}

/// BH on the group p-values.
pub fn run_subgroup_bh(p: &[f64], alpha: f64) -> Vec<usize> {
    bh_step_up(p, alpha)
}

/// Masked state of the subgroup procedure.
pub struct GroupSession<'d> {
    dataset: &'d Dataset,
    members: Vec<Vec<usize>>,
    p: Vec<f64>,
    ledger: SignLedger,
    revealed: Vec<bool>,
    audit: Mutex<AuditLog>,
}

impl<'d> GroupSession<'d> {
    pub fn open(dataset: &'d Dataset, grouping: &Grouping, p: &[f64], alpha: f64) -> Result<Self> {
        let members = grouping.members();
        if members.len() != p.len() {
            return Err(invalid("one p-value per group is required"));
        }
        let signs: Vec<(usize, bool)> = p.iter().enumerate().map(|(g, &v)| (g, v < 0.5)).collect();
        let ledger = SignLedger::new(alpha, &signs)?;
        Ok(GroupSession {
            dataset,
            revealed: vec![false; p.len()],
            members,
            p: p.to_vec(),
            ledger,
            audit: Mutex::new(AuditLog::default()),
        })
    }

    pub fn ledger(&self) -> &SignLedger {
        &self.ledger
    }

    pub fn view(&self) -> GroupView<'_, 'd> {
        GroupView { s: self }
    }

    pub fn exclude(&mut self, g: usize) -> Result<crate::masking::Receipt> {
        let r = self.ledger.exclude(g)?;
        self.revealed[g] = true;
        Ok(r)
    }

    pub fn audit(&self) -> AuditLog {
        self.audit.lock().expect("audit lock").clone()
    }
}

pub struct GroupView<'s, 'd> {
    s: &'s GroupSession<'d>,
}

impl GroupView<'_, '_> {
    pub fn t(&self) -> usize {
        self.s.ledger.t()
    }

    pub fn n_groups(&self) -> usize {
        self.s.p.len()
    }

    pub fn candidates(&self) -> impl Iterator<Item = usize> + '_ {
        self.s.ledger.candidates().iter().copied()
    }

    pub fn revealed(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.s.p.len()).filter(|&g| self.s.revealed[g])
    }

    fn check(&self, g: usize, field: Field, masked: bool) -> Result<()> {
        if g >= self.s.p.len() {
            return Err(invalid(format!("group {g} does not exist")));
        }
        let allowed = !masked || self.s.revealed[g];
        let t = self.t();
        self.s.audit.lock().expect("audit lock").entries.push(AuditEntry { unit: g, field, t, allowed });
        if allowed {
            Ok(())
        } else {
            log::error!("masked read of {} for group {g} at t={t}", field.name());
            Err(Error::MaskedRead { unit: g, field: field.name(), t })
        }
    }

    pub fn p1(&self, g: usize) -> Result<f64> {
        self.check(g, Field::PValue, false)?;
        let p = self.s.p[g];
        Ok(p.min(1.0 - p))
    }

    pub fn p_value(&self, g: usize) -> Result<f64> {
        self.check(g, Field::PValue, true)?;
        Ok(self.s.p[g])
    }

    pub fn sign(&self, g: usize) -> Result<f64> {
        self.check(g, Field::Sign, true)?;
        Ok(if self.s.p[g] < 0.5 { 1.0 } else { -1.0 })
    }

    pub fn y(&self, g: usize) -> Result<Vec<f64>> {
        self.check(g, Field::Y, false)?;
        Ok(self.s.members[g].iter().map(|&i| self.s.dataset.y(i)).collect())
    }

    pub fn a(&self, g: usize) -> Result<Vec<u8>> {
        self.check(g, Field::A, true)?;
        Ok(self.s.members[g].iter().map(|&i| self.s.dataset.a(i)).collect())
    }

    /// Covariates of the group's first member.
    pub fn x(&self, g: usize) -> Result<Vec<f64>> {
        self.check(g, Field::X, false)?;
        Ok(self.s.dataset.x(self.s.members[g][0]).to_vec())
    }
}

fn group_features(view: &GroupView, g: usize) -> Result<Vec<f64>> {
    let y = view.y(g)?;
    let mut f = vec![view.p1(g)?];
    f.extend(view.x(g)?);
    f.push(y.iter().sum::<f64>() / y.len() as f64);
    Ok(f)
}

/// Group scores; the lowest is excluded next, ties broken by weaker
/// evidence (larger `P¹`) and then lower group id.
fn group_scores(spec: &StrategySpec, seed: u64, view: &GroupView) -> Result<Vec<(usize, f64, f64)>> {
    let cands: Vec<usize> = view.candidates().collect();
    let p1: Vec<f64> = cands.iter().map(|&g| view.p1(g)).collect::<Result<_>>()?;
    let weak = |k: usize| -p1[k];
    match spec.kind {
        StrategyKind::MinAbs => Ok(cands.iter().enumerate().map(|(k, &g)| (g, weak(k), 0.0)).collect()),
        StrategyKind::Random => {
            let mut r = rng::rng(seed);
            Ok(cands.iter().map(|&g| (g, r.random::<f64>(), 0.0)).collect())
        }
        StrategyKind::MinProb => {
            let revealed: Vec<usize> = view.revealed().collect();
            let labels: Vec<f64> = revealed.iter().map(|&g| view.sign(g)).collect::<Result<_>>()?;
            let both = labels.iter().any(|&v| v > 0.0) && labels.iter().any(|&v| v < 0.0);
            if !both {
                return Ok(cands.iter().enumerate().map(|(k, &g)| (g, weak(k), 0.0)).collect());
            }
            let rows: Vec<Vec<f64>> = revealed.iter().map(|&g| group_features(view, g)).collect::<Result<_>>()?;
            let mut x = Features::new(rows[0].len());
            rows.iter().for_each(|r| x.push(r));
            let model = fit(&spec.learner.with_kind(LearnerKind::ForestClassifier).with_seed(seed), &x, &labels)?;
            cands
                .iter()
                .enumerate()
                .map(|(k, &g)| Ok((g, model.predict(&group_features(view, g)?), weak(k))))
                .collect()
        }
        other => Err(invalid(format!("strategy {other:?} is not available for subgroups"))),
    }
}

/// Runs the interactive subgroup procedure with an automated explorer.
pub fn run_subgroup_interactive(
    dataset: &Dataset,
    grouping: &Grouping,
    p: &[f64],
    alpha: f64,
    strategy: &StrategySpec,
) -> Result<HalfRun> {
    if !matches!(strategy.kind, StrategyKind::MinAbs | StrategyKind::MinProb | StrategyKind::Random) {
        return Err(invalid(format!("strategy {:?} is not available for subgroups", strategy.kind)));
    }
    if strategy.refit_every == 0 {
        return Err(invalid("refit_every must be positive"));
    }
    let mut session = GroupSession::open(dataset, grouping, p, alpha)?;
    let mut cache: std::collections::HashMap<usize, (f64, f64)> = Default::default();
    let mut last_fit: Option<usize> = None;
    let mut fits = 0u64;
    while !session.ledger().stopped() {
        let next = {
            let view = session.view();
            let t = view.t();
            if last_fit.is_none_or(|l| t >= l + strategy.refit_every) {
                let scored = group_scores(strategy, rng::derive(strategy.seed, fits), &view)?;
                cache = scored.into_iter().map(|(g, a, b)| (g, (a, b))).collect();
                last_fit = Some(t);
                fits += 1;
            }
            view.candidates()
                .min_by(|&g, &h| {
                    let (a, b) = (cache[&g], cache[&h]);
                    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(g.cmp(&h))
                })
                .expect("not stopped, so candidates remain")
        };
        session.exclude(next)?;
    }
    let ledger = session.ledger();
    Ok(HalfRun {
        units: (0..p.len()).collect(),
        rejected: ledger.rejection_set()?,
        tau: ledger.t(),
        trajectory: ledger.trajectory().to_vec(),
        exclusions: ledger.exclusions().to_vec(),
        masked_reads: session.audit().masked_reads(),
    })
}
