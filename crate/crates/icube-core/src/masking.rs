//! Masking protocol between the oracle, which holds the full data, and the
//! explorer, which only sees an [`ExplorerView`].
//!
//! Every unit starts as a candidate with its assignment (and, in MaY modes,
//! its outcome) hidden. Excluding a candidate reveals it. The protocol stops
//! as soon as the estimated false discovery proportion
//! `(|R⁻|+1)/max(|R⁺|,1)` is at most `α` or no candidates remain, and then
//! rejects the remaining candidates with positive effect estimates.
//!
//! Views borrow the session, so they are immutable snapshots: the borrow
//! checker rules out an exclusion while any view is alive. Every field read
//! through a view is appended to the session's audit log; reads of masked
//! fields are logged as violations and return [`Error::MaskedRead`].

use crate::data::Dataset;
use crate::error::{illegal, invalid, Error, Result};
use crate::models::{fit, Features, LearnerSpec};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingMode {
    /// Assignments hidden; outcomes, covariates and residuals visible.
    Crossfit,
    /// Assignments and outcomes hidden; only covariates visible.
    May,
    PairedCrossfit,
    PairedMay,
}

impl MaskingMode {
    pub fn is_paired(self) -> bool {
        matches!(self, MaskingMode::PairedCrossfit | MaskingMode::PairedMay)
    }

    pub fn masks_outcome(self) -> bool {
        matches!(self, MaskingMode::May | MaskingMode::PairedMay)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Y,
    A,
    X,
    Residual,
    DeltaHat,
    /// Group p-value.
    PValue,
    /// Sign of a group's evidence, `+1` when the p-value is below one half.
    Sign,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::Y => "y",
            Field::A => "a",
            Field::X => "x",
            Field::Residual => "residual",
            Field::DeltaHat => "delta_hat",
            Field::PValue => "p_value",
            Field::Sign => "sign",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Candidate,
    Excluded,
    Complement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Access {
    Allowed,
    Masked,
    Unavailable,
}

fn access(mode: MaskingMode, role: Role, field: Field) -> Access {
    if (field == Field::Residual && mode.is_paired()) || matches!(field, Field::PValue | Field::Sign) {
        return Access::Unavailable;
    }
    if role != Role::Candidate || field == Field::X {
        return Access::Allowed;
    }
    match field {
        Field::A | Field::DeltaHat => Access::Masked,
        Field::Y | Field::Residual if mode.masks_outcome() => Access::Masked,
        _ => Access::Allowed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub unit: usize,
    pub field: Field,
    pub t: usize,
    pub allowed: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AuditLog {
    pub entries: Vec<AuditEntry>,
}

impl AuditLog {
    pub fn masked_reads(&self) -> usize {
        self.entries.iter().filter(|e| !e.allowed).count()
    }
}

/// Sign bookkeeping shared by every masked procedure: candidate set, counts
/// of positive and non-positive candidates, `t`, stopping and the trajectory.
#[derive(Debug, Clone)]
pub struct SignLedger {
    alpha: f64,
    positive: Vec<Option<bool>>,
    candidates: BTreeSet<usize>,
    pos: usize,
    neg: usize,
    stopped: bool,
    trajectory: Vec<f64>,
    exclusions: Vec<usize>,
}

/// Result of one exclusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Receipt {
    pub unit_id: usize,
    pub t: usize,
    pub fdr_hat: f64,
    pub pos_count: usize,
    pub neg_count: usize,
    pub stopped: bool,
}

impl SignLedger {
    /// `units` pairs each unit id with whether its effect estimate is positive.
    pub fn new(alpha: f64, units: &[(usize, bool)]) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let max_id = units.iter().map(|u| u.0).max().unwrap_or(0);
        let mut positive = vec![None; max_id + 1];
        let mut candidates = BTreeSet::new();
        let (mut pos, mut neg) = (0, 0);
        for &(id, p) in units {
            if !candidates.insert(id) {
                return Err(invalid(format!("unit {id} listed twice")));
            }
            positive[id] = Some(p);
            if p {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        let mut ledger =
            SignLedger { alpha, positive, candidates, pos, neg, stopped: false, trajectory: Vec::new(), exclusions: Vec::new() };
        ledger.record();
        Ok(ledger)
    }

    fn record(&mut self) {
        let f = self.fdr_hat();
        self.trajectory.push(f);
        self.stopped = f <= self.alpha || self.candidates.is_empty();
    }

    pub fn fdr_hat(&self) -> f64 {
        (self.neg as f64 + 1.0) / self.pos.max(1) as f64
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn t(&self) -> usize {
        self.exclusions.len()
    }

    pub fn pos_count(&self) -> usize {
        self.pos
    }

    pub fn neg_count(&self) -> usize {
        self.neg
    }

    pub fn stopped(&self) -> bool {
        self.stopped
    }

    pub fn candidates(&self) -> &BTreeSet<usize> {
        &self.candidates
    }

    pub fn is_candidate(&self, id: usize) -> bool {
        self.candidates.contains(&id)
    }

    pub fn trajectory(&self) -> &[f64] {
        &self.trajectory
    }

    pub fn exclusions(&self) -> &[usize] {
        &self.exclusions
    }

    pub fn exclude(&mut self, id: usize) -> Result<Receipt> {
        if !self.candidates.contains(&id) {
            return Err(invalid(format!("unit {id} is not a candidate")));
        }
        if self.stopped {
            return Err(illegal("the procedure has already stopped"));
        }
        self.candidates.remove(&id);
        if self.positive[id] == Some(true) {
            self.pos -= 1;
        } else {
            self.neg -= 1;
        }
        self.exclusions.push(id);
        self.record();
        Ok(Receipt {
            unit_id: id,
            t: self.t(),
            fdr_hat: self.fdr_hat(),
            pos_count: self.pos,
            neg_count: self.neg,
            stopped: self.stopped,
        })
    }

    /// Candidates with positive estimates at the stopping time.
    pub fn rejection_set(&self) -> Result<Vec<usize>> {
        if !self.stopped {
            return Err(illegal("the procedure has not stopped"));
        }
        Ok(self.candidates.iter().copied().filter(|&id| self.positive[id] == Some(true)).collect())
    }
}

/// Which units a session tests and which are revealed from the start.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub mode: MaskingMode,
    pub alpha: f64,
    /// Subject ids in unpaired modes, pair ids in paired modes.
    pub units: Vec<usize>,
    pub complement: Vec<usize>,
    /// Learner for the outcome model behind the residuals (unpaired modes).
    pub outcome_model: LearnerSpec,
}

/// Oracle-side state of one masked testing run.
#[derive(Debug)]
pub struct Session {
    dataset: Arc<Dataset>,
    mode: MaskingMode,
    ledger: SignLedger,
    role: Vec<Option<Role>>,
    delta_hat: Vec<f64>,
    residual: Vec<f64>,
    audit: Mutex<AuditLog>,
}

/// Outcome-model predictions `m̂(x_i)` for every subject. Crossfit uses all
/// subjects' outcomes and covariates; MaY uses the complement only. Neither
/// looks at assignments.
fn outcome_predictions(dataset: &Dataset, train: &[usize], spec: &LearnerSpec) -> Result<Vec<f64>> {
    let mut x = Features::new(dataset.d());
    let mut y = Vec::with_capacity(train.len());
    for &i in train {
        if dataset.d() > 0 {
            x.push(dataset.x(i));
        }
        y.push(dataset.y(i));
    }
    let model = fit(spec, &x, &y)?;
    Ok((0..dataset.n()).map(|i| model.predict(dataset.x(i))).collect())
}

impl Session {
    pub fn open(dataset: Arc<Dataset>, config: &SessionConfig) -> Result<Session> {
        let mode = config.mode;
        let n_units = if mode.is_paired() {
            dataset.pairs().ok_or_else(|| invalid("paired mode needs a paired dataset"))?.len()
        } else {
            dataset.n()
        };
        if config.units.is_empty() {
            return Err(invalid("no units to test"));
        }
        let mut role = vec![None; n_units];
        for (&id, r) in config.units.iter().map(|i| (i, Role::Candidate)).chain(config.complement.iter().map(|i| (i, Role::Complement))) {
            if id >= n_units {
                return Err(invalid(format!("unit {id} does not exist")));
            }
            if role[id].replace(r).is_some() {
                return Err(invalid(format!("unit {id} listed twice")));
            }
        }
        let (delta_hat, residual) = if mode.is_paired() {
            let pairs = dataset.pairs().expect("checked above");
            let dh: Vec<f64> = pairs
                .iter()
                .map(|m| (dataset.a(m[0]) as f64 - dataset.a(m[1]) as f64) * (dataset.y(m[0]) - dataset.y(m[1])))
                .collect();
            (dh, Vec::new())
        } else {
            let train: Vec<usize> = if mode == MaskingMode::May {
                if config.complement.is_empty() {
                    return Err(invalid("MaY masking needs a non-empty complement for the outcome model"));
                }
                config.complement.clone()
            } else {
                (0..dataset.n()).collect()
            };
            let m = outcome_predictions(&dataset, &train, &config.outcome_model)?;
            let res: Vec<f64> = (0..dataset.n()).map(|i| dataset.y(i) - m[i]).collect();
            let dh = (0..dataset.n()).map(|i| 4.0 * (dataset.a(i) as f64 - 0.5) * res[i]).collect();
            (dh, res)
        };
        let signs: Vec<(usize, bool)> = config.units.iter().map(|&id| (id, delta_hat[id] > 0.0)).collect();
        let ledger = SignLedger::new(config.alpha, &signs)?;
        Ok(Session { dataset, mode, ledger, role, delta_hat, residual, audit: Mutex::new(AuditLog::default()) })
    }

    pub fn mode(&self) -> MaskingMode {
        self.mode
    }

    pub fn ledger(&self) -> &SignLedger {
        &self.ledger
    }

    pub fn view(&self) -> ExplorerView<'_> {
        debug_assert!(self.ledger.candidates().iter().all(|&id| self.role[id] == Some(Role::Candidate)));
        ExplorerView { s: self }
    }

    pub fn exclude(&mut self, id: usize) -> Result<Receipt> {
        let receipt = self.ledger.exclude(id)?;
        self.role[id] = Some(Role::Excluded);
        Ok(receipt)
    }

    pub fn rejection_set(&self) -> Result<Vec<usize>> {
        self.ledger.rejection_set()
    }

    pub fn audit(&self) -> AuditLog {
        self.audit.lock().expect("audit lock").clone()
    }
}

/// Read-only window onto a session at its current `t`.
#[derive(Clone, Copy)]
pub struct ExplorerView<'a> {
    s: &'a Session,
}

impl<'a> ExplorerView<'a> {
    pub fn mode(&self) -> MaskingMode {
        self.s.mode
    }

    pub fn t(&self) -> usize {
        self.s.ledger.t()
    }

    pub fn alpha(&self) -> f64 {
        self.s.ledger.alpha()
    }

    pub fn pos_count(&self) -> usize {
        self.s.ledger.pos_count()
    }

    pub fn neg_count(&self) -> usize {
        self.s.ledger.neg_count()
    }

    pub fn fdr_hat(&self) -> f64 {
        self.s.ledger.fdr_hat()
    }

    pub fn stopped(&self) -> bool {
        self.s.ledger.stopped()
    }

    pub fn covariate_dim(&self) -> usize {
        self.s.dataset.d()
    }

    pub fn candidates(&self) -> impl Iterator<Item = usize> + 'a {
        self.s.ledger.candidates().iter().copied()
    }

    pub fn n_candidates(&self) -> usize {
        self.s.ledger.candidates().len()
    }

    /// Excluded and complement units, in id order.
    pub fn revealed(&self) -> impl Iterator<Item = usize> + 'a {
        self.s.role.iter().enumerate().filter_map(|(i, r)| matches!(r, Some(Role::Excluded | Role::Complement)).then_some(i))
    }

    pub fn role(&self, id: usize) -> Option<Role> {
        self.s.role.get(id).copied().flatten()
    }

    fn members(&self, id: usize) -> Vec<usize> {
        match self.s.dataset.pairs() {
            Some(p) if self.s.mode.is_paired() => p[id].to_vec(),
            _ => vec![id],
        }
    }

    fn check(&self, id: usize, field: Field) -> Result<()> {
        let role = self.role(id).ok_or_else(|| invalid(format!("unit {id} is not part of this session")))?;
        let t = self.t();
        match access(self.s.mode, role, field) {
            Access::Unavailable => Err(invalid(format!("field {} does not exist in this mode", field.name()))),
            a => {
                let allowed = a == Access::Allowed;
                self.s.audit.lock().expect("audit lock").entries.push(AuditEntry { unit: id, field, t, allowed });
                if allowed {
                    Ok(())
                } else {
                    log::error!("masked read of {} for unit {id} at t={t}", field.name());
                    Err(Error::MaskedRead { unit: id, field: field.name(), t })
                }
            }
        }
    }

    /// True when `field` of unit `id` may be read now.
    pub fn is_readable(&self, id: usize, field: Field) -> bool {
        self.role(id).is_some_and(|r| access(self.s.mode, r, field) == Access::Allowed)
    }

    /// Outcomes of the unit's members (one, or two for a pair).
    pub fn y(&self, id: usize) -> Result<Vec<f64>> {
        self.check(id, Field::Y)?;
        Ok(self.members(id).into_iter().map(|i| self.s.dataset.y(i)).collect())
    }

    pub fn a(&self, id: usize) -> Result<Vec<u8>> {
        self.check(id, Field::A)?;
        Ok(self.members(id).into_iter().map(|i| self.s.dataset.a(i)).collect())
    }

    pub fn x(&self, id: usize) -> Result<Vec<&'a [f64]>> {
        self.check(id, Field::X)?;
        let ds: &'a Dataset = &self.s.dataset;
        Ok(self.members(id).into_iter().map(|i| ds.x(i)).collect())
    }

    /// `y - m̂(x)` of an unpaired unit.
    pub fn residual(&self, id: usize) -> Result<f64> {
        self.check(id, Field::Residual)?;
        Ok(self.s.residual[id])
    }

    pub fn delta_hat(&self, id: usize) -> Result<f64> {
        self.check(id, Field::DeltaHat)?;
        Ok(self.s.delta_hat[id])
    }

    /// Serializable copy holding exactly the readable fields.
    pub fn snapshot(&self) -> ViewSnapshot {
        let ids: Vec<usize> = (0..self.s.role.len()).filter(|&i| self.s.role[i].is_some()).collect();
        let units = ids
            .into_iter()
            .map(|id| {
                let role = self.role(id).expect("filtered");
                let pack = |v: Vec<f64>| PerMember::from_vec(v);
                UnitSnapshot {
                    id,
                    role,
                    x: PerMember::from_vec(self.x(id).expect("always readable").into_iter().map(<[f64]>::to_vec).collect()),
                    y: self.is_readable(id, Field::Y).then(|| pack(self.y(id).expect("readable"))),
                    a: self.is_readable(id, Field::A).then(|| PerMember::from_vec(self.a(id).expect("readable"))),
                    residual: self.is_readable(id, Field::Residual).then(|| self.residual(id).expect("readable")),
                    delta_hat: self.is_readable(id, Field::DeltaHat).then(|| self.delta_hat(id).expect("readable")),
                }
            })
            .collect();
        ViewSnapshot {
            mode: self.mode(),
            t: self.t(),
            alpha: self.alpha(),
            pos_count: self.pos_count(),
            neg_count: self.neg_count(),
            fdr_hat: self.fdr_hat(),
            stopped: self.stopped(),
            units,
        }
    }
}

/// One value per member: a scalar for subjects, a two-element array for pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerMember<T> {
    One(T),
    Two([T; 2]),
}

impl<T> PerMember<T> {
    fn from_vec(mut v: Vec<T>) -> Self {
        if v.len() == 2 {
            let b = v.pop().expect("len 2");
            let a = v.pop().expect("len 2");
            PerMember::Two([a, b])
        } else {
            PerMember::One(v.pop().expect("one member"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSnapshot {
    pub id: usize,
    pub role: Role,
    pub x: PerMember<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub y: Option<PerMember<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub a: Option<PerMember<u8>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSnapshot {
    pub mode: MaskingMode,
    pub t: usize,
    pub alpha: f64,
    pub pos_count: usize,
    pub neg_count: usize,
    pub fdr_hat: f64,
    pub stopped: bool,
    pub units: Vec<UnitSnapshot>,
}
