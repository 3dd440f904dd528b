//! Randomized-experiment datasets, their ground truth, synthetic generators and
//! CSV persistence.
//!
//! A [`Dataset`] holds only what an analyst may eventually observe: outcome,
//! assignment, covariates and optional pairing. Potential outcomes and
//! hypothesis labels live in a separate [`GroundTruth`] that the masking layer
//! never receives.

use crate::error::{invalid, Error, Result};
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Observed data of a randomized experiment. Subject ids are `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    a: Vec<u8>,
    x: Vec<f64>,
    d: usize,
    pairs: Option<Vec<[usize; 2]>>,
}

impl Dataset {
    /// `x` is row-major with `d` columns. `pair_id[i]` must form pairs with ids
    /// `0..n/2`, each containing exactly one treated subject.
    pub fn new(
        y: Vec<f64>,
        a: Vec<u8>,
        x: Vec<f64>,
        d: usize,
        pair_id: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = y.len();
        if a.len() != n || x.len() != n * d {
            return Err(invalid("column lengths disagree"));
        }
        if let Some(i) = a.iter().position(|&v| v > 1) {
            return Err(invalid(format!("assignment of subject {i} is not 0/1")));
        }
        let pairs = match pair_id {
            None => None,
            Some(p) => Some(build_pairs(&p, &a).map_err(|(_, m)| invalid(m))?),
        };
        Ok(Dataset { y, a, x, d, pairs })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn a(&self, i: usize) -> u8 {
        self.a[i]
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn assignments(&self) -> &[u8] {
        &self.a
    }

    pub fn is_paired(&self) -> bool {
        self.pairs.is_some()
    }

    /// Members of each pair indexed by pair id, lower subject id first.
    pub fn pairs(&self) -> Option<&[[usize; 2]]> {
        self.pairs.as_deref()
    }

    pub fn pair_of(&self) -> Option<Vec<usize>> {
        self.pairs.as_ref().map(|p| {
            let mut out = vec![0; self.n()];
            for (k, m) in p.iter().enumerate() {
                out[m[0]] = k;
                out[m[1]] = k;
            }
            out
        })
    }

    /// Copy with the members of every pair exchanging their row positions.
    pub fn swap_pair_members(&self) -> Result<Dataset> {
        let pairs = self.pairs.as_ref().ok_or_else(|| invalid("dataset is not paired"))?;
        let mut perm: Vec<usize> = (0..self.n()).collect();
        for m in pairs {
            perm[m[0]] = m[1];
            perm[m[1]] = m[0];
        }
        let y = perm.iter().map(|&j| self.y[j]).collect();
        let a = perm.iter().map(|&j| self.a[j]).collect();
        let x = perm.iter().flat_map(|&j| self.x(j).to_vec()).collect();
        Dataset::new(y, a, x, self.d, self.pair_of())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string(), "y".into(), "a".into()];
        header.extend((0..self.d).map(|j| format!("x{j}")));
        if self.pairs.is_some() {
            header.push("pair_id".into());
        }
        out.write_record(&header).map_err(csv_io)?;
        let pair_of = self.pair_of();
        for i in 0..self.n() {
            let mut row = vec![i.to_string(), self.y[i].to_string(), self.a[i].to_string()];
            row.extend(self.x(i).iter().map(|v| v.to_string()));
            if let Some(p) = &pair_of {
                row.push(p[i].to_string());
            }
            out.write_record(&row).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rdr.headers().map_err(csv_parse)?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 || cols[0] != "id" || cols[1] != "y" || cols[2] != "a" {
            return Err(Error::Parse { line: 1, message: "header must start with id,y,a".into() });
        }
        let paired = cols.last() == Some(&"pair_id");
        let d = cols.len() - 3 - paired as usize;
        for (j, c) in cols[3..3 + d].iter().enumerate() {
            if *c != format!("x{j}") {
                return Err(Error::Parse { line: 1, message: format!("expected column x{j}, found {c}") });
            }
        }
        let mut rows: Vec<(usize, f64, u8, Vec<f64>, usize, u64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_parse)?;
            let line = rec.position().map_or(0, |p| p.line());
            let id: usize = parse_field(&rec, 0, line, "id")?;
            let y: f64 = parse_field(&rec, 1, line, "y")?;
            let a: u8 = parse_field(&rec, 2, line, "a")?;
            if a > 1 {
                return Err(Error::Parse { line, message: format!("a must be 0 or 1, found {a}") });
            }
            let x = (0..d)
                .map(|j| parse_field(&rec, 3 + j, line, "x"))
                .collect::<Result<Vec<f64>>>()?;
            let p = if paired { parse_field(&rec, 3 + d, line, "pair_id")? } else { 0 };
            rows.push((id, y, a, x, p, line));
        }
        let n = rows.len();
        let mut line_of = vec![None; n];
        for r in &rows {
            if r.0 >= n {
                return Err(Error::Parse { line: r.5, message: format!("id {} outside 0..{n}", r.0) });
            }
            if line_of[r.0].replace(r.5).is_some() {
                return Err(Error::Parse { line: r.5, message: format!("duplicate id {}", r.0) });
            }
        }
        rows.sort_by_key(|r| r.0);
        let a: Vec<u8> = rows.iter().map(|r| r.2).collect();
        let pairs = if paired {
            let pid: Vec<usize> = rows.iter().map(|r| r.4).collect();
            let built = build_pairs(&pid, &a).map_err(|(i, message)| Error::Parse {
                line: line_of[i].unwrap_or(0),
                message,
            })?;
            Some(built)
        } else {
            None
        };
        Ok(Dataset {
            y: rows.iter().map(|r| r.1).collect(),
            a,
            x: rows.iter().flat_map(|r| r.3.clone()).collect(),
            d,
            pairs,
        })
    }
}

/// Returns the offending subject on failure.
fn build_pairs(pair_id: &[usize], a: &[u8]) -> std::result::Result<Vec<[usize; 2]>, (usize, String)> {
    let n = pair_id.len();
    if n % 2 != 0 {
        return Err((n.saturating_sub(1), "paired data needs an even number of subjects".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n / 2];
    for (i, &p) in pair_id.iter().enumerate() {
        if p >= n / 2 {
            return Err((i, format!("pair_id {p} outside 0..{}", n / 2)));
        }
        members[p].push(i);
        if members[p].len() > 2 {
            return Err((i, format!("pair {p} has more than 2 members")));
        }
    }
    let mut out = Vec::with_capacity(n / 2);
    for (p, m) in members.into_iter().enumerate() {
        if m.len() != 2 {
            let at = m.first().copied().unwrap_or(0);
            return Err((at, format!("pair {p} has {} member(s)", m.len())));
        }
        if a[m[0]] + a[m[1]] != 1 {
            return Err((m[1], format!("pair {p} must have exactly one treated member")));
        }
        out.push([m[0], m[1]]);
    }
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, j: usize, line: u64, name: &str) -> Result<T> {
    let raw = rec.get(j).ok_or_else(|| Error::Parse { line, message: format!("missing {name}") })?;
    raw.trim().parse().map_err(|_| Error::Parse { line, message: format!("bad {name} value `{raw}`") })
}

fn csv_parse(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, message: format!("{other:?}") },
    }
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Potential outcomes and hypothesis labels of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub y_t: f64,
    pub y_c: f64,
    pub is_zero_null: bool,
    pub is_nonpositive_null: bool,
    pub is_positive: bool,
}

impl TruthRecord {
    fn from_outcomes(y_c: f64, effect: f64) -> Self {
        TruthRecord {
            y_t: y_c + effect,
            y_c,
            is_zero_null: effect == 0.0,
            is_nonpositive_null: effect <= 0.0,
            is_positive: effect > 0.0,
        }
    }
}

/// Oracle-side truth, indexed by subject id.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub records: Vec<TruthRecord>,
}

impl GroundTruth {
    pub fn labels(&self) -> Labels {
        Labels {
            ids: (0..self.records.len()).collect(),
            zero_null: self.records.iter().map(|r| r.is_zero_null).collect(),
            nonpositive_null: self.records.iter().map(|r| r.is_nonpositive_null).collect(),
            positive: self.records.iter().map(|r| r.is_positive).collect(),
        }
    }

    /// Pair-level labels: a pair is a null when both members are nulls of that
    /// kind, and positive otherwise.
    pub fn pair_labels(&self, pairs: &[[usize; 2]]) -> Labels {
        let r = &self.records;
        let zero: Vec<bool> = pairs.iter().map(|m| r[m[0]].is_zero_null && r[m[1]].is_zero_null).collect();
        let nonpos: Vec<bool> =
            pairs.iter().map(|m| r[m[0]].is_nonpositive_null && r[m[1]].is_nonpositive_null).collect();
        Labels {
            ids: (0..pairs.len()).collect(),
            positive: nonpos.iter().map(|v| !v).collect(),
            zero_null: zero,
            nonpositive_null: nonpos,
        }
    }

    /// Group-level labels, by the same rule as [`GroundTruth::pair_labels`].
    pub fn group_labels(&self, grouping: &Grouping) -> Labels {
        let g = grouping.n_groups();
        let mut zero = vec![true; g];
        let mut nonpos = vec![true; g];
        for (i, r) in self.records.iter().enumerate() {
            let k = grouping.group_of[i];
            zero[k] &= r.is_zero_null;
            nonpos[k] &= r.is_nonpositive_null;
        }
        Labels {
            ids: (0..g).collect(),
            positive: nonpos.iter().map(|v| !v).collect(),
            zero_null: zero,
            nonpositive_null: nonpos,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["id", "y_t", "y_c", "is_zero_null", "is_nonpositive_null", "is_positive"])
            .map_err(csv_io)?;
        let b = |v: bool| if v { "1" } else { "0" };
        for (i, r) in self.records.iter().enumerate() {
            out.write_record([
                i.to_string(),
                r.y_t.to_string(),
                r.y_c.to_string(),
                b(r.is_zero_null).into(),
                b(r.is_nonpositive_null).into(),
                b(r.is_positive).into(),
            ])
            .map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<GroundTruth> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rdr.headers().map_err(csv_parse)?.clone();
        let expected = ["id", "y_t", "y_c", "is_zero_null", "is_nonpositive_null", "is_positive"];
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse { line: 1, message: format!("header must be {}", expected.join(",")) });
        }
        let mut rows: Vec<(usize, TruthRecord, u64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_parse)?;
            let line = rec.position().map_or(0, |p| p.line());
            let flag = |j: usize, name: &str| -> Result<bool> {
                match parse_field::<u8>(&rec, j, line, name)? {
                    0 => Ok(false),
                    1 => Ok(true),
                    v => Err(Error::Parse { line, message: format!("{name} must be 0 or 1, found {v}") }),
                }
            };
            let record = TruthRecord {
                y_t: parse_field(&rec, 1, line, "y_t")?,
                y_c: parse_field(&rec, 2, line, "y_c")?,
                is_zero_null: flag(3, "is_zero_null")?,
                is_nonpositive_null: flag(4, "is_nonpositive_null")?,
                is_positive: flag(5, "is_positive")?,
            };
            rows.push((parse_field(&rec, 0, line, "id")?, record, line));
        }
        let n = rows.len();
        let mut seen = vec![false; n];
        for r in &rows {
            if r.0 >= n {
                return Err(Error::Parse { line: r.2, message: format!("id {} outside 0..{n}", r.0) });
            }
            if std::mem::replace(&mut seen[r.0], true) {
                return Err(Error::Parse { line: r.2, message: format!("duplicate id {}", r.0) });
            }
        }
        rows.sort_by_key(|r| r.0);
        Ok(GroundTruth { records: rows.into_iter().map(|r| r.1).collect() })
    }
}

/// Hypothesis labels over arbitrary units (subjects, pairs or groups).
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub ids: Vec<usize>,
    pub zero_null: Vec<bool>,
    pub nonpositive_null: Vec<bool>,
    pub positive: Vec<bool>,
}

/// Partition of subjects into groups `0..n_groups`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub group_of: Vec<usize>,
}

impl Grouping {
    pub fn n_groups(&self) -> usize {
        self.group_of.iter().max().map_or(0, |m| m + 1)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["id", "group"]).map_err(csv_io)?;
        for (i, g) in self.group_of.iter().enumerate() {
            out.write_record([i.to_string(), g.to_string()]).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Grouping> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header = rdr.headers().map_err(csv_parse)?.clone();
        if header.iter().collect::<Vec<_>>() != ["id", "group"] {
            return Err(Error::Parse { line: 1, message: "header must be id,group".into() });
        }
        let mut rows: Vec<(usize, usize, u64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_parse)?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((parse_field(&rec, 0, line, "id")?, parse_field(&rec, 1, line, "group")?, line));
        }
        let n = rows.len();
        let mut group_of = vec![None; n];
        for &(id, g, line) in &rows {
            if id >= n {
                return Err(Error::Parse { line, message: format!("id {id} outside 0..{n}") });
            }
            if group_of[id].replace(g).is_some() {
                return Err(Error::Parse { line, message: format!("duplicate id {id}") });
            }
        }
        Ok(Grouping { group_of: group_of.into_iter().map(|g| g.expect("ids cover 0..n")).collect() })
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_groups()];
        for (i, &g) in self.group_of.iter().enumerate() {
            out[g].push(i);
        }
        out
    }
}

/// Treatment-effect models. `Δ(x)` is the effect at covariate vector `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectModel {
    /// `S·[5·x3³·1{x3>1} − x1/2]`: a sparse positive effect plus a mild negative one.
    BiasSparse { scale: f64 },
    /// `S·[2·x1·x2 + 2·x3]`.
    LinearBoth { scale: f64 },
    /// `S·5·x3³·1{x3>1}`.
    SparseOneside { scale: f64 },
    /// `S·5·x3³·1{|x3|>1}`.
    SparseTwoside { scale: f64 },
    /// `δ` when the 40-level covariate is even (a multiple of 4 when `sparse`).
    ConstantEvenCovariate { delta: f64, sparse: bool },
    /// `δ` when the 40-level covariate is at most 20.
    ConstantLowCovariate { delta: f64 },
    /// Sparse Gaussian sequence with signal `√(2r·ln n)` on `⌊n^(1−β)⌋` units.
    GaussianSequence { r: f64, beta: f64 },
}

impl EffectModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EffectModel::BiasSparse { .. } => "bias_sparse",
            EffectModel::LinearBoth { .. } => "linear_both",
            EffectModel::SparseOneside { .. } => "sparse_oneside",
            EffectModel::SparseTwoside { .. } => "sparse_twoside",
            EffectModel::ConstantEvenCovariate { sparse: false, .. } => "constant_even_covariate",
            EffectModel::ConstantEvenCovariate { sparse: true, .. } => "constant_even_covariate_sparse",
            EffectModel::ConstantLowCovariate { .. } => "constant_low_covariate",
            EffectModel::GaussianSequence { .. } => "gaussian_sequence",
        }
    }

    /// Builds a model from its kind name and a scalar strength (`S` or `δ`).
    pub fn from_kind(kind: &str, strength: f64) -> Result<Self> {
        Ok(match kind.replace('-', "_").as_str() {
            "bias_sparse" => EffectModel::BiasSparse { scale: strength },
            "linear_both" => EffectModel::LinearBoth { scale: strength },
            "sparse_oneside" => EffectModel::SparseOneside { scale: strength },
            "sparse_twoside" => EffectModel::SparseTwoside { scale: strength },
            "constant_even_covariate" => EffectModel::ConstantEvenCovariate { delta: strength, sparse: false },
            "constant_even_covariate_sparse" => EffectModel::ConstantEvenCovariate { delta: strength, sparse: true },
            "constant_low_covariate" => EffectModel::ConstantLowCovariate { delta: strength },
            other => return Err(invalid(format!("unknown effect kind `{other}`"))),
        })
    }

    /// Scale `S`, `δ` or `r`, whichever parameterizes the model.
    pub fn strength(&self) -> f64 {
        match *self {
            EffectModel::BiasSparse { scale }
            | EffectModel::LinearBoth { scale }
            | EffectModel::SparseOneside { scale }
            | EffectModel::SparseTwoside { scale } => scale,
            EffectModel::ConstantEvenCovariate { delta, .. } | EffectModel::ConstantLowCovariate { delta } => delta,
            EffectModel::GaussianSequence { r, .. } => r,
        }
    }

    fn is_three_covariate(&self) -> bool {
        matches!(
            self,
            EffectModel::BiasSparse { .. }
                | EffectModel::LinearBoth { .. }
                | EffectModel::SparseOneside { .. }
                | EffectModel::SparseTwoside { .. }
        )
    }

    /// Treatment effect at `x`. Gaussian-sequence effects are not a function
    /// of covariates and evaluate to zero here.
    pub fn effect(&self, x: &[f64]) -> f64 {
        let cubic = |x3: f64| 5.0 * x3 * x3 * x3;
        match *self {
            EffectModel::BiasSparse { scale } => {
                let pos = if x[2] > 1.0 { cubic(x[2]) } else { 0.0 };
                scale * (pos - x[0] / 2.0)
            }
            EffectModel::LinearBoth { scale } => scale * (2.0 * x[0] * x[1] + 2.0 * x[2]),
            EffectModel::SparseOneside { scale } => {
                if x[2] > 1.0 {
                    scale * cubic(x[2])
                } else {
                    0.0
                }
            }
            EffectModel::SparseTwoside { scale } => {
                if x[2].abs() > 1.0 {
                    scale * cubic(x[2])
                } else {
                    0.0
                }
            }
            EffectModel::ConstantEvenCovariate { delta, sparse } => {
                let m = if sparse { 4 } else { 2 };
                if (x[0] as i64) % m == 0 {
                    delta
                } else {
                    0.0
                }
            }
            EffectModel::ConstantLowCovariate { delta } => {
                if x[0] <= 20.0 {
                    delta
                } else {
                    0.0
                }
            }
            EffectModel::GaussianSequence { .. } => 0.0,
        }
    }
}

/// Binary covariates with `⌊n/2⌋` ones each and `⌊30n/500⌋` subjects having both.
fn binary_covariates(n: usize, rng: &mut rng::Rng) -> Vec<(f64, f64)> {
    let h = n / 2;
    let both = (30 * n / 500).min(h);
    let mut cells = Vec::with_capacity(n);
    cells.extend(std::iter::repeat_n((1.0, 1.0), both));
    cells.extend(std::iter::repeat_n((1.0, 0.0), h - both));
    cells.extend(std::iter::repeat_n((0.0, 1.0), h - both));
    cells.extend(std::iter::repeat_n((0.0, 0.0), n - 2 * h + both));
    cells.shuffle(rng);
    cells
}

fn three_covariates(n: usize, rng: &mut rng::Rng) -> Vec<[f64; 3]> {
    let bin = binary_covariates(n, rng);
    bin.into_iter().map(|(x1, x2)| [x1, x2, rng.sample(StandardNormal)]).collect()
}

fn baseline(x: &[f64]) -> f64 {
    5.0 * (x[0] + x[1] + x[2])
}

/// Unpaired experiment with three covariates: two balanced binaries and a
/// standard normal. `Y^C = 5(x1+x2+x3) + U`, `Y^T = Y^C + Δ(x)`, fair-coin assignment.
pub fn generate_unpaired(n: usize, effect: EffectModel, seed: u64) -> Result<(Dataset, GroundTruth)> {
    if n < 2 {
        return Err(invalid("n must be at least 2"));
    }
    if !effect.is_three_covariate() {
        return Err(invalid(format!("{} is not an unpaired three-covariate model", effect.kind_name())));
    }
    let mut rng = rng::rng(rng::derive(seed, rng::DATA));
    let cov = three_covariates(n, &mut rng);
    let mut y = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for x in &cov {
        let u: f64 = rng.sample(StandardNormal);
        let treated = rng.random_bool(0.5);
        let t = TruthRecord::from_outcomes(baseline(x) + u, effect.effect(x));
        y.push(if treated { t.y_t } else { t.y_c });
        a.push(treated as u8);
        records.push(t);
    }
    let x = cov.into_iter().flatten().collect();
    Ok((Dataset::new(y, a, x, 3, None)?, GroundTruth { records }))
}

/// Paired experiment. Pair `k` holds subjects `2k` and `2k+1`; subject `2k+1`
/// carries the base covariates and subject `2k` a perturbed copy: each binary
/// flips with probability `min(ε,1)` and `x3` shifts by `U(0, 2ε)`. Exactly one
/// member of each pair is treated.
pub fn generate_paired(
    n_pairs: usize,
    effect: EffectModel,
    mismatch: f64,
    seed: u64,
) -> Result<(Dataset, GroundTruth)> {
    if n_pairs < 1 {
        return Err(invalid("n_pairs must be at least 1"));
    }
    if !(mismatch >= 0.0) {
        return Err(invalid("mismatch must be non-negative"));
    }
    if !effect.is_three_covariate() {
        return Err(invalid(format!("{} is not a three-covariate model", effect.kind_name())));
    }
    let mut rng = rng::rng(rng::derive(seed, rng::DATA));
    let base = three_covariates(n_pairs, &mut rng);
    let flip = mismatch.min(1.0);
    let n = 2 * n_pairs;
    let (mut y, mut a, mut x, mut pid) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::new(), Vec::new());
    let mut records = Vec::with_capacity(n);
    for (k, b) in base.iter().enumerate() {
        let mut moved = *b;
        if rng.random_bool(flip) {
            moved[0] = 1.0 - moved[0];
        }
        if rng.random_bool(flip) {
            moved[1] = 1.0 - moved[1];
        }
        moved[2] += rng.random::<f64>() * 2.0 * mismatch;
        let first_treated = rng.random_bool(0.5);
        for (member, cov) in [moved, *b].iter().enumerate() {
            let u: f64 = rng.sample(StandardNormal);
            let treated = (member == 0) == first_treated;
            let t = TruthRecord::from_outcomes(baseline(cov) + u, effect.effect(cov));
            y.push(if treated { t.y_t } else { t.y_c });
            a.push(treated as u8);
            x.extend_from_slice(cov);
            pid.push(k);
            records.push(t);
        }
    }
    Ok((Dataset::new(y, a, x, 3, Some(pid))?, GroundTruth { records }))
}

/// Signal strength `√(2r·ln n)`.
pub fn gaussian_signal(n: usize, r: f64) -> f64 {
    (2.0 * r * (n as f64).ln()).sqrt()
}

/// Number of non-nulls `⌊n^(1−β)⌋`.
pub fn gaussian_non_nulls(n: usize, beta: f64) -> usize {
    let v = (n as f64).powf(1.0 - beta);
    (v + 1e-9 * v.max(1.0)).floor() as usize
}

/// Sparse Gaussian sequence: non-nulls have `Y^T ~ N(μ,1)`, `Y^C ~ N(0,1)`;
/// nulls have `Y^T = Y^C ~ N(0,1)`. With `oracle_covariate` the single
/// covariate is the non-null indicator; otherwise there are no covariates.
pub fn generate_gaussian_sequence(
    n: usize,
    r: f64,
    beta: f64,
    oracle_covariate: bool,
    seed: u64,
) -> Result<(Dataset, GroundTruth)> {
    if n < 2 {
        return Err(invalid("n must be at least 2"));
    }
    if !(0.0..=1.0).contains(&r) || !(0.0..=1.0).contains(&beta) {
        return Err(invalid("r and beta must lie in [0, 1]"));
    }
    let mu = gaussian_signal(n, r);
    let n1 = gaussian_non_nulls(n, beta).min(n);
    let mut rng = rng::rng(rng::derive(seed, rng::DATA));
    let mut non_null: Vec<bool> = (0..n).map(|i| i < n1).collect();
    non_null.shuffle(&mut rng);
    let (mut y, mut a, mut x, mut records) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &nn in &non_null {
        let u: f64 = rng.sample(StandardNormal);
        let treated = rng.random_bool(0.5);
        let t = TruthRecord::from_outcomes(u, if nn { mu } else { 0.0 });
        y.push(if treated { t.y_t } else { t.y_c });
        a.push(treated as u8);
        if oracle_covariate {
            x.push(nn as u8 as f64);
        }
        records.push(t);
    }
    Ok((Dataset::new(y, a, x, oracle_covariate as usize, None)?, GroundTruth { records }))
}

/// Experiment for subgroup identification: a 40-level covariate and a binary
/// one define 80 groups, each cell receiving `⌊n/80⌋` or `⌈n/80⌉` units.
/// `Y^C ~ N(0,1)` and `Y^T = Y^C + Δ(x)`. With `paired`, `n` counts pairs whose
/// members share covariates. The grouping covers subjects.
pub fn generate_subgroup_experiment(
    n: usize,
    effect: EffectModel,
    paired: bool,
    seed: u64,
) -> Result<(Dataset, GroundTruth, Grouping)> {
    const CELLS: usize = 80;
    if n < CELLS {
        return Err(invalid("n must be at least 80"));
    }
    if !matches!(effect, EffectModel::ConstantEvenCovariate { .. } | EffectModel::ConstantLowCovariate { .. }) {
        return Err(invalid(format!("{} is not a subgroup model", effect.kind_name())));
    }
    let mut rng = rng::rng(rng::derive(seed, rng::DATA));
    let mut cells: Vec<usize> = (0..n).map(|i| i % CELLS).collect();
    cells.shuffle(&mut rng);
    let per_unit = if paired { 2 } else { 1 };
    let (mut y, mut a, mut x, mut pid, mut group_of, mut records) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, &cell) in cells.iter().enumerate() {
        let cov = [(cell / 2 + 1) as f64, (cell % 2) as f64];
        let first_treated = rng.random_bool(0.5);
        for member in 0..per_unit {
            let u: f64 = rng.sample(StandardNormal);
            let treated = if paired { (member == 0) == first_treated } else { first_treated };
            let t = TruthRecord::from_outcomes(u, effect.effect(&cov));
            y.push(if treated { t.y_t } else { t.y_c });
            a.push(treated as u8);
            x.extend_from_slice(&cov);
            pid.push(k);
            group_of.push(cell);
            records.push(t);
        }
    }
    let ds = Dataset::new(y, a, x, 2, paired.then_some(pid))?;
    Ok((ds, GroundTruth { records }, Grouping { group_of }))
}
