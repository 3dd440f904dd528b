//! Monte Carlo replication over effect grids.
//!
//! Replicate `k` of every cell draws its data with seed `seed + k`, so all
//! methods in a sweep see the same draws. Results are collected by replicate
//! index, so the output does not depend on `parallelism`.

use crate::data::{
    generate_gaussian_sequence, generate_paired, generate_subgroup_experiment, generate_unpaired, Dataset,
    EffectModel, GroundTruth, Grouping,
};
use crate::error::{invalid, Error, Result};
use crate::metrics::Summary;
use crate::procedures::{run_procedure, Method, ProcedureSpec, RunReport};
use crate::strategy::StrategyKind;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

/// Data-generating design of a sweep. Cell strengths are `S` or `δ`, or `r`
/// for the Gaussian sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum Design {
    Unpaired { kind: String },
    /// `n` counts pairs. Unpaired methods run on the same subjects with the
    /// pairing dropped.
    Paired { kind: String, mismatch: f64 },
    Gaussian { oracle_covariate: bool },
    Subgroup { kind: String, paired: bool },
}

impl Design {
    fn label(&self) -> String {
        match self {
            Design::Unpaired { kind } => kind.replace('-', "_"),
            Design::Paired { kind, mismatch } => format!("{}/paired/eps={mismatch}", kind.replace('-', "_")),
            Design::Gaussian { oracle_covariate: false } => "gaussian_sequence".into(),
            Design::Gaussian { oracle_covariate: true } => "gaussian_sequence/oracle".into(),
            Design::Subgroup { kind, paired: false } => format!("{}/subgroup", kind.replace('-', "_")),
            Design::Subgroup { kind, paired: true } => format!("{}/subgroup/paired", kind.replace('-', "_")),
        }
    }
}

/// One simulated experiment.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub dataset: Arc<Dataset>,
    /// Same subjects without pairing, present for paired designs.
    pub unpaired: Option<Arc<Dataset>>,
    pub truth: GroundTruth,
    pub grouping: Option<Grouping>,
}

/// Draws the data of one replicate.
pub fn draw(design: &Design, strength: f64, beta: f64, n: usize, seed: u64) -> Result<Replicate> {
    let plain = |(ds, truth): (Dataset, GroundTruth)| Replicate {
        dataset: Arc::new(ds),
        unpaired: None,
        truth,
        grouping: None,
    };
    Ok(match design {
        Design::Unpaired { kind } => plain(generate_unpaired(n, EffectModel::from_kind(kind, strength)?, seed)?),
        Design::Paired { kind, mismatch } => {
            let (ds, truth) = generate_paired(n, EffectModel::from_kind(kind, strength)?, *mismatch, seed)?;
            let x: Vec<f64> = (0..ds.n()).flat_map(|i| ds.x(i).to_vec()).collect();
            let flat = Dataset::new(ds.outcomes().to_vec(), ds.assignments().to_vec(), x, ds.d(), None)?;
            Replicate { dataset: Arc::new(ds), unpaired: Some(Arc::new(flat)), truth, grouping: None }
        }
        Design::Gaussian { oracle_covariate } => plain(generate_gaussian_sequence(n, strength, beta, *oracle_covariate, seed)?),
        Design::Subgroup { kind, paired } => {
            let (ds, truth, g) = generate_subgroup_experiment(n, EffectModel::from_kind(kind, strength)?, *paired, seed)?;
            Replicate { dataset: Arc::new(ds), unpaired: None, truth, grouping: Some(g) }
        }
    })
}

/// A method with an optional strategy override.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepMethod {
    pub method: Method,
    pub strategy: Option<StrategyKind>,
}

impl SweepMethod {
    pub fn plain(method: Method) -> Self {
        SweepMethod { method, strategy: None }
    }

    /// `method` or `method:strategy`.
    pub fn parse(s: &str) -> Result<Self> {
        let (m, st) = match s.split_once(':') {
            Some((m, st)) => (m, Some(StrategyKind::parse(st)?)),
            None => (s, None),
        };
        Ok(SweepMethod { method: Method::parse(m)?, strategy: st })
    }

    pub fn label(&self) -> String {
        match self.strategy {
            Some(k) => format!("{}:{}", self.method.name(), k.name()),
            None => self.method.name().to_string(),
        }
    }

    /// Runs on one replicate and scores against its truth.
    pub fn run(&self, rep: &Replicate, alpha: f64, seed: u64) -> Result<RunReport> {
        let mut spec = ProcedureSpec::new(self.method, alpha, seed);
        if let Some(k) = self.strategy {
            spec = spec.with_strategy(k);
        }
        let ds = match (&rep.unpaired, self.method.mode()) {
            (Some(flat), Some(mode)) if !mode.is_paired() => flat,
            (Some(flat), None) if self.method == Method::LinearBh => flat,
            _ => &rep.dataset,
        };
        let mut report = run_procedure(ds, &spec, rep.grouping.as_ref())?;
        report.attach_truth(ds, &rep.truth, rep.grouping.as_ref())?;
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub methods: Vec<SweepMethod>,
    pub design: Design,
    pub strengths: Vec<f64>,
    /// Sparsity exponents; ignored outside the Gaussian design.
    pub betas: Vec<f64>,
    pub n: usize,
    pub alpha: f64,
    pub reps: usize,
    pub seed: u64,
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub effect_kind: String,
    pub scale_or_r: f64,
    pub beta: Option<f64>,
    pub n: usize,
    pub alpha: f64,
    pub reps: usize,
    pub fdr_zero: f64,
    pub fdr_zero_se: f64,
    pub fdr_nonpos: f64,
    pub fdr_nonpos_se: f64,
    pub power: f64,
    pub power_se: f64,
    pub mean_rejections: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, method: &str, strength: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.method == method && r.scale_or_r == strength)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "method",
            "effect_kind",
            "scale_or_r",
            "beta",
            "n",
            "alpha",
            "reps",
            "fdr_zero",
            "fdr_zero_se",
            "fdr_nonpos",
            "fdr_nonpos_se",
            "power",
            "power_se",
            "mean_rejections",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            out.write_record([
                r.method.clone(),
                r.effect_kind.clone(),
                r.scale_or_r.to_string(),
                r.beta.map(|b| b.to_string()).unwrap_or_default(),
                r.n.to_string(),
                r.alpha.to_string(),
                r.reps.to_string(),
                r.fdr_zero.to_string(),
                r.fdr_zero_se.to_string(),
                r.fdr_nonpos.to_string(),
                r.fdr_nonpos_se.to_string(),
                r.power.to_string(),
                r.power_se.to_string(),
                r.mean_rejections.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => invalid(format!("{other:?}")),
    }
}

/// Applies `f` to `0..count` on a pool of `parallelism` threads, returning
/// results in index order.
pub fn parallel_map<T, F>(parallelism: usize, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    if parallelism == 0 {
        return Err(invalid("parallelism must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}

/// Per-replicate outcomes of one grid cell: `[method][rep]`.
pub type CellReports = Vec<Vec<RunReport>>;

/// Runs every method on `reps` replicates of one cell.
pub fn run_cell(spec: &SweepSpec, strength: f64, beta: f64) -> Result<CellReports> {
    let per_rep = parallel_map(spec.parallelism, spec.reps, |k| {
        let seed = spec.seed.wrapping_add(k as u64);
        let rep = draw(&spec.design, strength, beta, spec.n, seed)?;
        spec.methods.iter().map(|m| m.run(&rep, spec.alpha, seed)).collect::<Result<Vec<_>>>()
    })?;
    Ok((0..spec.methods.len()).map(|m| per_rep.iter().map(|r| r[m].clone()).collect()).collect())
}

fn summarize(reports: &[RunReport], pick: impl Fn(&RunReport) -> f64) -> Summary {
    Summary::of(&reports.iter().map(pick).collect::<Vec<_>>())
}

/// Runs the full grid.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    if spec.reps == 0 {
        return Err(invalid("reps must be at least 1"));
    }
    if spec.methods.is_empty() || spec.strengths.is_empty() {
        return Err(invalid("a sweep needs at least one method and one strength"));
    }
    let gaussian = matches!(spec.design, Design::Gaussian { .. });
    let betas: Vec<Option<f64>> = if gaussian {
        if spec.betas.is_empty() {
            return Err(invalid("the Gaussian design needs at least one beta"));
        }
        spec.betas.iter().map(|&b| Some(b)).collect()
    } else {
        vec![None]
    };
    let mut rows = Vec::new();
    for &s in &spec.strengths {
        for &b in &betas {
            let cell = run_cell(spec, s, b.unwrap_or(0.0))?;
            for (m, reports) in spec.methods.iter().zip(&cell) {
                let fz = summarize(reports, |r| r.fdp_zero_null.expect("truth attached"));
                let fp = summarize(reports, |r| r.fdp_nonpositive_null.expect("truth attached"));
                let pw = summarize(reports, |r| r.power.expect("truth attached"));
                let nr = summarize(reports, |r| r.rejected.len() as f64);
                rows.push(SweepRow {
                    method: m.label(),
                    effect_kind: spec.design.label(),
                    scale_or_r: s,
                    beta: b,
                    n: spec.n,
                    alpha: spec.alpha,
                    reps: spec.reps,
                    fdr_zero: fz.mean,
                    fdr_zero_se: fz.se,
                    fdr_nonpos: fp.mean,
                    fdr_nonpos_se: fp.se,
                    power: pw.mean,
                    power_se: pw.se,
                    mean_rejections: nr.mean,
                });
            }
        }
    }
    rows.sort_by(|a, b| {
        (&a.method, &a.effect_kind)
            .cmp(&(&b.method, &b.effect_kind))
            .then(a.scale_or_r.total_cmp(&b.scale_or_r))
            .then(a.beta.unwrap_or(0.0).total_cmp(&b.beta.unwrap_or(0.0)))
    });
    Ok(SweepResult { rows })
}

/// Named sweeps mirroring the published experiments. `reps`, `seed` and
/// `parallelism` are filled in by the caller.
pub fn preset(name: &str) -> Result<SweepSpec> {
    let base = |methods: &[Method], design: Design, strengths: Vec<f64>, n: usize| SweepSpec {
        methods: methods.iter().map(|&m| SweepMethod::plain(m)).collect(),
        design,
        strengths,
        betas: Vec::new(),
        n,
        alpha: 0.2,
        reps: 1,
        seed: 0,
        parallelism: 1,
    };
    let scales: Vec<f64> = (0..=5).map(f64::from).collect();
    let bias = || Design::Unpaired { kind: "bias_sparse".into() };
    Ok(match name {
        "figure4" => base(&[Method::CrossfitI3, Method::LinearBh], bias(), scales, 500),
        "figure5" => base(&[Method::CrossfitI3, Method::MayI3], bias(), scales, 500),
        "linear-both" => base(&[Method::LinearBh], Design::Unpaired { kind: "linear_both".into() }, scales, 2000),
        "paired" => base(
            &[Method::PairedCrossfitI3, Method::CrossfitI3],
            Design::Paired { kind: "bias_sparse".into(), mismatch: 0.0 },
            scales,
            250,
        ),
        "subgroup" => base(
            &[Method::SubgroupInteractive, Method::SubgroupBh],
            Design::Subgroup { kind: "constant_even_covariate".into(), paired: false },
            (0..=5).map(|k| k as f64 * 0.2).collect(),
            2000,
        ),
        "gaussian" => {
            let mut s = base(&[], Design::Gaussian { oracle_covariate: false }, vec![0.1, 0.8], 5000);
            s.methods = vec![SweepMethod { method: Method::I3, strategy: Some(StrategyKind::MinAbs) }];
            s.betas = vec![0.3, 0.4];
            s
        }
        other => return Err(invalid(format!("unknown preset `{other}`"))),
    })
}

pub const PRESETS: [&str; 6] = ["figure4", "figure5", "linear-both", "paired", "subgroup", "gaussian"];
