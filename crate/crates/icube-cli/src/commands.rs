use crate::service::{self, ServiceConfig, DEFAULT_PORT};
use crate::setup::{self, LogEntry, UnitSplit};
use clap::{Args, Parser, Subcommand};
use icube_core::data::{self, Grouping};
use icube_core::masking::MaskingMode;
use icube_core::procedures::{run_procedure, Method, ProcedureSpec};
use icube_core::strategy::StrategyKind;
use icube_core::subgroup::PValueMethod;
use icube_core::sweep::{self, Design, SweepMethod};
use icube_core::{Dataset, EffectModel, Error, GroundTruth};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, Parser)]
#[command(name = "icube", version, about = "Interactive identification of subjects with positive treatment effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic experiment.
    Simulate(SimulateArgs),
    /// Run one procedure on a dataset file.
    Run(RunArgs),
    /// Replicate procedures over an effect grid.
    Sweep(SweepArgs),
    /// Re-run an exported exclusion log.
    Replay(ReplayArgs),
    /// Start the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// bias-sparse, linear-both, sparse-oneside, sparse-twoside,
    /// constant-even-covariate[-sparse], constant-low-covariate or gaussian-sequence.
    #[arg(long)]
    pub kind: String,
    /// Subjects, or pairs with --paired.
    #[arg(long)]
    pub n: usize,
    /// Effect scale S, or δ for the constant models.
    #[arg(long, default_value_t = 1.0, alias = "delta")]
    pub scale: f64,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub oracle_covariate: bool,
    #[arg(long)]
    pub paired: bool,
    /// Covariate mismatch ε within pairs; implies --paired.
    #[arg(long)]
    pub mismatch: Option<f64>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    /// Group assignment file for the constant-effect models.
    #[arg(long)]
    pub groups_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub method: String,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub refit_every: Option<usize>,
    #[arg(long)]
    pub permutations: Option<usize>,
    /// mean-difference or rank-sum.
    #[arg(long)]
    pub pvalue_method: Option<String>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub preset: Option<String>,
    /// `method` or `method:strategy`; repeatable.
    #[arg(long = "method")]
    pub methods: Vec<String>,
    /// Effect kind; gaussian-sequence selects the Gaussian design.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub paired: bool,
    #[arg(long)]
    pub mismatch: Option<f64>,
    #[arg(long)]
    pub subgroup: bool,
    #[arg(long)]
    pub oracle_covariate: bool,
    #[arg(long, value_delimiter = ',')]
    pub strengths: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub betas: Vec<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// crossfit, may, paired-crossfit or paired-may.
    #[arg(long)]
    pub mode: String,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub half: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub units: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub complement: Option<Vec<usize>>,
    /// JSON lines `{"t": .., "unit_id": ..}`.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value_t = 64)]
    pub max_sessions: usize,
    #[arg(long, default_value_t = 3600)]
    pub idle_timeout_secs: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 3,
            CliError::Domain(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

fn domain(msg: impl Into<String>) -> CliError {
    CliError::Domain(msg.into())
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn in_file<T>(path: &Path, f: impl FnOnce(File) -> icube_core::Result<T>) -> Result<T, CliError> {
    f(open(path)?).map_err(|e| match e {
        Error::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => CliError::Domain(format!("{}: {other}", path.display())),
    })
}

fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> icube_core::Result<()>) -> Result<(), CliError> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            write(&mut w).map_err(CliError::from)?;
            w.flush().map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock).map_err(CliError::from)
        }
    }
}

fn json_line(w: &mut dyn Write, value: &impl serde::Serialize) -> icube_core::Result<()> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
    writeln!(w)?;
    Ok(())
}

pub fn parse_mode(s: &str) -> Result<MaskingMode, CliError> {
    Ok(match s.replace('-', "_").as_str() {
        "crossfit" => MaskingMode::Crossfit,
        "may" => MaskingMode::May,
        "paired_crossfit" => MaskingMode::PairedCrossfit,
        "paired_may" => MaskingMode::PairedMay,
        other => return Err(domain(format!("unknown mode `{other}`"))),
    })
}

fn parse_pvalue_method(s: &str) -> Result<PValueMethod, CliError> {
    match s.replace('-', "_").as_str() {
        "mean_difference" => Ok(PValueMethod::MeanDifference),
        "rank_sum" => Ok(PValueMethod::RankSum),
        other => Err(domain(format!("unknown p-value method `{other}`"))),
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Replay(a) => replay(a),
        Command::Serve(a) => serve(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let kind = a.kind.replace('-', "_");
    let paired = a.paired || a.mismatch.is_some();
    let (ds, truth, groups) = match kind.as_str() {
        "gaussian_sequence" => {
            let (r, beta) = a.r.zip(a.beta).ok_or_else(|| domain("gaussian-sequence needs --r and --beta"))?;
            let (ds, t) = data::generate_gaussian_sequence(a.n, r, beta, a.oracle_covariate, a.seed)?;
            (ds, t, None)
        }
        k if k.starts_with("constant_") => {
            let (ds, t, g) = data::generate_subgroup_experiment(a.n, EffectModel::from_kind(k, a.scale)?, paired, a.seed)?;
            (ds, t, Some(g))
        }
        k => {
            let model = EffectModel::from_kind(k, a.scale)?;
            let (ds, t) = if paired {
                data::generate_paired(a.n, model, a.mismatch.unwrap_or(0.0), a.seed)?
            } else {
                data::generate_unpaired(a.n, model, a.seed)?
            };
            (ds, t, None)
        }
    };
    emit(a.out.as_deref(), |w| ds.write_csv(w))?;
    if let Some(p) = &a.truth_out {
        emit(Some(p), |w| truth.write_csv(w))?;
    }
    match (&a.groups_out, groups) {
        (Some(p), Some(g)) => emit(Some(p), |w| g.write_csv(w))?,
        (Some(_), None) => return Err(domain("--groups-out needs a constant-effect kind")),
        _ => {}
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<(), CliError> {
    let method = Method::parse(&a.method)?;
    let ds = Arc::new(in_file(&a.data, Dataset::read_csv)?);
    let groups = a.groups.as_deref().map(|p| in_file(p, Grouping::read_csv)).transpose()?;
    let mut spec = ProcedureSpec::new(method, a.alpha, a.seed);
    if let Some(s) = &a.strategy {
        spec = spec.with_strategy(StrategyKind::parse(s)?);
    }
    if let Some(k) = a.refit_every {
        spec.strategy.refit_every = k;
    }
    if let Some(b) = a.permutations {
        spec.permutations = b;
    }
    if let Some(m) = &a.pvalue_method {
        spec.pvalue_method = parse_pvalue_method(m)?;
    }
    let mut report = run_procedure(&ds, &spec, groups.as_ref())?;
    if let Some(p) = &a.truth {
        let truth = in_file(p, GroundTruth::read_csv)?;
        report.attach_truth(&ds, &truth, groups.as_ref())?;
    }
    emit(a.out.as_deref(), |w| json_line(w, &report))
}

fn sweep_cmd(a: SweepArgs) -> Result<(), CliError> {
    let mut spec = match &a.preset {
        Some(p) => sweep::preset(p)?,
        None => {
            let kind = a.kind.clone().ok_or_else(|| domain("give --preset or --kind"))?;
            let design = if kind.replace('-', "_") == "gaussian_sequence" {
                Design::Gaussian { oracle_covariate: a.oracle_covariate }
            } else if a.subgroup {
                Design::Subgroup { kind, paired: a.paired }
            } else if a.paired || a.mismatch.is_some() {
                Design::Paired { kind, mismatch: a.mismatch.unwrap_or(0.0) }
            } else {
                Design::Unpaired { kind }
            };
            sweep::SweepSpec {
                methods: Vec::new(),
                design,
                strengths: Vec::new(),
                betas: Vec::new(),
                n: a.n.ok_or_else(|| domain("--n is required without --preset"))?,
                alpha: 0.2,
                reps: 1,
                seed: 0,
                parallelism: 1,
            }
        }
    };
    if !a.methods.is_empty() {
        spec.methods = a.methods.iter().map(|m| SweepMethod::parse(m)).collect::<icube_core::Result<_>>()?;
    }
    if !a.strengths.is_empty() {
        spec.strengths = a.strengths.clone();
    }
    if !a.betas.is_empty() {
        spec.betas = a.betas.clone();
    }
    if let Some(n) = a.n {
        spec.n = n;
    }
    if let Some(alpha) = a.alpha {
        spec.alpha = alpha;
    }
    spec.reps = a.reps;
    spec.seed = a.seed;
    spec.parallelism = a.parallelism.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let result = sweep::run_sweep(&spec)?;
    emit(a.out.as_deref(), |w| result.write_csv(w))
}

/// Reads an exclusion log of JSON lines; blank lines are skipped.
pub fn read_log(path: &Path) -> Result<Vec<LogEntry>, CliError> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: LogEntry =
            serde_json::from_str(&line).map_err(|e| domain(format!("{} line {}: {e}", path.display(), k + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

fn replay(a: ReplayArgs) -> Result<(), CliError> {
    let ds = Arc::new(in_file(&a.data, Dataset::read_csv)?);
    let mode = parse_mode(&a.mode)?;
    let split = UnitSplit { units: a.units.clone(), complement: a.complement.clone(), half: a.half };
    let config = setup::session_config(&ds, mode, a.alpha, &split, a.seed)?;
    let log = read_log(&a.log)?;
    let outcome = setup::replay(ds, &config, &log)?;
    emit(a.out.as_deref(), |w| json_line(w, &outcome))
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let config = ServiceConfig { max_sessions: a.max_sessions, idle_timeout: Duration::from_secs(a.idle_timeout_secs) };
    if config.max_sessions == 0 {
        return Err(domain("--max-sessions must be positive"));
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime
        .block_on(service::serve(std::net::SocketAddr::new(a.host, a.port), config))
        .map_err(|e| CliError::Io(e.to_string()))
}
