//! `gqic`: simulate Levy-driven SDE paths, fit candidate models by two-stage
//! Gaussian quasi-likelihood, compute GQAIC/GQBIC-type criteria, run model
//! selection and Monte Carlo frequency experiments.

mod config;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use levy_gqic::criteria::{self, DriftCriterionKind, ScaleCriterionKind};
use levy_gqic::estimator::{self, Matrix};
use levy_gqic::experiment::{run_experiment, Case, CriterionPair, Design, ExperimentConfig};
use levy_gqic::io::{fmt_f64, read_path_csv, write_path_csv};
use levy_gqic::levy::RngStream;
use levy_gqic::limit::{self, LimitKind, NestingMap};
use levy_gqic::model::{registry, registry_list, CandidateModel};
use levy_gqic::reference::{compare_to_reference, ReferenceTable};
use levy_gqic::sde::{euler_path, SamplePath, TrueModelSpec};
use levy_gqic::selection::{self, SelectionConfig};

use config::{CriteriaConfig, FitConfig, SelectConfig, SimulateConfig};

#[derive(Parser)]
#[command(name = "gqic", version, about = "Quasi-likelihood fitting and GQAIC/GQBIC model selection for Levy-driven SDEs")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "GQIC_THREADS")]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one path of the benchmark (or configured) model and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit one scale/drift candidate to a CSV path; prints the fit as JSON.
    Fit(FitArgs),
    /// Every criterion for every candidate, as CSV.
    Criteria(CriteriaArgs),
    /// Stepwise scale-then-drift selection; prints the outcome as JSON.
    Select(SelectArgs),
    /// Monte Carlo selection frequencies over replications.
    Mc(McArgs),
    /// Limit probability that the larger of two nested models is selected.
    LimitProb(LimitArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML file with the simulation settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise preset: i, ii, iii or gaussian.
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stream: Option<u64>,
    /// Euler sub-steps per observation interval.
    #[arg(long)]
    refine: Option<usize>,
    /// Output file (default: stdout).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long)]
    emit_config: bool,
}

#[derive(Args)]
struct DataArgs {
    /// CSV with header `time,value`.
    #[arg(long)]
    data: Option<String>,
    /// Sampling step of the data.
    #[arg(long)]
    h: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    drift: Option<String>,
    /// Confidence level of the Wald intervals.
    #[arg(long)]
    level: Option<f64>,
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    emit_config: bool,
}

#[derive(Args)]
struct CandidateArgs {
    /// Comma-separated scale candidates (default Scale1..Scale4).
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<String>>,
    /// Comma-separated drift candidates (default Drift1..Drift3).
    #[arg(long, value_delimiter = ',')]
    drifts: Option<Vec<String>>,
    /// Exponent kappa of the truncation level T^{-(1-kappa)/2}.
    #[arg(long)]
    trunc_kappa: Option<f64>,
}

#[derive(Args)]
struct CriteriaArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    candidates: CandidateArgs,
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    emit_config: bool,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    candidates: CandidateArgs,
    /// Criterion preset: faic, gqaic, gqbic or gqbic_sharp.
    #[arg(long)]
    criteria: Option<String>,
    /// Scale-stage criterion, e.g. GQAIC1_TRUNC (overrides the preset).
    #[arg(long)]
    scale_criterion: Option<String>,
    /// Drift-stage criterion, e.g. GQBIC2 (overrides the preset).
    #[arg(long)]
    drift_criterion: Option<String>,
    /// Also fit every drift under every scale (diagnostic).
    #[arg(long)]
    full_grid: bool,
    /// Also write one row per (candidate, criterion, value) to this CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    emit_config: bool,
}

#[derive(Args)]
struct McArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<String>,
    /// Sampling steps (repeatable or comma-separated).
    #[arg(long, value_delimiter = ',')]
    h: Vec<f64>,
    /// Horizons T (repeatable or comma-separated).
    #[arg(long = "T", value_delimiter = ',')]
    t_end: Vec<f64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Criterion presets (comma-separated): faic, gqaic, gqbic, gqbic_sharp.
    #[arg(long, value_delimiter = ',')]
    criteria: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    refine: Option<usize>,
    /// Output prefix; writes PREFIX.csv and PREFIX.json (default: JSON to stdout).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Compare against the bundled reference table of the case, tolerance in binomial SE.
    #[arg(long)]
    compare: Option<f64>,
    #[arg(long)]
    emit_config: bool,
}

#[derive(Args)]
struct LimitArgs {
    /// JSON request: {"kind", "gamma", "w", "map": {"f", "c"}, "n_mc", "seed"}.
    #[arg(long)]
    input: PathBuf,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Deserialize, Serialize)]
struct LimitRequest {
    kind: LimitKind,
    gamma: Matrix,
    #[serde(default)]
    w: Matrix,
    map: NestingMap,
    #[serde(default = "default_n_mc")]
    n_mc: usize,
    #[serde(default)]
    seed: u64,
}

fn default_n_mc() -> usize {
    1_000_000
}

/// Failure classes with their exit codes.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn report(&self) -> String {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Data(m) => ("data", m),
            CliError::Numerical(m) => ("numerical", m),
        };
        json!({ "error": kind, "exit_code": self.code(), "message": message }).to_string()
    }
}

impl From<levy_gqic::Error> for CliError {
    fn from(e: levy_gqic::Error) -> Self {
        use levy_gqic::Error as E;
        match e {
            E::Data { .. } | E::Io(_) => CliError::Data(e.to_string()),
            ref n if n.is_numerical() => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn to_toml<T: Serialize>(value: &T) -> CliResult<String> {
    toml::to_string(value).map_err(|e| usage(format!("cannot render config: {e}")))
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::Data(e.to_string()))
}

fn emit<T: Serialize>(config: &T) -> CliResult<()> {
    print!("{}", to_toml(config)?);
    Ok(())
}

fn load_path(data: &str, h: f64) -> CliResult<SamplePath> {
    let file = File::open(data).map_err(|e| CliError::Data(format!("{data}: {e}")))?;
    read_path_csv(BufReader::new(file), h).map_err(|e| match e {
        levy_gqic::Error::Data { line, message } => CliError::Data(format!("{data}, line {line}: {message}")),
        other => other.into(),
    })
}

fn required<T>(value: Option<T>, what: &str) -> CliResult<T> {
    value.ok_or_else(|| usage(format!("missing {what} (flag or config file)")))
}

fn parse_case(s: Option<&str>) -> CliResult<Case> {
    Ok(Case::parse(s.unwrap_or("i"))?)
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let mut cfg = match &args.config {
        Some(p) => read_toml::<SimulateConfig>(p)?,
        None => SimulateConfig {
            noise: parse_case(args.case.as_deref())?.noise(),
            truth: TrueModelSpec::benchmark(),
            n: required(args.n, "--n")?,
            h: required(args.h, "--h")?,
            seed: args.seed.unwrap_or(0),
            stream: 0,
            refine: levy_gqic::sde::DEFAULT_REFINE,
        },
    };
    if args.config.is_some() {
        if let Some(c) = &args.case {
            cfg.noise = parse_case(Some(c))?.noise();
        }
    }
    cfg.n = args.n.unwrap_or(cfg.n);
    cfg.h = args.h.unwrap_or(cfg.h);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.stream = args.stream.unwrap_or(cfg.stream);
    cfg.refine = args.refine.unwrap_or(cfg.refine);
    if args.emit_config {
        return emit(&cfg);
    }
    if !(cfg.h > 0.0) {
        return Err(usage(format!("h must be positive, got {}", cfg.h)));
    }
    let truth = cfg.truth.build()?;
    let path = euler_path(&truth, &cfg.noise, cfg.n, cfg.h, cfg.refine, &RngStream::new(cfg.seed, cfg.stream))?;
    let config_json = serde_json::to_string(&cfg).map_err(|e| usage(e.to_string()))?;
    let comments = vec!["gqic simulate".to_string(), format!("config: {config_json}")];
    let mut out = output(args.out.as_deref())?;
    write_path_csv(&mut out, &path, &comments)?;
    Ok(())
}

fn fit(args: FitArgs) -> CliResult<()> {
    let mut cfg = match &args.config {
        Some(p) => read_toml::<FitConfig>(p)?,
        None => FitConfig {
            data: required(args.data.data.clone(), "--data")?,
            h: required(args.data.h, "--h")?,
            scale: "Scale2".into(),
            drift: "Drift2".into(),
            level: 0.95,
            opt: Default::default(),
        },
    };
    cfg.data = args.data.data.unwrap_or(cfg.data);
    cfg.h = args.data.h.unwrap_or(cfg.h);
    cfg.scale = args.scale.unwrap_or(cfg.scale);
    cfg.drift = args.drift.unwrap_or(cfg.drift);
    cfg.level = args.level.unwrap_or(cfg.level);
    if args.emit_config {
        return emit(&cfg);
    }
    let model = CandidateModel::from_names(&cfg.scale, &cfg.drift)?;
    let path = load_path(&cfg.data, cfg.h)?;
    let result = estimator::fit(&path, &model, &cfg.opt)?;
    let intervals = estimator::confidence_interval(&result, cfg.level);
    let report = json!({
        "config": cfg,
        "fit": result,
        "intervals": intervals.as_ref().ok(),
        "interval_error": intervals.as_ref().err().map(ToString::to_string),
    });
    write_json(args.out.as_deref(), &report)
}

fn resolve_candidates(c: CandidateArgs, scales: &mut Vec<String>, drifts: &mut Vec<String>, kappa: &mut f64) {
    if let Some(s) = c.scales {
        *scales = s;
    }
    if let Some(d) = c.drifts {
        *drifts = d;
    }
    if let Some(k) = c.trunc_kappa {
        *kappa = k;
    }
}

fn criteria_cmd(args: CriteriaArgs) -> CliResult<()> {
    let mut cfg = match &args.config {
        Some(p) => read_toml::<CriteriaConfig>(p)?,
        None => CriteriaConfig {
            data: required(args.data.data.clone(), "--data")?,
            h: required(args.data.h, "--h")?,
            scales: config::default_scales(),
            drifts: config::default_drifts(),
            trunc_kappa: criteria::DEFAULT_TRUNC_KAPPA,
            opt: Default::default(),
        },
    };
    cfg.data = args.data.data.unwrap_or(cfg.data);
    cfg.h = args.data.h.unwrap_or(cfg.h);
    resolve_candidates(args.candidates, &mut cfg.scales, &mut cfg.drifts, &mut cfg.trunc_kappa);
    if args.emit_config {
        return emit(&cfg);
    }
    let scales = registry_list(&cfg.scales)?;
    let drifts = registry_list(&cfg.drifts)?;
    let path = load_path(&cfg.data, cfg.h)?;
    let pilot = selection::pilot_drift(&drifts);
    let fits = selection::fit_scales(&path, &scales, pilot, &cfg.opt);

    let mut out = output(args.out.as_deref())?;
    let io_err = |e: io::Error| CliError::Data(e.to_string());
    let config_json = serde_json::to_string(&cfg).map_err(|e| usage(e.to_string()))?;
    writeln!(out, "# gqic criteria\n# config: {config_json}").map_err(io_err)?;
    writeln!(out, "candidate,stage,criterion,value,note").map_err(io_err)?;
    for (scale, fit) in scales.iter().zip(&fits) {
        let fit = match fit {
            Ok(f) => f,
            Err(e) => {
                writeln!(out, "{},scale,,,\"fit failed: {}\"", scale.name(), e.to_string().replace('"', "'")).map_err(io_err)?;
                continue;
            }
        };
        for kind in ScaleCriterionKind::ALL {
            let (value, note) = match criteria::scale_criterion(&fit.stats, kind, cfg.trunc_kappa) {
                Ok(v) => (fmt_f64(v.value), if v.truncated { "truncated".to_string() } else { String::new() }),
                Err(e) => (String::new(), format!("\"{}\"", e.to_string().replace('"', "'"))),
            };
            writeln!(out, "{},scale,{kind},{value},{note}", scale.name()).map_err(io_err)?;
        }
        let dfits = selection::fit_drifts(&path, scale, &fit.fit.gamma_hat, &drifts, &cfg.opt);
        for (drift, df) in drifts.iter().zip(dfits) {
            let label = format!("{}+{}", scale.name(), drift.name());
            for kind in DriftCriterionKind::ALL {
                match &df {
                    Ok(d) => {
                        let v = criteria::drift_criterion_value(d.h2_value, drift.dim(), path.meta(), kind);
                        writeln!(out, "{label},drift,{kind},{},", fmt_f64(v)).map_err(io_err)?;
                    }
                    Err(e) => {
                        writeln!(out, "{label},drift,{kind},,\"{}\"", e.to_string().replace('"', "'")).map_err(io_err)?;
                    }
                }
            }
        }
    }
    out.flush().map_err(io_err)
}

fn select(args: SelectArgs) -> CliResult<()> {
    let preset = args.criteria.as_deref().map(CriterionPair::preset).transpose()?;
    let mut cfg = match &args.config {
        Some(p) => read_toml::<SelectConfig>(p)?,
        None => {
            let pair = preset.unwrap_or(CriterionPair::preset("gqbic")?);
            SelectConfig {
                data: required(args.data.data.clone(), "--data")?,
                h: required(args.data.h, "--h")?,
                scales: config::default_scales(),
                drifts: config::default_drifts(),
                scale_criterion: pair.scale,
                drift_criterion: pair.drift,
                trunc_kappa: criteria::DEFAULT_TRUNC_KAPPA,
                full_grid: false,
                opt: Default::default(),
            }
        }
    };
    cfg.data = args.data.data.unwrap_or(cfg.data);
    cfg.h = args.data.h.unwrap_or(cfg.h);
    resolve_candidates(args.candidates, &mut cfg.scales, &mut cfg.drifts, &mut cfg.trunc_kappa);
    if let Some(p) = preset {
        cfg.scale_criterion = p.scale;
        cfg.drift_criterion = p.drift;
    }
    if let Some(s) = &args.scale_criterion {
        cfg.scale_criterion = s.parse()?;
    }
    if let Some(d) = &args.drift_criterion {
        cfg.drift_criterion = d.parse()?;
    }
    cfg.full_grid |= args.full_grid;
    if args.emit_config {
        return emit(&cfg);
    }
    let scales = registry_list(&cfg.scales)?;
    let drifts = registry_list(&cfg.drifts)?;
    let path = load_path(&cfg.data, cfg.h)?;
    let sel = SelectionConfig { opt: cfg.opt.clone(), trunc_kappa: cfg.trunc_kappa, full_grid: cfg.full_grid };
    let outcome = selection::stepwise_select(&path, &scales, &drifts, cfg.scale_criterion, cfg.drift_criterion, &sel)?;
    if let Some(csv_path) = &args.csv {
        let mut w = output(Some(csv_path))?;
        let io_err = |e: io::Error| CliError::Data(e.to_string());
        writeln!(w, "candidate,criterion,value").map_err(io_err)?;
        for (name, v) in outcome.scale.names.iter().zip(&outcome.scale.values) {
            writeln!(w, "{name},{},{}", outcome.scale.kind, v.map(fmt_f64).unwrap_or_default()).map_err(io_err)?;
        }
        let chosen = &outcome.scale.names[outcome.scale.chosen];
        for (name, v) in outcome.drift.names.iter().zip(&outcome.drift.values) {
            writeln!(w, "{chosen}+{name},{},{}", outcome.drift.kind, v.map(fmt_f64).unwrap_or_default()).map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }
    write_json(args.out.as_deref(), &json!({ "config": cfg, "outcome": outcome }))
}

fn mc(args: McArgs) -> CliResult<()> {
    let case = parse_case(args.case.as_deref())?;
    let mut cfg = match &args.config {
        Some(p) => read_toml::<ExperimentConfig>(p)?,
        None => ExperimentConfig::preset(case, vec![Design { h: 0.01, t_end: 50.0 }], 200, 0),
    };
    if args.config.is_some() && args.case.is_some() {
        cfg.noise = case.noise();
    }
    if !args.h.is_empty() || !args.t_end.is_empty() {
        let hs = if args.h.is_empty() { cfg.grid.iter().map(|d| d.h).collect() } else { args.h.clone() };
        let ts = if args.t_end.is_empty() { cfg.grid.iter().map(|d| d.t_end).collect() } else { args.t_end.clone() };
        let mut grid: Vec<Design> = Vec::new();
        for &t_end in &ts {
            for &h in &hs {
                let d = Design { h, t_end };
                if !grid.contains(&d) {
                    grid.push(d);
                }
            }
        }
        cfg.grid = grid;
    }
    if let Some(r) = args.reps {
        cfg.replications = r;
    }
    if !args.criteria.is_empty() {
        cfg.criteria = args.criteria.iter().map(|c| CriterionPair::preset(c)).collect::<Result<_, _>>()?;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(r) = args.refine {
        cfg.refine = r;
    }
    if args.emit_config {
        return emit(&cfg);
    }
    let table = run_experiment(&cfg)?;
    let comparison = match args.compare {
        Some(tol) => {
            let reference = ReferenceTable::builtin(case)
                .ok_or_else(|| usage("no reference table for this case"))?;
            Some(compare_to_reference(&table, &reference, tol)?)
        }
        None => None,
    };
    let report = json!({ "config": cfg, "table": table, "comparison": comparison });
    match &args.out {
        Some(prefix) => {
            let csv_path = prefix.with_extension("csv");
            let mut w = output(Some(&csv_path))?;
            let config_json = serde_json::to_string(&cfg).map_err(|e| usage(e.to_string()))?;
            writeln!(w, "# gqic mc\n# config: {config_json}").map_err(|e| CliError::Data(e.to_string()))?;
            table.write_csv(&mut w)?;
            write_json(Some(&prefix.with_extension("json")), &report)
        }
        None => write_json(None, &report),
    }
}

fn limit_prob(args: LimitArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.input).map_err(|e| CliError::Data(format!("{}: {e}", args.input.display())))?;
    let req: LimitRequest =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", args.input.display())))?;
    let inputs = limit::limit_inputs(req.kind, req.gamma.clone(), req.w.clone(), &req.map)?;
    let eigenvalues = limit::nesting_eigenvalues(&inputs, &req.map)?;
    let tail = limit::weighted_chisq_tail(&eigenvalues, inputs.penalty_threshold, req.n_mc, &RngStream::new(req.seed, 0))?;
    let report = json!({
        "config": req,
        "eigenvalues": eigenvalues,
        "threshold": inputs.penalty_threshold,
        "probability": tail.probability,
        "std_error": tail.std_error,
        "n_mc": tail.n_mc,
    });
    write_json(args.out.as_deref(), &report)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot start {n} threads: {e}")))?;
    }
    // touch the registry once so unknown-name errors surface before any work
    registry("Scale1")?;
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Criteria(a) => criteria_cmd(a),
        Command::Select(a) => select(a),
        Command::Mc(a) => mc(a),
        Command::LimitProb(a) => limit_prob(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            eprintln!("{}", CliError::Usage(e.kind().to_string()).report());
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.code())
        }
    }
}
