//! Command-line front end: simulation, estimation, comparison against a
//! Monte Carlo oracle, and benchmark timing.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mscf_core::cashflow::{
    bootstrap_band, complete_data_cashflow, estimate_cashflow, saj_cashflow, twodim_cashflow,
    CashFlowCurve, CashFlowOptions, Method, TwoDimPlan,
};
use mscf_core::empirical::{check_links, Empirical1D, Empirical2D, IndexedData};
use mscf_core::estimate1d::{aalen_johansen, cmaj_transform, saj};
use mscf_core::estimate2d::{aalen_johansen_2d, nelson_aalen_2d, SweepMode};
use mscf_core::extension::{bar_estimators, forward_solve, AdaptedScaler};
use mscf_core::model::{JumpConvention, Model, StateSpace};
use mscf_core::simulate::{
    read_dataset_file, simulate_dataset, simulate_paths, write_dataset_file, Censoring, Jump,
};
use mscf_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "mscf",
    version,
    about = "Cash-flow estimation for scaled multi-state payment streams"
)]
pub struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Model config file, or the built-in preset name.
    #[arg(long, global = true, default_value = "freepolicy6")]
    pub model: String,

    /// Floor for risk-set denominators.
    #[arg(long, global = true, default_value_t = 0.0)]
    pub eps: f64,

    /// Value of H used for the exercise payment itself: `right` (scaled) or `left`.
    #[arg(long, global = true, default_value = "right", value_parser = JumpConvention::from_str)]
    pub h_at_jump: JumpConvention,

    /// Exit with code 3 when more increments than this are dropped.
    #[arg(long, global = true)]
    pub max_warnings: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a censored dataset.
    Simulate(SimulateArgs),
    /// Estimate hazards, occupation curves and the cash flow from a dataset.
    Estimate(EstimateArgs),
    /// Run several methods on one dataset and compare them with an oracle.
    Compare(CompareArgs),
    /// Time estimators over increasing sample sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "unif:20,80", value_parser = Censoring::from_str)]
    pub censoring: Censoring,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// saj, cmaj, 2daj or barsaj.
    #[arg(long)]
    pub method: String,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub aux_seed: u64,
    /// `one`, `exercise` or `discount:delta=<rate>[,<state>=<rate>...]` (barsaj only).
    #[arg(long, default_value = "exercise")]
    pub scaler: String,
    /// Surfaces to export for 2daj, e.g. `1,1;1,2`.
    #[arg(long)]
    pub surfaces: Option<String>,
    /// Write all empirical curves and link-identity deviations here.
    #[arg(long)]
    pub dump_empirical: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "saj,cmaj,2daj")]
    pub methods: String,
    /// `mc:<paths>`.
    #[arg(long)]
    pub oracle: Option<String>,
    /// Seed for the oracle paths and bootstrap resampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub aux_seed: u64,
    /// Errors against the oracle are taken over t <= this horizon.
    #[arg(long, default_value_t = 35.0)]
    pub sup_horizon: f64,
    /// Bootstrap replicates per method (0 disables).
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "500,1000,2000")]
    pub sizes: String,
    #[arg(long, default_value = "saj,2daj")]
    pub methods: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "unif:20,80", value_parser = Censoring::from_str)]
    pub censoring: Censoring,
    /// Timing is the minimum over this many runs.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Warnings { count: usize, max: usize },
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Warnings { count, max } => {
                write!(
                    f,
                    "{count} increments dropped for empty risk sets (limit {max})"
                )
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Warnings { .. } => 3,
            CliError::Core(
                Error::NoSignChange { .. } | Error::GridMismatch(_) | Error::OutOfRange(_),
            ) => 1,
            CliError::Core(_) => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parses and runs a command line, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::config("--threads must be positive").into());
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let model = Model::load(&cli.model)?;
    let warnings = pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(&model, a).map(|_| 0),
        Command::Estimate(a) => cmd_estimate(cli, &model, a),
        Command::Compare(a) => {
            cmd_compare(cli, &model, a).map(|rows| rows.iter().map(|r| r.warnings).sum())
        }
        Command::Bench(a) => cmd_bench(cli, &model, a).map(|_| 0),
    })?;
    match cli.max_warnings {
        Some(max) if warnings > max => Err(CliError::Warnings {
            count: warnings,
            max,
        }),
        _ => Ok(()),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn cmd_simulate(model: &Model, a: &SimulateArgs) -> CliResult<()> {
    let ds = simulate_dataset(model, a.n, a.seed, a.censoring)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_dataset_file(&ds, &model.states, &a.out)?;
    log::info!("wrote {} observations to {}", ds.len(), a.out.display());
    Ok(())
}

/// Parses `1,1;1,2` into state index pairs.
pub fn parse_surfaces(spec: &str, states: &StateSpace) -> mscf_core::Result<Vec<(usize, usize)>> {
    spec.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (a, b) = pair.split_once(',').ok_or_else(|| {
                Error::config(format!("surface {pair:?} is not of the form j1,j2"))
            })?;
            let idx = |l: &str| {
                states
                    .index_of(l.trim())
                    .ok_or_else(|| Error::config(format!("unknown state {l:?}")))
            };
            Ok((idx(a)?, idx(b)?))
        })
        .collect()
}

fn parse_methods(spec: &str, aux_seed: u64) -> mscf_core::Result<Vec<Method>> {
    spec.split(',')
        .map(|m| match m.trim() {
            "saj" => Ok(Method::Saj),
            "cmaj" => Ok(Method::Cmaj { aux_seed }),
            "2daj" => Ok(Method::TwoDim),
            other => Err(Error::config(format!("unknown method {other:?}"))),
        })
        .collect()
}

fn parse_sizes(spec: &str) -> mscf_core::Result<Vec<usize>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::config(format!("invalid sample size {s:?}")))
        })
        .collect()
}

/// Parses `mc:<paths>`.
pub fn parse_oracle(spec: &str) -> mscf_core::Result<usize> {
    spec.strip_prefix("mc:")
        .and_then(|n| n.parse().ok())
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::config(format!("invalid oracle {spec:?}; expected mc:<paths>")))
}

fn load_dataset(
    path: &Path,
    model: &Model,
) -> CliResult<Vec<mscf_core::simulate::CensoredObservation>> {
    if !path.exists() {
        return Err(Error::config(format!("dataset {} does not exist", path.display())).into());
    }
    Ok(read_dataset_file(path, &model.states)?)
}

fn options(cli: &Cli) -> CashFlowOptions {
    CashFlowOptions {
        eps: cli.eps,
        convention: cli.h_at_jump,
        mode: SweepMode::Parallel,
        extra_points: Vec::new(),
    }
}

/// Returns the number of dropped increments.
pub fn cmd_estimate(cli: &Cli, model: &Model, a: &EstimateArgs) -> CliResult<usize> {
    let ds = load_dataset(&a.input, model)?;
    let states = &model.states;
    let pay = &model.payments;
    fs::create_dir_all(&a.out)?;
    let out = |name: &str| create(&a.out.join(name));
    let index =
        |ds: &[_], st: &StateSpace| IndexedData::new(ds, st, &pay.scaling, model.horizon, &[]);
    let data = index(&ds, states)?;
    if let Some(dir) = &a.dump_empirical {
        let e1 = Empirical1D::build(&data)?;
        e1.write_csv_dir(dir, states)?;
        let links = check_links(&e1, &Empirical2D::build(&data)?)?;
        links.write_csv(create(&dir.join("links.csv"))?, states)?;
    }
    let warnings = match a.method.as_str() {
        "saj" => {
            let (bundle, p) = saj(&Empirical1D::build(&data)?, cli.eps)?;
            bundle.write_csv(out("hazards.csv")?, states)?;
            p.write_csv(out("occupation.csv")?, states)?;
            let cf = saj_cashflow(&p, &bundle, pay, states, cli.h_at_jump)?;
            cf.write_csv(out("cashflow.csv")?)?;
            bundle.warnings()
        }
        "cmaj" => {
            let (thinned, extended) = cmaj_transform(&ds, states, &pay.scaling, a.aux_seed)?;
            let (bundle, p) =
                aalen_johansen(&Empirical1D::build(&index(&thinned, &extended)?)?, cli.eps)?;
            bundle.write_csv(out("hazards.csv")?, &extended)?;
            p.write_csv(out("occupation.csv")?, &extended)?;
            let opts = options(cli);
            let cf = estimate_cashflow(
                &ds,
                model,
                Method::Cmaj {
                    aux_seed: a.aux_seed,
                },
                &opts,
            )?;
            cf.write_csv(out("cashflow.csv")?)?;
            bundle.warnings()
        }
        "2daj" => {
            let (bundle1, boundary) = aalen_johansen(&Empirical1D::build(&data)?, cli.eps)?;
            let bundle2 = nelson_aalen_2d(&Empirical2D::build(&data)?, states.len(), cli.eps)?;
            bundle1.write_csv(out("hazards.csv")?, states)?;
            boundary.write_csv(out("occupation.csv")?, states)?;
            if let Some(spec) = &a.surfaces {
                let pairs = parse_surfaces(spec, states)?;
                let s = aalen_johansen_2d(
                    &bundle2,
                    &boundary,
                    states.initial(),
                    &pairs,
                    SweepMode::Parallel,
                )?;
                s.write_csv(out("surfaces.csv")?, states)?;
            }
            let plan = TwoDimPlan::generic(&bundle2, pay, states);
            let cf = twodim_cashflow(
                &bundle2,
                &boundary,
                &bundle1,
                pay,
                states,
                &plan,
                cli.h_at_jump,
                SweepMode::Parallel,
            )?;
            cf.write_csv(out("cashflow.csv")?)?;
            bundle1.warnings() + bundle2.warnings()
        }
        "barsaj" => {
            let scaler = AdaptedScaler::parse(&a.scaler, model)?;
            let b = bar_estimators(&data, &scaler, cli.eps)?;
            let p = forward_solve(&b)?;
            p.write_csv(out("occupation.csv")?, states)?;
            let mut w = csv::Writer::from_writer(out("rates.csv")?);
            w.write_record(["t", "from", "to", "cumulative"])
                .map_err(Error::from)?;
            let times = b.grid().times();
            for j in 0..states.len() {
                for k in 0..states.len() {
                    let c = b.cumulative(j, k);
                    if c.values().iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    for (t, v) in times.iter().zip(c.values()) {
                        w.write_record([
                            t.to_string(),
                            states.label(j).into(),
                            states.label(k).into(),
                            v.to_string(),
                        ])
                        .map_err(Error::from)?;
                    }
                }
            }
            w.flush()?;
            b.warnings()
        }
        other => return Err(Error::config(format!("unknown method {other:?}")).into()),
    };
    Ok(warnings)
}

/// One line of the comparison summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub n: usize,
    pub warnings: usize,
    /// `sup |A - A_MC|` over `t <= sup_horizon`, if an oracle was requested.
    pub sup_abs_error: Option<f64>,
    /// `sup |A - A_MC| / (1 + |A_MC|)` over the same range.
    pub sup_rel_error: Option<f64>,
    pub seconds: f64,
}

/// Sup-norm errors of `cf` against `oracle` over grid points `t <= horizon`.
pub fn sup_errors(cf: &CashFlowCurve, oracle: &CashFlowCurve, horizon: f64) -> (f64, f64) {
    let mut abs: f64 = 0.0;
    let mut rel: f64 = 0.0;
    for (m, &t) in cf.grid().times().iter().enumerate() {
        if t > horizon {
            break;
        }
        let o = oracle.curve.value(m);
        let d = (cf.curve.value(m) - o).abs();
        abs = abs.max(d);
        rel = rel.max(d / (1.0 + o.abs()));
    }
    (abs, rel)
}

pub fn cmd_compare(cli: &Cli, model: &Model, a: &CompareArgs) -> CliResult<Vec<SummaryRow>> {
    let ds = load_dataset(&a.input, model)?;
    let methods = parse_methods(&a.methods, a.aux_seed)?;
    let oracle_paths = match &a.oracle {
        Some(spec) => Some(simulate_paths(model, parse_oracle(spec)?, a.seed)?),
        None => None,
    };
    fs::create_dir_all(&a.out)?;
    let opts = options(cli);
    let mut rows = Vec::new();
    let mut oracle_written = false;
    for method in methods {
        let start = Instant::now();
        let cf = estimate_cashflow(&ds, model, method, &opts)?;
        let seconds = start.elapsed().as_secs_f64();
        cf.write_csv(create(&a.out.join(format!("cashflow_{method}.csv")))?)?;
        let (sup_abs_error, sup_rel_error) = match &oracle_paths {
            Some(paths) => {
                let refs: Vec<(usize, &[Jump])> = paths
                    .iter()
                    .map(|p| (p.initial, p.jumps.as_slice()))
                    .collect();
                let oracle = complete_data_cashflow(
                    &refs,
                    &model.payments,
                    &model.states,
                    cli.h_at_jump,
                    cf.grid(),
                )?;
                if !oracle_written {
                    oracle.write_csv(create(&a.out.join("oracle.csv"))?)?;
                    oracle_written = true;
                }
                let (abs, rel) = sup_errors(&cf, &oracle, a.sup_horizon);
                (Some(abs), Some(rel))
            }
            None => (None, None),
        };
        if a.bootstrap > 0 {
            let band = bootstrap_band(
                &ds,
                |sample| estimate_cashflow(sample, model, method, &opts),
                &report_times(model.horizon),
                a.bootstrap,
                a.level,
                a.seed,
            )?;
            band.write_csv(create(&a.out.join(format!("band_{method}.csv")))?)?;
        }
        rows.push(SummaryRow {
            method: method.to_string(),
            n: ds.len(),
            warnings: cf.warnings,
            sup_abs_error,
            sup_rel_error,
            seconds,
        });
    }
    write_summary(&rows, &a.out)?;
    print_summary(&rows);
    Ok(rows)
}

/// Yearly report times `0, 1, ..., horizon`.
fn report_times(horizon: f64) -> Vec<f64> {
    (0..=horizon.floor() as usize).map(|t| t as f64).collect()
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `summary.csv` (deterministic) and `timings.csv` (wall times).
fn write_summary(rows: &[SummaryRow], dir: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(&dir.join("summary.csv"))?);
    w.write_record(["method", "n", "warnings", "sup_abs_error", "sup_rel_error"])
        .map_err(Error::from)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.n.to_string(),
            r.warnings.to_string(),
            fmt_opt(r.sup_abs_error),
            fmt_opt(r.sup_rel_error),
        ])
        .map_err(Error::from)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(&dir.join("timings.csv"))?);
    w.write_record(["method", "seconds"]).map_err(Error::from)?;
    for r in rows {
        w.write_record([r.method.clone(), format!("{:.6}", r.seconds)])
            .map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn print_summary(rows: &[SummaryRow]) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{:<6} {:>7} {:>9} {:>14} {:>14} {:>10}",
        "method", "n", "warnings", "sup_abs_err", "sup_rel_err", "seconds"
    );
    for r in rows {
        let f = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<6} {:>7} {:>9} {:>14} {:>14} {:>10.3}",
            r.method,
            r.n,
            r.warnings,
            f(r.sup_abs_error),
            f(r.sup_rel_error),
            r.seconds
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub n: usize,
    pub seconds: f64,
    /// Time relative to the previous sample size for the same method.
    pub ratio: Option<f64>,
}

pub fn cmd_bench(cli: &Cli, model: &Model, a: &BenchArgs) -> CliResult<Vec<BenchRow>> {
    let sizes = parse_sizes(&a.sizes)?;
    let methods = parse_methods(&a.methods, 0)?;
    if a.repeats == 0 {
        return Err(Error::config("--repeats must be positive").into());
    }
    let opts = options(cli);
    let mut rows: Vec<BenchRow> = Vec::new();
    for &method in &methods {
        let mut prev: Option<f64> = None;
        for &n in &sizes {
            let ds = simulate_dataset(model, n, a.seed, a.censoring)?;
            let mut best = f64::INFINITY;
            for _ in 0..a.repeats {
                let start = Instant::now();
                estimate_cashflow(&ds, model, method, &opts)?;
                best = best.min(start.elapsed().as_secs_f64());
            }
            rows.push(BenchRow {
                method: method.to_string(),
                n,
                seconds: best,
                ratio: prev.map(|p| best / p),
            });
            prev = Some(best);
        }
    }
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{:<6} {:>7} {:>10} {:>7}",
        "method", "n", "seconds", "ratio"
    );
    for r in &rows {
        let ratio = r
            .ratio
            .map(|x| format!("{x:.2}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<6} {:>7} {:>10.4} {:>7}",
            r.method, r.n, r.seconds, ratio
        );
    }
    if let Some(path) = &a.out {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(["method", "n", "seconds", "ratio"])
            .map_err(Error::from)?;
        for r in &rows {
            w.write_record([
                r.method.clone(),
                r.n.to_string(),
                format!("{:.6}", r.seconds),
                fmt_opt(r.ratio),
            ])
            .map_err(Error::from)?;
        }
        w.flush()?;
    }
    Ok(rows)
}
