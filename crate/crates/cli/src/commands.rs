//! Subcommand implementations. Each returns a [`Status`] or a [`CliError`];
//! `main` maps both onto exit codes.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use cvtp_core::ensemble::{cantelli_guarantee, summarize, throughput_bound};
use cvtp_core::model::FilterSpec;
use cvtp_core::oracle::{mc_ensemble, mc_point};
use cvtp_core::profile::{profile_table, tail_bound, Protocol};
use cvtp_core::tradeoff::{constrained_best, control_record, objective_best, pareto_frontier, sweep, QuadFlag, SweepRecord};
use cvtp_core::ensemble::{MeritTriple, SelectivityReport};
use thiserror::Error;

use crate::checks::run_suite;
use crate::config::{ConfigError, RunConfig};
use crate::csvio::{self, ProfileRow, SweepRow};
use crate::svg::{self, PlotMode};

#[derive(Debug, Parser)]
#[command(name = "cvtp", version, about = "Fidelity/deviation/success trade-offs of MB-NLA-filtered CV teleportation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration with dotted keys (e.g. `params.V_n = 0.5`).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Oracle seed (overrides `oracle.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Confidence weight of J = F − λD (overrides `lambda`).
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Suppress the human-readable report.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Override a configuration key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate f_succ(r) and P_succ(r) for the configured filter.
    Profile,
    /// Ensemble figures of merit for the configured filter.
    Moments,
    /// Sweep the (g, m_c) grid.
    Sweep,
    /// Pareto frontier and constrained optima of a sweep file.
    Frontier {
        input: PathBuf,
        #[arg(long = "d-max")]
        d_max: Option<f64>,
        #[arg(long = "p-min")]
        p_min: Option<f64>,
    },
    /// Run the invariant suite.
    Check,
    /// Monte Carlo estimates for the configured filter.
    Oracle {
        /// Estimate at a single radius instead of the ensemble.
        #[arg(long)]
        point: Option<f64>,
    },
    /// Render a profile or sweep CSV as SVG.
    Plot {
        input: PathBuf,
        #[arg(long)]
        mode: PlotMode,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    NotConverged,
    ChecksFailed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Success => 0,
            Self::NotConverged => 1,
            Self::ChecksFailed => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0:#}")]
    Compute(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) => 2,
            Self::Compute(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn compute<E: std::error::Error + Send + Sync + 'static>(e: E) -> CliError {
    CliError::Compute(anyhow::Error::new(e))
}

struct Sink<'a> {
    out: Option<&'a Path>,
    quiet: bool,
}

impl Sink<'_> {
    /// Writes the primary artifact to `--out`, or to stdout.
    fn emit(&self, bytes: &[u8]) -> Result<()> {
        match self.out {
            Some(path) => std::fs::write(path, bytes)
                .with_context(|| format!("cannot write {}", path.display()))
                .map_err(CliError::Compute),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(bytes).and_then(|_| stdout.flush()).map_err(compute)
            }
        }
    }

    fn report(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

fn load_config(common: &Common, extra: &[String]) -> Result<RunConfig> {
    let mut overrides = common.set.clone();
    overrides.extend_from_slice(extra);
    if let Some(seed) = common.seed {
        overrides.push(format!("oracle.seed={seed}"));
    }
    if let Some(l) = common.lambda {
        overrides.push(format!("lambda={l:?}"));
    }
    Ok(RunConfig::load(common.config.as_deref(), &overrides)?)
}

fn guard_input(input: &Path, out: Option<&Path>) -> Result<()> {
    if let Some(out) = out {
        let same = match (input.canonicalize(), out.canonicalize()) {
            (Ok(a), Ok(b)) => a == b,
            _ => input == out,
        };
        if same {
            return Err(CliError::Usage(format!("refusing to overwrite input file {}", input.display())));
        }
    }
    Ok(())
}

fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

pub fn run(cli: Cli) -> Result<Status> {
    let sink = Sink {
        out: cli.common.out.as_deref(),
        quiet: cli.common.quiet,
    };
    match &cli.command {
        Command::Profile => profile(&load_config(&cli.common, &[])?, &sink),
        Command::Moments => moments(&load_config(&cli.common, &[])?, &sink),
        Command::Sweep => sweep_cmd(&load_config(&cli.common, &[])?, &sink),
        Command::Frontier { input, d_max, p_min } => {
            let mut extra = Vec::new();
            if let Some(d) = d_max {
                extra.push(format!("frontier.D_max={d:?}"));
            }
            if let Some(p) = p_min {
                extra.push(format!("frontier.P_min={p:?}"));
            }
            guard_input(input, sink.out)?;
            frontier(&load_config(&cli.common, &extra)?, input, &sink)
        }
        Command::Check => check(&load_config(&cli.common, &[])?, &sink),
        Command::Oracle { point } => oracle(&load_config(&cli.common, &[])?, *point, &sink),
        Command::Plot { input, mode } => {
            guard_input(input, sink.out)?;
            plot(input, *mode, &sink)
        }
    }
}

fn protocol(cfg: &RunConfig) -> Result<Protocol> {
    Protocol::new(cfg.params, cfg.filter).map_err(|e| CliError::Usage(e.to_string()))
}

fn profile(cfg: &RunConfig, sink: &Sink) -> Result<Status> {
    let radii = cfg.profile_radii();
    if radii.is_empty() {
        return Err(CliError::Usage("empty radius grid".into()));
    }
    let proto = protocol(cfg)?;
    let table = profile_table(&radii, &proto, &cfg.quad).map_err(|e| CliError::Usage(format!("profile.radii: {e}")))?;
    let cutoff = proto.cutoff();
    let rows = ProfileRow::from_profile(&table, |r| match cutoff {
        Some(m_c) if r >= m_c => tail_bound(r, &proto).ok(),
        _ => None,
    });
    let mut buf = Vec::new();
    csvio::write_profile(&mut buf, &rows).map_err(compute)?;
    sink.emit(&buf)?;
    Ok(if table.all_converged() { Status::Success } else { Status::NotConverged })
}

fn key_value_report(sink: &Sink, pairs: &[(&str, f64)]) -> Result<()> {
    for (k, v) in pairs {
        sink.report(format!("{k:<20} {}", csvio::fmt12_trim(*v)));
    }
    if sink.out.is_some() {
        let mut buf = Vec::new();
        csvio::write_key_values(&mut buf, pairs).map_err(compute)?;
        sink.emit(&buf)?;
    }
    Ok(())
}

fn moments(cfg: &RunConfig, sink: &Sink) -> Result<Status> {
    let proto = protocol(cfg)?;
    let s = summarize(&proto, &cfg.prior, &cfg.quad, Some(cfg.slope_step)).map_err(compute)?;
    let m = s.merit;
    let pairs = [
        ("F", m.f),
        ("D", m.d),
        ("P_succ", m.p_succ),
        ("S", s.report.s),
        ("S1", s.report.s1),
        ("S2", s.report.s2),
        ("I_sel", s.report.i_sel),
        ("I_alpha_S", s.report.i_alpha_s),
        ("lambda", cfg.lambda),
        ("J_lambda", m.f - cfg.lambda * m.d),
        ("cantelli_guarantee", cantelli_guarantee(cfg.lambda)),
        ("delta", cfg.delta),
        ("throughput_bound", throughput_bound(&m, cfg.delta)),
    ];
    key_value_report(sink, &pairs)?;
    Ok(if s.converged { Status::Success } else { Status::NotConverged })
}

fn sweep_cmd(cfg: &RunConfig, sink: &Sink) -> Result<Status> {
    let mut records = Vec::new();
    if cfg.grid.include_control {
        records.push(control_record(&cfg.params, &cfg.prior, cfg.lambda, &cfg.quad).map_err(compute)?);
    }
    records.extend(sweep(&cfg.grid.g, &cfg.grid.m_c, &cfg.params, &cfg.prior, cfg.lambda, &cfg.quad).map_err(compute)?);
    let rows: Vec<SweepRow> = records.iter().map(SweepRow::from_record).collect();
    let mut buf = Vec::new();
    csvio::write_sweep(&mut buf, &rows).map_err(compute)?;
    sink.emit(&buf)?;
    let bad = records.iter().filter(|r| !r.flag.is_converged()).count();
    if bad > 0 {
        eprintln!("{bad} of {} sweep points did not converge", records.len());
        return Ok(Status::NotConverged);
    }
    Ok(Status::Success)
}

/// Rebuilds a record from a parsed row; `J_λ` is recomputed at `lambda`.
fn record_from_row(row: &SweepRow, lambda: f64) -> std::result::Result<SweepRecord, String> {
    let filter = if row.is_control() {
        FilterSpec::AcceptAll
    } else {
        FilterSpec::mbnla(row.g, row.m_c).map_err(|e| e.to_string())?
    };
    let flag = match row.flag.as_str() {
        "ok" => QuadFlag::Converged,
        "not_converged" => QuadFlag::NotConverged,
        "failed" => QuadFlag::Failed(String::new()),
        other => return Err(format!("unknown flag `{other}`")),
    };
    let merit = MeritTriple {
        f: row.f,
        d: row.d,
        p_succ: row.p_succ,
    };
    Ok(SweepRecord {
        filter,
        j_lambda: merit.f - lambda * merit.d,
        merit,
        report: SelectivityReport {
            s: row.d,
            s1: row.s1,
            s2: row.s2,
            i_sel: row.i_sel,
            i_alpha_s: row.i_alpha_s,
        },
        flag,
    })
}

fn frontier(cfg: &RunConfig, input: &Path, sink: &Sink) -> Result<Status> {
    let text = read_input(input)?;
    let rows = csvio::read_sweep(text.as_bytes()).map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{}: no data rows", input.display())));
    }
    let records: Vec<SweepRecord> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| record_from_row(r, cfg.lambda).map_err(|e| CliError::Usage(format!("{}: line {}: {e}", input.display(), i + 2))))
        .collect::<Result<_>>()?;
    let front = pareto_frontier(&records);
    let describe = |r: &SweepRecord| {
        format!(
            "g={} m_c={} F={} D={} P_succ={} J_lambda={}",
            csvio::fmt12_trim(r.g()),
            csvio::fmt12_trim(r.m_c()),
            csvio::fmt12_trim(r.merit.f),
            csvio::fmt12_trim(r.merit.d),
            csvio::fmt12_trim(r.merit.p_succ),
            csvio::fmt12_trim(r.j_lambda)
        )
    };
    sink.report(format!("frontier ({} of {} records):", front.len(), records.len()));
    for r in &front {
        sink.report(format!("  {}", describe(r)));
    }
    match constrained_best(&records, cfg.d_max, cfg.p_min) {
        Some(r) => sink.report(format!("constrained_best (D <= {}, P_succ >= {}): {}", cfg.d_max, cfg.p_min, describe(&r))),
        None => sink.report(format!("constrained_best (D <= {}, P_succ >= {}): infeasible", cfg.d_max, cfg.p_min)),
    }
    if let Some(r) = objective_best(&records, cfg.lambda) {
        sink.report(format!("objective_best (lambda = {}): {}", cfg.lambda, describe(&r)));
    }
    if sink.out.is_some() {
        let rows: Vec<SweepRow> = front.iter().map(SweepRow::from_record).collect();
        let mut buf = Vec::new();
        csvio::write_sweep(&mut buf, &rows).map_err(compute)?;
        sink.emit(&buf)?;
    }
    Ok(Status::Success)
}

fn check(cfg: &RunConfig, sink: &Sink) -> Result<Status> {
    let outcomes = run_suite(cfg);
    let mut failed = 0;
    for o in &outcomes {
        if o.passed {
            sink.report(o.to_string());
        } else {
            failed += 1;
            println!("{o}");
        }
    }
    sink.report(format!("{} checks, {failed} failed", outcomes.len()));
    if sink.out.is_some() {
        let mut text = String::from("check,passed,margin\n");
        for o in &outcomes {
            text.push_str(&format!("{},{},{}\n", o.name, o.passed, csvio::fmt12(o.margin)));
        }
        sink.emit(text.as_bytes())?;
    }
    Ok(if failed == 0 { Status::Success } else { Status::ChecksFailed })
}

fn oracle(cfg: &RunConfig, point: Option<f64>, sink: &Sink) -> Result<Status> {
    let proto = protocol(cfg)?;
    match point {
        Some(r) => {
            if !(r.is_finite() && r >= 0.0) {
                return Err(CliError::Usage(format!("--point must be finite and >= 0, got {r}")));
            }
            let est = mc_point(r, &proto, &cfg.oracle).map_err(compute)?;
            key_value_report(
                sink,
                &[
                    ("r", r),
                    ("p_succ", est.p_succ),
                    ("p_err", est.p_err),
                    ("f_succ", est.f),
                    ("f_err", est.f_err),
                    ("accepted", est.accepted as f64),
                ],
            )?;
        }
        None => {
            let est = mc_ensemble(&proto, &cfg.prior, &cfg.oracle).map_err(compute)?;
            key_value_report(
                sink,
                &[
                    ("F", est.merit.f),
                    ("F_err", est.errors.f),
                    ("D", est.merit.d),
                    ("D_err", est.errors.d),
                    ("P_succ", est.merit.p_succ),
                    ("P_succ_err", est.errors.p_succ),
                    ("inner_noise_floor", est.inner_noise_floor),
                ],
            )?;
        }
    }
    Ok(Status::Success)
}

fn plot(input: &Path, mode: PlotMode, sink: &Sink) -> Result<Status> {
    let text = read_input(input)?;
    let usage = |e: csvio::CsvError| CliError::Usage(format!("{}: {e}", input.display()));
    let doc = match mode {
        PlotMode::Profile => svg::profile_svg(&csvio::read_profile(text.as_bytes()).map_err(usage)?),
        PlotMode::FdCurves => svg::fd_curves_svg(&csvio::read_sweep(text.as_bytes()).map_err(usage)?),
        PlotMode::FdDensity => svg::fd_density_svg(&csvio::read_sweep(text.as_bytes()).map_err(usage)?),
    };
    sink.emit(doc.as_bytes())?;
    Ok(Status::Success)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(status) => status.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
