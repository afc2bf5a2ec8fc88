//! End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
//! status if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cvtp_cli::checks::{self, CheckOutcome};
use cvtp_cli::config::RunConfig;
use cvtp_cli::csvio;
use cvtp_core::model::{deterministic_baseline, FilterSpec, SurrogateParams};
use cvtp_core::profile::{evaluate_point, Protocol};
use cvtp_core::tradeoff::slope_estimate_on;

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    elapsed: Duration,
    detail: String,
}

fn outcome_line(id: usize, name: &'static str, limit: Duration, run: impl FnOnce() -> Result<CheckOutcome, String>) -> Line {
    let start = Instant::now();
    let res = run();
    let elapsed = start.elapsed();
    let (mut passed, mut detail) = match res {
        Ok(o) => (o.passed, format!("margin={:+.3e} {}", o.margin, o.detail)),
        Err(e) => (false, format!("error: {e}")),
    };
    if elapsed > limit {
        passed = false;
        detail.push_str(&format!(" [runtime {:.1}s exceeds {:.0}s]", elapsed.as_secs_f64(), limit.as_secs_f64()));
    }
    Line {
        id,
        name,
        passed,
        elapsed,
        detail,
    }
}

fn outcome(name: &str, margin: f64, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed: margin >= 0.0,
        margin,
        detail,
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn config() -> RunConfig {
    RunConfig::load(None, &[]).expect("default configuration")
}

/// `P_succ(0)` and `f_succ(0)` in closed form: at `r = 0` both integrals
/// over the disk reduce to exponentials in `u = |n|²`.
fn origin_closed_form(params: &SurrogateParams, g: f64, m_c: f64) -> (f64, f64) {
    let theta = 1.0 - 1.0 / (g * g);
    let m2 = m_c * m_c;
    let a = theta - 1.0 / params.v_n();
    let b = a - params.kappa().powi(2) / (1.0 + params.v_eps());
    let disk = |c: f64| (c * m2).exp_m1() / c;
    let p = (-theta * m2).exp() * disk(a) / params.v_n();
    let f = disk(b) / disk(a) / (1.0 + params.v_eps());
    (p, f)
}

fn origin_values(cfg: &RunConfig) -> Result<CheckOutcome, String> {
    let (g, m_c) = (1.2, 3.0);
    let proto = Protocol::new(cfg.params, FilterSpec::mbnla(g, m_c).map_err(err)?).map_err(err)?;
    let quad = evaluate_point(0.0, &proto, &cfg.quad);
    let (p, f) = origin_closed_form(&cfg.params, g, m_c);
    let dev = (quad.p_succ() - p).abs().max((quad.fidelity() - f).abs());
    Ok(outcome(
        "origin_closed_form",
        1e-6 - dev,
        format!("P_succ(0)={:.10} vs {p:.10}, f_succ(0)={:.10} vs {f:.10}", quad.p_succ(), quad.fidelity()),
    ))
}

fn all_of(name: &str, parts: Vec<CheckOutcome>) -> CheckOutcome {
    let margin = parts.iter().map(|o| if o.passed { o.margin.max(0.0) } else { o.margin.min(-f64::MIN_POSITIVE) }).fold(f64::INFINITY, f64::min);
    let passed = parts.iter().all(|o| o.passed);
    CheckOutcome {
        name: name.to_string(),
        passed,
        margin,
        detail: parts
            .iter()
            .map(|o| format!("[{} {}: {}]", if o.passed { "ok" } else { "FAIL" }, o.name, o.detail))
            .collect::<Vec<_>>()
            .join(" "),
    }
}

fn oracle_equivalence(cfg: &RunConfig) -> Result<CheckOutcome, String> {
    let closed = origin_values(cfg)?;
    let point = checks::oracle_point(cfg, 1.2, 3.0, 1_000_000).map_err(err)?;
    let ensemble = checks::oracle_ensemble(cfg, 1.2, 3.0).map_err(err)?;
    Ok(all_of("oracle_equivalence", vec![closed, point, ensemble]))
}

fn slope(cfg: &RunConfig) -> Result<CheckOutcome, String> {
    let est = slope_estimate_on(&cfg.params, &cfg.prior, 3.0 * cfg.prior.sigma(), &[0.005, 0.01, 0.02, 0.04], &cfg.quad).map_err(err)?;
    let mut o = checks::slope_linearity_from(&est);
    o.detail.push_str(&format!(
        "; soft: |slope|={:.3} vs ~4 ({})",
        est.slope_c.abs(),
        if (1.0..=16.0).contains(&est.slope_c.abs()) { "same order" } else { "different order" }
    ));
    Ok(o)
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn cvtp(dir: &Path, args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_cvtp"))
        .current_dir(dir)
        .arg("--quiet")
        .args(args)
        .status()
        .map_err(err)?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("cvtp {} exited with {status}", args.join(" ")))
    }
}

const ARTIFACTS: [(&str, &[&str]); 3] = [
    ("sweep.csv", &["sweep", "--out"]),
    ("fd_curves.svg", &["plot", "sweep.csv", "--mode", "fd_curves", "--out"]),
    ("fd_density.svg", &["plot", "sweep.csv", "--mode", "fd_density", "--out"]),
];

/// Produces the sweep CSV and both SVGs in `dir`; returns their bytes.
fn produce(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let mut out = Vec::new();
    for (file, args) in ARTIFACTS {
        let mut full = args.to_vec();
        full.push(file);
        cvtp(dir, &full)?;
        out.push(std::fs::read(dir.join(file)).map_err(err)?);
    }
    Ok(out)
}

fn tradeoff_geometry(first: &Path, second: &Path) -> Result<CheckOutcome, String> {
    let a = produce(first)?;
    let b = produce(second)?;
    let identical = a == b;
    let rows = csvio::read_sweep(&a[0][..]).map_err(err)?;
    let mut margin = if identical { f64::INFINITY } else { -1.0 };
    let mut detail = Vec::new();
    for g in [1.2, 1.4, 1.6] {
        let at = |m_c: f64| rows.iter().find(|r| r.g == g && r.m_c == m_c).map(|r| r.d);
        let (Some(d_small), Some(d_large)) = (at(1.8), at(3.0)) else {
            return Err(format!("sweep is missing g = {g}"));
        };
        margin = margin.min(d_small - d_large);
        detail.push(format!(
            "g={g}: D(1.8)={d_small:.5} D(3.0)={d_large:.5} {}",
            if d_small > d_large { "ok" } else { "violated" }
        ));
    }
    if margin == 0.0 {
        margin = -f64::MIN_POSITIVE;
    }
    detail.push(format!("byte-identical rerun: {identical}"));
    Ok(outcome("tradeoff_geometry", margin, detail.join("; ")))
}

fn desk_scale(dir: &Path, geometry_time: Duration) -> Result<CheckOutcome, String> {
    let mut missing = Vec::new();
    for (file, _) in ARTIFACTS {
        match std::fs::metadata(dir.join(file)) {
            Ok(m) if m.len() > 0 => {}
            _ => missing.push(file),
        }
    }
    let budget = Duration::from_secs(600);
    let margin = if missing.is_empty() {
        (budget.as_secs_f64() - geometry_time.as_secs_f64()) / budget.as_secs_f64()
    } else {
        -1.0
    };
    Ok(outcome(
        "desk_scale",
        margin,
        format!(
            "sweep CSV, F-D curves and density plots produced twice in {:.1}s on one machine{}",
            geometry_time.as_secs_f64(),
            if missing.is_empty() { String::new() } else { format!("; missing {missing:?}") }
        ),
    ))
}

fn main() {
    let cfg = config();
    let secs = Duration::from_secs;
    let mut lines = Vec::new();

    lines.push(outcome_line(1, "baseline_value", secs(1), || {
        let f0 = deterministic_baseline(&SurrogateParams::reference());
        Ok(outcome("baseline_value", 1e-12 - (f0 - 0.78125).abs(), format!("f0={f0:.15}")))
    }));
    lines.push(outcome_line(2, "accept_all_flatness", secs(10), || checks::flatness(&cfg).map_err(err)));
    lines.push(outcome_line(3, "filter_futility", secs(30), || checks::futility(&cfg).map_err(err)));
    lines.push(outcome_line(4, "tail_bound", secs(30), || checks::tail_bound_check(&cfg).map_err(err)));
    lines.push(outcome_line(5, "phase_invariance", secs(60), || {
        checks::phase_invariance(&cfg, &[(1.4, 2.2)]).map_err(err)
    }));
    lines.push(outcome_line(6, "oracle_quadrature_equivalence", secs(300), || oracle_equivalence(&cfg)));
    lines.push(outcome_line(7, "local_universality_cost", secs(300), || slope(&cfg)));
    lines.push(outcome_line(8, "concentration_bounds", secs(120), || {
        checks::concentration(&cfg, 1.4, 2.2).map_err(err)
    }));
    lines.push(outcome_line(9, "information_functionals", secs(300), || {
        checks::jensen(&cfg, &linspace(1.1, 2.0, 10), &linspace(1.0, 5.5, 10), &[(1.6, 1.8)]).map_err(err)
    }));

    let first = tempfile::tempdir().expect("temporary directory");
    let second = tempfile::tempdir().expect("temporary directory");
    let geometry = outcome_line(10, "tradeoff_geometry", secs(600), || tradeoff_geometry(first.path(), second.path()));
    let geometry_time = geometry.elapsed;
    lines.push(geometry);
    lines.push(outcome_line(11, "desk_scale_reproduction", secs(600), || desk_scale(first.path(), geometry_time)));

    for l in &lines {
        println!(
            "{} {:>2} {:<30} ({:>6.1}s) {}",
            if l.passed { "PASS" } else { "FAIL" },
            l.id,
            l.name,
            l.elapsed.as_secs_f64(),
            l.detail
        );
    }
    let failed: Vec<usize> = lines.iter().filter(|l| !l.passed).map(|l| l.id).collect();
    println!("acceptance: {} of {} criteria passed", lines.len() - failed.len(), lines.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
