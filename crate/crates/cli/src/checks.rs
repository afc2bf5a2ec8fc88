//! Invariant suite behind `cvtp check`. Every check reports a signed margin:
//! nonnegative means it passed.

use std::f64::consts::PI;
use std::fmt;

use cvtp_core::ensemble::{cantelli_guarantee, conditional_moments, summarize, throughput_bound, MeritTriple};
use cvtp_core::model::{deterministic_baseline, FilterSpec, SurrogateParams};
use cvtp_core::oracle::{binomial_se, mc_ensemble, mc_point, sample_effective_prior, OracleConfig};
use cvtp_core::profile::{default_radii, evaluate_many, evaluate_point, phase_invariance_probe, tail_bound, Protocol};
use cvtp_core::tradeoff::{control_record, slope_estimate_on, sweep, SlopeEstimate};
use num_complex::Complex64;

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn from_margin(name: &str, margin: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: margin >= 0.0,
            margin,
            detail,
        }
    }

    fn error(name: &str, err: impl fmt::Display) -> Self {
        Self {
            name: name.to_string(),
            passed: false,
            margin: f64::NAN,
            detail: format!("error: {err}"),
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<17} margin={:+.3e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.margin,
            self.detail
        )
    }
}

type Outcome = Result<CheckOutcome, cvtp_core::Error>;
type Job<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn protocol(params: &SurrogateParams, g: f64, m_c: f64) -> Result<Protocol, cvtp_core::Error> {
    Protocol::new(*params, FilterSpec::mbnla(g, m_c)?)
}

/// Accept-all profile on 121 radii over `[0, 6]` equals the baseline (plus
/// the injected offset) within `1e-8`, with `D < 1e-8` and `P_succ = 1`.
pub fn flatness(cfg: &RunConfig) -> Outcome {
    let proto = Protocol::accept_all(cfg.params);
    let expected = deterministic_baseline(&cfg.params) + cfg.check.inject_f0_offset;
    let radii = default_radii(&proto);
    let max_dev = evaluate_many(&radii, &proto, &cfg.quad)
        .iter()
        .map(|p| (p.fidelity() - expected).abs())
        .fold(0.0, f64::max);
    let m = conditional_moments(&proto, &cfg.prior, &cfg.quad)?;
    let mut margin = (1e-8 - max_dev).min(1e-8 - m.d);
    if m.p_succ != 1.0 {
        margin = margin.min(-(m.p_succ - 1.0).abs());
    }
    Ok(CheckOutcome::from_margin(
        "flatness",
        margin,
        format!("max|f-f0|={max_dev:.3e} D={:.3e} P_succ={} (f0={expected})", m.d, m.p_succ),
    ))
}

/// With `κ = 0` every filter leaves `f_succ ≡ 1/(1+V_ε)`.
pub fn futility(cfg: &RunConfig) -> Outcome {
    let params = SurrogateParams::new(cfg.params.v_n(), cfg.params.v_eps(), 0.0)?;
    let target = 1.0 / (1.0 + params.v_eps());
    let mut max_dev: f64 = 0.0;
    for &(g, m_c) in &cfg.check.settings {
        let proto = protocol(&params, g, m_c)?;
        for p in evaluate_many(&default_radii(&proto), &proto, &cfg.quad) {
            max_dev = max_dev.max((p.fidelity() - target).abs());
        }
    }
    Ok(CheckOutcome::from_margin(
        "futility",
        1e-8 - max_dev,
        format!("max|f-1/(1+V_eps)|={max_dev:.3e} over {} settings", cfg.check.settings.len()),
    ))
}

/// `f_succ(r) ≤ tail_bound(r) + 1e-8` at `r ∈ {m_c, m_c+0.5, m_c+1, m_c+2}`.
pub fn tail_bound_check(cfg: &RunConfig) -> Outcome {
    let mut margin = f64::INFINITY;
    let mut worst = String::new();
    for &(g, m_c) in &cfg.check.settings {
        let proto = protocol(&cfg.params, g, m_c)?;
        for dr in [0.0, 0.5, 1.0, 2.0] {
            let r = m_c + dr;
            let f = evaluate_point(r, &proto, &cfg.quad).fidelity();
            let m = tail_bound(r, &proto)? + 1e-8 - f;
            if m < margin {
                margin = m;
                worst = format!("tightest at (g, m_c, r)=({g}, {m_c}, {r}): f={f:.6} bound={:.6}", f + m - 1e-8);
            }
        }
    }
    Ok(CheckOutcome::from_margin("tail_bound", margin, worst))
}

/// Direct two-dimensional evaluation at `r·e^{iφ}` matches the radial
/// profile within `1e-8` for `r ∈ {0.5, 2, 4}`, `φ ∈ {π/7, π/3, 2π/3}`.
pub fn phase_invariance(cfg: &RunConfig, settings: &[(f64, f64)]) -> Outcome {
    let mut max_dev: f64 = 0.0;
    for &(g, m_c) in settings {
        let proto = protocol(&cfg.params, g, m_c)?;
        for r in [0.5, 2.0, 4.0] {
            let radial = evaluate_point(r, &proto, &cfg.quad).fidelity();
            for phi in [PI / 7.0, PI / 3.0, 2.0 * PI / 3.0] {
                let probe = phase_invariance_probe(Complex64::from_polar(r, phi), &proto, &cfg.quad)?;
                max_dev = max_dev.max((probe - radial).abs());
            }
        }
    }
    Ok(CheckOutcome::from_margin(
        "phase_invariance",
        1e-8 - max_dev,
        format!("max|probe-f|={max_dev:.3e}"),
    ))
}

/// `I(α;S)` and `I_sel` are nonnegative (to `−1e-12`) on the `(g, m_c)`
/// grid, below `1e-10` for the control and above `1e-4` at the given
/// positive settings.
pub fn jensen(cfg: &RunConfig, g_grid: &[f64], m_c_grid: &[f64], positive_at: &[(f64, f64)]) -> Outcome {
    let records = sweep(g_grid, m_c_grid, &cfg.params, &cfg.prior, cfg.lambda, &cfg.quad)?;
    let mut min_info = f64::INFINITY;
    for r in &records {
        if !r.flag.is_converged() {
            return Ok(CheckOutcome::from_margin(
                "jensen",
                -1.0,
                format!("record (g, m_c)=({}, {}) flagged {}", r.g(), r.m_c(), r.flag.as_str()),
            ));
        }
        min_info = min_info.min(r.report.i_alpha_s).min(r.report.i_sel);
    }
    let control = control_record(&cfg.params, &cfg.prior, cfg.lambda, &cfg.quad)?;
    let control_max = control.report.i_alpha_s.max(control.report.i_sel);
    let mut min_positive = f64::INFINITY;
    for &(g, m_c) in positive_at {
        let s = summarize(&protocol(&cfg.params, g, m_c)?, &cfg.prior, &cfg.quad, None)?;
        min_positive = min_positive.min(s.report.i_alpha_s).min(s.report.i_sel);
    }
    let margin = (min_info + 1e-12).min(1e-10 - control_max).min(min_positive - 1e-4);
    Ok(CheckOutcome::from_margin(
        "jensen",
        margin,
        format!(
            "min(I, I_sel) over {} records={min_info:.3e}; control max={control_max:.1e}; min at positive settings={min_positive:.4e}",
            records.len()
        ),
    ))
}

/// Point oracle at `r = 0` agrees with quadrature within 3 standard errors.
/// The margin is `3 − max|z|`.
pub fn oracle_point(cfg: &RunConfig, g: f64, m_c: f64, n_inner: usize) -> Outcome {
    let proto = protocol(&cfg.params, g, m_c)?;
    let exact = evaluate_point(0.0, &proto, &cfg.quad);
    let mc = mc_point(0.0, &proto, &OracleConfig { n_inner, ..cfg.oracle })?;
    let zp = (mc.p_succ - exact.p_succ()) / mc.p_err;
    let zf = (mc.f - exact.fidelity()) / mc.f_err;
    Ok(CheckOutcome::from_margin(
        "oracle_point",
        3.0 - zp.abs().max(zf.abs()),
        format!(
            "P: mc={:.6}±{:.1e} quad={:.10} (z={zp:+.2}); f: mc={:.6}±{:.1e} quad={:.10} (z={zf:+.2})",
            mc.p_succ,
            mc.p_err,
            exact.p_succ(),
            mc.f,
            mc.f_err,
            exact.fidelity()
        ),
    ))
}

/// Ensemble oracle agrees with the quadrature triple within 3 bootstrap
/// standard errors per field.
pub fn oracle_ensemble(cfg: &RunConfig, g: f64, m_c: f64) -> Outcome {
    let proto = protocol(&cfg.params, g, m_c)?;
    let quad = conditional_moments(&proto, &cfg.prior, &cfg.quad)?;
    let mc = mc_ensemble(&proto, &cfg.prior, &cfg.oracle)?;
    let z = |a: f64, b: f64, se: f64| (a - b) / se;
    let zs = [
        z(mc.merit.f, quad.f, mc.errors.f),
        z(mc.merit.d, quad.d, mc.errors.d),
        z(mc.merit.p_succ, quad.p_succ, mc.errors.p_succ),
    ];
    Ok(CheckOutcome::from_margin(
        "oracle_ensemble",
        3.0 - zs.iter().fold(0.0f64, |a, b| a.max(b.abs())),
        format!(
            "F {:.6}/{:.6} (z={:+.2}), D {:.5}/{:.5} (z={:+.2}), P {:.5}/{:.5} (z={:+.2}) [mc/quad, n_outer={}, n_inner={}]",
            mc.merit.f, quad.f, zs[0], mc.merit.d, quad.d, zs[1], mc.merit.p_succ, quad.p_succ, zs[2], cfg.oracle.n_outer, cfg.oracle.n_inner
        ),
    ))
}

/// Empirical Cantelli and Chebyshev fractions for `X = f_succ(α)` with `α`
/// drawn from the effective prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub merit: MeritTriple,
    pub samples: usize,
    pub trials: u64,
    /// `(λ, empirical fraction, bound, binomial SE)`.
    pub cantelli: Vec<(f64, f64, f64, f64)>,
    pub delta: f64,
    /// `(empirical, bound, SE)` among successes.
    pub chebyshev: (f64, f64, f64),
    /// `(empirical, bound, SE)` per trial.
    pub throughput: (f64, f64, f64),
}

impl ConcentrationReport {
    /// Smallest `empirical − (bound − 3·SE)` over all checks.
    pub fn margin(&self) -> f64 {
        let m = |e: f64, b: f64, se: f64| e - (b - 3.0 * se);
        self.cantelli
            .iter()
            .map(|&(_, e, b, se)| m(e, b, se))
            .chain([m(self.chebyshev.0, self.chebyshev.1, self.chebyshev.2), m(self.throughput.0, self.throughput.1, self.throughput.2)])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Samples the effective prior at `(g, m_c)`; `δ = 2D`.
pub fn concentration_report(cfg: &RunConfig, g: f64, m_c: f64) -> Result<ConcentrationReport, cvtp_core::Error> {
    let proto = protocol(&cfg.params, g, m_c)?;
    let merit = conditional_moments(&proto, &cfg.prior, &cfg.quad)?;
    let sample = sample_effective_prior(&proto, &cfg.prior, cfg.oracle.seed, cfg.check.samples)?;
    let xs: Vec<f64> = evaluate_many(&sample.radii, &proto, &cfg.quad).iter().map(|p| p.fidelity()).collect();
    let n = xs.len() as u64;
    let frac = |thr: f64| xs.iter().filter(|&&x| x >= thr).count() as f64 / n as f64;
    let cantelli = cfg
        .check
        .lambdas
        .iter()
        .map(|&l| {
            let bound = cantelli_guarantee(l);
            (l, frac(merit.f - l * merit.d), bound, binomial_se(bound, n))
        })
        .collect();
    let delta = 2.0 * merit.d;
    let cond = frac(merit.f - delta);
    let cheb_bound = (1.0 - (merit.d / delta).powi(2)).max(0.0);
    let hits = (cond * n as f64).round();
    let per_trial = hits / sample.trials as f64;
    let tp_bound = throughput_bound(&merit, delta);
    Ok(ConcentrationReport {
        merit,
        samples: xs.len(),
        trials: sample.trials,
        cantelli,
        delta,
        chebyshev: (cond, cheb_bound, binomial_se(cheb_bound, n)),
        throughput: (per_trial, tp_bound, binomial_se(tp_bound, sample.trials)),
    })
}

pub fn concentration(cfg: &RunConfig, g: f64, m_c: f64) -> Outcome {
    let rep = concentration_report(cfg, g, m_c)?;
    let mut detail: Vec<String> = rep
        .cantelli
        .iter()
        .map(|(l, e, b, _)| format!("λ={l}: {e:.4} vs {b:.4}"))
        .collect();
    detail.push(format!("chebyshev δ=2D: {:.4} vs {:.4}", rep.chebyshev.0, rep.chebyshev.1));
    detail.push(format!("throughput: {:.4} vs {:.4}", rep.throughput.0, rep.throughput.1));
    Ok(CheckOutcome::from_margin("concentration", rep.margin(), detail.join("; ")))
}

/// `r² ≥ 0.99` and `|intercept| ≤ 0.1·max D` for the weak-filter family.
pub fn slope_linearity_from(est: &SlopeEstimate) -> CheckOutcome {
    let max_d = est.d_values.iter().copied().fold(0.0, f64::max);
    let margin = (est.r_squared - 0.99).min(0.1 * max_d - est.intercept.abs());
    CheckOutcome::from_margin(
        "slope_linearity",
        margin,
        format!(
            "r²={:.5} intercept={:.3e} (limit {:.3e}) slope_c={:.4} ratio@θmin={:.4} (expected |slope| ~ 4); excess-D fit: slope={:.4} intercept={:.3e} r²={:.5}",
            est.r_squared,
            est.intercept,
            0.1 * max_d,
            est.slope_c,
            est.ratio_smallest,
            est.excess_fit.slope,
            est.excess_fit.intercept,
            est.excess_fit.r_squared
        ),
    )
}

pub fn slope_linearity(cfg: &RunConfig) -> Outcome {
    let est = slope_estimate_on(&cfg.params, &cfg.prior, cfg.slope_cutoff(), &cfg.slope.thetas, &cfg.quad)?;
    Ok(slope_linearity_from(&est))
}

/// Runs every check not listed in `check.skip`, in a fixed order.
pub fn run_suite(cfg: &RunConfig) -> Vec<CheckOutcome> {
    let settings = &cfg.check.settings;
    let (g0, m0) = settings[0];
    let (g1, m1) = *settings.get(1).unwrap_or(&settings[0]);
    let positive_at = [*settings.last().expect("nonempty settings")];
    let jobs: Vec<(&str, Job)> = vec![
        ("flatness", Box::new(|| flatness(cfg))),
        ("futility", Box::new(|| futility(cfg))),
        ("tail_bound", Box::new(|| tail_bound_check(cfg))),
        ("phase_invariance", Box::new(|| phase_invariance(cfg, settings))),
        ("jensen", Box::new(move || jensen(cfg, &cfg.grid.g, &cfg.grid.m_c, &positive_at))),
        ("oracle_point", Box::new(move || oracle_point(cfg, g0, m0, cfg.check.point_n_inner))),
        ("oracle_ensemble", Box::new(move || oracle_ensemble(cfg, g0, m0))),
        ("concentration", Box::new(move || concentration(cfg, g1, m1))),
        ("slope_linearity", Box::new(|| slope_linearity(cfg))),
    ];
    jobs.into_iter()
        .filter(|(name, _)| !cfg.skips(name))
        .map(|(name, job)| job().unwrap_or_else(|e| CheckOutcome::error(name, e)))
        .collect()
}
