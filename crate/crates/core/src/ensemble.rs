//! Ensemble figures of merit over the coherent-state Gaussian prior.
//!
//! All averages are one-dimensional radial integrals. The profile is sampled
//! once on a composite Gauss–Legendre grid and every functional (the merit
//! triple, selectivity indices, information measures) is read off the same
//! nodes. Weights `p_σ(r)·P_succ(r)` are combined in the log domain.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::model::PriorSpec;
use crate::profile::{evaluate_point, PointEvaluation, Protocol};
use crate::quadrature::{log_sum_guard, prior_truncation_radius, radial_prior_average, QuadConfig, RadialGrid};

/// Round-off allowance below zero for variances and divergences.
pub const NEGATIVE_ROUNDOFF: f64 = 1e-12;

/// Grid nodes whose weight bound falls this far (in nats) below the running
/// maximum are not evaluated.
const LOG_NEGLIGIBLE: f64 = 80.0;

/// Conditional figures of merit `(F, D, P_succ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeritTriple {
    pub f: f64,
    pub d: f64,
    pub p_succ: f64,
}

/// Selectivity indices and information functionals of a protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectivityReport {
    /// Dispersion index; identical to `D`.
    pub s: f64,
    /// Mean absolute radial slope of `f_succ` under the effective prior.
    pub s1: f64,
    /// Variance of `ln f_succ` under the effective prior.
    pub s2: f64,
    /// KL divergence of the effective prior from the prior (nats).
    pub i_sel: f64,
    /// Mutual information between the input and the success flag (nats).
    pub i_alpha_s: f64,
}

/// Cantelli-certified objective `J_λ = F − λD`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustObjective {
    pub lambda: f64,
    /// `λ²/(1+λ²)`.
    pub eta: f64,
    /// Fidelity slack of the throughput bound.
    pub delta: f64,
}

impl RobustObjective {
    pub fn new(lambda: f64, delta: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(invalid("lambda", format!("must be finite and > 0, got {lambda}")));
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(invalid("delta", format!("must be finite and > 0, got {delta}")));
        }
        Ok(Self {
            lambda,
            eta: cantelli_guarantee(lambda),
            delta,
        })
    }

    pub fn value(&self, merit: &MeritTriple) -> f64 {
        robust_objective(merit, self.lambda)
    }
}

/// Everything computed in one pass over the radial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub merit: MeritTriple,
    pub report: SelectivityReport,
    /// `E[f²]` under the effective prior, computed independently of `D`.
    pub second_moment: f64,
    pub log_p_succ: f64,
    /// All point integrals converged and the grid-doubling check passed.
    pub converged: bool,
    /// Largest change of `(F, D, P_succ)` under panel doubling.
    pub grid_delta: f64,
}

/// Radial samples of a protocol on one grid.
struct RadialSamples {
    log_weights: Vec<f64>,
    points: Vec<PointEvaluation>,
    slopes: Option<Vec<f64>>,
}

/// Upper truncation radius of the ensemble integrals.
pub fn ensemble_radius(proto: &Protocol, prior: &PriorSpec, cfg: &QuadConfig) -> f64 {
    let base = prior_truncation_radius(prior, cfg.prior_trunc_eps);
    match proto.cutoff() {
        Some(m_c) => m_c + 6.0 * proto.params.v_n().sqrt() + base,
        None => base,
    }
}

fn panel_count(proto: &Protocol, prior: &PriorSpec, r_max: f64) -> usize {
    let mut width = 0.5 * prior.sigma();
    if let Some(m_c) = proto.cutoff() {
        width = width.min(0.5 * proto.params.v_n().sqrt()).min(0.5 * m_c);
    }
    ((r_max / width).ceil() as usize).clamp(4, 20_000)
}

fn slope_at(r: f64, f_mid: f64, proto: &Protocol, cfg: &QuadConfig, step: f64) -> (f64, bool) {
    if r < step {
        // One-sided at the origin.
        let up = evaluate_point(r + step, proto, cfg);
        ((up.fidelity() - f_mid) / step, up.converged)
    } else {
        let up = evaluate_point(r + step, proto, cfg);
        let down = evaluate_point(r - step, proto, cfg);
        ((up.fidelity() - down.fidelity()) / (2.0 * step), up.converged && down.converged)
    }
}

fn sample(proto: &Protocol, prior: &PriorSpec, cfg: &QuadConfig, panels: usize, slope_step: Option<f64>) -> RadialSamples {
    let r_max = ensemble_radius(proto, prior, cfg);
    let grid = RadialGrid::new(prior, r_max, panels, cfg.radial_order);
    let v_n = proto.params.v_n();
    let m_c = proto.cutoff();

    // Evaluate in batches of increasing radius; stop once the Gaussian tail
    // bound P_succ(r) ≤ exp(−(r − m_c)²/V_n) makes the remainder negligible.
    let nodes = grid.nodes();
    let mut points: Vec<PointEvaluation> = Vec::with_capacity(nodes.len());
    let mut running_max = f64::NEG_INFINITY;
    let batch = cfg.radial_order.max(1);
    'outer: for chunk_start in (0..nodes.len()).step_by(batch) {
        let end = (chunk_start + batch).min(nodes.len());
        if let Some(m_c) = m_c {
            let r = nodes[chunk_start];
            if r > m_c && running_max.is_finite() {
                let d = r - m_c;
                let bound = grid.log_weights()[chunk_start..end]
                    .iter()
                    .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
                    - d * d / v_n;
                if bound < running_max - LOG_NEGLIGIBLE {
                    break 'outer;
                }
            }
        }
        let evaluated: Vec<PointEvaluation> = nodes[chunk_start..end]
            .par_iter()
            .map(|&r| evaluate_point(r, proto, cfg))
            .collect();
        for (i, p) in evaluated.iter().enumerate() {
            running_max = running_max.max(grid.log_weights()[chunk_start + i] + p.log_p_succ);
        }
        points.extend(evaluated);
    }
    let log_weights = grid.log_weights()[..points.len()].to_vec();

    let slopes = slope_step.map(|step| {
        points
            .par_iter()
            .map(|p| slope_at(p.r, p.fidelity(), proto, cfg, step))
            .collect::<Vec<_>>()
    });
    let slope_ok = slopes.as_ref().is_none_or(|s| s.iter().all(|x| x.1));
    let mut samples = RadialSamples {
        log_weights,
        points,
        slopes: slopes.map(|s| s.into_iter().map(|x| x.0).collect()),
    };
    if !slope_ok {
        // Surface slope failures through the point flags.
        if let Some(p) = samples.points.first_mut() {
            p.converged = false;
        }
    }
    samples
}

fn clamp_nonnegative(what: &'static str, value: f64) -> Result<f64> {
    if value >= 0.0 {
        Ok(value)
    } else if value >= -NEGATIVE_ROUNDOFF {
        Ok(0.0)
    } else {
        Err(Error::NegativeBeyondRoundoff { what, value })
    }
}

/// Binary entropy in nats with `h₂(0) = h₂(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(invalid("x", format!("binary entropy needs x in [0, 1], got {x}")));
    }
    Ok(binary_entropy_unchecked(x))
}

fn binary_entropy_unchecked(x: f64) -> f64 {
    let term = |p: f64, ln_p: f64| if p > 0.0 { -p * ln_p } else { 0.0 };
    term(x, x.ln()) + term(1.0 - x, (-x).ln_1p())
}

fn summarize_samples(proto: &Protocol, samples: &RadialSamples) -> Result<EnsembleSummary> {
    let n = samples.points.len();
    if n == 0 {
        return Err(Error::EmptyInput("radial grid"));
    }
    let accept_all = proto.filter.is_accept_all();
    let log_joint: Vec<f64> = samples
        .log_weights
        .iter()
        .zip(&samples.points)
        .map(|(lw, p)| lw + p.log_p_succ)
        .collect();
    let log_p_succ = if accept_all { 0.0 } else { log_sum_guard(&log_joint)? };
    let p_succ = if accept_all { 1.0 } else { log_p_succ.exp() };
    let post: Vec<f64> = log_joint.iter().map(|l| (l - log_p_succ).exp()).collect();
    let mass: f64 = post.iter().sum();
    // Normalize against the grid's own mass so the moments are those of a
    // probability measure even for the truncated prior.
    let post: Vec<f64> = post.iter().map(|w| w / mass).collect();

    let f: Vec<f64> = samples.points.iter().map(PointEvaluation::fidelity).collect();
    let mean = |xs: &[f64]| -> f64 { xs.iter().zip(&post).map(|(x, w)| x * w).sum() };
    let big_f = mean(&f);
    let second_moment: f64 = f.iter().zip(&post).map(|(x, w)| w * x * x).sum();
    let var = f.iter().zip(&post).map(|(x, w)| w * (x - big_f).powi(2)).sum::<f64>();
    let d = clamp_nonnegative("fidelity variance", var)?.sqrt();

    let ln_f: Vec<f64> = samples.points.iter().map(|p| p.log_fidelity).collect();
    let mean_ln_f = mean(&ln_f);
    let s2 = clamp_nonnegative(
        "log-fidelity variance",
        ln_f.iter().zip(&post).map(|(x, w)| w * (x - mean_ln_f).powi(2)).sum(),
    )?;
    let s1 = samples
        .slopes
        .as_ref()
        .map_or(0.0, |sl| sl.iter().zip(&post).map(|(x, w)| w * x.abs()).sum());

    let i_sel = if accept_all {
        0.0
    } else {
        let expected_log: f64 = samples.points.iter().zip(&post).map(|(p, w)| w * p.log_p_succ).sum();
        clamp_nonnegative("selectivity divergence", expected_log - log_p_succ)?
    };
    let i_alpha_s = if accept_all {
        0.0
    } else {
        let conditional: f64 = samples
            .log_weights
            .iter()
            .zip(&samples.points)
            .map(|(lw, p)| lw.exp() * binary_entropy_unchecked(p.p_succ().min(1.0)))
            .sum();
        clamp_nonnegative("heralding mutual information", binary_entropy_unchecked(p_succ.min(1.0)) - conditional)?
    };

    Ok(EnsembleSummary {
        merit: MeritTriple { f: big_f, d, p_succ },
        report: SelectivityReport {
            s: d,
            s1,
            s2,
            i_sel,
            i_alpha_s,
        },
        second_moment,
        log_p_succ,
        converged: samples.points.iter().all(|p| p.converged),
        grid_delta: 0.0,
    })
}

/// One-pass evaluation of the merit triple, selectivity indices and
/// information functionals. The radial grid is validated by doubling its
/// panel count; the finer result is returned.
///
/// `slope_step` enables the `S1` index (central differences of that step).
pub fn summarize(proto: &Protocol, prior: &PriorSpec, cfg: &QuadConfig, slope_step: Option<f64>) -> Result<EnsembleSummary> {
    cfg.validate()?;
    if let Some(h) = slope_step {
        if !(h.is_finite() && h > 0.0) {
            return Err(invalid("slope_step", format!("must be finite and > 0, got {h}")));
        }
    }
    let r_max = ensemble_radius(proto, prior, cfg);
    let panels = panel_count(proto, prior, r_max);
    let coarse = summarize_samples(proto, &sample(proto, prior, cfg, panels, None))?;
    let mut fine = summarize_samples(proto, &sample(proto, prior, cfg, 2 * panels, slope_step))?;
    let delta = [
        (fine.merit.f - coarse.merit.f).abs(),
        (fine.merit.d - coarse.merit.d).abs(),
        (fine.merit.p_succ - coarse.merit.p_succ).abs() / fine.merit.p_succ.max(f64::MIN_POSITIVE),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    fine.grid_delta = delta;
    fine.converged &= coarse.converged && delta <= 10.0 * cfg.rel_tol;
    Ok(fine)
}

fn require_converged(s: EnsembleSummary) -> Result<EnsembleSummary> {
    if s.converged {
        Ok(s)
    } else {
        Err(Error::NotConverged {
            estimate: s.merit.f,
            error_bound: s.grid_delta,
        })
    }
}

/// `(F, D, P_succ)` over the coherent-state prior.
pub fn conditional_moments(proto: &Protocol, prior: &PriorSpec, cfg: &QuadConfig) -> Result<MeritTriple> {
    Ok(require_converged(summarize(proto, prior, cfg, None)?)?.merit)
}

/// Density of the success-conditioned input distribution
/// `p_σ(α)·P_succ(α)/P_succ` at `|α| = r`, against `d²α`.
pub fn effective_prior_density(r: f64, proto: &Protocol, prior: &PriorSpec, cfg: &QuadConfig) -> Result<f64> {
    let total = require_converged(summarize(proto, prior, cfg, None)?)?;
    let p = crate::profile::success_probability(r, proto, cfg)?;
    Ok(prior.density(r) * (p.log_value - total.log_p_succ).exp())
}

/// Default central-difference step of the `S1` index.
pub const DEFAULT_SLOPE_STEP: f64 = 1e-3;

pub fn selectivity_indices(proto: &Protocol, prior: &PriorSpec, cfg: &QuadConfig, slope_step: f64) -> Result<SelectivityReport> {
    Ok(require_converged(summarize(proto, prior, cfg, Some(slope_step))?)?.report)
}

/// `I(α;S) = h₂(P_succ) − E_σ[h₂(P_succ(α))]` in nats.
pub fn heralding_mutual_information(proto: &Protocol, prior: &PriorSpec, cfg: &QuadConfig) -> Result<f64> {
    Ok(require_converged(summarize(proto, prior, cfg, None)?)?.report.i_alpha_s)
}

/// `I_sel = E_succ[ln P_succ(α)] − ln P_succ` in nats.
pub fn selectivity_divergence(proto: &Protocol, prior: &PriorSpec, cfg: &QuadConfig) -> Result<f64> {
    Ok(require_converged(summarize(proto, prior, cfg, None)?)?.report.i_sel)
}

pub fn robust_objective(merit: &MeritTriple, lambda: f64) -> f64 {
    merit.f - lambda * merit.d
}

/// Cantelli lower bound `λ²/(1+λ²)` on the fraction of successful runs with
/// fidelity at least `F − λD`.
pub fn cantelli_guarantee(lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    l2 / (1.0 + l2)
}

/// Chebyshev lower bound `P_succ·(1 − D²/δ²)` on the per-trial probability
/// of a success with fidelity at least `F − δ`, floored at zero.
pub fn throughput_bound(merit: &MeritTriple, delta: f64) -> f64 {
    (merit.p_succ * (1.0 - (merit.d / delta).powi(2))).max(0.0)
}

/// Standard deviation of `f_succ(r) − f_ref(r)` under the effective prior of
/// `proto`, where `f_ref` is the profile of `reference`. With a flat
/// reference this is `D`.
pub fn relative_dispersion(proto: &Protocol, reference: &Protocol, prior: &PriorSpec, cfg: &QuadConfig) -> Result<f64> {
    cfg.validate()?;
    let r_max = ensemble_radius(proto, prior, cfg);
    let samples = sample(proto, prior, cfg, 2 * panel_count(proto, prior, r_max), None);
    let log_p = log_sum_guard(
        &samples
            .log_weights
            .iter()
            .zip(&samples.points)
            .map(|(lw, p)| lw + p.log_p_succ)
            .collect::<Vec<_>>(),
    )?;
    let mut converged = samples.points.iter().all(|p| p.converged);
    let mut diff = Vec::with_capacity(samples.points.len());
    let mut post = Vec::with_capacity(samples.points.len());
    for (lw, p) in samples.log_weights.iter().zip(&samples.points) {
        let r = evaluate_point(p.r, reference, cfg);
        converged &= r.converged;
        diff.push(p.fidelity() - r.fidelity());
        post.push((lw + p.log_p_succ - log_p).exp());
    }
    if !converged {
        return Err(Error::NotConverged {
            estimate: f64::NAN,
            error_bound: f64::NAN,
        });
    }
    let mass: f64 = post.iter().sum();
    let mean: f64 = diff.iter().zip(&post).map(|(x, w)| x * w).sum::<f64>() / mass;
    let var: f64 = diff.iter().zip(&post).map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / mass;
    Ok(clamp_nonnegative("relative dispersion", var)?.sqrt())
}

/// `radial_prior_average(P_succ(r)/P_succ)`; equals one for a consistent
/// ensemble.
pub fn effective_prior_mass(proto: &Protocol, prior: &PriorSpec, cfg: &QuadConfig) -> Result<f64> {
    let total = require_converged(summarize(proto, prior, cfg, None)?)?;
    let r_max = ensemble_radius(proto, prior, cfg);
    radial_prior_average(
        |r| (evaluate_point(r, proto, cfg).log_p_succ - total.log_p_succ).exp(),
        prior,
        r_max,
        cfg,
    )
}
