//! Single-shot conditional quantities as functions of the input amplitude.
//!
//! For an input `|α⟩` with `|α| = r`,
//!
//! ```text
//! P_succ(r) = ∫ p_n(n) w(α+n) d²n
//! f_succ(r) = ∫ p_n(n) w(α+n) e^{−k|n|²} d²n / ((1+V_ε) P_succ(r)),   k = κ²/(1+V_ε)
//! ```
//!
//! Both integrals are taken over the acceptance disk on the same nodes and
//! carried in the log domain, so `f_succ` stays well defined where
//! `P_succ(r)` underflows.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::model::{deterministic_baseline, FilterSpec, MbNla, SurrogateParams};
use crate::quadrature::{centred_disk_integral, disk_integral, QuadConfig};

/// A surrogate noise model paired with an acceptance rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Protocol {
    pub params: SurrogateParams,
    pub filter: FilterSpec,
}

impl Protocol {
    /// Filtered protocols need `V_n > 0`: with noiseless records the
    /// heralding is a deterministic function of `α`.
    pub fn new(params: SurrogateParams, filter: FilterSpec) -> Result<Self> {
        if filter.as_mbnla().is_some() && params.v_n() <= 0.0 {
            return Err(invalid("V_n", "a filtered protocol needs V_n > 0"));
        }
        Ok(Self { params, filter })
    }

    pub fn accept_all(params: SurrogateParams) -> Self {
        Self {
            params,
            filter: FilterSpec::AcceptAll,
        }
    }

    /// Flat fidelity of the same noise model without heralding.
    pub fn baseline(&self) -> f64 {
        deterministic_baseline(&self.params)
    }

    pub fn cutoff(&self) -> Option<f64> {
        self.filter.as_mbnla().map(MbNla::cutoff)
    }
}

/// Success probability at one amplitude, with its logarithm (always finite).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessProbability {
    pub value: f64,
    pub log_value: f64,
}

/// Log-domain evaluation of `P_succ` and `f_succ` at one radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEvaluation {
    pub r: f64,
    pub log_p_succ: f64,
    pub log_fidelity: f64,
    /// Largest relative error estimate of the two integrals.
    pub rel_error: f64,
    pub converged: bool,
}

impl PointEvaluation {
    pub fn p_succ(&self) -> f64 {
        self.log_p_succ.exp()
    }

    pub fn fidelity(&self) -> f64 {
        self.log_fidelity.exp()
    }

    fn into_checked(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                estimate: self.fidelity(),
                error_bound: self.rel_error * self.fidelity(),
            })
        }
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r.is_finite() && r >= 0.0 {
        Ok(())
    } else {
        Err(invalid("r", format!("must be finite and >= 0, got {r}")))
    }
}

/// Evaluates both integrals at radius `r`. Never fails; non-convergence is
/// reported through [`PointEvaluation::converged`].
pub fn evaluate_point(r: f64, proto: &Protocol, cfg: &QuadConfig) -> PointEvaluation {
    let params = &proto.params;
    let filter = match proto.filter {
        FilterSpec::AcceptAll => {
            return PointEvaluation {
                r,
                log_p_succ: 0.0,
                log_fidelity: proto.baseline().ln(),
                rel_error: 0.0,
                converged: true,
            }
        }
        FilterSpec::MbNla(f) => f,
    };
    let v_n = params.v_n();
    let theta = filter.strength();
    let m_c = filter.cutoff();
    let k = params.correlation_penalty();
    // The integrand peaks at the point of the acceptance disk nearest to
    // n = 0, where w = 1 if r ≥ m_c.
    let s_min = (r - m_c).max(0.0);
    let log_scale = -(PI * v_n).ln() - s_min * s_min / v_n;
    let cut_sq = m_c * m_c;
    let integrand = |s: f64, cos_phi: f64| -> [f64; 2] {
        let m_sq = (r * r + s * s + 2.0 * r * s * cos_phi).min(cut_sq);
        let log_den = (s_min * s_min - s * s) / v_n + theta * (m_sq - cut_sq);
        let den = log_den.exp();
        [den, den * (-k * s * s).exp()]
    };
    let est = disk_integral(&integrand, r, m_c, cfg);
    let [den, num] = est.value;
    let rel_error = (est.error[0] / den).max(est.error[1] / num);
    PointEvaluation {
        r,
        log_p_succ: den.ln() + log_scale,
        log_fidelity: (num / den).ln() - params.v_eps().ln_1p(),
        rel_error,
        converged: est.converged && den > 0.0 && num > 0.0,
    }
}

pub fn success_probability(r: f64, proto: &Protocol, cfg: &QuadConfig) -> Result<SuccessProbability> {
    check_radius(r)?;
    cfg.validate()?;
    let pt = evaluate_point(r, proto, cfg).into_checked()?;
    Ok(SuccessProbability {
        value: pt.p_succ(),
        log_value: pt.log_p_succ,
    })
}

/// Conditional single-shot fidelity `f_succ(r)`; the unheralded control
/// returns the flat baseline `1/(1 + V_ε + κ²V_n)`.
pub fn conditional_fidelity(r: f64, proto: &Protocol, cfg: &QuadConfig) -> Result<f64> {
    check_radius(r)?;
    cfg.validate()?;
    Ok(evaluate_point(r, proto, cfg).into_checked()?.fidelity())
}

/// Upper bound `exp(−k(r − m_c)²)/(1+V_ε)` on `f_succ(r)` valid for `r ≥ m_c`.
pub fn tail_bound(r: f64, proto: &Protocol) -> Result<f64> {
    let filter = proto
        .filter
        .as_mbnla()
        .ok_or_else(|| invalid("filter", "the tail bound needs a finite cut-off"))?;
    check_radius(r)?;
    if r < filter.cutoff() {
        return Err(invalid("r", format!("tail bound holds for r >= m_c = {}, got {r}", filter.cutoff())));
    }
    let d = r - filter.cutoff();
    Ok(proto.params.fidelity_ceiling() * (-proto.params.correlation_penalty() * d * d).exp())
}

/// Tabulated profile over an ascending radius grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityProfile {
    pub radii: Vec<f64>,
    pub f_succ: Vec<f64>,
    /// May underflow to zero far outside the cut-off; see `log_p_succ`.
    pub p_succ: Vec<f64>,
    pub log_p_succ: Vec<f64>,
    pub converged: Vec<bool>,
}

impl FidelityProfile {
    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

/// Default radius grid: 121 points on `[0, m_c + 3]`, or `[0, 6]` without a cut-off.
pub fn default_radii(proto: &Protocol) -> Vec<f64> {
    let top = proto.cutoff().map_or(6.0, |m_c| m_c + 3.0);
    (0..121).map(|i| top * i as f64 / 120.0).collect()
}

/// Point evaluations at arbitrary radii, in input order.
pub fn evaluate_many(radii: &[f64], proto: &Protocol, cfg: &QuadConfig) -> Vec<PointEvaluation> {
    radii.par_iter().map(|&r| evaluate_point(r, proto, cfg)).collect()
}

/// Evaluates `P_succ` and `f_succ` on `radii`. Per-point quadrature failures
/// are recorded in [`FidelityProfile::converged`] rather than aborting.
pub fn profile_table(radii: &[f64], proto: &Protocol, cfg: &QuadConfig) -> Result<FidelityProfile> {
    if radii.is_empty() {
        return Err(Error::EmptyInput("profile radius grid"));
    }
    cfg.validate()?;
    for &r in radii {
        check_radius(r)?;
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("radii", "must be strictly ascending"));
    }
    let points = evaluate_many(radii, proto, cfg);
    Ok(FidelityProfile {
        radii: radii.to_vec(),
        f_succ: points.iter().map(PointEvaluation::fidelity).collect(),
        p_succ: points.iter().map(PointEvaluation::p_succ).collect(),
        log_p_succ: points.iter().map(|p| p.log_p_succ).collect(),
        converged: points.iter().map(|p| p.converged).collect(),
    })
}

/// Evaluates `P_succ(α)` and `f_succ(α)` by direct two-dimensional
/// integration over the Bell record `m = ρ e^{iψ}` at a complex `α`, without
/// using rotational symmetry.
pub fn evaluate_point_2d(alpha: Complex64, proto: &Protocol, cfg: &QuadConfig) -> PointEvaluation {
    let params = &proto.params;
    let v_n = params.v_n();
    let r = alpha.norm();
    if v_n == 0.0 {
        // Only the control admits noiseless records: n ≡ 0, overlap at the ceiling.
        return PointEvaluation {
            r,
            log_p_succ: 0.0,
            log_fidelity: params.fidelity_ceiling().ln(),
            rel_error: 0.0,
            converged: true,
        };
    }
    let k = params.correlation_penalty();
    let (est, log_scale) = match proto.filter {
        FilterSpec::AcceptAll => {
            // e^{−40} of the noise mass lies outside this disk.
            let radius = r + (40.0 * v_n).sqrt();
            let integrand = |m: Complex64| -> [f64; 2] {
                let n_sq = (m - alpha).norm_sqr();
                let den = (-n_sq / v_n).exp();
                [den, den * (-k * n_sq).exp()]
            };
            (centred_disk_integral(&integrand, radius, cfg), -(PI * v_n).ln())
        }
        FilterSpec::MbNla(f) => {
            let theta = f.strength();
            let m_c = f.cutoff();
            let s_min = (r - m_c).max(0.0);
            let integrand = |m: Complex64| -> [f64; 2] {
                let n_sq = (m - alpha).norm_sqr();
                let den = ((s_min * s_min - n_sq) / v_n + theta * (m.norm_sqr() - m_c * m_c)).exp();
                [den, den * (-k * n_sq).exp()]
            };
            let log_scale = -(PI * v_n).ln() - s_min * s_min / v_n;
            (centred_disk_integral(&integrand, m_c, cfg), log_scale)
        }
    };
    let [den, num] = est.value;
    PointEvaluation {
        r,
        log_p_succ: den.ln() + log_scale,
        log_fidelity: (num / den).ln() - params.v_eps().ln_1p(),
        rel_error: (est.error[0] / den).max(est.error[1] / num),
        converged: est.converged && den > 0.0 && num > 0.0,
    }
}

/// `f_succ(α)` from [`evaluate_point_2d`]; an independent check of
/// [`conditional_fidelity`] that must agree with it at every phase.
pub fn phase_invariance_probe(alpha: Complex64, proto: &Protocol, cfg: &QuadConfig) -> Result<f64> {
    cfg.validate()?;
    if !(alpha.re.is_finite() && alpha.im.is_finite()) {
        return Err(invalid("alpha", "must be finite"));
    }
    Ok(evaluate_point_2d(alpha, proto, cfg).into_checked()?.fidelity())
}
