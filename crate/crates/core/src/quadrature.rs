//! Deterministic integration over the filter's acceptance disk and over the
//! radial coherent-state prior.
//!
//! Everything is built from fixed-order Gauss–Legendre panels. The 1-D
//! integrator bisects panels adaptively; it is vector valued so that several
//! integrands sharing the same nodes (numerator and denominator of a ratio,
//! say) see identical discretization.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::model::PriorSpec;

/// Quadrature orders and tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    /// Gauss–Legendre nodes per radial panel.
    pub radial_order: usize,
    /// Gauss–Legendre nodes per angular panel.
    pub angular_order: usize,
    /// Initial panel count of each adaptive integral.
    pub panels: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Target for the discarded prior tail in ensemble averages.
    pub prior_trunc_eps: f64,
    /// Bisection budget of a single adaptive integral.
    pub max_panels: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            radial_order: 16,
            angular_order: 16,
            panels: 2,
            rel_tol: 1e-9,
            abs_tol: 1e-14,
            prior_trunc_eps: 1e-12,
            max_panels: 256,
        }
    }
}

impl QuadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radial_order < 8 {
            return Err(invalid("quad.radial_order", "must be >= 8"));
        }
        if self.angular_order < 8 {
            return Err(invalid("quad.angular_order", "must be >= 8"));
        }
        if self.panels < 1 {
            return Err(invalid("quad.panels", "must be >= 1"));
        }
        if self.max_panels < self.panels {
            return Err(invalid("quad.max_panels", "must be >= quad.panels"));
        }
        for (name, v) in [
            ("quad.rel_tol", self.rel_tol),
            ("quad.abs_tol", self.abs_tol),
            ("quad.prior_trunc_eps", self.prior_trunc_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.prior_trunc_eps >= 1.0 {
            return Err(invalid("quad.prior_trunc_eps", "must be < 1"));
        }
        Ok(())
    }

    /// Same tolerances with both node orders doubled; used for grid-convergence checks.
    pub fn refined(&self) -> Self {
        Self {
            radial_order: self.radial_order * 2,
            angular_order: self.angular_order * 2,
            ..*self
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    fn compute(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = nf * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Cached rule of order `n`.
    pub fn of_order(n: usize) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry(n)
            .or_insert_with(|| Arc::new(Self::compute(n)))
            .clone()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Applies the rule on `[a, b]`.
    pub fn apply<const N: usize>(&self, a: f64, b: f64, f: &mut impl FnMut(f64) -> [f64; N]) -> [f64; N] {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let mut acc = [0.0; N];
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let v = f(mid + half * x);
            for k in 0..N {
                acc[k] += w * v[k];
            }
        }
        acc.map(|s| s * half)
    }
}

/// Relative/absolute stopping rule.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

/// Result of a (vector) integral with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<const N: usize> {
    pub value: [f64; N],
    pub error: [f64; N],
    pub converged: bool,
}

impl<const N: usize> Estimate<N> {
    fn zero() -> Self {
        Self {
            value: [0.0; N],
            error: [0.0; N],
            converged: true,
        }
    }

    fn add(&mut self, other: &Self) {
        for k in 0..N {
            self.value[k] += other.value[k];
            self.error[k] += other.error[k];
        }
        self.converged &= other.converged;
    }
}

impl Estimate<1> {
    pub(crate) fn into_result(self) -> Result<f64> {
        if self.converged {
            Ok(self.value[0])
        } else {
            Err(Error::NotConverged {
                estimate: self.value[0],
                error_bound: self.error[0],
            })
        }
    }
}

struct Panel<const N: usize> {
    a: f64,
    b: f64,
    left: [f64; N],
    right: [f64; N],
    error: [f64; N],
}

impl<const N: usize> Panel<N> {
    fn new(a: f64, b: f64, whole: [f64; N], rule: &GaussLegendre, f: &mut impl FnMut(f64) -> [f64; N]) -> Self {
        let m = 0.5 * (a + b);
        let left = rule.apply(a, m, f);
        let right = rule.apply(m, b, f);
        let mut error = [0.0; N];
        for k in 0..N {
            error[k] = (whole[k] - left[k] - right[k]).abs();
        }
        Self {
            a,
            b,
            left,
            right,
            error,
        }
    }

    fn value(&self, k: usize) -> f64 {
        self.left[k] + self.right[k]
    }
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (l, r) = xs.split_at(xs.len() / 2);
    pairwise_sum(l) + pairwise_sum(r)
}

/// Globally adaptive bisection on `[a, b]`: the panel with the largest scaled
/// error is split until every component meets `max(abs, rel·|I_k|)`.
pub(crate) fn integrate_adaptive<const N: usize>(
    f: &mut impl FnMut(f64) -> [f64; N],
    a: f64,
    b: f64,
    rule: &GaussLegendre,
    initial_panels: usize,
    tol: Tolerance,
    max_panels: usize,
) -> Estimate<N> {
    if b <= a {
        return Estimate::zero();
    }
    let n0 = initial_panels.max(1);
    let h = (b - a) / n0 as f64;
    let mut panels: Vec<Panel<N>> = (0..n0)
        .map(|i| {
            let pa = a + h * i as f64;
            let pb = if i + 1 == n0 { b } else { a + h * (i + 1) as f64 };
            let whole = rule.apply(pa, pb, f);
            Panel::new(pa, pb, whole, rule, f)
        })
        .collect();

    let mut buf = Vec::with_capacity(max_panels);
    loop {
        let mut value = [0.0; N];
        let mut error = [0.0; N];
        for k in 0..N {
            buf.clear();
            buf.extend(panels.iter().map(|p| p.value(k)));
            value[k] = pairwise_sum(&buf);
            buf.clear();
            buf.extend(panels.iter().map(|p| p.error[k]));
            error[k] = pairwise_sum(&buf);
        }
        let scale: [f64; N] = std::array::from_fn(|k| (tol.rel * value[k].abs()).max(tol.abs));
        let done = (0..N).all(|k| error[k] <= scale[k]);
        if done || panels.len() >= max_panels {
            return Estimate {
                value,
                error,
                converged: done,
            };
        }
        let worst = panels
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let e: f64 = (0..N).map(|k| p.error[k] / scale[k]).fold(0.0, f64::max);
                (i, e)
            })
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
            .0;
        let p = panels.remove(worst);
        let m = 0.5 * (p.a + p.b);
        let left = Panel::new(p.a, m, p.left, rule, f);
        let right = Panel::new(m, p.b, p.right, rule, f);
        panels.insert(worst, right);
        panels.insert(worst, left);
    }
}

/// Integrates `integrand(s, cos φ)` over the acceptance set
/// `{n : |α + n| ≤ m_c}` with `|α| = r`, in polar coordinates `n = s·e^{iφ}`
/// relative to the direction of `α`, against `d²n = s ds dφ`.
///
/// At each radius the admissible angles are the exact arc
/// `cos φ ≤ (m_c² − r² − s²)/(2rs)`; only `φ ∈ [0, π]` is integrated and the
/// result doubled. On the partially covered annulus the arc length has
/// square-root endpoints, removed by the substitution
/// `s = a + (b − a)(1 − cos t)/2`.
pub(crate) fn disk_integral<const N: usize>(
    integrand: &impl Fn(f64, f64) -> [f64; N],
    r: f64,
    m_c: f64,
    cfg: &QuadConfig,
) -> Estimate<N> {
    let radial = GaussLegendre::of_order(cfg.radial_order);
    let angular = GaussLegendre::of_order(cfg.angular_order);
    let outer_tol = Tolerance {
        rel: cfg.rel_tol,
        abs: cfg.abs_tol,
    };
    let inner_tol = Tolerance {
        rel: cfg.rel_tol * 0.1,
        abs: cfg.abs_tol * 0.1,
    };
    let mut inner_ok = true;

    let mut total = Estimate::<N>::zero();

    // Fully covered disk |n| ≤ m_c − r: the whole circle is accepted.
    let full_end = (m_c - r).max(0.0);
    if full_end > 0.0 {
        let mut outer = |s: f64| -> [f64; N] {
            let inner = integrate_adaptive(
                &mut |phi: f64| integrand(s, phi.cos()),
                0.0,
                PI,
                &angular,
                1,
                inner_tol,
                cfg.max_panels,
            );
            inner_ok &= inner.converged;
            inner.value.map(|v| 2.0 * s * v)
        };
        let est = integrate_adaptive(&mut outer, 0.0, full_end, &radial, cfg.panels, outer_tol, cfg.max_panels);
        total.add(&est);
    }

    // Partially covered annulus |m_c − r| ≤ s ≤ m_c + r.
    if r > 0.0 {
        let a = (m_c - r).abs();
        let b = m_c + r;
        let mut outer = |t: f64| -> [f64; N] {
            let s = a + (b - a) * 0.5 * (1.0 - t.cos());
            let jac = 0.5 * (b - a) * t.sin();
            if s <= 0.0 || jac <= 0.0 {
                return [0.0; N];
            }
            let c = (m_c * m_c - r * r - s * s) / (2.0 * r * s);
            let phi0 = c.clamp(-1.0, 1.0).acos();
            if phi0 >= PI {
                return [0.0; N];
            }
            let inner = integrate_adaptive(
                &mut |phi: f64| integrand(s, phi.cos()),
                phi0,
                PI,
                &angular,
                1,
                inner_tol,
                cfg.max_panels,
            );
            inner_ok &= inner.converged;
            inner.value.map(|v| 2.0 * s * jac * v)
        };
        let est = integrate_adaptive(&mut outer, 0.0, PI, &radial, cfg.panels, outer_tol, cfg.max_panels);
        total.add(&est);
    }

    total.converged &= inner_ok;
    total
}

/// Integral of `integrand(s, cos φ)` over the acceptance set of a disk filter
/// with cut-off `m_c` for an input of modulus `r` (see module docs for the
/// parameterization).
pub fn disk_average(integrand: impl Fn(f64, f64) -> f64, r: f64, m_c: f64, cfg: &QuadConfig) -> Result<f64> {
    cfg.validate()?;
    if !(r.is_finite() && r >= 0.0) {
        return Err(invalid("r", format!("must be finite and >= 0, got {r}")));
    }
    if !(m_c.is_finite() && m_c > 0.0) {
        return Err(invalid("m_c", format!("must be finite and > 0, got {m_c}")));
    }
    disk_integral(&|s, c| [integrand(s, c)], r, m_c, cfg).into_result()
}

/// Integrates `integrand(m)` over the centred disk `|m| ≤ radius` in absolute
/// polar coordinates `m = ρ e^{iψ}`, `ψ ∈ [0, 2π)`, with no symmetry assumed.
pub(crate) fn centred_disk_integral<const N: usize>(
    integrand: &impl Fn(Complex64) -> [f64; N],
    radius: f64,
    cfg: &QuadConfig,
) -> Estimate<N> {
    let radial = GaussLegendre::of_order(cfg.radial_order);
    let angular = GaussLegendre::of_order(cfg.angular_order);
    let outer_tol = Tolerance {
        rel: cfg.rel_tol,
        abs: cfg.abs_tol,
    };
    let inner_tol = Tolerance {
        rel: cfg.rel_tol * 0.1,
        abs: cfg.abs_tol * 0.1,
    };
    let mut inner_ok = true;
    let mut outer = |rho: f64| -> [f64; N] {
        let inner = integrate_adaptive(
            &mut |psi: f64| integrand(Complex64::from_polar(rho, psi)),
            0.0,
            2.0 * PI,
            &angular,
            4,
            inner_tol,
            cfg.max_panels,
        );
        inner_ok &= inner.converged;
        inner.value.map(|v| rho * v)
    };
    let mut est = integrate_adaptive(&mut outer, 0.0, radius, &radial, cfg.panels, outer_tol, cfg.max_panels);
    est.converged &= inner_ok;
    est
}

/// Truncation radius of the coherent-state prior for a target tail mass `eps`:
/// `σ·√(2 ln(1/eps))`.
pub fn prior_truncation_radius(prior: &PriorSpec, eps: f64) -> f64 {
    prior.sigma() * (2.0 * (1.0 / eps).ln()).sqrt()
}

/// `∫₀^∞ (2r/σ²) e^{−r²/σ²} g(r) dr` for a phase-insensitive `g`.
///
/// The upper limit starts at `max(r_max_hint, σ√(2 ln(1/ε)))` and is doubled
/// until the change falls below `prior_trunc_eps` (relative to the result
/// when it is larger than one).
pub fn radial_prior_average(gfun: impl Fn(f64) -> f64, prior: &PriorSpec, r_max_hint: f64, cfg: &QuadConfig) -> Result<f64> {
    cfg.validate()?;
    if !(r_max_hint.is_finite() && r_max_hint >= 0.0) {
        return Err(invalid("r_max_hint", format!("must be finite and >= 0, got {r_max_hint}")));
    }
    let rule = GaussLegendre::of_order(cfg.radial_order);
    let s2 = prior.sigma() * prior.sigma();
    let tol = Tolerance {
        rel: cfg.rel_tol,
        abs: cfg.abs_tol,
    };
    let mut f = |r: f64| [2.0 * r / s2 * (-r * r / s2).exp() * gfun(r)];
    let mut r_max = r_max_hint.max(prior_truncation_radius(prior, cfg.prior_trunc_eps));
    let panels = cfg.panels.max((r_max / prior.sigma()).ceil() as usize);
    let mut est = integrate_adaptive(&mut f, 0.0, r_max, &rule, panels, tol, cfg.max_panels);
    for _ in 0..8 {
        let tail = integrate_adaptive(&mut f, r_max, 2.0 * r_max, &rule, panels, tol, cfg.max_panels);
        est.add(&tail);
        r_max *= 2.0;
        if tail.value[0].abs() <= cfg.prior_trunc_eps * est.value[0].abs().max(1.0) {
            return est.into_result();
        }
    }
    Err(Error::NotConverged {
        estimate: est.value[0],
        error_bound: est.error[0],
    })
}

/// Composite fixed-order rule against the radial prior measure, stored in the
/// log domain so that products with exponentially small success
/// probabilities never underflow before they are combined.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
}

impl RadialGrid {
    /// `panels` equal panels of `order` Gauss–Legendre nodes on `[0, r_max]`;
    /// each log weight includes the radial prior density.
    pub fn new(prior: &PriorSpec, r_max: f64, panels: usize, order: usize) -> Self {
        let rule = GaussLegendre::of_order(order);
        let panels = panels.max(1);
        let h = r_max / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut log_weights = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let a = h * p as f64;
            for (x, w) in rule.nodes().iter().zip(rule.weights()) {
                let r = a + 0.5 * h * (x + 1.0);
                nodes.push(r);
                log_weights.push((0.5 * h * w).ln() + prior.log_radial_density(r));
            }
        }
        Self { nodes, log_weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// `ln Σ exp(t_i)` with the max-shift technique. `-inf` terms are allowed.
pub fn log_sum_guard(log_terms: &[f64]) -> Result<f64> {
    if log_terms.is_empty() {
        return Err(Error::EmptyInput("log_sum_guard needs at least one term"));
    }
    let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Ok(max);
    }
    let sum: f64 = log_terms.iter().map(|t| (t - max).exp()).sum();
    Ok(max + sum.ln())
}
