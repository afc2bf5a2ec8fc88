//! Nested Monte Carlo estimates of the point profile and the ensemble triple.
//!
//! Every random number comes from a ChaCha8 stream keyed by
//! `(seed, purpose)` with stream id `(outer << 32) | group`, so results do not
//! depend on the number of worker threads.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::ensemble::{binary_entropy, MeritTriple};
use crate::error::{invalid, Error, Result};
use crate::model::{conditional_overlap, filter_weight, FilterSpec, PriorSpec};
use crate::profile::Protocol;

/// Inner samples are split into this many independently seeded groups.
const INNER_GROUPS: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    /// Continuous acceptance weight and analytic `ε` marginalization.
    #[default]
    RaoBlackwell,
    /// Bernoulli acceptance, explicit `ε` draw and per-shot fidelity.
    FullBrute,
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "raoblackwell" => Ok(Self::RaoBlackwell),
            "fullbrute" => Ok(Self::FullBrute),
            _ => Err(invalid("estimator", format!("expected RaoBlackwell or FullBrute, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub seed: u64,
    /// Number of input amplitudes drawn from the prior.
    pub n_outer: usize,
    /// Number of noise samples per amplitude.
    pub n_inner: usize,
    pub estimator: Estimator,
    /// Delete-one-group jackknife correction of the inner ratio bias.
    pub jackknife: bool,
    pub bootstrap_resamples: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            n_outer: 2000,
            n_inner: 10_000,
            estimator: Estimator::RaoBlackwell,
            jackknife: false,
            bootstrap_resamples: 200,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_outer < 100 {
            return Err(invalid("n_outer", format!("must be >= 100, got {}", self.n_outer)));
        }
        if self.n_inner < 1000 {
            return Err(invalid("n_inner", format!("must be >= 1000, got {}", self.n_inner)));
        }
        if self.bootstrap_resamples < 2 {
            return Err(invalid(
                "bootstrap_resamples",
                format!("must be >= 2, got {}", self.bootstrap_resamples),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Purpose {
    Point = 1,
    Outer = 2,
    Inner = 3,
    Bootstrap = 4,
    Effective = 5,
    Flag = 6,
}

/// Counter-based stream for `(seed, purpose, stream)`.
fn stream(seed: u64, purpose: Purpose, id: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(id);
    rng
}

fn stream_id(outer: u64, group: u64) -> u64 {
    (outer << 32) | group
}

/// Circular complex Gaussian with `E|z|² = variance`.
fn complex_gaussian(rng: &mut impl Rng, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Running sums of a weight `x` and a weighted score `y`.
#[derive(Debug, Clone, Copy, Default)]
struct RatioSums {
    n: f64,
    x: f64,
    xx: f64,
    y: f64,
    xy: f64,
    yy: f64,
}

impl RatioSums {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.x += x;
        self.xx += x * x;
        self.y += y;
        self.xy += x * y;
        self.yy += y * y;
    }

    fn merge(mut self, o: &Self) -> Self {
        self.n += o.n;
        self.x += o.x;
        self.xx += o.xx;
        self.y += o.y;
        self.xy += o.xy;
        self.yy += o.yy;
        self
    }

    fn mean_x(&self) -> f64 {
        self.x / self.n
    }

    fn ratio(&self) -> f64 {
        self.y / self.x
    }

    fn se_x(&self) -> f64 {
        let m = self.mean_x();
        ((self.xx / self.n - m * m).max(0.0) / (self.n - 1.0)).sqrt()
    }

    /// Delta-method standard error of `Σy/Σx`.
    fn se_ratio(&self) -> f64 {
        let r = self.ratio();
        let resid = (self.yy - 2.0 * r * self.xy + r * r * self.xx) / self.n;
        let mx = self.mean_x();
        (resid.max(0.0) / (self.n - 1.0)).sqrt() / mx
    }
}

fn inner_group(alpha: Complex64, proto: &Protocol, estimator: Estimator, rng: &mut ChaCha8Rng, count: usize) -> RatioSums {
    let params = &proto.params;
    let mut sums = RatioSums::default();
    for _ in 0..count {
        let n = complex_gaussian(rng, params.v_n());
        let w = filter_weight(alpha + n, &proto.filter);
        match estimator {
            Estimator::RaoBlackwell => sums.push(w, w * conditional_overlap(n, params)),
            Estimator::FullBrute => {
                let u: f64 = rng.random();
                let eps = complex_gaussian(rng, params.v_eps());
                if u < w {
                    let delta = params.kappa() * n + eps;
                    sums.push(1.0, (-delta.norm_sqr()).exp());
                } else {
                    sums.push(0.0, 0.0);
                }
            }
        }
    }
    sums
}

/// Inner sums for one amplitude, kept per group for the jackknife.
fn inner_sums(alpha: Complex64, proto: &Protocol, cfg: &OracleConfig, purpose: Purpose, outer: u64) -> Vec<RatioSums> {
    let per = cfg.n_inner as u64 / INNER_GROUPS;
    let extra = cfg.n_inner as u64 % INNER_GROUPS;
    (0..INNER_GROUPS)
        .map(|g| {
            let count = per + u64::from(g < extra);
            let mut rng = stream(cfg.seed, purpose, stream_id(outer, g));
            inner_group(alpha, proto, cfg.estimator, &mut rng, count as usize)
        })
        .collect()
}

fn total(groups: &[RatioSums]) -> RatioSums {
    groups.iter().fold(RatioSums::default(), |a, b| a.merge(b))
}

fn jackknife_ratio(groups: &[RatioSums]) -> f64 {
    let all = total(groups);
    let g = groups.len() as f64;
    let loo_mean = groups
        .iter()
        .map(|s| (all.y - s.y) / (all.x - s.x))
        .sum::<f64>()
        / g;
    g * all.ratio() - (g - 1.0) * loo_mean
}

/// Monte Carlo estimate of `(P_succ(r), f_succ(r))` with standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEstimate {
    pub p_succ: f64,
    pub p_err: f64,
    pub f: f64,
    pub f_err: f64,
    /// Number of accepted shots (FullBrute) or of nonzero weights.
    pub accepted: u64,
}

/// Estimates the profile at `α = r` from `n_inner` noise samples.
pub fn mc_point(r: f64, proto: &Protocol, cfg: &OracleConfig) -> Result<PointEstimate> {
    mc_point_at(Complex64::new(r, 0.0), proto, cfg)
}

pub fn mc_point_at(alpha: Complex64, proto: &Protocol, cfg: &OracleConfig) -> Result<PointEstimate> {
    if !(alpha.re.is_finite() && alpha.im.is_finite()) {
        return Err(invalid("alpha", "must be finite"));
    }
    if cfg.n_inner < 1000 {
        return Err(invalid("n_inner", format!("must be >= 1000, got {}", cfg.n_inner)));
    }
    let groups: Vec<RatioSums> = {
        let per = cfg.n_inner as u64 / INNER_GROUPS;
        let extra = cfg.n_inner as u64 % INNER_GROUPS;
        (0..INNER_GROUPS)
            .into_par_iter()
            .map(|g| {
                let count = per + u64::from(g < extra);
                let mut rng = stream(cfg.seed, Purpose::Point, stream_id(0, g));
                inner_group(alpha, proto, cfg.estimator, &mut rng, count as usize)
            })
            .collect()
    };
    point_from_groups(&groups, cfg)
}

fn point_from_groups(groups: &[RatioSums], cfg: &OracleConfig) -> Result<PointEstimate> {
    let all = total(groups);
    if all.x <= 0.0 {
        return Err(Error::Inconclusive(format!(
            "no accepted samples out of {} (acceptance count 0)",
            all.n
        )));
    }
    let accepted = match cfg.estimator {
        Estimator::FullBrute => all.x as u64,
        Estimator::RaoBlackwell => all.n as u64,
    };
    let f = if cfg.jackknife && groups.iter().all(|g| all.x - g.x > 0.0) {
        jackknife_ratio(groups)
    } else {
        all.ratio()
    };
    Ok(PointEstimate {
        p_succ: all.mean_x(),
        p_err: all.se_x(),
        f,
        f_err: all.se_ratio(),
        accepted,
    })
}

/// Ensemble triple with bootstrap standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleEstimate {
    pub merit: MeritTriple,
    pub errors: MeritTriple,
    /// Root-mean-square inner standard error of `f̂_i`, success-weighted.
    /// `D̂` is inflated by roughly this amount in quadrature.
    pub inner_noise_floor: f64,
    /// Number of amplitudes with at least one accepted sample.
    pub effective_outer: usize,
}

struct OuterSample {
    p: f64,
    f: f64,
    f_var: f64,
}

fn moments(samples: &[OuterSample], idx: impl Iterator<Item = usize> + Clone) -> MeritTriple {
    let (mut sp, mut spf, mut spf2, mut count) = (0.0, 0.0, 0.0, 0.0);
    for i in idx {
        let s = &samples[i];
        count += 1.0;
        sp += s.p;
        if s.p > 0.0 {
            spf += s.p * s.f;
            spf2 += s.p * s.f * s.f;
        }
    }
    let f = spf / sp;
    let d2 = spf2 / sp - f * f;
    MeritTriple {
        f,
        d: d2.max(0.0).sqrt(),
        p_succ: sp / count,
    }
}

/// Draws `n_outer` amplitudes from the prior and estimates `(F, D, P_succ)`
/// from inner estimates `(P̂_i, f̂_i)`: `F̂ = Σ P̂_i f̂_i / Σ P̂_i` and the
/// second moment likewise with `f̂_i²`.
pub fn mc_ensemble(proto: &Protocol, prior: &PriorSpec, cfg: &OracleConfig) -> Result<EnsembleEstimate> {
    cfg.validate()?;
    let samples: Vec<OuterSample> = (0..cfg.n_outer as u64)
        .into_par_iter()
        .map(|i| -> Result<OuterSample> {
            let mut rng = stream(cfg.seed, Purpose::Outer, i);
            let alpha = complex_gaussian(&mut rng, prior.sigma().powi(2));
            let groups = inner_sums(alpha, proto, cfg, Purpose::Inner, i);
            let all = total(&groups);
            if all.x <= 0.0 {
                return Ok(OuterSample { p: 0.0, f: 0.0, f_var: 0.0 });
            }
            let est = point_from_groups(&groups, cfg)?;
            Ok(OuterSample {
                p: est.p_succ,
                f: est.f,
                f_var: est.f_err.powi(2),
            })
        })
        .collect::<Result<_>>()?;

    let effective_outer = samples.iter().filter(|s| s.p > 0.0).count();
    if effective_outer == 0 {
        return Err(Error::Inconclusive(format!(
            "no amplitude out of {} had an accepted sample",
            cfg.n_outer
        )));
    }
    let merit = moments(&samples, 0..samples.len());
    let sp: f64 = samples.iter().map(|s| s.p).sum();
    let inner_noise_floor = (samples.iter().map(|s| s.p * s.f_var).sum::<f64>() / sp).sqrt();

    let n = samples.len();
    let boot: Vec<MeritTriple> = (0..cfg.bootstrap_resamples as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(cfg.seed, Purpose::Bootstrap, b);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            moments(&samples, idx.into_iter())
        })
        .collect();
    if boot.iter().any(|m| !m.f.is_finite()) {
        return Err(Error::Inconclusive("bootstrap resample without accepted samples".into()));
    }
    let sd = |get: fn(&MeritTriple) -> f64| {
        let mean = boot.iter().map(get).sum::<f64>() / boot.len() as f64;
        (boot.iter().map(|m| (get(m) - mean).powi(2)).sum::<f64>() / (boot.len() - 1) as f64).sqrt()
    };
    let errors = MeritTriple {
        f: sd(|m| m.f),
        d: sd(|m| m.d),
        p_succ: sd(|m| m.p_succ),
    };
    if boot.iter().all(|m| *m == boot[0]) {
        return Err(Error::Inconclusive("bootstrap distribution is degenerate".into()));
    }
    Ok(EnsembleEstimate {
        merit,
        errors,
        inner_noise_floor,
        effective_outer,
    })
}

/// Quantile edges in `|α|` that split the prior into `n_bins` equal masses.
fn prior_bin_edges(prior: &PriorSpec, n_bins: usize) -> Vec<f64> {
    (1..n_bins)
        .map(|k| prior.sigma() * (-(1.0 - k as f64 / n_bins as f64).ln()).sqrt())
        .collect()
}

/// Binned plug-in estimate of `I(α;S)` for an arbitrary acceptance
/// probability `accept(m)` of the Bell record. One Bernoulli trial per drawn
/// amplitude; empty bins are merged into their left neighbour. The estimate
/// carries a positive binning bias of order `n_bins/(2·n_outer)`.
pub fn mc_flag_mi_with(
    accept: impl Fn(Complex64) -> f64 + Sync,
    v_n: f64,
    prior: &PriorSpec,
    cfg: &OracleConfig,
    n_bins: usize,
) -> Result<f64> {
    if n_bins < 10 {
        return Err(invalid("n_bins", format!("must be >= 10, got {n_bins}")));
    }
    if cfg.n_outer < 100 {
        return Err(invalid("n_outer", format!("must be >= 100, got {}", cfg.n_outer)));
    }
    let edges = prior_bin_edges(prior, n_bins);
    let draws: Vec<(usize, bool)> = (0..cfg.n_outer as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, Purpose::Flag, i);
            let alpha = complex_gaussian(&mut rng, prior.sigma().powi(2));
            let n = complex_gaussian(&mut rng, v_n);
            let u: f64 = rng.random();
            let bin = edges.partition_point(|&e| e <= alpha.norm());
            (bin, u < accept(alpha + n))
        })
        .collect();
    let mut counts = vec![(0u64, 0u64); n_bins];
    for (bin, ok) in draws {
        counts[bin].0 += 1;
        counts[bin].1 += u64::from(ok);
    }
    let mut merged: Vec<(u64, u64)> = Vec::with_capacity(n_bins);
    for c in counts {
        match merged.last_mut() {
            Some(last) if c.0 == 0 || last.0 == 0 => {
                last.0 += c.0;
                last.1 += c.1;
            }
            _ => merged.push(c),
        }
    }
    let total_n: u64 = merged.iter().map(|c| c.0).sum();
    let total_a: u64 = merged.iter().map(|c| c.1).sum();
    let marginal = binary_entropy(total_a as f64 / total_n as f64)?;
    let mut conditional = 0.0;
    for (n, a) in merged {
        if n > 0 {
            conditional += n as f64 / total_n as f64 * binary_entropy(a as f64 / n as f64)?;
        }
    }
    Ok((marginal - conditional).max(0.0))
}

/// Binned estimate of `I(α;S)` for a protocol.
pub fn mc_success_flag_mi(proto: &Protocol, prior: &PriorSpec, cfg: &OracleConfig, n_bins: usize) -> Result<f64> {
    let filter: FilterSpec = proto.filter;
    mc_flag_mi_with(|m| filter_weight(m, &filter), proto.params.v_n(), prior, cfg, n_bins)
}

/// Amplitudes drawn from the success-conditioned input distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveSample {
    /// `|α|` of the accepted trials, in draw order.
    pub radii: Vec<f64>,
    /// Number of trials (accepted or not) needed to collect them.
    pub trials: u64,
}

/// Rejection sampler for `p_σ(α)·P_succ(α)/P_succ`: draws `α` from the
/// prior and `n` from the noise, keeping `α` with probability `w(α + n)`.
pub fn sample_effective_prior(proto: &Protocol, prior: &PriorSpec, seed: u64, n_samples: usize) -> Result<EffectiveSample> {
    if n_samples == 0 {
        return Err(Error::EmptyInput("effective prior sample size"));
    }
    const BATCH: u64 = 4096;
    const MAX_TRIALS: u64 = 1 << 40;
    let mut radii = Vec::with_capacity(n_samples);
    let mut trials = 0u64;
    let mut batch = 0u64;
    while radii.len() < n_samples {
        let mut rng = stream(seed, Purpose::Effective, batch);
        for _ in 0..BATCH {
            trials += 1;
            let alpha = complex_gaussian(&mut rng, prior.sigma().powi(2));
            let n = complex_gaussian(&mut rng, proto.params.v_n());
            let u: f64 = rng.random();
            if u < filter_weight(alpha + n, &proto.filter) {
                radii.push(alpha.norm());
                if radii.len() == n_samples {
                    break;
                }
            }
        }
        batch += 1;
        if trials >= MAX_TRIALS {
            return Err(Error::Inconclusive(format!(
                "only {} accepted out of {trials} trials",
                radii.len()
            )));
        }
    }
    Ok(EffectiveSample { radii, trials })
}

/// Binomial standard error `√(q(1−q)/n)`.
pub fn binomial_se(q: f64, n: u64) -> f64 {
    (q * (1.0 - q) / n as f64).sqrt()
}
