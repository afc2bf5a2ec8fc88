//! Parameter sweeps over `(g, m_c)`, the weak-filter slope estimate, Pareto
//! frontiers and constrained operating points.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::ensemble::{relative_dispersion, robust_objective, summarize, MeritTriple, SelectivityReport, DEFAULT_SLOPE_STEP};
use crate::error::{invalid, Error, Result};
use crate::model::{FilterSpec, MbNla, PriorSpec, SurrogateParams};
use crate::profile::Protocol;
use crate::quadrature::QuadConfig;

/// Largest deformation strength accepted by [`slope_estimate`].
pub const WEAK_FILTER_WINDOW: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum QuadFlag {
    Converged,
    /// Values are the best available estimates.
    NotConverged,
    /// No values could be computed; the merit fields are NaN.
    Failed(String),
}

impl QuadFlag {
    pub fn is_converged(&self) -> bool {
        matches!(self, Self::Converged)
    }

    pub fn as_str(&self) -> &str {
        match self {
            Self::Converged => "ok",
            Self::NotConverged => "not_converged",
            Self::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub filter: FilterSpec,
    pub merit: MeritTriple,
    pub report: SelectivityReport,
    pub j_lambda: f64,
    pub flag: QuadFlag,
}

impl SweepRecord {
    /// Gain; `1` for the accept-all control.
    pub fn g(&self) -> f64 {
        self.filter.as_mbnla().map_or(1.0, MbNla::gain)
    }

    /// Cut-off; `+inf` for the accept-all control.
    pub fn m_c(&self) -> f64 {
        self.filter.as_mbnla().map_or(f64::INFINITY, MbNla::cutoff)
    }

    fn usable(&self) -> bool {
        !matches!(self.flag, QuadFlag::Failed(_))
    }
}

/// Evaluates one protocol. Failures are recorded in the flag.
pub fn evaluate_record(filter: FilterSpec, params: &SurrogateParams, prior: &PriorSpec, lambda: f64, cfg: &QuadConfig) -> SweepRecord {
    let outcome = Protocol::new(*params, filter).and_then(|p| summarize(&p, prior, cfg, Some(DEFAULT_SLOPE_STEP)));
    match outcome {
        Ok(s) => SweepRecord {
            filter,
            j_lambda: robust_objective(&s.merit, lambda),
            merit: s.merit,
            report: s.report,
            flag: if s.converged { QuadFlag::Converged } else { QuadFlag::NotConverged },
        },
        Err(e) => SweepRecord {
            filter,
            merit: MeritTriple {
                f: f64::NAN,
                d: f64::NAN,
                p_succ: f64::NAN,
            },
            report: SelectivityReport {
                s: f64::NAN,
                s1: f64::NAN,
                s2: f64::NAN,
                i_sel: f64::NAN,
                i_alpha_s: f64::NAN,
            },
            j_lambda: f64::NAN,
            flag: QuadFlag::Failed(e.to_string()),
        },
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(invalid("lambda", format!("must be finite and > 0, got {lambda}")))
    }
}

/// One record per `(g, m_c)` pair, row-major over `g` then `m_c`.
pub fn sweep(
    g_grid: &[f64],
    m_c_grid: &[f64],
    params: &SurrogateParams,
    prior: &PriorSpec,
    lambda: f64,
    cfg: &QuadConfig,
) -> Result<Vec<SweepRecord>> {
    if g_grid.is_empty() {
        return Err(Error::EmptyInput("g grid"));
    }
    if m_c_grid.is_empty() {
        return Err(Error::EmptyInput("m_c grid"));
    }
    check_lambda(lambda)?;
    cfg.validate()?;
    let mut filters = Vec::with_capacity(g_grid.len() * m_c_grid.len());
    for &g in g_grid {
        for &m_c in m_c_grid {
            filters.push(FilterSpec::mbnla(g, m_c)?);
        }
    }
    if params.v_n() <= 0.0 {
        return Err(invalid("V_n", "MB-NLA filters need V_n > 0"));
    }
    Ok(filters
        .into_par_iter()
        .map(|f| evaluate_record(f, params, prior, lambda, cfg))
        .collect())
}

/// The accept-all control row.
pub fn control_record(params: &SurrogateParams, prior: &PriorSpec, lambda: f64, cfg: &QuadConfig) -> Result<SweepRecord> {
    check_lambda(lambda)?;
    Ok(evaluate_record(FilterSpec::AcceptAll, params, prior, lambda, cfg))
}

/// Weak-filter estimate of the local universality-cost slope along
/// `θ = 1 − 1/g²` at fixed `m_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeEstimate {
    pub m_c: f64,
    pub theta_values: Vec<f64>,
    pub f_values: Vec<f64>,
    pub d_values: Vec<f64>,
    /// `F` and `D` of the `θ = 0` hard disk.
    pub f0: f64,
    pub d0: f64,
    /// Least-squares fit `D ≈ slope_c·(F − f0) + intercept`.
    pub slope_c: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `D/(F − f0)` at the smallest `θ`.
    pub ratio_smallest: f64,
    /// Dispersion of `f_θ − f_0` under each effective prior.
    pub excess_d_values: Vec<f64>,
    /// Fit of the excess dispersion against `F − f0`.
    pub excess_fit: LinearFit,
    /// `excess_d/(F − f0)` at the smallest `θ`.
    pub excess_ratio_smallest: f64,
}

impl SlopeEstimate {
    /// Relative disagreement of the two slope estimators.
    pub fn estimator_spread(&self) -> f64 {
        ((self.slope_c - self.ratio_smallest) / self.slope_c).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(invalid("y", format!("length {} does not match x length {}", y.len(), x.len())));
    }
    if x.len() < 2 {
        return Err(Error::EmptyInput("linear fit needs at least two points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Inconclusive("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Dyadic grid `θ_max·2^{−k}`, `k = n−1, …, 0`, ascending.
pub fn dyadic_thetas(theta_max: f64, n_points: usize) -> Vec<f64> {
    (0..n_points)
        .map(|k| theta_max * 0.5f64.powi((n_points - 1 - k) as i32))
        .collect()
}

/// Slope estimate on `dyadic_thetas(theta_max, n_points)`.
pub fn slope_estimate(
    params: &SurrogateParams,
    prior: &PriorSpec,
    m_c_fixed: f64,
    theta_max: f64,
    n_points: usize,
    cfg: &QuadConfig,
) -> Result<SlopeEstimate> {
    if n_points < 4 {
        return Err(invalid("n_points", format!("regression needs >= 4 points, got {n_points}")));
    }
    slope_estimate_on(params, prior, m_c_fixed, &dyadic_thetas(theta_max, n_points), cfg)
}

/// Slope estimate on an explicit ascending `θ` grid.
pub fn slope_estimate_on(params: &SurrogateParams, prior: &PriorSpec, m_c_fixed: f64, thetas: &[f64], cfg: &QuadConfig) -> Result<SlopeEstimate> {
    if thetas.len() < 4 {
        return Err(invalid("theta_values", format!("regression needs >= 4 points, got {}", thetas.len())));
    }
    if thetas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("theta_values", "must be strictly ascending"));
    }
    if let Some(&bad) = thetas.iter().find(|&&t| !(t > 0.0 && t <= WEAK_FILTER_WINDOW)) {
        return Err(invalid(
            "theta_values",
            format!("{bad} lies outside the weak-filter window (0, {WEAK_FILTER_WINDOW}]"),
        ));
    }
    let baseline = Protocol::new(*params, FilterSpec::MbNla(MbNla::hard_disk(m_c_fixed)?))?;
    let base = summarize(&baseline, prior, cfg, None)?;
    if !base.converged {
        return Err(Error::NotConverged {
            estimate: base.merit.f,
            error_bound: base.grid_delta,
        });
    }
    let members: Vec<Protocol> = thetas
        .iter()
        .map(|&t| Protocol::new(*params, FilterSpec::MbNla(MbNla::from_strength(t, m_c_fixed)?)))
        .collect::<Result<_>>()?;
    let mut f_values = Vec::with_capacity(thetas.len());
    let mut d_values = Vec::with_capacity(thetas.len());
    let mut excess_d_values = Vec::with_capacity(thetas.len());
    for proto in &members {
        let s = summarize(proto, prior, cfg, None)?;
        if !s.converged {
            return Err(Error::NotConverged {
                estimate: s.merit.f,
                error_bound: s.grid_delta,
            });
        }
        f_values.push(s.merit.f);
        d_values.push(s.merit.d);
        excess_d_values.push(relative_dispersion(proto, &baseline, prior, cfg)?);
    }
    let shift: Vec<f64> = f_values.iter().map(|f| f - base.merit.f).collect();
    if shift.iter().all(|x| x.abs() < 1e-12) {
        return Err(Error::Inconclusive(format!(
            "F − f0 below 1e-12 on the whole grid (f0 = {}, F = {f_values:?})",
            base.merit.f
        )));
    }
    let fit = linear_fit(&shift, &d_values)?;
    let excess_fit = linear_fit(&shift, &excess_d_values)?;
    Ok(SlopeEstimate {
        m_c: m_c_fixed,
        theta_values: thetas.to_vec(),
        ratio_smallest: d_values[0] / shift[0],
        excess_ratio_smallest: excess_d_values[0] / shift[0],
        f_values,
        d_values,
        f0: base.merit.f,
        d0: base.merit.d,
        slope_c: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        excess_d_values,
        excess_fit,
    })
}

/// `a` weakly dominates `b`: at least as good in `F`, `D` and `P_succ` and
/// strictly better in one.
pub fn dominates(a: &MeritTriple, b: &MeritTriple) -> bool {
    let no_worse = a.f >= b.f && a.d <= b.d && a.p_succ >= b.p_succ;
    let better = a.f > b.f || a.d < b.d || a.p_succ > b.p_succ;
    no_worse && better
}

/// Undominated records sorted by `F` descending. Failed records are skipped.
pub fn pareto_frontier(records: &[SweepRecord]) -> Vec<SweepRecord> {
    let usable: Vec<&SweepRecord> = records.iter().filter(|r| r.usable()).collect();
    let mut front: Vec<SweepRecord> = usable
        .iter()
        .filter(|r| !usable.iter().any(|o| dominates(&o.merit, &r.merit)))
        .map(|r| (*r).clone())
        .collect();
    front.sort_by(|a, b| b.merit.f.total_cmp(&a.merit.f).then_with(|| tie_break(a, b)));
    front
}

/// Smaller `D`, then larger `P_succ`, then smaller `(g, m_c)`.
fn tie_break(a: &SweepRecord, b: &SweepRecord) -> Ordering {
    a.merit
        .d
        .total_cmp(&b.merit.d)
        .then_with(|| b.merit.p_succ.total_cmp(&a.merit.p_succ))
        .then_with(|| a.g().total_cmp(&b.g()))
        .then_with(|| a.m_c().total_cmp(&b.m_c()))
}

fn best_by<'a>(records: impl Iterator<Item = &'a SweepRecord>, key: impl Fn(&SweepRecord) -> f64) -> Option<SweepRecord> {
    records
        .filter(|r| r.usable())
        .min_by(|a, b| key(b).total_cmp(&key(a)).then_with(|| tie_break(a, b)))
        .cloned()
}

/// Largest `F` subject to `D ≤ d_max` and `P_succ ≥ p_min`.
pub fn constrained_best(records: &[SweepRecord], d_max: f64, p_min: f64) -> Option<SweepRecord> {
    best_by(
        records.iter().filter(|r| r.merit.d <= d_max && r.merit.p_succ >= p_min),
        |r| r.merit.f,
    )
}

/// Largest `F − λD`.
pub fn objective_best(records: &[SweepRecord], lambda: f64) -> Option<SweepRecord> {
    best_by(records.iter(), |r| robust_objective(&r.merit, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(g: f64, m_c: f64, f: f64, d: f64, p: f64) -> SweepRecord {
        SweepRecord {
            filter: FilterSpec::mbnla(g, m_c).unwrap(),
            merit: MeritTriple { f, d, p_succ: p },
            report: SelectivityReport {
                s: d,
                s1: 0.0,
                s2: 0.0,
                i_sel: 0.0,
                i_alpha_s: 0.0,
            },
            j_lambda: f - 3.0 * d,
            flag: QuadFlag::Converged,
        }
    }

    fn control(f: f64) -> SweepRecord {
        SweepRecord {
            filter: FilterSpec::AcceptAll,
            ..rec(1.5, 1.0, f, 0.0, 1.0)
        }
    }

    #[test]
    fn frontier_examples() {
        let a = rec(1.2, 3.0, 0.8, 0.01, 0.5);
        assert_eq!(pareto_frontier(std::slice::from_ref(&a)), vec![a.clone()]);
        let b = rec(1.4, 2.2, 0.79, 0.02, 0.4);
        assert_eq!(pareto_frontier(&[b.clone(), a.clone()]), vec![a.clone()]);
        let c = rec(1.6, 1.8, 0.82, 0.03, 0.3);
        assert_eq!(pareto_frontier(&[a.clone(), c.clone()]), vec![c, a.clone()]);
        let twin = rec(1.3, 2.0, 0.8, 0.01, 0.5);
        assert_eq!(pareto_frontier(&[a.clone(), twin.clone()]).len(), 2);
    }

    #[test]
    fn constrained_examples() {
        let recs = vec![
            rec(1.2, 3.0, 0.78, 0.028, 0.19),
            rec(1.4, 2.2, 0.786, 0.034, 0.21),
            rec(1.6, 1.8, 0.788, 0.036, 0.2),
        ];
        assert_eq!(constrained_best(&recs, f64::INFINITY, 0.0).unwrap(), recs[2]);
        assert!(constrained_best(&recs, 0.0, 0.0).is_none());
        let mut with_ctrl = recs.clone();
        with_ctrl.push(control(0.78125));
        assert_eq!(constrained_best(&with_ctrl, 0.0, 1.0).unwrap().filter, FilterSpec::AcceptAll);
        assert_eq!(constrained_best(&recs, 0.03, 0.0).unwrap(), recs[0]);
    }

    #[test]
    fn objective_examples() {
        let mut recs = vec![
            rec(1.2, 3.0, 0.78, 0.028, 0.19),
            rec(1.4, 2.2, 0.786, 0.034, 0.21),
            rec(1.6, 1.8, 0.788, 0.036, 0.2),
        ];
        assert_eq!(objective_best(&recs, 1e-9).unwrap(), recs[2]);
        recs.push(control(0.78125));
        assert_eq!(objective_best(&recs, 1e3).unwrap().filter, FilterSpec::AcceptAll);
        assert!(objective_best(&[], 1.0).is_none());
    }

    #[test]
    fn ties_prefer_smaller_d_then_larger_p_then_smaller_key() {
        let a = rec(1.4, 2.0, 0.8, 0.02, 0.3);
        let b = rec(1.2, 2.0, 0.8, 0.01, 0.2);
        assert_eq!(constrained_best(&[a.clone(), b.clone()], 1.0, 0.0).unwrap(), b);
        let c = rec(1.3, 2.0, 0.8, 0.01, 0.4);
        assert_eq!(constrained_best(&[a.clone(), b.clone(), c.clone()], 1.0, 0.0).unwrap(), c);
        let d = rec(1.2, 1.5, 0.8, 0.01, 0.4);
        assert_eq!(constrained_best(&[c.clone(), d.clone()], 1.0, 0.0).unwrap(), d);
        assert_eq!(constrained_best(&[d.clone(), c], 1.0, 0.0).unwrap(), d);
    }

    #[test]
    fn failed_records_are_skipped() {
        let good = rec(1.2, 3.0, 0.7, 0.01, 0.1);
        let mut bad = rec(1.4, 2.0, f64::NAN, f64::NAN, f64::NAN);
        bad.flag = QuadFlag::Failed("boom".into());
        assert_eq!(pareto_frontier(&[bad.clone(), good.clone()]), vec![good.clone()]);
        assert_eq!(objective_best(&[bad, good.clone()], 3.0).unwrap(), good);
    }

    #[test]
    fn linear_fit_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let fit = linear_fit(&x, &y).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-14 && (fit.intercept - 1.0).abs() < 1e-14);
        assert!((fit.r_squared - 1.0).abs() < 1e-14);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_err());
        assert!(linear_fit(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn dyadic_grid() {
        assert_eq!(dyadic_thetas(0.04, 4), vec![0.005, 0.01, 0.02, 0.04]);
    }

    #[test]
    fn slope_rejects_bad_grids() {
        let params = SurrogateParams::reference();
        let prior = PriorSpec::default();
        let cfg = QuadConfig::default();
        assert!(slope_estimate(&params, &prior, 6.0, 0.04, 3, &cfg).is_err());
        assert!(slope_estimate_on(&params, &prior, 6.0, &[0.01, 0.02, 0.2, 0.3], &cfg).is_err());
        assert!(slope_estimate_on(&params, &prior, 6.0, &[0.02, 0.01, 0.03, 0.04], &cfg).is_err());
    }

    #[test]
    fn slope_is_inconclusive_when_futile() {
        let params = SurrogateParams::new(0.5, 0.1, 0.0).unwrap();
        let err = slope_estimate(&params, &PriorSpec::default(), 6.0, 0.04, 4, &QuadConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Inconclusive(_)), "{err}");
    }

    fn merit() -> impl Strategy<Value = (f64, f64, f64)> {
        (0.5f64..1.0, 0.0f64..0.1, 0.01f64..1.0)
    }

    proptest! {
        #[test]
        fn frontier_is_exactly_the_undominated_set(ms in prop::collection::vec(merit(), 1..40)) {
            let recs: Vec<SweepRecord> = ms
                .iter()
                .enumerate()
                .map(|(i, &(f, d, p))| rec(1.1 + i as f64 * 0.01, 2.0, f, d, p))
                .collect();
            let front = pareto_frontier(&recs);
            for r in &recs {
                let dominated = recs.iter().any(|o| dominates(&o.merit, &r.merit));
                prop_assert_eq!(front.contains(r), !dominated);
                if dominated {
                    prop_assert!(front.iter().any(|m| dominates(&m.merit, &r.merit)));
                }
            }
            prop_assert!(front.windows(2).all(|w| w[0].merit.f >= w[1].merit.f));
        }

        #[test]
        fn objective_best_is_permutation_invariant(
            ms in prop::collection::vec(merit(), 1..30),
            seed in any::<u64>(),
            lambda in 0.1f64..10.0,
        ) {
            let recs: Vec<SweepRecord> = ms
                .iter()
                .enumerate()
                .map(|(i, &(f, d, p))| rec(1.1 + i as f64 * 0.01, 2.0, f, d, p))
                .collect();
            let mut shuffled = recs.clone();
            let n = shuffled.len();
            let mut state = seed;
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(objective_best(&recs, lambda), objective_best(&shuffled, lambda));
        }
    }
}
