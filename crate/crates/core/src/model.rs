//! Closed-form scalar primitives of the correlated-Gaussian surrogate.
//!
//! The Bell record is modeled as `m = α + n` with circular complex Gaussian
//! record noise `n` of variance `V_n`, and the residual displacement error on
//! the output as `κ·n + ε` with independent Gaussian `ε` of variance `V_ε`.
//! Only `κ²` enters any formula, so the sign of `κ` is irrelevant.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Result};

/// Noise model of the surrogate: record noise, independent residual noise and
/// the record/error correlation coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateParams {
    v_n: f64,
    v_eps: f64,
    kappa: f64,
}

impl SurrogateParams {
    pub fn new(v_n: f64, v_eps: f64, kappa: f64) -> Result<Self> {
        if !(v_n.is_finite() && v_n >= 0.0) {
            return Err(invalid("V_n", format!("must be finite and >= 0, got {v_n}")));
        }
        if !(v_eps.is_finite() && v_eps >= 0.0) {
            return Err(invalid("V_eps", format!("must be finite and >= 0, got {v_eps}")));
        }
        if !kappa.is_finite() {
            return Err(invalid("kappa", format!("must be finite, got {kappa}")));
        }
        Ok(Self { v_n, v_eps, kappa })
    }

    /// `(V_n, V_ε, κ) = (0.5, 0.1, 0.6)`, the worked parameter set.
    pub fn reference() -> Self {
        Self {
            v_n: 0.5,
            v_eps: 0.1,
            kappa: 0.6,
        }
    }

    pub fn v_n(&self) -> f64 {
        self.v_n
    }

    pub fn v_eps(&self) -> f64 {
        self.v_eps
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Coefficient `κ²/(1+V_ε)` of the extra Gaussian penalty on `|n|²`.
    pub fn correlation_penalty(&self) -> f64 {
        self.kappa * self.kappa / (1.0 + self.v_eps)
    }

    /// `1/(1+V_ε)`, the fidelity ceiling of any conditioned run.
    pub fn fidelity_ceiling(&self) -> f64 {
        1.0 / (1.0 + self.v_eps)
    }
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self::reference()
    }
}

/// Parameters of the measurement-based NLA filter
/// `w(m) = Θ(m_c − |m|)·exp((1 − 1/g²)(|m|² − m_c²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MbNla {
    gain: f64,
    cutoff: f64,
}

impl MbNla {
    pub fn new(gain: f64, cutoff: f64) -> Result<Self> {
        if !(gain.is_finite() && gain > 1.0) {
            return Err(invalid("g", format!("gain must be finite and > 1, got {gain}")));
        }
        Self::checked_cutoff(cutoff)?;
        Ok(Self { gain, cutoff })
    }

    /// Builds the filter from its exponent strength `θ = 1 − 1/g²`, `θ ∈ (0, 1)`.
    pub fn from_strength(theta: f64, cutoff: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(invalid("theta", format!("must lie in (0, 1), got {theta}")));
        }
        Self::new(1.0 / (1.0 - theta).sqrt(), cutoff)
    }

    /// The `g → 1` member of a weak-filter family: a plain hard disk of radius `m_c`.
    pub(crate) fn hard_disk(cutoff: f64) -> Result<Self> {
        Self::checked_cutoff(cutoff)?;
        Ok(Self { gain: 1.0, cutoff })
    }

    fn checked_cutoff(cutoff: f64) -> Result<()> {
        if !(cutoff.is_finite() && cutoff > 0.0) {
            return Err(invalid("m_c", format!("cut-off must be finite and > 0, got {cutoff}")));
        }
        Ok(())
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// `θ = 1 − 1/g²`.
    pub fn strength(&self) -> f64 {
        1.0 - 1.0 / (self.gain * self.gain)
    }

    /// Natural log of the weight at `|m|² = m_abs_sq`; `-inf` outside the disk.
    ///
    /// Working in the exponent keeps `θ·m_c²` in the hundreds harmless.
    pub fn log_weight(&self, m_abs_sq: f64) -> f64 {
        let cut_sq = self.cutoff * self.cutoff;
        if m_abs_sq > cut_sq {
            f64::NEG_INFINITY
        } else {
            self.strength() * (m_abs_sq - cut_sq)
        }
    }
}

/// Acceptance rule applied to the Bell record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterSpec {
    /// Deterministic control, `w ≡ 1`.
    AcceptAll,
    MbNla(MbNla),
}

impl FilterSpec {
    pub fn mbnla(gain: f64, cutoff: f64) -> Result<Self> {
        MbNla::new(gain, cutoff).map(Self::MbNla)
    }

    pub fn as_mbnla(&self) -> Option<&MbNla> {
        match self {
            FilterSpec::AcceptAll => None,
            FilterSpec::MbNla(f) => Some(f),
        }
    }

    pub fn is_accept_all(&self) -> bool {
        matches!(self, FilterSpec::AcceptAll)
    }
}

/// Coherent-state Gaussian prior `p_σ(α) = exp(−|α|²/σ²)/(πσ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    sigma: f64,
}

impl PriorSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid("sigma", format!("must be finite and > 0, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Density against the `d²α` measure at `|α| = r`.
    pub fn density(&self, r: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        (-r * r / s2).exp() / (PI * s2)
    }

    /// Log of the radial density `(2r/σ²)·exp(−r²/σ²)` against `dr`.
    pub fn log_radial_density(&self, r: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        (2.0 * r / s2).ln() - r * r / s2
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { sigma: 2.0 }
    }
}

/// Ideal Braunstein–Kimble channel adding noise `ν` (shot-noise units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdditiveNoiseBaseline {
    nu: f64,
}

impl AdditiveNoiseBaseline {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu.is_finite() && nu >= 0.0) {
            return Err(invalid("nu", format!("must be finite and >= 0, got {nu}")));
        }
        Ok(Self { nu })
    }

    /// `ν = e^(−2r)` for two-mode squeezing `r ≥ 0`.
    pub fn from_squeezing(r: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(invalid("r", format!("squeezing must be finite and >= 0, got {r}")));
        }
        Self::new((-2.0 * r).exp())
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }
}

pub fn filter_weight(m: Complex64, filter: &FilterSpec) -> f64 {
    match filter {
        FilterSpec::AcceptAll => 1.0,
        FilterSpec::MbNla(f) => f.log_weight(m.norm_sqr()).exp(),
    }
}

/// Fidelity of a run conditioned on record noise `n`, averaged over `ε`:
/// `exp(−κ²|n|²/(1+V_ε))/(1+V_ε)`.
pub fn conditional_overlap(n: Complex64, params: &SurrogateParams) -> f64 {
    params.fidelity_ceiling() * (-params.correlation_penalty() * n.norm_sqr()).exp()
}

/// Flat fidelity of the unheralded protocol, `f0 = 1/(1 + V_ε + κ²V_n)`.
pub fn deterministic_baseline(params: &SurrogateParams) -> f64 {
    1.0 / (1.0 + params.v_eps + params.kappa * params.kappa * params.v_n)
}

pub fn additive_noise_fidelity(baseline: &AdditiveNoiseBaseline) -> f64 {
    1.0 / (1.0 + baseline.nu)
}

/// Circular complex Gaussian density of the record noise.
pub fn noise_density(n: Complex64, v_n: f64) -> Result<f64> {
    if !(v_n.is_finite() && v_n > 0.0) {
        return Err(invalid("V_n", format!("density needs V_n > 0, got {v_n}")));
    }
    Ok((-n.norm_sqr() / v_n).exp() / (PI * v_n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn weight_is_one_on_the_cutoff_circle() {
        let f = FilterSpec::mbnla(1.2, 3.0).unwrap();
        let m = Complex64::from_polar(3.0, 0.4);
        assert!((filter_weight(m, &f) - 1.0).abs() < 1e-14);
        let f = FilterSpec::mbnla(2.5, 0.7).unwrap();
        assert!((filter_weight(c(0.0, 0.7), &f) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn weight_vanishes_beyond_cutoff() {
        let f = FilterSpec::mbnla(1.2, 3.0).unwrap();
        assert_eq!(filter_weight(c(3.1, 0.0), &f), 0.0);
    }

    #[test]
    fn weight_at_origin() {
        // (1 − 1/1.44)·(0 − 9) = −2.75
        let f = FilterSpec::mbnla(1.2, 3.0).unwrap();
        let w = filter_weight(c(0.0, 0.0), &f);
        assert!((w - (-2.75f64).exp()).abs() < 1e-15);
        assert!((w - 0.063_927_861_206_707_6).abs() < 1e-15);
    }

    #[test]
    fn accept_all_weight_is_one() {
        for m in [c(0.0, 0.0), c(100.0, -3.0), c(1e6, 1e6)] {
            assert_eq!(filter_weight(m, &FilterSpec::AcceptAll), 1.0);
        }
    }

    #[test]
    fn log_weight_does_not_underflow_for_wide_cutoffs() {
        let f = MbNla::new(3.0, 40.0).unwrap();
        let lw = f.log_weight(0.0);
        assert!(lw.is_finite() && lw < -1400.0);
    }

    #[test]
    fn invalid_filters_are_rejected() {
        assert!(FilterSpec::mbnla(1.0, 3.0).is_err());
        assert!(FilterSpec::mbnla(0.5, 3.0).is_err());
        assert!(FilterSpec::mbnla(1.2, 0.0).is_err());
        assert!(FilterSpec::mbnla(1.2, f64::INFINITY).is_err());
        assert!(MbNla::from_strength(0.0, 3.0).is_err());
        assert!(MbNla::from_strength(1.0, 3.0).is_err());
        let f = MbNla::from_strength(0.25, 3.0).unwrap();
        assert!((f.strength() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(SurrogateParams::new(-0.1, 0.1, 0.6).is_err());
        assert!(SurrogateParams::new(0.5, -1e-9, 0.6).is_err());
        assert!(SurrogateParams::new(0.5, 0.1, f64::NAN).is_err());
        assert!(SurrogateParams::new(0.5, 0.1, -0.6).is_ok());
        assert!(PriorSpec::new(0.0).is_err());
        assert!(AdditiveNoiseBaseline::new(-1.0).is_err());
    }

    #[test]
    fn overlap_examples() {
        let p = SurrogateParams::new(0.5, 0.1, 0.6).unwrap();
        assert!((conditional_overlap(c(0.0, 0.0), &p) - 1.0 / 1.1).abs() < 1e-15);
        let p0 = SurrogateParams::new(0.5, 0.1, 0.0).unwrap();
        assert!((conditional_overlap(c(3.0, 4.0), &p0) - 1.0 / 1.1).abs() < 1e-15);
        let expected = (1.0 / 1.1) * (-0.36f64 / 1.1).exp();
        assert!((conditional_overlap(c(0.6, 0.8), &p) - expected).abs() < 1e-15);
        assert!((expected - 0.6554).abs() < 5e-5);
    }

    #[test]
    fn baseline_examples() {
        let p = SurrogateParams::reference();
        assert!((deterministic_baseline(&p) - 0.78125).abs() < 1e-15);
        let p = SurrogateParams::new(0.0, 0.0, 0.0).unwrap();
        assert_eq!(deterministic_baseline(&p), 1.0);
        for v_n in [0.0, 0.5, 7.0] {
            let p = SurrogateParams::new(v_n, 0.1, 0.0).unwrap();
            assert!((deterministic_baseline(&p) - 1.0 / 1.1).abs() < 1e-15);
        }
    }

    #[test]
    fn additive_noise_examples() {
        let f = |nu| additive_noise_fidelity(&AdditiveNoiseBaseline::new(nu).unwrap());
        assert_eq!(f(0.0), 1.0);
        let unsqueezed = AdditiveNoiseBaseline::from_squeezing(0.0).unwrap();
        assert_eq!(additive_noise_fidelity(&unsqueezed), 0.5);
        let r1 = AdditiveNoiseBaseline::from_squeezing(1.0).unwrap();
        assert!((r1.nu() - 0.135_335_283_236_612_7).abs() < 1e-15);
        assert!((additive_noise_fidelity(&r1) - 0.880_797_077_977_882_3).abs() < 1e-12);
    }

    #[test]
    fn noise_density_examples() {
        let peak = noise_density(c(0.0, 0.0), 0.5).unwrap();
        assert!((peak - 2.0 / PI).abs() < 1e-15);
        assert_eq!(noise_density(c(60.0, 0.0), 0.5).unwrap(), 0.0);
        assert!(noise_density(c(0.0, 0.0), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn weight_is_bounded_and_radial(
            g in 1.0001f64..4.0, mc in 0.1f64..8.0, rho in 0.0f64..10.0, phi in 0.0f64..6.3
        ) {
            let f = FilterSpec::mbnla(g, mc).unwrap();
            let w = filter_weight(Complex64::from_polar(rho, phi), &f);
            prop_assert!((0.0..=1.0).contains(&w));
            let w0 = filter_weight(Complex64::new(rho, 0.0), &f);
            prop_assert!((w - w0).abs() <= 1e-12);
        }

        #[test]
        fn weight_is_nondecreasing_inside_disk(
            g in 1.0001f64..4.0, mc in 0.1f64..8.0, a in 0.0f64..1.0, b in 0.0f64..1.0
        ) {
            let f = FilterSpec::mbnla(g, mc).unwrap();
            let (lo, hi) = if a <= b { (a * mc, b * mc) } else { (b * mc, a * mc) };
            let wl = filter_weight(Complex64::new(lo, 0.0), &f);
            let wh = filter_weight(Complex64::new(hi, 0.0), &f);
            prop_assert!(wl <= wh);
        }

        #[test]
        fn overlap_never_exceeds_ceiling(
            v_eps in 0.0f64..3.0, kappa in -2.0f64..2.0, re in -5.0f64..5.0, im in -5.0f64..5.0
        ) {
            let p = SurrogateParams::new(0.5, v_eps, kappa).unwrap();
            let n = Complex64::new(re, im);
            let o = conditional_overlap(n, &p);
            prop_assert!(o <= p.fidelity_ceiling());
            if kappa * n.norm() > 1e-3 {
                prop_assert!(o < p.fidelity_ceiling());
            }
        }

        #[test]
        fn additive_fidelity_strictly_decreasing(a in 0.0f64..50.0, d in 1e-6f64..5.0) {
            let lo = additive_noise_fidelity(&AdditiveNoiseBaseline::new(a).unwrap());
            let hi = additive_noise_fidelity(&AdditiveNoiseBaseline::new(a + d).unwrap());
            prop_assert!(hi < lo);
        }
    }
}
