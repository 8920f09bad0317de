//! Mean, variance, temporal covariance and correlation of the interference
//! at the origin.
//!
//! The pair contributions need `∫_{R²} ℓ(‖x+a‖) ℓ(‖x−a‖) dx` for a half
//! separation `|a| = r`. In elliptic coordinates with foci `±a`,
//! `x₁ = r coshμ cosν`, `x₂ = r sinhμ sinν`, the two distances become
//! `r(coshμ ± cosν)` and the Jacobian `r²/2 (cosh 2μ − cos 2ν)`, which is
//! what [`pair_gain_integral`] integrates. The outer integral over `r`
//! weights it with the pair density at distance `2r`.
//!
//! By default the outer integrals are written in difference form,
//! `∫ J(r) (ρ(2r) − λ²) r dr`, whose integrand vanishes for `r > d`. That
//! keeps the domain compact and avoids subtracting two large numbers when
//! `d` is small. The direct form, integrating `ρ(2r)` over `[d/2, ∞)` and
//! subtracting `E[I]²` afterwards, is available for comparison.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::channel::{check_alpha, check_m, fading_moment2, path_gain};
use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_1d, Integrand1D, QuadratureError, QuadratureResult, TailDecay, Tolerance};
use crate::retention::{self, IntensityConvention, RetentionProbabilities};

/// Model parameters. `m = ∞` means no fading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda_p: f64,
    pub d: f64,
    pub alpha: f64,
    pub m: f64,
}

impl ModelParams {
    pub fn new(lambda_p: f64, d: f64, alpha: f64, m: f64) -> Result<Self> {
        let p = Self { lambda_p, d, alpha, m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_p > 0.0 && self.lambda_p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "PPP intensity must be positive, got {}",
                self.lambda_p
            )));
        }
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "hard-core distance must be non-negative, got {}",
                self.d
            )));
        }
        check_alpha(self.alpha)?;
        check_m(self.m)
    }

    /// Intensity of the senders, `λ_p·p1`.
    pub fn lambda(&self) -> f64 {
        retention::retained_intensity(self.lambda_p, self.d).expect("validated parameters")
    }

    pub fn p1(&self) -> f64 {
        retention::p1(self.lambda_p, self.d).expect("validated parameters")
    }

    pub fn retention(&self) -> Result<RetentionProbabilities> {
        RetentionProbabilities::new(self.lambda_p, self.d)
    }
}

/// A numerically computed value with an absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub abs_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, abs_error: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceStats {
    pub mean: Estimate,
    pub variance: Estimate,
    pub covariance: Estimate,
    pub correlation: Estimate,
}

impl InterferenceStats {
    fn assemble(mean: Estimate, variance: Estimate, covariance: Estimate) -> Self {
        let rho = covariance.value / variance.value;
        let err = rho.abs()
            * (covariance.abs_error / covariance.value.abs().max(f64::MIN_POSITIVE)
                + variance.abs_error / variance.value.abs().max(f64::MIN_POSITIVE));
        Self { mean, variance, covariance, correlation: Estimate { value: rho, abs_error: err } }
    }
}

/// How the outer pair integral is arranged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairIntegralForm {
    #[default]
    Difference,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticsOptions {
    pub tol: Tolerance,
    pub form: PairIntegralForm,
    /// Intensity entering `p12` in the covariance. Anything but `Parent`
    /// is only useful to show that validation catches it.
    pub p12_convention: IntensityConvention,
}

impl Default for AnalyticsOptions {
    fn default() -> Self {
        Self {
            tol: Tolerance::new(1e-6, 1e-12),
            form: PairIntegralForm::Difference,
            p12_convention: IntensityConvention::Parent,
        }
    }
}

fn p12_for(params: &ModelParams, opts: &AnalyticsOptions) -> Result<f64> {
    match opts.p12_convention {
        IntensityConvention::Parent => retention::p12(params.lambda_p, params.d),
        conv => retention::p12_closed(params.lambda_p, params.d, conv),
    }
}

/// `∫_{R²} ℓ(‖x‖) dx = απ/(α−2)`.
pub fn gain_integral(alpha: f64) -> f64 {
    alpha * PI / (alpha - 2.0)
}

/// `∫_{R²} ℓ(‖x‖)² dx = απ/(α−1)`.
pub fn squared_gain_integral(alpha: f64) -> f64 {
    alpha * PI / (alpha - 1.0)
}

/// `E[I] = λ·απ/(α−2)`.
pub fn mean_interference(params: &ModelParams) -> f64 {
    params.lambda() * gain_integral(params.alpha)
}

/// Truncation point `μ_max` of the elliptic `μ` integral such that the
/// neglected tail of `∫∫ ℓ ℓ Jacobian dν dμ` is below `target`.
///
/// For `cosh μ ≥ max(2, 2/r)` both distances exceed `r coshμ/2 ≥ 1`, so the
/// `ν` integral is at most `2π r^{2−2α} 2^{2α} cosh^{2−2α} μ`, and with
/// `cosh μ ≥ e^μ/2` the tail beyond `μ_max` is at most
/// `2π r^{2−2α} 2^{4α−2} e^{−(2α−2)μ_max} / (2α−2)`.
pub fn elliptic_mu_cutoff(r: f64, alpha: f64, target: f64) -> f64 {
    let k = 2.0 * alpha - 2.0;
    let start = (2.0f64).max(2.0 / r).acosh();
    let log_scale = (2.0 * PI / k).ln() + (2.0 - 2.0 * alpha) * r.ln() + (4.0 * alpha - 2.0) * 2f64.ln();
    let mu = (log_scale - target.ln()) / k;
    start.max(mu)
}

/// Upper bound on the tail beyond `mu_max`, see [`elliptic_mu_cutoff`].
pub fn elliptic_tail_bound(r: f64, alpha: f64, mu_max: f64) -> f64 {
    let k = 2.0 * alpha - 2.0;
    debug_assert!(mu_max.cosh() >= 2.0f64.max(2.0 / r));
    2.0 * PI * r.powf(2.0 - 2.0 * alpha) * 2f64.powf(4.0 * alpha - 2.0) * (-k * mu_max).exp() / k
}

fn pair_scale(r: f64, alpha: f64) -> f64 {
    if r <= 1.0 {
        squared_gain_integral(alpha)
    } else {
        2.0 * r.powf(-alpha) * gain_integral(alpha)
    }
}

/// `J(r) = ∫_{R²} ℓ(‖x + a‖) ℓ(‖x − a‖) dx` with `|a| = r`, integrated in
/// elliptic coordinates. `tol` applies to the `μ` integral; the `ν`
/// integrals run ten times tighter.
pub fn pair_gain_integral(r: f64, alpha: f64, tol: Tolerance) -> std::result::Result<QuadratureResult, QuadratureError> {
    if r == 0.0 {
        return Ok(QuadratureResult { value: squared_gain_integral(alpha), abs_error: 0.0, evaluations: 0 });
    }
    let inv = 1.0 / r;
    let half_r2 = 0.5 * r * r;
    let inner_tol = tol.scaled(0.1);
    let evaluations = std::cell::Cell::new(0usize);
    let inner_err = std::cell::Cell::new(0.0f64);
    let failure = RefCell::new(None);
    // Symmetry in ν ↦ −ν and ν ↦ π − ν reduces [0, 2π) to [0, π/2].
    let over_nu = |mu: f64| {
        let ch = mu.cosh();
        let c2 = (2.0 * mu).cosh();
        let f = |nu: f64| {
            let c = nu.cos();
            path_gain(r * (ch + c), alpha)
                * path_gain(r * (ch - c), alpha)
                * half_r2
                * (c2 - (2.0 * nu).cos())
        };
        // ℓ switches from its cap where r(ch ± cos ν) = 1.
        let kinks = [ch - inv, inv - ch]
            .into_iter()
            .filter(|c| *c > 0.0 && *c < 1.0)
            .map(f64::acos);
        let kinks: Vec<f64> = kinks.collect();
        match integrate(f, 0.0, FRAC_PI_2, &kinks, inner_tol) {
            Ok(q) => {
                evaluations.set(evaluations.get() + q.evaluations);
                inner_err.set(inner_err.get().max(q.abs_error));
                4.0 * q.value
            }
            Err(e) => {
                let best = e.best_estimate().map(|b| b.value).unwrap_or(f64::NAN);
                failure.borrow_mut().get_or_insert(e);
                4.0 * best
            }
        }
    };
    let scale = pair_scale(r, alpha);
    let mu_max = elliptic_mu_cutoff(r, alpha, 1e-2 * tol.rel * scale);
    let tail = elliptic_tail_bound(r, alpha, mu_max);
    let mu_kinks: Vec<f64> = [inv - 1.0, inv, inv + 1.0]
        .into_iter()
        .filter(|c| *c > 1.0)
        .map(f64::acosh)
        .collect();
    let outer = integrate(over_nu, 0.0, mu_max, &mu_kinks, tol)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(QuadratureResult {
        value: outer.value,
        abs_error: outer.abs_error + tail + 4.0 * inner_err.get() * mu_max,
        evaluations: outer.evaluations + evaluations.get(),
    })
}

/// Memoized `J(r)` for one `α`, shared across the outer integrals of one
/// parameter point.
struct PairGainCache {
    alpha: f64,
    tol: Tolerance,
    values: RefCell<HashMap<u64, QuadratureResult>>,
    failure: RefCell<Option<QuadratureError>>,
    worst_error: std::cell::Cell<f64>,
}

impl PairGainCache {
    fn new(alpha: f64, tol: Tolerance) -> Self {
        Self {
            alpha,
            tol,
            values: RefCell::new(HashMap::new()),
            failure: RefCell::new(None),
            worst_error: std::cell::Cell::new(0.0),
        }
    }

    fn get(&self, r: f64) -> f64 {
        if let Some(q) = self.values.borrow().get(&r.to_bits()) {
            return q.value;
        }
        let q = match pair_gain_integral(r, self.alpha, self.tol) {
            Ok(q) => q,
            Err(e) => {
                let best = e.best_estimate().unwrap_or(QuadratureResult { value: f64::NAN, ..Default::default() });
                self.failure.borrow_mut().get_or_insert(e);
                best
            }
        };
        self.worst_error.set(self.worst_error.get().max(q.abs_error));
        self.values.borrow_mut().insert(r.to_bits(), q);
        q.value
    }

    fn take_failure(&self) -> Option<QuadratureError> {
        self.failure.borrow_mut().take()
    }
}

/// The `m`-independent pair terms of the second moments:
/// `same_slot = 8π ∫ J(r) (λ_p² p11(2r) − λ²) r dr` and
/// `cross_slot = 8π ∫ J(r) (λ_p² p12r(2r) − λ²) r dr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTerms {
    pub same_slot: Estimate,
    pub cross_slot: Estimate,
}

fn outer_tol(tol: Tolerance) -> (Tolerance, Tolerance) {
    // (outer, J) tolerances.
    (tol, tol.scaled(0.1))
}

fn pair_density_weight(kind: Slot, two_r: f64, lambda_p: f64, d: f64) -> Result<f64> {
    let p = match kind {
        Slot::Same => retention::p11_closed(two_r, lambda_p, d, IntensityConvention::Parent)?,
        Slot::Cross => retention::p12r_reduced(two_r, lambda_p, d, Tolerance::PROBABILITY)?,
    };
    Ok(lambda_p * lambda_p * p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Same,
    Cross,
}

/// `8π ∫_lo^hi J(r) w(r) r dr`, with `w` evaluated through `weight`, errors
/// from `J` folded into the estimate.
fn weighted_pair_integral(
    cache: &PairGainCache,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
    weight: impl Fn(f64) -> Result<f64>,
    tol: Tolerance,
    context: &'static str,
) -> Result<Estimate> {
    if hi <= lo {
        return Ok(Estimate::default());
    }
    let weight_failure = RefCell::new(None);
    let max_weight = std::cell::Cell::new(0.0f64);
    let integrand = |r: f64| {
        let w = match weight(r) {
            Ok(w) => w,
            Err(e) => {
                weight_failure.borrow_mut().get_or_insert(e);
                return 0.0;
            }
        };
        max_weight.set(max_weight.get().max(w.abs()));
        if w == 0.0 {
            0.0
        } else {
            8.0 * PI * cache.get(r) * w * r
        }
    };
    let q = integrate(integrand, lo, hi, breakpoints, tol).map_err(Error::quad(context))?;
    if let Some(e) = weight_failure.into_inner() {
        return Err(e);
    }
    if let Some(e) = cache.take_failure() {
        return Err(Error::Quadrature { context, source: e });
    }
    let j_err = 8.0 * PI * cache.worst_error.get() * max_weight.get() * 0.5 * (hi * hi - lo * lo);
    Ok(Estimate { value: q.value, abs_error: q.abs_error + j_err })
}

fn pair_terms_difference(lambda_p: f64, d: f64, alpha: f64, tol: Tolerance) -> Result<PairTerms> {
    if d == 0.0 {
        return Ok(PairTerms { same_slot: Estimate::exact(0.0), cross_slot: Estimate::exact(0.0) });
    }
    let lambda = retention::retained_intensity(lambda_p, d)?;
    let lambda2 = lambda * lambda;
    let (outer, jtol) = outer_tol(tol);
    let cache = PairGainCache::new(alpha, jtol);
    let breaks = [0.5 * d, 1.0];
    let same = weighted_pair_integral(
        &cache,
        0.0,
        d,
        &breaks,
        |r| Ok(pair_density_weight(Slot::Same, 2.0 * r, lambda_p, d)? - lambda2),
        outer,
        "variance pair integral",
    )?;
    let cross = weighted_pair_integral(
        &cache,
        0.0,
        d,
        &breaks,
        |r| Ok(pair_density_weight(Slot::Cross, 2.0 * r, lambda_p, d)? - lambda2),
        outer,
        "covariance pair integral",
    )?;
    Ok(PairTerms { same_slot: same, cross_slot: cross })
}

/// `8π ∫_lo^∞ J(r) r dr`.
fn pair_tail(cache: &PairGainCache, lo: f64, tol: Tolerance) -> Result<Estimate> {
    // J(r) r decays like r^{1−α}.
    let integrand = Integrand1D::semi_infinite(|r: f64| 8.0 * PI * cache.get(r) * r, lo, TailDecay::Algebraic(cache.alpha - 1.0))
        .with_breakpoints([1.0]);
    let q = integrate_1d(&integrand, tol).map_err(Error::quad("pair tail integral"))?;
    if let Some(e) = cache.take_failure() {
        return Err(Error::Quadrature { context: "pair tail integral", source: e });
    }
    Ok(Estimate { value: q.value, abs_error: q.abs_error })
}

fn pair_terms_direct(lambda_p: f64, d: f64, alpha: f64, tol: Tolerance) -> Result<PairTerms> {
    let lambda = retention::retained_intensity(lambda_p, d)?;
    let lambda2 = lambda * lambda;
    let (outer, jtol) = outer_tol(tol);
    let cache = PairGainCache::new(alpha, jtol);
    let breaks = [0.5 * d, 1.0];
    let tail = pair_tail(&cache, d, outer)?;
    let mean2 = (lambda * gain_integral(alpha)).powi(2);
    let near_same = weighted_pair_integral(
        &cache,
        0.5 * d,
        d,
        &breaks,
        |r| pair_density_weight(Slot::Same, 2.0 * r, lambda_p, d),
        outer,
        "variance pair integral",
    )?;
    let near_cross = weighted_pair_integral(
        &cache,
        0.0,
        d,
        &breaks,
        |r| pair_density_weight(Slot::Cross, 2.0 * r, lambda_p, d),
        outer,
        "covariance pair integral",
    )?;
    let far = Estimate { value: lambda2 * tail.value, abs_error: lambda2 * tail.abs_error };
    let combine = |near: Estimate| Estimate {
        value: near.value + far.value - mean2,
        abs_error: near.abs_error + far.abs_error,
    };
    Ok(PairTerms { same_slot: combine(near_same), cross_slot: combine(near_cross) })
}

/// Pair terms of the second moments for `(λ_p, d, α)`; `m` does not enter.
pub fn pair_terms(lambda_p: f64, d: f64, alpha: f64, opts: &AnalyticsOptions) -> Result<PairTerms> {
    ModelParams::new(lambda_p, d, alpha, 1.0)?;
    match opts.form {
        PairIntegralForm::Difference => pair_terms_difference(lambda_p, d, alpha, opts.tol),
        PairIntegralForm::Direct => pair_terms_direct(lambda_p, d, alpha, opts.tol),
    }
}

fn variance_from(params: &ModelParams, same_slot: Estimate) -> Estimate {
    let own = params.lambda() * fading_moment2(params.m) * squared_gain_integral(params.alpha);
    Estimate { value: own + same_slot.value, abs_error: same_slot.abs_error }
}

fn covariance_from(params: &ModelParams, p12: f64, cross_slot: Estimate) -> Estimate {
    let own = params.lambda_p * p12 * squared_gain_integral(params.alpha);
    Estimate { value: own + cross_slot.value, abs_error: cross_slot.abs_error }
}

/// `var[I]`.
pub fn variance_interference(params: &ModelParams, opts: &AnalyticsOptions) -> Result<Estimate> {
    params.validate()?;
    let terms = pair_terms(params.lambda_p, params.d, params.alpha, opts)?;
    Ok(variance_from(params, terms.same_slot))
}

/// `cov[I₁, I₂]` of two slots with independent thinnings and independent
/// fading. Does not read `params.m`.
pub fn covariance_interference(params: &ModelParams, opts: &AnalyticsOptions) -> Result<Estimate> {
    params.validate()?;
    let terms = pair_terms(params.lambda_p, params.d, params.alpha, opts)?;
    Ok(covariance_from(params, p12_for(params, opts)?, terms.cross_slot))
}

/// Pearson correlation of the interference in two slots.
pub fn correlation_interference(params: &ModelParams, opts: &AnalyticsOptions) -> Result<Estimate> {
    Ok(interference_stats(params, opts)?.correlation)
}

/// All four statistics, sharing one evaluation of the pair terms.
pub fn interference_stats(params: &ModelParams, opts: &AnalyticsOptions) -> Result<InterferenceStats> {
    params.validate()?;
    let terms = pair_terms(params.lambda_p, params.d, params.alpha, opts)?;
    stats_from_terms(params, &terms, opts)
}

/// Statistics for a given `m` from precomputed pair terms; cheap, so fading
/// sweeps reuse one [`pair_terms`] call.
pub fn stats_from_terms(params: &ModelParams, terms: &PairTerms, opts: &AnalyticsOptions) -> Result<InterferenceStats> {
    params.validate()?;
    let p12 = p12_for(params, opts)?;
    Ok(InterferenceStats::assemble(
        Estimate::exact(mean_interference(params)),
        variance_from(params, terms.same_slot),
        covariance_from(params, p12, terms.cross_slot),
    ))
}

/// Correlation of a Poisson network thinned independently with
/// probability `p_send`: `p_send·m/(m+1)`.
pub fn poisson_baseline_correlation(p_send: f64, m: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_send) {
        return Err(Error::InvalidParameter(format!("send probability must be in [0,1], got {p_send}")));
    }
    if !(m > 0.0) {
        return Err(Error::InvalidParameter(format!("Nakagami m must be positive, got {m}")));
    }
    Ok(p_send / fading_moment2(m))
}

/// Statistics of the ALOHA network that thins the same parent process
/// independently with probability `p1`, so that both networks have the
/// same sender intensity `λ`.
pub fn poisson_baseline_stats(params: &ModelParams) -> Result<InterferenceStats> {
    params.validate()?;
    let p1 = params.p1();
    let lambda = params.lambda();
    let sq = squared_gain_integral(params.alpha);
    let variance = lambda * fading_moment2(params.m) * sq;
    let covariance = p1 * lambda * sq;
    Ok(InterferenceStats {
        mean: Estimate::exact(lambda * gain_integral(params.alpha)),
        variance: Estimate::exact(variance),
        covariance: Estimate::exact(covariance),
        correlation: Estimate::exact(poisson_baseline_correlation(p1, params.m)?),
    })
}
