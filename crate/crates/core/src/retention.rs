//! Retention probabilities of Matérn type-II thinning.
//!
//! Marks are uniform on `[0, 1]`; a parent point survives iff its mark is
//! smaller than the marks of all parent points within the hard-core
//! distance `d`. Conditioning on the marks of the points of interest turns
//! every joint retention event into a void probability of an independently
//! thinned Poisson process, so each probability is an integral of an
//! exponential over mark space:
//!
//! | quantity | event |
//! |----------|-------|
//! | `p1`     | a point survives one thinning |
//! | `p12`    | a point survives two independent thinnings |
//! | `p11(r)` | two points at distance `r` both survive the same thinning |
//! | `p12r(r)`| one point survives thinning 1, the other thinning 2 |
//!
//! `p12`, `p11` and `p12r` are computed by adaptive quadrature of those
//! mark-space integrands. Closed forms are kept as cross-checks.
//!
//! All functions take the intensity `lambda_p` of the parent process.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::{
    ein, exp_integral_ei_scaled, integrate, integrate_2d, integrate_2d_unit_square, Tolerance,
};

/// Which intensity a closed form is evaluated with.
///
/// The mark-space integrals are driven by the parent intensity. The
/// `Retained` variant plugs in `λ = λ_p·p1` instead; it is kept only to
/// demonstrate that this substitution disagrees with simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntensityConvention {
    #[default]
    Parent,
    Retained,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardcoreGeometry {
    pub d: f64,
}

impl HardcoreGeometry {
    pub fn new(d: f64) -> Result<Self> {
        check_non_negative("hard-core distance", d)?;
        Ok(Self { d })
    }

    /// Area of the guard disc, `πd²`.
    pub fn area(&self) -> f64 {
        PI * self.d * self.d
    }

    pub fn overlap(&self, r: f64) -> f64 {
        gamma_overlap(r, self.d)
    }

    pub fn union(&self, r: f64) -> f64 {
        gamma_union(r, self.d)
    }
}

/// First-order retention summary of a thinning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetentionProbabilities {
    pub p1: f64,
    pub p12: f64,
    /// Intensity of the retained process, `λ_p·p1`.
    pub lambda: f64,
}

impl RetentionProbabilities {
    pub fn new(lambda_p: f64, d: f64) -> Result<Self> {
        let p1 = p1(lambda_p, d)?;
        Ok(Self { p1, p12: p12(lambda_p, d)?, lambda: lambda_p * p1 })
    }
}

fn check_non_negative(what: &str, x: f64) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must be finite and non-negative, got {x}")))
    }
}

fn check_inputs(r: f64, lambda_p: f64, d: f64) -> Result<()> {
    check_non_negative("distance", r)?;
    check_non_negative("intensity", lambda_p)?;
    check_non_negative("hard-core distance", d)
}

/// Area of the intersection of two radius-`d` discs whose centres are `r`
/// apart.
pub fn gamma_overlap(r: f64, d: f64) -> f64 {
    if d <= 0.0 || r >= 2.0 * d {
        return 0.0;
    }
    let r = r.max(0.0);
    2.0 * d * d * (r / (2.0 * d)).acos() - 0.5 * r * (4.0 * d * d - r * r).max(0.0).sqrt()
}

/// Area of the union of two radius-`d` discs whose centres are `r` apart.
pub fn gamma_union(r: f64, d: f64) -> f64 {
    2.0 * PI * d * d - gamma_overlap(r, d)
}

/// `(1 - e^{-x})/x`, equal to 1 at `x = 0`.
#[inline]
fn void_mean(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `∫_0^1 (1-u) e^{-us} du`.
#[inline]
fn weighted_void_mean(s: f64) -> f64 {
    if s.abs() < 1e-2 {
        0.5 - s / 6.0 + s * s / 24.0 - s.powi(3) / 120.0 + s.powi(4) / 720.0
    } else {
        (s + (-s).exp_m1()) / (s * s)
    }
}

/// Probability that a parent point survives one thinning,
/// `(1 - e^{-λ_p πd²}) / (λ_p πd²)`.
pub fn p1(lambda_p: f64, d: f64) -> Result<f64> {
    check_inputs(0.0, lambda_p, d)?;
    Ok(void_mean(lambda_p * PI * d * d))
}

/// Intensity of the retained process, `λ_p·p1`.
pub fn retained_intensity(lambda_p: f64, d: f64) -> Result<f64> {
    Ok(lambda_p * p1(lambda_p, d)?)
}

/// Hard-core distance at which [`p1`] equals `target`, for `0 < target ≤ 1`.
pub fn hardcore_for_p1(lambda_p: f64, target: f64) -> Result<f64> {
    check_inputs(0.0, lambda_p, 0.0)?;
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidParameter(format!("retention probability must be in (0, 1], got {target}")));
    }
    if target == 1.0 {
        return Ok(0.0);
    }
    // void_mean(y) < 1/y, so the root lies below 1/target.
    let (mut lo, mut hi) = (0.0, 1.0 / target);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if void_mean(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi) / (lambda_p * PI)).sqrt())
}

/// Probability that a parent point survives two independent thinnings.
pub fn p12(lambda_p: f64, d: f64) -> Result<f64> {
    p12_with(lambda_p, d, Tolerance::PROBABILITY)
}

pub fn p12_with(lambda_p: f64, d: f64, tol: Tolerance) -> Result<f64> {
    check_inputs(0.0, lambda_p, d)?;
    let x = lambda_p * PI * d * d;
    if x == 0.0 {
        return Ok(1.0);
    }
    // The killers of the point form the union of the two sub-mark sets.
    let r = integrate_2d_unit_square(|u, v| (-(u + v - u * v) * x).exp(), tol)
        .map_err(Error::quad("p12"))?;
    Ok(r.value)
}

/// Closed form `e^{-x}(Ei(x) - ln x - γ)/x` with `x = intensity·πd²`.
pub fn p12_closed(lambda_p: f64, d: f64, convention: IntensityConvention) -> Result<f64> {
    let intensity = convention_intensity(lambda_p, d, convention)?;
    let x = intensity * PI * d * d;
    if x == 0.0 {
        return Ok(1.0);
    }
    Ok((-x).exp() * ein(x) / x)
}

fn convention_intensity(lambda_p: f64, d: f64, convention: IntensityConvention) -> Result<f64> {
    Ok(match convention {
        IntensityConvention::Parent => {
            check_inputs(0.0, lambda_p, d)?;
            lambda_p
        }
        IntensityConvention::Retained => retained_intensity(lambda_p, d)?,
    })
}

/// Probability that two parent points at distance `r` both survive the same
/// thinning. Zero for `r ≤ d`.
pub fn p11(r: f64, lambda_p: f64, d: f64) -> Result<f64> {
    p11_with(r, lambda_p, d, Tolerance::PROBABILITY)
}

pub fn p11_with(r: f64, lambda_p: f64, d: f64, tol: Tolerance) -> Result<f64> {
    check_inputs(r, lambda_p, d)?;
    if r <= d {
        return Ok(0.0);
    }
    let area = PI * d * d;
    let common = gamma_overlap(r, d);
    let own = lambda_p * (area - common);
    let shared = lambda_p * common;
    // The shared lens must be free of marks below max(m_x, m_y). Integrate
    // the triangle m_x < m_y where that max is m_y, and double.
    let res = integrate_2d(
        |v, u| (-(u + v) * own - v * shared).exp(),
        (0.0, 1.0),
        |_| 0.0,
        |v| v,
        tol,
    )
    .map_err(Error::quad("p11"))?;
    Ok(2.0 * res.value)
}

/// Closed form of [`p11`] for `r > d`.
pub fn p11_closed(r: f64, lambda_p: f64, d: f64, convention: IntensityConvention) -> Result<f64> {
    check_non_negative("distance", r)?;
    let intensity = convention_intensity(lambda_p, d, convention)?;
    if r <= d {
        return Ok(0.0);
    }
    let area = PI * d * d;
    let union = gamma_union(r, d);
    let own = intensity * (union - area);
    if own == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 / own * (void_mean(intensity * area) - void_mean(intensity * union)))
}

/// Probability that one of two parent points at distance `r` survives the
/// first thinning and the other survives an independent second thinning.
///
/// For `r ≤ d` the two points are each other's potential killers, which
/// adds the factor `(1 - m_x)(1 - m_y)` to the integrand; the function jumps
/// at `r = d`. For `r > 2d` it equals `p1²`.
pub fn p12r(r: f64, lambda_p: f64, d: f64) -> Result<f64> {
    p12r_with(r, lambda_p, d, Tolerance::PROBABILITY)
}

pub fn p12r_with(r: f64, lambda_p: f64, d: f64, tol: Tolerance) -> Result<f64> {
    if r > d {
        p12r_separated_branch(r, lambda_p, d, tol)
    } else {
        p12r_neighbour_branch(r, lambda_p, d, tol)
    }
}

/// The `r > d` integrand of [`p12r`] evaluated at any `r ≥ 0`. As `r → 0`
/// it tends to [`p12`].
pub fn p12r_separated_branch(r: f64, lambda_p: f64, d: f64, tol: Tolerance) -> Result<f64> {
    check_inputs(r, lambda_p, d)?;
    let (own, shared) = split_rates(r, lambda_p, d);
    integrate_2d_unit_square(|u, v| (-(u + v) * own - (u + v - u * v) * shared).exp(), tol)
        .map(|q| q.value)
        .map_err(Error::quad("p12r"))
}

/// The `r ≤ d` integrand of [`p12r`] evaluated at any `r ≥ 0`.
pub fn p12r_neighbour_branch(r: f64, lambda_p: f64, d: f64, tol: Tolerance) -> Result<f64> {
    check_inputs(r, lambda_p, d)?;
    let (own, shared) = split_rates(r, lambda_p, d);
    integrate_2d_unit_square(
        |u, v| (-(u + v) * own - (u + v - u * v) * shared).exp() * (1.0 - u) * (1.0 - v),
        tol,
    )
    .map(|q| q.value)
    .map_err(Error::quad("p12r"))
}

fn split_rates(r: f64, lambda_p: f64, d: f64) -> (f64, f64) {
    let area = PI * d * d;
    let common = gamma_overlap(r, d);
    (lambda_p * (area - common), lambda_p * common)
}

/// Exponential-integral closed form of [`p12r`] for `r > d`.
///
/// Written with `b = λ_p πd²`, `c = λ_p γ_d(r)`:
/// `e^{-b²/c}/c · [Ei(b²/c) − 2 Ei(b(b−c)/c) + Ei((b−c)²/c)]`, which is the
/// real principal value of the incomplete-gamma expression with negative
/// arguments. Evaluated through `e^{-x}Ei(x)` so nothing overflows as
/// `c → 0`. Returns `None` for `r ≤ d`, where no closed form is offered.
pub fn p12r_closed(r: f64, lambda_p: f64, d: f64) -> Result<Option<f64>> {
    check_inputs(r, lambda_p, d)?;
    if r <= d {
        return Ok(None);
    }
    let b = lambda_p * PI * d * d;
    let c = lambda_p * gamma_overlap(r, d);
    if c == 0.0 {
        return Ok(Some(void_mean(b).powi(2)));
    }
    let eis = |x: f64| exp_integral_ei_scaled(x).map_err(Error::quad("p12r closed form"));
    let x1 = b * b / c;
    let x2 = b * (b - c) / c;
    let x3 = (b - c) * (b - c) / c;
    let sum = eis(x1)? - 2.0 * (-b).exp() * eis(x2)? + (-(2.0 * b - c)).exp() * eis(x3)?;
    Ok(Some(sum / c))
}

/// [`p12r`] with the inner mark integral done analytically, leaving one
/// smooth 1D integral. An independent route for both branches.
pub fn p12r_reduced(r: f64, lambda_p: f64, d: f64, tol: Tolerance) -> Result<f64> {
    check_inputs(r, lambda_p, d)?;
    let b = lambda_p * PI * d * d;
    let c = lambda_p * gamma_overlap(r, d);
    let res = if r > d {
        integrate(|v| (-v * b).exp() * void_mean(b - v * c), 0.0, 1.0, &[], tol)
    } else {
        integrate(
            |v| (1.0 - v) * (-v * b).exp() * weighted_void_mean(b - v * c),
            0.0,
            1.0,
            &[],
            tol,
        )
    };
    res.map(|q| q.value).map_err(Error::quad("p12r reduced"))
}

/// Second-order product density `λ_p²·p11(r)`.
pub fn product_density2(r: f64, lambda_p: f64, d: f64) -> Result<f64> {
    Ok(lambda_p * lambda_p * p11(r, lambda_p, d)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const T: Tolerance = Tolerance::PROBABILITY;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    // Independent area oracle: midpoint counting on a fine grid.
    fn lens_area_by_counting(r: f64, d: f64) -> f64 {
        let n = 2000;
        let h = 2.0 * d / n as f64;
        let mut hits = 0usize;
        for i in 0..n {
            for j in 0..n {
                let x = -d + (i as f64 + 0.5) * h;
                let y = -d + (j as f64 + 0.5) * h;
                if x * x + y * y <= d * d && (x - r).powi(2) + y * y <= d * d {
                    hits += 1;
                }
            }
        }
        hits as f64 * h * h
    }

    #[test]
    fn p1_inverse() {
        for (lp, d) in [(1.0, 0.4), (1.0, 0.8), (2.0, 1.2), (0.5, 3.0)] {
            let x = p1(lp, d).unwrap();
            assert!((hardcore_for_p1(lp, x).unwrap() - d).abs() < 1e-10 * d.max(1.0));
        }
        assert_eq!(hardcore_for_p1(1.0, 1.0).unwrap(), 0.0);
        assert!(hardcore_for_p1(1.0, 0.0).is_err());
        assert!(hardcore_for_p1(1.0, 1.5).is_err());
    }

    #[test]
    fn overlap_geometry() {
        assert!((gamma_overlap(0.0, 1.0) - PI).abs() < 1e-15);
        assert_eq!(gamma_overlap(2.0, 1.0), 0.0);
        assert_eq!(gamma_overlap(3.0, 1.0), 0.0);
        assert_eq!(gamma_overlap(0.5, 0.0), 0.0);
        let lens = gamma_overlap(1.0, 1.0);
        assert!((lens - 1.228_369_698).abs() < 1e-9);
        assert!((lens - lens_area_by_counting(1.0, 1.0)).abs() < 2e-3);
        assert!((gamma_union(1.0, 1.0) - 5.054_815_609).abs() < 1e-8);
        assert!((gamma_union(0.0, 1.0) - PI).abs() < 1e-15);
        assert!((gamma_union(2.0, 1.0) - 2.0 * PI).abs() < 1e-15);
        // Continuity at r = 2d.
        assert!(gamma_overlap(2.0 - 1e-9, 1.0) < 1e-12);
    }

    #[test]
    fn p1_reference_constants() {
        for (d, want) in [(0.4, 0.78598), (0.8, 0.43076), (1.2, 0.21865)] {
            let got = p1(1.0, d).unwrap();
            assert!((got - want).abs() < 5e-6, "d={d}: {got}");
        }
        assert_eq!(p1(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(p1(0.0, 1.0).unwrap(), 1.0);
        assert!(p1(-1.0, 1.0).is_err());
    }

    #[test]
    fn intensity_saturates() {
        let lambda = retained_intensity(1e3, 1.0).unwrap();
        assert!(rel(lambda, 1.0 / PI) < 0.01);
    }

    #[test]
    fn p12_quadrature_and_closed_form() {
        let q = p12(1.0, 1.0).unwrap();
        assert!((q - 0.126_638_271_475_790_2).abs() < 1e-12, "{q}");
        for (lp, d) in [(0.5, 0.5), (1.0, 0.5), (2.0, 1.0), (1.0, 2.0)] {
            let q = p12(lp, d).unwrap();
            let c = p12_closed(lp, d, IntensityConvention::Parent).unwrap();
            assert!(rel(c, q) < 1e-9, "lp={lp} d={d}: {c} vs {q}");
        }
        assert_eq!(p12(1.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn p12_exceeds_p1_squared() {
        for d in [0.5, 1.0, 2.0] {
            let p = p1(1.0, d).unwrap();
            let q = p12(1.0, d).unwrap();
            assert!(q > p * p && q < p, "d={d}");
        }
    }

    #[test]
    fn printed_convention_differs() {
        let parent = p12_closed(2.0, 1.0, IntensityConvention::Parent).unwrap();
        let retained = p12_closed(2.0, 1.0, IntensityConvention::Retained).unwrap();
        assert!(retained > 2.0 * parent);
    }

    #[test]
    fn p11_branches() {
        assert_eq!(p11(0.9, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(p11(1.0, 1.0, 1.0).unwrap(), 0.0);
        let p = p1(1.0, 1.0).unwrap();
        assert!((p11(3.0, 1.0, 1.0).unwrap() - p * p).abs() < 1e-12);
        let q = p11(1.5, 1.0, 1.0).unwrap();
        let c = p11_closed(1.5, 1.0, 1.0, IntensityConvention::Parent).unwrap();
        assert!(rel(c, q) < 1e-6);
        // Continuous from the right at r = d: no jump beyond the first branch.
        let a = p11(1.0 + 1e-7, 1.0, 1.0).unwrap();
        let b = p11(1.0 + 2e-7, 1.0, 1.0).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn p12r_frozen_values() {
        // 30-digit evaluations of the same mark-space integrals.
        let cases = [
            (0.2, 0.055_446_102_166_827_86),
            (0.5, 0.053_830_665_492_761_36),
            (0.9, 0.051_985_330_625_123_03),
            (1.05, 0.101_824_045_478_438_54),
            (1.5, 0.096_057_512_184_760_11),
            (1.9, 0.093_044_356_792_571_23),
        ];
        for (r, want) in cases {
            let got = p12r(r, 1.0, 1.0).unwrap();
            assert!(rel(got, want) < 1e-9, "r={r}: {got} vs {want}");
        }
    }

    #[test]
    fn p12r_structure() {
        let p = p1(1.0, 1.0).unwrap();
        assert!((p12r(2.5, 1.0, 1.0).unwrap() - p * p).abs() < 1e-12);
        let below = p12r(0.5, 1.0, 1.0).unwrap();
        assert!(below > 0.0);
        assert!(below < p12r(1.0 + 1e-9, 1.0, 1.0).unwrap());
        let eps = 1e-6;
        assert!(p12r(1.0 - eps, 1.0, 1.0).unwrap() < p12r(1.0 + eps, 1.0, 1.0).unwrap());
        let limit = p12r_separated_branch(1e-6, 1.0, 1.0, T).unwrap();
        assert!((limit - p12(1.0, 1.0).unwrap()).abs() < 1e-6);
        // Cross-thinning pairs are rarer than same-thinning pairs on (d, 2d).
        for r in [1.1, 1.5, 1.9] {
            assert!(p12r(r, 1.0, 1.0).unwrap() < p11(r, 1.0, 1.0).unwrap());
        }
    }

    #[test]
    fn neighbour_branch_limit_at_zero() {
        // ∬ e^{-(u+v-uv)b}(1-u)(1-v) = e^{-b} Σ b^k / (k! (k+2)²).
        let b = PI;
        let mut series = 0.0;
        let mut fact = 1.0;
        for k in 0..60 {
            if k > 0 {
                fact *= k as f64;
            }
            series += b.powi(k) / (fact * ((k + 2) as f64).powi(2));
        }
        series *= (-b).exp();
        let got = p12r_neighbour_branch(1e-7, 1.0, 1.0, T).unwrap();
        assert!((got - series).abs() < 1e-6, "{got} vs {series}");
        // The alternative limit expression e^{-x}(1+Ei(x)-ln x-γ)-1)/x is
        // negative and therefore cannot be this probability.
        let alt = ((-b).exp() * (1.0 + ein(b)) - 1.0) / b;
        assert!(alt < 0.0);
    }

    #[test]
    fn closed_forms_track_quadrature() {
        for lp in [0.5, 1.0, 2.0] {
            for d in [0.5, 1.0] {
                for k in [1.05, 1.2, 1.5, 1.9, 2.5] {
                    let r = k * d;
                    let q = p12r(r, lp, d).unwrap();
                    let c = p12r_closed(r, lp, d).unwrap().unwrap();
                    assert!(rel(c, q) < 1e-6, "p12r lp={lp} d={d} r={r}");
                    let q = p11(r, lp, d).unwrap();
                    let c = p11_closed(r, lp, d, IntensityConvention::Parent).unwrap();
                    assert!(rel(c, q) < 1e-6, "p11 lp={lp} d={d} r={r}");
                }
            }
        }
    }

    #[test]
    fn reduced_route_matches_both_branches() {
        for r in [0.1, 0.5, 0.99, 1.0, 1.01, 1.5, 2.2] {
            let q = p12r(r, 1.3, 1.0).unwrap();
            let red = p12r_reduced(r, 1.3, 1.0, T).unwrap();
            assert!(rel(red, q) < 1e-9, "r={r}");
        }
        assert_eq!(p12r_closed(0.5, 1.0, 1.0).unwrap(), None);
    }

    #[test]
    fn vanishing_hardcore_distance_is_poisson() {
        let d = 1e-6;
        assert!((p1(1.0, d).unwrap() - 1.0).abs() < 1e-9);
        assert!((p12(1.0, d).unwrap() - 1.0).abs() < 1e-9);
        for r in [1.5e-6, 1.0, 10.0] {
            assert!((p12r(r, 1.0, d).unwrap() - 1.0).abs() < 1e-9);
        }
        for r in [1.5e-6, 1.0, 10.0] {
            assert!((p11(r, 1.0, d).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn product_density_limits() {
        assert_eq!(product_density2(0.5, 1.0, 1.0).unwrap(), 0.0);
        let lambda = retained_intensity(1.0, 1.0).unwrap();
        assert!((product_density2(2.5, 1.0, 1.0).unwrap() - lambda * lambda).abs() < 1e-12);
        let want = p11(1.2, 1.0, 1.0).unwrap();
        assert_eq!(product_density2(1.2, 1.0, 1.0).unwrap(), want);
        let lp = 2.0;
        assert_eq!(product_density2(1.2, lp, 1.0).unwrap(), lp * lp * p11(1.2, lp, 1.0).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn p12_bounded_by_p1(lp in 0.01f64..5.0, d in 0.01f64..2.0) {
            let p = p1(lp, d).unwrap();
            let q = p12(lp, d).unwrap();
            prop_assert!(q >= p * p - 1e-12 && q <= p + 1e-12);
        }

        #[test]
        fn p12_decreasing_in_intensity(lp in 0.01f64..5.0, d in 0.05f64..2.0, f in 1.01f64..3.0) {
            prop_assert!(p12(lp * f, d).unwrap() < p12(lp, d).unwrap());
        }

        #[test]
        fn pair_probabilities_are_probabilities(k in 0.0f64..3.0, lp in 0.05f64..3.0, d in 0.1f64..1.5) {
            let r = k * d;
            let a = p11(r, lp, d).unwrap();
            let b = p12r(r, lp, d).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b > 0.0 && b <= 1.0);
        }
    }
}
