//! Exponential integral `Ei(x) = PV ∫_{-∞}^x e^t/t dt`.

use super::QuadratureError;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_606_512_090_082;

// Above this the power series loses to the asymptotic expansion (≈ ln 1/ε).
const SERIES_LIMIT: f64 = 36.0;

/// `Ein(x) = Σ_{k≥1} x^k / (k·k!)`, the entire part of `Ei`:
/// `Ei(x) = γ + ln|x| + Ein(x)`.
///
/// Alternating cancellation makes the direct series useless for very
/// negative `x`; there it is evaluated through `E₁`.
pub fn ein(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if x < -2.0 {
        return -e1_positive(-x) - EULER_GAMMA - (-x).ln();
    }
    if x > SERIES_LIMIT {
        return ei_positive(x) - EULER_GAMMA - x.ln();
    }
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 1..400 {
        let kf = k as f64;
        term *= x / kf;
        let add = term / kf;
        sum += add;
        if add.abs() <= f64::EPSILON * sum.abs() {
            break;
        }
    }
    sum
}

/// Exponential integral, principal value for `x > 0`.
pub fn exp_integral_ei(x: f64) -> Result<f64, QuadratureError> {
    if x == 0.0 || x.is_nan() {
        return Err(QuadratureError::InvalidDomain(format!("Ei is undefined at x={x}")));
    }
    Ok(if x > 0.0 { ei_positive(x) } else { -e1_positive(-x) })
}

/// `e^{-x}·Ei(x)` for `x > 0`, finite for arguments where `Ei` overflows.
pub fn exp_integral_ei_scaled(x: f64) -> Result<f64, QuadratureError> {
    if !(x > 0.0) {
        return Err(QuadratureError::InvalidDomain(format!(
            "scaled Ei requires x > 0, got {x}"
        )));
    }
    Ok(if x <= SERIES_LIMIT { ei_positive(x) * (-x).exp() } else { asymptotic_sum(x) / x })
}

fn ei_positive(x: f64) -> f64 {
    if x <= SERIES_LIMIT {
        // All series terms are positive, so no cancellation except near the
        // root x ≈ 0.3725 where only absolute accuracy is possible.
        EULER_GAMMA + x.ln() + ein(x)
    } else {
        x.exp() / x * asymptotic_sum(x)
    }
}

// Σ k!/x^k truncated at the smallest term.
fn asymptotic_sum(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    for k in 1..200 {
        let prev = term;
        term *= k as f64 / x;
        if term < f64::EPSILON * sum || term > prev {
            break;
        }
        sum += term;
    }
    sum
}

// E₁(z) for z > 0.
fn e1_positive(z: f64) -> f64 {
    if z <= 1.0 {
        // -γ - ln z - Σ (-z)^k/(k·k!)
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 1..100 {
            let kf = k as f64;
            term *= -z / kf;
            let add = term / kf;
            sum += add;
            if add.abs() <= f64::EPSILON * sum.abs() {
                break;
            }
        }
        -EULER_GAMMA - z.ln() - sum
    } else {
        // Continued fraction, modified Lentz.
        let tiny = 1e-300;
        let mut b = z + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < f64::EPSILON {
                break;
            }
        }
        h * (-z).exp()
    }
}
