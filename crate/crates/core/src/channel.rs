//! Path gain and Nakagami-m power fading.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};

use crate::error::{Error, Result};

/// Smallest accepted Nakagami shape.
pub const MIN_NAKAGAMI_M: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub alpha: f64,
    /// Nakagami shape; `f64::INFINITY` means no fading.
    pub m: f64,
}

impl ChannelParams {
    pub fn new(alpha: f64, m: f64) -> Result<Self> {
        check_alpha(alpha)?;
        check_m(m)?;
        Ok(Self { alpha, m })
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 2.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("path-loss exponent must exceed 2, got {alpha}")))
    }
}

pub(crate) fn check_m(m: f64) -> Result<()> {
    if m >= MIN_NAKAGAMI_M {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "Nakagami m must be at least {MIN_NAKAGAMI_M}, got {m}"
        )))
    }
}

/// `min(1, distance^-alpha)`.
#[inline]
pub fn path_gain(distance: f64, alpha: f64) -> f64 {
    if distance <= 1.0 {
        1.0
    } else {
        distance.powf(-alpha)
    }
}

/// [`path_gain`] from the squared distance, skipping `powf` for the common
/// integer exponents.
#[inline]
pub fn path_gain_sq(distance2: f64, alpha: f64) -> f64 {
    if distance2 <= 1.0 {
        1.0
    } else if alpha == 3.0 {
        1.0 / (distance2 * distance2.sqrt())
    } else if alpha == 4.0 {
        1.0 / (distance2 * distance2)
    } else {
        distance2.powf(-0.5 * alpha)
    }
}

/// Power fading sampler, `h² ~ Gamma(m, 1/m)`.
#[derive(Debug, Clone, Copy)]
pub struct Fading {
    kind: FadingKind,
}

#[derive(Debug, Clone, Copy)]
enum FadingKind {
    None,
    // Gamma(1, 1) is Exp(1); the ziggurat sampler is much cheaper.
    Rayleigh,
    Nakagami(Gamma<f64>),
}

impl Fading {
    pub fn new(m: f64) -> Result<Self> {
        if !(m > 0.0) {
            return Err(Error::InvalidParameter(format!("Nakagami m must be positive, got {m}")));
        }
        let kind = if m.is_infinite() {
            FadingKind::None
        } else if m == 1.0 {
            FadingKind::Rayleigh
        } else {
            FadingKind::Nakagami(Gamma::new(m, 1.0 / m).map_err(|e| Error::InvalidParameter(e.to_string()))?)
        };
        Ok(Self { kind })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            FadingKind::None => 1.0,
            FadingKind::Rayleigh => Exp1.sample(rng),
            FadingKind::Nakagami(g) => g.sample(rng),
        }
    }
}

/// One draw of `h²`. Prefer [`Fading`] in loops.
pub fn sample_fading<R: Rng + ?Sized>(m: f64, rng: &mut R) -> Result<f64> {
    Ok(Fading::new(m)?.sample(rng))
}

/// `E[h⁴] = (m+1)/m`; exactly 1 without fading.
pub fn fading_moment2(m: f64) -> f64 {
    if m.is_infinite() {
        1.0
    } else {
        (m + 1.0) / m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn path_gain_examples() {
        assert_eq!(path_gain(0.5, 3.0), 1.0);
        assert_eq!(path_gain(1.0, 3.0), 1.0);
        assert_eq!(path_gain(0.0, 3.0), 1.0);
        assert!((path_gain(2.0, 3.0) - 0.125).abs() < 1e-15);
        for (r, a) in [(0.3, 3.0), (1.7, 3.0), (2.2, 4.0), (3.1, 2.5), (5.0, 3.7)] {
            let (x, y) = (path_gain(r, a), path_gain_sq(r * r, a));
            assert!((x - y).abs() <= 1e-14 * x, "r={r} a={a}");
        }
    }

    #[test]
    fn parameter_checks() {
        assert!(ChannelParams::new(2.0, 1.0).is_err());
        assert!(ChannelParams::new(3.0, 0.4).is_err());
        assert!(ChannelParams::new(3.0, f64::INFINITY).is_ok());
        assert!(Fading::new(0.0).is_err());
    }

    #[test]
    fn moment2_values() {
        assert_eq!(fading_moment2(1.0), 2.0);
        assert_eq!(fading_moment2(2.0), 1.5);
        assert_eq!(fading_moment2(f64::INFINITY), 1.0);
    }

    #[test]
    fn no_fading_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Fading::new(f64::INFINITY).unwrap();
        assert!((0..100).all(|_| f.sample(&mut rng) == 1.0));
        // A huge finite m already has a vanishing sample variance.
        let f = Fading::new(1e8).unwrap();
        let xs: Vec<f64> = (0..1000).map(|_| f.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / 1000.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 999.0;
        assert!(var < 1e-6);
    }

    #[test]
    fn fading_moments() {
        // E[h²] = 1, E[h⁴] = (m+1)/m.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 400_000;
        for m in [0.5, 1.0, 2.0, 6.0] {
            let f = Fading::new(m).unwrap();
            let xs: Vec<f64> = (0..n).map(|_| f.sample(&mut rng)).collect();
            let m1 = xs.iter().sum::<f64>() / n as f64;
            let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
            let sd1 = (fading_moment2(m) - 1.0).sqrt() / (n as f64).sqrt();
            assert!((m1 - 1.0).abs() < 4.0 * sd1, "m={m}: {m1}");
            // var(h⁴) = E[h⁸] − E[h⁴]², E[h⁸] = (m+1)(m+2)(m+3)/m³.
            let m4 = (m + 1.0) * (m + 2.0) * (m + 3.0) / m.powi(3);
            let sd2 = ((m4 - fading_moment2(m).powi(2)) / n as f64).sqrt();
            assert!((m2 - fading_moment2(m)).abs() < 4.0 * sd2, "m={m}: {m2}");
        }
    }

    #[test]
    fn rayleigh_power_is_exponential() {
        // P(h² > 1) = e^{-1} for Exp(1).
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = Fading::new(1.0).unwrap();
        let n = 200_000;
        let hits = (0..n).filter(|_| f.sample(&mut rng) > 1.0).count() as f64 / n as f64;
        let se = (0.3679 * 0.6321 / n as f64).sqrt();
        assert!((hits - (-1f64).exp()).abs() < 4.0 * se);
    }
}
