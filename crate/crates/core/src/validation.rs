//! Cross-check of the analytic statistics against simulation on a grid of
//! parameters. A cell passes when `|analytic − MC| ≤ 3σ + quadrature error`.

use std::fmt::Write as _;

use serde::Serialize;

use crate::analytics::{interference_stats, AnalyticsOptions, ModelParams};
use crate::config::KeyValues;
use crate::curve::format_g;
use crate::error::{Error, Result};
use crate::montecarlo::{estimate_stats, SimConfig, DEFAULT_WINDOW_RADIUS};
use crate::quadrature::Tolerance;
use crate::retention::{self, IntensityConvention};

/// Standard errors allowed between analytic and simulated values.
pub const SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationConfig {
    pub lambda_p: Vec<f64>,
    pub d: Vec<f64>,
    pub alpha: Vec<f64>,
    pub m: Vec<f64>,
    pub realizations: u64,
    pub seed: u64,
    pub window_radius: f64,
    pub tol: Tolerance,
    pub p12_convention: IntensityConvention,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            lambda_p: vec![0.5, 1.0],
            d: vec![0.5, 1.0],
            alpha: vec![3.0],
            m: vec![1.0, 2.0],
            realizations: 10_000,
            seed: 1,
            window_radius: DEFAULT_WINDOW_RADIUS,
            tol: AnalyticsOptions::default().tol,
            p12_convention: IntensityConvention::Parent,
        }
    }
}

impl ValidationConfig {
    /// Keys: `lambda_p`, `d`, `alpha`, `m` (lists or grids),
    /// `realizations`, `seed`, `window_radius`, `rel_tol`, `abs_tol`,
    /// `printed_lambda`. Missing keys keep their defaults.
    pub fn from_config(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        for (key, slot) in [("lambda_p", &mut c.lambda_p), ("d", &mut c.d), ("alpha", &mut c.alpha), ("m", &mut c.m)] {
            if let Some(v) = kv.get_grid(key)? {
                *slot = v;
            }
        }
        if let Some(n) = kv.get_u64("realizations")? {
            c.realizations = n;
        }
        if let Some(s) = kv.get_u64("seed")? {
            c.seed = s;
        }
        if let Some(r) = kv.get_f64("window_radius")? {
            c.window_radius = r;
        }
        if let Some(v) = kv.get_f64("rel_tol")? {
            c.tol.rel = v;
        }
        if let Some(v) = kv.get_f64("abs_tol")? {
            c.tol.abs = v;
        }
        if let Some(b) = kv.get_bool("printed_lambda")? {
            c.p12_convention = if b { IntensityConvention::Retained } else { IntensityConvention::Parent };
        }
        kv.finish()?;
        c.sim_configs()?;
        Ok(c)
    }

    /// One simulation setup per grid point, in report order.
    fn sim_configs(&self) -> Result<Vec<SimConfig>> {
        if [&self.lambda_p, &self.d, &self.alpha, &self.m].iter().any(|v| v.is_empty()) {
            return Err(Error::InvalidParameter("every parameter list needs at least one value".into()));
        }
        let mut out = Vec::new();
        for &lambda_p in &self.lambda_p {
            for &d in &self.d {
                for &alpha in &self.alpha {
                    for &m in &self.m {
                        let params = ModelParams::new(lambda_p, d, alpha, m)?;
                        let c = SimConfig::new(params, self.realizations, self.seed)?.with_window(self.window_radius, d)?;
                        out.push(c);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationCell {
    pub params: ModelParams,
    pub quantity: &'static str,
    pub analytic: f64,
    pub analytic_error: f64,
    pub mc: f64,
    pub mc_stderr: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ValidationCell {
    fn new(params: ModelParams, quantity: &'static str, analytic: (f64, f64), mc: (f64, f64)) -> Self {
        let tolerance = SIGMAS * mc.1 + analytic.1;
        let pass = (analytic.0 - mc.0).abs() <= tolerance;
        Self { params, quantity, analytic: analytic.0, analytic_error: analytic.1, mc: mc.0, mc_stderr: mc.1, tolerance, pass }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub realizations: u64,
    pub seed: u64,
    pub window_radius: f64,
    pub cells: Vec<ValidationCell>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.cells.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| !c.pass).count()
    }

    /// Fixed-width table; identical input gives identical text.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "realizations = {}, seed = {}, window radius = {}",
            self.realizations, self.seed, self.window_radius
        );
        let _ = writeln!(
            s,
            "{:>8} {:>6} {:>6} {:>6}  {:<12} {:>16} {:>16} {:>9} {:>9} {:>9}  result",
            "lambda_p", "d", "alpha", "m", "quantity", "analytic", "simulated", "stderr", "|diff|", "allowed"
        );
        for c in &self.cells {
            let p = &c.params;
            let _ = writeln!(
                s,
                "{:>8} {:>6} {:>6} {:>6}  {:<12} {:>16} {:>16} {:>9} {:>9} {:>9}  {}",
                format_g(p.lambda_p, 6),
                format_g(p.d, 6),
                format_g(p.alpha, 6),
                format_g(p.m, 6),
                c.quantity,
                format_g(c.analytic, 9),
                format_g(c.mc, 9),
                format_g(c.mc_stderr, 2),
                format_g((c.analytic - c.mc).abs(), 2),
                format_g(c.tolerance, 2),
                if c.pass { "pass" } else { "FAIL" }
            );
        }
        let _ = writeln!(s, "{} of {} cells passed", self.cells.len() - self.failures(), self.cells.len());
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }
}

/// Run the grid. Simulations use every rayon worker internally; results
/// do not depend on the number of threads.
pub fn run_validation(config: &ValidationConfig) -> Result<ValidationReport> {
    let opts = AnalyticsOptions { tol: config.tol, p12_convention: config.p12_convention, ..Default::default() };
    let mut cells = Vec::new();
    for sim in config.sim_configs()? {
        let p = sim.params;
        let a = interference_stats(&p, &opts)?;
        let e = estimate_stats(&sim)?;
        let se = &e.std_errors;
        let pair = |v: crate::analytics::Estimate| (v.value, v.abs_error);
        let p12 = match config.p12_convention {
            IntensityConvention::Parent => retention::p12(p.lambda_p, p.d)?,
            conv => retention::p12_closed(p.lambda_p, p.d, conv)?,
        };
        cells.push(ValidationCell::new(p, "mean", pair(a.mean), (e.mean + e.bias_bound, se.mean)));
        cells.push(ValidationCell::new(p, "variance", pair(a.variance), (e.variance, se.variance)));
        cells.push(ValidationCell::new(p, "covariance", pair(a.covariance), (e.covariance, se.covariance)));
        cells.push(ValidationCell::new(p, "correlation", pair(a.correlation), (e.correlation, se.correlation)));
        cells.push(ValidationCell::new(p, "p1", (p.p1(), 0.0), (e.retention.p1.value, e.retention.p1.std_error)));
        cells.push(ValidationCell::new(
            p,
            "p12",
            (p12, Tolerance::PROBABILITY.rel * p12),
            (e.retention.p12.value, e.retention.p12.std_error),
        ));
    }
    Ok(ValidationReport { realizations: config.realizations, seed: config.seed, window_radius: config.window_radius, cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ValidationConfig {
        ValidationConfig {
            lambda_p: vec![1.0],
            d: vec![0.5],
            m: vec![1.0],
            realizations: 2000,
            window_radius: 20.0,
            ..Default::default()
        }
    }

    #[test]
    fn config_keys_and_errors() {
        let kv = KeyValues::parse("lambda_p = 0.5, 2\nm = inf\nrealizations = 300\nprinted_lambda = true\n").unwrap();
        let c = ValidationConfig::from_config(&kv).unwrap();
        assert_eq!(c.lambda_p, vec![0.5, 2.0]);
        assert_eq!(c.m, vec![f64::INFINITY]);
        assert_eq!(c.p12_convention, IntensityConvention::Retained);
        let kv = KeyValues::parse("realizations = 0\n").unwrap();
        assert!(matches!(ValidationConfig::from_config(&kv), Err(Error::InvalidParameter(_))));
        let kv = KeyValues::parse("d = \n").unwrap();
        assert!(ValidationConfig::from_config(&kv).is_err());
    }

    #[test]
    fn small_grid_passes() {
        let r = run_validation(&small()).unwrap();
        assert_eq!(r.cells.len(), 6);
        assert!(r.passed(), "{}", r.render());
        assert_eq!(r.render(), run_validation(&small()).unwrap().render());
    }

    #[test]
    fn printed_convention_is_caught() {
        let c = ValidationConfig {
            lambda_p: vec![2.0],
            d: vec![1.0],
            p12_convention: IntensityConvention::Retained,
            ..small()
        };
        let r = run_validation(&c).unwrap();
        assert!(!r.passed());
        let failed: Vec<_> = r.cells.iter().filter(|c| !c.pass).map(|c| c.quantity).collect();
        assert!(failed.contains(&"covariance"), "{}", r.render());
    }
}
