//! Parameter sweeps: a [`CurveSpec`] names the quantities, the swept
//! variable and its grid, and [`evaluate`] turns it into a [`CurveData`]
//! table that renders as CSV with a `# key = value` header or as JSON.
//!
//! The header carries every resolved setting, so feeding it back through
//! [`CurveSpec::from_config`] reproduces the table exactly.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::analytics::{
    mean_interference, pair_terms, poisson_baseline_correlation, stats_from_terms, AnalyticsOptions, ModelParams,
    PairTerms,
};
use crate::config::{parse_grid, parse_real, KeyValues};
use crate::error::{Error, Result};
use crate::montecarlo::{estimate_retention_probs, estimate_stats, NetworkModel, SimConfig};
use crate::quadrature::Tolerance;
use crate::retention::{self, IntensityConvention};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantity {
    P1,
    P12,
    P11,
    P12r,
    Rho2,
    /// `λ_p²·p12r(r)`, the cross-slot pair density.
    CrossDensity,
    /// `λ²`, the squared sender intensity.
    Lambda2,
    Lambda,
    /// Hard-core distance, useful as an auxiliary column when sweeping `p1`.
    D,
    Mean,
    Variance,
    Covariance,
    Correlation,
    PoissonCorrelation,
}

impl Quantity {
    pub const ALL: [Quantity; 14] = [
        Quantity::P1,
        Quantity::P12,
        Quantity::P11,
        Quantity::P12r,
        Quantity::Rho2,
        Quantity::CrossDensity,
        Quantity::Lambda2,
        Quantity::Lambda,
        Quantity::D,
        Quantity::Mean,
        Quantity::Variance,
        Quantity::Covariance,
        Quantity::Correlation,
        Quantity::PoissonCorrelation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::P1 => "p1",
            Quantity::P12 => "p12",
            Quantity::P11 => "p11",
            Quantity::P12r => "p12r",
            Quantity::Rho2 => "rho2",
            Quantity::CrossDensity => "cross_density",
            Quantity::Lambda2 => "lambda2",
            Quantity::Lambda => "lambda",
            Quantity::D => "d",
            Quantity::Mean => "mean",
            Quantity::Variance => "variance",
            Quantity::Covariance => "covariance",
            Quantity::Correlation => "correlation",
            Quantity::PoissonCorrelation => "poisson_correlation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown quantity `{s}`")))
    }

    /// Depends on a pair distance `r`.
    pub fn needs_r(self) -> bool {
        matches!(self, Quantity::P11 | Quantity::P12r | Quantity::Rho2 | Quantity::CrossDensity)
    }

    fn needs_pair_terms(self) -> bool {
        matches!(self, Quantity::Variance | Quantity::Covariance | Quantity::Correlation)
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A model parameter that can be fixed, swept or used as a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    LambdaP,
    D,
    Alpha,
    M,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::LambdaP => "lambda_p",
            Param::D => "d",
            Param::Alpha => "alpha",
            Param::M => "m",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Param::LambdaP, Param::D, Param::Alpha, Param::M]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter `{s}`")))
    }

    fn set(self, params: &mut ModelParams, v: f64) {
        match self {
            Param::LambdaP => params.lambda_p = v,
            Param::D => params.d = v,
            Param::Alpha => params.alpha = v,
            Param::M => params.m = v,
        }
    }

    fn get(self, params: &ModelParams) -> f64 {
        match self {
            Param::LambdaP => params.lambda_p,
            Param::D => params.d,
            Param::Alpha => params.alpha,
            Param::M => params.m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    Param(Param),
    /// Pair distance for the `r`-dependent quantities.
    R,
    /// Retention probability `p1`; the hard-core distance is solved for.
    P1Fraction,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Param(p) => p.name(),
            SweepVariable::R => "r",
            SweepVariable::P1Fraction => "p1_fraction",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "r" => Ok(SweepVariable::R),
            "p1_fraction" => Ok(SweepVariable::P1Fraction),
            _ => Param::parse(s).map(SweepVariable::Param),
        }
    }

    /// The model parameter this sweep determines, if any.
    fn controls(self) -> Option<Param> {
        match self {
            SweepVariable::Param(p) => Some(p),
            SweepVariable::P1Fraction => Some(Param::D),
            SweepVariable::R => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McCheck {
    pub realizations: u64,
    pub seed: u64,
    pub window_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    pub param: Param,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSpec {
    pub name: String,
    pub quantities: Vec<Quantity>,
    pub sweep: SweepVariable,
    pub grid: Vec<f64>,
    /// Values of the parameters not swept and not in the family.
    pub fixed: ModelParams,
    pub family: Option<Family>,
    /// Extra columns evaluated at every row.
    pub aux: Vec<Quantity>,
    pub tol: Tolerance,
    pub p12_convention: IntensityConvention,
    pub mc_check: Option<McCheck>,
}

const DEFAULT_FIXED: ModelParams = ModelParams { lambda_p: 1.0, d: 1.0, alpha: 3.0, m: 1.0 };
const PARAMS: [Param; 4] = [Param::LambdaP, Param::D, Param::Alpha, Param::M];

impl CurveSpec {
    pub fn new(quantities: Vec<Quantity>, sweep: SweepVariable, grid: Vec<f64>) -> Self {
        Self {
            name: "custom".into(),
            quantities,
            sweep,
            grid,
            fixed: DEFAULT_FIXED,
            family: None,
            aux: Vec::new(),
            tol: AnalyticsOptions::default().tol,
            p12_convention: IntensityConvention::Parent,
            mc_check: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let lin = |a: f64, b: f64, n: usize| parse_grid(&format!("lin:{a}:{b}:{n}")).expect("static grid");
        let log = |a: f64, b: f64, n: usize| parse_grid(&format!("log:{a}:{b}:{n}")).expect("static grid");
        // Lines for the hard-core network, marks for the Poisson one where shown.
        let overlay = vec![Quantity::Correlation, Quantity::PoissonCorrelation];
        let fam = |param, values: &[f64]| Some(Family { param, values: values.to_vec() });
        let mut spec = match name {
            "fig1" => {
                let mut s = CurveSpec::new(
                    vec![Quantity::Lambda2, Quantity::Rho2, Quantity::CrossDensity],
                    SweepVariable::R,
                    lin(0.0, 2.5, 51),
                );
                s.fixed = ModelParams { lambda_p: 1.0, d: 1.0, ..DEFAULT_FIXED };
                s
            }
            "fig2" => {
                let mut s = CurveSpec::new(overlay, SweepVariable::P1Fraction, lin(0.05, 1.0, 20));
                s.fixed = ModelParams { lambda_p: 1.0, alpha: 3.0, ..DEFAULT_FIXED };
                s.family = fam(Param::M, &[0.5, 1.0, f64::INFINITY]);
                s.aux = vec![Quantity::D];
                s
            }
            "fig3" => {
                let mut s = CurveSpec::new(overlay, SweepVariable::Param(Param::M), log(0.5, 100.0, 25));
                s.fixed = ModelParams { lambda_p: 1.0, alpha: 3.0, ..DEFAULT_FIXED };
                s.family = fam(Param::D, &[0.4, 0.8, 1.2]);
                s.aux = vec![Quantity::P1];
                s
            }
            "fig4" => {
                let mut s = CurveSpec::new(vec![Quantity::Correlation], SweepVariable::Param(Param::Alpha), lin(2.3, 5.0, 28));
                s.fixed = ModelParams { lambda_p: 1.0, d: 1.0, ..DEFAULT_FIXED };
                s.family = fam(Param::M, &[0.5, 1.0, 2.0, 6.0]);
                s
            }
            "fig5" => {
                let mut s = CurveSpec::new(vec![Quantity::Correlation], SweepVariable::Param(Param::D), lin(0.0, 3.0, 31));
                s.fixed = ModelParams { lambda_p: 1.0, alpha: 3.0, ..DEFAULT_FIXED };
                s.family = fam(Param::M, &[0.5, 1.0, 2.0, 6.0, f64::INFINITY]);
                s.aux = vec![Quantity::P1];
                s
            }
            "fig6" => {
                let mut s = CurveSpec::new(vec![Quantity::Correlation], SweepVariable::Param(Param::LambdaP), lin(0.1, 2.0, 20));
                s.fixed = ModelParams { d: 1.0, alpha: 3.0, ..DEFAULT_FIXED };
                s.family = fam(Param::M, &[0.5, 1.0, 2.0, 5.0]);
                s.aux = vec![Quantity::Lambda];
                s
            }
            _ => return Err(Error::InvalidParameter(format!("unknown preset `{name}` (expected fig1 to fig6)"))),
        };
        spec.name = name.to_string();
        spec.validate()?;
        Ok(spec)
    }

    pub const PRESETS: [&'static str; 6] = ["fig1", "fig2", "fig3", "fig4", "fig5", "fig6"];

    /// Build from a config file or a curve header. `preset = figN` starts
    /// from that preset; other keys override it. The swept and family
    /// parameters cannot also be given fixed values.
    pub fn from_config(kv: &KeyValues) -> Result<Self> {
        let cfg_err = |key: &str, e: Error| match e {
            Error::InvalidParameter(message) | Error::Config { message, .. } => {
                Error::Config { line: kv.line_of(key), message }
            }
            e => e,
        };
        let mut spec = match kv.get("preset") {
            Some(p) => Self::preset(p).map_err(|e| cfg_err("preset", e))?,
            None => Self::new(Vec::new(), SweepVariable::Param(Param::D), Vec::new()),
        };
        // Informational keys written into curve headers.
        kv.get("version");
        kv.get("generated_unix");
        if let Some(name) = kv.get("name") {
            spec.name = name.to_string();
        }
        if let Some(list) = kv.get_list("quantity") {
            spec.quantities =
                list.iter().map(|s| Quantity::parse(s)).collect::<Result<_>>().map_err(|e| cfg_err("quantity", e))?;
        }
        if let Some(s) = kv.get("sweep") {
            spec.sweep = SweepVariable::parse(s).map_err(|e| cfg_err("sweep", e))?;
        }
        if let Some(g) = kv.get_grid("grid")? {
            spec.grid = g;
        }
        if let Some(p) = kv.get("family") {
            let param = Param::parse(p).map_err(|e| cfg_err("family", e))?;
            let values = kv.get_grid("family.values")?.ok_or_else(|| Error::Config {
                line: kv.line_of("family"),
                message: "`family` needs `family.values`".into(),
            })?;
            spec.family = Some(Family { param, values });
        } else if kv.contains("family.values") {
            return Err(Error::Config { line: kv.line_of("family.values"), message: "`family.values` without `family`".into() });
        }
        if let Some(list) = kv.get_list("aux") {
            spec.aux = list.iter().map(|s| Quantity::parse(s)).collect::<Result<_>>().map_err(|e| cfg_err("aux", e))?;
        }
        let controlled = spec.sweep.controls();
        let family = spec.family.as_ref().map(|f| f.param);
        for p in PARAMS {
            if let Some(v) = kv.get_f64(p.name())? {
                if controlled == Some(p) || family == Some(p) {
                    return Err(Error::Config {
                        line: kv.line_of(p.name()),
                        message: format!("`{}` is swept and cannot also be fixed", p.name()),
                    });
                }
                p.set(&mut spec.fixed, v);
            }
        }
        if let Some(v) = kv.get_f64("rel_tol")? {
            spec.tol.rel = v;
        }
        if let Some(v) = kv.get_f64("abs_tol")? {
            spec.tol.abs = v;
        }
        if let Some(b) = kv.get_bool("printed_lambda")? {
            spec.p12_convention = if b { IntensityConvention::Retained } else { IntensityConvention::Parent };
        }
        let mc = [kv.get_u64("mc.realizations")?, kv.get_u64("mc.seed")?];
        let radius = kv.get_f64("mc.window_radius")?;
        if let Some(realizations) = mc[0] {
            spec.mc_check = Some(McCheck {
                realizations,
                seed: mc[1].unwrap_or(1),
                window_radius: radius.unwrap_or(crate::montecarlo::DEFAULT_WINDOW_RADIUS),
            });
        } else if mc[1].is_some() || radius.is_some() {
            return Err(Error::Config {
                line: kv.line_of("mc.seed").max(kv.line_of("mc.window_radius")),
                message: "Monte Carlo settings need `mc.realizations`".into(),
            });
        }
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.quantities.is_empty() {
            return bad("no quantity requested".into());
        }
        if self.grid.is_empty() {
            return bad("sweep grid is empty".into());
        }
        if self.grid.iter().any(|x| x.is_nan()) || self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("sweep grid must be strictly increasing".into());
        }
        if let Some(f) = &self.family {
            if f.values.is_empty() {
                return bad("family has no values".into());
            }
            if self.sweep.controls() == Some(f.param) {
                return bad(format!("`{}` cannot be both swept and a family", f.param.name()));
            }
        }
        for q in self.quantities.iter().chain(&self.aux) {
            if q.needs_r() && self.sweep != SweepVariable::R {
                return bad(format!("`{q}` depends on r and needs `sweep = r`"));
            }
        }
        if !(self.tol.rel > 0.0 && self.tol.abs > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if let Some(mc) = &self.mc_check {
            if mc.realizations < 2 {
                return bad(format!("need at least 2 realizations, got {}", mc.realizations));
            }
        }
        for fv in self.family_values() {
            for &x in &self.grid {
                self.resolve(fv, x)?;
            }
        }
        Ok(())
    }

    fn family_values(&self) -> Vec<Option<f64>> {
        match &self.family {
            Some(f) => f.values.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        }
    }

    /// Model parameters and pair distance at one grid point.
    pub fn resolve(&self, family_value: Option<f64>, x: f64) -> Result<(ModelParams, Option<f64>)> {
        let mut p = self.fixed;
        if let (Some(f), Some(v)) = (&self.family, family_value) {
            f.param.set(&mut p, v);
        }
        let mut r = None;
        match self.sweep {
            SweepVariable::Param(param) => param.set(&mut p, x),
            SweepVariable::R => {
                if !(x >= 0.0 && x.is_finite()) {
                    return Err(Error::InvalidParameter(format!("pair distance must be non-negative, got {x}")));
                }
                r = Some(x);
            }
            SweepVariable::P1Fraction => {
                p.validate()?;
                p.d = retention::hardcore_for_p1(p.lambda_p, x)?;
            }
        }
        p.validate()?;
        Ok((p, r))
    }

    fn options(&self) -> AnalyticsOptions {
        AnalyticsOptions { tol: self.tol, p12_convention: self.p12_convention, ..Default::default() }
    }

    /// Resolved settings, in header order. Parameters set by the sweep or
    /// the family are left out.
    pub fn metadata(&self) -> Vec<(String, String)> {
        let list = |qs: &[Quantity]| qs.iter().map(|q| q.name()).collect::<Vec<_>>().join(", ");
        let reals = |xs: &[f64]| xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let mut out = vec![
            ("name".to_string(), self.name.clone()),
            ("version".into(), VERSION.into()),
            ("quantity".into(), list(&self.quantities)),
            ("sweep".into(), self.sweep.name().into()),
            ("grid".into(), reals(&self.grid)),
        ];
        let family = self.family.as_ref().map(|f| f.param);
        for p in PARAMS {
            if self.sweep.controls() != Some(p) && family != Some(p) {
                out.push((p.name().into(), format!("{:?}", p.get(&self.fixed))));
            }
        }
        if let Some(f) = &self.family {
            out.push(("family".into(), f.param.name().into()));
            out.push(("family.values".into(), reals(&f.values)));
        }
        if !self.aux.is_empty() {
            out.push(("aux".into(), list(&self.aux)));
        }
        out.push(("rel_tol".into(), format!("{:?}", self.tol.rel)));
        out.push(("abs_tol".into(), format!("{:?}", self.tol.abs)));
        if self.p12_convention != IntensityConvention::Parent {
            out.push(("printed_lambda".into(), "true".into()));
        }
        if let Some(mc) = &self.mc_check {
            out.push(("mc.realizations".into(), mc.realizations.to_string()));
            out.push(("mc.seed".into(), mc.seed.to_string()));
            out.push(("mc.window_radius".into(), format!("{:?}", mc.window_radius)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub quantity: Quantity,
    pub family_value: Option<f64>,
    pub x: f64,
    pub value: Option<f64>,
    pub error: Option<f64>,
    pub mc_value: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub aux: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveData {
    pub spec: CurveSpec,
    pub generated_unix: u64,
    pub rows: Vec<CurveRow>,
    /// One message per empty cell.
    pub failures: Vec<String>,
}

type PairKey = (u64, u64, u64);

fn pair_key(p: &ModelParams) -> PairKey {
    (p.lambda_p.to_bits(), p.d.to_bits(), p.alpha.to_bits())
}

fn analytic(
    q: Quantity,
    p: &ModelParams,
    r: Option<f64>,
    terms: &HashMap<PairKey, Result<PairTerms>>,
    opts: &AnalyticsOptions,
) -> Result<(f64, f64)> {
    let prob_err = |v: f64| (v, Tolerance::PROBABILITY.rel * v.abs());
    let r = || r.ok_or_else(|| Error::InvalidParameter(format!("`{q}` needs a pair distance")));
    let (lp, d) = (p.lambda_p, p.d);
    Ok(match q {
        Quantity::P1 => (p.p1(), 0.0),
        Quantity::P12 => prob_err(retention::p12(lp, d)?),
        Quantity::P11 => (retention::p11_closed(r()?, lp, d, IntensityConvention::Parent)?, 0.0),
        Quantity::P12r => prob_err(retention::p12r_reduced(r()?, lp, d, Tolerance::PROBABILITY)?),
        Quantity::Rho2 => (retention::product_density2(r()?, lp, d)?, 0.0),
        Quantity::CrossDensity => {
            prob_err(lp * lp * retention::p12r_reduced(r()?, lp, d, Tolerance::PROBABILITY)?)
        }
        Quantity::Lambda2 => (p.lambda().powi(2), 0.0),
        Quantity::Lambda => (p.lambda(), 0.0),
        Quantity::D => (d, 0.0),
        Quantity::Mean => (mean_interference(p), 0.0),
        Quantity::PoissonCorrelation => (poisson_baseline_correlation(p.p1(), p.m)?, 0.0),
        Quantity::Variance | Quantity::Covariance | Quantity::Correlation => {
            let t = terms[&pair_key(p)].clone()?;
            let s = stats_from_terms(p, &t, opts)?;
            let e = match q {
                Quantity::Variance => s.variance,
                Quantity::Covariance => s.covariance,
                _ => s.correlation,
            };
            (e.value, e.abs_error)
        }
    })
}

/// Monte Carlo counterpart of a quantity, where one exists.
fn monte_carlo(q: Quantity, p: &ModelParams, r: Option<f64>, mc: &McCheck) -> Result<Option<(f64, f64)>> {
    let config = || -> Result<SimConfig> {
        SimConfig::new(*p, mc.realizations, mc.seed).and_then(|c| c.with_window(mc.window_radius, p.d))
    };
    let stats = |network| -> Result<_> {
        let mut c = config()?;
        c.network = network;
        estimate_stats(&c)
    };
    let lp2 = p.lambda_p * p.lambda_p;
    Ok(match q {
        Quantity::Mean => {
            let s = stats(NetworkModel::Matern)?;
            Some((s.mean + s.bias_bound, s.std_errors.mean))
        }
        Quantity::Variance => {
            let s = stats(NetworkModel::Matern)?;
            Some((s.variance, s.std_errors.variance))
        }
        Quantity::Covariance => {
            let s = stats(NetworkModel::Matern)?;
            Some((s.covariance, s.std_errors.covariance))
        }
        Quantity::Correlation => {
            let s = stats(NetworkModel::Matern)?;
            Some((s.correlation, s.std_errors.correlation))
        }
        Quantity::PoissonCorrelation => {
            let s = stats(NetworkModel::Aloha)?;
            Some((s.correlation, s.std_errors.correlation))
        }
        Quantity::P1 | Quantity::P12 => {
            let e = estimate_retention_probs(&config()?, &[])?;
            let v = if q == Quantity::P1 { e.p1 } else { e.p12 };
            Some((v.value, v.std_error))
        }
        Quantity::P11 | Quantity::P12r | Quantity::Rho2 | Quantity::CrossDensity => match r {
            Some(r) if r > 0.0 => {
                let e = estimate_retention_probs(&config()?, &[r])?;
                let pair = &e.pairs[0];
                let (v, scale) = match q {
                    Quantity::P11 => (pair.p11, 1.0),
                    Quantity::P12r => (pair.p12r, 1.0),
                    Quantity::Rho2 => (pair.p11, lp2),
                    _ => (pair.p12r, lp2),
                };
                Some((scale * v.value, scale * v.std_error))
            }
            _ => None,
        },
        Quantity::Lambda2 | Quantity::Lambda | Quantity::D => None,
    })
}

/// Evaluate every `(quantity, family value, x)` row in that order.
/// Quadrature or simulation failures leave empty cells and are listed in
/// [`CurveData::failures`].
pub fn evaluate(spec: &CurveSpec) -> Result<CurveData> {
    spec.validate()?;
    let opts = spec.options();
    let mut points = Vec::new();
    for &q in &spec.quantities {
        for fv in spec.family_values() {
            for &x in &spec.grid {
                let (p, r) = spec.resolve(fv, x)?;
                points.push((q, fv, x, p, r));
            }
        }
    }
    let mut keys: Vec<(PairKey, ModelParams)> = points
        .iter()
        .filter(|pt| pt.0.needs_pair_terms())
        .map(|pt| (pair_key(&pt.3), pt.3))
        .collect();
    keys.sort_by_key(|k| k.0);
    keys.dedup_by_key(|k| k.0);
    let terms: HashMap<PairKey, Result<PairTerms>> = keys
        .par_iter()
        .map(|(k, p)| (*k, pair_terms(p.lambda_p, p.d, p.alpha, &opts)))
        .collect();

    let describe = |q: Quantity, fv: Option<f64>, x: f64| {
        let fam = match (&spec.family, fv) {
            (Some(f), Some(v)) => format!(" {}={}", f.param.name(), v),
            _ => String::new(),
        };
        format!("{q}{fam} at {}={}", spec.sweep.name(), x)
    };
    let evaluated: Vec<(CurveRow, Vec<String>)> = points
        .par_iter()
        .map(|&(q, fv, x, p, r)| {
            let mut failures = Vec::new();
            let mut cell = |q: Quantity| match analytic(q, &p, r, &terms, &opts) {
                Ok(v) => Some(v),
                Err(e) => {
                    failures.push(format!("{}: {e}", describe(q, fv, x)));
                    None
                }
            };
            let main = cell(q);
            let aux = spec.aux.iter().map(|&a| cell(a).map(|v| v.0)).collect();
            let row = CurveRow {
                quantity: q,
                family_value: fv,
                x,
                value: main.map(|v| v.0),
                error: main.map(|v| v.1),
                mc_value: None,
                mc_stderr: None,
                aux,
            };
            (row, failures)
        })
        .collect();
    let mut rows = Vec::with_capacity(evaluated.len());
    let mut failures = Vec::new();
    for (row, f) in evaluated {
        rows.push(row);
        failures.extend(f);
    }

    if let Some(mc) = &spec.mc_check {
        for (row, &(q, fv, x, p, r)) in rows.iter_mut().zip(&points) {
            match monte_carlo(q, &p, r, mc) {
                Ok(Some((v, se))) => {
                    row.mc_value = Some(v);
                    row.mc_stderr = Some(se);
                }
                Ok(None) => {}
                Err(e) => failures.push(format!("{} (Monte Carlo): {e}", describe(q, fv, x))),
            }
        }
    }

    let generated_unix =
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
    Ok(CurveData { spec: spec.clone(), generated_unix, rows, failures })
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_g(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -5 || exp >= digits as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mantissa), sign, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, v))
    }
}

impl CurveData {
    pub fn metadata(&self) -> Vec<(String, String)> {
        let mut m = self.spec.metadata();
        m.insert(2, ("generated_unix".into(), self.generated_unix.to_string()));
        m
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["quantity".to_string()];
        if let Some(f) = &self.spec.family {
            cols.push(f.param.name().into());
        }
        cols.push(self.spec.sweep.name().into());
        cols.extend(["value", "error", "mc_value", "mc_stderr"].map(String::from));
        cols.extend(self.spec.aux.iter().map(|q| q.name().to_string()));
        cols
    }

    /// Cells as printed, with `None` for empty ones.
    fn cells(&self, row: &CurveRow) -> Vec<Option<String>> {
        let val = |v: Option<f64>| v.map(|v| format_g(v, 9));
        let err = |v: Option<f64>| v.map(|v| format_g(v, 2));
        let mut out = vec![Some(row.quantity.name().to_string())];
        if self.spec.family.is_some() {
            out.push(val(row.family_value));
        }
        out.push(val(Some(row.x)));
        out.extend([val(row.value), err(row.error), val(row.mc_value), err(row.mc_stderr)]);
        out.extend(row.aux.iter().map(|&a| val(a)));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.metadata() {
            let _ = writeln!(s, "# {k} = {v}");
        }
        s.push_str(&self.columns().join(","));
        s.push_str("\r\n");
        for row in &self.rows {
            let cells: Vec<String> = self.cells(row).into_iter().map(Option::unwrap_or_default).collect();
            s.push_str(&cells.join(","));
            s.push_str("\r\n");
        }
        s
    }

    pub fn to_json(&self) -> String {
        let metadata: Map<String, Value> = self.metadata().into_iter().map(|(k, v)| (k, Value::String(v))).collect();
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let cells = self.cells(row);
                Value::Array(
                    cells
                        .into_iter()
                        .enumerate()
                        .map(|(i, c)| match c {
                            None => Value::Null,
                            Some(c) if i == 0 => Value::String(c),
                            Some(c) => parse_real(&c)
                                .ok()
                                .and_then(serde_json::Number::from_f64)
                                .map_or(Value::String(c), Value::Number),
                        })
                        .collect(),
                )
            })
            .collect();
        let doc = json!({ "metadata": metadata, "columns": self.columns(), "rows": rows, "failures": self.failures });
        serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_format() {
        assert_eq!(format_g(0.123456789012, 9), "0.123456789");
        assert_eq!(format_g(2.5, 9), "2.5");
        assert_eq!(format_g(100.0, 9), "100");
        assert_eq!(format_g(1.0e-7, 2), "1e-07");
        assert_eq!(format_g(1.234e-7, 2), "1.2e-07");
        assert_eq!(format_g(123456789012.0, 9), "1.23456789e+11");
        assert_eq!(format_g(-0.000123, 9), "-0.000123");
        assert_eq!(format_g(f64::INFINITY, 9), "inf");
    }

    #[test]
    fn presets_fix_caption_parameters() {
        let f = |n| CurveSpec::preset(n).unwrap();
        for n in ["fig2", "fig3", "fig5"] {
            assert_eq!((f(n).fixed.lambda_p, f(n).fixed.alpha), (1.0, 3.0), "{n}");
        }
        for n in ["fig1", "fig4"] {
            assert_eq!((f(n).fixed.lambda_p, f(n).fixed.d), (1.0, 1.0), "{n}");
        }
        assert_eq!((f("fig6").fixed.d, f("fig6").fixed.alpha), (1.0, 3.0));
        assert!(CurveSpec::preset("fig7").is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = CurveSpec::new(vec![Quantity::Mean], SweepVariable::Param(Param::D), vec![0.5, 0.5]);
        assert!(s.validate().is_err());
        s.grid = vec![];
        assert!(s.validate().is_err());
        s.grid = vec![0.5, 1.0];
        assert!(s.validate().is_ok());
        s.quantities = vec![Quantity::P11];
        assert!(s.validate().is_err());
        let kv = KeyValues::parse("quantity = mean\nsweep = d\ngrid = 0.5, 1\nd = 2\n").unwrap();
        assert!(matches!(CurveSpec::from_config(&kv), Err(Error::Config { line: 4, .. })));
        let kv = KeyValues::parse("quantity = mean\nsweep = p1_fraction\ngrid = 0.5, 1\nd = 2\n").unwrap();
        assert!(CurveSpec::from_config(&kv).is_err());
        let kv = KeyValues::parse("quantity = mean\nsweep = alpha\ngrid = 1.5, 3\n").unwrap();
        assert!(CurveSpec::from_config(&kv).is_err());
        let kv = KeyValues::parse("quantity = mean\nsweep = d\ngrid = 1\nbogus = 1\n").unwrap();
        assert!(matches!(CurveSpec::from_config(&kv), Err(Error::Config { line: 4, .. })));
    }

    #[test]
    fn fig3_overlay_uses_p1() {
        let mut spec = CurveSpec::preset("fig3").unwrap();
        spec.quantities = vec![Quantity::PoissonCorrelation];
        let data = evaluate(&spec).unwrap();
        assert_eq!(data.rows.len(), 3 * spec.grid.len());
        for row in &data.rows {
            let p1 = row.aux[0].unwrap();
            let m = row.x;
            assert!((row.value.unwrap() - p1 * m / (m + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn fig1_densities() {
        let data = evaluate(&CurveSpec::preset("fig1").unwrap()).unwrap();
        assert!(data.failures.is_empty());
        let lam2 = data.rows[0].value.unwrap();
        for row in &data.rows {
            let v = row.value.unwrap();
            match row.quantity {
                Quantity::Lambda2 => assert_eq!(v, lam2),
                Quantity::Rho2 if row.x <= 1.0 => assert_eq!(v, 0.0),
                Quantity::Rho2 if row.x > 2.0 => assert!((v - lam2).abs() < 1e-12),
                Quantity::CrossDensity if row.x > 2.0 => assert!((v - lam2).abs() < 1e-9),
                _ => assert!(v >= 0.0),
            }
        }
    }

    #[test]
    fn header_round_trip() {
        let mut spec = CurveSpec::preset("fig2").unwrap();
        spec.grid = vec![0.3, 0.6, 1.0];
        spec.family.as_mut().unwrap().values = vec![1.0, f64::INFINITY];
        spec.mc_check = Some(McCheck { realizations: 10, seed: 3, window_radius: 20.0 });
        let mut data = evaluate(&CurveSpec { mc_check: None, ..spec.clone() }).unwrap();
        data.spec = spec.clone();
        let csv = data.to_csv();
        let kv = KeyValues::parse_header(&csv).unwrap();
        let back = CurveSpec::from_config(&kv).unwrap();
        assert_eq!(back, spec);

        let plain = CurveSpec::new(vec![Quantity::Mean, Quantity::P12], SweepVariable::Param(Param::LambdaP), vec![0.1, 0.7]);
        let a = evaluate(&plain).unwrap();
        let b = evaluate(&CurveSpec::from_config(&KeyValues::parse_header(&a.to_csv()).unwrap()).unwrap()).unwrap();
        assert_eq!(a.rows, b.rows);
        let strip = |s: String| s.lines().filter(|l| !l.starts_with("# generated_unix")).collect::<Vec<_>>().join("\n");
        assert_eq!(strip(a.to_csv()), strip(b.to_csv()));
    }

    #[test]
    fn json_has_same_rows() {
        let spec = CurveSpec::new(vec![Quantity::P1], SweepVariable::Param(Param::D), vec![0.0, 0.4]);
        let data = evaluate(&spec).unwrap();
        let v: Value = serde_json::from_str(&data.to_json()).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 2);
        assert_eq!(v["rows"][0][2], json!(1.0));
        assert_eq!(v["metadata"]["sweep"], json!("d"));
        assert_eq!(v["rows"][1][4], Value::Null);
    }

    #[test]
    fn monte_carlo_column() {
        let mut spec = CurveSpec::new(vec![Quantity::P1, Quantity::P11], SweepVariable::R, vec![0.0, 1.5]);
        spec.fixed.d = 0.5;
        spec.mc_check = Some(McCheck { realizations: 4000, seed: 5, window_radius: 50.0 });
        let data = evaluate(&spec).unwrap();
        assert!(data.failures.is_empty(), "{:?}", data.failures);
        for row in &data.rows {
            if row.quantity == Quantity::P11 && row.x == 0.0 {
                assert!(row.mc_value.is_none());
                continue;
            }
            let (a, m, se) = (row.value.unwrap(), row.mc_value.unwrap(), row.mc_stderr.unwrap());
            assert!((a - m).abs() < 4.0 * se + 1e-12, "{row:?}");
        }
    }
}
