//! `matern`: interference statistics of Matérn hard-core networks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use matern::analytics::{interference_stats, poisson_baseline_stats};
use matern::config::{parse_grid, KeyValues};
use matern::curve::{evaluate, format_g, McCheck, SweepVariable};
use matern::montecarlo::{estimate_stats, DEFAULT_WINDOW_RADIUS};
use matern::validation::run_validation;
use matern::{
    retention, AnalyticsOptions, CurveSpec, Error, IntensityConvention, ModelParams, NetworkModel, Quantity,
    SimConfig, ValidationConfig,
};

#[derive(Parser, Debug)]
#[command(name = "matern", version, about = "Interference statistics of Matérn type-II hard-core networks")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "MATERN_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate the analytic statistics at one parameter point.
    Eval(EvalArgs),
    /// Tabulate a parameter sweep as CSV or JSON.
    Curve(CurveArgs),
    /// Compare analytics against simulation on a parameter grid.
    Validate(ValidateArgs),
    /// Run a raw Monte Carlo estimate.
    Simulate(SimulateArgs),
    /// Retention probability table over pair distances.
    Probs(ProbsArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Intensity of the parent Poisson process.
    #[arg(long = "lambda-p", default_value_t = 1.0)]
    lambda_p: f64,
    /// Hard-core distance.
    #[arg(long, default_value_t = 1.0)]
    d: f64,
    /// Path-loss exponent, above 2.
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
    /// Nakagami parameter; `inf` disables fading.
    #[arg(long, default_value = "1", value_parser = parse_real_arg)]
    m: f64,
}

impl ModelArgs {
    fn params(&self) -> Result<ModelParams, Error> {
        ModelParams::new(self.lambda_p, self.d, self.alpha, self.m)
    }
}

#[derive(Args, Debug, Clone)]
struct TolArgs {
    #[arg(long = "rel-tol", default_value_t = 1e-6)]
    rel_tol: f64,
    #[arg(long = "abs-tol", default_value_t = 1e-12)]
    abs_tol: f64,
    /// Use `λ = λ_p·p1` inside `p12`. Wrong on purpose; for checking that
    /// validation notices.
    #[arg(long = "printed-lambda")]
    printed_lambda: bool,
}

impl TolArgs {
    fn options(&self) -> AnalyticsOptions {
        AnalyticsOptions {
            tol: matern::Tolerance::new(self.rel_tol, self.abs_tol),
            p12_convention: self.convention(),
            ..Default::default()
        }
    }

    fn convention(&self) -> IntensityConvention {
        if self.printed_lambda {
            IntensityConvention::Retained
        } else {
            IntensityConvention::Parent
        }
    }
}

#[derive(Args, Debug, Clone)]
struct OutArgs {
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit a JSON document.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    tol: TolArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Everything below; the default when nothing is selected.
    #[arg(long)]
    all: bool,
    #[arg(long)]
    mean: bool,
    #[arg(long)]
    variance: bool,
    #[arg(long)]
    covariance: bool,
    #[arg(long)]
    correlation: bool,
    /// Retention probabilities `p1`, `p12` and the sender intensity.
    #[arg(long)]
    probs: bool,
    /// The Poisson network of equal intensity.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args, Debug)]
struct CurveArgs {
    /// Bundled sweep, `fig1` to `fig6`.
    #[arg(long, group = "source")]
    preset: Option<String>,
    /// Sweep described in a key-value file.
    #[arg(long, group = "source")]
    config: Option<PathBuf>,
    /// Re-run the sweep recorded in the header of a curve file.
    #[arg(long, group = "source")]
    from: Option<PathBuf>,
    /// Add a Monte Carlo column with this many realizations per point.
    #[arg(long)]
    realizations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "window-radius")]
    window_radius: Option<f64>,
    #[arg(long = "rel-tol")]
    rel_tol: Option<f64>,
    #[arg(long = "abs-tol")]
    abs_tol: Option<f64>,
    #[arg(long = "printed-lambda")]
    printed_lambda: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Key-value file overriding the default grid.
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<u64>,
    #[arg(long = "window-radius")]
    window_radius: Option<f64>,
    #[arg(long = "rel-tol")]
    rel_tol: Option<f64>,
    #[arg(long = "abs-tol")]
    abs_tol: Option<f64>,
    #[arg(long = "printed-lambda")]
    printed_lambda: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 10_000)]
    realizations: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long = "window-radius", default_value_t = DEFAULT_WINDOW_RADIUS)]
    window_radius: f64,
    /// Simulate the Poisson network of equal intensity instead.
    #[arg(long)]
    aloha: bool,
    /// Realizations between progress lines on stderr; 0 is quiet.
    #[arg(long, default_value_t = 0)]
    progress: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ProbsArgs {
    #[arg(long = "lambda-p", default_value_t = 1.0)]
    lambda_p: f64,
    #[arg(long, default_value_t = 1.0)]
    d: f64,
    /// Pair distances: a list or `lin:a:b:n` / `log:a:b:n`.
    #[arg(long, default_value = "lin:0:2.5:26")]
    r: String,
    /// Add Monte Carlo estimates with this many realizations.
    #[arg(long)]
    realizations: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

fn parse_real_arg(s: &str) -> Result<f64, String> {
    matern::config::parse_real(s)
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Quadrature { .. } => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

type CmdResult = Result<u8, Failure>;

fn emit(out: &OutArgs, text: &str) -> Result<(), Failure> {
    match &out.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn eval(args: &EvalArgs) -> CmdResult {
    let p = args.model.params()?;
    let opts = args.tol.options();
    let none = !(args.mean || args.variance || args.covariance || args.correlation || args.probs || args.baseline);
    let all = args.all || none;
    let mut rows: Vec<(&str, f64, Option<f64>)> = Vec::new();
    if all || args.probs {
        let r = p.retention()?;
        rows.push(("p1", r.p1, None));
        rows.push(("p12", r.p12, None));
        rows.push(("lambda", r.lambda, None));
    }
    if all || args.mean || args.variance || args.covariance || args.correlation {
        let s = interference_stats(&p, &opts)?;
        for (name, on, e) in [
            ("mean", args.mean, s.mean),
            ("variance", args.variance, s.variance),
            ("covariance", args.covariance, s.covariance),
            ("correlation", args.correlation, s.correlation),
        ] {
            if all || on {
                rows.push((name, e.value, Some(e.abs_error)));
            }
        }
    }
    if all || args.baseline {
        let b = poisson_baseline_stats(&p)?;
        rows.push(("poisson_variance", b.variance.value, None));
        rows.push(("poisson_covariance", b.covariance.value, None));
        rows.push(("poisson_correlation", b.correlation.value, None));
    }
    let text = if args.out.json {
        let mut quantities = serde_json::Map::new();
        for (name, v, e) in &rows {
            quantities.insert(name.to_string(), json!({ "value": v, "error": e.unwrap_or(0.0) }));
        }
        let doc = json!({ "params": p, "rel_tol": opts.tol.rel, "abs_tol": opts.tol.abs, "quantities": quantities });
        serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
    } else {
        let mut s = format!(
            "lambda_p = {}, d = {}, alpha = {}, m = {}\n",
            format_g(p.lambda_p, 9),
            format_g(p.d, 9),
            format_g(p.alpha, 9),
            format_g(p.m, 9)
        );
        for (name, v, e) in &rows {
            let _ = match e {
                Some(e) => writeln!(s, "{name:<20} {:>16} +- {}", format_g(*v, 9), format_g(*e, 2)),
                None => writeln!(s, "{name:<20} {:>16}", format_g(*v, 9)),
            };
        }
        s
    };
    emit(&args.out, &text)?;
    Ok(0)
}

fn curve(args: &CurveArgs) -> CmdResult {
    let mut spec = if let Some(name) = &args.preset {
        CurveSpec::preset(name)?
    } else if let Some(path) = &args.config {
        CurveSpec::from_config(&KeyValues::parse(&read(path)?)?)?
    } else if let Some(path) = &args.from {
        CurveSpec::from_config(&KeyValues::parse_header(&read(path)?)?)?
    } else {
        return Err(Failure::usage("one of --preset, --config or --from is required"));
    };
    if let Some(v) = args.rel_tol {
        spec.tol.rel = v;
    }
    if let Some(v) = args.abs_tol {
        spec.tol.abs = v;
    }
    if args.printed_lambda {
        spec.p12_convention = IntensityConvention::Retained;
    }
    if let Some(n) = args.realizations {
        let base = spec.mc_check.unwrap_or(McCheck { realizations: n, seed: 1, window_radius: DEFAULT_WINDOW_RADIUS });
        spec.mc_check = Some(McCheck { realizations: n, ..base });
    }
    if let Some(mc) = spec.mc_check.as_mut() {
        mc.seed = args.seed.unwrap_or(mc.seed);
        mc.window_radius = args.window_radius.unwrap_or(mc.window_radius);
    } else if args.seed.is_some() || args.window_radius.is_some() {
        return Err(Failure::usage("--seed and --window-radius need --realizations"));
    }
    let data = evaluate(&spec)?;
    for f in &data.failures {
        eprintln!("warning: {f}");
    }
    emit(&args.out, &if args.out.json { data.to_json() } else { data.to_csv() })?;
    Ok(0)
}

fn validate(args: &ValidateArgs) -> CmdResult {
    let mut config = match &args.config {
        Some(path) => ValidationConfig::from_config(&KeyValues::parse(&read(path)?)?)?,
        None => ValidationConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.realizations {
        config.realizations = v;
    }
    if let Some(v) = args.window_radius {
        config.window_radius = v;
    }
    if let Some(v) = args.rel_tol {
        config.tol.rel = v;
    }
    if let Some(v) = args.abs_tol {
        config.tol.abs = v;
    }
    if args.printed_lambda {
        config.p12_convention = IntensityConvention::Retained;
    }
    let report = run_validation(&config)?;
    emit(&args.out, &if args.out.json { report.to_json() } else { report.render() })?;
    Ok(if report.passed() { 0 } else { 3 })
}

fn simulate(args: &SimulateArgs) -> CmdResult {
    let p = args.model.params()?;
    let mut config = SimConfig::new(p, args.realizations, args.seed)?.with_window(args.window_radius, p.d)?;
    config.batch = args.progress;
    if args.aloha {
        config.network = NetworkModel::Aloha;
    }
    let e = estimate_stats(&config)?;
    let text = if args.out.json {
        let doc = json!({ "params": p, "seed": args.seed, "window_radius": args.window_radius, "estimate": e });
        serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
    } else {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "lambda_p = {}, d = {}, alpha = {}, m = {}, realizations = {}, seed = {}, window radius = {}",
            format_g(p.lambda_p, 9),
            format_g(p.d, 9),
            format_g(p.alpha, 9),
            format_g(p.m, 9),
            e.realizations,
            args.seed,
            format_g(args.window_radius, 9)
        );
        let se = &e.std_errors;
        let h = &e.retention;
        for (name, v, err) in [
            ("mean", e.mean, se.mean),
            ("mean_corrected", e.mean + e.bias_bound, se.mean),
            ("variance", e.variance, se.variance),
            ("covariance", e.covariance, se.covariance),
            ("correlation", e.correlation, se.correlation),
            ("p1", h.p1.value, h.p1.std_error),
            ("p12", h.p12.value, h.p12.std_error),
        ] {
            let _ = writeln!(s, "{name:<16} {:>16} +- {}", format_g(v, 9), format_g(err, 2));
        }
        let _ = writeln!(s, "{:<16} {:>16}", "bias_bound", format_g(e.bias_bound, 9));
        s
    };
    emit(&args.out, &text)?;
    Ok(0)
}

fn probs(args: &ProbsArgs) -> CmdResult {
    let grid = parse_grid(&args.r).map_err(|m| Failure::usage(format!("--r: {m}")))?;
    retention::p1(args.lambda_p, args.d)?;
    let mut spec = CurveSpec::new(vec![Quantity::P11, Quantity::P12r], SweepVariable::R, grid);
    spec.name = "probs".into();
    spec.fixed.lambda_p = args.lambda_p;
    spec.fixed.d = args.d;
    spec.aux = vec![Quantity::P1, Quantity::P12];
    spec.mc_check = args.realizations.map(|n| McCheck { realizations: n, seed: args.seed, window_radius: DEFAULT_WINDOW_RADIUS });
    let data = evaluate(&spec)?;
    for f in &data.failures {
        eprintln!("warning: {f}");
    }
    emit(&args.out, &if args.out.json { data.to_json() } else { data.to_csv() })?;
    Ok(0)
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Eval(a) => eval(a),
        Command::Curve(a) => curve(a),
        Command::Validate(a) => validate(a),
        Command::Simulate(a) => simulate(a),
        Command::Probs(a) => probs(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
