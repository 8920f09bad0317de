//! Monte Carlo estimation of the interference statistics and of the
//! retention probabilities.
//!
//! Realization `i` draws from a ChaCha8 stream selected by `(seed, i)`, and
//! realizations are grouped into a fixed number of contiguous batches whose
//! accumulators are merged in batch order. Results are therefore identical
//! for any thread count. Standard errors come from the spread of the batch
//! estimates.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{mean_interference, ModelParams};
use crate::channel::{path_gain_sq, Fading};
use crate::error::{Error, Result};
use crate::pointprocess::{poisson_count, uniform_in_disc, unit_pair, RowCounts, NeighborGrid, Point, Window};

pub const DEFAULT_WINDOW_RADIUS: f64 = 50.0;
/// Default cap on `bias_bound / E[I]`.
pub const DEFAULT_BIAS_BUDGET: f64 = 0.05;
/// Number of batches behind the batch-means standard errors.
pub const BATCHES: u64 = 100;
/// Most slots a single run can simulate.
pub const MAX_SLOTS: usize = 8;

/// Which sender process is simulated over the parent PPP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkModel {
    /// Matérn type-II thinning with hard-core distance `d`.
    #[default]
    Matern,
    /// Independent per-slot thinning with probability `p1`, giving the same
    /// sender intensity.
    Aloha,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub params: ModelParams,
    /// Interference is summed over the observation disc; the guard ring only
    /// supplies killers. The receiver sits at the window centre.
    pub window: Window,
    pub realizations: u64,
    pub seed: u64,
    /// Realizations per progress line on stderr; 0 is quiet.
    pub batch: u64,
    pub network: NetworkModel,
    /// Largest accepted `bias_bound / E[I]`.
    pub bias_budget: f64,
}

impl SimConfig {
    /// Default window of radius 50 with guard `d`.
    pub fn new(params: ModelParams, realizations: u64, seed: u64) -> Result<Self> {
        let window = Window::new(DEFAULT_WINDOW_RADIUS, params.d)?;
        let cfg = Self {
            params,
            window,
            realizations,
            seed,
            batch: 0,
            network: NetworkModel::Matern,
            bias_budget: DEFAULT_BIAS_BUDGET,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_window(mut self, radius: f64, guard: f64) -> Result<Self> {
        self.window = Window::new(radius, guard)?;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.realizations < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 realizations, got {}",
                self.realizations
            )));
        }
        if self.window.guard < self.params.d {
            return Err(Error::InvalidParameter(format!(
                "guard width {} is below the hard-core distance {}",
                self.window.guard, self.params.d
            )));
        }
        let rel = self.bias_bound() / mean_interference(&self.params);
        if !(rel <= self.bias_budget) {
            return Err(Error::InvalidParameter(format!(
                "window radius {} leaves a truncation bias of {:.3e} of the mean, budget {:.3e}",
                self.window.radius, rel, self.bias_budget
            )));
        }
        Ok(())
    }

    /// Mean interference from senders beyond the observation radius.
    pub fn bias_bound(&self) -> f64 {
        truncation_bias(&self.params, self.window.radius)
    }
}

/// `λ·2π·R^{2−α}/(α−2)`: the part of `E[I]` contributed by senders farther
/// than `radius`. Exact for the stationary sender process, not just a bound.
pub fn truncation_bias(params: &ModelParams, radius: f64) -> f64 {
    let a = params.alpha;
    params.lambda() * 2.0 * PI * radius.powf(2.0 - a) / (a - 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StdErrors {
    pub mean: f64,
    pub variance: f64,
    pub covariance: f64,
    pub correlation: f64,
}

/// Fraction of parent points in the observation disc that were retained,
/// harvested while simulating interference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HarvestedRetention {
    pub p1: ProbEstimate,
    pub p12: ProbEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    /// Mean over both slots, without the truncation correction.
    pub mean: f64,
    /// Average of the two slot variances.
    pub variance: f64,
    pub covariance: f64,
    /// `covariance / variance`.
    pub correlation: f64,
    pub std_errors: StdErrors,
    pub bias_bound: f64,
    pub realizations: u64,
    pub retention: HarvestedRetention,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProbEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl ProbEstimate {
    fn binomial(hits: u64, trials: u64) -> Self {
        let p = hits as f64 / trials as f64;
        Self { value: p, std_error: (p * (1.0 - p) / trials as f64).sqrt() }
    }
}

/// Streaming first and second moments of a `k`-vector (Welford, merged with
/// Chan's formula).
#[derive(Debug, Clone, PartialEq)]
struct Moments {
    n: u64,
    mean: Vec<f64>,
    comoment: Vec<f64>,
}

impl Moments {
    fn new(k: usize) -> Self {
        Self { n: 0, mean: vec![0.0; k], comoment: vec![0.0; k * k] }
    }

    fn k(&self) -> usize {
        self.mean.len()
    }

    fn push(&mut self, x: &[f64]) {
        let k = self.k();
        self.n += 1;
        let n = self.n as f64;
        let mut delta = [0.0; MAX_SLOTS];
        let delta = &mut delta[..k];
        for i in 0..k {
            delta[i] = x[i] - self.mean[i];
            self.mean[i] += delta[i] / n;
        }
        for i in 0..k {
            let after = x[i] - self.mean[i];
            for j in 0..k {
                self.comoment[i * k + j] += delta[j] * after;
            }
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let k = self.k();
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta: Vec<f64> = (0..k).map(|i| other.mean[i] - self.mean[i]).collect();
        for i in 0..k {
            for j in 0..k {
                self.comoment[i * k + j] += other.comoment[i * k + j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for i in 0..k {
            self.mean[i] += delta[i] * nb / n;
        }
        self.n += other.n;
    }

    fn cov(&self, i: usize, j: usize) -> f64 {
        self.comoment[i * self.k() + j] / (self.n as f64 - 1.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Harvest {
    parents: u64,
    first: u64,
    both: u64,
}

impl Harvest {
    fn merge(&mut self, o: &Harvest) {
        self.parents += o.parents;
        self.first += o.first;
        self.both += o.both;
    }
}

#[derive(Debug, Clone)]
struct BatchResult {
    moments: Moments,
    harvest: Harvest,
}

/// Parameters of one realization, resolved once per run.
struct Kernel {
    counts: RowCounts,
    d: f64,
    alpha: f64,
    p_send: f64,
    fading: Fading,
    window: Window,
    network: NetworkModel,
    slots: usize,
}

#[derive(Default)]
struct Scratch {
    marks: Vec<f64>,
    flags: Vec<bool>,
    grid: NeighborGrid,
}

impl Kernel {
    fn new(params: &ModelParams, window: Window, network: NetworkModel, slots: usize) -> Result<Self> {
        params.validate()?;
        if !(1..=MAX_SLOTS).contains(&slots) {
            return Err(Error::InvalidParameter(format!("slot count must be in 1..={MAX_SLOTS}, got {slots}")));
        }
        // Cells must be at least d wide for the neighbour sweep; about one
        // point per cell otherwise.
        let cell = params.d.max(params.lambda_p.sqrt().recip());
        Ok(Self {
            counts: RowCounts::new(params.lambda_p, cell)?,
            d: params.d,
            alpha: params.alpha,
            p_send: params.p1(),
            fading: Fading::new(params.m)?,
            window,
            network,
            slots,
        })
    }

    /// One parent realization with `slots` independent thinnings; writes the
    /// interference of each slot into `out`.
    fn realize<R: Rng + ?Sized>(&self, rng: &mut R, s: &mut Scratch, out: &mut [f64], harvest: &mut Harvest) -> Result<()> {
        let k = self.slots;
        s.grid.sample_ppp(&self.counts, self.window.sampling_radius(), rng)?;
        let points = s.grid.sorted_points();
        let n = points.len();
        s.marks.clear();
        s.marks.extend((0..n * k).step_by(2).flat_map(|_| unit_pair(rng)));
        s.marks.truncate(n * k);
        match self.network {
            NetworkModel::Matern => s.grid.retention_flags_sorted(&s.marks, k, self.d, &mut s.flags),
            NetworkModel::Aloha => {
                s.flags.clear();
                s.flags.extend(s.marks.iter().map(|&u| u < self.p_send));
            }
        }
        out.iter_mut().for_each(|x| *x = 0.0);
        let r2 = self.window.radius * self.window.radius;
        for (i, p) in points.iter().enumerate() {
            let dist2 = p[0] * p[0] + p[1] * p[1];
            if dist2 > r2 {
                continue;
            }
            let flags = &s.flags[i * k..(i + 1) * k];
            harvest.parents += 1;
            if flags[0] {
                harvest.first += 1;
                if k > 1 && flags[1] {
                    harvest.both += 1;
                }
            }
            let gain = path_gain_sq(dist2, self.alpha);
            for (t, &alive) in flags.iter().enumerate() {
                if alive {
                    out[t] += self.fading.sample(rng) * gain;
                }
            }
        }
        Ok(())
    }
}

/// The random stream of realization `index` for a run tagged `tag`.
fn realization_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

const TAG_INTERFERENCE: u64 = 0;
const TAG_SINGLE: u64 = 1;
const TAG_PAIR: u64 = 2;

fn batch_ranges(total: u64) -> Vec<(u64, u64)> {
    let batches = BATCHES.min(total / 2).max(1);
    (0..batches).map(|b| (b * total / batches, (b + 1) * total / batches)).collect()
}

struct Progress<'a> {
    label: &'a str,
    every: u64,
    total: u64,
    done: AtomicU64,
}

impl<'a> Progress<'a> {
    fn new(label: &'a str, every: u64, total: u64) -> Self {
        Self { label, every, total, done: AtomicU64::new(0) }
    }

    fn tick(&self) {
        if self.every == 0 {
            return;
        }
        let done = self.done.fetch_add(1, Ordering::Relaxed) + 1;
        if done % self.every == 0 || done == self.total {
            eprintln!("{}: {done}/{} realizations", self.label, self.total);
        }
    }
}

fn run_slots(config: &SimConfig, slots: usize) -> Result<Vec<BatchResult>> {
    config.validate()?;
    let kernel = Kernel::new(&config.params, config.window, config.network, slots)?;
    let progress = Progress::new("simulate", config.batch, config.realizations);
    batch_ranges(config.realizations)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut scratch = Scratch::default();
            let mut moments = Moments::new(slots);
            let mut harvest = Harvest::default();
            let mut out = vec![0.0; slots];
            for i in lo..hi {
                let mut rng = realization_rng(config.seed, TAG_INTERFERENCE, i);
                kernel.realize(&mut rng, &mut scratch, &mut out, &mut harvest)?;
                moments.push(&out);
                progress.tick();
            }
            Ok(BatchResult { moments, harvest })
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct PairStats {
    mean: f64,
    variance: f64,
    covariance: f64,
    correlation: f64,
}

fn pair_stats(m: &Moments) -> PairStats {
    let variance = 0.5 * (m.cov(0, 0) + m.cov(1, 1));
    let covariance = m.cov(0, 1);
    PairStats {
        mean: 0.5 * (m.mean[0] + m.mean[1]),
        variance,
        covariance,
        correlation: if variance > 0.0 { covariance / variance } else { 0.0 },
    }
}

/// Standard error of the mean of `values`, read as independent batch
/// estimates. Infinite with fewer than two batches.
fn batch_std_error(values: impl ExactSizeIterator<Item = f64> + Clone) -> f64 {
    let b = values.len() as f64;
    if b < 2.0 {
        return f64::INFINITY;
    }
    let mean = values.clone().sum::<f64>() / b;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1.0);
    (var / b).sqrt()
}

/// Interference in two slots from one PPP realization, two independent
/// thinnings and independent fading per point and slot.
pub fn simulate_interference_pair<R: Rng + ?Sized>(params: &ModelParams, window: Window, rng: &mut R) -> Result<(f64, f64)> {
    let kernel = Kernel::new(params, window, NetworkModel::Matern, 2)?;
    let mut out = [0.0; 2];
    kernel.realize(rng, &mut Scratch::default(), &mut out, &mut Harvest::default())?;
    Ok((out[0], out[1]))
}

/// Interference in `k` slots from one realization.
pub fn simulate_interference_slots<R: Rng + ?Sized>(
    params: &ModelParams,
    window: Window,
    network: NetworkModel,
    k: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let kernel = Kernel::new(params, window, network, k)?;
    let mut out = vec![0.0; k];
    kernel.realize(rng, &mut Scratch::default(), &mut out, &mut Harvest::default())?;
    Ok(out)
}

/// Sample mean, variance, covariance and correlation of the two-slot
/// interference.
pub fn estimate_stats(config: &SimConfig) -> Result<SimEstimate> {
    let batches = run_slots(config, 2)?;
    let mut total = Moments::new(2);
    let mut harvest = Harvest::default();
    for b in &batches {
        total.merge(&b.moments);
        harvest.merge(&b.harvest);
    }
    let all = pair_stats(&total);
    let per: Vec<PairStats> = batches.iter().map(|b| pair_stats(&b.moments)).collect();
    let se = |f: fn(&PairStats) -> f64| batch_std_error(per.iter().map(f));
    let p_batches = |f: fn(&Harvest) -> u64| {
        batch_std_error(batches.iter().map(move |b| f(&b.harvest) as f64 / b.harvest.parents.max(1) as f64))
    };
    let frac = |x: u64| x as f64 / harvest.parents.max(1) as f64;
    Ok(SimEstimate {
        mean: all.mean,
        variance: all.variance,
        covariance: all.covariance,
        correlation: all.correlation,
        std_errors: StdErrors {
            mean: se(|s| s.mean),
            variance: se(|s| s.variance),
            covariance: se(|s| s.covariance),
            correlation: se(|s| s.correlation),
        },
        bias_bound: config.bias_bound(),
        realizations: config.realizations,
        retention: HarvestedRetention {
            p1: ProbEstimate { value: frac(harvest.first), std_error: p_batches(|h| h.first) },
            p12: ProbEstimate { value: frac(harvest.both), std_error: p_batches(|h| h.both) },
        },
    })
}

/// Sample covariance matrix of the interference in `k` slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotCovariances {
    pub slots: usize,
    pub means: Vec<f64>,
    /// Row-major `k × k`.
    pub covariance: Vec<f64>,
    /// Batch-means standard errors of `covariance`.
    pub std_errors: Vec<f64>,
    /// Covariance matrix of every batch.
    pub batches: Vec<Vec<f64>>,
}

impl SlotCovariances {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.slots + j]
    }

    pub fn off_diagonal_pairs(&self) -> Vec<(usize, usize)> {
        let k = self.slots;
        (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect()
    }

    /// Average of the off-diagonal covariances.
    pub fn pooled_cross_covariance(&self) -> f64 {
        let pairs = self.off_diagonal_pairs();
        pairs.iter().map(|&(i, j)| self.get(i, j)).sum::<f64>() / pairs.len() as f64
    }

    /// For each off-diagonal pair, its deviation from the pooled cross
    /// covariance in units of the batch-means standard error of that
    /// difference.
    pub fn lag_deviations(&self) -> Vec<((usize, usize), f64)> {
        let k = self.slots;
        let pairs = self.off_diagonal_pairs();
        let pooled = |c: &[f64]| pairs.iter().map(|&(i, j)| c[i * k + j]).sum::<f64>() / pairs.len() as f64;
        let all = pooled(&self.covariance);
        pairs
            .iter()
            .map(|&(i, j)| {
                let diffs = self.batches.iter().map(|c| c[i * k + j] - pooled(c));
                let se = batch_std_error(diffs.collect::<Vec<_>>().into_iter());
                ((i, j), (self.get(i, j) - all) / se)
            })
            .collect()
    }
}

pub fn estimate_slot_covariances(config: &SimConfig, k: usize) -> Result<SlotCovariances> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 slots, got {k}")));
    }
    let batches = run_slots(config, k)?;
    let mut total = Moments::new(k);
    for b in &batches {
        total.merge(&b.moments);
    }
    let matrix = |m: &Moments| (0..k * k).map(|ij| m.cov(ij / k, ij % k)).collect::<Vec<f64>>();
    let per: Vec<Vec<f64>> = batches.iter().map(|b| matrix(&b.moments)).collect();
    let std_errors = (0..k * k).map(|ij| batch_std_error(per.iter().map(|c| c[ij]))).collect();
    Ok(SlotCovariances {
        slots: k,
        means: total.mean.clone(),
        covariance: matrix(&total),
        std_errors,
        batches: per,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairProbEstimate {
    pub r: f64,
    pub p11: ProbEstimate,
    pub p12r: ProbEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionEstimates {
    pub p1: ProbEstimate,
    pub p12: ProbEstimate,
    pub pairs: Vec<PairProbEstimate>,
    pub realizations: u64,
}

/// Does the planted point `x` with mark `mx` survive against the parent
/// points `pts` with marks `marks`?
#[inline]
fn survives(x: Point, mx: f64, pts: &[Point], marks: &[f64], d2: f64) -> bool {
    pts.iter()
        .zip(marks)
        .all(|(p, &m)| m >= mx || (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2) > d2)
}

/// Hit counts over a range of realizations of a planting experiment.
fn planting_counts<F>(seed: u64, tag: u64, total: u64, experiment: F) -> Result<[u64; 2]>
where
    F: Fn(&mut ChaCha8Rng) -> Result<[bool; 2]> + Sync,
{
    let counts: Result<Vec<[u64; 2]>> = batch_ranges(total)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut c = [0u64; 2];
            for i in lo..hi {
                let mut rng = realization_rng(seed, tag, i);
                let hit = experiment(&mut rng)?;
                c[0] += hit[0] as u64;
                c[1] += hit[1] as u64;
            }
            Ok(c)
        })
        .collect();
    Ok(counts?.iter().fold([0, 0], |a, c| [a[0] + c[0], a[1] + c[1]]))
}

/// Empirical retention probabilities. `p1` and `p12` plant one point at the
/// origin; each `r` plants two points at distance `r` into a PPP of
/// intensity `λ_p` covering every possible killer. `p11` uses one
/// thinning, `p12r` the first point in one thinning and the second point
/// in an independent one.
pub fn estimate_retention_probs(config: &SimConfig, r_grid: &[f64]) -> Result<RetentionEstimates> {
    config.validate()?;
    if let Some(r) = r_grid.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidParameter(format!("pair distances must be positive, got {r}")));
    }
    let (lp, d, n) = (config.params.lambda_p, config.params.d, config.realizations);
    let d2 = d * d;
    let sample = |rng: &mut ChaCha8Rng, radius: f64, pts: &mut Vec<Point>, marks: &mut Vec<f64>| -> Result<()> {
        let count = poisson_count(rng, lp * PI * radius * radius)?;
        uniform_in_disc(rng, radius, count, pts);
        marks.clear();
        marks.extend((0..2 * count).map(|_| rng.random::<f64>()));
        Ok(())
    };
    let single = planting_counts(config.seed, TAG_SINGLE, n, |rng| {
        let (mut pts, mut marks) = (Vec::new(), Vec::new());
        sample(rng, d, &mut pts, &mut marks)?;
        let (own1, own2): (f64, f64) = (rng.random(), rng.random());
        let (m1, m2) = marks.split_at(pts.len());
        let first = survives([0.0, 0.0], own1, &pts, m1, d2);
        Ok([first, first && survives([0.0, 0.0], own2, &pts, m2, d2)])
    })?;
    let mut pairs = Vec::with_capacity(r_grid.len());
    for (idx, &r) in r_grid.iter().enumerate() {
        let x = [-0.5 * r, 0.0];
        let y = [0.5 * r, 0.0];
        let xy_close = r <= d;
        let tag = TAG_PAIR + idx as u64;
        let counts = planting_counts(config.seed, tag, n, |rng| {
            let (mut pts, mut marks) = (Vec::new(), Vec::new());
            sample(rng, 0.5 * r + d, &mut pts, &mut marks)?;
            let (m1, m2) = marks.split_at(pts.len());
            let [x1, y1, x2, y2]: [f64; 4] = [rng.random(), rng.random(), rng.random(), rng.random()];
            // Thinning 1: both planted points.
            let x_kept1 = survives(x, x1, &pts, m1, d2) && !(xy_close && y1 < x1);
            let y_kept1 = survives(y, y1, &pts, m1, d2) && !(xy_close && x1 < y1);
            // Thinning 2: y against x's second mark.
            let y_kept2 = survives(y, y2, &pts, m2, d2) && !(xy_close && x2 < y2);
            Ok([x_kept1 && y_kept1, x_kept1 && y_kept2])
        })?;
        pairs.push(PairProbEstimate {
            r,
            p11: ProbEstimate::binomial(counts[0], n),
            p12r: ProbEstimate::binomial(counts[1], n),
        });
    }
    Ok(RetentionEstimates {
        p1: ProbEstimate::binomial(single[0], n),
        p12: ProbEstimate::binomial(single[1], n),
        pairs,
        realizations: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{gain_integral, interference_stats, AnalyticsOptions};
    use crate::pointprocess::{paired_thinnings, sample_ppp};
    use crate::retention;

    fn params(lp: f64, d: f64, alpha: f64, m: f64) -> ModelParams {
        ModelParams::new(lp, d, alpha, m).unwrap()
    }

    #[test]
    fn config_validation() {
        let p = params(1.0, 1.0, 3.0, 1.0);
        assert!(SimConfig::new(p, 1, 0).is_err());
        assert!(SimConfig::new(p, 2, 0).is_ok());
        let c = SimConfig::new(p, 10, 0).unwrap();
        assert!(c.with_window(50.0, 0.5).is_err());
        // R = 5 leaves 13% of the mean outside the window.
        assert!(c.with_window(5.0, 1.0).is_err());
        let lambda = p.lambda();
        assert!((c.bias_bound() - lambda * 2.0 * PI / 50.0).abs() < 1e-15);
    }

    #[test]
    fn truncation_bias_is_missing_mean() {
        // ∫_{|x|>R} ℓ = 2π R^{2−α}/(α−2), so the window keeps the rest.
        let p = params(1.0, 0.5, 4.0, 1.0);
        let inside = mean_interference(&p) - truncation_bias(&p, 10.0);
        let lambda = p.lambda();
        let want = lambda * (gain_integral(4.0) - 2.0 * PI / (2.0 * 100.0));
        assert!((inside - want).abs() < 1e-12);
    }

    #[test]
    fn pair_examples() {
        let mut rng = realization_rng(1, 0, 0);
        let p = params(1e-9, 0.0, 3.0, f64::INFINITY);
        let w = Window::new(5.0, 0.0).unwrap();
        // Practically no points.
        assert_eq!(simulate_interference_pair(&p, w, &mut rng).unwrap(), (0.0, 0.0));
        // d = 0 and no fading: both slots see the same senders.
        let p = params(1.0, 0.0, 3.0, f64::INFINITY);
        let (a, b) = simulate_interference_pair(&p, w, &mut rng).unwrap();
        assert!(a > 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn kernel_matches_explicit_thinning() {
        // Recompute one realization's interference from the point-pattern
        // API with unit fading.
        let p = params(1.0, 1.0, 3.0, f64::INFINITY);
        let w = Window::new(6.0, 1.0).unwrap();
        for seed in 0..5 {
            let mut rng = realization_rng(seed, 0, 0);
            let kernel = Kernel::new(&p, w, NetworkModel::Matern, 2).unwrap();
            let mut s = Scratch::default();
            let mut out = [0.0; 2];
            kernel.realize(&mut rng, &mut s, &mut out, &mut Harvest::default()).unwrap();
            // Brute-force thinning of the same positions and marks.
            let pts = s.grid.sorted_points();
            for t in 0..2 {
                let want: f64 = (0..pts.len())
                    .filter(|&i| {
                        (0..pts.len()).all(|j| {
                            let close = (pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]) <= 1.0;
                            i == j || !close || s.marks[j * 2 + t] >= s.marks[i * 2 + t]
                        })
                    })
                    .filter(|&i| w.in_observation(pts[i]))
                    .map(|i| crate::channel::path_gain(pts[i][0].hypot(pts[i][1]), 3.0))
                    .sum();
                assert!((out[t] - want).abs() < 1e-12 * want.max(1.0));
            }
        }
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let mut rng = realization_rng(3, 0, 0);
        let xs: Vec<[f64; 3]> = (0..500).map(|_| [rng.random(), rng.random::<f64>().powi(2), rng.random()]).collect();
        let mut one = Moments::new(3);
        xs.iter().for_each(|x| one.push(x));
        let mut parts = Moments::new(3);
        for chunk in xs.chunks(77) {
            let mut m = Moments::new(3);
            chunk.iter().for_each(|x| m.push(x));
            parts.merge(&m);
        }
        for ij in 0..9 {
            assert!((one.comoment[ij] - parts.comoment[ij]).abs() < 1e-10);
        }
        let naive_cov01 = {
            let m0 = xs.iter().map(|x| x[0]).sum::<f64>() / 500.0;
            let m1 = xs.iter().map(|x| x[1]).sum::<f64>() / 500.0;
            xs.iter().map(|x| (x[0] - m0) * (x[1] - m1)).sum::<f64>() / 499.0
        };
        assert!((one.cov(0, 1) - naive_cov01).abs() < 1e-12);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let p = params(1.0, 1.0, 3.0, 1.0);
        let cfg = SimConfig::new(p, 400, 9).unwrap().with_window(20.0, 1.0).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| estimate_stats(&cfg).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
        let c = estimate_stats(&SimConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn poisson_correlation_half() {
        let p = params(1.0, 1e-3, 3.0, 1.0);
        let cfg = SimConfig::new(p, 20_000, 5).unwrap().with_window(20.0, 1e-3).unwrap();
        let e = estimate_stats(&cfg).unwrap();
        assert!((e.correlation - 0.5).abs() < 3.0 * e.std_errors.correlation, "{e:?}");
    }

    #[test]
    fn mean_and_retention_match_analytics() {
        let p = params(1.0, 1.0, 3.0, 2.0);
        let cfg = SimConfig::new(p, 20_000, 17).unwrap().with_window(20.0, 1.0).unwrap();
        let e = estimate_stats(&cfg).unwrap();
        let want = mean_interference(&p);
        assert!((e.mean + e.bias_bound - want).abs() < 3.0 * e.std_errors.mean, "{} {}", e.mean + e.bias_bound, want);
        let p1 = retention::p1(1.0, 1.0).unwrap();
        let p12 = retention::p12(1.0, 1.0).unwrap();
        assert!((e.retention.p1.value - p1).abs() < 3.0 * e.retention.p1.std_error);
        assert!((e.retention.p12.value - p12).abs() < 3.0 * e.retention.p12.std_error);
        let a = interference_stats(&p, &AnalyticsOptions::default()).unwrap();
        assert!((e.covariance - a.covariance.value).abs() < 3.0 * e.std_errors.covariance + 1e-3);
    }

    #[test]
    fn aloha_matches_mpp_mean() {
        let p = params(1.0, 0.8, 3.0, 1.0);
        let base = SimConfig::new(p, 20_000, 23).unwrap().with_window(20.0, 0.8).unwrap();
        let mpp = estimate_stats(&base).unwrap();
        let aloha = estimate_stats(&SimConfig { network: NetworkModel::Aloha, ..base }).unwrap();
        let se = mpp.std_errors.mean.hypot(aloha.std_errors.mean);
        assert!((mpp.mean - aloha.mean).abs() < 3.0 * se);
        // ALOHA correlation is p1·m/(m+1).
        let want = p.p1() * 0.5;
        assert!((aloha.correlation - want).abs() < 3.0 * aloha.std_errors.correlation);
    }

    #[test]
    fn planted_probabilities() {
        let p = params(1.0, 1.0, 3.0, 1.0);
        let cfg = SimConfig::new(p, 40_000, 31).unwrap();
        let est = estimate_retention_probs(&cfg, &[0.9, 1.5, 3.0]).unwrap();
        let p1 = retention::p1(1.0, 1.0).unwrap();
        assert!((est.p1.value - p1).abs() < 3.0 * est.p1.std_error);
        assert_eq!(est.pairs[0].p11.value, 0.0);
        let p12r = retention::p12r(0.9, 1.0, 1.0).unwrap();
        assert!((est.pairs[0].p12r.value - p12r).abs() < 3.0 * est.pairs[0].p12r.std_error);
        let p11 = retention::p11(1.5, 1.0, 1.0).unwrap();
        assert!((est.pairs[1].p11.value - p11).abs() < 3.0 * est.pairs[1].p11.std_error);
        assert!((est.pairs[2].p12r.value - p1 * p1).abs() < 3.0 * est.pairs[2].p12r.std_error);
        assert!(estimate_retention_probs(&cfg, &[0.0]).is_err());

        let p = params(1.0, 0.4, 3.0, 1.0);
        let est = estimate_retention_probs(&SimConfig::new(p, 40_000, 32).unwrap(), &[]).unwrap();
        assert!((est.p1.value - 0.78598).abs() < 3.0 * est.p1.std_error);
    }

    #[test]
    fn explicit_pattern_route_agrees_in_mean() {
        // Interference via sample_ppp + paired_thinnings, an independent
        // code path, against the analytic mean inside a small window.
        let p = params(1.0, 0.5, 4.0, 1.0);
        let w = Window::new(8.0, 0.5).unwrap();
        let fading = Fading::new(1.0).unwrap();
        let n = 4000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for i in 0..n {
            let mut rng = realization_rng(77, 9, i);
            let pat = sample_ppp(1.0, w, &mut rng).unwrap();
            let (a, _) = paired_thinnings(&pat, 0.5, &mut rng).unwrap();
            let x: f64 = a
                .retained_points()
                .filter(|q| w.in_observation(*q))
                .map(|q| fading.sample(&mut rng) * crate::channel::path_gain(q[0].hypot(q[1]), 4.0))
                .sum();
            sum += x;
            sum2 += x * x;
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        let want = mean_interference(&p) - truncation_bias(&p, 8.0);
        assert!((mean - want).abs() < 3.0 * se, "{mean} {want} {se}");
    }

    #[test]
    fn lag_covariances_small_run() {
        let p = params(1.0, 1.0, 3.0, 1.0);
        let cfg = SimConfig::new(p, 4000, 3).unwrap().with_window(15.0, 1.0).unwrap();
        let c = estimate_slot_covariances(&cfg, 4).unwrap();
        assert_eq!(c.off_diagonal_pairs().len(), 6);
        assert_eq!(c.batches.len(), 100);
        for ((i, j), z) in c.lag_deviations() {
            assert!(z.abs() < 3.0, "({i},{j}) z={z}");
        }
        assert!(estimate_slot_covariances(&cfg, 1).is_err());
    }
}
