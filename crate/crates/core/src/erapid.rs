//! Ergodic random access with pilot hopping (E-RAPiD).
//!
//! Every device is active in a slot with probability `p_a` and hops to a
//! uniformly chosen pilot. The BS applies MRC with the contaminated estimate
//! of each slot and a codeword spans many slots, so the achievable rate is a
//! use-and-then-forget bound taken over small-scale fading *and* the random
//! activity and pilot configuration:
//!
//! ```text
//! SINR_k = p M beta_k^2 E[1/g]^2 / ( E[p M C2/g^2 + p (beta_k + A)/g + s2/g] + p M beta_k^2 Var(1/g) )
//! ```
//!
//! with `g` the estimate normalizer of the device's pilot, `C2` the squared
//! gains of its same-pilot contenders and `A` the total gain of the other
//! active devices. The expectations are estimated by Monte Carlo over slots,
//! conditioning on the device being active.

use rand::Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::channel::{db_to_linear, draw_channel, ChannelVector};
use crate::error::{ConfigError, FitError};
use crate::stream::RandomStream;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErapidConfig {
    pub num_devices: usize,
    pub num_antennas: usize,
    /// Slot duration in symbols; pilots plus data.
    pub slot_length: usize,
    pub num_pilots: usize,
    pub activation_prob: f64,
    pub mean_gain: f64,
    /// Gains are uniform in `mean_gain * [1 - spread, 1 + spread]`.
    pub gain_spread: f64,
    /// SNR of a device with the mean gain.
    pub snr_db: f64,
    pub mc_slots: usize,
}

impl Default for ErapidConfig {
    fn default() -> Self {
        Self {
            num_devices: 800,
            num_antennas: 100,
            slot_length: 300,
            num_pilots: 100,
            activation_prob: 0.075,
            mean_gain: 1.0,
            gain_spread: 0.25,
            snr_db: 10.0,
            mc_slots: 400,
        }
    }
}

impl ErapidConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_devices == 0 {
            return Err(ConfigError::invalid("num_devices", "must be at least 1"));
        }
        if self.num_antennas == 0 {
            return Err(ConfigError::invalid("num_antennas", "must be at least 1"));
        }
        if self.num_pilots == 0 || self.num_pilots >= self.slot_length {
            return Err(ConfigError::invalid("num_pilots", "must satisfy 1 <= tau_p < slot_length"));
        }
        if !(0.0..=1.0).contains(&self.activation_prob) {
            return Err(ConfigError::invalid("activation_prob", "must lie in [0, 1]"));
        }
        if !(self.mean_gain > 0.0) {
            return Err(ConfigError::invalid("mean_gain", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.gain_spread) {
            return Err(ConfigError::invalid("gain_spread", "must lie in [0, 1)"));
        }
        if self.mc_slots == 0 {
            return Err(ConfigError::invalid("mc_slots", "must be at least 1"));
        }
        Ok(())
    }

    /// Transmit power is one; the noise power is set by the SNR at the mean gain.
    pub fn noise_power(&self) -> f64 {
        self.mean_gain / db_to_linear(self.snr_db)
    }

    pub fn pilot_fraction(&self) -> f64 {
        self.num_pilots as f64 / self.slot_length as f64
    }

    pub fn mean_active(&self) -> f64 {
        self.num_devices as f64 * self.activation_prob
    }
}

/// Draws the per-device large-scale gains.
pub fn draw_gains<R: Rng + ?Sized>(cfg: &ErapidConfig, rng: &mut R) -> Vec<f64> {
    (0..cfg.num_devices)
        .map(|_| cfg.mean_gain * (1.0 + cfg.gain_spread * (2.0 * rng.random::<f64>() - 1.0)))
        .collect()
}

/// Activity and pilot draws of one slot. One uniform per device for each, so
/// that configurations share random numbers across `p_a` and `tau_p`.
fn draw_configuration<R: Rng + ?Sized>(
    n: usize,
    activation_prob: f64,
    num_pilots: usize,
    active: &mut [bool],
    pilots: &mut [usize],
    rng: &mut R,
) {
    for k in 0..n {
        active[k] = rng.random::<f64>() < activation_prob;
        pilots[k] = ((rng.random::<f64>() * num_pilots as f64) as usize).min(num_pilots - 1);
    }
}

/// One device in one slot.
#[derive(Debug, Clone)]
pub struct DeviceSlot {
    pub active: bool,
    pub pilot: usize,
    pub channel: Option<ChannelVector>,
}

#[derive(Debug, Clone)]
pub struct SlotRecord {
    pub devices: Vec<DeviceSlot>,
    /// Active device ids per pilot.
    pub contenders: Vec<Vec<usize>>,
}

impl SlotRecord {
    pub fn num_active(&self) -> usize {
        self.devices.iter().filter(|d| d.active).count()
    }
}

/// Simulates one slot. Channels are drawn for active devices when requested.
pub fn simulate_erapid_slot(
    cfg: &ErapidConfig,
    gains: &[f64],
    with_channels: bool,
    rng: &mut RandomStream,
) -> SlotRecord {
    let n = cfg.num_devices;
    assert_eq!(gains.len(), n);
    let mut active = vec![false; n];
    let mut pilots = vec![0; n];
    draw_configuration(n, cfg.activation_prob, cfg.num_pilots, &mut active, &mut pilots, rng);
    let mut contenders = vec![Vec::new(); cfg.num_pilots];
    let devices = (0..n)
        .map(|k| {
            if active[k] {
                contenders[pilots[k]].push(k);
            }
            let channel = (with_channels && active[k]).then(|| draw_channel(gains[k], cfg.num_antennas, rng));
            DeviceSlot { active: active[k], pilot: pilots[k], channel }
        })
        .collect();
    SlotRecord { devices, contenders }
}

/// Sum-rate bound and its decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBound {
    /// Bits/s/Hz per slot, including the pilot pre-log penalty.
    pub sum_rate: f64,
    pub mean_active: f64,
    pub per_active_rate: f64,
    /// Batch-means standard error of `sum_rate`.
    pub std_error: f64,
}

const BATCHES: usize = 10;

#[derive(Clone)]
struct Moments {
    inv: Vec<f64>,
    inv_sq: Vec<f64>,
    denom: Vec<f64>,
    count: usize,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self { inv: vec![0.0; n], inv_sq: vec![0.0; n], denom: vec![0.0; n], count: 0 }
    }

    fn merge(&mut self, other: &Moments) {
        for i in 0..self.inv.len() {
            self.inv[i] += other.inv[i];
            self.inv_sq[i] += other.inv_sq[i];
            self.denom[i] += other.denom[i];
        }
        self.count += other.count;
    }

    /// Sum over devices of `p_a log2(1 + SINR_k)`, without the pre-log factor.
    fn spectral_efficiency(&self, cfg: &ErapidConfig, gains: &[f64]) -> f64 {
        if self.count == 0 || cfg.activation_prob == 0.0 {
            return 0.0;
        }
        let c = self.count as f64;
        let m = cfg.num_antennas as f64;
        gains
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let x = self.inv[k] / c;
                let var = (self.inv_sq[k] / c - x * x).max(0.0);
                let signal = m * b * b * x * x;
                let sinr = signal / (self.denom[k] / c + m * b * b * var);
                cfg.activation_prob * (1.0 + sinr).log2()
            })
            .sum()
    }
}

/// Monte Carlo estimate of the sum-rate bound.
pub fn ergodic_sum_rate(cfg: &ErapidConfig, rng: &mut RandomStream) -> RateBound {
    let gains = draw_gains(cfg, rng);
    sum_rate_with_gains(cfg, &gains, rng)
}

/// As [`ergodic_sum_rate`], for fixed device gains.
pub fn sum_rate_with_gains(cfg: &ErapidConfig, gains: &[f64], rng: &mut RandomStream) -> RateBound {
    let n = cfg.num_devices;
    assert_eq!(gains.len(), n);
    let m = cfg.num_antennas as f64;
    let noise = cfg.noise_power();
    let pilot_noise = noise / cfg.num_pilots as f64;
    let batches = BATCHES.min(cfg.mc_slots).max(1);
    let mut batch_moments = vec![Moments::new(n); batches];
    let mut active = vec![false; n];
    let mut pilots = vec![0usize; n];
    let mut sum1 = vec![0.0; cfg.num_pilots];
    let mut sum2 = vec![0.0; cfg.num_pilots];
    for slot in 0..cfg.mc_slots {
        draw_configuration(n, cfg.activation_prob, cfg.num_pilots, &mut active, &mut pilots, rng);
        sum1.iter_mut().for_each(|v| *v = 0.0);
        sum2.iter_mut().for_each(|v| *v = 0.0);
        let mut total = 0.0;
        for k in 0..n {
            if active[k] {
                let b = gains[k];
                sum1[pilots[k]] += b;
                sum2[pilots[k]] += b * b;
                total += b;
            }
        }
        let acc = &mut batch_moments[slot * batches / cfg.mc_slots];
        acc.count += 1;
        for k in 0..n {
            let b = gains[k];
            let own = if active[k] { b } else { 0.0 };
            let contam = sum1[pilots[k]] - own;
            let contam_sq = (sum2[pilots[k]] - own * own).max(0.0);
            let others = total - own;
            let g = b + contam + pilot_noise;
            let inv = 1.0 / g;
            acc.inv[k] += inv;
            acc.inv_sq[k] += inv * inv;
            acc.denom[k] += m * contam_sq * inv * inv + (b + others) * inv + noise * inv;
        }
    }
    let prelog = 1.0 - cfg.pilot_fraction();
    let mut all = Moments::new(n);
    let mut per_batch = Vec::with_capacity(batches);
    for bm in &batch_moments {
        all.merge(bm);
        per_batch.push(prelog * bm.spectral_efficiency(cfg, gains));
    }
    let sum_rate = prelog * all.spectral_efficiency(cfg, gains);
    let std_error = if batches > 1 {
        let mu = per_batch.iter().sum::<f64>() / batches as f64;
        let var = per_batch.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / (batches - 1) as f64;
        (var / batches as f64).sqrt()
    } else {
        0.0
    };
    let mean_active = cfg.mean_active();
    RateBound {
        sum_rate,
        mean_active,
        per_active_rate: if mean_active > 0.0 { sum_rate / mean_active } else { 0.0 },
        std_error,
    }
}

/// Closed form of the bound for a single, always-active device.
pub fn single_user_rate(cfg: &ErapidConfig, gain: f64) -> f64 {
    let noise = cfg.noise_power();
    let tau = cfg.num_pilots as f64;
    let snr = gain / noise;
    let estimate_quality = tau * gain / (tau * gain + noise);
    let sinr = cfg.num_antennas as f64 * snr * estimate_quality / (1.0 + snr);
    (1.0 - cfg.pilot_fraction()) * (1.0 + sinr).log2()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErapidOptimum {
    pub num_pilots: usize,
    pub activation_prob: f64,
    pub bound: RateBound,
}

impl ErapidOptimum {
    pub fn pilot_fraction(&self, slot_length: usize) -> f64 {
        self.num_pilots as f64 / slot_length as f64
    }
}

/// Grid search over `(tau_p, p_a)` with common random numbers.
///
/// Every grid point is evaluated with a clone of `rng`, so points share the
/// device gains and the per-slot uniforms. Pilot counts not below the slot
/// length are skipped. Ties go to the smaller `tau_p`, then the smaller `p_a`.
pub fn optimize_erapid(
    base: &ErapidConfig,
    pilot_grid: &[usize],
    activation_grid: &[f64],
    rng: &RandomStream,
) -> ErapidOptimum {
    let search = GridSearch::new(base, pilot_grid, activation_grid, rng);
    let all: Vec<(usize, usize)> =
        (0..search.pilots.len()).flat_map(|i| (0..search.probs.len()).map(move |j| (i, j))).collect();
    search.best(&all)
}

/// As [`optimize_erapid`], evaluating every `stride`-th grid point first and
/// then the full-resolution neighbourhood of the coarse optimum.
pub fn optimize_erapid_refined(
    base: &ErapidConfig,
    pilot_grid: &[usize],
    activation_grid: &[f64],
    stride: usize,
    rng: &RandomStream,
) -> ErapidOptimum {
    assert!(stride >= 1);
    let search = GridSearch::new(base, pilot_grid, activation_grid, rng);
    let coarse_axis = |n: usize| {
        let mut v: Vec<usize> = (0..n).step_by(stride).collect();
        if *v.last().unwrap() != n - 1 {
            v.push(n - 1);
        }
        v
    };
    let (np, nq) = (search.pilots.len(), search.probs.len());
    let coarse: Vec<(usize, usize)> =
        coarse_axis(np).into_iter().flat_map(|i| coarse_axis(nq).into_iter().map(move |j| (i, j))).collect();
    let first = search.best_index(&coarse);
    let window = |c: usize, n: usize| c.saturating_sub(stride - 1)..(c + stride).min(n);
    let mut points = coarse;
    for i in window(first.0, np) {
        for j in window(first.1, nq) {
            if !points.contains(&(i, j)) {
                points.push((i, j));
            }
        }
    }
    search.best(&points)
}

struct GridSearch<'a> {
    base: &'a ErapidConfig,
    pilots: Vec<usize>,
    probs: Vec<f64>,
    gains: Vec<f64>,
    stream: RandomStream,
}

impl<'a> GridSearch<'a> {
    fn new(base: &'a ErapidConfig, pilot_grid: &[usize], activation_grid: &[f64], rng: &RandomStream) -> Self {
        assert!(!pilot_grid.is_empty() && !activation_grid.is_empty(), "empty optimization grid");
        let mut pilots: Vec<usize> =
            pilot_grid.iter().copied().filter(|&t| t >= 1 && t < base.slot_length).collect();
        pilots.sort_unstable();
        pilots.dedup();
        assert!(!pilots.is_empty(), "no pilot count fits the slot");
        let mut probs = activation_grid.to_vec();
        probs.sort_by(f64::total_cmp);
        probs.dedup();
        let mut stream = rng.clone();
        let gains = draw_gains(base, &mut stream);
        Self { base, pilots, probs, gains, stream }
    }

    fn evaluate(&self, points: &[(usize, usize)]) -> Vec<RateBound> {
        points
            .par_iter()
            .map(|&(i, j)| {
                let cfg = ErapidConfig { num_pilots: self.pilots[i], activation_prob: self.probs[j], ..self.base.clone() };
                sum_rate_with_gains(&cfg, &self.gains, &mut self.stream.clone())
            })
            .collect()
    }

    fn pick(points: &[(usize, usize)], results: &[RateBound]) -> usize {
        let mut best = 0;
        for k in 1..points.len() {
            let (r, b) = (results[k].sum_rate, results[best].sum_rate);
            if r > b || (r == b && points[k] < points[best]) {
                best = k;
            }
        }
        best
    }

    fn best_index(&self, points: &[(usize, usize)]) -> (usize, usize) {
        let results = self.evaluate(points);
        points[Self::pick(points, &results)]
    }

    fn best(&self, points: &[(usize, usize)]) -> ErapidOptimum {
        let results = self.evaluate(points);
        let k = Self::pick(points, &results);
        let (i, j) = points[k];
        ErapidOptimum { num_pilots: self.pilots[i], activation_prob: self.probs[j], bound: results[k] }
    }
}

/// Pilot counts `step, 2 step, ...` below the slot length, `step = max(1, tau_u / 60)`.
pub fn default_pilot_grid(slot_length: usize) -> Vec<usize> {
    let step = (slot_length / 60).max(1);
    (1..).map(|i| i * step).take_while(|&t| t < slot_length).collect()
}

/// Activation probabilities giving `5, 10, ...` expected active devices, up
/// to `max_active` or the whole population.
pub fn default_activation_grid(num_devices: usize, max_active: usize) -> Vec<f64> {
    (1..)
        .map(|i| i * 5)
        .take_while(|&a| a <= max_active.min(num_devices))
        .map(|a| a as f64 / num_devices as f64)
        .collect()
}

/// Optimized result at one `(M, tau_u)` point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub num_antennas: usize,
    pub slot_length: usize,
    pub sum_rate: f64,
    pub mean_active: f64,
}

/// `mean_active ~ x sqrt(M tau_u)` and `log R ~ intercept + slope log(M tau_u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicModel {
    pub x: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl HeuristicModel {
    pub fn predict_mean_active(&self, num_antennas: usize, slot_length: usize) -> f64 {
        self.x * ((num_antennas * slot_length) as f64).sqrt()
    }

    pub fn predict_sum_rate(&self, num_antennas: usize, slot_length: usize) -> f64 {
        (self.intercept + self.slope * ((num_antennas * slot_length) as f64).ln()).exp()
    }
}

/// Least-squares fit of the square-root scaling model.
pub fn fit_heuristic(points: &[SweepPoint]) -> Result<HeuristicModel, FitError> {
    if points.len() < 4 {
        return Err(FitError::TooFewPoints(points.len()));
    }
    if let Some(i) = points.iter().position(|p| !(p.sum_rate > 0.0 && p.mean_active > 0.0)) {
        return Err(FitError::NonPositive(i));
    }
    let xs: Vec<f64> = points.iter().map(|p| ((p.num_antennas * p.slot_length) as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.sum_rate.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-12 {
        return Err(FitError::Degenerate);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let roots: Vec<f64> = points.iter().map(|p| ((p.num_antennas * p.slot_length) as f64).sqrt()).collect();
    let x = points.iter().zip(&roots).map(|(p, s)| p.mean_active * s).sum::<f64>()
        / roots.iter().map(|s| s * s).sum::<f64>();
    Ok(HeuristicModel { x, slope, intercept: my - slope * mx })
}
