//! Coded random access with replicas and interference cancellation (C-RAPiD).
//!
//! A frame spans `frame_length` slots. In every slot each device is active
//! with probability `p_a`, picks a pilot and sends a replica of its packet.
//! The BS combines each replica with MRC on the contaminated estimate of its
//! pilot; a packet is recovered when any replica clears the SINR threshold of
//! its rate, after which all its replicas are cancelled and the procedure
//! repeats. ALOHA and scheduled Massive MIMO (SMM) serve as references.

use rand::Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::channel::db_to_linear;
use crate::error::{ConfigError, SicError};
use crate::mrc::{contaminated_mrc_sinr_from_sums, measure_mrc_sinr, LinkBudget};
use crate::stream::RandomStream;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrapidConfig {
    pub num_devices: usize,
    pub num_antennas: usize,
    pub num_pilots: usize,
    /// Slots per frame.
    pub frame_length: usize,
    pub activation_prob: f64,
    /// Code rate on QPSK; the spectral efficiency is `2 R`.
    pub code_rate: f64,
    /// Per-device SNR after power control.
    pub snr_db: f64,
    pub sic_max_iters: usize,
    /// Fraction of a decoded device's power removed by cancellation.
    pub cancellation_efficiency: f64,
}

impl Default for CrapidConfig {
    fn default() -> Self {
        Self {
            num_devices: 1000,
            num_antennas: 400,
            num_pilots: 64,
            frame_length: 10,
            activation_prob: 0.05,
            code_rate: 0.5,
            snr_db: 10.0,
            sic_max_iters: 1000,
            cancellation_efficiency: 1.0,
        }
    }
}

impl CrapidConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_antennas == 0 {
            return Err(ConfigError::invalid("num_antennas", "must be at least 1"));
        }
        if self.num_pilots == 0 {
            return Err(ConfigError::invalid("num_pilots", "must be at least 1"));
        }
        if self.frame_length == 0 {
            return Err(ConfigError::invalid("frame_length", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.activation_prob) {
            return Err(ConfigError::invalid("activation_prob", "must lie in [0, 1]"));
        }
        if !(self.code_rate > 0.0) {
            return Err(ConfigError::invalid("code_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.cancellation_efficiency) {
            return Err(ConfigError::invalid("cancellation_efficiency", "must lie in [0, 1]"));
        }
        if self.sic_max_iters == 0 {
            return Err(ConfigError::invalid("sic_max_iters", "must be at least 1"));
        }
        Ok(())
    }

    /// Decoding threshold `2^(2R) - 1`.
    pub fn sinr_threshold(&self) -> f64 {
        decoding_threshold(self.code_rate)
    }

    /// Unit gain and power; the noise carries the SNR.
    pub fn link(&self) -> LinkBudget {
        LinkBudget::power_controlled(self.num_antennas, self.num_pilots, db_to_linear(self.snr_db))
    }
}

pub fn decoding_threshold(code_rate: f64) -> f64 {
    2f64.powf(2.0 * code_rate) - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Replica {
    pub device: usize,
    pub slot: usize,
    pub pilot: usize,
}

#[derive(Debug, Clone)]
pub struct ReplicaFrame {
    num_devices: usize,
    frame_length: usize,
    num_pilots: usize,
    gains: Vec<f64>,
    replicas: Vec<Replica>,
    by_slot: Vec<Vec<usize>>,
    by_device: Vec<Vec<usize>>,
    decoded: Vec<bool>,
}

impl ReplicaFrame {
    /// Builds a frame from explicit `(device, slot, pilot)` triples.
    pub fn from_replicas(
        num_devices: usize,
        frame_length: usize,
        num_pilots: usize,
        gains: Vec<f64>,
        triples: &[(usize, usize, usize)],
    ) -> Result<Self, ConfigError> {
        if gains.len() != num_devices {
            return Err(ConfigError::invalid("gains", "need one gain per device"));
        }
        let mut frame = Self::empty(num_devices, frame_length, num_pilots, gains);
        for &(device, slot, pilot) in triples {
            if device >= num_devices || slot >= frame_length || pilot >= num_pilots {
                return Err(ConfigError::invalid("replicas", "index out of range"));
            }
            if frame.by_device[device].iter().any(|&r| frame.replicas[r].slot == slot) {
                return Err(ConfigError::invalid("replicas", "device repeated within a slot"));
            }
            frame.push(Replica { device, slot, pilot });
        }
        Ok(frame)
    }

    fn empty(num_devices: usize, frame_length: usize, num_pilots: usize, gains: Vec<f64>) -> Self {
        Self {
            num_devices,
            frame_length,
            num_pilots,
            gains,
            replicas: Vec::new(),
            by_slot: vec![Vec::new(); frame_length],
            by_device: vec![Vec::new(); num_devices],
            decoded: vec![false; num_devices],
        }
    }

    fn push(&mut self, r: Replica) {
        let i = self.replicas.len();
        self.by_slot[r.slot].push(i);
        self.by_device[r.device].push(i);
        self.replicas.push(r);
    }

    pub fn num_devices(&self) -> usize {
        self.num_devices
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }

    pub fn num_pilots(&self) -> usize {
        self.num_pilots
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    /// Replica indices transmitted in `slot`.
    pub fn slot_replicas(&self, slot: usize) -> &[usize] {
        &self.by_slot[slot]
    }

    pub fn device_replicas(&self, device: usize) -> &[usize] {
        &self.by_device[device]
    }

    pub fn gain(&self, device: usize) -> f64 {
        self.gains[device]
    }

    pub fn decoded(&self) -> &[bool] {
        &self.decoded
    }

    pub fn decoded_count(&self) -> usize {
        self.decoded.iter().filter(|&&d| d).count()
    }

    pub fn is_decoded(&self, device: usize) -> bool {
        self.decoded[device]
    }

    /// Forgets all decoding progress.
    pub fn reset(&mut self) {
        self.decoded.iter_mut().for_each(|d| *d = false);
    }

    /// Marks `device` as decoded, cancelling its replicas.
    pub fn cancel(&mut self, device: usize) {
        self.decoded[device] = true;
    }
}

/// Draws a frame. Every `(slot, device)` consumes two uniforms in slot-major
/// order whatever `p_a` and `tau_p`, so grids share random numbers.
pub fn build_frame(cfg: &CrapidConfig, rng: &mut RandomStream) -> ReplicaFrame {
    let mut frame = ReplicaFrame::empty(cfg.num_devices, cfg.frame_length, cfg.num_pilots, vec![1.0; cfg.num_devices]);
    for slot in 0..cfg.frame_length {
        for device in 0..cfg.num_devices {
            let active = rng.random::<f64>() < cfg.activation_prob;
            let pilot = uniform_index(rng.random::<f64>(), cfg.num_pilots);
            if active {
                frame.push(Replica { device, slot, pilot });
            }
        }
    }
    frame
}

fn uniform_index(u: f64, n: usize) -> usize {
    ((u * n as f64) as usize).min(n - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinrMode {
    Asymptotic,
    /// Monte Carlo MRC over `draws` channel realizations of `symbols` symbols each.
    Exact { draws: usize, symbols: usize },
}

/// Per-slot sums over undecoded replicas.
#[derive(Debug, Clone, Default)]
struct SlotLoad {
    pilot_sum: Vec<f64>,
    pilot_sq: Vec<f64>,
    total: f64,
    /// Power left behind by imperfect cancellation.
    residual: f64,
}

impl SlotLoad {
    fn compute(frame: &ReplicaFrame, slot: usize, cfg: &CrapidConfig) -> Self {
        let mut load = SlotLoad { pilot_sum: vec![0.0; frame.num_pilots], pilot_sq: vec![0.0; frame.num_pilots], ..Default::default() };
        for &i in &frame.by_slot[slot] {
            let r = frame.replicas[i];
            let b = frame.gains[r.device];
            if frame.decoded[r.device] {
                load.residual += (1.0 - cfg.cancellation_efficiency) * b;
            } else {
                load.pilot_sum[r.pilot] += b;
                load.pilot_sq[r.pilot] += b * b;
                load.total += b;
            }
        }
        load
    }

    fn sinr(&self, link: &LinkBudget, own: f64, pilot: usize) -> f64 {
        let contam = (self.pilot_sum[pilot] - own).max(0.0);
        let contam_sq = (self.pilot_sq[pilot] - own * own).max(0.0);
        let others = (self.total - self.pilot_sum[pilot]).max(0.0) + self.residual;
        contaminated_mrc_sinr_from_sums(link, own, contam, contam_sq, others)
    }
}

/// Post-MRC SINR of replica `replica` against the undecoded replicas of its slot.
///
/// Decoded devices are cancelled; with partial cancellation their leftover
/// power acts as non-coherent interference (added to the noise in exact mode).
pub fn slot_sinr(
    frame: &ReplicaFrame,
    replica: usize,
    cfg: &CrapidConfig,
    mode: SinrMode,
    rng: &mut RandomStream,
) -> f64 {
    let r = frame.replicas[replica];
    let link = cfg.link();
    match mode {
        SinrMode::Asymptotic => SlotLoad::compute(frame, r.slot, cfg).sinr(&link, frame.gains[r.device], r.pilot),
        SinrMode::Exact { draws, symbols } => {
            let mut tx = Vec::new();
            let mut target = 0;
            let mut residual = 0.0;
            for &i in &frame.by_slot[r.slot] {
                let other = frame.replicas[i];
                let b = frame.gains[other.device];
                if i == replica {
                    target = tx.len();
                    tx.push((b, other.pilot));
                } else if frame.decoded[other.device] {
                    residual += (1.0 - cfg.cancellation_efficiency) * b;
                } else {
                    tx.push((b, other.pilot));
                }
            }
            let link = LinkBudget { noise_power: link.noise_power + residual * link.ul_power, ..link };
            measure_mrc_sinr(&link, &tx, target, draws, symbols, rng)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Crapid,
    Aloha,
    Smm,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Crapid, Scheme::Aloha, Scheme::Smm];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Crapid => "crapid",
            Scheme::Aloha => "aloha",
            Scheme::Smm => "smm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputResult {
    pub scheme: Scheme,
    pub decoded_count: usize,
    /// Decoded packets per slot.
    pub throughput: f64,
}

impl ThroughputResult {
    pub fn new(scheme: Scheme, decoded_count: usize, frame_length: usize) -> Self {
        Self { scheme, decoded_count, throughput: decoded_count as f64 / frame_length as f64 }
    }
}

/// Peeling decoder. Each iteration marks every device with a replica above
/// threshold, then cancels all replicas of the marked devices. Only slots
/// touched by a cancellation are re-examined.
pub fn sic_decode(frame: &mut ReplicaFrame, cfg: &CrapidConfig) -> Result<ThroughputResult, SicError> {
    let link = cfg.link();
    let threshold = cfg.sinr_threshold();
    let mut loads: Vec<SlotLoad> = (0..frame.frame_length).map(|s| SlotLoad::compute(frame, s, cfg)).collect();
    let mut dirty: Vec<usize> = (0..frame.frame_length).collect();
    let mut is_dirty = vec![false; frame.frame_length];
    let mut marked = vec![false; frame.num_devices];
    let mut iterations = 0;
    loop {
        let mut newly = Vec::new();
        for &slot in &dirty {
            let load = &loads[slot];
            for &i in &frame.by_slot[slot] {
                let r = frame.replicas[i];
                if frame.decoded[r.device] || marked[r.device] {
                    continue;
                }
                if load.sinr(&link, frame.gains[r.device], r.pilot) >= threshold {
                    marked[r.device] = true;
                    newly.push(r.device);
                }
            }
        }
        if newly.is_empty() {
            break;
        }
        iterations += 1;
        if iterations > cfg.sic_max_iters {
            return Err(SicError::NotConverged(cfg.sic_max_iters));
        }
        dirty.clear();
        for device in newly {
            frame.decoded[device] = true;
            let b = frame.gains[device];
            for &i in &frame.by_device[device] {
                let r = frame.replicas[i];
                let load = &mut loads[r.slot];
                load.pilot_sum[r.pilot] -= b;
                load.pilot_sq[r.pilot] -= b * b;
                load.total -= b;
                load.residual += (1.0 - cfg.cancellation_efficiency) * b;
                if !is_dirty[r.slot] {
                    is_dirty[r.slot] = true;
                    dirty.push(r.slot);
                }
            }
        }
        dirty.sort_unstable();
        for &s in &dirty {
            is_dirty[s] = false;
        }
    }
    Ok(ThroughputResult::new(Scheme::Crapid, frame.decoded_count(), frame.frame_length))
}

/// Reference decoder that cancels one decodable device at a time, chosen by `pick`
/// among the currently decodable ones (given in increasing device order).
pub fn sic_decode_one_by_one(
    frame: &mut ReplicaFrame,
    cfg: &CrapidConfig,
    mut pick: impl FnMut(&[usize]) -> usize,
) -> ThroughputResult {
    let link = cfg.link();
    let threshold = cfg.sinr_threshold();
    loop {
        let candidates = decodable_devices(frame, cfg, &link, threshold);
        if candidates.is_empty() {
            break;
        }
        let choice = pick(&candidates);
        frame.decoded[candidates[choice]] = true;
    }
    ThroughputResult::new(Scheme::Crapid, frame.decoded_count(), frame.frame_length)
}

/// Undecoded devices that clear the threshold in at least one slot right now.
pub fn decodable_now(frame: &ReplicaFrame, cfg: &CrapidConfig) -> Vec<usize> {
    decodable_devices(frame, cfg, &cfg.link(), cfg.sinr_threshold())
}

fn decodable_devices(frame: &ReplicaFrame, cfg: &CrapidConfig, link: &LinkBudget, threshold: f64) -> Vec<usize> {
    let mut ok = vec![false; frame.num_devices];
    for slot in 0..frame.frame_length {
        let load = SlotLoad::compute(frame, slot, cfg);
        for &i in &frame.by_slot[slot] {
            let r = frame.replicas[i];
            if !frame.decoded[r.device] && load.sinr(link, frame.gains[r.device], r.pilot) >= threshold {
                ok[r.device] = true;
            }
        }
    }
    (0..frame.num_devices).filter(|&d| ok[d]).collect()
}

/// Draws an ALOHA frame: each device with traffic (probability `p_a` per
/// frame) sends once in a uniformly chosen slot on a uniform pilot.
pub fn build_aloha_frame(cfg: &CrapidConfig, rng: &mut RandomStream) -> ReplicaFrame {
    let mut frame = ReplicaFrame::empty(cfg.num_devices, cfg.frame_length, cfg.num_pilots, vec![1.0; cfg.num_devices]);
    for device in 0..cfg.num_devices {
        let active = rng.random::<f64>() < cfg.activation_prob;
        let slot = uniform_index(rng.random::<f64>(), cfg.frame_length);
        let pilot = uniform_index(rng.random::<f64>(), cfg.num_pilots);
        if active {
            frame.push(Replica { device, slot, pilot });
        }
    }
    frame
}

/// Packets alone on their `(slot, pilot)` whose SINR clears the threshold,
/// without any cancellation.
pub fn aloha_decode(frame: &ReplicaFrame, cfg: &CrapidConfig) -> ThroughputResult {
    let link = cfg.link();
    let threshold = cfg.sinr_threshold();
    let mut decoded = 0;
    for slot in 0..frame.frame_length {
        let mut count = vec![0usize; frame.num_pilots];
        for &i in &frame.by_slot[slot] {
            count[frame.replicas[i].pilot] += 1;
        }
        let load = SlotLoad::compute(frame, slot, cfg);
        for &i in &frame.by_slot[slot] {
            let r = frame.replicas[i];
            if count[r.pilot] == 1 && load.sinr(&link, frame.gains[r.device], r.pilot) >= threshold {
                decoded += 1;
            }
        }
    }
    ThroughputResult::new(Scheme::Aloha, decoded, frame.frame_length)
}

pub fn aloha_throughput(cfg: &CrapidConfig, rng: &mut RandomStream) -> ThroughputResult {
    aloha_decode(&build_aloha_frame(cfg, rng), cfg)
}

/// Scheduled Massive MIMO with every device backlogged.
pub fn smm_throughput(cfg: &CrapidConfig) -> ThroughputResult {
    smm_throughput_with_backlog(cfg, cfg.num_devices)
}

/// `min(tau_p, backlog)` devices on orthogonal pilots in every slot, clean
/// estimates, the other scheduled devices as interference.
pub fn smm_throughput_with_backlog(cfg: &CrapidConfig, backlog: usize) -> ThroughputResult {
    let scheduled = cfg.num_pilots.min(backlog);
    let per_slot = if scheduled == 0 {
        0
    } else {
        let sinr = contaminated_mrc_sinr_from_sums(&cfg.link(), 1.0, 0.0, 0.0, (scheduled - 1) as f64);
        if sinr >= cfg.sinr_threshold() { scheduled } else { 0 }
    };
    ThroughputResult::new(Scheme::Smm, per_slot * cfg.frame_length, cfg.frame_length)
}

/// Search grid for the comparison. Loads are expected transmissions per pilot
/// per slot; C-RAPiD converts them with `p_a = load tau_p / K`, ALOHA with
/// `p_a = load tau_p Delta / K`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeGrid {
    pub pilots: Vec<usize>,
    pub frame_lengths: Vec<usize>,
    pub loads: Vec<f64>,
}

impl Default for SchemeGrid {
    fn default() -> Self {
        Self {
            pilots: vec![32, 64, 128, 192, 256, 320],
            frame_lengths: vec![5, 10, 20, 50],
            loads: (1..=20).map(|i| 0.2 * i as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizedScheme {
    pub scheme: Scheme,
    pub num_pilots: usize,
    pub frame_length: usize,
    pub activation_prob: f64,
    /// Mean packets per slot over the evaluated frames.
    pub throughput: f64,
    pub std_error: f64,
}

fn frame_average(cfg: &CrapidConfig, scheme: Scheme, frames: usize, rng: &RandomStream) -> (f64, f64) {
    let mut stream = rng.clone();
    let values: Vec<f64> = (0..frames)
        .map(|_| match scheme {
            Scheme::Crapid => {
                let mut frame = build_frame(cfg, &mut stream);
                sic_decode(&mut frame, cfg).expect("peeling terminates within K iterations").throughput
            }
            Scheme::Aloha => aloha_throughput(cfg, &mut stream).throughput,
            Scheme::Smm => smm_throughput(cfg).throughput,
        })
        .collect();
    mean_and_stderr(&values)
}

pub(crate) fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Grid search of `(tau_p, Delta, p_a)` for one scheme with common random
/// numbers: every grid point replays the frames of a clone of `rng`. Ties go
/// to the first point in grid order.
pub fn optimize_scheme(
    scheme: Scheme,
    base: &CrapidConfig,
    grid: &SchemeGrid,
    frames: usize,
    rng: &RandomStream,
) -> OptimizedScheme {
    assert!(!grid.pilots.is_empty(), "empty pilot grid");
    assert!(frames > 0);
    let k = base.num_devices.max(1) as f64;
    let mut points = Vec::new();
    for &tau in &grid.pilots {
        if scheme == Scheme::Smm {
            points.push(CrapidConfig { num_pilots: tau, ..base.clone() });
            continue;
        }
        for &delta in &grid.frame_lengths {
            for &load in &grid.loads {
                let pa = match scheme {
                    Scheme::Crapid => load * tau as f64 / k,
                    _ => load * (tau * delta) as f64 / k,
                };
                if pa <= 1.0 {
                    points.push(CrapidConfig { num_pilots: tau, frame_length: delta, activation_prob: pa, ..base.clone() });
                }
            }
        }
    }
    assert!(!points.is_empty(), "no admissible grid point");
    let results: Vec<(f64, f64)> = points.par_iter().map(|c| frame_average(c, scheme, frames, rng)).collect();
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.0 > results[best].0 {
            best = i;
        }
    }
    let c = &points[best];
    OptimizedScheme {
        scheme,
        num_pilots: c.num_pilots,
        frame_length: c.frame_length,
        activation_prob: c.activation_prob,
        throughput: results[best].0,
        std_error: results[best].1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonRow {
    pub num_antennas: usize,
    pub code_rate: f64,
    pub best: OptimizedScheme,
}

/// Optimized throughput of every scheme for each array size and rate.
pub fn compare_schemes(
    base: &CrapidConfig,
    antennas: &[usize],
    rates: &[f64],
    grid: &SchemeGrid,
    frames: usize,
    rng: &RandomStream,
) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for &m in antennas {
        for &rate in rates {
            let cfg = CrapidConfig { num_antennas: m, code_rate: rate, ..base.clone() };
            for scheme in Scheme::ALL {
                rows.push(ComparisonRow { num_antennas: m, code_rate: rate, best: optimize_scheme(scheme, &cfg, grid, frames, rng) });
            }
        }
    }
    rows
}
