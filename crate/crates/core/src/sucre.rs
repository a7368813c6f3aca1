//! Four-phase random access with strongest-user collision resolution.
//!
//! Phase 1: every active device sends a pilot picked uniformly at random.
//! Phase 2: the BS beamforms towards the sum channel of each pilot and every
//! contender learns the sum of the contenders' path gains. Phase 3: a
//! contender repeats its pilot only if it holds more than half of that sum.
//! Phase 4: a pilot with exactly one Phase-3 transmitter admits its device.
//!
//! The baseline skips Phases 2-3 and admits only devices that were alone on
//! their pilot in Phase 1.

use num_complex::Complex64;
use rand::Rng;
use rand::seq::index;
use rand_distr::{Binomial, Distribution};
use serde::Deserialize;

use crate::channel::{
    complex_gaussian, draw_channel, pilot_correlate, receive_pilots, ChannelVector, PilotBook,
    Population, SystemConfig,
};
use crate::error::ConfigError;
use crate::stream::RandomStream;

/// Warm-up slots discarded before statistics are collected.
pub const DEFAULT_WARMUP_SLOTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    /// Contenders learn the exact sum of path gains.
    Ideal,
    /// Contenders invert the received power of the Phase-2 beamformed signal.
    Noisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessMode {
    Sucre,
    Baseline,
}

impl AccessMode {
    pub fn name(self) -> &'static str {
        match self {
            AccessMode::Sucre => "sucre",
            AccessMode::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SucreConfig {
    pub retry_prob: f64,
    pub max_attempts: u32,
    /// Bias added to the half-sum threshold, linear gain units.
    pub decision_bias: f64,
    pub estimator: EstimatorMode,
    /// BS transmit power in Phase 2 (noisy estimator only).
    pub downlink_power: f64,
}

impl Default for SucreConfig {
    fn default() -> Self {
        Self {
            retry_prob: 0.5,
            max_attempts: 10,
            decision_bias: 0.0,
            estimator: EstimatorMode::Ideal,
            downlink_power: 1.0,
        }
    }
}

impl SucreConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.retry_prob > 0.0 && self.retry_prob <= 1.0) {
            return Err(ConfigError::invalid("retry_prob", "must lie in (0, 1]"));
        }
        if self.max_attempts == 0 {
            return Err(ConfigError::invalid("max_attempts", "must be at least 1"));
        }
        if !(self.decision_bias >= 0.0) {
            return Err(ConfigError::invalid("decision_bias", "must be non-negative"));
        }
        if !(self.downlink_power > 0.0) {
            return Err(ConfigError::invalid("downlink_power", "must be positive"));
        }
        Ok(())
    }
}

/// Phase-1 signals at the BS.
#[derive(Debug, Clone)]
pub struct Phase1Signals {
    /// Indices into the `active` slice, grouped by pilot.
    pub contenders: Vec<Vec<usize>>,
    /// Channel of each active device, aligned with `active`.
    pub channels: Vec<ChannelVector>,
    /// Correlated vector `y_t` of every pilot.
    pub correlated: Vec<Vec<Complex64>>,
}

/// Uplink access-sequence transmission. `active` holds `(path_gain, pilot)`.
pub fn phase1(
    active: &[(f64, usize)],
    config: &SystemConfig,
    book: &PilotBook,
    with_noise: bool,
    rng: &mut RandomStream,
) -> Phase1Signals {
    let mut contenders = vec![Vec::new(); book.len()];
    for (i, &(_, pilot)) in active.iter().enumerate() {
        contenders[pilot].push(i);
    }
    let channels: Vec<ChannelVector> =
        active.iter().map(|&(g, _)| draw_channel(g, config.num_antennas, rng)).collect();
    let rx = receive_pilots(
        active.iter().zip(&channels).map(|(&(_, t), h)| (t, h)),
        config,
        book,
        with_noise,
        rng,
    );
    let correlated = (0..book.len()).map(|t| pilot_correlate(&rx, t, book)).collect();
    Phase1Signals { contenders, channels, correlated }
}

/// Estimate of the sum of path gains on the pilot of active device `k`.
///
/// The result never falls below the device's own gain.
pub fn phase2_gain_estimate(
    k: usize,
    active: &[(f64, usize)],
    signals: &Phase1Signals,
    config: &SystemConfig,
    sucre: &SucreConfig,
    rng: &mut RandomStream,
) -> f64 {
    let (own, pilot) = active[k];
    debug_assert!(signals.contenders[pilot].contains(&k));
    match sucre.estimator {
        EstimatorMode::Ideal => signals.contenders[pilot].iter().map(|&j| active[j].0).sum(),
        EstimatorMode::Noisy => {
            let y = &signals.correlated[pilot];
            let y_norm = y.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            let tau = config.num_pilots as f64;
            let noise_var = config.noise_power / tau;
            let beam = if y_norm > 0.0 { signals.channels[k].inner(y) / y_norm } else { Complex64::new(0.0, 0.0) };
            let z = sucre.downlink_power.sqrt() * beam + complex_gaussian(noise_var, rng);
            let power = (z.norm_sqr() - noise_var).max(f64::MIN_POSITIVE);
            let m = config.num_antennas as f64;
            let sum = sucre.downlink_power * m * own * own / power
                - config.noise_power / (config.ul_power * tau);
            sum.max(own)
        }
    }
}

/// Strongest-user criterion: repeat iff `own > estimate / 2 + bias`.
pub fn sucre_decision(own_gain: f64, sum_estimate: f64, bias: f64) -> bool {
    own_gain > sum_estimate / 2.0 + bias
}

/// What happened in one access slot.
#[derive(Debug, Clone, Default)]
pub struct AccessRound {
    /// Device ids per pilot in Phase 1.
    pub contenders: Vec<Vec<usize>>,
    /// Each contender's sum-gain estimate, aligned with `contenders`.
    pub sum_gain_estimates: Vec<Vec<f64>>,
    /// Each contender's Phase-3 decision, aligned with `contenders`.
    pub decisions: Vec<Vec<bool>>,
    pub phase3_contenders: Vec<Vec<usize>>,
    pub admitted: Vec<usize>,
}

impl AccessRound {
    pub fn collisions(&self) -> usize {
        self.contenders.iter().filter(|c| c.len() >= 2).count()
    }

    /// Phase-1 collisions that left exactly one Phase-3 transmitter.
    pub fn resolved_collisions(&self) -> usize {
        self.contenders
            .iter()
            .zip(&self.phase3_contenders)
            .filter(|(c, p3)| c.len() >= 2 && p3.len() == 1)
            .count()
    }
}

/// A request that ended in this slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conclusion {
    pub device: usize,
    pub attempts: u32,
    pub admitted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestState {
    Idle,
    Backlogged { attempts: u32 },
}

/// Set of device ids with O(1) insert and remove.
#[derive(Debug, Clone)]
struct IndexSet {
    members: Vec<usize>,
    slot: Vec<usize>,
}

impl IndexSet {
    const ABSENT: usize = usize::MAX;

    fn with_all(n: usize) -> Self {
        Self { members: (0..n).collect(), slot: (0..n).collect() }
    }

    fn empty(n: usize) -> Self {
        Self { members: Vec::new(), slot: vec![Self::ABSENT; n] }
    }

    fn insert(&mut self, d: usize) {
        if self.slot[d] == Self::ABSENT {
            self.slot[d] = self.members.len();
            self.members.push(d);
        }
    }

    fn remove(&mut self, d: usize) {
        let i = self.slot[d];
        if i == Self::ABSENT {
            return;
        }
        let last = *self.members.last().expect("non-empty");
        self.members.swap_remove(i);
        if last != d {
            self.slot[last] = i;
        }
        self.slot[d] = Self::ABSENT;
    }
}

/// Per-device request state carried across slots.
#[derive(Debug, Clone)]
pub struct PendingState {
    states: Vec<RequestState>,
    idle: IndexSet,
    backlog: IndexSet,
}

impl PendingState {
    pub fn new(num_devices: usize) -> Self {
        Self {
            states: vec![RequestState::Idle; num_devices],
            idle: IndexSet::with_all(num_devices),
            backlog: IndexSet::empty(num_devices),
        }
    }

    pub fn state(&self, device: usize) -> RequestState {
        self.states[device]
    }

    pub fn backlog_len(&self) -> usize {
        self.backlog.members.len()
    }

    fn set(&mut self, device: usize, s: RequestState) {
        match s {
            RequestState::Idle => {
                self.backlog.remove(device);
                self.idle.insert(device);
            }
            RequestState::Backlogged { .. } => {
                self.idle.remove(device);
                self.backlog.insert(device);
            }
        }
        self.states[device] = s;
    }
}

#[derive(Debug, Clone)]
pub struct SlotOutcome {
    pub round: AccessRound,
    pub concluded: Vec<Conclusion>,
}

/// Runs one access occasion and updates `pending`.
///
/// Backlogged devices retry with `retry_prob`; idle devices start a request
/// with the population's activation probability. A device that fails its
/// `max_attempts`-th attempt is denied and returns to idle.
pub fn run_access_slot(
    population: &Population,
    config: &SystemConfig,
    sucre: &SucreConfig,
    mode: AccessMode,
    pending: &mut PendingState,
    book: &PilotBook,
    rng: &mut RandomStream,
) -> SlotOutcome {
    let mut transmitting: Vec<usize> = pending
        .backlog
        .members
        .iter()
        .copied()
        .filter(|_| rng.random_bool(sucre.retry_prob))
        .collect();
    let idle_count = pending.idle.members.len();
    if idle_count > 0 && population.activation_prob > 0.0 {
        let n_new = Binomial::new(idle_count as u64, population.activation_prob)
            .expect("valid probability")
            .sample(rng) as usize;
        let picks = index::sample(rng, idle_count, n_new);
        transmitting.extend(picks.iter().map(|i| pending.idle.members[i]));
    }
    let tau = config.num_pilots;
    let active: Vec<(f64, usize)> = transmitting
        .iter()
        .map(|&d| (population.devices[d].path_gain, rng.random_range(0..tau)))
        .collect();

    let round = resolve(&transmitting, &active, config, sucre, mode, book, rng);

    let mut admitted = vec![false; transmitting.len()];
    for p3 in &round.phase3_contenders {
        if let [only] = p3.as_slice() {
            admitted[*only] = true;
        }
    }
    let mut concluded = Vec::new();
    for (i, &d) in transmitting.iter().enumerate() {
        let attempts = match pending.state(d) {
            RequestState::Idle => 1,
            RequestState::Backlogged { attempts } => attempts + 1,
        };
        if admitted[i] {
            concluded.push(Conclusion { device: d, attempts, admitted: true });
            pending.set(d, RequestState::Idle);
        } else if attempts >= sucre.max_attempts {
            concluded.push(Conclusion { device: d, attempts, admitted: false });
            pending.set(d, RequestState::Idle);
        } else {
            pending.set(d, RequestState::Backlogged { attempts });
        }
    }
    let round = AccessRound {
        contenders: to_ids(&round.contenders, &transmitting),
        phase3_contenders: to_ids(&round.phase3_contenders, &transmitting),
        admitted: admitted
            .iter()
            .zip(&transmitting)
            .filter_map(|(&a, &d)| a.then_some(d))
            .collect(),
        ..round
    };
    SlotOutcome { round, concluded }
}

fn to_ids(groups: &[Vec<usize>], ids: &[usize]) -> Vec<Vec<usize>> {
    groups.iter().map(|g| g.iter().map(|&i| ids[i]).collect()).collect()
}

/// Phases 1-3 on positions of `active`; the returned round is indexed by
/// position, not device id.
fn resolve(
    transmitting: &[usize],
    active: &[(f64, usize)],
    config: &SystemConfig,
    sucre: &SucreConfig,
    mode: AccessMode,
    book: &PilotBook,
    rng: &mut RandomStream,
) -> AccessRound {
    debug_assert_eq!(transmitting.len(), active.len());
    let tau = config.num_pilots;
    let signals = match (mode, sucre.estimator) {
        (AccessMode::Sucre, EstimatorMode::Noisy) => Some(phase1(active, config, book, true, rng)),
        _ => None,
    };
    let contenders = match &signals {
        Some(s) => s.contenders.clone(),
        None => {
            let mut c = vec![Vec::new(); tau];
            for (i, &(_, t)) in active.iter().enumerate() {
                c[t].push(i);
            }
            c
        }
    };
    let mut estimates = Vec::with_capacity(tau);
    let mut decisions = Vec::with_capacity(tau);
    let mut phase3 = Vec::with_capacity(tau);
    for group in &contenders {
        let (est, dec): (Vec<f64>, Vec<bool>) = match mode {
            AccessMode::Baseline => {
                let alone = group.len() == 1;
                group.iter().map(|&i| (active[i].0, alone)).unzip()
            }
            AccessMode::Sucre => {
                let sum: f64 = group.iter().map(|&i| active[i].0).sum();
                group
                    .iter()
                    .map(|&i| {
                        let est = match &signals {
                            Some(s) => phase2_gain_estimate(i, active, s, config, sucre, rng),
                            None => sum,
                        };
                        (est, sucre_decision(active[i].0, est, sucre.decision_bias))
                    })
                    .unzip()
            }
        };
        phase3.push(group.iter().zip(&dec).filter_map(|(&i, &d)| d.then_some(i)).collect());
        estimates.push(est);
        decisions.push(dec);
    }
    AccessRound {
        contenders,
        sum_gain_estimates: estimates,
        decisions,
        phase3_contenders: phase3,
        admitted: Vec::new(),
    }
}

/// Parameters of a crowd experiment.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrowdScenario {
    pub num_devices: usize,
    pub activation_prob: f64,
    pub num_slots: usize,
    pub warmup_slots: usize,
}

impl Default for CrowdScenario {
    /// Crowd of 10 000 devices, one in a thousand active per slot.
    fn default() -> Self {
        Self::new(10_000, 0.001, 2000)
    }
}

impl CrowdScenario {
    pub fn new(num_devices: usize, activation_prob: f64, num_slots: usize) -> Self {
        Self { num_devices, activation_prob, num_slots, warmup_slots: DEFAULT_WARMUP_SLOTS }
    }
}

/// Steady-state statistics of a crowd run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrowdStats {
    /// Mean attempts over requests that ended (admitted or denied).
    pub mean_attempts: f64,
    pub admission_fraction: f64,
    /// Phase-1 collisions left with exactly one Phase-3 transmitter.
    pub resolution_fraction: f64,
    pub admitted: u64,
    pub denied: u64,
    pub collisions: u64,
    pub resolved: u64,
}

/// Simulates `num_slots` access occasions after the warm-up period.
pub fn run_crowd_scenario(
    scenario: &CrowdScenario,
    config: &SystemConfig,
    sucre: &SucreConfig,
    mode: AccessMode,
    rng: &mut RandomStream,
) -> CrowdStats {
    let population =
        crate::channel::sample_population(config, scenario.num_devices, scenario.activation_prob, rng);
    let book = PilotBook::dft(config.num_pilots);
    let mut pending = PendingState::new(population.len());
    let (mut admitted, mut denied, mut attempts) = (0u64, 0u64, 0u64);
    let (mut collisions, mut resolved) = (0u64, 0u64);
    for slot in 0..scenario.warmup_slots + scenario.num_slots {
        let out = run_access_slot(&population, config, sucre, mode, &mut pending, &book, rng);
        if slot < scenario.warmup_slots {
            continue;
        }
        for c in &out.concluded {
            attempts += u64::from(c.attempts);
            if c.admitted {
                admitted += 1;
            } else {
                denied += 1;
            }
        }
        collisions += out.round.collisions() as u64;
        resolved += out.round.resolved_collisions() as u64;
    }
    let ended = admitted + denied;
    let ratio = |a: u64, b: u64| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    CrowdStats {
        mean_attempts: ratio(attempts, ended),
        admission_fraction: ratio(admitted, ended),
        resolution_fraction: if collisions == 0 { 1.0 } else { ratio(resolved, collisions) },
        admitted,
        denied,
        collisions,
        resolved,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Device, Position};
    use crate::stream::seeded;

    fn population(gains: &[f64], p_a: f64) -> Population {
        Population {
            devices: gains
                .iter()
                .map(|&g| Device { position: Position::new(50.0, 0.0), path_gain: g })
                .collect(),
            activation_prob: p_a,
        }
    }

    #[test]
    fn decision_examples() {
        assert!(sucre_decision(3.0, 4.0, 0.0));
        assert!(!sucre_decision(1.0, 4.0, 0.0));
        assert!(!sucre_decision(2.0, 4.0, 0.0));
        assert!(!sucre_decision(3.0, 4.0, 1.5));
    }

    #[test]
    fn ideal_singleton_sees_full_array_gain() {
        let cfg = SystemConfig::default();
        let book = PilotBook::dft(cfg.num_pilots);
        let mut rng = seeded(1);
        let active = [(2.0, 3)];
        let s = phase1(&active, &cfg, &book, true, &mut rng);
        let est = phase2_gain_estimate(0, &active, &s, &cfg, &SucreConfig::default(), &mut rng);
        let m = cfg.num_antennas as f64;
        assert_eq!(m * active[0].0 / est, m);
    }

    #[test]
    fn ideal_equal_pair_splits_array_gain() {
        let cfg = SystemConfig::default();
        let book = PilotBook::dft(cfg.num_pilots);
        let mut rng = seeded(2);
        let active = [(1.5, 4), (1.5, 4)];
        let s = phase1(&active, &cfg, &book, true, &mut rng);
        let m = cfg.num_antennas as f64;
        for k in 0..2 {
            let est = phase2_gain_estimate(k, &active, &s, &cfg, &SucreConfig::default(), &mut rng);
            assert_eq!(m * active[k].0 / est, m / 2.0);
        }
    }

    #[test]
    fn phase1_noiseless_shapes() {
        let cfg = SystemConfig::default();
        let book = PilotBook::dft(cfg.num_pilots);
        let mut rng = seeded(3);
        let empty = phase1(&[], &cfg, &book, false, &mut rng);
        assert!(empty.correlated.iter().flatten().all(|c| c.norm() == 0.0));

        let active = [(1.0, 0), (0.5, 4), (2.0, 7)];
        let s = phase1(&active, &cfg, &book, false, &mut rng);
        let amp = (cfg.ul_power * cfg.num_pilots as f64).sqrt();
        for (i, &(_, t)) in active.iter().enumerate() {
            for (y, h) in s.correlated[t].iter().zip(&s.channels[i].0) {
                assert!((y - amp * h).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn pigeonhole_forces_a_collision() {
        let cfg = SystemConfig::default();
        let book = PilotBook::dft(cfg.num_pilots);
        let mut rng = seeded(4);
        let active: Vec<(f64, usize)> = (0..12).map(|_| (1.0, rng.random_range(0..10))).collect();
        let s = phase1(&active, &cfg, &book, false, &mut rng);
        assert!(s.contenders.iter().any(|c| c.len() >= 2));
    }

    #[test]
    fn noisy_estimate_never_below_own_gain() {
        let cfg = SystemConfig::default();
        let book = PilotBook::dft(cfg.num_pilots);
        let sucre = SucreConfig { estimator: EstimatorMode::Noisy, ..Default::default() };
        let mut rng = seeded(5);
        for _ in 0..200 {
            let active = [(0.01, 2), (50.0, 2)];
            let s = phase1(&active, &cfg, &book, true, &mut rng);
            for k in 0..2 {
                assert!(phase2_gain_estimate(k, &active, &s, &cfg, &sucre, &mut rng) >= active[k].0);
            }
        }
    }

    #[test]
    fn lone_device_is_admitted_first_try() {
        let cfg = SystemConfig::default();
        let book = PilotBook::dft(cfg.num_pilots);
        let pop = population(&[1.0], 1.0);
        let mut pending = PendingState::new(1);
        let mut rng = seeded(6);
        let out = run_access_slot(&pop, &cfg, &SucreConfig::default(), AccessMode::Sucre, &mut pending, &book, &mut rng);
        assert_eq!(out.round.admitted, vec![0]);
        assert_eq!(out.concluded, vec![Conclusion { device: 0, attempts: 1, admitted: true }]);
        assert_eq!(pending.state(0), RequestState::Idle);
    }

    #[test]
    fn strongest_of_pair_wins() {
        let cfg = SystemConfig { num_pilots: 1, ..Default::default() };
        let book = PilotBook::dft(1);
        let pop = population(&[3.0, 1.0], 1.0);
        let mut pending = PendingState::new(2);
        let mut rng = seeded(7);
        let out = run_access_slot(&pop, &cfg, &SucreConfig::default(), AccessMode::Sucre, &mut pending, &book, &mut rng);
        assert_eq!(out.round.admitted, vec![0]);
        assert_eq!(pending.state(1), RequestState::Backlogged { attempts: 1 });
        assert_eq!(out.round.resolved_collisions(), 1);
    }

    #[test]
    fn equal_pair_both_withdraw() {
        let cfg = SystemConfig { num_pilots: 1, ..Default::default() };
        let book = PilotBook::dft(1);
        let pop = population(&[2.0, 2.0], 1.0);
        let mut pending = PendingState::new(2);
        let mut rng = seeded(8);
        let out = run_access_slot(&pop, &cfg, &SucreConfig::default(), AccessMode::Sucre, &mut pending, &book, &mut rng);
        assert!(out.round.admitted.is_empty());
        assert!(out.round.phase3_contenders[0].is_empty());
        for d in 0..2 {
            assert_eq!(pending.state(d), RequestState::Backlogged { attempts: 1 });
        }
    }

    #[test]
    fn baseline_deadlocks_on_single_pilot() {
        let cfg = SystemConfig { num_pilots: 1, ..Default::default() };
        let book = PilotBook::dft(1);
        let pop = population(&[5.0, 1.0], 1.0);
        let sucre = SucreConfig { retry_prob: 1.0, max_attempts: 1000, ..Default::default() };
        let mut pending = PendingState::new(2);
        let mut rng = seeded(9);
        for _ in 0..500 {
            let out = run_access_slot(&pop, &cfg, &sucre, AccessMode::Baseline, &mut pending, &book, &mut rng);
            assert!(out.round.admitted.is_empty());
        }
    }

    #[test]
    fn denial_after_max_attempts() {
        let cfg = SystemConfig { num_pilots: 1, ..Default::default() };
        let book = PilotBook::dft(1);
        let pop = population(&[2.0, 2.0], 1.0);
        let sucre = SucreConfig { retry_prob: 1.0, max_attempts: 3, ..Default::default() };
        let mut pending = PendingState::new(2);
        let mut rng = seeded(10);
        let mut denied = Vec::new();
        for _ in 0..3 {
            let out = run_access_slot(&pop, &cfg, &sucre, AccessMode::Sucre, &mut pending, &book, &mut rng);
            denied.extend(out.concluded);
        }
        assert_eq!(denied.len(), 2);
        assert!(denied.iter().all(|c| !c.admitted && c.attempts == 3));
        assert_eq!(pending.backlog_len(), 0);
    }

    #[test]
    fn invalid_sucre_config_is_rejected() {
        let bad = SucreConfig { retry_prob: 0.0, ..Default::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("retry_prob"));
        let bad = SucreConfig { max_attempts: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
