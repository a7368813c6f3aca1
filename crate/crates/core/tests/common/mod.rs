//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use massive_ra::crapid::{CrapidConfig, ReplicaFrame};
use rand::Rng;

/// Contaminated-MRC SINR written out from scratch: unit transmit power, noise
/// `1/snr`, estimate normalizer `sum of gains on the pilot + noise / tau_p`.
pub fn oracle_sinr(m: f64, tau_p: f64, snr: f64, own: f64, same: &[f64], others: f64) -> f64 {
    let noise = 1.0 / snr;
    let g = own + same.iter().sum::<f64>() + noise / tau_p;
    let coherent: f64 = same.iter().map(|b| m * b * b / g).sum();
    (m * own * own / g) / (coherent + same.iter().sum::<f64>() + others + noise)
}

pub fn oracle_decodable(frame: &ReplicaFrame, cfg: &CrapidConfig, decoded: &[bool]) -> Vec<usize> {
    let threshold = 2f64.powf(2.0 * cfg.code_rate) - 1.0;
    let snr = 10f64.powf(cfg.snr_db / 10.0);
    let mut out = HashSet::new();
    for r in frame.replicas() {
        if decoded[r.device] {
            continue;
        }
        let mut same = Vec::new();
        let mut others = 0.0;
        for q in frame.replicas() {
            if q.slot != r.slot || q.device == r.device || decoded[q.device] {
                continue;
            }
            if q.pilot == r.pilot {
                same.push(frame.gain(q.device));
            } else {
                others += frame.gain(q.device);
            }
        }
        let s = oracle_sinr(cfg.num_antennas as f64, cfg.num_pilots as f64, snr, frame.gain(r.device), &same, others);
        if s >= threshold {
            out.insert(r.device);
        }
    }
    let mut v: Vec<usize> = out.into_iter().collect();
    v.sort_unstable();
    v
}

/// Largest decoded set reachable by any cancellation order.
pub fn brute_force(frame: &ReplicaFrame, cfg: &CrapidConfig) -> Vec<bool> {
    fn go(frame: &ReplicaFrame, cfg: &CrapidConfig, decoded: Vec<bool>, seen: &mut HashSet<Vec<bool>>, best: &mut Vec<bool>) {
        if !seen.insert(decoded.clone()) {
            return;
        }
        let count = |d: &[bool]| d.iter().filter(|&&x| x).count();
        if count(&decoded) > count(best) {
            *best = decoded.clone();
        }
        for d in oracle_decodable(frame, cfg, &decoded) {
            let mut next = decoded.clone();
            next[d] = true;
            go(frame, cfg, next, seen, best);
        }
    }
    let start = vec![false; frame.num_devices()];
    let mut best = start.clone();
    go(frame, cfg, start, &mut HashSet::new(), &mut best);
    best
}

pub fn random_frame(rng: &mut impl Rng, max_replicas: usize) -> (ReplicaFrame, CrapidConfig) {
    let devices = rng.random_range(1..=7);
    let slots = rng.random_range(1..=4);
    let pilots = rng.random_range(1..=3);
    let cfg = CrapidConfig {
        num_devices: devices,
        num_antennas: [4, 16, 64, 400][rng.random_range(0..4)],
        num_pilots: pilots,
        frame_length: slots,
        code_rate: [0.25, 0.5, 1.0][rng.random_range(0..3)],
        snr_db: [0.0, 10.0][rng.random_range(0..2)],
        ..CrapidConfig::default()
    };
    let gains: Vec<f64> = (0..devices).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut triples = Vec::new();
    for d in 0..devices {
        for s in 0..slots {
            if triples.len() < max_replicas && rng.random_bool(0.5) {
                triples.push((d, s, rng.random_range(0..pilots)));
            }
        }
    }
    (ReplicaFrame::from_replicas(devices, slots, pilots, gains, &triples).unwrap(), cfg)
}

/// Missed-detection rate of two uniformly drawn null sets, by enumeration,
/// as `(rate, 1 / C(tau, l))`.
pub fn enumerate_missed_detection(tau: usize, l: usize) -> (f64, f64) {
    use massive_ra::coded_pilot::{detect_collision, noiseless_energy, CodedPilot, Detection};
    let sets: Vec<Vec<usize>> = (0u32..1 << tau)
        .filter(|m| m.count_ones() as usize == l)
        .map(|m| (0..tau).filter(|i| m >> i & 1 == 1).collect())
        .collect();
    let pilots: Vec<CodedPilot> = sets.iter().map(|s| CodedPilot::from_nulls(tau, s)).collect();
    let mut missed = 0u64;
    for a in &pilots {
        for b in &pilots {
            let e = noiseless_energy(&[(a, 1.0), (b, 0.7)]);
            if detect_collision(&e, l, 1e-9) != Detection::Collision {
                missed += 1;
            }
        }
    }
    let n = pilots.len() as f64;
    let mut c = 1u128;
    for i in 0..l {
        c = c * (tau - i) as u128 / (i + 1) as u128;
    }
    (missed as f64 / (n * n), 1.0 / c as f64)
}

/// Use-and-then-forget bound of one always-active device on a clean pilot:
/// MRC on an MMSE-quality estimate, the estimate error and noise as interference.
pub fn single_user_oracle(m: f64, tau_p: f64, tau_u: f64, beta: f64, noise: f64) -> f64 {
    let quality = tau_p * beta * beta / (tau_p * beta + noise);
    (1.0 - tau_p / tau_u) * (1.0 + m * quality / (beta + noise)).log2()
}
