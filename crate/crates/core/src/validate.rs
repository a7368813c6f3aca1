//! Self-test suite run by the `validate` subcommand and experiment kind.
//!
//! Each check compares a library routine against an independent computation
//! small enough to finish in seconds.

use std::collections::HashSet;

use rand::Rng;

use crate::channel::{Hexagon, SystemConfig};
use crate::coded_pilot::{binomial, detect_collision, noiseless_energy, CodedPilot, Detection};
use crate::crapid::{
    decodable_now, sic_decode, slot_sinr, smm_throughput, CrapidConfig, ReplicaFrame, SinrMode,
};
use crate::erapid::{ergodic_sum_rate, single_user_rate, ErapidConfig};
use crate::stream::{derive_stream, RandomStream};
use crate::sucre::sucre_decision;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

pub fn run_suite(rng: &mut RandomStream) -> Vec<CheckOutcome> {
    vec![
        stream_determinism(),
        sucre_rule(),
        hexagon_mean_distance(rng),
        coded_pilot_enumeration(),
        sic_brute_force(rng),
        sinr_asymptotic_vs_exact(rng),
        single_user_bound(rng),
        smm_examples(),
    ]
}

fn stream_determinism() -> CheckOutcome {
    let mut a = derive_stream(42, 1, 2, 3);
    let mut b = derive_stream(42, 1, 2, 3);
    let same = (0..1000).all(|_| a.random::<u64>() == b.random::<u64>());
    let mut c = derive_stream(42, 1, 2, 4);
    let differs = (0..4).any(|_| a.random::<u64>() != c.random::<u64>());
    outcome("stream_determinism", same && differs, String::new())
}

fn sucre_rule() -> CheckOutcome {
    let ok = sucre_decision(3.0, 4.0, 0.0) && !sucre_decision(1.0, 4.0, 0.0) && !sucre_decision(2.0, 4.0, 0.0);
    outcome("sucre_decision_rule", ok, String::new())
}

/// Sample mean distance against a midpoint-rule integral over the hexagon.
fn hexagon_mean_distance(rng: &mut RandomStream) -> CheckOutcome {
    let hex = Hexagon::new(SystemConfig::default().cell_radius);
    let n = 400;
    let (w, h) = (hex.circumradius, hex.apothem());
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..n {
        for j in 0..n {
            let p = crate::channel::Position::new(
                -w + (i as f64 + 0.5) * 2.0 * w / n as f64,
                -h + (j as f64 + 0.5) * 2.0 * h / n as f64,
            );
            if hex.contains(p) {
                sum += p.distance();
                count += 1;
            }
        }
    }
    let integral = sum / count as f64;
    let draws = 20_000;
    let sample = (0..draws).map(|_| hex.sample(rng).distance()).sum::<f64>() / draws as f64;
    let rel = (sample - integral).abs() / integral;
    outcome("hexagon_mean_distance", rel < 0.01, format!("sample {sample:.3} m, integral {integral:.3} m"))
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

/// Missed detections of a second device over all null-set pairs.
fn coded_pilot_enumeration() -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for tau in 2..=8 {
        for l in 1..tau {
            let sets = subsets(tau, l);
            let pilots: Vec<CodedPilot> = sets.iter().map(|s| CodedPilot::from_nulls(tau, s)).collect();
            let mut missed = 0usize;
            for a in &pilots {
                for b in &pilots {
                    let e = noiseless_energy(&[(a, 1.0), (b, 1.0)]);
                    if detect_collision(&e, l, 0.5) == Detection::NoCollision {
                        missed += 1;
                    }
                }
            }
            let rate = missed as f64 / (pilots.len() * pilots.len()) as f64;
            worst = worst.max((rate - 1.0 / binomial(tau as u64, l as u64)).abs());
        }
    }
    outcome("coded_pilot_missed_detection", worst < 1e-12, format!("max deviation {worst:e}"))
}

fn brute_force_decodable(frame: &ReplicaFrame, cfg: &CrapidConfig) -> usize {
    fn explore(frame: &mut ReplicaFrame, cfg: &CrapidConfig, seen: &mut HashSet<Vec<bool>>) -> usize {
        if !seen.insert(frame.decoded().to_vec()) {
            return 0;
        }
        let mut best = frame.decoded_count();
        for d in decodable_now(frame, cfg) {
            let mut next = frame.clone();
            next.cancel(d);
            best = best.max(explore(&mut next, cfg, seen));
        }
        best
    }
    explore(&mut frame.clone(), cfg, &mut HashSet::new())
}

fn random_small_frame(rng: &mut RandomStream, max_replicas: usize) -> (ReplicaFrame, CrapidConfig) {
    let devices = rng.random_range(1..=6);
    let slots = rng.random_range(1..=4);
    let pilots = rng.random_range(1..=3);
    let cfg = CrapidConfig {
        num_devices: devices,
        num_antennas: [8, 32, 400][rng.random_range(0..3)],
        num_pilots: pilots,
        frame_length: slots,
        code_rate: [0.5, 1.0][rng.random_range(0..2)],
        ..CrapidConfig::default()
    };
    let mut triples = Vec::new();
    for d in 0..devices {
        for s in 0..slots {
            if triples.len() < max_replicas && rng.random_bool(0.5) {
                triples.push((d, s, rng.random_range(0..pilots)));
            }
        }
    }
    let frame = ReplicaFrame::from_replicas(devices, slots, pilots, vec![1.0; devices], &triples)
        .expect("generated triples are valid");
    (frame, cfg)
}

fn sic_brute_force(rng: &mut RandomStream) -> CheckOutcome {
    let mut mismatches = 0;
    for _ in 0..100 {
        let (mut frame, cfg) = random_small_frame(rng, 12);
        let oracle = brute_force_decodable(&frame, &cfg);
        let got = sic_decode(&mut frame, &cfg).map(|r| r.decoded_count).unwrap_or(usize::MAX);
        if got != oracle {
            mismatches += 1;
        }
    }
    outcome("sic_matches_brute_force", mismatches == 0, format!("{mismatches} mismatching frames"))
}

fn sinr_asymptotic_vs_exact(rng: &mut RandomStream) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for &m in &[100usize, 400] {
        for _ in 0..5 {
            let pilots = 4;
            let n = rng.random_range(1..=4);
            let triples: Vec<_> = (0..n).map(|d| (d, 0, rng.random_range(0..pilots))).collect();
            let cfg = CrapidConfig { num_antennas: m, num_pilots: pilots, num_devices: n, frame_length: 1, ..CrapidConfig::default() };
            let frame = ReplicaFrame::from_replicas(n, 1, pilots, vec![1.0; n], &triples).expect("valid frame");
            let asym = slot_sinr(&frame, 0, &cfg, SinrMode::Asymptotic, rng);
            let exact = slot_sinr(&frame, 0, &cfg, SinrMode::Exact { draws: 1000, symbols: 64 }, rng);
            worst = worst.max((exact - asym).abs() / asym);
        }
    }
    outcome("sinr_asymptotic_vs_exact", worst < 0.10, format!("max relative error {worst:.3}"))
}

fn single_user_bound(rng: &mut RandomStream) -> CheckOutcome {
    let cfg = ErapidConfig {
        num_devices: 1,
        activation_prob: 1.0,
        gain_spread: 0.0,
        num_pilots: 10,
        mc_slots: 50,
        ..ErapidConfig::default()
    };
    let got = ergodic_sum_rate(&cfg, rng).sum_rate;
    let want = single_user_rate(&cfg, cfg.mean_gain);
    let rel = (got - want).abs() / want;
    outcome("single_user_bound", rel < 1e-9, format!("bound {got:.6}, closed form {want:.6}"))
}

fn smm_examples() -> CheckOutcome {
    let big = CrapidConfig { num_antennas: 400, num_pilots: 10, ..CrapidConfig::default() };
    let small = CrapidConfig { num_antennas: 4, ..big.clone() };
    let ok = smm_throughput(&big).throughput == 10.0 && smm_throughput(&small).throughput < 10.0;
    outcome("smm_examples", ok, String::new())
}
