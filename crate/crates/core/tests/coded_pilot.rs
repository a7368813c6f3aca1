use massive_ra::coded_pilot::{
    binomial, detect_collision, generate_coded_pilot, noiseless_energy, received_energy, CodedPilot, Detection,
    THRESHOLD_NOISE_MULTIPLE,
};
use massive_ra::stream::seeded;
use proptest::prelude::*;

mod common;
use common::enumerate_missed_detection;

#[test]
fn missed_detection_enumeration() {
    for tau in 2..=12 {
        for l in 1..tau {
            let (rate, want) = enumerate_missed_detection(tau, l);
            assert!((rate - want).abs() < 1e-12, "tau={tau} l={l}: {rate} vs {want}");
            assert!((binomial(tau as u64, l as u64) - 1.0 / want).abs() < 1e-9);
        }
    }
}

#[test]
fn random_pattern_collision_rate() {
    let mut rng = seeded(77);
    let n = 10_000;
    let hits = (0..n)
        .filter(|_| generate_coded_pilot(10, 3, &mut rng) == generate_coded_pilot(10, 3, &mut rng))
        .count();
    let p = 1.0 / 120.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((hits as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{hits}");
}

#[test]
fn lone_device_false_alarm_below_one_percent() {
    // Received pilot SNR 10 dB, threshold 5 sigma^2 on the per-antenna average
    // energy over the default 100-antenna array.
    let (tau, l, noise) = (10, 3, 1.0);
    let antennas = massive_ra::SystemConfig::default().num_antennas;
    let mut rng = seeded(5);
    let trials = 5_000;
    let mut alarms = 0;
    for _ in 0..trials {
        let p = generate_coded_pilot(tau, l, &mut rng);
        let e = received_energy(&[(&p, 10.0 * noise)], tau, antennas, noise, &mut rng);
        if detect_collision(&e, l, THRESHOLD_NOISE_MULTIPLE * noise) != Detection::NoCollision {
            alarms += 1;
        }
    }
    let rate = alarms as f64 / trials as f64;
    assert!(rate < 0.01, "false-alarm rate {rate}");
}

#[test]
fn boundary_pattern_has_one_useful_symbol() {
    let p = generate_coded_pilot(10, 9, &mut seeded(1));
    assert_eq!(p.useful_positions().len(), 1);
    assert_eq!(p.null_positions().len(), 9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn distinct_null_sets_always_collide(
        tau in 3usize..16,
        seed in any::<u64>(),
        extra in 1usize..5,
        l_frac in 0.05f64..0.95,
    ) {
        let l = ((l_frac * tau as f64) as usize).clamp(1, tau - 1);
        let mut rng = seeded(seed);
        let pilots: Vec<CodedPilot> = (0..=extra).map(|_| generate_coded_pilot(tau, l, &mut rng)).collect();
        prop_assume!(pilots.iter().any(|p| p != &pilots[0]));
        let tx: Vec<_> = pilots.iter().map(|p| (p, 1.0)).collect();
        prop_assert_eq!(detect_collision(&noiseless_energy(&tx), l, 1e-9), Detection::Collision);
    }

    #[test]
    fn lone_device_never_flagged_noiseless(tau in 2usize..20, seed in any::<u64>(), energy in 1e-3f64..1e3) {
        let l = 1 + (seed as usize) % (tau - 1);
        let p = generate_coded_pilot(tau, l, &mut seeded(seed));
        let e = noiseless_energy(&[(&p, energy)]);
        prop_assert_eq!(detect_collision(&e, l, energy / 2.0), Detection::NoCollision);
    }
}
