//! On-off coded pilots for centralized collision detection.
//!
//! A coded pilot of length `tau` carries `l` null symbols at random
//! positions. A lone transmitter leaves exactly `l` silent positions at the
//! receiver; a superposition of devices with different null sets leaves
//! fewer.

use rand::seq::index;
use rand::Rng;

use crate::channel::complex_gaussian;

/// Default energy threshold as a multiple of the per-symbol noise energy.
pub const THRESHOLD_NOISE_MULTIPLE: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedPilot {
    /// `true` where the device transmits a non-zero symbol.
    pattern: Vec<bool>,
    null_positions: Vec<usize>,
}

impl CodedPilot {
    /// Builds a pilot from an explicit null set.
    pub fn from_nulls(len: usize, nulls: &[usize]) -> Self {
        let mut pattern = vec![true; len];
        for &n in nulls {
            assert!(n < len, "null position {n} outside length {len}");
            pattern[n] = false;
        }
        let null_positions: Vec<usize> = (0..len).filter(|&i| !pattern[i]).collect();
        Self { pattern, null_positions }
    }

    pub fn len(&self) -> usize {
        self.pattern.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pattern.is_empty()
    }

    pub fn pattern(&self) -> &[bool] {
        &self.pattern
    }

    pub fn null_positions(&self) -> &[usize] {
        &self.null_positions
    }

    pub fn useful_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.pattern[i]).collect()
    }
}

/// Draws `nulls` distinct null positions uniformly without replacement.
pub fn generate_coded_pilot<R: Rng + ?Sized>(len: usize, nulls: usize, rng: &mut R) -> CodedPilot {
    assert!(nulls > 0 && nulls < len, "need 0 < l < tau");
    let picks = index::sample(rng, len, nulls).into_vec();
    CodedPilot::from_nulls(len, &picks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detection {
    Collision,
    NoCollision,
    /// More silent positions than nulls: nobody (or too weak a device) sent.
    NoTransmission,
}

/// Counts positions whose energy is below `threshold` and compares with `l`.
pub fn detect_collision(energy: &[f64], nulls: usize, threshold: f64) -> Detection {
    assert!(threshold > 0.0, "threshold must be positive");
    let silent = energy.iter().filter(|&&e| e < threshold).count();
    match silent.cmp(&nulls) {
        std::cmp::Ordering::Less => Detection::Collision,
        std::cmp::Ordering::Equal => Detection::NoCollision,
        std::cmp::Ordering::Greater => Detection::NoTransmission,
    }
}

/// Noiseless received energy: sum of the transmit energies of the devices
/// active on each position. `tx` pairs a pilot with its received symbol energy.
pub fn noiseless_energy(tx: &[(&CodedPilot, f64)]) -> Vec<f64> {
    let len = tx.first().map_or(0, |(p, _)| p.len());
    let mut e = vec![0.0; len];
    for (pilot, energy) in tx {
        assert_eq!(pilot.len(), len);
        for (acc, &on) in e.iter_mut().zip(pilot.pattern()) {
            if on {
                *acc += energy;
            }
        }
    }
    e
}

/// Per-antenna average received energy of each position over `antennas`
/// receive antennas with Rayleigh fading and `CN(0, noise_power)` noise.
/// `tx` pairs a pilot with its mean received symbol energy.
pub fn received_energy<R: Rng + ?Sized>(
    tx: &[(&CodedPilot, f64)],
    len: usize,
    antennas: usize,
    noise_power: f64,
    rng: &mut R,
) -> Vec<f64> {
    assert!(antennas >= 1);
    let mut e = vec![0.0; len];
    for _ in 0..antennas {
        let fades: Vec<_> = tx.iter().map(|(_, g)| complex_gaussian(*g, rng)).collect();
        for (pos, acc) in e.iter_mut().enumerate() {
            let mut r = complex_gaussian(noise_power, rng);
            for ((pilot, _), h) in tx.iter().zip(&fades) {
                if pilot.pattern()[pos] {
                    r += h;
                }
            }
            *acc += r.norm_sqr();
        }
    }
    e.iter_mut().for_each(|v| *v /= antennas as f64);
    e
}

/// Binomial coefficient as `f64`.
pub fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
