//! Maximum ratio combining with contaminated pilot estimates.
//!
//! The BS combines with the correlated pilot vector `y_t` of the pilot the
//! device used. With `gamma = sum of gains on the pilot + sigma^2 / (p tau_p)`
//! the large-M deterministic equivalent of the post-combining SINR of device
//! `k` is
//!
//! ```text
//!            p M beta_k^2 / gamma
//! -----------------------------------------------------------
//! p M sum_{same pilot j != k} beta_j^2 / gamma + p sum_{j != k} beta_j + sigma^2
//! ```
//!
//! where the second sum runs over every other transmitting device.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{complex_gaussian, draw_channel, inner, pilot_correlate, receive_pilots, PilotBook, SystemConfig};

/// Array size, powers and pilot length seen by the combiner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub num_antennas: usize,
    pub num_pilots: usize,
    pub ul_power: f64,
    pub noise_power: f64,
}

impl LinkBudget {
    pub fn new(num_antennas: usize, num_pilots: usize, ul_power: f64, noise_power: f64) -> Self {
        Self { num_antennas, num_pilots, ul_power, noise_power }
    }

    /// Power-controlled link: unit gains, unit power, noise set by the SNR.
    pub fn power_controlled(num_antennas: usize, num_pilots: usize, snr_linear: f64) -> Self {
        Self::new(num_antennas, num_pilots, 1.0, 1.0 / snr_linear)
    }

    /// Estimation normalizer for a pilot carrying total gain `pilot_gain`.
    pub fn gamma(&self, pilot_gain: f64) -> f64 {
        pilot_gain + self.noise_power / (self.ul_power * self.num_pilots as f64)
    }

    fn as_system(&self) -> SystemConfig {
        SystemConfig {
            num_antennas: self.num_antennas,
            num_pilots: self.num_pilots,
            slot_length: self.num_pilots,
            ul_power: self.ul_power,
            noise_power: self.noise_power,
            ..SystemConfig::default()
        }
    }
}

/// Deterministic-equivalent SINR.
///
/// `own` is the device's gain, `same_pilot` the gains of the other devices on
/// its pilot, `other_pilots` the summed gain of everybody else in the slot.
pub fn contaminated_mrc_sinr(link: &LinkBudget, own: f64, same_pilot: &[f64], other_pilots: f64) -> f64 {
    let m = link.num_antennas as f64;
    let p = link.ul_power;
    let contam_sum: f64 = same_pilot.iter().sum();
    let contam_sq: f64 = same_pilot.iter().map(|b| b * b).sum();
    let gamma = link.gamma(own + contam_sum);
    let signal = p * m * own * own / gamma;
    let interference = p * m * contam_sq / gamma + p * (contam_sum + other_pilots) + link.noise_power;
    signal / interference
}

/// Same-pilot contamination reduced to sufficient statistics: the count of
/// contaminators does not matter, only the sums of gains and squared gains.
pub fn contaminated_mrc_sinr_from_sums(
    link: &LinkBudget,
    own: f64,
    contam_sum: f64,
    contam_sq: f64,
    other_pilots: f64,
) -> f64 {
    let m = link.num_antennas as f64;
    let p = link.ul_power;
    let gamma = link.gamma(own + contam_sum);
    (p * m * own * own / gamma) / (p * m * contam_sq / gamma + p * (contam_sum + other_pilots) + link.noise_power)
}

/// Monte Carlo measurement of the post-MRC SINR of `target`.
///
/// Every draw realizes Rayleigh channels for all `transmitters`
/// (`(gain, pilot)` pairs), forms `y_t` through the pilot book, combines
/// `symbols` QPSK symbols per device and measures the SINR as the ratio of
/// the fitted signal power to the residual distortion, pooled over draws.
pub fn measure_mrc_sinr<R: Rng + ?Sized>(
    link: &LinkBudget,
    transmitters: &[(f64, usize)],
    target: usize,
    draws: usize,
    symbols: usize,
    rng: &mut R,
) -> f64 {
    assert!(target < transmitters.len());
    assert!(draws > 0 && symbols > 1);
    let sys = link.as_system();
    let book = PilotBook::dft(link.num_pilots);
    let amp = link.ul_power.sqrt();
    let qpsk = |rng: &mut R| {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Complex64::new(if rng.random_bool(0.5) { s } else { -s }, if rng.random_bool(0.5) { s } else { -s })
    };
    let (mut signal, mut distortion) = (0.0, 0.0);
    for _ in 0..draws {
        let channels: Vec<_> =
            transmitters.iter().map(|&(g, _)| draw_channel(g, link.num_antennas, rng)).collect();
        let rx = receive_pilots(
            transmitters.iter().zip(&channels).map(|(&(_, t), h)| (t, h)),
            &sys,
            &book,
            true,
            rng,
        );
        let v = pilot_correlate(&rx, transmitters[target].1, &book);
        let v_energy: f64 = v.iter().map(|c| c.norm_sqr()).sum();
        let gains: Vec<Complex64> = channels.iter().map(|h| amp * inner(&v, h.as_slice())).collect();
        let mut z = Vec::with_capacity(symbols);
        let mut x_target = Vec::with_capacity(symbols);
        for _ in 0..symbols {
            let mut acc = complex_gaussian(link.noise_power * v_energy, rng);
            for (j, g) in gains.iter().enumerate() {
                let x = qpsk(rng);
                if j == target {
                    x_target.push(x);
                }
                acc += g * x;
            }
            z.push(acc);
        }
        let a: Complex64 =
            z.iter().zip(&x_target).map(|(z, x)| z * x.conj()).sum::<Complex64>() / symbols as f64;
        // One complex gain is fitted, leaving `symbols - 1` degrees of freedom.
        let n = symbols as f64;
        let resid = z.iter().zip(&x_target).map(|(z, x)| (z - a * x).norm_sqr()).sum::<f64>()
            / (n - 1.0).max(1.0);
        signal += a.norm_sqr() - resid / n;
        distortion += resid;
    }
    signal / distortion
}
