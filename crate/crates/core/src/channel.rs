//! Cell geometry, fading, pilot books and pilot correlation.
//!
//! Conventions: the base station sits at the origin of a flat-top regular
//! hexagon whose circumradius is `cell_radius`. Powers are linear and
//! normalized so that a device on a hexagon vertex (distance equal to the
//! circumradius) sees the configured cell-edge SNR when shadowing is off.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Deserialize;

use crate::error::ConfigError;
use crate::stream::RandomStream;

/// Distances closer than this are clamped before applying the pathloss law.
pub const MIN_DISTANCE_M: f64 = 10.0;

/// Converts decibels to a linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Physical-layer parameters shared by every protocol.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub num_antennas: usize,
    pub num_pilots: usize,
    /// Symbols per coherence slot.
    pub slot_length: usize,
    /// Hexagon circumradius in meters.
    pub cell_radius: f64,
    pub pathloss_exponent: f64,
    /// Average SNR of a device on the cell edge, in dB.
    pub edge_snr_db: f64,
    /// Uplink transmit power, linear.
    pub ul_power: f64,
    /// Receiver noise power, linear.
    pub noise_power: f64,
    /// Lognormal shadowing standard deviation in dB; zero disables it.
    pub shadowing_std_db: f64,
}

impl Default for SystemConfig {
    /// The crowd scenario: 100 antennas, 10 access pilots, 250 m cell,
    /// 0 dB cell-edge SNR, no shadowing.
    fn default() -> Self {
        Self {
            num_antennas: 100,
            num_pilots: 10,
            slot_length: 200,
            cell_radius: 250.0,
            pathloss_exponent: 3.76,
            edge_snr_db: 0.0,
            ul_power: 1.0,
            noise_power: 1.0,
            shadowing_std_db: 0.0,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_antennas == 0 {
            return Err(ConfigError::invalid("num_antennas", "must be at least 1"));
        }
        if self.num_pilots == 0 || self.num_pilots > self.slot_length {
            return Err(ConfigError::invalid(
                "num_pilots",
                "must satisfy 1 <= num_pilots <= slot_length",
            ));
        }
        if !(self.cell_radius > 0.0) {
            return Err(ConfigError::invalid("cell_radius", "must be positive"));
        }
        if !(self.pathloss_exponent > 0.0) {
            return Err(ConfigError::invalid("pathloss_exponent", "must be positive"));
        }
        if !(self.ul_power > 0.0) {
            return Err(ConfigError::invalid("ul_power", "must be positive"));
        }
        if !(self.noise_power > 0.0) {
            return Err(ConfigError::invalid("noise_power", "must be positive"));
        }
        if !(self.shadowing_std_db >= 0.0) {
            return Err(ConfigError::invalid("shadowing_std_db", "must be non-negative"));
        }
        if !self.edge_snr_db.is_finite() {
            return Err(ConfigError::invalid("edge_snr_db", "must be finite"));
        }
        Ok(())
    }

    /// Pathloss constant `C` such that `p * C * R^-alpha / sigma^2` equals the
    /// linear cell-edge SNR.
    pub fn pathloss_constant(&self) -> f64 {
        db_to_linear(self.edge_snr_db) * self.noise_power / self.ul_power
            * self.cell_radius.powf(self.pathloss_exponent)
    }

    /// Shadowing-free gain at distance `d` (clamped at [`MIN_DISTANCE_M`]).
    pub fn deterministic_gain(&self, distance: f64) -> f64 {
        let d = distance.max(MIN_DISTANCE_M);
        self.pathloss_constant() * d.powf(-self.pathloss_exponent)
    }
}

/// A point in the cell plane, meters, BS at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Flat-top regular hexagon centered at the origin.
#[derive(Debug, Clone, Copy)]
pub struct Hexagon {
    pub circumradius: f64,
}

impl Hexagon {
    pub fn new(circumradius: f64) -> Self {
        Self { circumradius }
    }

    pub fn apothem(&self) -> f64 {
        self.circumradius * 3f64.sqrt() / 2.0
    }

    pub fn area(&self) -> f64 {
        1.5 * 3f64.sqrt() * self.circumradius * self.circumradius
    }

    pub fn vertices(&self) -> [Position; 6] {
        std::array::from_fn(|i| {
            let a = i as f64 * PI / 3.0;
            Position::new(self.circumradius * a.cos(), self.circumradius * a.sin())
        })
    }

    pub fn contains(&self, p: Position) -> bool {
        let (x, y) = (p.x.abs(), p.y.abs());
        let s3 = 3f64.sqrt();
        let eps = 1e-9 * self.circumradius;
        y <= self.apothem() + eps && s3 * x + y <= s3 * self.circumradius + eps
    }

    /// Uniform point by rejection from the bounding box.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Position {
        let (w, h) = (self.circumradius, self.apothem());
        loop {
            let p = Position::new(rng.random_range(-w..w), rng.random_range(-h..h));
            if self.contains(p) {
                return p;
            }
        }
    }
}

/// A device of the population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Device {
    pub position: Position,
    pub path_gain: f64,
}

#[derive(Debug, Clone)]
pub struct Population {
    pub devices: Vec<Device>,
    pub activation_prob: f64,
}

impl Population {
    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn gains(&self) -> impl Iterator<Item = f64> + '_ {
        self.devices.iter().map(|d| d.path_gain)
    }
}

/// Draws `num_devices` devices uniformly in the hexagonal cell.
pub fn sample_population(
    config: &SystemConfig,
    num_devices: usize,
    activation_prob: f64,
    rng: &mut RandomStream,
) -> Population {
    assert!(num_devices >= 1, "population needs at least one device");
    assert!((0.0..=1.0).contains(&activation_prob), "activation_prob outside [0, 1]");
    let hex = Hexagon::new(config.cell_radius);
    let devices = (0..num_devices)
        .map(|_| {
            let position = hex.sample(rng);
            let path_gain = path_gain(position, config, rng);
            Device { position, path_gain }
        })
        .collect();
    Population { devices, activation_prob }
}

/// Large-scale gain `C d^-alpha 10^(X/10)` with `X ~ N(0, shadowing_std_db^2)`.
///
/// No randomness is consumed when shadowing is disabled.
pub fn path_gain<R: Rng + ?Sized>(position: Position, config: &SystemConfig, rng: &mut R) -> f64 {
    let base = config.deterministic_gain(position.distance());
    if config.shadowing_std_db > 0.0 {
        let shadow = Normal::new(0.0, config.shadowing_std_db)
            .expect("validated std")
            .sample(rng);
        base * db_to_linear(shadow)
    } else {
        base
    }
}

/// Small-scale fading realization of one device in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector(pub Vec<Complex64>);

impl ChannelVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Hermitian inner product `self^H other`.
    pub fn inner(&self, other: &[Complex64]) -> Complex64 {
        inner(&self.0, other)
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }
}

/// `a^H b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// One circularly-symmetric complex Gaussian sample of the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Rayleigh block-fading channel: `M` i.i.d. `CN(0, beta)` coefficients.
pub fn draw_channel<R: Rng + ?Sized>(gain: f64, num_antennas: usize, rng: &mut R) -> ChannelVector {
    assert!(gain > 0.0, "path gain must be positive");
    ChannelVector((0..num_antennas).map(|_| complex_gaussian(gain, rng)).collect())
}

/// Orthogonal unit-norm pilot sequences: the columns of the unitary DFT matrix.
#[derive(Debug, Clone)]
pub struct PilotBook {
    sequences: Vec<Vec<Complex64>>,
}

impl PilotBook {
    pub fn dft(num_pilots: usize) -> Self {
        assert!(num_pilots >= 1);
        let n = num_pilots as f64;
        let sequences = (0..num_pilots)
            .map(|t| {
                (0..num_pilots)
                    .map(|k| Complex64::from_polar(1.0 / n.sqrt(), -2.0 * PI * (t * k) as f64 / n))
                    .collect()
            })
            .collect();
        Self { sequences }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequence(&self, t: usize) -> &[Complex64] {
        &self.sequences[t]
    }
}

/// Received pilot block `Y` (`tau_p x M`): every device sends `sqrt(p tau_p) s_t`
/// over its channel, plus `CN(0, sigma^2)` noise when `with_noise` is set.
pub fn receive_pilots<'a, I, R>(
    transmissions: I,
    config: &SystemConfig,
    book: &PilotBook,
    with_noise: bool,
    rng: &mut R,
) -> Array2<Complex64>
where
    I: IntoIterator<Item = (usize, &'a ChannelVector)>,
    R: Rng + ?Sized,
{
    let (tau, m) = (book.len(), config.num_antennas);
    let amp = (config.ul_power * tau as f64).sqrt();
    let mut rx = Array2::<Complex64>::zeros((tau, m));
    for (pilot, h) in transmissions {
        assert_eq!(h.len(), m, "channel length differs from num_antennas");
        let s = book.sequence(pilot);
        for (n, &sn) in s.iter().enumerate() {
            for (a, &ha) in h.0.iter().enumerate() {
                rx[[n, a]] += amp * sn * ha;
            }
        }
    }
    if with_noise {
        rx.mapv_inplace(|v| v + complex_gaussian(config.noise_power, rng));
    }
    rx
}

/// Correlates the received block with pilot `t`: `y_t = Y^T s_t^*`.
pub fn pilot_correlate(rx: &Array2<Complex64>, pilot_index: usize, book: &PilotBook) -> Vec<Complex64> {
    assert_eq!(rx.nrows(), book.len(), "received block and pilot book disagree on tau_p");
    assert!(pilot_index < book.len(), "pilot index out of range");
    let s = book.sequence(pilot_index);
    let mut y = vec![Complex64::new(0.0, 0.0); rx.ncols()];
    for (row, sn) in rx.outer_iter().zip(s) {
        let w = sn.conj();
        for (acc, v) in y.iter_mut().zip(row.iter()) {
            *acc += v * w;
        }
    }
    y
}
