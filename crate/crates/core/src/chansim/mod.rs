//! Synthetic MU-MIMO sounding.
//!
//! Channels are geometric multipath sums evaluated per subcarrier: a
//! direct ray plus first-order wall reflections from a rectangular room.
//! Each simulated beamformer device carries a persistent set of hardware
//! impairments (its identity); per-sounding nuisances are re-drawn every
//! event. Sounding composes the channel, the impairments and the
//! beamforming codec into feedback frames and labeled dataset records.

mod config;
mod geometry;
mod sim;

pub use config::{ImpairmentConfig, ScenarioConfig, ScenarioMode};
pub use geometry::{image_method_paths, ula_positions, Room};
pub use sim::{
    add_noise, apply_impairments, generate_dataset, mac_from_label, sample_devices, sound,
    sound_detailed, synth_cfr, BeamformeeSounding, SoundingOutput,
};

#[cfg(test)]
pub(crate) use sim::test_support;

use ndarray::Array3;
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid path set: {0}")]
    InvalidPaths(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("sounding time {0} outside scenario duration")]
    OutOfRange(f64),
}

/// One propagation path: positive amplitude and non-negative delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub amplitude: f64,
    pub delay: f64,
}

/// Multipath description for every TX/RX antenna pair, plus the OFDM
/// parameters needed to evaluate the channel per subcarrier.
#[derive(Debug, Clone)]
pub struct PathSet {
    /// `paths[m][n]` lists the rays from TX antenna `m` to RX antenna `n`.
    pub paths: Vec<Vec<Vec<Path>>>,
    /// Carrier frequency in Hz.
    pub f_c: f64,
    /// OFDM symbol period in seconds (subcarrier spacing is `1/T`).
    pub symbol_period: f64,
    /// Subcarrier indices the channel is evaluated at.
    pub subcarriers: Vec<i16>,
}

impl PathSet {
    pub fn tx(&self) -> usize {
        self.paths.len()
    }

    pub fn rx(&self) -> usize {
        self.paths.first().map_or(0, |row| row.len())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.paths.is_empty() || self.rx() == 0 {
            return Err(SimError::InvalidPaths("need at least one antenna pair".into()));
        }
        for row in &self.paths {
            if row.len() != self.rx() {
                return Err(SimError::InvalidPaths("ragged antenna-pair table".into()));
            }
            for pair in row {
                if pair.is_empty() {
                    return Err(SimError::InvalidPaths("antenna pair without paths".into()));
                }
                for p in pair {
                    if !(p.amplitude > 0.0) || !(p.delay >= 0.0) {
                        return Err(SimError::InvalidPaths(format!(
                            "bad path A={} tau={}",
                            p.amplitude, p.delay
                        )));
                    }
                }
            }
        }
        if self.subcarriers.is_empty() || !(self.f_c > 0.0) || !(self.symbol_period > 0.0) {
            return Err(SimError::InvalidPaths("bad OFDM parameters".into()));
        }
        Ok(())
    }
}

/// Channel frequency response over (subcarrier, TX antenna, RX antenna).
#[derive(Debug, Clone)]
pub struct CfrTensor {
    pub values: Array3<Complex64>,
    pub subcarriers: Vec<i16>,
    pub symbol_period: f64,
}

impl CfrTensor {
    pub fn tx(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn rx(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Smooth per-antenna gain perturbation: cubic polynomials in the
/// normalized subcarrier index for amplitude and phase.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct RippleCoeffs {
    pub amplitude: [f64; 4],
    pub phase: [f64; 4],
}

impl RippleCoeffs {
    /// Evaluate at subcarrier `k` (normalized by the 80 MHz half-band).
    pub fn eval(&self, k: i16) -> Complex64 {
        let x = f64::from(k) / 128.0;
        let poly = |c: &[f64; 4]| c[0] + x * (c[1] + x * (c[2] + x * c[3]));
        Complex64::from_polar(1.0 + poly(&self.amplitude), poly(&self.phase))
    }

    pub fn is_zero(&self) -> bool {
        self.amplitude.iter().chain(&self.phase).all(|&c| c == 0.0)
    }
}

/// Persistent hardware identity of a simulated beamformer device.
///
/// Everything here except `cfo` stays fixed for the lifetime of the
/// device; `cfo` holds the draw for the current sounding event and is
/// replaced every event.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DeviceProfile {
    pub device_id: String,
    /// Carrier frequency offset phase for the current sounding, radians.
    pub cfo: f64,
    /// Sampling frequency offset, seconds.
    pub sfo: f64,
    /// Per-antenna PLL phase offsets, radians.
    pub ppo: Vec<f64>,
    /// Per-antenna phase ambiguity, multiples of pi.
    pub pa: Vec<f64>,
    /// Per-antenna smooth gain ripple.
    pub gain_ripple: Vec<RippleCoeffs>,
}

impl DeviceProfile {
    /// Antenna count the profile is sized for.
    pub fn antennas(&self) -> usize {
        self.ppo.len()
    }

    /// Draw a fresh persistent identity.
    pub fn sample(device_id: &str, antennas: usize, cfg: &ImpairmentConfig, rng: &mut impl Rng) -> Self {
        let ppo = (0..antennas).map(|_| rng.gen::<f64>() * std::f64::consts::TAU).collect();
        let pa = (0..antennas)
            .map(|_| if rng.gen_bool(0.5) { std::f64::consts::PI } else { 0.0 })
            .collect();
        let gain_ripple = (0..antennas)
            .map(|_| {
                let mut r = RippleCoeffs::default();
                for c in &mut r.amplitude {
                    *c = gaussian(rng) * cfg.ripple_amp_sigma;
                }
                for c in &mut r.phase {
                    *c = gaussian(rng) * cfg.ripple_phase_sigma;
                }
                r
            })
            .collect();
        Self {
            device_id: device_id.to_string(),
            cfo: rng.gen::<f64>() * std::f64::consts::TAU,
            sfo: (rng.gen::<f64>() * 2.0 - 1.0) * cfg.sfo_max_s,
            ppo,
            pa,
            gain_ripple,
        }
    }

    /// Copy with a freshly drawn per-sounding carrier offset.
    pub fn with_cfo(&self, cfo: f64) -> Self {
        Self {
            cfo,
            ..self.clone()
        }
    }

    /// Identity profile: applying it leaves the channel untouched.
    pub fn zero(device_id: &str, antennas: usize) -> Self {
        Self {
            device_id: device_id.to_string(),
            cfo: 0.0,
            sfo: 0.0,
            ppo: vec![0.0; antennas],
            pa: vec![0.0; antennas],
            gain_ripple: vec![RippleCoeffs::default(); antennas],
        }
    }
}

/// Receiver-side profile: identity, decoding delay, position and geometry.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BeamformeeProfile {
    pub beamformee_id: String,
    /// Packet detection delay for the current sounding, seconds.
    pub pdd: f64,
    /// Position in meters.
    pub position: [f64; 2],
    pub n_antennas: usize,
    pub n_ss: usize,
}

impl BeamformeeProfile {
    pub fn with_pdd(&self, pdd: f64) -> Self {
        Self {
            pdd,
            ..self.clone()
        }
    }

    pub fn at(&self, position: [f64; 2]) -> Self {
        Self {
            position,
            ..self.clone()
        }
    }
}

/// A timestamped beamformer position.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrackPoint {
    pub t: f64,
    pub position: [f64; 2],
}

/// One trace worth of simulation setup: geometry, the device under test,
/// the beamformee population and the sounding schedule.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub room: Room,
    pub f_c: f64,
    pub symbol_period: f64,
    pub subcarriers: Vec<i16>,
    pub bandwidth_mhz: u16,
    pub b_phi: u8,
    pub beamformer: DeviceProfile,
    /// Beamformer positions over the trace; a single point means static.
    pub track: Vec<TrackPoint>,
    pub tx_antennas: usize,
    pub beamformees: Vec<BeamformeeProfile>,
    pub sounding_rate: f64,
    pub duration: f64,
    /// Complex AWGN level added to the impaired channel; `None` disables.
    pub noise_snr_db: Option<f64>,
    pub impairments: ImpairmentConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.track.is_empty() {
            return Err(SimError::InvalidScenario("empty beamformer track".into()));
        }
        if self.track.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(SimError::InvalidScenario("track not monotone in time".into()));
        }
        if self.beamformer.antennas() != self.tx_antennas {
            return Err(SimError::InvalidScenario(format!(
                "device profile sized for {} antennas, scenario uses {}",
                self.beamformer.antennas(),
                self.tx_antennas
            )));
        }
        for b in &self.beamformees {
            if b.n_ss == 0 || b.n_ss > b.n_antennas {
                return Err(SimError::InvalidScenario(format!(
                    "beamformee {} needs 1 <= n_ss <= n_antennas",
                    b.beamformee_id
                )));
            }
        }
        Ok(())
    }

    /// Beamformer position at time `t`, linearly interpolated on the track.
    pub fn beamformer_position(&self, t: f64) -> [f64; 2] {
        let track = &self.track;
        if t <= track[0].t {
            return track[0].position;
        }
        for w in track.windows(2) {
            if t <= w[1].t {
                let span = w[1].t - w[0].t;
                let frac = if span > 0.0 { (t - w[0].t) / span } else { 0.0 };
                return [
                    w[0].position[0] + frac * (w[1].position[0] - w[0].position[0]),
                    w[0].position[1] + frac * (w[1].position[1] - w[0].position[1]),
                ];
            }
        }
        track.last().unwrap().position
    }
}

/// Box-Muller standard normal draw.
pub(crate) fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = loop {
        let v = rng.gen::<f64>();
        if v > 0.0 {
            break v;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Derive an independent sub-stream seed from a master seed and indices.
pub(crate) fn mix_seed(master: u64, a: u64, b: u64) -> u64 {
    splitmix64(master ^ splitmix64(a.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ splitmix64(b)))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
