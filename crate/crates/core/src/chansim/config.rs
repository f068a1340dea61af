//! Scenario configuration files.
//!
//! Scenarios are described in TOML. A minimal static-sweep file:
//!
//! ```toml
//! mode = "static"
//! seed = 7
//! devices = 10
//! sounding_rate_hz = 2.0
//! duration_s = 20.0
//!
//! [room]
//! width_m = 6.0
//! depth_m = 5.0
//! reflection = 0.65
//!
//! [beamformer]
//! position = [3.0, 1.0]
//! antennas = 3
//!
//! [[beamformees]]
//! id = "bfee1"
//! position = [2.8, 3.0]
//! antennas = 2
//! streams = 2
//! step = [-0.1, 0.0]
//!
//! [static]
//! positions = 9
//! ```

use super::geometry::Room;
use super::SimError;
use serde::{Deserialize, Serialize};
use std::path::Path;

fn default_f_c() -> f64 {
    5.21e9
}
fn default_bandwidth() -> u16 {
    80
}
fn default_b_phi() -> u8 {
    9
}
fn default_rate() -> f64 {
    2.0
}
fn default_duration() -> f64 {
    20.0
}
fn default_snr() -> Option<f64> {
    Some(25.0)
}
fn default_devices() -> usize {
    10
}
fn default_symbol_period() -> f64 {
    // 3.2 us, the inverse of the 312.5 kHz subcarrier spacing.
    3.2e-6
}

/// Per-sounding and per-device impairment magnitudes. Persistent phase
/// offsets are always drawn uniformly over the circle; the knobs here
/// bound the timing terms and the smooth gain ripple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpairmentConfig {
    /// Max |sampling frequency offset| in seconds.
    pub sfo_max_s: f64,
    /// Max packet detection delay in seconds.
    pub pdd_max_s: f64,
    /// Std-dev of the cubic amplitude ripple coefficients.
    pub ripple_amp_sigma: f64,
    /// Std-dev of the cubic phase ripple coefficients, radians.
    pub ripple_phase_sigma: f64,
}

impl Default for ImpairmentConfig {
    fn default() -> Self {
        Self {
            sfo_max_s: 50e-9,
            pdd_max_s: 100e-9,
            ripple_amp_sigma: 0.02,
            ripple_phase_sigma: 0.05,
        }
    }
}

impl ImpairmentConfig {
    /// Configuration with every impairment zeroed out.
    pub fn disabled() -> Self {
        Self {
            sfo_max_s: 0.0,
            pdd_max_s: 0.0,
            ripple_amp_sigma: 0.0,
            ripple_phase_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioMode {
    /// Beamformees swept over indexed positions, beamformer fixed.
    Static,
    /// Beamformer walks a waypoint route; beamformees fixed.
    Mobility,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamformerConfig {
    pub position: [f64; 2],
    pub antennas: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamformeeConfig {
    pub id: String,
    pub position: [f64; 2],
    pub antennas: usize,
    pub streams: usize,
    /// Per-position offset applied `(index - 1)` times in static mode.
    #[serde(default)]
    pub step: [f64; 2],
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StaticConfig {
    pub positions: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MobilityConfig {
    /// Route waypoints; traversed at constant speed over the trace.
    pub waypoints: Vec<[f64; 2]>,
    /// Std-dev of the per-trace Gaussian waypoint jitter, meters.
    pub jitter_m: f64,
    /// Trace counts per group.
    pub fix1: usize,
    pub fix2: usize,
    pub mob1: usize,
    pub mob2: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoomConfig {
    pub width_m: f64,
    pub depth_m: f64,
    pub reflection: f64,
}

impl RoomConfig {
    pub fn room(&self) -> Room {
        Room {
            width: self.width_m,
            depth: self.depth_m,
            reflection: self.reflection,
        }
    }
}

/// Top-level scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub mode: ScenarioMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_devices")]
    pub devices: usize,
    #[serde(default = "default_f_c")]
    pub f_c_hz: f64,
    #[serde(default = "default_symbol_period")]
    pub symbol_period_s: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_mhz: u16,
    #[serde(default = "default_b_phi")]
    pub b_phi: u8,
    #[serde(default = "default_rate")]
    pub sounding_rate_hz: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_snr")]
    pub noise_snr_db: Option<f64>,
    pub room: RoomConfig,
    pub beamformer: BeamformerConfig,
    pub beamformees: Vec<BeamformeeConfig>,
    #[serde(rename = "static")]
    pub static_sweep: Option<StaticConfig>,
    pub mobility: Option<MobilityConfig>,
    #[serde(default)]
    pub impairments: ImpairmentConfig,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        let cfg: Self =
            toml::from_str(s).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidScenario(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.devices < 2 {
            return Err(SimError::InvalidScenario(
                "need at least 2 devices to fingerprint".into(),
            ));
        }
        if self.beamformees.is_empty() {
            return Err(SimError::InvalidScenario("need at least one beamformee".into()));
        }
        for b in &self.beamformees {
            if b.streams == 0 || b.streams > b.antennas {
                return Err(SimError::InvalidScenario(format!(
                    "beamformee {}: streams must be in 1..=antennas",
                    b.id
                )));
            }
        }
        match self.mode {
            ScenarioMode::Static => {
                let sweep = self.static_sweep.ok_or_else(|| {
                    SimError::InvalidScenario("static mode needs a [static] section".into())
                })?;
                if sweep.positions == 0 {
                    return Err(SimError::InvalidScenario("positions must be >= 1".into()));
                }
            }
            ScenarioMode::Mobility => {
                let mob = self.mobility.as_ref().ok_or_else(|| {
                    SimError::InvalidScenario("mobility mode needs a [mobility] section".into())
                })?;
                if mob.waypoints.len() < 2 {
                    return Err(SimError::InvalidScenario(
                        "mobility route needs at least 2 waypoints".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Records the full run will emit (devices x traces x steps x
    /// beamformees).
    pub fn expected_records(&self) -> usize {
        let steps = (self.duration_s * self.sounding_rate_hz).round() as usize;
        self.devices * self.trace_count() * steps * self.beamformees.len()
    }

    pub fn trace_count(&self) -> usize {
        match self.mode {
            ScenarioMode::Static => self.static_sweep.map_or(0, |s| s.positions),
            ScenarioMode::Mobility => self
                .mobility
                .as_ref()
                .map_or(0, |m| m.fix1 + m.fix2 + m.mob1 + m.mob2),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const D1: &str = r#"
mode = "static"
seed = 7
devices = 4
sounding_rate_hz = 10.0
duration_s = 120.0

[room]
width_m = 6.0
depth_m = 5.0
reflection = 0.65

[beamformer]
position = [3.0, 1.0]
antennas = 3

[[beamformees]]
id = "bfee1"
position = [2.8, 3.0]
antennas = 2
streams = 2
step = [-0.1, 0.0]

[[beamformees]]
id = "bfee2"
position = [3.2, 3.0]
antennas = 2
streams = 2
step = [0.1, 0.0]

[static]
positions = 9
"#;

    #[test]
    fn parses_static_scenario_with_defaults() {
        let cfg = ScenarioConfig::from_toml_str(D1).unwrap();
        assert_eq!(cfg.f_c_hz, 5.21e9);
        assert_eq!(cfg.b_phi, 9);
        assert_eq!(cfg.beamformees.len(), 2);
        assert_eq!(cfg.trace_count(), 9);
    }

    #[test]
    fn record_count_arithmetic() {
        // 10 devices x 9 positions x 2 min at 10 soundings/s, one bfee.
        let mut cfg = ScenarioConfig::from_toml_str(D1).unwrap();
        cfg.devices = 10;
        cfg.beamformees.truncate(1);
        assert_eq!(cfg.expected_records(), 10 * 9 * 1200);
    }

    #[test]
    fn rejects_single_device() {
        let bad = D1.replace("devices = 4", "devices = 1");
        assert!(ScenarioConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn rejects_missing_mode_section() {
        let bad = D1.replace("[static]\npositions = 9", "");
        assert!(ScenarioConfig::from_toml_str(&bad).is_err());
    }
}
