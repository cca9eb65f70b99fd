use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ChannelError;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Position3D) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2))
            .sqrt()
    }

    pub fn offset(&self, dx: f64, dy: f64, dz: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.z + dz)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// How a transmitter moves along +y at `tx_speed_mps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    /// Unbounded straight line from the start position.
    Linear,
    /// Back-and-forth travel on a track of `track_m` metres centred on the
    /// start position, starting in the +y direction.
    Shuttle { track_m: f64 },
}

impl Trajectory {
    /// Displacement along the heading after travelling `path_m` metres.
    pub fn displacement(&self, path_m: f64) -> f64 {
        match *self {
            Trajectory::Linear => path_m,
            Trajectory::Shuttle { track_m } => {
                if track_m <= 0.0 {
                    return 0.0;
                }
                let half = track_m / 2.0;
                let u = (path_m + half).rem_euclid(2.0 * track_m);
                if u < track_m {
                    u - half
                } else {
                    3.0 * half - u
                }
            }
        }
    }
}

/// Geometry and radio parameters of the IRS-assisted uplink.
///
/// Transmitters are indexed Alices first, then Eves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub n_tx_antennas: usize,
    pub n_rx_antennas: usize,
    pub irs_rows: usize,
    pub irs_cols: usize,
    pub carrier_ghz: f64,
    pub rice_kappa_h: f64,
    pub rice_kappa_g: f64,
    /// Recorded for completeness; the model is narrowband flat fading.
    pub bandwidth_hz: f64,
    pub tx_speed_mps: f64,
    pub sample_rate_hz: f64,
    pub bob: Position3D,
    pub irs: Position3D,
    pub alices: Vec<Position3D>,
    pub eves: Vec<Position3D>,
    /// With `false` the cascade is replaced by a direct Rayleigh link.
    pub irs_enabled: bool,
    /// Seed for the IRS phase configuration, shared by every transmitter.
    pub irs_seed: u64,
    pub trajectory: Trajectory,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            n_tx_antennas: 4,
            n_rx_antennas: 3,
            irs_rows: 8,
            irs_cols: 16,
            carrier_ghz: 3.5,
            rice_kappa_h: 3.0,
            rice_kappa_g: 4.0,
            bandwidth_hz: 1e6,
            tx_speed_mps: 2.0,
            sample_rate_hz: 100.0,
            bob: Position3D::new(0.0, 0.0, 2.0),
            irs: Position3D::new(5.0, 50.0, 5.0),
            alices: vec![
                Position3D::new(10.0, 82.0, 0.0),
                Position3D::new(10.0, 84.0, 0.0),
                Position3D::new(10.0, 86.0, 0.0),
                Position3D::new(10.0, 88.0, 0.0),
            ],
            eves: vec![Position3D::new(10.0, 70.0, 0.0), Position3D::new(10.0, 95.0, 0.0)],
            irs_enabled: true,
            irs_seed: 2024,
            trajectory: Trajectory::Shuttle { track_m: 1.0 },
        }
    }
}

impl ChannelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ChannelError> {
        let cfg: ChannelConfig =
            toml::from_str(text).map_err(|e| ChannelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ChannelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ChannelError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("channel config serializes")
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / (self.carrier_ghz * 1e9)
    }

    pub fn irs_elements(&self) -> usize {
        self.irs_rows * self.irs_cols
    }

    /// Real fingerprint dimension `2·N_R·N_T`.
    pub fn fingerprint_dim(&self) -> usize {
        2 * self.n_rx_antennas * self.n_tx_antennas
    }

    pub fn n_transmitters(&self) -> usize {
        self.alices.len() + self.eves.len()
    }

    pub fn transmitter(&self, index: usize) -> Option<Position3D> {
        self.alices.iter().chain(&self.eves).nth(index).copied()
    }

    pub fn is_spoofer(&self, index: usize) -> bool {
        index >= self.alices.len()
    }

    /// Re-spaces the Alices along y around their current centroid.
    pub fn with_alice_spacing(&self, spacing_m: f64) -> Self {
        let mut cfg = self.clone();
        let n = cfg.alices.len();
        if n == 0 {
            return cfg;
        }
        let centroid = cfg.alices.iter().map(|p| p.y).sum::<f64>() / n as f64;
        for (k, p) in cfg.alices.iter_mut().enumerate() {
            p.y = centroid + (k as f64 - (n as f64 - 1.0) / 2.0) * spacing_m;
        }
        cfg
    }

    /// Keeps only the listed transmitters (indices into Alices-then-Eves).
    pub fn select_transmitters(&self, indices: &[usize]) -> Result<Self, ChannelError> {
        let mut cfg = self.clone();
        cfg.alices.clear();
        cfg.eves.clear();
        for &i in indices {
            let p = self
                .transmitter(i)
                .ok_or_else(|| ChannelError::Config(format!("no transmitter {i}")))?;
            if self.is_spoofer(i) {
                cfg.eves.push(p);
            } else {
                cfg.alices.push(p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |msg: String| Err(ChannelError::Config(msg));
        if self.n_tx_antennas == 0 || self.n_rx_antennas == 0 || self.irs_elements() == 0 {
            return bad("antenna and IRS element counts must be at least 1".into());
        }
        if !(self.carrier_ghz > 0.0) || !(self.sample_rate_hz > 0.0) {
            return bad("carrier frequency and sample rate must be positive".into());
        }
        if !(self.rice_kappa_h >= 0.0) || !(self.rice_kappa_g >= 0.0) {
            return bad("Rice factors must be non-negative".into());
        }
        if !(self.tx_speed_mps >= 0.0) || !self.tx_speed_mps.is_finite() {
            return bad("transmitter speed must be finite and non-negative".into());
        }
        if let Trajectory::Shuttle { track_m } = self.trajectory {
            if !(track_m >= 0.0) || !track_m.is_finite() {
                return bad("shuttle track length must be finite and non-negative".into());
            }
        }
        let all: Vec<Position3D> = self.alices.iter().chain(&self.eves).copied().collect();
        if all.is_empty() {
            return bad("at least one transmitter is required".into());
        }
        for p in all.iter().chain([&self.bob, &self.irs]) {
            if !p.is_finite() {
                return bad(format!("non-finite position {p:?}"));
            }
        }
        let half_wave = self.wavelength_m() / 2.0;
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if a.distance(b) <= half_wave {
                    return bad(format!(
                        "transmitters {a:?} and {b:?} are within half a wavelength"
                    ));
                }
            }
        }
        Ok(())
    }
}
