//! Versioned scenario files.
//!
//! ```json
//! {
//!   "schema": 1,
//!   "ofdm": { "bandwidth": 1e7, "subcarriers": 16, "tx_antennas": 6 },
//!   "geometry": {
//!     "nodes": [[35.35, -35.35], [-35.35, -35.35]],
//!     "targets": [[0, 0]],
//!     "users": [[0, -20]]
//!   },
//!   "power": {
//!     "per_antenna_power": 100, "comm_noise": 1, "sense_noise": 1,
//!     "sinr_threshold_db": 10,
//!     "amplitudes": { "average_power_db": 10, "seed": 1 }
//!   },
//!   "channel_seed": 7
//! }
//! ```
//!
//! Units are SI (meters, hertz, radians); amplitudes may instead be listed
//! explicitly as `[re, im]` pairs ordered `n` outer, `m` middle, `k` inner.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{db_to_linear, linear_to_db};
use crate::scenario::{presets::WAVELENGTH_M, Amplitudes, Geometry, OfdmConfig, Point, PowerConfig, Scenario};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: u32,
    pub ofdm: OfdmSection,
    pub geometry: GeometrySection,
    pub power: PowerSection,
    #[serde(default)]
    pub channel_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmSection {
    #[serde(default = "default_wavelength")]
    pub carrier_wavelength: f64,
    pub bandwidth: f64,
    pub subcarriers: usize,
    #[serde(default = "one")]
    pub symbols: usize,
    pub tx_antennas: usize,
    /// Defaults to `tx_antennas`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rx_antennas: Option<usize>,
    /// Defaults to half a wavelength.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub antenna_spacing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub nodes: Vec<Point<f64>>,
    /// Defaults to each node facing the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_orientations: Option<Vec<f64>>,
    pub targets: Vec<Point<f64>>,
    #[serde(default)]
    pub users: Vec<Point<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    pub per_antenna_power: f64,
    pub comm_noise: f64,
    pub sense_noise: f64,
    pub sinr_threshold_db: f64,
    pub amplitudes: AmplitudeSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AmplitudeSpec {
    Random { average_power_db: f64, seed: u64 },
    Explicit(Vec<[f64; 2]>),
}

fn default_wavelength() -> f64 {
    WAVELENGTH_M
}

fn one() -> usize {
    1
}

fn schema_error(pointer: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        pointer: pointer.to_string(),
        message: message.into(),
    }
}

impl ScenarioFile {
    /// Parses and validates a scenario file; errors carry the JSON pointer
    /// of the offending field.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(e.path());
            schema_error(&pointer, e.inner().to_string())
        })?;
        if file.schema != SCHEMA_VERSION {
            return Err(schema_error(
                "/schema",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", file.schema),
            ));
        }
        file.to_scenario()?;
        Ok(file)
    }

    pub fn to_scenario(&self) -> Result<Scenario<f64>> {
        let g = &self.geometry;
        let (n, k) = (g.nodes.len(), g.targets.len());
        let mut ofdm = OfdmConfig::new(self.ofdm.carrier_wavelength, self.ofdm.bandwidth, self.ofdm.subcarriers, self.ofdm.tx_antennas);
        ofdm.symbols = self.ofdm.symbols;
        if let Some(m) = self.ofdm.rx_antennas {
            ofdm.rx_antennas = m;
        }
        if let Some(d) = self.ofdm.antenna_spacing {
            ofdm.antenna_spacing = d;
        }
        ofdm.validate().map_err(|e| schema_error("/ofdm", e.to_string()))?;
        let mut geometry = Geometry::new(g.nodes.clone(), g.targets.clone(), g.users.clone());
        if let Some(o) = &g.node_orientations {
            if o.len() != n {
                return Err(schema_error(
                    "/geometry/node_orientations",
                    format!("expected {n} orientations, got {}", o.len()),
                ));
            }
            geometry.node_orientations = o.clone();
        }
        geometry.validate().map_err(|e| schema_error("/geometry", e.to_string()))?;
        let p = &self.power;
        let amplitudes = match &p.amplitudes {
            AmplitudeSpec::Random { average_power_db, seed } => Amplitudes::random(n, k, *average_power_db, *seed),
            AmplitudeSpec::Explicit(v) => {
                Amplitudes::from_values(n, k, v.iter().map(|z| Complex::new(z[0], z[1])).collect())
                    .map_err(|e| schema_error("/power/amplitudes", e.to_string()))?
            }
        };
        let power = PowerConfig {
            per_antenna_power: p.per_antenna_power,
            comm_noise: p.comm_noise,
            sense_noise: p.sense_noise,
            sinr_threshold: db_to_linear(p.sinr_threshold_db),
            amplitudes,
        };
        power.validate(n, k).map_err(|e| schema_error("/power", e.to_string()))?;
        let scn = Scenario {
            ofdm,
            geometry,
            power,
            channel_seed: self.channel_seed,
        };
        scn.validate()?;
        Ok(scn)
    }

    /// File form of a scenario; amplitudes are written explicitly.
    pub fn from_scenario(scn: &Scenario<f64>) -> Self {
        let o = &scn.ofdm;
        Self {
            schema: SCHEMA_VERSION,
            ofdm: OfdmSection {
                carrier_wavelength: o.carrier_wavelength,
                bandwidth: o.bandwidth,
                subcarriers: o.subcarriers,
                symbols: o.symbols,
                tx_antennas: o.tx_antennas,
                rx_antennas: Some(o.rx_antennas),
                antenna_spacing: Some(o.antenna_spacing),
            },
            geometry: GeometrySection {
                nodes: scn.geometry.nodes.clone(),
                node_orientations: Some(scn.geometry.node_orientations.clone()),
                targets: scn.geometry.targets.clone(),
                users: scn.geometry.users.clone(),
            },
            power: PowerSection {
                per_antenna_power: scn.power.per_antenna_power,
                comm_noise: scn.power.comm_noise,
                sense_noise: scn.power.sense_noise,
                sinr_threshold_db: linear_to_db(scn.power.sinr_threshold),
                amplitudes: AmplitudeSpec::Explicit(scn.power.amplitudes.values().iter().map(|z| [z.re, z.im]).collect()),
            },
            channel_seed: scn.channel_seed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Reads and validates a scenario file from disk.
pub fn load_scenario(path: &std::path::Path) -> Result<Scenario<f64>> {
    ScenarioFile::parse(&std::fs::read_to_string(path)?)?.to_scenario()
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}
