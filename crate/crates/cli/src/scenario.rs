//! Scenario files: JSON documents naming a protocol, a link built from
//! hardware presets with per-field overrides, an eavesdropper and the
//! post-processing parameters.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use qkd_core::adversary::EveStrategy;
use qkd_core::postproc::PipelineParams;
use qkd_core::protocols::{Link, Protocol, ProtocolConfig};
use qkd_core::quantum::{presets, ChannelModel, DetectorModel, SourceModel};
use serde::{Deserialize, Serialize};

use crate::CliError;

const BUNDLED: &[(&str, &str)] = &[
    ("bb84_honest", include_str!("../scenarios/bb84_honest.cfg")),
    ("bb84_intercept", include_str!("../scenarios/bb84_intercept.cfg")),
    ("b92_usd", include_str!("../scenarios/b92_usd.cfg")),
    ("decoy_pns", include_str!("../scenarios/decoy_pns.cfg")),
    ("e91_honest", include_str!("../scenarios/e91_honest.cfg")),
    ("ingaas_50km", include_str!("../scenarios/ingaas_50km.cfg")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Text,
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format {s:?} (expected text, csv or json)")),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSpec {
    #[serde(default)]
    preset: Option<String>,
    #[serde(default)]
    length_km: f64,
    #[serde(default)]
    attenuation_db_per_km: Option<f64>,
    /// Fixed total channel transmittance; excludes preset and length.
    #[serde(default)]
    transmittance: Option<f64>,
    #[serde(default)]
    misalignment: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectorSpec {
    #[serde(default)]
    preset: Option<String>,
    #[serde(default)]
    efficiency: Option<f64>,
    #[serde(default)]
    dark_prob: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSpec {
    #[serde(default)]
    format: Option<Format>,
    #[serde(default)]
    path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    seed: Option<u64>,
    protocol: Protocol,
    num_pulses: usize,
    #[serde(default)]
    basis_bias: Option<f64>,
    #[serde(default)]
    source: SourceModel,
    #[serde(default)]
    channel: ChannelSpec,
    #[serde(default)]
    detector: DetectorSpec,
    #[serde(default)]
    eve: EveStrategy,
    #[serde(default)]
    pipeline: PipelineParams,
    #[serde(default)]
    output: OutputSpec,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub pulses: Option<usize>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

/// A fully resolved, validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub config: ProtocolConfig,
    pub link: Link,
    /// The channel was given as a bare transmittance, so it has no length axis.
    pub fixed_transmittance: bool,
    pub eve: EveStrategy,
    pub pipeline: PipelineParams,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

fn config_err(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn bundled(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".cfg").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Reads a scenario from a file, falling back to the bundled scenarios when
/// no such file exists.
pub fn load(arg: &str, overrides: &Overrides) -> Result<Scenario, CliError> {
    let path = Path::new(arg);
    let (text, default_name) = if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{arg}: {e}")))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(arg).to_string();
        (text, stem)
    } else if let Some(text) = bundled(arg) {
        (text.to_string(), arg.trim_end_matches(".cfg").to_string())
    } else {
        return Err(config_err(
            "scenario",
            format!("no file or bundled scenario named {arg:?} (bundled: {})", bundled_names().join(", ")),
        ));
    };
    parse(&text, &default_name, overrides)
}

pub fn parse(text: &str, default_name: &str, overrides: &Overrides) -> Result<Scenario, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_err(if path == "." { "scenario" } else { &path }, e.into_inner().to_string())
    })?;
    resolve(file, default_name, overrides)
}

fn resolve(file: ScenarioFile, default_name: &str, ov: &Overrides) -> Result<Scenario, CliError> {
    let seed = ov
        .seed
        .or(file.seed)
        .ok_or_else(|| config_err("seed", "a seed is required (in the scenario or via --seed)"))?;

    let mut config = ProtocolConfig::new(file.protocol, ov.pulses.unwrap_or(file.num_pulses));
    config.basis_bias = file.basis_bias;
    config.validate().map_err(|e| config_err("protocol", e.to_string()))?;

    file.source.validate().map_err(|e| config_err("source", e.to_string()))?;

    let ch = &file.channel;
    let fixed_transmittance = ch.transmittance.is_some();
    let mut channel = match ch.transmittance {
        Some(eta) => {
            if ch.preset.is_some() || ch.attenuation_db_per_km.is_some() || ch.length_km != 0.0 {
                return Err(config_err(
                    "channel.transmittance",
                    "cannot be combined with preset, length_km or attenuation_db_per_km",
                ));
            }
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(config_err("channel.transmittance", format!("{eta} outside (0, 1]")));
            }
            ChannelModel::with_transmittance(eta)
        }
        None => {
            let preset_att = match &ch.preset {
                Some(p) => Some(presets::channel_attenuation(p).map_err(|e| config_err("channel.preset", e.to_string()))?),
                None => None,
            };
            let att = ch.attenuation_db_per_km.or(preset_att).unwrap_or(0.0);
            ChannelModel::fiber(ch.length_km, att)
        }
    };
    channel.misalignment = ch.misalignment;
    channel.validate().map_err(|e| config_err("channel", e.to_string()))?;

    let det = &file.detector;
    let mut detector = match &det.preset {
        Some(p) => presets::detector(p).map_err(|e| config_err("detector.preset", e.to_string()))?,
        None => DetectorModel::ideal(),
    };
    if let Some(e) = det.efficiency {
        detector.efficiency = e;
    }
    if let Some(p) = det.dark_prob {
        detector.dark_prob = p;
    }
    detector.validate().map_err(|e| config_err("detector", e.to_string()))?;

    Ok(Scenario {
        name: file.name.unwrap_or_else(|| default_name.to_string()),
        seed,
        config,
        link: Link {
            source: file.source,
            channel,
            detector,
        },
        fixed_transmittance,
        eve: file.eve,
        pipeline: file.pipeline,
        format: ov.format.or(file.output.format),
        out: ov.out.clone().or(file.output.path),
    })
}

impl Scenario {
    /// Mean photon number of the key-carrying pulses, for Poisson sources.
    pub fn signal_mu(&self) -> Option<f64> {
        match (self.config.protocol, self.link.source) {
            (Protocol::DecoyBb84 { signal_mu, .. }, _) => Some(signal_mu),
            (_, SourceModel::AttenuatedLaser { mu }) => Some(mu),
            _ => None,
        }
    }

    /// Channel transmittance times detector efficiency.
    pub fn total_transmittance(&self) -> f64 {
        self.link.channel.transmittance() * self.link.detector.efficiency
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_resolve() {
        for name in bundled_names() {
            let s = load(name, &Overrides::default()).unwrap();
            assert_eq!(s.name, name);
        }
    }

    #[test]
    fn overrides_win() {
        let ov = Overrides {
            seed: Some(99),
            pulses: Some(10),
            ..Default::default()
        };
        let s = load("bb84_honest", &ov).unwrap();
        assert_eq!((s.seed, s.config.num_pulses), (99, 10));
    }

    #[test]
    fn errors_carry_paths() {
        let err = parse(r#"{"seed":1,"protocol":{"kind":"bb84"},"num_pulses":10,"channel":{"lenght_km":3}}"#, "x", &Overrides::default())
            .unwrap_err();
        assert!(matches!(err, CliError::Config { ref path, .. } if path.starts_with("channel")), "{err}");

        let err = parse(r#"{"protocol":{"kind":"bb84"},"num_pulses":10}"#, "x", &Overrides::default()).unwrap_err();
        assert!(matches!(err, CliError::Config { ref path, .. } if path == "seed"));
    }

    #[test]
    fn transmittance_excludes_length() {
        let text = r#"{"seed":1,"protocol":{"kind":"bb84"},"num_pulses":10,"channel":{"transmittance":0.1,"length_km":5}}"#;
        assert!(parse(text, "x", &Overrides::default()).is_err());
    }
}
