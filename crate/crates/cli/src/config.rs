//! Experiment configuration files (TOML, or JSON for echoed configs).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de, Deserialize, Deserializer, Serialize};
use timebin_core::{
    ChshAngles, DetectorModel, LossChain, NoiseConfig, Preset, ScenarioKind, ScenarioSpec, DEFAULT_SHOTS,
};

use crate::CliError;

/// Noise given either by preset name or inline.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum NoiseSource {
    Preset(String),
    Inline(NoiseConfig),
}

// Hand-written so that errors inside an inline table keep their field names.
impl<'de> Deserialize<'de> for NoiseSource {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Visitor;

        impl<'de> de::Visitor<'de> for Visitor {
            type Value = NoiseSource;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a preset name or a noise table")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<NoiseSource, E> {
                Ok(NoiseSource::Preset(v.to_string()))
            }

            fn visit_map<A: de::MapAccess<'de>>(self, map: A) -> Result<NoiseSource, A::Error> {
                NoiseConfig::deserialize(de::value::MapAccessDeserializer::new(map)).map(NoiseSource::Inline)
            }
        }

        deserializer.deserialize_any(Visitor)
    }
}

impl Default for NoiseSource {
    fn default() -> Self {
        NoiseSource::Preset(Preset::Ideal.name().to_string())
    }
}

/// A configuration file as written. Anything left out falls back to the
/// noise preset (for losses and detector) or to the scenario defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioKind>,
    #[serde(default)]
    pub noise: NoiseSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<LossChain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chsh_angles: Option<ChshAngles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<ScenarioKind>,
    pub master_seed: Option<u64>,
    pub shots: Option<u64>,
}

/// A fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub preset: Option<Preset>,
    pub spec: ScenarioSpec,
    pub master_seed: u64,
}

impl ResolvedConfig {
    /// The configuration with every field explicit, suitable for a rerun.
    pub fn echo(&self) -> ExperimentConfig {
        ExperimentConfig {
            scenario: Some(self.spec.kind),
            noise: NoiseSource::Inline(self.spec.noise.clone()),
            losses: Some(self.spec.losses.clone()),
            detector: Some(self.spec.detector.clone()),
            shots: Some(self.spec.shots),
            master_seed: Some(self.master_seed),
            grid: Some(self.spec.grid.clone()),
            chsh_angles: Some(self.spec.chsh_angles),
            psi: Some(self.spec.psi),
        }
    }
}

pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig, CliError> {
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string())
    };
    parsed.map_err(|message| CliError::Parse { path: path.to_path_buf(), message })
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: PathBuf::from(path), source })?;
    parse_config(&text, path)
}

/// Reads, resolves and validates a configuration file.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ResolvedConfig, CliError> {
    resolve(read_config(path)?, overrides)
}

fn invalid(section: &str, err: timebin_core::Error) -> CliError {
    let field = match &err {
        timebin_core::Error::OutOfRange { name, .. } => format!("{section}.{name}"),
        _ => section.to_string(),
    };
    CliError::Invalid { field, message: err.to_string() }
}

fn invalid_msg(field: &str, message: impl Into<String>) -> CliError {
    CliError::Invalid { field: field.to_string(), message: message.into() }
}

pub fn resolve(config: ExperimentConfig, overrides: &Overrides) -> Result<ResolvedConfig, CliError> {
    let kind = match (overrides.scenario, config.scenario) {
        (Some(cli), Some(file)) if cli != file => {
            return Err(invalid_msg("scenario", format!("command line asks for `{cli}` but the config says `{file}`")))
        }
        (Some(k), _) | (None, Some(k)) => k,
        (None, None) => return Err(invalid_msg("scenario", "no scenario given")),
    };

    let (preset, noise) = match config.noise {
        NoiseSource::Preset(name) => {
            let preset: Preset = name.parse().map_err(|e| invalid("noise", e))?;
            (Some(preset), preset.noise())
        }
        NoiseSource::Inline(noise) => (None, noise),
    };
    let fallback = preset.unwrap_or(Preset::Ideal);
    let losses = config.losses.unwrap_or_else(|| fallback.losses());
    let detector = config.detector.unwrap_or_else(|| fallback.detector());

    noise.validate().map_err(|e| invalid("noise", e))?;
    losses.validate().map_err(|e| invalid("losses", e))?;
    detector.validate().map_err(|e| invalid("detector", e))?;

    let shots = overrides.shots.or(config.shots).unwrap_or(DEFAULT_SHOTS);
    if shots == 0 {
        return Err(invalid_msg("shots", "must be at least 1"));
    }
    let grid = config.grid.unwrap_or_else(|| kind.default_grid());
    if let Some(bad) = grid.iter().find(|g| !g.is_finite()) {
        return Err(invalid_msg("grid", format!("non-finite value {bad}")));
    }
    let chsh_angles = config.chsh_angles.unwrap_or(ChshAngles::CANONICAL);
    let angles = [chsh_angles.alpha, chsh_angles.alpha_star, chsh_angles.beta, chsh_angles.beta_star];
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(invalid_msg("chsh_angles", "angles must be finite"));
    }
    let psi = config.psi.unwrap_or(0.0);
    if !psi.is_finite() {
        return Err(invalid_msg("psi", "must be finite"));
    }

    let spec = ScenarioSpec { kind, noise, losses, detector, shots, grid, chsh_angles, psi };
    spec.validate().map_err(|e| invalid(kind.name(), e))?;
    Ok(ResolvedConfig {
        preset,
        spec,
        master_seed: overrides.master_seed.or(config.master_seed).unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        parse_config(text, Path::new("test.toml"))
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse("scenario = \"chsh\"\nshot = 5\n"), Err(CliError::Parse { .. })));
        assert!(parse("[losses]\npreparation = 1.0\nbogus = 2\n").is_err());
    }

    #[test]
    fn unknown_scenario_is_rejected() {
        assert!(parse("scenario = \"teleport\"\n").is_err());
    }

    #[test]
    fn unknown_preset_is_rejected() {
        let cfg = parse("scenario = \"chsh\"\nnoise = \"noisy\"\n").unwrap();
        match resolve(cfg, &Overrides::default()) {
            Err(CliError::Invalid { field, .. }) => assert_eq!(field, "noise"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn command_line_overrides_file() {
        let cfg = parse("scenario = \"chsh\"\nshots = 10\nmaster_seed = 3\n").unwrap();
        let r = resolve(
            cfg,
            &Overrides { scenario: Some(ScenarioKind::Chsh), master_seed: Some(9), shots: Some(20) },
        )
        .unwrap();
        assert_eq!((r.spec.shots, r.master_seed), (20, 9));
    }

    #[test]
    fn conflicting_scenarios_are_rejected() {
        let cfg = parse("scenario = \"chsh\"\n").unwrap();
        let over = Overrides { scenario: Some(ScenarioKind::RabiScan), ..Overrides::default() };
        assert!(matches!(resolve(cfg, &over), Err(CliError::Invalid { .. })));
    }

    #[test]
    fn inline_noise_is_partial() {
        let cfg = parse("scenario = \"prep-verify\"\n[noise]\nrydberg_dephasing = 0.1\n").unwrap();
        let r = resolve(cfg, &Overrides::default()).unwrap();
        assert_eq!(r.spec.noise.rydberg_dephasing, 0.1);
        assert_eq!(r.spec.losses, LossChain::lossless());
        assert_eq!(r.preset, None);
    }

    #[test]
    fn echo_resolves_to_itself() {
        let cfg = parse("scenario = \"entangle-scan\"\nnoise = \"paper-calibrated\"\nshots = 7\n").unwrap();
        let r = resolve(cfg, &Overrides::default()).unwrap();
        let again = resolve(r.echo(), &Overrides::default()).unwrap();
        assert_eq!(again.spec, r.spec);
        let text = toml::to_string(&r.echo()).unwrap();
        assert_eq!(resolve(parse(&text).unwrap(), &Overrides::default()).unwrap().spec, r.spec);
    }
}
