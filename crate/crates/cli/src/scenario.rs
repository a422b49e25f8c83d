//! Scenario files (TOML) and named presets.

use std::path::Path;

use h2mxr_core::dba::DbaMode;
use h2mxr_core::topology::{ConfigError, ScenarioConfig};
use h2mxr_core::xr::ResolutionClass;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ConfigError),
    #[error("unknown preset {0:?}; known: {1}")]
    UnknownPreset(String, String),
}

/// Parse and validate scenario text. Keys not in the schema are errors.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text).map_err(|e| match e {
        ScenarioError::Parse(m) => ScenarioError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Full scenario as TOML, every field spelled out.
pub fn to_toml(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).expect("scenario serializes")
}

/// Names accepted by [`preset`].
pub fn preset_names() -> Vec<String> {
    let mut v = Vec::new();
    for res in ["2K", "4K", "8K"] {
        for dba in ["lsdba", "hmcdba"] {
            for split in ["1to16", "1to8"] {
                v.push(format!("paper-5.1-{split}-{res}-{dba}"));
            }
            v.push(format!("desk-{res}-{dba}"));
        }
    }
    v
}

/// `paper-5.1-1to{16,8}-{2K,4K,8K}-{lsdba,hmcdba}`: 50G FTTP with 16 or 8
/// MFUs, 1:8 FTTR, 56 pairs (fewer if the tree is smaller), 50% load, 10 s.
/// `desk-{2K,4K,8K}-{lsdba,hmcdba}`: 1:4 FTTP, 1:4 FTTR, 6 pairs, 50% load,
/// 60 s.
pub fn preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let unknown = || ScenarioError::UnknownPreset(name.into(), preset_names().join(", "));
    let parts: Vec<&str> = name.split('-').collect();
    let (split, res, dba) = match parts.as_slice() {
        ["paper", "5.1", split, res, dba] => (Some(*split), *res, *dba),
        ["desk", res, dba] => (None, *res, *dba),
        _ => return Err(unknown()),
    };
    let resolution = match res {
        "2K" | "4K" | "8K" => ResolutionClass::parse(res).ok_or_else(unknown)?,
        _ => return Err(unknown()),
    };
    let dba = match dba {
        "lsdba" => DbaMode::Ls,
        "hmcdba" => DbaMode::Hmc,
        _ => return Err(unknown()),
    };
    let base = ScenarioConfig {
        name: name.into(),
        resolution,
        dba,
        load: 0.5,
        ..Default::default()
    };
    let cfg = match split {
        None => ScenarioConfig {
            fttp_split: 4,
            fttr_split: 4,
            pairs: 6,
            duration: 60.0,
            ..base
        },
        Some(s) => {
            let fttp_split = match s {
                "1to16" => 16,
                "1to8" => 8,
                _ => return Err(unknown()),
            };
            // 128 SFUs: 56 pairs and 16 background; 64 SFUs: 28 and 8
            ScenarioConfig {
                fttp_split,
                fttr_split: 8,
                pairs: 56 * fttp_split / 16,
                duration: 10.0,
                ..base
            }
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
