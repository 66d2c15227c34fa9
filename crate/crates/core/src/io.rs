//! Experiment configuration files and run manifests.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aes::AesKey;
use crate::error::{Error, Result};
use crate::harness::{sha256_hex, ExperimentConfig, Preset};
use crate::power::{NoiseConfig, TechnologyProfile};

/// Human-editable experiment description: a preset plus any fields that
/// replace the preset's values.
///
/// ```json
/// { "preset": "desk", "master_seed": 7, "profiles": ["finfet", "tfe4"] }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Preset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sets_per_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set_stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profile_overrides: Vec<TechnologyProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
}

impl ConfigFile {
    pub fn new(preset: Preset) -> Self {
        Self {
            preset,
            key_count: None,
            text_count: None,
            step_count: None,
            sets_per_step: None,
            trial_count: None,
            set_stride: None,
            profiles: None,
            profile_overrides: Vec::new(),
            noise: None,
            master_seed: None,
            thresholds: None,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MissingArtifact(format!("config {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Expands the preset, applies the overrides and validates the result.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::preset(self.preset);
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    c.$field = v.clone();
                })*
            };
        }
        take!(
            key_count,
            text_count,
            step_count,
            sets_per_step,
            trial_count,
            set_stride,
            profiles,
            noise,
            master_seed,
            thresholds
        );
        c.profile_overrides = self.profile_overrides.clone();
        c.validate()?;
        Ok(c)
    }
}

/// Name and SHA-256 of one output file, relative to the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Record of one command: what produced the outputs and their digests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
    /// Cipher key the traces were simulated under, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<AesKey>,
    pub outputs: Vec<FileDigest>,
    pub timings: Vec<StageTiming>,
}

pub const MANIFEST_FILE_NAME: &str = "manifest.json";

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new(command: impl Into<String>, master_seed: u64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            master_seed,
            config_hash: None,
            config: None,
            key: None,
            outputs: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn with_config(mut self, config: &ExperimentConfig) -> Self {
        self.config_hash = Some(config.config_hash());
        self.config = Some(config.clone());
        self
    }

    /// Hashes `dir/name` and records it.
    pub fn add_output(&mut self, dir: impl AsRef<Path>, name: &str) -> Result<()> {
        let sha256 = file_sha256(dir.as_ref().join(name))?;
        self.outputs.push(FileDigest {
            path: name.to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn add_timing(&mut self, stage: impl Into<String>, seconds: f64) {
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds,
        });
    }

    /// Checks that every recorded output under `dir` exists and matches its
    /// digest.
    pub fn verify(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for f in &self.outputs {
            let found = file_sha256(dir.join(&f.path))?;
            if found != f.sha256 {
                return Err(Error::DigestMismatch {
                    path: f.path.clone(),
                    expected: f.sha256.clone(),
                    found,
                });
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::write(dir.as_ref().join(MANIFEST_FILE_NAME), self.to_json_string())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MissingArtifact(format!("manifest {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_only_file_resolves_to_preset() {
        let f = ConfigFile::from_json_str(r#"{"preset": "desk"}"#).unwrap();
        assert_eq!(f.resolve().unwrap(), ExperimentConfig::preset(Preset::Desk));
    }

    #[test]
    fn overrides_apply_and_validate() {
        let f = ConfigFile::from_json_str(
            r#"{"preset": "paper", "master_seed": 9, "profiles": ["finfet", "tfe4"]}"#,
        )
        .unwrap();
        let c = f.resolve().unwrap();
        assert_eq!(c.master_seed, 9);
        assert_eq!(c.profiles, ["finfet", "tfe4"]);
        assert_eq!(c.step_count, 1000);
        let bad = ConfigFile::from_json_str(r#"{"preset": "desk", "step_count": 500}"#).unwrap();
        assert!(matches!(bad.resolve(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn unknown_fields_and_missing_preset_are_rejected() {
        assert!(ConfigFile::from_json_str(r#"{"preset": "desk", "keys": 3}"#).is_err());
        assert!(ConfigFile::from_json_str(r#"{"master_seed": 3}"#).is_err());
        assert!(ConfigFile::from_json_str(r#"{"preset": "huge"}"#).is_err());
    }

    #[test]
    fn profile_override_is_used() {
        let mut f = ConfigFile::new(Preset::Desk);
        let mut p = crate::power::builtin_profile("finfet").unwrap();
        p.name = "custom".into();
        p.t10_total = p.t01_total;
        f.profile_overrides.push(p.clone());
        f.profiles = Some(vec!["custom".into()]);
        let c = ConfigFile::from_json_str(&serde_json::to_string(&f).unwrap())
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(c.resolve_profiles().unwrap(), vec![p]);
    }

    #[test]
    fn manifest_detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x,y\n1,2\n").unwrap();
        let mut m = RunManifest::new("test", 1);
        m.add_output(dir.path(), "a.csv").unwrap();
        m.verify(dir.path()).unwrap();
        let back = RunManifest::from_json_str(&m.to_json_string()).unwrap();
        assert_eq!(back, m);
        std::fs::write(dir.path().join("a.csv"), "x,y\n1,3\n").unwrap();
        assert!(matches!(
            m.verify(dir.path()),
            Err(Error::DigestMismatch { .. })
        ));
        std::fs::remove_file(dir.path().join("a.csv")).unwrap();
        assert!(matches!(
            m.verify(dir.path()),
            Err(Error::MissingArtifact(_))
        ));
    }
}
