//! Run configuration: TOML file layered between library defaults and
//! command-line overrides, plus the reproducibility manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use headway_core::adversary::AdversaryConfig;
use headway_core::ddpg::DdpgConfig;
use headway_core::{CoreError, EnvConfig};

use crate::CliError;

/// Evaluation-campaign and output options (everything not owned by the
/// simulation or a learner).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    /// Naturalistic evaluation episodes.
    pub episodes: u32,
    /// Campaign seed; fans out into per-episode scenario seeds.
    pub seed: u64,
    /// Evaluate with the safety cage active.
    pub cage_enabled: bool,
    /// Write a full per-step trace during training (large files).
    pub trace: bool,
    /// Also checkpoint every N training episodes (0 = final only).
    pub checkpoint_every: u32,
    /// Moving-average window for curve plots.
    pub ma_window: usize,
    /// Independent adversary runs in an adversarial evaluation.
    pub adversary_runs: u32,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            episodes: 120,
            seed: 0,
            cage_enabled: false,
            trace: false,
            checkpoint_every: 0,
            ma_window: 50,
            adversary_runs: 3,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.episodes == 0 {
            return Err(CoreError::Config("campaign episodes must be at least 1".into()));
        }
        if self.ma_window == 0 {
            return Err(CoreError::Config("ma_window must be at least 1".into()));
        }
        if self.adversary_runs == 0 {
            return Err(CoreError::Config("adversary_runs must be at least 1".into()));
        }
        Ok(())
    }
}

/// The fully merged run configuration.  Defaults → config file → flags.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub ddpg: DdpgConfig,
    pub adversary: AdversaryConfig,
    pub campaign: CampaignConfig,
}

impl RunConfig {
    /// Loads a TOML file over the defaults.  Unknown keys and malformed
    /// values are rejected with the offending location.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::new(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.env.validate().map_err(|e| CliError::new(format!("[env] {e}")))?;
        self.ddpg.validate().map_err(|e| CliError::new(format!("[ddpg] {e}")))?;
        self.adversary
            .validate()
            .map_err(|e| CliError::new(format!("[adversary] {e}")))?;
        self.campaign
            .validate()
            .map_err(|e| CliError::new(format!("[campaign] {e}")))?;
        Ok(())
    }

    /// Canonical TOML snapshot of the fully resolved configuration (inline
    /// arrays, fixed field order — byte-stable for hashing).
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self)
            .map_err(|e| CliError::new(format!("cannot serialize config: {e}")))
    }
}

/// Hex-encoded SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::new(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Record of what a run produced and from which inputs; contains no
/// timestamps, so identical runs write identical manifests.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub subcommand: String,
    pub seed: u64,
    /// SHA-256 of the resolved-config snapshot stored next to this file.
    pub config_sha256: String,
    /// SHA-256 of input files (e.g. the evaluated checkpoint), keyed by role.
    pub inputs: Vec<ManifestInput>,
    /// Paths relative to the run directory, in creation order.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestInput {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| CliError::new(format!("cannot serialize manifest: {e}")))?;
        std::fs::write(dir.join("manifest.toml"), text)
            .map_err(|e| CliError::new(format!("cannot write manifest: {e}")))?;
        Ok(())
    }
}

/// Resolves the output directory: explicit flag, else
/// `$HEADWAY_OUT_ROOT/<subcommand>-<config-hash-prefix>` (root defaults to
/// `runs`).  Deterministic — no timestamps.
pub fn resolve_out_dir(flag: Option<PathBuf>, subcommand: &str, config_hash: &str) -> PathBuf {
    match flag {
        Some(p) => p,
        None => {
            let root = std::env::var_os("HEADWAY_OUT_ROOT")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"));
            root.join(format!("{subcommand}-{}", &config_hash[..12]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_yields_library_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.toml");
        std::fs::write(&path, "").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.ddpg.gamma, 0.99);
        assert_eq!(cfg.ddpg.tau, 1e-3);
        assert_eq!(cfg.ddpg.batch_size, 64);
        assert_eq!(cfg.env.lead_vel_range, [17.0, 40.0]);
        assert_eq!(cfg.campaign.episodes, 120);
    }

    #[test]
    fn partial_file_overrides_only_named_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partial.toml");
        std::fs::write(&path, "[ddpg]\nseed = 3\ngamma = 0.95\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.ddpg.seed, 3);
        assert_eq!(cfg.ddpg.gamma, 0.95);
        assert_eq!(cfg.ddpg.batch_size, 64); // untouched default
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[ddpg]\nlearning_rate = 0.5\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("learning_rate"), "{err}");

        std::fs::write(&path, "[optimizer]\nlr = 0.5\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("optimizer"), "{err}");
    }

    #[test]
    fn config_snapshot_round_trips_and_hashes_stably() {
        let cfg = RunConfig::default();
        let a = cfg.to_toml().unwrap();
        let b = cfg.to_toml().unwrap();
        assert_eq!(a, b);
        let back: RunConfig = toml::from_str(&a).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(sha256_hex(a.as_bytes()), sha256_hex(b.as_bytes()));
        assert_eq!(sha256_hex(b"").len(), 64);
        // well-known vector
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn out_dir_resolution_honors_flag_env_and_default() {
        let hash = "abcdef0123456789";
        let explicit = resolve_out_dir(Some(PathBuf::from("/tmp/x")), "train", hash);
        assert_eq!(explicit, PathBuf::from("/tmp/x"));
        // no flag: root from env var or "runs"; suffix is subcommand + hash prefix
        let derived = resolve_out_dir(None, "train", hash);
        assert!(derived.ends_with("train-abcdef012345"), "{derived:?}");
    }

    #[test]
    fn campaign_validation_names_offenders() {
        let bad = CampaignConfig { episodes: 0, ..CampaignConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("episodes"));
        let bad = CampaignConfig { ma_window: 0, ..CampaignConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("ma_window"));
        let bad = CampaignConfig { adversary_runs: 0, ..CampaignConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("adversary_runs"));
    }
}
