use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density_ratio::LogisticOptions;
use crate::error::{Error, Result};
use crate::latent::ResponseMode;
use crate::synth::GenerationConfig;
use crate::trimask::DEFAULT_GAMMA;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Standard,
    WOracle,
    WLatent,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Standard, Variant::WOracle, Variant::WLatent];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::WOracle => "w_oracle",
            Variant::WLatent => "w_latent",
        }
    }

    pub fn is_weighted(&self) -> bool {
        !matches!(self, Variant::Standard)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which test pool the calibrated intervals are evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Id,
    Shift,
}

impl Setting {
    pub const ALL: [Setting; 2] = [Setting::Id, Setting::Shift];

    pub fn name(&self) -> &'static str {
        match self {
            Setting::Id => "id",
            Setting::Shift => "shift",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentConfig {
    /// Number of kernels (latent dimension).
    pub dim: usize,
    pub kernel_size: usize,
    pub mode: ResponseMode,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            kernel_size: 5,
            mode: ResponseMode::Abs,
        }
    }
}

/// Everything that determines an experiment run. Serialized as JSON; every
/// field is optional in the file and falls back to its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Miscoverage level; 0.05 targets 95% coverage.
    pub alpha: f64,
    pub trials: usize,
    pub generation: GenerationConfig,
    pub gamma: f64,
    pub latent: LatentConfig,
    pub variants: Vec<Variant>,
    pub folds: usize,
    pub logistic: LogisticOptions,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            alpha: 0.05,
            trials: 250,
            generation: GenerationConfig::default(),
            gamma: DEFAULT_GAMMA,
            latent: LatentConfig::default(),
            variants: Variant::ALL.to_vec(),
            folds: 20,
            logistic: LogisticOptions::default(),
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 0.5) {
            return bad(format!("gamma must lie in (0, 0.5], got {}", self.gamma));
        }
        if self.variants.is_empty() {
            return bad("at least one CP variant is required".into());
        }
        if self.folds < 2 {
            return bad("folds must be >= 2".into());
        }
        if self.latent.dim == 0
            || self.latent.kernel_size < 3
            || self.latent.kernel_size.is_multiple_of(2)
        {
            return bad("latent dim must be >= 1 and kernel_size odd >= 3".into());
        }
        if self.latent.kernel_size > self.generation.grid_dim {
            return bad("kernel_size exceeds grid_dim".into());
        }
        if !(self.logistic.l2_lambda >= 0.0
            && self.logistic.tol > 0.0
            && self.logistic.max_iter > 0)
        {
            return bad("logistic options must have l2_lambda >= 0, tol > 0, max_iter > 0".into());
        }
        self.generation.validate()
    }

    /// Variants in canonical order, deduplicated.
    pub fn variant_list(&self) -> Vec<Variant> {
        let mut v = self.variants.clone();
        v.sort();
        v.dedup();
        v
    }

    pub fn filter_seed(&self) -> u64 {
        derive_seed(self.seed, 0xF11E_0000)
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.seed, 0x7121_0000_0000 + trial as u64)
    }
}

/// SplitMix64 finalizer over `seed + salt`; used to derive independent seeds.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&s).unwrap(), cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg =
            ExperimentConfig::from_json_str(r#"{"trials": 3, "generation": {"n_train": 10}}"#)
                .unwrap();
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.generation.n_train, 10);
        assert_eq!(cfg.generation.n_calib, 1000);
        assert_eq!(cfg.folds, 20);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            r#"{"alpha": 1.5}"#,
            r#"{"trials": 0}"#,
            r#"{"variants": []}"#,
            r#"{"folds": 1}"#,
            r#"{"unknown_field": 1}"#,
            r#"{"latent": {"kernel_size": 4}}"#,
            r#"{"generation": {"grid_dim": 4}}"#,
        ] {
            assert!(
                matches!(ExperimentConfig::from_json_str(bad), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn seeds_are_distinct() {
        let cfg = ExperimentConfig::default();
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|t| cfg.trial_seed(t)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(cfg.filter_seed(), cfg.trial_seed(0));
    }
}
