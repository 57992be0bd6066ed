use std::collections::HashSet;
use std::path::{Path, PathBuf};

use losstrace::aggregators::AggregatorSpec;
use losstrace::attacks::{AttackConfig, AttackKind};
use losstrace::trainer::{GenerationSpec, TrainConfig};
use losstrace::DpSettings;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// The bundled desk-scale configuration, used when no `--config` is given.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: GenerationSpec,
    /// The `seed` field is ignored; run seeds derive from `seeds`.
    pub train: TrainConfig,
    pub shadows: usize,
    #[serde(default = "default_attacks")]
    pub attacks: Vec<AttackConfig>,
    #[serde(default = "default_aggregators")]
    pub aggregators: Vec<String>,
    pub alphas: Vec<f64>,
    pub k_fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub ablation: AblationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Attack whose vulnerable set labels the grid.
    #[serde(default = "default_ablation_label")]
    pub label: AttackKind,
    /// Defaults to the first entry of `alphas`.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_ablation_k")]
    pub k_fraction: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { label: default_ablation_label(), alpha: None, k_fraction: default_ablation_k() }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("losstrace-out")
}
fn default_attacks() -> Vec<AttackConfig> {
    AttackKind::ALL.iter().map(|&k| AttackConfig::new(k)).collect()
}
fn default_aggregators() -> Vec<String> {
    ["iqr", "mean", "l2", "slope", "slope:raw", "delta"].iter().map(|s| s.to_string()).collect()
}
fn default_ablation_label() -> AttackKind {
    AttackKind::Lira
}
fn default_ablation_k() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Data(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn bundled() -> Self {
        Self::from_toml_str(DEFAULT_CONFIG).expect("bundled config is valid")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |msg: String| Err(CliError::Usage(msg));
        if self.schema_version != SCHEMA_VERSION {
            return usage(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.train.validate()?;
        if self.shadows < 2 {
            return usage(format!("need at least 2 shadows, got {}", self.shadows));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return usage(format!("alphas must be a non-empty list in (0, 1), got {:?}", self.alphas));
        }
        let k_ok = |k: &f64| *k > 0.0 && *k <= 1.0;
        if self.k_fractions.is_empty() || !self.k_fractions.iter().all(k_ok) {
            return usage(format!("k_fractions must be a non-empty list in (0, 1], got {:?}", self.k_fractions));
        }
        if self.seeds.is_empty() {
            return usage("seeds must not be empty".into());
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return usage(format!("duplicate entries in seeds {:?}", self.seeds));
        }
        if self.attacks.is_empty() {
            return usage("at least one attack is required".into());
        }
        let mut kinds = HashSet::new();
        for a in &self.attacks {
            a.validate()?;
            if !kinds.insert(a.attack) {
                return usage(format!("attack {} listed twice", a.attack));
            }
        }
        let specs = self.aggregator_specs()?;
        let mut names = HashSet::new();
        for s in &specs {
            if !names.insert(s.name()) {
                return usage(format!("aggregator {} listed twice", s.name()));
            }
        }
        if !kinds.contains(&self.ablation.label) {
            return usage(format!("ablation label {} is not among the configured attacks", self.ablation.label));
        }
        if let Some(a) = self.ablation.alpha {
            if !(a > 0.0 && a < 1.0) {
                return usage(format!("ablation alpha must lie in (0, 1), got {a}"));
            }
        }
        if !k_ok(&self.ablation.k_fraction) {
            return usage(format!("ablation k_fraction must lie in (0, 1], got {}", self.ablation.k_fraction));
        }
        Ok(())
    }

    pub fn aggregator_specs(&self) -> Result<Vec<AggregatorSpec>> {
        self.aggregators
            .iter()
            .map(|s| {
                let spec: AggregatorSpec = s.parse().map_err(|e| CliError::Usage(format!("aggregator {s:?}: {e}")))?;
                spec.validate()?;
                Ok(spec)
            })
            .collect()
    }

    pub fn attack(&self, kind: AttackKind) -> Option<&AttackConfig> {
        self.attacks.iter().find(|a| a.attack == kind)
    }

    pub fn ablation_alpha(&self) -> f64 {
        self.ablation.alpha.unwrap_or(self.alphas[0])
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub alphas: Vec<f64>,
    pub k_fractions: Vec<f64>,
    pub attacks: Vec<String>,
    pub aggregators: Vec<String>,
    pub shadows: Option<usize>,
    pub dp_clip: Option<f64>,
    pub dp_noise: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if !self.alphas.is_empty() {
            cfg.alphas = self.alphas.clone();
        }
        if !self.k_fractions.is_empty() {
            cfg.k_fractions = self.k_fractions.clone();
        }
        if !self.attacks.is_empty() {
            let mut attacks = Vec::with_capacity(self.attacks.len());
            for name in &self.attacks {
                let kind: AttackKind = name.parse().map_err(|e: losstrace::Error| CliError::Usage(e.to_string()))?;
                attacks.push(cfg.attack(kind).cloned().unwrap_or_else(|| AttackConfig::new(kind)));
            }
            if !attacks.iter().any(|a| a.attack == cfg.ablation.label) {
                cfg.ablation.label = attacks[0].attack;
            }
            cfg.attacks = attacks;
        }
        if !self.aggregators.is_empty() {
            cfg.aggregators = self.aggregators.clone();
        }
        if let Some(n) = self.shadows {
            cfg.shadows = n;
        }
        match (self.dp_clip, self.dp_noise) {
            (Some(clip), noise) => cfg.train.dp = Some(DpSettings { clip, noise: noise.unwrap_or(0.0) }),
            (None, Some(noise)) => match cfg.train.dp.as_mut() {
                Some(dp) => dp.noise = noise,
                None => return Err(CliError::Usage("--dp-noise needs --dp-clip (or a [train.dp] table)".into())),
            },
            (None, None) => {}
        }
        cfg.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_parses() {
        let cfg = ExperimentConfig::bundled();
        assert_eq!(cfg.seeds.len(), 5);
        assert_eq!(cfg.shadows, 32);
        assert_eq!(cfg.aggregator_specs().unwrap()[0], AggregatorSpec::IQR);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn schema_version_is_checked() {
        let text = DEFAULT_CONFIG.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(CliError::Usage(_))));
        let text = DEFAULT_CONFIG.replace("schema_version = 1\n", "");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(CliError::Data(_))));
    }

    #[test]
    fn overrides_replace_fields() {
        let mut cfg = ExperimentConfig::bundled();
        let o = Overrides {
            seed: Some(9),
            alphas: vec![0.1],
            attacks: vec!["rmia".into()],
            shadows: Some(4),
            dp_clip: Some(1.0),
            dp_noise: Some(0.5),
            ..Overrides::default()
        };
        o.apply(&mut cfg).unwrap();
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.alphas, vec![0.1]);
        assert_eq!(cfg.attacks.len(), 1);
        assert_eq!(cfg.ablation.label, AttackKind::Rmia);
        assert_eq!(cfg.shadows, 4);
        assert_eq!(cfg.train.dp, Some(DpSettings { clip: 1.0, noise: 0.5 }));
    }

    #[test]
    fn bad_overrides_are_usage_errors() {
        let cases = [
            Overrides { dp_noise: Some(1.0), ..Overrides::default() },
            Overrides { attacks: vec!["nope".into()], ..Overrides::default() },
            Overrides { alphas: vec![1.5], ..Overrides::default() },
            Overrides { shadows: Some(1), ..Overrides::default() },
            Overrides { aggregators: vec!["iqr:0.9:0.1".into()], ..Overrides::default() },
        ];
        for o in cases {
            let mut cfg = ExperimentConfig::bundled();
            assert!(matches!(o.apply(&mut cfg), Err(CliError::Usage(_))), "{o:?}");
        }
    }
}
