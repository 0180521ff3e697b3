//! Run configuration, read from TOML.
//!
//! Every section is optional and falls back to its defaults; unknown keys
//! are rejected. `suite` names a task-suite TOML file, resolved relative to
//! the configuration file, and the built-in five-room suite is used when it
//! is absent.

use std::path::{Path, PathBuf};

use metatrack_core::agent::AgentConfig;
use metatrack_core::meta::{
    BaselineGrid, ComparatorSpec, EvalConfig, MetaConfig, Method, TaskSet, TrainSetup,
};
use metatrack_core::ood::OodConfig;
use metatrack_core::sim::{default_suite, TaskSuite};
use metatrack_core::tracker::{TrackerConfig, TrackerParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<PathBuf>,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub meta: MetaConfig,
    #[serde(default)]
    pub comparator: ComparatorSpec,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub ood: OodSection,
    #[serde(default)]
    pub ablation: AblationSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_method() -> Method {
    Method::ContextPrior
}

/// Fixed parameters, or a grid searched on the train rooms when `params` is
/// absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<TrackerParams>,
    pub grid: BaselineGrid,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodSection {
    pub alpha: f64,
    pub quantile: f64,
    pub context_draws: usize,
    pub alpha_grid: Vec<f64>,
    /// Frames scored per room and target count.
    pub frames_per_count: usize,
    pub id_counts: Vec<usize>,
    pub ood_counts: Vec<usize>,
    pub histogram_bins: usize,
}

impl Default for OodSection {
    fn default() -> Self {
        let c = OodConfig::default();
        Self {
            alpha: c.alpha,
            quantile: c.quantile,
            context_draws: c.context_draws,
            alpha_grid: vec![0.0, 0.05, 0.1, 0.17, 0.25, 0.5, 1.0, 2.0],
            frames_per_count: 100,
            id_counts: vec![0, 1, 2, 3],
            ood_counts: vec![4, 5],
            histogram_bins: 20,
        }
    }
}

impl OodSection {
    pub fn config(&self) -> OodConfig {
        OodConfig {
            alpha: self.alpha,
            quantile: self.quantile,
            context_draws: self.context_draws,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub factors: Vec<f64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            factors: vec![1.0, 2.0, 5.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Episodes dumped per room.
    pub episodes: usize,
    pub frames: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            episodes: 2,
            frames: 50,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty configuration")
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path`, resolving a relative suite path against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(s) = &cfg.suite {
            if s.is_relative() {
                cfg.suite = Some(path.parent().unwrap_or(Path::new(".")).join(s));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn task_suite(&self) -> Result<TaskSuite, CliError> {
        match &self.suite {
            None => Ok(default_suite()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                TaskSuite::from_toml_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Checks every section; nothing runs before this passes.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: metatrack_core::Error| CliError::Config(e.to_string());
        let suite = self.task_suite()?;
        suite.validate().map_err(cfg)?;
        TaskSet::from_suite(&suite).map_err(cfg)?;
        self.agent.validate().map_err(cfg)?;
        self.tracker.validate().map_err(cfg)?;
        self.meta.validate().map_err(cfg)?;
        self.comparator.validate(self.method).map_err(cfg)?;
        if let Some(p) = &self.baseline.params {
            p.validate().map_err(cfg)?;
        } else if self.baseline.grid.points().is_empty() {
            return Err(CliError::Config("baseline grid is empty".into()));
        }
        if self.baseline.eval.episodes == 0 || self.baseline.eval.frames == 0 {
            return Err(CliError::Config(
                "baseline evaluation counts must be positive".into(),
            ));
        }
        self.ood.config().validate().map_err(cfg)?;
        if self.ood.frames_per_count == 0 || self.ood.histogram_bins == 0 {
            return Err(CliError::Config(
                "ood frame and bin counts must be positive".into(),
            ));
        }
        if self
            .ood
            .alpha_grid
            .iter()
            .any(|a| !(*a >= 0.0 && a.is_finite()))
        {
            return Err(CliError::Config(
                "ood alpha_grid entries must be non-negative".into(),
            ));
        }
        let [lo, hi] = suite.target_counts;
        for &n in self.ood.id_counts.iter().chain(&self.ood.ood_counts) {
            if n < lo || n > hi {
                return Err(CliError::Config(format!(
                    "ood target count {n} is outside the suite range {lo}..={hi}"
                )));
            }
        }
        if self
            .ablation
            .factors
            .iter()
            .any(|f| !(*f > 0.0 && f.is_finite()))
        {
            return Err(CliError::Config("ablation factors must be positive".into()));
        }
        if self.simulate.episodes == 0 || self.simulate.frames == 0 {
            return Err(CliError::Config("simulate counts must be positive".into()));
        }
        Ok(())
    }

    pub fn train_setup(&self, baseline: TrackerParams) -> Result<TrainSetup, CliError> {
        let suite = self.task_suite()?;
        let tasks = TaskSet::from_suite(&suite).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(TrainSetup {
            suite,
            tasks,
            agent: self.agent.clone(),
            tracker: self.tracker.clone(),
            meta: self.meta.clone(),
            method: self.method,
            comparator: self.comparator,
            baseline,
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c.method, Method::ContextPrior);
        assert_eq!(c.ablation.factors, vec![1.0, 2.0, 5.0, 10.0]);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("sed = 1").is_err());
        assert!(RunConfig::from_toml_str("[meta]\niterations = 3").is_err());
        assert!(RunConfig::from_toml_str("[agent.sac]\nlr = 3").is_err());
    }

    #[test]
    fn canonical_form_round_trips() {
        let c =
            RunConfig::from_toml_str("seed = 4\nmethod = \"reptile\"\n[meta]\nmeta_iterations = 7")
                .unwrap();
        let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let other = RunConfig {
            seed: 5,
            ..c.clone()
        };
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn invalid_sections_fail_validation() {
        let bad = RunConfig::from_toml_str("[meta]\nmeta_iterations = 0").unwrap();
        assert!(matches!(bad.validate(), Err(CliError::Config(_))));
        let bad = RunConfig::from_toml_str("[ood]\nood_counts = [7]").unwrap();
        assert!(bad.validate().is_err());
    }
}
