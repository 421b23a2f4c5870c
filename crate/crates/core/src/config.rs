//! Stage configuration shared by the CLI and the service.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arap::ArapConfig;
use crate::metrics::EvalConfig;
use crate::propagation::PropagationConfig;
use crate::refine::RefineConfig;
use crate::render::RenderConfig;

pub const DEFAULT_SUBSET_SIZE: usize = 16384;
pub const DEFAULT_GRAPH_K: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub n_sub: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_sub: DEFAULT_SUBSET_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    pub k: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { k: DEFAULT_GRAPH_K }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub sampling: SamplingConfig,
    pub graph: GraphConfig,
    pub arap: ArapConfig,
    pub propagation: PropagationConfig,
    pub render: RenderConfig,
    pub refine: RefineConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

/// Overrides the configured enhancer with an external command.
pub const ENHANCER_ENV: &str = "ARAPGS_ENHANCER_CMD";

impl PipelineConfig {
    /// Applies environment overrides (currently only the enhancer command).
    pub fn apply_env(&mut self) {
        if let Ok(command) = std::env::var(ENHANCER_ENV) {
            if !command.trim().is_empty() {
                self.refine.enhancer = crate::refine::Enhancer::External { command };
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.sampling.n_sub < 2 {
            return fail("sampling.n_sub must be at least 2");
        }
        if self.graph.k == 0 {
            return fail("graph.k must be at least 1");
        }
        if self.arap.max_iters == 0 {
            return fail("arap.max_iters must be at least 1");
        }
        if !(self.arap.rel_energy_tol >= 0.0) {
            return fail("arap.rel_energy_tol must be >= 0");
        }
        if self.propagation.k == 0 {
            return fail("propagation.k must be at least 1");
        }
        if self.propagation.temperature.is_some_and(|t| !(t > 0.0)) {
            return fail("propagation.temperature must be > 0");
        }
        let r = &self.refine;
        if r.update_period == 0 || r.views_per_update == 0 || r.total_iters == Some(0) {
            return fail("refine.update_period, views_per_update and total_iters must be at least 1");
        }
        if !(r.displacement_threshold >= 0.0) {
            return fail("refine.displacement_threshold must be >= 0");
        }
        if !(r.learning_rate > 0.0) {
            return fail("refine.learning_rate must be > 0");
        }
        if self.eval.gammas.is_empty() || self.eval.views == 0 {
            return fail("eval needs at least one gamma and one view");
        }
        Ok(())
    }
}

/// Everything one batch run needs. Paths may be left out of the file and
/// supplied on the command line instead.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunManifest {
    pub scene: Option<PathBuf>,
    pub drag: Option<PathBuf>,
    pub cameras: Option<PathBuf>,
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub config: PipelineConfig,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighborhood::WeightMode;
    use crate::propagation::{PositionBlend, WeightDistance};
    use crate::refine::Enhancer;

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.sampling.n_sub, 16384);
        assert_eq!(c.graph.k, 32);
        assert_eq!(c.propagation.k, 8);
        assert_eq!(c.arap.max_iters, 16);
        assert_eq!(c.refine.update_period, 10);
        assert_eq!(c.eval.gammas, vec![1, 5, 10, 20]);
        assert_eq!(c.eval.views, 10);
        assert_eq!(c.seed, 0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn partial_manifest_fills_defaults() {
        let m: RunManifest = serde_json::from_str(
            r#"{"scene": "a.ply", "seed": 7, "graph": {"k": 8},
                "arap": {"weight_mode": "gaussian_kernel"},
                "propagation": {"position_blend": "absolute", "weight_distance": "deformed"},
                "refine": {"enhancer": {"kind": "external", "command": "cp"}}}"#,
        )
        .unwrap();
        assert_eq!(m.scene.as_deref(), Some(Path::new("a.ply")));
        assert_eq!(m.config.seed, 7);
        assert_eq!(m.config.graph.k, 8);
        assert_eq!(m.config.sampling.n_sub, 16384);
        assert_eq!(m.config.arap.weight_mode, WeightMode::GaussianKernel);
        assert_eq!(m.config.arap.max_iters, 16);
        assert_eq!(m.config.propagation.position_blend, PositionBlend::Absolute);
        assert_eq!(m.config.propagation.weight_distance, WeightDistance::Deformed);
        assert_eq!(m.config.refine.enhancer, Enhancer::External { command: "cp".into() });
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = PipelineConfig::default();
        c.refine.update_period = 0;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.propagation.temperature = Some(-1.0);
        assert!(c.validate().is_err());
    }
}
