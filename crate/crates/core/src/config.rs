//! Pipeline configuration: one TOML file, `EMMA_*` environment overrides,
//! then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::SmoothScope;
use crate::quality::{FilterConfig, PatchMatcher};
use crate::sampler::{SamplerConfig, StrataMode};

pub const ENV_PREFIX: &str = "EMMA_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("environment variable {var}={value:?}: {reason}")]
    Env { var: String, value: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatcherConfig {
    pub patch: usize,
    pub stride: usize,
    pub vertical_radius: usize,
    pub max_intensity: f64,
    /// Explicit SSD threshold; derived from `max_intensity` when absent.
    pub tau: Option<f64>,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            stride: 8,
            vertical_radius: 0,
            max_intensity: 1.0,
            tau: None,
        }
    }
}

impl MatcherConfig {
    pub fn build(&self) -> PatchMatcher {
        let mut m = PatchMatcher::with_intensity(self.patch, self.stride, self.max_intensity);
        m.vertical_radius = self.vertical_radius;
        if let Some(tau) = self.tau {
            m.tau = tau;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Maximum action-chunk length scored per window.
    pub window: usize,
    pub smooth_scope: SmoothScope,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            window: 50,
            smooth_scope: SmoothScope::Episode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub filter: FilterConfig,
    pub matcher: MatcherConfig,
    pub metrics: MetricsConfig,
    pub sampler: SamplerConfig,
}

/// Values that may come from the environment or the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
    pub total_steps: Option<u64>,
    pub switch_step: Option<u64>,
    pub batch_size: Option<usize>,
    pub strata_mode: Option<StrataMode>,
    pub window: Option<usize>,
}

fn parse_var<T: std::str::FromStr>(
    var: &str,
    lookup: &impl Fn(&str) -> Option<String>,
) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    let name = format!("{ENV_PREFIX}{var}");
    match lookup(&name) {
        None => Ok(None),
        Some(value) => value.trim().parse().map(Some).map_err(|e: T::Err| ConfigError::Env {
            var: name,
            reason: e.to_string(),
            value,
        }),
    }
}

impl Overrides {
    /// Reads `EMMA_ALPHA`, `EMMA_GAMMA`, `EMMA_LAMBDA`, `EMMA_SEED`,
    /// `EMMA_TOTAL_STEPS`, `EMMA_SWITCH_STEP`, `EMMA_BATCH_SIZE`,
    /// `EMMA_STRATA_MODE` and `EMMA_WINDOW`.
    pub fn from_env_with(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let strata_mode = match lookup("EMMA_STRATA_MODE") {
            None => None,
            Some(v) => Some(match v.trim().to_ascii_lowercase().as_str() {
                "per_source" => StrataMode::PerSource,
                "global" => StrataMode::Global,
                _ => {
                    return Err(ConfigError::Env {
                        var: "EMMA_STRATA_MODE".into(),
                        value: v,
                        reason: "expected per_source or global".into(),
                    })
                }
            }),
        };
        Ok(Self {
            alpha: parse_var("ALPHA", &lookup)?,
            gamma: parse_var("GAMMA", &lookup)?,
            lambda: parse_var("LAMBDA", &lookup)?,
            seed: parse_var("SEED", &lookup)?,
            total_steps: parse_var("TOTAL_STEPS", &lookup)?,
            switch_step: parse_var("SWITCH_STEP", &lookup)?,
            batch_size: parse_var("BATCH_SIZE", &lookup)?,
            strata_mode,
            window: parse_var("WINDOW", &lookup)?,
        })
    }

    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_env_with(|k| std::env::var(k).ok())
    }

    pub fn apply(&self, cfg: &mut PipelineConfig) {
        let s = &mut cfg.sampler;
        if let Some(v) = self.alpha {
            s.alpha = v;
        }
        if let Some(v) = self.gamma {
            s.gamma = v;
        }
        if let Some(v) = self.lambda {
            s.lambda = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.total_steps {
            s.total_steps = v;
        }
        if let Some(v) = self.switch_step {
            s.phase_switch_step = Some(v);
        }
        if let Some(v) = self.batch_size {
            s.batch_size = v;
        }
        if let Some(v) = self.strata_mode {
            s.strata_mode = v;
        }
        if let Some(v) = self.window {
            cfg.metrics.window = v;
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// File (or defaults), then environment, then flags; validated.
    pub fn resolve(path: Option<&Path>, env: &Overrides, flags: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        env.apply(&mut cfg);
        flags.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.filter.validate().map_err(|e| invalid(&e))?;
        self.sampler.validate().map_err(|e| invalid(&e))?;
        let m = &self.matcher;
        if m.patch == 0 || m.stride == 0 {
            return Err(ConfigError::Invalid("matcher patch and stride must be >= 1".into()));
        }
        if !m.max_intensity.is_finite() || m.max_intensity <= 0.0 {
            return Err(ConfigError::Invalid("matcher max_intensity must be > 0".into()));
        }
        if m.tau.is_some_and(|t| !t.is_finite() || t < 0.0) {
            return Err(ConfigError::Invalid("matcher tau must be >= 0".into()));
        }
        if self.metrics.window == 0 {
            return Err(ConfigError::Invalid("metrics window must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env(pairs: &[(&str, &str)]) -> Overrides {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Overrides::from_env_with(|k| map.get(k).cloned()).unwrap()
    }

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.metrics.window, 50);
        assert_eq!(c.matcher.build(), PatchMatcher::default());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = PipelineConfig::from_toml(
            "[sampler]\nalpha = 0.25\n[filter]\nmin_mat_pix = 10.0\n[metrics]\nsmooth_scope = \"window\"\n",
            Path::new("x.toml"),
        )
        .unwrap();
        assert_eq!(c.sampler.alpha, 0.25);
        assert_eq!(c.sampler.gamma, 0.1);
        assert_eq!(c.filter.min_mat_pix, Some(10.0));
        assert_eq!(c.metrics.smooth_scope, SmoothScope::Window);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in ["[sampler]\nalhpa = 0.3\n", "[samplr]\n", "[matcher]\npatch_size = 4\n"] {
            assert!(matches!(
                PipelineConfig::from_toml(text, Path::new("c.toml")),
                Err(ConfigError::Parse { .. })
            ));
        }
    }

    #[test]
    fn precedence_flags_over_env_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[sampler]\nalpha = 0.2\ngamma = 0.3\nseed = 1\n").unwrap();
        let e = env(&[("EMMA_ALPHA", "0.4"), ("EMMA_SEED", "9")]);
        let f = Overrides {
            alpha: Some(0.6),
            ..Overrides::default()
        };
        let c = PipelineConfig::resolve(Some(&path), &e, &f).unwrap();
        assert_eq!(c.sampler.alpha, 0.6);
        assert_eq!(c.sampler.seed, 9);
        assert_eq!(c.sampler.gamma, 0.3);
    }

    #[test]
    fn bad_env_values_name_the_variable() {
        let err = Overrides::from_env_with(|k| (k == "EMMA_GAMMA").then(|| "abc".to_string())).unwrap_err();
        assert!(err.to_string().contains("EMMA_GAMMA"));
        let err = Overrides::from_env_with(|k| (k == "EMMA_STRATA_MODE").then(|| "both".to_string())).unwrap_err();
        assert!(matches!(err, ConfigError::Env { .. }));
        assert_eq!(
            env(&[("EMMA_STRATA_MODE", "GLOBAL")]).strata_mode,
            Some(StrataMode::Global)
        );
    }

    #[test]
    fn validation_runs_after_overrides() {
        let f = Overrides {
            alpha: Some(1.5),
            ..Overrides::default()
        };
        assert!(matches!(
            PipelineConfig::resolve(None, &Overrides::default(), &f),
            Err(ConfigError::Invalid(_))
        ));
        let f = Overrides {
            switch_step: Some(20),
            total_steps: Some(10),
            ..Overrides::default()
        };
        assert!(PipelineConfig::resolve(None, &Overrides::default(), &f).is_err());
    }

    #[test]
    fn explicit_tau_wins() {
        let m = MatcherConfig {
            tau: Some(0.5),
            max_intensity: 255.0,
            ..MatcherConfig::default()
        };
        assert_eq!(m.build().tau, 0.5);
        let m = MatcherConfig {
            max_intensity: 255.0,
            ..MatcherConfig::default()
        };
        assert!((m.build().tau - 1e-6 * 64.0 * 255.0 * 255.0).abs() < 1e-9);
    }
}
