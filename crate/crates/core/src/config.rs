//! Run configuration: one backend profile per role plus scoring, catalog,
//! loop limits and sampling. Loaded from JSON; `FW_`-prefixed environment
//! variables override individual keys (`FW_SEED=7`,
//! `FW_LIMITS__STEP1_ROUNDS=2`, `FW_REASONER__ENDPOINT=http://...`).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backends::{open_chat, open_tools, BackendError, BackendProfile, Sampling};
use crate::evidence::{ScoringConfig, ScoringError, SourceId};
use crate::exec::Execution;
use crate::pipeline::{Engine, Settings, DEFAULT_REASONER};
use crate::tools::{build_default_catalog, CatalogError, ToolCatalog, ValidatedCatalog};
use crate::verification::LoopLimits;

pub const ENV_PREFIX: &str = "FW_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("backend {role}: {source}")]
    Backend {
        role: &'static str,
        #[source]
        source: BackendError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub source_a: BackendProfile,
    pub source_b: BackendProfile,
    pub reasoner: BackendProfile,
    pub tools: BackendProfile,
    #[serde(default)]
    pub scoring: ScoringConfig,
    /// Tool catalog JSON; the built-in catalog when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub limits: LoopLimits,
    #[serde(default = "default_dedup")]
    pub dedup_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub execution: Execution,
}

const FIELDS: [&str; 13] = [
    "source_a",
    "source_b",
    "reasoner",
    "tools",
    "scoring",
    "catalog",
    "limits",
    "dedup_threshold",
    "seed",
    "temperature",
    "out_dir",
    "workers",
    "execution",
];

fn default_dedup() -> f64 {
    0.6
}

fn default_temperature() -> f64 {
    Sampling::default().temperature
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Env value as JSON when it parses, else as a string.
fn env_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `FW_A__B=value` overrides to a config document. Variables whose
/// first key is not a config field are ignored.
pub fn apply_env_overrides(doc: &mut Value, vars: impl IntoIterator<Item = (String, String)>) {
    let mut vars: Vec<(String, String)> = vars.into_iter().collect();
    vars.sort();
    for (key, raw) in vars {
        let Some(rest) = key.strip_prefix(ENV_PREFIX) else { continue };
        let path: Vec<String> = rest.to_lowercase().split("__").map(str::to_string).collect();
        if path.iter().any(String::is_empty) || !FIELDS.contains(&path[0].as_str()) {
            continue;
        }
        let mut node = &mut *doc;
        for k in &path[..path.len() - 1] {
            if !node.is_object() {
                *node = Value::Object(Default::default());
            }
            node = node
                .as_object_mut()
                .expect("object ensured above")
                .entry(k.clone())
                .or_insert_with(|| Value::Object(Default::default()));
        }
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        node.as_object_mut()
            .expect("object ensured above")
            .insert(path[path.len() - 1].clone(), env_value(&raw));
    }
}

impl RunConfig {
    /// Parses a config document, applies overrides and resolves relative
    /// paths against `base`.
    pub fn from_value(
        mut doc: Value,
        base: &Path,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        apply_env_overrides(&mut doc, env);
        let mut cfg: RunConfig = serde_json::from_value(doc).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for p in [&mut cfg.source_a, &mut cfg.source_b, &mut cfg.reasoner, &mut cfg.tools] {
            if let Some(path) = p.path.as_mut().filter(|p| p.is_relative()) {
                *path = base.join(&*path);
            }
        }
        if let Some(path) = cfg.catalog.as_mut().filter(|p| p.is_relative()) {
            *path = base.join(&*path);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file with overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::load_with_env(path, std::env::vars())
    }

    pub fn load_with_env(path: &Path, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, ConfigError> {
        let io = |message: String| ConfigError::Io { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_value(doc, base, env)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scoring.validate()?;
        let invalid = |m: &str| Err(ConfigError::Invalid(m.into()));
        if !(0.0..=1.0).contains(&self.dedup_threshold) {
            return invalid("dedup_threshold must lie in [0, 1]");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return invalid("temperature must lie in [0, 2]");
        }
        let l = &self.limits;
        if l.step1_rounds == 0 || l.step2_rounds == 0 || l.proposals_per_round == 0 {
            return invalid("round and proposal limits must be positive");
        }
        let a = self.source_label(0);
        if a == self.source_label(1) || a == self.reasoner_endpoint() || self.source_label(1) == self.reasoner_endpoint() {
            return invalid("source and reasoner labels must be distinct");
        }
        Ok(())
    }

    pub fn source_label(&self, i: usize) -> String {
        let (p, default) = if i == 0 { (&self.source_a, "source_a") } else { (&self.source_b, "source_b") };
        p.label.clone().unwrap_or_else(|| default.into())
    }

    pub fn reasoner_endpoint(&self) -> String {
        self.reasoner.label.clone().unwrap_or_else(|| DEFAULT_REASONER.into())
    }

    /// Fixture, replay and simulated runs use a logical clock.
    pub fn is_offline(&self) -> bool {
        [&self.source_a, &self.source_b, &self.reasoner, &self.tools]
            .iter()
            .all(|p| p.kind.is_offline())
    }

    pub fn catalog(&self) -> Result<ValidatedCatalog, ConfigError> {
        let catalog = match &self.catalog {
            Some(path) => ToolCatalog::from_json_file(path)?,
            None => build_default_catalog(),
        };
        Ok(catalog.validate()?)
    }

    pub fn settings(&self) -> Settings {
        Settings {
            scoring: self.scoring.clone(),
            limits: self.limits,
            sampling: Sampling { temperature: self.temperature, seed: self.seed },
            dedup_threshold: self.dedup_threshold,
            execution: self.execution,
            logical_clock: self.is_offline(),
        }
    }

    pub fn engine(&self) -> Result<Engine, ConfigError> {
        let chat = |role, p: &BackendProfile| open_chat(p).map_err(|source| ConfigError::Backend { role, source });
        let sources = vec![
            (SourceId::new(self.source_label(0)), chat("source_a", &self.source_a)?),
            (SourceId::new(self.source_label(1)), chat("source_b", &self.source_b)?),
        ];
        let reasoner = chat("reasoner", &self.reasoner)?;
        let tools: Arc<_> = open_tools(&self.tools).map_err(|source| ConfigError::Backend { role: "tools", source })?;
        Ok(Engine {
            sources,
            reasoner,
            reasoner_endpoint: self.reasoner_endpoint(),
            tools,
            catalog: self.catalog()?,
            settings: self.settings(),
        })
    }
}
