//! Run configuration file.
//!
//! ```toml
//! dataset = "data/manifest.json"   # required for live runs
//! space = "space.toml"             # default: the built-in 162-config space
//! grid = "grid.csv"                # replay from a grid table instead of live services
//!
//! [objective]
//! metrics = ["lexical_ac"]
//! weights = [1.0]                  # default: uniform
//!
//! [run]
//! algorithm = "greedy_m"
//! budget = 10
//! seeds = 10                       # a count (seeds 0..n) or an explicit list
//! out = "out"
//!
//! [endpoints.embedder]
//! base_url = "http://localhost:8080"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use ragtune::evaluator::Objective;
use ragtune::metrics::Metric;
use ragtune::optimizers::{SuffixMode, TpeSettings};
use ragtune::pipeline::ServiceEndpoint;
use ragtune::searchspace::SearchSpace;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub space: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub endpoints: Endpoints,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub metrics: Vec<Metric>,
    pub weights: Option<Vec<f64>>,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig { metrics: vec![Metric::LexicalAc], weights: None }
    }
}

impl ObjectiveConfig {
    pub fn build(&self) -> Result<Objective<f64>, CliError> {
        let objective = match &self.weights {
            None => Objective::uniform(&self.metrics),
            Some(w) if w.len() == self.metrics.len() => {
                Objective::weighted(self.metrics.iter().copied().zip(w.iter().copied()).collect())
            }
            Some(_) => return Err(CliError::validation("objective.weights must have one entry per metric")),
        };
        objective.map_err(|e| CliError::validation(e.to_string()))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn expand(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub algorithm: Option<String>,
    pub budget: Option<usize>,
    pub seeds: Option<Seeds>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub tpe: TpeSettings,
    #[serde(default)]
    pub suffix_mode: SuffixMode,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    pub embedder: Option<ServiceEndpoint>,
    pub generator: Option<ServiceEndpoint>,
    pub judge: Option<ServiceEndpoint>,
}

/// `path:line:col: message` for a TOML error.
pub fn toml_error(path: &Path, text: &str, err: &toml::de::Error) -> CliError {
    let message = err.message().trim().to_string();
    match err.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.rfind('\n').map_or(before.chars().count(), |i| before[i + 1..].chars().count()) + 1;
            CliError::validation(format!("{}:{line}:{col}: {message}", path.display()))
        }
        None => CliError::validation(format!("{}: {message}", path.display())),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| toml_error(path, &text, &e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((config.resolved(&base), base))
    }

    fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.space);
        fix(&mut self.grid);
        fix(&mut self.templates);
        fix(&mut self.run.out);
        self
    }

    pub fn space(&self) -> Result<SearchSpace, CliError> {
        match &self.space {
            Some(p) => SearchSpace::load(p).map_err(|e| CliError::validation(e.to_string())),
            None => Ok(SearchSpace::builtin()),
        }
    }
}
