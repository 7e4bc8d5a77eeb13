//! Deployment configuration: one JSON file, with `PATCHBOT_<KEY>` environment
//! overrides for the top-level keys.

use std::fs;
use std::path::{Path, PathBuf};

use patchbot_core::classifier::ModelConfig;
use patchbot_core::pipeline::{
    ScoreRevision, TriageOptions, CC_STABLE, DEFAULT_BOOST_FLOOR, DEFAULT_KEYWORDS,
    DEFAULT_THRESHOLD,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::AppError;

pub const ENV_PREFIX: &str = "PATCHBOT_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub repo_path: PathBuf,
    pub module_list_path: PathBuf,
    pub bundle_dir: PathBuf,
    pub store_dir: PathBuf,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_boost_floor")]
    pub boost_floor: f64,
    #[serde(default = "default_true")]
    pub revision_enabled: bool,
    #[serde(default = "default_period_days")]
    pub period_days: u32,
    #[serde(default = "default_http_port")]
    pub http_port: u16,
    #[serde(default = "default_keywords")]
    pub keyword_set: Vec<String>,
    /// Message lines that trigger the score boost.
    #[serde(default = "default_revision_patterns")]
    pub revision_patterns: Vec<String>,
    /// Labelled base corpus (JSON lines) that `retrain` starts from.
    #[serde(default)]
    pub corpus_path: Option<PathBuf>,
    /// Output of `git log` on a stable tree, scanned for upstream references.
    #[serde(default)]
    pub stable_log_path: Option<PathBuf>,
    #[serde(default)]
    pub label_file_path: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_boost_floor() -> f64 {
    DEFAULT_BOOST_FLOOR
}

fn default_true() -> bool {
    true
}

fn default_period_days() -> u32 {
    1
}

fn default_http_port() -> u16 {
    8080
}

fn default_keywords() -> Vec<String> {
    DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect()
}

fn default_revision_patterns() -> Vec<String> {
    vec![CC_STABLE.to_owned()]
}

const PATH_KEYS: [&str; 7] = [
    "repo_path",
    "module_list_path",
    "bundle_dir",
    "store_dir",
    "corpus_path",
    "stable_log_path",
    "label_file_path",
];
const SCALAR_KEYS: [&str; 5] = [
    "threshold",
    "boost_floor",
    "revision_enabled",
    "period_days",
    "http_port",
];
const LIST_KEYS: [&str; 2] = ["keyword_set", "revision_patterns"];

impl Config {
    pub fn load(path: &Path) -> Result<Self, AppError> {
        Self::load_with_env(path, |k| std::env::var(k).ok())
    }

    /// Like [`Config::load`] with an explicit environment lookup.
    pub fn load_with_env(
        path: &Path,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, AppError> {
        let text = fs::read_to_string(path).map_err(|e| {
            AppError::bad_request("invalid_config", format!("{}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json_with_env(&text, base, env)
    }

    pub fn from_json_with_env(
        text: &str,
        base: &Path,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, AppError> {
        let bad = |detail: String| AppError::bad_request("invalid_config", detail);
        let mut value: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| bad("config must be a JSON object".into()))?;
        for key in PATH_KEYS.iter().chain(&SCALAR_KEYS).chain(&LIST_KEYS) {
            let var = format!("{ENV_PREFIX}{}", key.to_uppercase());
            let Some(raw) = env(&var) else { continue };
            let v = if PATH_KEYS.contains(key) {
                Value::String(raw)
            } else if LIST_KEYS.contains(key) {
                serde_json::from_str::<Vec<String>>(&raw)
                    .map(|l| l.into_iter().map(Value::String).collect())
                    .unwrap_or_else(|_| {
                        raw.split(',')
                            .map(|s| Value::String(s.trim().to_owned()))
                            .collect()
                    })
            } else {
                serde_json::from_str(raw.trim()).map_err(|e| bad(format!("{var}: {e}")))?
            };
            obj.insert((*key).to_owned(), v);
        }
        let mut cfg: Config = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.repo_path);
        fix(&mut self.module_list_path);
        fix(&mut self.bundle_dir);
        fix(&mut self.store_dir);
        for p in [
            &mut self.corpus_path,
            &mut self.stable_log_path,
            &mut self.label_file_path,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), AppError> {
        let bad = |detail: &str| Err(AppError::bad_request("invalid_config", detail));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0,1)");
        }
        if !(self.boost_floor > 0.0 && self.boost_floor < 1.0) {
            return bad("boost_floor must lie in (0,1)");
        }
        if self.period_days == 0 {
            return bad("period_days must be >= 1");
        }
        let paths = [
            &self.repo_path,
            &self.module_list_path,
            &self.bundle_dir,
            &self.store_dir,
        ];
        if paths.iter().any(|p| p.as_os_str().is_empty()) {
            return bad("repo_path, module_list_path, bundle_dir and store_dir must be non-empty");
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn triage_options(&self) -> TriageOptions {
        TriageOptions {
            threshold: self.threshold,
            revision_enabled: self.revision_enabled,
            revision: ScoreRevision {
                patterns: self.revision_patterns.clone(),
                boost_floor: self.boost_floor,
            },
        }
    }
}
