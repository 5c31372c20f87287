//! Config resolution: a simple `key=value` file with CLI-flag overrides.
//! Precedence is flag > file > (env for the seed) > built-in default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Every key the config file may carry.
pub const KNOWN_KEYS: [&str; 29] = [
    "outage_reports",
    "socioeconomic",
    "county_meta",
    "gust_grid",
    "county_pixels",
    "report_windows",
    "besttrack",
    "integrated",
    "forest",
    "out_dir",
    "seed",
    "threads",
    "outage_threshold",
    "gust_factor",
    "test_fraction",
    "iterations",
    "stratified",
    "fixed_hp",
    "hp_criterion",
    "hp_max_leaf_nodes",
    "hp_max_features",
    "hp_n_trees",
    "hp_min_samples_split",
    "n_candidates",
    "halving_factor",
    "min_resource",
    "cv_folds",
    "shuffles",
    "mda_on_test",
];

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Internal(_) => 4,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Internal(_) => "internal",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Internal(m) => m,
        }
    }

    /// One machine-readable line for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "category": self.category(),
            "message": self.message(),
        })
        .to_string()
    }
}

pub fn config_err(msg: impl Display) -> CliError {
    CliError::Config(msg.to_string())
}

pub fn data_err(msg: impl Display) -> CliError {
    CliError::Data(msg.to_string())
}

pub fn internal_err(msg: impl Display) -> CliError {
    CliError::Internal(msg.to_string())
}

/// Parsed key=value config file plus the environment.
pub struct Resolver {
    file: BTreeMap<String, String>,
}

impl Resolver {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    config_err(format!(
                        "config {} line {}: expected key=value",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                let key = key.trim().to_string();
                if !KNOWN_KEYS.contains(&key.as_str()) {
                    return Err(config_err(format!(
                        "config {} line {}: unknown key {key:?}",
                        path.display(),
                        lineno + 1
                    )));
                }
                file.insert(key, value.trim().to_string());
            }
        }
        Ok(Resolver { file })
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| config_err(format!("config key {key}: {e}"))),
        }
    }

    /// flag > file > default.
    pub fn value<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        Ok(self.file_value(key)?.unwrap_or(default))
    }

    /// Boolean switch: a passed flag always enables; otherwise the file
    /// decides; otherwise false.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        if flag {
            return Ok(true);
        }
        Ok(self.file_value::<bool>(key)?.unwrap_or(false))
    }

    /// Seed resolution: flag > file > GRIDFALL_SEED env > 0.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Some(v) = flag {
            return Ok(v);
        }
        if let Some(v) = self.file_value::<u64>("seed")? {
            return Ok(v);
        }
        match std::env::var("GRIDFALL_SEED") {
            Ok(raw) => raw
                .parse::<u64>()
                .map_err(|e| config_err(format!("GRIDFALL_SEED: {e}"))),
            Err(_) => Ok(0),
        }
    }

    /// Optional input path; no default.
    pub fn path_opt(&self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.or_else(|| self.file.get(key).map(PathBuf::from))
    }

    /// Required input path: must be configured and must exist on disk.
    pub fn input_path(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        let path = self
            .path_opt(flag, key)
            .ok_or_else(|| config_err(format!("missing required input {key}")))?;
        if !path.is_file() {
            return Err(config_err(format!(
                "{key} path {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    /// Optional input path that must exist when configured.
    pub fn input_path_opt(
        &self,
        flag: Option<PathBuf>,
        key: &str,
    ) -> Result<Option<PathBuf>, CliError> {
        match self.path_opt(flag, key) {
            None => Ok(None),
            Some(path) => {
                if !path.is_file() {
                    return Err(config_err(format!(
                        "{key} path {} does not exist",
                        path.display()
                    )));
                }
                Ok(Some(path))
            }
        }
    }

    pub fn out_dir(&self, flag: Option<PathBuf>) -> PathBuf {
        self.path_opt(flag, "out_dir")
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}
