//! Service settings: a `key = value` file, overridden by `CDRA_*`
//! environment variables, overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cdra_core::cdr::DEFAULT_WINDOW_DAYS;
use cdra_core::ens::{ROTATION_MAX_MINUTES, ROTATION_MIN_MINUTES};
use cdra_core::geo::DEFAULT_ADVISORY_TTL_DAYS;
use cdra_core::quarantine::DEFAULT_RADIUS_M;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value:?}")]
    BadValue { key: String, value: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub port: u16,
    pub bind: String,
    pub store: PathBuf,
    /// When set, every API request must carry `Authorization: Bearer <token>`.
    pub api_token: Option<String>,
    /// Tokens accepted as proof of diagnosis. Empty means any non-blank
    /// token is accepted, which only suits testing.
    pub verification_tokens: Vec<String>,
    /// POSTed a JSON notice for each consenting device's exposure.
    pub department_webhook: Option<String>,
    pub window_days: i64,
    pub radius_m: f64,
    pub advisory_ttl_days: u32,
    pub key_digits: u8,
    pub rotation_min_minutes: u32,
    pub rotation_max_minutes: u32,
    pub min_exposure_minutes: u32,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            port: 8080,
            bind: "127.0.0.1".into(),
            store: PathBuf::from("cdra-store"),
            api_token: None,
            verification_tokens: Vec::new(),
            department_webhook: None,
            window_days: DEFAULT_WINDOW_DAYS,
            radius_m: DEFAULT_RADIUS_M,
            advisory_ttl_days: DEFAULT_ADVISORY_TTL_DAYS,
            key_digits: cdra_core::ens::DEFAULT_KEY_DIGITS,
            rotation_min_minutes: ROTATION_MIN_MINUTES,
            rotation_max_minutes: ROTATION_MAX_MINUTES,
            min_exposure_minutes: cdra_core::ens::DEFAULT_MIN_EXPOSURE_MINUTES,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
    })
}

fn optional(value: &str) -> Option<String> {
    Some(value.to_string()).filter(|v| !v.is_empty())
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "port" => self.port = parse(key, value)?,
            "bind" => self.bind = value.to_string(),
            "store" => self.store = PathBuf::from(value),
            "api_token" => self.api_token = optional(value),
            "verification_tokens" => {
                self.verification_tokens = value
                    .split(',')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(String::from)
                    .collect()
            }
            "department_webhook" => self.department_webhook = optional(value),
            "window_days" => self.window_days = parse(key, value)?,
            "radius_m" => self.radius_m = parse(key, value)?,
            "advisory_ttl_days" => self.advisory_ttl_days = parse(key, value)?,
            "key_digits" => self.key_digits = parse(key, value)?,
            "rotation_min_minutes" => self.rotation_min_minutes = parse(key, value)?,
            "rotation_max_minutes" => self.rotation_max_minutes = parse(key, value)?,
            "min_exposure_minutes" => self.min_exposure_minutes = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Applies `CDRA_<KEY>` variables, e.g. `CDRA_PORT=9000`.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let vars: BTreeMap<String, String> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix("CDRA_").map(|k| (k.to_ascii_lowercase(), v)))
            .collect();
        for (k, v) in vars {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let mut config = Config::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
                path: path.to_path_buf(),
                source,
            })?;
            config.apply_text(&text)?;
        }
        config.apply_env(std::env::vars())?;
        Ok(config)
    }

    pub fn accepts_token(&self, token: &str) -> bool {
        !token.trim().is_empty()
            && (self.verification_tokens.is_empty() || self.verification_tokens.iter().any(|t| t == token))
    }
}
