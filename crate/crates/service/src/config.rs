//! Service configuration: a TOML file, then `COTALK_*` environment overrides.
//!
//! Every key has an environment name made of `COTALK_` and the upper-cased
//! dotted path with dots replaced by underscores, so `matcher.threshold` is
//! `COTALK_MATCHER_THRESHOLD`. Only known keys are read from the environment.

use std::collections::BTreeMap;
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use cotalk_core::chain::DEFAULT_MAX_ROUNDS;
use cotalk_core::dedup::DEFAULT_SIMILARITY_THRESHOLD;
use cotalk_core::gateway::{LLM_ENDPOINT_ENV, LLM_KEY_ENV, LLM_MODEL_ENV, STT_ENDPOINT_ENV, STT_KEY_ENV, STT_MODEL_ENV};
use cotalk_core::dedup::{EMBED_ENDPOINT_ENV, EMBED_KEY_ENV, EMBED_MODEL_ENV};
use cotalk_core::store::DEFAULT_SNAPSHOT_EVERY;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PREFIX: &str = "COTALK_";

/// Where a bad value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File(PathBuf),
    Env(String),
    Default,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File(p) => write!(f, "file {}", p.display()),
            Origin::Env(name) => write!(f, "environment variable {name}"),
            Origin::Default => f.write_str("defaults"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config file {path} is not valid TOML: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("invalid config key `{key}` (from {origin}): {message}")]
    InvalidKey { key: String, origin: Origin, message: String },
}

impl ConfigError {
    /// The offending key, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::InvalidKey { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    Exact,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    pub speech: BackendKind,
    /// Names of the environment variables holding the model endpoint, model and key.
    pub endpoint_env: String,
    pub model_env: String,
    pub key_env: String,
    pub speech_endpoint_env: String,
    pub speech_model_env: String,
    pub speech_key_env: String,
    /// JSONL file receiving one record per gateway call.
    pub audit_log: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            backend: BackendKind::Mock,
            speech: BackendKind::Mock,
            endpoint_env: LLM_ENDPOINT_ENV.into(),
            model_env: LLM_MODEL_ENV.into(),
            key_env: LLM_KEY_ENV.into(),
            speech_endpoint_env: STT_ENDPOINT_ENV.into(),
            speech_model_env: STT_MODEL_ENV.into(),
            speech_key_env: STT_KEY_ENV.into(),
            audit_log: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatcherConfig {
    pub mode: MatcherKind,
    pub threshold: f64,
    pub endpoint_env: String,
    pub model_env: String,
    pub key_env: String,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            mode: MatcherKind::Exact,
            threshold: DEFAULT_SIMILARITY_THRESHOLD,
            endpoint_env: EMBED_ENDPOINT_ENV.into(),
            model_env: EMBED_MODEL_ENV.into(),
            key_env: EMBED_KEY_ENV.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApiConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub cotalk_max_rounds: u32,
    /// Environment variable holding the bearer token; no token means no auth.
    pub auth_token_env: String,
    pub snapshot_every: u64,
    pub fsync: bool,
    pub gateway: GatewayConfig,
    pub matcher: MatcherConfig,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            cotalk_max_rounds: DEFAULT_MAX_ROUNDS,
            auth_token_env: "COTALK_API_TOKEN".into(),
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            fsync: true,
            gateway: GatewayConfig::default(),
            matcher: MatcherConfig::default(),
        }
    }
}

/// Keys that may be absent from the defaults but can still be set.
const OPTIONAL_KEYS: &[&str] = &["gateway.audit_log"];

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            _ => out.push(key),
        }
    }
}

fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
}

/// Every settable key with its environment variable name.
pub fn known_keys() -> Vec<(String, String)> {
    let defaults = toml::Table::try_from(ApiConfig::default()).expect("defaults serialize");
    let mut keys = Vec::new();
    flatten("", &defaults, &mut keys);
    keys.extend(OPTIONAL_KEYS.iter().map(|k| k.to_string()));
    keys.sort();
    keys.into_iter().map(|k| {
        let env = env_name(&k);
        (k, env)
    }).collect()
}

/// Environment values are read as TOML literals when they parse, else as strings.
fn env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut current = table;
    for part in parts {
        let entry = current.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if !entry.is_table() {
            *entry = toml::Value::Table(toml::Table::new());
        }
        current = entry.as_table_mut().expect("just made a table");
    }
    current.insert(last.to_string(), value);
}

impl ApiConfig {
    /// Reads `path` (when given) and applies overrides from `env`.
    pub fn load<I, K, V>(path: Option<&Path>, env: I) -> Result<ApiConfig, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_path_buf(), source })?;
                text.parse::<toml::Table>()
                    .map_err(|e| ConfigError::Syntax { path: p.to_path_buf(), message: e.message().to_string() })?
            }
            None => toml::Table::new(),
        };
        let file_origin = path.map(|p| Origin::File(p.to_path_buf())).unwrap_or(Origin::Default);
        let mut origins: BTreeMap<String, Origin> = BTreeMap::new();

        let env: BTreeMap<String, String> =
            env.into_iter().map(|(k, v)| (k.as_ref().to_string(), v.as_ref().to_string())).collect();
        for (key, name) in known_keys() {
            if let Some(raw) = env.get(&name) {
                set_path(&mut table, &key, env_value(raw));
                origins.insert(key, Origin::Env(name));
            }
        }
        let origin_of = |key: &str| -> Origin {
            origins
                .iter()
                .find(|(k, _)| key == k.as_str() || key.starts_with(&format!("{k}.")))
                .map(|(_, o)| o.clone())
                .unwrap_or_else(|| file_origin.clone())
        };

        let config: ApiConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let mut key = e.path().to_string();
            let message = e.inner().to_string();
            // Unknown fields may be reported at their parent; name the field itself.
            if let Some(field) = message.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
                if key == "." || key.is_empty() {
                    key = field.to_string();
                } else if key != field && !key.ends_with(&format!(".{field}")) {
                    key = format!("{key}.{field}");
                }
            }
            ConfigError::InvalidKey { origin: origin_of(&key), key, message }
        })?;
        config.validate().map_err(|(key, message)| ConfigError::InvalidKey { origin: origin_of(key), key: key.to_string(), message })?;
        Ok(config)
    }

    /// Loads using the process environment.
    pub fn from_env(path: Option<&Path>) -> Result<ApiConfig, ConfigError> {
        ApiConfig::load(path, std::env::vars())
    }

    fn validate(&self) -> Result<(), (&'static str, String)> {
        self.listen
            .parse::<SocketAddr>()
            .map_err(|e| ("listen", format!("{:?} is not a socket address: {e}", self.listen)))?;
        if self.data_dir.as_os_str().is_empty() {
            return Err(("data_dir", "must not be empty".into()));
        }
        if self.cotalk_max_rounds == 0 {
            return Err(("cotalk_max_rounds", "must be at least 1".into()));
        }
        let t = self.matcher.threshold;
        if !(t.is_finite() && t > 0.0 && t <= 1.0) {
            return Err(("matcher.threshold", format!("must be in (0, 1], got {t}")));
        }
        Ok(())
    }

    pub fn socket_addr(&self) -> SocketAddr {
        self.listen.parse().expect("validated on load")
    }

    /// The bearer token, read from the variable named by `auth_token_env`.
    pub fn auth_token(&self) -> Option<String> {
        std::env::var(&self.auth_token_env).ok().filter(|t| !t.is_empty())
    }
}
