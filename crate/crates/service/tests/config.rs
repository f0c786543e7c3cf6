use std::path::PathBuf;

use cotalk_service::config::{known_keys, BackendKind, MatcherKind};
use cotalk_service::{ApiConfig, ConfigError, Origin};

fn no_env() -> Vec<(String, String)> {
    Vec::new()
}

fn write(dir: &tempfile::TempDir, text: &str) -> PathBuf {
    let path = dir.path().join("cotalk.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn defaults_load_without_a_file() {
    let config = ApiConfig::load(None, no_env()).unwrap();
    assert_eq!(config, ApiConfig::default());
    assert_eq!(config.socket_addr().port(), 8080);
    assert_eq!(config.matcher.mode, MatcherKind::Exact);
}

#[test]
fn file_then_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "listen = \"0.0.0.0:9000\"\ncotalk_max_rounds = 4\n[matcher]\nthreshold = 0.9\n");
    let env = [("COTALK_MATCHER_THRESHOLD", "0.75"), ("COTALK_GATEWAY_BACKEND", "http"), ("UNRELATED", "x")];
    let config = ApiConfig::load(Some(&path), env).unwrap();
    assert_eq!(config.listen, "0.0.0.0:9000");
    assert_eq!(config.cotalk_max_rounds, 4);
    assert_eq!(config.matcher.threshold, 0.75);
    assert_eq!(config.gateway.backend, BackendKind::Http);

    let config = ApiConfig::load(Some(&path), [("COTALK_GATEWAY_AUDIT_LOG", "/tmp/audit.jsonl")]).unwrap();
    assert_eq!(config.gateway.audit_log, Some(PathBuf::from("/tmp/audit.jsonl")));
}

#[test]
fn every_key_has_an_environment_name() {
    let keys = known_keys();
    assert!(keys.iter().any(|(k, e)| k == "matcher.threshold" && e == "COTALK_MATCHER_THRESHOLD"));
    assert!(keys.iter().any(|(k, e)| k == "data_dir" && e == "COTALK_DATA_DIR"));
    assert!(keys.iter().all(|(_, e)| e.starts_with("COTALK_")));
}

#[test]
fn file_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("cotalk_max_rounds = \"six\"\n", "cotalk_max_rounds"),
        ("cotalk_max_rounds = 0\n", "cotalk_max_rounds"),
        ("[matcher]\nthreshold = 1.5\n", "matcher.threshold"),
        ("[matcher]\nmode = \"fuzzy\"\n", "matcher.mode"),
        ("[gateway]\nbackend_url = \"x\"\n", "gateway.backend_url"),
        ("listen = \"nowhere\"\n", "listen"),
        ("colour = 1\n", "colour"),
    ];
    for (text, key) in cases {
        let path = write(&dir, text);
        let err = ApiConfig::load(Some(&path), no_env()).unwrap_err();
        assert_eq!(err.key(), Some(key), "{text:?}: {err}");
        assert!(matches!(&err, ConfigError::InvalidKey { origin: Origin::File(p), .. } if *p == path));
        assert!(err.to_string().contains(key));
    }
}

#[test]
fn environment_errors_name_the_variable() {
    let err = ApiConfig::load(None, [("COTALK_MATCHER_THRESHOLD", "high")]).unwrap_err();
    assert_eq!(err.key(), Some("matcher.threshold"));
    assert!(err.to_string().contains("COTALK_MATCHER_THRESHOLD"), "{err}");

    let err = ApiConfig::load(None, [("COTALK_SNAPSHOT_EVERY", "-3")]).unwrap_err();
    assert_eq!(err.key(), Some("snapshot_every"));
    assert!(matches!(err, ConfigError::InvalidKey { origin: Origin::Env(_), .. }));
}

#[test]
fn unreadable_and_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    let err = ApiConfig::load(Some(&dir.path().join("absent.toml")), no_env()).unwrap_err();
    assert!(matches!(err, ConfigError::Read { .. }));
    let path = write(&dir, "listen = \n");
    assert!(matches!(ApiConfig::load(Some(&path), no_env()).unwrap_err(), ConfigError::Syntax { .. }));
}
