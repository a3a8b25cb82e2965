use std::fs;
use std::path::{Path, PathBuf};

use saia_core::pipeline::{DataSource, ExperimentConfig};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Effective configuration after overrides, plus the directory relative
/// paths inside it resolve against.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub source: Option<PathBuf>,
}

impl Loaded {
    /// Class count implied by the data source.
    pub fn class_count(&self) -> usize {
        match &self.config.data {
            DataSource::Synthetic(s) => s.classes,
            DataSource::Files { class_count, .. } => *class_count,
        }
    }

    /// Hash of the canonical JSON form, so formatting and key order in the
    /// file do not matter.
    pub fn hash(&self) -> CliResult<String> {
        let canonical = serde_json::to_vec(&self.config).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(hex::encode(Sha256::digest(canonical)))
    }
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Loaded> {
    let (mut value, base_dir) = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let value: Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            (value, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (
            serde_json::to_value(ExperimentConfig::default()).map_err(|e| CliError::Config(e.to_string()))?,
            PathBuf::new(),
        ),
    };
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let config: ExperimentConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(Loaded { config, base_dir, source: path.map(Path::to_path_buf) })
}

/// `a.b.c=value`; the value is read as JSON when it parses, else as a string.
pub fn apply_override(root: &mut Value, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Config(format!("override `{spec}` has an empty key segment")));
        }
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just set")
            }
            _ => return Err(CliError::Config(format!("override `{spec}`: `{part}` is not inside an object"))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split always yields at least one segment")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_parse() {
        let mut v = serde_json::json!({"du": {"epsilon": 1.0}, "seed": 3});
        apply_override(&mut v, "du.epsilon=25").unwrap();
        apply_override(&mut v, "run.transport.kind=socket").unwrap();
        apply_override(&mut v, "epsilons=[0,1]").unwrap();
        assert_eq!(v["du"]["epsilon"], 25);
        assert_eq!(v["run"]["transport"]["kind"], "socket");
        assert_eq!(v["epsilons"], serde_json::json!([0, 1]));
        assert!(apply_override(&mut v, "seed").is_err());
        assert!(apply_override(&mut v, "seed.x=1").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load(None, &["du.epsilonn=3".into()]).err().unwrap();
        assert_eq!(err.kind(), "ConfigError");
        let ok = load(None, &["du.epsilon=3".into()]).unwrap();
        assert_eq!(ok.config.du.epsilon, 3.0);
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = load(None, &[]).unwrap();
        let b = load(None, &["seed=7".into()]).unwrap();
        let c = load(None, &["seed=8".into()]).unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }
}
