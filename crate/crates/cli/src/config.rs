//! Run configuration: a flat JSON object whose keys can each be
//! overridden on the command line with `--key value`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{Map, Value};
use tmlga::eval::{InvertedPolicy, DEFAULT_ALPHAS};
use tmlga::training::TrainConfig;

use crate::UsageError;

const PATH_KEYS: [&str; 4] = ["manifest_train", "manifest_test", "embeddings", "output_dir"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub manifest_train: Option<PathBuf>,
    pub manifest_test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub alphas: Vec<f64>,
    pub inverted: InvertedPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            manifest_train: None,
            manifest_test: None,
            embeddings: None,
            output_dir: None,
            alphas: DEFAULT_ALPHAS.to_vec(),
            inverted: InvertedPolicy::Swap,
        }
    }
}

/// `--key value` pairs pulled out of the argument list.
pub type Overrides = Vec<(String, String)>;

/// Removes `--key value` / `--key=value` pairs whose key (with dashes read
/// as underscores) is in `keys`, returning them and the remaining args.
pub fn split_overrides(args: Vec<String>, keys: &BTreeSet<String>) -> Result<(Vec<String>, Overrides)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        let key = name.replace('-', "_");
        if !keys.contains(&key) {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| UsageError(format!("--{name} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

/// Reads an override value: JSON if it parses, a comma list, or a string.
pub fn parse_value(raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if raw.contains(',') {
        return Value::Array(raw.split(',').map(|p| parse_value(p.trim())).collect());
    }
    Value::String(raw.to_string())
}

fn default_object() -> Map<String, Value> {
    let Value::Object(mut map) = serde_json::to_value(TrainConfig::default()).expect("config serializes") else {
        unreachable!("config is an object")
    };
    for k in PATH_KEYS {
        map.insert(k.into(), Value::Null);
    }
    map.insert("alphas".into(), serde_json::to_value(DEFAULT_ALPHAS).expect("floats"));
    map.insert("strict_inverted_zero".into(), Value::Bool(false));
    map
}

/// Every key a run config accepts.
pub fn run_keys() -> BTreeSet<String> {
    default_object().keys().cloned().collect()
}

fn resolve_path(value: &Value, base: Option<&Path>, key: &str) -> Result<Option<PathBuf>> {
    match value {
        Value::Null => Ok(None),
        Value::String(s) => {
            let p = PathBuf::from(s);
            Ok(Some(match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }))
        }
        other => Err(UsageError(format!("`{key}` must be a path string, got {other}")).into()),
    }
}

impl RunConfig {
    /// Defaults, then the config file (paths relative to its directory),
    /// then command-line overrides (paths relative to the working directory).
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
        let mut map = default_object();
        let mut path_base: Vec<(String, Option<PathBuf>)> = Vec::new();
        if let Some(file) = file {
            if !file.is_file() {
                return Err(UsageError(format!("config file {} does not exist", file.display())).into());
            }
            let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| UsageError(format!("{}: {e}", file.display())))?;
            let Value::Object(obj) = value else {
                return Err(UsageError(format!("{}: expected a JSON object", file.display())).into());
            };
            let dir = file.parent().map(Path::to_path_buf);
            for (k, v) in obj {
                if !map.contains_key(&k) {
                    return Err(UsageError(format!("{}: unknown key `{k}`", file.display())).into());
                }
                if PATH_KEYS.contains(&k.as_str()) {
                    path_base.push((k.clone(), dir.clone()));
                }
                map.insert(k, v);
            }
        }
        for (k, raw) in overrides {
            let v = if PATH_KEYS.contains(&k.as_str()) {
                path_base.push((k.clone(), None));
                Value::String(raw.clone())
            } else {
                parse_value(raw)
            };
            map.insert(k.clone(), v);
        }

        let mut config = RunConfig::default();
        for key in PATH_KEYS {
            let value = map.remove(key).unwrap_or(Value::Null);
            let base = path_base.iter().rev().find(|(k, _)| k == key).and_then(|(_, b)| b.clone());
            let path = resolve_path(&value, base.as_deref(), key)?;
            match key {
                "manifest_train" => config.manifest_train = path,
                "manifest_test" => config.manifest_test = path,
                "embeddings" => config.embeddings = path,
                _ => config.output_dir = path,
            }
        }
        let alphas = map.remove("alphas").unwrap_or(Value::Null);
        config.alphas = match alphas {
            Value::Number(n) => vec![n.as_f64().unwrap_or(f64::NAN)],
            other => serde_json::from_value(other).map_err(|e| UsageError(format!("`alphas`: {e}")))?,
        };
        if config.alphas.is_empty() || config.alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(UsageError(format!("alphas must lie in (0, 1], got {:?}", config.alphas)).into());
        }
        let strict = map.remove("strict_inverted_zero").unwrap_or(Value::Bool(false));
        config.inverted = match strict {
            Value::Bool(true) => InvertedPolicy::StrictInvertedZero,
            Value::Bool(false) => InvertedPolicy::Swap,
            other => return Err(UsageError(format!("`strict_inverted_zero` must be a boolean, got {other}")).into()),
        };
        config.train = serde_json::from_value(Value::Object(map)).map_err(|e| UsageError(format!("config: {e}")))?;
        config.train.validate()?;
        Ok(config)
    }

    /// Flat JSON form, suitable for `--config`.
    pub fn to_json(&self) -> String {
        let Value::Object(mut map) = serde_json::to_value(&self.train).expect("config serializes") else {
            unreachable!("config is an object")
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(Value::Null, |p| Value::String(p.display().to_string()));
        map.insert("manifest_train".into(), path(&self.manifest_train));
        map.insert("manifest_test".into(), path(&self.manifest_test));
        map.insert("embeddings".into(), path(&self.embeddings));
        map.insert("output_dir".into(), path(&self.output_dir));
        map.insert("alphas".into(), serde_json::to_value(&self.alphas).expect("floats"));
        map.insert(
            "strict_inverted_zero".into(),
            Value::Bool(self.inverted == InvertedPolicy::StrictInvertedZero),
        );
        serde_json::to_string_pretty(&Value::Object(map)).expect("serializes") + "\n"
    }
}

/// Fails with a usage error unless `path` is set and exists.
pub fn require_existing(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let p = path
        .clone()
        .ok_or_else(|| UsageError(format!("`{key}` is required (config key or --{key})")))?;
    if !p.exists() {
        return Err(UsageError(format!("`{key}` path {} does not exist", p.display())).into());
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn overrides_are_split_out() {
        let keys = run_keys();
        let (rest, ov) = split_overrides(args("--config c.json --learning-rate 0.01 --epochs=3 --out d"), &keys).unwrap();
        assert_eq!(rest, args("--config c.json --out d"));
        assert_eq!(ov, vec![("learning_rate".into(), "0.01".into()), ("epochs".into(), "3".into())]);
        assert!(split_overrides(args("--epochs"), &keys).is_err());
    }

    #[test]
    fn values_parse_as_json_lists_or_strings() {
        assert_eq!(parse_value("3"), Value::from(3));
        assert_eq!(parse_value("true"), Value::Bool(true));
        assert_eq!(parse_value("0.3,0.5"), serde_json::json!([0.3, 0.5]));
        assert_eq!(parse_value("kl"), Value::String("kl".into()));
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"epochs": 4, "manifest_train": "train.json", "loss_mode": "nll"}"#).unwrap();
        let ov = vec![("epochs".to_string(), "7".to_string()), ("alphas".into(), "0.5".into())];
        let c = RunConfig::resolve(Some(&file), &ov).unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.alphas, vec![0.5]);
        assert_eq!(c.manifest_train, Some(dir.path().join("train.json")));
        assert_eq!(c.train.loss_mode, tmlga::model::LossMode::Nll);

        let again = dir.path().join("again.json");
        fs::write(&again, c.to_json()).unwrap();
        assert_eq!(RunConfig::resolve(Some(&again), &Vec::new()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"bogus": 1}"#).unwrap();
        assert!(RunConfig::resolve(Some(&file), &Vec::new()).is_err());
        let ov = vec![("epochs".to_string(), "zero".to_string())];
        assert!(RunConfig::resolve(None, &ov).is_err());
        let ov = vec![("alphas".to_string(), "1.5".to_string())];
        assert!(RunConfig::resolve(None, &ov).is_err());
    }
}
