//! `--config FILE`: a TOML table whose keys are long flag names.
//!
//! Each key is appended to the command line as `--key value` unless the flag
//! was already given there, so explicit flags win and clap validates both
//! sources the same way.

use std::fs;

use toml::Value;

pub fn expand(args: Vec<String>) -> Result<Vec<String>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    let table: toml::Table = text.parse().map_err(|e| format!("{path}: {e}"))?;
    let mut out = args;
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        let given = out.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given {
            continue;
        }
        match value {
            Value::Boolean(true) => out.push(flag),
            Value::Boolean(false) => {}
            Value::Array(items) => {
                for item in items {
                    out.push(flag.clone());
                    out.push(scalar(&key, item)?);
                }
            }
            other => {
                out.push(flag);
                out.push(scalar(&key, other)?);
            }
        }
    }
    Ok(out)
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn scalar(key: &str, v: Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        _ => Err(format!("config key `{key}` must be a string, number, boolean or array")),
    }
}
