//! Config files: a JSON object of option defaults, optionally tagged with
//! the subcommand it belongs to via a `"command"` key.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use simexplain::Error;

pub fn load(path: &Path) -> Result<Value, Error> {
    let text = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(Error::Config(format!("{} must hold a JSON object", path.display())));
    }
    Ok(value)
}

/// The options a config file sets for `command`, after checking its tag.
pub fn section(file: Option<&Value>, command: &str) -> Result<Option<Value>, Error> {
    let Some(Value::Object(map)) = file else {
        return Ok(None);
    };
    let mut map = map.clone();
    match map.remove("command") {
        None => {}
        Some(Value::String(c)) if c == command => {}
        Some(other) => {
            return Err(Error::Config(format!("config is for command {other}, not {command:?}")));
        }
    }
    Ok(Some(Value::Object(map)))
}

/// Overlays options given on the command line onto the file's values and
/// validates the result against the option schema.
pub fn resolve<T: Serialize + DeserializeOwned>(cli: &T, file: Option<Value>) -> Result<T, Error> {
    let mut merged = match file {
        Some(Value::Object(m)) => m,
        _ => Map::new(),
    };
    if let Value::Object(given) = serde_json::to_value(cli)? {
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use serde_json::json;

    #[derive(Serialize, Deserialize, Default, Debug, PartialEq)]
    #[serde(deny_unknown_fields, default)]
    struct Opts {
        seed: Option<u64>,
        out: Option<String>,
    }

    #[test]
    fn flags_override_file() {
        let cli = Opts {
            seed: Some(7),
            out: None,
        };
        let got = resolve(&cli, Some(json!({"seed": 1, "out": "x"}))).unwrap();
        assert_eq!(
            got,
            Opts {
                seed: Some(7),
                out: Some("x".into())
            }
        );
    }

    #[test]
    fn unknown_keys_and_wrong_command_rejected() {
        let err = resolve(&Opts::default(), Some(json!({"sead": 1}))).unwrap_err();
        assert_eq!(err.kind(), "config");
        let file = json!({"command": "eval", "seed": 3});
        assert!(section(Some(&file), "converge").is_err());
        assert_eq!(section(Some(&file), "eval").unwrap(), Some(json!({"seed": 3})));
    }
}
