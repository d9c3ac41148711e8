//! Layering of training configuration: defaults, then an optional JSON file,
//! then `--set key=value` overrides. Unknown keys fail at every layer.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};
use swift_core::train::TrainConfig;

use crate::error::CliError;

pub fn load_config(file: Option<&Path>, overrides: &[String]) -> Result<TrainConfig, CliError> {
    let mut value = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let file_value: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
            // Validate the file on its own so errors name the right layer.
            serde_json::from_value::<TrainConfig>(file_value.clone())
                .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
            merge(default_value(), file_value)?
        }
        None => default_value(),
    };
    let map = value.as_object_mut().expect("config serializes to an object");
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("override {item:?} is not key=value")))?;
        let key = key.trim();
        if !map.contains_key(key) {
            return Err(CliError::usage(format!("unknown config key {key:?}")));
        }
        map.insert(key.to_string(), parse_override(raw.trim()));
    }
    serde_json::from_value(value).map_err(|e| CliError::usage(format!("config override: {e}")))
}

fn default_value() -> Value {
    serde_json::to_value(TrainConfig::default()).expect("config serializes")
}

fn merge(mut base: Value, layer: Value) -> Result<Value, CliError> {
    let Value::Object(layer) = layer else {
        return Err(CliError::usage("config file must hold a JSON object".into()));
    };
    let base_map: &mut Map<String, Value> = base.as_object_mut().expect("config serializes to an object");
    base_map.extend(layer);
    Ok(base)
}

/// JSON literal when it parses (numbers, booleans, arrays, null), otherwise a
/// bare string, so `method=debiaspl` needs no quoting.
fn parse_override(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}
