//! Layered run configuration: built-in defaults or manifest values, then a
//! JSON `--config` file, then command-line flags.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use phonelime::{Error, Result};

pub fn load_file(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)?;
    if !value.is_object() {
        return Err(Error::Format(format!("{}: config must be a JSON object", path.display())));
    }
    Ok(value)
}

/// Recursively overwrites `base` with the keys present in `over`.
fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Applies the config file layer (if any) on top of `base`.
pub fn layer<T: Serialize + DeserializeOwned>(base: T, file: Option<&Value>) -> Result<T> {
    let Some(file) = file else { return Ok(base) };
    let mut value = serde_json::to_value(base)?;
    merge(&mut value, file);
    Ok(serde_json::from_value(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_is_deep_and_keeps_unset_keys() {
        let mut base = json!({"plan": {"window_k": 7, "seed": 0}, "lambda": 1.0});
        merge(&mut base, &json!({"plan": {"seed": 9}}));
        assert_eq!(base, json!({"plan": {"window_k": 7, "seed": 9}, "lambda": 1.0}));
    }

    #[test]
    fn scalars_and_arrays_replace() {
        let mut base = json!({"strategies": ["lime", "lime_ts"]});
        merge(&mut base, &json!({"strategies": ["lime_ws"]}));
        assert_eq!(base, json!({"strategies": ["lime_ws"]}));
    }
}
