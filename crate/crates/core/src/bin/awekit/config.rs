use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use awekit::Error;

/// Overlays command-line values on a TOML config file. Keys in the file use
/// the flag names with underscores; any flag given on the command line wins.
pub fn resolve<A: Serialize + DeserializeOwned>(cli: &A, config: Option<&Path>) -> Result<A, Error> {
    let mut merged = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let table: toml::Table = toml::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
            serde_json::to_value(table).map_err(|e| Error::InvalidConfig(e.to_string()))?
        }
        None => Value::Object(Default::default()),
    };
    let overrides = serde_json::to_value(cli).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    if let (Value::Object(base), Value::Object(over)) = (&mut merged, overrides) {
        for (k, v) in over {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(merged).map_err(|e| {
        let origin = config.map_or_else(String::new, |p| format!("{}: ", p.display()));
        Error::InvalidConfig(format!("{origin}{e}"))
    })
}

pub fn required<T: Clone>(value: &Option<T>, flag: &str) -> Result<T, Error> {
    value
        .clone()
        .ok_or_else(|| Error::InvalidConfig(format!("--{flag} is required (flag or config key)")))
}
