use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

/// Bumped whenever a CSV column layout changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// JSON run manifest: config echo, seeds, versions, timings and results.
///
/// Timestamps and timings live here only, so CSV bodies stay reproducible.
#[derive(Debug, Clone)]
pub struct Manifest {
    fields: Map<String, Value>,
    timings: Map<String, Value>,
}

impl Manifest {
    pub fn new(command: &str, config: &impl Serialize, base_seed: u64, threads: usize) -> Self {
        let mut fields = Map::new();
        fields.insert("command".into(), json!(command));
        fields.insert(
            "versions".into(),
            json!({
                "meanfield": env!("CARGO_PKG_VERSION"),
                "csv_schema": CSV_SCHEMA_VERSION,
            }),
        );
        fields.insert(
            "config".into(),
            serde_json::to_value(config).unwrap_or(Value::Null),
        );
        fields.insert(
            "seeds".into(),
            json!({
                "base_seed": base_seed,
                "derivation": "mix(mix(mix(mix(base) ^ kind) ^ n) ^ trial), mix = splitmix64",
            }),
        );
        fields.insert("threads".into(), json!(threads));
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        fields.insert("created_unix".into(), json!(now.as_secs()));
        Manifest {
            fields,
            timings: Map::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.fields
            .insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }

    pub fn timing(&mut self, key: &str, elapsed: Duration) -> &mut Self {
        self.timings.insert(key.into(), json!(elapsed.as_secs_f64()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.fields.get(key)
    }

    pub fn to_value(&self) -> Value {
        let mut all = self.fields.clone();
        all.insert("timings_s".into(), Value::Object(self.timings.clone()));
        Value::Object(all)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_value()).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_fields() {
        let mut m = Manifest::new("validate", &json!({"a": 1}), 7, 4);
        m.set("passed", true).timing("total", Duration::from_millis(1500));
        let v = m.to_value();
        assert_eq!(v["seeds"]["base_seed"], 7);
        assert_eq!(v["config"]["a"], 1);
        assert_eq!(v["passed"], true);
        assert_eq!(v["timings_s"]["total"], 1.5);
        assert_eq!(v["versions"]["csv_schema"], CSV_SCHEMA_VERSION);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        m.write(&p).unwrap();
        let back: Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(back["command"], "validate");
    }
}
