//! Run manifests, input digests and JSON config overlays.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use xfer_core::{Error, Result};

pub const TOOL_VERSION: &str = concat!("xfer ", env!("CARGO_PKG_VERSION"));

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Applies the keys of `patch` onto the serialized form of `base`. Keys that
/// `base` does not have are rejected.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: &Value, what: &str) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    let (Value::Object(target), Value::Object(patch)) = (&mut value, patch) else {
        return Err(Error::Config(format!(
            "{what} config must be a JSON object"
        )));
    };
    for (k, v) in patch {
        match target.get_mut(k) {
            Some(slot) => *slot = v.clone(),
            None => return Err(Error::Config(format!("unknown {what} config key {k:?}"))),
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{what} config: {e}")))
}

/// Loads `--config` and returns its named sections; unknown sections are
/// rejected.
pub fn config_sections(path: Option<&Path>, allowed: &[&str]) -> Result<BTreeMap<String, Value>> {
    let Some(path) = path else {
        return Ok(BTreeMap::new());
    };
    let value: Value = serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(Error::Config("config file must hold a JSON object".into()));
    };
    let mut out = BTreeMap::new();
    for (k, v) in map {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::Config(format!(
                "unknown config section {k:?} (expected one of {allowed:?})"
            )));
        }
        out.insert(k, v);
    }
    Ok(out)
}

/// Everything needed to rerun a command: resolved settings, input digests
/// and seeds.
pub struct RunManifest {
    command: String,
    config: Value,
    inputs: Map<String, Value>,
    seeds: Vec<u64>,
    outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: Value) -> Self {
        Self {
            command: command.into(),
            config,
            inputs: Map::new(),
            seeds: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path, bytes: &[u8]) -> &mut Self {
        self.inputs.insert(
            name.into(),
            json!({ "path": path.display().to_string(), "sha256": sha256_hex(bytes) }),
        );
        self
    }

    /// Replaces the resolved config once it is known.
    pub fn set_config(&mut self, config: Value) -> &mut Self {
        self.config = config;
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seeds.push(seed);
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Hash of the command, resolved config and input digests.
    pub fn run_id(&self) -> String {
        let key = json!({
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs.iter().map(|(k, v)| (k.clone(), v["sha256"].clone())).collect::<Map<_, _>>(),
        });
        sha256_hex(key.to_string().as_bytes())[..16].to_string()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "run_id": self.run_id(),
            "command": self.command,
            "tool_version": TOOL_VERSION,
            "config": self.config,
            "inputs": self.inputs,
            "seeds": self.seeds,
            "outputs": self.outputs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.to_json())?;
        text.push('\n');
        write_file(path, text)
    }
}

/// `<out>.manifest.json` next to `out`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use xfer_core::training::TrainConfig;

    #[test]
    fn overlay_sets_known_keys_only() {
        let base = TrainConfig::default();
        let t = overlay(&base, &json!({"lr": 0.5, "init_mode": "re-emb"}), "train").unwrap();
        assert_eq!(t.lr, 0.5);
        assert_eq!(t.batch_size, base.batch_size);
        assert!(overlay(&base, &json!({"lr_typo": 1}), "train").is_err());
        assert!(overlay(&base, &json!({"lr": "fast"}), "train").is_err());
    }

    #[test]
    fn run_id_ignores_paths_but_not_contents() {
        let mut a = RunManifest::new("x", json!({"k": 1}));
        a.input("data", Path::new("a.txt"), b"abc");
        let mut b = RunManifest::new("x", json!({"k": 1}));
        b.input("data", Path::new("elsewhere/a.txt"), b"abc");
        assert_eq!(a.run_id(), b.run_id());
        let mut c = RunManifest::new("x", json!({"k": 1}));
        c.input("data", Path::new("a.txt"), b"abd");
        assert_ne!(a.run_id(), c.run_id());
    }

    #[test]
    fn manifest_path_appends() {
        assert_eq!(
            manifest_path(Path::new("d/c.txt")),
            PathBuf::from("d/c.txt.manifest.json")
        );
    }
}
