use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{runtime, CliError, CliResult};

/// Record of one command invocation. `config` is the effective configuration
/// after file and flag merging, so re-running with it reproduces the
/// primary outputs byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub wall_time_secs: f64,
    pub tool_version: String,
}

impl RunManifest {
    #[cfg_attr(not(test), allow(dead_code))]
    pub fn load(path: impl AsRef<Path>) -> CliResult<RunManifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| runtime(path.display(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("manifest {}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> CliResult<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(path, text + "\n").map_err(|e| runtime(path.display(), e))
    }
}

/// Collects paths while a command runs and stamps the wall time at the end.
pub struct ManifestBuilder {
    command: &'static str,
    started: Instant,
    inputs: BTreeMap<String, PathBuf>,
    outputs: BTreeMap<String, PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &'static str) -> Self {
        ManifestBuilder {
            command,
            started: Instant::now(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> &mut Self {
        self.inputs.insert(role.to_string(), path.to_path_buf());
        self
    }

    pub fn output(&mut self, role: &str, path: &Path) -> &mut Self {
        self.outputs.insert(role.to_string(), path.to_path_buf());
        self
    }

    pub fn finish(
        &self,
        config: &impl Serialize,
        seed: Option<u64>,
        path: &Path,
    ) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: serde_json::to_value(config).expect("config serialises"),
            seed,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        manifest.save(path)?;
        Ok(manifest)
    }
}

/// `out.csv` → `out.csv.manifest.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".manifest.json");
    PathBuf::from(name)
}
