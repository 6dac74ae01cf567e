use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use risklq::export::Provenance;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// sha256 over the canonical JSON of the command, its arguments and the
/// resolved scenario.
pub fn config_hash<A: Serialize>(
    command: &str,
    args: &A,
    scenario: &risklq::scenario::ScenarioFile,
) -> Result<String, CliError> {
    #[derive(Serialize)]
    struct Canonical<'a, A> {
        command: &'a str,
        args: &'a A,
        scenario: &'a risklq::scenario::ScenarioFile,
    }
    let text = serde_json::to_string(&Canonical {
        command,
        args,
        scenario,
    })
    .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

/// Output directory plus the provenance stamped on every file in it.
pub struct Sink {
    dir: PathBuf,
    pub provenance: Provenance,
    written: Vec<String>,
}

impl Sink {
    pub fn new(dir: &Path, config_hash: String, seed: u64) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            provenance: Provenance {
                version: VERSION.to_string(),
                config_hash,
                seed,
            },
            written: Vec::new(),
        })
    }

    pub fn files(&self) -> &[String] {
        &self.written
    }

    fn open(&mut self, name: &str) -> Result<fs::File, CliError> {
        let path = self.dir.join(name);
        self.written.push(name.to_string());
        fs::File::create(&path)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }

    /// JSON document with a leading `provenance` object.
    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Doc<'a, T> {
            provenance: &'a Provenance,
            #[serde(flatten)]
            body: &'a T,
        }
        let text = serde_json::to_string_pretty(&Doc {
            provenance: &self.provenance,
            body,
        })
        .map_err(|e| CliError::Io(e.to_string()))?;
        self.raw(name, text.as_bytes())
    }

    pub fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let mut f = self.open(name)?;
        f.write_all(bytes)
            .and_then(|_| f.write_all(b"\n"))
            .map_err(|e| CliError::Io(e.to_string()))
    }

    /// CSV with a `#` provenance line before the header.
    pub fn csv(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = format!(
            "# risklq version={} config_hash={} seed={}\n",
            self.provenance.version, self.provenance.config_hash, self.provenance.seed
        )
        .into_bytes();
        body(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
        let mut f = self.open(name)?;
        f.write_all(&buf).map_err(|e| CliError::Io(e.to_string()))
    }
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Label usable in file names and controller ids.
pub fn label(prefix: &str, x: f64) -> String {
    format!("{prefix}{x}")
}
