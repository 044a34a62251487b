//! Staged, all-or-nothing output writing and the run manifest.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::CliError;

/// Files collected in memory and committed together.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_json(&mut self, name: impl Into<String>, value: &impl Serialize) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("outputs serialize");
        bytes.push(b'\n');
        self.add(name, bytes);
    }

    /// Adds the output of a CSV writer.
    pub fn add_with(
        &mut self,
        name: impl Into<String>,
        write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let mut bytes = Vec::new();
        write(&mut bytes).map_err(|e| CliError::Io(e.to_string()))?;
        self.add(name, bytes);
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Writes every file to a temporary sibling and renames it into place.
    /// On failure, files already renamed by this call are removed.
    pub fn commit(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
        let mut staged = Vec::new();
        for (name, bytes) in &self.files {
            let mut tmp = NamedTempFile::new_in(dir)
                .map_err(|e| CliError::Io(format!("staging in {}: {e}", dir.display())))?;
            tmp.write_all(bytes)
                .and_then(|_| tmp.as_file().sync_all())
                .map_err(|e| CliError::Io(format!("writing {name}: {e}")))?;
            staged.push((tmp, dir.join(name)));
        }
        let mut written: Vec<PathBuf> = Vec::new();
        for (tmp, target) in staged {
            if let Err(e) = tmp.persist(&target) {
                for p in &written {
                    let _ = std::fs::remove_file(p);
                }
                return Err(CliError::Io(format!(
                    "renaming into {}: {}",
                    target.display(),
                    e.error
                )));
            }
            written.push(target);
        }
        Ok(written)
    }
}

/// Provenance record written next to the results.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub versions: Versions,
    /// Seconds since the Unix epoch; excluded from every result file.
    pub timestamp_unix_s: u64,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Versions {
    pub ddsq: &'static str,
    pub ddsq_cli: &'static str,
}

impl Manifest {
    pub fn new(command: &str, canonical_config: &[u8], seed: u64, outputs: Vec<String>) -> Self {
        let digest = Sha256::digest(canonical_config);
        Self {
            command: command.to_string(),
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed,
            versions: Versions {
                ddsq: ddsq::VERSION,
                ddsq_cli: env!("CARGO_PKG_VERSION"),
            },
            timestamp_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            outputs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::default();
        out.add("a.txt", b"alpha".to_vec());
        out.add_json("b.json", &serde_json::json!({"x": 1}));
        let paths = out.commit(&dir.path().join("nested")).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(std::fs::read(&paths[0]).unwrap(), b"alpha");
        let names: Vec<_> = std::fs::read_dir(dir.path().join("nested"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names.len(), 2, "no temporaries left: {names:?}");
    }

    #[test]
    fn manifest_hash_is_hex_sha256() {
        let m = Manifest::new("rb", b"{}", 3, vec![]);
        assert_eq!(
            m.config_sha256,
            "44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a"
        );
        assert_eq!(m.seed, 3);
    }
}
