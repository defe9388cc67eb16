//! Atomic file output and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::failure::Failure;
use crate::source::blob_hash;

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Failure::io(path, e));
    }
    Ok(())
}

/// Collects output files of one command into a directory.
pub struct OutDir {
    dir: PathBuf,
    pub written: Vec<OutputRecord>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        Ok(OutDir { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        write_atomic(&self.dir.join(name), contents.as_bytes())?;
        self.written.push(OutputRecord { file: name.to_string(), blob_sha256: blob_hash(contents.as_bytes()) });
        Ok(())
    }

    pub fn finish(mut self, mut manifest: Manifest) -> Result<(), Failure> {
        manifest.outputs = std::mem::take(&mut self.written);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        write_atomic(&self.dir.join("manifest.json"), text.as_bytes())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OutputRecord {
    pub file: String,
    pub blob_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetworkRecord {
    pub source: String,
    pub blob_sha256: String,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub tool: String,
    pub command: String,
    pub network: NetworkRecord,
    pub settings: serde_json::Value,
    #[serde(default)]
    pub outputs: Vec<OutputRecord>,
}

impl Manifest {
    pub fn new(command: &str, source: &str, text: &str, settings: serde_json::Value) -> Self {
        Manifest {
            tool: format!("mscale {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            network: NetworkRecord { source: source.to_string(), blob_sha256: blob_hash(text.as_bytes()), text: text.to_string() },
            settings,
            outputs: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        write_atomic(&path, b"x\n").unwrap();
        write_atomic(&path, b"y\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "y\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn missing_directory_is_an_io_failure() {
        let dir = tempfile::tempdir().unwrap();
        let e = write_atomic(&dir.path().join("nope/a.csv"), b"x").unwrap_err();
        assert_eq!(e.code, crate::failure::IO);
    }
}
