//! `manifest.txt`: tool version, command, input digests and the resolved
//! configuration. Nothing time- or host-dependent goes in, so equal
//! manifests mean equal runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tslr_core::io::write_atomic;
use tslr_core::Error;

use crate::config::RunConfig;

pub struct Manifest {
    text: String,
}

fn files_under(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), Error> {
    if path.is_dir() {
        let mut entries = fs::read_dir(path)
            .map_err(|e| Error::Io { path: path.into(), source: e })?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::Io { path: path.into(), source: e })?;
        entries.sort();
        for e in entries {
            files_under(&e, out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            text: format!("version={}\ncommand={command}\n", env!("CARGO_PKG_VERSION")),
        }
    }

    /// One `input.<path>=sha256:<hex>` line per file; directories are
    /// walked in sorted order.
    pub fn input(&mut self, path: &Path) -> Result<(), Error> {
        let mut files = Vec::new();
        files_under(path, &mut files)?;
        for f in files {
            let bytes = fs::read(&f).map_err(|e| Error::Io { path: f.clone(), source: e })?;
            let digest = hex::encode(Sha256::digest(&bytes));
            writeln!(self.text, "input.{}=sha256:{digest}", f.display()).expect("string write");
        }
        Ok(())
    }

    pub fn param(&mut self, key: &str, value: impl std::fmt::Display) {
        writeln!(self.text, "param.{key}={value}").expect("string write");
    }

    pub fn config(&mut self, c: &RunConfig) {
        for (k, v) in c.entries() {
            writeln!(self.text, "config.{k}={v}").expect("string write");
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), Error> {
        write_atomic(path, self.text.as_bytes())
    }
}

/// Where the manifest of an output goes: inside an output directory, or
/// next to an output file as `<file>.manifest.txt`.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("manifest.txt")
    } else {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.txt");
        out.with_file_name(name)
    }
}
