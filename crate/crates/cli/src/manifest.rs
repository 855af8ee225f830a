//! Run manifests: plain `key=value` text written before a command does any
//! heavy lifting, then extended with output digests when it finishes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.txt";

pub struct Manifest {
    path: PathBuf,
}

pub fn timestamp() -> String {
    chrono::Utc::now().format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    /// Writes the header: command, argv with every default spelled out,
    /// start time and any extra entries.
    pub fn create(dir: &Path, command: &str, argv: &[String], extra: &[(String, String)]) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = format!("fusenet_version={}\ncommand={command}\nstarted={}\n", env!("CARGO_PKG_VERSION"), timestamp());
        for a in argv {
            text.push_str(&format!("arg={a}\n"));
        }
        for (k, v) in extra {
            text.push_str(&format!("{k}={v}\n"));
        }
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(Manifest { path })
    }

    pub fn append(&self, key: &str, value: impl std::fmt::Display) -> Result<(), CliError> {
        let mut f = fs::OpenOptions::new().append(true).open(&self.path).map_err(|e| CliError::io(&self.path, e))?;
        writeln!(f, "{key}={value}").map_err(|e| CliError::io(&self.path, e))
    }

    /// Records `output.NAME=path` and its digest.
    pub fn record_output(&self, name: &str, path: &Path) -> Result<(), CliError> {
        self.append(&format!("output.{name}"), path.display())?;
        self.append(&format!("output.{name}.sha256"), sha256_file(path)?)
    }

    pub fn finish(&self) -> Result<(), CliError> {
        self.append("finished", timestamp())
    }
}

/// Command and argv recorded in a manifest.
pub fn read_invocation(path: &Path) -> Result<(String, Vec<String>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut command = None;
    let mut argv = Vec::new();
    for line in text.lines() {
        match line.split_once('=') {
            Some(("command", c)) => command = Some(c.to_string()),
            Some(("arg", a)) => argv.push(a.to_string()),
            _ => {}
        }
    }
    let command = command.ok_or_else(|| CliError::Usage(format!("{}: no command entry", path.display())))?;
    Ok((command, argv))
}

/// `parent/<stamp>-<label>`, with a numeric suffix if that already exists.
pub fn fresh_run_dir(parent: &Path, label: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ");
    let base = format!("{stamp}-{label}");
    for i in 0.. {
        let name = if i == 0 { base.clone() } else { format!("{base}-{i}") };
        let dir = parent.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&dir, e)),
        }
    }
    unreachable!()
}
