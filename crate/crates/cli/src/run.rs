//! Run directories: a stable name derived from the command's configuration,
//! atomic file writes and a manifest of everything read and written.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Reads an input file and remembers its digest for the manifest.
pub struct Input {
    pub label: String,
    pub path: PathBuf,
    pub text: String,
    pub digest: String,
}

impl Input {
    pub fn read(label: &str, path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let digest = sha256_hex(&bytes);
        let text = String::from_utf8(bytes)
            .with_context(|| format!("{} is not UTF-8 text", path.display()))?;
        Ok(Self {
            label: label.into(),
            path: path.to_path_buf(),
            text,
            digest,
        })
    }
}

/// Ordered `key=value` description of a command invocation. Its digest names
/// the run directory, so identical invocations land in the same place.
#[derive(Default)]
pub struct RunConfig {
    entries: Vec<(String, String)>,
    inputs: Vec<(String, String, String)>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        let mut c = Self::default();
        c.set("command", command);
        c
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn input(&mut self, input: &Input) -> &mut Self {
        self.inputs.push((
            input.label.clone(),
            input.path.display().to_string(),
            input.digest.clone(),
        ));
        self
    }

    /// Digest over keys, values and input contents (not input paths).
    pub fn digest(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}={v}");
        }
        for (label, _, digest) in &self.inputs {
            let _ = writeln!(s, "input.{label}={digest}");
        }
        sha256_hex(s.as_bytes())
    }
}

pub struct RunDir {
    root: PathBuf,
    path: PathBuf,
    config: RunConfig,
    outputs: Vec<(String, String)>,
}

impl RunDir {
    /// `<root>/<command>-<first 12 hex digits of the config digest>`.
    pub fn create(root: &Path, config: RunConfig) -> Result<Self> {
        let command = config.entries[0].1.clone();
        let path = root.join(format!("{command}-{}", &config.digest()[..12]));
        fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            path,
            config,
            outputs: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes through a temporary file in the same directory and renames it
    /// into place, so a failed run never leaves a truncated output.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let target = self.path.join(name);
        atomic_write(&target, contents.as_bytes())?;
        self.outputs.retain(|(n, _)| n != name);
        self.outputs
            .push((name.to_string(), sha256_hex(contents.as_bytes())));
        Ok(target)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let mut m = String::from("# flowsense run manifest\n");
        for (k, v) in &self.config.entries {
            let _ = writeln!(m, "{k}={v}");
        }
        for (label, path, digest) in &self.config.inputs {
            // Inputs produced under the same root are listed relative to this
            // run, so a relocated tree keeps an identical manifest.
            let shown = match Path::new(path).strip_prefix(&self.root) {
                Ok(rel) => Path::new("..").join(rel).display().to_string(),
                Err(_) => path.clone(),
            };
            let _ = writeln!(m, "input {label} {shown} sha256={digest}");
        }
        for (name, digest) in &self.outputs {
            let _ = writeln!(m, "output {name} sha256={digest}");
        }
        atomic_write(&self.path.join("manifest.txt"), m.as_bytes())?;
        Ok(self.path)
    }
}

pub fn atomic_write(target: &Path, bytes: &[u8]) -> Result<()> {
    let dir = target.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(target)
        .with_context(|| format!("renaming into {}", target.display()))?;
    Ok(())
}
