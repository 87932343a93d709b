//! Run manifests: enough to rerun a command bit-for-bit.
//!
//! ```text
//! version = 0.1.0
//! command = train
//! seed = 42
//!
//! [config]
//! setup = 1
//! ...
//!
//! [inputs]
//! <sha256>  <path>
//!
//! [outputs]
//! <path>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub struct RunManifest {
    command: String,
    seed: u64,
    config: Option<String>,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: Option<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Records the digest of `path` as it is now.
    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        self.inputs.push((sha256_file(path)?, path.to_path_buf()));
        Ok(())
    }

    /// Records every file below `dir`, in sorted order.
    pub fn input_dir(&mut self, dir: &Path) -> std::io::Result<()> {
        for path in files_below(dir)? {
            self.input(&path)?;
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "version = {}\ncommand = {}\nseed = {}\n",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.seed
        );
        if let Some(cfg) = &self.config {
            let _ = write!(out, "\n[config]\n{cfg}");
        }
        out.push_str("\n[inputs]\n");
        for (digest, path) in &self.inputs {
            let _ = writeln!(out, "{digest}  {}", path.display());
        }
        out.push_str("\n[outputs]\n");
        for path in &self.outputs {
            let _ = writeln!(out, "{}", path.display());
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        write_atomic(path, self.render().as_bytes())
    }
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn files_below(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}
