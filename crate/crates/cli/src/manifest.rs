//! Run manifests: flat key-value text with sections, one per invocation.
//!
//! The manifest is written before any artifact; output digests are appended
//! once the artifacts exist. Everything except the `[timing]` section is
//! deterministic for a fixed seed and backend.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use iem_core::{Error, Result};

pub struct Manifest {
    path: PathBuf,
    lines: Vec<String>,
    outputs: Vec<(String, String)>,
    started: Instant,
}

impl Manifest {
    pub fn create(out_dir: &Path, subcommand: &str) -> Result<Manifest> {
        fs::create_dir_all(out_dir)
            .map_err(|e| Error::Malformed(format!("cannot create {}: {e}", out_dir.display())))?;
        let mut m = Manifest {
            path: out_dir.join("manifest.txt"),
            lines: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        };
        m.lines.push("iem-manifest v1".into());
        m.lines.push("[run]".into());
        m.lines.push(format!("subcommand = {subcommand}"));
        m.lines
            .push(format!("artifact_version = {}", env!("CARGO_PKG_VERSION")));
        m.lines.push("[params]".into());
        Ok(m)
    }

    pub fn param(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push(format!("{key} = {value}"));
    }

    /// Writes the parameter part (before artifacts are produced).
    pub fn write_header(&self) -> Result<()> {
        let body = self.lines.join("\n") + "\n";
        fs::write(&self.path, body)
            .map_err(|e| Error::Malformed(format!("cannot write manifest: {e}")))?;
        Ok(())
    }

    /// Registers an artifact file and records its digest.
    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        let data = fs::read(path)
            .map_err(|e| Error::Malformed(format!("cannot digest {}: {e}", path.display())))?;
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.outputs.push((name, format!("fnv1a:{:016x}", fnv1a(&data))));
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.outputs.push((key.to_string(), value.to_string()));
    }

    /// Finalizes the manifest: parameters, output digests, then the volatile
    /// timing section last.
    pub fn finish(self) -> Result<()> {
        let mut body = self.lines.join("\n") + "\n[outputs]\n";
        for (k, v) in &self.outputs {
            body.push_str(&format!("{k} = {v}\n"));
        }
        body.push_str("[timing]\n");
        body.push_str(&format!("wall_ms = {}\n", self.started.elapsed().as_millis()));
        fs::write(&self.path, body)
            .map_err(|e| Error::Malformed(format!("cannot write manifest: {e}")))?;
        Ok(())
    }
}

/// 64-bit FNV-1a content digest (change detection, not cryptography).
pub fn fnv1a(data: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in data {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Writes a deterministic text artifact and registers it.
pub fn write_artifact(m: &mut Manifest, dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut f = fs::File::create(&path)
        .map_err(|e| Error::Malformed(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(content.as_bytes())
        .map_err(|e| Error::Malformed(format!("cannot write {}: {e}", path.display())))?;
    drop(f);
    m.artifact(&path)?;
    Ok(path)
}
