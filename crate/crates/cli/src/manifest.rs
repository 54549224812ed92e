use std::fmt::Display;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use sha2::{Digest, Sha256};

/// Key=value record of one run, written next to its outputs.
pub struct Manifest {
    entries: Vec<(String, String)>,
    started: Instant,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest {
            entries: Vec::new(),
            started: Instant::now(),
        };
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        let argv: Vec<String> = std::env::args().collect();
        m.set("argv", argv.join(" "));
        m
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn input(&mut self, name: &str, path: &Path) -> std::io::Result<()> {
        let digest = Sha256::digest(std::fs::read(path)?);
        self.set(&format!("input.{name}.path"), path.display());
        self.set(&format!("input.{name}.sha256"), format!("{digest:x}"));
        Ok(())
    }

    pub fn write(mut self, path: &Path) -> std::io::Result<()> {
        let secs = self.started.elapsed().as_secs_f64();
        self.set("wall_seconds", format!("{secs:.3}"));
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (k, v) in &self.entries {
            writeln!(out, "{k}={v}")?;
        }
        out.flush()
    }
}
