//! Output bundles: hashed files, a summary, a manifest and a `.partial`
//! marker that only disappears once the bundle is complete.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::run::Outcome;

pub const PARTIAL: &str = ".partial";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub struct Bundle {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Bundle {
    /// Creates `dir` and marks it partial.
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join(PARTIAL), "running\n")?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes a file and records its digest.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.hashes.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    /// Leaves the marker in place with the failing stage and error.
    pub fn fail(&self, error: &anyhow::Error) -> Result<()> {
        fs::write(self.dir.join(PARTIAL), format!("{error:#}\n"))?;
        Ok(())
    }

    /// Writes summary, check table and manifest, then clears the marker.
    pub fn finish(mut self, config: &ExperimentConfig, outcome: &Outcome) -> Result<()> {
        let all_passed = outcome.all_passed();
        let summary = json!({
            "kind": config.kind.name(),
            "all_passed": all_passed,
            "checks": outcome.checks,
            "stats": outcome.stats,
        });
        self.write("summary.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?;

        let mut csv = String::from("name,member,passed,value,threshold,detail\n");
        for c in &outcome.checks {
            let member = c.member.map_or(String::new(), |m| m.to_string());
            let _ = writeln!(
                csv,
                "{},{member},{},{:e},{:e},{}",
                c.name,
                c.passed,
                c.value,
                c.threshold,
                csv_field(&c.detail)
            );
        }
        self.write("checks.csv", &csv)?;

        let config_json = config.to_json();
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "kind": config.kind.name(),
            "config": config_json,
            "config_sha256": sha256_hex(serde_json::to_string(&config_json)?.as_bytes()),
            "files": self.hashes,
            "all_passed": all_passed,
            "timestamp_unix": timestamp,
        });
        fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        fs::remove_file(self.dir.join(PARTIAL))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a, \"b\""), "\"a, \"\"b\"\"\"");
    }
}
