//! Provenance records written next to every artifact.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::Result;
use crate::files;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `<output>.provenance`, beside the output file or directory.
pub fn path_for(output: &Path) -> PathBuf {
    let mut name: OsString = output.file_name().map(OsString::from).unwrap_or_else(|| OsString::from("output"));
    name.push(".provenance");
    output.with_file_name(name)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(files::read_bytes(path)?)))
}

#[derive(Debug, Clone)]
pub struct Record<'a> {
    pub command: &'a str,
    pub args: &'a [String],
    pub config: &'a RunConfig,
    pub inputs: Vec<&'a Path>,
}

impl Record<'_> {
    /// Deterministic text: no timestamps, no host details.
    pub fn render(&self) -> Result<String> {
        let mut s = String::new();
        let _ = writeln!(s, "# provenance v1");
        let _ = writeln!(s, "toolkit = \"latent-edit {VERSION}\"");
        let _ = writeln!(s, "command = \"{}\"", self.command);
        let args: Vec<String> = self.args.iter().map(|a| toml::Value::String(a.clone()).to_string()).collect();
        let _ = writeln!(s, "args = [{}]", args.join(", "));
        match self.config.seed {
            Some(seed) => {
                let _ = writeln!(s, "seed = {seed}");
            }
            None => {
                let _ = writeln!(s, "seed = \"none\"");
            }
        }
        let _ = writeln!(s, "\n[inputs]");
        for p in &self.inputs {
            let key = toml::Value::String(p.display().to_string()).to_string();
            let _ = writeln!(s, "{key} = \"sha256:{}\"", sha256_file(p)?);
        }
        let _ = writeln!(s, "\n[config]");
        s.push_str(&self.config.snapshot());
        Ok(s)
    }

    pub fn write_for(&self, output: &Path) -> Result<()> {
        files::write(&path_for(output), self.render()?.as_bytes())
    }
}
