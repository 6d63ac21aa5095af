//! Run manifests: the resolved configuration plus hashes of every input.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Resolved;
use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Inputs a run read, by name. Bundled fixtures are named `bundled:<name>`.
#[derive(Debug, Default, Clone, Serialize)]
pub struct Fixtures(BTreeMap<String, String>);

impl Fixtures {
    pub fn add(&mut self, name: impl Into<String>, bytes: &[u8]) {
        self.0.insert(name.into(), sha256_hex(bytes));
    }
}

/// Contains no timestamps, so identical runs write identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    #[serde(flatten)]
    pub resolved: &'a Resolved,
    pub fixtures: &'a Fixtures,
    pub outputs: Vec<String>,
}

pub fn write_manifest(
    out: &Path,
    command: &str,
    resolved: &Resolved,
    fixtures: &Fixtures,
    outputs: &[&str],
) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        resolved,
        fixtures,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifests serialize");
    let path = out.join("manifest.json");
    std::fs::write(&path, text + "\n")
        .map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_input() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
