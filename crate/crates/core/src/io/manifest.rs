//! Run manifests: `key = value` lines recording what produced an output.
//! No timestamps, so identical runs give identical manifests.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            entries: vec![
                ("tool".into(), "nvpolar".into()),
                ("version".into(), env!("CARGO_PKG_VERSION").into()),
                ("command".into(), command.into()),
            ],
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.set("seed", seed)
    }

    pub fn input(&mut self, name: &str, bytes: &[u8]) -> &mut Self {
        self.set(format!("input.{name}.sha256"), sha256_hex(bytes))
    }

    pub fn output(&mut self, name: &str, bytes: &[u8]) -> &mut Self {
        self.set(format!("output.{name}.sha256"), sha256_hex(bytes))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
