use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{Op, Opcode};

const SHIPPED: &str = include_str!("../../data/latency.toml");
const SCHEMA: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum LatencyError {
    #[error("latency table: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("latency table: unsupported schema {found} (expected {SCHEMA})")]
    Schema { found: u32 },
    #[error("latency table: unknown operation or mnemonic `{0}`")]
    UnknownKey(String),
    #[error("latency table: `{0}` must be at least 1 cycle")]
    Zero(String),
    #[error("latency table: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    schema: u32,
    #[serde(default)]
    latency: BTreeMap<String, u32>,
}

/// Static per-opcode latency approximation, in cycles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatencyTable {
    cycles: Vec<u32>,
}

impl Default for LatencyTable {
    fn default() -> Self {
        LatencyTable::parse(SHIPPED).expect("shipped latency table is valid")
    }
}

impl LatencyTable {
    /// Every opcode costs `cycles`.
    pub fn uniform(cycles: u32) -> LatencyTable {
        LatencyTable {
            cycles: vec![cycles.max(1); Opcode::SLOTS],
        }
    }

    pub fn parse(text: &str) -> Result<LatencyTable, LatencyError> {
        let file: TableFile = toml::from_str(text)?;
        if file.schema != SCHEMA {
            return Err(LatencyError::Schema { found: file.schema });
        }
        let mut table = LatencyTable::uniform(1);
        // Base operation names first, then full mnemonics override them.
        let (bases, mnemonics): (Vec<_>, Vec<_>) = file
            .latency
            .iter()
            .partition(|(key, _)| Op::from_name(key).is_some());
        for (key, &cycles) in bases.into_iter().chain(mnemonics) {
            if cycles == 0 {
                return Err(LatencyError::Zero(key.clone()));
            }
            let targets: Vec<Opcode> = match Op::from_name(key) {
                Some(op) => Opcode::all().iter().copied().filter(|o| o.op() == op).collect(),
                None => Opcode::all()
                    .iter()
                    .copied()
                    .filter(|o| o.mnemonic() == *key)
                    .collect(),
            };
            if targets.is_empty() {
                return Err(LatencyError::UnknownKey(key.clone()));
            }
            for opcode in targets {
                table.cycles[opcode.slot()] = cycles;
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<LatencyTable, LatencyError> {
        LatencyTable::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, opcode: Opcode) -> u32 {
        self.cycles[opcode.slot()]
    }

    pub fn set(&mut self, opcode: Opcode, cycles: u32) {
        self.cycles[opcode.slot()] = cycles.max(1);
    }
}
