//! Machine-readable report envelope, seed derivation and atomic file output.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::system::SystemConstants;

/// Frozen identifier of the report layout. Bump on any structural change.
pub const SCHEMA_VERSION: &str = "1";

pub fn report_schema_version() -> &'static str {
    SCHEMA_VERSION
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer applied to `state`.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed `k` of `master`: the `(k+1)`-th output of the SplitMix64 stream
/// started at `master`, i.e. `mix(master + (k+1)·0x9E3779B97F4A7C15)`.
pub fn derive_seed(master: u64, k: u64) -> u64 {
    splitmix64(master.wrapping_add(k.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub const SEED_DERIVATION: &str = "splitmix64: seed_k = mix(master + (k+1)*0x9E3779B97F4A7C15)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl Default for ToolInfo {
    fn default() -> Self {
        Self { name: "formctrl".into(), version: env!("CARGO_PKG_VERSION").into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: Option<u64>,
    pub derivation: String,
}

impl SeedRecord {
    pub fn new(master: Option<u64>) -> Self {
        Self { master, derivation: SEED_DERIVATION.into() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: String,
    pub tool: ToolInfo,
    pub command: String,
    pub config: serde_json::Value,
    pub constants: Vec<SystemConstants>,
    pub seeds: SeedRecord,
    pub timing: Timing,
    pub body: serde_json::Value,
}

impl Report {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.into(),
            tool: ToolInfo::default(),
            command: command.into(),
            config,
            constants: Vec::new(),
            seeds: SeedRecord::new(seed),
            timing: Timing::default(),
            body: serde_json::Value::Null,
        }
    }

    /// Copy with timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self { timing: Timing::default(), ..self.clone() }
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json_pretty()?.as_bytes())
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Sorted dotted key paths of a JSON value; arrays contribute `[]`.
pub fn key_paths(value: &serde_json::Value) -> Vec<String> {
    fn walk(v: &serde_json::Value, prefix: &str, out: &mut Vec<String>) {
        match v {
            serde_json::Value::Object(map) => {
                for (k, child) in map {
                    let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    out.push(path.clone());
                    walk(child, &path, out);
                }
            }
            serde_json::Value::Array(items) => {
                if let Some(first) = items.first() {
                    walk(first, &format!("{prefix}[]"), out);
                }
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(value, "", &mut out);
    out.sort();
    out.dedup();
    out
}
