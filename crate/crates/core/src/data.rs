//! Dataset serialization (JSON Lines) and duplicate-target analysis.
//!
//! One system per line:
//!
//! ```text
//! {"id": str, "atomic_numbers": [int], "positions": [[x,y,z],...], "tags": [int],
//!  "cell": [[..],[..],[..]] | null, "target_energy": float | null,
//!  "metadata": {"adsorbate_id": str, "bulk_id": str, "cell_hash": str, "split": str}}
//! ```
//!
//! Unknown fields are rejected. Writing uses this field order, so output is
//! byte-stable.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::system::{AtomicSystem, Cell, Metadata, Split, Tag};

/// `cell_hash` of systems without a cell.
pub const NO_CELL_HASH: &str = "none";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub systems: Vec<AtomicSystem>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    atomic_numbers: Vec<u32>,
    positions: Vec<[f64; 3]>,
    tags: Vec<i64>,
    cell: Option<Cell>,
    target_energy: Option<f64>,
    metadata: RecordMetadata,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordMetadata {
    adsorbate_id: String,
    bulk_id: String,
    cell_hash: String,
    split: String,
}

impl Dataset {
    pub fn new(systems: Vec<AtomicSystem>) -> Result<Self> {
        let d = Dataset { systems };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.systems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.systems {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate id {:?}", s.id)));
            }
            s.validate_adslab()?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&AtomicSystem> {
        self.systems.iter().filter(|s| s.metadata.split == split).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.systems {
            out.push_str(&serde_json::to_string(&to_record(s))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut systems = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |reason: String| Error::Parse { line: line_no, reason };
            let record: Record = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            let system = from_record(record).map_err(parse_err)?;
            system.validate_adslab().map_err(|e| parse_err(e.to_string()))?;
            if !seen.insert(system.id.clone()) {
                return Err(parse_err(format!("duplicate id {:?}", system.id)));
            }
            systems.push(system);
        }
        Ok(Dataset { systems })
    }
}

fn to_record(s: &AtomicSystem) -> Record {
    Record {
        id: s.id.clone(),
        atomic_numbers: s.atomic_numbers.clone(),
        positions: s.positions.clone(),
        tags: s.tags.iter().map(|t| t.as_u8() as i64).collect(),
        cell: s.cell,
        target_energy: s.target_energy,
        metadata: RecordMetadata {
            adsorbate_id: s.metadata.adsorbate_id.clone(),
            bulk_id: s.metadata.bulk_id.clone(),
            cell_hash: s.metadata.cell_hash.clone(),
            split: s.metadata.split.as_str().to_string(),
        },
    }
}

fn from_record(r: Record) -> std::result::Result<AtomicSystem, String> {
    let tags = r
        .tags
        .into_iter()
        .map(Tag::try_from)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let split = Split::parse(&r.metadata.split).ok_or_else(|| format!("unknown split label {:?}", r.metadata.split))?;
    Ok(AtomicSystem {
        id: r.id,
        atomic_numbers: r.atomic_numbers,
        positions: r.positions,
        tags,
        cell: r.cell,
        target_energy: r.target_energy,
        metadata: Metadata {
            adsorbate_id: r.metadata.adsorbate_id,
            bulk_id: r.metadata.bulk_id,
            cell_hash: r.metadata.cell_hash,
            split,
        },
    })
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_jsonl(&text)
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset.to_jsonl()?).map_err(|e| Error::io(path, e))
}

/// SHA-256 (first 16 hex digits) of the cell rounded to 1e-6 Å.
pub fn cell_hash(cell: Option<&Cell>) -> String {
    let Some(cell) = cell else {
        return NO_CELL_HASH.to_string();
    };
    let text: Vec<String> = cell
        .iter()
        .flatten()
        .map(|v| {
            let s = format!("{v:.6}");
            // -0.000000 and 0.000000 are the same cell
            if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
                "0.000000".to_string()
            } else {
                s
            }
        })
        .collect();
    let digest = Sha256::digest(text.join(",").as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuplicateStats {
    pub n_systems: usize,
    pub n_groups: usize,
    pub n_multi_target: usize,
    pub fraction_multi_target: f64,
}

/// Tolerance under which two targets count as the same.
pub const TARGET_EQUAL_TOL: f64 = 1e-6;

/// Groups systems by `(adsorbate_id, bulk_id, cell_hash)` and reports the
/// fraction of systems whose group holds more than one distinct target.
pub fn duplicate_target_stats(dataset: &Dataset) -> Result<DuplicateStats> {
    let mut groups: BTreeMap<(&str, &str, &str), Vec<f64>> = BTreeMap::new();
    for s in &dataset.systems {
        let m = &s.metadata;
        if m.adsorbate_id.is_empty() || m.bulk_id.is_empty() || m.cell_hash.is_empty() {
            return Err(Error::Dataset(format!("system {:?} lacks grouping metadata", s.id)));
        }
        let t = s
            .target_energy
            .ok_or_else(|| Error::Dataset(format!("system {:?} has no target energy", s.id)))?;
        groups
            .entry((&m.adsorbate_id, &m.bulk_id, &m.cell_hash))
            .or_default()
            .push(t);
    }
    let mut multi = 0;
    for targets in groups.values() {
        if targets.len() < 2 {
            continue;
        }
        let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > TARGET_EQUAL_TOL {
            multi += targets.len();
        }
    }
    let n = dataset.systems.len();
    Ok(DuplicateStats {
        n_systems: n,
        n_groups: groups.len(),
        n_multi_target: multi,
        fraction_multi_target: if n == 0 { 0.0 } else { multi as f64 / n as f64 },
    })
}
