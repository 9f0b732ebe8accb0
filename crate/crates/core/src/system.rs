//! Adsorbate + catalyst systems.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Atom role: fixed subsurface catalyst, catalyst surface, or adsorbate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Subsurface = 0,
    Surface = 1,
    Adsorbate = 2,
}

impl Tag {
    pub fn is_adsorbate(self) -> bool {
        self == Tag::Adsorbate
    }

    pub fn is_catalyst(self) -> bool {
        !self.is_adsorbate()
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl TryFrom<i64> for Tag {
    type Error = String;

    fn try_from(v: i64) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Tag::Subsurface),
            1 => Ok(Tag::Surface),
            2 => Ok(Tag::Adsorbate),
            other => Err(format!("tag {other} not in {{0,1,2}}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    ValId,
    ValOodAds,
    ValOodCat,
    ValOodBoth,
}

impl Split {
    pub const ALL: [Split; 5] = [
        Split::Train,
        Split::ValId,
        Split::ValOodAds,
        Split::ValOodCat,
        Split::ValOodBoth,
    ];
    pub const VALIDATION: [Split; 4] = [Split::ValId, Split::ValOodAds, Split::ValOodCat, Split::ValOodBoth];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ValId => "val_id",
            Split::ValOodAds => "val_ood_ads",
            Split::ValOodCat => "val_ood_cat",
            Split::ValOodBoth => "val_ood_both",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|sp| sp.as_str() == s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    pub adsorbate_id: String,
    pub bulk_id: String,
    pub cell_hash: String,
    pub split: Split,
}

impl Default for Metadata {
    fn default() -> Self {
        Metadata {
            adsorbate_id: String::new(),
            bulk_id: String::new(),
            cell_hash: crate::data::NO_CELL_HASH.to_string(),
            split: Split::Train,
        }
    }
}

pub type Vec3 = [f64; 3];
/// Lattice vectors as rows.
pub type Cell = [[f64; 3]; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct AtomicSystem {
    pub id: String,
    pub atomic_numbers: Vec<u32>,
    pub positions: Vec<Vec3>,
    pub tags: Vec<Tag>,
    pub cell: Option<Cell>,
    pub target_energy: Option<f64>,
    pub metadata: Metadata,
}

impl AtomicSystem {
    /// A system with default metadata; checks the per-atom invariants but not
    /// the two-component requirement (see [`AtomicSystem::validate_adslab`]).
    pub fn new(id: impl Into<String>, atomic_numbers: Vec<u32>, positions: Vec<Vec3>, tags: Vec<Tag>) -> Result<Self> {
        let sys = AtomicSystem {
            id: id.into(),
            atomic_numbers,
            positions,
            tags,
            cell: None,
            target_energy: None,
            metadata: Metadata::default(),
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn len(&self) -> usize {
        self.atomic_numbers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atomic_numbers.is_empty()
    }

    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::InvalidSystem {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.atomic_numbers.len();
        if self.positions.len() != n || self.tags.len() != n {
            return Err(self.invalid(format!(
                "length mismatch: {n} atomic numbers, {} positions, {} tags",
                self.positions.len(),
                self.tags.len()
            )));
        }
        if n == 0 {
            return Err(self.invalid("no atoms"));
        }
        if let Some((atom, &z)) = self
            .atomic_numbers
            .iter()
            .enumerate()
            .find(|(_, &z)| !(1..=100).contains(&z))
        {
            return Err(Error::AtomicNumber { atom, z });
        }
        if let Some(i) = self.positions.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(self.invalid(format!("non-finite position for atom {i}")));
        }
        if let Some(cell) = &self.cell {
            if cell.iter().flatten().any(|v| !v.is_finite()) {
                return Err(self.invalid("non-finite cell"));
            }
        }
        if let Some(e) = self.target_energy {
            if !e.is_finite() {
                return Err(self.invalid("non-finite target energy"));
            }
        }
        Ok(())
    }

    /// Full adslab check: per-atom invariants plus at least one adsorbate and
    /// one catalyst atom.
    pub fn validate_adslab(&self) -> Result<()> {
        self.validate()?;
        if !self.tags.iter().any(|t| t.is_adsorbate()) {
            return Err(self.invalid("no adsorbate (tag 2) atoms"));
        }
        if !self.tags.iter().any(|t| t.is_catalyst()) {
            return Err(self.invalid("no catalyst (tag 0/1) atoms"));
        }
        Ok(())
    }

    /// The atoms at `indices`, in that order; id, cell and metadata are kept.
    pub fn subset(&self, indices: &[usize]) -> AtomicSystem {
        AtomicSystem {
            id: self.id.clone(),
            atomic_numbers: indices.iter().map(|&i| self.atomic_numbers[i]).collect(),
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            tags: indices.iter().map(|&i| self.tags[i]).collect(),
            cell: self.cell,
            target_energy: self.target_energy,
            metadata: self.metadata.clone(),
        }
    }

    pub fn adsorbate_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tags[i].is_adsorbate()).collect()
    }

    pub fn catalyst_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tags[i].is_catalyst()).collect()
    }
}
