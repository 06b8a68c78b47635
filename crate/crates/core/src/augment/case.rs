use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::{ImageVolume, LabelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Template warped by `φ`.
    Forward,
    /// Partner warped by `φ⁻¹`.
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Synthesized {
        template_id: String,
        partner_id: String,
        direction: Direction,
    },
}

/// An image with its label volume on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCase {
    pub id: String,
    pub image: ImageVolume,
    pub labels: LabelVolume,
    pub provenance: Provenance,
}

impl LabeledCase {
    pub fn new(id: impl Into<String>, image: ImageVolume, labels: LabelVolume, provenance: Provenance) -> Result<Self> {
        let id = id.into();
        validate_id(&id)?;
        image.same_grid(&labels)?;
        Ok(LabeledCase {
            id,
            image,
            labels,
            provenance,
        })
    }

    pub fn original(id: impl Into<String>, image: ImageVolume, labels: LabelVolume) -> Result<Self> {
        Self::new(id, image, labels, Provenance::Original)
    }

    pub fn is_synthesized(&self) -> bool {
        matches!(self.provenance, Provenance::Synthesized { .. })
    }

    /// Foreground classes 1..=9 absent from the labels.
    pub fn missing_classes(&self) -> Vec<u8> {
        let counts = self.labels.class_counts();
        (1..counts.len() as u8).filter(|&c| counts[c as usize] == 0).collect()
    }
}

/// IDs double as file stems: nonempty ASCII alphanumerics plus `-`, `_`, `.`,
/// not starting with `.`.
pub fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 200
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b'.');
    if ok {
        Ok(())
    } else {
        Err(Error::format("case id", format!("{id:?}")))
    }
}
