//! Dataset manifest: a JSON document listing each case's ID, image and label
//! paths (relative to the manifest's directory unless absolute), and
//! provenance.
//!
//! ```json
//! {
//!   "version": 1,
//!   "cases": [
//!     {"id": "case-000", "image": "images/case-000.nii", "labels": "labels/case-000.nii",
//!      "provenance": {"kind": "original"}},
//!     {"id": "case-000__case-001__fwd", "image": "...", "labels": "...",
//!      "provenance": {"kind": "synthesized", "template_id": "case-000",
//!                     "partner_id": "case-001", "direction": "forward"}}
//!   ]
//! }
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::case::{validate_id, LabeledCase, Provenance};
use crate::error::{Error, Result};
use crate::volume_io::{load_image, load_labels, save_image, save_labels};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub labels: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub cases: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(cases: Vec<ManifestEntry>) -> Result<Self> {
        let m = Manifest {
            version: MANIFEST_VERSION,
            cases,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::format("manifest", format!("unsupported version {}", self.version)));
        }
        let mut seen = HashSet::new();
        for e in &self.cases {
            validate_id(&e.id)?;
            if !seen.insert(e.id.as_str()) {
                return Err(Error::format("manifest", format!("duplicate id {:?}", e.id)));
            }
            if e.image.is_empty() || e.labels.is_empty() {
                return Err(Error::format("manifest", format!("empty path for {:?}", e.id)));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn ids(&self) -> Vec<&str> {
        self.cases.iter().map(|e| e.id.as_str()).collect()
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads every case of the manifest at `path`.
pub fn load_dataset(path: &Path) -> Result<Vec<LabeledCase>> {
    let manifest = Manifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    manifest
        .cases
        .iter()
        .map(|e| {
            LabeledCase::new(
                e.id.clone(),
                load_image(&resolve(base, &e.image))?,
                load_labels(&resolve(base, &e.labels))?,
                e.provenance.clone(),
            )
        })
        .collect()
}

/// Writes `images/<id>.nii`, `labels/<id>.nii` and `manifest.json` under
/// `dir`; returns the manifest path.
pub fn save_dataset(dir: &Path, cases: &[LabeledCase]) -> Result<PathBuf> {
    for sub in ["images", "labels"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(cases.len());
    for c in cases {
        let image = format!("images/{}.nii", c.id);
        let labels = format!("labels/{}.nii", c.id);
        save_image(&dir.join(&image), &c.image)?;
        save_labels(&dir.join(&labels), &c.labels)?;
        entries.push(ManifestEntry {
            id: c.id.clone(),
            image,
            labels,
            provenance: c.provenance.clone(),
        });
    }
    let path = dir.join(MANIFEST_FILE);
    Manifest::new(entries)?.save(&path)?;
    Ok(path)
}
