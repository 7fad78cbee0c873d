use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::Catalog(format!("unknown split {other:?}"))),
        }
    }
}

/// One stored clip with its labels. Field order is the on-disk column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub subject_id: String,
    pub path: PathBuf,
    pub fps: f64,
    pub n_frames: usize,
    pub duration_s: f64,
    pub hr_bpm: f64,
    pub rr_brpm: f64,
    pub quality_pass: bool,
    pub split: Split,
}

impl ClipRecord {
    pub fn validate(&self) -> Result<()> {
        if self.clip_id.is_empty() {
            return Err(Error::Catalog("empty clip_id".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Catalog(format!("{}: fps must be positive", self.clip_id)));
        }
        let expected = self.n_frames as f64 / self.fps;
        if (self.duration_s - expected).abs() > 1e-6 {
            return Err(Error::Catalog(format!(
                "{}: duration {} s disagrees with {} frames at {} fps",
                self.clip_id, self.duration_s, self.n_frames, self.fps
            )));
        }
        if !(self.hr_bpm > 0.0 && self.rr_brpm > 0.0) {
            return Err(Error::Catalog(format!("{}: labels must be positive", self.clip_id)));
        }
        Ok(())
    }

    /// HR x RR, the stratification key for fold generation.
    pub fn rate_product(&self) -> f64 {
        self.hr_bpm * self.rr_brpm
    }
}

/// Ordered list of clip records, stored as comma-separated text with a header row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    pub records: Vec<ClipRecord>,
}

impl Catalog {
    pub fn new(records: Vec<ClipRecord>) -> Result<Self> {
        let catalog = Self { records };
        catalog.check_unique()?;
        for r in &catalog.records {
            r.validate()?;
        }
        Ok(catalog)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.clip_id.as_str()) {
                return Err(Error::Catalog(format!("duplicate clip_id {}", r.clip_id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, clip_id: &str) -> Option<&ClipRecord> {
        self.records.iter().find(|r| r.clip_id == clip_id)
    }

    /// Writes the catalog. Clip paths under the catalog's directory are stored
    /// relative to it.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut w = csv::Writer::from_path(path)?;
        if self.records.is_empty() {
            w.write_record([
                "clip_id", "subject_id", "path", "fps", "n_frames", "duration_s", "hr_bpm", "rr_brpm",
                "quality_pass", "split",
            ])?;
        }
        for r in &self.records {
            match r.path.strip_prefix(&base) {
                Ok(rel) if !base.as_os_str().is_empty() => {
                    let mut rel_rec = r.clone();
                    rel_rec.path = rel.to_path_buf();
                    w.serialize(rel_rec)?;
                }
                _ => w.serialize(r)?,
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a catalog, resolving relative clip paths against the catalog's
    /// directory and checking that every clip file is readable.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Catalog(format!("catalog {} not found", path.display())));
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut rdr = csv::Reader::from_path(path)?;
        let mut records = Vec::new();
        for row in rdr.deserialize() {
            let mut rec: ClipRecord = row?;
            if rec.path.is_relative() {
                rec.path = base.join(&rec.path);
            }
            std::fs::File::open(&rec.path).map_err(|e| Error::io(&rec.path, e))?;
            records.push(rec);
        }
        Self::new(records)
    }
}
