use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::clipstore::{extract_gray, extract_red, read_clip, Catalog, ClipRecord, FrameSequence, Pixel};
use crate::error::{Error, Result};

/// Which labels a network predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Hr,
    Rr,
    Both,
}

impl Task {
    pub fn n_outputs(self) -> usize {
        match self {
            Task::Both => 2,
            _ => 1,
        }
    }

    pub fn labels(self, r: &ClipRecord) -> Vec<f64> {
        match self {
            Task::Hr => vec![r.hr_bpm],
            Task::Rr => vec![r.rr_brpm],
            Task::Both => vec![r.hr_bpm, r.rr_brpm],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Hr => "hr",
            Task::Rr => "rr",
            Task::Both => "both",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hr" => Ok(Task::Hr),
            "rr" => Ok(Task::Rr),
            "both" => Ok(Task::Both),
            other => Err(Error::invalid(format!("unknown task {other:?}"))),
        }
    }
}

/// Colour reduction applied before a clip reaches the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Red,
    Gray,
}

impl Channel {
    pub fn extract<P: Pixel>(self, seq: &FrameSequence<P>) -> Result<FrameSequence<P>> {
        match self {
            Channel::Red => extract_red(seq),
            Channel::Gray => extract_gray(seq),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Red => "red",
            Channel::Gray => "gray",
        })
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "red" => Ok(Channel::Red),
            "gray" => Ok(Channel::Gray),
            other => Err(Error::invalid(format!("unknown channel {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Access {
    Train,
    Validate,
    Evaluate,
}

/// Where the trainer gets clips from.
pub trait ClipSource {
    fn record(&self, clip_id: &str) -> Result<&ClipRecord>;
    fn load(&self, clip_id: &str, access: Access) -> Result<Arc<FrameSequence<u8>>>;
}

/// Catalog-backed source that caches decoded clips and remembers every
/// `(clip_id, access)` pair it served.
pub struct CatalogSource {
    catalog: Catalog,
    cache: Mutex<HashMap<String, Arc<FrameSequence<u8>>>>,
    log: Mutex<BTreeSet<(String, Access)>>,
}

impl CatalogSource {
    pub fn new(catalog: Catalog) -> Self {
        Self {
            catalog,
            cache: Mutex::new(HashMap::new()),
            log: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn accessed(&self, access: Access) -> BTreeSet<String> {
        let log = self.log.lock().unwrap();
        log.iter().filter(|(_, a)| *a == access).map(|(id, _)| id.clone()).collect()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap().clear();
    }
}

impl ClipSource for CatalogSource {
    fn record(&self, clip_id: &str) -> Result<&ClipRecord> {
        self.catalog
            .get(clip_id)
            .ok_or_else(|| Error::Catalog(format!("unknown clip id {clip_id}")))
    }

    fn load(&self, clip_id: &str, access: Access) -> Result<Arc<FrameSequence<u8>>> {
        let path = self.record(clip_id)?.path.clone();
        self.log.lock().unwrap().insert((clip_id.to_string(), access));
        if let Some(seq) = self.cache.lock().unwrap().get(clip_id) {
            return Ok(Arc::clone(seq));
        }
        let seq = Arc::new(read_clip(&path)?);
        self.cache.lock().unwrap().insert(clip_id.to_string(), Arc::clone(&seq));
        Ok(seq)
    }
}
