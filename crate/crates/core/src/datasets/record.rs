use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Identity reserved for junk / distractor gallery images.
pub const JUNK_IDENTITY: i64 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            other => Err(Error::InvalidRecord(format!("unknown split {other:?}"))),
        }
    }
}

/// Where a record's pixels live.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageRef {
    /// Path as written in the manifest; relative paths resolve against the
    /// manifest's directory.
    Path(PathBuf),
    Inline(Arc<ImageTensor>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub image: ImageRef,
    pub identity: i64,
    pub camera: u32,
    pub split: Split,
    pub is_synthetic: bool,
    pub provenance: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub records: Vec<ImageRecord>,
    pub num_cameras: usize,
    pub num_identities: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub image_channels: usize,
    pub seed: Option<u64>,
}

impl DatasetManifest {
    /// Builds a manifest, deriving the identity count from the train split
    /// and checking every record invariant.
    pub fn new(
        name: impl Into<String>,
        records: Vec<ImageRecord>,
        num_cameras: usize,
        image_shape: (usize, usize, usize),
        seed: Option<u64>,
    ) -> Result<Self> {
        let mut m = Self {
            name: name.into(),
            records,
            num_cameras,
            num_identities: 0,
            image_height: image_shape.0,
            image_width: image_shape.1,
            image_channels: image_shape.2,
            seed,
        };
        m.num_identities = m.count_train_identities();
        m.validate()?;
        Ok(m)
    }

    pub fn count_train_identities(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.split == Split::Train && r.identity >= 0)
            .map(|r| r.identity)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_cameras == 0 {
            return Err(Error::InvalidRecord("camera count must be positive".into()));
        }
        if self.image_height == 0 || self.image_width == 0 || self.image_channels == 0 {
            return Err(Error::InvalidRecord("image dimensions must be positive".into()));
        }
        for r in &self.records {
            if r.camera < 1 || r.camera as usize > self.num_cameras {
                return Err(Error::CameraOutOfRange {
                    camera: r.camera as i64,
                    num_cameras: self.num_cameras,
                });
            }
            if r.identity < JUNK_IDENTITY {
                return Err(Error::InvalidRecord(format!("identity {} < -1", r.identity)));
            }
            if r.identity == JUNK_IDENTITY && r.split != Split::Gallery {
                return Err(Error::InvalidRecord(format!(
                    "junk identity outside gallery split ({})",
                    r.split
                )));
            }
        }
        let n = self.count_train_identities();
        if n != self.num_identities {
            return Err(Error::InvalidRecord(format!(
                "N={} but train split holds {n} identities",
                self.num_identities
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.image_height, self.image_width, self.image_channels)
    }

    /// Sorted distinct non-junk identities over all splits.
    pub fn identities(&self) -> Vec<i64> {
        self.records
            .iter()
            .filter(|r| r.identity >= 0)
            .map(|r| r.identity)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Returns a copy whose identities are relabeled to `0..n` in sorted
    /// order, together with the original labels (index = new label).
    pub fn remap_identities(&self) -> Result<(DatasetManifest, Vec<i64>)> {
        let vocab = self.identities();
        let mut out = self.clone();
        for r in &mut out.records {
            if r.identity >= 0 {
                r.identity = vocab.binary_search(&r.identity).unwrap() as i64;
            }
        }
        out.num_identities = out.count_train_identities();
        Ok((out, vocab))
    }
}
