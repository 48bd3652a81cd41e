//! Per-condition feature traversals and the `SPF1` feature-file format.
//!
//! Layout (little-endian): magic `SPF1`, `u32` dimension, `u32` frame
//! count, `u32` condition id, then one record per frame of `u32` frame id
//! followed by `dimension` `f32` values.
//!
//! A store on disk is a JSON manifest listing one feature file per
//! condition, the place tolerance, and optionally a ground-truth file
//! mapping each frame id to its place id.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::{self, ByteReader};
use crate::place::PlaceConvention;

pub const FEATURE_MAGIC: &[u8; 4] = b"SPF1";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    /// Position of the frame within its traversal.
    pub frame_id: u32,
    pub condition_id: u32,
    /// Ground-truth place index; equals `frame_id` for unperturbed traversals.
    pub place_id: u32,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Traversal {
    pub condition_id: u32,
    pub name: String,
    pub dim: usize,
    pub frames: Vec<FeatureFrame>,
}

impl Traversal {
    /// Builds a traversal whose frame and place ids are `0..len`.
    pub fn from_features(
        condition_id: u32,
        name: impl Into<String>,
        features: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let dim = features.first().map_or(0, Vec::len);
        let frames = features
            .into_iter()
            .enumerate()
            .map(|(i, features)| FeatureFrame {
                frame_id: i as u32,
                condition_id,
                place_id: i as u32,
                features,
            })
            .collect();
        let t = Traversal {
            condition_id,
            name: name.into(),
            dim,
            frames,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn place_ids(&self) -> Vec<u32> {
        self.frames.iter().map(|f| f.place_id).collect()
    }

    pub fn set_condition(&mut self, condition_id: u32) {
        self.condition_id = condition_id;
        for f in &mut self.frames {
            f.condition_id = condition_id;
        }
    }

    /// Rewrites frame ids to match positions, keeping place ids.
    pub(crate) fn renumber(&mut self) {
        for (i, f) in self.frames.iter_mut().enumerate() {
            f.frame_id = i as u32;
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.frames.iter().enumerate() {
            if f.features.len() != self.dim {
                return Err(Error::Shape {
                    context: "traversal frame",
                    expected: self.dim,
                    actual: f.features.len(),
                });
            }
            if f.condition_id != self.condition_id {
                return Err(Error::Config(format!(
                    "frame {i} has condition {} in traversal of condition {}",
                    f.condition_id, self.condition_id
                )));
            }
            if f.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    offset: 0,
                    record: i,
                });
            }
        }
        Ok(())
    }

    pub fn to_spf_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.frames.len() * (4 + 4 * self.dim));
        out.extend_from_slice(FEATURE_MAGIC);
        fsio::put_u32(&mut out, self.dim as u32);
        fsio::put_u32(&mut out, self.frames.len() as u32);
        fsio::put_u32(&mut out, self.condition_id);
        for f in &self.frames {
            fsio::put_u32(&mut out, f.frame_id);
            for &v in &f.features {
                fsio::put_f32(&mut out, v as f32);
            }
        }
        out
    }

    /// Decodes an `SPF1` buffer. Frames come back sorted by frame id, with
    /// place ids defaulting to frame ids.
    pub fn from_spf_bytes(bytes: &[u8], name: impl Into<String>) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4).ok_or_else(|| Error::Header {
            offset: 0,
            reason: format!("file has {} bytes, header needs {HEADER_LEN}", bytes.len()),
        })?;
        if magic != FEATURE_MAGIC {
            return Err(Error::Header {
                offset: 0,
                reason: format!("bad magic {magic:?}"),
            });
        }
        let short = |offset| Error::Header {
            offset,
            reason: "header ends early".into(),
        };
        let dim = r.u32().ok_or_else(|| short(r.offset()))? as usize;
        let count = r.u32().ok_or_else(|| short(r.offset()))? as usize;
        let condition_id = r.u32().ok_or_else(|| short(r.offset()))?;
        if dim == 0 {
            return Err(Error::Header {
                offset: 4,
                reason: "feature dimension is zero".into(),
            });
        }
        let record_len = 4 + 4 * dim;
        let mut frames = Vec::with_capacity(count.min(r.remaining() / record_len + 1));
        for record in 0..count {
            let offset = r.offset();
            let frame_id = r.u32().ok_or(Error::Truncated { offset, record })?;
            let mut features = Vec::with_capacity(dim);
            for _ in 0..dim {
                let at = r.offset();
                let v = r.f32().ok_or(Error::Truncated { offset: at, record })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite { offset: at, record });
                }
                features.push(v as f64);
            }
            frames.push(FeatureFrame {
                frame_id,
                condition_id,
                place_id: frame_id,
                features,
            });
        }
        if r.remaining() != 0 {
            return Err(Error::Header {
                offset: r.offset(),
                reason: format!("{} trailing bytes after {count} records", r.remaining()),
            });
        }
        frames.sort_by_key(|f| f.frame_id);
        if let Some(w) = frames.windows(2).find(|w| w[0].frame_id == w[1].frame_id) {
            return Err(Error::DuplicateFrame {
                condition_id,
                frame_id: w[0].frame_id,
            });
        }
        Ok(Traversal {
            condition_id,
            name: name.into(),
            dim,
            frames,
        })
    }

    pub fn write_spf(&self, path: &Path) -> Result<()> {
        let bytes = self.to_spf_bytes();
        fsio::write_atomic(path, |w| w.write_all(&bytes))
    }

    pub fn read_spf(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Traversal::from_spf_bytes(&bytes, name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub condition_id: u32,
    pub name: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dim: usize,
    #[serde(default)]
    pub tolerance: u32,
    pub conditions: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    /// condition id -> (frame id -> place id)
    pub conditions: BTreeMap<u32, BTreeMap<u32, u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub dim: usize,
    pub convention: PlaceConvention,
    pub traversals: Vec<Traversal>,
}

impl FeatureStore {
    pub fn new(traversals: Vec<Traversal>, convention: PlaceConvention) -> Result<Self> {
        let dim = traversals.first().ok_or(Error::Empty("feature store"))?.dim;
        for t in &traversals {
            if t.dim != dim {
                return Err(Error::Dimension {
                    path: PathBuf::from(&t.name),
                    expected: dim,
                    found: t.dim,
                });
            }
            t.validate()?;
        }
        let mut ids: Vec<u32> = traversals.iter().map(|t| t.condition_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate condition ids in store".into()));
        }
        Ok(FeatureStore {
            dim,
            convention,
            traversals,
        })
    }

    pub fn condition_ids(&self) -> Vec<u32> {
        self.traversals.iter().map(|t| t.condition_id).collect()
    }

    pub fn traversal(&self, condition_id: u32) -> Result<&Traversal> {
        self.traversals
            .iter()
            .find(|t| t.condition_id == condition_id)
            .ok_or(Error::UnknownCondition(condition_id))
    }

    pub fn traversal_mut(&mut self, condition_id: u32) -> Result<&mut Traversal> {
        self.traversals
            .iter_mut()
            .find(|t| t.condition_id == condition_id)
            .ok_or(Error::UnknownCondition(condition_id))
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            conditions: self
                .traversals
                .iter()
                .map(|t| {
                    let map = t.frames.iter().map(|f| (f.frame_id, f.place_id)).collect();
                    (t.condition_id, map)
                })
                .collect(),
        }
    }

    /// Writes one feature file per condition, the ground truth, and the
    /// manifest into `dir`. Returns the manifest path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let mut conditions = Vec::with_capacity(self.traversals.len());
        for t in &self.traversals {
            let file = format!("cond{}.spf", t.condition_id);
            t.write_spf(&dir.join(&file))?;
            conditions.push(ManifestEntry {
                condition_id: t.condition_id,
                name: t.name.clone(),
                file,
            });
        }
        fsio::write_json_atomic(&dir.join("ground_truth.json"), &self.ground_truth())?;
        let manifest = Manifest {
            dim: self.dim,
            tolerance: self.convention.tolerance,
            conditions,
            ground_truth: Some("ground_truth.json".into()),
        };
        let path = dir.join("manifest.json");
        fsio::write_json_atomic(&path, &manifest)?;
        Ok(path)
    }
}

/// Loads a store from a JSON manifest, or a single-condition store from a
/// bare `SPF1` file.
pub fn load_feature_store(path: &Path) -> Result<FeatureStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if !bytes.starts_with(FEATURE_MAGIC) && bytes.first() == Some(&b'{') {
        return load_manifest(path);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let t = Traversal::from_spf_bytes(&bytes, name)?;
    FeatureStore::new(vec![t], PlaceConvention::EXACT)
}

fn load_manifest(path: &Path) -> Result<FeatureStore> {
    let manifest: Manifest = fsio::read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let truth: Option<GroundTruth> = match &manifest.ground_truth {
        Some(file) => Some(fsio::read_json(&base.join(file))?),
        None => None,
    };
    let mut traversals = Vec::with_capacity(manifest.conditions.len());
    for entry in &manifest.conditions {
        let file = base.join(&entry.file);
        let mut t = Traversal::read_spf(&file)?;
        if t.dim != manifest.dim {
            return Err(Error::Dimension {
                path: file,
                expected: manifest.dim,
                found: t.dim,
            });
        }
        if t.condition_id != entry.condition_id {
            return Err(Error::Header {
                offset: 12,
                reason: format!(
                    "{} declares condition {}, manifest says {}",
                    file.display(),
                    t.condition_id,
                    entry.condition_id
                ),
            });
        }
        t.name = entry.name.clone();
        if let Some(map) = truth.as_ref().and_then(|g| g.conditions.get(&t.condition_id)) {
            for f in &mut t.frames {
                f.place_id = *map.get(&f.frame_id).ok_or_else(|| {
                    Error::Config(format!(
                        "ground truth lacks frame {} of condition {}",
                        f.frame_id, t.condition_id
                    ))
                })?;
            }
        }
        traversals.push(t);
    }
    FeatureStore::new(traversals, PlaceConvention::new(manifest.tolerance))
}
