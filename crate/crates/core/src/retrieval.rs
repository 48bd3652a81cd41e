//! Place database and exhaustive nearest-neighbour search.
//!
//! Descriptors are stored as contiguous `f32` rows and compared with the
//! squared Euclidean distance. Ties go to the entry with the lowest start
//! frame id.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{header_error, read_f32s, read_magic, read_u32, INDEX_TAG, PARAMS_MAGIC};
use crate::composer::Composer;
use crate::error::{Error, Result};
use crate::fsio::{self, put_f32, put_u32, ByteReader};
use crate::linalg;
use crate::place::QuerySequence;
use crate::store::Traversal;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub start_frame_id: u32,
    /// Ground-truth places of the window's frames.
    pub place_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceIndex {
    dim: usize,
    descriptors: Vec<f32>,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Position in the index.
    pub entry: usize,
    pub start_frame_id: u32,
    pub sq_distance: f32,
}

/// Squared Euclidean distance. Eight independent accumulators keep the
/// loop free of cross-iteration dependencies so it vectorizes.
#[inline]
pub fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f32 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            let d = x[i] - y[i];
            acc[i] += d * d;
        }
    }
    acc.iter().sum::<f32>() + tail
}

impl PlaceIndex {
    pub fn new(dim: usize) -> Self {
        PlaceIndex {
            dim,
            descriptors: Vec::new(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, descriptor: &[f64], entry: IndexEntry) -> Result<()> {
        if descriptor.len() != self.dim {
            return Err(Error::Shape {
                context: "index descriptor",
                expected: self.dim,
                actual: descriptor.len(),
            });
        }
        if descriptor.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                offset: 0,
                record: self.entries.len(),
            });
        }
        self.descriptors.extend(descriptor.iter().map(|&v| v as f32));
        self.entries.push(entry);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn query(&self, q: &[f64]) -> Result<Neighbor> {
        let q: Vec<f32> = q.iter().map(|&v| v as f32).collect();
        self.query_f32(&q)
    }

    pub fn query_f32(&self, q: &[f32]) -> Result<Neighbor> {
        if self.entries.is_empty() {
            return Err(Error::Empty("place index"));
        }
        if q.len() != self.dim {
            return Err(Error::Shape {
                context: "query descriptor",
                expected: self.dim,
                actual: q.len(),
            });
        }
        let mut best = Neighbor {
            entry: 0,
            start_frame_id: self.entries[0].start_frame_id,
            sq_distance: f32::INFINITY,
        };
        for (i, row) in self.descriptors.chunks_exact(self.dim).enumerate() {
            let d = squared_distance(q, row);
            let start = self.entries[i].start_frame_id;
            if d < best.sq_distance || (d == best.sq_distance && start < best.start_frame_id) {
                best = Neighbor {
                    entry: i,
                    start_frame_id: start,
                    sq_distance: d,
                };
            }
        }
        Ok(best)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.entries.first().map_or(0, |e| e.place_ids.len());
        let mut out = PARAMS_MAGIC.to_vec();
        out.push(INDEX_TAG);
        put_u32(&mut out, self.dim as u32);
        put_u32(&mut out, n as u32);
        put_u32(&mut out, self.entries.len() as u32);
        for (e, row) in self.entries.iter().zip(self.descriptors.chunks_exact(self.dim.max(1))) {
            put_u32(&mut out, e.start_frame_id);
            for &p in &e.place_ids {
                put_u32(&mut out, p);
            }
            for &v in row {
                put_f32(&mut out, v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let tag = read_magic(&mut r)?;
        if tag != INDEX_TAG {
            return Err(header_error(4, format!("expected index tag {INDEX_TAG}, found {tag}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)? as usize;
        let mut index = PlaceIndex::new(dim);
        for record in 0..count {
            let offset = r.offset();
            let mut ids = Vec::with_capacity(n + 1);
            for _ in 0..=n {
                ids.push(r.u32().ok_or(Error::Truncated { offset, record })?);
            }
            let desc = read_f32s(&mut r, dim, record)?;
            index.push(
                &desc,
                IndexEntry {
                    start_frame_id: ids[0],
                    place_ids: ids[1..].to_vec(),
                },
            )?;
        }
        if r.remaining() != 0 {
            return Err(header_error(r.offset(), "trailing bytes after index entries"));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        fsio::write_atomic(path, |w| w.write_all(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        PlaceIndex::from_bytes(&bytes)
    }
}

/// Composes every `composer.n`-frame window of `reference` taken at `stride`.
pub fn build_index(reference: &Traversal, composer: &Composer, stride: usize) -> Result<PlaceIndex> {
    let n = composer.n;
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if reference.len() < n {
        return Err(Error::Config(format!(
            "reference traversal has {} frames, windows need {n}",
            reference.len()
        )));
    }
    let mut index = PlaceIndex::new(composer.output_dim(reference.dim));
    for start in (0..=reference.len() - n).step_by(stride) {
        let window = QuerySequence::window(reference, start, n)?;
        let d = composer.describe(&window.features())?;
        index.push(
            &d.values,
            IndexEntry {
                start_frame_id: reference.frames[start].frame_id,
                place_ids: window.place_ids(),
            },
        )?;
    }
    Ok(index)
}

pub fn query_nn(index: &PlaceIndex, q: &[f64]) -> Result<Neighbor> {
    index.query(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub trials: usize,
    pub mean_ms: f64,
    pub stddev_ms: f64,
}

/// Times single queries against a random `n x k` database.
pub fn bench_search(k: usize, n: usize, trials: usize, seed: u64) -> Result<BenchStats> {
    if k == 0 || n == 0 || trials == 0 {
        return Err(Error::Config("bench dimensions and trials must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let index = PlaceIndex {
        dim: k,
        descriptors: (0..k * n).map(|_| rng.random::<f32>()).collect(),
        entries: (0..n as u32)
            .map(|i| IndexEntry {
                start_frame_id: i,
                place_ids: vec![i],
            })
            .collect(),
    };
    // one untimed pass to fault in pages
    std::hint::black_box(index.query_f32(&vec![0.5; k])?);
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let q: Vec<f32> = (0..k).map(|_| rng.random()).collect();
        let t0 = Instant::now();
        let hit = index.query_f32(std::hint::black_box(&q))?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(hit);
    }
    let (mean_ms, stddev_ms) = linalg::mean_std(&times);
    Ok(BenchStats {
        k,
        n,
        trials,
        mean_ms,
        stddev_ms,
    })
}

pub fn write_bench_csv(stats: &[BenchStats], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for s in stats {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fsio::write_atomic(path, |w| w.write_all(&buf))
}
