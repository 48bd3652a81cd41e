//! Same-place convention shared by training and evaluation.
//!
//! A place is the set of frames whose ground-truth index lies within
//! `tolerance` of a given frame. Two query-sequences show the same place
//! when one frame from each falls in a common place set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{FeatureFrame, Traversal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlaceConvention {
    pub tolerance: u32,
}

impl PlaceConvention {
    pub const EXACT: PlaceConvention = PlaceConvention { tolerance: 0 };

    pub fn new(tolerance: u32) -> Self {
        PlaceConvention { tolerance }
    }

    /// Whether ground-truth places `a` and `b` are in a common place set.
    #[inline]
    pub fn frames_match(&self, a: u32, b: u32) -> bool {
        a.abs_diff(b) <= self.tolerance
    }

    /// Whether two windows of ground-truth place ids share a place.
    pub fn windows_match(&self, a: &[u32], b: &[u32]) -> bool {
        a.iter()
            .any(|&pa| b.iter().any(|&pb| self.frames_match(pa, pb)))
    }
}

/// An ordered window of frames from a single condition.
#[derive(Debug, Clone)]
pub struct QuerySequence<'a> {
    frames: Vec<&'a FeatureFrame>,
}

impl<'a> QuerySequence<'a> {
    pub fn new(frames: Vec<&'a FeatureFrame>) -> Result<Self> {
        let first = frames.first().ok_or(Error::Empty("query sequence"))?;
        if let Some(other) = frames.iter().find(|f| f.condition_id != first.condition_id) {
            return Err(Error::Config(format!(
                "query sequence mixes conditions {} and {}",
                first.condition_id, other.condition_id
            )));
        }
        Ok(QuerySequence { frames })
    }

    /// The `n`-frame window starting at traversal position `start`.
    pub fn window(traversal: &'a Traversal, start: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("query sequence"));
        }
        let frames = traversal
            .frames
            .get(start..start + n)
            .ok_or_else(|| {
                Error::Config(format!(
                    "window [{start}, {}) exceeds traversal of {} frames",
                    start + n,
                    traversal.frames.len()
                ))
            })?
            .iter()
            .collect();
        QuerySequence::new(frames)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn condition_id(&self) -> u32 {
        self.frames[0].condition_id
    }

    pub fn frames(&self) -> &[&'a FeatureFrame] {
        &self.frames
    }

    pub fn frame_ids(&self) -> Vec<u32> {
        self.frames.iter().map(|f| f.frame_id).collect()
    }

    pub fn place_ids(&self) -> Vec<u32> {
        self.frames.iter().map(|f| f.place_id).collect()
    }

    pub fn features(&self) -> Vec<&'a [f64]> {
        self.frames.iter().map(|f| f.features.as_slice()).collect()
    }
}

/// True iff the two sequences contain one frame each from a common place.
pub fn same_place(q1: &QuerySequence<'_>, q2: &QuerySequence<'_>, conv: PlaceConvention) -> bool {
    q1.frames.iter().any(|a| {
        q2.frames
            .iter()
            .any(|b| conv.frames_match(a.place_id, b.place_id))
    })
}
