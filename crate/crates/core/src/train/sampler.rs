//! Triplet sampling under the same-place convention.

use rand::Rng;

use crate::error::{Error, Result};
use crate::place::{same_place, PlaceConvention, QuerySequence};
use crate::store::FeatureStore;

/// Anchor draws attempted before giving up.
pub const MAX_ANCHOR_ATTEMPTS: usize = 64;
/// Negative draws attempted per anchor.
const MAX_NEGATIVE_ATTEMPTS: usize = 64;

#[derive(Debug, Clone)]
pub struct Triplet<'a> {
    pub anchor: QuerySequence<'a>,
    pub positive: QuerySequence<'a>,
    pub negative: QuerySequence<'a>,
}

impl Triplet<'_> {
    pub fn is_valid(&self, conv: PlaceConvention) -> bool {
        same_place(&self.anchor, &self.positive, conv) && !same_place(&self.anchor, &self.negative, conv)
    }
}

/// Draws an anchor window uniformly from one condition, a positive window
/// from a different condition sharing a place with it, and a negative
/// window from any condition sharing none.
pub fn sample_triplet<'a, R: Rng + ?Sized>(
    store: &'a FeatureStore,
    conv: PlaceConvention,
    n: usize,
    rng: &mut R,
) -> Result<Triplet<'a>> {
    let ts = &store.traversals;
    if ts.len() < 2 {
        return Err(Error::Config(format!(
            "triplet sampling needs two conditions, store has {}",
            ts.len()
        )));
    }
    if n == 0 || ts.iter().any(|t| t.len() < n) {
        return Err(Error::Config(format!("every traversal must hold a {n}-frame window")));
    }
    for _ in 0..MAX_ANCHOR_ATTEMPTS {
        let ai = rng.random_range(0..ts.len());
        let anchor = QuerySequence::window(&ts[ai], rng.random_range(0..=ts[ai].len() - n), n)?;

        let mut pi = rng.random_range(0..ts.len() - 1);
        if pi >= ai {
            pi += 1;
        }
        let pt = &ts[pi];
        let candidates: Vec<usize> = (0..=pt.len() - n)
            .filter(|&s| {
                let w = QuerySequence::window(pt, s, n).expect("start within bounds");
                same_place(&anchor, &w, conv)
            })
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let positive = QuerySequence::window(pt, candidates[rng.random_range(0..candidates.len())], n)?;

        for _ in 0..MAX_NEGATIVE_ATTEMPTS {
            let ni = rng.random_range(0..ts.len());
            let negative = QuerySequence::window(&ts[ni], rng.random_range(0..=ts[ni].len() - n), n)?;
            if !same_place(&anchor, &negative, conv) {
                return Ok(Triplet {
                    anchor,
                    positive,
                    negative,
                });
            }
        }
    }
    Err(Error::SamplingExhausted {
        attempts: MAX_ANCHOR_ATTEMPTS,
    })
}
