//! Sequence-matching baseline: a query x reference difference matrix,
//! local contrast enhancement, and a search for the constant-velocity line
//! with the lowest mean enhanced difference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::place::PlaceConvention;
use crate::store::Traversal;

const ENHANCE_EPS: f64 = 1e-9;

/// Row-major `rows x cols` matrix; rows are query frames, columns are
/// reference frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl SimilarityMatrix {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }
}

/// Squared Euclidean distances between every query and reference frame.
pub fn build_difference_matrix(query: &[&[f64]], reference: &[&[f64]]) -> Result<SimilarityMatrix> {
    if query.is_empty() || reference.is_empty() {
        return Err(Error::Empty("difference matrix input"));
    }
    let dim = query[0].len();
    if let Some(bad) = query.iter().chain(reference).find(|f| f.len() != dim) {
        return Err(Error::Shape {
            context: "difference matrix frame",
            expected: dim,
            actual: bad.len(),
        });
    }
    let data = query
        .par_iter()
        .flat_map_iter(|q| {
            reference
                .iter()
                .map(move |r| q.iter().zip(r.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        })
        .collect();
    Ok(SimilarityMatrix {
        rows: query.len(),
        cols: reference.len(),
        data,
    })
}

/// Normalizes every entry by the mean and population standard deviation
/// of a `window`-row span of its column. The span is centred on the entry
/// and shifted inward at the matrix edges.
pub fn contrast_enhance(m: &SimilarityMatrix, window: usize) -> Result<SimilarityMatrix> {
    if window == 0 {
        return Err(Error::Config("enhancement window must be at least 1".into()));
    }
    let w = window.min(m.rows);
    let mut out = vec![0.0; m.data.len()];
    for col in 0..m.cols {
        for row in 0..m.rows {
            let start = row.saturating_sub(window / 2).min(m.rows - w);
            let span = start..start + w;
            let mean = span.clone().map(|r| m.get(r, col)).sum::<f64>() / w as f64;
            let var = span.map(|r| (m.get(r, col) - mean).powi(2)).sum::<f64>() / w as f64;
            out[row * m.cols + col] = (m.get(row, col) - mean) / (var.sqrt() + ENHANCE_EPS);
        }
    }
    Ok(SimilarityMatrix {
        rows: m.rows,
        cols: m.cols,
        data: out,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceMatch {
    pub reference: usize,
    pub velocity: f64,
    pub score: f64,
}

fn velocities(v_min: f64, v_max: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![v_min];
    }
    (0..steps)
        .map(|i| v_min + (v_max - v_min) * i as f64 / (steps - 1) as f64)
        .collect()
}

/// Best line `(q_start + t, round(r + v t))`, `t < seq_len`, by mean score.
/// Lines leaving the reference are skipped; ties go to the lowest `r`,
/// then the lowest velocity.
pub fn match_sequence(
    dhat: &SimilarityMatrix,
    q_start: usize,
    seq_len: usize,
    v_min: f64,
    v_max: f64,
    v_steps: usize,
) -> Result<SequenceMatch> {
    if seq_len == 0 || q_start + seq_len > dhat.rows {
        return Err(Error::Config(format!(
            "query rows [{q_start}, {}) exceed {} rows",
            q_start + seq_len,
            dhat.rows
        )));
    }
    if !(v_min > 0.0 && v_min <= v_max) {
        return Err(Error::Config(format!("need 0 < v_min <= v_max, got {v_min}, {v_max}")));
    }
    let vs = velocities(v_min, v_max, v_steps);
    let mut best: Option<SequenceMatch> = None;
    for r in 0..dhat.cols {
        for &v in &vs {
            let last = (r as f64 + v * (seq_len - 1) as f64).round();
            if last >= dhat.cols as f64 {
                continue;
            }
            let score = (0..seq_len)
                .map(|t| dhat.get(q_start + t, (r as f64 + v * t as f64).round() as usize))
                .sum::<f64>()
                / seq_len as f64;
            if best.is_none_or(|b| score < b.score) {
                best = Some(SequenceMatch {
                    reference: r,
                    velocity: v,
                    score,
                });
            }
        }
    }
    best.ok_or_else(|| {
        Error::NoMatch(format!(
            "no line of {seq_len} frames fits {} reference frames",
            dhat.cols
        ))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqSlamParams {
    pub seq_len: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub v_steps: usize,
    pub enhance_window: usize,
}

impl Default for SeqSlamParams {
    fn default() -> Self {
        SeqSlamParams {
            seq_len: 10,
            v_min: 0.8,
            v_max: 1.2,
            v_steps: 5,
            enhance_window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqSlamMatch {
    pub query_start: usize,
    pub matched: usize,
    pub score: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqSlamReport {
    pub matches: Vec<SeqSlamMatch>,
    pub precision: f64,
}

/// Matches every query start and scores it: a match is correct when the
/// query's first frame and the matched reference frame share a place.
pub fn run_seqslam(
    query: &Traversal,
    reference: &Traversal,
    params: &SeqSlamParams,
    conv: PlaceConvention,
) -> Result<SeqSlamReport> {
    if query.len() < params.seq_len {
        return Err(Error::Config(format!(
            "query traversal has {} frames, sequences need {}",
            query.len(),
            params.seq_len
        )));
    }
    let q: Vec<&[f64]> = query.frames.iter().map(|f| f.features.as_slice()).collect();
    let r: Vec<&[f64]> = reference.frames.iter().map(|f| f.features.as_slice()).collect();
    let d = build_difference_matrix(&q, &r)?;
    let dhat = contrast_enhance(&d, params.enhance_window)?;
    let matches = (0..=query.len() - params.seq_len)
        .into_par_iter()
        .map(|qs| {
            let m = match_sequence(&dhat, qs, params.seq_len, params.v_min, params.v_max, params.v_steps)?;
            Ok(SeqSlamMatch {
                query_start: qs,
                matched: m.reference,
                score: m.score,
                correct: conv.frames_match(query.frames[qs].place_id, reference.frames[m.reference].place_id),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let precision = matches.iter().filter(|m| m.correct).count() as f64 / matches.len() as f64;
    Ok(SeqSlamReport { matches, precision })
}
