//! Wohlhart-Lepetit triplet loss:
//! `max{0, 1 - |a - n| / (m + |a - p|)}`.

use crate::error::{check_len, Error, Result};
use crate::linalg;

#[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
fn check(d_a: &[f64], d_p: &[f64], d_n: &[f64], margin: f64) -> Result<()> {
    check_len("triplet positive", d_a.len(), d_p.len())?;
    check_len("triplet negative", d_a.len(), d_n.len())?;
    if !(margin > 0.0) {
        return Err(Error::Config(format!("margin must be positive, got {margin}")));
    }
    Ok(())
}

/// `max{0, x}` that keeps NaN visible to divergence checks.
fn hinge(x: f64) -> f64 {
    if x.is_nan() {
        x
    } else {
        x.max(0.0)
    }
}

pub fn wl_loss(d_a: &[f64], d_p: &[f64], d_n: &[f64], margin: f64) -> Result<f64> {
    check(d_a, d_p, d_n, margin)?;
    let neg = linalg::euclidean(d_a, d_n);
    let pos = linalg::euclidean(d_a, d_p);
    Ok(hinge(1.0 - neg / (margin + pos)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Loss and its gradient with respect to each descriptor. The hinge kink
/// and zero-length distance vectors take subgradient 0.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn wl_loss_grad(d_a: &[f64], d_p: &[f64], d_n: &[f64], margin: f64) -> Result<LossGrad> {
    check(d_a, d_p, d_n, margin)?;
    let k = d_a.len();
    let diff_n: Vec<f64> = d_a.iter().zip(d_n).map(|(a, b)| a - b).collect();
    let diff_p: Vec<f64> = d_a.iter().zip(d_p).map(|(a, b)| a - b).collect();
    let neg = linalg::norm(&diff_n);
    let pos = linalg::norm(&diff_p);
    let denom = margin + pos;
    let raw = 1.0 - neg / denom;
    let mut g = LossGrad {
        loss: hinge(raw),
        anchor: vec![0.0; k],
        positive: vec![0.0; k],
        negative: vec![0.0; k],
    };
    if !(raw > 0.0) {
        return Ok(g);
    }
    // dL/d|a-n| = -1/denom, dL/d|a-p| = |a-n|/denom^2
    if neg > 0.0 {
        let s = -1.0 / (denom * neg);
        for ((a, n), d) in g.anchor.iter_mut().zip(&mut g.negative).zip(&diff_n) {
            *a += s * d;
            *n -= s * d;
        }
    }
    if pos > 0.0 {
        let s = neg / (denom * denom * pos);
        for ((a, p), d) in g.anchor.iter_mut().zip(&mut g.positive).zip(&diff_p) {
            *a += s * d;
            *p -= s * d;
        }
    }
    Ok(g)
}
