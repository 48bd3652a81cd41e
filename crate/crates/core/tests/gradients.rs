//! Analytic gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqplace::composer::{
    compose_fusion, compose_recurrent, grad_fusion, grad_recurrent, Activation, FusionParams, LstmParams,
};
use seqplace::train::wl_loss_grad;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;
const INSTANCES: usize = 60;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

fn central(f: &mut dyn FnMut(f64) -> f64) -> f64 {
    (f(H) - f(-H)) / (2.0 * H)
}

fn vec_in(rng: &mut ChaCha8Rng, len: usize, s: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-s..s)).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn loss_oracle(a: &[f64], p: &[f64], n: &[f64], m: f64) -> f64 {
    (1.0 - dist(a, n) / (m + dist(a, p))).max(0.0)
}

#[test]
fn loss_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < INSTANCES {
        let k = rng.random_range(1..=8);
        let m = rng.random_range(0.05..1.0);
        let a = vec_in(&mut rng, k, 1.0);
        let p = vec_in(&mut rng, k, 1.0);
        let n = vec_in(&mut rng, k, 1.0);
        let raw = 1.0 - dist(&a, &n) / (m + dist(&a, &p));
        // keep away from the hinge so the difference quotient is smooth
        if raw < 1e-3 {
            continue;
        }
        checked += 1;
        let g = wl_loss_grad(&a, &p, &n, m).unwrap();
        for (which, analytic) in [(0, &g.anchor), (1, &g.positive), (2, &g.negative)] {
            for i in 0..k {
                let num = central(&mut |d| {
                    let (mut a, mut p, mut n) = (a.clone(), p.clone(), n.clone());
                    [&mut a, &mut p, &mut n][which][i] += d;
                    loss_oracle(&a, &p, &n, m)
                });
                worst = worst.max(rel_err(analytic[i], num));
            }
        }
    }
    assert!(worst <= TOL, "worst relative error {worst:e}");
}

#[test]
fn loss_gradient_is_zero_past_margin() {
    let g = wl_loss_grad(&[0.0, 0.0], &[0.1, 0.0], &[3.0, 0.0], 0.1).unwrap();
    assert_eq!(g.loss, 0.0);
    assert!(g.anchor.iter().chain(&g.positive).chain(&g.negative).all(|&v| v == 0.0));
}

#[test]
fn fusion_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for inst in 0..INSTANCES {
        let n = rng.random_range(1..=3);
        let d_in = rng.random_range(1..=4);
        let d_out = rng.random_range(1..=4);
        let mut p = FusionParams::init(n, d_in, d_out, &mut rng);
        p.bias = vec_in(&mut rng, d_out, 0.5);
        p.activation = if inst % 2 == 0 { Activation::Identity } else { Activation::Tanh };
        let frames: Vec<Vec<f64>> = (0..n).map(|_| vec_in(&mut rng, d_in, 1.0)).collect();
        let up = vec_in(&mut rng, d_out, 1.0);
        let objective = |p: &FusionParams, frames: &[Vec<f64>]| {
            let refs: Vec<&[f64]> = frames.iter().map(Vec::as_slice).collect();
            let y = compose_fusion(p, &refs).unwrap();
            y.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        let refs: Vec<&[f64]> = frames.iter().map(Vec::as_slice).collect();
        let g = grad_fusion(&p, &refs, &up).unwrap();
        for i in 0..p.weights.len() {
            let num = central(&mut |d| {
                let mut q = p.clone();
                q.weights[i] += d;
                objective(&q, &frames)
            });
            worst = worst.max(rel_err(g.weights[i], num));
        }
        for i in 0..p.bias.len() {
            let num = central(&mut |d| {
                let mut q = p.clone();
                q.bias[i] += d;
                objective(&q, &frames)
            });
            worst = worst.max(rel_err(g.bias[i], num));
        }
        for t in 0..n {
            for i in 0..d_in {
                let num = central(&mut |d| {
                    let mut f = frames.clone();
                    f[t][i] += d;
                    objective(&p, &f)
                });
                worst = worst.max(rel_err(g.inputs[t][i], num));
            }
        }
    }
    assert!(worst <= TOL, "worst relative error {worst:e}");
}

#[test]
fn recurrent_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let n = rng.random_range(1..=4);
        let d_in = rng.random_range(1..=3);
        let hidden = rng.random_range(1..=3);
        let p = LstmParams::init(d_in, hidden, &mut rng);
        let frames: Vec<Vec<f64>> = (0..n).map(|_| vec_in(&mut rng, d_in, 1.0)).collect();
        let up = vec_in(&mut rng, hidden, 1.0);
        let objective = |p: &LstmParams, frames: &[Vec<f64>]| {
            let refs: Vec<&[f64]> = frames.iter().map(Vec::as_slice).collect();
            let (h, _) = compose_recurrent(p, &refs).unwrap();
            h.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        let refs: Vec<&[f64]> = frames.iter().map(Vec::as_slice).collect();
        let g = grad_recurrent(&p, &refs, &up).unwrap();
        assert!(p.num_params() <= 200);
        for (field, analytic) in [(0, &g.w), (1, &g.u), (2, &g.b)] {
            for i in 0..analytic.len() {
                let num = central(&mut |d| {
                    let mut q = p.clone();
                    [&mut q.w, &mut q.u, &mut q.b][field][i] += d;
                    objective(&q, &frames)
                });
                worst = worst.max(rel_err(analytic[i], num));
            }
        }
        for t in 0..n {
            for i in 0..d_in {
                let num = central(&mut |d| {
                    let mut f = frames.clone();
                    f[t][i] += d;
                    objective(&p, &f)
                });
                worst = worst.max(rel_err(g.inputs[t][i], num));
            }
        }
    }
    assert!(worst <= TOL, "worst relative error {worst:e}");
}
