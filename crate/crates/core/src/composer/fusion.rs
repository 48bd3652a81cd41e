//! Learned fusion: one fully connected layer over the stacked frames.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Affine map `y = act(W concat(frames) + b)`; `W` is row-major
/// `d_out x (n * d_in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub n: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl FusionParams {
    pub fn zeros(n: usize, d_in: usize, d_out: usize) -> Self {
        FusionParams {
            n,
            d_in,
            d_out,
            weights: vec![0.0; d_out * n * d_in],
            bias: vec![0.0; d_out],
            activation: Activation::Identity,
        }
    }

    /// Weights uniform in `±1/sqrt(n * d_in)`, zero bias.
    pub fn init<R: Rng + ?Sized>(n: usize, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let mut p = FusionParams::zeros(n, d_in, d_out);
        let s = 1.0 / ((n * d_in) as f64).sqrt();
        for w in &mut p.weights {
            *w = rng.random_range(-s..=s);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.n * self.d_in
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d_in == 0 || self.d_out == 0 {
            return Err(Error::Config("fusion dimensions must be positive".into()));
        }
        check_len("fusion weights", self.d_out * self.input_dim(), self.weights.len())?;
        check_len("fusion bias", self.d_out, self.bias.len())?;
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Config("fusion parameters must be finite".into()));
        }
        Ok(())
    }

    pub(crate) fn stack(&self, frames: &[&[f64]]) -> Result<Vec<f64>> {
        check_len("fusion frame count", self.n, frames.len())?;
        let mut x = Vec::with_capacity(self.input_dim());
        for f in frames {
            check_len("fusion frame dimension", self.d_in, f.len())?;
            x.extend_from_slice(f);
        }
        Ok(x)
    }

    fn forward_stacked(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut pre = self.bias.clone();
        linalg::matvec_acc(&self.weights, x, &mut pre);
        let out = match self.activation {
            Activation::Identity => pre.clone(),
            Activation::Tanh => pre.iter().map(|v| v.tanh()).collect(),
        };
        (pre, out)
    }

    pub fn sgd_step(&mut self, grads: &FusionGrads, lr: f64) {
        linalg::axpy(-lr, &grads.weights, &mut self.weights);
        linalg::axpy(-lr, &grads.bias, &mut self.bias);
    }
}

pub fn compose_fusion(params: &FusionParams, frames: &[&[f64]]) -> Result<Vec<f64>> {
    let x = params.stack(frames)?;
    Ok(params.forward_stacked(&x).1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Gradient with respect to each input frame.
    pub inputs: Vec<Vec<f64>>,
}

impl FusionGrads {
    pub fn zeros_like(p: &FusionParams) -> Self {
        FusionGrads {
            weights: vec![0.0; p.weights.len()],
            bias: vec![0.0; p.bias.len()],
            inputs: Vec::new(),
        }
    }

    /// Adds parameter gradients of `other`; input gradients are not summed.
    pub fn accumulate(&mut self, other: &FusionGrads) {
        linalg::axpy(1.0, &other.weights, &mut self.weights);
        linalg::axpy(1.0, &other.bias, &mut self.bias);
    }
}

/// Gradients of `upstream . compose_fusion(params, frames)`.
pub fn grad_fusion(params: &FusionParams, frames: &[&[f64]], upstream: &[f64]) -> Result<FusionGrads> {
    check_len("fusion upstream gradient", params.d_out, upstream.len())?;
    let x = params.stack(frames)?;
    let (pre, _) = params.forward_stacked(&x);
    let dpre: Vec<f64> = match params.activation {
        Activation::Identity => upstream.to_vec(),
        Activation::Tanh => upstream
            .iter()
            .zip(&pre)
            .map(|(g, p)| {
                let t = p.tanh();
                g * (1.0 - t * t)
            })
            .collect(),
    };
    let mut weights = vec![0.0; params.weights.len()];
    linalg::outer_acc(&dpre, &x, &mut weights);
    let mut dx = vec![0.0; x.len()];
    linalg::matvec_t_acc(&params.weights, &dpre, &mut dx);
    Ok(FusionGrads {
        weights,
        bias: dpre,
        inputs: dx.chunks(params.d_in).map(<[f64]>::to_vec).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn selector_matrix_picks_first_frame() {
        let mut p = FusionParams::zeros(2, 3, 2);
        // row j selects input j
        p.weights[0] = 1.0;
        p.weights[6 + 1] = 1.0;
        let y = compose_fusion(&p, &[&[7.0, 8.0, 9.0], &[1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(y, vec![7.0, 8.0]);
    }

    #[test]
    fn zero_frames_give_bias() {
        let mut p = FusionParams::init(3, 2, 4, &mut ChaCha8Rng::seed_from_u64(1));
        p.bias = vec![0.5; 4];
        let z = [0.0; 2];
        let y = compose_fusion(&p, &[&z, &z, &z]).unwrap();
        assert_eq!(y, vec![0.5; 4]);
    }

    #[test]
    fn matches_hand_dot_products() {
        // n=2, d_in=3, d_out=2
        let p = FusionParams {
            n: 2,
            d_in: 3,
            d_out: 2,
            weights: vec![
                0.5, -1.0, 2.0, 0.0, 1.5, -0.5, //
                -2.0, 0.25, 1.0, 3.0, -1.0, 0.5,
            ],
            bias: vec![0.1, -0.2],
            activation: Activation::Identity,
        };
        let y = compose_fusion(&p, &[&[1.0, 2.0, 3.0], &[-1.0, 0.5, 2.0]]).unwrap();
        // row 0: 0.5 - 2 + 6 + 0 + 0.75 - 1 + 0.1 = 4.35
        // row 1: -2 + 0.5 + 3 - 3 - 0.5 + 1 - 0.2 = -1.2
        assert!((y[0] - 4.35).abs() < 1e-12);
        assert!((y[1] + 1.2).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let p = FusionParams::zeros(2, 3, 2);
        assert!(compose_fusion(&p, &[&[1.0, 2.0, 3.0]]).is_err());
        assert!(compose_fusion(&p, &[&[1.0, 2.0, 3.0], &[1.0]]).is_err());
        assert!(grad_fusion(&p, &[&[0.0; 3], &[0.0; 3]], &[1.0]).is_err());
    }

    #[test]
    fn unit_upstream_gradient_is_stacked_input_on_one_row() {
        let p = FusionParams::init(2, 3, 4, &mut ChaCha8Rng::seed_from_u64(3));
        let a = [1.0, 2.0, 3.0];
        let b = [4.0, 5.0, 6.0];
        let g = grad_fusion(&p, &[&a, &b], &[0.0, 0.0, 1.0, 0.0]).unwrap();
        for (row, chunk) in g.weights.chunks(6).enumerate() {
            if row == 2 {
                assert_eq!(chunk, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
            } else {
                assert!(chunk.iter().all(|&v| v == 0.0));
            }
        }
        assert_eq!(g.bias, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = FusionParams::init(2, 3, 4, &mut ChaCha8Rng::seed_from_u64(3));
        let g = grad_fusion(&p, &[&[1.0; 3], &[2.0; 3]], &[0.0; 4]).unwrap();
        assert!(g.weights.iter().chain(&g.bias).all(|&v| v == 0.0));
        assert!(g.inputs.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn homogeneous_up_to_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = FusionParams::init(3, 4, 5, &mut rng);
        p.bias = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..20 {
            let frames: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let alpha: f64 = rng.random_range(-3.0..3.0);
            let scaled: Vec<Vec<f64>> = frames
                .iter()
                .map(|f| f.iter().map(|v| alpha * v).collect())
                .collect();
            let fr: Vec<&[f64]> = frames.iter().map(Vec::as_slice).collect();
            let sr: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
            let y = compose_fusion(&p, &fr).unwrap();
            let ys = compose_fusion(&p, &sr).unwrap();
            for i in 0..5 {
                let lhs = ys[i] - p.bias[i];
                let rhs = alpha * (y[i] - p.bias[i]);
                assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
            }
        }
    }
}
