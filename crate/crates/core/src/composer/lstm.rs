//! Single-layer LSTM cell whose final hidden state is the descriptor.
//!
//! Gate pre-activations are stacked in the order input, forget, output,
//! candidate: `z = W x + U h + b`, with `W` of shape `4h x d_in` and `U`
//! of shape `4h x h`.
//!
//! ```text
//! i = sigmoid(z_i)   f = sigmoid(z_f)   o = sigmoid(z_o)   g = tanh(z_g)
//! c' = f * c + i * g
//! h' = o * tanh(c')
//! ```

use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, sigmoid};

const GATES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub d_in: usize,
    pub hidden: usize,
    /// Input weights, `4 * hidden` rows of `d_in`.
    pub w: Vec<f64>,
    /// Recurrent weights, `4 * hidden` rows of `hidden`.
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

impl LstmParams {
    pub fn zeros(d_in: usize, hidden: usize) -> Self {
        LstmParams {
            d_in,
            hidden,
            w: vec![0.0; GATES * hidden * d_in],
            u: vec![0.0; GATES * hidden * hidden],
            b: vec![0.0; GATES * hidden],
        }
    }

    /// Uniform in `±1/sqrt(hidden)`, forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(d_in: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = LstmParams::zeros(d_in, hidden);
        let s = 1.0 / (hidden as f64).sqrt();
        for v in p.w.iter_mut().chain(p.u.iter_mut()).chain(p.b.iter_mut()) {
            *v = rng.random_range(-s..=s);
        }
        p.b[hidden..2 * hidden].fill(1.0);
        p
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.u.len() + self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.hidden == 0 {
            return Err(Error::Config("lstm dimensions must be positive".into()));
        }
        check_len("lstm input weights", GATES * self.hidden * self.d_in, self.w.len())?;
        check_len("lstm recurrent weights", GATES * self.hidden * self.hidden, self.u.len())?;
        check_len("lstm bias", GATES * self.hidden, self.b.len())?;
        if self.w.iter().chain(&self.u).chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::Config("lstm parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn sgd_step(&mut self, grads: &LstmGrads, lr: f64) {
        linalg::axpy(-lr, &grads.w, &mut self.w);
        linalg::axpy(-lr, &grads.u, &mut self.u);
        linalg::axpy(-lr, &grads.b, &mut self.b);
    }

    /// Activated gates `[i | f | o | g]` for one step.
    fn gates(&self, state: &LstmState, x: &[f64]) -> Vec<f64> {
        let h = self.hidden;
        let mut z = self.b.clone();
        linalg::matvec_acc(&self.w, x, &mut z);
        linalg::matvec_acc(&self.u, &state.h, &mut z);
        for v in &mut z[..3 * h] {
            *v = sigmoid(*v);
        }
        for v in &mut z[3 * h..] {
            *v = v.tanh();
        }
        z
    }

    fn cell(&self, state: &LstmState, gates: &[f64]) -> LstmState {
        let h = self.hidden;
        let (i, rest) = gates.split_at(h);
        let (f, rest) = rest.split_at(h);
        let (o, g) = rest.split_at(h);
        let c: Vec<f64> = (0..h).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
        let hh = (0..h).map(|k| o[k] * c[k].tanh()).collect();
        LstmState { h: hh, c }
    }

    fn check_state(&self, state: &LstmState) -> Result<()> {
        check_len("lstm hidden state", self.hidden, state.h.len())?;
        check_len("lstm cell state", self.hidden, state.c.len())
    }
}

/// One cell application. The running descriptor is `state.h`.
pub fn step_recurrent(params: &LstmParams, state: &LstmState, frame: &[f64]) -> Result<LstmState> {
    params.check_state(state)?;
    check_len("lstm input", params.d_in, frame.len())?;
    let gates = params.gates(state, frame);
    Ok(params.cell(state, &gates))
}

/// Runs the cell over `frames` from a zero state; the descriptor is the
/// final hidden state.
pub fn compose_recurrent(params: &LstmParams, frames: &[&[f64]]) -> Result<(Vec<f64>, LstmState)> {
    if frames.is_empty() {
        return Err(Error::Empty("recurrent sequence"));
    }
    let mut state = LstmState::zeros(params.hidden);
    for f in frames {
        state = step_recurrent(params, &state, f)?;
    }
    Ok((state.h.clone(), state))
}

/// Forward pass retaining what backpropagation through time needs.
pub(crate) struct LstmTrace {
    /// `states[t]` is the state before step `t`; `states[n]` is final.
    states: Vec<LstmState>,
    gates: Vec<Vec<f64>>,
}

impl LstmTrace {
    pub fn output(&self) -> &[f64] {
        &self.states.last().unwrap().h
    }
}

pub(crate) fn forward_trace(params: &LstmParams, frames: &[&[f64]]) -> Result<LstmTrace> {
    if frames.is_empty() {
        return Err(Error::Empty("recurrent sequence"));
    }
    let mut states = Vec::with_capacity(frames.len() + 1);
    let mut gates = Vec::with_capacity(frames.len());
    states.push(LstmState::zeros(params.hidden));
    for f in frames {
        check_len("lstm input", params.d_in, f.len())?;
        let prev = states.last().unwrap();
        let g = params.gates(prev, f);
        let next = params.cell(prev, &g);
        gates.push(g);
        states.push(next);
    }
    Ok(LstmTrace { states, gates })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub b: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
}

impl LstmGrads {
    pub fn zeros_like(p: &LstmParams) -> Self {
        LstmGrads {
            w: vec![0.0; p.w.len()],
            u: vec![0.0; p.u.len()],
            b: vec![0.0; p.b.len()],
            inputs: Vec::new(),
        }
    }

    pub fn accumulate(&mut self, other: &LstmGrads) {
        linalg::axpy(1.0, &other.w, &mut self.w);
        linalg::axpy(1.0, &other.u, &mut self.u);
        linalg::axpy(1.0, &other.b, &mut self.b);
    }
}

/// Backpropagation through time of `upstream . h_n`, accumulating into
/// `grads` (parameter parts) and returning per-frame input gradients.
pub(crate) fn backward_trace(
    params: &LstmParams,
    frames: &[&[f64]],
    trace: &LstmTrace,
    upstream: &[f64],
    grads: &mut LstmGrads,
) -> Vec<Vec<f64>> {
    let h = params.hidden;
    let mut dh = upstream.to_vec();
    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; GATES * h];
    let mut inputs = vec![Vec::new(); frames.len()];
    for t in (0..frames.len()).rev() {
        let prev = &trace.states[t];
        let cur = &trace.states[t + 1];
        let g = &trace.gates[t];
        for k in 0..h {
            let (ig, fg, og, cg) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
            let tc = cur.c[k].tanh();
            let d_o = dh[k] * tc;
            dc[k] += dh[k] * og * (1.0 - tc * tc);
            let d_i = dc[k] * cg;
            let d_g = dc[k] * ig;
            let d_f = dc[k] * prev.c[k];
            dz[k] = d_i * ig * (1.0 - ig);
            dz[h + k] = d_f * fg * (1.0 - fg);
            dz[2 * h + k] = d_o * og * (1.0 - og);
            dz[3 * h + k] = d_g * (1.0 - cg * cg);
            dc[k] *= fg;
        }
        linalg::outer_acc(&dz, frames[t], &mut grads.w);
        linalg::outer_acc(&dz, &prev.h, &mut grads.u);
        linalg::axpy(1.0, &dz, &mut grads.b);
        let mut dx = vec![0.0; params.d_in];
        linalg::matvec_t_acc(&params.w, &dz, &mut dx);
        inputs[t] = dx;
        dh.fill(0.0);
        linalg::matvec_t_acc(&params.u, &dz, &mut dh);
    }
    inputs
}

/// Gradients of `upstream . compose_recurrent(params, frames).0`.
pub fn grad_recurrent(params: &LstmParams, frames: &[&[f64]], upstream: &[f64]) -> Result<LstmGrads> {
    check_len("lstm upstream gradient", params.hidden, upstream.len())?;
    let trace = forward_trace(params, frames)?;
    let mut grads = LstmGrads::zeros_like(params);
    grads.inputs = backward_trace(params, frames, &trace, upstream, &mut grads);
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_frames(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn zero_parameters_are_a_fixed_point() {
        let p = LstmParams::zeros(3, 4);
        let (h, state) = compose_recurrent(&p, &[&[1.0, -2.0, 3.0], &[5.0, 5.0, 5.0]]).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(state.c.iter().all(|&v| v == 0.0));
        let s = step_recurrent(&p, &LstmState::zeros(4), &[9.0, 9.0, 9.0]).unwrap();
        assert!(s.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_cell_matches_hand_evaluation() {
        // h = 1, d_in = 1; gates i, f, o, g
        let p = LstmParams {
            d_in: 1,
            hidden: 1,
            w: vec![0.5, -0.3, 0.8, 1.2],
            u: vec![0.0; 4],
            b: vec![0.1, 1.0, -0.2, 0.05],
        };
        let x = 0.7;
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = s(0.5 * x + 0.1);
        let g = (1.2 * x + 0.05_f64).tanh();
        let o = s(0.8 * x - 0.2);
        let c = i * g; // f * 0 vanishes
        let h = o * c.tanh();
        let (out, state) = compose_recurrent(&p, &[&[x]]).unwrap();
        assert!((out[0] - h).abs() < 1e-15);
        assert!((state.c[0] - c).abs() < 1e-15);
    }

    #[test]
    fn order_matters_for_generic_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = LstmParams::init(4, 6, &mut rng);
        let frames = random_frames(&mut rng, 3, 4);
        let mut rev = frames.clone();
        rev.reverse();
        let (a, _) = compose_recurrent(&p, &refs(&frames)).unwrap();
        let (b, _) = compose_recurrent(&p, &refs(&rev)).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn resuming_from_saved_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = LstmParams::init(3, 5, &mut rng);
        let frames = random_frames(&mut rng, 5, 3);
        let (_, mid) = compose_recurrent(&p, &refs(&frames[..4])).unwrap();
        let resumed = step_recurrent(&p, &mid, &frames[4]).unwrap();
        let (full, state) = compose_recurrent(&p, &refs(&frames)).unwrap();
        assert_eq!(resumed.h, full);
        assert_eq!(resumed, state);
    }

    #[test]
    fn two_steps_equal_two_frame_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = LstmParams::init(3, 5, &mut rng);
        let frames = random_frames(&mut rng, 2, 3);
        let s0 = LstmState::zeros(5);
        let s1 = step_recurrent(&p, &s0, &frames[0]).unwrap();
        let s2 = step_recurrent(&p, &s1, &frames[1]).unwrap();
        assert_eq!(compose_recurrent(&p, &refs(&frames)).unwrap().1, s2);
    }

    #[test]
    fn shape_and_empty_errors() {
        let p = LstmParams::zeros(3, 2);
        assert!(matches!(compose_recurrent(&p, &[]), Err(Error::Empty(_))));
        assert!(compose_recurrent(&p, &[&[1.0]]).is_err());
        assert!(step_recurrent(&p, &LstmState::zeros(3), &[0.0; 3]).is_err());
        assert!(grad_recurrent(&p, &[&[0.0; 3]], &[1.0]).is_err());
    }

    #[test]
    fn init_sets_forget_bias() {
        let p = LstmParams::init(3, 4, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(p.b[4..8].iter().all(|&v| v == 1.0));
        let s = 0.5;
        assert!(p.w.iter().chain(&p.u).all(|v| v.abs() <= s));
        p.validate().unwrap();
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = LstmParams::init(3, 2, &mut rng);
        let frames = random_frames(&mut rng, 3, 3);
        let g = grad_recurrent(&p, &refs(&frames), &[0.0, 0.0]).unwrap();
        assert!(g.w.iter().chain(&g.u).chain(&g.b).all(|&v| v == 0.0));
    }
}
