//! Triplet training of the learnable composers with plain SGD.

mod loss;
mod sampler;

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::composer::{
    backward_trace, compose_fusion, forward_trace, grad_fusion, l2_normalize, l2_normalize_backward, Activation, Composer,
    ComposerKind, ComposerParams, FusionGrads, FusionParams, LstmGrads, LstmParams, LstmTrace,
    DEFAULT_DESCRIPTOR_DIM,
};
use crate::error::{Error, Result};
use crate::fsio;
use crate::place::{PlaceConvention, QuerySequence};
use crate::store::FeatureStore;

pub use loss::{wl_loss, wl_loss_grad, LossGrad};
pub use sampler::{sample_triplet, Triplet, MAX_ANCHOR_ATTEMPTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub triplets_per_epoch: usize,
    pub rng_seed: u64,
    /// Chance of swapping one frame of each recurrent training sequence for
    /// another frame of the same place.
    pub frame_substitution_prob: f64,
    /// Inverted dropout on the recurrent descriptor during training.
    pub dropout_rate: f64,
    pub n: usize,
    pub descriptor_dim: usize,
    pub activation: Activation,
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 0.1,
            learning_rate: 1e-3,
            epochs: 5,
            triplets_per_epoch: 2000,
            rng_seed: 0,
            frame_substitution_prob: 0.5,
            dropout_rate: 0.5,
            n: 3,
            descriptor_dim: DEFAULT_DESCRIPTOR_DIM,
            activation: Activation::Identity,
            normalize: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if self.triplets_per_epoch == 0 {
            return bad("triplets_per_epoch must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.frame_substitution_prob) {
            return bad(format!(
                "frame_substitution_prob must lie in [0, 1], got {}",
                self.frame_substitution_prob
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.n == 0 || self.descriptor_dim == 0 {
            return bad("n and descriptor_dim must be positive".into());
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.triplets_per_epoch
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub composer: Composer,
    /// Loss of every SGD step in order.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(["step", "loss"])?;
            for (i, l) in self.losses.iter().enumerate() {
                w.write_record([i.to_string(), format!("{l:.17e}")])?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        fsio::write_atomic(path, |w| w.write_all(&buf))
    }
}

/// Frames reachable from each ground-truth place, for substitution.
struct PlaceLookup<'a> {
    by_place: HashMap<u32, Vec<&'a [f64]>>,
}

impl<'a> PlaceLookup<'a> {
    fn new(store: &'a FeatureStore) -> Self {
        let mut by_place: HashMap<u32, Vec<&'a [f64]>> = HashMap::new();
        for t in &store.traversals {
            for f in &t.frames {
                by_place.entry(f.place_id).or_default().push(&f.features);
            }
        }
        PlaceLookup { by_place }
    }

    /// A frame from the place set of `place`, other than `current`.
    fn substitute<R: Rng + ?Sized>(
        &self,
        place: u32,
        conv: PlaceConvention,
        current: &[f64],
        rng: &mut R,
    ) -> Option<&'a [f64]> {
        let lo = place.saturating_sub(conv.tolerance);
        let hi = place.saturating_add(conv.tolerance);
        let pool: Vec<&'a [f64]> = (lo..=hi)
            .filter_map(|p| self.by_place.get(&p))
            .flatten()
            .copied()
            .filter(|f| !std::ptr::eq(f.as_ptr(), current.as_ptr()))
            .collect();
        if pool.is_empty() {
            None
        } else {
            Some(pool[rng.random_range(0..pool.len())])
        }
    }
}

/// What the backward pass needs from one forward evaluation.
enum Forward {
    Fusion,
    Recurrent(Box<LstmTrace>),
}

struct Evaluated<'f> {
    frames: Vec<&'f [f64]>,
    /// Descriptor after normalization and dropout.
    output: Vec<f64>,
    /// Normalized pre-dropout output and the norm it was divided by.
    normalized: Option<(Vec<f64>, f64)>,
    mask: Option<Vec<f64>>,
    forward: Forward,
}

enum Grads {
    Fusion(FusionGrads),
    Lstm(LstmGrads),
}

/// The trainable layer of a composer: the fusion layer, the LSTM, or the
/// single-view head of grouping.
enum Layer<'c> {
    Fusion(&'c mut FusionParams),
    Lstm(&'c mut LstmParams),
}

impl Layer<'_> {
    fn zero_grads(&self) -> Grads {
        match self {
            Layer::Fusion(p) => Grads::Fusion(FusionGrads::zeros_like(p)),
            Layer::Lstm(p) => Grads::Lstm(LstmGrads::zeros_like(p)),
        }
    }

    fn forward<'f, R: Rng + ?Sized>(
        &self,
        frames: Vec<&'f [f64]>,
        normalize: bool,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Evaluated<'f>> {
        let (mut output, forward) = match self {
            Layer::Fusion(p) => (compose_fusion(p, &frames)?, Forward::Fusion),
            Layer::Lstm(p) => {
                let trace = forward_trace(p, &frames)?;
                (trace.output().to_vec(), Forward::Recurrent(Box::new(trace)))
            }
        };
        let normalized = normalize.then(|| {
            let norm = l2_normalize(&mut output);
            (output.clone(), norm)
        });
        let mask = (dropout > 0.0).then(|| {
            let keep = 1.0 - dropout;
            (0..output.len())
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect::<Vec<f64>>()
        });
        if let Some(m) = &mask {
            output.iter_mut().zip(m).for_each(|(o, k)| *o *= k);
        }
        Ok(Evaluated {
            frames,
            output,
            normalized,
            mask,
            forward,
        })
    }

    fn backward(&self, ev: &Evaluated<'_>, upstream: &[f64], grads: &mut Grads) -> Result<()> {
        let mut g = upstream.to_vec();
        if let Some(m) = &ev.mask {
            g.iter_mut().zip(m).for_each(|(gi, k)| *gi *= k);
        }
        if let Some((y, norm)) = &ev.normalized {
            g = l2_normalize_backward(y, *norm, &g);
        }
        match (self, &ev.forward, grads) {
            (Layer::Fusion(p), Forward::Fusion, Grads::Fusion(acc)) => {
                acc.accumulate(&grad_fusion(p, &ev.frames, &g)?);
            }
            (Layer::Lstm(p), Forward::Recurrent(trace), Grads::Lstm(acc)) => {
                backward_trace(p, &ev.frames, trace, &g, acc);
            }
            _ => unreachable!("forward cache matches layer"),
        }
        Ok(())
    }

    fn apply(&mut self, grads: &Grads, lr: f64) {
        match (self, grads) {
            (Layer::Fusion(p), Grads::Fusion(g)) => p.sgd_step(g, lr),
            (Layer::Lstm(p), Grads::Lstm(g)) => p.sgd_step(g, lr),
            _ => unreachable!("gradient kind matches layer"),
        }
    }
}

fn layer_of(composer: &mut Composer) -> Result<Layer<'_>> {
    match &mut composer.params {
        ComposerParams::Grouping { head: Some(h) } => Ok(Layer::Fusion(h)),
        ComposerParams::Grouping { head: None } => {
            Err(Error::Config("grouping without a head has nothing to train".into()))
        }
        ComposerParams::Fusion(p) => Ok(Layer::Fusion(p)),
        ComposerParams::Recurrent(p) => Ok(Layer::Lstm(p)),
    }
}

/// Initializes a composer of `kind` from the config's seed and trains it.
pub fn train_composer(kind: ComposerKind, store: &FeatureStore, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut composer = Composer::init(kind, config.n, store.dim, config.descriptor_dim, &mut rng)?;
    if let ComposerParams::Fusion(p) | ComposerParams::Grouping { head: Some(p) } = &mut composer.params {
        p.activation = config.activation;
    }
    composer.normalize = config.normalize;
    let losses = train_in_place(&mut composer, store, config, &mut rng)?;
    Ok(TrainOutcome { composer, losses })
}

/// Continues training an existing composer. Grouping trains its
/// single-view head on single-frame triplets.
pub fn train_in_place<R: Rng + ?Sized>(
    composer: &mut Composer,
    store: &FeatureStore,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    config.validate()?;
    let kind = composer.kind();
    let conv = store.convention;
    let window = if kind == ComposerKind::Grouping { 1 } else { composer.n };
    let recurrent = kind == ComposerKind::Recurrent;
    let substitution = if recurrent { config.frame_substitution_prob } else { 0.0 };
    let dropout = if recurrent { config.dropout_rate } else { 0.0 };
    let normalize = composer.normalize;
    let lookup = (substitution > 0.0).then(|| PlaceLookup::new(store));
    let start_steps = composer.trained_steps;
    let mut layer = layer_of(composer)?;

    let total = config.total_steps();
    let mut losses = Vec::with_capacity(total);
    for step in 0..total {
        let triplet = sample_triplet(store, conv, window, rng)?;
        let mut evaluated = Vec::with_capacity(3);
        for seq in [&triplet.anchor, &triplet.positive, &triplet.negative] {
            let frames = training_frames(seq, lookup.as_ref(), substitution, conv, rng);
            evaluated.push(layer.forward(frames, normalize, dropout, rng)?);
        }
        let lg = wl_loss_grad(
            &evaluated[0].output,
            &evaluated[1].output,
            &evaluated[2].output,
            config.margin,
        )?;
        if !lg.loss.is_finite() {
            return Err(Error::Diverged { step, loss: lg.loss });
        }
        losses.push(lg.loss);
        if lg.loss > 0.0 && config.learning_rate > 0.0 {
            let mut grads = layer.zero_grads();
            for (ev, up) in evaluated.iter().zip([&lg.anchor, &lg.positive, &lg.negative]) {
                layer.backward(ev, up, &mut grads)?;
            }
            layer.apply(&grads, config.learning_rate);
        }
    }
    composer.trained_steps = start_steps + total as u64;
    composer.validate().map_err(|_| Error::Diverged {
        step: total.saturating_sub(1),
        loss: f64::NAN,
    })?;
    Ok(losses)
}

fn training_frames<'a, R: Rng + ?Sized>(
    seq: &QuerySequence<'a>,
    lookup: Option<&PlaceLookup<'a>>,
    prob: f64,
    conv: PlaceConvention,
    rng: &mut R,
) -> Vec<&'a [f64]> {
    let mut frames = seq.features();
    if let Some(lookup) = lookup {
        if rng.random::<f64>() < prob {
            let j = rng.random_range(0..frames.len());
            let place = seq.frames()[j].place_id;
            if let Some(sub) = lookup.substitute(place, conv, frames[j], rng) {
                frames[j] = sub;
            }
        }
    }
    frames
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_world, WorldConfig};

    fn small_world() -> FeatureStore {
        generate_world(&WorldConfig {
            num_places: 40,
            dim: 8,
            conditions: 2,
            sigma_a: 0.3,
            sigma_eps: 0.05,
            rng_seed: 3,
        })
        .unwrap()
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            triplets_per_epoch: 50,
            descriptor_dim: 6,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let store = small_world();
        for kind in ComposerKind::ALL {
            let cfg = TrainConfig {
                learning_rate: 0.0,
                ..quick(1)
            };
            let trained = train_composer(kind, &store, &cfg).unwrap();
            let init = train_composer(kind, &store, &TrainConfig { epochs: 0, ..cfg.clone() }).unwrap();
            assert_eq!(trained.composer.params, init.composer.params);
            assert_eq!(trained.losses.len(), 50);
            assert_eq!(trained.composer.trained_steps, 50);
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let store = small_world();
        for kind in ComposerKind::ALL {
            let a = train_composer(kind, &store, &quick(2)).unwrap();
            let b = train_composer(kind, &store, &quick(2)).unwrap();
            assert_eq!(a.losses, b.losses);
            assert_eq!(a.composer, b.composer);
        }
    }

    #[test]
    fn grouping_trains_single_view_head() {
        let store = small_world();
        let out = train_composer(ComposerKind::Grouping, &store, &quick(1)).unwrap();
        let ComposerParams::Grouping { head: Some(h) } = &out.composer.params else {
            panic!("grouping keeps its head");
        };
        assert_eq!(h.n, 1);
        assert_eq!(out.composer.output_dim(8), 18);
    }

    #[test]
    fn normalized_training_stays_finite() {
        let store = small_world();
        for kind in ComposerKind::ALL {
            let cfg = TrainConfig {
                normalize: true,
                learning_rate: 0.05,
                ..quick(2)
            };
            let out = train_composer(kind, &store, &cfg).unwrap();
            assert!(out.losses.iter().all(|l| (0.0..=1.0).contains(l)));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let store = small_world();
        for cfg in [
            TrainConfig { margin: 0.0, ..quick(1) },
            TrainConfig { dropout_rate: 1.0, ..quick(1) },
            TrainConfig { frame_substitution_prob: 1.5, ..quick(1) },
            TrainConfig { triplets_per_epoch: 0, ..quick(1) },
        ] {
            assert!(matches!(
                train_composer(ComposerKind::Fusion, &store, &cfg),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn divergence_reports_step() {
        let store = small_world();
        let cfg = quick(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = Composer::init(ComposerKind::Fusion, 3, 8, 6, &mut rng).unwrap();
        let ComposerParams::Fusion(p) = &mut c.params else { unreachable!() };
        p.weights.iter_mut().for_each(|w| *w *= 1e200);
        match train_in_place(&mut c, &store, &cfg, &mut rng) {
            Err(Error::Diverged { step: 0, .. }) => {}
            other => panic!("expected divergence at step 0, got {other:?}"),
        }
    }
}
