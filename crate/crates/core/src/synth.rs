//! Synthetic multi-condition traversals.
//!
//! Each place `p` has a latent unit vector `z_p`. Condition `c` observes it
//! through a fixed affine map `A_c = I + sigma_a * R_c` with offset `b_c`,
//! plus per-frame Gaussian noise:
//!
//! ```text
//! x_{c,p} = A_c z_p + b_c + eps,   eps ~ N(0, sigma_eps^2 I)
//! ```
//!
//! `R_c` has i.i.d. `N(0, 1/D)` entries and `b_c ~ N(0, sigma_a^2 / D I)`,
//! so both shifts scale with `sigma_a` and vanish with it. Frame `p` of
//! every condition shows place `p`.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::place::PlaceConvention;
use crate::store::{FeatureStore, Traversal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub num_places: usize,
    pub dim: usize,
    pub conditions: usize,
    pub sigma_a: f64,
    pub sigma_eps: f64,
    pub rng_seed: u64,
}

impl Default for WorldConfig {
    /// The standard desk-scale benchmark world.
    fn default() -> Self {
        WorldConfig {
            num_places: 200,
            dim: 64,
            conditions: 2,
            sigma_a: 0.5,
            sigma_eps: 0.1,
            rng_seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_places < 2 || self.dim < 2 || self.conditions < 2 {
            return Err(Error::Config(format!(
                "world needs at least 2 places, 2 dimensions and 2 conditions (got {}, {}, {})",
                self.num_places, self.dim, self.conditions
            )));
        }
        if !(self.sigma_a >= 0.0 && self.sigma_a.is_finite() && self.sigma_eps >= 0.0 && self.sigma_eps.is_finite())
        {
            return Err(Error::Config("world scales must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Whether the world holds two disjoint `n`-frame windows per traversal.
    pub fn supports_window(&self, n: usize) -> bool {
        self.num_places >= 2 * n
    }
}

// rng streams under one seed
const STREAM_CONDITIONS: u64 = 0;
const STREAM_PLACES: u64 = 1;
const STREAM_NOISE: u64 = 2;
const TRAINING_OFFSET: u64 = 1 << 32;

struct ConditionModel {
    /// `A_c`, row-major `D x D`.
    transform: Vec<f64>,
    offset: Vec<f64>,
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn condition_models(cfg: &WorldConfig) -> Vec<ConditionModel> {
    let d = cfg.dim;
    let mut rng = seeded(cfg.rng_seed, STREAM_CONDITIONS);
    let scale = 1.0 / (d as f64).sqrt();
    (0..cfg.conditions)
        .map(|_| {
            let mut transform: Vec<f64> = (0..d * d).map(|_| cfg.sigma_a * scale * normal(&mut rng)).collect();
            for i in 0..d {
                transform[i * d + i] += 1.0;
            }
            let offset = (0..d).map(|_| cfg.sigma_a * scale * normal(&mut rng)).collect();
            ConditionModel { transform, offset }
        })
        .collect()
}

fn place_vectors(num: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..num)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
            let n = crate::linalg::norm(&v);
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

fn render(cfg: &WorldConfig, num_places: usize, stream_offset: u64) -> Result<FeatureStore> {
    cfg.validate()?;
    if num_places < 2 {
        return Err(Error::Config("world needs at least 2 places".into()));
    }
    let models = condition_models(cfg);
    let places = place_vectors(num_places, cfg.dim, &mut seeded(cfg.rng_seed, stream_offset + STREAM_PLACES));
    let traversals = models
        .iter()
        .enumerate()
        .map(|(c, model)| {
            let mut rng = seeded(cfg.rng_seed, stream_offset + STREAM_NOISE + c as u64);
            let features = places
                .iter()
                .map(|z| {
                    let mut x = model.offset.clone();
                    crate::linalg::matvec_acc(&model.transform, z, &mut x);
                    x.iter()
                        .map(|v| (v + cfg.sigma_eps * normal(&mut rng)) as f32 as f64)
                        .collect()
                })
                .collect();
            Traversal::from_features(c as u32, format!("condition{c}"), features)
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureStore::new(traversals, PlaceConvention::EXACT)
}

/// One traversal per condition over `cfg.num_places` places.
pub fn generate_world(cfg: &WorldConfig) -> Result<FeatureStore> {
    render(cfg, cfg.num_places, 0)
}

/// A disjoint set of `num_places` places seen under the same condition
/// transforms as [`generate_world`], for training.
pub fn generate_training_world(cfg: &WorldConfig, num_places: usize) -> Result<FeatureStore> {
    render(cfg, num_places, TRAINING_OFFSET)
}

/// Plays one condition backwards. Frames are renumbered by position and
/// keep their place ids.
pub fn perturb_reverse(store: &FeatureStore, condition: u32) -> Result<FeatureStore> {
    let mut out = store.clone();
    let t = out.traversal_mut(condition)?;
    t.frames.reverse();
    t.renumber();
    Ok(out)
}

/// Subsamples one condition by walking it with a step drawn uniformly from
/// `multipliers` at every frame. Kept frames retain their place ids.
pub fn perturb_speed<R: Rng + ?Sized>(
    store: &FeatureStore,
    condition: u32,
    multipliers: &[usize],
    rng: &mut R,
) -> Result<FeatureStore> {
    if multipliers.is_empty() || multipliers.contains(&0) {
        return Err(Error::Config("speed multipliers must be positive".into()));
    }
    let mut out = store.clone();
    let t = out.traversal_mut(condition)?;
    let frames = std::mem::take(&mut t.frames);
    let mut kept = Vec::with_capacity(frames.len());
    let mut pos = 0;
    while pos < frames.len() {
        kept.push(frames[pos].clone());
        pos += *multipliers.choose(rng).expect("non-empty");
    }
    t.frames = kept;
    t.renumber();
    Ok(out)
}
