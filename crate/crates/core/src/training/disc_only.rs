//! Discriminator trained alone to separate real label grids from perturbed
//! ones.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::{cosine_lr, AdamW};
use crate::discriminator::{labels_to_simplex, Discriminator};
use crate::error::{Result, SscError};
use crate::nn::{Ctx, ParamStore};
use crate::perturbation::{perturb_geometric, perturb_semantic, PerturbConfig};
use crate::rng::{stream, Stream};
use crate::voxel_data::LabelGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscFitConfig {
    pub steps: usize,
    /// Real and fake grids per step, each.
    pub half_batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for DiscFitConfig {
    fn default() -> Self {
        DiscFitConfig { steps: 200, half_batch: 16, lr: 3e-3, weight_decay: 0.05, seed: 0 }
    }
}

/// Geometric or semantic fake (even odds) of `y`.
pub fn random_fake<R: Rng>(y: &LabelGrid, cfg: &PerturbConfig, num_classes: usize, rng: &mut R) -> Result<LabelGrid> {
    if rng.gen_bool(0.5) {
        let pg = cfg.sample_pg(rng);
        Ok(perturb_geometric(y, pg, rng)?.0)
    } else {
        Ok(perturb_semantic(y, cfg, num_classes, rng)?.0)
    }
}

/// Fits fresh discriminator parameters with a cosine-decayed learning rate;
/// returns them with the loss of each step.
pub fn fit_discriminator(
    disc: &Discriminator,
    real: &[LabelGrid],
    fake: &[LabelGrid],
    cfg: &DiscFitConfig,
) -> Result<(ParamStore, Vec<f64>)> {
    if real.is_empty() || fake.is_empty() {
        return Err(SscError::EmptySelection("need real and fake grids".into()));
    }
    let c = disc.num_classes;
    let mut params = disc.init_params(cfg.seed)?;
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut rng = stream(cfg.seed, Stream::Data);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut ctx = Ctx::new(&params);
        let mut terms = Vec::new();
        let w = 1.0 / (2 * cfg.half_batch) as f64;
        for _ in 0..cfg.half_batch {
            for (pool, is_real) in [(&real, true), (&fake, false)] {
                let y = &pool[rng.gen_range(0..pool.len())];
                let v = ctx.constant(labels_to_simplex(y, c)?);
                let l = disc.discriminate(&mut ctx, v)?;
                terms.push((ctx.graph.neg_log_sigmoid(l, is_real)?, w));
            }
        }
        let loss = ctx.graph.weighted_sum(&terms)?;
        let g = ctx.graph.backward(loss)?;
        let grads = ctx.param_grads(&g);
        losses.push(ctx.value(loss).item());
        drop(ctx);
        opt.step(&mut params, &grads, cosine_lr(step, cfg.steps, cfg.lr, 0.0))?;
    }
    Ok((params, losses))
}

/// Fraction of grids classified correctly at threshold 0.5.
pub fn disc_accuracy(disc: &Discriminator, params: &ParamStore, real: &[LabelGrid], fake: &[LabelGrid]) -> Result<f64> {
    let c = disc.num_classes;
    let mut right = 0usize;
    for (set, is_real) in [(real, true), (fake, false)] {
        for y in set {
            let p = disc.score(params, &labels_to_simplex(y, c)?)?.p;
            if (p > 0.5) == is_real {
                right += 1;
            }
        }
    }
    Ok(right as f64 / (real.len() + fake.len()) as f64)
}
