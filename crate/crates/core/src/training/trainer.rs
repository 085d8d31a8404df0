//! The alternating discriminator / generator training loop.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Augment, Dataset, Sample};
use super::losses::{targets_2d, targets_3d};
use super::optim::{cosine_lr, AdamW};
use super::{save_curves, CurvePoint, Split, TrainConfig};
use crate::autodiff::{sigmoid, softmax_channels, Var, PROB_CLAMP};
use crate::checkpoint::save_checkpoint;
use crate::discriminator::{labels_to_simplex, Discriminator};
use crate::error::{Result, SscError};
use crate::generator::{GenOutputs, Generator, GeneratorConfig};
use crate::metrics::{argmax_labels, EvalCounts};
use crate::nn::{Ctx, ParamStore};
use crate::parallel;
use crate::perturbation::{perturb_geometric, perturb_semantic};
use crate::rng::{indexed, Stream};
use crate::tensor::Tensor;
use crate::voxel_data::LabelGrid;

/// Losses logged for one optimisation step (batch means).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss_ssc: f64,
    pub loss_g_adv: f64,
    pub loss_all: f64,
    pub loss_d: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub gen_params: ParamStore,
    pub disc_params: ParamStore,
    pub curves: Vec<CurvePoint>,
    pub steps: Vec<StepRecord>,
}

/// Dataset-level metrics and mean losses from an evaluation pass.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub counts: EvalCounts,
    pub loss_ssc: f64,
    pub loss_g_adv: f64,
    pub loss_d: f64,
}

/// Generator graph for one sample, kept alive between the D and G steps.
pub struct GenPass {
    pub ctx: Ctx<'static>,
    pub out: GenOutputs,
    ce3: Var,
    ce2: Option<Var>,
}

impl GenPass {
    /// Detached class probabilities `[C+1, X, Y, Z]`.
    pub fn probabilities(&self) -> Tensor {
        softmax_channels(self.ctx.value(self.out.logits))
    }
}

fn neg_log_sig(logit: f64, real: bool) -> f64 {
    let p = sigmoid(logit);
    -(if real { p } else { 1.0 - p }).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

fn check_finite(v: f64, epoch: usize, step: usize, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(SscError::Diverged { epoch, step, what: format!("{what} = {v}") })
    }
}

fn mean_grads(all: Vec<BTreeMap<String, Tensor>>) -> Result<BTreeMap<String, Tensor>> {
    let n = all.len() as f64;
    let mut it = all.into_iter();
    let mut acc = it.next().unwrap_or_default();
    for g in it {
        for (k, t) in g {
            match acc.get_mut(&k) {
                Some(a) => a.add_assign(&t),
                None => {
                    acc.insert(k, t);
                }
            }
        }
    }
    for t in acc.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok(acc)
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub gen_params: ParamStore,
    pub disc_params: ParamStore,
    g_opt: AdamW,
    d_opt: AdamW,
    perturb_rng: ChaCha8Rng,
    steps: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let gcfg = cfg.generator_config();
        let params = Generator::new(gcfg)?.init_params(cfg.seed)?;
        Self::with_generator(cfg, gcfg, params)
    }

    /// Trainer over a custom generator and its (possibly partly frozen)
    /// parameters.
    pub fn with_generator(cfg: TrainConfig, gcfg: GeneratorConfig, gen_params: ParamStore) -> Result<Self> {
        let generator = Generator::new(gcfg)?;
        let discriminator = Discriminator::new(gcfg.num_classes, gcfg.dims)?;
        let disc_params = discriminator.init_params(cfg.seed)?;
        Ok(Trainer {
            g_opt: AdamW::new(cfg.weight_decay),
            d_opt: AdamW::new(cfg.weight_decay),
            perturb_rng: indexed(cfg.seed, Stream::Perturb, cfg.perturb.seed_stream),
            steps: 0,
            cfg,
            generator,
            discriminator,
            gen_params,
            disc_params,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Generator graphs with the segmentation losses attached.
    pub fn forward_batch(&self, batch: &[Sample]) -> Result<Vec<GenPass>> {
        parallel::map(batch, |s| self.forward_one(s)).into_iter().collect()
    }

    fn forward_one(&self, s: &Sample) -> Result<GenPass> {
        let mut ctx = Ctx::owned(self.gen_params.clone());
        ctx.treat_as_constant("disc/");
        let out = self.generator.forward(&mut ctx, &s.inputs)?;
        let ce3 = ctx.graph.smooth_ce(out.logits, targets_3d(&s.gt, None), self.cfg.smoothing)?;
        let mut ce2 = None;
        if let (Some(l2), true) = (out.logits2d, self.cfg.lambda > 0.0) {
            let h = s.labels2d.len() / s.width;
            let t = targets_2d(&s.labels2d, s.width, h, 4)?;
            if !t.is_empty() {
                ce2 = Some(ctx.graph.smooth_ce(l2, t, self.cfg.smoothing)?);
            }
        }
        Ok(GenPass { ctx, out, ce3, ce2 })
    }

    /// One discriminator update on real labels, detached generator outputs
    /// and freshly perturbed labels. Returns the batch-mean `L_D`.
    pub fn d_step(&mut self, batch: &[Sample], generated: &[Tensor], lr: f64) -> Result<f64> {
        let c = self.generator.cfg.num_classes;
        let kinds = self.cfg.perturb_kinds;
        let mut inputs = Vec::with_capacity(batch.len());
        for (s, g) in batch.iter().zip(generated) {
            let mut x = vec![(labels_to_simplex(&s.gt, c)?, true), (g.clone(), false)];
            if kinds.geometric {
                let pg = self.cfg.perturb.sample_pg(&mut self.perturb_rng);
                let (y, _) = perturb_geometric(&s.gt, pg, &mut self.perturb_rng)?;
                x.push((labels_to_simplex(&y, c)?, false));
            }
            if kinds.semantic {
                let (y, _) = perturb_semantic(&s.gt, &self.cfg.perturb, c, &mut self.perturb_rng)?;
                x.push((labels_to_simplex(&y, c)?, false));
            }
            inputs.push(x);
        }
        let disc = &self.discriminator;
        let params = &self.disc_params;
        let results: Vec<Result<(f64, BTreeMap<String, Tensor>)>> = parallel::map(&inputs, |x| {
            let mut ctx = Ctx::new(params);
            let mut terms = Vec::new();
            for (t, real) in x {
                let v = ctx.constant(t.clone());
                let l = disc.discriminate(&mut ctx, v)?;
                terms.push((ctx.graph.neg_log_sigmoid(l, *real)?, 1.0));
            }
            let loss = ctx.graph.weighted_sum(&terms)?;
            let g = ctx.graph.backward(loss)?;
            Ok((ctx.value(loss).item(), ctx.param_grads(&g)))
        });
        let mut total = 0.0;
        let mut grads = Vec::new();
        for r in results {
            let (l, g) = r?;
            total += l;
            grads.push(g);
        }
        let loss = total / batch.len() as f64;
        check_finite(loss, 0, self.steps, "discriminator loss")?;
        self.d_opt.step(&mut self.disc_params, &mean_grads(grads)?, lr)?;
        Ok(loss)
    }

    /// One generator update minimising `L_SSC + beta * L_G_adv` with the
    /// current discriminator held fixed. Returns the batch means of
    /// `(L_SSC, L_G_adv, L_all)`.
    pub fn g_step(&mut self, mut passes: Vec<GenPass>, lr: f64) -> Result<(f64, f64, f64)> {
        let n = passes.len() as f64;
        let (lambda, beta) = (self.cfg.lambda, self.cfg.beta);
        let mut roots = Vec::with_capacity(passes.len());
        let mut sums = (0.0, 0.0, 0.0);
        for p in passes.iter_mut() {
            let mut terms = vec![(p.ce3, 1.0)];
            let mut ssc = p.ctx.value(p.ce3).item();
            if let Some(c2) = p.ce2 {
                terms.push((c2, lambda));
                ssc += lambda * p.ctx.value(c2).item();
            }
            let mut adv = 0.0;
            if self.cfg.adversarial_enabled {
                p.ctx.store_mut().extend(self.disc_params.clone());
                let probs = p.ctx.graph.softmax(p.out.logits);
                let logit = self.discriminator.discriminate(&mut p.ctx, probs)?;
                if self.cfg.saturating_g_loss {
                    let t = p.ctx.graph.neg_log_sigmoid(logit, false)?;
                    adv = -p.ctx.value(t).item();
                    terms.push((t, -beta));
                } else {
                    let t = p.ctx.graph.neg_log_sigmoid(logit, true)?;
                    adv = p.ctx.value(t).item();
                    terms.push((t, beta));
                }
            }
            let root = p.ctx.graph.weighted_sum(&terms)?;
            sums.0 += ssc;
            sums.1 += adv;
            sums.2 += p.ctx.value(root).item();
            roots.push(root);
        }
        let pairs: Vec<(&GenPass, Var)> = passes.iter().zip(roots).collect();
        let grads: Vec<Result<BTreeMap<String, Tensor>>> = parallel::map(&pairs, |(p, root)| {
            let g = p.ctx.graph.backward(*root)?;
            Ok(p.ctx.param_grads(&g))
        });
        let grads = grads.into_iter().collect::<Result<Vec<_>>>()?;
        let out = (sums.0 / n, sums.1 / n, sums.2 / n);
        check_finite(out.2, 0, self.steps, "generator loss")?;
        self.g_opt.step(&mut self.gen_params, &mean_grads(grads)?, lr)?;
        Ok(out)
    }

    /// Forward, optional D step, then G step on an already augmented batch.
    pub fn train_step(&mut self, batch: &[Sample], lr: f64, epoch: usize) -> Result<StepRecord> {
        let step = self.steps;
        let passes = self.forward_batch(batch)?;
        let mut loss_d = 0.0;
        if self.cfg.adversarial_enabled {
            let generated: Vec<Tensor> = passes.iter().map(GenPass::probabilities).collect();
            loss_d = self.d_step(batch, &generated, lr).map_err(|e| with_epoch(e, epoch, step))?;
        }
        let (loss_ssc, loss_g_adv, loss_all) = self.g_step(passes, lr).map_err(|e| with_epoch(e, epoch, step))?;
        self.steps += 1;
        Ok(StepRecord { epoch, step, loss_ssc, loss_g_adv, loss_all, loss_d })
    }

    /// Metrics over `samples`, plus adversarial losses when `adv_index` is
    /// given (its perturbations come from the eval substream at that index).
    pub fn evaluate(&self, samples: &[Sample], adv_index: Option<u64>) -> Result<EvalSummary> {
        if samples.is_empty() {
            return Err(SscError::EmptySelection("no samples to evaluate".into()));
        }
        let c = self.generator.cfg.num_classes;
        let with_adv = adv_index.is_some() && self.cfg.adversarial_enabled;
        let indexed_samples: Vec<(usize, &Sample)> = samples.iter().enumerate().collect();
        let per: Vec<Result<(EvalCounts, f64, f64, f64)>> = parallel::map(&indexed_samples, |&(i, s)| {
            let p = self.forward_one(s)?;
            let logits = p.ctx.value(p.out.logits);
            let mut counts = EvalCounts::new(c);
            counts.accumulate(&argmax_labels(logits)?, &s.gt, &s.mask)?;
            let mut ssc = p.ctx.value(p.ce3).item();
            if let Some(c2) = p.ce2 {
                ssc += self.cfg.lambda * p.ctx.value(c2).item();
            }
            let (mut lg, mut ld) = (0.0, 0.0);
            if with_adv {
                let mut rng = indexed(self.cfg.seed, Stream::Eval, adv_index.unwrap_or(0) << 20 | i as u64);
                let score = |t: &Tensor| self.discriminator.score(&self.disc_params, t).map(|s| s.logit);
                let gen = score(&p.probabilities())?;
                lg = if self.cfg.saturating_g_loss { -neg_log_sig(gen, false) } else { neg_log_sig(gen, true) };
                ld = neg_log_sig(score(&labels_to_simplex(&s.gt, c)?)?, true) + neg_log_sig(gen, false);
                let mut fakes: Vec<LabelGrid> = Vec::new();
                if self.cfg.perturb_kinds.geometric {
                    let pg = self.cfg.perturb.sample_pg(&mut rng);
                    fakes.push(perturb_geometric(&s.gt, pg, &mut rng)?.0);
                }
                if self.cfg.perturb_kinds.semantic {
                    fakes.push(perturb_semantic(&s.gt, &self.cfg.perturb, c, &mut rng)?.0);
                }
                for f in &fakes {
                    ld += neg_log_sig(score(&labels_to_simplex(f, c)?)?, false);
                }
            }
            Ok((counts, ssc, lg, ld))
        });
        let n = samples.len() as f64;
        let mut counts = EvalCounts::new(c);
        let (mut ssc, mut lg, mut ld) = (0.0, 0.0, 0.0);
        for r in per {
            let (k, a, b, d) = r?;
            counts.merge(&k)?;
            ssc += a;
            lg += b;
            ld += d;
        }
        Ok(EvalSummary { counts, loss_ssc: ssc / n, loss_g_adv: lg / n, loss_d: ld / n })
    }

    /// Runs one epoch (0-based `epoch`) and returns its step records.
    pub fn train_epoch(&mut self, train: &[Sample], epoch: usize) -> Result<Vec<StepRecord>> {
        let lr = cosine_lr(epoch, self.cfg.epochs, self.cfg.lr_init, self.cfg.lr_min);
        let mut rng = indexed(self.cfg.seed, Stream::Augment, epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let dims = self.generator.cfg.dims;
        let mut records = Vec::new();
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| Augment::sample(&mut rng, dims, self.cfg.augment_3d, self.cfg.augment_2d).apply(&train[i]))
                .collect::<Result<Vec<_>>>()?;
            records.push(self.train_step(&batch, lr, epoch + 1)?);
        }
        Ok(records)
    }

    /// Full run. With `out`, writes `curves.csv`, periodic
    /// `epoch_NNN.ammc` checkpoints, `final.ammc`, and `divergence.json` on
    /// a non-finite loss.
    pub fn fit(&mut self, ds: &Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
        if ds.train.is_empty() {
            return Err(SscError::EmptySelection("training split is empty".into()));
        }
        match self.fit_inner(ds, out) {
            Err(e @ SscError::Diverged { .. }) => {
                if let Some(dir) = out {
                    let rec = serde_json::json!({ "error": e.to_string(), "steps_completed": self.steps });
                    std::fs::write(dir.join("divergence.json"), serde_json::to_vec_pretty(&rec)?)?;
                }
                Err(e)
            }
            r => r,
        }
    }

    fn fit_inner(&mut self, ds: &Dataset, out: Option<&Path>) -> Result<TrainOutcome> {
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
        }
        let mut curves = Vec::new();
        let mut steps = Vec::new();
        for epoch in 0..self.cfg.epochs {
            let recs = self.train_epoch(&ds.train, epoch)?;
            let e = epoch + 1;
            let k = recs.len() as f64;
            let mean = |f: fn(&StepRecord) -> f64| recs.iter().map(f).sum::<f64>() / k;
            let train = self.evaluate(&ds.train, None)?.counts.report()?;
            let mut points = vec![CurvePoint {
                epoch: e,
                split: Split::Train,
                sc_iou: train.sc_iou,
                ssc_miou: train.ssc_miou,
                loss_ssc: mean(|r| r.loss_ssc),
                loss_g_adv: mean(|r| r.loss_g_adv),
                loss_d: mean(|r| r.loss_d),
            }];
            for (split, samples, idx) in [(Split::Val, &ds.val, 0u64), (Split::Test, &ds.test, 1)] {
                if samples.is_empty() {
                    continue;
                }
                let s = self.evaluate(samples, Some((epoch as u64) << 1 | idx))?;
                let r = s.counts.report()?;
                points.push(CurvePoint {
                    epoch: e,
                    split,
                    sc_iou: r.sc_iou,
                    ssc_miou: r.ssc_miou,
                    loss_ssc: s.loss_ssc,
                    loss_g_adv: s.loss_g_adv,
                    loss_d: s.loss_d,
                });
            }
            for p in &points {
                for (v, what) in [(p.loss_ssc, "loss_ssc"), (p.loss_g_adv, "loss_g_adv"), (p.loss_d, "loss_d")] {
                    check_finite(v, e, self.steps, what)?;
                }
            }
            curves.extend(points);
            steps.extend(recs);
            if let Some(dir) = out {
                save_curves(&dir.join("curves.csv"), &curves)?;
                if self.cfg.ckpt_every > 0 && e % self.cfg.ckpt_every == 0 {
                    self.save(&dir.join(format!("epoch_{e:03}.ammc")), e)?;
                }
            }
        }
        if let Some(dir) = out {
            self.save(&dir.join("final.ammc"), self.cfg.epochs)?;
        }
        Ok(TrainOutcome { gen_params: self.gen_params.clone(), disc_params: self.disc_params.clone(), curves, steps })
    }

    /// Checkpoint holding generator and discriminator parameters.
    pub fn save(&self, path: &Path, epoch: usize) -> Result<()> {
        let mut all = self.gen_params.clone();
        all.extend(self.disc_params.clone());
        let meta = serde_json::json!({
            "epoch": epoch,
            "config": self.cfg,
            "generator": self.generator.cfg,
        });
        save_checkpoint(path, &all, &meta)
    }
}

fn with_epoch(e: SscError, epoch: usize, step: usize) -> SscError {
    match e {
        SscError::Diverged { what, .. } => SscError::Diverged { epoch, step, what },
        other => other,
    }
}
