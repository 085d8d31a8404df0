//! Losses, the adversarial training loop, the encoder probe and the
//! overfitting diagnostic.

pub mod data;
pub mod disc_only;
pub mod losses;
pub mod optim;
pub mod probe;
pub mod trainer;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SscError};
use crate::generator::{Branches, FusionMode, GeneratorConfig, ModSites};
use crate::perturbation::PerturbConfig;
use crate::voxel_data::SceneSpec;

pub use data::{Augment, Dataset, Sample};
pub use trainer::{StepRecord, TrainOutcome, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

/// Which perturbed ground truths the discriminator sees as fakes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbKinds {
    pub geometric: bool,
    pub semantic: bool,
}

/// Missing keys take their [`Default`] values; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    /// Weight of the 2D segmentation term.
    pub lambda: f64,
    /// Weight of the generator's adversarial term.
    pub beta: f64,
    pub smoothing: f64,
    pub fusion_mode: FusionMode,
    pub modulation_sites: ModSites,
    pub adversarial_enabled: bool,
    pub perturb: PerturbConfig,
    pub perturb_kinds: PerturbKinds,
    /// Use `log(1 - D(G))` for the generator instead of `-log D(G)`.
    pub saturating_g_loss: bool,
    pub augment_3d: bool,
    pub augment_2d: bool,
    pub seed: u64,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub test_scenes: usize,
    /// Write a checkpoint every this many epochs; 0 disables periodic ones.
    pub ckpt_every: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub scale: Scale,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 4,
            lr_init: 1e-3,
            lr_min: 1e-7,
            weight_decay: 0.05,
            lambda: 0.25,
            beta: 0.005,
            smoothing: 0.1,
            fusion_mode: FusionMode::Modulation,
            modulation_sites: ModSites::ALL,
            adversarial_enabled: true,
            perturb: PerturbConfig::default(),
            perturb_kinds: PerturbKinds { geometric: true, semantic: true },
            saturating_g_loss: false,
            augment_3d: true,
            augment_2d: true,
            seed: 0,
            train_scenes: 64,
            val_scenes: 16,
            test_scenes: 16,
            ckpt_every: 10,
            channels: 16,
            num_classes: 11,
            scale: Scale::Desk,
        }
    }
}

pub const PRESETS: [&str; 4] = ["baseline", "ammnet", "ammnet-noadv", "ammnet-nomod"];

impl TrainConfig {
    /// `baseline`: addition fusion, no adversary. `ammnet`: modulation at
    /// all sites plus adversarial training. `ammnet-noadv` and
    /// `ammnet-nomod` drop one of the two.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        match name {
            "ammnet" => {}
            "baseline" => {
                c.fusion_mode = FusionMode::Addition;
                c.modulation_sites = ModSites::NONE;
                c.adversarial_enabled = false;
            }
            "ammnet-noadv" => c.adversarial_enabled = false,
            "ammnet-nomod" => {
                c.fusion_mode = FusionMode::Addition;
                c.modulation_sites = ModSites::NONE;
            }
            other => return Err(SscError::Config(format!("unknown preset `{other}`"))),
        }
        Ok(c)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: TrainConfig = serde_json::from_str(text).map_err(|e| SscError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SscError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.lambda >= 0.0) || !(self.beta >= 0.0) {
            return bad(format!("lambda {} and beta {} must be non-negative", self.lambda, self.beta));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return bad(format!("smoothing {} outside [0, 1)", self.smoothing));
        }
        if !(self.lr_init > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_init) {
            return bad(format!("learning rates {} -> {} invalid", self.lr_init, self.lr_min));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative".into());
        }
        if self.train_scenes == 0 {
            return bad("train_scenes must be positive".into());
        }
        self.perturb.validate()?;
        self.generator_config().validate()
    }

    pub fn scene_spec(&self) -> SceneSpec {
        match self.scale {
            Scale::Desk => SceneSpec::desk(self.num_classes),
            Scale::Paper => SceneSpec::paper_scale(self.num_classes),
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        let spec = self.scene_spec();
        GeneratorConfig {
            channels: self.channels,
            dims: spec.grid.dims,
            num_classes: self.num_classes,
            image: [spec.intrinsics.width, spec.intrinsics.height],
            fusion_mode: self.fusion_mode,
            sites: self.modulation_sites,
            branches: Branches::Both,
        }
    }

    pub fn scene_counts(&self) -> [usize; 3] {
        [self.train_scenes, self.val_scenes, self.test_scenes]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub split: Split,
    pub sc_iou: f64,
    pub ssc_miou: f64,
    pub loss_ssc: f64,
    pub loss_g_adv: f64,
    pub loss_d: f64,
}

pub const CURVE_HEADER: &str = "epoch,split,sc_iou,ssc_miou,loss_ssc,loss_g_adv,loss_d";

pub fn write_curves<W: Write>(w: W, points: &[CurvePoint]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for p in points {
        wr.serialize(p).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_curves<R: Read>(r: R) -> Result<Vec<CurvePoint>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
    if header != CURVE_HEADER {
        return Err(SscError::InvalidInput(format!("unexpected curve header `{header}`")));
    }
    rd.deserialize().map(|r| r.map_err(csv_err)).collect()
}

pub fn save_curves(path: &Path, points: &[CurvePoint]) -> Result<()> {
    write_curves(std::fs::File::create(path)?, points)
}

pub fn load_curves(path: &Path) -> Result<Vec<CurvePoint>> {
    read_curves(std::fs::File::open(path)?)
}

fn csv_err(e: csv::Error) -> SscError {
    SscError::InvalidInput(format!("curve CSV: {e}"))
}

/// Train minus validation SSC-mIoU per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    pub epochs: Vec<usize>,
    pub gaps: Vec<f64>,
    pub final_gap: f64,
    /// Epoch with the highest validation mIoU (first on ties).
    pub val_peak_epoch: usize,
}

pub fn overfit_report(curves: &[CurvePoint]) -> Result<OverfitReport> {
    let pick = |s: Split| -> std::collections::BTreeMap<usize, f64> {
        curves.iter().filter(|p| p.split == s).map(|p| (p.epoch, p.ssc_miou)).collect()
    };
    let (train, val) = (pick(Split::Train), pick(Split::Val));
    if train.is_empty() || val.is_empty() {
        return Err(SscError::InvalidInput("curves need both train and val points".into()));
    }
    let mut epochs = Vec::new();
    let mut gaps = Vec::new();
    for (&e, &t) in &train {
        if let Some(&v) = val.get(&e) {
            epochs.push(e);
            gaps.push(t - v);
        }
    }
    if gaps.is_empty() {
        return Err(SscError::InvalidInput("train and val curves share no epoch".into()));
    }
    let mut val_peak_epoch = 0;
    let mut best = f64::NEG_INFINITY;
    for (&e, &v) in &val {
        if v > best {
            best = v;
            val_peak_epoch = e;
        }
    }
    Ok(OverfitReport { final_gap: *gaps.last().unwrap(), epochs, gaps, val_peak_epoch })
}
