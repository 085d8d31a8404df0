//! Frozen-encoder probe: a single-modality network whose encoder comes from
//! a trained checkpoint and stays fixed while a fresh decoder is trained.

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::trainer::Trainer;
use super::TrainConfig;
use crate::error::{Result, SscError};
use crate::generator::{Branches, FusionMode, Generator, ModSites};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Tsdf,
}

impl Modality {
    pub fn prefix(&self) -> &'static str {
        match self {
            Modality::Rgb => "gen/rgb/",
            Modality::Tsdf => "gen/tsdf/",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = SscError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Modality::Rgb),
            "tsdf" => Ok(Modality::Tsdf),
            other => Err(SscError::Config(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub modality: Modality,
    pub test_ssc_miou: f64,
    pub test_sc_iou: f64,
    /// Frozen encoder parameters compared bitwise before and after.
    pub encoder_unchanged: bool,
    pub encoder_params: usize,
}

/// Trains a fresh decoder on top of the `modality` encoder taken from
/// `stage1` (a generator parameter store) and reports test metrics.
/// Adversarial training is switched off for the probe.
pub fn probe_encoder(stage1: &ParamStore, modality: Modality, ds: &Dataset, cfg: &TrainConfig) -> Result<ProbeResult> {
    let mut gcfg = cfg.generator_config();
    gcfg.branches = match modality {
        Modality::Rgb => Branches::RgbOnly,
        Modality::Tsdf => Branches::TsdfOnly,
    };
    gcfg.fusion_mode = FusionMode::Addition;
    gcfg.sites = ModSites::NONE;
    let prefix = modality.prefix();
    let mut params = Generator::new(gcfg)?.init_params(cfg.seed)?;
    params.load_from(stage1, prefix)?;
    params.set_frozen(prefix, true);
    let before = params.subset(prefix);
    let mut pcfg = cfg.clone();
    pcfg.adversarial_enabled = false;
    pcfg.fusion_mode = FusionMode::Addition;
    pcfg.modulation_sites = ModSites::NONE;
    let mut trainer = Trainer::with_generator(pcfg, gcfg, params)?;
    trainer.fit(ds, None)?;
    let report = trainer.evaluate(&ds.test, None)?.counts.report()?;
    let after = trainer.gen_params.subset(prefix);
    Ok(ProbeResult {
        modality,
        test_ssc_miou: report.ssc_miou,
        test_sc_iou: report.sc_iou,
        encoder_unchanged: before == after,
        encoder_params: before.len(),
    })
}
