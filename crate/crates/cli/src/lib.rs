//! `ssc` command-line driver.

mod ablate;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use ssc_core::checkpoint::load_checkpoint;
use ssc_core::generator::GeneratorConfig;
use ssc_core::gradcheck;
use ssc_core::parallel;
use ssc_core::perturbation::{perturb_geometric, perturb_semantic};
use ssc_core::rng::{indexed, Stream};
use ssc_core::training::data::{generate_scenes, write_dataset};
use ssc_core::training::probe::{probe_encoder, Modality};
use ssc_core::training::{overfit_report, PRESETS, Dataset, Split, TrainConfig, Trainer};
use ssc_core::voxel_data::{gen_synthetic_scene, write_grid, GridPayload};
use ssc_core::{Result, SscError};

#[derive(Parser, Debug)]
#[command(name = "ssc", version, about = "Semantic scene completion experiments on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Master seed. Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "ssc-out")]
    out: PathBuf,
    /// JSON training configuration. Unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model from a preset or configuration file.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "ammnet", value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
        preset: String,
        /// Dataset directory written by gen-data. Generated in memory when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Also write curves.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
    /// Perturb the ground truth of one synthetic scene.
    Perturb {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        kind: Kind,
        /// Fixed erase or swap probability. Sampled from the configured range when absent.
        #[arg(long)]
        p: Option<f64>,
    },
    /// Train a decoder on a frozen encoder taken from a checkpoint.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum)]
        modality: ModalityArg,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run an ablation row or a whole group of rows.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Row name or one of table3, table4, table5, table6, fig6.
        #[arg(long)]
        preset: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Print the version.
    Version {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Geo,
    Sem,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModalityArg {
    Rgb,
    Tsdf,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(msg) = init_threads_from_env() {
        eprintln!("error: {msg}");
        return 2;
    }
    match dispatch(cli.command, &argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_threads_from_env() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("AMM_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("AMM_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        return Err("AMM_THREADS must be at least 1".into());
    }
    if n == 1 {
        parallel::set_enabled(false);
    } else {
        parallel::init_threads(n);
    }
    Ok(())
}

fn dispatch(cmd: Command, argv: &[String]) -> Result<i32> {
    match cmd {
        Command::Version { .. } => {
            println!("ssc {}", env!("CARGO_PKG_VERSION"));
            Ok(0)
        }
        Command::GenData { common } => {
            let cfg = resolve_config(&common, None, None)?;
            let scenes = generate_scenes(cfg.seed, cfg.scene_counts(), &cfg.scene_spec())?;
            fs::create_dir_all(&common.out)?;
            write_dataset(&common.out, &scenes)?;
            write_manifest(&common.out, "gen-data", &cfg, argv, json!({}))?;
            let [a, b, c] = scenes.each_ref().map(Vec::len);
            println!("wrote {a}/{b}/{c} scenes to {}", common.out.display());
            Ok(0)
        }
        Command::Train { common, preset, data, epochs, svg } => {
            let cfg = resolve_config(&common, Some(&preset), epochs)?;
            let ds = dataset(&cfg, data.as_deref())?;
            fs::create_dir_all(&common.out)?;
            write_manifest(&common.out, "train", &cfg, argv, json!({ "data": data }))?;
            let mut trainer = Trainer::new(cfg)?;
            let outcome = trainer.fit(&ds, Some(&common.out))?;
            if svg {
                fs::write(common.out.join("curves.svg"), svg::curves_svg(&outcome.curves))?;
            }
            print_final(&outcome.curves);
            Ok(0)
        }
        Command::Eval { common, ckpt, data, split } => {
            let (store, meta) = load_checkpoint(&ckpt)?;
            let mut cfg: TrainConfig = from_meta(&meta, "config")?;
            let gcfg: GeneratorConfig = from_meta(&meta, "generator")?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let ds = dataset(&cfg, data.as_deref())?;
            let samples = ds.split(&split)?;
            let mut trainer = Trainer::with_generator(cfg.clone(), gcfg, store.subset("gen/"))?;
            let disc = store.subset("disc/");
            if !disc.is_empty() {
                trainer.disc_params = disc;
            }
            let summary = trainer.evaluate(samples, Some(0))?;
            let report = json!({
                "split": split,
                "checkpoint": ckpt,
                "metrics": summary.counts.report()?,
                "loss_ssc": summary.loss_ssc,
                "loss_g_adv": summary.loss_g_adv,
                "loss_d": summary.loss_d,
            });
            fs::create_dir_all(&common.out)?;
            write_json(&common.out.join("metrics.json"), &report)?;
            write_manifest(&common.out, "eval", &cfg, argv, json!({ "ckpt": ckpt, "data": data, "split": split }))?;
            println!("{}", serde_json::to_string_pretty(&report["metrics"]).unwrap_or_default());
            Ok(0)
        }
        Command::Gradcheck { common, cases } => {
            let seed = common.seed.unwrap_or(0);
            let results = gradcheck::run_suite(seed, cases)?;
            let all_passed = results.iter().all(|r| r.passed);
            for r in &results {
                println!(
                    "{:<32} max_rel_err={:.3e} tol={:.0e} {}",
                    r.name,
                    r.max_rel_err,
                    r.tolerance,
                    if r.passed { "ok" } else { "FAILED" }
                );
            }
            fs::create_dir_all(&common.out)?;
            write_json(
                &common.out.join("gradcheck.json"),
                &json!({ "seed": seed, "cases": cases, "all_passed": all_passed, "checks": results }),
            )?;
            Ok(if all_passed { 0 } else { 1 })
        }
        Command::Perturb { common, kind, p } => {
            let mut cfg = resolve_config(&common, None, None)?;
            if let Some(p) = p {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(SscError::Config(format!("--p must lie in (0, 1], got {p}")));
                }
                cfg.perturb.pg_range = [p, p];
                cfg.perturb.ps_range = [p, p];
            }
            let scene = gen_synthetic_scene(cfg.seed, &cfg.scene_spec())?;
            let mut rng = indexed(cfg.seed, Stream::Perturb, cfg.perturb.seed_stream);
            let (out, record) = match kind {
                Kind::Geo => {
                    let pg = cfg.perturb.sample_pg(&mut rng);
                    perturb_geometric(&scene.gt, pg, &mut rng)?
                }
                Kind::Sem => perturb_semantic(&scene.gt, &cfg.perturb, cfg.num_classes, &mut rng)?,
            };
            fs::create_dir_all(&common.out)?;
            write_grid(common.out.join("original.ammv"), &GridPayload::Labels { dims: scene.gt.dims, data: scene.gt.labels })?;
            write_grid(common.out.join("perturbed.ammv"), &GridPayload::Labels { dims: out.dims, data: out.labels })?;
            write_json(&common.out.join("record.json"), &record)?;
            write_manifest(&common.out, "perturb", &cfg, argv, json!({ "kind": kind, "p": p }))?;
            println!("{:?}: changed {} voxels", record.kind, record.changed);
            Ok(0)
        }
        Command::Probe { common, ckpt, modality, data, epochs } => {
            let (store, meta) = load_checkpoint(&ckpt)?;
            let mut cfg = match &common.config {
                Some(_) => resolve_config(&common, None, None)?,
                None => from_meta(&meta, "config")?,
            };
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            let ds = dataset(&cfg, data.as_deref())?;
            let modality = match modality {
                ModalityArg::Rgb => Modality::Rgb,
                ModalityArg::Tsdf => Modality::Tsdf,
            };
            let result = probe_encoder(&store.subset("gen/"), modality, &ds, &cfg)?;
            fs::create_dir_all(&common.out)?;
            write_json(&common.out.join("probe.json"), &result)?;
            write_manifest(&common.out, "probe", &cfg, argv, json!({ "ckpt": ckpt, "data": data }))?;
            println!(
                "{:?}: test SSC-mIoU {:.4}, SC-IoU {:.4}",
                result.modality, result.test_ssc_miou, result.test_sc_iou
            );
            Ok(0)
        }
        Command::Ablate { common, preset, data, epochs } => {
            let rows = ablate::select(&preset).ok_or_else(|| {
                SscError::Config(format!("unknown ablation row or group {preset:?}"))
            })?;
            let base = resolve_config(&common, None, epochs)?;
            fs::create_dir_all(&common.out)?;
            let mut summary = csv_header();
            for row in rows {
                let mut cfg = row.config;
                cfg.seed = base.seed;
                cfg.epochs = base.epochs;
                cfg.train_scenes = base.train_scenes;
                cfg.val_scenes = base.val_scenes;
                cfg.test_scenes = base.test_scenes;
                cfg.scale = base.scale;
                cfg.validate()?;
                let dir = common.out.join(&row.name);
                fs::create_dir_all(&dir)?;
                write_manifest(&dir, "ablate", &cfg, argv, json!({ "row": row.name, "group": row.group, "data": data }))?;
                let ds = dataset(&cfg, data.as_deref())?;
                let outcome = Trainer::new(cfg.clone())?.fit(&ds, Some(&dir))?;
                let last = |split| outcome.curves.iter().rev().find(|p| p.split == split).cloned();
                let (val, test) = (last(Split::Val), last(Split::Test));
                let gap = overfit_report(&outcome.curves)?.final_gap;
                let line = format!(
                    "{},{},{},{},{},{},{},{}\n",
                    row.name,
                    row.group,
                    cfg.seed,
                    val.as_ref().map_or(f64::NAN, |p| p.ssc_miou),
                    val.as_ref().map_or(f64::NAN, |p| p.sc_iou),
                    test.as_ref().map_or(f64::NAN, |p| p.ssc_miou),
                    test.as_ref().map_or(f64::NAN, |p| p.sc_iou),
                    gap,
                );
                print!("{line}");
                summary.push_str(&line);
                fs::write(common.out.join("summary.csv"), &summary)?;
            }
            Ok(0)
        }
    }
}

fn csv_header() -> String {
    "row,group,seed,val_ssc_miou,val_sc_iou,test_ssc_miou,test_sc_iou,final_gap\n".to_string()
}

fn resolve_config(common: &Common, preset: Option<&str>, epochs: Option<usize>) -> Result<TrainConfig> {
    let mut cfg = match (&common.config, preset) {
        (Some(path), _) => TrainConfig::from_json(&fs::read_to_string(path)?)?,
        (None, Some(name)) => TrainConfig::preset(name)?,
        (None, None) => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dataset(cfg: &TrainConfig, dir: Option<&Path>) -> Result<Dataset> {
    let ds = match dir {
        Some(d) => Dataset::load(d)?,
        None => Dataset::generate(cfg.seed, cfg.scene_counts(), &cfg.scene_spec())?,
    };
    if ds.num_classes != cfg.num_classes {
        return Err(SscError::Config(format!(
            "dataset has {} classes but the configuration expects {}",
            ds.num_classes, cfg.num_classes
        )));
    }
    Ok(ds)
}

fn from_meta<T: serde::de::DeserializeOwned>(meta: &Value, key: &str) -> Result<T> {
    let v = meta.get(key).ok_or_else(|| SscError::Config(format!("checkpoint metadata lacks {key:?}")))?;
    serde_json::from_value(v.clone()).map_err(|e| SscError::Config(format!("checkpoint {key}: {e}")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SscError::Config(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_manifest(dir: &Path, command: &str, cfg: &TrainConfig, argv: &[String], extra: Value) -> Result<()> {
    write_json(
        &dir.join("manifest.json"),
        &json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed,
            "config": cfg,
            "args": argv.get(1..).unwrap_or_default(),
            "inputs": extra,
        }),
    )
}

fn print_final(curves: &[ssc_core::training::CurvePoint]) {
    for split in [Split::Train, Split::Val, Split::Test] {
        if let Some(p) = curves.iter().rev().find(|p| p.split == split) {
            println!(
                "epoch {:>3} {:<5} SC-IoU {:.4} SSC-mIoU {:.4}",
                p.epoch,
                format!("{split:?}").to_lowercase(),
                p.sc_iou,
                p.ssc_miou
            );
        }
    }
}
