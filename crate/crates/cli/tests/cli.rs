use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ssc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssc"))
        .args(args)
        .env("AMM_THREADS", "1")
        .output()
        .expect("spawn ssc")
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    fs::write(
        &path,
        r#"{"epochs": 1, "train_scenes": 2, "val_scenes": 1, "test_scenes": 1, "batch_size": 2, "ckpt_every": 1}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn version_prints_crate_version() {
    let o = ssc(&["version", "--seed", "3"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), format!("ssc {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(ssc(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ssc(&["perturb", "--kind", "sideways"]).status.code(), Some(2));
    assert_eq!(ssc(&["train", "--seed", "x"]).status.code(), Some(2));
    assert_eq!(ssc(&["train", "--preset", "resnet"]).status.code(), Some(2));
    assert_eq!(ssc(&["version", "--bogus"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_1() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"epochs": 1, "learning_rate": 3}"#).unwrap();
    let o = ssc(&["gen-data", "--config", bad.to_str().unwrap(), "--out", tmp.path().join("d").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");

    let o = ssc(&["eval", "--ckpt", tmp.path().join("missing.ammc").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gen_data_is_byte_identical_for_equal_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let o = ssc(&["gen-data", "--config", &cfg, "--seed", "5", "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let scenes = |d: &Path| -> Vec<(String, Vec<u8>)> { files(d).into_iter().filter(|(n, _)| n != "manifest.json").collect() };
    let manifest = |d: &Path| -> serde_json::Value {
        let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
        m.as_object_mut().unwrap().remove("args");
        m
    };
    let fa = scenes(&a);
    assert!(fa.len() > 4);
    assert_eq!(fa, scenes(&b));
    assert_eq!(manifest(&a), manifest(&b));

    let c = tmp.path().join("c");
    ssc(&["gen-data", "--config", &cfg, "--seed", "6", "--out", c.to_str().unwrap()]);
    assert_ne!(scenes(&c), fa);
}

#[test]
fn train_eval_and_probe_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    assert!(ssc(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()]).status.success());
    let o = ssc(&[
        "train", "--config", &cfg, "--data", data.to_str().unwrap(), "--out", run.to_str().unwrap(), "--svg",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["curves.csv", "curves.svg", "final.ammc", "epoch_001.ammc", "manifest.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["epochs"], 1);

    let ckpt = run.join("final.ammc");
    let ev = tmp.path().join("eval");
    let o = ssc(&[
        "eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", ev.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    let miou = m["metrics"]["ssc_miou"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&miou));

    let pr = tmp.path().join("probe");
    let o = ssc(&[
        "probe", "--ckpt", ckpt.to_str().unwrap(), "--modality", "tsdf", "--data", data.to_str().unwrap(),
        "--out", pr.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p: serde_json::Value = serde_json::from_str(&fs::read_to_string(pr.join("probe.json")).unwrap()).unwrap();
    assert_eq!(p["encoder_unchanged"], true);
}

#[test]
fn gradcheck_writes_a_passing_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ssc(&["gradcheck", "--cases", "2", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("gradcheck.json")).unwrap()).unwrap();
    assert_eq!(r["all_passed"], true);
    assert!(r["checks"].as_array().unwrap().len() >= 10);
}

#[test]
fn perturb_writes_grids_and_record() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ssc(&["perturb", "--kind", "geo", "--p", "1", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rec: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("record.json")).unwrap()).unwrap();
    assert_eq!(rec["kind"], "GEOMETRIC");
    let orig = ssc_core::voxel_data::read_grid(tmp.path().join("original.ammv")).unwrap();
    let pert = ssc_core::voxel_data::read_grid(tmp.path().join("perturbed.ammv")).unwrap();
    let (ssc_core::voxel_data::GridPayload::Labels { data: a, .. }, ssc_core::voxel_data::GridPayload::Labels { data: b, .. }) =
        (orig, pert)
    else {
        panic!("expected label grids");
    };
    let occupied = a.iter().filter(|&&v| v != 0 && v != 255).count();
    assert_eq!(rec["changed"].as_u64().unwrap() as usize, occupied);
    assert!(b.iter().all(|&v| v == 0 || v == 255));
}

#[test]
fn ablate_rejects_unknown_rows() {
    let o = ssc(&["ablate", "--preset", "t9-nothing"]);
    assert_eq!(o.status.code(), Some(1));
}
