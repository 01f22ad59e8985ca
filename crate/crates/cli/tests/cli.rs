use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn patchkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchkit"))
        .current_dir(dir)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 8] = [
    "--set",
    "corpus.spec.n_scenes=3",
    "--set",
    "attack.patch_size=48",
    "--set",
    "attack.batch2d=1",
    "--set",
    "attack.batch3d=1",
];

fn with_small<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    SMALL.iter().copied().chain(extra.iter().copied()).collect()
}

#[test]
fn unknown_command_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(patchkit(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(patchkit(dir.path(), &["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(patchkit(dir.path(), &[]).status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_a_module_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = patchkit(dir.path(), &["--set", "attack.roundz=3", "deform-demo"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error[config]"), "{}", stderr(&o));
}

#[test]
fn missing_corpus_fails_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = patchkit(dir.path(), &["eval", "--control", "gray"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("corpus"), "{}", stderr(&o));
}

#[test]
fn gray_control_keeps_clean_detection_and_rerun_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(patchkit(d, &with_small(&["gen-corpus"])).status.success());
    let o = patchkit(d, &with_small(&["eval", "--control", "gray", "--name", "gray"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("runs/default/gray.json")).unwrap()).unwrap();
    assert!(report["asr"].as_f64().unwrap() <= 0.34, "{report}");

    let again = patchkit(d, &with_small(&["eval", "--control", "gray", "--name", "gray"]));
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("--force"), "{}", stderr(&again));
    let leftovers: Vec<_> = fs::read_dir(d.join("runs/default"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".partial") || n == ".patchkit.lock")
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
    let forced = patchkit(d, &with_small(&["--force", "eval", "--control", "gray", "--name", "gray"]));
    assert!(forced.status.success(), "{}", stderr(&forced));
}

#[test]
fn zero_round_training_matches_the_initial_patch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(patchkit(d, &with_small(&["gen-corpus"])).status.success());
    let o = patchkit(d, &with_small(&["--set", "attack.rounds=0", "train"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = fs::read_to_string(d.join("runs/default/trace.csv")).unwrap();
    assert!(trace.lines().count() <= 1, "{trace}");
    assert!(patchkit(d, &with_small(&["eval", "--name", "trained"])).status.success());
    assert!(patchkit(d, &with_small(&["eval", "--control", "noise", "--name", "noise"])).status.success());
    let a = fs::read(d.join("runs/default/trained.json")).unwrap();
    let b = fs::read(d.join("runs/default/noise.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn train_sweep_and_report_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(patchkit(d, &with_small(&["gen-corpus"])).status.success());
    let o = patchkit(d, &with_small(&["--set", "attack.rounds=2", "train"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = fs::read_to_string(d.join("runs/default/trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "round,L_det2d,L_det3d,L_tv,total");
    assert_eq!(trace.lines().count(), 3);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("runs/default/patch.json")).unwrap()).unwrap();
    assert_eq!(meta["iteration"], 2);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 16);

    assert!(patchkit(d, &with_small(&["sweep"])).status.success());
    let table = fs::read_to_string(d.join("runs/default/sweep_asr.csv")).unwrap();
    assert_eq!(
        table.lines().next().unwrap(),
        "conf_thres,IoU=0.1,IoU=0.3,IoU=0.5,IoU=0.7,IoU=0.9"
    );
    assert!(patchkit(d, &with_small(&["report"])).status.success());
    for svg in ["loss.svg", "asr.svg"] {
        let text = fs::read_to_string(d.join("runs/default").join(svg)).unwrap();
        assert!(text.starts_with("<svg"), "{svg}");
    }
}

#[test]
fn resume_continues_to_the_configured_round_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(patchkit(d, &with_small(&["gen-corpus"])).status.success());
    assert!(patchkit(d, &with_small(&["--set", "attack.rounds=1", "train"])).status.success());
    let o = patchkit(d, &with_small(&["--set", "attack.rounds=3", "train", "--resume"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = fs::read_to_string(d.join("runs/default/trace.csv")).unwrap();
    let rounds: Vec<&str> = trace.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rounds, ["1", "2"]);
}

#[test]
fn environment_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_patchkit"))
        .current_dir(dir.path())
        .env("ADVREAL_OUTPUT_DIR", "from_env")
        .arg("deform-demo")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("from_env/garment_deformed.obj").exists());
    assert!(dir.path().join("from_env/stress.csv").exists());
}

#[test]
fn occlusion_and_relight_demo_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(patchkit(d, &with_small(&["gen-corpus"])).status.success());
    let o = patchkit(d, &with_small(&["occlusion", "--control", "noise"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("runs/default/occlusion.json")).unwrap()).unwrap();
    assert!(v["occluded"]["asr"].is_number());
    let o = patchkit(d, &with_small(&["relight-demo", "--control", "gray"]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("runs/default/relight_after.png").exists());
}
