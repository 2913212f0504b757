use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rigmotion::cli;

const ASSETS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/assets/rigs");

fn rig(name: &str) -> PathBuf {
    Path::new(ASSETS).join(name)
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("rigmotion").chain(args.iter().copied());
    let code = cli::run(argv.map(std::ffi::OsString::from), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn all_outputs(dir: &Path) -> PathBuf {
    let cfg = dir.join("outputs.toml");
    fs::write(&cfg, "[output]\npng_frames = true\nraw_frames = true\nobj_sequence = true\n").unwrap();
    cfg
}

fn count(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext)).count()
}

#[test]
fn validate_rig_matches_manifest() {
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(Path::new(ASSETS).join("manifest.json")).unwrap()).unwrap();
    for entry in manifest["rigs"].as_array().unwrap() {
        let name = entry["name"].as_str().unwrap();
        let dir = rig(name);
        let (code, out, err) = run(&["validate-rig", "--rig", dir.to_str().unwrap()]);
        assert_eq!(code, 0, "{err}");
        let report: serde_json::Value = serde_json::from_str(&out).unwrap();
        for key in ["joints", "vertices", "faces"] {
            assert_eq!(report[key], entry[key], "{name}: {key}");
        }
    }
}

#[test]
fn missing_prompt_is_a_usage_error() {
    let out = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&["animate", "--rig", rig("toy2").to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("--prompt") && err.contains("Usage"), "{err}");
}

#[test]
fn missing_rig_is_a_data_error() {
    let out = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&["init-only", "--rig", "/nonexistent/rig", "--prompt", "walk", "--out", out.path().to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn invalid_config_is_a_data_error() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("bad.toml");
    fs::write(&cfg, "frames = 4\n").unwrap();
    let (code, _, err) = run(&[
        "animate",
        "--rig",
        rig("toy2").to_str().unwrap(),
        "--prompt",
        "walk",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn unreachable_bridge_is_a_runtime_error() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("fast.toml");
    fs::write(&cfg, "[critic]\ntimeout_secs = 0.5\nattempts = 1\n").unwrap();
    let (code, _, err) = run(&[
        "animate",
        "--rig",
        rig("toy2").to_str().unwrap(),
        "--prompt",
        "walk",
        "--config",
        cfg.to_str().unwrap(),
        "--critic",
        "bridge",
        "--bridge-addr",
        "127.0.0.1:9",
        "--out",
        out.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn animate_writes_every_output() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().join("run");
    let cfg = all_outputs(out.path());
    let (code, _, err) = run(&[
        "animate",
        "--config",
        cfg.to_str().unwrap(),
        "--rig",
        rig("biped").to_str().unwrap(),
        "--prompt",
        "a person walking",
        "--critic",
        "mock",
        "--iterations",
        "2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    for f in ["motion.json", "log.jsonl", "checkpoint.json", "config.toml", "run.json", "frames.f32"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let motion: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("motion.json")).unwrap()).unwrap();
    assert_eq!(motion["frames"].as_array().unwrap().len(), 48);
    assert_eq!(motion["joint_names"].as_array().unwrap().len(), 17);
    assert_eq!(count(&dir.join("frames"), "png"), 48);
    assert_eq!(count(&dir.join("mesh"), "obj"), 48);
    assert_eq!(fs::read_to_string(dir.join("log.jsonl")).unwrap().lines().count(), 2);

    // the exported motion feeds the metric and the simulator
    let m = dir.join("motion.json");
    let (code, report, err) = run(&["metrics", "mld", "--rig", rig("biped").to_str().unwrap(), "--motion", m.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["per_frame"].as_array().unwrap().len(), 48);
    let (code, obj_report, err) =
        run(&["metrics", "mld", "--rig", rig("biped").to_str().unwrap(), "--obj-dir", dir.join("mesh").to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let obj_report: serde_json::Value = serde_json::from_str(&obj_report).unwrap();
    assert_eq!(obj_report["per_frame"].as_array().unwrap().len(), 48);

    let sim = out.path().join("sim");
    let (code, _, err) =
        run(&["simulate", "--rig", rig("biped").to_str().unwrap(), "--motion", m.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(count(&sim.join("mesh"), "obj"), 48);
}

#[test]
fn animate_is_deterministic_and_resumable() {
    let out = tempfile::tempdir().unwrap();
    let go = |name: &str, iterations: &str, resume: Option<&Path>| {
        let dir = out.path().join(name);
        let toy = rig("toy2");
        let cfg = all_outputs(out.path());
        let mut args = vec![
            "animate",
            "--config",
            cfg.to_str().unwrap(),
            "--rig",
            toy.to_str().unwrap(),
            "--prompt",
            "a toy walking",
            "--seed",
            "11",
            "--iterations",
            iterations,
        ];
        let d = dir.to_str().unwrap().to_string();
        let r = resume.map(|p| p.to_str().unwrap().to_string());
        args.extend(["--out", &d]);
        if let Some(r) = &r {
            args.extend(["--resume", r]);
        }
        let (code, _, err) = run(&args);
        assert_eq!(code, 0, "{err}");
        dir
    };
    let a = go("a", "6", None);
    let b = go("b", "6", None);
    assert_eq!(fs::read(a.join("motion.json")).unwrap(), fs::read(b.join("motion.json")).unwrap());
    assert_eq!(fs::read(a.join("frames.f32")).unwrap(), fs::read(b.join("frames.f32")).unwrap());

    let half = go("half", "3", None);
    let rest = go("rest", "6", Some(&half.join("checkpoint.json")));
    assert_eq!(fs::read(a.join("motion.json")).unwrap(), fs::read(rest.join("motion.json")).unwrap());
}

#[test]
fn init_only_writes_the_prior() {
    let out = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&[
        "init-only",
        "--rig",
        rig("quadruped").to_str().unwrap(),
        "--prompt",
        "a dog trotting",
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let init: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.path().join("init.json")).unwrap()).unwrap();
    assert_eq!(init["action"], "walk");
    assert_eq!(init["cyclic"], true);
    assert!(out.path().join("motion.json").is_file());
}

#[test]
fn mld_rejects_foreign_motion() {
    let out = tempfile::tempdir().unwrap();
    let (code, _, err) =
        run(&["init-only", "--rig", rig("toy2").to_str().unwrap(), "--prompt", "walk", "--out", out.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let m = out.path().join("motion.json");
    let (code, _, err) = run(&["metrics", "mld", "--rig", rig("biped").to_str().unwrap(), "--motion", m.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_rigmotion");
    let st = Command::new(bin).arg("validate-rig").arg("--rig").arg(rig("lamp")).output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    let st = Command::new(bin).arg("validate-rig").output().unwrap();
    assert_eq!(st.status.code(), Some(1));
    let st = Command::new(bin).args(["validate-rig", "--rig", "/nonexistent"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    let st = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(st.status.code(), Some(0));
}
