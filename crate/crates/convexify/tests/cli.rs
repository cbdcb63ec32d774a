use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use convexify::manifest::Manifest;

fn convexify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convexify")).args(args).arg("-q").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = convexify(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// phantom, simulate, pick and a short invert in the reduced box.
fn small_pipeline(root: &Path) {
    let d = |s: &str| root.join(s);
    ok(&["phantom", "--name", "test1", "--h", "1/8", "--out", p(&d("phantom"))]);
    ok(&["simulate", "--geometry", "reduced", "--phantom", "test1", "--h", "1/8", "--out", p(&d("sim"))]);
    ok(&["pick", "--in", p(&d("sim")), "--N", "3", "--out", p(&d("data"))]);
    ok(&["invert", "--data", p(&d("data")), "--levels", "1/4,1/8", "--max-iter", "150", "--out", p(&d("inv"))]);
}

#[test]
fn end_to_end_report_has_peak_value() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    small_pipeline(root);
    ok(&["report", "--in", p(&root.join("inv")), "--out", p(&root.join("rep"))]);

    let csv = fs::read_to_string(root.join("rep/summary.csv")).unwrap();
    let max_c: f64 = csv
        .lines()
        .find_map(|l| l.strip_prefix("max_c,"))
        .expect("max_c row")
        .parse()
        .unwrap();
    assert!(max_c.is_finite() && max_c > 0.0);
    let txt = fs::read_to_string(root.join("rep/summary.txt")).unwrap();
    assert!(txt.contains("max c ="), "{txt}");

    for f in ["phantom/c.vtk", "phantom/c_xz.pgm", "inv/c.json", "inv/w.bin", "inv/trace.csv", "data/basis.json"] {
        assert!(root.join(f).is_file(), "{f} missing");
    }
    let m: Manifest = serde_json::from_str(&fs::read_to_string(root.join("inv/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.command, "invert");
    assert_eq!(m.inputs.len(), 2);
    assert!(m.outputs.iter().any(|o| o.path == Path::new("c.bin")));
    assert_eq!(m.config.experiment.inversion.plan.levels, vec![0.25, 0.125]);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    small_pipeline(root);
    let first = tmp.path().join("first");
    fs::create_dir(&first).unwrap();
    for sub in ["sim", "data", "inv"] {
        fs::rename(root.join(sub), first.join(sub)).unwrap();
    }
    small_pipeline(root);

    for sub in ["sim", "data", "inv"] {
        for entry in fs::read_dir(first.join(sub)).unwrap() {
            let name = entry.unwrap().file_name();
            let a = fs::read(first.join(sub).join(&name)).unwrap();
            let b = fs::read(root.join(sub).join(&name)).unwrap();
            if name == "manifest.json" {
                let mut ma: Manifest = serde_json::from_slice(&a).unwrap();
                let mut mb: Manifest = serde_json::from_slice(&b).unwrap();
                for m in [&mut ma, &mut mb] {
                    m.wall_seconds = 0.0;
                    m.finished_at = 0.0;
                }
                assert_eq!(ma, mb, "{sub}/manifest.json");
            } else {
                assert!(a == b, "{sub}/{name:?} differs between runs");
            }
        }
    }
}

#[test]
fn manifest_reruns_the_command() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    small_pipeline(root);
    let manifest = root.join("inv/manifest.json");
    let again = root.join("again");
    ok(&["invert", "--config", p(&manifest), "--data", p(&root.join("data")), "--out", p(&again)]);
    assert_eq!(fs::read(root.join("inv/c.bin")).unwrap(), fs::read(again.join("c.bin")).unwrap());
    assert_eq!(fs::read(root.join("inv/trace.csv")).unwrap(), fs::read(again.join("trace.csv")).unwrap());
}

#[test]
fn cfl_violation_exits_3_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let r = convexify(&["simulate", "--geometry", "reduced", "--h", "1/8", "--dt", "0.1", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("CFL"));
    assert!(!out.exists());
}

#[test]
fn missing_input_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let r = convexify(&["pick", "--in", p(&tmp.path().join("nope")), "--out", p(&tmp.path().join("x"))]);
    assert_eq!(r.status.code(), Some(4));
    let r = convexify(&["report", "--in", p(tmp.path()), "--out", p(&tmp.path().join("x"))]);
    assert_eq!(r.status.code(), Some(4), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn configuration_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"experiment": {"forward": {"hh": 0.1}}}"#).unwrap();
    let r = convexify(&["phantom", "--config", p(&cfg), "--out", p(&tmp.path().join("a"))]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("hh"));

    let r = convexify(&["phantom", "--name", "test9", "--out", p(&tmp.path().join("b"))]);
    assert_eq!(r.status.code(), Some(2));
    let r = convexify(&["phantom", "--name", "test1"]);
    assert_eq!(r.status.code(), Some(2), "no output directory");
    let r = convexify(&["phantom", "--threads", "0", "--out", p(&tmp.path().join("c"))]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    let out = tmp.path().join("ph");
    fs::write(
        &cfg,
        format!(r#"{{"output": "{}", "experiment": {{"phantom": "test2", "forward": {{"h": 0.25}}}}}}"#, p(&out)),
    )
    .unwrap();
    ok(&["phantom", "--config", p(&cfg), "--h", "1/8"]);
    let m: Manifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.config.experiment.phantom, "test2");
    assert_eq!(m.config.experiment.forward.h, 0.125);
    let header: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("c.json")).unwrap()).unwrap();
    assert_eq!(header["dims"], serde_json::json!([9, 9, 9]));
}

#[test]
fn verify_commands_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let car = tmp.path().join("car");
    ok(&["verify", "carleman", "--h", "1/8", "--lambdas", "4,8", "--samples", "5", "--out", p(&car)]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(car.join("carleman.json")).unwrap()).unwrap();
    assert_eq!(r["per_lambda"].as_array().unwrap().len(), 2);
    assert!(fs::read_to_string(car.join("carleman.txt")).unwrap().contains("lambda"));

    let root = tmp.path();
    ok(&["simulate", "--geometry", "reduced", "--h", "1/8", "--out", p(&root.join("sim"))]);
    ok(&["pick", "--in", p(&root.join("sim")), "--basis", "3,0.1", "--out", p(&root.join("data"))]);
    let cvx = root.join("cvx");
    ok(&["verify", "convexity", "--data", p(&root.join("data")), "--pairs", "4", "--out", p(&cvx)]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(cvx.join("convexity.json")).unwrap()).unwrap();
    assert_eq!(r["gaps"].as_array().unwrap().len(), 4);
}

#[test]
fn invert_rejects_a_basis_size_the_data_lack() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    ok(&["simulate", "--geometry", "reduced", "--h", "1/8", "--out", p(&root.join("sim"))]);
    ok(&["pick", "--in", p(&root.join("sim")), "--N", "1", "--out", p(&root.join("data"))]);
    let r = convexify(&["invert", "--data", p(&root.join("data")), "--N", "3", "--levels", "1/8", "--out", p(&root.join("inv"))]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("pick --N 3"));
}
