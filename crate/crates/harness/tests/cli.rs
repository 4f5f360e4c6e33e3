use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn backstep(out: &Path, args: &[&str]) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_backstep"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs");
    (
        o.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&o.stdout).into_owned(),
    )
}

fn meta(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metadata.json")).unwrap()).unwrap()
}

#[test]
fn figure_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _) = backstep(tmp.path(), &["run", "fig1a"]);
    assert_eq!(code, 0);
    let m = meta(&tmp.path().join("fig1a"));
    let t = m["results"]["simulation"]["blow_up"].as_f64().unwrap();
    assert!((1.01..=1.11).contains(&t), "{t}");
    assert!(tmp.path().join("fig1a/timeseries.csv").exists());

    let (code, _) = backstep(tmp.path(), &["run", "fig1c"]);
    assert_eq!(code, 0);
    let m = meta(&tmp.path().join("fig1c"));
    assert!(m["results"]["simulation"]["blow_up"].is_null());
    let l2 = m["results"]["simulation"]["final_l2"].as_f64().unwrap();
    assert!((0.15..=0.25).contains(&l2), "{l2}");
    assert_eq!(m["config"]["controller"], "order-3");
    assert!(m["version"]
        .as_str()
        .unwrap()
        .starts_with("backstep-harness"));
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(backstep(d.path(), &["run", "fig1b"]).0, 0);
    }
    let read =
        |d: &tempfile::TempDir| std::fs::read(d.path().join("fig1b/timeseries.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn kernels_gains_and_invert() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        backstep(tmp.path(), &["kernels", "--plant", "pdae", "--order", "3"]).0,
        0
    );
    let m = meta(&tmp.path().join("kernels"));
    assert_eq!(m["results"]["support"], 7);
    let a: Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("kernels/cascade_a.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(a["role"], "cascade-a");

    assert_eq!(backstep(tmp.path(), &["gains"]).0, 0);
    let g = meta(&tmp.path().join("gains"));
    assert!(g["results"]["ell_s"].as_f64().unwrap() <= 0.5);

    let csv = tmp.path().join("w.csv");
    let mut text = String::from("x,w\n");
    for i in 0..101 {
        let x = i as f64 / 100.0;
        text.push_str(&format!("{x},{}\n", 0.1 * (3.0 * x).sin()));
    }
    std::fs::write(&csv, text).unwrap();
    assert_eq!(
        backstep(tmp.path(), &["invert", "--input", csv.to_str().unwrap()]).0,
        0
    );
    assert!(tmp.path().join("invert/inverse.csv").exists());
}

#[test]
fn simulate_from_config_and_plant_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("plant.txt"),
        "# same as pdae\nb n=2 P=0,0 coeffs=1\n",
    )
    .unwrap();
    std::fs::write(
        tmp.path().join("exp.toml"),
        "name = \"short\"\nplant = \"plant.txt\"\ncontroller = \"order-3\"\nm = 101\nt_end = 0.5\n\n[initial]\nkind = \"bump\"\nscale = 0.1\n\n[verify]\nkernel_cross_check = true\ninversion_round_trip = true\n",
    )
    .unwrap();
    let cfg = tmp.path().join("exp.toml");
    let (code, _) = backstep(tmp.path(), &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0);
    let m = meta(&tmp.path().join("short"));
    assert_eq!(m["results"]["checks"]["kernel_cross_check"]["pass"], true);
}

#[test]
fn usage_and_config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(backstep(tmp.path(), &["run", "fig9"]).0, 2);
    assert_eq!(backstep(tmp.path(), &["bogus"]).0, 2);
    let bad = tmp.path().join("bad.txt");
    std::fs::write(&bad, "b n=1 P=0 coeffs=1\n").unwrap();
    assert_eq!(
        backstep(tmp.path(), &["kernels", "--plant", bad.to_str().unwrap()]).0,
        2
    );
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_backstep"))
        .env("BACKSTEP_OUTPUT_ROOT", tmp.path())
        .args(["run", "gains"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("gains/gains.csv").exists());
}
