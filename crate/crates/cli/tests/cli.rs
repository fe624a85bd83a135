use std::path::Path;
use std::process::{Command, Output};

fn delinkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delinkit"))
        .args(args)
        .current_dir(dir)
        .env_remove("DELINKIT_THREADS")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = delinkit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn scene() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out-dir", ".", "--size", "200", "--seed", "3"]);
    dir
}

#[test]
fn segment_is_deterministic() {
    let d = scene();
    let p = d.path();
    ok(p, &["segment", "--rgb", "scene_rgb.ppm", "--scale", "0.5", "--seed", "1", "--out", "a.geojson"]);
    ok(p, &["segment", "--rgb", "scene_rgb.ppm", "--scale", "0.5", "--seed", "1", "--out", "b.geojson"]);
    let a = std::fs::read(p.join("a.geojson")).unwrap();
    assert_eq!(a, std::fs::read(p.join("b.geojson")).unwrap());

    let threaded = Command::new(env!("CARGO_BIN_EXE_delinkit"))
        .args(["segment", "--rgb", "scene_rgb.ppm", "--seed", "1", "--out", "c.geojson"])
        .current_dir(p)
        .env("DELINKIT_THREADS", "1")
        .status()
        .unwrap();
    assert!(threaded.success());
    assert_eq!(a, std::fs::read(p.join("c.geojson")).unwrap());
}

#[test]
fn evaluate_identical_lines() {
    let d = scene();
    let out = ok(
        d.path(),
        &[
            "evaluate",
            "--delineation",
            "scene_reference.geojson",
            "--reference",
            "scene_reference.geojson",
            "--radius",
            "0.30",
            "--gsd",
            "0.05",
        ],
    );
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v[0]["correctness"], 100.0);
    assert_eq!(v[0]["commission"], 0.0);
}

#[test]
fn stages_chain_through_files() {
    let d = scene();
    let p = d.path();
    ok(p, &["segment", "--rgb", "scene_rgb.ppm", "--seed", "1", "--out", "net.geojson"]);
    ok(p, &["features", "--network", "net.geojson", "--rgb", "scene_rgb.ppm", "--dsm", "scene_dsm.pgm", "--out", "t.csv"]);
    ok(
        p,
        &[
            "autolabel", "--table", "t.csv", "--network", "net.geojson", "--reference", "scene_reference.geojson",
            "--rgb", "scene_rgb.ppm", "--radius", "0.30", "--out", "l.csv",
        ],
    );
    ok(p, &["train", "--table", "l.csv", "--seed", "42", "--trees", "30", "--out", "m.json"]);
    ok(
        p,
        &["predict", "--model", "m.json", "--table", "t.csv", "--network", "net.geojson", "--out", "lk.geojson", "--table-out", "p.csv"],
    );
    ok(p, &["suggest", "--network", "lk.geojson", "--clicks", "scene_clicks.json", "--out", "d.geojson"]);
    let out = ok(
        p,
        &["evaluate", "--delineation", "d.geojson", "--reference", "scene_reference.geojson", "--radius", "0.30", "--rgb", "scene_rgb.ppm"],
    );
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v[0]["correctness"].as_f64().unwrap() >= 95.0, "{v}");

    let lk: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("lk.geojson")).unwrap()).unwrap();
    for f in lk["features"].as_array().unwrap() {
        let b = f["properties"]["boundary"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&b));
    }
    assert!(std::fs::read_to_string(p.join("p.csv")).unwrap().starts_with("id,boundary"));
}

#[test]
fn experiment_writes_report() {
    let d = scene();
    let p = d.path();
    let table = ok(
        p,
        &[
            "experiment", "--file", "scene_experiment.json", "--dim", "resolution", "--factor", "6", "--out", "rep.txt",
            "--json", "rep.json", "--seed", "42",
        ],
    );
    assert_eq!(std::fs::read_to_string(p.join("rep.txt")).unwrap(), table);
    let rows: Vec<&str> = table.lines().filter(|l| l.starts_with("baseline") || l.starts_with("x6")).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains(" 5.0 ") && rows[1].contains(" 30.0 "));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(p.join("rep.json")).unwrap()).unwrap();
    assert_eq!(json["dimension"], "resolution");
    assert_eq!(json["variants"].as_array().unwrap().len(), 2);

    let out = delinkit(p, &["experiment", "--file", "scene_experiment.json", "--dim", "resolution", "--out", "x.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!p.join("x.txt").exists());
    let out = delinkit(p, &["experiment", "--file", "scene_experiment.json", "--dim", "altitude", "--out", "x.txt"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_and_validation_errors() {
    let d = scene();
    let p = d.path();
    assert_eq!(delinkit(p, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(delinkit(p, &["segment", "--rgb", "scene_rgb.ppm", "--out", "n.geojson", "--bogus"]).status.code(), Some(2));
    assert_eq!(delinkit(p, &["segment"]).status.code(), Some(2));

    let out = delinkit(p, &["segment", "--rgb", "missing.ppm", "--out", "n.geojson"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error:"));
    assert!(!p.join("n.geojson").exists());

    let out = delinkit(p, &["resample", "--in", "scene_rgb.ppm", "--factor", "1000", "--out", "r.ppm"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!p.join("r.ppm").exists() && !p.join("r.wld").exists());
}

#[test]
fn resample_and_config_file() {
    let d = scene();
    let p = d.path();
    ok(p, &["resample", "--in", "scene_rgb.ppm", "--factor", "6", "--out", "c.ppm"]);
    let head = std::fs::read(p.join("c.ppm")).unwrap();
    assert!(head.starts_with(b"P6\n33 33\n255\n"));
    let wld = std::fs::read_to_string(p.join("c.wld")).unwrap();
    assert!((wld.lines().next().unwrap().parse::<f64>().unwrap() - 0.3).abs() < 1e-12);

    std::fs::write(p.join("seg.conf"), "# segmentation defaults\nscale = 0.2\nseed = 1\n").unwrap();
    ok(p, &["segment", "--rgb", "scene_rgb.ppm", "--config", "seg.conf", "--out", "a.geojson"]);
    ok(p, &["segment", "--rgb", "scene_rgb.ppm", "--scale", "0.2", "--seed", "1", "--out", "b.geojson"]);
    assert_eq!(std::fs::read(p.join("a.geojson")).unwrap(), std::fs::read(p.join("b.geojson")).unwrap());
    std::fs::write(p.join("bad.conf"), "no equals sign\n").unwrap();
    assert_eq!(delinkit(p, &["segment", "--config", "bad.conf"]).status.code(), Some(1));
}
