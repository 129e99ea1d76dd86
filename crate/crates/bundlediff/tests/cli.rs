use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bundlediff"))
}

fn scratch(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("bundlediff-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn unknown_config_key_exits_2_and_is_named() {
    let d = scratch("badkey");
    let cfg = d.join("c.json");
    std::fs::write(&cfg, r#"{"model":"flat","sim":{"n_paths":10},"stray_knob":3}"#).unwrap();
    let out = bin().args(["verify", "geometry", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stray_knob"));
}

#[test]
fn unknown_model_exits_2() {
    let out = bin().args(["verify", "geometry", "--model", "klein"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn geometry_verdict_is_written_and_passes() {
    let d = scratch("geom");
    let v = d.join("v.json");
    let out = bin().args(["verify", "geometry", "--model", "hopf", "--points", "30", "--out"]).arg(&v).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let j: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&v).unwrap()).unwrap();
    assert_eq!(j["status"], "PASS");
    assert_eq!(j["schema_version"], "bundlediff.verdict/1");
    assert!(j["checks"].as_array().unwrap().len() > 5);
}

#[test]
fn verdict_is_reproducible_apart_from_timestamp() {
    let d = scratch("repro");
    let mut texts = Vec::new();
    for k in 0..2 {
        let cwd = d.join(format!("run{k}"));
        std::fs::create_dir_all(&cwd).unwrap();
        let v = cwd.join("v.json");
        let out = bin()
            .args(["verify", "girsanov", "--model", "warped", "--paths", "200", "--steps", "20", "--seed", "5", "--out", "v.json"])
            .current_dir(&cwd)
            .output()
            .unwrap();
        assert!(out.status.code().is_some());
        texts.push(bundlediff::harness::strip_timestamp(&std::fs::read_to_string(&v).unwrap()));
    }
    assert_eq!(texts[0], texts[1]);
}
