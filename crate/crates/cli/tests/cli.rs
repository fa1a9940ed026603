use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pseudomode"));
    c.env_remove("PSEUDOMODE_OUT").env_remove("PSEUDOMODE_TOL_SCALE");
    c
}

fn dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("pseudomode-cli-{}", std::process::id())).join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn summary(d: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(d.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn audit_exit_codes_for_builtins() {
    for (model, expect) in [("mizohata", 0), ("cpt", 2), ("cpt_gen", 2)] {
        let d = dir(&format!("audit-{model}"));
        let o = bin().args(["audit", "--model", model, "--out"]).arg(&d).output().unwrap();
        assert_eq!(code(&o), expect, "{model}: {}", String::from_utf8_lossy(&o.stderr));
        let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("audit.json")).unwrap()).unwrap();
        assert_eq!(a["licensed"], expect == 0);
    }
}

#[test]
fn malformed_config_exits_one_with_location() {
    let d = dir("malformed");
    let p = d.join("bad.json");
    std::fs::write(&p, "{\n  \"lambdas\": [64,\n}\n").unwrap();
    for cmd in ["audit", "run"] {
        let o = bin().arg(cmd).arg(&p).output().unwrap();
        assert_eq!(code(&o), 1);
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains("line 3"), "{err}");
    }
}

#[test]
fn invalid_values_exit_one() {
    let o = bin().args(["audit", "--rho", "0.7"]).output().unwrap();
    assert_eq!(code(&o), 1);
    let o = bin().args(["run", "--lambda", "128,64"]).output().unwrap();
    assert_eq!(code(&o), 1);
    let o = bin().args(["audit", "--model", "nonesuch"]).output().unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn models_lists_builtins() {
    let o = bin().arg("models").output().unwrap();
    assert_eq!(code(&o), 0);
    let s = String::from_utf8(o.stdout).unwrap();
    for m in ["mizohata", "cpt", "cpt_gen"] {
        assert!(s.lines().any(|l| l.starts_with(m)), "{s}");
    }
}

#[test]
fn single_lambda_run_is_inconclusive() {
    let d = dir("single");
    let o = bin().args(["run", "--lambda", "64", "--out"]).arg(&d).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&d);
    assert_eq!(s["verdict"], "INCONCLUSIVE");
    assert!(s["slope"].is_null());
    let report = std::fs::read_to_string(d.join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next().unwrap(),
        "lambda,norm_u_minusN,norm_Pu_nu,norm_u_minusNn,norm_Au0,ratio,residual_expansion,residual_direct,min_im_w0,t0_anchor,usable_lo,usable_hi,wall_ms"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 13);
    assert_eq!(row[0].parse::<f64>().unwrap(), 64.0);
    assert_eq!(row[12], "0");
    let phase = std::fs::read_to_string(d.join("phase_64.csv")).unwrap();
    assert_eq!(phase.lines().next().unwrap(), "t,re_w0,im_w0,x0,xi0,y0,zeta0,eigmin_im_w20,eigmin_im_w02");
    let field = std::fs::read_to_string(d.join("field_64.csv")).unwrap();
    let mut rows = field.lines();
    assert_eq!(rows.next().unwrap(), "t,x,y,abs_u");
    let peak = rows.map(|r| r.split(',').nth(3).unwrap().parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert!((peak - 1.0).abs() < 0.05, "{peak}");
}

#[test]
fn refused_run_exits_two() {
    let d = dir("cpt");
    let o = bin().args(["run", "--model", "cpt", "--lambda", "64,128", "--out"]).arg(&d).output().unwrap();
    assert_eq!(code(&o), 2);
    assert_eq!(summary(&d)["verdict"], "REFUSED_CONDITIONS");

    let d = dir("cpt-force");
    let o = bin().args(["run", "--model", "cpt", "--force", "--lambda", "64,128", "--out"]).arg(&d).output().unwrap();
    let s = summary(&d);
    assert!(matches!(s["verdict"].as_str(), Some("REFUSED_CONDITIONS" | "INCONCLUSIVE")));
    assert_eq!(s["refused"].as_array().unwrap().len(), 2);
    assert!(s["refused"][0]["reason"].as_str().unwrap().contains("gate"));
    assert_eq!(s["forced"], true);
    assert!(code(&o) == 2 || code(&o) == 0);
}

#[test]
fn output_dir_from_environment() {
    let d = dir("env");
    let o = bin().args(["audit", "--model", "mizohata"]).env("PSEUDOMODE_OUT", &d).output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(d.join("audit.json").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (dir("rep-a"), dir("rep-b"));
    for d in [&a, &b] {
        let o = bin().args(["run", "--lambda", "64,128", "--out"]).arg(d).output().unwrap();
        assert_eq!(code(&o), 0);
    }
    for f in ["report.csv", "summary.json", "audit.json", "phase_64.csv", "phase_128.csv", "field_64.csv", "field_128.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_with_relative_model_path() {
    let d = dir("cfgfile");
    std::fs::write(
        d.join("model.json"),
        r#"{"name": "flat", "k": 2, "dims": {"nx": 1, "ny": 1}, "eta0": [1.0], "f_poly": [[0.0, 1.0, 0, [0], [2]]]}"#,
    )
    .unwrap();
    std::fs::write(d.join("run.json"), r#"{"model": {"file": "model.json"}, "lambdas": [64, 128]}"#).unwrap();
    let o = bin().arg("run").arg(d.join("run.json")).arg("--out").arg(d.join("out")).output().unwrap();
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary(&d.join("out"))["verdict"], "REFUSED_NO_SIGN_CHANGE");
}

#[test]
fn strict_tolerance_fails_selftest_by_name() {
    let o = bin().arg("selftest").env("PSEUDOMODE_TOL_SCALE", "0").output().unwrap();
    assert_ne!(code(&o), 0);
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.lines().any(|l| l.starts_with("FAIL ")), "{s}");
}
