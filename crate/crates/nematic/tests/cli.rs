use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nematic(dir: &Path, config: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nematic"));
    if let Some(text) = config {
        let p = dir.join("run.toml");
        fs::write(&p, text).unwrap();
        cmd.arg("--config").arg(p);
    }
    if !args.contains(&"--out") {
        cmd.arg("--out").arg(dir.join("out"));
    }
    cmd.args(args).output().unwrap()
}

/// `key,value` rows of a summary CSV.
fn value(path: &Path, key: &str) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    let line = text.lines().find(|l| l.starts_with(&format!("{key},"))).unwrap_or_else(|| panic!("{key} missing in {text}"));
    line.split(',').nth(1).unwrap().parse().unwrap()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let c = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name} in {header:?}"));
    lines.map(|l| l.split(',').nth(c).unwrap().parse().unwrap()).collect()
}

const SMALL_SPHERE: &str = r#"
[regime]
eta = 0.3
beta = 0.5

[grid]
h_radii = 0.25
half_width_radii = [2.0, 2.0, 2.0]

[solver]
max_iter = 40
trace_every = 5
"#;

#[test]
fn malformed_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = nematic(dir.path(), Some("[grid]\nspacing_typo = 0.1\n"), &["relax"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("spacing_typo"));
}

#[test]
fn zero_iterations_still_writes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SMALL_SPHERE.replace("max_iter = 40", "max_iter = 0");
    let out = nematic(dir.path(), Some(&cfg), &["relax"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    for f in ["checkpoint.bin", "trace.csv", "relax.csv", "config.toml"] {
        assert!(o.join(f).exists(), "{f}");
    }
    assert_eq!(value(&o.join("relax.csv"), "iterations"), 0.0);
    let echoed = fs::read_to_string(o.join("config.toml")).unwrap();
    assert!(echoed.contains("# nematic ") && echoed.contains("max_iter = 0"));
}

#[test]
fn sphere_preset_relaxes_and_extracts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SMALL_SPHERE.replace("h_radii = 0.25", "h_radii = 0.125").replace("[2.0, 2.0, 2.0]", "[3.0, 3.0, 3.0]");
    let out = nematic(dir.path(), Some(&cfg), &["relax"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    let e = column(&o.join("trace.csv"), "E_total");
    assert!(e.len() >= 2 && e.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs()), "{e:?}");

    let ck = o.join("checkpoint.bin");
    let out = nematic(dir.path(), Some(&cfg), &["--out", o.join("extract").to_str().unwrap(), "extract", "--checkpoint", ck.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let x = o.join("extract");
    for f in ["s.poly", "t.obj", "t_full.obj", "surface.obj", "f.csv", "report.csv"] {
        assert!(x.join(f).exists(), "{f}");
    }
    assert!(value(&x.join("report.csv"), "e0_total") > 0.0);
}

#[test]
fn outputs_do_not_depend_on_threads() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(nematic(a.path(), Some(SMALL_SPHERE), &["--threads", "1", "relax"]).status.success());
    assert!(nematic(b.path(), Some(SMALL_SPHERE), &["--threads", "3", "relax"]).status.success());
    for f in ["trace.csv", "checkpoint.bin"] {
        assert_eq!(fs::read(a.path().join("out").join(f)).unwrap(), fs::read(b.path().join("out").join(f)).unwrap(), "{f}");
    }
}

#[test]
#[allow(clippy::approx_constant)] // 1.5708 is the literal passed to --theta
fn profile_at_right_angle_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = nematic(dir.path(), None, &["profile", "--theta", "1.5708"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    let i = column(&o.join("i_values.csv"), "i_bvp")[0];
    let exact = column(&o.join("i_values.csv"), "i_closed_form")[0];
    let s: f64 = 1.5;
    assert!((exact - 2.0 * s * s.sqrt() * (1.0 - 1.5708f64.cos())).abs() < 1e-12);
    assert!((i - exact).abs() < 5e-3 * exact, "{i} vs {exact}");
    assert!(column(&o.join("profile.csv"), "r").len() > 100);
}

#[test]
fn equator_ring_line_term() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[regime]\nbeta = 0.8\n\n[recovery]\ngeometry = \"equator_ring\"\n\n[extraction]\nsurface_h_radii = 0.02\n";
    let out = nematic(dir.path(), Some(cfg), &["e0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    let line = column(&o.join("e0.csv"), "term_line")[0];
    let expect = std::f64::consts::FRAC_PI_2 * 1.5 * 1.5 * 0.8 * 2.0 * std::f64::consts::PI;
    assert!((line - expect).abs() < 2e-3 * expect, "{line} vs {expect}");
    let base = column(&o.join("e0.csv"), "term_surface_base")[0];
    assert!((base - 2.0 * 1.5 * 1.5f64.sqrt() * 2.0 * std::f64::consts::PI).abs() < 0.01 * base);
}

#[test]
fn recover_plate_and_budget_limit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[regime]
beta = 1.0
etas = [0.3, 0.2]

[particle]
shape = "none"

[grid]
half_width_radii = [0.3, 0.3, 1.35]
periodic = [true, true, false]

[recovery]
geometry = "plate"
h_over_eta = 0.25
"#;
    let out = nematic(dir.path(), Some(cfg), &["recover"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ratio = column(&dir.path().join("out").join("limsup.csv"), "ratio");
    assert_eq!(ratio.len(), 2);
    assert!(ratio.iter().all(|r| *r > 0.8 && *r < 2.0), "{ratio:?}");

    let tight = format!("{cfg}max_voxels = 1000\n");
    let out = nematic(dir.path(), Some(&tight), &["recover"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("smallest feasible eta"));
}
