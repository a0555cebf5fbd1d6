use std::path::Path;
use std::process::{Command, Output};

use flatlab_core::fields::{fld1, Grid2, ScalarField, VectorField};
use flatlab_core::pipeline::leaf_count;
use serde_json::{json, Value};

fn flatlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flatlab")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit status")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = flatlab(dir, args);
    assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn small_config(surface: Value, domain: [f64; 4], n: usize) -> Value {
    json!({
        "name": "small",
        "surface": surface,
        "domain": domain,
        "n": n,
        "eps_ladder": {"eps0": 0.125, "count": 4, "ratio": 0.5},
        "working_eps": 0.0625,
        "alpha": 2.0 / 3.0,
        "battery": {"order": 8},
        "degree": {"deltas": [0.2, 0.1], "samples": 10},
        "ruling": {"rho": 0.06, "tol": 1e-4, "tol_w": 1e-5, "stride": 8, "seed": 1},
        "tolerances": {
            "isometry_defect": 1e-10, "metric_fit_residual": 0.15, "codazzi_sup": 1e-3,
            "gauss_pairing": 1e-6, "potential_l2": 1e-3, "hessian_gap_h2_factor": 10.0,
            "hessian_gap_eps2_factor": 5.0, "ma_pairing": 1e-6, "degree_max_fails": 0,
            "degree_min_valid": 10, "ruling_angle_deg": 1.0
        },
        "output": "bundle",
        "seed": 3
    })
}

#[test]
fn gen_writes_field_and_sidecar() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "--surface", "cylinder", "--param", "r=2", "--domain", "0,0,1,1", "--n", "33", "--out", "u.fld"]);
    let u = fld1::read(d.path().join("u.fld")).unwrap();
    let du = fld1::read(d.path().join("u.du.fld")).unwrap();
    assert_eq!((u.ncomp(), du.ncomp()), (3, 6));
    assert_eq!(u.grid().nx, 33);
    assert_eq!(read_json(d.path().join("u.fld"))["magic"], "FLD1");
    // u = (2 cos(x / 2), 2 sin(x / 2), y)
    let [x, y] = u.grid().point(32, 7);
    assert!((u.comp(1).at(32, 7) - 2.0 * (x / 2.0).sin()).abs() < 1e-15);
    assert_eq!(u.comp(2).at(32, 7), y);
}

#[test]
fn stages_chain_on_the_cylinder() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["gen", "--surface", "cylinder", "--n", "129", "--out", "u.fld"]);
    ok(p, &["sff", "--in", "u.fld", "--eps-ladder", "0.125,4,0.5", "--out", "forms"]);
    let rates = read_json(p.join("forms/rates.json"));
    assert!(rates["metric_deviation"]["c1"]["exponent"].as_f64().unwrap() > 1.0);
    assert_eq!(rates["forms"].as_array().unwrap().len(), 4);

    let csv = String::from_utf8(ok(p, &["residuals", "--in", "u.fld", "--eps-ladder", "0.125,4,0.5"]).stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "eps,metric_dev_C1,codazzi_sup,gauss_pairing_max_over_battery,gauss_identity_sup");
    assert_eq!(lines.count(), 4);

    ok(p, &["potential", "--in", "forms/A_1.fld", "--out", "v.fld", "--report", "pot.json"]);
    let pot = read_json(p.join("pot.json"));
    for key in ["hessian_gap", "curl_gap", "solver_residuals"] {
        assert!(pot.get(key).is_some(), "{key}");
    }

    let ma = String::from_utf8(ok(p, &["ma", "--in", "v.fld", "--battery", "default"]).stdout).unwrap();
    assert_eq!(ma.lines().next().unwrap(), "psi_id,pairing");
    assert_eq!(ma.lines().count(), 16);
    for line in ma.lines().skip(1) {
        let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(v.abs() < 1e-6);
    }

    ok(p, &["degree", "--in", "v.fld", "--delta", "0.1", "--samples", "20", "--out", "deg.json"]);
    let deg = read_json(p.join("deg.json"));
    assert_eq!(deg["gradient"]["fail"], 0);
    assert_eq!(deg["perturbed"][0]["pass"], 20);

    ok(p, &["ruling", "--in", "u.du.fld", "--rho", "0.06", "--tol", "1e-4", "--out", "ruling.json"]);
    let r = read_json(p.join("ruling.json"));
    assert_eq!(r["verdict"], "developable");
    assert_eq!(r["crossings"], 0);
    let raster = fld1::read(p.join(r["class_raster"].as_str().unwrap())).unwrap();
    assert_eq!(raster.ncomp(), 2);
    let seg = &r["segments"][0]["polyline"];
    assert_eq!(seg.as_array().unwrap().len(), 2);

    let cmp = String::from_utf8(ok(p, &["compare", "--u", "u.fld", "--v", "v.fld", "--rho", "0.06"]).stdout).unwrap();
    let cmp: Value = serde_json::from_str(&cmp).unwrap();
    assert_eq!(cmp["verdicts_agree"], true);
    assert!(cmp["max_angle_deg"].as_f64().unwrap() < 1.0);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&flatlab(p, &["degree", "--in", "missing.fld"])), 2);
    assert_eq!(code(&flatlab(p, &["sff", "--in", "missing.fld", "--eps-ladder", "0.125,2,0.5"])), 2);
    assert_eq!(code(&flatlab(p, &["run"])), 2);
    assert_eq!(code(&flatlab(p, &["gen", "--surface", "torus", "--n", "9", "--out", "t.fld"])), 2);

    std::fs::write(p.join("junk.fld"), r#"{"magic":"FLD2"}"#).unwrap();
    assert_eq!(code(&flatlab(p, &["potential", "--in", "junk.fld", "--out", "v.fld"])), 2);

    ok(p, &["gen", "--surface", "sphere_patch", "--domain", "-0.35,-0.35,0.35,0.35", "--n", "129", "--out", "s.fld"]);
    let o = flatlab(p, &["sff", "--in", "s.fld", "--eps-ladder", "0.1,4,0.5", "--out", "forms"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    let g = Grid2::from_bounds(0.0, 0.0, 1.0, 1.0, 17, 17).unwrap();
    fld1::write(p.join("zero.fld"), &VectorField::from_components(vec![ScalarField::zeros(g)]).unwrap()).unwrap();
    assert_eq!(code(&flatlab(p, &["degree", "--in", "zero.fld", "--delta", "0", "--samples", "5"])), 4);
    ok(p, &["degree", "--in", "zero.fld", "--delta", "0.1", "--samples", "5"]);
}

#[test]
fn run_and_report() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let cfg = small_config(json!({"kind": "cylinder", "r": 1.0}), [0.0, 0.0, 1.0, 1.0], 129);
    std::fs::write(p.join("cyl.json"), cfg.to_string()).unwrap();
    let o = ok(p, &["--threads", "1", "run", "--config", "cyl.json"]);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("metric_dev_C1") && table.contains("verdict: developable"));

    let summary = read_json(p.join("bundle/summary.json"));
    assert_eq!(summary["verdict"], "developable");
    let csv = std::fs::read_to_string(p.join("bundle/report.csv")).unwrap();
    assert_eq!(csv.lines().count() - 1, leaf_count(&summary));
    let metric = csv.lines().find(|l| l.starts_with("metric_dev_C1,")).unwrap();
    assert!(metric.ends_with(",0.33333333333333326,true"), "{metric}");

    ok(p, &["run", "--config", "cyl.json", "--out", "again"]);
    for name in summary["artifacts"].as_array().unwrap() {
        let name = name.as_str().unwrap();
        assert_eq!(std::fs::read(p.join("bundle").join(name)).unwrap(), std::fs::read(p.join("again").join(name)).unwrap(), "{name}");
    }

    ok(p, &["report", "--in", "bundle", "--out", "copy.csv"]);
    assert_eq!(std::fs::read_to_string(p.join("copy.csv")).unwrap(), csv);

    std::fs::create_dir(p.join("empty")).unwrap();
    std::fs::write(p.join("empty/summary.json"), "{}").unwrap();
    ok(p, &["report", "--in", "empty"]);
    assert_eq!(
        std::fs::read_to_string(p.join("empty/report.csv")).unwrap(),
        "quantity,eps,value,fitted_exponent,required_exponent,pass\n"
    );
    assert_eq!(code(&flatlab(p, &["report", "--in", "nowhere"])), 2);
}

#[test]
fn failed_gate_exits_one() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(json!({"kind": "sphere_patch", "radius": 1.0}), [-0.35, -0.35, 0.35, 0.35], 65);
    std::fs::write(d.path().join("sphere.json"), cfg.to_string()).unwrap();
    let o = flatlab(d.path(), &["run", "--config", "sphere.json"]);
    assert_eq!(code(&o), 1);
    let s = read_json(d.path().join("bundle/summary.json"));
    assert_eq!(s["stopped_after"], "gen");
    assert_eq!(s["gates"][0]["pass"], false);
}

#[test]
fn config_supplies_defaults() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let cfg = small_config(json!({"kind": "cylinder", "r": 1.0}), [0.0, 0.0, 1.0, 1.0], 65);
    std::fs::write(p.join("c.json"), cfg.to_string()).unwrap();
    ok(p, &["--config", "c.json", "gen", "--out", "u.fld"]);
    assert_eq!(fld1::read(p.join("u.fld")).unwrap().grid().nx, 65);
    assert_eq!(code(&flatlab(p, &["residuals", "--in", "u.fld"])), 2);
}
