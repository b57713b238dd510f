use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use groundfail_core::{GridSpec, Raster};
use groundfail_svi::asc::write_ascii_grid;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groundfail-svi"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_grid(dir: &Path, name: &str, ncols: usize, nrows: usize, values: Vec<f64>) {
    let spec = GridSpec::new(ncols, nrows, 0.0, 0.0, 10.0, -9999.0).unwrap();
    write_ascii_grid(&Raster::new(spec, values).unwrap(), &dir.join(name), 10).unwrap();
}

/// 6x6 priors with landslide on the left half and liquefaction on the right.
fn write_priors(dir: &Path) {
    let ls = (0..36).map(|i| if i % 6 < 3 { 0.8 } else { 0.05 }).collect();
    let lf = (0..36).map(|i| if i % 6 < 3 { 0.05 } else { 0.8 }).collect();
    write_grid(dir, "prior_ls.asc", 6, 6, ls);
    write_grid(dir, "prior_lf.asc", 6, 6, lf);
}

const SIMULATE: &str = r#"{"paths": {"prior_ls": "prior_ls.asc", "prior_lf": "prior_lf.asc", "out_dir": "sim"},
    "hyper": {"seed": 3}}"#;

#[test]
fn invalid_json_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("c.json"), "{ not json").unwrap();
    let o = run(d.path(), &["infer", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_key_is_named() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("c.json"), r#"{"paths": {"prior_ls": "a.asc", "out_dir": "o"}}"#).unwrap();
    let o = run(d.path(), &["infer", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("prior_lf"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("c.json"),
        r#"{"paths": {"prior_ls": "a", "prior_lf": "b", "out_dir": "o"}, "hyper": {"sigma": 0.1}}"#,
    )
    .unwrap();
    let o = run(d.path(), &["simulate", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigma"), "{}", stderr(&o));
}

#[test]
fn missing_files_are_io_errors() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["infer", "--config", "absent.json"]);
    assert_eq!(o.status.code(), Some(3));
    fs::write(d.path().join("c.json"), SIMULATE).unwrap();
    let o = run(d.path(), &["simulate", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("prior_ls.asc"), "{}", stderr(&o));
}

#[test]
fn malformed_grid_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    write_priors(d.path());
    fs::write(d.path().join("prior_ls.asc"), "ncols 2\nnrows 1\n").unwrap();
    fs::write(d.path().join("c.json"), SIMULATE).unwrap();
    let o = run(d.path(), &["simulate", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    write_priors(d.path());
    fs::write(d.path().join("c.json"), SIMULATE).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_groundfail-svi"))
        .current_dir(d.path())
        .args(["simulate", "--config", "c.json"])
        .env("GFSVI_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn all_nodata_dpm_refuses_to_infer() {
    let d = tempfile::tempdir().unwrap();
    write_priors(d.path());
    write_grid(d.path(), "dpm.asc", 6, 6, vec![-9999.0; 36]);
    fs::write(
        d.path().join("c.json"),
        r#"{"paths": {"dpm": "dpm.asc", "prior_ls": "prior_ls.asc", "prior_lf": "prior_lf.asc", "out_dir": "fit"}}"#,
    )
    .unwrap();
    let o = run(d.path(), &["infer", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn simulate_without_footprint_has_no_damage() {
    let d = tempfile::tempdir().unwrap();
    write_priors(d.path());
    fs::write(d.path().join("c.json"), SIMULATE).unwrap();
    let o = run(d.path(), &["simulate", "--config", "c.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bd = fs::read_to_string(d.path().join("sim/truth_bd.csv")).unwrap();
    assert_eq!(bd.trim_end(), "lon,lat,category");
    for f in ["dpm.asc", "truth_ls.csv", "truth_lf.csv", "true_weights.json", "event_meta.json"] {
        assert!(d.path().join("sim").join(f).is_file(), "{f}");
    }
}

#[test]
fn seed_flag_changes_the_event() {
    let d = tempfile::tempdir().unwrap();
    write_priors(d.path());
    fs::write(d.path().join("c.json"), SIMULATE).unwrap();
    assert!(run(d.path(), &["simulate", "--config", "c.json", "--out", "a"]).status.success());
    assert!(run(d.path(), &["simulate", "--config", "c.json", "--out", "b", "--seed", "4"]).status.success());
    assert!(run(d.path(), &["simulate", "--config", "c.json", "--out", "c", "--seed", "3"]).status.success());
    let read = |s: &str| fs::read(d.path().join(s).join("dpm.asc")).unwrap();
    assert_ne!(read("a"), read("b"));
    assert_eq!(read("a"), read("c"));
}

#[test]
fn identical_prior_and_posterior_give_no_reduction() {
    let d = tempfile::tempdir().unwrap();
    write_priors(d.path());
    fs::write(d.path().join("c.json"), SIMULATE).unwrap();
    assert!(run(d.path(), &["simulate", "--config", "c.json"]).status.success());
    fs::create_dir(d.path().join("fit")).unwrap();
    for (src, dst) in [("prior_ls", "ls"), ("prior_lf", "lf"), ("prior_ls", "bd")] {
        fs::copy(d.path().join(format!("{src}.asc")), d.path().join(format!("fit/posterior_{dst}.asc"))).unwrap();
    }
    // Both hazards get at least one positive and one negative cell.
    fs::write(
        d.path().join("truth.csv"),
        "lon,lat,category\n5,55,landslide\n55,55,landslide\n5,5,liquefaction\n55,5,liquefaction\n",
    )
    .unwrap();
    fs::write(
        d.path().join("e.json"),
        r#"{"paths": {"prior_ls": "prior_ls.asc", "prior_lf": "prior_lf.asc", "truth_csv": "truth.csv", "out_dir": "fit"}}"#,
    )
    .unwrap();
    let o = run(d.path(), &["evaluate", "--config", "e.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("building_damage"));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("fit/metrics.json")).unwrap()).unwrap();
    for h in ["landslide", "liquefaction"] {
        assert_eq!(m["hazards"][h]["cel_reduction_pct"].as_f64(), Some(0.0), "{h}");
        assert_eq!(m["hazards"][h]["prior"], m["hazards"][h]["posterior"], "{h}");
    }
    assert_eq!(m["skipped"], serde_json::json!(["building_damage"]));
    for f in ["roc_landslide_prior.csv", "roc_landslide_posterior.csv", "roc_liquefaction_posterior.csv"] {
        assert!(d.path().join("fit").join(f).is_file(), "{f}");
    }
}

#[test]
fn export_single_cell_and_nodata() {
    let d = tempfile::tempdir().unwrap();
    fs::create_dir(d.path().join("fit")).unwrap();
    let fit = d.path().join("fit");
    write_grid(&fit, "posterior_ls.asc", 1, 1, vec![0.25]);
    write_grid(&fit, "posterior_lf.asc", 2, 1, vec![-9999.0, 0.75]);
    write_grid(&fit, "posterior_bd.asc", 1, 1, vec![-9999.0]);
    fs::write(
        d.path().join("c.json"),
        r#"{"paths": {"prior_ls": "x", "prior_lf": "y", "out_dir": "fit"}}"#,
    )
    .unwrap();
    let o = run(d.path(), &["export", "--config", "c.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let read = |f: &str| fs::read_to_string(fit.join(f)).unwrap();
    assert_eq!(read("heatmap_landslide.csv"), "row,col,value\n0,0,0.25\n");
    assert_eq!(read("heatmap_liquefaction.csv"), "row,col,value\n0,1,0.75\n");
    assert_eq!(read("heatmap_building_damage.csv"), "row,col,value\n");
    let summary = read("summary.txt");
    for q in ["q05", "q25", "q50", "q75", "q95", "min", "max", "mean"] {
        assert!(summary.contains(&format!("{q} 0.25\n")), "{q}: {summary}");
    }
}

#[test]
fn export_without_posteriors_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("c.json"),
        r#"{"paths": {"prior_ls": "x", "prior_lf": "y", "out_dir": "fit"}}"#,
    )
    .unwrap();
    let o = run(d.path(), &["export", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn infer_writes_reports() {
    let d = tempfile::tempdir().unwrap();
    write_priors(d.path());
    fs::write(d.path().join("c.json"), SIMULATE).unwrap();
    assert!(run(d.path(), &["simulate", "--config", "c.json"]).status.success());
    fs::write(
        d.path().join("i.json"),
        r#"{"paths": {"dpm": "sim/dpm.asc", "prior_ls": "prior_ls.asc", "prior_lf": "prior_lf.asc", "out_dir": "fit"},
            "hyper": {"max_epochs": 5}}"#,
    )
    .unwrap();
    let o = run(d.path(), &["infer", "--config", "i.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit = d.path().join("fit");
    let history = fs::read_to_string(fit.join("bound_history.csv")).unwrap();
    assert!(history.starts_with("epoch,bound\n1,"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(fit.join("run_report.json")).unwrap()).unwrap();
    assert_eq!(report["epochs"], 5);
    assert_eq!(report["valid_cells"], 36);
    assert!(report.get("wall_time_s").is_none());
    // No footprint, so the damage posterior is all NODATA.
    let bd = fs::read_to_string(fit.join("posterior_bd.asc")).unwrap();
    assert_eq!(bd.lines().skip(6).flat_map(str::split_whitespace).filter(|t| *t != "-9999").count(), 0);
}
