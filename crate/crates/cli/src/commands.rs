//! The four subcommands. Each reads everything from the config and writes
//! only into `paths.out_dir`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use groundfail_core::inference::run_inference;
use groundfail_core::metrics::{self, RocCurve};
use groundfail_core::model::dpm_log_density;
use groundfail_core::oracle::sample_event;
use groundfail_core::raster::{align_to_grid, build_dataset, normalize_dpm, rasterize_points};
use groundfail_core::{
    GridSpec, HazardKind, InventoryPoint, LocationRecord, MaskOptions, PosteriorState, Raster, WeightSet,
};
use serde::Serialize;

use crate::asc::{read_ascii_grid, write_ascii_grid};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::inventory::{read_inventory, write_inventory};

fn create_out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.paths.out_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable report");
    text.push('\n');
    write_text(path, &text)
}

fn read_aligned(path: &Path, grid: &GridSpec) -> Result<Raster> {
    let r = read_ascii_grid(path)?;
    align_to_grid(&r, grid).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn posterior_path(cfg: &RunConfig, kind: HazardKind) -> std::path::PathBuf {
    cfg.paths.out_dir.join(format!("posterior_{}.asc", kind.tag()))
}

#[derive(Debug, Serialize)]
struct EventMeta {
    seed: u64,
    grid: GridSpec,
    valid_cells: usize,
    positives: BTreeMap<&'static str, usize>,
    /// Cells where the exclusivity rejection loop hit its cap.
    capped_cells: Vec<usize>,
}

/// Samples an event over the configured priors with `weights` as the true
/// weights.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let prior_ls = read_ascii_grid(&cfg.paths.prior_ls)?;
    let grid = prior_ls.spec;
    let prior_lf = read_aligned(&cfg.paths.prior_lf, &grid)?;
    let footprint = cfg
        .paths
        .footprint
        .as_deref()
        .map(|p| read_aligned(p, &grid))
        .transpose()?;
    let w = cfg.weights_or_default();
    let event = sample_event(&prior_ls, &prior_lf, footprint.as_ref(), &w, &cfg.hyper, cfg.hyper.seed)?;

    let mut truth: BTreeMap<HazardKind, Vec<InventoryPoint>> =
        HazardKind::ALL.into_iter().map(|k| (k, Vec::new())).collect();
    for (i, s) in event.true_states.iter().enumerate() {
        let Some(s) = s else { continue };
        let (lon, lat) = grid.cell_center(grid.row_col(i).0, grid.row_col(i).1);
        for (kind, on) in [
            (HazardKind::Landslide, s.x_ls),
            (HazardKind::Liquefaction, s.x_lf),
            (HazardKind::BuildingDamage, s.x_bd == Some(true)),
        ] {
            if on {
                truth.get_mut(&kind).expect("all kinds present").push(InventoryPoint {
                    lon,
                    lat,
                    category: kind,
                });
            }
        }
    }

    let dir = create_out_dir(cfg)?;
    write_ascii_grid(&event.observations, &dir.join("dpm.asc"), cfg.output.decimals)?;
    for (kind, points) in &truth {
        write_inventory(&dir.join(format!("truth_{}.csv", kind.tag())), points)?;
    }
    write_json(&dir.join("true_weights.json"), &event.true_weights)?;
    write_json(
        &dir.join("event_meta.json"),
        &EventMeta {
            seed: event.seed,
            grid,
            valid_cells: event.true_states.iter().flatten().count(),
            positives: truth.iter().map(|(k, v)| (k.as_str(), v.len())).collect(),
            capped_cells: event.capped_cells,
        },
    )
}

#[derive(Debug, Serialize)]
struct RunReport {
    epochs: usize,
    converged: bool,
    valid_cells: usize,
    pruned_cells: usize,
    final_bound: Option<f64>,
    /// Expected log-density of the DPM under the fitted posteriors.
    dpm_log_likelihood: f64,
    truncated_density: bool,
    fitted_weights: WeightSet,
    /// Omitted in deterministic mode so that replays are byte-identical.
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_s: Option<f64>,
}

fn expected_dpm_log_likelihood(
    records: &[LocationRecord],
    qs: &[Option<PosteriorState>],
    w: &WeightSet,
    delta: f64,
    truncated: bool,
) -> Result<f64> {
    let mut total = 0.0;
    for (r, q) in records.iter().zip(qs) {
        let Some(q) = q else { continue };
        let bd: &[Option<bool>] = if q.q_bd.is_some() {
            &[Some(false), Some(true)]
        } else {
            &[None]
        };
        let p = |on: bool, v: f64| if on { v } else { 1.0 - v };
        for x_ls in [false, true] {
            for x_lf in [false, true] {
                for &x_bd in bd {
                    let weight = p(x_ls, q.q_ls)
                        * p(x_lf, q.q_lf)
                        * x_bd.map_or(1.0, |b| p(b, q.q_bd.expect("bd present")));
                    total += weight * dpm_log_density(r.y, x_ls, x_lf, x_bd, w, delta, truncated)?;
                }
            }
        }
    }
    Ok(total)
}

/// Fits posteriors on the DPM grid.
pub fn cmd_infer(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    let h = &cfg.hyper;
    let raw = read_ascii_grid(cfg.dpm_path()?)?;
    let dpm = normalize_dpm(&raw, h.delta, cfg.flags.assume_normalized)?;
    let grid = dpm.spec;
    let prior_ls = read_aligned(&cfg.paths.prior_ls, &grid)?;
    let prior_lf = read_aligned(&cfg.paths.prior_lf, &grid)?;
    let footprint = cfg
        .paths
        .footprint
        .as_deref()
        .map(|p| read_aligned(p, &grid))
        .transpose()?;
    let records = build_dataset(&dpm, &prior_ls, &prior_lf, footprint.as_ref(), h.delta)?;
    let mask = MaskOptions {
        prune: cfg.flags.prune,
        ..MaskOptions::new(h)
    };
    let out = run_inference(&records, h, cfg.weights_or_default(), &mask)?;
    let loglik = expected_dpm_log_likelihood(
        &records,
        &out.posteriors,
        &out.weights,
        h.delta,
        cfg.flags.truncated_density,
    )?;
    if !loglik.is_finite() {
        return Err(CliError::Numerical("non-finite DPM log-likelihood".into()));
    }

    let dir = create_out_dir(cfg)?;
    let rasters = out.rasters(&records, &grid);
    let kinds = [HazardKind::Landslide, HazardKind::Liquefaction, HazardKind::BuildingDamage];
    for (kind, r) in kinds.into_iter().zip(&rasters) {
        write_ascii_grid(r, &posterior_path(cfg, kind), cfg.output.decimals)?;
    }
    write_json(&dir.join("weights_fitted.json"), &out.weights)?;
    let mut hist = String::from("epoch,bound\n");
    for (i, b) in out.bound_history.iter().enumerate() {
        let _ = writeln!(hist, "{},{b}", i + 1);
    }
    write_text(&dir.join("bound_history.csv"), &hist)?;

    let wall = started.elapsed().as_secs_f64();
    if h.deterministic {
        eprintln!("infer: {} epochs in {wall:.3} s", out.epochs);
    }
    write_json(
        &dir.join("run_report.json"),
        &RunReport {
            epochs: out.epochs,
            converged: out.converged,
            valid_cells: records.iter().filter(|r| r.valid).count(),
            pruned_cells: out.pruned,
            final_bound: out.bound_history.last().copied(),
            dpm_log_likelihood: loglik,
            truncated_density: cfg.flags.truncated_density,
            fitted_weights: out.weights,
            wall_time_s: (!h.deterministic).then_some(wall),
        },
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelMetrics {
    pub cel: f64,
    pub auc: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HazardMetrics {
    pub cells: usize,
    pub positives: usize,
    pub points_outside: usize,
    /// Absent for building damage, which has no prior map.
    pub prior: Option<ModelMetrics>,
    pub posterior: ModelMetrics,
    pub cel_reduction_pct: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub hazards: BTreeMap<String, HazardMetrics>,
    pub skipped: Vec<String>,
}

/// Keeps only cells where `mask` has data.
fn masked(r: &Raster, mask: &Raster) -> Raster {
    let mut out = r.clone();
    for (i, v) in out.values.iter_mut().enumerate() {
        if mask.value(i).is_none() {
            *v = r.spec.nodata_value;
        }
    }
    out
}

fn score(raw: &Raster, truth: &Raster, tau: f64, n_thresholds: usize) -> Result<(ModelMetrics, RocCurve)> {
    let norm = metrics::normalize_scores(raw)?;
    if norm.constant {
        eprintln!("evaluate: constant score map, using 0.5 everywhere");
    }
    let s = &norm.raster;
    let c = metrics::confusion_at_threshold(s, truth, tau)?;
    let roc = metrics::roc_curve(s, truth, n_thresholds)?;
    Ok((
        ModelMetrics {
            cel: metrics::cross_entropy_loss(s, truth)?,
            auc: metrics::auc(&roc),
            tpr: c.tpr(),
            fpr: c.fpr(),
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
        },
        roc,
    ))
}

fn write_roc(path: &Path, roc: &RocCurve) -> Result<()> {
    let mut text = String::from("threshold,tpr,fpr\n");
    for p in &roc.points {
        let _ = writeln!(text, "{},{},{}", p.threshold, p.tpr, p.fpr);
    }
    write_text(path, &text)
}

/// Compares prior and posterior maps with the truth inventory and returns
/// the report it writes.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<MetricsReport> {
    let truth_paths = cfg
        .paths
        .truth_csv
        .as_ref()
        .ok_or_else(|| CliError::Config("missing field `paths.truth_csv`".into()))?;
    let mut points = Vec::new();
    for p in truth_paths.paths() {
        points.extend(read_inventory(p)?);
    }
    let post_ls = read_ascii_grid(&posterior_path(cfg, HazardKind::Landslide))?;
    let grid = post_ls.spec;
    let posteriors = [
        post_ls,
        read_aligned(&posterior_path(cfg, HazardKind::Liquefaction), &grid)?,
        read_aligned(&posterior_path(cfg, HazardKind::BuildingDamage), &grid)?,
    ];
    let priors = [
        Some(read_aligned(&cfg.paths.prior_ls, &grid)?),
        Some(read_aligned(&cfg.paths.prior_lf, &grid)?),
        None,
    ];

    let dir = create_out_dir(cfg)?;
    let tau = cfg.evaluate.threshold;
    let n = cfg.evaluate.roc_thresholds;
    let mut report = MetricsReport {
        threshold: tau,
        hazards: BTreeMap::new(),
        skipped: Vec::new(),
    };
    let kinds = [HazardKind::Landslide, HazardKind::Liquefaction, HazardKind::BuildingDamage];
    for ((kind, post), prior) in kinds.into_iter().zip(&posteriors).zip(&priors) {
        let name = kind.as_str();
        if !points.iter().any(|p| p.category == kind) {
            eprintln!("evaluate: no ground truth for {name}, skipped");
            report.skipped.push(name.to_string());
            continue;
        }
        let rasterized = rasterize_points(&points, &grid, kind);
        let prior = prior.as_ref().map(|p| masked(p, post));
        let post = match &prior {
            Some(p) => masked(post, p),
            None => post.clone(),
        };
        let truth = masked(&rasterized.raster, &post);
        let cells = truth.valid_count();
        let positives = truth.valid_values().filter(|&v| v > 0.5).count();
        if positives == 0 || positives == cells {
            eprintln!("evaluate: truth for {name} has a single class over evaluated cells, skipped");
            report.skipped.push(name.to_string());
            continue;
        }
        let (post_m, post_roc) = score(&post, &truth, tau, n)?;
        write_roc(&dir.join(format!("roc_{name}_posterior.csv")), &post_roc)?;
        let prior_m = match &prior {
            Some(p) => {
                let (m, roc) = score(p, &truth, tau, n)?;
                write_roc(&dir.join(format!("roc_{name}_prior.csv")), &roc)?;
                Some(m)
            }
            None => None,
        };
        let reduction = prior_m
            .as_ref()
            .map(|p| 100.0 * (p.cel - post_m.cel) / p.cel);
        report.hazards.insert(
            name.to_string(),
            HazardMetrics {
                cells,
                positives,
                points_outside: rasterized.outside,
                prior: prior_m,
                posterior: post_m,
                cel_reduction_pct: reduction,
            },
        );
    }
    write_json(&dir.join("metrics.json"), &report)?;
    Ok(report)
}

/// Linear interpolation between order statistics of sorted `v`.
fn quantile(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Plot-ready cell lists and a text summary of every posterior map.
pub fn cmd_export(cfg: &RunConfig) -> Result<()> {
    let kinds = [HazardKind::Landslide, HazardKind::Liquefaction, HazardKind::BuildingDamage];
    let rasters = kinds
        .iter()
        .map(|&k| read_ascii_grid(&posterior_path(cfg, k)))
        .collect::<Result<Vec<_>>>()?;
    let dir = create_out_dir(cfg)?;
    let mut summary = String::new();
    for (kind, r) in kinds.into_iter().zip(&rasters) {
        let name = kind.as_str();
        let mut csv = String::from("row,col,value\n");
        let mut vals = Vec::new();
        for (i, v) in r.values.iter().enumerate() {
            if r.is_nodata(*v) {
                continue;
            }
            let (row, col) = r.spec.row_col(i);
            let _ = writeln!(csv, "{row},{col},{v}");
            vals.push(*v);
        }
        write_text(&dir.join(format!("heatmap_{name}.csv")), &csv)?;

        let _ = writeln!(summary, "[{name}]");
        let _ = writeln!(summary, "cells {}", vals.len());
        if vals.is_empty() {
            summary.push('\n');
            continue;
        }
        vals.sort_unstable_by(f64::total_cmp);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let _ = writeln!(summary, "min {}", vals[0]);
        let _ = writeln!(summary, "max {}", vals[vals.len() - 1]);
        let _ = writeln!(summary, "mean {mean}");
        for p in [0.05f64, 0.25, 0.5, 0.75, 0.95] {
            let _ = writeln!(summary, "q{:02} {}", (p * 100.0).round() as u32, quantile(&vals, p));
        }
        summary.push('\n');
    }
    write_text(&dir.join("summary.txt"), &summary)
}
