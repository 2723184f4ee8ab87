//! Dispatch from a configuration to the library and its output tables.

use std::path::Path;

use cellflow::cellpde::{
    corner_glue_slopes, richardson_deff, solve_chi, solve_exit_probability, solve_resolvent, sup_in_layer, CellField,
    PeriodicGrid, Side, SupersolutionCandidate, verify_supersolution,
};
use cellflow::crossing::probe_exit;
use cellflow::ensemble::{par_map_paths, run_ensemble, EnsembleSpec, PathRecord};
use cellflow::sde::NoiseStream;
use cellflow::stats::{
    batch_mean_se, check_cdf_bounds, crossing_cdf, fit_lower_scale, fit_upper_scale, mean_hit_count, variance_curve,
    EmpiricalCdf,
};
use cellflow::{FlowParams, Point};
use serde::{Deserialize, Serialize};

use crate::config::{CellPdeConfig, ExperimentConfig, ExperimentKind, PdeProblem};
use crate::error::{HarnessError, Result};
use crate::output::{resolve_dir, RunManifest, RunWriter};
use crate::selftest::run_selftest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub start: usize,
    pub x1_0: f64,
    pub x2_0: f64,
    pub time: f64,
    pub statistic: String,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitCountRow {
    pub start: usize,
    pub time: f64,
    pub mean_hits: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub start: usize,
    pub coord: u8,
    pub n: usize,
    pub time: f64,
    pub value: f64,
    pub band: f64,
    pub paths: usize,
}

/// Bound constants fitted on even batches and checked on odd batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFitRow {
    pub start: usize,
    pub n: usize,
    pub c_upper: f64,
    pub c_lower: f64,
    pub upper_violation: f64,
    pub lower_violation: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub start: usize,
    pub path: u64,
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummaryRow {
    pub start: usize,
    pub x1_0: f64,
    pub x2_0: f64,
    pub trials: usize,
    pub mean_time: f64,
    pub stderr_time: f64,
    /// Share of exits that land inside the boundary layer.
    pub in_layer_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeffTableRow {
    pub peclet: f64,
    pub resolution: usize,
    pub d11: f64,
    pub d22: f64,
    pub d12: f64,
    pub d11_flux: f64,
    pub residual_max: f64,
    /// `D_11` at twice the resolution, when requested.
    pub d11_refined: Option<f64>,
    pub richardson_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeExitRow {
    pub peclet: f64,
    pub level: f64,
    pub start_side: String,
    pub exit_side: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRow {
    pub peclet: f64,
    pub max_sum_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventRow {
    pub peclet: f64,
    pub lambda: f64,
    pub delta: f64,
    pub sup_layer: f64,
    pub max: f64,
    /// `sup_layer * sqrt(lambda) / (delta |ln delta|)`.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub field: String,
    pub i: usize,
    pub j: usize,
    pub x1: f64,
    pub x2: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub peclet: f64,
    pub name: String,
    pub parameters: String,
    pub min_residual: f64,
    pub required: f64,
    pub samples: usize,
    pub argmin_x1: f64,
    pub argmin_x2: f64,
    pub t_at_min: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlueRow {
    pub peclet: f64,
    pub inner_slope: f64,
    pub outer_slope: f64,
    pub holds: bool,
}

/// Run `cfg` and write its outputs under `root`.
pub fn run(cfg: &ExperimentConfig, root: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let dir = resolve_dir(root, &cfg.output_dir);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        let mut w = RunWriter::create(&dir, cfg)?;
        match cfg.kind {
            ExperimentKind::VarianceCurve => variance_experiment(cfg, &mut w)?,
            ExperimentKind::CrossingCdf => crossing_experiment(cfg, &mut w)?,
            ExperimentKind::ExitProbe => probe_experiment(cfg, &mut w)?,
            ExperimentKind::CellPde => pde_experiment(&cfg.flow, cfg.cell_pde.as_ref().expect("validated"), &mut w)?,
            ExperimentKind::SupersolutionAudit => audit_experiment(cfg, &mut w)?,
            ExperimentKind::BoundsSelftest => w.write_csv("selftest.csv", &run_selftest())?,
        }
        w.finish()
    })
}

/// Ensembles for every start point; start `k` uses streams
/// `k * paths .. (k + 1) * paths`.
pub fn ensembles(cfg: &ExperimentConfig, track_crossings: bool) -> Result<Vec<(Point, Vec<PathRecord>)>> {
    let times = cfg.times.as_ref().expect("validated").grid()?.into_vec();
    let starts = cfg.start.as_ref().expect("validated").resolve(&cfg.flow)?;
    starts
        .into_iter()
        .enumerate()
        .map(|(k, x0)| {
            let spec = EnsembleSpec {
                params: cfg.flow,
                policy: cfg.step,
                seed: cfg.seed,
                paths: cfg.paths,
                path_offset: (k * cfg.paths) as u64,
                x0,
                times: times.clone(),
                track_crossings,
            };
            Ok((x0, run_ensemble(&spec)?))
        })
        .collect()
}

fn variance_experiment(cfg: &ExperimentConfig, w: &mut RunWriter) -> Result<()> {
    let times = cfg.times.as_ref().expect("validated").grid()?.into_vec();
    let mut rows = Vec::new();
    let mut hits = Vec::new();
    for (k, (x0, recs)) in ensembles(cfg, cfg.track_crossings)?.into_iter().enumerate() {
        for r in variance_curve(&recs, &times)?.rows() {
            rows.push(VarianceRow {
                start: k,
                x1_0: x0.x1,
                x2_0: x0.x2,
                time: r.time,
                statistic: r.statistic,
                value: r.value,
                stderr: r.stderr,
            });
        }
        if cfg.track_crossings {
            for (t, m) in times.iter().zip(mean_hit_count(&recs, &times)) {
                hits.push(HitCountRow {
                    start: k,
                    time: *t,
                    mean_hits: m.mean,
                    stderr: m.se,
                });
            }
        }
    }
    w.write_csv("variance.csv", &rows)?;
    if cfg.track_crossings {
        w.write_csv("hits.csv", &hits)?;
    }
    Ok(())
}

/// Fit bound constants to the ECDF of paths in even batches and check them
/// against the ECDF of the odd batches within its DKW band.
pub fn split_fit(recs: &[PathRecord], coord: u8, n: usize, times: &[f64], alpha: f64, delta: f64) -> Result<(SplitFitRow, EmpiricalCdf)> {
    let half = |parity: usize| -> Vec<_> {
        recs.iter()
            .filter(|r| r.batch() % 2 == parity)
            .filter_map(|r| r.log.as_ref())
            .collect()
    };
    let (train, valid) = (half(0), half(1));
    let ct = crossing_cdf(&train, coord, n, times, alpha)?;
    let cv = crossing_cdf(&valid, coord, n, times, alpha)?;
    let c_upper = fit_upper_scale(&[&ct], delta, 0.0);
    let c_lower = fit_lower_scale(&[&ct], delta, 0.0);
    let check = check_cdf_bounds(&cv, delta, c_upper, c_lower);
    Ok((
        SplitFitRow {
            start: 0,
            n,
            c_upper,
            c_lower,
            upper_violation: check.upper_violation,
            lower_violation: check.lower_violation,
            holds: check.holds(),
        },
        cv,
    ))
}

fn crossing_experiment(cfg: &ExperimentConfig, w: &mut RunWriter) -> Result<()> {
    let cc = cfg.crossing_cdf.as_ref().expect("validated");
    let times = cfg.times.as_ref().expect("validated").grid()?.into_vec();
    let delta = cfg.flow.delta();
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for (k, (_, recs)) in ensembles(cfg, true)?.into_iter().enumerate() {
        let logs: Vec<_> = recs.iter().filter_map(|r| r.log.as_ref()).collect();
        for &n in &cc.indices {
            let cdf = crossing_cdf(&logs, cc.coord, n, &times, cc.alpha)?;
            for (t, v) in cdf.times.iter().zip(&cdf.values) {
                rows.push(CdfRow {
                    start: k,
                    coord: cc.coord,
                    n,
                    time: *t,
                    value: *v,
                    band: cdf.band,
                    paths: cdf.paths,
                });
            }
            let (mut fit, _) = split_fit(&recs, cc.coord, n, &times, cc.alpha, delta)?;
            fit.start = k;
            fits.push(fit);
        }
    }
    w.write_csv("crossing_cdf.csv", &rows)?;
    w.write_csv("bound_fits.csv", &fits)?;
    Ok(())
}

fn probe_experiment(cfg: &ExperimentConfig, w: &mut RunWriter) -> Result<()> {
    let pc = cfg.exit_probe.as_ref().expect("validated");
    let target = pc.target.target();
    let starts = cfg.start.as_ref().expect("validated").resolve(&cfg.flow)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (k, x0) in starts.into_iter().enumerate() {
        let base = (k * cfg.paths) as u64;
        let outcomes = par_map_paths(cfg.paths, |j| {
            let noise = NoiseStream::new(cfg.seed, base + j as u64);
            probe_exit(x0, target, &cfg.flow, &cfg.step, noise, pc.t_cap)
        });
        let outcomes = outcomes.into_iter().collect::<cellflow::Result<Vec<_>>>()?;
        let times: Vec<f64> = outcomes.iter().map(|o| o.t).collect();
        let batches: Vec<usize> = (0..cfg.paths).map(|j| ((base + j as u64) % 32) as usize).collect();
        let mt = batch_mean_se(&times, &batches);
        let in_layer = outcomes.iter().filter(|o| o.tag.in_layer()).count();
        summary.push(ProbeSummaryRow {
            start: k,
            x1_0: x0.x1,
            x2_0: x0.x2,
            trials: outcomes.len(),
            mean_time: mt.mean,
            stderr_time: mt.se,
            in_layer_fraction: in_layer as f64 / outcomes.len() as f64,
        });
        for (j, o) in outcomes.iter().enumerate() {
            rows.push(ProbeRow {
                start: k,
                path: base + j as u64,
                t: o.t,
                x1: o.pos.x1,
                x2: o.pos.x2,
                region: format!("{:?}", o.tag),
            });
        }
    }
    w.write_csv("probe_exits.csv", &rows)?;
    w.write_csv("probe_summary.csv", &summary)?;
    Ok(())
}

fn grid_for(flow: &FlowParams, c: &CellPdeConfig) -> Result<PeriodicGrid> {
    Ok(match c.resolution {
        Some(n) => PeriodicGrid::new(n)?,
        None => PeriodicGrid::for_peclet(flow.peclet),
    })
}

fn field_rows(f: &CellField) -> Vec<FieldRow> {
    f.records()
        .into_iter()
        .map(|r| FieldRow {
            field: f.name.clone(),
            i: r.i,
            j: r.j,
            x1: r.x1,
            x2: r.x2,
            value: r.value,
        })
        .collect()
}

/// Edge-exit probabilities from the mid-points of the four sides pushed
/// in to `{h = level}`, and the worst deviation of the four fields from
/// summing to one.
pub fn edge_exit_table(peclet: f64, level: f64, grid: &PeriodicGrid, opts: &cellflow::cellpde::PdeOptions) -> Result<(Vec<EdgeExitRow>, f64, Vec<CellField>)> {
    let fields: Vec<CellField> = Side::ALL
        .iter()
        .map(|s| solve_exit_probability(peclet, *s, grid, opts))
        .collect::<cellflow::Result<_>>()?;
    let mut rows = Vec::new();
    for start in Side::ALL {
        let p = start.mid_level_point(level);
        for (exit, f) in Side::ALL.iter().zip(&fields) {
            rows.push(EdgeExitRow {
                peclet,
                level,
                start_side: start.as_str().into(),
                exit_side: exit.as_str().into(),
                probability: f.interpolate(p),
            });
        }
    }
    let m = fields[0].values.len();
    let max_err = (0..m)
        .map(|k| (fields.iter().map(|f| f.values[k]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    Ok((rows, max_err, fields))
}

pub fn resolvent_row(peclet: f64, lambda: f64, delta: f64, f: &CellField) -> ResolventRow {
    let sup = sup_in_layer(f, delta);
    ResolventRow {
        peclet,
        lambda,
        delta,
        sup_layer: sup,
        max: f.max(),
        normalized: sup * lambda.sqrt() / (delta * delta.ln().abs()),
    }
}

pub fn pde_experiment(flow: &FlowParams, c: &CellPdeConfig, w: &mut RunWriter) -> Result<()> {
    let grid = grid_for(flow, c)?;
    let opts = c.options();
    let a = flow.peclet;
    match c.problem {
        PdeProblem::Chi => {
            let (sol, gap) = if c.richardson {
                let (fine, check) = richardson_deff(a, &grid, &opts)?;
                (fine, Some(check))
            } else {
                (solve_chi(a, &grid, &opts)?, None)
            };
            let row = sol.row();
            let table = DeffTableRow {
                peclet: a,
                resolution: sol.resolution,
                d11: row.d11,
                d22: row.d22,
                d12: row.d12,
                d11_flux: sol.d11_flux,
                residual_max: sol.residual_max,
                d11_refined: gap.map(|g| g.fine),
                richardson_gap: gap.map(|g| g.rel_diff),
            };
            w.write_csv("deff.csv", &[table])?;
            if c.write_fields {
                let mut rows = field_rows(&sol.chi1);
                rows.extend(field_rows(&sol.chi2));
                w.write_csv("fields.csv", &rows)?;
            }
        }
        PdeProblem::Exit => {
            flow.validate_layer()?;
            let (rows, err, fields) = edge_exit_table(a, flow.delta(), &grid, &opts)?;
            w.write_csv("edge_exit.csv", &rows)?;
            w.write_csv("partition.csv", &[PartitionRow { peclet: a, max_sum_error: err }])?;
            if c.write_fields {
                let rows: Vec<FieldRow> = fields.iter().flat_map(field_rows).collect();
                w.write_csv("fields.csv", &rows)?;
            }
        }
        PdeProblem::Resolvent => {
            flow.validate_layer()?;
            let delta = flow.delta();
            let mut rows = Vec::new();
            let mut all = Vec::new();
            for &lambda in &c.lambda {
                let f = solve_resolvent(a, lambda, &grid, &opts)?;
                rows.push(resolvent_row(a, lambda, delta, &f));
                if c.write_fields {
                    all.extend(field_rows(&f));
                }
            }
            w.write_csv("resolvent.csv", &rows)?;
            if c.write_fields {
                w.write_csv("fields.csv", &all)?;
            }
        }
    }
    Ok(())
}

/// Residual audit of every super-solution candidate at one Péclet number.
pub fn audit_rows(flow: &FlowParams, audit: &crate::config::AuditConfig) -> Result<(Vec<AuditRow>, GlueRow)> {
    let n = audit.samples;
    let candidates = [
        SupersolutionCandidate::corner(flow),
        SupersolutionCandidate::edge(flow, n),
        SupersolutionCandidate::exit(flow, n),
        SupersolutionCandidate::PsiPlus {
            c0: audit.c0,
            t_max: audit.t_max,
        },
        SupersolutionCandidate::resolvent(audit.lambda, flow, n),
    ];
    let mut rows = Vec::new();
    for c in &candidates {
        let r = verify_supersolution(c, flow, n)?;
        rows.push(AuditRow {
            peclet: flow.peclet,
            name: r.name,
            parameters: serde_json::to_string(c).expect("candidate serialises"),
            min_residual: r.min_residual,
            required: r.required,
            samples: r.samples,
            argmin_x1: r.argmin.x1,
            argmin_x2: r.argmin.x2,
            t_at_min: r.t_at_min,
            pass: r.pass,
        });
    }
    let (inner, outer) = corner_glue_slopes(flow.peclet);
    let glue = GlueRow {
        peclet: flow.peclet,
        inner_slope: inner,
        outer_slope: outer,
        holds: inner >= outer,
    };
    Ok((rows, glue))
}

fn audit_experiment(cfg: &ExperimentConfig, w: &mut RunWriter) -> Result<()> {
    let audit = cfg.audit.clone().unwrap_or_default();
    let (rows, glue) = audit_rows(&cfg.flow, &audit)?;
    w.write_csv("audit.csv", &rows)?;
    w.write_csv("glue.csv", &[glue])?;
    Ok(())
}
