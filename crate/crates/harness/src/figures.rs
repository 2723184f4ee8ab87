//! Variance curve, long trajectories and particle-cloud snapshots at one
//! Péclet number.

use std::path::Path;

use cellflow::ensemble::{par_map_paths, run_ensemble, EnsembleSpec};
use cellflow::flowfield::hamiltonian;
use cellflow::sde::{simulate_path, ParticleState, StepObserver, TrajectoryRecorder};
use cellflow::stats::{fit_regimes, loglog_slope, variance_curve, ScalingFit, TimeGrid};
use cellflow::{FlowParams, NoiseStream, Point, StepPolicy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};
use crate::output::{RunManifest, RunWriter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiguresConfig {
    pub seed: u64,
    pub flow: FlowParams,
    #[serde(default)]
    pub step: StepPolicy,
    pub variance_paths: usize,
    pub variance_end: f64,
    pub variance_points: usize,
    /// Boundary between the early and late fit windows.
    pub regime_split: f64,
    pub slope_window: [f64; 2],
    pub trajectories: usize,
    pub trajectory_end: f64,
    /// Record every `trajectory_stride`-th step.
    pub trajectory_stride: usize,
    pub snapshot_paths: usize,
    pub snapshot_times: Vec<f64>,
}

impl Default for FiguresConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            flow: FlowParams::new(1000.0, 1.0).expect("valid defaults"),
            step: StepPolicy::default(),
            variance_paths: 10_000,
            variance_end: 0.04,
            variance_points: 40,
            regime_split: 0.015,
            slope_window: [0.002, 0.015],
            trajectories: 3,
            trajectory_end: 2.0,
            trajectory_stride: 20,
            snapshot_paths: 10_000,
            snapshot_times: vec![0.004, 0.012, 0.040],
        }
    }
}

impl FiguresConfig {
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub fit: String,
    pub t_lo: f64,
    pub t_hi: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

impl FitRow {
    fn new(name: &str, f: &ScalingFit) -> Self {
        Self {
            fit: name.into(),
            t_lo: f.t_lo,
            t_hi: f.t_hi,
            slope: f.fit.slope,
            intercept: f.fit.intercept,
            r2: f.fit.r2,
            points: f.fit.points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub trajectory: usize,
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub trajectory: usize,
    /// Share of the simulated time spent with `|h| > delta`.
    pub interior_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub time: f64,
    pub path: usize,
    pub x1: f64,
    pub x2: f64,
    pub in_layer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSummary {
    pub time: f64,
    pub paths: usize,
    pub layer_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiguresReport {
    pub fits: Vec<FitRow>,
    pub trajectories: Vec<TrajectorySummary>,
    pub snapshots: Vec<SnapshotSummary>,
    pub manifest: RunManifest,
}

/// Accumulates time spent outside the boundary layer.
struct InteriorClock {
    delta: f64,
    interior: f64,
    total: f64,
}

impl StepObserver for InteriorClock {
    fn observe(&mut self, prev: &ParticleState, next: &ParticleState) {
        let dt = next.t - prev.t;
        self.total += dt;
        if hamiltonian(next.pos).abs() > self.delta {
            self.interior += dt;
        }
    }
}

fn variance_figure(cfg: &FiguresConfig, w: &mut RunWriter) -> Result<Vec<FitRow>> {
    let times = TimeGrid::linspace(cfg.variance_end / cfg.variance_points as f64, cfg.variance_end, cfg.variance_points)?
        .into_vec();
    let spec = EnsembleSpec {
        params: cfg.flow,
        policy: cfg.step,
        seed: cfg.seed,
        paths: cfg.variance_paths,
        path_offset: 0,
        x0: Point::new(0.0, 0.0),
        times: times.clone(),
        track_crossings: false,
    };
    let curve = variance_curve(&run_ensemble(&spec)?, &times)?;
    w.write_csv("variance.csv", &curve.rows())?;
    let msd = curve.msd();
    let (early, late) = fit_regimes(&times, &msd, cfg.regime_split, cfg.variance_end)?;
    let slope = loglog_slope(&times, &msd, cfg.slope_window[0], cfg.slope_window[1])?;
    let fits = vec![
        FitRow::new("early_squared", &early),
        FitRow::new("late_linear", &late),
        FitRow::new("loglog_slope", &slope),
    ];
    w.write_csv("variance_fits.csv", &fits)?;
    Ok(fits)
}

fn trajectory_figure(cfg: &FiguresConfig, w: &mut RunWriter) -> Result<Vec<TrajectorySummary>> {
    let delta = cfg.flow.delta();
    let runs = par_map_paths(cfg.trajectories, |k| {
        // streams past the ensembles so trajectories never share noise with them
        let noise = NoiseStream::new(cfg.seed, (cfg.variance_paths + cfg.snapshot_paths + k) as u64);
        let mut rec = TrajectoryRecorder::with_stride(cfg.trajectory_stride);
        let mut clock = InteriorClock {
            delta,
            interior: 0.0,
            total: 0.0,
        };
        simulate_path(
            Point::new(0.0, 0.0),
            cfg.trajectory_end,
            &cfg.step,
            noise,
            &cfg.flow,
            &mut [&mut rec, &mut clock],
        );
        (rec.states, clock.interior / clock.total)
    });
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (k, (states, frac)) in runs.into_iter().enumerate() {
        rows.extend(states.iter().map(|s| TrajectoryRow {
            trajectory: k,
            t: s.t,
            x1: s.pos.x1,
            x2: s.pos.x2,
            h: hamiltonian(s.pos),
        }));
        summary.push(TrajectorySummary {
            trajectory: k,
            interior_fraction: frac,
        });
    }
    w.write_csv("trajectories.csv", &rows)?;
    w.write_csv("trajectory_summary.csv", &summary)?;
    Ok(summary)
}

fn snapshot_figure(cfg: &FiguresConfig, w: &mut RunWriter) -> Result<Vec<SnapshotSummary>> {
    let times = TimeGrid::new(cfg.snapshot_times.clone())?.into_vec();
    let spec = EnsembleSpec {
        params: cfg.flow,
        policy: cfg.step,
        seed: cfg.seed,
        paths: cfg.snapshot_paths,
        path_offset: cfg.variance_paths as u64,
        x0: Point::new(0.0, 0.0),
        times: times.clone(),
        track_crossings: false,
    };
    let recs = run_ensemble(&spec)?;
    let delta = cfg.flow.delta();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let mut inside = 0;
        for (j, r) in recs.iter().enumerate() {
            let p = r.samples[k];
            let in_layer = hamiltonian(p).abs() < delta;
            inside += usize::from(in_layer);
            rows.push(SnapshotRow {
                time: t,
                path: j,
                x1: p.x1,
                x2: p.x2,
                in_layer,
            });
        }
        summary.push(SnapshotSummary {
            time: t,
            paths: recs.len(),
            layer_fraction: inside as f64 / recs.len() as f64,
        });
    }
    w.write_csv("snapshots.csv", &rows)?;
    w.write_csv("snapshot_summary.csv", &summary)?;
    Ok(summary)
}

/// Produce all figure tables in `dir`.
pub fn figures(cfg: &FiguresConfig, dir: &Path) -> Result<FiguresReport> {
    cfg.flow.validate_layer()?;
    cfg.step.validate()?;
    if cfg.variance_paths < 2 || cfg.snapshot_paths == 0 || cfg.trajectories == 0 {
        return Err(HarnessError::Config("figures need at least 2 variance paths, 1 snapshot path and 1 trajectory".into()));
    }
    let text = toml::to_string(cfg).expect("configuration serialises");
    let mut w = RunWriter::create_with(dir, "figures", cfg.hash(), &text)?;
    let fits = variance_figure(cfg, &mut w)?;
    let trajectories = trajectory_figure(cfg, &mut w)?;
    let snapshots = snapshot_figure(cfg, &mut w)?;
    Ok(FiguresReport {
        fits,
        trajectories,
        snapshots,
        manifest: w.finish()?,
    })
}
