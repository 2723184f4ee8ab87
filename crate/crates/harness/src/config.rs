//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use cellflow::cellpde::Advection;
use cellflow::crossing::ProbeTarget;
use cellflow::linalg::SolverMethod;
use cellflow::starts::NamedMesh;
use cellflow::stats::TimeGrid;
use cellflow::{FlowParams, Point, StepPolicy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    VarianceCurve,
    CrossingCdf,
    ExitProbe,
    CellPde,
    SupersolutionAudit,
    BoundsSelftest,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::VarianceCurve => "variance_curve",
            Self::CrossingCdf => "crossing_cdf",
            Self::ExitProbe => "exit_probe",
            Self::CellPde => "cell_pde",
            Self::SupersolutionAudit => "supersolution_audit",
            Self::BoundsSelftest => "bounds_selftest",
        }
    }
}

/// Sample times: an explicit list, or `count` points spaced linearly or
/// logarithmically on `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimesConfig {
    #[serde(default)]
    pub list: Option<Vec<f64>>,
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub end: Option<f64>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub log: bool,
}

impl TimesConfig {
    pub fn list(times: Vec<f64>) -> Self {
        Self {
            list: Some(times),
            start: None,
            end: None,
            count: None,
            log: false,
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        let g = match (&self.list, self.start, self.end, self.count) {
            (Some(l), None, None, None) => TimeGrid::new(l.clone()),
            (None, Some(a), Some(b), Some(n)) if self.log => TimeGrid::logspace(a, b, n),
            (None, Some(a), Some(b), Some(n)) => TimeGrid::linspace(a, b, n),
            _ => {
                return Err(HarnessError::Config(
                    "[times] needs either `list` or all of `start`, `end`, `count`".into(),
                ))
            }
        };
        Ok(g?)
    }
}

/// Start points: an explicit list of `[x1, x2]` pairs or a named mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartConfig {
    #[serde(default)]
    pub points: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub mesh: Option<String>,
}

impl StartConfig {
    pub fn single(p: Point) -> Self {
        Self {
            points: Some(vec![[p.x1, p.x2]]),
            mesh: None,
        }
    }

    pub fn resolve(&self, params: &FlowParams) -> Result<Vec<Point>> {
        match (&self.points, &self.mesh) {
            (Some(p), None) if !p.is_empty() => Ok(p.iter().map(|q| Point::new(q[0], q[1])).collect()),
            (None, Some(name)) => Ok(NamedMesh::parse(name)?.points(params)?),
            _ => Err(HarnessError::Config(
                "[start] needs exactly one of a nonempty `points` list or `mesh`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingCdfConfig {
    pub coord: u8,
    pub indices: Vec<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitProbeConfig {
    pub target: ProbeTargetName,
    pub t_cap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTargetName {
    ExitEdgeRegion,
    ExitFattenedCorner,
    HitDifferentCorner,
    HitSeparatrix,
    ExitLayer,
}

impl ProbeTargetName {
    pub fn target(self) -> ProbeTarget {
        match self {
            Self::ExitEdgeRegion => ProbeTarget::ExitEdgeRegion,
            Self::ExitFattenedCorner => ProbeTarget::ExitFattenedCorner,
            Self::HitDifferentCorner => ProbeTarget::HitDifferentCorner,
            Self::HitSeparatrix => ProbeTarget::HitSeparatrix,
            Self::ExitLayer => ProbeTarget::ExitLayer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeProblem {
    Chi,
    Exit,
    Resolvent,
}

impl std::str::FromStr for PdeProblem {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chi" => Ok(Self::Chi),
            "exit" => Ok(Self::Exit),
            "resolvent" => Ok(Self::Resolvent),
            other => Err(HarnessError::Config(format!("unknown PDE problem {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellPdeConfig {
    pub problem: PdeProblem,
    /// Grid points per period; default from the Péclet number.
    #[serde(default)]
    pub resolution: Option<usize>,
    #[serde(default = "default_grading")]
    pub grading: f64,
    #[serde(default)]
    pub upwind: bool,
    #[serde(default)]
    pub krylov: bool,
    /// Resolvent parameters.
    #[serde(default)]
    pub lambda: Vec<f64>,
    /// Also solve at twice the resolution and report the gap.
    #[serde(default)]
    pub richardson: bool,
    /// Write the solution fields node by node.
    #[serde(default)]
    pub write_fields: bool,
}

fn default_grading() -> f64 {
    0.8
}

impl CellPdeConfig {
    pub fn options(&self) -> cellflow::cellpde::PdeOptions {
        let mut o = cellflow::cellpde::PdeOptions {
            grading: self.grading,
            ..Default::default()
        };
        if self.upwind {
            o.advection = Advection::Upwind;
        }
        if self.krylov {
            o.solver.method = SolverMethod::Bicgstab;
        }
        o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_audit_lambda")]
    pub lambda: f64,
}

fn default_samples() -> usize {
    400
}

fn default_c0() -> f64 {
    10.0
}

fn default_t_max() -> f64 {
    0.125
}

fn default_audit_lambda() -> f64 {
    64.0
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            c0: default_c0(),
            t_max: default_t_max(),
            lambda: default_audit_lambda(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub paths: usize,
    /// Output directory, relative to the output root unless absolute.
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core. Never changes results.
    #[serde(default)]
    pub workers: usize,
    /// Track separatrix hits and layer exits along each path.
    #[serde(default)]
    pub track_crossings: bool,
    pub flow: FlowParams,
    #[serde(default)]
    pub step: StepPolicy,
    #[serde(default)]
    pub times: Option<TimesConfig>,
    #[serde(default)]
    pub start: Option<StartConfig>,
    #[serde(default)]
    pub crossing_cdf: Option<CrossingCdfConfig>,
    #[serde(default)]
    pub exit_probe: Option<ExitProbeConfig>,
    #[serde(default)]
    pub cell_pde: Option<CellPdeConfig>,
    #[serde(default)]
    pub audit: Option<AuditConfig>,
}

fn default_paths() -> usize {
    1000
}

fn need<'a, T>(v: &'a Option<T>, section: &str, kind: ExperimentKind) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| HarnessError::Config(format!("{} needs a [{section}] section", kind.as_str())))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        self.step.validate()?;
        let kind = self.kind;
        let monte_carlo = matches!(
            kind,
            ExperimentKind::VarianceCurve | ExperimentKind::CrossingCdf | ExperimentKind::ExitProbe
        );
        if monte_carlo && self.paths == 0 {
            return Err(HarnessError::Config("path count must be >= 1".into()));
        }
        match kind {
            ExperimentKind::VarianceCurve => {
                need(&self.times, "times", kind)?.grid()?;
                need(&self.start, "start", kind)?.resolve(&self.flow)?;
            }
            ExperimentKind::CrossingCdf => {
                need(&self.times, "times", kind)?.grid()?;
                need(&self.start, "start", kind)?.resolve(&self.flow)?;
                let c = need(&self.crossing_cdf, "crossing_cdf", kind)?;
                if !(c.coord == 1 || c.coord == 2) || c.indices.is_empty() || c.indices.contains(&0) {
                    return Err(HarnessError::Config(
                        "[crossing_cdf] needs coord 1 or 2 and crossing indices >= 1".into(),
                    ));
                }
                self.flow.validate_layer()?;
            }
            ExperimentKind::ExitProbe => {
                need(&self.start, "start", kind)?.resolve(&self.flow)?;
                let p = need(&self.exit_probe, "exit_probe", kind)?;
                if !(p.t_cap > 0.0 && p.t_cap.is_finite()) {
                    return Err(HarnessError::Config("[exit_probe] t_cap must be positive".into()));
                }
                self.flow.validate_layer()?;
            }
            ExperimentKind::CellPde => {
                let c = need(&self.cell_pde, "cell_pde", kind)?;
                if c.problem == PdeProblem::Resolvent && (c.lambda.is_empty() || c.lambda.iter().any(|l| !(*l > 0.0))) {
                    return Err(HarnessError::Config("resolvent needs positive `lambda` values".into()));
                }
                if !(0.0..1.0).contains(&c.grading) {
                    return Err(HarnessError::Config("grading must lie in [0, 1)".into()));
                }
            }
            ExperimentKind::SupersolutionAudit => self.flow.validate_layer()?,
            ExperimentKind::BoundsSelftest => {}
        }
        Ok(())
    }

    /// SHA-256 of the configuration with the fields that cannot change
    /// results (output location, worker count) cleared.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.workers = 0;
        let json = serde_json::to_string(&c).expect("configuration serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// A minimal configuration of the given kind.
    pub fn minimal(kind: ExperimentKind, flow: FlowParams, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            kind,
            seed: 0,
            paths: default_paths(),
            output_dir: output_dir.into(),
            workers: 0,
            track_crossings: false,
            flow,
            step: StepPolicy::default(),
            times: None,
            start: None,
            crossing_cdf: None,
            exit_probe: None,
            cell_pde: None,
            audit: None,
        }
    }
}
