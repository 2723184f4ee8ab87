use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cellflow::FlowParams;
use cellflow_harness::config::{AuditConfig, CellPdeConfig, ExperimentConfig, ExperimentKind, PdeProblem};
use cellflow_harness::error::{HarnessError, Result};
use cellflow_harness::experiments::run;
use cellflow_harness::figures::{figures, FiguresConfig};
use cellflow_harness::output::{output_root, resolve_dir, write_error_record};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "cellflow", version, about = "Diffusion in fast cellular flows")]
struct Cli {
    /// Output root; defaults to $CELLFLOW_OUT or ./cellflow-out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a TOML configuration.
    Run { config: PathBuf },
    /// Check the closed-form identities.
    Selftest,
    /// Variance curve, trajectories and snapshots.
    Figures {
        /// TOML overriding the default figure settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Solve one cell problem.
    Pde {
        #[arg(long = "A")]
        peclet: f64,
        #[arg(long)]
        problem: PdeProblem,
        #[arg(long, default_value_t = 1.0)]
        layer_const: f64,
        #[arg(long)]
        resolution: Option<usize>,
        /// Resolvent parameters, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [4.0, 16.0, 64.0, 256.0])]
        lambda: Vec<f64>,
        #[arg(long)]
        richardson: bool,
    },
    /// Residual audit of the super-solution candidates.
    AuditSupersolutions {
        #[arg(long = "A")]
        peclet: f64,
        #[arg(long, default_value_t = 1.0)]
        layer_const: f64,
    },
}

fn flow(peclet: f64, layer_const: f64) -> Result<FlowParams> {
    Ok(FlowParams::new(peclet, layer_const)?)
}

fn execute(cli: &Cli, root: &Path) -> Result<PathBuf> {
    let mut cfg = match &cli.command {
        Command::Run { config } => ExperimentConfig::load(config)?,
        Command::Selftest => ExperimentConfig::minimal(ExperimentKind::BoundsSelftest, flow(0.0, 1.0)?, "selftest"),
        Command::Figures { config } => {
            let fc = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
                    toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?
                }
                None => FiguresConfig::default(),
            };
            let dir = root.join("figures");
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cli.workers)
                .build()
                .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
            pool.install(|| figures(&fc, &dir))?;
            return Ok(dir);
        }
        Command::Pde {
            peclet,
            problem,
            layer_const,
            resolution,
            lambda,
            richardson,
        } => {
            let mut c = ExperimentConfig::minimal(
                ExperimentKind::CellPde,
                flow(*peclet, *layer_const)?,
                format!("pde-{}-A{peclet}", format!("{problem:?}").to_lowercase()),
            );
            c.cell_pde = Some(CellPdeConfig {
                problem: *problem,
                resolution: *resolution,
                grading: 0.8,
                upwind: false,
                krylov: false,
                lambda: lambda.clone(),
                richardson: *richardson,
                write_fields: false,
            });
            c
        }
        Command::AuditSupersolutions { peclet, layer_const } => {
            let mut c = ExperimentConfig::minimal(
                ExperimentKind::SupersolutionAudit,
                flow(*peclet, *layer_const)?,
                format!("audit-A{peclet}"),
            );
            c.audit = Some(AuditConfig::default());
            c
        }
    };
    cfg.workers = cli.workers;
    run(&cfg, root)?;
    Ok(resolve_dir(root, &cfg.output_dir))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let root = cli.out.clone().unwrap_or_else(output_root);
    match execute(&cli, &root) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = e.record();
            eprintln!("{}", serde_json::to_string(&record).expect("record serialises"));
            write_error_record(&root, &e);
            ExitCode::from(record.exit_code as u8)
        }
    }
}
