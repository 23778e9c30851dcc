use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eit_ias::cli::{self, MeshKind};
use eit_ias::config::RunConfig;
use eit_ias::postproc::SsimVariant;
use eit_ias::{EitError, Result};
use serde::Serialize;

/// Hybrid sparsity-promoting IAS reconstruction for electrical impedance tomography.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Flat `key = value` configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log progress to stderr (RUST_LOG takes precedence).
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// One flag per configuration key.
#[derive(Args, Default)]
struct Overrides {
    /// Reconstruction mesh file, or `generate`.
    #[arg(long, global = true)]
    mesh: Option<String>,
    /// Target edge length of the generated reconstruction mesh
    #[arg(long, global = true)]
    mesh_h: Option<String>,
    /// Mesh size used to synthesize data; must be finer than --mesh-h.
    #[arg(long, global = true)]
    generation_h: Option<String>,
    /// Active electrodes: 32, 30, 28, 26, 24, 22 or 20.
    #[arg(long, global = true)]
    level: Option<String>,
    /// `two-inclusions` or `homogeneous`.
    #[arg(long, global = true)]
    phantom: Option<String>,
    /// Phase-1 focality.
    #[arg(long, global = true)]
    eta1: Option<String>,
    /// Phase-1 scale, divided per increment by its squared sensitivity
    #[arg(long, global = true)]
    vartheta_star: Option<String>,
    /// Phase-2 hyperprior exponent.
    #[arg(long, global = true)]
    r2: Option<String>,
    /// Phase-1 outer iterations
    #[arg(long, global = true)]
    k_max1: Option<String>,
    /// Phase-2 outer iterations
    #[arg(long, global = true)]
    k_max2: Option<String>,
    /// Stop a phase early once the relative change in θ falls below this
    #[arg(long, global = true)]
    tol: Option<String>,
    /// Gauss-Newton solves per outer iteration
    #[arg(long, global = true)]
    inner_linearizations: Option<String>,
    /// Noise standard deviation.
    #[arg(long, global = true)]
    omega: Option<String>,
    /// Background conductivity
    #[arg(long, global = true)]
    sigma0: Option<String>,
    /// Contact impedance of every electrode.
    #[arg(long, global = true)]
    z0: Option<String>,
    /// Injected current per electrode pair.
    #[arg(long, global = true)]
    amplitude: Option<String>,
    /// Raster size for segmentation and scoring.
    #[arg(long, global = true)]
    grid: Option<String>,
    /// Noise and bench seed
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Output directory.
    #[arg(long, short, global = true)]
    output: Option<String>,
    /// `auto`, `primal` or `adjoint`.
    #[arg(long, global = true)]
    route: Option<String>,
    /// `global` or `windowed`.
    #[arg(long, global = true)]
    ssim: Option<String>,
    /// Single phase with this exponent, e.g. `r=1` or `0.5`; `none` for the hybrid scheme.
    #[arg(long, global = true)]
    single_prior: Option<String>,
    /// `true` or `false`.
    #[arg(long, global = true)]
    reference_correction: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> [(&'static str, &Option<String>); 23] {
        [
            ("mesh", &self.mesh),
            ("mesh_h", &self.mesh_h),
            ("generation_h", &self.generation_h),
            ("level", &self.level),
            ("phantom", &self.phantom),
            ("eta1", &self.eta1),
            ("vartheta_star", &self.vartheta_star),
            ("r2", &self.r2),
            ("k_max1", &self.k_max1),
            ("k_max2", &self.k_max2),
            ("tol", &self.tol),
            ("inner_linearizations", &self.inner_linearizations),
            ("omega", &self.omega),
            ("sigma0", &self.sigma0),
            ("z0", &self.z0),
            ("amplitude", &self.amplitude),
            ("grid", &self.grid),
            ("seed", &self.seed),
            ("output", &self.output),
            ("route", &self.route),
            ("ssim", &self.ssim),
            ("single_prior", &self.single_prior),
            ("reference_correction", &self.reference_correction),
        ]
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the reconstruction (or generation) mesh.
    Mesh {
        /// Destination file.
        #[arg(long)]
        out: PathBuf,
        /// Write the finer data-generation mesh instead.
        #[arg(long)]
        generation: bool,
    },
    /// Synthesize a dataset and its truth segmentation.
    Simulate,
    /// Reconstruct, segment and score; simulates first when no dataset is given.
    Reconstruct {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Class-wise SSIM of two label maps (PGM).
    Score {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Time repeated reconstructions per electrode level.
    Bench {
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [32, 30, 28, 26, 24])]
        levels: Vec<usize>,
        /// Run repetitions concurrently; timings are then not meaningful.
        #[arg(long)]
        parallel: bool,
    },
    /// Mesh sizes and solver routes per level.
    Info,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| EitError::Validation(format!("cannot serialize output: {e}")))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for (key, value) in cli.overrides.pairs() {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    match cli.command {
        Command::Mesh { out, generation } => {
            let kind = if generation { MeshKind::Generation } else { MeshKind::Reconstruction };
            let mesh = cli::cmd_mesh(&cfg, kind, &out)?;
            eprintln!("{}: {} nodes, {} triangles", out.display(), mesh.nodes().len(), mesh.triangles().len());
        }
        Command::Simulate => {
            let ds = cli::cmd_simulate(&cfg)?;
            eprintln!(
                "{}: {} injections, {} measurements",
                cfg.output.join(cli::DATASET_FILE).display(),
                ds.currents.len(),
                ds.data.len()
            );
        }
        Command::Reconstruct { dataset } => print_json(&cli::cmd_reconstruct(&cfg, dataset.as_deref())?)?,
        Command::Score { result, truth } => {
            let variant: SsimVariant = cfg.ssim;
            print_json(&cli::cmd_score(&result, &truth, variant, cfg.level)?)?
        }
        Command::Bench { repetitions, levels, parallel } => {
            print_json(&cli::cmd_bench(&cfg, &levels, repetitions, parallel)?)?
        }
        Command::Info => print_json(&cli::cmd_info(&cfg)?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
