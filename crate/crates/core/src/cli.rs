//! Commands behind the `eit-ias` binary. Each one is a plain function of a [`RunConfig`]
//! that writes ordinary files, so tests and other front ends can drive it directly.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use nalgebra::DVector;
use serde::Serialize;

use crate::cem::CemModel;
use crate::config::RunConfig;
use crate::error::{EitError, Result};
use crate::ias::{run_hybrid, run_single_prior, InverseProblem, IasReport, Route};
use crate::increments::count_significant;
use crate::mesh::{generate_disk_mesh, ElectrodeLayout, Mesh};
use crate::postproc::{
    interpolate_to_grid, score, segment, truth_labels, GridInterpolation, PixelImage, Segmentation,
    SegmentationScore, SsimVariant,
};
use crate::sim::{domain_radius, ktc_injection_schedule, synthesize, Acquisition, Phantom, SyntheticDataset, INJECTION_COUNTS};

/// Increments above this fraction of the largest one count as significant.
pub const SIGNIFICANCE: f64 = 0.01;

/// Published KTC23 scores on measured data for phantoms 1 to 3, by active electrode count.
/// Synthetic runs cannot reproduce them; they are printed for orientation only.
pub const PUBLISHED_SCORES: [(usize, [f64; 3]); 7] = [
    (32, [0.6915, 0.8978, 0.7628]),
    (30, [0.7031, 0.8987, 0.7908]),
    (28, [0.6981, 0.8939, 0.7912]),
    (26, [0.6308, 0.8774, 0.7651]),
    (24, [0.5582, 0.8987, 0.8093]),
    (22, [0.5781, 0.6978, 0.7206]),
    (20, [0.6361, 0.6341, 0.6317]),
];

pub const CONFIG_FILE: &str = "config.txt";
pub const DATASET_FILE: &str = "dataset.json";
pub const TRUTH_FILE: &str = "truth.pgm";

/// Files written by [`cmd_reconstruct`].
pub const RECONSTRUCTION_FILES: [&str; 8] = [
    CONFIG_FILE,
    "xi.txt",
    "diagnostics.csv",
    "conductivity.txt",
    "segmentation.pgm",
    TRUTH_FILE,
    "score.json",
    "summary.json",
];

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| EitError::io(path, e))
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| EitError::Validation(format!("cannot serialize report: {e}")))
}

fn prepare_output(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output).map_err(|e| EitError::io(&cfg.output, e))?;
    write(&cfg.output.join(CONFIG_FILE), &cfg.to_text())
}

pub fn reconstruction_mesh(cfg: &RunConfig) -> Result<Mesh> {
    match &cfg.mesh_file {
        Some(path) => Mesh::load(path),
        None => generate_disk_mesh(1.0, cfg.mesh_h, &ElectrodeLayout::ktc()),
    }
}

pub fn generation_mesh(cfg: &RunConfig) -> Result<Mesh> {
    generate_disk_mesh(1.0, cfg.generation_h, &ElectrodeLayout::ktc())
}

/// Which mesh `mesh` writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshKind {
    Reconstruction,
    Generation,
}

pub fn cmd_mesh(cfg: &RunConfig, kind: MeshKind, path: &Path) -> Result<Mesh> {
    cfg.validate()?;
    let mesh = match kind {
        MeshKind::Reconstruction => reconstruction_mesh(cfg)?,
        MeshKind::Generation => generation_mesh(cfg)?,
    };
    mesh.save(path)?;
    Ok(mesh)
}

/// Synthesizes the configured phantom on the generation mesh.
pub fn simulate(cfg: &RunConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let phantom = Phantom::by_name(&cfg.phantom, cfg.sigma0)?;
    let mesh = generation_mesh(cfg)?;
    phantom.validate(domain_radius(&mesh))?;
    let (currents, meas, _) = ktc_injection_schedule(cfg.level, cfg.amplitude)?;
    let acq = Acquisition {
        currents,
        meas,
        contact_impedance: vec![cfg.z0; mesh.n_electrodes()],
        noise_scale: cfg.omega,
        seed: cfg.seed,
        l_active: Some(cfg.level),
    };
    synthesize(&phantom, &mesh, cfg.generation_h, &acq)
}

/// Writes `dataset.json`, `truth.pgm` and the archived configuration.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SyntheticDataset> {
    let ds = simulate(cfg)?;
    prepare_output(cfg)?;
    ds.save(&cfg.output.join(DATASET_FILE))?;
    truth_labels(&ds.phantom, 1.0, cfg.grid, cfg.grid)?.save_pgm(&cfg.output.join(TRUTH_FILE))?;
    info!("{} measurements from {} injections", ds.data.len(), ds.currents.len());
    Ok(ds)
}

pub struct Reconstruction {
    pub mesh: Mesh,
    pub report: IasReport,
    /// Significant increments at the end of phase 1 and at the end of the run.
    pub significant: (usize, usize),
    pub conductivity: GridInterpolation,
    pub segmentation: Segmentation,
    pub truth: PixelImage,
    pub score: SegmentationScore,
    /// Mesh setup, reference correction and IAS iterations; excludes post-processing.
    pub seconds: f64,
}

/// Builds the inverse problem for `ds` on the reconstruction mesh and runs the configured scheme.
pub fn solve(cfg: &RunConfig, ds: &SyntheticDataset) -> Result<(Mesh, IasReport, f64)> {
    cfg.validate()?;
    let start = Instant::now();
    let mesh = reconstruction_mesh(cfg)?;
    if mesh.n_electrodes() != ds.n_electrodes {
        return Err(EitError::Config(format!(
            "mesh has {} electrodes, dataset {}",
            mesh.n_electrodes(),
            ds.n_electrodes
        )));
    }
    let model = CemModel::new(&mesh, cfg.sigma0, vec![cfg.z0; mesh.n_electrodes()])?;
    let currents = ds.current_frame()?;
    let meas = ds.measurement_pattern()?;
    let data = if cfg.reference_correction {
        let background = model.forward(&DVector::zeros(model.n_interior()), &currents, &meas)?;
        ds.reference_corrected(&background)?
    } else {
        ds.data_vector()
    };
    let mut problem = InverseProblem::new(model, currents, meas, data, cfg.omega)?;
    problem.route = cfg.route;
    let schedule = cfg.schedule();
    let report = match cfg.single_prior {
        Some(r) => run_single_prior(&schedule, r, &problem)?,
        None => run_hybrid(&schedule, &problem)?,
    };
    Ok((mesh, report, start.elapsed().as_secs_f64()))
}

/// [`solve`] followed by rasterization, segmentation and scoring against the dataset's phantom.
pub fn reconstruct(cfg: &RunConfig, ds: &SyntheticDataset) -> Result<Reconstruction> {
    let (mesh, report, seconds) = solve(cfg, ds)?;
    let ops = crate::increments::IncrementOperator::build(&mesh)?;
    let significant = (
        count_significant(&ops.apply(&report.phase1_xi)?, SIGNIFICANCE),
        count_significant(&ops.apply(&report.xi)?, SIGNIFICANCE),
    );
    let conductivity = interpolate_to_grid(&mesh, cfg.sigma0, &report.xi, cfg.grid, cfg.grid)?;
    let segmentation = segment(&conductivity.image, cfg.sigma0)?;
    let truth = truth_labels(&ds.phantom, domain_radius(&mesh), cfg.grid, cfg.grid)?;
    let score = score(&segmentation.labels, &truth, cfg.ssim)?;
    Ok(Reconstruction { mesh, report, significant, conductivity, segmentation, truth, score, seconds })
}

fn route_name(route: Route) -> &'static str {
    match route {
        Route::Primal => "primal",
        Route::Adjoint => "adjoint",
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseSummary {
    pub r: f64,
    pub eta: f64,
    pub beta: f64,
    pub iterations: usize,
    pub first_delta_theta: Option<f64>,
    pub last_delta_theta: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionSummary {
    pub level: Option<usize>,
    pub injections: usize,
    pub measurements: usize,
    pub nodes: usize,
    pub interior_nodes: usize,
    pub increments: usize,
    pub route: &'static str,
    pub reference_correction: bool,
    pub single_prior: Option<f64>,
    pub phases: Vec<PhaseSummary>,
    pub significant_phase1: usize,
    pub significant_final: usize,
    pub clamp_warnings: usize,
    pub fallback_pixels: usize,
    pub lower_threshold: Option<f64>,
    pub upper_threshold: Option<f64>,
    pub seconds: f64,
    pub forward_seconds: f64,
    pub linear_algebra_seconds: f64,
    pub score: SegmentationScore,
}

impl Reconstruction {
    pub fn summary(&self, cfg: &RunConfig, ds: &SyntheticDataset) -> ReconstructionSummary {
        let r = &self.report;
        let phase_ids: &[u8] = if cfg.single_prior.is_some() { &[1] } else { &[1, 2] };
        let phases = phase_ids
            .iter()
            .map(|&p| {
                let params = if p == 1 { &r.phase1 } else { &r.phase2 };
                let rows: Vec<_> = r.history.iter().filter(|h| h.phase == p).collect();
                PhaseSummary {
                    r: params.r(),
                    eta: params.eta(),
                    beta: params.beta(),
                    iterations: rows.len(),
                    first_delta_theta: rows.first().map(|h| h.delta_theta),
                    last_delta_theta: rows.last().map(|h| h.delta_theta),
                }
            })
            .collect();
        let f = r.timings.forward;
        ReconstructionSummary {
            level: ds.l_active,
            injections: ds.currents.len(),
            measurements: ds.data.len(),
            nodes: self.mesh.nodes().len(),
            interior_nodes: self.mesh.n_interior(),
            increments: self.mesh.interior_edges().len(),
            route: route_name(r.route),
            reference_correction: cfg.reference_correction,
            single_prior: cfg.single_prior,
            phases,
            significant_phase1: self.significant.0,
            significant_final: self.significant.1,
            clamp_warnings: r.clamp_warnings,
            fallback_pixels: self.conductivity.fallback_pixels,
            lower_threshold: self.segmentation.lower,
            upper_threshold: self.segmentation.upper,
            seconds: self.seconds,
            forward_seconds: (f.assembly + f.factorization + f.solves).as_secs_f64(),
            linear_algebra_seconds: r.timings.linear_algebra.as_secs_f64(),
            score: self.score.clone(),
        }
    }
}

/// Runs [`reconstruct`] on the dataset file, or on a fresh simulation when none is given,
/// and writes every file in [`RECONSTRUCTION_FILES`] (plus `dataset.json` when simulated).
pub fn cmd_reconstruct(cfg: &RunConfig, dataset: Option<&Path>) -> Result<ReconstructionSummary> {
    let ds = match dataset {
        Some(path) => SyntheticDataset::load(path)?,
        None => simulate(cfg)?,
    };
    let rec = reconstruct(cfg, &ds)?;
    prepare_output(cfg)?;
    let out = &cfg.output;
    if dataset.is_none() {
        ds.save(&out.join(DATASET_FILE))?;
    }
    let xi: String = rec.report.xi.iter().map(|v| format!("{v:?}\n")).collect();
    write(&out.join("xi.txt"), &xi)?;
    write(&out.join("diagnostics.csv"), &rec.report.diagnostics_csv())?;
    rec.conductivity.image.save_text(&out.join("conductivity.txt"))?;
    rec.segmentation.labels.save_pgm(&out.join("segmentation.pgm"))?;
    rec.truth.save_pgm(&out.join(TRUTH_FILE))?;
    write(&out.join("score.json"), &json(&rec.score)?)?;
    let summary = rec.summary(cfg, &ds);
    write(&out.join("summary.json"), &json(&summary)?)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct PublishedAnchor {
    pub level: usize,
    pub phantom_scores: [f64; 3],
    pub note: &'static str,
}

pub fn published_anchor(level: usize) -> Option<PublishedAnchor> {
    PUBLISHED_SCORES.iter().find(|(l, _)| *l == level).map(|&(level, phantom_scores)| PublishedAnchor {
        level,
        phantom_scores,
        note: "KTC23 measured-data scores; not reproducible from synthetic data",
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreReport {
    pub result: PathBuf,
    pub truth: PathBuf,
    pub score: SegmentationScore,
    pub published: Option<PublishedAnchor>,
}

pub fn cmd_score(result: &Path, truth: &Path, variant: SsimVariant, level: usize) -> Result<ScoreReport> {
    let a = PixelImage::load_pgm(result)?;
    let b = PixelImage::load_pgm(truth)?;
    Ok(ScoreReport {
        result: result.to_path_buf(),
        truth: truth.to_path_buf(),
        score: score(&a, &b, variant)?,
        published: published_anchor(level),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelTiming {
    pub level: usize,
    pub injections: usize,
    pub measurements: usize,
    pub increments: usize,
    pub route: &'static str,
    pub seconds: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub forward_mean: f64,
    pub linear_algebra_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub levels: Vec<LevelTiming>,
    /// Mean times never increase as electrodes are removed.
    pub monotone: bool,
    /// Relative time saved from the first to the last level.
    pub gain: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Times `repetitions` reconstructions at each level, each from its own dataset (seeds
/// `cfg.seed`, `cfg.seed + 1`, ...). With `parallel` the runs of a level share threads,
/// which spoils the timings but not the results.
pub fn cmd_bench(cfg: &RunConfig, levels: &[usize], repetitions: usize, parallel: bool) -> Result<BenchReport> {
    if repetitions < 2 {
        return Err(EitError::Config(format!("bench needs at least 2 repetitions, got {repetitions}")));
    }
    if levels.is_empty() {
        return Err(EitError::Config("bench needs at least one level".into()));
    }
    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        if !INJECTION_COUNTS.iter().any(|(l, _)| *l == level) {
            return Err(EitError::Config(format!("unsupported level {level}")));
        }
        let configs: Vec<RunConfig> = (0..repetitions)
            .map(|i| RunConfig { level, seed: cfg.seed + i as u64, ..cfg.clone() })
            .collect();
        let run = |c: &RunConfig| -> Result<(SyntheticDataset, IasReport, f64, usize)> {
            let ds = simulate(c)?;
            let (mesh, report, seconds) = solve(c, &ds)?;
            Ok((ds, report, seconds, mesh.interior_edges().len()))
        };
        let runs: Vec<_> = if parallel {
            std::thread::scope(|s| {
                let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || run(c))).collect();
                handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect::<Result<_>>()
            })?
        } else {
            configs.iter().map(run).collect::<Result<_>>()?
        };
        let seconds: Vec<f64> = runs.iter().map(|r| r.2).collect();
        let (mean, std) = mean_std(&seconds);
        let forward: Vec<f64> = runs
            .iter()
            .map(|r| {
                let f = r.1.timings.forward;
                (f.assembly + f.factorization + f.solves).as_secs_f64()
            })
            .collect();
        let linalg: Vec<f64> = runs.iter().map(|r| r.1.timings.linear_algebra.as_secs_f64()).collect();
        let (ds, report, _, increments) = &runs[0];
        info!("level {level}: {mean:.2} s ± {std:.2} s, {} route", route_name(report.route));
        out.push(LevelTiming {
            level,
            injections: ds.currents.len(),
            measurements: ds.data.len(),
            increments: *increments,
            route: route_name(report.route),
            seconds,
            mean,
            std,
            forward_mean: mean_std(&forward).0,
            linear_algebra_mean: mean_std(&linalg).0,
        });
    }
    let monotone = out.windows(2).all(|w| w[1].mean <= w[0].mean);
    let gain = 1.0 - out.last().unwrap().mean / out[0].mean;
    Ok(BenchReport { repetitions, levels: out, monotone, gain })
}

/// Sizes and routes of each level at the configured mesh, without running anything heavy.
#[derive(Debug, Clone, Serialize)]
pub struct LevelInfo {
    pub level: usize,
    pub injections: usize,
    pub measurements: usize,
    pub route: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Info {
    pub version: &'static str,
    pub nodes: usize,
    pub interior_nodes: usize,
    pub increments: usize,
    pub electrodes: usize,
    pub levels: Vec<LevelInfo>,
}

pub fn cmd_info(cfg: &RunConfig) -> Result<Info> {
    cfg.validate()?;
    let mesh = reconstruction_mesh(cfg)?;
    let increments = mesh.interior_edges().len();
    let levels = INJECTION_COUNTS
        .iter()
        .map(|&(level, injections)| {
            let measurements = injections * level;
            LevelInfo { level, injections, measurements, route: route_name(cfg.route.select(measurements, increments)) }
        })
        .collect();
    Ok(Info {
        version: env!("CARGO_PKG_VERSION"),
        nodes: mesh.nodes().len(),
        interior_nodes: mesh.n_interior(),
        increments,
        electrodes: mesh.n_electrodes(),
        levels,
    })
}
