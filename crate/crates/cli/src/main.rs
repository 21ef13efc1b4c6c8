//! `focal-hsi`: simulate chromatic focal stacks and reconstruct hyperspectral cubes.

mod args;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use args::{parse_indices, parse_list, parse_patch, parse_range, parse_wavelengths, FloatList};

#[derive(Parser, Debug)]
#[command(name = "focal-hsi", version, about, args_override_self = true)]
struct Cli {
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key = value` file; flags on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

const SUBCOMMANDS: [&str; 8] = [
    "make-psfs",
    "synth-scene",
    "compute-basis",
    "simulate",
    "reconstruct",
    "tune",
    "evaluate",
    "info",
];

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a PSF stack for a two-lens focal sweep.
    MakePsfs(MakePsfsArgs),
    /// Write a deterministic synthetic scene.
    SynthScene(SynthSceneArgs),
    /// Fit a spectral basis to training cubes.
    ComputeBasis(ComputeBasisArgs),
    /// Render a noisy focal stack from a scene.
    Simulate(SimulateArgs),
    /// Recover a cube from a focal stack.
    Reconstruct(ReconstructArgs),
    /// Grid-search the penalty parameters against a known truth.
    Tune(TuneArgs),
    /// Compare a reconstruction against ground truth.
    Evaluate(EvaluateArgs),
    /// Print the header of a cube, stack, or PSF file.
    Info(InfoArgs),
}

#[derive(Args, Debug)]
struct OpticsArgs {
    /// Axial focal shift across the band for the built-in lens pair, mm.
    #[arg(long, default_value_t = 0.7)]
    shift_mm: f64,
    /// Dispersion CSV (`wavelength_nm,focal_length_mm`) for the fixed lens.
    #[arg(long)]
    lens1: Option<PathBuf>,
    /// Dispersion CSV for the moving lens.
    #[arg(long)]
    lens2: Option<PathBuf>,
    #[arg(long)]
    separation_mm: Option<f64>,
    #[arg(long)]
    aperture: Option<f64>,
    #[arg(long)]
    pixel_pitch_um: Option<f64>,
    #[arg(long)]
    scene_distance_m: Option<f64>,
    #[arg(long)]
    antialias_sigma: Option<f64>,
    #[arg(long)]
    max_kernel: Option<usize>,
}

#[derive(Args, Debug)]
struct MakePsfsArgs {
    #[command(flatten)]
    optics: OpticsArgs,
    /// Number of lens positions, evenly spaced in focal shift.
    #[arg(long, default_value_t = 5, conflicts_with = "positions")]
    n: usize,
    /// Explicit lens positions in mm.
    #[arg(long, value_parser = parse_list)]
    positions: Option<FloatList>,
    /// `start:end:step` in nm, or a comma-separated list.
    #[arg(long, default_value = "440:720:10", value_parser = parse_wavelengths)]
    wavelengths: FloatList,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthSceneArgs {
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value = "440:720:10", value_parser = parse_wavelengths)]
    wavelengths: FloatList,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ComputeBasisArgs {
    /// Training cubes.
    #[arg(long, required = true, num_args = 1..)]
    training: Vec<PathBuf>,
    /// Basis dimension.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExposureArgs {
    /// Visible-band photon flux, photons m⁻² s⁻¹.
    #[arg(long, default_value_t = 7.5e17)]
    photon_flux: f64,
    /// Total exposure over all measurements, seconds.
    #[arg(long, default_value_t = 5.0)]
    exposure: f64,
    #[arg(long, default_value_t = 5.86)]
    pixel_pitch_um: f64,
    /// Transmission of each optical component; multiplied together.
    #[arg(long, default_value = "0.99,0.99", value_parser = parse_list)]
    efficiencies: FloatList,
    #[arg(long, default_value_t = 0.0)]
    read_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip noise; the output is the clean forward model.
    #[arg(long)]
    no_noise: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    psfs: PathBuf,
    #[command(flatten)]
    exposure: ExposureArgs,
    /// Expected number of measurements; checked against the PSF file.
    #[arg(long)]
    n: Option<usize>,
    /// Sensor response CSV (`wavelength_nm,response`).
    #[arg(long)]
    response: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = focal_hsi::solver::DEFAULT_MU1)]
    mu1: f64,
    #[arg(long, default_value_t = focal_hsi::solver::DEFAULT_MU2)]
    mu2: f64,
    #[arg(long, default_value_t = 9)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    step_tolerance: f64,
    #[arg(long, default_value_t = 1.0)]
    divergence_factor: f64,
    #[arg(long, default_value_t = 4)]
    halving_iter: usize,
    #[arg(long, default_value_t = 0.5)]
    halving_threshold: f64,
    /// `identity`, `l1`, or `tv`.
    #[arg(long, default_value = "identity")]
    denoiser: String,
    /// Shrinkage for `l1`.
    #[arg(long, default_value_t = 0.01)]
    tau: f64,
    /// Regularization weight for `tv`.
    #[arg(long, default_value_t = 0.01)]
    tv_weight: f64,
    #[arg(long, default_value_t = 20)]
    tv_iters: usize,
    /// Sensor response CSV to divide out of the result.
    #[arg(long)]
    response: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long)]
    psfs: PathBuf,
    /// Basis CSV; the identity is used when omitted.
    #[arg(long)]
    basis: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration CSV; defaults to `<out>.diag.csv`.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    psfs: PathBuf,
    #[arg(long)]
    basis: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    /// `lo:hi` for the logarithmic first stage, or one value to hold fixed.
    #[arg(long, default_value = "1e-15:1e-5", value_parser = parse_range)]
    mu1_range: (f64, f64),
    #[arg(long, default_value = "1e-15:1e-5", value_parser = parse_range)]
    mu2_range: (f64, f64),
    #[arg(long, default_value_t = 11)]
    log_points: usize,
    #[arg(long, default_value_t = 9)]
    linear_points: usize,
    /// Add the final linear refinement.
    #[arg(long)]
    stage3: bool,
    /// Peak value for PSNR.
    #[arg(long, default_value_t = 1.0)]
    peak: f64,
    /// Grid log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    recon: Option<PathBuf>,
    #[arg(long)]
    truth: PathBuf,
    /// Any of psnr, ssim, sam, de00.
    #[arg(long, default_value = "psnr,ssim,sam,de00", value_delimiter = ',')]
    metrics: Vec<String>,
    #[arg(long, default_value_t = 1.0)]
    peak: f64,
    /// Prefix for `<prefix>recon.ppm` and `<prefix>truth.ppm`.
    #[arg(long)]
    rgb: Option<String>,
    /// Measurement indices used directly as R, G, B.
    #[arg(long, value_parser = parse_indices, requires = "stack")]
    compose_rgb: Option<[usize; 3]>,
    /// Focal stack for `--compose-rgb`.
    #[arg(long)]
    stack: Option<PathBuf>,
    /// `row,col,height,width` of a white region for balancing the composite.
    #[arg(long, value_parser = parse_patch)]
    white_patch: Option<focal_hsi::metrics::Patch>,
    /// Metrics CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InfoArgs {
    file: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<focal_hsi::Error>() {
        Some(e) if e.is_numerical() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let raw: Vec<_> = std::env::args_os().collect();
    let argv = match args::expand_config(raw, &SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(argv);
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::MakePsfs(a) => commands::make_psfs(a),
        Command::SynthScene(a) => commands::synth_scene(a),
        Command::ComputeBasis(a) => commands::compute_basis(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Tune(a) => commands::tune(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Info(a) => commands::info(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
