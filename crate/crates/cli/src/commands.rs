use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use focal_hsi::basis::compute_basis as fit_basis;
use focal_hsi::forward::{apply_forward, simulate_measurement, CropSpec, ExposureModel};
use focal_hsi::io::{self, FileKind, Metadata};
use focal_hsi::metrics::{self, ColorMatch, RgbImage};
use focal_hsi::optics::{build_psf_stack, focal_shift_curve, select_lens_positions, OpticalConfig};
use focal_hsi::solver::{grid_search, Admm, Denoiser, GridRanges, SolverConfig};
use focal_hsi::types::resample_response;
use focal_hsi::{HyperspectralCube, PsfStack, SpectralBasis};

use crate::{
    ComputeBasisArgs, EvaluateArgs, InfoArgs, MakePsfsArgs, OpticsArgs, ReconstructArgs, SimulateArgs, SolverArgs,
    SynthSceneArgs, TuneArgs,
};

fn read_text(path: &Path) -> Result<String> {
    Ok(io::load_text(path)?)
}

fn load_cube(path: &Path) -> Result<(HyperspectralCube, Metadata)> {
    Ok(io::load_cube(path)?)
}

fn load_stack(path: &Path) -> Result<(focal_hsi::FocalStack, Metadata)> {
    Ok(io::load_stack(path)?)
}

fn load_psfs(path: &Path) -> Result<PsfStack> {
    Ok(io::load_psfs(path)?)
}

fn load_basis(path: Option<&Path>, channels: usize) -> Result<SpectralBasis> {
    match path {
        Some(p) => {
            let basis = io::basis_from_csv(&read_text(p)?).with_context(|| format!("parsing basis {}", p.display()))?;
            if basis.channels() != channels {
                bail!("basis {} has {} channels, expected {channels}", p.display(), basis.channels());
            }
            Ok(basis)
        }
        None => Ok(SpectralBasis::identity(channels)),
    }
}

fn load_response(path: &Path, wavelengths_nm: &[f64]) -> Result<Vec<f64>> {
    let resp = io::response_from_csv(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
    Ok(resample_response(&resp, wavelengths_nm)?)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn optical_config(a: &OpticsArgs, wavelengths_nm: &[f64]) -> Result<OpticalConfig> {
    let (lo, hi) = (wavelengths_nm[0], wavelengths_nm[wavelengths_nm.len() - 1]);
    let mut cfg = OpticalConfig::linear_sweep(a.shift_mm, lo, hi.max(lo + 1.0))?;
    if let Some(p) = &a.lens1 {
        cfg.lens1 = io::dispersion_from_csv(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?;
    }
    if let Some(p) = &a.lens2 {
        cfg.lens2 = io::dispersion_from_csv(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?;
    }
    if let Some(v) = a.separation_mm {
        cfg.separation_mm = v;
    }
    if let Some(v) = a.aperture {
        cfg.aperture_number = v;
    }
    if let Some(v) = a.pixel_pitch_um {
        cfg.pixel_pitch_um = v;
    }
    if let Some(v) = a.scene_distance_m {
        cfg.scene_distance_m = v;
    }
    if let Some(v) = a.antialias_sigma {
        cfg.antialias_sigma_px = v;
    }
    if let Some(v) = a.max_kernel {
        cfg.max_kernel_size = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn make_psfs(a: MakePsfsArgs) -> Result<()> {
    if a.wavelengths.0.is_empty() {
        bail!("no wavelengths given");
    }
    let cfg = optical_config(&a.optics, &a.wavelengths.0)?;
    let curve = focal_shift_curve(&cfg, &a.wavelengths.0)?;
    let positions = match &a.positions {
        Some(p) => p.0.clone(),
        None => select_lens_positions(&curve, a.n)?,
    };
    let psfs = build_psf_stack(&cfg, &positions, &a.wavelengths.0)?;
    io::save_psfs(&a.out, &psfs).with_context(|| format!("writing {}", a.out.display()))?;
    let lo = curve.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("focal shift range: {lo:.6} .. {hi:.6} mm");
    println!("lens positions (mm): {}", join(&positions));
    println!("N={} C={} K={}", psfs.count(), psfs.channels(), psfs.kernel_size());
    Ok(())
}

pub fn synth_scene(a: SynthSceneArgs) -> Result<()> {
    let cube = focal_hsi::synth::synthetic_scene(a.height, a.width, &a.wavelengths.0, a.seed)?;
    let mut meta = Metadata::new();
    meta.push("command", "synth-scene");
    meta.push("seed", a.seed);
    io::save_cube(&a.out, &cube, &meta).with_context(|| format!("writing {}", a.out.display()))?;
    println!("HSC1 H={} W={} C={}", cube.height(), cube.width(), cube.channels());
    Ok(())
}

pub fn compute_basis(a: ComputeBasisArgs) -> Result<()> {
    let cubes = a
        .training
        .iter()
        .map(|p| load_cube(p).map(|(c, _)| c))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&HyperspectralCube> = cubes.iter().collect();
    let basis = fit_basis(&refs, a.dim)?;
    io::save_text(&a.out, &io::basis_to_csv(&basis)).with_context(|| format!("writing {}", a.out.display()))?;
    println!("basis v={} C={}", basis.dim(), basis.channels());
    Ok(())
}

fn weighted(cube: &HyperspectralCube, weights: &[f64]) -> Result<HyperspectralCube> {
    let n = cube.height() * cube.width();
    let data = cube
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v * weights[i / n])
        .collect();
    Ok(HyperspectralCube::new(cube.height(), cube.width(), cube.wavelengths_nm().to_vec(), data)?)
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let (scene, _) = load_cube(&a.scene)?;
    let psfs = load_psfs(&a.psfs)?;
    if let Some(n) = a.n {
        if n != psfs.count() {
            bail!("--n {n} does not match the {} lens positions in {}", psfs.count(), a.psfs.display());
        }
    }
    if scene.wavelengths_nm() != psfs.wavelengths_nm() {
        bail!("scene and PSF wavelengths differ");
    }
    let e = &a.exposure;
    let efficiency: f64 = e.efficiencies.0.iter().product();
    if let Some(bad) = e.efficiencies.0.iter().find(|x| !(**x > 0.0 && **x <= 1.0)) {
        bail!("efficiency {bad} must lie in (0, 1]");
    }
    let pitch = e.pixel_pitch_um * 1e-6;
    let exposure = ExposureModel {
        photon_flux: e.photon_flux,
        total_exposure_s: e.exposure,
        pixel_area_m2: pitch * pitch,
        light_efficiency: efficiency,
        read_noise_e: e.read_noise,
        seed: e.seed,
    };
    exposure.validate()?;
    let response = a
        .response
        .as_deref()
        .map(|p| load_response(p, scene.wavelengths_nm()))
        .transpose()?;
    let crop = CropSpec::centered(scene.height(), scene.width(), psfs.kernel_size());
    let stack = if e.no_noise {
        match &response {
            Some(w) => apply_forward(&weighted(&scene, w)?, &psfs, &crop)?,
            None => apply_forward(&scene, &psfs, &crop)?,
        }
    } else {
        simulate_measurement(&scene, &psfs, &crop, &exposure, response.as_deref())?
    };

    let mut meta = Metadata::new();
    meta.push("command", "simulate");
    meta.push("noise", !e.no_noise);
    meta.push("photon_flux", e.photon_flux);
    meta.push("total_exposure_s", e.exposure);
    meta.push("pixel_pitch_um", e.pixel_pitch_um);
    meta.push("efficiencies", join(&e.efficiencies.0));
    meta.push("efficiency_product", efficiency);
    meta.push("read_noise_e", e.read_noise);
    meta.push("seed", e.seed);
    meta.push("photons_per_unit", exposure.photons_per_unit(psfs.count()));
    io::save_stack(&a.out, &stack, &meta).with_context(|| format!("writing {}", a.out.display()))?;
    println!("FST1 H={} W={} N={}", stack.height(), stack.width(), stack.count());
    Ok(())
}

fn solver_config(a: &SolverArgs, wavelengths_nm: &[f64]) -> Result<SolverConfig> {
    let denoiser = match a.denoiser.as_str() {
        "identity" | "none" => Denoiser::Identity,
        "l1" | "soft" => Denoiser::SoftThreshold { tau: a.tau },
        "tv" => Denoiser::TotalVariation {
            weight: a.tv_weight,
            inner_iters: a.tv_iters,
        },
        other => bail!("unknown denoiser {other:?}; expected identity, l1, or tv"),
    };
    let response_weights = a
        .response
        .as_deref()
        .map(|p| load_response(p, wavelengths_nm))
        .transpose()?;
    let config = SolverConfig {
        mu1: a.mu1,
        mu2: a.mu2,
        max_iters: a.max_iters,
        step_tolerance: a.step_tolerance,
        divergence_factor: a.divergence_factor,
        halving_check_iter: a.halving_iter,
        halving_threshold: a.halving_threshold,
        denoiser,
        response_weights,
    };
    config.validate()?;
    Ok(config)
}

fn default_diag_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".diag.csv");
    PathBuf::from(s)
}

pub fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let (stack, _) = load_stack(&a.stack)?;
    let psfs = load_psfs(&a.psfs)?;
    let basis = load_basis(a.basis.as_deref(), psfs.channels())?;
    let config = solver_config(&a.solver, psfs.wavelengths_nm())?;
    let diag_path = a.diagnostics.clone().unwrap_or_else(|| default_diag_path(&a.out));

    let mut admm = Admm::new(&stack, &psfs, &basis, &config)?;
    let outcome = admm.run();
    io::save_text(&diag_path, &admm.diagnostics().to_csv())
        .with_context(|| format!("writing {}", diag_path.display()))?;
    let stop = outcome.with_context(|| format!("diagnostics written to {}", diag_path.display()))?;
    let cube = admm.estimate()?;
    let diag = admm.into_diagnostics();

    let mut meta = Metadata::new();
    meta.push("command", "reconstruct");
    meta.push("mu1", config.mu1);
    meta.push("mu2", config.mu2);
    meta.push("denoiser", format!("{:?}", config.denoiser));
    meta.push("iterations", diag.iterations());
    meta.push("stop", format!("{stop:?}"));
    meta.push("final_basis_dim", diag.records.last().map_or(basis.dim(), |r| r.basis_dim));
    io::save_cube(&a.out, &cube, &meta).with_context(|| format!("writing {}", a.out.display()))?;
    for h in &diag.halvings {
        println!("basis halved at iteration {}: {} -> {} (ratio {:e})", h.iteration, h.from, h.to, h.ratio);
    }
    println!(
        "iterations: {}  final step: {:e}  stop: {stop:?}",
        diag.iterations(),
        diag.final_step().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn tune(a: TuneArgs) -> Result<()> {
    let (stack, _) = load_stack(&a.stack)?;
    let (truth, _) = load_cube(&a.truth)?;
    let psfs = load_psfs(&a.psfs)?;
    if (truth.height(), truth.width()) != (stack.height(), stack.width()) {
        bail!(
            "truth is {}x{} but the stack is {}x{}",
            truth.height(),
            truth.width(),
            stack.height(),
            stack.width()
        );
    }
    if truth.wavelengths_nm() != psfs.wavelengths_nm() {
        bail!("truth and PSF wavelengths differ");
    }
    let basis = load_basis(a.basis.as_deref(), psfs.channels())?;
    let base = solver_config(&a.solver, psfs.wavelengths_nm())?;
    let ranges = GridRanges {
        mu1: a.mu1_range,
        mu2: a.mu2_range,
        log_points: a.log_points,
        linear_points: a.linear_points,
        stage3: a.stage3,
    };
    let objective = |mu1: f64, mu2: f64| {
        let config = SolverConfig { mu1, mu2, ..base.clone() };
        focal_hsi::solver::run_admm(&stack, &psfs, &basis, &config)
            .and_then(|(x, _)| metrics::psnr(&x, &truth, a.peak))
            .unwrap_or(f64::NAN)
    };
    let result = grid_search(objective, &ranges)?;
    if let Some(p) = &a.log {
        io::save_text(p, &result.log_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    for (k, (m1, m2)) in result.stage_winners.iter().enumerate() {
        println!("stage {} winner: mu1={m1:e} mu2={m2:e}", k + 1);
    }
    println!("best: mu1={:e} mu2={:e} psnr={}", result.mu1, result.mu2, result.score);
    Ok(())
}

/// Measurements are linear intensities; encode them like the rendered cubes.
fn linear_to_display(img: &RgbImage) -> Result<RgbImage> {
    let pixels = img
        .pixels
        .iter()
        .map(|p| p.map(|v| metrics::linear_to_srgb(v.clamp(0.0, 1.0))))
        .collect();
    Ok(RgbImage::new(img.height, img.width, pixels)?)
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (truth, _) = load_cube(&a.truth)?;
    let colormatch = || ColorMatch::cie1931_d65(truth.wavelengths_nm());
    let mut rows: Vec<(String, f64)> = Vec::new();

    if let Some(rp) = &a.recon {
        let (recon, _) = load_cube(rp)?;
        for m in &a.metrics {
            let value = match m.trim() {
                "psnr" => metrics::psnr(&recon, &truth, a.peak)?,
                "ssim" => metrics::ssim(&recon, &truth)?,
                "sam" => metrics::sam(&recon, &truth)?,
                "de00" => {
                    let cm = colormatch()?;
                    metrics::delta_e00(&metrics::hsi_to_rgb(&recon, &cm)?, &metrics::hsi_to_rgb(&truth, &cm)?)?
                }
                other => bail!("unknown metric {other:?}; expected psnr, ssim, sam, or de00"),
            };
            rows.push((m.trim().to_string(), value));
        }
        if let Some(prefix) = &a.rgb {
            let cm = colormatch()?;
            write_ppm(&format!("{prefix}recon.ppm"), &metrics::hsi_to_rgb(&recon, &cm)?)?;
        }
    } else if a.compose_rgb.is_none() {
        bail!("nothing to evaluate: give --recon or --compose-rgb");
    }
    if let Some(prefix) = &a.rgb {
        write_ppm(&format!("{prefix}truth.ppm"), &metrics::hsi_to_rgb(&truth, &colormatch()?)?)?;
    }
    if let (Some(idx), Some(sp)) = (a.compose_rgb, &a.stack) {
        let (stack, _) = load_stack(sp)?;
        let composite = linear_to_display(&metrics::compose_rgb_from_stack(&stack, idx, a.white_patch)?)?;
        let truth_rgb = metrics::hsi_to_rgb(&truth, &colormatch()?)?;
        rows.push(("de00_composite".into(), metrics::delta_e00(&composite, &truth_rgb)?));
        if let Some(prefix) = &a.rgb {
            write_ppm(&format!("{prefix}composite.ppm"), &composite)?;
        }
    }

    let refs: Vec<(&str, f64)> = rows.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let csv = metrics::metrics_csv(&refs);
    match &a.out {
        Some(p) => io::save_text(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn write_ppm(path: &str, img: &RgbImage) -> Result<()> {
    io::save_bytes(Path::new(path), &io::encode_ppm(img)).with_context(|| format!("writing {path}"))
}

fn print_meta(meta: &Metadata) {
    for (k, v) in &meta.0 {
        println!("  {k} = {v}");
    }
}

pub fn info(a: InfoArgs) -> Result<()> {
    let ctx = || format!("reading {}", a.file.display());
    let bytes = std::fs::read(&a.file).with_context(ctx)?;
    match io::sniff(&bytes).with_context(ctx)? {
        FileKind::Cube => {
            let (cube, meta) = io::decode_cube(&bytes).with_context(ctx)?;
            println!("HSC1 H={} W={} C={}", cube.height(), cube.width(), cube.channels());
            println!("wavelengths_nm: {}", join(cube.wavelengths_nm()));
            println!("metadata:");
            print_meta(&meta);
        }
        FileKind::Stack => {
            let (stack, meta) = io::decode_stack(&bytes).with_context(ctx)?;
            println!("FST1 H={} W={} N={}", stack.height(), stack.width(), stack.count());
            println!("lens_positions_mm: {}", join(stack.lens_positions_mm()));
            println!("metadata:");
            print_meta(&meta);
        }
        FileKind::Psf => {
            let psfs = io::decode_psfs(&bytes).with_context(ctx)?;
            println!("PSF1 N={} C={} K={}", psfs.count(), psfs.channels(), psfs.kernel_size());
            println!("lens_positions_mm: {}", join(psfs.lens_positions_mm()));
            println!("wavelengths_nm: {}", join(psfs.wavelengths_nm()));
        }
    }
    Ok(())
}
