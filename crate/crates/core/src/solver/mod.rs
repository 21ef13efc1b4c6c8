//! Plug-and-play ADMM in the spectral eigenspace.
//!
//! The splitting is `v = Ĥ z` and `u = z`, with `Ĥ = H (Bᵀ ⊗ I)`. All of `z`,
//! `u`, `η` live on the zero-padded grid as `v` coefficient planes; `v` and `ξ`
//! hold `N` padded measurement planes. Only the centered window of each
//! measurement is observed, which is what makes the v-update split into an
//! inside and an outside case.

mod blocks;
mod denoise;
mod grid;

use std::fmt::Write as _;

pub use blocks::{precompute_otf_blocks, OtfBlocks};
pub use denoise::{soft_threshold, tv_prox, Denoise, Denoiser};
pub use grid::{grid_search, refinement_span, GridEvaluation, GridRanges, GridResult};

use crate::basis::{lift_planes, project_planes, CoefficientField};
use crate::error::{Error, Result};
use crate::forward::CropSpec;
use crate::types::{FocalStack, HyperspectralCube, PsfStack, SpectralBasis, Validate};

pub const DEFAULT_MU1: f64 = 1.20e-8;
pub const DEFAULT_MU2: f64 = 1.1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub mu1: f64,
    pub mu2: f64,
    pub max_iters: usize,
    pub step_tolerance: f64,
    /// Stop once the step exceeds this multiple of the previous one.
    pub divergence_factor: f64,
    pub halving_check_iter: usize,
    pub halving_threshold: f64,
    pub denoiser: Denoiser,
    /// Per-channel response the measurements were weighted by; divided out of the result.
    pub response_weights: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu1: DEFAULT_MU1,
            mu2: DEFAULT_MU2,
            max_iters: 9,
            step_tolerance: 1e-3,
            divergence_factor: 1.0,
            halving_check_iter: 4,
            halving_threshold: 0.5,
            denoiser: Denoiser::Identity,
            response_weights: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("mu1", self.mu1)?;
        positive("mu2", self.mu2)?;
        positive("step_tolerance", self.step_tolerance)?;
        positive("halving_threshold", self.halving_threshold)?;
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be at least 1"));
        }
        if !(self.divergence_factor >= 1.0) {
            return Err(Error::param(format!(
                "divergence_factor must be >= 1, got {}",
                self.divergence_factor
            )));
        }
        if let Some(w) = &self.response_weights {
            if let Some(bad) = w.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
                return Err(Error::param(format!("response weight {bad} must be positive")));
            }
        }
        self.denoiser.validate()
    }
}

/// ADMM variables on the padded grid, plane-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub measurements: usize,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub iteration: usize,
    pub steps: Vec<f64>,
}

impl SolverState {
    /// `z₀ = u₀ = 0.5`, zero duals.
    pub fn initial(height: usize, width: usize, dim: usize, measurements: usize) -> Self {
        let plane = height * width;
        Self {
            height,
            width,
            dim,
            measurements,
            z: vec![0.5; plane * dim],
            u: vec![0.5; plane * dim],
            v: vec![0.0; plane * measurements],
            xi: vec![0.0; plane * measurements],
            eta: vec![0.0; plane * dim],
            iteration: 0,
            steps: Vec::new(),
        }
    }

    pub fn z_field(&self) -> CoefficientField {
        CoefficientField::from_raw(self.height, self.width, self.dim, self.z.clone())
    }

    pub fn u_field(&self) -> CoefficientField {
        CoefficientField::from_raw(self.height, self.width, self.dim, self.u.clone())
    }

    fn is_finite(&self) -> bool {
        [&self.z, &self.u, &self.v, &self.xi, &self.eta]
            .iter()
            .all(|x| x.iter().all(|v| v.is_finite()))
    }

    /// Keeps the leading `dim` coefficient planes of `z`, `u`, `η`.
    fn truncate(&mut self, dim: usize) {
        let len = dim * self.height * self.width;
        self.z.truncate(len);
        self.u.truncate(len);
        self.eta.truncate(len);
        self.dim = dim;
    }
}

/// `v = (Cᵀy + μ₁ Ĥz − ξ) / (CᵀC + μ₁)`.
///
/// `y` holds the `N` observed windows; `hz` and `xi` are padded planes.
pub fn v_update(y: &[f64], hz: &[f64], xi: &[f64], mu1: f64, crop: &CropSpec) -> Vec<f64> {
    let plane = crop.padded_len();
    let n = hz.len() / plane;
    debug_assert_eq!(y.len(), n * crop.out_len());
    let mut v = vec![0.0; hz.len()];
    let (oy, ox) = crop.offset;
    for i in 0..n {
        for r in 0..crop.padded_height {
            for c in 0..crop.padded_width {
                let idx = i * plane + r * crop.padded_width + c;
                let data = mu1 * hz[idx] - xi[idx];
                v[idx] = if crop.contains(r, c) {
                    let yi = y[i * crop.out_len() + (r - oy) * crop.out_width + (c - ox)];
                    (yi + data) / (1.0 + mu1)
                } else {
                    data / mu1
                };
            }
        }
    }
    v
}

/// Exact solve of `(μ₁ ĤᵀĤ + μ₂ I) z = Ĥᵀ(μ₁ v + ξ) + (η + μ₂ u)`.
pub fn z_update(v: &[f64], xi: &[f64], u: &[f64], eta: &[f64], blocks: &OtfBlocks) -> Result<Vec<f64>> {
    let plane = blocks.frequencies();
    if u.len() != blocks.dim() * plane || eta.len() != u.len() {
        return Err(Error::shape(format!(
            "coefficient planes do not match cached blocks of dimension {}",
            blocks.dim()
        )));
    }
    if v.len() != blocks.measurements() * plane || xi.len() != v.len() {
        return Err(Error::shape("measurement planes do not match cached blocks"));
    }
    let (mu1, mu2) = (blocks.mu1(), blocks.mu2());
    let data: Vec<f64> = v.iter().zip(xi).map(|(v, x)| mu1 * v + x).collect();
    let prior: Vec<f64> = eta.iter().zip(u).map(|(e, u)| e + mu2 * u).collect();
    Ok(blocks.solve(&data, &prior))
}

/// `u = B φ(Bᵀ(z + η))` with `φ` applied to each image-domain channel.
pub fn u_update(
    z: &[f64],
    eta: &[f64],
    basis: &SpectralBasis,
    denoiser: &dyn Denoise,
    height: usize,
    width: usize,
) -> Vec<f64> {
    let plane = height * width;
    let sum: Vec<f64> = z.iter().zip(eta).map(|(a, b)| a + b).collect();
    let mut image = lift_planes(&sum, plane, basis);
    denoiser.denoise(&mut image, height, width);
    project_planes(&image, plane, basis)
}

/// `ξ += μ₁ (v − Ĥz)`, `η += μ₂ (u − z)`.
pub fn dual_update(state: &mut SolverState, hz: &[f64], mu1: f64, mu2: f64) {
    for ((x, v), h) in state.xi.iter_mut().zip(&state.v).zip(hz) {
        *x += mu1 * (v - h);
    }
    for ((e, u), z) in state.eta.iter_mut().zip(&state.u).zip(&state.z) {
        *e += mu2 * (u - z);
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    Diverging,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub step: f64,
    pub primal_residual: f64,
    pub basis_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalvingEvent {
    pub iteration: usize,
    pub from: usize,
    pub to: usize,
    /// `‖z − u‖ / ‖u‖` that triggered it.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub records: Vec<IterationRecord>,
    pub halvings: Vec<HalvingEvent>,
    pub stop: Option<StopReason>,
}

impl Diagnostics {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_step(&self) -> Option<f64> {
        self.records.last().map(|r| r.step)
    }

    /// `iter,step,primal_residual,basis_dim`, one row per iteration.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,step,primal_residual,basis_dim\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:e},{:e},{}", r.iter, r.step, r.primal_residual, r.basis_dim);
        }
        out
    }
}

/// Stepwise ADMM driver; [`run_admm`] runs it to completion.
pub struct Admm<'a> {
    config: SolverConfig,
    crop: CropSpec,
    basis: SpectralBasis,
    blocks: OtfBlocks,
    wavelengths: Vec<f64>,
    y: Vec<f64>,
    denoiser: Box<dyn Denoise + 'a>,
    state: SolverState,
    hz: Vec<f64>,
    diagnostics: Diagnostics,
    prev_step: Option<f64>,
}

impl<'a> Admm<'a> {
    pub fn new(stack: &FocalStack, psfs: &PsfStack, basis: &SpectralBasis, config: &SolverConfig) -> Result<Self> {
        Self::with_denoiser(stack, psfs, basis, config, Box::new(config.denoiser))
    }

    /// Uses `denoiser` in place of `config.denoiser`.
    pub fn with_denoiser(
        stack: &FocalStack,
        psfs: &PsfStack,
        basis: &SpectralBasis,
        config: &SolverConfig,
        denoiser: Box<dyn Denoise + 'a>,
    ) -> Result<Self> {
        config.validate()?;
        stack.validate()?;
        psfs.validate()?;
        if stack.count() != psfs.count() {
            return Err(Error::shape(format!(
                "stack has {} measurements, psfs have {}",
                stack.count(),
                psfs.count()
            )));
        }
        if basis.channels() != psfs.channels() {
            return Err(Error::shape(format!(
                "basis has {} channels, psfs have {}",
                basis.channels(),
                psfs.channels()
            )));
        }
        if let Some(w) = &config.response_weights {
            if w.len() != psfs.channels() {
                return Err(Error::shape("response weights do not match channel count"));
            }
        }
        let crop = CropSpec::centered(stack.height(), stack.width(), psfs.kernel_size());
        let blocks = precompute_otf_blocks(psfs, basis, &crop, config.mu1, config.mu2)?;
        let state = SolverState::initial(crop.padded_height, crop.padded_width, basis.dim(), stack.count());
        let hz = blocks.apply(&state.z);
        Ok(Self {
            config: config.clone(),
            crop,
            basis: basis.clone(),
            blocks,
            wavelengths: psfs.wavelengths_nm().to_vec(),
            y: stack.data().to_vec(),
            denoiser,
            state,
            hz,
            diagnostics: Diagnostics::default(),
            prev_step: None,
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn blocks(&self) -> &OtfBlocks {
        &self.blocks
    }

    pub fn crop(&self) -> &CropSpec {
        &self.crop
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn is_finished(&self) -> bool {
        self.diagnostics.stop.is_some()
    }

    /// One v → z → u → dual sweep. Returns the stop reason once a criterion fires.
    pub fn step(&mut self) -> Result<Option<StopReason>> {
        if let Some(stop) = self.diagnostics.stop {
            return Ok(Some(stop));
        }
        let (mu1, mu2) = (self.config.mu1, self.config.mu2);
        let iter = self.state.iteration + 1;
        let (h, w) = (self.state.height, self.state.width);

        self.state.v = v_update(&self.y, &self.hz, &self.state.xi, mu1, &self.crop);
        let z_new = z_update(&self.state.v, &self.state.xi, &self.state.u, &self.state.eta, &self.blocks)?;
        // The denoiser sees z − η/μ₂, the proximal point of the augmented
        // Lagrangian; feeding z + η makes η a positive feedback loop.
        let scaled: Vec<f64> = self.state.eta.iter().map(|e| -e / mu2).collect();
        self.state.u = u_update(&z_new, &scaled, &self.basis, self.denoiser.as_ref(), h, w);
        self.hz = self.blocks.apply(&z_new);
        let z_norm = norm(&self.state.z);
        let delta = diff_norm(&z_new, &self.state.z);
        self.state.z = z_new;
        dual_update(&mut self.state, &self.hz, mu1, mu2);

        let step = if delta == 0.0 {
            0.0
        } else if z_norm == 0.0 {
            f64::INFINITY
        } else {
            delta / z_norm
        };
        let primal_residual = diff_norm(&self.state.v, &self.hz);
        self.state.iteration = iter;
        self.state.steps.push(step);
        self.diagnostics.records.push(IterationRecord {
            iter,
            step,
            primal_residual,
            basis_dim: self.state.dim,
        });
        if !self.state.is_finite() || !primal_residual.is_finite() {
            return Err(Error::SolverAbort {
                iteration: iter,
                reason: "non-finite solver state".into(),
            });
        }

        let stop = if step < self.config.step_tolerance {
            Some(StopReason::Converged)
        } else if self.prev_step.is_some_and(|p| step > self.config.divergence_factor * p) {
            Some(StopReason::Diverging)
        } else if iter >= self.config.max_iters {
            Some(StopReason::MaxIterations)
        } else {
            None
        };
        self.prev_step = Some(step);
        if stop.is_some() {
            self.diagnostics.stop = stop;
            return Ok(stop);
        }

        if iter == self.config.halving_check_iter {
            let u_norm = norm(&self.state.u);
            let ratio = diff_norm(&self.state.z, &self.state.u) / u_norm.max(f64::MIN_POSITIVE);
            if ratio > self.config.halving_threshold {
                self.halve(iter, ratio)?;
            }
        }
        Ok(None)
    }

    fn halve(&mut self, iteration: usize, ratio: f64) -> Result<()> {
        let from = self.basis.dim();
        if from < 2 {
            return Err(Error::SolverAbort {
                iteration,
                reason: "basis halving requested at dimension 1".into(),
            });
        }
        let halved = crate::basis::halve_basis(&self.basis)?;
        let to = halved.dim();
        // Leading rows are kept, so re-projecting through the halved basis is truncation.
        self.state.truncate(to);
        self.blocks = self.blocks.truncated(to)?;
        self.basis = halved;
        self.hz = self.blocks.apply(&self.state.z);
        self.prev_step = None;
        self.diagnostics.halvings.push(HalvingEvent {
            iteration,
            from,
            to,
            ratio,
        });
        Ok(())
    }

    /// Steps until a stop criterion fires.
    pub fn run(&mut self) -> Result<StopReason> {
        loop {
            if let Some(stop) = self.step()? {
                return Ok(stop);
            }
        }
    }

    /// `lift(z)` in the observed window, response divided out, clamped at zero.
    pub fn estimate(&self) -> Result<HyperspectralCube> {
        let plane = self.crop.padded_len();
        let lifted = lift_planes(&self.state.z, plane, &self.basis);
        let out_len = self.crop.out_len();
        let c = self.basis.channels();
        let mut data = vec![0.0; out_len * c];
        for j in 0..c {
            let dst = &mut data[j * out_len..(j + 1) * out_len];
            self.crop.extract(&lifted[j * plane..(j + 1) * plane], dst);
            let scale = self.config.response_weights.as_ref().map_or(1.0, |w| 1.0 / w[j]);
            for v in dst.iter_mut() {
                *v = (*v * scale).max(0.0);
            }
        }
        HyperspectralCube::new(self.crop.out_height, self.crop.out_width, self.wavelengths.clone(), data)
    }

    pub fn into_diagnostics(self) -> Diagnostics {
        self.diagnostics
    }
}

/// Reconstructs the cube behind `stack`; see [`Admm`] for stepwise control.
pub fn run_admm(
    stack: &FocalStack,
    psfs: &PsfStack,
    basis: &SpectralBasis,
    config: &SolverConfig,
) -> Result<(HyperspectralCube, Diagnostics)> {
    let mut admm = Admm::new(stack, psfs, basis, config)?;
    admm.run()?;
    let cube = admm.estimate()?;
    Ok((cube, admm.into_diagnostics()))
}
