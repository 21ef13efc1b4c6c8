//! The measurement operator `y = C H x`, its adjoint, and photon-noise simulation.
//!
//! Each block of `H` is a linear 2D convolution. It is realized as a circular
//! convolution on a grid zero-padded by `(K - 1) / 2` on every side, which is
//! exactly the full linear convolution. `C` keeps a window of that grid.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::types::{FocalStack, HyperspectralCube, PsfStack};

/// The crop operator `C`: which window of the padded grid is observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropSpec {
    pub padded_height: usize,
    pub padded_width: usize,
    pub out_height: usize,
    pub out_width: usize,
    pub offset: (usize, usize),
}

impl CropSpec {
    pub fn new(
        padded_height: usize,
        padded_width: usize,
        out_height: usize,
        out_width: usize,
        offset: (usize, usize),
    ) -> Result<Self> {
        if offset.0 + out_height > padded_height || offset.1 + out_width > padded_width {
            return Err(Error::shape(format!(
                "crop window {out_height}x{out_width} at {offset:?} exceeds {padded_height}x{padded_width}"
            )));
        }
        Ok(Self {
            padded_height,
            padded_width,
            out_height,
            out_width,
            offset,
        })
    }

    /// Centered `height × width` window of the grid padded for kernel size `k`.
    pub fn centered(height: usize, width: usize, k: usize) -> Self {
        let h = k / 2;
        Self {
            padded_height: height + k - 1,
            padded_width: width + k - 1,
            out_height: height,
            out_width: width,
            offset: (h, h),
        }
    }

    /// No cropping: the whole circulant output is observed.
    pub fn full(height: usize, width: usize, k: usize) -> Self {
        Self {
            padded_height: height + k - 1,
            padded_width: width + k - 1,
            out_height: height + k - 1,
            out_width: width + k - 1,
            offset: (0, 0),
        }
    }

    pub fn padded_len(&self) -> usize {
        self.padded_height * self.padded_width
    }

    pub fn out_len(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Whether padded-grid index `(r, c)` lies inside the window.
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.offset.0
            && r < self.offset.0 + self.out_height
            && c >= self.offset.1
            && c < self.offset.1 + self.out_width
    }

    /// `C`: copy the window out of one padded plane.
    pub fn extract(&self, padded: &[f64], out: &mut [f64]) {
        for r in 0..self.out_height {
            let src = (r + self.offset.0) * self.padded_width + self.offset.1;
            out[r * self.out_width..(r + 1) * self.out_width]
                .copy_from_slice(&padded[src..src + self.out_width]);
        }
    }

    /// `Cᵀ`: place one window plane into a zeroed padded plane.
    pub fn embed(&self, window: &[f64], padded: &mut [f64]) {
        padded.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.out_height {
            let dst = (r + self.offset.0) * self.padded_width + self.offset.1;
            padded[dst..dst + self.out_width]
                .copy_from_slice(&window[r * self.out_width..(r + 1) * self.out_width]);
        }
    }
}

fn check_kernel_size(k: usize) -> Result<()> {
    if k % 2 == 0 {
        return Err(Error::param(format!("kernel size {k} must be odd")));
    }
    Ok(())
}

fn pad_plane(plane: &[f64], height: usize, width: usize, k: usize) -> Vec<f64> {
    let h = k / 2;
    let pw = width + k - 1;
    let mut out = vec![0.0; (height + k - 1) * pw];
    for r in 0..height {
        let dst = (r + h) * pw + h;
        out[dst..dst + width].copy_from_slice(&plane[r * width..(r + 1) * width]);
    }
    out
}

/// Zero-pads every channel by `(k - 1) / 2` on each side.
pub fn pad_cube(cube: &HyperspectralCube, k: usize) -> Result<HyperspectralCube> {
    check_kernel_size(k)?;
    let (h, w) = (cube.height(), cube.width());
    let data = (0..cube.channels())
        .flat_map(|j| pad_plane(cube.plane(j), h, w, k))
        .collect();
    HyperspectralCube::new(h + k - 1, w + k - 1, cube.wavelengths_nm().to_vec(), data)
}

/// Transfer functions of every kernel on a padded grid, indexed `i * C + j`.
pub fn kernel_otfs(psfs: &PsfStack, fft: &Fft2) -> Vec<Vec<Complex64>> {
    let k = psfs.kernel_size();
    (0..psfs.count() * psfs.channels())
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / psfs.channels(), idx % psfs.channels());
            fft.kernel_otf(psfs.kernel(i, j), k)
        })
        .collect()
}

fn check_crop_matches(crop: &CropSpec, height: usize, width: usize, k: usize) -> Result<()> {
    if crop.padded_height != height + k - 1 || crop.padded_width != width + k - 1 {
        return Err(Error::shape(format!(
            "crop grid {}x{} does not match {height}x{width} padded for K={k}",
            crop.padded_height, crop.padded_width
        )));
    }
    if crop.offset.0 + crop.out_height > crop.padded_height
        || crop.offset.1 + crop.out_width > crop.padded_width
    {
        return Err(Error::shape("crop window exceeds padded grid"));
    }
    Ok(())
}

/// `y_i = C Σ_j K(z_i, λ_j) ⊛ x_j` for every lens position.
pub fn apply_forward(cube: &HyperspectralCube, psfs: &PsfStack, crop: &CropSpec) -> Result<FocalStack> {
    if cube.channels() != psfs.channels() {
        return Err(Error::shape(format!(
            "cube has {} channels, psfs have {}",
            cube.channels(),
            psfs.channels()
        )));
    }
    let k = psfs.kernel_size();
    let (h, w) = (cube.height(), cube.width());
    check_crop_matches(crop, h, w, k)?;
    let fft = Fft2::new(crop.padded_height, crop.padded_width);
    let otfs = kernel_otfs(psfs, &fft);
    let spectra: Vec<Vec<Complex64>> = (0..cube.channels())
        .into_par_iter()
        .map(|j| fft.forward_real(&pad_plane(cube.plane(j), h, w, k)))
        .collect();

    let c = cube.channels();
    let planes: Vec<Vec<f64>> = (0..psfs.count())
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![Complex64::new(0.0, 0.0); fft.len()];
            for j in 0..c {
                let otf = &otfs[i * c + j];
                for ((a, x), t) in acc.iter_mut().zip(&spectra[j]).zip(otf) {
                    *a += x * t;
                }
            }
            let full = fft.inverse_real(acc);
            let mut out = vec![0.0; crop.out_len()];
            crop.extract(&full, &mut out);
            out
        })
        .collect();
    FocalStack::new(
        crop.out_height,
        crop.out_width,
        psfs.lens_positions_mm().to_vec(),
        planes.concat(),
    )
}

/// `Hᵀ Cᵀ y`: embed, correlate with each kernel, sum over measurements, and
/// take the unpadded window.
pub fn apply_adjoint(stack: &FocalStack, psfs: &PsfStack, crop: &CropSpec) -> Result<HyperspectralCube> {
    if stack.count() != psfs.count() {
        return Err(Error::shape(format!(
            "stack has {} measurements, psfs have {}",
            stack.count(),
            psfs.count()
        )));
    }
    if stack.height() != crop.out_height || stack.width() != crop.out_width {
        return Err(Error::shape("stack does not match crop window"));
    }
    let k = psfs.kernel_size();
    if crop.padded_height < k || crop.padded_width < k {
        return Err(Error::shape("padded grid smaller than kernel"));
    }
    let (h, w) = (crop.padded_height + 1 - k, crop.padded_width + 1 - k);
    check_crop_matches(crop, h, w, k)?;
    let fft = Fft2::new(crop.padded_height, crop.padded_width);
    let otfs = kernel_otfs(psfs, &fft);
    let spectra: Vec<Vec<Complex64>> = (0..stack.count())
        .into_par_iter()
        .map(|i| {
            let mut padded = vec![0.0; crop.padded_len()];
            crop.embed(stack.plane(i), &mut padded);
            fft.forward_real(&padded)
        })
        .collect();

    let c = psfs.channels();
    let half = k / 2;
    let planes: Vec<Vec<f64>> = (0..c)
        .into_par_iter()
        .map(|j| {
            let mut acc = vec![Complex64::new(0.0, 0.0); fft.len()];
            for (i, y) in spectra.iter().enumerate() {
                let otf = &otfs[i * c + j];
                for ((a, yv), t) in acc.iter_mut().zip(y).zip(otf) {
                    *a += yv * t.conj();
                }
            }
            let full = fft.inverse_real(acc);
            let mut out = Vec::with_capacity(h * w);
            for r in 0..h {
                let src = (r + half) * crop.padded_width + half;
                out.extend_from_slice(&full[src..src + w]);
            }
            out
        })
        .collect();
    HyperspectralCube::new(h, w, psfs.wavelengths_nm().to_vec(), planes.concat())
}

/// Light efficiency from component transmissions: `(per_exposure, effective)`.
///
/// `effective` is the product of all transmissions; the `n` exposures share the
/// photon budget, so each one receives `effective / n`.
pub fn light_efficiency(component_efficiencies: &[f64], n_measurements: usize) -> Result<(f64, f64)> {
    if n_measurements == 0 {
        return Err(Error::param("measurement count must be at least 1"));
    }
    if let Some(e) = component_efficiencies.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
        return Err(Error::param(format!("efficiency {e} outside (0, 1]")));
    }
    let effective: f64 = component_efficiencies.iter().product();
    Ok((effective / n_measurements as f64, effective))
}

/// Photon budget and noise settings for [`simulate_measurement`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureModel {
    /// Visible-band photon flux, photons m⁻² s⁻¹.
    pub photon_flux: f64,
    /// Exposure time summed over all measurements, seconds.
    pub total_exposure_s: f64,
    pub pixel_area_m2: f64,
    /// Product of the optical transmissions along the path.
    pub light_efficiency: f64,
    /// Gaussian read noise in electrons; zero disables it.
    pub read_noise_e: f64,
    pub seed: u64,
}

impl ExposureModel {
    /// Brightly lit scene, five-second total exposure, two 0.99 lenses.
    pub fn bright(pixel_pitch_um: f64, seed: u64) -> Self {
        let p = pixel_pitch_um * 1e-6;
        Self {
            photon_flux: 7.5e17,
            total_exposure_s: 5.0,
            pixel_area_m2: p * p,
            light_efficiency: 0.99 * 0.99,
            read_noise_e: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("photon_flux", self.photon_flux),
            ("total_exposure_s", self.total_exposure_s),
            ("pixel_area_m2", self.pixel_area_m2),
            ("light_efficiency", self.light_efficiency),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.read_noise_e >= 0.0) {
            return Err(Error::param("read noise must be non-negative"));
        }
        Ok(())
    }

    /// Expected photon count per unit of normalized measurement, for one of `n` exposures.
    pub fn photons_per_unit(&self, n_measurements: usize) -> f64 {
        self.photon_flux
            * self.pixel_area_m2
            * (self.total_exposure_s / n_measurements as f64)
            * self.light_efficiency
    }
}

/// Random source for one measurement plane: ChaCha8 keyed by the seed, with the
/// measurement index as stream and the pixel index selecting the block position.
struct PixelRng(ChaCha8Rng);

impl PixelRng {
    const WORDS_PER_PIXEL: u128 = 8;

    fn new(seed: u64, measurement: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(measurement as u64);
        Self(rng)
    }

    fn seek(&mut self, pixel: usize) {
        self.0.set_word_pos(pixel as u128 * Self::WORDS_PER_PIXEL);
    }

    /// Uniform in `[0, 1)`.
    fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Poisson draw: CDF inversion below 10, rounded normal approximation above.
fn sample_poisson(lambda: f64, rng: &mut PixelRng) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    if lambda < 10.0 {
        let u = rng.uniform();
        let mut k = 0u32;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        while u > cdf && k < 200 {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
        }
        k as f64
    } else {
        (lambda + lambda.sqrt() * rng.normal()).round().max(0.0)
    }
}

/// Forward model plus shot noise, returned in normalized units.
///
/// `response` weights, when given, multiply each channel before the optics
/// (sensor and filter efficiency). The result is a deterministic function of
/// the inputs and `exposure.seed`.
pub fn simulate_measurement(
    cube: &HyperspectralCube,
    psfs: &PsfStack,
    crop: &CropSpec,
    exposure: &ExposureModel,
    response: Option<&[f64]>,
) -> Result<FocalStack> {
    exposure.validate()?;
    let clean = match response {
        Some(weights) => {
            if weights.len() != cube.channels() {
                return Err(Error::shape("response weights do not match channels"));
            }
            let n = cube.height() * cube.width();
            let data = cube
                .data()
                .iter()
                .enumerate()
                .map(|(idx, v)| v * weights[idx / n.max(1)])
                .collect();
            let weighted = HyperspectralCube::new(
                cube.height(),
                cube.width(),
                cube.wavelengths_nm().to_vec(),
                data,
            )?;
            apply_forward(&weighted, psfs, crop)?
        }
        None => apply_forward(cube, psfs, crop)?,
    };
    let scale = exposure.photons_per_unit(clean.count());
    let plane_len = clean.height() * clean.width();
    let planes: Vec<Vec<f64>> = (0..clean.count())
        .into_par_iter()
        .map(|i| {
            let mut rng = PixelRng::new(exposure.seed, i);
            clean
                .plane(i)
                .iter()
                .enumerate()
                .map(|(p, &y)| {
                    rng.seek(p);
                    let mut count = sample_poisson(y.max(0.0) * scale, &mut rng);
                    if exposure.read_noise_e > 0.0 {
                        count += exposure.read_noise_e * rng.normal();
                    }
                    count / scale
                })
                .collect()
        })
        .collect();
    debug_assert!(planes.iter().all(|p| p.len() == plane_len));
    FocalStack::new(
        clean.height(),
        clean.width(),
        clean.lens_positions_mm().to_vec(),
        planes.concat(),
    )
}
