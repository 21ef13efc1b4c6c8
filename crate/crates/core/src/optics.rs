//! Two-lens chromatic optics: focal-length dispersion, focal shift, lens
//! positions, depth of field, and geometric defocus kernels.

use crate::error::{Error, Result};
use crate::types::{interp_linear, PsfStack};

/// Tabulated focal length of one lens as a function of wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct LensDispersion {
    wavelengths_nm: Vec<f64>,
    focal_lengths_mm: Vec<f64>,
}

impl LensDispersion {
    pub fn new(wavelengths_nm: Vec<f64>, focal_lengths_mm: Vec<f64>) -> Result<Self> {
        if wavelengths_nm.is_empty() || wavelengths_nm.len() != focal_lengths_mm.len() {
            return Err(Error::param("dispersion table needs matching, non-empty columns"));
        }
        if wavelengths_nm.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("dispersion wavelengths must be strictly increasing"));
        }
        if let Some(f) = focal_lengths_mm.iter().find(|f| !(**f > 0.0)) {
            return Err(Error::param(format!("focal length {f} must be positive")));
        }
        Ok(Self {
            wavelengths_nm,
            focal_lengths_mm,
        })
    }

    /// A dispersionless lens over `[min_nm, max_nm]`.
    pub fn constant(focal_length_mm: f64, min_nm: f64, max_nm: f64) -> Result<Self> {
        Self::new(vec![min_nm, max_nm], vec![focal_length_mm; 2])
    }

    pub fn wavelengths_nm(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    pub fn focal_lengths_mm(&self) -> &[f64] {
        &self.focal_lengths_mm
    }

    pub fn focal_length_at(&self, wavelength_nm: f64) -> Result<f64> {
        interp_linear(&self.wavelengths_nm, &self.focal_lengths_mm, wavelength_nm).ok_or(
            Error::OutOfCoverage {
                wavelength_nm,
                min_nm: self.wavelengths_nm[0],
                max_nm: *self.wavelengths_nm.last().unwrap(),
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpticalConfig {
    pub lens1: LensDispersion,
    pub lens2: LensDispersion,
    pub separation_mm: f64,
    pub aperture_number: f64,
    pub pixel_pitch_um: f64,
    pub sensor_pixels: (usize, usize),
    pub scene_distance_m: f64,
    pub reference_wavelength_nm: f64,
    /// Gaussian anti-aliasing applied to every kernel; 0 disables it.
    pub antialias_sigma_px: f64,
    pub max_kernel_size: usize,
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.separation_mm >= 0.0) {
            return Err(Error::param("lens separation must be non-negative"));
        }
        if !(self.aperture_number > 0.0) {
            return Err(Error::param("aperture number must be positive"));
        }
        if !(self.scene_distance_m > 0.0) {
            return Err(Error::param("scene distance must be positive"));
        }
        if !(self.pixel_pitch_um > 0.0) {
            return Err(Error::param("pixel pitch must be positive"));
        }
        if !(self.antialias_sigma_px >= 0.0) {
            return Err(Error::param("anti-alias sigma must be non-negative"));
        }
        Ok(())
    }

    /// Effective focal length of the pair at one wavelength.
    pub fn focal_length_at(&self, wavelength_nm: f64) -> Result<f64> {
        combined_focal_length(
            self.lens1.focal_length_at(wavelength_nm)?,
            self.lens2.focal_length_at(wavelength_nm)?,
            self.separation_mm,
        )
    }

    /// Blur radius in pixels per millimeter of axial defocus.
    ///
    /// Thin-lens geometry at the reference wavelength: aperture radius
    /// `f / (2 N)` over image distance `f s / (s - f)`, in pixel units.
    pub fn defocus_gain_px_per_mm(&self) -> Result<f64> {
        self.validate()?;
        let f = self.focal_length_at(self.reference_wavelength_nm)?;
        let s = self.scene_distance_m * 1e3;
        if s <= f {
            return Err(Error::Optics(format!(
                "scene distance {s} mm is inside the focal length {f} mm"
            )));
        }
        let image_distance = f * s / (s - f);
        let aperture_radius = f / (2.0 * self.aperture_number);
        Ok(aperture_radius / (image_distance * self.pixel_pitch_um * 1e-3))
    }
}

impl OpticalConfig {
    /// A 100 mm lens paired with a dispersive one so the combined focal length
    /// grows linearly from 50 mm by `shift_mm` across `[min_nm, max_nm]`.
    /// f/8, 5.86 µm pixels, scene at 2.8 m.
    pub fn linear_sweep(shift_mm: f64, min_nm: f64, max_nm: f64) -> Result<Self> {
        if !(max_nm > min_nm) {
            return Err(Error::Optics("empty wavelength range".into()));
        }
        let steps = (((max_nm - min_nm) / 10.0).ceil() as usize).max(1);
        let wl: Vec<f64> = (0..=steps)
            .map(|i| min_nm + (max_nm - min_nm) * i as f64 / steps as f64)
            .collect();
        let f2: Vec<f64> = wl
            .iter()
            .map(|w| {
                let f = 50.0 + shift_mm * (w - min_nm) / (max_nm - min_nm);
                1.0 / (1.0 / f - 1.0 / 100.0)
            })
            .collect();
        let config = OpticalConfig {
            lens1: LensDispersion::constant(100.0, min_nm, max_nm)?,
            lens2: LensDispersion::new(wl, f2)?,
            separation_mm: 0.0,
            aperture_number: 8.0,
            pixel_pitch_um: 5.86,
            sensor_pixels: (256, 256),
            scene_distance_m: 2.8,
            reference_wavelength_nm: min_nm,
            antialias_sigma_px: 0.5,
            max_kernel_size: 63,
        };
        config.validate()?;
        Ok(config)
    }
}

/// `1/f = 1/f₁ + 1/f₂ − d/(f₁ f₂)`. An infinite focal length is a powerless element.
pub fn combined_focal_length(f1_mm: f64, f2_mm: f64, d_mm: f64) -> Result<f64> {
    if !(f1_mm > 0.0) || !(f2_mm > 0.0) {
        return Err(Error::Optics(format!(
            "focal lengths must be positive, got {f1_mm} and {f2_mm}"
        )));
    }
    let power = 1.0 / f1_mm + 1.0 / f2_mm - d_mm / (f1_mm * f2_mm);
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::Optics(format!(
            "combined power {power} is not positive (afocal or diverging pair)"
        )));
    }
    Ok(1.0 / power)
}

/// Axial focal shift `f(λ) − f(λ_ref)` in mm at each wavelength.
pub fn focal_shift_curve(config: &OpticalConfig, wavelengths_nm: &[f64]) -> Result<Vec<f64>> {
    let reference = config.focal_length_at(config.reference_wavelength_nm)?;
    wavelengths_nm
        .iter()
        .map(|&w| Ok(config.focal_length_at(w)? - reference))
        .collect()
}

/// Lens positions whose in-focus shifts evenly cover the shift range.
///
/// A lens position is expressed as the focal shift it brings into focus, so
/// positions and shifts share units and origin.
pub fn select_lens_positions(shift_curve_mm: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::param("need at least one lens position"));
    }
    if shift_curve_mm.is_empty() || shift_curve_mm.iter().any(|s| !s.is_finite()) {
        return Err(Error::param("shift curve must be non-empty and finite"));
    }
    let lo = shift_curve_mm.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = shift_curve_mm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if n == 1 {
        return Ok(vec![0.5 * (lo + hi)]);
    }
    if !(hi > lo) {
        return Err(Error::Optics(
            "focal shift curve is constant; lens positions cannot encode wavelength".into(),
        ));
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect())
}

/// `DoF ≈ 2 N c s² / f²` (all lengths in meters).
pub fn depth_of_field(aperture_number: f64, coc_m: f64, s_m: f64, f_m: f64) -> Result<f64> {
    if !(aperture_number > 0.0) || !(coc_m >= 0.0) || !(s_m > 0.0) || !(f_m > 0.0) {
        return Err(Error::param("depth of field inputs must be positive"));
    }
    Ok(2.0 * aperture_number * coc_m * s_m * s_m / (f_m * f_m))
}

/// A square, odd-sized, unit-sum blur kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    /// `sqrt(Σ k · (dx² + dy²))` about the center.
    pub fn second_moment_radius(&self) -> f64 {
        let h = (self.size / 2) as f64;
        let mut acc = 0.0;
        for a in 0..self.size {
            for b in 0..self.size {
                let (dy, dx) = (a as f64 - h, b as f64 - h);
                acc += self.data[a * self.size + b] * (dy * dy + dx * dx);
            }
        }
        acc.sqrt()
    }
}

const DISK_SUBSAMPLES: usize = 16;

/// Blur-disk radius in pixels for `wavelength_nm` seen at `lens_position_mm`.
pub fn defocus_radius_px(wavelength_nm: f64, lens_position_mm: f64, config: &OpticalConfig) -> Result<f64> {
    let shift = focal_shift_curve(config, &[wavelength_nm])?[0];
    Ok(config.defocus_gain_px_per_mm()? * (lens_position_mm - shift).abs())
}

fn required_size(radius_px: f64, sigma_px: f64) -> usize {
    2 * (radius_px + 3.0 * sigma_px).ceil() as usize + 1
}

fn rasterize(radius_px: f64, sigma_px: f64, size: usize) -> Vec<f64> {
    let h = (size / 2) as isize;
    let s = DISK_SUBSAMPLES;
    let r2 = radius_px * radius_px;
    let mut disk = vec![0.0; size * size];
    for a in 0..size {
        for b in 0..size {
            let (cy, cx) = ((a as isize - h) as f64, (b as isize - h) as f64);
            let mut hits = 0usize;
            for u in 0..s {
                let y = cy + (u as f64 + 0.5) / s as f64 - 0.5;
                for v in 0..s {
                    let x = cx + (v as f64 + 0.5) / s as f64 - 0.5;
                    if y * y + x * x <= r2 {
                        hits += 1;
                    }
                }
            }
            disk[a * size + b] = hits as f64;
        }
    }
    if disk.iter().all(|v| *v == 0.0) {
        disk[(size * size) / 2] = 1.0;
    }

    let blurred = if sigma_px > 0.0 {
        let reach = (3.0 * sigma_px).ceil() as isize;
        let taps: Vec<f64> = (-reach..=reach)
            .map(|t| (-(t * t) as f64 / (2.0 * sigma_px * sigma_px)).exp())
            .collect();
        let norm: f64 = taps.iter().sum();
        let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
        let n = size as isize;
        let mut tmp = vec![0.0; size * size];
        for a in 0..n {
            for b in 0..n {
                let mut acc = 0.0;
                for (ti, t) in taps.iter().enumerate() {
                    let bb = b + ti as isize - reach;
                    if (0..n).contains(&bb) {
                        acc += t * disk[(a * n + bb) as usize];
                    }
                }
                tmp[(a * n + b) as usize] = acc;
            }
        }
        let mut out = vec![0.0; size * size];
        for a in 0..n {
            for b in 0..n {
                let mut acc = 0.0;
                for (ti, t) in taps.iter().enumerate() {
                    let aa = a + ti as isize - reach;
                    if (0..n).contains(&aa) {
                        acc += t * tmp[(aa * n + b) as usize];
                    }
                }
                out[(a * n + b) as usize] = acc;
            }
        }
        out
    } else {
        disk
    };

    // The model is symmetric under the dihedral group of the square; read every
    // sample from its canonical octant so rotations and mirrors match bit for bit.
    let mut sym = vec![0.0; size * size];
    for a in 0..size {
        for b in 0..size {
            let dy = (a as isize - h).unsigned_abs();
            let dx = (b as isize - h).unsigned_abs();
            let (p, q) = (dy.max(dx), dy.min(dx));
            sym[a * size + b] = blurred[(h as usize + p) * size + h as usize + q];
        }
    }
    let total: f64 = sym.iter().sum();
    sym.iter_mut().for_each(|v| *v /= total);
    sym
}

/// Anti-aliased uniform blur disk for one wavelength and lens position, at
/// the smallest odd size that holds it.
pub fn synthesize_psf(wavelength_nm: f64, lens_position_mm: f64, config: &OpticalConfig) -> Result<Kernel> {
    let radius = defocus_radius_px(wavelength_nm, lens_position_mm, config)?;
    let size = required_size(radius, config.antialias_sigma_px);
    if size > config.max_kernel_size {
        return Err(Error::Optics(format!(
            "kernel for {wavelength_nm} nm at {lens_position_mm} mm needs size {size}, maximum is {}",
            config.max_kernel_size
        )));
    }
    synthesize_psf_sized(wavelength_nm, lens_position_mm, config, size)
}

/// As [`synthesize_psf`], rendered on a caller-chosen odd grid.
pub fn synthesize_psf_sized(
    wavelength_nm: f64,
    lens_position_mm: f64,
    config: &OpticalConfig,
    size: usize,
) -> Result<Kernel> {
    if size % 2 == 0 {
        return Err(Error::param(format!("kernel size {size} must be odd")));
    }
    let radius = defocus_radius_px(wavelength_nm, lens_position_mm, config)?;
    if required_size(radius, config.antialias_sigma_px) > size {
        return Err(Error::Optics(format!(
            "blur radius {radius:.2} px does not fit a {size}x{size} kernel"
        )));
    }
    Ok(Kernel {
        size,
        data: rasterize(radius, config.antialias_sigma_px, size),
    })
}

/// Kernels for every (lens position, wavelength) pair at one shared size.
pub fn build_psf_stack(
    config: &OpticalConfig,
    lens_positions_mm: &[f64],
    wavelengths_nm: &[f64],
) -> Result<PsfStack> {
    let mut size = 1;
    for &z in lens_positions_mm {
        for &w in wavelengths_nm {
            let r = defocus_radius_px(w, z, config)?;
            size = size.max(required_size(r, config.antialias_sigma_px));
        }
    }
    if size > config.max_kernel_size {
        return Err(Error::Optics(format!(
            "stack needs kernel size {size}, maximum is {}",
            config.max_kernel_size
        )));
    }
    let mut kernels = Vec::with_capacity(lens_positions_mm.len() * wavelengths_nm.len() * size * size);
    for &z in lens_positions_mm {
        for &w in wavelengths_nm {
            kernels.extend(synthesize_psf_sized(w, z, config, size)?.data);
        }
    }
    PsfStack::new(size, lens_positions_mm.to_vec(), wavelengths_nm.to_vec(), kernels)
}
