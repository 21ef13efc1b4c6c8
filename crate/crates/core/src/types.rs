//! Shared immutable containers.
//!
//! Every container stores its samples plane-major: plane `p`, row `r`, column `c`
//! lives at `(p * height + r) * width + c`. Constructors run the same checks as
//! [`Validate::validate`], so a value that exists is a valid value.

use crate::error::{Error, Result, ValidationReport, Violation};

/// Tolerance on per-kernel energy normalization.
pub const KERNEL_SUM_TOL: f64 = 1e-9;
/// Tolerance on `B Bᵀ = I` for spectral bases.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

pub trait Validate {
    const NAME: &'static str;

    fn violations(&self) -> Vec<Violation>;

    fn validate(&self) -> Result<()> {
        into_result(Self::NAME, self.violations())
    }
}

fn into_result(container: &'static str, violations: Vec<Violation>) -> Result<()> {
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(ValidationReport {
            container,
            violations,
        }))
    }
}

fn check_len(out: &mut Vec<Violation>, what: &str, expected: usize, found: usize) {
    if expected != found {
        out.push(Violation::DimensionMismatch {
            what: what.to_string(),
            expected,
            found,
        });
    }
}

fn check_increasing(out: &mut Vec<Violation>, what: &str, xs: &[f64]) {
    for (i, x) in xs.iter().enumerate() {
        if !x.is_finite() {
            out.push(Violation::OutOfRange {
                what: format!("{what}[{i}]"),
                value: *x,
            });
        }
    }
    if let Some(i) = xs.windows(2).position(|w| w[1] <= w[0]) {
        out.push(Violation::Unsorted {
            what: what.to_string(),
            index: i + 1,
        });
    }
}

fn check_planes_finite(out: &mut Vec<Violation>, height: usize, width: usize, data: &[f64]) {
    let plane_len = (height * width).max(1);
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            let plane = i / plane_len;
            let rem = i % plane_len;
            out.push(Violation::NonFinite {
                plane,
                row: rem / width.max(1),
                col: rem % width.max(1),
                value: *v,
            });
        }
    }
}

/// Scene radiance `X`: `height × width × channels`, one plane per wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperspectralCube {
    height: usize,
    width: usize,
    wavelengths_nm: Vec<f64>,
    data: Vec<f64>,
}

impl HyperspectralCube {
    pub fn new(height: usize, width: usize, wavelengths_nm: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        let cube = Self {
            height,
            width,
            wavelengths_nm,
            data,
        };
        cube.validate()?;
        Ok(cube)
    }

    pub fn zeros(height: usize, width: usize, wavelengths_nm: Vec<f64>) -> Result<Self> {
        let n = height * width * wavelengths_nm.len();
        Self::new(height, width, wavelengths_nm, vec![0.0; n])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn wavelengths_nm(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    /// Spectrum of one pixel, gathered across planes.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f64> {
        let n = self.height * self.width;
        let idx = row * self.width + col;
        (0..self.channels()).map(|j| self.data[j * n + idx]).collect()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

impl Validate for HyperspectralCube {
    const NAME: &'static str = "hyperspectral cube";

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        check_increasing(&mut out, "wavelengths_nm", &self.wavelengths_nm);
        check_len(
            &mut out,
            "data length",
            self.height * self.width * self.wavelengths_nm.len(),
            self.data.len(),
        );
        check_planes_finite(&mut out, self.height, self.width, &self.data);
        out
    }
}

/// Grayscale measurements `Y`, one plane per lens position.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalStack {
    height: usize,
    width: usize,
    lens_positions_mm: Vec<f64>,
    data: Vec<f64>,
}

impl FocalStack {
    pub fn new(height: usize, width: usize, lens_positions_mm: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        let stack = Self {
            height,
            width,
            lens_positions_mm,
            data,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.lens_positions_mm.len()
    }

    pub fn lens_positions_mm(&self) -> &[f64] {
        &self.lens_positions_mm
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, index: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[index * n..(index + 1) * n]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

impl Validate for FocalStack {
    const NAME: &'static str = "focal stack";

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.lens_positions_mm.is_empty() {
            out.push(Violation::DimensionMismatch {
                what: "measurement count (at least)".into(),
                expected: 1,
                found: 0,
            });
        }
        check_increasing(&mut out, "lens_positions_mm", &self.lens_positions_mm);
        check_len(
            &mut out,
            "data length",
            self.height * self.width * self.lens_positions_mm.len(),
            self.data.len(),
        );
        check_planes_finite(&mut out, self.height, self.width, &self.data);
        out
    }
}

/// Calibration kernels `K(z_i, λ_j)`, stored in `(i, j, row, col)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfStack {
    kernel_size: usize,
    lens_positions_mm: Vec<f64>,
    wavelengths_nm: Vec<f64>,
    kernels: Vec<f64>,
}

impl PsfStack {
    pub fn new(
        kernel_size: usize,
        lens_positions_mm: Vec<f64>,
        wavelengths_nm: Vec<f64>,
        kernels: Vec<f64>,
    ) -> Result<Self> {
        let psfs = Self {
            kernel_size,
            lens_positions_mm,
            wavelengths_nm,
            kernels,
        };
        psfs.validate()?;
        Ok(psfs)
    }

    /// Ingests measured kernels: negative samples left over from background
    /// subtraction are zeroed, then each kernel is scaled to unit sum.
    pub fn from_measured(
        kernel_size: usize,
        lens_positions_mm: Vec<f64>,
        wavelengths_nm: Vec<f64>,
        mut kernels: Vec<f64>,
    ) -> Result<Self> {
        let kk = kernel_size * kernel_size;
        if kk == 0 || kernels.len() % kk != 0 {
            return Err(Error::shape(format!(
                "kernel buffer of {} samples is not a multiple of {kernel_size}x{kernel_size}",
                kernels.len()
            )));
        }
        for (idx, k) in kernels.chunks_mut(kk).enumerate() {
            for v in k.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let sum: f64 = k.iter().sum();
            if !(sum > 0.0) || !sum.is_finite() {
                return Err(Error::param(format!("kernel {idx} has no positive energy")));
            }
            k.iter_mut().for_each(|v| *v /= sum);
        }
        Self::new(kernel_size, lens_positions_mm, wavelengths_nm, kernels)
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn count(&self) -> usize {
        self.lens_positions_mm.len()
    }

    pub fn channels(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn lens_positions_mm(&self) -> &[f64] {
        &self.lens_positions_mm
    }

    pub fn wavelengths_nm(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    pub fn kernels(&self) -> &[f64] {
        &self.kernels
    }

    pub fn kernel(&self, measurement: usize, channel: usize) -> &[f64] {
        let kk = self.kernel_size * self.kernel_size;
        let start = (measurement * self.channels() + channel) * kk;
        &self.kernels[start..start + kk]
    }
}

impl Validate for PsfStack {
    const NAME: &'static str = "psf stack";

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.kernel_size % 2 == 0 {
            out.push(Violation::OutOfRange {
                what: "kernel_size (must be odd)".into(),
                value: self.kernel_size as f64,
            });
        }
        check_increasing(&mut out, "lens_positions_mm", &self.lens_positions_mm);
        check_increasing(&mut out, "wavelengths_nm", &self.wavelengths_nm);
        let kk = self.kernel_size * self.kernel_size;
        check_len(
            &mut out,
            "kernel buffer length",
            self.count() * self.channels() * kk,
            self.kernels.len(),
        );
        if !out.is_empty() || kk == 0 {
            return out;
        }
        for (idx, k) in self.kernels.chunks(kk).enumerate() {
            let (i, j) = (idx / self.channels(), idx % self.channels());
            if let Some((p, v)) = k.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
                out.push(Violation::Negative {
                    what: format!("kernel ({i}, {j})"),
                    index: p,
                    value: *v,
                });
                continue;
            }
            let sum: f64 = k.iter().sum();
            if (sum - 1.0).abs() > KERNEL_SUM_TOL {
                out.push(Violation::Unnormalized {
                    measurement: i,
                    channel: j,
                    sum,
                });
            }
        }
        out
    }
}

/// Orthonormal spectral eigenvectors: `dim × channels`, rows in descending
/// singular-value order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    channels: usize,
    rows: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(channels: usize, rows: Vec<f64>) -> Result<Self> {
        let basis = Self { channels, rows };
        basis.validate()?;
        Ok(basis)
    }

    /// The `C × C` identity basis (no spectral compression).
    pub fn identity(channels: usize) -> Self {
        let mut rows = vec![0.0; channels * channels];
        for j in 0..channels {
            rows[j * channels + j] = 1.0;
        }
        Self { channels, rows }
    }

    pub fn dim(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.rows.len() / self.channels
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.channels..(k + 1) * self.channels]
    }

    /// Largest absolute entry of `B Bᵀ − I`.
    pub fn orthonormality_error(&self) -> f64 {
        let v = self.dim();
        let mut worst = 0.0f64;
        for a in 0..v {
            for b in 0..v {
                let dot: f64 = self.row(a).iter().zip(self.row(b)).map(|(x, y)| x * y).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

impl Validate for SpectralBasis {
    const NAME: &'static str = "spectral basis";

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.channels == 0 || self.rows.len() % self.channels != 0 {
            out.push(Violation::DimensionMismatch {
                what: "basis entries (multiple of channels)".into(),
                expected: self.channels,
                found: self.rows.len(),
            });
            return out;
        }
        if self.dim() == 0 || self.dim() > self.channels {
            out.push(Violation::OutOfRange {
                what: "basis dim (1..=channels)".into(),
                value: self.dim() as f64,
            });
        }
        if self.rows.iter().any(|v| !v.is_finite()) {
            out.push(Violation::OutOfRange {
                what: "basis entry".into(),
                value: f64::NAN,
            });
            return out;
        }
        let err = self.orthonormality_error();
        if err >= ORTHONORMAL_TOL {
            out.push(Violation::OutOfRange {
                what: "|B Bᵀ - I|_max".into(),
                value: err,
            });
        }
        out
    }
}

/// Multiplicative sensor/filter efficiency as a function of wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResponse {
    wavelengths_nm: Vec<f64>,
    response: Vec<f64>,
}

impl SpectralResponse {
    pub fn new(wavelengths_nm: Vec<f64>, response: Vec<f64>) -> Result<Self> {
        let r = Self {
            wavelengths_nm,
            response,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn flat(min_nm: f64, max_nm: f64) -> Result<Self> {
        Self::new(vec![min_nm, max_nm], vec![1.0, 1.0])
    }

    pub fn wavelengths_nm(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }
}

impl Validate for SpectralResponse {
    const NAME: &'static str = "spectral response";

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.wavelengths_nm.is_empty() {
            out.push(Violation::DimensionMismatch {
                what: "table rows (at least)".into(),
                expected: 1,
                found: 0,
            });
        }
        check_increasing(&mut out, "wavelengths_nm", &self.wavelengths_nm);
        check_len(
            &mut out,
            "response length",
            self.wavelengths_nm.len(),
            self.response.len(),
        );
        for (i, r) in self.response.iter().enumerate() {
            if !(0.0..=1.0).contains(r) {
                out.push(Violation::OutOfRange {
                    what: format!("response[{i}]"),
                    value: *r,
                });
            }
        }
        out
    }
}

/// Linear interpolation in an ascending table; `None` outside `[xs[0], xs[last]]`.
pub(crate) fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let (first, last) = (*xs.first()?, *xs.last()?);
    if !(x >= first && x <= last) {
        return None;
    }
    let hi = xs.partition_point(|&t| t < x);
    if hi == 0 {
        return Some(ys[0]);
    }
    if xs[hi] == x {
        return Some(ys[hi]);
    }
    let lo = hi - 1;
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    Some(ys[lo] + t * (ys[hi] - ys[lo]))
}

/// Per-channel weights of `resp` at `wavelengths_nm`, linearly interpolated.
pub fn resample_response(resp: &SpectralResponse, wavelengths_nm: &[f64]) -> Result<Vec<f64>> {
    let xs = resp.wavelengths_nm();
    wavelengths_nm
        .iter()
        .map(|&w| {
            interp_linear(xs, resp.response(), w).ok_or(Error::OutOfCoverage {
                wavelength_nm: w,
                min_nm: xs[0],
                max_nm: xs[xs.len() - 1],
            })
        })
        .collect()
}
