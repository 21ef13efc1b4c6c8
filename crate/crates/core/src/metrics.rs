//! Reconstruction quality metrics and RGB renderings.
//!
//! Every reduction goes through [`pairwise_sum`], so results do not depend on
//! how work is split across threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{interp_linear, FocalStack, HyperspectralCube};

/// Deterministic pairwise summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BASE: usize = 128;
    if values.len() <= BASE {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        pairwise_sum(values) / values.len() as f64
    }
}

fn same_shape(a: &HyperspectralCube, b: &HyperspectralCube) -> Result<()> {
    if (a.height(), a.width(), a.channels()) != (b.height(), b.width(), b.channels()) {
        return Err(Error::Shape(format!(
            "cubes differ: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all voxels; `+∞` when identical.
pub fn psnr(recon: &HyperspectralCube, truth: &HyperspectralCube, peak: f64) -> Result<f64> {
    same_shape(recon, truth)?;
    if !(peak > 0.0) {
        return Err(Error::Parameter(format!("peak must be positive, got {peak}")));
    }
    let sq: Vec<f64> = recon
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    let mse = mean(&sq);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Normalized 1D Gaussian of odd length `size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable filtering keeping only fully covered positions.
fn filter_valid(img: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|t| g[t] * img[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|t| g[t] * rows[(r + t) * ow + c]).sum();
        }
    }
    out
}

/// SSIM map mean for one plane. Images smaller than the window use the
/// largest odd window that fits.
pub fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let mut k = SSIM_WINDOW.min(h.min(w));
    if k % 2 == 0 {
        k -= 1;
    }
    let g = gaussian_window(k, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mx = filter_valid(x, h, w, &g);
    let my = filter_valid(y, h, w, &g);
    let mxx = filter_valid(&prod(x, x), h, w, &g);
    let myy = filter_valid(&prod(y, y), h, w, &g);
    let mxy = filter_valid(&prod(x, y), h, w, &g);
    let map: Vec<f64> = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let sxx = mxx[i] - ux * ux;
            let syy = myy[i] - uy * uy;
            let sxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * sxy + c2)) / ((ux * ux + uy * uy + c1) * (sxx + syy + c2))
        })
        .collect();
    mean(&map)
}

/// Mean SSIM over channels: Gaussian window 11, σ = 1.5, dynamic range 1.
pub fn ssim(recon: &HyperspectralCube, truth: &HyperspectralCube) -> Result<f64> {
    same_shape(recon, truth)?;
    let (h, w) = (recon.height(), recon.width());
    let per: Vec<f64> = (0..recon.channels())
        .into_par_iter()
        .map(|j| ssim_plane(recon.plane(j), truth.plane(j), h, w))
        .collect();
    Ok(mean(&per))
}

/// Spectra with norm below this are left out of [`sam`].
pub const SAM_MIN_NORM: f64 = 1e-8;

/// Mean spectral angle in degrees.
pub fn sam(recon: &HyperspectralCube, truth: &HyperspectralCube) -> Result<f64> {
    same_shape(recon, truth)?;
    let n = recon.height() * recon.width();
    let c = recon.channels();
    let (a, b) = (recon.data(), truth.data());
    let angles: Vec<f64> = (0..n)
        .filter_map(|p| {
            let (mut na, mut nb) = (0.0, 0.0);
            for j in 0..c {
                na += a[j * n + p] * a[j * n + p];
                nb += b[j * n + p] * b[j * n + p];
            }
            let (na, nb) = (na.sqrt(), nb.sqrt());
            if na < SAM_MIN_NORM || nb < SAM_MIN_NORM {
                return None;
            }
            // Half-angle form: exact zero for parallel spectra, no acos cliff near 1.
            let (mut diff, mut sum) = (0.0, 0.0);
            for j in 0..c {
                let (x, y) = (a[j * n + p] / na, b[j * n + p] / nb);
                diff += (x - y) * (x - y);
                sum += (x + y) * (x + y);
            }
            Some((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
        })
        .collect();
    Ok(mean(&angles))
}

/// Interleaved RGB image, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::shape("pixel count does not match image size"));
        }
        Ok(Self { height, width, pixels })
    }

    /// 8-bit quantization, clamping to `[0, 1]` first.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }
}

const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

fn mat3(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// CIELAB under D65 from gamma-encoded sRGB.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let xyz = mat3(&SRGB_TO_XYZ, rgb.map(srgb_to_linear));
    let f = |t: f64| {
        let d = 6.0 / 29.0;
        if t > d * d * d {
            t.cbrt()
        } else {
            t / (3.0 * d * d) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (
        f(xyz[0] / D65_WHITE[0]),
        f(xyz[1] / D65_WHITE[1]),
        f(xyz[2] / D65_WHITE[2]),
    );
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn hue_deg(b: f64, a: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        return 0.0;
    }
    let h = b.atan2(a).to_degrees();
    if h < 0.0 {
        h + 360.0
    } else {
        h
    }
}

/// CIEDE2000 colour difference between two Lab triples (kL = kC = kH = 1).
pub fn ciede2000(lab1: [f64; 3], lab2: [f64; 3]) -> f64 {
    let [l1, a1, b1] = lab1;
    let [l2, a2, b2] = lab2;
    let pow7 = |x: f64| x.powi(7);
    let c_bar = ((a1 * a1 + b1 * b1).sqrt() + (a2 * a2 + b2 * b2).sqrt()) / 2.0;
    let g = 0.5 * (1.0 - (pow7(c_bar) / (pow7(c_bar) + pow7(25.0))).sqrt());
    let (a1p, a2p) = ((1.0 + g) * a1, (1.0 + g) * a2);
    let (c1p, c2p) = ((a1p * a1p + b1 * b1).sqrt(), (a2p * a2p + b2 * b2).sqrt());
    let (h1p, h2p) = (hue_deg(b1, a1p), hue_deg(b2, a2p));

    let dl = l2 - l1;
    let dc = c2p - c1p;
    let dh = if c1p * c2p == 0.0 {
        0.0
    } else {
        let d = h2p - h1p;
        if d.abs() <= 180.0 {
            d
        } else if d > 180.0 {
            d - 360.0
        } else {
            d + 360.0
        }
    };
    let dh_big = 2.0 * (c1p * c2p).sqrt() * (dh / 2.0).to_radians().sin();

    let l_bar = (l1 + l2) / 2.0;
    let cp_bar = (c1p + c2p) / 2.0;
    let h_bar = if c1p * c2p == 0.0 {
        h1p + h2p
    } else if (h1p - h2p).abs() <= 180.0 {
        (h1p + h2p) / 2.0
    } else if h1p + h2p < 360.0 {
        (h1p + h2p + 360.0) / 2.0
    } else {
        (h1p + h2p - 360.0) / 2.0
    };
    let cosd = |x: f64| x.to_radians().cos();
    let t = 1.0 - 0.17 * cosd(h_bar - 30.0) + 0.24 * cosd(2.0 * h_bar) + 0.32 * cosd(3.0 * h_bar + 6.0)
        - 0.20 * cosd(4.0 * h_bar - 63.0);
    let d_theta = 30.0 * (-((h_bar - 275.0) / 25.0).powi(2)).exp();
    let rc = 2.0 * (pow7(cp_bar) / (pow7(cp_bar) + pow7(25.0))).sqrt();
    let lm = (l_bar - 50.0).powi(2);
    let sl = 1.0 + 0.015 * lm / (20.0 + lm).sqrt();
    let sc = 1.0 + 0.045 * cp_bar;
    let sh = 1.0 + 0.015 * cp_bar * t;
    let rt = -(2.0 * d_theta).to_radians().sin() * rc;
    let (tl, tc, th) = (dl / sl, dc / sc, dh_big / sh);
    (tl * tl + tc * tc + th * th + rt * tc * th).max(0.0).sqrt()
}

/// Mean CIEDE2000 over pixels of two sRGB images.
pub fn delta_e00(rgb_recon: &RgbImage, rgb_truth: &RgbImage) -> Result<f64> {
    if (rgb_recon.height, rgb_recon.width) != (rgb_truth.height, rgb_truth.width) {
        return Err(Error::shape("RGB images differ in size"));
    }
    let d: Vec<f64> = rgb_recon
        .pixels
        .par_iter()
        .zip(&rgb_truth.pixels)
        .map(|(a, b)| ciede2000(srgb_to_lab(*a), srgb_to_lab(*b)))
        .collect();
    Ok(mean(&d))
}

/// Two-sided Gaussian lobe of the multi-lobe CIE 1931 fit.
fn lobe(x: f64, mu: f64, s1: f64, s2: f64) -> f64 {
    let t = (x - mu) / if x < mu { s1 } else { s2 };
    (-0.5 * t * t).exp()
}

/// CIE 1931 2° matching functions, analytic multi-lobe fit.
pub fn cie1931_cmf(nm: f64) -> [f64; 3] {
    let x = 1.056 * lobe(nm, 599.8, 37.9, 31.0) + 0.362 * lobe(nm, 442.0, 16.0, 26.7)
        - 0.065 * lobe(nm, 501.1, 20.4, 26.2);
    let y = 0.821 * lobe(nm, 568.8, 46.9, 40.5) + 0.286 * lobe(nm, 530.9, 16.3, 31.1);
    let z = 1.217 * lobe(nm, 437.0, 11.8, 36.0) + 0.681 * lobe(nm, 459.0, 26.0, 13.8);
    [x, y, z]
}

/// CIE D65 relative spectral power, 380–780 nm every 10 nm.
const D65_10NM: [f64; 41] = [
    49.9755, 54.6482, 82.7549, 91.486, 93.4318, 86.6823, 104.865, 117.008, 117.812, 114.861, 115.923,
    108.811, 109.354, 107.802, 104.790, 107.689, 104.405, 104.046, 100.0, 96.3342, 95.788, 88.6856,
    90.0062, 89.5991, 87.6987, 83.6992, 83.6987, 80.2146, 80.2146, 82.2778, 78.2842, 69.7213, 71.6091,
    74.349, 61.604, 69.8856, 75.087, 63.5927, 46.4182, 66.8054, 63.3828,
];

pub fn d65(nm: f64) -> Option<f64> {
    let xs: Vec<f64> = (0..D65_10NM.len()).map(|i| 380.0 + 10.0 * i as f64).collect();
    interp_linear(&xs, &D65_10NM, nm)
}

/// Matching functions and illuminant sampled at a cube's wavelengths.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorMatch {
    pub wavelengths_nm: Vec<f64>,
    pub xbar: Vec<f64>,
    pub ybar: Vec<f64>,
    pub zbar: Vec<f64>,
    pub illuminant: Vec<f64>,
}

impl ColorMatch {
    /// CIE 1931 observer under D65; wavelengths must lie within 380–780 nm.
    pub fn cie1931_d65(wavelengths_nm: &[f64]) -> Result<Self> {
        let mut illuminant = Vec::with_capacity(wavelengths_nm.len());
        for &w in wavelengths_nm {
            illuminant.push(d65(w).ok_or(Error::OutOfCoverage {
                wavelength_nm: w,
                min_nm: 380.0,
                max_nm: 780.0,
            })?);
        }
        let cmf: Vec<[f64; 3]> = wavelengths_nm.iter().map(|w| cie1931_cmf(*w)).collect();
        Ok(Self {
            wavelengths_nm: wavelengths_nm.to_vec(),
            xbar: cmf.iter().map(|c| c[0]).collect(),
            ybar: cmf.iter().map(|c| c[1]).collect(),
            zbar: cmf.iter().map(|c| c[2]).collect(),
            illuminant,
        })
    }

    /// Trapezoid weights over the sampled wavelengths.
    fn quadrature(&self) -> Vec<f64> {
        let w = &self.wavelengths_nm;
        if w.len() == 1 {
            return vec![1.0];
        }
        (0..w.len())
            .map(|i| {
                let left = if i > 0 { w[i] - w[i - 1] } else { 0.0 };
                let right = if i + 1 < w.len() { w[i + 1] - w[i] } else { 0.0 };
                (left + right) / 2.0
            })
            .collect()
    }

    /// Per-channel weights mapping a spectrum to XYZ with `Y(white) = 1`.
    fn xyz_weights(&self) -> [Vec<f64>; 3] {
        let q = self.quadrature();
        let base: Vec<f64> = q.iter().zip(&self.illuminant).map(|(a, b)| a * b).collect();
        let norm: f64 = base.iter().zip(&self.ybar).map(|(a, b)| a * b).sum();
        [&self.xbar, &self.ybar, &self.zbar]
            .map(|cmf| base.iter().zip(cmf).map(|(a, b)| a * b / norm).collect())
    }
}

/// Per-pixel tristimulus values of a reflectance cube.
pub fn hsi_to_xyz(cube: &HyperspectralCube, colormatch: &ColorMatch) -> Result<Vec<[f64; 3]>> {
    if colormatch.wavelengths_nm != cube.wavelengths_nm() {
        return Err(Error::shape("colour tables are not sampled at the cube's wavelengths"));
    }
    let weights = colormatch.xyz_weights();
    let n = cube.height() * cube.width();
    let data = cube.data();
    Ok((0..n)
        .into_par_iter()
        .map(|p| {
            weights
                .each_ref()
                .map(|w| w.iter().enumerate().map(|(j, wj)| wj * data[j * n + p]).sum())
        })
        .collect())
}

/// Renders a cube as white-balanced sRGB: unit reflectance maps to white.
pub fn hsi_to_rgb(cube: &HyperspectralCube, colormatch: &ColorMatch) -> Result<RgbImage> {
    let xyz = hsi_to_xyz(cube, colormatch)?;
    let weights = colormatch.xyz_weights();
    let white = mat3(&XYZ_TO_SRGB, weights.each_ref().map(|w| w.iter().sum()));
    let pixels = xyz
        .into_iter()
        .map(|t| {
            let lin = mat3(&XYZ_TO_SRGB, t);
            [0, 1, 2].map(|k| linear_to_srgb(lin[k] / white[k]).clamp(0.0, 1.0))
        })
        .collect();
    RgbImage::new(cube.height(), cube.width(), pixels)
}

/// Rectangular region used for white balance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// Uses three measurements directly as R, G, B, optionally divided by their
/// means over a white patch. No clamping is applied.
pub fn compose_rgb_from_stack(stack: &FocalStack, indices: [usize; 3], white_patch: Option<Patch>) -> Result<RgbImage> {
    if let Some(&bad) = indices.iter().find(|i| **i >= stack.count()) {
        return Err(Error::Parameter(format!(
            "measurement index {bad} out of range for {} measurements",
            stack.count()
        )));
    }
    let (h, w) = (stack.height(), stack.width());
    let mut gains = [1.0; 3];
    if let Some(p) = white_patch {
        if p.height == 0 || p.width == 0 || p.row + p.height > h || p.col + p.width > w {
            return Err(Error::param(format!("white patch {p:?} outside {h}x{w} image")));
        }
        for (k, &i) in indices.iter().enumerate() {
            let plane = stack.plane(i);
            let vals: Vec<f64> = (p.row..p.row + p.height)
                .flat_map(|r| (p.col..p.col + p.width).map(move |c| plane[r * w + c]))
                .collect();
            let m = mean(&vals);
            if !(m > 0.0) {
                return Err(Error::param("white patch mean must be positive"));
            }
            gains[k] = 1.0 / m;
        }
    }
    let planes = indices.map(|i| stack.plane(i));
    let pixels = (0..h * w)
        .map(|p| [0, 1, 2].map(|k| planes[k][p] * gains[k]))
        .collect();
    RgbImage::new(h, w, pixels)
}

/// `metric,value` lines.
pub fn metrics_csv(rows: &[(&str, f64)]) -> String {
    let mut out = String::from("metric,value\n");
    for (name, value) in rows {
        out.push_str(&format!("{name},{value}\n"));
    }
    out
}
