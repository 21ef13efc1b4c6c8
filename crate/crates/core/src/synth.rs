//! Deterministic synthetic scenes for tests, demos, and basis training.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::HyperspectralCube;

/// Smooth reflectance spectra: an offset plus two Gaussian bumps.
#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub base: f64,
    pub bumps: [(f64, f64, f64); 2],
}

impl Material {
    pub fn reflectance(&self, nm: f64) -> f64 {
        let mut r = self.base;
        for (amp, center, width) in self.bumps {
            r += amp * (-0.5 * ((nm - center) / width).powi(2)).exp();
        }
        r.clamp(0.0, 1.0)
    }
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// `count` random materials whose bumps are spread over `[lo, hi]` nm.
pub fn materials(count: usize, lo: f64, hi: f64, seed: u64) -> Vec<Material> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|m| {
            let slot = (m as f64 + 0.5) / count as f64;
            let c1 = lo + (hi - lo) * slot;
            let c2 = lo + (hi - lo) * unit(&mut rng);
            Material {
                base: 0.05 + 0.15 * unit(&mut rng),
                bumps: [
                    (0.4 + 0.4 * unit(&mut rng), c1, 15.0 + 40.0 * unit(&mut rng)),
                    (0.1 + 0.3 * unit(&mut rng), c2, 20.0 + 60.0 * unit(&mut rng)),
                ],
            }
        })
        .collect()
}

/// Tiled scene with a disk overlay and soft shading, values in `[0, 1]`.
///
/// Ten materials are placed on a jittered 4×3 tiling, so any channel count up
/// to ten yields a full-rank set of spectra once the scene is at least 8×8.
pub fn synthetic_scene(height: usize, width: usize, wavelengths_nm: &[f64], seed: u64) -> Result<HyperspectralCube> {
    if height == 0 || width == 0 || wavelengths_nm.is_empty() {
        return Err(Error::param("scene needs non-empty dimensions and wavelengths"));
    }
    let lo = wavelengths_nm[0];
    let hi = *wavelengths_nm.last().unwrap();
    let mats = materials(10, lo, hi.max(lo + 1.0), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (tiles_y, tiles_x) = (3usize, 4usize);
    let assignment: Vec<usize> = (0..tiles_y * tiles_x).map(|t| t % 10).collect();
    let cy = height as f64 * (0.3 + 0.4 * unit(&mut rng));
    let cx = width as f64 * (0.3 + 0.4 * unit(&mut rng));
    let radius = height.min(width) as f64 * (0.15 + 0.1 * unit(&mut rng));
    let disk_material = 9 - (seed as usize % 3);
    let phase = unit(&mut rng) * std::f64::consts::TAU;

    let n = height * width;
    let c = wavelengths_nm.len();
    let table: Vec<Vec<f64>> = mats
        .iter()
        .map(|m| wavelengths_nm.iter().map(|w| m.reflectance(*w)).collect())
        .collect();
    let mut data = vec![0.0; n * c];
    for r in 0..height {
        for col in 0..width {
            let ty = (r * tiles_y / height).min(tiles_y - 1);
            let tx = (col * tiles_x / width).min(tiles_x - 1);
            let (dy, dx) = (r as f64 + 0.5 - cy, col as f64 + 0.5 - cx);
            let m = if dy * dy + dx * dx < radius * radius {
                disk_material
            } else {
                assignment[ty * tiles_x + tx]
            };
            let shade = 0.85
                + 0.15 * ((r as f64 / height as f64) * 2.0 + (col as f64 / width as f64) * 3.0 + phase).sin();
            let p = r * width + col;
            for j in 0..c {
                data[j * n + p] = (table[m][j] * shade).clamp(0.0, 1.0);
            }
        }
    }
    HyperspectralCube::new(height, width, wavelengths_nm.to_vec(), data)
}

/// `count` evenly spaced wavelengths from `lo` to `hi` inclusive.
pub fn wavelength_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|j| lo + (hi - lo) * j as f64 / (count - 1) as f64)
        .collect()
}
