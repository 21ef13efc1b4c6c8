//! Priors for the u-update, applied channel by channel in the image domain.

use rayon::prelude::*;

/// A denoiser acting in place on `channels` planes of `height × width`.
///
/// Implementations must be deterministic. Planes may be processed in any order.
pub trait Denoise: Send + Sync {
    fn denoise(&self, planes: &mut [f64], height: usize, width: usize);
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Denoiser {
    #[default]
    Identity,
    /// Element-wise shrinkage by `tau`, the ℓ1 proximal map.
    SoftThreshold { tau: f64 },
    /// Isotropic TV proximal map via Chambolle's dual projection.
    TotalVariation { weight: f64, inner_iters: usize },
}

impl Denoiser {
    pub fn validate(&self) -> crate::Result<()> {
        match *self {
            Denoiser::Identity => Ok(()),
            Denoiser::SoftThreshold { tau } if tau >= 0.0 && tau.is_finite() => Ok(()),
            Denoiser::TotalVariation { weight, inner_iters }
                if weight >= 0.0 && weight.is_finite() && inner_iters > 0 =>
            {
                Ok(())
            }
            other => Err(crate::Error::Parameter(format!("invalid denoiser {other:?}"))),
        }
    }
}

impl Denoise for Denoiser {
    fn denoise(&self, planes: &mut [f64], height: usize, width: usize) {
        match *self {
            Denoiser::Identity => {}
            Denoiser::SoftThreshold { tau } => planes
                .par_iter_mut()
                .for_each(|v| *v = soft_threshold(*v, tau)),
            Denoiser::TotalVariation { weight, inner_iters } => {
                if weight == 0.0 {
                    return;
                }
                planes
                    .par_chunks_mut(height * width)
                    .for_each(|p| tv_prox(p, height, width, weight, inner_iters));
            }
        }
    }
}

pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    x.signum() * (x.abs() - tau).max(0.0)
}

/// Solves `min_u ½‖u − f‖² + weight · TV(u)` in place.
pub fn tv_prox(f: &mut [f64], height: usize, width: usize, weight: f64, iters: usize) {
    const STEP: f64 = 0.125;
    let n = height * width;
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut d = vec![0.0; n];
    for _ in 0..iters {
        divergence(&px, &py, height, width, &mut d);
        for (di, fi) in d.iter_mut().zip(f.iter()) {
            *di -= fi / weight;
        }
        for r in 0..height {
            for c in 0..width {
                let i = r * width + c;
                let gx = if c + 1 < width { d[i + 1] - d[i] } else { 0.0 };
                let gy = if r + 1 < height { d[i + width] - d[i] } else { 0.0 };
                let scale = 1.0 + STEP * (gx * gx + gy * gy).sqrt();
                px[i] = (px[i] + STEP * gx) / scale;
                py[i] = (py[i] + STEP * gy) / scale;
            }
        }
    }
    divergence(&px, &py, height, width, &mut d);
    for (fi, di) in f.iter_mut().zip(&d) {
        *fi -= weight * di;
    }
}

/// Negative adjoint of the forward-difference gradient.
fn divergence(px: &[f64], py: &[f64], height: usize, width: usize, out: &mut [f64]) {
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            let mut v = 0.0;
            if c + 1 < width {
                v += px[i];
            }
            if c > 0 {
                v -= px[i - 1];
            }
            if r + 1 < height {
                v += py[i];
            }
            if r > 0 {
                v -= py[i - width];
            }
            out[i] = v;
        }
    }
}
