//! Per-frequency blocks of the projected operator `Ĥ = H (Bᵀ ⊗ I)`.
//!
//! On the padded grid every `H_ij` is circulant, so the 2D DFT diagonalizes it
//! and `Ĥ` decouples into one small `N × v` matrix `G_f = A_f Bᵀ` per
//! frequency `f`, where `A_f` holds the kernel transfer values. The z-update
//! system `μ₁ ĤᵀĤ + μ₂ I` becomes `M_f = μ₁ G_fᴴ G_f + μ₂ I`, a Hermitian
//! positive definite `v × v` matrix, factored once per frequency. Data stay in
//! plane-major order and are gathered per frequency on the fly, so no
//! permutation matrix is ever formed.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::forward::CropSpec;
use crate::types::{PsfStack, SpectralBasis};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const CHUNK: usize = 1024;

#[derive(Debug, Clone)]
pub struct OtfBlocks {
    fft: Fft2,
    measurements: usize,
    dim: usize,
    mu1: f64,
    mu2: f64,
    /// `G_f` entries at `(f * N + i) * v + k`.
    transfer: Vec<Complex64>,
    /// Packed lower Cholesky factor of `M_f`, `v (v + 1) / 2` entries per frequency.
    factors: Vec<Complex64>,
}

fn packed_len(v: usize) -> usize {
    v * (v + 1) / 2
}

#[inline]
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// Builds the transfer blocks for `basis` on the padded grid of `crop` and
/// factors every `M_f`.
pub fn precompute_otf_blocks(
    psfs: &PsfStack,
    basis: &SpectralBasis,
    crop: &CropSpec,
    mu1: f64,
    mu2: f64,
) -> Result<OtfBlocks> {
    if basis.channels() != psfs.channels() {
        return Err(Error::shape(format!(
            "basis has {} channels, psfs have {}",
            basis.channels(),
            psfs.channels()
        )));
    }
    if !(mu1 >= 0.0) || !(mu2 > 0.0) {
        return Err(Error::param(format!("need mu1 >= 0 and mu2 > 0, got {mu1}, {mu2}")));
    }
    let k = psfs.kernel_size();
    if crop.padded_height < k || crop.padded_width < k {
        return Err(Error::shape("padded grid smaller than kernel"));
    }
    let fft = Fft2::new(crop.padded_height, crop.padded_width);
    let (n, c, v) = (psfs.count(), psfs.channels(), basis.dim());
    let len = fft.len();
    let mut transfer = vec![ZERO; len * n * v];
    for j in 0..c {
        let otfs: Vec<Vec<Complex64>> = (0..n)
            .into_par_iter()
            .map(|i| fft.kernel_otf(psfs.kernel(i, j), k))
            .collect();
        let weights: Vec<f64> = (0..v).map(|kk| basis.row(kk)[j]).collect();
        transfer
            .par_chunks_mut(n * v)
            .enumerate()
            .for_each(|(f, g)| {
                for (i, otf) in otfs.iter().enumerate() {
                    let a = otf[f];
                    for (kk, w) in weights.iter().enumerate() {
                        g[i * v + kk] += a * *w;
                    }
                }
            });
    }
    let mut blocks = OtfBlocks {
        fft,
        measurements: n,
        dim: v,
        mu1,
        mu2,
        transfer,
        factors: Vec::new(),
    };
    blocks.factor()?;
    Ok(blocks)
}

impl OtfBlocks {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn measurements(&self) -> usize {
        self.measurements
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    pub fn frequencies(&self) -> usize {
        self.fft.len()
    }

    pub fn mu1(&self) -> f64 {
        self.mu1
    }

    pub fn mu2(&self) -> f64 {
        self.mu2
    }

    /// `G_f` as a row-major `N × v` matrix.
    pub fn transfer_matrix(&self, f: usize) -> &[Complex64] {
        let nv = self.measurements * self.dim;
        &self.transfer[f * nv..(f + 1) * nv]
    }

    /// `M_f = μ₁ G_fᴴ G_f + μ₂ I` as a row-major `v × v` matrix.
    pub fn system_matrix(&self, f: usize) -> Vec<Complex64> {
        let v = self.dim;
        let g = self.transfer_matrix(f);
        let mut m = vec![ZERO; v * v];
        for a in 0..v {
            for b in 0..v {
                let mut acc = ZERO;
                for i in 0..self.measurements {
                    acc += g[i * v + a].conj() * g[i * v + b];
                }
                m[a * v + b] = acc * self.mu1;
            }
            m[a * v + a] += self.mu2;
        }
        m
    }

    fn factor(&mut self) -> Result<()> {
        let v = self.dim;
        let p = packed_len(v);
        let mut factors = vec![ZERO; self.frequencies() * p];
        let this = &*self;
        let failed = factors
            .par_chunks_mut(p * CHUNK)
            .enumerate()
            .map(|(chunk, out)| {
                for (local, l) in out.chunks_mut(p).enumerate() {
                    let f = chunk * CHUNK + local;
                    let m = this.system_matrix(f);
                    if !cholesky(&m, v, l) {
                        return Some(f);
                    }
                }
                None
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .next();
        if let Some(f) = failed {
            return Err(Error::SolverAbort {
                iteration: 0,
                reason: format!("system block at frequency {f} is not positive definite"),
            });
        }
        self.factors = factors;
        Ok(())
    }

    /// Blocks for the basis made of the leading `dim` rows of the current one.
    pub fn truncated(&self, dim: usize) -> Result<OtfBlocks> {
        if dim == 0 || dim > self.dim {
            return Err(Error::param(format!("cannot truncate dim {} to {dim}", self.dim)));
        }
        let (n, v) = (self.measurements, self.dim);
        let mut transfer = Vec::with_capacity(self.frequencies() * n * dim);
        for g in self.transfer.chunks(n * v) {
            for i in 0..n {
                transfer.extend_from_slice(&g[i * v..i * v + dim]);
            }
        }
        let mut blocks = OtfBlocks {
            fft: self.fft.clone(),
            measurements: n,
            dim,
            mu1: self.mu1,
            mu2: self.mu2,
            transfer,
            factors: Vec::new(),
        };
        blocks.factor()?;
        Ok(blocks)
    }

    fn spectra(&self, planes: &[f64], count: usize) -> Vec<Vec<Complex64>> {
        let len = self.frequencies();
        debug_assert_eq!(planes.len(), count * len);
        (0..count)
            .into_par_iter()
            .map(|p| self.fft.forward_real(&planes[p * len..(p + 1) * len]))
            .collect()
    }

    fn inverse_planes(&self, spectra: Vec<Vec<Complex64>>) -> Vec<f64> {
        let planes: Vec<Vec<f64>> = spectra
            .into_par_iter()
            .map(|s| self.fft.inverse_real(s))
            .collect();
        planes.concat()
    }

    /// `Ĥ z` on the padded grid: `v` coefficient planes in, `N` planes out.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        let (n, v) = (self.measurements, self.dim);
        let z = self.spectra(coeffs, v);
        let out: Vec<Vec<Complex64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..self.frequencies())
                    .map(|f| {
                        let g = &self.transfer[(f * n + i) * v..(f * n + i + 1) * v];
                        g.iter().zip(&z).fold(ZERO, |acc, (gk, zk)| acc + gk * zk[f])
                    })
                    .collect()
            })
            .collect();
        self.inverse_planes(out)
    }

    /// `Ĥᵀ w`: `N` padded planes in, `v` coefficient planes out.
    pub fn apply_transpose(&self, planes: &[f64]) -> Vec<f64> {
        let (n, v) = (self.measurements, self.dim);
        let w = self.spectra(planes, n);
        let out: Vec<Vec<Complex64>> = (0..v)
            .into_par_iter()
            .map(|k| {
                (0..self.frequencies())
                    .map(|f| {
                        (0..n).fold(ZERO, |acc, i| {
                            acc + self.transfer[(f * n + i) * v + k].conj() * w[i][f]
                        })
                    })
                    .collect()
            })
            .collect();
        self.inverse_planes(out)
    }

    /// Solves `(μ₁ ĤᵀĤ + μ₂ I) z = Ĥᵀ a + b` where `a` has `N` padded planes
    /// and `b` has `v` coefficient planes.
    pub fn solve(&self, data_term: &[f64], prior_term: &[f64]) -> Vec<f64> {
        let (n, v) = (self.measurements, self.dim);
        let len = self.frequencies();
        let a = self.spectra(data_term, n);
        let b = self.spectra(prior_term, v);
        let p = packed_len(v);
        let mut solved = vec![ZERO; len * v];
        solved
            .par_chunks_mut(v * CHUNK)
            .enumerate()
            .for_each(|(chunk, out)| {
                let mut rhs = vec![ZERO; v];
                for (local, zf) in out.chunks_mut(v).enumerate() {
                    let f = chunk * CHUNK + local;
                    let g = &self.transfer[f * n * v..(f + 1) * n * v];
                    for k in 0..v {
                        let mut acc = b[k][f];
                        for i in 0..n {
                            acc += g[i * v + k].conj() * a[i][f];
                        }
                        rhs[k] = acc;
                    }
                    cholesky_solve(&self.factors[f * p..(f + 1) * p], v, &rhs, zf);
                }
            });
        let planes: Vec<Vec<Complex64>> = (0..v)
            .map(|k| (0..len).map(|f| solved[f * v + k]).collect())
            .collect();
        self.inverse_planes(planes)
    }
}

/// Packed lower factor `L` with `M = L Lᴴ`; false if `M` is not positive definite.
fn cholesky(m: &[Complex64], v: usize, l: &mut [Complex64]) -> bool {
    for j in 0..v {
        let mut d = m[j * v + j].re;
        for k in 0..j {
            d -= l[tri(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let djj = d.sqrt();
        l[tri(j, j)] = Complex64::new(djj, 0.0);
        for i in j + 1..v {
            let mut s = m[i * v + j];
            for k in 0..j {
                s -= l[tri(i, k)] * l[tri(j, k)].conj();
            }
            l[tri(i, j)] = s / djj;
        }
    }
    true
}

fn cholesky_solve(l: &[Complex64], v: usize, rhs: &[Complex64], out: &mut [Complex64]) {
    for i in 0..v {
        let mut s = rhs[i];
        for k in 0..i {
            s -= l[tri(i, k)] * out[k];
        }
        out[i] = s / l[tri(i, i)].re;
    }
    for i in (0..v).rev() {
        let mut s = out[i];
        for k in i + 1..v {
            s -= l[tri(k, i)].conj() * out[k];
        }
        out[i] = s / l[tri(i, i)].re;
    }
}
