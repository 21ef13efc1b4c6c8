//! Reference implementations for the oracle tests: dense operators built
//! entry by entry, direct-formula metrics, and published colour-difference data.
#![allow(dead_code)]

use focal_hsi::forward::CropSpec;
use focal_hsi::solver::OtfBlocks;
use focal_hsi::{HyperspectralCube, PsfStack, SpectralBasis};
use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as usize
    }

    pub fn signed(&mut self) -> f64 {
        2.0 * self.unit() - 1.0
    }

    pub fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.signed()).collect()
    }
}

pub fn random_cube(rng: &mut Rng, h: usize, w: usize, c: usize) -> HyperspectralCube {
    let wl = (0..c).map(|j| 450.0 + 20.0 * j as f64).collect();
    HyperspectralCube::new(h, w, wl, (0..h * w * c).map(|_| rng.unit()).collect()).unwrap()
}

/// Asymmetric non-negative kernels, so orientation mistakes show up.
pub fn random_psfs(rng: &mut Rng, n: usize, c: usize, k: usize) -> PsfStack {
    let kernels = (0..n * c * k * k).map(|_| rng.unit() + 0.01).collect();
    PsfStack::from_measured(
        k,
        (0..n).map(|i| 0.1 * i as f64).collect(),
        (0..c).map(|j| 450.0 + 20.0 * j as f64).collect(),
        kernels,
    )
    .unwrap()
}

/// Orthonormal rows from a QR factorization of a random matrix.
pub fn random_basis(rng: &mut Rng, v: usize, c: usize) -> SpectralBasis {
    let m = DMatrix::from_fn(c, v, |_, _| rng.signed());
    let q = m.qr().q();
    let mut rows = Vec::with_capacity(v * c);
    for k in 0..v {
        rows.extend(q.column(k).iter().copied());
    }
    SpectralBasis::new(c, rows).unwrap()
}

/// The measurement operator `C H` as an `(N·H·W) × (C·H·W)` matrix: zero
/// boundary linear convolution, centered output window.
pub fn dense_forward(psfs: &PsfStack, h: usize, w: usize) -> DMatrix<f64> {
    let (n, c, k) = (psfs.count(), psfs.channels(), psfs.kernel_size());
    let half = (k / 2) as isize;
    let hw = h * w;
    let mut m = DMatrix::zeros(n * hw, c * hw);
    for i in 0..n {
        for j in 0..c {
            let ker = psfs.kernel(i, j);
            for r in 0..h as isize {
                for col in 0..w as isize {
                    for a in 0..k as isize {
                        for b in 0..k as isize {
                            let (sr, sc) = (r + half - a, col + half - b);
                            if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
                                continue;
                            }
                            let row = i * hw + (r as usize) * w + col as usize;
                            let src = j * hw + (sr as usize) * w + sc as usize;
                            m[(row, src)] += ker[(a as usize) * k + b as usize];
                        }
                    }
                }
            }
        }
    }
    m
}

/// `Ĥ = H (Bᵀ ⊗ I)` on the padded grid with circular boundaries:
/// `(N·P) × (v·P)` where `P` is the padded plane size.
pub fn dense_projected(psfs: &PsfStack, basis: &SpectralBasis, crop: &CropSpec) -> DMatrix<f64> {
    let (n, c, k) = (psfs.count(), psfs.channels(), psfs.kernel_size());
    let (ph, pw) = (crop.padded_height, crop.padded_width);
    let p = ph * pw;
    let half = (k / 2) as isize;
    let mut h = DMatrix::<f64>::zeros(n * p, c * p);
    for i in 0..n {
        for j in 0..c {
            let ker = psfs.kernel(i, j);
            for r in 0..ph as isize {
                for col in 0..pw as isize {
                    for a in 0..k as isize {
                        for b in 0..k as isize {
                            let sr = (r + half - a).rem_euclid(ph as isize) as usize;
                            let sc = (col + half - b).rem_euclid(pw as isize) as usize;
                            h[(i * p + r as usize * pw + col as usize, j * p + sr * pw + sc)] +=
                                ker[(a as usize) * k + b as usize];
                        }
                    }
                }
            }
        }
    }
    h * lift_matrix(basis, p)
}

/// `Bᵀ ⊗ I_P`: coefficient planes to channel planes.
pub fn lift_matrix(basis: &SpectralBasis, p: usize) -> DMatrix<f64> {
    let (v, c) = (basis.dim(), basis.channels());
    let mut m = DMatrix::zeros(c * p, v * p);
    for j in 0..c {
        for kk in 0..v {
            let b = basis.row(kk)[j];
            for q in 0..p {
                m[(j * p + q, kk * p + q)] = b;
            }
        }
    }
    m
}

/// 0/1 diagonal of `CᵀC` over `N` padded planes.
pub fn crop_mask(crop: &CropSpec, n: usize) -> Vec<f64> {
    let mut mask = Vec::with_capacity(n * crop.padded_len());
    for _ in 0..n {
        for r in 0..crop.padded_height {
            for c in 0..crop.padded_width {
                mask.push(if crop.contains(r, c) { 1.0 } else { 0.0 });
            }
        }
    }
    mask
}

/// `Cᵀ y` for `N` observed windows.
pub fn embed_all(crop: &CropSpec, y: &[f64], n: usize) -> Vec<f64> {
    let p = crop.padded_len();
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        crop.embed(&y[i * crop.out_len()..(i + 1) * crop.out_len()], &mut out[i * p..(i + 1) * p]);
    }
    out
}

/// Unnormalized 2D DFT matrix on a `rows × cols` grid.
pub fn dft_matrix(rows: usize, cols: usize) -> DMatrix<Complex64> {
    let p = rows * cols;
    DMatrix::from_fn(p, p, |f, m| {
        let (u, w) = (f / cols, f % cols);
        let (r, c) = (m / cols, m % cols);
        let phase = -2.0 * std::f64::consts::PI * ((u * r) as f64 / rows as f64 + (w * c) as f64 / cols as f64);
        Complex64::new(phase.cos(), phase.sin())
    })
}

pub fn dvec(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// SSIM with an explicit 2D window and two-pass weighted moments.
pub fn ssim_reference(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let mut k = 11.min(h.min(w));
    if k % 2 == 0 {
        k -= 1;
    }
    let c = (k / 2) as f64;
    let mut win = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let d2 = (a as f64 - c).powi(2) + (b as f64 - c).powi(2);
            win[a * k + b] = (-d2 / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for r in 0..=h - k {
        for col in 0..=w - k {
            let at = |img: &[f64], a: usize, b: usize| img[(r + a) * w + col + b];
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..k {
                for b in 0..k {
                    mx += win[a * k + b] * at(x, a, b);
                    my += win[a * k + b] * at(y, a, b);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for a in 0..k {
                for b in 0..k {
                    let (dx, dy) = (at(x, a, b) - mx, at(y, a, b) - my);
                    vx += win[a * k + b] * dx * dx;
                    vy += win[a * k + b] * dy * dy;
                    cxy += win[a * k + b] * dx * dy;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// L*a*b* pairs with their published CIEDE2000 differences.
pub const DE00_PAIRS: [([f64; 3], [f64; 3], f64); 34] = [
    ([50.0, 2.6772, -79.7751], [50.0, 0.0, -82.7485], 2.0425),
    ([50.0, 3.1571, -77.2803], [50.0, 0.0, -82.7485], 2.8615),
    ([50.0, 2.8361, -74.0200], [50.0, 0.0, -82.7485], 3.4412),
    ([50.0, -1.3802, -84.2814], [50.0, 0.0, -82.7485], 1.0000),
    ([50.0, -1.1848, -84.8006], [50.0, 0.0, -82.7485], 1.0000),
    ([50.0, -0.9009, -85.5211], [50.0, 0.0, -82.7485], 1.0000),
    ([50.0, 0.0, 0.0], [50.0, -1.0, 2.0], 2.3669),
    ([50.0, -1.0, 2.0], [50.0, 0.0, 0.0], 2.3669),
    ([50.0, 2.4900, -0.0010], [50.0, -2.4900, 0.0009], 7.1792),
    ([50.0, 2.4900, -0.0010], [50.0, -2.4900, 0.0010], 7.1792),
    ([50.0, 2.4900, -0.0010], [50.0, -2.4900, 0.0011], 7.2195),
    ([50.0, 2.4900, -0.0010], [50.0, -2.4900, 0.0012], 7.2195),
    ([50.0, -0.0010, 2.4900], [50.0, 0.0009, -2.4900], 4.8045),
    ([50.0, -0.0010, 2.4900], [50.0, 0.0010, -2.4900], 4.8045),
    ([50.0, -0.0010, 2.4900], [50.0, 0.0011, -2.4900], 4.7461),
    ([50.0, 2.5000, 0.0], [50.0, 0.0, -2.5000], 4.3065),
    ([50.0, 2.5000, 0.0], [73.0, 25.0, -18.0], 27.1492),
    ([50.0, 2.5000, 0.0], [61.0, -5.0, 29.0], 22.8977),
    ([50.0, 2.5000, 0.0], [56.0, -27.0, -3.0], 31.9030),
    ([50.0, 2.5000, 0.0], [58.0, 24.0, 15.0], 19.4535),
    ([50.0, 2.5000, 0.0], [50.0, 3.1736, 0.5854], 1.0000),
    ([50.0, 2.5000, 0.0], [50.0, 3.2972, 0.0], 1.0000),
    ([50.0, 2.5000, 0.0], [50.0, 1.8634, 0.5757], 1.0000),
    ([50.0, 2.5000, 0.0], [50.0, 3.2592, 0.3350], 1.0000),
    ([60.2574, -34.0099, 36.2677], [60.4626, -34.1751, 39.4387], 1.2644),
    ([63.0109, -31.0961, -5.8663], [62.8187, -29.7946, -4.0864], 1.2630),
    ([61.2901, 3.7196, -5.3901], [61.4292, 2.2480, -4.9620], 1.8731),
    ([35.0831, -44.1164, 3.7933], [35.0232, -40.0716, 1.5901], 1.8645),
    ([22.7233, 20.0904, -46.6940], [23.0331, 14.9730, -42.5619], 2.0373),
    ([36.4612, 47.8580, 18.3852], [36.2715, 50.5065, 21.2231], 1.4146),
    ([90.8027, -2.0831, 1.4410], [91.1528, -1.6435, 0.0447], 1.4441),
    ([90.9257, -0.5406, -0.9208], [88.6381, -0.8985, -0.7239], 1.5381),
    ([6.7747, -0.2908, -2.4247], [5.8714, -0.0985, -2.2286], 0.6377),
    ([2.0776, 0.0795, -1.1350], [0.9033, -0.0636, -0.5514], 0.9082),
];


/// CGLS on `min ‖y − C Ĥ z‖²` over padded coefficient planes, matrix-free.
/// From `z0 = 0` it converges to the minimum-norm least-squares solution.
pub fn cgls(blocks: &OtfBlocks, crop: &CropSpec, y: &[f64], mut z: Vec<f64>, iters: usize) -> Vec<f64> {
    let n = blocks.measurements();
    let p = crop.padded_len();
    let forward = |z: &[f64]| {
        let full = blocks.apply(z);
        let mut out = vec![0.0; n * crop.out_len()];
        for i in 0..n {
            crop.extract(&full[i * p..(i + 1) * p], &mut out[i * crop.out_len()..(i + 1) * crop.out_len()]);
        }
        out
    };
    let adjoint = |r: &[f64]| blocks.apply_transpose(&embed_all(crop, r, n));
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let az = forward(&z);
    let mut r: Vec<f64> = y.iter().zip(&az).map(|(a, b)| a - b).collect();
    let mut s = adjoint(&r);
    let mut d = s.clone();
    let mut gamma = dot(&s, &s);
    for _ in 0..iters {
        if gamma == 0.0 {
            break;
        }
        let q = forward(&d);
        let alpha = gamma / dot(&q, &q);
        z.iter_mut().zip(&d).for_each(|(z, d)| *z += alpha * d);
        r.iter_mut().zip(&q).for_each(|(r, q)| *r -= alpha * q);
        s = adjoint(&r);
        let next = dot(&s, &s);
        let beta = next / gamma;
        gamma = next;
        d.iter_mut().zip(&s).for_each(|(d, s)| *d = s + beta * *d);
    }
    z
}
