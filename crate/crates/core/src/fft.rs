//! Two-dimensional FFTs on row-major grids and kernel transfer functions.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Planned forward and inverse 2D transforms for one grid shape.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform scaled by `1 / (rows * cols)`, in place.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_inv, &self.col_inv);
        let scale = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
    }

    fn run(&self, buf: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(buf.len(), self.len(), "buffer does not match grid");
        let (r, c) = (self.rows, self.cols);
        if c > 1 {
            row.process(buf);
        }
        if r > 1 {
            let mut t = vec![Complex64::new(0.0, 0.0); r * c];
            transpose(buf, &mut t, r, c);
            col.process(&mut t);
            transpose(&t, buf, c, r);
        }
    }

    /// Forward transform of a real grid.
    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform, keeping real parts.
    pub fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Transfer function of a centered odd `k × k` kernel on this grid.
    ///
    /// The kernel center lands on grid index (0, 0) with negative offsets wrapped,
    /// so a delta kernel yields the all-ones transfer function.
    pub fn kernel_otf(&self, kernel: &[f64], k: usize) -> Vec<Complex64> {
        assert!(k % 2 == 1 && k <= self.rows && k <= self.cols);
        let h = (k / 2) as isize;
        let (r, c) = (self.rows as isize, self.cols as isize);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len()];
        for a in 0..k {
            for b in 0..k {
                let gr = (a as isize - h).rem_euclid(r) as usize;
                let gc = (b as isize - h).rem_euclid(c) as usize;
                buf[gr * self.cols + gc].re += kernel[a * k + b];
            }
        }
        self.forward(&mut buf);
        buf
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const TILE: usize = 16;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(data: &[f64], rows: usize, cols: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); rows * cols];
        for u in 0..rows {
            for v in 0..cols {
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..rows {
                    for c in 0..cols {
                        let phase = -2.0
                            * std::f64::consts::PI
                            * ((u * r) as f64 / rows as f64 + (v * c) as f64 / cols as f64);
                        acc += Complex64::from_polar(data[r * cols + c], phase);
                    }
                }
                out[u * cols + v] = acc;
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft_on_rectangular_grid() {
        let (rows, cols) = (5, 7);
        let data: Vec<f64> = (0..rows * cols).map(|i| ((i * 37) % 11) as f64 - 3.0).collect();
        let fast = Fft2::new(rows, cols).forward_real(&data);
        let slow = naive_dft(&data, rows, cols);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn inverse_round_trips() {
        let f = Fft2::new(6, 4);
        let data: Vec<f64> = (0..24).map(|i| (i as f64).sin()).collect();
        let back = f.inverse_real(f.forward_real(&data));
        for (a, b) in back.iter().zip(&data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_kernel_has_unit_otf() {
        let f = Fft2::new(6, 6);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        for c in f.kernel_otf(&k, 3) {
            assert!((c - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }
}
