//! Low-rank spectral eigenspace: `x ≈ (Bᵀ ⊗ I) z`, applied pixel by pixel.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::types::{HyperspectralCube, SpectralBasis};

/// Eigenspace image `z`: `dim` coefficient planes.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
}

impl CoefficientField {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * dim {
            return Err(Error::shape(format!(
                "coefficient data has {} entries, expected {height}x{width}x{dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite coefficient at index {i}")));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, dim: usize, value: f64) -> Self {
        Self {
            height,
            width,
            dim,
            data: vec![value; height * width * dim],
        }
    }

    pub(crate) fn from_raw(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * dim);
        Self {
            height,
            width,
            dim,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Top-`v` right singular vectors of the stacked `(pixels × C)` spectra.
///
/// No mean is subtracted. Rows come out in descending singular-value order,
/// each signed so that its largest-magnitude entry is positive.
pub fn compute_basis(training: &[&HyperspectralCube], v: usize) -> Result<SpectralBasis> {
    let first = training
        .first()
        .ok_or_else(|| Error::Basis("no training cubes".into()))?;
    let c = first.channels();
    if v == 0 || v > c {
        return Err(Error::Basis(format!("basis dimension {v} must be in 1..={c}")));
    }
    let mut gram = DMatrix::<f64>::zeros(c, c);
    for cube in training {
        if cube.channels() != c {
            return Err(Error::shape("training cubes disagree on channel count"));
        }
        let n = cube.height() * cube.width();
        let data = cube.data();
        for a in 0..c {
            let pa = &data[a * n..(a + 1) * n];
            for b in a..c {
                let pb = &data[b * n..(b + 1) * n];
                let dot: f64 = pa.iter().zip(pb).map(|(x, y)| x * y).sum();
                gram[(a, b)] += dot;
                if a != b {
                    gram[(b, a)] += dot;
                }
            }
        }
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]];
    let floor = top * 1e-13 * c as f64;
    let weakest = eig.eigenvalues[order[v - 1]];
    if !(top > 0.0) || weakest <= floor {
        return Err(Error::Basis(format!(
            "training spectra have rank below {v} (eigenvalue {weakest:e} vs largest {top:e})"
        )));
    }
    let mut rows = Vec::with_capacity(v * c);
    for &k in order.iter().take(v) {
        let col = eig.eigenvectors.column(k);
        let mut best = 0;
        for j in 1..c {
            if col[j].abs() > col[best].abs() {
                best = j;
            }
        }
        let sign = if col[best] < 0.0 { -1.0 } else { 1.0 };
        let norm = col.norm();
        rows.extend(col.iter().map(|x| sign * x / norm));
    }
    SpectralBasis::new(c, rows)
}

/// `z = B x` for every pixel of `plane_len`-sized planes.
pub fn project_planes(data: &[f64], plane_len: usize, basis: &SpectralBasis) -> Vec<f64> {
    let (v, c) = (basis.dim(), basis.channels());
    debug_assert_eq!(data.len(), plane_len * c);
    let mut out = vec![0.0; plane_len * v];
    for k in 0..v {
        let row = basis.row(k);
        let dst = &mut out[k * plane_len..(k + 1) * plane_len];
        for (j, &b) in row.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            let src = &data[j * plane_len..(j + 1) * plane_len];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += b * s;
            }
        }
    }
    out
}

/// `x = Bᵀ z` for every pixel of `plane_len`-sized planes.
pub fn lift_planes(coeffs: &[f64], plane_len: usize, basis: &SpectralBasis) -> Vec<f64> {
    let (v, c) = (basis.dim(), basis.channels());
    debug_assert_eq!(coeffs.len(), plane_len * v);
    let mut out = vec![0.0; plane_len * c];
    for j in 0..c {
        let dst = &mut out[j * plane_len..(j + 1) * plane_len];
        for k in 0..v {
            let b = basis.row(k)[j];
            if b == 0.0 {
                continue;
            }
            let src = &coeffs[k * plane_len..(k + 1) * plane_len];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += b * s;
            }
        }
    }
    out
}

pub fn project(cube: &HyperspectralCube, basis: &SpectralBasis) -> Result<CoefficientField> {
    if cube.channels() != basis.channels() {
        return Err(Error::shape(format!(
            "cube has {} channels, basis expects {}",
            cube.channels(),
            basis.channels()
        )));
    }
    let n = cube.height() * cube.width();
    CoefficientField::new(
        cube.height(),
        cube.width(),
        basis.dim(),
        project_planes(cube.data(), n, basis),
    )
}

/// Back to the image domain; the caller supplies the channel wavelengths.
pub fn lift(coeffs: &CoefficientField, basis: &SpectralBasis, wavelengths_nm: &[f64]) -> Result<HyperspectralCube> {
    if coeffs.dim() != basis.dim() {
        return Err(Error::shape(format!(
            "coefficients have dim {}, basis has {}",
            coeffs.dim(),
            basis.dim()
        )));
    }
    if wavelengths_nm.len() != basis.channels() {
        return Err(Error::shape("wavelength count does not match basis channels"));
    }
    let n = coeffs.height() * coeffs.width();
    HyperspectralCube::new(
        coeffs.height(),
        coeffs.width(),
        wavelengths_nm.to_vec(),
        lift_planes(coeffs.data(), n, basis),
    )
}

/// Keeps the leading `⌈v/2⌉` rows.
pub fn halve_basis(basis: &SpectralBasis) -> Result<SpectralBasis> {
    let v = basis.dim();
    if v < 2 {
        return Err(Error::Basis("cannot halve a one-dimensional basis".into()));
    }
    let keep = v.div_ceil(2);
    SpectralBasis::new(basis.channels(), basis.rows()[..keep * basis.channels()].to_vec())
}
