mod common;

use common::*;
use focal_hsi::basis::{compute_basis, lift_planes};
use focal_hsi::forward::{apply_forward, CropSpec};
use focal_hsi::optics::{build_psf_stack, focal_shift_curve, select_lens_positions, OpticalConfig};
use focal_hsi::solver::*;
use focal_hsi::synth::{synthetic_scene, wavelength_grid};
use focal_hsi::{FocalStack, SpectralBasis};
use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;

#[test]
fn blocks_match_dense_dft_diagonalization() {
    let mut rng = Rng::new(21);
    let (h, k, c, v, n) = (4, 3, 3, 2, 2);
    let crop = CropSpec::centered(h, h, k);
    let p = crop.padded_len();
    assert_eq!(crop.padded_height, 6);
    let psfs = random_psfs(&mut rng, n, c, k);
    let basis = random_basis(&mut rng, v, c);
    let (mu1, mu2) = (0.7, 0.3);
    let blocks = precompute_otf_blocks(&psfs, &basis, &crop, mu1, mu2).unwrap();

    let hh = dense_projected(&psfs, &basis, &crop);
    let m = (hh.transpose() * &hh) * mu1 + DMatrix::identity(v * p, v * p) * mu2;
    let f = dft_matrix(6, 6);
    let mut big_f = DMatrix::<Complex64>::zeros(v * p, v * p);
    for a in 0..v {
        big_f.view_mut((a * p, a * p), (p, p)).copy_from(&f);
    }
    let mc = m.map(|x| Complex64::new(x, 0.0));
    let t = &big_f * mc * big_f.adjoint() / Complex64::new(p as f64, 0.0);

    let mut worst: f64 = 0.0;
    for fi in 0..p {
        let mf = blocks.system_matrix(fi);
        for a in 0..v {
            for b in 0..v {
                worst = worst.max((t[(a * p + fi, b * p + fi)] - mf[a * v + b]).norm());
            }
        }
    }
    assert!(worst < 1e-9, "block mismatch {worst:e}");
    for a in 0..v * p {
        for b in 0..v * p {
            if a % p != b % p {
                assert!(t[(a, b)].norm() < 1e-9);
            }
        }
    }
}

#[test]
fn v_update_matches_diagonal_solve() {
    let mut rng = Rng::new(22);
    let (h, w, k, n, mu1) = (5, 4, 3, 3, 0.37);
    let crop = CropSpec::centered(h, w, k);
    let p = crop.padded_len();
    let y = rng.vec(n * h * w);
    let hz = rng.vec(n * p);
    let xi = rng.vec(n * p);
    let fast = v_update(&y, &hz, &xi, mu1, &crop);
    let mask = crop_mask(&crop, n);
    let cty = embed_all(&crop, &y, n);
    let dense: Vec<f64> = (0..n * p)
        .map(|i| (cty[i] + mu1 * hz[i] - xi[i]) / (mask[i] + mu1))
        .collect();
    assert!(max_abs_diff(&fast, &dense) < 1e-12);

    // Fixed point: y = C(Hz), ξ = 0.
    let mut y_fp = vec![0.0; n * h * w];
    for i in 0..n {
        crop.extract(&hz[i * p..(i + 1) * p], &mut y_fp[i * h * w..(i + 1) * h * w]);
    }
    let v = v_update(&y_fp, &hz, &vec![0.0; n * p], mu1, &crop);
    assert!(max_abs_diff(&v, &hz) < 1e-12);

    let big = v_update(&y, &hz, &xi, 1e12, &crop);
    assert!(max_abs_diff(&big, &hz) < 1e-9);
}

fn dense_z(
    hh: &DMatrix<f64>,
    mu1: f64,
    mu2: f64,
    v: &[f64],
    xi: &[f64],
    u: &[f64],
    eta: &[f64],
) -> (Vec<f64>, DMatrix<f64>, Vec<f64>) {
    let data: Vec<f64> = v.iter().zip(xi).map(|(a, b)| mu1 * a + b).collect();
    let prior: Vec<f64> = eta.iter().zip(u).map(|(e, x)| e + mu2 * x).collect();
    let rhs = hh.transpose() * dvec(&data) + dvec(&prior);
    let m = (hh.transpose() * hh) * mu1 + DMatrix::identity(hh.ncols(), hh.ncols()) * mu2;
    let z = m.clone().lu().solve(&rhs).unwrap();
    (z.as_slice().to_vec(), m, rhs.as_slice().to_vec())
}

#[test]
fn z_update_matches_dense_solve() {
    let mut rng = Rng::new(23);
    let mut cases = 0;
    for _ in 0..30 {
        let k = [3, 5][rng.range(0, 1)];
        let ph = rng.range(6, 10);
        let pw = rng.range(6, 10);
        let (h, w) = (ph + 1 - k, pw + 1 - k);
        let c = rng.range(1, 4);
        let v = rng.range(1, 3.min(c));
        let n = rng.range(1, 3);
        let crop = CropSpec::centered(h, w, k);
        let p = crop.padded_len();
        let psfs = random_psfs(&mut rng, n, c, k);
        let basis = random_basis(&mut rng, v, c);
        let (mu1, mu2) = (0.1 + rng.unit(), 0.01 + rng.unit());
        let blocks = precompute_otf_blocks(&psfs, &basis, &crop, mu1, mu2).unwrap();
        let (vv, xi, u, eta) = (rng.vec(n * p), rng.vec(n * p), rng.vec(v * p), rng.vec(v * p));
        let fast = z_update(&vv, &xi, &u, &eta, &blocks).unwrap();
        let hh = dense_projected(&psfs, &basis, &crop);
        let (dense, m, rhs) = dense_z(&hh, mu1, mu2, &vv, &xi, &u, &eta);
        assert!(max_abs_diff(&fast, &dense) < 1e-8);

        // Residual with the operator applied matrix-free.
        let hz = blocks.apply(&fast);
        let hthz = blocks.apply_transpose(&hz);
        let res: Vec<f64> = (0..v * p)
            .map(|i| mu1 * hthz[i] + mu2 * fast[i] - rhs[i])
            .collect();
        let rel = dvec(&res).norm() / dvec(&rhs).norm();
        assert!(rel < 1e-8);
        let dense_res = (&m * dvec(&fast) - dvec(&rhs)).norm() / dvec(&rhs).norm();
        assert!(dense_res < 1e-8);
        cases += 1;
    }
    assert_eq!(cases, 30);
}

#[test]
fn z_update_without_data_weight() {
    let mut rng = Rng::new(24);
    let crop = CropSpec::centered(4, 4, 3);
    let psfs = random_psfs(&mut rng, 2, 3, 3);
    let basis = random_basis(&mut rng, 2, 3);
    let mu2 = 0.4;
    let blocks = precompute_otf_blocks(&psfs, &basis, &crop, 0.0, mu2).unwrap();
    let p = crop.padded_len();
    let (u, eta) = (rng.vec(2 * p), rng.vec(2 * p));
    let z = z_update(&rng.vec(2 * p), &vec![0.0; 2 * p], &u, &eta, &blocks).unwrap();
    let expect: Vec<f64> = u.iter().zip(&eta).map(|(u, e)| u + e / mu2).collect();
    assert!(max_abs_diff(&z, &expect) < 1e-12);
    assert!(z_update(&vec![0.0; 2 * p], &vec![0.0; 2 * p], &u[..p], &eta[..p], &blocks).is_err());
}

#[test]
fn u_update_cases() {
    let mut rng = Rng::new(25);
    let basis = random_basis(&mut rng, 3, 5);
    let (h, w) = (4, 3);
    let z = rng.vec(3 * h * w);
    let eta = rng.vec(3 * h * w);
    let u = u_update(&z, &eta, &basis, &Denoiser::Identity, h, w);
    let sum: Vec<f64> = z.iter().zip(&eta).map(|(a, b)| a + b).collect();
    assert!(max_abs_diff(&u, &sum) < 1e-12);

    let small: Vec<f64> = z.iter().map(|x| x * 1e-3).collect();
    let zeros = vec![0.0; small.len()];
    let u = u_update(&small, &zeros, &basis, &Denoiser::SoftThreshold { tau: 1.0 }, h, w);
    assert!(u.iter().all(|x| *x == 0.0));

    let id = SpectralBasis::identity(2);
    let tau = 0.25;
    let z = vec![2.0 * tau, -2.0 * tau, 0.1, 3.0];
    let u = u_update(&z, &[0.0; 4], &id, &Denoiser::SoftThreshold { tau }, 1, 2);
    assert_eq!(u, vec![tau, -tau, 0.0, 3.0 - tau]);
}

#[test]
fn dual_update_cases() {
    let mut state = SolverState::initial(2, 2, 1, 1);
    state.v = vec![1.0, 2.0, 3.0, 4.0];
    state.u = state.z.clone();
    let hz = state.v.clone();
    dual_update(&mut state, &hz, 0.5, 0.5);
    assert!(state.xi.iter().chain(&state.eta).all(|x| *x == 0.0));

    let r = vec![0.1, -0.2, 0.3, 0.0];
    let hz: Vec<f64> = state.v.iter().zip(&r).map(|(v, r)| v - r).collect();
    dual_update(&mut state, &hz, 1.0, 1.0);
    assert!(max_abs_diff(&state.xi, &r) < 1e-15);
    dual_update(&mut state, &hz, 1.0, 1.0);
    let twice: Vec<f64> = r.iter().map(|x| 2.0 * x).collect();
    assert!(max_abs_diff(&state.xi, &twice) < 1e-15);
}

/// Dense ADMM with the same initialization and update order.
struct DenseAdmm {
    hh: DMatrix<f64>,
    lift: DMatrix<f64>,
    mask: Vec<f64>,
    cty: Vec<f64>,
    mu1: f64,
    mu2: f64,
    tau: f64,
    z: Vec<f64>,
    u: Vec<f64>,
    xi: Vec<f64>,
    eta: Vec<f64>,
}

impl DenseAdmm {
    fn step(&mut self) {
        let hz = &self.hh * dvec(&self.z);
        let v: Vec<f64> = (0..self.mask.len())
            .map(|i| (self.cty[i] + self.mu1 * hz[i] - self.xi[i]) / (self.mask[i] + self.mu1))
            .collect();
        let (z, _, _) = dense_z(&self.hh, self.mu1, self.mu2, &v, &self.xi, &self.u, &self.eta);
        let sum: Vec<f64> = z.iter().zip(&self.eta).map(|(a, b)| a - b / self.mu2).collect();
        let img = &self.lift * dvec(&sum);
        let shrunk = img.map(|x| x.signum() * (x.abs() - self.tau).max(0.0));
        let u = self.lift.transpose() * shrunk;
        let hz = &self.hh * dvec(&z);
        for i in 0..self.xi.len() {
            self.xi[i] += self.mu1 * (v[i] - hz[i]);
        }
        for i in 0..self.eta.len() {
            self.eta[i] += self.mu2 * (u[i] - z[i]);
        }
        self.z = z;
        self.u = u.as_slice().to_vec();
    }
}

#[test]
fn fast_iterates_match_dense_reference() {
    let mut rng = Rng::new(26);
    for (h, k, c, v, n) in [(4, 3, 4, 3, 3), (3, 5, 3, 2, 2), (5, 3, 2, 2, 3)] {
        let crop = CropSpec::centered(h, h, k);
        let p = crop.padded_len();
        assert!(p * c <= 512);
        let psfs = random_psfs(&mut rng, n, c, k);
        let basis = random_basis(&mut rng, v, c);
        let truth = random_cube(&mut rng, h, h, c);
        let stack = apply_forward(&truth, &psfs, &crop).unwrap();
        let tau = 0.02;
        let config = SolverConfig {
            mu1: 1.0,
            mu2: 0.2,
            max_iters: 9,
            step_tolerance: 1e-15,
            divergence_factor: 1e9,
            halving_threshold: 1e9,
            denoiser: Denoiser::SoftThreshold { tau },
            ..SolverConfig::default()
        };
        let mut fast = Admm::new(&stack, &psfs, &basis, &config).unwrap();
        let mut dense = DenseAdmm {
            hh: dense_projected(&psfs, &basis, &crop),
            lift: lift_matrix(&basis, p),
            mask: crop_mask(&crop, n),
            cty: embed_all(&crop, stack.data(), n),
            mu1: 1.0,
            mu2: 0.2,
            tau,
            z: vec![0.5; v * p],
            u: vec![0.5; v * p],
            xi: vec![0.0; n * p],
            eta: vec![0.0; v * p],
        };
        for _ in 0..9 {
            fast.step().unwrap();
            dense.step();
            assert!(max_abs_diff(&fast.state().z, &dense.z) < 1e-7);
            assert!(max_abs_diff(&fast.state().u, &dense.u) < 1e-7);
        }
    }
}

fn sweep_setup(c: usize, n: usize, size: usize) -> (Vec<f64>, focal_hsi::PsfStack, CropSpec) {
    sweep_setup_with(0.7, c, n, size)
}

fn sweep_setup_with(shift_mm: f64, c: usize, n: usize, size: usize) -> (Vec<f64>, focal_hsi::PsfStack, CropSpec) {
    let wl = wavelength_grid(440.0, 720.0, c);
    let cfg = OpticalConfig::linear_sweep(shift_mm, 440.0, 720.0).unwrap();
    let curve = focal_shift_curve(&cfg, &wl).unwrap();
    let pos = select_lens_positions(&curve, n).unwrap();
    let psfs = build_psf_stack(&cfg, &pos, &wl).unwrap();
    let crop = CropSpec::centered(size, size, psfs.kernel_size());
    (wl, psfs, crop)
}

#[test]
fn zero_measurements_with_sparsity_prior_give_zero() {
    let (_, psfs, _) = sweep_setup(8, 3, 16);
    let stack = FocalStack::new(16, 16, psfs.lens_positions_mm().to_vec(), vec![0.0; 16 * 16 * 3]).unwrap();
    let config = SolverConfig {
        mu1: 1.0,
        mu2: 1.0,
        max_iters: 300,
        step_tolerance: 1e-12,
        divergence_factor: f64::INFINITY,
        denoiser: Denoiser::SoftThreshold { tau: 0.05 },
        ..SolverConfig::default()
    };
    let (x, diag) = run_admm(&stack, &psfs, &SpectralBasis::identity(8), &config).unwrap();
    let worst = x.data().iter().cloned().fold(0.0, f64::max);
    assert!(worst < 1e-3, "max {worst} after {:?}", diag.records);
}

#[test]
fn well_posed_noiseless_converges_fast() {
    // Normalized kernels all pass DC with gain one, so only a single spectral
    // coefficient per pixel is identifiable from one sensor.
    let n_px = 64;
    let (wl, psfs, crop) = sweep_setup_with(0.1, 8, 5, n_px);
    assert!(psfs.kernel_size() <= 9);
    let full = synthetic_scene(n_px, n_px, &wl, 3).unwrap();
    let basis = compute_basis(&[&full], 1).unwrap();
    let p = n_px * n_px;
    let coeffs = focal_hsi::basis::project_planes(full.data(), p, &basis);
    let scene = focal_hsi::HyperspectralCube::new(n_px, n_px, wl.clone(), lift_planes(&coeffs, p, &basis)).unwrap();
    let stack = apply_forward(&scene, &psfs, &crop).unwrap();
    let (x, diag) = run_admm(&stack, &psfs, &basis, &SolverConfig::default()).unwrap();
    assert_eq!(diag.stop, Some(StopReason::Converged), "{}", diag.to_csv());
    assert!(diag.iterations() <= 4);
    assert!(diag.final_step().unwrap() < 1e-3);
    assert!(focal_hsi::metrics::psnr(&x, &scene, 1.0).unwrap() > 30.0);
}

#[test]
fn mismatch_triggers_single_halving() {
    let (wl, psfs, crop) = sweep_setup(16, 5, 24);
    let cfg = OpticalConfig::linear_sweep(0.7, 440.0, 720.0).unwrap();
    let shifted: Vec<f64> = psfs.lens_positions_mm().iter().map(|p| p + 0.12).collect();
    let wrong = build_psf_stack(&cfg, &shifted, &wl).unwrap();
    let scene = synthetic_scene(24, 24, &wl, 5).unwrap();
    let wrong_crop = CropSpec::centered(24, 24, wrong.kernel_size());
    assert_ne!(crop, wrong_crop);
    let stack = apply_forward(&scene, &wrong, &wrong_crop).unwrap();
    let stack = FocalStack::new(24, 24, psfs.lens_positions_mm().to_vec(), stack.into_data()).unwrap();
    let basis = SpectralBasis::identity(16);
    let config = SolverConfig {
        mu1: 1.0,
        mu2: 1e-2,
        step_tolerance: 1e-12,
        divergence_factor: 1e9,
        halving_threshold: 1e-3,
        denoiser: Denoiser::TotalVariation { weight: 0.02, inner_iters: 20 },
        ..SolverConfig::default()
    };
    let (x, diag) = run_admm(&stack, &psfs, &basis, &config).unwrap();
    assert_eq!(diag.halvings.len(), 1);
    let ev = &diag.halvings[0];
    assert_eq!((ev.iteration, ev.from, ev.to), (4, 16, 8));
    assert!(diag.iterations() <= 9);
    assert_eq!(diag.records[4].basis_dim, 8);
    assert_eq!(x.channels(), 16);
}

#[test]
fn halving_at_dimension_one_aborts() {
    let (_, psfs, crop) = sweep_setup(4, 2, 12);
    let scene = focal_hsi::HyperspectralCube::new(12, 12, psfs.wavelengths_nm().to_vec(), vec![0.3; 12 * 12 * 4]).unwrap();
    let stack = apply_forward(&scene, &psfs, &crop).unwrap();
    let basis = SpectralBasis::new(4, vec![0.5; 4]).unwrap();
    let config = SolverConfig {
        mu1: 1.0,
        mu2: 1e-2,
        step_tolerance: 1e-15,
        divergence_factor: 1e9,
        halving_threshold: 1e-12,
        denoiser: Denoiser::SoftThreshold { tau: 0.05 },
        ..SolverConfig::default()
    };
    let err = run_admm(&stack, &psfs, &basis, &config).unwrap_err();
    assert!(err.is_numerical());
}

#[test]
fn diagnostics_are_deterministic_across_thread_counts() {
    let (wl, psfs, crop) = sweep_setup(8, 5, 32);
    let scene = synthetic_scene(32, 32, &wl, 9).unwrap();
    let stack = apply_forward(&scene, &psfs, &crop).unwrap();
    let basis = compute_basis(&[&scene], 4).unwrap();
    let config = SolverConfig {
        mu1: 1.0,
        mu2: 1e-2,
        denoiser: Denoiser::TotalVariation { weight: 0.01, inner_iters: 10 },
        ..SolverConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let (x, d) = run_admm(&stack, &psfs, &basis, &config).unwrap();
            (x, d.to_csv())
        })
    };
    let (x1, d1) = run(1);
    let (x4, d4) = run(4);
    assert_eq!(d1, d4);
    assert_eq!(x1, x4);
    assert_eq!(run(1).1, d1);
}

#[test]
fn cgls_reaches_minimum_norm_least_squares() {
    let mut rng = Rng::new(27);
    let (h, k, c, v, n) = (4, 3, 3, 2, 2);
    let crop = CropSpec::centered(h, h, k);
    let psfs = random_psfs(&mut rng, n, c, k);
    let basis = random_basis(&mut rng, v, c);
    let blocks = precompute_otf_blocks(&psfs, &basis, &crop, 1.0, 1.0).unwrap();
    let y = rng.vec(n * h * h);
    let z = cgls(&blocks, &crop, &y, vec![0.0; v * crop.padded_len()], 500);

    let mut a = dense_projected(&psfs, &basis, &crop);
    let mask = crop_mask(&crop, n);
    let keep: Vec<usize> = (0..mask.len()).filter(|i| mask[*i] == 1.0).collect();
    a = a.select_rows(&keep);
    let pinv = a.pseudo_inverse(1e-10).unwrap();
    let dense = pinv * dvec(&y);
    assert!(max_abs_diff(&z, dense.as_slice()) < 1e-8);
}
