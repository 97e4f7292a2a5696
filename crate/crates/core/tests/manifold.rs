use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use storm_core::manifold::{
    gaussian_kernel, irls_weights, is_psd, kernel_from_sq_distances, laplacian, manifold_energy,
    normalized_sq_distances, temporal_laplacian, KernelMatrix,
};
use storm_core::phantom::{generate_phantom, neighbor_fidelity, PhantomSpec};
use storm_core::DynamicImageSeries;

fn random_series(seed: u64, frames: usize, n: usize) -> DynamicImageSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DynamicImageSeries::zeros(frames, n, n);
    x.data_mut()
        .iter_mut()
        .for_each(|z| *z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    x
}

fn random_weights(seed: u64, n: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(0.0..1.0);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    w
}

/// `(K + gamma I)^(-1/2)` by the Denman-Beavers iteration, independent of
/// any eigendecomposition.
fn inverse_sqrt_oracle(k: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let n = k.nrows();
    let a = k + DMatrix::identity(n, n) * gamma;
    let mut y = a.clone();
    let mut z = DMatrix::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        y = y_next;
        z = z_next;
    }
    z
}

#[test]
fn irls_weights_match_independent_oracle() {
    let x = random_series(1, 6, 4);
    let k = gaussian_kernel(&x, 2.0).unwrap();
    let gamma = 0.3;
    let w = irls_weights(&k, gamma).unwrap();
    let p = inverse_sqrt_oracle(&k.k, gamma);
    let mut oracle = k.k.component_mul(&p) / (k.sigma * k.sigma);
    let off: f64 = oracle.sum() - oracle.trace();
    if off < 0.0 {
        oracle = -oracle;
    }
    assert!((&w - &oracle).amax() < 1e-10, "{}", (&w - &oracle).amax());
}

#[test]
fn irls_laplacian_has_non_negative_diagonal() {
    for seed in 0..5 {
        let x = random_series(seed, 8, 4);
        let k = gaussian_kernel(&x, 3.0).unwrap();
        let l = laplacian(&irls_weights(&k, 0.05).unwrap()).unwrap();
        assert!(l.l.diagonal().iter().all(|&d| d >= 0.0));
        assert!(l.l.trace() >= 0.0);
    }
}

#[test]
fn kernel_is_psd_and_bounded() {
    let x = random_series(2, 12, 5);
    let k = gaussian_kernel(&x, 3.0).unwrap();
    assert!(k.k.iter().all(|&v| v > 0.0 && v <= 1.0));
    assert!(is_psd(&k.k, 1e-8));
}

#[test]
fn normalized_distances_are_scale_free() {
    let x = random_series(3, 5, 4);
    let mut y = x.clone();
    y.scale(123.0);
    let a = normalized_sq_distances(&x);
    let b = normalized_sq_distances(&y);
    for (ra, rb) in a.iter().zip(&b) {
        for (u, v) in ra.iter().zip(rb) {
            assert!((u - v).abs() <= 1e-12 * u.max(1.0));
        }
    }
}

#[test]
fn noiseless_phantom_kernel_finds_phase_neighbors() {
    let gt = generate_phantom(&PhantomSpec::default()).unwrap();
    let d = normalized_sq_distances(&gt.frames);
    let k = kernel_from_sq_distances(&d, 4.5).unwrap();
    let score = neighbor_fidelity(&gt, &k.k, 3).unwrap();
    assert!(score >= 0.9, "fidelity {score}");
}

#[test]
fn kernel_decreases_with_distance() {
    let d = vec![vec![0.0, 0.5, 2.0], vec![0.5, 0.0, 1.0], vec![2.0, 1.0, 0.0]];
    let k = kernel_from_sq_distances(&d, 1.0).unwrap();
    assert!(k.k[(0, 1)] > k.k[(1, 2)] && k.k[(1, 2)] > k.k[(0, 2)]);
}

fn permute(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], perm[j])])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn laplacian_rows_sum_to_zero_and_is_psd(seed in any::<u64>(), n in 2usize..12) {
        let w = random_weights(seed, n);
        let l = laplacian(&w).unwrap();
        let norm = l.spectral_norm().max(1.0);
        for i in 0..n {
            prop_assert!(l.l.row(i).sum().abs() <= 1e-10 * norm);
        }
        prop_assert_eq!(&l.l, &l.l.transpose());
        prop_assert!(is_psd(&l.l, 1e-8));
    }

    #[test]
    fn energy_equals_pairwise_sum(seed in any::<u64>(), n in 2usize..7) {
        let w = random_weights(seed, n);
        let x = random_series(seed ^ 0x55, n, 3);
        let l = laplacian(&w).unwrap();
        let e = manifold_energy(&x, &l.l).unwrap();
        let mut direct = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d: f64 = x.frame(i).iter().zip(x.frame(j).iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
                direct += 0.5 * w[(i, j)] * d;
            }
        }
        prop_assert!(e >= 0.0);
        prop_assert!((e - direct).abs() <= 1e-10 * direct.max(1e-300));
    }

    #[test]
    fn temporal_trace_identity(seed in any::<u64>(), n in 2usize..10) {
        let x = random_series(seed, n, 3);
        let l = temporal_laplacian(n).unwrap();
        let e = manifold_energy(&x, &l.l).unwrap();
        let direct: f64 = (0..n - 1)
            .map(|i| x.frame(i + 1).iter().zip(x.frame(i).iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>())
            .sum();
        prop_assert!((e - direct).abs() <= 1e-12 * direct.max(1.0));
        // null space is exactly the constants
        let eig = nalgebra::SymmetricEigen::new(l.l.clone());
        let zeros = eig.eigenvalues.iter().filter(|v| v.abs() < 1e-10).count();
        prop_assert_eq!(zeros, 1);
        prop_assert!((l.l.clone() * nalgebra::DVector::from_element(n, 1.0)).amax() < 1e-14);
    }

    #[test]
    fn permutation_equivariance(seed in any::<u64>()) {
        let n = 6;
        let x = random_series(seed, n, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let mut xp = DynamicImageSeries::zeros(n, 3, 3);
        for (i, &p) in perm.iter().enumerate() {
            let src = x.frame(p).to_owned();
            xp.frame_mut(i).assign(&src);
        }
        let k = gaussian_kernel(&x, 2.0).unwrap();
        let kp = gaussian_kernel(&xp, 2.0).unwrap();
        prop_assert!((permute(&k.k, &perm) - &kp.k).amax() < 1e-12);
        let w = irls_weights(&k, 0.1).unwrap();
        let wp = irls_weights(&KernelMatrix { k: kp.k.clone(), sigma: 2.0 }, 0.1).unwrap();
        prop_assert!((permute(&w, &perm) - &wp).amax() < 1e-10);
        let l = laplacian(&w).unwrap();
        let lp = laplacian(&wp).unwrap();
        prop_assert!((permute(&l.l, &perm) - &lp.l).amax() < 1e-10);
    }
}
