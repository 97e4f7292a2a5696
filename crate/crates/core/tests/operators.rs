use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use storm_core::operators::{
    add_noise, compress_coils, default_low_grid, restrict_central, simulate_coilmaps, CoilMaps, FrameSampling,
    MultiCoilKSpace, SamplingMode, SamplingOperator,
};
use storm_core::trajectory::{TrajectorySpec, K_MAX};
use storm_core::DynamicImageSeries;

fn rand_c(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn random_series(rng: &mut ChaCha8Rng, frames: usize, n: usize) -> DynamicImageSeries {
    let mut x = DynamicImageSeries::zeros(frames, n, n);
    x.data_mut().iter_mut().for_each(|z| *z = rand_c(rng));
    x
}

fn random_kspace(rng: &mut ChaCha8Rng, op: &SamplingOperator) -> MultiCoilKSpace {
    MultiCoilKSpace {
        data: op
            .frames
            .iter()
            .map(|f| (0..op.n_coils()).map(|_| (0..f.coords.len()).map(|_| rand_c(rng)).collect()).collect())
            .collect(),
        noise_sigma: 0.0,
    }
}

fn random_operator(rng: &mut ChaCha8Rng, n: usize, frames: usize, coils: usize, samples: usize) -> SamplingOperator {
    let maps = simulate_coilmaps(n, coils).unwrap();
    let frames = (0..frames)
        .map(|_| FrameSampling {
            coords: (0..samples)
                .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
                .collect(),
            navigator: vec![false; samples],
        })
        .collect();
    SamplingOperator::from_frames(frames, maps, SamplingMode::Full, 1.0).unwrap()
}

/// Brute-force `sum_r s(r) x(r) exp(-i 2 pi k.r)`.
fn direct_forward(n: usize, map: &[Complex64], image: &[Complex64], coords: &[[f64; 2]]) -> Vec<Complex64> {
    let half = (n / 2) as f64;
    coords
        .iter()
        .map(|k| {
            let mut acc = Complex64::default();
            for py in 0..n {
                for px in 0..n {
                    let phase = -2.0 * PI * (k[0] * (px as f64 - half) + k[1] * (py as f64 - half));
                    acc += map[py * n + px] * image[py * n + px] * Complex64::from_polar(1.0, phase);
                }
            }
            acc
        })
        .collect()
}

fn rel(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

#[test]
fn adjoint_identity_randomized() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..20 {
        let op = random_operator(&mut rng, 16, 3, 2, 60);
        let x = random_series(&mut rng, 3, 16);
        let y = random_kspace(&mut rng, &op);
        let lhs = op.forward(&x).unwrap().dot(&y);
        let rhs = x.dot(&op.adjoint(&y).unwrap());
        let scale = x.norm() * y.norm_sqr().sqrt();
        assert!((lhs - rhs).norm() <= 1e-6 * scale, "{lhs} vs {rhs}");
    }
}

#[test]
fn adjoint_identity_in_central_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let op = random_operator(&mut rng, 16, 3, 2, 200);
    let b = random_kspace(&mut rng, &op);
    let (op_c, _) = restrict_central(&op, &b, 0.4, 8).unwrap();
    assert_eq!(op_c.mode, SamplingMode::Central);
    let x = random_series(&mut rng, 3, 8);
    let y = random_kspace(&mut rng, &op_c);
    let lhs = op_c.forward(&x).unwrap().dot(&y);
    let rhs = x.dot(&op_c.adjoint(&y).unwrap());
    assert!((lhs - rhs).norm() <= 1e-6 * x.norm() * y.norm_sqr().sqrt());
}

#[test]
fn forward_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for n in [8, 12, 16] {
        let op = random_operator(&mut rng, n, 1, 2, 17);
        let x = random_series(&mut rng, 1, n);
        let img = x.frame(0).to_vec();
        let got = op.forward_frame(0, &img);
        for c in 0..2 {
            let want = direct_forward(n, &op.maps.maps[c], &img, &op.frames[0].coords);
            let err = rel(&got[c], &want);
            assert!(err <= 1e-6, "n={n} coil={c}: {err}");
        }
    }
}

#[test]
fn zero_inputs_give_zero_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let op = random_operator(&mut rng, 8, 2, 2, 10);
    let b = op.forward(&DynamicImageSeries::zeros(2, 8, 8)).unwrap();
    assert_eq!(b.norm_sqr(), 0.0);
    let x = op.adjoint(&b).unwrap();
    assert_eq!(x.norm_sqr(), 0.0);
}

#[test]
fn impulse_gives_fourier_shift() {
    let n = 8;
    let coords = vec![[0.1, -0.3], [0.45, 0.2], [-0.25, 0.05]];
    let op = SamplingOperator::from_frames(
        vec![FrameSampling { navigator: vec![false; 3], coords: coords.clone() }],
        CoilMaps::uniform(n),
        SamplingMode::Full,
        1.0,
    )
    .unwrap();
    let (py, px) = (2usize, 5usize);
    let mut img = vec![Complex64::default(); n * n];
    img[py * n + px] = Complex64::new(1.0, 0.0);
    let got = &op.forward_frame(0, &img)[0];
    for (k, v) in coords.iter().zip(got) {
        let r = [px as f64 - 4.0, py as f64 - 4.0];
        let want = Complex64::from_polar(1.0, -2.0 * PI * (k[0] * r[0] + k[1] * r[1]));
        assert!((v - want).norm() < 1e-6);
    }
}

#[test]
fn dc_atom_adjoint_is_constant() {
    let n = 8;
    let op = SamplingOperator::from_frames(
        vec![FrameSampling { navigator: vec![false], coords: vec![[0.0, 0.0]] }],
        CoilMaps::uniform(n),
        SamplingMode::Full,
        1.0,
    )
    .unwrap();
    let b = MultiCoilKSpace { data: vec![vec![vec![Complex64::new(1.0, 0.0)]]], noise_sigma: 0.0 };
    let x = op.adjoint(&b).unwrap();
    for v in x.frame(0).iter() {
        assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-6);
    }
}

#[test]
fn frame_independence() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let op = random_operator(&mut rng, 8, 3, 2, 20);
    let x = random_series(&mut rng, 3, 8);
    let b = op.forward(&x).unwrap();
    let mut y = x.clone();
    y.frame_mut(2).iter_mut().for_each(|z| *z += Complex64::new(3.0, -1.0));
    let b2 = op.forward(&y).unwrap();
    assert_eq!(b.data[0], b2.data[0]);
    assert_eq!(b.data[1], b2.data[1]);
    assert_ne!(b.data[2], b2.data[2]);
}

#[test]
fn coil_maps_have_unit_sum_of_squares_and_full_rank() {
    let maps = simulate_coilmaps(64, 8).unwrap();
    assert!(maps.sum_of_squares().iter().all(|s| (s - 1.0).abs() < 1e-12));
    let stacked = DMatrix::from_fn(64 * 64, 8, |p, c| maps.maps[c][p]);
    let sv = stacked.svd(false, false).singular_values;
    assert_eq!(sv.iter().filter(|&&s| s > 1e-8).count(), 8);
}

#[test]
fn noise_statistics_and_determinism() {
    let n = 120_000;
    let b = MultiCoilKSpace { data: vec![vec![vec![Complex64::default(); n]]], noise_sigma: 0.0 };
    assert_eq!(add_noise(&b, 0.0, 1).unwrap(), b);
    let sigma = 0.01;
    let noisy = add_noise(&b, sigma, 7).unwrap();
    assert_eq!(noisy, add_noise(&b, sigma, 7).unwrap());
    assert_eq!(noisy.noise_sigma, sigma);
    let var = noisy.norm_sqr() / n as f64;
    assert!((var / (2.0 * sigma * sigma) - 1.0).abs() < 0.05, "{var}");
}

#[test]
fn compression_of_duplicated_coils_keeps_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let one = simulate_coilmaps(8, 1).unwrap();
    let maps = CoilMaps { grid: 8, maps: vec![one.maps[0].clone(); 3] };
    let frames = vec![FrameSampling {
        coords: (0..30).map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]).collect(),
        navigator: vec![false; 30],
    }];
    let op = SamplingOperator::from_frames(frames, maps.clone(), SamplingMode::Full, 1.0).unwrap();
    let b = op.forward(&random_series(&mut rng, 1, 8)).unwrap();
    let cc = compress_coils(&b, &maps, 0.05).unwrap();
    assert_eq!(cc.maps.n_coils(), 1);
    assert!(cc.relative_error < 1e-6);
}

#[test]
fn compression_error_is_below_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let acq = TrajectorySpec { n_interleaves: 20, ..Default::default() }.build(32).unwrap();
    let maps = simulate_coilmaps(32, 8).unwrap();
    let op = SamplingOperator::new(&acq, maps.clone()).unwrap();
    let mut x = DynamicImageSeries::zeros(op.n_frames(), 32, 32);
    x.data_mut().iter_mut().for_each(|z| *z = Complex64::new(rng.random_range(0.0..1.0), 0.0));
    let b = op.forward(&x).unwrap();
    let cc = compress_coils(&b, &maps, 0.05).unwrap();
    assert!(cc.maps.n_coils() < 8);

    // back-project onto the physical coils and measure the error directly
    let mut err = 0.0;
    for (f, frame) in b.data.iter().enumerate() {
        for c in 0..8 {
            for s in 0..frame[c].len() {
                let approx: Complex64 = (0..cc.maps.n_coils())
                    .map(|v| cc.basis[(c, v)].conj() * cc.kspace.data[f][v][s])
                    .sum();
                err += (frame[c][s] - approx).norm_sqr();
            }
        }
    }
    let measured = (err / b.norm_sqr()).sqrt();
    assert!(measured < 0.05);
    assert!((measured - cc.relative_error).abs() < 1e-9);

    // compressed maps reproduce the compressed data
    let op_v = SamplingOperator::new(&acq, cc.maps.clone()).unwrap();
    let bv = op_v.forward(&x).unwrap();
    let diff: f64 = bv.data.iter().flatten().flatten().zip(cc.kspace.data.iter().flatten().flatten())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    assert!((diff / bv.norm_sqr()).sqrt() < 1e-10);
}

#[test]
fn restrict_central_counts_and_identity() {
    let acq = TrajectorySpec { n_interleaves: 10, ..Default::default() }.build(32).unwrap();
    let op = SamplingOperator::new(&acq, simulate_coilmaps(32, 2).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let b = op.forward(&random_series(&mut rng, op.n_frames(), 32)).unwrap();

    let (same_op, same_b) = restrict_central(&op, &b, 1.0, 32).unwrap();
    assert_eq!(same_b, b);
    assert_eq!(same_op.frames, op.frames);

    let low = default_low_grid(32, 0.2);
    assert_eq!(low, 8);
    let (op_c, b_c) = restrict_central(&op, &b, 0.2, low).unwrap();
    for f in 0..op.n_frames() {
        let expected = op.frames[f]
            .coords
            .iter()
            .filter(|k| k[0].hypot(k[1]) <= 0.2 * K_MAX)
            .count();
        assert_eq!(op_c.frames[f].coords.len(), expected);
        assert_eq!(b_c.data[f][0].len(), expected);
        let ratio = 32.0 / low as f64;
        assert!(op_c.frames[f].coords.iter().all(|k| k[0].hypot(k[1]) <= 0.2 * K_MAX * ratio + 1e-12));
    }
    assert_eq!(op_c.grid, low);

    let ring = SamplingOperator::from_frames(
        vec![FrameSampling { coords: vec![[0.3, 0.1], [-0.2, 0.4]], navigator: vec![false; 2] }],
        CoilMaps::uniform(32),
        SamplingMode::Full,
        1.0,
    )
    .unwrap();
    let rb = ring.forward(&random_series(&mut rng, 1, 32)).unwrap();
    assert!(restrict_central(&ring, &rb, 0.2, low).is_err());
}

#[test]
fn default_low_grid_is_even() {
    assert_eq!(default_low_grid(64, 0.2), 14);
    assert_eq!(default_low_grid(64, 0.25), 16);
    assert_eq!(default_low_grid(256, 0.2), 52);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, bcoef in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = random_operator(&mut rng, 8, 2, 2, 25);
        let x = random_series(&mut rng, 2, 8);
        let y = random_series(&mut rng, 2, 8);
        let mut comb = x.clone();
        comb.scale(a);
        comb.axpy(Complex64::new(bcoef, 0.0), &y);
        let lhs = op.forward(&comb).unwrap();
        let fx = op.forward(&x).unwrap();
        let fy = op.forward(&y).unwrap();
        let mut num = 0.0;
        for f in 0..2 {
            for c in 0..2 {
                for s in 0..25 {
                    let want = fx.data[f][c][s] * a + fy.data[f][c][s] * bcoef;
                    num += (lhs.data[f][c][s] - want).norm_sqr();
                }
            }
        }
        prop_assert!(num.sqrt() <= 1e-10 * lhs.norm_sqr().sqrt().max(1e-300));
    }

    #[test]
    fn adjoint_identity_holds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let op = random_operator(&mut rng, 8, 2, 2, 30);
        let x = random_series(&mut rng, 2, 8);
        let y = random_kspace(&mut rng, &op);
        let lhs = op.forward(&x).unwrap().dot(&y);
        let rhs = x.dot(&op.adjoint(&y).unwrap());
        prop_assert!((lhs - rhs).norm() <= 1e-6 * x.norm() * y.norm_sqr().sqrt());
    }
}
