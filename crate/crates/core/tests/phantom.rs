use proptest::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use storm_core::phantom::{generate_phantom, phase_distance, PhantomSpec, RESPIRATORY_WEIGHT};

/// Magnitude spectrum of a mean-removed signal, zero-padded to `len`.
fn spectrum(signal: &[f64], len: usize) -> Vec<f64> {
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let mut buf: Vec<Complex64> = signal.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    buf.resize(len, Complex64::default());
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    buf[..len / 2].iter().map(|z| z.norm()).collect()
}

fn has_peak_near(spec: &[f64], len: usize, freq: f64, tol: f64) -> bool {
    let lo = ((freq - tol) * len as f64).floor() as usize;
    let hi = ((freq + tol) * len as f64).ceil() as usize;
    let window_max = spec[lo..=hi].iter().cloned().fold(0.0, f64::max);
    // a genuine local maximum that stands out from the surrounding band
    let band_lo = lo.saturating_sub(hi - lo);
    let band_hi = (hi + (hi - lo)).min(spec.len() - 1);
    let outside = spec[band_lo..lo]
        .iter()
        .chain(&spec[hi + 1..=band_hi])
        .cloned()
        .fold(0.0, f64::max);
    window_max > outside
}

#[test]
fn frame_difference_energy_peaks_at_motion_frequencies() {
    let spec = PhantomSpec { heart_rate_jitter: 0.0, ..Default::default() };
    let gt = generate_phantom(&spec).unwrap();
    let energy: Vec<f64> = (0..spec.n_frames - 1)
        .map(|i| {
            gt.frames
                .frame(i + 1)
                .iter()
                .zip(gt.frames.frame(i).iter())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum()
        })
        .collect();
    let len = 4096;
    let s = spectrum(&energy, len);
    assert!(has_peak_near(&s, len, 1.0 / 20.3, 0.004), "cardiac peak missing");
    assert!(has_peak_near(&s, len, 1.0 / 75.0, 0.004), "respiratory peak missing");
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn phase_distance_tracks_image_distance() {
    let gt = generate_phantom(&PhantomSpec::default()).unwrap();
    let d = gt.frames.pairwise_sq_distances();
    let n = gt.frames.n_frames();
    let mut phase = Vec::new();
    let mut image = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            phase.push(phase_distance(&gt, i, j).unwrap());
            image.push(d[i][j].sqrt());
        }
    }
    let rho = spearman(&phase, &image);
    assert!(rho > 0.8, "Spearman {rho}");
}

#[test]
fn generation_is_deterministic() {
    let spec = PhantomSpec { n_frames: 12, grid_size: 32, ..Default::default() };
    let a = generate_phantom(&spec).unwrap();
    let b = generate_phantom(&spec).unwrap();
    assert_eq!(a.frames, b.frames);
    assert_eq!(a.cardiac_phase, b.cardiac_phase);
    let other = generate_phantom(&PhantomSpec { seed: 8, ..spec }).unwrap();
    assert_ne!(a.cardiac_phase, other.cardiac_phase);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn phase_distance_is_a_symmetric_circle_metric(
        seed in any::<u64>(),
        i in 0usize..30,
        j in 0usize..30,
        k in 0usize..30,
    ) {
        let spec = PhantomSpec { n_frames: 30, grid_size: 16, respiratory_amplitude: 1.0, seed, ..Default::default() };
        let gt = generate_phantom(&spec).unwrap();
        let dij = phase_distance(&gt, i, j).unwrap();
        prop_assert_eq!(dij, phase_distance(&gt, j, i).unwrap());
        prop_assert_eq!(phase_distance(&gt, i, i).unwrap(), 0.0);
        prop_assert!(dij <= 0.5f64.hypot(0.5 * RESPIRATORY_WEIGHT) + 1e-12);
        let dik = phase_distance(&gt, i, k).unwrap();
        let dkj = phase_distance(&gt, k, j).unwrap();
        prop_assert!(dij <= dik + dkj + 1e-12);
        prop_assert!(phase_distance(&gt, i, 30).is_err());
    }

    #[test]
    fn intensities_stay_in_unit_interval(seed in any::<u64>(), amp in 0.0f64..1.9, contraction in 0.0f64..0.9) {
        let spec = PhantomSpec {
            n_frames: 4,
            grid_size: 16,
            respiratory_amplitude: amp,
            contraction_fraction: contraction,
            seed,
            ..Default::default()
        };
        let gt = generate_phantom(&spec).unwrap();
        prop_assert!(gt.frames.data().iter().all(|z| z.im == 0.0 && z.re >= 0.0 && z.re <= 1.0));
        prop_assert!(gt.cardiac_phase.iter().chain(&gt.respiratory_phase).all(|p| (0.0..1.0).contains(p)));
    }
}
