use std::f64::consts::PI;

use proptest::prelude::*;
use storm_core::trajectory::{bin_frames, golden_angle, golden_angle_schedule, make_spiral, DensityProfile, TrajectorySpec, K_MAX};

fn angle_diff(a: f64, b: f64) -> f64 {
    (a - b).rem_euclid(2.0 * PI)
}

#[test]
fn golden_angle_value() {
    assert!((golden_angle() - PI * (3.0 - 5f64.sqrt())).abs() < 1e-15);
}

#[test]
fn default_acquisition_has_two_hundred_frames() {
    let acq = TrajectorySpec::default().build(64).unwrap();
    assert_eq!(acq.n_frames(), 200);
    assert!(acq.frames.iter().all(|r| r.len() == 5));
    assert!(!acq.has_navigators());
}

#[test]
fn inner_region_is_densely_covered() {
    // Five interleaves of the default design fill the central disk to about
    // Nyquist; the periphery stays heavily undersampled.
    let acq = TrajectorySpec::default().build(64).unwrap();
    let samples = acq.frame_samples(0);
    let nyquist = 1.0 / 64.0;
    let mut worst: f64 = 0.0;
    for i in -6i32..=6 {
        for j in -6i32..=6 {
            let p = [i as f64 * nyquist, j as f64 * nyquist];
            if p[0].hypot(p[1]) > 0.08 {
                continue;
            }
            let nearest = samples
                .iter()
                .map(|s| (s[0] - p[0]).hypot(s[1] - p[1]))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(nearest);
        }
    }
    assert!(2.0 * worst <= 1.25 * nyquist, "central gap {}", 2.0 * worst / nyquist);

    let density = TrajectorySpec::default().density();
    let outer = density.pitch(0.45, 64) / 5.0;
    assert!((6.0..=10.0).contains(&(outer * 64.0)), "outer gap {outer}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spiral_invariants(
        samples in 32usize..400,
        d_in in 0.05f64..1.0,
        ratio in 0.05f64..1.0,
        extent in 0.05f64..0.9,
        grid in prop_oneof![Just(32usize), Just(64), Just(128)],
    ) {
        let il = make_spiral(samples, d_in, d_in * ratio, extent, grid).unwrap();
        let r = il.radii();
        prop_assert_eq!(r.len(), samples);
        prop_assert_eq!(r[0], 0.0);
        prop_assert!(r.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(r.iter().all(|&v| v <= K_MAX + 1e-12));
        prop_assert!((r[samples - 1] - K_MAX).abs() < 1e-9);
        prop_assert!(!il.is_navigator);
    }

    #[test]
    fn schedule_and_binning_invariants(n in 5usize..120, per_frame in 1usize..7, nav in prop_oneof![Just(None), (2usize..6).prop_map(Some)]) {
        let base = make_spiral(64, 0.2, 0.02, 0.2, 64).unwrap();
        let density = DensityProfile { inner: 0.2, outer: 0.02, inner_extent: 0.2 };
        let acq = golden_angle_schedule(&base, n, nav, density).unwrap();
        let imaging: Vec<_> = acq.interleaves.iter().filter(|il| !il.is_navigator).collect();
        for w in imaging.windows(2) {
            prop_assert!((angle_diff(w[1].rotation_angle, w[0].rotation_angle) - golden_angle()).abs() < 1e-9);
        }
        for (m, il) in acq.interleaves.iter().enumerate() {
            let expect_nav = nav.is_some_and(|p| m % p == 0);
            prop_assert_eq!(il.is_navigator, expect_nav);
            if il.is_navigator {
                prop_assert_eq!(&il.samples, &base.samples);
            }
        }
        if per_frame <= n {
            let binned = bin_frames(&acq, per_frame).unwrap();
            let mut next = 0;
            for r in &binned.frames {
                prop_assert_eq!(r.start, next);
                prop_assert_eq!(r.len(), per_frame);
                next = r.end;
            }
            prop_assert_eq!(next, binned.interleaves.len());
            prop_assert_eq!(binned.n_frames(), n / per_frame);
        } else {
            prop_assert!(bin_frames(&acq, per_frame).is_err());
        }
    }
}
