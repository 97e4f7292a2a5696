//! Dual-density golden-angle spiral sampling.
//!
//! Coordinates are in cycles/pixel, so the Nyquist box of the image grid is
//! `[-0.5, 0.5)^2` and the radial Nyquist spacing of a single full-FOV
//! interleaf is `1 / grid_size`.

use std::f64::consts::PI;
use std::ops::Range;

use crate::error::{param, Result};

pub const K_MAX: f64 = 0.5;

/// Azimuthal increment between successive readouts, `pi * (3 - sqrt 5)`.
pub fn golden_angle() -> f64 {
    PI * (3.0 - 5f64.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiralInterleaf {
    pub samples: Vec<[f64; 2]>,
    pub rotation_angle: f64,
    pub is_navigator: bool,
}

impl SpiralInterleaf {
    pub fn rotated(&self, angle: f64) -> SpiralInterleaf {
        let (s, c) = angle.sin_cos();
        SpiralInterleaf {
            samples: self
                .samples
                .iter()
                .map(|&[x, y]| [c * x - s * y, s * x + c * y])
                .collect(),
            rotation_angle: (self.rotation_angle + angle).rem_euclid(2.0 * PI),
            is_navigator: self.is_navigator,
        }
    }

    pub fn radii(&self) -> Vec<f64> {
        self.samples.iter().map(|k| k[0].hypot(k[1])).collect()
    }
}

/// Radial sampling density of a single interleaf, as a fraction of Nyquist.
///
/// Fermi transition from `inner` to `outer`; the transition is centered
/// four widths beyond `inner_extent * K_MAX` so that the inner disk keeps the
/// full inner density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityProfile {
    pub inner: f64,
    pub outer: f64,
    pub inner_extent: f64,
}

impl DensityProfile {
    fn width(&self) -> f64 {
        0.02 * K_MAX
    }

    fn center(&self) -> f64 {
        self.inner_extent * K_MAX + 4.0 * self.width()
    }

    pub fn density(&self, r: f64) -> f64 {
        let w = self.width();
        self.outer + (self.inner - self.outer) / (1.0 + ((r - self.center()) / w).exp())
    }

    /// `integral_0^r density(s) ds`
    fn integral(&self, r: f64) -> f64 {
        let w = self.width();
        let c = self.center();
        // stable softplus
        let softplus = |t: f64| if t > 30.0 { t } else { t.exp().ln_1p() };
        let fermi_int = r - w * (softplus((r - c) / w) - softplus(-c / w));
        self.outer * r + (self.inner - self.outer) * fermi_int
    }

    /// Radial pitch per turn, in cycles/pixel.
    pub fn pitch(&self, r: f64, grid_size: usize) -> f64 {
        1.0 / (self.density(r) * grid_size as f64)
    }
}

pub fn make_spiral(
    samples_per_readout: usize,
    density_inner: f64,
    density_outer: f64,
    inner_extent: f64,
    grid_size: usize,
) -> Result<SpiralInterleaf> {
    if samples_per_readout < 2 {
        return param("samples_per_readout must be at least 2");
    }
    if !(density_outer > 0.0) || !(density_outer <= density_inner) {
        return param(format!(
            "densities must satisfy 0 < density_outer <= density_inner, got inner {density_inner}, outer {density_outer}"
        ));
    }
    if !(inner_extent > 0.0 && inner_extent < 1.0) {
        return param("inner_extent must lie in (0, 1)");
    }
    if grid_size == 0 {
        return param("grid_size must be positive");
    }
    let profile = DensityProfile {
        inner: density_inner,
        outer: density_outer,
        inner_extent,
    };
    // theta(r) = 2 pi * grid * integral(r), sampled at constant angular rate
    let scale = 2.0 * PI * grid_size as f64;
    let theta_of = |r: f64| scale * profile.integral(r);
    let theta_end = theta_of(K_MAX);
    let last = samples_per_readout - 1;

    let mut samples = Vec::with_capacity(samples_per_readout);
    let mut lo_prev = 0.0;
    for s in 0..samples_per_readout {
        let theta = theta_end * s as f64 / last as f64;
        let r = if s == 0 {
            0.0
        } else if s == last {
            K_MAX
        } else {
            // theta(r) is strictly increasing; bisection from the previous radius
            let (mut lo, mut hi) = (lo_prev, K_MAX);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if theta_of(mid) < theta {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        lo_prev = r;
        samples.push([r * theta.cos(), r * theta.sin()]);
    }
    Ok(SpiralInterleaf {
        samples,
        rotation_angle: 0.0,
        is_navigator: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiralAcquisition {
    pub interleaves: Vec<SpiralInterleaf>,
    /// Interleaf index ranges per frame.
    pub frames: Vec<Range<usize>>,
    pub samples_per_readout: usize,
    pub density_inner: f64,
    pub density_outer: f64,
    pub inner_extent: f64,
}

impl SpiralAcquisition {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_interleaves(&self, frame: usize) -> &[SpiralInterleaf] {
        &self.interleaves[self.frames[frame].clone()]
    }

    /// Concatenated sample coordinates of one frame, interleaf by interleaf.
    pub fn frame_samples(&self, frame: usize) -> Vec<[f64; 2]> {
        self.frame_interleaves(frame)
            .iter()
            .flat_map(|il| il.samples.iter().copied())
            .collect()
    }

    /// Sample positions (within `frame_samples`) that belong to navigator
    /// interleaves.
    pub fn frame_navigator_mask(&self, frame: usize) -> Vec<bool> {
        self.frame_interleaves(frame)
            .iter()
            .flat_map(|il| std::iter::repeat_n(il.is_navigator, il.samples.len()))
            .collect()
    }

    pub fn has_navigators(&self) -> bool {
        self.frames
            .iter()
            .any(|r| self.interleaves[r.clone()].iter().any(|il| il.is_navigator))
    }
}

/// Rotates `base` by successive golden-angle increments. With
/// `navigator_every = Some(p)`, slots `0, p, 2p, ...` hold a navigator at
/// angle 0 and the golden-angle counter only advances on imaging readouts.
/// The returned acquisition has one frame per interleaf.
pub fn golden_angle_schedule(
    base: &SpiralInterleaf,
    n_interleaves: usize,
    navigator_every: Option<usize>,
    density: DensityProfile,
) -> Result<SpiralAcquisition> {
    if n_interleaves == 0 {
        return param("n_interleaves must be at least 1");
    }
    if navigator_every == Some(0) {
        return param("navigator_every must be positive when given");
    }
    let gamma = golden_angle();
    let mut counter = 0u64;
    let mut interleaves = Vec::with_capacity(n_interleaves);
    for slot in 0..n_interleaves {
        let is_nav = navigator_every.is_some_and(|p| slot % p == 0);
        let mut il = if is_nav {
            base.clone()
        } else {
            let angle = (counter as f64 * gamma).rem_euclid(2.0 * PI);
            counter += 1;
            base.rotated(angle)
        };
        il.is_navigator = is_nav;
        interleaves.push(il);
    }
    Ok(SpiralAcquisition {
        frames: (0..n_interleaves).map(|m| m..m + 1).collect(),
        interleaves,
        samples_per_readout: base.samples.len(),
        density_inner: density.inner,
        density_outer: density.outer,
        inner_extent: density.inner_extent,
    })
}

/// Groups consecutive interleaves into frames; a trailing partial group is
/// dropped.
pub fn bin_frames(acq: &SpiralAcquisition, spirals_per_frame: usize) -> Result<SpiralAcquisition> {
    if spirals_per_frame == 0 {
        return param("spirals_per_frame must be at least 1");
    }
    let total = acq.interleaves.len();
    if spirals_per_frame > total {
        return param(format!(
            "spirals_per_frame ({spirals_per_frame}) exceeds the number of interleaves ({total})"
        ));
    }
    let n_frames = total / spirals_per_frame;
    let kept = n_frames * spirals_per_frame;
    Ok(SpiralAcquisition {
        interleaves: acq.interleaves[..kept].to_vec(),
        frames: (0..n_frames)
            .map(|f| f * spirals_per_frame..(f + 1) * spirals_per_frame)
            .collect(),
        ..acq.clone()
    })
}

/// Trajectory parameters bundled for convenience.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub samples_per_readout: usize,
    pub density_inner: f64,
    pub density_outer: f64,
    pub inner_extent: f64,
    pub n_interleaves: usize,
    pub spirals_per_frame: usize,
    pub navigator_every: Option<usize>,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            samples_per_readout: 256,
            density_inner: 0.2,
            density_outer: 0.02,
            inner_extent: 0.2,
            n_interleaves: 1000,
            spirals_per_frame: 5,
            navigator_every: None,
        }
    }
}

impl TrajectorySpec {
    pub fn density(&self) -> DensityProfile {
        DensityProfile {
            inner: self.density_inner,
            outer: self.density_outer,
            inner_extent: self.inner_extent,
        }
    }

    pub fn build(&self, grid_size: usize) -> Result<SpiralAcquisition> {
        let base = make_spiral(
            self.samples_per_readout,
            self.density_inner,
            self.density_outer,
            self.inner_extent,
            grid_size,
        )?;
        let acq = golden_angle_schedule(&base, self.n_interleaves, self.navigator_every, self.density())?;
        bin_frames(&acq, self.spirals_per_frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(grid: usize) -> SpiralInterleaf {
        make_spiral(256, 0.2, 0.02, 0.2, grid).unwrap()
    }

    fn density() -> DensityProfile {
        DensityProfile {
            inner: 0.2,
            outer: 0.02,
            inner_extent: 0.2,
        }
    }

    #[test]
    fn radius_is_monotone_and_starts_at_origin() {
        let il = base(64);
        let r = il.radii();
        assert_eq!(r[0], 0.0);
        assert!(r.windows(2).all(|w| w[1] >= w[0]));
        assert!((r.last().unwrap() - K_MAX).abs() < 1e-12);
    }

    #[test]
    fn rejects_increasing_density() {
        assert!(make_spiral(256, 0.02, 0.2, 0.2, 64).is_err());
        assert!(make_spiral(256, 0.2, 0.0, 0.2, 64).is_err());
        assert!(make_spiral(256, 0.2, 0.02, 1.0, 64).is_err());
    }

    #[test]
    fn uniform_density_gives_constant_pitch() {
        let il = make_spiral(2000, 0.1, 0.1, 0.2, 64).unwrap();
        let r = il.radii();
        let n = r.len();
        // constant angular step; pitch per turn = dr * (2 pi / dtheta)
        let total_theta = 2.0 * PI * 64.0 * 0.1 * K_MAX;
        let dtheta = total_theta / (n - 1) as f64;
        let expected = 1.0 / (0.1 * 64.0);
        for w in r.windows(2).skip(1) {
            let pitch = (w[1] - w[0]) * 2.0 * PI / dtheta;
            assert!((pitch - expected).abs() / expected < 0.01);
        }
    }

    #[test]
    fn default_pitch_is_five_and_fifty_nyquist() {
        let d = density();
        let nyquist = 1.0 / 64.0;
        let inner = d.pitch(0.05, 64) / nyquist;
        let outer = d.pitch(0.45, 64) / nyquist;
        assert!((inner - 5.0).abs() < 0.05, "inner {inner}");
        assert!((outer - 50.0).abs() < 0.5, "outer {outer}");
    }

    #[test]
    fn schedule_angles() {
        let b = base(32);
        let one = golden_angle_schedule(&b, 1, None, density()).unwrap();
        assert_eq!(one.interleaves.len(), 1);
        assert_eq!(one.interleaves[0].rotation_angle, 0.0);

        let three = golden_angle_schedule(&b, 3, None, density()).unwrap();
        let g = golden_angle();
        for (m, il) in three.interleaves.iter().enumerate() {
            let expected = (m as f64 * g).rem_euclid(2.0 * PI);
            assert!((il.rotation_angle - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn navigators_repeat_identically() {
        let b = base(32);
        let acq = golden_angle_schedule(&b, 30, Some(10), density()).unwrap();
        let navs: Vec<_> = acq.interleaves.iter().filter(|il| il.is_navigator).collect();
        assert_eq!(navs.len(), 3);
        assert!(navs.iter().all(|il| il.samples == navs[0].samples));
        // golden angle between consecutive imaging readouts
        let imaging: Vec<_> = acq.interleaves.iter().filter(|il| !il.is_navigator).collect();
        for w in imaging.windows(2) {
            let d = (w[1].rotation_angle - w[0].rotation_angle).rem_euclid(2.0 * PI);
            assert!((d - golden_angle()).abs() < 1e-9);
        }
    }

    #[test]
    fn binning_counts() {
        let b = make_spiral(8, 0.2, 0.02, 0.2, 16).unwrap();
        let acq = golden_angle_schedule(&b, 1000, None, density()).unwrap();
        assert_eq!(bin_frames(&acq, 5).unwrap().n_frames(), 200);

        let acq = golden_angle_schedule(&b, 7, None, density()).unwrap();
        let binned = bin_frames(&acq, 5).unwrap();
        assert_eq!(binned.n_frames(), 1);
        assert_eq!(binned.interleaves.len(), 5);
        assert!(bin_frames(&acq, 8).is_err());
    }

    #[test]
    fn binned_ranges_partition_prefix() {
        let b = make_spiral(8, 0.2, 0.02, 0.2, 16).unwrap();
        for (n, per) in [(1000, 5), (37, 4), (12, 12), (9, 1)] {
            let acq = golden_angle_schedule(&b, n, Some(3), density()).unwrap();
            let binned = bin_frames(&acq, per).unwrap();
            let mut seen = vec![0u32; n];
            for r in &binned.frames {
                for i in r.clone() {
                    seen[i] += 1;
                }
            }
            let kept = (n / per) * per;
            assert!(seen[..kept].iter().all(|&c| c == 1));
            assert!(seen[kept..].iter().all(|&c| c == 0));
        }
    }
}
