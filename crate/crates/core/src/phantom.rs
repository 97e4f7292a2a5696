//! Analytic free-breathing, ungated cardiac phantom.
//!
//! Each frame is a layered scene of ellipses (body, lungs, liver, right
//! ventricle, left-ventricular myocardium and blood pool). The cardiac phase
//! drives an asymmetric contraction of the ventricles, the respiratory phase
//! translates the heart and liver along a closed path. Both phases are stored
//! with the frames so that any frame can be re-synthesized exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{param, Error, Result};
use crate::series::DynamicImageSeries;

const SUPERSAMPLE: usize = 4;
const LATERAL: f64 = 0.5;
const BREATH_SKEW: f64 = 0.25;
const RV_LAG: f64 = 0.25;
/// Weight of the respiratory term in `phase_distance`.
pub const RESPIRATORY_WEIGHT: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub grid_size: usize,
    pub n_frames: usize,
    pub cardiac_period_frames: f64,
    pub respiratory_period_frames: f64,
    /// Peak heart displacement in pixels.
    pub respiratory_amplitude: f64,
    pub contraction_fraction: f64,
    pub heart_rate_jitter: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            grid_size: 64,
            n_frames: 200,
            cardiac_period_frames: 20.3,
            respiratory_period_frames: 75.0,
            respiratory_amplitude: 3.0,
            contraction_fraction: 0.3,
            heart_rate_jitter: 0.05,
            seed: 7,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 16 {
            return param(format!("grid_size must be at least 16, got {}", self.grid_size));
        }
        if self.n_frames == 0 {
            return param("n_frames must be positive");
        }
        if !(self.cardiac_period_frames > 0.0) || !(self.respiratory_period_frames > 0.0) {
            return param("cardiac and respiratory periods must be positive");
        }
        if self.cardiac_period_frames == self.respiratory_period_frames {
            return param("cardiac_period_frames must differ from respiratory_period_frames");
        }
        if !(self.respiratory_amplitude >= 0.0)
            || self.respiratory_amplitude >= self.grid_size as f64 / 8.0
        {
            return param(format!(
                "respiratory_amplitude must lie in [0, grid_size/8) = [0, {})",
                self.grid_size as f64 / 8.0
            ));
        }
        if !(0.0..1.0).contains(&self.contraction_fraction) {
            return param("contraction_fraction must lie in [0, 1)");
        }
        if !(self.heart_rate_jitter >= 0.0) || self.heart_rate_jitter >= 1.0 {
            return param("heart_rate_jitter must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSeries {
    pub frames: DynamicImageSeries,
    pub cardiac_phase: Vec<f64>,
    pub respiratory_phase: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    /// Rotation in radians.
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.ax).powi(2) + (v / self.ay).powi(2) <= 1.0
    }

    fn bounding_radius(&self) -> f64 {
        self.ax.max(self.ay)
    }
}

/// Ventricular contraction profile over one beat: fast systole over the first
/// 35% of the cycle, slow diastolic filling afterwards. Returns 0 at end
/// diastole and 1 at end systole.
pub fn contraction_profile(phase: f64) -> f64 {
    let p = phase.rem_euclid(1.0);
    const SYSTOLE: f64 = 0.35;
    if p < SYSTOLE {
        (std::f64::consts::PI * p / (2.0 * SYSTOLE)).sin().powi(2)
    } else {
        (std::f64::consts::PI * (p - SYSTOLE) / (2.0 * (1.0 - SYSTOLE)))
            .cos()
            .powi(2)
    }
}

/// Heart displacement `(dx, dy)` in pixels for a respiratory phase. The path
/// is an ellipse with a smaller lateral axis, so distinct phases map to
/// distinct positions.
pub fn respiratory_displacement(phase: f64, amplitude: f64) -> (f64, f64) {
    let p = phase.rem_euclid(1.0);
    let theta = 2.0 * std::f64::consts::PI * p;
    // second harmonic flattens the excursion near end expiration
    let dy = -amplitude * (theta.cos() + BREATH_SKEW * (2.0 * theta).cos()) / (1.0 + BREATH_SKEW);
    let dx = LATERAL * amplitude * theta.sin();
    (dx, dy)
}

fn scene(spec: &PhantomSpec, cardiac: f64, respiratory: f64) -> Vec<Ellipse> {
    let s = spec.grid_size as f64 / 64.0;
    let cf = spec.contraction_fraction;
    let (dx, dy) = respiratory_displacement(respiratory, spec.respiratory_amplitude);
    let lv = contraction_profile(cardiac);
    // right ventricle lags the left by a quarter beat
    let rv = contraction_profile(cardiac - RV_LAG);

    let hx = 3.0 * s + dx;
    let hy = 1.0 * s + dy;
    let epi = 1.0 - 0.35 * cf * lv;
    let endo = 1.0 - cf * lv;
    let rv_scale = 1.0 - 0.8 * cf * rv;

    vec![
        Ellipse { cx: 0.0, cy: 0.0, ax: 28.0 * s, ay: 22.0 * s, angle: 0.0, value: 0.25 },
        Ellipse { cx: -13.0 * s, cy: -3.0 * s, ax: 8.0 * s, ay: 13.0 * s, angle: 0.15, value: 0.04 },
        Ellipse { cx: 15.0 * s, cy: -3.0 * s, ax: 7.0 * s, ay: 12.0 * s, angle: -0.15, value: 0.04 },
        Ellipse {
            cx: -4.0 * s + 0.5 * dx,
            cy: 19.0 * s + dy,
            ax: 16.0 * s,
            ay: 7.0 * s,
            angle: 0.2,
            value: 0.5,
        },
        Ellipse {
            cx: hx - 8.5 * s,
            cy: hy - 1.5 * s,
            ax: 6.0 * s * rv_scale,
            ay: 9.0 * s * (0.5 + 0.5 * rv_scale),
            angle: -0.35,
            value: 0.8,
        },
        Ellipse {
            cx: hx,
            cy: hy,
            ax: 10.0 * s * epi,
            ay: 9.0 * s * epi,
            angle: 0.3,
            value: 0.45,
        },
        Ellipse {
            cx: hx + 0.4 * s,
            cy: hy,
            ax: 6.5 * s * endo,
            ay: 6.0 * s * endo,
            angle: 0.3,
            value: 0.95,
        },
    ]
}

/// Renders one frame for explicit phases. Pixel `(r, c)` is centered at
/// `(c - n/2, r - n/2)`; coverage is estimated with 4x4 sub-pixel samples.
pub fn render_frame(spec: &PhantomSpec, cardiac_phase: f64, respiratory_phase: f64) -> Vec<f64> {
    let n = spec.grid_size;
    let half = (n / 2) as f64;
    let shapes = scene(spec, cardiac_phase, respiratory_phase);
    let offsets: Vec<f64> = (0..SUPERSAMPLE)
        .map(|k| (k as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5)
        .collect();
    let norm = (SUPERSAMPLE * SUPERSAMPLE) as f64;

    let mut out = vec![0.0; n * n];
    for r in 0..n {
        let y0 = r as f64 - half;
        for c in 0..n {
            let x0 = c as f64 - half;
            // shapes that can touch this pixel
            let local: Vec<&Ellipse> = shapes
                .iter()
                .filter(|e| {
                    let reach = e.bounding_radius() + 1.0;
                    (x0 - e.cx).abs() <= reach && (y0 - e.cy).abs() <= reach
                })
                .collect();
            if local.is_empty() {
                continue;
            }
            let mut acc = 0.0;
            for &oy in &offsets {
                for &ox in &offsets {
                    let (x, y) = (x0 + ox, y0 + oy);
                    let mut v = 0.0;
                    for e in &local {
                        if e.contains(x, y) {
                            v = e.value;
                        }
                    }
                    acc += v;
                }
            }
            out[r * n + c] = acc / norm;
        }
    }
    out
}

fn phase_sequences(spec: &PhantomSpec) -> (Vec<f64>, Vec<f64>) {
    let increment = 1.0 / spec.cardiac_period_frames;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cardiac = Vec::with_capacity(spec.n_frames);
    let mut unwrapped = 0.0;
    for i in 0..spec.n_frames {
        let phase = if spec.heart_rate_jitter == 0.0 {
            i as f64 * increment
        } else {
            unwrapped
        };
        cardiac.push(phase.rem_euclid(1.0));
        let u: f64 = rng.random_range(-1.0..1.0);
        unwrapped += increment * (1.0 + spec.heart_rate_jitter * u);
    }
    let respiratory = (0..spec.n_frames)
        .map(|i| (i as f64 / spec.respiratory_period_frames).rem_euclid(1.0))
        .collect();
    (cardiac, respiratory)
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<GroundTruthSeries> {
    spec.validate()?;
    let (cardiac_phase, respiratory_phase) = phase_sequences(spec);
    let frames: Vec<Vec<f64>> = cardiac_phase
        .iter()
        .zip(&respiratory_phase)
        .map(|(&c, &r)| render_frame(spec, c, r))
        .collect();
    let frames = DynamicImageSeries::from_real_frames(spec.grid_size, spec.grid_size, &frames)?;
    Ok(GroundTruthSeries {
        frames,
        cardiac_phase,
        respiratory_phase,
    })
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let d = (hi - lo).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Combined wrap-around distance between the cardiac and respiratory phases of
/// two frames, `hypot(dc, RESPIRATORY_WEIGHT * dr)`.
pub fn phase_distance(gt: &GroundTruthSeries, i: usize, j: usize) -> Result<f64> {
    let len = gt.cardiac_phase.len();
    for index in [i, j] {
        if index >= len {
            return Err(Error::Index { index, len });
        }
    }
    let dc = circular_distance(gt.cardiac_phase[i], gt.cardiac_phase[j]);
    let dr = circular_distance(gt.respiratory_phase[i], gt.respiratory_phase[j]);
    Ok(dc.hypot(RESPIRATORY_WEIGHT * dr))
}

/// Fraction of frames whose strongest off-diagonal weight points at a frame
/// among the `candidates` closest in phase. `weights` is any square
/// similarity matrix (larger = more similar).
pub fn neighbor_fidelity(
    gt: &GroundTruthSeries,
    weights: &nalgebra::DMatrix<f64>,
    candidates: usize,
) -> Result<f64> {
    let n = gt.cardiac_phase.len();
    if weights.nrows() != n || weights.ncols() != n {
        return Err(Error::Dimension(format!(
            "weight matrix is {}x{}, phantom has {} frames",
            weights.nrows(),
            weights.ncols(),
            n
        )));
    }
    if n < 2 {
        return Ok(1.0);
    }
    let mut hits = 0usize;
    for i in 0..n {
        let best = (0..n)
            .filter(|&j| j != i)
            .max_by(|&a, &b| weights[(i, a)].total_cmp(&weights[(i, b)]))
            .expect("n >= 2");
        let mut by_phase: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (phase_distance(gt, i, j).expect("in range"), j))
            .collect();
        by_phase.sort_by(|a, b| a.0.total_cmp(&b.0));
        let cutoff = by_phase[candidates.min(by_phase.len()) - 1].0;
        if phase_distance(gt, i, best)? <= cutoff {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}
