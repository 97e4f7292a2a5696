//! Reconstruction algorithms: the two-step iterative kernel low-rank
//! manifold method and the navigator, SENSE-initialized and low-rank
//! baselines.

pub mod cg;
mod lowrank;
mod storm;

use std::time::Instant;

use crate::error::{param, Result};
use crate::manifold::LaplacianMatrix;
use crate::series::DynamicImageSeries;

pub use cg::{
    solve_image_update, solve_normal_equations, FrameCoupling, GriddingNormal, NormalApply, SolveOptions,
    SolveReport,
};
pub use lowrank::{lowrank_recon, LowRankConfig};
pub use storm::{central_problem, kernel_lowrank_irls, manifold_solve, navigator_sigma, sense_laplacian, storm_iterative, storm_selfnav, storm_sense, IrlsOutput};

#[derive(Debug, Clone, PartialEq)]
pub struct ReconConfig {
    /// Kernel low-rank weight during Laplacian estimation.
    pub lambda1: f64,
    /// Temporal smoothness weight.
    pub lambda2: f64,
    /// Manifold weight of the final high-resolution solve.
    pub lambda: f64,
    /// Gaussian kernel width on max-normalized frames.
    pub sigma: f64,
    /// Initial IRLS smoothing; `None` uses `0.01 * |K|_2`.
    pub gamma0: Option<f64>,
    pub gamma_decay: f64,
    pub gamma_floor: f64,
    /// Hold gamma at its initial value across outer iterations.
    pub fixed_gamma: bool,
    pub outer_iters: usize,
    pub cg_iters_low: usize,
    pub cg_iters_high: usize,
    pub cg_tol: f64,
    pub central_fraction: f64,
    /// Step-one image size; `None` derives it from `central_fraction`.
    pub low_grid: Option<usize>,
    /// Navigator kernel width relative to the median navigator distance.
    pub nav_sigma: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 1e-5,
            lambda: 1.0,
            sigma: 0.15,
            gamma0: None,
            gamma_decay: 0.8,
            gamma_floor: 1e-4,
            fixed_gamma: false,
            outer_iters: 5,
            cg_iters_low: 50,
            cg_iters_high: 80,
            cg_tol: 1e-6,
            central_fraction: 0.2,
            low_grid: None,
            nav_sigma: 0.2,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda1", self.lambda1),
            ("lambda", self.lambda),
            ("sigma", self.sigma),
            ("gamma_floor", self.gamma_floor),
            ("cg_tol", self.cg_tol),
            ("nav_sigma", self.nav_sigma),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return param(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.lambda2 >= 0.0) {
            return param("lambda2 must be non-negative");
        }
        if let Some(g) = self.gamma0 {
            if !(g > 0.0) {
                return param("gamma0 must be positive");
            }
        }
        if !(self.gamma_decay > 0.0 && self.gamma_decay <= 1.0) {
            return param("gamma_decay must lie in (0, 1]");
        }
        if self.outer_iters == 0 {
            return param("outer_iters must be at least 1");
        }
        if self.cg_iters_low == 0 || self.cg_iters_high == 0 {
            return param("CG iteration counts must be positive");
        }
        if !(self.central_fraction > 0.0 && self.central_fraction <= 1.0) {
            return param("central_fraction must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub images: DynamicImageSeries,
    pub laplacian: Option<LaplacianMatrix>,
    /// Objective value after each outer iteration.
    pub objective_trace: Vec<f64>,
    /// Wall time per stage in seconds.
    pub timings: Vec<(String, f64)>,
}

/// Per-outer-iteration progress callback: `(iteration, objective)`.
pub type Progress<'a> = Option<&'a mut dyn FnMut(usize, f64)>;

pub(crate) struct Stopwatch {
    start: Instant,
    pub(crate) stages: Vec<(String, f64)>,
}

impl Stopwatch {
    pub(crate) fn new() -> Self {
        Self {
            start: Instant::now(),
            stages: Vec::new(),
        }
    }

    pub(crate) fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.stages
            .push((name.to_string(), now.duration_since(self.start).as_secs_f64()));
        self.start = now;
    }
}

/// Data-term weight: regularization strengths are expressed relative to a
/// unit-normalized Fourier transform of an `n x n` image.
pub(crate) fn data_weight(grid: usize) -> f64 {
    1.0 / (grid * grid) as f64
}
