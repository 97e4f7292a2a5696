use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use super::cg::{solve_normal_equations, FrameCoupling, SolveOptions};
use super::{data_weight, Progress, ReconResult, Stopwatch};
use crate::error::{param, Error, Result};
use crate::manifold::frame_gram;
use crate::operators::{MultiCoilKSpace, SamplingOperator};
use crate::series::DynamicImageSeries;

/// Schatten-p low-rank baseline parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankConfig {
    /// Penalty weight on `|X|_p^p` for data scaled to unit max modulus.
    pub lambda: f64,
    /// Schatten exponent in `(0, 1]`; 1 is the nuclear norm.
    pub p: f64,
    pub outer_iters: usize,
    pub cg_iters: usize,
    pub cg_tol: f64,
    /// Initial smoothing relative to the largest squared singular value.
    pub eps_rel: f64,
    pub eps_decay: f64,
    pub eps_floor_rel: f64,
}

impl Default for LowRankConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            p: 0.5,
            outer_iters: 10,
            cg_iters: 30,
            cg_tol: 1e-6,
            eps_rel: 0.1,
            eps_decay: 0.5,
            eps_floor_rel: 1e-6,
        }
    }
}

impl LowRankConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return param("low-rank lambda must be positive");
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return param(format!("Schatten exponent must lie in (0, 1], got {}", self.p));
        }
        if self.outer_iters == 0 || self.cg_iters == 0 {
            return param("iteration counts must be positive");
        }
        if !(self.eps_rel > 0.0) || !(self.eps_floor_rel > 0.0) {
            return param("smoothing parameters must be positive");
        }
        if !(self.eps_decay > 0.0 && self.eps_decay <= 1.0) {
            return param("eps_decay must lie in (0, 1]");
        }
        Ok(())
    }
}

/// `f(G)` for Hermitian `G` through its eigendecomposition.
fn hermitian_function(g: &DMatrix<Complex64>, f: impl Fn(f64) -> f64) -> DMatrix<Complex64> {
    let eig = SymmetricEigen::new(g.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| Complex64::new(f(v), 0.0)));
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// IRLS for `w |A X - B|^2 + lambda |X|_p^p` on the Casorati matrix. Each
/// step majorizes the smoothed Schatten penalty
/// `trace((Xᴴ X + eps I)^(p/2))` by `trace(X M Xᴴ)` with
/// `M = (p/2) (Xᴴ X + eps I)^(p/2 - 1)`.
pub fn lowrank_recon(
    op: &SamplingOperator,
    b: &MultiCoilKSpace,
    cfg: &LowRankConfig,
    mut progress: Progress<'_>,
) -> Result<ReconResult> {
    cfg.validate()?;
    op.check_kspace(b)?;
    let mut clock = Stopwatch::new();
    let n = op.n_frames();
    let normal = op.normal_operator();
    let w = data_weight(op.grid);
    let adj_b = op.adjoint(b)?;
    let mut rhs = adj_b.clone();
    rhs.scale(w);

    // Scale from a short unregularized solve.
    let init_opts = SolveOptions {
        max_iters: 10,
        tol: cfg.cg_tol,
        data_weight: w,
        check_psd: false,
    };
    let (x0, _) = solve_normal_equations(&normal, &rhs, &FrameCoupling::zeros(n), &init_opts, None)?;
    let scale = x0.max_modulus();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Numerical("initial estimate is identically zero".into()));
    }
    let inv = 1.0 / scale;
    rhs.scale(inv);
    let mut adj_b_n = adj_b;
    adj_b_n.scale(inv);
    let b_norm_sqr = b.norm_sqr() * inv * inv;
    let mut x = x0;
    x.scale(inv);

    let gram0 = frame_gram(&x);
    let top = SymmetricEigen::new(gram0.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, &v| a.max(v));
    let mut eps = (cfg.eps_rel * top).max(f64::MIN_POSITIVE);
    let eps_floor = cfg.eps_floor_rel * top;
    let half_p = 0.5 * cfg.p;
    let opts = SolveOptions {
        max_iters: cfg.cg_iters,
        tol: cfg.cg_tol,
        data_weight: w,
        check_psd: false,
    };
    let mut gram = gram0;
    let mut objective_trace = Vec::with_capacity(cfg.outer_iters);
    for it in 1..=cfg.outer_iters {
        let m = hermitian_function(&gram, |v| half_p * (v.max(0.0) + eps).powf(half_p - 1.0)) * Complex64::new(cfg.lambda, 0.0);
        let coupling = FrameCoupling::hermitian(&((&m + m.adjoint()) * Complex64::new(0.5, 0.0)));
        let (next, _) = solve_normal_equations(&normal, &rhs, &coupling, &opts, Some(&x))?;
        x = next;
        gram = frame_gram(&x);

        let ax = normal.apply(&x);
        let misfit = (x.dot(&ax).re - 2.0 * x.dot(&adj_b_n).re + b_norm_sqr).max(0.0);
        let penalty: f64 = SymmetricEigen::new(gram.clone())
            .eigenvalues
            .iter()
            .map(|&v| (v.max(0.0) + eps).powf(half_p))
            .sum();
        let objective = w * misfit + cfg.lambda * penalty;
        objective_trace.push(objective);
        if let Some(cb) = progress.as_mut() {
            cb(it, objective);
        }
        eps = (eps * cfg.eps_decay).max(eps_floor);
    }
    clock.lap("lowrank");
    let mut images: DynamicImageSeries = x;
    images.scale(scale);
    Ok(ReconResult {
        images,
        laplacian: None,
        objective_trace,
        timings: clock.stages,
    })
}
