use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use super::cg::{solve_normal_equations, FrameCoupling, SolveOptions};
use super::{data_weight, Progress, ReconConfig, ReconResult, Stopwatch};
use crate::error::{Error, Result};
use crate::manifold::{
    irls_weights, kernel_from_sq_distances, laplacian, manifold_energy, navigator_weights,
    symmetric_spectral_norm, temporal_laplacian, KernelMatrix, LaplacianMatrix,
};
use crate::operators::{default_low_grid, restrict_central, MultiCoilKSpace, NormalOperator, SamplingOperator};
use crate::series::DynamicImageSeries;

/// Low-resolution output of the kernel low-rank IRLS scheme.
#[derive(Debug, Clone)]
pub struct IrlsOutput {
    pub result: ReconResult,
    /// Unregularized CG-SENSE images used for initialization.
    pub sense_images: DynamicImageSeries,
    /// `L^(0)` (from the SENSE images) through `L^(outer_iters)`.
    pub laplacians: Vec<LaplacianMatrix>,
    /// Max modulus of the SENSE images; the IRLS runs on data divided by it.
    pub scale: f64,
}

fn combined(l: &DMatrix<f64>, weight: f64, temporal: &DMatrix<f64>, temporal_weight: f64) -> FrameCoupling {
    FrameCoupling::real(l * weight + temporal * temporal_weight)
}

fn kernel_of(x: &DynamicImageSeries, sigma: f64) -> Result<KernelMatrix> {
    kernel_from_sq_distances(&x.pairwise_sq_distances(), sigma)
}

fn reweight(x: &DynamicImageSeries, sigma: f64, gamma: f64) -> Result<LaplacianMatrix> {
    let k = kernel_of(x, sigma)?;
    let w = irls_weights(&k, gamma)?;
    let mut l = laplacian(&w)?;
    l.gamma = Some(gamma);
    Ok(l)
}

/// `|A X - B|^2` from normal-equation quantities.
fn data_misfit(normal: &NormalOperator<'_>, x: &DynamicImageSeries, adj_b: &DynamicImageSeries, b_norm_sqr: f64) -> f64 {
    let ax = normal.apply(x);
    let v = x.dot(&ax).re - 2.0 * x.dot(adj_b).re + b_norm_sqr;
    v.max(0.0)
}

/// `trace((K + gamma I)^(1/2))`, the smoothed nuclear norm of the feature
/// matrix.
fn smoothed_feature_nuclear_norm(k: &DMatrix<f64>, gamma: f64) -> f64 {
    SymmetricEigen::new(k.clone())
        .eigenvalues
        .iter()
        .map(|&v| (v + gamma).max(0.0).sqrt())
        .sum()
}

fn sense_init(
    normal: &NormalOperator<'_>,
    b: &MultiCoilKSpace,
    cfg: &ReconConfig,
) -> Result<(DynamicImageSeries, DynamicImageSeries, f64)> {
    let op = normal.operator();
    let w = data_weight(op.grid);
    let adj_b = op.adjoint(b)?;
    let mut rhs = adj_b.clone();
    rhs.scale(w);
    let opts = SolveOptions {
        max_iters: cg_iters_sense(cfg),
        tol: cfg.cg_tol,
        data_weight: w,
        check_psd: false,
    };
    let (sense, _) = solve_normal_equations(normal, &rhs, &FrameCoupling::zeros(op.n_frames()), &opts, None)?;
    let scale = sense.max_modulus();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Numerical("SENSE initialization is identically zero".into()));
    }
    Ok((sense, adj_b, scale))
}

fn cg_iters_sense(cfg: &ReconConfig) -> usize {
    cfg.cg_iters_low
}

fn initial_gamma(cfg: &ReconConfig, k: &KernelMatrix) -> f64 {
    cfg.gamma0
        .unwrap_or_else(|| 0.01 * symmetric_spectral_norm(&k.k))
        .max(cfg.gamma_floor)
}

/// Laplacian estimated directly from the CG-SENSE reconstruction of the
/// given (central) data.
pub fn sense_laplacian(op_c: &SamplingOperator, b_c: &MultiCoilKSpace, cfg: &ReconConfig) -> Result<LaplacianMatrix> {
    cfg.validate()?;
    let normal = op_c.normal_operator();
    let (sense, _, scale) = sense_init(&normal, b_c, cfg)?;
    let mut xs = sense;
    xs.scale(1.0 / scale);
    let sigma = cfg.sigma;
    let k0 = kernel_of(&xs, sigma)?;
    let gamma = initial_gamma(cfg, &k0);
    reweight(&xs, sigma, gamma)
}

/// Alternates the image update with `lambda1 L + lambda2 L_NN` and the
/// kernel reweighting of the Laplacian, starting from the SENSE images.
pub fn kernel_lowrank_irls(
    op_c: &SamplingOperator,
    b_c: &MultiCoilKSpace,
    cfg: &ReconConfig,
    mut progress: Progress<'_>,
) -> Result<IrlsOutput> {
    cfg.validate()?;
    op_c.check_kspace(b_c)?;
    let mut clock = Stopwatch::new();
    let n = op_c.n_frames();
    let normal = op_c.normal_operator();
    let (sense, adj_b, scale) = sense_init(&normal, b_c, cfg)?;
    clock.lap("sense");

    // Work on data scaled so the SENSE images have unit max modulus.
    let inv = 1.0 / scale;
    let mut adj_b_n = adj_b;
    adj_b_n.scale(inv);
    let b_norm_sqr = b_c.norm_sqr() * inv * inv;
    let w = data_weight(op_c.grid);
    let mut rhs = adj_b_n.clone();
    rhs.scale(w);

    let temporal = temporal_laplacian(n)?;
    let mut x = sense.clone();
    x.scale(inv);
    let sigma = cfg.sigma;
    let k0 = kernel_of(&x, sigma)?;
    let mut gamma = initial_gamma(cfg, &k0);
    let mut laplacians = vec![reweight(&x, sigma, gamma)?];
    let mut objective_trace = Vec::with_capacity(cfg.outer_iters);
    let opts = SolveOptions {
        max_iters: cfg.cg_iters_low,
        tol: cfg.cg_tol,
        data_weight: w,
        check_psd: true,
    };

    for it in 1..=cfg.outer_iters {
        let current = laplacians.last().expect("non-empty");
        let coupling = combined(&current.l, cfg.lambda1, &temporal.l, cfg.lambda2);
        let (next, _) = solve_normal_equations(&normal, &rhs, &coupling, &opts, Some(&x))?;
        x = next;

        let k = kernel_of(&x, sigma)?;
        let objective = w * data_misfit(&normal, &x, &adj_b_n, b_norm_sqr)
            + 2.0 * cfg.lambda1 * smoothed_feature_nuclear_norm(&k.k, gamma)
            + cfg.lambda2 * manifold_energy(&x, &temporal.l)?;
        objective_trace.push(objective);
        if let Some(cb) = progress.as_mut() {
            cb(it, objective);
        }

        if !cfg.fixed_gamma {
            gamma = (gamma * cfg.gamma_decay).max(cfg.gamma_floor);
        }
        let w_next = irls_weights(&k, gamma)?;
        let mut l_next = laplacian(&w_next)?;
        l_next.gamma = Some(gamma);
        laplacians.push(l_next);
    }
    clock.lap("irls");

    let mut images = x;
    images.scale(scale);
    Ok(IrlsOutput {
        result: ReconResult {
            images,
            laplacian: laplacians.last().cloned(),
            objective_trace,
            timings: clock.stages,
        },
        sense_images: sense,
        laplacians,
        scale,
    })
}

/// Final high-resolution solve with `lambda * L / |L|_2 + lambda2 L_NN`.
pub fn manifold_solve(
    op: &SamplingOperator,
    b: &MultiCoilKSpace,
    l: &LaplacianMatrix,
    cfg: &ReconConfig,
) -> Result<DynamicImageSeries> {
    op.check_kspace(b)?;
    if l.size() != op.n_frames() {
        return Err(Error::Dimension(format!(
            "Laplacian is {0}x{0}, data has {1} frames",
            l.size(),
            op.n_frames()
        )));
    }
    let temporal = temporal_laplacian(op.n_frames())?;
    let coupling = combined(&l.normalized().l, cfg.lambda, &temporal.l, cfg.lambda2);
    let normal = op.normal_operator();
    let w = data_weight(op.grid);
    let opts = SolveOptions {
        max_iters: cfg.cg_iters_high,
        tol: cfg.cg_tol,
        data_weight: w,
        check_psd: true,
    };
    let mut rhs = op.adjoint(b)?;
    rhs.scale(w);
    let (x, _) = solve_normal_equations(&normal, &rhs, &coupling, &opts, None)?;
    Ok(x)
}

/// Imaging readouts restricted to the central k-space at the step-one grid.
pub fn central_problem(
    op: &SamplingOperator,
    b: &MultiCoilKSpace,
    cfg: &ReconConfig,
) -> Result<(SamplingOperator, MultiCoilKSpace)> {
    let (op_img, b_img) = if op.has_navigators() {
        op.without_navigators(b)?
    } else {
        (op.clone(), b.clone())
    };
    let low = cfg
        .low_grid
        .unwrap_or_else(|| default_low_grid(op.grid, cfg.central_fraction));
    restrict_central(&op_img, &b_img, cfg.central_fraction, low)
}

/// Two-step reconstruction: Laplacian from the central k-space by kernel
/// low-rank IRLS, then one regularized high-resolution solve.
pub fn storm_iterative(
    op: &SamplingOperator,
    b: &MultiCoilKSpace,
    cfg: &ReconConfig,
    progress: Progress<'_>,
) -> Result<ReconResult> {
    cfg.validate()?;
    let mut clock = Stopwatch::new();
    let (op_c, b_c) = central_problem(op, b, cfg)?;
    let irls = kernel_lowrank_irls(&op_c, &b_c, cfg, progress)?;
    clock.lap("laplacian");
    let l = irls.result.laplacian.clone().expect("IRLS returns a Laplacian");
    let images = manifold_solve(op, b, &l, cfg)?;
    clock.lap("high_res");
    Ok(ReconResult {
        images,
        laplacian: Some(l),
        objective_trace: irls.result.objective_trace,
        timings: clock.stages,
    })
}

/// Laplacian from the CG-SENSE reconstruction of the central k-space, no
/// alternation.
pub fn storm_sense(op: &SamplingOperator, b: &MultiCoilKSpace, cfg: &ReconConfig) -> Result<ReconResult> {
    cfg.validate()?;
    let mut clock = Stopwatch::new();
    let (op_c, b_c) = central_problem(op, b, cfg)?;
    let l = sense_laplacian(&op_c, &b_c, cfg)?;
    clock.lap("laplacian");
    let images = manifold_solve(op, b, &l, cfg)?;
    clock.lap("high_res");
    Ok(ReconResult {
        images,
        laplacian: Some(l),
        objective_trace: Vec::new(),
        timings: clock.stages,
    })
}

/// Navigator kernel width: `nav_sigma` times the root median squared
/// navigator distance.
pub fn navigator_sigma(z: &[Vec<Complex64>], relative: f64) -> f64 {
    let mut d = Vec::with_capacity(z.len() * z.len() / 2);
    for i in 0..z.len() {
        for j in (i + 1)..z.len() {
            d.push(z[i].iter().zip(&z[j]).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>());
        }
    }
    if d.is_empty() {
        return relative;
    }
    d.sort_by(f64::total_cmp);
    let median = d[d.len() / 2];
    let s = relative * median.sqrt();
    if s > 0.0 {
        s
    } else {
        relative
    }
}

/// Laplacian from navigator similarities, then one high-resolution solve.
pub fn storm_selfnav(op: &SamplingOperator, b: &MultiCoilKSpace, cfg: &ReconConfig) -> Result<ReconResult> {
    cfg.validate()?;
    let mut clock = Stopwatch::new();
    let z = op.navigator_samples(b)?;
    let sigma = navigator_sigma(&z, cfg.nav_sigma);
    let w = navigator_weights(&z, sigma)?;
    let l = laplacian(&w)?;
    clock.lap("laplacian");
    let images = manifold_solve(op, b, &l, cfg)?;
    clock.lap("high_res");
    Ok(ReconResult {
        images,
        laplacian: Some(l),
        objective_trace: Vec::new(),
        timings: clock.stages,
    })
}
