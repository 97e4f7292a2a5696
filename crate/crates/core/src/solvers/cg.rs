//! Quadratic image update: `(w A^H A) X + X M = w A^H B` on the Casorati
//! matrix, solved with a conjugate-residual iteration.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use num_complex::Complex64;

use crate::error::{dims, Error, Result};
use crate::manifold::is_psd;
use crate::operators::{NormalOperator, SamplingOperator};
use crate::series::DynamicImageSeries;

/// Something that applies `A^H A` to a series.
pub trait NormalApply {
    fn apply_normal(&self, x: &DynamicImageSeries) -> DynamicImageSeries;
    /// The measurement operator whose normal matrix this is.
    fn sampling(&self) -> &SamplingOperator;
}

impl NormalApply for NormalOperator<'_> {
    fn apply_normal(&self, x: &DynamicImageSeries) -> DynamicImageSeries {
        self.apply(x)
    }

    fn sampling(&self) -> &SamplingOperator {
        self.operator()
    }
}

/// `A^H A` through explicit gridding forward and adjoint passes. Slower
/// than the Toeplitz route but exactly self-adjoint.
pub struct GriddingNormal<'a>(pub &'a SamplingOperator);

impl NormalApply for GriddingNormal<'_> {
    fn apply_normal(&self, x: &DynamicImageSeries) -> DynamicImageSeries {
        let b = self.0.forward(x).expect("series matches operator");
        self.0.adjoint(&b).expect("k-space matches operator")
    }

    fn sampling(&self) -> &SamplingOperator {
        self.0
    }
}

/// Hermitian `N x N` frame-coupling matrix `M` acting as `X -> X M`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCoupling {
    re: DMatrix<f64>,
    im: Option<DMatrix<f64>>,
}

impl FrameCoupling {
    pub fn real(m: DMatrix<f64>) -> Self {
        Self { re: m, im: None }
    }

    pub fn hermitian(m: &DMatrix<Complex64>) -> Self {
        let re = m.map(|z| z.re);
        let im = m.map(|z| z.im);
        let im = if im.iter().all(|&v| v == 0.0) { None } else { Some(im) };
        Self { re, im }
    }

    pub fn zeros(n: usize) -> Self {
        Self::real(DMatrix::zeros(n, n))
    }

    pub fn size(&self) -> usize {
        self.re.nrows()
    }

    pub fn real_part(&self) -> &DMatrix<f64> {
        &self.re
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        match &self.im {
            None => self.re.map(|v| Complex64::new(v, 0.0)),
            Some(im) => self.re.zip_map(im, Complex64::new),
        }
    }

    /// PSD check up to `tol * |M|_2`, on the real embedding for complex `M`.
    pub fn is_psd(&self, tol: f64) -> bool {
        match &self.im {
            None => is_psd(&self.re, tol),
            Some(im) => {
                let n = self.size();
                let mut big = DMatrix::zeros(2 * n, 2 * n);
                big.view_mut((0, 0), (n, n)).copy_from(&self.re);
                big.view_mut((n, n), (n, n)).copy_from(&self.re);
                big.view_mut((0, n), (n, n)).copy_from(&(-im));
                big.view_mut((n, 0), (n, n)).copy_from(im);
                is_psd(&big, tol)
            }
        }
    }

    /// `out = x M` on the Casorati matrix (frames are columns).
    pub fn apply(&self, x: &DynamicImageSeries, out: &mut DynamicImageSeries) {
        let n = x.n_frames();
        let p = x.n_pixels();
        let src = x.data().as_slice().expect("series storage is contiguous");
        // Frame j interleaved as [re, im, ...]: a column-major (2p x n) real matrix.
        let src_re: &[f64] = complex_as_real(src);
        let g = DMatrixView::from_slice(src_re, 2 * p, n);
        let dst = out.data_mut().as_slice_mut().expect("series storage is contiguous");
        let mut o = DMatrixViewMut::from_slice(complex_as_real_mut(dst), 2 * p, n);
        o.gemm(1.0, &g, &self.re, 0.0);
        if let Some(im) = &self.im {
            // i * x interleaved: [-im, re, ...]
            let mut swapped = Vec::with_capacity(2 * p * n);
            for z in src {
                swapped.push(-z.im);
                swapped.push(z.re);
            }
            let s = DMatrixView::from_slice(&swapped, 2 * p, n);
            o.gemm(1.0, &s, im, 1.0);
        }
    }
}

fn complex_as_real(v: &[Complex64]) -> &[f64] {
    // Complex64 is repr(C) { re, im }
    unsafe { std::slice::from_raw_parts(v.as_ptr() as *const f64, v.len() * 2) }
}

fn complex_as_real_mut(v: &mut [Complex64]) -> &mut [f64] {
    unsafe { std::slice::from_raw_parts_mut(v.as_mut_ptr() as *mut f64, v.len() * 2) }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Weight on the data term; regularization weights are relative to it.
    pub data_weight: f64,
    pub check_psd: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Residual norms of the normal equations, starting with the initial one.
    pub residual_norms: Vec<f64>,
    pub rhs_norm: f64,
}

fn system_apply<N: NormalApply>(
    normal: &N,
    coupling: &FrameCoupling,
    data_weight: f64,
    x: &DynamicImageSeries,
    scratch: &mut DynamicImageSeries,
) -> DynamicImageSeries {
    let mut y = normal.apply_normal(x);
    y.scale(data_weight);
    coupling.apply(x, scratch);
    y.axpy(Complex64::new(1.0, 0.0), scratch);
    y
}

/// Solves `(w A^H A) X + X M = rhs` where `rhs` is typically `w A^H B`.
///
/// Conjugate residuals: one operator product per iteration and a residual
/// norm that never increases.
pub fn solve_normal_equations<N: NormalApply>(
    normal: &N,
    rhs: &DynamicImageSeries,
    coupling: &FrameCoupling,
    opts: &SolveOptions,
    x0: Option<&DynamicImageSeries>,
) -> Result<(DynamicImageSeries, SolveReport)> {
    if coupling.size() != rhs.n_frames() {
        return dims(format!(
            "coupling matrix is {0}x{0}, series has {1} frames",
            coupling.size(),
            rhs.n_frames()
        ));
    }
    if opts.check_psd && !coupling.is_psd(1e-8) {
        return Err(Error::Numerical(
            "regularization matrix is not positive semi-definite".into(),
        ));
    }
    let mut scratch = rhs.clone();
    let mut x = match x0 {
        Some(x0) => {
            if !x0.same_shape(rhs) {
                return dims("initial guess does not match the right-hand side");
            }
            x0.clone()
        }
        None => DynamicImageSeries::zeros(rhs.n_frames(), rhs.rows(), rhs.cols()),
    };
    let rhs_norm = rhs.norm();
    let mut report = SolveReport {
        iterations: 0,
        residual_norms: Vec::new(),
        rhs_norm,
    };
    if rhs_norm == 0.0 && x0.is_none() {
        report.residual_norms.push(0.0);
        return Ok((x, report));
    }
    let mut r = rhs.clone();
    if x0.is_some() {
        let ax = system_apply(normal, coupling, opts.data_weight, &x, &mut scratch);
        r.axpy(Complex64::new(-1.0, 0.0), &ax);
    }
    let mut r_norm = r.norm();
    report.residual_norms.push(r_norm);
    let target = opts.tol * rhs_norm;
    if r_norm <= target || r_norm == 0.0 {
        return Ok((x, report));
    }
    let mut ar = system_apply(normal, coupling, opts.data_weight, &r, &mut scratch);
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut rho = r.dot(&ar).re;
    for it in 0..opts.max_iters {
        let denom = ap.norm_sqr();
        if !(denom > 0.0) || !rho.is_finite() {
            if denom == 0.0 {
                break;
            }
            return Err(Error::Numerical("non-finite value in conjugate residuals".into()));
        }
        let alpha = rho / denom;
        x.axpy(Complex64::new(alpha, 0.0), &p);
        r.axpy(Complex64::new(-alpha, 0.0), &ap);
        r_norm = r.norm();
        if !r_norm.is_finite() {
            return Err(Error::Numerical("residual diverged".into()));
        }
        report.residual_norms.push(r_norm);
        report.iterations = it + 1;
        if r_norm <= target {
            break;
        }
        ar = system_apply(normal, coupling, opts.data_weight, &r, &mut scratch);
        let rho_new = r.dot(&ar).re;
        let beta = rho_new / rho;
        rho = rho_new;
        // p = r + beta p ; ap = ar + beta ap
        p.scale(beta);
        p.axpy(Complex64::new(1.0, 0.0), &r);
        ap.scale(beta);
        ap.axpy(Complex64::new(1.0, 0.0), &ar);
    }
    Ok((x, report))
}

/// Image update for measured data `b`: forms `w A^H B` and solves with
/// `normal`, either the Toeplitz operator or exact gridding passes.
pub fn solve_image_update<N: NormalApply>(
    normal: &N,
    b: &crate::operators::MultiCoilKSpace,
    coupling: &FrameCoupling,
    opts: &SolveOptions,
    x0: Option<&DynamicImageSeries>,
) -> Result<(DynamicImageSeries, SolveReport)> {
    let mut rhs = normal.sampling().adjoint(b)?;
    rhs.scale(opts.data_weight);
    solve_normal_equations(normal, &rhs, coupling, opts, x0)
}
