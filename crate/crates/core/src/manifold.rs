//! Frame-similarity kernels, weight matrices and graph Laplacians.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{dims, param, Error, Result};
use crate::series::DynamicImageSeries;

/// Gaussian Gram matrix of a series, `exp(-|x_i - x_j|^2 / (2 sigma^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub k: DMatrix<f64>,
    pub sigma: f64,
}

/// `L = D - W` together with the weights it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix {
    pub l: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// Smoothing parameter of the reweighting step, when IRLS-derived.
    pub gamma: Option<f64>,
}

impl LaplacianMatrix {
    pub fn size(&self) -> usize {
        self.l.nrows()
    }

    pub fn spectral_norm(&self) -> f64 {
        symmetric_spectral_norm(&self.l)
    }

    /// Copy rescaled to unit spectral norm (unchanged if the matrix is zero).
    pub fn normalized(&self) -> LaplacianMatrix {
        let s = self.spectral_norm();
        if s > 0.0 {
            LaplacianMatrix {
                l: &self.l / s,
                w: &self.w / s,
                gamma: self.gamma,
            }
        } else {
            self.clone()
        }
    }
}

pub fn symmetric_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

pub fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// Positive semi-definite up to `tol * |m|_2`.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    let eig = SymmetricEigen::new(m.clone());
    let norm = eig.eigenvalues.iter().fold(0.0, |a: f64, v| a.max(v.abs()));
    eig.eigenvalues.iter().all(|&v| v >= -tol * norm.max(f64::MIN_POSITIVE))
}

/// Squared frame distances of a series scaled so its largest modulus is 1.
/// All-zero series are left unscaled.
pub fn normalized_sq_distances(x: &DynamicImageSeries) -> Vec<Vec<f64>> {
    let max = x.max_modulus();
    let mut d = x.pairwise_sq_distances();
    if max > 0.0 {
        let s = 1.0 / (max * max);
        d.iter_mut().flatten().for_each(|v| *v *= s);
    }
    d
}

pub fn kernel_from_sq_distances(d: &[Vec<f64>], sigma: f64) -> Result<KernelMatrix> {
    if !(sigma > 0.0) {
        return param("kernel width sigma must be positive");
    }
    let n = d.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (-d[i][j] / (2.0 * sigma * sigma)).exp()
        }
    });
    Ok(KernelMatrix { k, sigma })
}

pub fn gaussian_kernel(x: &DynamicImageSeries, sigma: f64) -> Result<KernelMatrix> {
    if x.n_frames() < 2 {
        return param("a kernel needs at least two frames");
    }
    kernel_from_sq_distances(&x.pairwise_sq_distances(), sigma)
}

/// Navigator similarity `exp(-|z_i - z_j|^2 / sigma^2)`.
pub fn navigator_weights(z: &[Vec<Complex64>], sigma: f64) -> Result<DMatrix<f64>> {
    if !(sigma > 0.0) {
        return param("navigator sigma must be positive");
    }
    let n = z.len();
    if let Some(len) = z.first().map(Vec::len) {
        if let Some(i) = z.iter().position(|zi| zi.len() != len) {
            return dims(format!(
                "navigator {i} has {} samples, expected {len}",
                z[i].len()
            ));
        }
    }
    let mut w = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = z[i].iter().zip(&z[j]).map(|(a, b)| (a - b).norm_sqr()).sum();
            let v = (-d / (sigma * sigma)).exp();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    Ok(w)
}

/// Reweighting step of the kernel low-rank IRLS scheme:
/// `W = +/- (1/sigma^2) K o (K + gamma I)^(-1/2)`.
///
/// The sign is the one that gives the Laplacian `D - W` a non-negative
/// diagonal; ties (zero off-diagonal mass) take the positive sign.
pub fn irls_weights(kernel: &KernelMatrix, gamma: f64) -> Result<DMatrix<f64>> {
    if !(gamma > 0.0) {
        return param("gamma must be positive");
    }
    let k = &kernel.k;
    if !k.is_square() {
        return dims("kernel matrix must be square");
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("kernel matrix has non-finite entries".into()));
    }
    let n = k.nrows();
    let shifted = k + DMatrix::identity(n, n) * gamma;
    let eig = SymmetricEigen::try_new(shifted, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("eigendecomposition did not converge".into()))?;
    if let Some(v) = eig.eigenvalues.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Numerical(format!(
            "K + gamma I is not positive definite (eigenvalue {v})"
        )));
    }
    let inv_sqrt = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    let p = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    let scale = 1.0 / (kernel.sigma * kernel.sigma);
    let mut w = k.component_mul(&p) * scale;
    // symmetrize round-off
    let wt = w.transpose();
    w = (w + wt) * 0.5;
    let off_diagonal: f64 = w.sum() - w.trace();
    if off_diagonal < 0.0 {
        w = -w;
    }
    Ok(w)
}

pub fn laplacian(w: &DMatrix<f64>) -> Result<LaplacianMatrix> {
    if !w.is_square() {
        return dims(format!("weight matrix is {}x{}", w.nrows(), w.ncols()));
    }
    let n = w.nrows();
    let mut l = -w.clone();
    for i in 0..n {
        let degree: f64 = w.row(i).sum();
        l[(i, i)] += degree;
    }
    Ok(LaplacianMatrix {
        l,
        w: w.clone(),
        gamma: None,
    })
}

/// Laplacian of the path graph over consecutive frames, so that
/// `trace(X L Xᴴ) = sum_i |x_(i+1) - x_i|^2`.
pub fn temporal_laplacian(n: usize) -> Result<LaplacianMatrix> {
    if n < 2 {
        return param("temporal Laplacian needs at least two frames");
    }
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        w[(i, i + 1)] = 1.0;
        w[(i + 1, i)] = 1.0;
    }
    laplacian(&w)
}

/// Gram matrix `G_ij = <x_i, x_j>` of the frames.
pub fn frame_gram(x: &DynamicImageSeries) -> DMatrix<Complex64> {
    let n = x.n_frames();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        let xi = x.frame(i);
        for j in i..n {
            let v: Complex64 = xi.iter().zip(x.frame(j).iter()).map(|(a, b)| a.conj() * b).sum();
            g[(i, j)] = v;
            g[(j, i)] = v.conj();
        }
    }
    g
}

/// `trace(X L Xᴴ)` for real symmetric `l`.
pub fn manifold_energy(x: &DynamicImageSeries, l: &DMatrix<f64>) -> Result<f64> {
    let n = x.n_frames();
    if l.nrows() != n || l.ncols() != n {
        return dims(format!("{}x{} matrix for {} frames", l.nrows(), l.ncols(), n));
    }
    let g = frame_gram(x);
    let mut acc = Complex64::default();
    for i in 0..n {
        for j in 0..n {
            acc += g[(j, i)] * l[(i, j)];
        }
    }
    Ok(acc.re)
}
