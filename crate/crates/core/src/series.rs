use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis};
use num_complex::Complex64;

use crate::error::{dims, Result};

/// A dynamic series of equally sized complex frames.
///
/// Storage is frame-major: row `i` of `data` is frame `i` flattened in
/// row-major pixel order. The Casorati matrix of the series is the
/// transpose of this array.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicImageSeries {
    rows: usize,
    cols: usize,
    data: Array2<Complex64>,
}

impl DynamicImageSeries {
    pub fn zeros(n_frames: usize, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: Array2::zeros((n_frames, rows * cols)),
        }
    }

    pub fn from_array(rows: usize, cols: usize, data: Array2<Complex64>) -> Result<Self> {
        if data.ncols() != rows * cols {
            return dims(format!(
                "frame length {} does not match {}x{}",
                data.ncols(),
                rows,
                cols
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_real_frames(rows: usize, cols: usize, frames: &[Vec<f64>]) -> Result<Self> {
        let mut out = Self::zeros(frames.len(), rows, cols);
        for (i, f) in frames.iter().enumerate() {
            if f.len() != rows * cols {
                return dims(format!("frame {i} has {} pixels, expected {}", f.len(), rows * cols));
            }
            for (dst, &v) in out.data.row_mut(i).iter_mut().zip(f) {
                *dst = Complex64::new(v, 0.0);
            }
        }
        Ok(out)
    }

    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn frame(&self, i: usize) -> ArrayView1<'_, Complex64> {
        self.data.row(i)
    }

    pub fn frame_mut(&mut self, i: usize) -> ArrayViewMut1<'_, Complex64> {
        self.data.row_mut(i)
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<Complex64> {
        self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.n_frames() == other.n_frames()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn max_modulus(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Inner product `<self, other>` conjugate-linear in `self`.
    pub fn dot(&self, other: &Self) -> Complex64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: Complex64, other: &Self) {
        self.data.scaled_add(alpha, &other.data);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.mapv_inplace(|z| z * alpha);
    }

    pub fn magnitude_frame(&self, i: usize) -> Vec<f64> {
        self.data.row(i).iter().map(|z| z.norm()).collect()
    }

    /// Mean frame over time.
    pub fn temporal_mean(&self) -> Vec<Complex64> {
        self.data
            .mean_axis(Axis(0))
            .map(|m| m.to_vec())
            .unwrap_or_default()
    }

    /// Pairwise squared Euclidean distances between frames.
    pub fn pairwise_sq_distances(&self) -> Vec<Vec<f64>> {
        let n = self.n_frames();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            let xi = self.data.row(i);
            for j in (i + 1)..n {
                let xj = self.data.row(j);
                let s: f64 = xi.iter().zip(xj.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
                d[i][j] = s;
                d[j][i] = s;
            }
        }
        d
    }
}
