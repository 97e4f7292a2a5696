//! Two-dimensional non-uniform FFT by Kaiser-Bessel gridding on a 2x
//! oversampled grid, plus a Toeplitz-embedded normal operator.
//!
//! Image pixel `p` in `0..n` sits at position `p - n/2`; sample coordinates
//! are in cycles/pixel. The forward transform evaluates
//! `sum_r f(r) exp(-i 2 pi k.r)`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

const OVERSAMPLING: usize = 2;
/// Kernel width in oversampled-grid cells.
pub const KERNEL_WIDTH: usize = 8;

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> f64 {
    let y = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= y / (k * k);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        k += 1.0;
    }
    sum
}

#[derive(Debug, Clone, Copy)]
struct KaiserBessel {
    width: f64,
    beta: f64,
}

impl KaiserBessel {
    fn new(width: usize, oversampling: f64) -> Self {
        let w = width as f64;
        let beta = PI * ((w / oversampling).powi(2) * (oversampling - 0.5).powi(2) - 0.8).sqrt();
        Self { width: w, beta }
    }

    fn eval(&self, u: f64) -> f64 {
        let t = 2.0 * u / self.width;
        let arg = 1.0 - t * t;
        if arg < 0.0 {
            0.0
        } else {
            bessel_i0(self.beta * arg.sqrt())
        }
    }

    /// Continuous Fourier transform at `nu` cycles per grid cell.
    fn transform(&self, nu: f64) -> f64 {
        let a = (PI * self.width * nu).powi(2);
        let b2 = self.beta * self.beta;
        if a < b2 {
            let s = (b2 - a).sqrt();
            self.width * s.sinh() / s
        } else {
            let s = (a - b2).sqrt();
            if s == 0.0 {
                self.width
            } else {
                self.width * s.sin() / s
            }
        }
    }
}

/// 2D FFT helper on a square row-major grid.
#[derive(Clone)]
pub struct Fft2 {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("size", &self.size).finish()
    }
}

impl Fft2 {
    pub fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Unnormalized transform. Only rows listed in `active_rows` are
    /// transformed in the first pass; all other rows must be zero.
    fn run(&self, data: &mut [Complex64], inverse: bool, active_rows: Option<std::ops::Range<usize>>) {
        let n = self.size;
        let plan = if inverse { &self.inverse } else { &self.forward };
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        match active_rows {
            Some(rows) => {
                for r in rows {
                    plan.process_with_scratch(&mut data[r * n..(r + 1) * n], &mut scratch);
                }
            }
            None => {
                for row in data.chunks_exact_mut(n) {
                    plan.process_with_scratch(row, &mut scratch);
                }
            }
        }
        let mut col = vec![Complex64::default(); n];
        for c in 0..n {
            for r in 0..n {
                col[r] = data[r * n + c];
            }
            plan.process_with_scratch(&mut col, &mut scratch);
            for r in 0..n {
                data[r * n + c] = col[r];
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, false, None);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, true, None);
    }

    /// Column pass first, then rows restricted to `keep_rows`; rows outside
    /// `keep_rows` are left partially transformed.
    fn inverse_cropped(&self, data: &mut [Complex64], keep_rows: std::ops::Range<usize>) {
        let n = self.size;
        let plan = &self.inverse;
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        let mut col = vec![Complex64::default(); n];
        for c in 0..n {
            for r in 0..n {
                col[r] = data[r * n + c];
            }
            plan.process_with_scratch(&mut col, &mut scratch);
            for r in 0..n {
                data[r * n + c] = col[r];
            }
        }
        for r in keep_rows {
            plan.process_with_scratch(&mut data[r * n..(r + 1) * n], &mut scratch);
        }
    }
}

/// Gridding NUFFT for an `n x n` image.
#[derive(Debug, Clone)]
pub struct Nufft2d {
    n: usize,
    grid: usize,
    kernel: KaiserBessel,
    deapod: Vec<f64>,
    fft: Fft2,
}

impl Nufft2d {
    pub fn new(n: usize) -> Self {
        let grid = OVERSAMPLING * n;
        let kernel = KaiserBessel::new(KERNEL_WIDTH, OVERSAMPLING as f64);
        let half = (n / 2) as f64;
        let deapod = (0..n)
            .map(|p| kernel.transform((p as f64 - half) / grid as f64))
            .collect();
        Self {
            n,
            grid,
            kernel,
            deapod,
            fft: Fft2::new(grid),
        }
    }

    pub fn image_size(&self) -> usize {
        self.n
    }

    fn grid_index(&self, p: usize) -> usize {
        (p + self.grid - self.n / 2) % self.grid
    }

    /// Kernel taps along one axis: (grid index, weight).
    fn taps(&self, k: f64, out: &mut [(usize, f64); KERNEL_WIDTH + 1]) -> usize {
        let g = self.grid as f64;
        let kappa = k * g;
        let half = self.kernel.width / 2.0;
        let start = (kappa - half).ceil() as i64;
        let stop = (kappa + half).floor() as i64;
        let mut count = 0;
        for m in start..=stop {
            let w = self.kernel.eval(kappa - m as f64);
            if w != 0.0 {
                out[count] = (m.rem_euclid(self.grid as i64) as usize, w);
                count += 1;
            }
        }
        count
    }

    /// Type-2 transform: image -> samples.
    pub fn forward(&self, image: &[Complex64], coords: &[[f64; 2]], out: &mut [Complex64]) {
        assert_eq!(image.len(), self.n * self.n);
        assert_eq!(coords.len(), out.len());
        let g = self.grid;
        let mut buf = vec![Complex64::default(); g * g];
        for py in 0..self.n {
            let gy = self.grid_index(py);
            for px in 0..self.n {
                let gx = self.grid_index(px);
                buf[gy * g + gx] = image[py * self.n + px] / (self.deapod[py] * self.deapod[px]);
            }
        }
        self.fft.forward(&mut buf);
        let mut tx = [(0usize, 0.0); KERNEL_WIDTH + 1];
        let mut ty = [(0usize, 0.0); KERNEL_WIDTH + 1];
        for (k, o) in coords.iter().zip(out.iter_mut()) {
            let nx = self.taps(k[0], &mut tx);
            let ny = self.taps(k[1], &mut ty);
            let mut acc = Complex64::default();
            for &(iy, wy) in &ty[..ny] {
                let row = &buf[iy * g..(iy + 1) * g];
                let mut racc = Complex64::default();
                for &(ix, wx) in &tx[..nx] {
                    racc += row[ix] * wx;
                }
                acc += racc * wy;
            }
            *o = acc;
        }
    }

    /// Type-1 transform (exact adjoint of `forward`): samples -> image.
    pub fn adjoint(&self, values: &[Complex64], coords: &[[f64; 2]], image: &mut [Complex64]) {
        assert_eq!(image.len(), self.n * self.n);
        assert_eq!(coords.len(), values.len());
        let g = self.grid;
        let mut buf = vec![Complex64::default(); g * g];
        let mut tx = [(0usize, 0.0); KERNEL_WIDTH + 1];
        let mut ty = [(0usize, 0.0); KERNEL_WIDTH + 1];
        for (k, &v) in coords.iter().zip(values) {
            let nx = self.taps(k[0], &mut tx);
            let ny = self.taps(k[1], &mut ty);
            for &(iy, wy) in &ty[..ny] {
                let vy = v * wy;
                let row = &mut buf[iy * g..(iy + 1) * g];
                for &(ix, wx) in &tx[..nx] {
                    row[ix] += vy * wx;
                }
            }
        }
        self.fft.inverse(&mut buf);
        for py in 0..self.n {
            let gy = self.grid_index(py);
            for px in 0..self.n {
                let gx = self.grid_index(px);
                image[py * self.n + px] = buf[gy * g + gx] / (self.deapod[py] * self.deapod[px]);
            }
        }
    }
}

/// Largest `samples * (2n)^2` for which the point-spread function is summed
/// exactly instead of gridded.
const EXACT_PSF_BUDGET: usize = 4_000_000;

/// Separable direct sum of the point-spread function on an `m x m` grid of
/// offsets `p - m/2`.
fn exact_psf(m: usize, coords: &[[f64; 2]]) -> Vec<Complex64> {
    let half = (m / 2) as f64;
    let mut psf = vec![Complex64::default(); m * m];
    let mut ex = vec![Complex64::default(); m];
    let mut ey = vec![Complex64::default(); m];
    for k in coords {
        for p in 0..m {
            let d = p as f64 - half;
            ex[p] = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k[0] * d);
            ey[p] = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k[1] * d);
        }
        for (row, &y) in psf.chunks_exact_mut(m).zip(&ey) {
            for (v, &x) in row.iter_mut().zip(&ex) {
                *v += x * y;
            }
        }
    }
    psf
}

/// `A^H A` for a single-channel sampling pattern, applied by circulant
/// embedding of the point-spread function on a `2n x 2n` grid.
#[derive(Debug, Clone)]
pub struct ToeplitzKernel {
    n: usize,
    /// Spectrum of the embedded point-spread function, pre-scaled by the
    /// inverse FFT normalization.
    spectrum: Vec<Complex64>,
}

impl ToeplitzKernel {
    pub fn new(n: usize, coords: &[[f64; 2]], fft2n: &Fft2) -> Self {
        let m = 2 * n;
        assert_eq!(fft2n.size(), m);
        // psf(d) = sum_k exp(+i 2 pi k.d) for d in [-n, n)^2
        let psf = if coords.len() * m * m <= EXACT_PSF_BUDGET {
            exact_psf(m, coords)
        } else {
            let big = Nufft2d::new(m);
            let ones = vec![Complex64::new(1.0, 0.0); coords.len()];
            let mut psf = vec![Complex64::default(); m * m];
            big.adjoint(&ones, coords, &mut psf);
            psf
        };
        // psf index p corresponds to offset p - n; place at offset mod 2n
        let mut circ = vec![Complex64::default(); m * m];
        for py in 0..m {
            let cy = (py + m - n) % m;
            for px in 0..m {
                let cx = (px + m - n) % m;
                circ[cy * m + cx] = psf[py * m + px];
            }
        }
        fft2n.forward(&mut circ);
        let scale = 1.0 / (m * m) as f64;
        circ.iter_mut().for_each(|z| *z *= scale);
        Self { n, spectrum: circ }
    }

    /// `out += A^H A x` for one `n x n` image. `work` must hold `4 n^2`
    /// elements.
    pub fn apply_add(&self, x: &[Complex64], out: &mut [Complex64], fft2n: &Fft2, work: &mut [Complex64]) {
        let n = self.n;
        let m = 2 * n;
        work.iter_mut().for_each(|z| *z = Complex64::default());
        for py in 0..n {
            work[py * m..py * m + n].copy_from_slice(&x[py * n..(py + 1) * n]);
        }
        fft2n.run(work, false, Some(0..n));
        for (w, s) in work.iter_mut().zip(&self.spectrum) {
            *w *= s;
        }
        fft2n.inverse_cropped(work, 0..n);
        for py in 0..n {
            for px in 0..n {
                out[py * n + px] += work[py * m + px];
            }
        }
    }
}
