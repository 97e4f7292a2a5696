//! Multichannel spiral sampling operator and its adjoint, coil maps,
//! coil compression and the central k-space restriction.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dims, param, Error, Result};
use crate::nufft::{Fft2, Nufft2d, ToeplitzKernel};
use crate::series::DynamicImageSeries;
use crate::trajectory::{SpiralAcquisition, K_MAX};

/// Static coil sensitivities, one `grid x grid` image per coil.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilMaps {
    pub grid: usize,
    pub maps: Vec<Vec<Complex64>>,
}

impl CoilMaps {
    pub fn uniform(grid: usize) -> Self {
        Self {
            grid,
            maps: vec![vec![Complex64::new(1.0, 0.0); grid * grid]],
        }
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn sum_of_squares(&self) -> Vec<f64> {
        let mut sos = vec![0.0; self.grid * self.grid];
        for m in &self.maps {
            for (s, z) in sos.iter_mut().zip(m) {
                *s += z.norm_sqr();
            }
        }
        sos.iter().map(|s| s.sqrt()).collect()
    }

    /// Bilinear resampling onto a `low_grid` field of view covering the same
    /// physical extent.
    pub fn resample(&self, low_grid: usize) -> CoilMaps {
        let n = self.grid;
        let ratio = n as f64 / low_grid as f64;
        let half_hi = (n / 2) as f64;
        let half_lo = (low_grid / 2) as f64;
        let sample = |map: &[Complex64], y: f64, x: f64| -> Complex64 {
            let fy = (y + half_hi).clamp(0.0, (n - 1) as f64);
            let fx = (x + half_hi).clamp(0.0, (n - 1) as f64);
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(n - 1), (x0 + 1).min(n - 1));
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            let top = map[y0 * n + x0] * (1.0 - tx) + map[y0 * n + x1] * tx;
            let bottom = map[y1 * n + x0] * (1.0 - tx) + map[y1 * n + x1] * tx;
            top * (1.0 - ty) + bottom * ty
        };
        let maps = self
            .maps
            .iter()
            .map(|m| {
                let mut out = Vec::with_capacity(low_grid * low_grid);
                for py in 0..low_grid {
                    for px in 0..low_grid {
                        let y = (py as f64 - half_lo) * ratio;
                        let x = (px as f64 - half_lo) * ratio;
                        out.push(sample(m, y, x));
                    }
                }
                out
            })
            .collect();
        CoilMaps {
            grid: low_grid,
            maps,
        }
    }
}

/// Smooth Gaussian-lobe sensitivities centred around the image border, each
/// with its own linear phase, normalized to unit sum-of-squares.
pub fn simulate_coilmaps(grid: usize, n_coils: usize) -> Result<CoilMaps> {
    if n_coils == 0 {
        return param("n_coils must be at least 1");
    }
    let n = grid as f64;
    let half = (grid / 2) as f64;
    let width = 0.45 * n;
    let ring = 0.6 * n;
    let mut maps = Vec::with_capacity(n_coils);
    for c in 0..n_coils {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / n_coils as f64 + 0.3;
        let (cy, cx) = (ring * angle.sin(), ring * angle.cos());
        let ramp = 0.5 * std::f64::consts::PI / n;
        let (ry, rx) = (ramp * (1.0 + (c % 3) as f64), ramp * (2.0 - (c % 2) as f64));
        let offset = 0.7 * c as f64;
        let mut map = Vec::with_capacity(grid * grid);
        for py in 0..grid {
            for px in 0..grid {
                let (y, x) = (py as f64 - half, px as f64 - half);
                let mag = (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * width * width)).exp();
                map.push(Complex64::from_polar(mag, offset + ry * y + rx * x));
            }
        }
        maps.push(map);
    }
    let mut coils = CoilMaps { grid, maps };
    let sos = coils.sum_of_squares();
    for m in &mut coils.maps {
        for (z, s) in m.iter_mut().zip(&sos) {
            *z /= *s;
        }
    }
    Ok(coils)
}

/// Measured samples indexed as `data[frame][coil][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoilKSpace {
    pub data: Vec<Vec<Vec<Complex64>>>,
    pub noise_sigma: f64,
}

impl MultiCoilKSpace {
    pub fn n_frames(&self) -> usize {
        self.data.len()
    }

    pub fn n_coils(&self) -> usize {
        self.data.first().map_or(0, |f| f.len())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data
            .iter()
            .flatten()
            .flatten()
            .map(|z| z.norm_sqr())
            .sum()
    }

    pub fn n_samples(&self) -> usize {
        self.data.iter().flatten().map(|c| c.len()).sum()
    }

    pub fn dot(&self, other: &Self) -> Complex64 {
        self.data
            .iter()
            .flatten()
            .flatten()
            .zip(other.data.iter().flatten().flatten())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            data: self
                .data
                .iter()
                .map(|f| f.iter().map(|c| c.iter().map(|z| z * alpha).collect()).collect())
                .collect(),
            noise_sigma: self.noise_sigma * alpha.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    Full,
    Central,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSampling {
    /// Sample coordinates in cycles/pixel of the operator grid.
    pub coords: Vec<[f64; 2]>,
    pub navigator: Vec<bool>,
}

/// The measurement operator: per-frame non-uniform Fourier sampling of each
/// coil image.
#[derive(Debug, Clone)]
pub struct SamplingOperator {
    pub grid: usize,
    pub maps: CoilMaps,
    pub frames: Vec<FrameSampling>,
    pub mode: SamplingMode,
    pub central_fraction: f64,
    nufft: Nufft2d,
}

impl SamplingOperator {
    pub fn new(acq: &SpiralAcquisition, maps: CoilMaps) -> Result<Self> {
        let frames = (0..acq.n_frames())
            .map(|f| FrameSampling {
                coords: acq.frame_samples(f),
                navigator: acq.frame_navigator_mask(f),
            })
            .collect();
        Self::from_frames(frames, maps, SamplingMode::Full, 1.0)
    }

    pub fn from_frames(
        frames: Vec<FrameSampling>,
        maps: CoilMaps,
        mode: SamplingMode,
        central_fraction: f64,
    ) -> Result<Self> {
        if maps.n_coils() == 0 {
            return param("at least one coil map is required");
        }
        if maps.maps.iter().any(|m| m.len() != maps.grid * maps.grid) {
            return dims("coil map size does not match its grid");
        }
        for (i, f) in frames.iter().enumerate() {
            if f.coords.len() != f.navigator.len() {
                return dims(format!("frame {i}: navigator mask length mismatch"));
            }
        }
        Ok(Self {
            grid: maps.grid,
            nufft: Nufft2d::new(maps.grid),
            maps,
            frames,
            mode,
            central_fraction,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_coils(&self) -> usize {
        self.maps.n_coils()
    }

    pub fn has_navigators(&self) -> bool {
        self.frames.iter().any(|f| f.navigator.iter().any(|&b| b))
    }

    fn check_images(&self, x: &DynamicImageSeries) -> Result<()> {
        if x.rows() != self.grid || x.cols() != self.grid || x.n_frames() != self.n_frames() {
            return dims(format!(
                "series is {} frames of {}x{}, operator expects {} frames of {}x{}",
                x.n_frames(),
                x.rows(),
                x.cols(),
                self.n_frames(),
                self.grid,
                self.grid
            ));
        }
        Ok(())
    }

    pub fn check_kspace(&self, b: &MultiCoilKSpace) -> Result<()> {
        if b.n_frames() != self.n_frames() {
            return dims(format!(
                "k-space has {} frames, operator has {}",
                b.n_frames(),
                self.n_frames()
            ));
        }
        for (i, (fb, fs)) in b.data.iter().zip(&self.frames).enumerate() {
            if fb.len() != self.n_coils() {
                return dims(format!("frame {i}: {} coils, expected {}", fb.len(), self.n_coils()));
            }
            if fb.iter().any(|c| c.len() != fs.coords.len()) {
                return dims(format!("frame {i}: sample count does not match trajectory"));
            }
        }
        Ok(())
    }

    pub fn forward_frame(&self, frame: usize, image: &[Complex64]) -> Vec<Vec<Complex64>> {
        let coords = &self.frames[frame].coords;
        self.maps
            .maps
            .iter()
            .map(|map| {
                let weighted: Vec<Complex64> = map.iter().zip(image).map(|(s, x)| s * x).collect();
                let mut out = vec![Complex64::default(); coords.len()];
                self.nufft.forward(&weighted, coords, &mut out);
                out
            })
            .collect()
    }

    pub fn adjoint_frame(&self, frame: usize, coils: &[Vec<Complex64>]) -> Vec<Complex64> {
        let coords = &self.frames[frame].coords;
        let npix = self.grid * self.grid;
        let mut acc = vec![Complex64::default(); npix];
        let mut tmp = vec![Complex64::default(); npix];
        for (map, values) in self.maps.maps.iter().zip(coils) {
            self.nufft.adjoint(values, coords, &mut tmp);
            for ((a, s), t) in acc.iter_mut().zip(map).zip(&tmp) {
                *a += s.conj() * t;
            }
        }
        acc
    }

    pub fn forward(&self, x: &DynamicImageSeries) -> Result<MultiCoilKSpace> {
        self.check_images(x)?;
        let data = (0..self.n_frames())
            .map(|f| {
                let img = x.frame(f).to_vec();
                self.forward_frame(f, &img)
            })
            .collect();
        Ok(MultiCoilKSpace {
            data,
            noise_sigma: 0.0,
        })
    }

    pub fn adjoint(&self, b: &MultiCoilKSpace) -> Result<DynamicImageSeries> {
        self.check_kspace(b)?;
        let mut out = DynamicImageSeries::zeros(self.n_frames(), self.grid, self.grid);
        for f in 0..self.n_frames() {
            let img = self.adjoint_frame(f, &b.data[f]);
            out.frame_mut(f)
                .iter_mut()
                .zip(img)
                .for_each(|(o, v)| *o = v);
        }
        Ok(out)
    }

    /// Precomputes the Toeplitz kernels for fast `A^H A` products.
    pub fn normal_operator(&self) -> NormalOperator<'_> {
        let fft = Fft2::new(2 * self.grid);
        let kernels = self
            .frames
            .iter()
            .map(|f| ToeplitzKernel::new(self.grid, &f.coords, &fft))
            .collect();
        NormalOperator {
            op: self,
            fft,
            kernels,
        }
    }

    /// Drops navigator samples from operator and data.
    pub fn without_navigators(&self, b: &MultiCoilKSpace) -> Result<(SamplingOperator, MultiCoilKSpace)> {
        self.check_kspace(b)?;
        self.select(b, |f, s| !self.frames[f].navigator[s], self.grid, 1.0, self.mode, self.central_fraction)
    }

    /// Navigator samples per frame, all coils concatenated.
    pub fn navigator_samples(&self, b: &MultiCoilKSpace) -> Result<Vec<Vec<Complex64>>> {
        self.check_kspace(b)?;
        if !self.has_navigators() {
            return Err(Error::MissingData(
                "acquisition contains no navigator interleaves".into(),
            ));
        }
        let mut out = Vec::with_capacity(self.n_frames());
        for (f, frame) in self.frames.iter().enumerate() {
            let mut z = Vec::new();
            for coil in &b.data[f] {
                z.extend(
                    coil.iter()
                        .zip(&frame.navigator)
                        .filter(|(_, &nav)| nav)
                        .map(|(v, _)| *v),
                );
            }
            out.push(z);
        }
        let len = out[0].len();
        if let Some(i) = out.iter().position(|z| z.len() != len) {
            return dims(format!("frame {i} has a different number of navigator samples"));
        }
        if len == 0 {
            return Err(Error::MissingData("some frames lack navigator samples".into()));
        }
        Ok(out)
    }

    fn select(
        &self,
        b: &MultiCoilKSpace,
        keep: impl Fn(usize, usize) -> bool,
        new_grid: usize,
        coord_scale: f64,
        mode: SamplingMode,
        central_fraction: f64,
    ) -> Result<(SamplingOperator, MultiCoilKSpace)> {
        let mut frames = Vec::with_capacity(self.n_frames());
        let mut data = Vec::with_capacity(self.n_frames());
        for (f, frame) in self.frames.iter().enumerate() {
            let idx: Vec<usize> = (0..frame.coords.len()).filter(|&s| keep(f, s)).collect();
            frames.push(FrameSampling {
                coords: idx
                    .iter()
                    .map(|&s| [frame.coords[s][0] * coord_scale, frame.coords[s][1] * coord_scale])
                    .collect(),
                navigator: idx.iter().map(|&s| frame.navigator[s]).collect(),
            });
            data.push(
                b.data[f]
                    .iter()
                    .map(|coil| idx.iter().map(|&s| coil[s]).collect())
                    .collect(),
            );
        }
        let maps = if new_grid == self.grid {
            self.maps.clone()
        } else {
            self.maps.resample(new_grid)
        };
        let op = SamplingOperator::from_frames(frames, maps, mode, central_fraction)?;
        Ok((
            op,
            MultiCoilKSpace {
                data,
                noise_sigma: b.noise_sigma,
            },
        ))
    }
}

/// `A^H A` evaluated through per-frame Toeplitz kernels.
pub struct NormalOperator<'a> {
    op: &'a SamplingOperator,
    fft: Fft2,
    kernels: Vec<ToeplitzKernel>,
}

impl NormalOperator<'_> {
    pub fn apply_frame(&self, frame: usize, x: &[Complex64], out: &mut [Complex64]) {
        let npix = x.len();
        let mut work = vec![Complex64::default(); 4 * npix];
        let mut coil_img = vec![Complex64::default(); npix];
        let mut coil_out = vec![Complex64::default(); npix];
        out.iter_mut().for_each(|z| *z = Complex64::default());
        for map in &self.op.maps.maps {
            for ((c, s), v) in coil_img.iter_mut().zip(map).zip(x) {
                *c = s * v;
            }
            coil_out.iter_mut().for_each(|z| *z = Complex64::default());
            self.kernels[frame].apply_add(&coil_img, &mut coil_out, &self.fft, &mut work);
            for ((o, s), v) in out.iter_mut().zip(map).zip(&coil_out) {
                *o += s.conj() * v;
            }
        }
    }

    pub fn apply(&self, x: &DynamicImageSeries) -> DynamicImageSeries {
        let mut out = DynamicImageSeries::zeros(x.n_frames(), x.rows(), x.cols());
        for f in 0..x.n_frames() {
            let xf = x.frame(f).to_vec();
            let mut of = vec![Complex64::default(); xf.len()];
            self.apply_frame(f, &xf, &mut of);
            out.frame_mut(f).iter_mut().zip(of).for_each(|(o, v)| *o = v);
        }
        out
    }

    pub fn operator(&self) -> &SamplingOperator {
        self.op
    }
}

/// Adds i.i.d. circular complex Gaussian noise with per-component standard
/// deviation `sigma`.
pub fn add_noise(b: &MultiCoilKSpace, sigma: f64, seed: u64) -> Result<MultiCoilKSpace> {
    if !(sigma >= 0.0) {
        return param("noise sigma must be non-negative");
    }
    if sigma == 0.0 {
        return Ok(MultiCoilKSpace {
            data: b.data.clone(),
            noise_sigma: b.noise_sigma,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let data = b
        .data
        .iter()
        .map(|frame| {
            frame
                .iter()
                .map(|coil| {
                    coil.iter()
                        .map(|z| z + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(MultiCoilKSpace {
        data,
        noise_sigma: b.noise_sigma.hypot(sigma),
    })
}

/// Result of principal-component coil compression.
#[derive(Debug, Clone)]
pub struct CoilCompression {
    pub kspace: MultiCoilKSpace,
    pub maps: CoilMaps,
    /// Columns are the retained principal directions (physical x virtual);
    /// virtual coil `v` is `sum_c basis[(c, v)] * physical_c`.
    pub basis: DMatrix<Complex64>,
    pub relative_error: f64,
}

/// Keeps the fewest principal coil combinations whose relative Frobenius
/// approximation error of the stacked data is below `max_error`.
pub fn compress_coils(b: &MultiCoilKSpace, maps: &CoilMaps, max_error: f64) -> Result<CoilCompression> {
    if !(max_error > 0.0 && max_error < 1.0) {
        return param("max_error must lie in (0, 1)");
    }
    let c = b.n_coils();
    if c != maps.n_coils() {
        return dims(format!("k-space has {c} coils, maps have {}", maps.n_coils()));
    }
    let mut gram = DMatrix::<Complex64>::zeros(c, c);
    for frame in &b.data {
        let n = frame[0].len();
        for s in 0..n {
            for i in 0..c {
                let zi = frame[i][s].conj();
                for j in i..c {
                    gram[(i, j)] += zi * frame[j][s];
                }
            }
        }
    }
    for i in 0..c {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)].conj();
        }
    }
    let total: f64 = (0..c).map(|i| gram[(i, i)].re).sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("coil data is identically zero".into()));
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut kept = 0;
    let mut retained = 0.0;
    let mut relative_error = 1.0;
    for &k in &order {
        retained += eig.eigenvalues[k].max(0.0);
        kept += 1;
        relative_error = ((total - retained).max(0.0) / total).sqrt();
        if relative_error < max_error {
            break;
        }
    }
    let basis = DMatrix::from_fn(c, kept, |i, v| eig.eigenvectors[(i, order[v])]);

    let project = |coils: &[Vec<Complex64>]| -> Vec<Vec<Complex64>> {
        let len = coils[0].len();
        (0..kept)
            .map(|v| {
                (0..len)
                    .map(|s| (0..c).map(|i| basis[(i, v)] * coils[i][s]).sum())
                    .collect()
            })
            .collect()
    };
    let kspace = MultiCoilKSpace {
        data: b.data.iter().map(|frame| project(frame)).collect(),
        noise_sigma: b.noise_sigma,
    };
    let maps = CoilMaps {
        grid: maps.grid,
        maps: project(&maps.maps),
    };
    Ok(CoilCompression {
        kspace,
        maps,
        basis,
        relative_error,
    })
}

/// Even grid size large enough to hold the central disk at Nyquist spacing.
pub fn default_low_grid(grid: usize, central_fraction: f64) -> usize {
    let raw = (grid as f64 * central_fraction).ceil() as usize;
    (raw + raw % 2).max(2)
}

/// Keeps samples with `|k| <= central_fraction * K_MAX` and rescales them to
/// the Nyquist box of a `low_grid` image.
pub fn restrict_central(
    op: &SamplingOperator,
    b: &MultiCoilKSpace,
    central_fraction: f64,
    low_grid: usize,
) -> Result<(SamplingOperator, MultiCoilKSpace)> {
    if !(central_fraction > 0.0 && central_fraction <= 1.0) {
        return param("central_fraction must lie in (0, 1]");
    }
    if low_grid == 0 || low_grid > op.grid {
        return param(format!("low_grid must lie in 1..={}", op.grid));
    }
    op.check_kspace(b)?;
    let cutoff = central_fraction * K_MAX;
    let keep = |f: usize, s: usize| {
        let k = op.frames[f].coords[s];
        k[0].hypot(k[1]) <= cutoff
    };
    let retained: usize = (0..op.n_frames())
        .map(|f| (0..op.frames[f].coords.len()).filter(|&s| keep(f, s)).count())
        .sum();
    if retained == 0 {
        return Err(Error::MissingData("no samples inside the central region".into()));
    }
    let mode = if central_fraction == 1.0 && low_grid == op.grid {
        op.mode
    } else {
        SamplingMode::Central
    };
    op.select(
        b,
        keep,
        low_grid,
        op.grid as f64 / low_grid as f64,
        mode,
        central_fraction,
    )
}
