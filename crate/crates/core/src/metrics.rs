//! Image-quality metrics over a rectangular region of interest: signal to
//! error ratio, Laplacian-of-Gaussian high-frequency error and SSIM.
//!
//! All metrics work on magnitude images.

use crate::error::{dims, param, Error, Result};
use crate::series::DynamicImageSeries;

pub const LOG_KERNEL_SIZE: usize = 15;
pub const LOG_SIGMA: f64 = 1.5;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionOfInterest {
    pub row0: usize,
    pub col0: usize,
    pub height: usize,
    pub width: usize,
}

impl RegionOfInterest {
    /// Centered square with half the grid side.
    pub fn centered(rows: usize, cols: usize) -> Self {
        let side = rows.min(cols) / 2;
        Self {
            row0: (rows - side) / 2,
            col0: (cols - side) / 2,
            height: side,
            width: side,
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            row0: 0,
            col0: 0,
            height: rows,
            width: cols,
        }
    }

    pub fn check(&self, rows: usize, cols: usize) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return param("region of interest is empty");
        }
        if self.row0 + self.height > rows || self.col0 + self.width > cols {
            return param(format!(
                "region of interest {}+{} x {}+{} exceeds {}x{} image",
                self.row0, self.height, self.col0, self.width, rows, cols
            ));
        }
        Ok(())
    }

    fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.row0..self.row0 + self.height)
            .flat_map(move |r| (self.col0..self.col0 + self.width).map(move |c| (r, c)))
    }
}

fn check_pair(orig: &DynamicImageSeries, rec: &DynamicImageSeries, roi: &RegionOfInterest) -> Result<()> {
    if !orig.same_shape(rec) {
        return dims("original and reconstruction differ in shape");
    }
    if orig.n_frames() == 0 {
        return dims("empty series");
    }
    roi.check(orig.rows(), orig.cols())
}

fn magnitudes(x: &DynamicImageSeries) -> Vec<Vec<f64>> {
    (0..x.n_frames()).map(|i| x.magnitude_frame(i)).collect()
}

fn ratio_db(signal: f64, error: f64) -> f64 {
    if error == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (signal / error).log10()
    }
}

/// Signal to error ratio in dB over the ROI of all frames; `+inf` when the
/// images are identical.
pub fn ser(orig: &DynamicImageSeries, rec: &DynamicImageSeries, roi: &RegionOfInterest) -> Result<f64> {
    check_pair(orig, rec, roi)?;
    let (s, e) = ser_sums(&magnitudes(orig), &magnitudes(rec), orig.cols(), roi, 0..orig.n_frames());
    if s == 0.0 {
        return Err(Error::Parameter("original is zero inside the region of interest".into()));
    }
    Ok(ratio_db(s.sqrt(), e.sqrt()))
}

fn ser_sums(
    o: &[Vec<f64>],
    r: &[Vec<f64>],
    cols: usize,
    roi: &RegionOfInterest,
    frames: std::ops::Range<usize>,
) -> (f64, f64) {
    let mut signal = 0.0;
    let mut error = 0.0;
    for f in frames {
        for (y, x) in roi.pixels() {
            let a = o[f][y * cols + x];
            let b = r[f][y * cols + x];
            signal += a * a;
            error += (a - b) * (a - b);
        }
    }
    (signal, error)
}

/// Zero-sum Laplacian-of-Gaussian kernel, row-major `size x size`.
pub fn log_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let s2 = sigma * sigma;
    let mut g = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (y, x) = (i as f64 - half, j as f64 - half);
            g.push((-(x * x + y * y) / (2.0 * s2)).exp());
        }
    }
    let total: f64 = g.iter().sum();
    let mut h: Vec<f64> = g
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let (y, x) = ((k / size) as f64 - half, (k % size) as f64 - half);
            v / total * (x * x + y * y - 2.0 * s2) / (s2 * s2)
        })
        .collect();
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    h.iter_mut().for_each(|v| *v -= mean);
    h
}

/// Correlates `img` with `kernel` using replicated borders, evaluated only
/// inside the ROI. Output is ROI-sized, row-major.
fn filter_roi(img: &[f64], rows: usize, cols: usize, kernel: &[f64], size: usize, roi: &RegionOfInterest) -> Vec<f64> {
    let half = (size / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    roi.pixels()
        .map(|(r, c)| {
            let mut acc = 0.0;
            for i in 0..size {
                let rr = clamp(r as isize + i as isize - half, rows);
                for j in 0..size {
                    let cc = clamp(c as isize + j as isize - half, cols);
                    acc += kernel[i * size + j] * img[rr * cols + cc];
                }
            }
            acc
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HfenResult {
    /// Per-frame `|LoG(o) - LoG(r)| / |LoG(o)|`.
    pub norm_per_frame: Vec<f64>,
    /// Per-frame `20 log10(|LoG(o)| / |LoG(o) - LoG(r)|)`.
    pub db_per_frame: Vec<f64>,
    /// Normalized error with norms taken over the whole series.
    pub norm_global: f64,
}

pub fn hfen(orig: &DynamicImageSeries, rec: &DynamicImageSeries, roi: &RegionOfInterest) -> Result<HfenResult> {
    check_pair(orig, rec, roi)?;
    if roi.height < LOG_KERNEL_SIZE || roi.width < LOG_KERNEL_SIZE {
        return param(format!(
            "region of interest must be at least {0}x{0} for the LoG filter",
            LOG_KERNEL_SIZE
        ));
    }
    let kernel = log_kernel(LOG_KERNEL_SIZE, LOG_SIGMA);
    let (rows, cols) = (orig.rows(), orig.cols());
    let o = magnitudes(orig);
    let r = magnitudes(rec);
    let mut norm_per_frame = Vec::with_capacity(o.len());
    let mut db_per_frame = Vec::with_capacity(o.len());
    let (mut sig_total, mut err_total) = (0.0, 0.0);
    for (of, rf) in o.iter().zip(&r) {
        let lo = filter_roi(of, rows, cols, &kernel, LOG_KERNEL_SIZE, roi);
        let lr = filter_roi(rf, rows, cols, &kernel, LOG_KERNEL_SIZE, roi);
        let sig: f64 = lo.iter().map(|v| v * v).sum();
        let err: f64 = lo.iter().zip(&lr).map(|(a, b)| (a - b) * (a - b)).sum();
        if sig == 0.0 {
            return Err(Error::Numerical(
                "original has no high-frequency content in the region of interest".into(),
            ));
        }
        sig_total += sig;
        err_total += err;
        norm_per_frame.push((err / sig).sqrt());
        db_per_frame.push(ratio_db(sig.sqrt(), err.sqrt()));
    }
    Ok(HfenResult {
        norm_per_frame,
        db_per_frame,
        norm_global: (err_total / sig_total).sqrt(),
    })
}

pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size * size)
        .map(|k| {
            let (y, x) = ((k / size) as f64 - half, (k % size) as f64 - half);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Dynamic range used for the SSIM stabilizers: max - min of the original
/// magnitudes, falling back to the max (or 1) for flat data.
pub fn ssim_data_range(orig: &DynamicImageSeries) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for z in orig.data().iter() {
        let m = z.norm();
        lo = lo.min(m);
        hi = hi.max(m);
    }
    if hi > lo {
        hi - lo
    } else if hi > 0.0 {
        hi
    } else {
        1.0
    }
}

/// Mean SSIM of one frame pair over all 11x11 windows lying inside the ROI.
pub fn ssim_frame(o: &[f64], r: &[f64], cols: usize, roi: &RegionOfInterest, data_range: f64) -> f64 {
    let w = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in roi.row0..=roi.row0 + roi.height - SSIM_WINDOW {
        for c0 in roi.col0..=roi.col0 + roi.width - SSIM_WINDOW {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let k = w[i * SSIM_WINDOW + j];
                    let idx = (r0 + i) * cols + c0 + j;
                    let (a, b) = (o[idx], r[idx]);
                    mx += k * a;
                    my += k * b;
                    sxx += k * a * a;
                    syy += k * b * b;
                    sxy += k * a * b;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += if den == 0.0 { 1.0 } else { num / den };
            count += 1;
        }
    }
    total / count as f64
}

/// Per-frame SSIM values.
pub fn ssim_per_frame(orig: &DynamicImageSeries, rec: &DynamicImageSeries, roi: &RegionOfInterest) -> Result<Vec<f64>> {
    check_pair(orig, rec, roi)?;
    if roi.height < SSIM_WINDOW || roi.width < SSIM_WINDOW {
        return param(format!("region of interest must be at least {0}x{0} for SSIM", SSIM_WINDOW));
    }
    let range = ssim_data_range(orig);
    let o = magnitudes(orig);
    let r = magnitudes(rec);
    Ok(o.iter()
        .zip(&r)
        .map(|(of, rf)| ssim_frame(of, rf, orig.cols(), roi, range))
        .collect())
}

/// Mean SSIM across frames.
pub fn ssim(orig: &DynamicImageSeries, rec: &DynamicImageSeries, roi: &RegionOfInterest) -> Result<f64> {
    let v = ssim_per_frame(orig, rec, roi)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation; infinite entries give an infinite mean
    /// and zero spread.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Self {
                mean: f64::INFINITY,
                std: 0.0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// SER over the whole ROI series.
    pub ser_db: f64,
    pub ser_per_frame: MeanStd,
    pub ssim: MeanStd,
    pub hfen_norm: MeanStd,
    pub hfen_norm_global: f64,
    pub hfen_db: MeanStd,
    pub n_frames: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "label,ser_db,ser_frame_mean,ser_frame_std,ssim_mean,ssim_std,hfen_norm_mean,hfen_norm_std,hfen_norm_global,hfen_db_mean,hfen_db_std,n_frames";

    pub fn csv_row(&self, label: &str) -> String {
        format!(
            "{label},{},{},{},{},{},{},{},{},{},{},{}",
            self.ser_db,
            self.ser_per_frame.mean,
            self.ser_per_frame.std,
            self.ssim.mean,
            self.ssim.std,
            self.hfen_norm.mean,
            self.hfen_norm.std,
            self.hfen_norm_global,
            self.hfen_db.mean,
            self.hfen_db.std,
            self.n_frames
        )
    }
}

pub fn report(orig: &DynamicImageSeries, rec: &DynamicImageSeries, roi: &RegionOfInterest) -> Result<MetricReport> {
    let ser_db = ser(orig, rec, roi)?;
    let o = magnitudes(orig);
    let r = magnitudes(rec);
    let per_frame: Vec<f64> = (0..orig.n_frames())
        .map(|f| {
            let (s, e) = ser_sums(&o, &r, orig.cols(), roi, f..f + 1);
            ratio_db(s.sqrt(), e.sqrt())
        })
        .collect();
    let ssim_values = ssim_per_frame(orig, rec, roi)?;
    let h = hfen(orig, rec, roi)?;
    Ok(MetricReport {
        ser_db,
        ser_per_frame: MeanStd::of(&per_frame),
        ssim: MeanStd::of(&ssim_values),
        hfen_norm: MeanStd::of(&h.norm_per_frame),
        hfen_norm_global: h.norm_global,
        hfen_db: MeanStd::of(&h.db_per_frame),
        n_frames: orig.n_frames(),
    })
}
