//! Figure-style exports: 8-bit magnitude frames, intensity profiles and
//! weight rows.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use storm_core::manifold::LaplacianMatrix;
use storm_core::DynamicImageSeries;

use crate::error::{io_err, CliError, Result};

/// Display window applied to every exported frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub low: f64,
    pub high: f64,
}

impl Window {
    /// `[0, max |x|]` over the whole series.
    pub fn global(x: &DynamicImageSeries) -> Self {
        Self {
            low: 0.0,
            high: x.max_modulus(),
        }
    }

    pub fn to_byte(&self, v: f64) -> u8 {
        if !(self.high > self.low) {
            return if v > self.low { 255 } else { 0 };
        }
        let t = ((v - self.low) / (self.high - self.low)).clamp(0.0, 1.0);
        (t * 255.0).round() as u8
    }
}

/// Binary PGM of one magnitude frame.
pub fn pgm_bytes(x: &DynamicImageSeries, frame: usize, window: &Window) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", x.cols(), x.rows()).into_bytes();
    out.extend(x.frame(frame).iter().map(|z| window.to_byte(z.norm())));
    out
}

pub fn write_frames(x: &DynamicImageSeries, dir: &Path) -> Result<(Window, Vec<PathBuf>)> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let window = Window::global(x);
    let width = x.n_frames().saturating_sub(1).to_string().len().max(3);
    let mut paths = Vec::with_capacity(x.n_frames());
    for f in 0..x.n_frames() {
        let path = dir.join(format!("frame_{f:0width$}.pgm"));
        std::fs::write(&path, pgm_bytes(x, f, &window)).map_err(io_err(&path))?;
        paths.push(path);
    }
    Ok((window, paths))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cut {
    Row(usize),
    Col(usize),
}

/// Magnitudes along a row or column, one CSV line per frame.
pub fn profile_csv(x: &DynamicImageSeries, cut: Cut) -> Result<String> {
    let (index, limit, len) = match cut {
        Cut::Row(r) => (r, x.rows(), x.cols()),
        Cut::Col(c) => (c, x.cols(), x.rows()),
    };
    if index >= limit {
        return Err(storm_core::Error::Index { index, len: limit }.into());
    }
    let mut out = String::from("frame");
    for p in 0..len {
        write!(out, ",p{p}").unwrap();
    }
    out.push('\n');
    for f in 0..x.n_frames() {
        let frame = x.frame(f);
        write!(out, "{f}").unwrap();
        for p in 0..len {
            let (r, c) = match cut {
                Cut::Row(r) => (r, p),
                Cut::Col(c) => (p, c),
            };
            write!(out, ",{}", frame[r * x.cols() + c].norm()).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Selected rows of the weight matrix, one CSV line per requested frame.
pub fn weights_csv(l: &LaplacianMatrix, frames: &[usize]) -> Result<String> {
    let n = l.size();
    if frames.is_empty() {
        return Err(CliError::Usage("no frames requested".into()));
    }
    if let Some(&bad) = frames.iter().find(|&&f| f >= n) {
        return Err(storm_core::Error::Index { index: bad, len: n }.into());
    }
    let mut out = String::from("frame");
    for j in 0..n {
        write!(out, ",w{j}").unwrap();
    }
    out.push('\n');
    for &i in frames {
        write!(out, "{i}").unwrap();
        for j in 0..n {
            write!(out, ",{}", l.w[(i, j)]).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}
