//! Simulation and reconstruction pipeline plus conversions between library
//! types and dataset files.

use num_complex::Complex64;
use storm_core::manifold::LaplacianMatrix;
use storm_core::operators::{
    add_noise, compress_coils, simulate_coilmaps, CoilMaps, FrameSampling, MultiCoilKSpace, SamplingMode,
    SamplingOperator,
};
use storm_core::phantom::{generate_phantom, GroundTruthSeries};
use storm_core::solvers::{lowrank_recon, storm_iterative, storm_selfnav, storm_sense, ReconResult};
use storm_core::trajectory::SpiralAcquisition;
use storm_core::DynamicImageSeries;

use crate::config::RunConfig;
use crate::dataset::{DatasetFile, Dtype, Header, Kind, Provenance};
use crate::error::{data, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    StormIterative,
    StormSelfNav,
    StormSense,
    LowRank,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::StormIterative, Method::StormSelfNav, Method::StormSense, Method::LowRank];

    pub fn name(self) -> &'static str {
        match self {
            Method::StormIterative => "storm-iterative",
            Method::StormSelfNav => "storm-selfnav",
            Method::StormSense => "storm-sense",
            Method::LowRank => "lowrank",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown method `{s}`")))
    }
}

/// Everything a simulation produces, before compression.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub truth: GroundTruthSeries,
    pub acquisition: SpiralAcquisition,
    pub maps: CoilMaps,
    pub kspace: MultiCoilKSpace,
}

/// Phantom, trajectory, coil maps and noisy k-space. The noise standard
/// deviation is set from the rms of the noiseless samples and `snr_db`.
pub fn simulate(cfg: &RunConfig) -> Result<Simulation> {
    let acquisition = build_trajectory(cfg)?;
    let truth = generate_phantom(&cfg.phantom.spec())?;
    let maps = simulate_coilmaps(cfg.phantom.grid_size, cfg.acquisition.n_coils)?;
    let op = SamplingOperator::new(&acquisition, maps.clone())?;
    let clean = op.forward(&truth.frames)?;
    let count = (clean.n_samples() * clean.n_coils()).max(1) as f64;
    let rms = (clean.norm_sqr() / (2.0 * count)).sqrt();
    let sigma = rms * 10f64.powf(-cfg.acquisition.snr_db / 20.0);
    let kspace = add_noise(&clean, sigma, cfg.acquisition.noise_seed)?;
    Ok(Simulation {
        truth,
        acquisition,
        maps,
        kspace,
    })
}

pub fn build_trajectory(cfg: &RunConfig) -> Result<SpiralAcquisition> {
    let acq = cfg.trajectory.spec().build(cfg.phantom.grid_size)?;
    if acq.n_frames() != cfg.phantom.n_frames {
        return Err(CliError::Config(format!(
            "trajectory yields {} frames (n_interleaves / spirals_per_frame) but phantom.n_frames is {}",
            acq.n_frames(),
            cfg.phantom.n_frames
        )));
    }
    Ok(acq)
}

/// Measured data ready for reconstruction.
#[derive(Debug, Clone)]
pub struct Measurements {
    pub frames: Vec<FrameSampling>,
    pub maps: CoilMaps,
    pub kspace: MultiCoilKSpace,
}

impl Measurements {
    pub fn from_simulation(sim: &Simulation) -> Self {
        let frames = (0..sim.acquisition.n_frames())
            .map(|f| FrameSampling {
                coords: sim.acquisition.frame_samples(f),
                navigator: sim.acquisition.frame_navigator_mask(f),
            })
            .collect();
        Self {
            frames,
            maps: sim.maps.clone(),
            kspace: sim.kspace.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub result: ReconResult,
    pub virtual_coils: usize,
    pub compression_error: f64,
}

/// Coil compression followed by the selected reconstruction.
pub fn reconstruct(
    meas: &Measurements,
    method: Method,
    cfg: &RunConfig,
    progress: Option<&mut dyn FnMut(usize, f64)>,
) -> Result<Reconstruction> {
    let cc = compress_coils(&meas.kspace, &meas.maps, cfg.acquisition.compression_error)?;
    let op = SamplingOperator::from_frames(meas.frames.clone(), cc.maps.clone(), SamplingMode::Full, 1.0)?;
    let recon = cfg.recon.config();
    let result = match method {
        Method::StormIterative => storm_iterative(&op, &cc.kspace, &recon, progress)?,
        Method::StormSelfNav => storm_selfnav(&op, &cc.kspace, &recon)?,
        Method::StormSense => storm_sense(&op, &cc.kspace, &recon)?,
        Method::LowRank => lowrank_recon(&op, &cc.kspace, &cfg.lowrank.config(), progress)?,
    };
    Ok(Reconstruction {
        result,
        virtual_coils: cc.maps.n_coils(),
        compression_error: cc.relative_error,
    })
}

pub fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance {
        config_hash: cfg.digest(),
        seed: cfg.phantom.seed,
    }
}

pub fn images_to_dataset(x: &DynamicImageSeries, content: &str, prov: Provenance) -> Result<DatasetFile> {
    let header = Header::new(
        Kind::Images,
        content,
        vec![x.n_frames(), x.rows(), x.cols()],
        Dtype::Complex128,
        prov,
    );
    let values: Vec<Complex64> = (0..x.n_frames()).flat_map(|f| x.frame(f).to_vec()).collect();
    DatasetFile::complex(header, values)
}

pub fn dataset_to_images(ds: &DatasetFile) -> Result<DynamicImageSeries> {
    ds.expect(Kind::Images)?;
    let [frames, rows, cols] = dims3(ds)?;
    let values = ds.as_complex()?;
    let mut x = DynamicImageSeries::zeros(frames, rows, cols);
    for (f, chunk) in values.chunks_exact(rows * cols).enumerate() {
        x.frame_mut(f).iter_mut().zip(chunk).for_each(|(d, s)| *d = *s);
    }
    Ok(x)
}

pub fn truth_to_dataset(gt: &GroundTruthSeries, prov: Provenance) -> Result<DatasetFile> {
    let mut ds = images_to_dataset(&gt.frames, "ground_truth", prov)?;
    ds.header.attributes.insert("cardiac_phase".into(), gt.cardiac_phase.clone().into());
    ds.header
        .attributes
        .insert("respiratory_phase".into(), gt.respiratory_phase.clone().into());
    Ok(ds)
}

pub fn maps_to_dataset(maps: &CoilMaps, prov: Provenance) -> Result<DatasetFile> {
    let header = Header::new(
        Kind::Images,
        "coil_maps",
        vec![maps.n_coils(), maps.grid, maps.grid],
        Dtype::Complex128,
        prov,
    );
    DatasetFile::complex(header, maps.maps.concat())
}

pub fn dataset_to_maps(ds: &DatasetFile) -> Result<CoilMaps> {
    ds.expect(Kind::Images)?;
    let [coils, rows, cols] = dims3(ds)?;
    if rows != cols {
        return data(format!("coil maps must be square, got {rows}x{cols}"));
    }
    let maps = ds
        .as_complex()?
        .chunks_exact(rows * cols)
        .map(|c| c.to_vec())
        .collect::<Vec<_>>();
    debug_assert_eq!(maps.len(), coils);
    Ok(CoilMaps { grid: rows, maps })
}

/// Trajectory payload: `[frames, samples, 3]` with `(kx, ky, navigator)`.
pub fn trajectory_to_dataset(frames: &[FrameSampling], grid: usize, prov: Provenance) -> Result<DatasetFile> {
    let samples = uniform_len(frames.iter().map(|f| f.coords.len()), "trajectory")?;
    let mut values = Vec::with_capacity(frames.len() * samples * 3);
    for f in frames {
        for (k, &nav) in f.coords.iter().zip(&f.navigator) {
            values.extend_from_slice(&[k[0], k[1], if nav { 1.0 } else { 0.0 }]);
        }
    }
    let mut header = Header::new(Kind::Trajectory, "trajectory", vec![frames.len(), samples, 3], Dtype::Float64, prov);
    header.attributes.insert("grid".into(), grid.into());
    DatasetFile::real(header, values)
}

pub fn dataset_to_trajectory(ds: &DatasetFile) -> Result<Vec<FrameSampling>> {
    ds.expect(Kind::Trajectory)?;
    let [frames, samples, three] = dims3(ds)?;
    if three != 3 {
        return data("trajectory rows must hold (kx, ky, navigator)");
    }
    let values = ds.as_real()?;
    Ok((0..frames)
        .map(|f| {
            let rows = &values[f * samples * 3..(f + 1) * samples * 3];
            FrameSampling {
                coords: rows.chunks_exact(3).map(|r| [r[0], r[1]]).collect(),
                navigator: rows.chunks_exact(3).map(|r| r[2] != 0.0).collect(),
            }
        })
        .collect())
}

/// K-space payload: `[frames, coils, samples]`.
pub fn kspace_to_dataset(b: &MultiCoilKSpace, prov: Provenance) -> Result<DatasetFile> {
    let samples = uniform_len(b.data.iter().flat_map(|f| f.iter().map(|c| c.len())), "k-space")?;
    let values: Vec<Complex64> = b.data.iter().flat_map(|f| f.iter().flatten().copied()).collect();
    let mut header = Header::new(
        Kind::Kspace,
        "measurements",
        vec![b.n_frames(), b.n_coils(), samples],
        Dtype::Complex128,
        prov,
    );
    header.attributes.insert("noise_sigma".into(), b.noise_sigma.into());
    DatasetFile::complex(header, values)
}

pub fn dataset_to_kspace(ds: &DatasetFile) -> Result<MultiCoilKSpace> {
    ds.expect(Kind::Kspace)?;
    let [frames, coils, samples] = dims3(ds)?;
    let values = ds.as_complex()?;
    let data = (0..frames)
        .map(|f| {
            (0..coils)
                .map(|c| values[(f * coils + c) * samples..(f * coils + c + 1) * samples].to_vec())
                .collect()
        })
        .collect();
    Ok(MultiCoilKSpace {
        data,
        noise_sigma: ds.header.attr_f64("noise_sigma")?,
    })
}

/// Laplacian payload: `[2, n, n]`, weights then Laplacian, row-major.
pub fn laplacian_to_dataset(l: &LaplacianMatrix, prov: Provenance) -> Result<DatasetFile> {
    let n = l.size();
    let mut values = Vec::with_capacity(2 * n * n);
    for m in [&l.w, &l.l] {
        for i in 0..n {
            values.extend((0..n).map(|j| m[(i, j)]));
        }
    }
    let mut header = Header::new(Kind::Laplacian, "laplacian", vec![2, n, n], Dtype::Float64, prov);
    if let Some(g) = l.gamma {
        header.attributes.insert("gamma".into(), g.into());
    }
    DatasetFile::real(header, values)
}

pub fn dataset_to_laplacian(ds: &DatasetFile) -> Result<LaplacianMatrix> {
    ds.expect(Kind::Laplacian)?;
    let [two, n, m] = dims3(ds)?;
    if two != 2 || n != m {
        return data(format!("Laplacian dims must be [2, n, n], got {:?}", ds.header.dims));
    }
    let v = ds.as_real()?;
    Ok(LaplacianMatrix {
        w: nalgebra::DMatrix::from_row_slice(n, n, &v[..n * n]),
        l: nalgebra::DMatrix::from_row_slice(n, n, &v[n * n..]),
        gamma: ds.header.attributes.get("gamma").and_then(|g| g.as_f64()),
    })
}

fn dims3(ds: &DatasetFile) -> Result<[usize; 3]> {
    ds.header
        .dims
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Data(format!("{} dataset must be 3-D, got {:?}", ds.header.content, ds.header.dims)))
}

fn uniform_len(mut lens: impl Iterator<Item = usize>, what: &str) -> Result<usize> {
    let first = lens.next().unwrap_or(0);
    if lens.any(|l| l != first) {
        return data(format!("{what} frames have unequal sample counts"));
    }
    Ok(first)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut c = RunConfig::default();
        c.phantom.grid_size = 16;
        c.phantom.n_frames = 4;
        c.phantom.respiratory_amplitude = 1.0;
        c.trajectory.n_interleaves = 8;
        c.trajectory.spirals_per_frame = 2;
        c.trajectory.samples_per_readout = 64;
        c.trajectory.navigator_every = 2;
        c.acquisition.n_coils = 3;
        c
    }

    #[test]
    fn conversions_round_trip() {
        let cfg = tiny();
        let sim = simulate(&cfg).unwrap();
        let meas = Measurements::from_simulation(&sim);
        let p = provenance(&cfg);

        let ds = kspace_to_dataset(&sim.kspace, p.clone()).unwrap();
        assert_eq!(dataset_to_kspace(&DatasetFile::from_bytes(&ds.to_bytes()).unwrap()).unwrap(), sim.kspace);
        let ds = trajectory_to_dataset(&meas.frames, 16, p.clone()).unwrap();
        assert_eq!(dataset_to_trajectory(&ds).unwrap(), meas.frames);
        let ds = maps_to_dataset(&sim.maps, p.clone()).unwrap();
        assert_eq!(dataset_to_maps(&ds).unwrap(), sim.maps);
        let ds = truth_to_dataset(&sim.truth, p.clone()).unwrap();
        assert_eq!(dataset_to_images(&ds).unwrap(), sim.truth.frames);
        assert!(dataset_to_kspace(&ds).is_err());

        let l = storm_core::manifold::temporal_laplacian(4).unwrap();
        let ds = laplacian_to_dataset(&l, p).unwrap();
        assert_eq!(dataset_to_laplacian(&ds).unwrap(), l);
    }

    #[test]
    fn frame_count_mismatch_is_a_config_error() {
        let mut cfg = tiny();
        cfg.phantom.n_frames = 5;
        assert!(matches!(simulate(&cfg), Err(CliError::Config(_))));
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("sense".parse::<Method>().is_err());
    }
}
