use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use storm_core::metrics::{report, MetricReport, RegionOfInterest};

use crate::config::{is_config_key, parse_overrides, RunConfig};
use crate::dataset::DatasetFile;
use crate::error::{io_err, CliError, Result};
use crate::export::{profile_csv, weights_csv, write_frames, Cut};
use crate::manifest::{RunManifest, StageClock};
use crate::pipeline::{
    build_trajectory, dataset_to_images, dataset_to_kspace, dataset_to_laplacian, dataset_to_maps,
    dataset_to_trajectory, images_to_dataset, kspace_to_dataset, laplacian_to_dataset, maps_to_dataset, provenance,
    reconstruct, simulate, trajectory_to_dataset, truth_to_dataset, Measurements, Method,
};

pub const TRUTH_FILE: &str = "truth.ds";
pub const KSPACE_FILE: &str = "kspace.ds";
pub const TRAJECTORY_FILE: &str = "trajectory.ds";
pub const COILS_FILE: &str = "coils.ds";
pub const IMAGES_FILE: &str = "images.ds";
pub const LAPLACIAN_FILE: &str = "laplacian.ds";
pub const OBJECTIVE_FILE: &str = "objective.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Simulation, reconstruction and evaluation of free-breathing spiral
/// cardiac MRI. Any config key can be overridden with `--section.key value`
/// (or `--key value` when the key is unique).
#[derive(Debug, Parser)]
#[command(name = "storm", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Phantom, trajectory, coil maps and noisy k-space.
    Simulate(OutArgs),
    /// Spiral trajectory only.
    Trajectory(OutArgs),
    /// Reconstruct a simulated or stored acquisition.
    Recon(ReconArgs),
    /// Quality metrics of reconstructions against a reference.
    Metrics(MetricsArgs),
    /// Figure-style exports.
    #[command(subcommand)]
    Export(ExportCommand),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconArgs {
    #[arg(long)]
    pub method: String,
    /// Directory written by `simulate`.
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to the input's recorded config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, required = true)]
    pub recon: Vec<PathBuf>,
    /// Row labels, one per `--recon`; defaults to the file stem.
    #[arg(long)]
    pub label: Vec<String>,
    /// `row,col,height,width`; defaults to the centered half-grid square.
    #[arg(long)]
    pub roi: Option<String>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ExportCommand {
    /// One 8-bit PGM per frame.
    Frames {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Magnitude along one row or column for every frame.
    Profile {
        #[arg(long)]
        images: PathBuf,
        #[arg(long, conflicts_with = "col", required_unless_present = "col")]
        row: Option<usize>,
        #[arg(long)]
        col: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Selected rows of a weight matrix.
    Weights {
        #[arg(long)]
        laplacian: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        frames: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn main_with_args<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let (cli_args, overrides) = split_args(args.into_iter().collect());
    let cli = match Cli::try_parse_from(cli_args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = parse_overrides(&overrides).and_then(|ov| run(cli.command, &ov));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Separates config overrides from command flags.
fn split_args(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut cli = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.strip_prefix("--") {
            Some(name) if is_config_key(name) && !is_flag(name) => {
                let inline = name.contains('=');
                overrides.push(a);
                if !inline {
                    if let Some(v) = it.next() {
                        overrides.push(v);
                    }
                }
            }
            _ => cli.push(a),
        }
    }
    (cli, overrides)
}

fn is_flag(name: &str) -> bool {
    const FLAGS: &[&str] = &[
        "config", "out", "method", "input", "truth", "recon", "label", "roi", "images", "row", "col", "laplacian",
        "frames", "help", "version",
    ];
    FLAGS.contains(&name.split_once('=').map_or(name, |(k, _)| k))
}

pub fn run(command: Command, overrides: &[(String, String)]) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(&RunConfig::load(a.config.as_deref(), overrides)?, &a.out).map(|_| ()),
        Command::Trajectory(a) => cmd_trajectory(&RunConfig::load(a.config.as_deref(), overrides)?, &a.out),
        Command::Recon(a) => {
            let method: Method = a.method.parse()?;
            let recorded = a.input.join(CONFIG_FILE);
            let path = a.config.clone().or_else(|| recorded.exists().then_some(recorded));
            let cfg = RunConfig::load(path.as_deref(), overrides)?;
            cmd_recon(method, &a.input, &cfg, &a.out).map(|_| ())
        }
        Command::Metrics(a) => {
            no_overrides(overrides)?;
            let csv = cmd_metrics(&a.truth, &a.recon, &a.label, a.roi.as_deref())?;
            match a.out {
                Some(p) => std::fs::write(&p, csv).map_err(io_err(&p)),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Export(e) => {
            no_overrides(overrides)?;
            cmd_export(e)
        }
    }
}

fn no_overrides(overrides: &[(String, String)]) -> Result<()> {
    match overrides.first() {
        Some((k, _)) => Err(CliError::Usage(format!("`--{k}` is not accepted by this command"))),
        None => Ok(()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_config(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, cfg.to_toml()).map_err(io_err(&path))?;
    Ok(path)
}

/// Writes ground truth, k-space, trajectory, coil maps, the resolved config
/// and a manifest into `out`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    let mut clock = StageClock::default();
    let sim = simulate(cfg)?;
    clock.lap("simulate");
    create_dir(out)?;
    let prov = provenance(cfg);
    let meas = Measurements::from_simulation(&sim);
    let files = [
        (TRUTH_FILE, truth_to_dataset(&sim.truth, prov.clone())?),
        (KSPACE_FILE, kspace_to_dataset(&sim.kspace, prov.clone())?),
        (TRAJECTORY_FILE, trajectory_to_dataset(&meas.frames, cfg.phantom.grid_size, prov.clone())?),
        (COILS_FILE, maps_to_dataset(&sim.maps, prov)?),
    ];
    let mut manifest = RunManifest::new("simulate", cfg);
    for (name, ds) in &files {
        let path = out.join(name);
        ds.write(&path)?;
        manifest.add_output(&path, out)?;
    }
    let cfg_path = write_config(cfg, out)?;
    manifest.add_output(&cfg_path, out)?;
    clock.lap("write");
    manifest.summarize("noise_sigma", sim.kspace.noise_sigma);
    manifest.summarize("n_frames", sim.kspace.n_frames());
    manifest.summarize("n_coils", sim.kspace.n_coils());
    manifest.timings = clock.stages;
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn cmd_trajectory(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut clock = StageClock::default();
    let acq = build_trajectory(cfg)?;
    clock.lap("trajectory");
    create_dir(out)?;
    let frames: Vec<_> = (0..acq.n_frames())
        .map(|f| storm_core::operators::FrameSampling {
            coords: acq.frame_samples(f),
            navigator: acq.frame_navigator_mask(f),
        })
        .collect();
    let path = out.join(TRAJECTORY_FILE);
    trajectory_to_dataset(&frames, cfg.phantom.grid_size, provenance(cfg))?.write(&path)?;
    let mut manifest = RunManifest::new("trajectory", cfg);
    manifest.add_output(&path, out)?;
    let cfg_path = write_config(cfg, out)?;
    manifest.add_output(&cfg_path, out)?;
    clock.lap("write");
    manifest.summarize("n_frames", acq.n_frames());
    manifest.summarize("navigators", acq.has_navigators());
    manifest.timings = clock.stages;
    manifest.write(&out.join(MANIFEST_FILE))
}

pub fn load_measurements(input: &Path) -> Result<Measurements> {
    let kspace = dataset_to_kspace(&DatasetFile::read(&input.join(KSPACE_FILE))?)?;
    let frames = dataset_to_trajectory(&DatasetFile::read(&input.join(TRAJECTORY_FILE))?)?;
    let maps = dataset_to_maps(&DatasetFile::read(&input.join(COILS_FILE))?)?;
    if frames.len() != kspace.n_frames() {
        return Err(CliError::Data(format!(
            "trajectory has {} frames, k-space has {}",
            frames.len(),
            kspace.n_frames()
        )));
    }
    if maps.n_coils() != kspace.n_coils() {
        return Err(CliError::Data(format!(
            "{} coil maps for {} k-space coils",
            maps.n_coils(),
            kspace.n_coils()
        )));
    }
    Ok(Measurements { frames, maps, kspace })
}

pub fn roi_for(cfg: &RunConfig, rows: usize, cols: usize) -> RegionOfInterest {
    let m = &cfg.metrics;
    if m.roi_height == 0 || m.roi_width == 0 {
        RegionOfInterest::centered(rows, cols)
    } else {
        RegionOfInterest {
            row0: m.roi_row,
            col0: m.roi_col,
            height: m.roi_height,
            width: m.roi_width,
        }
    }
}

/// Runs one method on the acquisition in `input` and writes images,
/// Laplacian (when the method produces one), objective trace, config and
/// manifest into `out`. A ground truth in `input` adds a metric summary.
pub fn cmd_recon(method: Method, input: &Path, cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    let mut clock = StageClock::default();
    let meas = load_measurements(input)?;
    clock.lap("load");
    if method == Method::StormSelfNav && !meas.frames.iter().any(|f| f.navigator.iter().any(|&n| n)) {
        return Err(CliError::Data(
            "storm-selfnav needs navigator readouts, but the trajectory has none; \
             simulate with trajectory.navigator_every > 0 or choose another method"
                .into(),
        ));
    }
    let rec = reconstruct(&meas, method, cfg, None)?;
    clock.lap("reconstruct");

    create_dir(out)?;
    let prov = provenance(cfg);
    let mut manifest = RunManifest::new("recon", cfg);
    manifest.param("method", method.name());
    if method == Method::LowRank {
        manifest.param("p", cfg.lowrank.p);
        manifest.param("lambda", cfg.lowrank.lambda);
    }
    for name in [KSPACE_FILE, TRAJECTORY_FILE, COILS_FILE] {
        manifest.add_input(&input.join(name), out)?;
    }
    let images = out.join(IMAGES_FILE);
    images_to_dataset(&rec.result.images, method.name(), prov.clone())?.write(&images)?;
    manifest.add_output(&images, out)?;
    if let Some(l) = &rec.result.laplacian {
        let path = out.join(LAPLACIAN_FILE);
        laplacian_to_dataset(l, prov)?.write(&path)?;
        manifest.add_output(&path, out)?;
    }
    let objective = out.join(OBJECTIVE_FILE);
    let mut csv = String::from("iteration,objective\n");
    for (i, v) in rec.result.objective_trace.iter().enumerate() {
        csv.push_str(&format!("{},{v}\n", i + 1));
    }
    std::fs::write(&objective, csv).map_err(io_err(&objective))?;
    manifest.add_output(&objective, out)?;
    let cfg_path = write_config(cfg, out)?;
    manifest.add_output(&cfg_path, out)?;
    clock.lap("write");

    manifest.summarize("virtual_coils", rec.virtual_coils);
    manifest.summarize("compression_error", rec.compression_error);
    let truth_path = input.join(TRUTH_FILE);
    if truth_path.exists() {
        let truth = dataset_to_images(&DatasetFile::read(&truth_path)?)?;
        let roi = roi_for(cfg, truth.rows(), truth.cols());
        let r = report(&truth, &rec.result.images, &roi)?;
        manifest.add_input(&truth_path, out)?;
        manifest.summarize("ser_db", r.ser_db);
        manifest.summarize("ssim", r.ssim.mean);
        manifest.summarize("hfen_norm", r.hfen_norm.mean);
        clock.lap("metrics");
    }
    manifest.timings = clock.stages;
    for (stage, secs) in &rec.result.timings {
        manifest.timings.push(crate::manifest::Timing {
            stage: format!("{}/{stage}", method.name()),
            seconds: *secs,
        });
    }
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn parse_roi(s: &str) -> Result<RegionOfInterest> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("ROI must be `row,col,height,width`, got `{s}`")))?;
    match v.as_slice() {
        &[row0, col0, height, width] => Ok(RegionOfInterest {
            row0,
            col0,
            height,
            width,
        }),
        _ => Err(CliError::Usage(format!("ROI must be `row,col,height,width`, got `{s}`"))),
    }
}

/// CSV with one metric row per reconstruction.
pub fn cmd_metrics(truth: &Path, recons: &[PathBuf], labels: &[String], roi: Option<&str>) -> Result<String> {
    if !labels.is_empty() && labels.len() != recons.len() {
        return Err(CliError::Usage(format!(
            "{} labels for {} reconstructions",
            labels.len(),
            recons.len()
        )));
    }
    let truth = dataset_to_images(&DatasetFile::read(truth)?)?;
    let roi = match roi {
        Some(s) => parse_roi(s)?,
        None => RegionOfInterest::centered(truth.rows(), truth.cols()),
    };
    let mut csv = format!("{}\n", MetricReport::CSV_HEADER);
    for (i, path) in recons.iter().enumerate() {
        let rec = dataset_to_images(&DatasetFile::read(path)?)?;
        let label = labels.get(i).cloned().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        csv.push_str(&report(&truth, &rec, &roi)?.csv_row(&label));
        csv.push('\n');
    }
    Ok(csv)
}

pub fn cmd_export(cmd: ExportCommand) -> Result<()> {
    match cmd {
        ExportCommand::Frames { images, out } => {
            let ds = DatasetFile::read(&images)?;
            let x = dataset_to_images(&ds)?;
            let (window, paths) = write_frames(&x, &out)?;
            let cfg = RunConfig::default();
            let mut manifest = RunManifest::new("export-frames", &cfg);
            manifest.config_hash = ds.header.provenance.config_hash.clone();
            manifest.add_input(&images, &out)?;
            for p in &paths {
                manifest.add_output(p, &out)?;
            }
            manifest.param("window_low", window.low);
            manifest.param("window_high", window.high);
            manifest.write(&out.join(MANIFEST_FILE))
        }
        ExportCommand::Profile { images, row, col, out } => {
            let x = dataset_to_images(&DatasetFile::read(&images)?)?;
            let cut = match (row, col) {
                (Some(r), None) => Cut::Row(r),
                (None, Some(c)) => Cut::Col(c),
                _ => return Err(CliError::Usage("give exactly one of --row or --col".into())),
            };
            std::fs::write(&out, profile_csv(&x, cut)?).map_err(io_err(&out))
        }
        ExportCommand::Weights { laplacian, frames, out } => {
            let l = dataset_to_laplacian(&DatasetFile::read(&laplacian)?)?;
            std::fs::write(&out, weights_csv(&l, &frames)?).map_err(io_err(&out))
        }
    }
}
