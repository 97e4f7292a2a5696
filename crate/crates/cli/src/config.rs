//! Run configuration: a flat `[section] key = value` TOML file, with every
//! key overridable from the command line.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use storm_core::phantom::PhantomSpec;
use storm_core::solvers::{LowRankConfig, ReconConfig};
use storm_core::trajectory::TrajectorySpec;

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    pub grid_size: usize,
    pub n_frames: usize,
    pub cardiac_period_frames: f64,
    pub respiratory_period_frames: f64,
    pub respiratory_amplitude: f64,
    pub contraction_fraction: f64,
    pub heart_rate_jitter: f64,
    pub seed: u64,
}

impl Default for PhantomSection {
    fn default() -> Self {
        let s = PhantomSpec::default();
        Self {
            grid_size: s.grid_size,
            n_frames: s.n_frames,
            cardiac_period_frames: s.cardiac_period_frames,
            respiratory_period_frames: s.respiratory_period_frames,
            respiratory_amplitude: s.respiratory_amplitude,
            contraction_fraction: s.contraction_fraction,
            heart_rate_jitter: s.heart_rate_jitter,
            seed: s.seed,
        }
    }
}

impl PhantomSection {
    pub fn spec(&self) -> PhantomSpec {
        PhantomSpec {
            grid_size: self.grid_size,
            n_frames: self.n_frames,
            cardiac_period_frames: self.cardiac_period_frames,
            respiratory_period_frames: self.respiratory_period_frames,
            respiratory_amplitude: self.respiratory_amplitude,
            contraction_fraction: self.contraction_fraction,
            heart_rate_jitter: self.heart_rate_jitter,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    pub samples_per_readout: usize,
    pub density_inner: f64,
    pub density_outer: f64,
    pub inner_extent: f64,
    pub n_interleaves: usize,
    pub spirals_per_frame: usize,
    /// Navigator period in readouts; 0 disables navigators.
    pub navigator_every: usize,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        let t = TrajectorySpec::default();
        Self {
            samples_per_readout: t.samples_per_readout,
            density_inner: t.density_inner,
            density_outer: t.density_outer,
            inner_extent: t.inner_extent,
            n_interleaves: t.n_interleaves,
            spirals_per_frame: t.spirals_per_frame,
            navigator_every: 5,
        }
    }
}

impl TrajectorySection {
    pub fn spec(&self) -> TrajectorySpec {
        TrajectorySpec {
            samples_per_readout: self.samples_per_readout,
            density_inner: self.density_inner,
            density_outer: self.density_outer,
            inner_extent: self.inner_extent,
            n_interleaves: self.n_interleaves,
            spirals_per_frame: self.spirals_per_frame,
            navigator_every: (self.navigator_every > 0).then_some(self.navigator_every),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSection {
    pub n_coils: usize,
    /// Measurement SNR in dB relative to the rms of the noiseless samples.
    pub snr_db: f64,
    pub noise_seed: u64,
    /// Relative error allowed by coil compression before reconstruction.
    pub compression_error: f64,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        Self {
            n_coils: 8,
            snr_db: 30.0,
            noise_seed: 11,
            compression_error: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda: f64,
    pub sigma: f64,
    /// Initial IRLS smoothing; 0 picks it from the kernel norm.
    pub gamma0: f64,
    pub gamma_decay: f64,
    pub gamma_floor: f64,
    pub fixed_gamma: bool,
    pub outer_iters: usize,
    pub cg_iters_low: usize,
    pub cg_iters_high: usize,
    pub cg_tol: f64,
    pub central_fraction: f64,
    /// Step-one image size; 0 derives it from `central_fraction`.
    pub low_grid: usize,
    pub nav_sigma: f64,
}

impl Default for ReconSection {
    fn default() -> Self {
        let c = ReconConfig::default();
        Self {
            lambda1: c.lambda1,
            lambda2: c.lambda2,
            lambda: c.lambda,
            sigma: c.sigma,
            gamma0: c.gamma0.unwrap_or(0.0),
            gamma_decay: c.gamma_decay,
            gamma_floor: c.gamma_floor,
            fixed_gamma: c.fixed_gamma,
            outer_iters: c.outer_iters,
            cg_iters_low: c.cg_iters_low,
            cg_iters_high: c.cg_iters_high,
            cg_tol: c.cg_tol,
            central_fraction: c.central_fraction,
            low_grid: c.low_grid.unwrap_or(0),
            nav_sigma: c.nav_sigma,
        }
    }
}

impl ReconSection {
    pub fn config(&self) -> ReconConfig {
        ReconConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda: self.lambda,
            sigma: self.sigma,
            gamma0: (self.gamma0 > 0.0).then_some(self.gamma0),
            gamma_decay: self.gamma_decay,
            gamma_floor: self.gamma_floor,
            fixed_gamma: self.fixed_gamma,
            outer_iters: self.outer_iters,
            cg_iters_low: self.cg_iters_low,
            cg_iters_high: self.cg_iters_high,
            cg_tol: self.cg_tol,
            central_fraction: self.central_fraction,
            low_grid: (self.low_grid > 0).then_some(self.low_grid),
            nav_sigma: self.nav_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowRankSection {
    pub lambda: f64,
    pub p: f64,
    pub outer_iters: usize,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub eps_rel: f64,
    pub eps_decay: f64,
    pub eps_floor_rel: f64,
}

impl Default for LowRankSection {
    fn default() -> Self {
        let c = LowRankConfig::default();
        Self {
            lambda: c.lambda,
            p: c.p,
            outer_iters: c.outer_iters,
            cg_iters: c.cg_iters,
            cg_tol: c.cg_tol,
            eps_rel: c.eps_rel,
            eps_decay: c.eps_decay,
            eps_floor_rel: c.eps_floor_rel,
        }
    }
}

impl LowRankSection {
    pub fn config(&self) -> LowRankConfig {
        LowRankConfig {
            lambda: self.lambda,
            p: self.p,
            outer_iters: self.outer_iters,
            cg_iters: self.cg_iters,
            cg_tol: self.cg_tol,
            eps_rel: self.eps_rel,
            eps_decay: self.eps_decay,
            eps_floor_rel: self.eps_floor_rel,
        }
    }
}

/// Region of interest for metrics; a zero height or width selects the
/// centered square of half the grid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub roi_row: usize,
    pub roi_col: usize,
    pub roi_height: usize,
    pub roi_width: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub phantom: PhantomSection,
    pub trajectory: TrajectorySection,
    pub acquisition: AcquisitionSection,
    pub recon: ReconSection,
    pub lowrank: LowRankSection,
    pub metrics: MetricsSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` (or the defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(io_err(p))?,
            None => String::new(),
        };
        // parse once untouched so diagnostics point at file lines
        Self::parse(&text).map_err(|e| match (e, path) {
            (CliError::Config(msg), Some(p)) => CliError::Config(format!("{}: {msg}", p.display())),
            (e, _) => e,
        })?;
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        for (key, raw) in overrides {
            apply_override(&mut table, key, raw)?;
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

/// Resolves `key` as `section.key`, or as a bare key owned by exactly one
/// section.
fn resolve_key(key: &str) -> Result<(String, String)> {
    let defaults = toml::Table::try_from(RunConfig::default()).expect("config serializes");
    if let Some((section, field)) = key.split_once('.') {
        let known = defaults
            .get(section)
            .and_then(|s| s.as_table())
            .is_some_and(|t| t.contains_key(field));
        if !known {
            return Err(CliError::Config(format!("unknown config key `{key}`")));
        }
        return Ok((section.to_string(), field.to_string()));
    }
    let owners: Vec<&String> = defaults
        .iter()
        .filter(|(_, v)| v.as_table().is_some_and(|t| t.contains_key(key)))
        .map(|(s, _)| s)
        .collect();
    match owners.as_slice() {
        [one] => Ok(((*one).clone(), key.to_string())),
        [] => Err(CliError::Config(format!("unknown config key `{key}`"))),
        many => Err(CliError::Config(format!(
            "ambiguous key `{key}`; qualify it as one of {}",
            many.iter().map(|s| format!("{s}.{key}")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let (section, field) = resolve_key(key)?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let entry = table
        .entry(section.clone())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry.as_table_mut() {
        Some(t) => {
            t.insert(field, value);
            Ok(())
        }
        None => Err(CliError::Config(format!("`{section}` must be a table"))),
    }
}

/// Whether `--name` names a config key rather than a command flag.
pub fn is_config_key(name: &str) -> bool {
    let name = name.split_once('=').map_or(name, |(k, _)| k);
    if name.contains('.') {
        return true;
    }
    let defaults = toml::Table::try_from(RunConfig::default()).expect("config serializes");
    defaults.values().any(|v| v.as_table().is_some_and(|t| t.contains_key(name)))
}

/// Splits `--key value` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            return Err(CliError::Usage(format!("expected `--key value`, found `{flag}`")));
        };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            continue;
        }
        let value = it
            .next()
            .ok_or_else(|| CliError::Usage(format!("missing value for `{flag}`")))?;
        out.push((key.to_string(), value.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        let c = RunConfig::default();
        assert_eq!(c.recon.config(), ReconConfig::default());
        assert_eq!(c.lowrank.config(), LowRankConfig::default());
        assert_eq!(c.phantom.spec(), PhantomSpec::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.recon.lambda = 0.3;
        c.trajectory.navigator_every = 0;
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
        assert_ne!(c.digest(), RunConfig::default().digest());
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = RunConfig::parse("[recon]\nlambda = 1.0\nlamda = 2.0\n").unwrap_err().to_string();
        assert!(err.contains("lamda"), "{err}");
        assert!(err.contains("line 3"), "{err}");
        assert!(RunConfig::parse("[reconn]\n").is_err());
    }

    #[test]
    fn overrides_accept_qualified_and_bare_keys() {
        let c = RunConfig::load(None, &[ov("phantom.grid_size", "32"), ov("snr_db", "20"), ov("fixed_gamma", "true")]).unwrap();
        assert_eq!(c.phantom.grid_size, 32);
        assert_eq!(c.acquisition.snr_db, 20.0);
        assert!(c.recon.fixed_gamma);
    }

    #[test]
    fn ambiguous_and_unknown_overrides_fail() {
        let err = RunConfig::load(None, &[ov("lambda", "1")]).unwrap_err().to_string();
        assert!(err.contains("recon.lambda") && err.contains("lowrank.lambda"), "{err}");
        assert!(RunConfig::load(None, &[ov("recon.nope", "1")]).is_err());
        assert!(RunConfig::load(None, &[ov("recon.lambda", "\"high\"")]).is_err());
    }

    #[test]
    fn override_pairs_parse() {
        let args: Vec<String> = ["--recon.lambda", "0.5", "--seed=3"].iter().map(|s| s.to_string()).collect();
        assert_eq!(parse_overrides(&args).unwrap(), vec![ov("recon.lambda", "0.5"), ov("seed", "3")]);
        assert!(parse_overrides(&["--x".to_string()]).is_err());
        assert!(parse_overrides(&["x".to_string()]).is_err());
    }
}
