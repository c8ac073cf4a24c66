//! The `rsf` command-line tool.
//!
//! A run is described by a TOML file (all sections optional) plus flags;
//! flags take precedence. Each command validates the complete configuration
//! before computing anything and writes its artifacts and a `manifest.json`
//! into the output directory.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_io::{
    self, artifact_kind, read_chain, read_manifest, read_posterior_grid, read_seismogram, read_time_series,
    write_chain, write_json, write_posterior_grid, write_time_series, write_trajectory, AccelUnit, DataError,
    FormatSpec, Manifest, SeismogramFormat, TimeSeries,
};
use crate::inversion::{
    self, grid_posterior, least_squares_fit, log_likelihood_from_sse, metropolis, sse, FitSettings, ForwardModel,
    GridSettings, GridSpacing, InversionError, McmcSettings, NoiseMode, NoiseModel, ObservationSet, PosteriorSummary,
    PriorConfig,
};
use crate::ode_solver::{integrate, SolverConfig, SolverError};
use crate::rsf_model::{Forcing, PhysicalConstants, RsfParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_INVERSION: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("inversion failure: {0}")]
    Inversion(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Solver(_) => EXIT_SOLVER,
            CliError::Inversion(_) => EXIT_INVERSION,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<InversionError> for CliError {
    fn from(e: InversionError) -> Self {
        match e {
            InversionError::Forward { .. } => CliError::Solver(e.to_string()),
            InversionError::InvalidPrior { .. } | InversionError::InvalidSettings(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Inversion(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Inversion(inner) => inner.into(),
            DataError::Parse { .. } | DataError::UnknownUnit(_) => CliError::Validation(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn non_negative(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Noise level: a number (μm/s²) or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSetting {
    Value(f64),
    Keyword(AutoKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoKeyword {
    #[serde(rename = "auto")]
    Auto,
}

impl Default for SigmaSetting {
    fn default() -> Self {
        SigmaSetting::Keyword(AutoKeyword::Auto)
    }
}

impl std::str::FromStr for SigmaSetting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(SigmaSetting::Keyword(AutoKeyword::Auto));
        }
        s.parse()
            .map(SigmaSetting::Value)
            .map_err(|_| format!("expected a number or 'auto', got '{s}'"))
    }
}

impl SigmaSetting {
    fn noise_model(self) -> NoiseModel {
        match self {
            SigmaSetting::Value(s) => NoiseModel::fixed(s),
            SigmaSetting::Keyword(_) => NoiseModel {
                sigma_noise: f64::NAN,
                mode: NoiseMode::Estimated,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Critical slip distances to simulate (μm); empty means `model.d_c`.
    pub d_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub d_c_true: f64,
    /// Absolute noise std (μm/s²); takes precedence over `sigma_rel`.
    pub sigma_noise: Option<f64>,
    /// Noise std as a fraction of the clean record's max |a|.
    pub sigma_rel: Option<f64>,
    /// Number of observation times `t_start + i·span/n`, i = 1..n; the
    /// solver output grid when absent.
    pub n_obs: Option<usize>,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            d_c_true: 20.0,
            sigma_noise: None,
            sigma_rel: Some(0.01),
            n_obs: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub format: SeismogramFormat,
    pub unit: Option<AccelUnit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma_noise: SigmaSetting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSection {
    pub n_samples: usize,
    /// Defaults to 20% of `n_samples`.
    pub burn_in: Option<usize>,
    /// Defaults to 5% of the prior width (μm).
    pub proposal_std: Option<f64>,
    pub thin: usize,
    pub seed: u64,
    /// Starting d_c (μm); the least-squares estimate when absent.
    pub initial: Option<f64>,
}

impl Default for McmcSection {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            burn_in: None,
            proposal_std: None,
            thin: 1,
            seed: 0,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: RsfParams,
    /// When present, `k_prime` and `k_dprime` are derived from these.
    pub physical: Option<PhysicalConstants>,
    pub forcing: Forcing,
    pub solver: SolverConfig,
    pub simulate: SimulateSection,
    pub synth: SynthSection,
    pub data: DataSection,
    pub prior: PriorConfig,
    pub grid: GridSettings,
    pub noise: NoiseSection,
    pub fit: FitSettings,
    pub mcmc: McmcSection,
    /// Credible-interval level.
    pub level: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: RsfParams::default(),
            physical: None,
            forcing: Forcing::default(),
            solver: SolverConfig::default(),
            simulate: SimulateSection::default(),
            synth: SynthSection::default(),
            data: DataSection::default(),
            prior: PriorConfig {
                lower: 5.0,
                upper: 50.0,
            },
            grid: GridSettings::default(),
            noise: NoiseSection::default(),
            fit: FitSettings::default(),
            mcmc: McmcSection::default(),
            level: 0.95,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Model parameters with stiffness and damping derived from the physical
    /// constants when those are given.
    pub fn params(&self) -> RsfParams {
        match self.physical {
            Some(c) => c.apply_to(self.model),
            None => self.model,
        }
    }

    pub fn forward_model(&self) -> ForwardModel {
        ForwardModel {
            params: self.params(),
            forcing: self.forcing,
            solver: self.solver,
            initial: Default::default(),
        }
    }

    /// Checks shared by every command.
    pub fn validate(&self) -> Result<(), CliError> {
        let v = |r: Result<(), String>| r.map_err(invalid);
        if let Some(c) = &self.physical {
            v(c.validate().map_err(|e| e.to_string()))?;
        }
        v(self.params().validate().map_err(|e| e.to_string()))?;
        v(self.forcing.validate().map_err(|e| e.to_string()))?;
        v(self.solver.validate().map_err(|e| e.to_string()))?;
        v(self.prior.validate().map_err(|e| e.to_string()))?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(invalid(format!("level must be in (0, 1), got {}", self.level)));
        }
        if self.grid.n_grid < inversion::MIN_GRID_POINTS {
            return Err(invalid(format!(
                "grid.n_grid must be >= {}",
                inversion::MIN_GRID_POINTS
            )));
        }
        if self.fit.n_scan < 3 || !positive(self.fit.rel_width) {
            return Err(invalid("fit.n_scan must be >= 3 and fit.rel_width > 0"));
        }
        for &d in &self.simulate.d_c {
            if !positive(d) {
                return Err(invalid(format!("simulate.d_c values must be > 0, got {d}")));
            }
        }
        if let SigmaSetting::Value(s) = self.noise.sigma_noise {
            if !positive(s) {
                return Err(invalid(format!("noise.sigma_noise must be > 0 or 'auto', got {s}")));
            }
        }
        Ok(())
    }

    fn validate_synth(&self) -> Result<(), CliError> {
        let s = &self.synth;
        if !positive(s.d_c_true) {
            return Err(invalid(format!("synth.d_c_true must be > 0, got {}", s.d_c_true)));
        }
        match (s.sigma_noise, s.sigma_rel) {
            (Some(x), _) if !non_negative(x) => Err(invalid(format!("synth.sigma_noise must be >= 0, got {x}"))),
            (None, Some(r)) if !non_negative(r) => Err(invalid(format!("synth.sigma_rel must be >= 0, got {r}"))),
            (None, None) => Err(invalid("set synth.sigma_noise or synth.sigma_rel")),
            _ => match s.n_obs {
                Some(n) if n < 2 => Err(invalid("synth.n_obs must be >= 2")),
                _ => Ok(()),
            },
        }
    }

    fn validate_mcmc(&self) -> Result<(), CliError> {
        let m = &self.mcmc;
        let burn = m.burn_in.unwrap_or(m.n_samples / 5);
        if m.n_samples <= burn {
            return Err(invalid(format!(
                "mcmc.n_samples ({}) must exceed burn_in ({burn})",
                m.n_samples
            )));
        }
        if m.thin == 0 {
            return Err(invalid("mcmc.thin must be >= 1"));
        }
        if let Some(s) = m.proposal_std {
            if !positive(s) {
                return Err(invalid(format!("mcmc.proposal_std must be > 0, got {s}")));
            }
        }
        if let Some(x) = m.initial {
            if !self.prior.contains(x) {
                return Err(invalid(format!("mcmc.initial {x} outside the prior")));
            }
        }
        Ok(())
    }
}

/// Keys accepted in the TOML config, with units.
pub const CONFIG_KEYS: &str = "\
Config file keys (TOML; every section optional, flags override):
  [model]    mu0 [-], v0 [um/s], a_coef [-], b_coef [-], d_c [um],
             k_prime [1/um], k_dprime [s/um]
  [physical] elastic_modulus [Pa], fault_length [m], normal_stress [Pa],
             damping_coef [Pa*s/m]  (derive k_prime = E/(l*sigma), k_dprime = eta/sigma)
  [forcing]  shape = \"decaying_sinusoid\": baseline [um/s], amplitude [-],
                 decay_time [s], oscillation_time [s]
             shape = \"step\": v_before [um/s], v_after [um/s], step_time [s]
  [solver]   t_start [s], t_end [s], output_dt [s], abs_tol, rel_tol,
             max_step [s], method = \"adaptive\"|\"fixed_rk4\",
             rhs = { damping = \"two_pass\"|\"implicit\", acceleration = \"published\"|\"exact\" }
  [simulate] d_c = [um, ...]
  [synth]    d_c_true [um], sigma_noise [um/s^2], sigma_rel [fraction of max|a|],
             n_obs [-], seed
  [data]     path, format = \"csv\"|\"fixed_rate\", unit = \"g\"|\"m/s^2\"|\"um/s^2\"
  [prior]    lower [um], upper [um]
  [grid]     n_grid [-], spacing = \"log\"|\"linear\"
  [noise]    sigma_noise [um/s^2] | \"auto\"
  [fit]      n_scan [-], spacing, rel_width [-]
  [mcmc]     n_samples [-], burn_in [-], proposal_std [um], thin [-], seed, initial [um]
  level      credible-interval level (0-1)
Exit codes: 0 ok, 1 validation, 2 solver failure, 3 inversion failure, 4 i/o.";

#[derive(Debug, Parser)]
#[command(
    name = "rsf",
    version,
    about = "Rate-and-state friction slider simulation and d_c inversion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct CommonArgs {
    /// TOML run configuration
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Seed for synthetic noise and MCMC proposals
    #[arg(long)]
    pub seed: Option<u64>,
    /// Prior support and grid for d_c in um: lo:hi:n[:log|lin]
    #[arg(long, value_name = "LO:HI:N[:log|lin]")]
    pub dc_grid: Option<String>,
    /// Noise std in um/s^2, or 'auto' to estimate it at the least-squares fit
    #[arg(long, value_name = "X|auto")]
    pub sigma_noise: Option<SigmaSetting>,
    /// Suppress progress messages
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args, Default)]
pub struct DataArgs {
    /// Observation file: an `rsf synth` output or a raw seismogram
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Raw seismogram format: csv | fixed-rate
    #[arg(long)]
    pub format: Option<SeismogramFormat>,
    /// Unit of a raw seismogram: g | m/s^2 | um/s^2
    #[arg(long)]
    pub unit: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the slider for one or more d_c values and write trajectories
    #[command(after_help = CONFIG_KEYS)]
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Critical slip distances in um (comma separated)
        #[arg(long, value_delimiter = ',')]
        dc: Vec<f64>,
    },
    /// Generate a noisy synthetic acceleration record
    #[command(after_help = CONFIG_KEYS)]
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// True critical slip distance in um
        #[arg(long)]
        dc_true: Option<f64>,
        /// Noise std as a fraction of max |a|
        #[arg(long)]
        sigma_rel: Option<f64>,
        /// Number of observation times
        #[arg(long)]
        n_obs: Option<usize>,
    },
    /// Least-squares estimate of d_c
    #[command(after_help = CONFIG_KEYS)]
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Grid posterior of d_c under a uniform prior
    #[command(after_help = CONFIG_KEYS)]
    Posterior {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Metropolis sampling of the d_c posterior
    #[command(after_help = CONFIG_KEYS)]
    Mcmc {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Total iterations including burn-in
        #[arg(long)]
        samples: Option<usize>,
        /// Burn-in iterations
        #[arg(long)]
        burn_in: Option<usize>,
        /// Random-walk proposal std in um
        #[arg(long)]
        proposal_std: Option<f64>,
    },
    /// Merge manifests and summaries; emit overlay-ready CSVs
    #[command(after_help = CONFIG_KEYS)]
    Summarize {
        /// Artifacts: posterior/chain CSVs, summary or manifest JSON
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Output directory
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
}

fn parse_dc_grid(spec: &str) -> Result<(PriorConfig, GridSettings), CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(invalid(format!("--dc-grid expects lo:hi:n[:log|lin], got '{spec}'")));
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| invalid(format!("--dc-grid: bad number '{s}'")))
    };
    let prior = PriorConfig {
        lower: num(parts[0])?,
        upper: num(parts[1])?,
    };
    let n_grid = parts[2]
        .parse()
        .map_err(|_| invalid(format!("--dc-grid: bad count '{}'", parts[2])))?;
    let spacing = match parts.get(3).copied() {
        None | Some("log") => GridSpacing::Log,
        Some("lin") | Some("linear") => GridSpacing::Linear,
        Some(other) => return Err(invalid(format!("--dc-grid: unknown spacing '{other}'"))),
    };
    Ok((prior, GridSettings { n_grid, spacing }))
}

fn base_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.synth.seed = seed;
        cfg.mcmc.seed = seed;
    }
    if let Some(g) = &common.dc_grid {
        let (prior, grid) = parse_dc_grid(g)?;
        cfg.prior = prior;
        cfg.grid = grid;
    }
    Ok(cfg)
}

fn apply_data_args(cfg: &mut RunConfig, data: &DataArgs, common_sigma: Option<SigmaSetting>) -> Result<(), CliError> {
    if let Some(p) = &data.data {
        cfg.data.path = Some(p.clone());
    }
    if let Some(s) = common_sigma {
        cfg.noise.sigma_noise = s;
    }
    if let Some(f) = data.format {
        cfg.data.format = f;
    }
    if let Some(u) = &data.unit {
        cfg.data.unit = Some(u.parse().map_err(|e: DataError| invalid(e.to_string()))?);
    }
    Ok(())
}

struct Ctx {
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn prepare(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::Io(format!("{}: {e}", self.out.display())))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn finish(&self, mut manifest: Manifest, files: &[PathBuf]) -> Result<(), CliError> {
        for f in files {
            manifest.add_artifact(&self.out, f)?;
        }
        write_json(&self.path("manifest.json"), &manifest)?;
        Ok(())
    }
}

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

/// Observations for the inversion commands, converted to μm/s².
fn load_observations(cfg: &RunConfig) -> Result<(TimeSeries, ObservationSet), CliError> {
    let path = cfg
        .data
        .path
        .as_ref()
        .ok_or_else(|| invalid("no observation file (use --data or [data] path)"))?;
    if !path.exists() {
        return Err(CliError::Io(format!("{}: no such file", path.display())));
    }
    let ts = match artifact_kind(path) {
        Ok(kind) if kind == "time_series" => read_time_series(path)?,
        _ => read_seismogram(
            path,
            &FormatSpec {
                format: cfg.data.format,
                unit: cfg.data.unit,
            },
        )?,
    };
    let obs = ts.to_observations()?;
    let (t0, t1) = (obs.times()[0], obs.times()[obs.len() - 1]);
    if t0 < cfg.solver.t_start || t1 > cfg.solver.t_end {
        return Err(invalid(format!(
            "observations span [{t0}, {t1}] s but the solver covers [{}, {}] s",
            cfg.solver.t_start, cfg.solver.t_end
        )));
    }
    Ok((ts, obs))
}

/// Observation times for synthetic records.
pub fn observation_times(solver: &SolverConfig, n_obs: Option<usize>) -> Vec<f64> {
    match n_obs {
        Some(n) => {
            let span = solver.t_end - solver.t_start;
            (1..=n).map(|i| solver.t_start + span * i as f64 / n as f64).collect()
        }
        None => solver.output_times(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub d_c_hat: f64,
    pub sse: f64,
    pub bracket: (f64, f64),
    pub boundary_flag: bool,
    pub degenerate: bool,
    pub multimodal: bool,
    pub evaluations: usize,
    /// `sqrt(sse/(n−1))` at the estimate, when defined.
    pub sigma_hat: Option<f64>,
    pub n_obs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryReport {
    pub command: String,
    pub summary: PosteriorSummary,
    pub sigma_noise: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_evidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_warning: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub config: serde_json::Value,
}

fn cmd_simulate(cfg: &RunConfig, ctx: &Ctx) -> Result<(), CliError> {
    cfg.validate()?;
    let params = cfg.params();
    let dcs = if cfg.simulate.d_c.is_empty() {
        vec![params.d_c]
    } else {
        cfg.simulate.d_c.clone()
    };
    // solve everything before writing anything
    let mut runs = Vec::new();
    for &d_c in &dcs {
        let p = params.with_d_c(d_c);
        let traj = integrate(&p, &cfg.forcing, p.steady_state(), &cfg.solver).map_err(|e: SolverError| {
            CliError::Solver(format!(
                "d_c = {d_c} um failed at t = {} s: {e}",
                e.time().map_or("?".into(), |t| t.to_string())
            ))
        })?;
        ctx.say(format!("d_c = {d_c} um: {} samples, {:?}", traj.len(), traj.stats));
        runs.push((d_c, p, traj));
    }
    ctx.prepare()?;
    let mut files = Vec::new();
    for (d_c, p, traj) in &runs {
        let path = ctx.path(&format!("trajectory_dc{}.csv", data_io::fmt_f64(*d_c)));
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("params".into(), serde_json::to_string(p).unwrap_or_default());
        meta.insert(
            "forcing".into(),
            serde_json::to_string(&cfg.forcing).unwrap_or_default(),
        );
        meta.insert("solver".into(), serde_json::to_string(&cfg.solver).unwrap_or_default());
        write_trajectory(&path, traj, &meta)?;
        files.push(path);
    }
    ctx.finish(Manifest::new("simulate", config_json(cfg), vec![]), &files)
}

fn cmd_synth(cfg: &RunConfig, ctx: &Ctx) -> Result<(), CliError> {
    cfg.validate()?;
    cfg.validate_synth()?;
    let model = cfg.forward_model();
    let times = observation_times(&cfg.solver, cfg.synth.n_obs);
    let clean = model.response(cfg.synth.d_c_true, &times)?;
    let sigma = match cfg.synth.sigma_noise {
        Some(s) => s,
        None => cfg.synth.sigma_rel.unwrap_or(0.0) * clean.iter().fold(0.0f64, |m, a| m.max(a.abs())),
    };
    let ts = data_io::add_noise(&clean, &times, sigma, cfg.synth.seed, cfg.synth.d_c_true);
    ctx.say(format!("{} samples, sigma_noise = {sigma} um/s^2", ts.len()));
    ctx.prepare()?;
    let path = ctx.path("observations.csv");
    write_time_series(&path, &ts)?;
    ctx.finish(Manifest::new("synth", config_json(cfg), vec![cfg.synth.seed]), &[path])
}

fn cmd_fit(cfg: &RunConfig, ctx: &Ctx) -> Result<(), CliError> {
    cfg.validate()?;
    let (_, obs) = load_observations(cfg)?;
    let model = cfg.forward_model();
    let fit = least_squares_fit(&obs, &cfg.prior, &model, &cfg.fit)?;
    let fitted = model.response(fit.d_c_hat, obs.times())?;
    ctx.say(format!("d_c_hat = {} um (sse = {})", fit.d_c_hat, fit.sse));
    let report = FitReport {
        d_c_hat: fit.d_c_hat,
        sse: fit.sse,
        bracket: fit.bracket,
        boundary_flag: fit.boundary_flag,
        degenerate: fit.degenerate,
        multimodal: fit.multimodal,
        evaluations: fit.evaluations,
        sigma_hat: inversion::estimate_noise_std(fit.sse, obs.len()).ok(),
        n_obs: obs.len(),
    };
    ctx.prepare()?;
    let fit_path = ctx.path("fit.json");
    write_json(&fit_path, &report)?;
    let resp_path = ctx.path("fit_response.csv");
    write_overlay(
        &resp_path,
        &["t", "observed", "fitted"],
        obs.times()
            .iter()
            .zip(obs.accels())
            .zip(&fitted)
            .map(|((t, a), f)| vec![*t, *a, *f]),
    )?;
    ctx.finish(Manifest::new("fit", config_json(cfg), vec![]), &[fit_path, resp_path])
}

fn cmd_posterior(cfg: &RunConfig, ctx: &Ctx) -> Result<(), CliError> {
    cfg.validate()?;
    let (_, obs) = load_observations(cfg)?;
    let model = cfg.forward_model();
    let post = grid_posterior(&obs, cfg.prior, &cfg.grid, &cfg.noise.sigma_noise.noise_model(), &model)?;
    let summary = post.summary(cfg.level);
    ctx.say(format!(
        "mean = {:.4} um, mode = {:.4} um, std = {:.4} um, {}% CI = [{:.4}, {:.4}]",
        summary.mean,
        summary.mode,
        summary.std,
        cfg.level * 100.0,
        summary.credible_interval.0,
        summary.credible_interval.1
    ));
    ctx.prepare()?;
    let post_path = ctx.path("posterior.csv");
    write_posterior_grid(&post_path, &post)?;
    let sum_path = ctx.path("summary.json");
    write_json(
        &sum_path,
        &SummaryReport {
            command: "posterior".into(),
            summary,
            sigma_noise: post.sigma_noise,
            log_evidence: Some(post.log_evidence),
            acceptance_rate: None,
            acceptance_warning: None,
            seed: None,
            config: config_json(cfg),
        },
    )?;
    ctx.finish(
        Manifest::new("posterior", config_json(cfg), vec![]),
        &[post_path, sum_path],
    )
}

fn cmd_mcmc(cfg: &RunConfig, ctx: &Ctx) -> Result<(), CliError> {
    cfg.validate()?;
    cfg.validate_mcmc()?;
    let (_, obs) = load_observations(cfg)?;
    let model = cfg.forward_model();
    let noise = cfg.noise.sigma_noise.noise_model();
    let initial = match cfg.mcmc.initial {
        Some(x) => x,
        None => least_squares_fit(&obs, &cfg.prior, &model, &cfg.fit)?.d_c_hat,
    };
    let sigma = inversion::resolve_noise(&obs, &noise, initial, &model)?;
    let mut settings = McmcSettings::defaults_for(&cfg.prior, cfg.mcmc.n_samples, cfg.mcmc.seed);
    settings.burn_in = cfg.mcmc.burn_in.unwrap_or(settings.burn_in);
    settings.proposal_std = cfg.mcmc.proposal_std.unwrap_or(settings.proposal_std);
    settings.thin = cfg.mcmc.thin;
    settings.initial = Some(initial);
    let n = obs.len();
    let chain = metropolis(
        |d_c| Ok(log_likelihood_from_sse(sse(&obs, d_c, &model)?, n, sigma)),
        &cfg.prior,
        &settings,
    )?;
    let summary = chain.summary(cfg.level)?;
    ctx.say(format!(
        "acceptance = {:.3}, mean = {:.4} um, std = {:.4} um",
        chain.acceptance_rate, summary.mean, summary.std
    ));
    ctx.prepare()?;
    let chain_path = ctx.path("chain.csv");
    write_chain(&chain_path, &chain)?;
    let sum_path = ctx.path("summary.json");
    write_json(
        &sum_path,
        &SummaryReport {
            command: "mcmc".into(),
            summary,
            sigma_noise: sigma,
            log_evidence: None,
            acceptance_rate: Some(chain.acceptance_rate),
            acceptance_warning: Some(chain.acceptance_warning),
            seed: Some(chain.seed),
            config: config_json(cfg),
        },
    )?;
    ctx.finish(
        Manifest::new("mcmc", config_json(cfg), vec![cfg.mcmc.seed]),
        &[chain_path, sum_path],
    )
}

fn write_overlay(path: &Path, columns: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    w.write_record(columns).map_err(io)?;
    for r in rows {
        w.write_record(r.iter().map(|x| data_io::fmt_f64(*x))).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// Linear interpolation of `(xs, ys)` at `x`, zero outside the support.
fn interp_or_zero(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x < xs[0] || x > xs[xs.len() - 1] {
        return 0.0;
    }
    let j = xs.partition_point(|&g| g < x);
    if xs[j] == x {
        return ys[j];
    }
    let i = j - 1;
    ys[i] + (ys[j] - ys[i]) * (x - xs[i]) / (xs[j] - xs[i])
}

fn cmd_summarize(paths: &[PathBuf], ctx: &Ctx) -> Result<(), CliError> {
    let mut inputs = Vec::new();
    let mut posteriors: Vec<(String, inversion::PosteriorGrid)> = Vec::new();
    for p in paths {
        if !p.exists() {
            return Err(CliError::Io(format!("{}: no such file", p.display())));
        }
        let name = p.to_string_lossy().into_owned();
        let entry = if p.extension().is_some_and(|e| e == "json") {
            match read_manifest(p) {
                Ok(m) => serde_json::json!({ "path": name, "kind": "manifest", "content": m }),
                Err(_) => {
                    let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(e.to_string()))?;
                    let v: serde_json::Value =
                        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
                    serde_json::json!({ "path": name, "kind": "json", "content": v })
                }
            }
        } else {
            match artifact_kind(p)?.as_str() {
                "posterior_grid" => {
                    let post = read_posterior_grid(p)?;
                    let s = post.summary(0.95);
                    posteriors.push((name.clone(), post));
                    serde_json::json!({ "path": name, "kind": "posterior_grid", "summary": s })
                }
                "mcmc_chain" => {
                    let chain = read_chain(p)?;
                    let s = chain.summary(0.95)?;
                    serde_json::json!({ "path": name, "kind": "mcmc_chain", "summary": s,
                        "acceptance_rate": chain.acceptance_rate, "seed": chain.seed })
                }
                other => serde_json::json!({ "path": name, "kind": other }),
            }
        };
        inputs.push(entry);
    }
    ctx.prepare()?;
    let mut files = Vec::new();
    if !posteriors.is_empty() {
        let mut union: Vec<f64> = posteriors.iter().flat_map(|(_, p)| p.grid.iter().copied()).collect();
        union.sort_by(f64::total_cmp);
        union.dedup();
        let mut cols = vec!["d_c".to_string()];
        for (i, _) in posteriors.iter().enumerate() {
            cols.push(format!("density_{i}"));
        }
        let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
        let path = ctx.path("posterior_overlay.csv");
        write_overlay(
            &path,
            &col_refs,
            union.iter().map(|&x| {
                std::iter::once(x)
                    .chain(
                        posteriors
                            .iter()
                            .map(|(_, p)| interp_or_zero(&p.grid, &p.normalized_density, x)),
                    )
                    .collect()
            }),
        )?;
        files.push(path);
    }
    let report_path = ctx.path("report.json");
    let columns: Vec<String> = posteriors
        .iter()
        .enumerate()
        .map(|(i, (n, _))| format!("density_{i} = {n}"))
        .collect();
    write_json(
        &report_path,
        &serde_json::json!({ "inputs": inputs, "overlay_columns": columns }),
    )?;
    files.push(report_path);
    ctx.say(format!("summarized {} inputs", paths.len()));
    ctx.finish(
        Manifest::new("summarize", serde_json::json!({ "paths": paths }), vec![]),
        &files,
    )
}

/// Run a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common, dc } => {
            let mut cfg = base_config(&common)?;
            if !dc.is_empty() {
                cfg.simulate.d_c = dc;
            }
            cmd_simulate(&cfg, &ctx(&common))
        }
        Command::Synth {
            common,
            dc_true,
            sigma_rel,
            n_obs,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(d) = dc_true {
                cfg.synth.d_c_true = d;
            }
            match common.sigma_noise {
                Some(SigmaSetting::Value(s)) => cfg.synth.sigma_noise = Some(s),
                Some(SigmaSetting::Keyword(_)) => {
                    return Err(invalid("synth needs a numeric --sigma-noise (or --sigma-rel)"))
                }
                None => {}
            }
            if let Some(r) = sigma_rel {
                cfg.synth.sigma_rel = Some(r);
                cfg.synth.sigma_noise = None;
            }
            if n_obs.is_some() {
                cfg.synth.n_obs = n_obs;
            }
            cmd_synth(&cfg, &ctx(&common))
        }
        Command::Fit { common, data } => {
            let mut cfg = base_config(&common)?;
            apply_data_args(&mut cfg, &data, common.sigma_noise)?;
            cmd_fit(&cfg, &ctx(&common))
        }
        Command::Posterior { common, data } => {
            let mut cfg = base_config(&common)?;
            apply_data_args(&mut cfg, &data, common.sigma_noise)?;
            cmd_posterior(&cfg, &ctx(&common))
        }
        Command::Mcmc {
            common,
            data,
            samples,
            burn_in,
            proposal_std,
        } => {
            let mut cfg = base_config(&common)?;
            apply_data_args(&mut cfg, &data, common.sigma_noise)?;
            if let Some(n) = samples {
                cfg.mcmc.n_samples = n;
            }
            if burn_in.is_some() {
                cfg.mcmc.burn_in = burn_in;
            }
            if proposal_std.is_some() {
                cfg.mcmc.proposal_std = proposal_std;
            }
            cmd_mcmc(&cfg, &ctx(&common))
        }
        Command::Summarize { paths, out, quiet } => cmd_summarize(&paths, &Ctx { out, quiet }),
    }
}

fn ctx(common: &CommonArgs) -> Ctx {
    Ctx {
        out: common.out.clone(),
        quiet: common.quiet,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_grid_parsing() {
        let (p, g) = parse_dc_grid("5:50:200").unwrap();
        assert_eq!(
            (p.lower, p.upper, g.n_grid, g.spacing),
            (5.0, 50.0, 200, GridSpacing::Log)
        );
        let (_, g) = parse_dc_grid("1:2:10:lin").unwrap();
        assert_eq!(g.spacing, GridSpacing::Linear);
        assert!(parse_dc_grid("1:2").is_err());
        assert!(parse_dc_grid("1:2:x").is_err());
        assert!(parse_dc_grid("1:2:10:cubic").is_err());
    }

    #[test]
    fn sigma_setting_parsing() {
        assert_eq!("auto".parse::<SigmaSetting>().unwrap(), SigmaSetting::default());
        assert_eq!("0.5".parse::<SigmaSetting>().unwrap(), SigmaSetting::Value(0.5));
        assert!("loud".parse::<SigmaSetting>().is_err());
    }

    #[test]
    fn toml_config_round_trip() {
        let text = r#"
            level = 0.9
            [model]
            d_c = 30.0
            [forcing]
            shape = "step"
            v_before = 1.0
            v_after = 10.0
            step_time = 5.0
            [prior]
            lower = 2.0
            upper = 80.0
            [noise]
            sigma_noise = "auto"
            [solver]
            t_end = 10.0
            rhs = { acceleration = "exact" }
        "#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.model.d_c, 30.0);
        assert_eq!(cfg.model.mu0, 0.6);
        assert_eq!(cfg.prior.upper, 80.0);
        assert_eq!(cfg.solver.t_end, 10.0);
        assert_eq!(cfg.solver.max_step, 1e-3);
        assert!(matches!(cfg.forcing, Forcing::Step { .. }));
        let back = RunConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(RunConfig::from_toml("[model]\nbogus = 1\n").is_err());
        let with_sigma = RunConfig::from_toml("[noise]\nsigma_noise = 0.25\n").unwrap();
        assert_eq!(with_sigma.noise.sigma_noise, SigmaSetting::Value(0.25));
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.simulate.d_c = vec![-1.0];
        assert_eq!(cfg.validate().unwrap_err().exit_code(), EXIT_VALIDATION);
        let mut cfg = RunConfig::default();
        cfg.prior.lower = 60.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.mcmc.n_samples = 10;
        cfg.mcmc.burn_in = Some(10);
        assert!(cfg.validate_mcmc().is_err());
    }

    #[test]
    fn physical_constants_override_stiffness() {
        let cfg = RunConfig {
            physical: Some(PhysicalConstants::default()),
            ..Default::default()
        };
        let p = cfg.params();
        assert!((p.k_prime - 5e10 / (3e-2 * 2e8) * 1e-6).abs() < 1e-15);
    }

    #[test]
    fn observation_time_grids() {
        let s = SolverConfig::default();
        let t = observation_times(&s, Some(5000));
        assert_eq!(t.len(), 5000);
        assert_eq!(t[4999], 50.0);
        assert!((t[0] - 0.01).abs() < 1e-15);
        assert_eq!(observation_times(&s, None).len(), 5001);
    }

    #[test]
    fn interpolation_is_zero_outside() {
        let xs = [1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0];
        assert_eq!(interp_or_zero(&xs, &ys, 0.5), 0.0);
        assert_eq!(interp_or_zero(&xs, &ys, 2.5), 4.0);
        assert_eq!(interp_or_zero(&xs, &ys, 3.0), 5.0);
    }
}
