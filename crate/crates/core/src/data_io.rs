//! Seismogram ingestion, unit conversion, synthetic records and artifact files.
//!
//! Every artifact is a CSV file preceded by `# key = value` metadata lines,
//! starting with `schema_version` and `kind`. Numbers are written in their
//! shortest round-trip decimal form.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::inversion::{
    ForwardModel, InversionError, McmcChain, ObservationSet, PosteriorGrid, PriorConfig, RNG_ALGORITHM,
};
use crate::ode_solver::{SolverStats, Trajectory};
use crate::rsf_model::SliderState;

pub const SCHEMA_VERSION: u32 = 1;

/// Standard gravity used to de-normalize records given in g (m/s²).
pub const GRAVITY: f64 = 9.8;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema version {found} is not supported (expected {expected})")]
    Version { found: String, expected: u32 },
    #[error("unknown unit '{0}'")]
    UnknownUnit(String),
    #[error("malformed artifact: {0}")]
    Schema(String),
    #[error(transparent)]
    Inversion(#[from] InversionError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse { line, msg: msg.into() }
}

/// Acceleration unit of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccelUnit {
    #[serde(rename = "g")]
    G,
    #[serde(rename = "m/s^2")]
    MetersPerSecondSquared,
    #[serde(rename = "um/s^2")]
    MicrometersPerSecondSquared,
}

impl AccelUnit {
    /// Multiplier taking a value in this unit to μm/s².
    pub fn to_micro(self) -> f64 {
        match self {
            AccelUnit::G => GRAVITY * 1e6,
            AccelUnit::MetersPerSecondSquared => 1e6,
            AccelUnit::MicrometersPerSecondSquared => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            AccelUnit::G => "g",
            AccelUnit::MetersPerSecondSquared => "m/s^2",
            AccelUnit::MicrometersPerSecondSquared => "um/s^2",
        }
    }
}

impl fmt::Display for AccelUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for AccelUnit {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_lowercase();
        match norm.as_str() {
            "g" => Ok(AccelUnit::G),
            "m/s^2" | "m/s2" | "m/s²" | "m/s/s" => Ok(AccelUnit::MetersPerSecondSquared),
            "um/s^2" | "um/s2" | "μm/s^2" | "μm/s²" | "µm/s^2" | "µm/s²" | "um/s²" => {
                Ok(AccelUnit::MicrometersPerSecondSquared)
            }
            _ => Err(DataError::UnknownUnit(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Measured,
    Synthetic {
        seed: u64,
        sigma_noise: f64,
        d_c_true: f64,
        generator: String,
    },
}

/// A sampled acceleration record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub unit: AccelUnit,
    pub provenance: Provenance,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, unit: AccelUnit, provenance: Provenance) -> Result<Self, DataError> {
        if times.len() != values.len() {
            return Err(DataError::Schema(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(DataError::Schema(format!(
                "times not strictly increasing at sample {}",
                i + 1
            )));
        }
        Ok(Self {
            times,
            values,
            unit,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Observations in μm/s², converting if needed.
    pub fn to_observations(&self) -> Result<ObservationSet, DataError> {
        let micro = convert_units(self, AccelUnit::MicrometersPerSecondSquared);
        Ok(ObservationSet::new(micro.times, micro.values)?)
    }
}

pub fn convert_units(ts: &TimeSeries, target: AccelUnit) -> TimeSeries {
    let values = if ts.unit == target {
        ts.values.clone()
    } else {
        let (from, to) = (ts.unit.to_micro(), target.to_micro());
        ts.values.iter().map(|v| v * from / to).collect()
    };
    TimeSeries {
        values,
        unit: target,
        ..ts.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeismogramFormat {
    /// Two columns `t,a` with a header line.
    #[default]
    Csv,
    /// Header lines with `dt` (and optionally `t0`, `unit`), then samples.
    FixedRate,
}

impl FromStr for SeismogramFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(SeismogramFormat::Csv),
            "fixed-rate" | "fixed_rate" => Ok(SeismogramFormat::FixedRate),
            other => Err(format!("unknown seismogram format '{other}' (csv | fixed-rate)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FormatSpec {
    pub format: SeismogramFormat,
    /// Overrides any unit tag in the file.
    pub unit: Option<AccelUnit>,
}

/// `key = value` or `key: value`, with an optional leading `#`.
fn header_pair(line: &str) -> Option<(String, String)> {
    let body = line.trim().trim_start_matches('#').trim();
    let (k, v) = body.split_once('=').or_else(|| body.split_once(':'))?;
    let k = k.trim().to_lowercase();
    if k.is_empty() || k.contains(char::is_whitespace) {
        return None;
    }
    Some((k, v.trim().to_string()))
}

/// Unit embedded in a column header such as `a[g]` or `a (m/s^2)`.
fn unit_from_column(col: &str) -> Option<AccelUnit> {
    let open = col.find(['[', '('])?;
    let close = col.rfind([']', ')'])?;
    col.get(open + 1..close)?.parse().ok()
}

fn parse_number(tok: &str, line: usize) -> Result<f64, DataError> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("not a number: '{}'", tok.trim())))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_err(line, format!("non-finite value '{}'", tok.trim())))
    }
}

/// Parse seismogram text; see [`read_seismogram`].
pub fn parse_seismogram(text: &str, spec: &FormatSpec) -> Result<TimeSeries, DataError> {
    let mut file_unit: Option<AccelUnit> = None;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut last_line = 0;

    match spec.format {
        SeismogramFormat::Csv => {
            let mut seen_header = false;
            for (idx, raw) in text.lines().enumerate() {
                let line_no = idx + 1;
                let line = raw.trim();
                if line.is_empty() {
                    continue;
                }
                if line.starts_with('#') {
                    if let Some((k, v)) = header_pair(line) {
                        if k == "unit" {
                            file_unit = Some(v.parse()?);
                        }
                    }
                    continue;
                }
                let cols: Vec<&str> = line.split(',').collect();
                if !seen_header {
                    seen_header = true;
                    if cols.first().is_some_and(|c| c.trim().parse::<f64>().is_err()) {
                        if cols.len() != 2 {
                            return Err(parse_err(line_no, "expected a two-column header 't,a'"));
                        }
                        file_unit = file_unit.or_else(|| unit_from_column(cols[1]));
                        continue;
                    }
                    return Err(parse_err(line_no, "missing header line 't,a'"));
                }
                if cols.len() != 2 {
                    return Err(parse_err(line_no, format!("expected 2 columns, found {}", cols.len())));
                }
                let t = parse_number(cols[0], line_no)?;
                let a = parse_number(cols[1], line_no)?;
                if times.last().is_some_and(|&prev| !(t > prev)) {
                    return Err(parse_err(line_no, format!("time {t} is not after the previous sample")));
                }
                times.push(t);
                values.push(a);
                last_line = line_no;
            }
        }
        SeismogramFormat::FixedRate => {
            let mut dt: Option<f64> = None;
            let mut t0 = 0.0;
            for (idx, raw) in text.lines().enumerate() {
                let line_no = idx + 1;
                let line = raw.trim();
                if line.is_empty() {
                    continue;
                }
                if line.starts_with('#') || line.chars().next().is_some_and(|c| c.is_alphabetic()) {
                    match header_pair(line) {
                        Some((k, v)) => match k.as_str() {
                            "dt" => {
                                let d = parse_number(&v, line_no)?;
                                if !(d > 0.0) {
                                    return Err(parse_err(line_no, "dt must be > 0"));
                                }
                                dt = Some(d);
                            }
                            "t0" => t0 = parse_number(&v, line_no)?,
                            "unit" => file_unit = Some(v.parse()?),
                            _ => {}
                        },
                        None if line.starts_with('#') => {}
                        None => return Err(parse_err(line_no, format!("unrecognized header '{line}'"))),
                    }
                    continue;
                }
                let dt = dt.ok_or_else(|| parse_err(line_no, "sample data before a 'dt = ...' header"))?;
                for tok in line
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                {
                    let a = parse_number(tok, line_no)?;
                    times.push(t0 + values.len() as f64 * dt);
                    values.push(a);
                }
                last_line = line_no;
            }
        }
    }

    if times.is_empty() {
        return Err(parse_err(last_line.max(1), "no samples"));
    }
    let unit = spec
        .unit
        .or(file_unit)
        .ok_or_else(|| parse_err(1, "unit tag missing (add '# unit = g' or pass a unit)"))?;
    TimeSeries::new(times, values, unit, Provenance::Measured)
}

/// Load a seismogram record in one of the supported text formats.
pub fn read_seismogram(path: &Path, spec: &FormatSpec) -> Result<TimeSeries, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_seismogram(&text, spec)
}

/// `n` standard-normal draws from the seeded generator.
pub fn standard_normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Forward response at `d_c_true` plus seeded Gaussian noise, in μm/s².
pub fn generate_synthetic(
    d_c_true: f64,
    model: &ForwardModel,
    times: &[f64],
    sigma_noise: f64,
    seed: u64,
) -> Result<TimeSeries, DataError> {
    if !(sigma_noise >= 0.0) || !sigma_noise.is_finite() {
        return Err(InversionError::InvalidSettings(format!("sigma_noise must be >= 0, got {sigma_noise}")).into());
    }
    let clean = model.response(d_c_true, times)?;
    Ok(add_noise(&clean, times, sigma_noise, seed, d_c_true))
}

/// Noise added to an existing clean response.
pub fn add_noise(clean: &[f64], times: &[f64], sigma_noise: f64, seed: u64, d_c_true: f64) -> TimeSeries {
    let values = if sigma_noise == 0.0 {
        clean.to_vec()
    } else {
        clean
            .iter()
            .zip(standard_normals(seed, clean.len()))
            .map(|(f, z)| f + sigma_noise * z)
            .collect()
    };
    TimeSeries {
        times: times.to_vec(),
        values,
        unit: AccelUnit::MicrometersPerSecondSquared,
        provenance: Provenance::Synthetic {
            seed,
            sigma_noise,
            d_c_true,
            generator: RNG_ALGORITHM.to_string(),
        },
    }
}

// ---------------------------------------------------------------------------
// artifact files

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

type Meta = BTreeMap<String, String>;

struct Table {
    meta: Meta,
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn write_table(
    path: &Path,
    kind: &str,
    meta: &Meta,
    columns: &[&str],
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<(), DataError> {
    let mut out = String::new();
    out.push_str(&format!("# schema_version = {SCHEMA_VERSION}\n# kind = {kind}\n"));
    for (k, v) in meta {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(columns).map_err(|e| DataError::Schema(e.to_string()))?;
    for row in rows {
        w.write_record(row.iter().map(|x| fmt_f64(*x)))
            .map_err(|e| DataError::Schema(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| DataError::Schema(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(out.as_bytes()).map_err(io_err(path))?;
    f.write_all(&body).map_err(io_err(path))?;
    Ok(())
}

fn read_table(path: &Path, kind: &str, columns: &[&str]) -> Result<Table, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut meta = Meta::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some((k, v)) = line.trim_start_matches('#').split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    match meta.get("schema_version") {
        Some(v) if v.parse::<u32>().ok() == Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(DataError::Version {
                found: v.clone(),
                expected: SCHEMA_VERSION,
            })
        }
        None => {
            return Err(DataError::Version {
                found: "missing".into(),
                expected: SCHEMA_VERSION,
            })
        }
    }
    if meta.get("kind").map(String::as_str) != Some(kind) {
        return Err(DataError::Schema(format!(
            "{}: expected kind '{kind}', found {:?}",
            path.display(),
            meta.get("kind")
        )));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Schema(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != columns {
        return Err(DataError::Schema(format!(
            "expected columns {columns:?}, found {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Schema(e.to_string()))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push(
            rec.iter()
                .map(|tok| parse_number(tok, line))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    Ok(Table {
        meta,
        columns: header,
        rows,
    })
}

impl Table {
    fn col(&self, name: &str) -> Vec<f64> {
        let i = self.columns.iter().position(|c| c == name).expect("column checked");
        self.rows.iter().map(|r| r[i]).collect()
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T, DataError> {
        self.meta
            .get(key)
            .ok_or_else(|| DataError::Schema(format!("missing metadata '{key}'")))?
            .parse()
            .map_err(|_| DataError::Schema(format!("bad metadata '{key}'")))
    }

    fn json<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T, DataError> {
        let raw = self
            .meta
            .get(key)
            .ok_or_else(|| DataError::Schema(format!("missing metadata '{key}'")))?;
        Ok(serde_json::from_str(raw)?)
    }
}

const TRAJECTORY_COLUMNS: [&str; 5] = ["t", "mu", "theta", "v", "a"];

/// Trajectory CSV with columns `t, mu, theta, v, a`. `extra` adds metadata
/// lines (e.g. the parameters that produced it).
pub fn write_trajectory(path: &Path, traj: &Trajectory, extra: &Meta) -> Result<(), DataError> {
    let mut meta = extra.clone();
    meta.insert("units".into(), "t[s] mu[-] theta[s] v[um/s] a[um/s^2]".into());
    meta.insert("solver_stats".into(), serde_json::to_string(&traj.stats)?);
    let rows = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, s)| vec![*t, s.mu, s.theta, s.v, s.a]);
    write_table(path, "trajectory", &meta, &TRAJECTORY_COLUMNS, rows)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, DataError> {
    let t = read_table(path, "trajectory", &TRAJECTORY_COLUMNS)?;
    let stats: SolverStats = t.json("solver_stats").unwrap_or_default();
    Ok(Trajectory {
        times: t.col("t"),
        states: t
            .rows
            .iter()
            .map(|r| SliderState::from_array([r[1], r[2], r[3], r[4]]))
            .collect(),
        rates: None,
        stats,
    })
}

pub fn write_time_series(path: &Path, ts: &TimeSeries) -> Result<(), DataError> {
    let mut meta = Meta::new();
    meta.insert("unit".into(), ts.unit.tag().into());
    meta.insert("provenance".into(), serde_json::to_string(&ts.provenance)?);
    let rows = ts.times.iter().zip(&ts.values).map(|(t, a)| vec![*t, *a]);
    write_table(path, "time_series", &meta, &["t", "a"], rows)
}

pub fn read_time_series(path: &Path) -> Result<TimeSeries, DataError> {
    let t = read_table(path, "time_series", &["t", "a"])?;
    let unit: AccelUnit = t.get("unit")?;
    let provenance: Provenance = t.json("provenance")?;
    TimeSeries::new(t.col("t"), t.col("a"), unit, provenance)
}

pub fn write_posterior_grid(path: &Path, post: &PosteriorGrid) -> Result<(), DataError> {
    let mut meta = Meta::new();
    meta.insert("units".into(), "d_c[um] density[1/um]".into());
    meta.insert("evidence".into(), fmt_f64(post.evidence));
    meta.insert("log_evidence".into(), fmt_f64(post.log_evidence));
    meta.insert("prior".into(), serde_json::to_string(&post.prior)?);
    meta.insert("sigma_noise".into(), fmt_f64(post.sigma_noise));
    meta.insert("failed_points".into(), post.failed_points.to_string());
    let rows = (0..post.grid.len()).map(|i| vec![post.grid[i], post.log_likelihoods[i], post.normalized_density[i]]);
    write_table(path, "posterior_grid", &meta, &["d_c", "log_like", "density"], rows)
}

pub fn read_posterior_grid(path: &Path) -> Result<PosteriorGrid, DataError> {
    let t = read_table(path, "posterior_grid", &["d_c", "log_like", "density"])?;
    let prior: PriorConfig = t.json("prior")?;
    Ok(PosteriorGrid {
        grid: t.col("d_c"),
        log_likelihoods: t.col("log_like"),
        normalized_density: t.col("density"),
        evidence: t.get("evidence")?,
        log_evidence: t.get("log_evidence")?,
        prior,
        sigma_noise: t.get("sigma_noise")?,
        failed_points: t.get("failed_points")?,
    })
}

pub fn write_chain(path: &Path, chain: &McmcChain) -> Result<(), DataError> {
    let mut meta = Meta::new();
    meta.insert("units".into(), "d_c[um]".into());
    meta.insert("seed".into(), chain.seed.to_string());
    meta.insert("proposal_std".into(), fmt_f64(chain.proposal_std));
    meta.insert("burn_in".into(), chain.burn_in.to_string());
    meta.insert("thin".into(), chain.thin.to_string());
    meta.insert("acceptance_rate".into(), fmt_f64(chain.acceptance_rate));
    meta.insert("failed_proposals".into(), chain.failed_proposals.to_string());
    meta.insert("acceptance_warning".into(), chain.acceptance_warning.to_string());
    meta.insert("rng".into(), RNG_ALGORITHM.into());
    let rows = chain
        .samples
        .iter()
        .zip(&chain.log_posts)
        .enumerate()
        .map(|(i, (d, lp))| vec![(i * chain.thin) as f64, *d, *lp]);
    write_table(path, "mcmc_chain", &meta, &["iter", "d_c", "log_post"], rows)
}

pub fn read_chain(path: &Path) -> Result<McmcChain, DataError> {
    let t = read_table(path, "mcmc_chain", &["iter", "d_c", "log_post"])?;
    Ok(McmcChain {
        samples: t.col("d_c"),
        log_posts: t.col("log_post"),
        acceptance_rate: t.get("acceptance_rate")?,
        seed: t.get("seed")?,
        proposal_std: t.get("proposal_std")?,
        burn_in: t.get("burn_in")?,
        thin: t.get("thin")?,
        failed_proposals: t.get("failed_proposals")?,
        acceptance_warning: t.get("acceptance_warning")?,
    })
}

/// Kind of a CSV artifact, read from its metadata without parsing the body.
pub fn artifact_kind(path: &Path) -> Result<String, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.trim_start_matches('#').split_once('='))
        .find(|(k, _)| k.trim() == "kind")
        .map(|(_, v)| v.trim().to_string())
        .ok_or_else(|| DataError::Schema(format!("{}: no kind metadata", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub rng_algorithm: String,
    pub artifacts: Vec<ArtifactRecord>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seeds,
            rng_algorithm: RNG_ALGORITHM.into(),
            artifacts: Vec::new(),
        }
    }

    /// Record `path` (hashed now) under a name relative to `base`.
    pub fn add_artifact(&mut self, base: &Path, path: &Path) -> Result<(), DataError> {
        let rel = path.strip_prefix(base).unwrap_or(path);
        self.artifacts.push(ArtifactRecord {
            path: rel.to_string_lossy().into_owned(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<Manifest, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    match raw.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => Ok(serde_json::from_value(raw)?),
        other => Err(DataError::Version {
            found: other.map_or("missing".into(), |v| v.to_string()),
            expected: SCHEMA_VERSION,
        }),
    }
}
