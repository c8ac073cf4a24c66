//! Inversion of the critical slip distance from acceleration records.
//!
//! The statistical model is `a_i = f(t_i; d_c) + ε_i` with i.i.d. Gaussian
//! errors, where `f` is the simulated slip acceleration. On top of it sit a
//! bounded least-squares fit, a grid posterior under a uniform prior, a
//! random-walk Metropolis sampler and posterior summaries. Everything is
//! evaluated in log space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode_solver::{integrate, sample_at, SolverConfig, SolverError};
use crate::rsf_model::{Forcing, RsfParams, SliderState};

/// Name of the random generator used for proposals and synthetic noise.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng::seed_from_u64 + rand_distr::StandardNormal (ziggurat)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InversionError {
    #[error("forward model failed for d_c = {d_c} μm: {source}")]
    Forward {
        d_c: f64,
        #[source]
        source: SolverError,
    },
    #[error("invalid observations: {0}")]
    InvalidObservations(String),
    #[error("invalid prior: need 0 < lower < upper, got [{lower}, {upper}]")]
    InvalidPrior { lower: f64, upper: f64 },
    #[error("invalid setting: {0}")]
    InvalidSettings(String),
    #[error("least-squares fit failed: every one of {0} grid evaluations failed")]
    FitFailed(usize),
    #[error("posterior failed: only {survivors} finite grid points (need at least {required})")]
    PosteriorFailed { survivors: usize, required: usize },
    #[error("residual sum of squares is zero; the noise level cannot be estimated")]
    DegenerateNoise,
    #[error("non-finite log-likelihood at d_c = {0}")]
    NonFinite(f64),
    #[error("chain has no samples after burn-in")]
    EmptyChain,
    #[error("initial d_c = {0} has zero posterior density")]
    BadInitialPoint(f64),
}

/// Observed accelerations `a(t_i)` in μm/s².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    times: Vec<f64>,
    accels: Vec<f64>,
}

impl ObservationSet {
    pub fn new(times: Vec<f64>, accels: Vec<f64>) -> Result<Self, InversionError> {
        let bad = |m: String| Err(InversionError::InvalidObservations(m));
        if times.len() != accels.len() {
            return bad(format!("{} times but {} accelerations", times.len(), accels.len()));
        }
        if times.len() < 2 {
            return bad(format!("need at least 2 observations, got {}", times.len()));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return bad(format!("times not strictly increasing at index {}", i + 1));
        }
        if let Some(i) = times.iter().chain(&accels).position(|x| !x.is_finite()) {
            return bad(format!("non-finite value at position {i}"));
        }
        Ok(Self { times, accels })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn accels(&self) -> &[f64] {
        &self.accels
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Use `sigma_noise` as given.
    Fixed,
    /// Replace `sigma_noise` by [`estimate_noise_std`] at the least-squares fit.
    #[default]
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviation of the observation error (μm/s²).
    pub sigma_noise: f64,
    pub mode: NoiseMode,
}

impl NoiseModel {
    pub fn fixed(sigma_noise: f64) -> Self {
        Self {
            sigma_noise,
            mode: NoiseMode::Fixed,
        }
    }

    fn check(&self) -> Result<f64, InversionError> {
        if self.sigma_noise > 0.0 && self.sigma_noise.is_finite() {
            Ok(self.sigma_noise)
        } else {
            Err(InversionError::InvalidSettings(format!(
                "sigma_noise must be > 0, got {}",
                self.sigma_noise
            )))
        }
    }
}

/// Uniform prior support for `d_c` (μm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub lower: f64,
    pub upper: f64,
}

impl PriorConfig {
    pub fn new(lower: f64, upper: f64) -> Result<Self, InversionError> {
        let p = Self { lower, upper };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), InversionError> {
        if self.lower > 0.0 && self.upper > self.lower && self.upper.is_finite() {
            Ok(())
        } else {
            Err(InversionError::InvalidPrior {
                lower: self.lower,
                upper: self.upper,
            })
        }
    }

    pub fn contains(&self, d_c: f64) -> bool {
        d_c >= self.lower && d_c <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn density(&self) -> f64 {
        1.0 / self.width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpacing {
    #[default]
    Log,
    Linear,
}

/// `n` points from `lower` to `upper` inclusive.
pub fn make_grid(prior: &PriorConfig, n: usize, spacing: GridSpacing) -> Vec<f64> {
    if n == 1 {
        return vec![prior.lower];
    }
    let last = (n - 1) as f64;
    let mut g: Vec<f64> = match spacing {
        GridSpacing::Linear => (0..n)
            .map(|i| prior.lower + (prior.upper - prior.lower) * i as f64 / last)
            .collect(),
        GridSpacing::Log => {
            let (l0, l1) = (prior.lower.ln(), prior.upper.ln());
            (0..n).map(|i| (l0 + (l1 - l0) * i as f64 / last).exp()).collect()
        }
    };
    g[0] = prior.lower;
    g[n - 1] = prior.upper;
    g
}

/// Initial state of each forward run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialCondition {
    /// Steady sliding at `V0` for the `d_c` being evaluated.
    #[default]
    SteadyState,
    Explicit(SliderState),
}

/// The map `d_c ↦ a(t_1..t_n)` with all other inputs held fixed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ForwardModel {
    /// Parameters other than `d_c`; their `d_c` field is ignored.
    pub params: RsfParams,
    pub forcing: Forcing,
    pub solver: SolverConfig,
    #[serde(default)]
    pub initial: InitialCondition,
}

impl ForwardModel {
    pub fn params_for(&self, d_c: f64) -> RsfParams {
        self.params.with_d_c(d_c)
    }

    fn initial_for(&self, p: &RsfParams) -> SliderState {
        match self.initial {
            InitialCondition::SteadyState => p.steady_state(),
            InitialCondition::Explicit(s) => s,
        }
    }

    /// Simulated accelerations at `times`.
    pub fn response(&self, d_c: f64, times: &[f64]) -> Result<Vec<f64>, InversionError> {
        let wrap = |source| InversionError::Forward { d_c, source };
        let p = self.params_for(d_c);
        let traj = integrate(&p, &self.forcing, self.initial_for(&p), &self.solver).map_err(wrap)?;
        let states = sample_at(&traj, times).map_err(wrap)?;
        Ok(states.iter().map(|s| s.a).collect())
    }
}

/// `Σ (a_i − f_i)²`.
pub fn sum_sq_residuals(observed: &[f64], modeled: &[f64]) -> f64 {
    debug_assert_eq!(observed.len(), modeled.len());
    observed.iter().zip(modeled).map(|(a, f)| (a - f) * (a - f)).sum()
}

/// Residual sum of squares of the model at `d_c` against `obs`.
pub fn sse(obs: &ObservationSet, d_c: f64, model: &ForwardModel) -> Result<f64, InversionError> {
    let f = model.response(d_c, obs.times())?;
    Ok(sum_sq_residuals(obs.accels(), &f))
}

/// Gaussian log-likelihood from a residual sum of squares:
/// `−n·ln(σ√(2π)) − sse/(2σ²)`.
pub fn log_likelihood_from_sse(sse: f64, n: usize, sigma: f64) -> f64 {
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    -(n as f64) * (sigma.ln() + half_ln_2pi) - sse / (2.0 * sigma * sigma)
}

pub fn log_likelihood(
    obs: &ObservationSet,
    d_c: f64,
    noise: &NoiseModel,
    model: &ForwardModel,
) -> Result<f64, InversionError> {
    let sigma = noise.check()?;
    let ll = log_likelihood_from_sse(sse(obs, d_c, model)?, obs.len(), sigma);
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(InversionError::NonFinite(d_c))
    }
}

/// `sqrt(sse/(n − 1))`.
pub fn estimate_noise_std(sse: f64, n: usize) -> Result<f64, InversionError> {
    if n < 2 {
        return Err(InversionError::InvalidObservations(format!("need n > 1, got {n}")));
    }
    if !(sse > 0.0) {
        return Err(InversionError::DegenerateNoise);
    }
    Ok((sse / (n - 1) as f64).sqrt())
}

/// Resolve a [`NoiseModel`] to a concrete σ, estimating it at `d_c_ref` when
/// the mode asks for it.
pub fn resolve_noise(
    obs: &ObservationSet,
    noise: &NoiseModel,
    d_c_ref: f64,
    model: &ForwardModel,
) -> Result<f64, InversionError> {
    match noise.mode {
        NoiseMode::Fixed => noise.check(),
        NoiseMode::Estimated => estimate_noise_std(sse(obs, d_c_ref, model)?, obs.len()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    /// Points of the initial scan.
    pub n_scan: usize,
    pub spacing: GridSpacing,
    /// Golden-section stops once the bracket is narrower than this fraction
    /// of its midpoint.
    pub rel_width: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            n_scan: 64,
            spacing: GridSpacing::Log,
            rel_width: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub d_c_hat: f64,
    pub sse: f64,
    pub bracket: (f64, f64),
    /// The minimum sits at a prior bound.
    pub boundary_flag: bool,
    /// Every scan point produced the same residual.
    pub degenerate: bool,
    /// Several separated scan cells tied for the minimum.
    pub multimodal: bool,
    pub failed_points: usize,
    pub evaluations: usize,
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
/// Returns the final bracket and the best point seen.
pub fn golden_section<E>(
    mut f: impl FnMut(f64) -> Result<f64, E>,
    mut lo: f64,
    mut hi: f64,
    rel_width: f64,
) -> Result<((f64, f64), f64, f64, usize), E> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let mut evals = 2;
    while hi - lo > rel_width * 0.5 * (hi + lo).abs() && evals < 500 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
        }
        evals += 1;
    }
    let (x, fx) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    Ok(((lo, hi), x, fx, evals))
}

/// Bounded least-squares estimate of `d_c`: scan, then golden-section
/// refinement of the best cell.
pub fn least_squares_fit(
    obs: &ObservationSet,
    bounds: &PriorConfig,
    model: &ForwardModel,
    settings: &FitSettings,
) -> Result<FitResult, InversionError> {
    least_squares_fit_with(|d_c| sse(obs, d_c, model), bounds, settings)
}

/// [`least_squares_fit`] for an arbitrary residual function.
pub fn least_squares_fit_with(
    mut objective: impl FnMut(f64) -> Result<f64, InversionError>,
    bounds: &PriorConfig,
    settings: &FitSettings,
) -> Result<FitResult, InversionError> {
    bounds.validate()?;
    if settings.n_scan < 3 {
        return Err(InversionError::InvalidSettings("n_scan must be >= 3".into()));
    }
    let grid = make_grid(bounds, settings.n_scan, settings.spacing);
    let scan: Vec<Option<f64>> = grid
        .iter()
        .map(|&d| objective(d).ok().filter(|s| s.is_finite()))
        .collect();
    let failed_points = scan.iter().filter(|s| s.is_none()).count();
    let valid: Vec<(usize, f64)> = scan.iter().enumerate().filter_map(|(i, s)| s.map(|v| (i, v))).collect();
    let (&(_, best), &(_, worst)) = match (
        valid.iter().min_by(|a, b| a.1.total_cmp(&b.1)),
        valid.iter().max_by(|a, b| a.1.total_cmp(&b.1)),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(InversionError::FitFailed(grid.len())),
    };
    let tie = 1e-12 * best.abs().max(1.0);
    let tied: Vec<usize> = valid
        .iter()
        .filter(|(_, s)| *s - best <= tie)
        .map(|(i, _)| *i)
        .collect();
    let i_best = tied[0];

    if worst - best <= tie {
        // Non-identifiable: every d_c fits equally well.
        return Ok(FitResult {
            d_c_hat: bounds.lower,
            sse: best,
            bracket: (bounds.lower, bounds.upper),
            boundary_flag: true,
            degenerate: true,
            multimodal: tied.len() > 1,
            failed_points,
            evaluations: grid.len(),
        });
    }
    let multimodal = tied.windows(2).any(|w| w[1] != w[0] + 1);

    let lo = grid[i_best.saturating_sub(1)];
    let hi = grid[(i_best + 1).min(grid.len() - 1)];
    let penalized = |d: f64, obj: &mut dyn FnMut(f64) -> Result<f64, InversionError>| {
        Ok::<f64, InversionError>(obj(d).ok().filter(|s| s.is_finite()).unwrap_or(f64::INFINITY))
    };
    let ((blo, bhi), x, fx, evals) = golden_section(|d| penalized(d, &mut objective), lo, hi, settings.rel_width)?;
    let (d_c_hat, sse_hat) = if fx <= best { (x, fx) } else { (grid[i_best], best) };
    let near = |a: f64, b: f64| (a - b).abs() <= settings.rel_width * b;
    Ok(FitResult {
        d_c_hat,
        sse: sse_hat,
        bracket: (blo, bhi),
        boundary_flag: near(d_c_hat, bounds.lower) || near(d_c_hat, bounds.upper),
        degenerate: false,
        multimodal,
        failed_points,
        evaluations: grid.len() + evals,
    })
}

/// Forward responses precomputed on a `d_c` grid; failed runs are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTable {
    pub grid: Vec<f64>,
    pub responses: Vec<Option<Vec<f64>>>,
}

impl ResponseTable {
    pub fn build(model: &ForwardModel, grid: Vec<f64>, times: &[f64]) -> Self {
        let responses = grid.iter().map(|&d| model.response(d, times).ok()).collect();
        Self { grid, responses }
    }

    pub fn sse_row(&self, observed: &[f64]) -> Vec<Option<f64>> {
        self.responses
            .iter()
            .map(|r| r.as_ref().map(|f| sum_sq_residuals(observed, f)))
            .collect()
    }
}

/// Posterior density of `d_c` on a grid, normalized by the trapezoid rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGrid {
    pub grid: Vec<f64>,
    pub log_likelihoods: Vec<f64>,
    /// 1/μm; integrates to one over `grid`.
    pub normalized_density: Vec<f64>,
    /// `∫ likelihood · prior dd_c` (may underflow to zero; see `log_evidence`).
    pub evidence: f64,
    pub log_evidence: f64,
    pub prior: PriorConfig,
    /// σ the likelihood was evaluated with.
    pub sigma_noise: f64,
    /// Grid points dropped because the forward model failed.
    pub failed_points: usize,
}

/// Minimum number of finite grid points for a posterior.
pub const MIN_GRID_POINTS: usize = 8;

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (ys[0] + ys[1]) * (xs[1] - xs[0]))
        .sum()
}

/// Normalize grid log-likelihoods under a constant prior of height
/// `prior_height`. Points with a `None` or non-finite log-likelihood are
/// dropped. The density is normalized before the prior height is applied, so
/// it does not depend on that height.
pub fn normalize_posterior(
    grid: &[f64],
    log_likelihoods: &[Option<f64>],
    prior: PriorConfig,
    prior_height: f64,
    sigma_noise: f64,
) -> Result<PosteriorGrid, InversionError> {
    let kept: Vec<(f64, f64)> = grid
        .iter()
        .zip(log_likelihoods)
        .filter_map(|(&g, ll)| ll.filter(|v| v.is_finite()).map(|v| (g, v)))
        .collect();
    let failed_points = grid.len() - kept.len();
    if kept.len() < MIN_GRID_POINTS {
        return Err(InversionError::PosteriorFailed {
            survivors: kept.len(),
            required: MIN_GRID_POINTS,
        });
    }
    if failed_points > 0 {
        log::warn!("{failed_points} posterior grid points dropped after forward-model failures");
    }
    let (grid, lls): (Vec<f64>, Vec<f64>) = kept.into_iter().unzip();
    let max = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = lls.iter().map(|ll| (ll - max).exp()).collect();
    let mass = trapezoid(&grid, &shifted);
    let normalized_density: Vec<f64> = shifted.iter().map(|w| w / mass).collect();
    let log_evidence = max + mass.ln() + prior_height.ln();
    Ok(PosteriorGrid {
        grid,
        log_likelihoods: lls,
        normalized_density,
        evidence: log_evidence.exp(),
        log_evidence,
        prior,
        sigma_noise,
        failed_points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub n_grid: usize,
    pub spacing: GridSpacing,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            n_grid: 200,
            spacing: GridSpacing::Log,
        }
    }
}

/// Grid posterior from precomputed forward responses.
pub fn grid_posterior_from_table(
    obs: &ObservationSet,
    table: &ResponseTable,
    prior: PriorConfig,
    sigma: f64,
) -> Result<PosteriorGrid, InversionError> {
    prior.validate()?;
    NoiseModel::fixed(sigma).check()?;
    let n = obs.len();
    let lls: Vec<Option<f64>> = table
        .sse_row(obs.accels())
        .into_iter()
        .map(|s| s.map(|s| log_likelihood_from_sse(s, n, sigma)))
        .collect();
    normalize_posterior(&table.grid, &lls, prior, prior.density(), sigma)
}

/// Evaluate the likelihood on a grid over the prior support and normalize.
///
/// With [`NoiseMode::Estimated`], σ is estimated at the least-squares fit
/// first.
pub fn grid_posterior(
    obs: &ObservationSet,
    prior: PriorConfig,
    settings: &GridSettings,
    noise: &NoiseModel,
    model: &ForwardModel,
) -> Result<PosteriorGrid, InversionError> {
    prior.validate()?;
    if settings.n_grid < MIN_GRID_POINTS {
        return Err(InversionError::InvalidSettings(format!(
            "n_grid must be >= {MIN_GRID_POINTS}, got {}",
            settings.n_grid
        )));
    }
    let table = ResponseTable::build(model, make_grid(&prior, settings.n_grid, settings.spacing), obs.times());
    let sigma = match noise.mode {
        NoiseMode::Fixed => noise.check()?,
        NoiseMode::Estimated => {
            let fit = least_squares_fit(obs, &prior, model, &FitSettings::default())?;
            estimate_noise_std(fit.sse, obs.len())?
        }
    };
    grid_posterior_from_table(obs, &table, prior, sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcSettings {
    /// Total iterations, burn-in included (before thinning).
    pub n_samples: usize,
    /// Gaussian random-walk step (μm).
    pub proposal_std: f64,
    pub seed: u64,
    /// Leading iterations excluded from summaries.
    pub burn_in: usize,
    /// Keep every `thin`-th iteration.
    pub thin: usize,
    /// Starting point; the prior midpoint when absent.
    pub initial: Option<f64>,
}

impl McmcSettings {
    /// Proposal at 5% of the prior width, burn-in at 20% of the iterations.
    pub fn defaults_for(prior: &PriorConfig, n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            proposal_std: 0.05 * prior.width(),
            seed,
            burn_in: n_samples / 5,
            thin: 1,
            initial: None,
        }
    }

    fn validate(&self, prior: &PriorConfig) -> Result<(), InversionError> {
        let bad = |m: String| Err(InversionError::InvalidSettings(m));
        if self.n_samples <= self.burn_in {
            return bad(format!(
                "n_samples ({}) must exceed burn_in ({})",
                self.n_samples, self.burn_in
            ));
        }
        if !(self.proposal_std > 0.0) || !self.proposal_std.is_finite() {
            return bad(format!("proposal_std must be > 0, got {}", self.proposal_std));
        }
        if self.thin == 0 {
            return bad("thin must be >= 1".into());
        }
        if let Some(x) = self.initial {
            if !prior.contains(x) {
                return bad(format!("initial d_c {x} outside prior support"));
            }
        }
        Ok(())
    }
}

/// Acceptance rates outside this band flag the chain.
pub const ACCEPTANCE_BAND: (f64, f64) = (0.05, 0.95);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcChain {
    /// Recorded states (after thinning), burn-in included.
    pub samples: Vec<f64>,
    pub log_posts: Vec<f64>,
    /// Fraction of accepted proposals after burn-in.
    pub acceptance_rate: f64,
    pub seed: u64,
    pub proposal_std: f64,
    /// Number of leading entries of `samples` that are burn-in.
    pub burn_in: usize,
    pub thin: usize,
    /// Proposals whose forward run failed (counted as rejections).
    pub failed_proposals: usize,
    pub acceptance_warning: bool,
}

impl McmcChain {
    pub fn post_burn_in(&self) -> &[f64] {
        &self.samples[self.burn_in.min(self.samples.len())..]
    }
}

/// Random-walk Metropolis over `d_c` with a uniform prior and the supplied
/// log-likelihood. Out-of-support proposals are rejected; proposals whose
/// likelihood evaluation fails count as rejections.
pub fn metropolis(
    mut log_like: impl FnMut(f64) -> Result<f64, InversionError>,
    prior: &PriorConfig,
    settings: &McmcSettings,
) -> Result<McmcChain, InversionError> {
    prior.validate()?;
    settings.validate(prior)?;
    let log_prior = -prior.width().ln();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    let mut x = settings.initial.unwrap_or(0.5 * (prior.lower + prior.upper));
    let mut lp = match log_like(x) {
        Ok(ll) if ll.is_finite() => ll + log_prior,
        _ => return Err(InversionError::BadInitialPoint(x)),
    };

    let kept = settings.n_samples / settings.thin;
    let mut samples = Vec::with_capacity(kept);
    let mut log_posts = Vec::with_capacity(kept);
    let (mut accepted, mut proposed, mut failed) = (0usize, 0usize, 0usize);

    for iter in 0..settings.n_samples {
        let z: f64 = StandardNormal.sample(&mut rng);
        let u: f64 = rand::Rng::random(&mut rng);
        let cand = x + settings.proposal_std * z;
        let counted = iter >= settings.burn_in;
        if counted {
            proposed += 1;
        }
        if prior.contains(cand) {
            match log_like(cand) {
                Ok(ll) if ll.is_finite() => {
                    let lp_cand = ll + log_prior;
                    // ln u < Δ never exponentiates a positive number
                    if u.ln() < lp_cand - lp {
                        x = cand;
                        lp = lp_cand;
                        if counted {
                            accepted += 1;
                        }
                    }
                }
                _ => failed += 1,
            }
        }
        if (iter + 1) % settings.thin == 0 {
            samples.push(x);
            log_posts.push(lp);
        }
    }

    let acceptance_rate = accepted as f64 / proposed as f64;
    let acceptance_warning = !(acceptance_rate >= ACCEPTANCE_BAND.0 && acceptance_rate <= ACCEPTANCE_BAND.1);
    if acceptance_warning {
        log::warn!("MCMC acceptance rate {acceptance_rate:.3} outside {ACCEPTANCE_BAND:?}");
    }
    Ok(McmcChain {
        samples,
        log_posts,
        acceptance_rate,
        seed: settings.seed,
        proposal_std: settings.proposal_std,
        burn_in: settings.burn_in / settings.thin,
        thin: settings.thin,
        failed_proposals: failed,
        acceptance_warning,
    })
}

/// Metropolis sampling of the `d_c` posterior for `obs` under `model`.
pub fn mcmc_sample(
    obs: &ObservationSet,
    prior: &PriorConfig,
    sigma: f64,
    settings: &McmcSettings,
    model: &ForwardModel,
) -> Result<McmcChain, InversionError> {
    NoiseModel::fixed(sigma).check()?;
    let n = obs.len();
    metropolis(
        |d_c| Ok(log_likelihood_from_sse(sse(obs, d_c, model)?, n, sigma)),
        prior,
        settings,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub mode: f64,
    pub std: f64,
    pub level: f64,
    /// Equal-tailed credible interval at `level`.
    pub credible_interval: (f64, f64),
    /// Effective sample size (chains only).
    pub ess: Option<f64>,
    /// Monte-Carlo standard error of the mean (chains only).
    pub mcse: Option<f64>,
}

impl PosteriorGrid {
    /// Value where the piecewise-linear density's CDF reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let (x, p) = (&self.grid, &self.normalized_density);
        let total = trapezoid(x, p);
        let target = q.clamp(0.0, 1.0) * total;
        let mut acc = 0.0;
        for i in 0..x.len() - 1 {
            let h = x[i + 1] - x[i];
            let cell = 0.5 * (p[i] + p[i + 1]) * h;
            if acc + cell >= target && cell > 0.0 {
                // p_i·s + ½·slope·s² = need, in the cancellation-free form
                let need = target - acc;
                let slope = (p[i + 1] - p[i]) / h;
                let root = (p[i] * p[i] + 2.0 * slope * need).max(0.0).sqrt();
                let s = 2.0 * need / (p[i] + root);
                return x[i] + s.clamp(0.0, h);
            }
            acc += cell;
        }
        *x.last().unwrap()
    }

    pub fn summary(&self, level: f64) -> PosteriorSummary {
        let (x, p) = (&self.grid, &self.normalized_density);
        let xp: Vec<f64> = x.iter().zip(p).map(|(x, p)| x * p).collect();
        let mean = trapezoid(x, &xp);
        let var_terms: Vec<f64> = x.iter().zip(p).map(|(x, p)| (x - mean).powi(2) * p).collect();
        let std = trapezoid(x, &var_terms).max(0.0).sqrt();
        let mode = x[p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)];
        let tail = 0.5 * (1.0 - level);
        PosteriorSummary {
            mean,
            mode,
            std,
            level,
            credible_interval: (self.quantile(tail), self.quantile(1.0 - tail)),
            ess: None,
            mcse: None,
        }
    }
}

/// Linear-interpolation (type 7) sample quantile of sorted data.
fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Effective sample size by Geyer's initial positive sequence.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return n as f64;
    }
    let acf =
        |lag: usize| -> f64 { (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / n as f64 / c0 };
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    (n as f64 / tau.max(1.0 / n as f64)).min(n as f64)
}

impl McmcChain {
    pub fn summary(&self, level: f64) -> Result<PosteriorSummary, InversionError> {
        let xs = self.post_burn_in();
        if xs.is_empty() {
            return Err(InversionError::EmptyChain);
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let lps = &self.log_posts[self.burn_in.min(self.log_posts.len())..];
        let mode = xs[lps
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)];
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let tail = 0.5 * (1.0 - level);
        let ess = effective_sample_size(xs);
        Ok(PosteriorSummary {
            mean,
            mode,
            std,
            level,
            credible_interval: (sorted_quantile(&sorted, tail), sorted_quantile(&sorted, 1.0 - tail)),
            ess: Some(ess),
            mcse: Some(std / ess.sqrt()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn prior() -> PriorConfig {
        PriorConfig::new(5.0, 50.0).unwrap()
    }

    #[test]
    fn observation_validation() {
        assert!(ObservationSet::new(vec![0.0], vec![1.0]).is_err());
        assert!(ObservationSet::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(ObservationSet::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(ObservationSet::new(vec![0.0, 1.0], vec![1.0, f64::NAN]).is_err());
        assert_eq!(ObservationSet::new(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap().len(), 2);
    }

    #[test]
    fn prior_validation() {
        assert!(PriorConfig::new(0.0, 1.0).is_err());
        assert!(PriorConfig::new(2.0, 1.0).is_err());
        assert!(PriorConfig::new(1.0, 1.0).is_err());
    }

    #[test]
    fn grid_endpoints_exact() {
        for spacing in [GridSpacing::Log, GridSpacing::Linear] {
            let g = make_grid(&prior(), 200, spacing);
            assert_eq!(g.len(), 200);
            assert_eq!((g[0], g[199]), (5.0, 50.0));
            assert!(g.windows(2).all(|w| w[1] > w[0]));
        }
        let g = make_grid(&prior(), 3, GridSpacing::Log);
        assert_relative_eq!(g[1], (250f64).sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn standard_normal_log_density() {
        let ll = log_likelihood_from_sse(0.0, 1, 1.0);
        assert!((ll - (-0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-12);
        assert!((ll + 0.9189385).abs() < 1e-7);
    }

    #[test]
    fn doubling_sigma_costs_n_ln2() {
        let n = 37;
        let d = log_likelihood_from_sse(0.0, n, 1.5) - log_likelihood_from_sse(0.0, n, 3.0);
        assert_relative_eq!(d, n as f64 * 2f64.ln(), max_relative = 1e-13);
    }

    #[test]
    fn noise_estimate_cases() {
        let n = 10;
        let c: f64 = 0.3;
        let sse = n as f64 * c * c;
        assert_relative_eq!(
            estimate_noise_std(sse, n).unwrap(),
            c.abs() * (n as f64 / (n - 1) as f64).sqrt(),
            max_relative = 1e-14
        );
        assert_relative_eq!(estimate_noise_std(0.49, 2).unwrap(), 0.7, max_relative = 1e-14);
        assert_eq!(estimate_noise_std(0.0, 5), Err(InversionError::DegenerateNoise));
        assert!(estimate_noise_std(1.0, 1).is_err());
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let ((lo, hi), x, _, _) = golden_section(|x: f64| Ok::<_, ()>((x - 3.3).powi(2)), 1.0, 7.0, 1e-8).unwrap();
        assert!(lo <= 3.3 && 3.3 <= hi);
        assert!((x - 3.3).abs() < 1e-7);
    }

    #[test]
    fn fit_with_synthetic_objective() {
        let r =
            least_squares_fit_with(|d| Ok((d.ln() - 17f64.ln()).powi(2)), &prior(), &FitSettings::default()).unwrap();
        assert!((r.d_c_hat - 17.0).abs() < 17.0 * 1e-4);
        assert!(r.bracket.0 <= 17.0 && 17.0 <= r.bracket.1);
        assert!(!r.boundary_flag && !r.degenerate && !r.multimodal);
    }

    #[test]
    fn fit_flags_boundary_and_degenerate() {
        let r = least_squares_fit_with(Ok, &prior(), &FitSettings::default()).unwrap();
        assert!(r.boundary_flag);
        assert!((r.d_c_hat - 5.0).abs() < 5.0 * 1e-3);
        let flat = least_squares_fit_with(|_| Ok(0.0), &prior(), &FitSettings::default()).unwrap();
        assert!(flat.degenerate && flat.boundary_flag);
        assert_eq!(flat.d_c_hat, 5.0);
    }

    #[test]
    fn fit_flags_multimodal_and_takes_smallest() {
        // two equal minima at 10 and 30 on an exact grid
        let s = FitSettings {
            n_scan: 46,
            spacing: GridSpacing::Linear,
            ..Default::default()
        };
        let r = least_squares_fit_with(|d| Ok(((d - 10.0) * (d - 30.0)).powi(2)), &prior(), &s).unwrap();
        assert!(r.multimodal);
        assert!((r.d_c_hat - 10.0).abs() < 1e-2);
    }

    #[test]
    fn fit_fails_when_everything_fails() {
        let r = least_squares_fit_with(|d| Err(InversionError::NonFinite(d)), &prior(), &FitSettings::default());
        assert_eq!(r, Err(InversionError::FitFailed(64)));
    }

    #[test]
    fn flat_likelihood_gives_uniform_density() {
        let g = make_grid(&prior(), 50, GridSpacing::Log);
        let ll = vec![Some(-3.0); 50];
        let post = normalize_posterior(&g, &ll, prior(), prior().density(), 1.0).unwrap();
        for d in &post.normalized_density {
            assert_relative_eq!(*d, 1.0 / 45.0, max_relative = 1e-13);
        }
        let s = post.summary(0.95);
        assert_relative_eq!(s.mean, 27.5, max_relative = 1e-3);
        assert_relative_eq!(s.credible_interval.0, 5.0 + 0.025 * 45.0, max_relative = 1e-12);

        // trapezoid moments converge to the uniform ones on a fine grid
        let g = make_grid(&prior(), 1000, GridSpacing::Linear);
        let post = normalize_posterior(&g, &vec![Some(0.0); 1000], prior(), prior().density(), 1.0).unwrap();
        let s = post.summary(0.95);
        assert_relative_eq!(s.mean, 27.5, max_relative = 1e-12);
        assert_relative_eq!(s.std, 45.0 / 12f64.sqrt(), max_relative = 1e-5);
        assert_relative_eq!(s.credible_interval.0, 5.0 + 0.025 * 45.0, max_relative = 1e-12);
        assert_relative_eq!(s.credible_interval.1, 5.0 + 0.975 * 45.0, max_relative = 1e-12);
    }

    #[test]
    fn posterior_drops_failed_points_and_requires_survivors() {
        let g = make_grid(&prior(), 12, GridSpacing::Log);
        let mut ll: Vec<Option<f64>> = g.iter().map(|d| Some(-(d - 20.0).powi(2))).collect();
        ll[3] = None;
        ll[4] = Some(f64::NEG_INFINITY);
        let post = normalize_posterior(&g, &ll, prior(), prior().density(), 1.0).unwrap();
        assert_eq!(post.failed_points, 2);
        assert_eq!(post.grid.len(), 10);
        ll.iter_mut().take(6).for_each(|x| *x = None);
        assert!(matches!(
            normalize_posterior(&g, &ll, prior(), prior().density(), 1.0),
            Err(InversionError::PosteriorFailed { survivors: 6, .. })
        ));
    }

    #[test]
    fn prior_height_does_not_change_density() {
        let g = make_grid(&prior(), 80, GridSpacing::Log);
        let ll: Vec<Option<f64>> = g.iter().map(|d| Some(-1e5 - 3.0 * (d - 21.0).powi(2))).collect();
        let a = normalize_posterior(&g, &ll, prior(), prior().density(), 1.0).unwrap();
        let b = normalize_posterior(&g, &ll, prior(), 7.3 * prior().density(), 1.0).unwrap();
        assert_eq!(a.normalized_density, b.normalized_density);
        assert_relative_eq!(b.log_evidence - a.log_evidence, 7.3f64.ln(), max_relative = 1e-9);
    }

    #[test]
    fn symmetric_density_mean_equals_mode() {
        let p = PriorConfig::new(10.0, 30.0).unwrap();
        let g = make_grid(&p, 201, GridSpacing::Linear);
        let ll: Vec<Option<f64>> = g.iter().map(|d| Some(-0.5 * ((d - 20.0) / 1.5).powi(2))).collect();
        let post = normalize_posterior(&g, &ll, p, p.density(), 1.0).unwrap();
        let s = post.summary(0.95);
        assert!((s.mean - s.mode).abs() < 0.1);
        assert!((s.std - 1.5).abs() < 1e-3);
        let (lo, hi) = s.credible_interval;
        assert!((lo - (20.0 - 1.96 * 1.5)).abs() < 0.01 && (hi - (20.0 + 1.96 * 1.5)).abs() < 0.01);
    }

    #[test]
    fn huge_sse_does_not_overflow() {
        let g = make_grid(&prior(), 20, GridSpacing::Log);
        let ll: Vec<Option<f64>> = g
            .iter()
            .map(|d| Some(log_likelihood_from_sse(1e6 * (1.0 + (d - 20.0).abs()), 5000, 1e-3)))
            .collect();
        let post = normalize_posterior(&g, &ll, prior(), prior().density(), 1e-3).unwrap();
        assert!(post.normalized_density.iter().all(|d| d.is_finite() && *d >= 0.0));
        assert!((trapezoid(&post.grid, &post.normalized_density) - 1.0).abs() < 1e-8);
        assert!(post.log_evidence.is_finite());
    }

    #[test]
    fn chain_is_deterministic_and_in_support() {
        let p = prior();
        let s = McmcSettings::defaults_for(&p, 3000, 42);
        let ll = |d: f64| Ok(-0.5 * ((d - 20.0) / 3.0).powi(2));
        let a = metropolis(ll, &p, &s).unwrap();
        let b = metropolis(ll, &p, &s).unwrap();
        assert_eq!(a, b);
        assert!(a.samples.iter().all(|x| p.contains(*x)));
        assert!(a.acceptance_rate > 0.0 && a.acceptance_rate < 1.0);
        assert!(!a.acceptance_warning);
        let c = metropolis(ll, &p, &McmcSettings { seed: 43, ..s }).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn chain_recovers_gaussian_moments() {
        let p = prior();
        let s = McmcSettings {
            proposal_std: 6.0,
            initial: Some(20.0),
            ..McmcSettings::defaults_for(&p, 60_000, 7)
        };
        let chain = metropolis(|d| Ok(-0.5 * ((d - 20.0) / 2.5).powi(2)), &p, &s).unwrap();
        let sm = chain.summary(0.95).unwrap();
        let mcse = sm.mcse.unwrap();
        assert!((sm.mean - 20.0).abs() < 4.0 * mcse, "{} ± {}", sm.mean, mcse);
        assert!((sm.std - 2.5).abs() < 0.1);
    }

    #[test]
    fn narrow_proposal_sets_warning() {
        let p = prior();
        let s = McmcSettings {
            proposal_std: 400.0,
            ..McmcSettings::defaults_for(&p, 2000, 1)
        };
        let chain = metropolis(|d| Ok(-0.5 * ((d - 20.0) / 0.5).powi(2)), &p, &s).unwrap();
        assert!(chain.acceptance_warning);
    }

    #[test]
    fn mcmc_settings_validation() {
        let p = prior();
        let ok = McmcSettings::defaults_for(&p, 100, 0);
        let ll = |_: f64| Ok(0.0);
        assert!(metropolis(ll, &p, &McmcSettings { burn_in: 100, ..ok }).is_err());
        assert!(metropolis(
            ll,
            &p,
            &McmcSettings {
                proposal_std: 0.0,
                ..ok
            }
        )
        .is_err());
        assert!(metropolis(
            ll,
            &p,
            &McmcSettings {
                initial: Some(1.0),
                ..ok
            }
        )
        .is_err());
        assert!(matches!(
            metropolis(|_| Ok(f64::NEG_INFINITY), &p, &ok),
            Err(InversionError::BadInitialPoint(_))
        ));
    }

    #[test]
    fn empty_chain_summary_errors() {
        let chain = McmcChain {
            samples: vec![1.0],
            log_posts: vec![0.0],
            acceptance_rate: 0.5,
            seed: 0,
            proposal_std: 1.0,
            burn_in: 1,
            thin: 1,
            failed_proposals: 0,
            acceptance_warning: false,
        };
        assert_eq!(chain.summary(0.95), Err(InversionError::EmptyChain));
    }

    #[test]
    fn ess_of_independent_draws_is_near_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..4000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ess = effective_sample_size(&x);
        assert!(ess > 3000.0, "{ess}");
        // AR(1) with ρ = 0.9 has ESS ≈ n(1−ρ)/(1+ρ)
        let mut y = vec![0.0; 20000];
        for i in 1..y.len() {
            let e: f64 = StandardNormal.sample(&mut rng);
            y[i] = 0.9 * y[i - 1] + e;
        }
        let ess = effective_sample_size(&y);
        let expected = 20000.0 * 0.1 / 1.9;
        assert!((ess / expected - 1.0).abs() < 0.3, "{ess} vs {expected}");
    }

    #[test]
    fn steady_forward_model_gives_zero_response() {
        let model = ForwardModel {
            forcing: Forcing::constant(1.0),
            solver: SolverConfig {
                t_end: 2.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = model.response(35.0, &[0.5, 1.0, 1.5]).unwrap();
        assert_eq!(r, vec![0.0; 3]);
    }

    #[test]
    fn forward_errors_carry_d_c() {
        let model = ForwardModel {
            solver: SolverConfig {
                t_end: 1.0,
                ..Default::default()
            },
            ..Default::default()
        };
        match model.response(20.0, &[2.0]) {
            Err(InversionError::Forward { d_c, .. }) => assert_eq!(d_c, 20.0),
            other => panic!("{other:?}"),
        }
    }
}
