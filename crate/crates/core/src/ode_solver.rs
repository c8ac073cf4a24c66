//! Time integration of the slider system.
//!
//! The default integrator is the Dormand–Prince 5(4) pair with a PI step-size
//! controller and a hard `max_step` cap. Output is produced on a uniform grid
//! by cubic Hermite interpolation inside accepted steps. A classical fixed-step
//! RK4 integrator serves as an independent reference.
//!
//! Jumps in the load-point velocity split the time span into segments; each
//! segment is integrated separately and the acceleration is reset to the
//! post-jump slip-rate derivative at the restart.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rsf_model::{
    rhs_under_load, rhs_with, Forcing, ModelError, RhsOptions, RsfParams, SliderRates, SliderState,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("step size underflow at t = {t} (h = {h}); the problem is too stiff for the explicit integrator")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("step limit of {limit} reached at t = {t}")]
    TooManySteps { t: f64, limit: usize },
    #[error("model domain error at t = {t}: {source}")]
    Domain {
        t: f64,
        #[source]
        source: ModelError,
    },
    #[error("requested time {t} outside trajectory span [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
}

impl SolverError {
    /// Last time the integration reached, when the error carries one.
    pub fn time(&self) -> Option<f64> {
        match self {
            SolverError::StepSizeUnderflow { t, .. }
            | SolverError::TooManySteps { t, .. }
            | SolverError::Domain { t, .. } => Some(*t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Adaptive,
    /// Classical RK4 with step `max_step`.
    FixedRk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// s
    pub t_start: f64,
    /// s
    pub t_end: f64,
    /// Spacing of the reported grid (s).
    pub output_dt: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Upper bound on any step (s); the step itself for [`Method::FixedRk4`].
    pub max_step: f64,
    pub method: Method,
    pub rhs: RhsOptions,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            t_start: 0.0,
            t_end: 50.0,
            output_dt: 1e-2,
            abs_tol: 1e-10,
            rel_tol: 1e-6,
            max_step: 1e-3,
            method: Method::Adaptive,
            rhs: RhsOptions::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: String| Err(SolverError::InvalidConfig(msg));
        if !self.t_start.is_finite() || !self.t_end.is_finite() || self.t_end < self.t_start {
            return bad(format!("need t_end >= t_start, got [{}, {}]", self.t_start, self.t_end));
        }
        if !(self.output_dt > 0.0) || !self.output_dt.is_finite() {
            return bad(format!("output_dt must be > 0, got {}", self.output_dt));
        }
        if !(self.max_step > 0.0) || !self.max_step.is_finite() {
            return bad(format!("max_step must be > 0, got {}", self.max_step));
        }
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return bad(format!(
                "tolerances must be > 0, got atol={} rtol={}",
                self.abs_tol, self.rel_tol
            ));
        }
        Ok(())
    }

    /// The uniform reporting grid `t_start + k·output_dt` up to `t_end`.
    pub fn output_times(&self) -> Vec<f64> {
        output_grid(self.t_start, self.t_end, self.output_dt)
    }
}

pub(crate) fn output_grid(t_start: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let n = ((t_end - t_start) / dt + 1e-9).floor() as usize;
    (0..=n).map(|k| t_start + k as f64 * dt).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

/// States on a strictly increasing time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SliderState>,
    /// Right-hand side at each reported state; absent for trajectories read
    /// back from disk.
    pub rates: Option<Vec<SliderRates>>,
    pub stats: SolverStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, pick: impl Fn(&SliderState) -> f64) -> Vec<f64> {
        self.states.iter().map(pick).collect()
    }

    pub fn accelerations(&self) -> Vec<f64> {
        self.column(|s| s.a)
    }

    pub fn friction(&self) -> Vec<f64> {
        self.column(|s| s.mu)
    }

    pub fn last(&self) -> Option<&SliderState> {
        self.states.last()
    }
}

const STEP_LIMIT: usize = 50_000_000;

struct System<'a> {
    params: &'a RsfParams,
    forcing: &'a Forcing,
    opts: RhsOptions,
}

impl System<'_> {
    fn eval(&self, t: f64, y: &[f64; 4], seg: (f64, f64)) -> Result<[f64; 4], SolverError> {
        let load = self.forcing.load_point_on_interval(t, seg.0, seg.1);
        rhs_under_load(t, &SliderState::from_array(*y), self.params, load, self.opts)
            .map(SliderRates::to_array)
            .map_err(|source| SolverError::Domain { t, source })
    }

    fn rates_at(&self, t: f64, s: &SliderState) -> Result<SliderRates, SolverError> {
        rhs_with(t, s, self.params, self.forcing, self.opts).map_err(|source| SolverError::Domain { t, source })
    }

    fn check(&self, t: f64, y: &[f64; 4]) -> Result<(), SolverError> {
        SliderState::from_array(*y)
            .validate()
            .map_err(|source| SolverError::Domain { t, source })
    }

    /// Segment boundaries: the span split at interior forcing discontinuities.
    fn segments(&self, t_start: f64, t_end: f64) -> Vec<(f64, f64)> {
        let mut cuts = vec![t_start];
        cuts.extend(
            self.forcing
                .discontinuities()
                .into_iter()
                .filter(|&tb| tb > t_start && tb < t_end),
        );
        cuts.push(t_end);
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// State to restart from at a discontinuity: same μ, θ, V; `a` reset to
    /// the post-jump `V̇`.
    fn restart(&self, t: f64, y: [f64; 4], seg: (f64, f64)) -> Result<[f64; 4], SolverError> {
        let f = self.eval(t, &y, seg)?;
        Ok([y[0], y[1], y[2], f[2]])
    }
}

fn hermite(y0: &[f64; 4], f0: &[f64; 4], y1: &[f64; 4], f1: &[f64; 4], h: f64, s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    std::array::from_fn(|i| h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i])
}

/// Emits states at requested output times as the integration advances.
struct Recorder<'a> {
    out_times: &'a [f64],
    next: usize,
    states: Vec<SliderState>,
}

impl<'a> Recorder<'a> {
    fn new(out_times: &'a [f64]) -> Self {
        Self {
            out_times,
            next: 0,
            states: Vec::with_capacity(out_times.len()),
        }
    }

    fn pending(&self) -> Option<f64> {
        self.out_times.get(self.next).copied()
    }

    fn push(&mut self, y: [f64; 4]) {
        self.states.push(SliderState::from_array(y));
        self.next += 1;
    }

    /// Record every pending output time in `[t0, t1)` (or `[t0, t1]` when
    /// `inclusive`) from a step's Hermite interpolant.
    #[allow(clippy::too_many_arguments)]
    fn fill(&mut self, t0: f64, y0: &[f64; 4], f0: &[f64; 4], t1: f64, y1: &[f64; 4], f1: &[f64; 4], inclusive: bool) {
        let h = t1 - t0;
        while let Some(tau) = self.pending() {
            if tau > t1 || (!inclusive && tau == t1) {
                break;
            }
            if tau == t1 {
                self.push(*y1);
            } else if tau == t0 {
                self.push(*y0);
            } else {
                self.push(hermite(y0, f0, y1, f1, h, (tau - t0) / h));
            }
        }
    }
}

// Dormand–Prince 5(4) coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy(y: &[f64; 4], h: f64, terms: &[(f64, &[f64; 4])]) -> [f64; 4] {
    std::array::from_fn(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

/// One Dormand–Prince trial step; returns the 5th-order solution, its
/// derivative (FSAL) and the scaled RMS error.
fn dopri_step(
    sys: &System,
    seg: (f64, f64),
    t: f64,
    y: &[f64; 4],
    k1: &[f64; 4],
    h: f64,
    cfg: &SolverConfig,
) -> Result<([f64; 4], [f64; 4], f64), SolverError> {
    let k2 = sys.eval(t + C2 * h, &axpy(y, h, &[(A21, k1)]), seg)?;
    let k3 = sys.eval(t + C3 * h, &axpy(y, h, &[(A31, k1), (A32, &k2)]), seg)?;
    let k4 = sys.eval(t + C4 * h, &axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]), seg)?;
    let k5 = sys.eval(
        t + C5 * h,
        &axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        seg,
    )?;
    let k6 = sys.eval(
        t + h,
        &axpy(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        seg,
    )?;
    let y_new = axpy(y, h, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
    let k7 = sys.eval(t + h, &y_new, seg)?;
    let mut sum = 0.0;
    for i in 0..4 {
        let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y_new[i].abs());
        sum += (e / sc).powi(2);
    }
    Ok((y_new, k7, (sum / 4.0).sqrt()))
}

fn initial_step(
    sys: &System,
    seg: (f64, f64),
    y: &[f64; 4],
    f0: &[f64; 4],
    cfg: &SolverConfig,
) -> Result<f64, SolverError> {
    let scale = |i: usize| cfg.abs_tol + cfg.rel_tol * y[i].abs();
    let norm = |v: &[f64; 4]| ((0..4).map(|i| (v[i] / scale(i)).powi(2)).sum::<f64>() / 4.0).sqrt();
    let d0 = norm(y);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(cfg.max_step).min(seg.1 - seg.0);
    let y1 = axpy(y, h0, &[(1.0, f0)]);
    let f1 = sys.eval(seg.0 + h0, &y1, seg)?;
    let diff: [f64; 4] = std::array::from_fn(|i| f1[i] - f0[i]);
    let d2 = norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(cfg.max_step))
}

fn adaptive_segment(
    sys: &System,
    seg: (f64, f64),
    y_start: [f64; 4],
    cfg: &SolverConfig,
    rec: &mut Recorder,
    last_segment: bool,
    stats: &mut SolverStats,
) -> Result<[f64; 4], SolverError> {
    const SAFETY: f64 = 0.9;
    const BETA: f64 = 0.04;
    const EXPO: f64 = 0.2 - BETA * 0.75;
    const FAC_MIN: f64 = 0.2;
    const FAC_MAX: f64 = 10.0;

    let (t0, t1) = seg;
    let mut t = t0;
    let mut y = y_start;
    let mut f = sys.eval(t, &y, seg)?;
    stats.rhs_evals += 1;
    rec.fill(t, &y, &f, t, &y, &f, true);
    if t1 <= t0 {
        return Ok(y);
    }

    let mut h = initial_step(sys, seg, &y, &f, cfg)?;
    stats.rhs_evals += 1;
    let mut err_old: f64 = 1e-4;
    let mut rejected_last = false;
    let min_step = 1e-14 * t1.abs().max(1.0);

    loop {
        if stats.steps + stats.rejected > STEP_LIMIT {
            return Err(SolverError::TooManySteps { t, limit: STEP_LIMIT });
        }
        let remaining = t1 - t;
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        if h < min_step {
            return Err(SolverError::StepSizeUnderflow { t, h });
        }
        let (y_new, f_new, err) = dopri_step(sys, seg, t, &y, &f, h, cfg)?;
        stats.rhs_evals += 6;
        if err.is_finite() && err <= 1.0 {
            let t_new = if last { t1 } else { t + h };
            sys.check(t_new, &y_new)?;
            rec.fill(t, &y, &f, t_new, &y_new, &f_new, last && last_segment);
            stats.steps += 1;
            t = t_new;
            y = y_new;
            f = f_new;
            if last {
                return Ok(y);
            }
            let err = err.max(1e-10);
            let mut fac = err.powf(EXPO) / err_old.powf(BETA) / SAFETY;
            fac = fac.clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            if rejected_last {
                h_new = h_new.min(h);
            }
            err_old = err;
            rejected_last = false;
            h = h_new.min(cfg.max_step);
        } else {
            stats.rejected += 1;
            rejected_last = true;
            let fac = if err.is_finite() {
                (err.powf(0.2) / SAFETY).min(1.0 / FAC_MIN)
            } else {
                10.0
            };
            h /= fac;
        }
    }
}

fn rk4_segment(
    sys: &System,
    seg: (f64, f64),
    y_start: [f64; 4],
    dt: f64,
    rec: &mut Recorder,
    last_segment: bool,
    stats: &mut SolverStats,
) -> Result<[f64; 4], SolverError> {
    let (t0, t1) = seg;
    let mut y = y_start;
    let mut t = t0;
    let mut f = sys.eval(t, &y, seg)?;
    stats.rhs_evals += 1;
    rec.fill(t, &y, &f, t, &y, &f, true);
    if t1 <= t0 {
        return Ok(y);
    }
    let n = ((t1 - t0) / dt - 1e-9).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    for i in 0..n {
        let k1 = f;
        let k2 = sys.eval(t + 0.5 * h, &axpy(&y, 0.5 * h, &[(1.0, &k1)]), seg)?;
        let k3 = sys.eval(t + 0.5 * h, &axpy(&y, 0.5 * h, &[(1.0, &k2)]), seg)?;
        let t_new = if i + 1 == n { t1 } else { t0 + (i + 1) as f64 * h };
        let k4 = sys.eval(t_new, &axpy(&y, h, &[(1.0, &k3)]), seg)?;
        let y_new = axpy(&y, h / 6.0, &[(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)]);
        sys.check(t_new, &y_new)?;
        let f_new = sys.eval(t_new, &y_new, seg)?;
        stats.rhs_evals += 4;
        stats.steps += 1;
        rec.fill(t, &y, &f, t_new, &y_new, &f_new, i + 1 == n && last_segment);
        t = t_new;
        y = y_new;
        f = f_new;
    }
    Ok(y)
}

enum Stepper {
    Adaptive(SolverConfig),
    Rk4(f64),
}

#[allow(clippy::too_many_arguments)]
fn drive(
    p: &RsfParams,
    f: &Forcing,
    y0: SliderState,
    t_start: f64,
    t_end: f64,
    output_dt: f64,
    opts: RhsOptions,
    stepper: Stepper,
) -> Result<Trajectory, SolverError> {
    p.validate()
        .map_err(|source| SolverError::Domain { t: t_start, source })?;
    f.validate()
        .map_err(|source| SolverError::Domain { t: t_start, source })?;
    y0.validate()
        .map_err(|source| SolverError::Domain { t: t_start, source })?;
    let sys = System {
        params: p,
        forcing: f,
        opts,
    };
    let out_times = output_grid(t_start, t_end, output_dt);
    let mut rec = Recorder::new(&out_times);
    let mut stats = SolverStats::default();
    let segments = sys.segments(t_start, t_end);
    let mut y = y0.to_array();
    for (i, &seg) in segments.iter().enumerate() {
        if i > 0 {
            y = sys.restart(seg.0, y, seg)?;
        }
        let last = i + 1 == segments.len();
        y = match stepper {
            Stepper::Adaptive(ref cfg) => adaptive_segment(&sys, seg, y, cfg, &mut rec, last, &mut stats)?,
            Stepper::Rk4(dt) => rk4_segment(&sys, seg, y, dt, &mut rec, last, &mut stats)?,
        };
    }
    debug_assert_eq!(rec.states.len(), out_times.len());
    let rates = out_times
        .iter()
        .zip(&rec.states)
        .map(|(&t, s)| sys.rates_at(t, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Trajectory {
        times: out_times.clone(),
        states: rec.states,
        rates: Some(rates),
        stats,
    })
}

/// Integrate from `y0` over `[cfg.t_start, cfg.t_end]`, reporting every
/// `cfg.output_dt`.
pub fn integrate(p: &RsfParams, f: &Forcing, y0: SliderState, cfg: &SolverConfig) -> Result<Trajectory, SolverError> {
    cfg.validate()?;
    let stepper = match cfg.method {
        Method::Adaptive => Stepper::Adaptive(*cfg),
        Method::FixedRk4 => Stepper::Rk4(cfg.max_step),
    };
    drive(p, f, y0, cfg.t_start, cfg.t_end, cfg.output_dt, cfg.rhs, stepper)
}

/// Classical RK4 with step `dt` (shrunk so it divides each segment evenly),
/// reporting every `output_dt` over `t_span`.
pub fn integrate_fixed_rk4(
    p: &RsfParams,
    f: &Forcing,
    y0: SliderState,
    dt: f64,
    t_span: (f64, f64),
    output_dt: f64,
) -> Result<Trajectory, SolverError> {
    let cfg = SolverConfig {
        t_start: t_span.0,
        t_end: t_span.1,
        output_dt,
        max_step: dt,
        method: Method::FixedRk4,
        ..SolverConfig::default()
    };
    integrate(p, f, y0, &cfg)
}

/// Interpolate the trajectory at arbitrary times inside its span.
///
/// Uses cubic Hermite interpolation with the stored rates when available,
/// otherwise four-point Lagrange interpolation. Grid times return the stored
/// state exactly.
pub fn sample_at(traj: &Trajectory, times: &[f64]) -> Result<Vec<SliderState>, SolverError> {
    let n = traj.len();
    let (start, end) = match (traj.times.first(), traj.times.last()) {
        (Some(&s), Some(&e)) => (s, e),
        _ => return Err(SolverError::InvalidConfig("empty trajectory".into())),
    };
    let slack = 1e-9 * (end - start).abs().max(1.0);
    times
        .iter()
        .map(|&t| {
            if !(t >= start - slack && t <= end + slack) {
                return Err(SolverError::OutOfRange { t, start, end });
            }
            // index of first grid time >= t
            let j = traj.times.partition_point(|&x| x < t);
            if j < n && traj.times[j] == t {
                return Ok(traj.states[j]);
            }
            if j == 0 {
                return Ok(traj.states[0]);
            }
            if j == n {
                return Ok(traj.states[n - 1]);
            }
            let i = j - 1;
            let (t0, t1) = (traj.times[i], traj.times[j]);
            let y = match &traj.rates {
                Some(rates) => hermite(
                    &traj.states[i].to_array(),
                    &rates[i].to_array(),
                    &traj.states[j].to_array(),
                    &rates[j].to_array(),
                    t1 - t0,
                    (t - t0) / (t1 - t0),
                ),
                None => lagrange4(traj, i, t),
            };
            Ok(SliderState::from_array(y))
        })
        .collect()
}

fn lagrange4(traj: &Trajectory, i: usize, t: f64) -> [f64; 4] {
    let n = traj.len();
    if n < 4 {
        // linear fallback for tiny trajectories
        let (t0, t1) = (traj.times[i], traj.times[i + 1]);
        let s = (t - t0) / (t1 - t0);
        let (a, b) = (traj.states[i].to_array(), traj.states[i + 1].to_array());
        return std::array::from_fn(|c| a[c] + s * (b[c] - a[c]));
    }
    let lo = i.saturating_sub(1).min(n - 4);
    let idx: Vec<usize> = (lo..lo + 4).collect();
    let mut out = [0.0; 4];
    for &k in &idx {
        let mut w = 1.0;
        for &m in &idx {
            if m != k {
                w *= (t - traj.times[m]) / (traj.times[k] - traj.times[m]);
            }
        }
        let y = traj.states[k].to_array();
        for c in 0..4 {
            out[c] += w * y[c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_cfg(t_end: f64) -> SolverConfig {
        SolverConfig {
            t_end,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn output_grid_matches_reference_count() {
        assert_eq!(SolverConfig::default().output_times().len(), 5001);
        assert_eq!(output_grid(0.0, 0.0, 0.01), vec![0.0]);
    }

    #[test]
    fn zero_length_span_returns_initial_state() {
        let p = RsfParams::default();
        let y0 = p.steady_state();
        let traj = integrate(&p, &Forcing::default(), y0, &short_cfg(0.0)).unwrap();
        assert_eq!(traj.times, vec![0.0]);
        assert_eq!(traj.states, vec![y0]);
    }

    #[test]
    fn steady_state_stays_put() {
        let p = RsfParams::default();
        let y0 = p.steady_state();
        for traj in [
            integrate(&p, &Forcing::constant(1.0), y0, &short_cfg(5.0)).unwrap(),
            integrate_fixed_rk4(&p, &Forcing::constant(1.0), y0, 1e-3, (0.0, 5.0), 0.01).unwrap(),
        ] {
            assert!(traj.states.iter().all(|s| *s == y0));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let p = RsfParams::default();
        let y0 = p.steady_state();
        let bad = SolverConfig {
            t_end: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            integrate(&p, &Forcing::default(), y0, &bad),
            Err(SolverError::InvalidConfig(_))
        ));
        let bad = SolverConfig {
            rel_tol: 0.0,
            ..Default::default()
        };
        assert!(integrate(&p, &Forcing::default(), y0, &bad).is_err());
    }

    #[test]
    fn overflow_reports_domain_error_with_time() {
        // Very small d_c with a large velocity step drives an instability.
        let p = RsfParams {
            d_c: 0.05,
            k_dprime: 0.0,
            ..RsfParams::default()
        };
        let f = Forcing::Step {
            v_before: 1.0,
            v_after: 1e4,
            step_time: 0.5,
        };
        let err = integrate(&p, &f, p.steady_state(), &short_cfg(20.0)).unwrap_err();
        assert!(err.time().is_some(), "{err}");
    }

    #[test]
    fn sample_at_grid_points_is_exact() {
        let p = RsfParams::default();
        let traj = integrate(&p, &Forcing::default(), p.steady_state(), &short_cfg(1.0)).unwrap();
        let s = sample_at(&traj, &traj.times).unwrap();
        assert_eq!(s, traj.states);
        assert!(matches!(sample_at(&traj, &[1.5]), Err(SolverError::OutOfRange { .. })));
    }

    #[test]
    fn sample_at_constant_midpoint() {
        let p = RsfParams::default();
        let y0 = p.steady_state();
        let mut traj = integrate(&p, &Forcing::constant(1.0), y0, &short_cfg(0.1)).unwrap();
        assert_eq!(sample_at(&traj, &[0.055]).unwrap()[0], y0);
        traj.rates = None;
        let s = sample_at(&traj, &[0.055]).unwrap()[0];
        for (x, y) in s.to_array().iter().zip(y0.to_array()) {
            assert!((x - y).abs() <= 1e-14 * y.abs());
        }
    }

    #[test]
    fn step_restart_resets_acceleration() {
        let p = RsfParams::default();
        let f = Forcing::Step {
            v_before: 1.0,
            v_after: 10.0,
            step_time: 1.0,
        };
        let traj = integrate(&p, &f, p.steady_state(), &short_cfg(2.0)).unwrap();
        let k = traj.times.iter().position(|&t| t == 1.0).unwrap();
        let rates = traj.rates.as_ref().unwrap();
        assert_eq!(traj.states[k - 1], p.steady_state());
        assert!((traj.states[k].a - rates[k].dv).abs() < 1e-9 * rates[k].dv.abs());
        assert!(traj.states[k].a > 1.0);
    }
}
