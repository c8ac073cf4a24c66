//! Rate-and-state friction physics for a spring–slider–damper fault patch.
//!
//! Everything here works in micro units: slip in μm, time in s, slip rate in
//! μm/s and slip acceleration in μm/s². Stiffness and damping arrive already
//! normalized by normal stress (`k′ = E/(lσ)`, `k″ = η/σ`); use
//! [`PhysicalConstants`] to derive them from SI inputs.
//!
//! The state law is the aging law, `θ̇ = 1 − θV/d_c`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("slip rate is not finite at mu = {mu}, theta = {theta} (exp overflow)")]
    SlipRateOverflow { mu: f64, theta: f64 },
    #[error("state variable must be positive, got theta = {theta}")]
    NonPositiveTheta { theta: f64 },
    #[error("non-finite derivative at t = {t}")]
    NonFiniteRate { t: f64 },
    #[error("stiffness/damping derived from physical constants ({derived}) disagrees with {name} = {given}")]
    InconsistentConstants {
        name: &'static str,
        derived: f64,
        given: f64,
    },
}

fn require(cond: bool, name: &'static str, value: f64, reason: &'static str) -> Result<(), ModelError> {
    if cond && value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter { name, value, reason })
    }
}

/// Friction-law constants together with the normalized spring and damper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsfParams {
    /// Steady-state friction coefficient at the reference slip rate.
    pub mu0: f64,
    /// Reference slip rate (μm/s).
    pub v0: f64,
    /// Direct-effect constant A.
    pub a_coef: f64,
    /// Evolution-effect constant B.
    pub b_coef: f64,
    /// Critical slip distance (μm).
    pub d_c: f64,
    /// Effective stiffness k′ (1/μm).
    pub k_prime: f64,
    /// Effective radiation damping k″ (s/μm).
    pub k_dprime: f64,
}

impl Default for RsfParams {
    fn default() -> Self {
        Self {
            mu0: 0.6,
            v0: 1.0,
            a_coef: 0.011,
            b_coef: 0.014,
            d_c: 20.0,
            k_prime: 1e-2,
            k_dprime: 1e-7,
        }
    }
}

impl RsfParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        require(self.mu0.is_finite(), "mu0", self.mu0, "must be finite")?;
        require(self.v0 > 0.0, "v0", self.v0, "must be > 0")?;
        require(self.a_coef > 0.0, "a_coef", self.a_coef, "must be > 0")?;
        require(self.b_coef > 0.0, "b_coef", self.b_coef, "must be > 0")?;
        require(self.d_c > 0.0, "d_c", self.d_c, "must be > 0")?;
        require(self.k_prime >= 0.0, "k_prime", self.k_prime, "must be >= 0")?;
        require(self.k_dprime >= 0.0, "k_dprime", self.k_dprime, "must be >= 0")?;
        Ok(())
    }

    pub fn with_d_c(mut self, d_c: f64) -> Self {
        self.d_c = d_c;
        self
    }

    /// Friction coefficient for a given slip rate and state (the forward law).
    pub fn friction(&self, v: f64, theta: f64) -> f64 {
        self.mu0 + self.a_coef * (v / self.v0).ln() + self.b_coef * (self.v0 * theta / self.d_c).ln()
    }

    /// Steady sliding at `v0`: `μ = μ0`, `θ = d_c/V0`, `V = V0`, `a = 0`.
    pub fn steady_state(&self) -> SliderState {
        SliderState {
            mu: self.mu0,
            theta: self.d_c / self.v0,
            v: self.v0,
            a: 0.0,
        }
    }
}

/// SI-unit physical constants from which `k′` and `k″` are derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConstants {
    /// Elastic modulus E (Pa).
    pub elastic_modulus: f64,
    /// Fault length l (m).
    pub fault_length: f64,
    /// Normal stress σ (Pa).
    pub normal_stress: f64,
    /// Radiation damping coefficient η (Pa·s/m).
    pub damping_coef: f64,
}

const MICRO: f64 = 1e-6;

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            elastic_modulus: 5e10,
            fault_length: 3e-2,
            normal_stress: 200e6,
            damping_coef: 20e6,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<(), ModelError> {
        require(
            self.elastic_modulus > 0.0,
            "elastic_modulus",
            self.elastic_modulus,
            "must be > 0",
        )?;
        require(
            self.fault_length > 0.0,
            "fault_length",
            self.fault_length,
            "must be > 0",
        )?;
        require(
            self.normal_stress > 0.0,
            "normal_stress",
            self.normal_stress,
            "must be > 0",
        )?;
        require(
            self.damping_coef > 0.0,
            "damping_coef",
            self.damping_coef,
            "must be > 0",
        )?;
        Ok(())
    }

    /// `E/(lσ)` converted from 1/m to 1/μm.
    pub fn k_prime(&self) -> f64 {
        self.elastic_modulus / (self.fault_length * self.normal_stress) * MICRO
    }

    /// `η/σ` converted from s/m to s/μm.
    pub fn k_dprime(&self) -> f64 {
        self.damping_coef / self.normal_stress * MICRO
    }

    /// Replace `k′` and `k″` of `base` with the derived values.
    pub fn apply_to(&self, base: RsfParams) -> RsfParams {
        RsfParams {
            k_prime: self.k_prime(),
            k_dprime: self.k_dprime(),
            ..base
        }
    }

    /// Check that `params` carries the stiffness and damping these constants imply.
    pub fn check_consistent(&self, params: &RsfParams, rel_tol: f64) -> Result<(), ModelError> {
        let close = |a: f64, b: f64| (a - b).abs() <= rel_tol * a.abs().max(b.abs());
        if !close(self.k_prime(), params.k_prime) {
            return Err(ModelError::InconsistentConstants {
                name: "k_prime",
                derived: self.k_prime(),
                given: params.k_prime,
            });
        }
        if !close(self.k_dprime(), params.k_dprime) {
            return Err(ModelError::InconsistentConstants {
                name: "k_dprime",
                derived: self.k_dprime(),
                given: params.k_dprime,
            });
        }
        Ok(())
    }
}

/// The four integrated quantities of the slider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliderState {
    pub mu: f64,
    /// State variable (s).
    pub theta: f64,
    /// Slip rate (μm/s).
    pub v: f64,
    /// Slip acceleration (μm/s²).
    pub a: f64,
}

impl SliderState {
    pub fn to_array(self) -> [f64; 4] {
        [self.mu, self.theta, self.v, self.a]
    }

    pub fn from_array(y: [f64; 4]) -> Self {
        Self {
            mu: y[0],
            theta: y[1],
            v: y[2],
            a: y[3],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.theta > 0.0) {
            return Err(ModelError::NonPositiveTheta { theta: self.theta });
        }
        require(self.v > 0.0, "v", self.v, "slip rate must be > 0")?;
        require(self.mu.is_finite(), "mu", self.mu, "must be finite")?;
        require(self.a.is_finite(), "a", self.a, "must be finite")?;
        Ok(())
    }
}

/// Time derivative of a [`SliderState`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SliderRates {
    pub dmu: f64,
    pub dtheta: f64,
    pub dv: f64,
    pub da: f64,
}

impl SliderRates {
    pub fn to_array(self) -> [f64; 4] {
        [self.dmu, self.dtheta, self.dv, self.da]
    }
}

/// Load-point velocity history `V_l(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Forcing {
    /// `V_l = baseline + amplitude·exp(−t/decay_time)·sin(t/oscillation_time)`.
    DecayingSinusoid {
        baseline: f64,
        amplitude: f64,
        decay_time: f64,
        oscillation_time: f64,
    },
    /// `v_before` until `step_time`, `v_after` from then on.
    Step {
        v_before: f64,
        v_after: f64,
        step_time: f64,
    },
}

impl Default for Forcing {
    /// Decaying sinusoid with the 0.1 s oscillation divisor of the reference
    /// implementation (period ≈ 0.63 s).
    fn default() -> Self {
        Forcing::DecayingSinusoid {
            baseline: 1.0,
            amplitude: 1.0,
            decay_time: 20.0,
            oscillation_time: 0.1,
        }
    }
}

impl Forcing {
    pub fn constant(v: f64) -> Self {
        Forcing::Step {
            v_before: v,
            v_after: v,
            step_time: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            Forcing::DecayingSinusoid {
                baseline,
                amplitude,
                decay_time,
                oscillation_time,
            } => {
                require(baseline.is_finite(), "baseline", baseline, "must be finite")?;
                require(amplitude.is_finite(), "amplitude", amplitude, "must be finite")?;
                require(decay_time > 0.0, "decay_time", decay_time, "must be > 0")?;
                require(
                    oscillation_time > 0.0,
                    "oscillation_time",
                    oscillation_time,
                    "must be > 0",
                )?;
            }
            Forcing::Step {
                v_before,
                v_after,
                step_time,
            } => {
                require(v_before.is_finite(), "v_before", v_before, "must be finite")?;
                require(v_after.is_finite(), "v_after", v_after, "must be finite")?;
                require(step_time.is_finite(), "step_time", step_time, "must be finite")?;
            }
        }
        Ok(())
    }

    /// `(V_l(t), dV_l/dt(t))`, both analytic.
    pub fn load_point(&self, t: f64) -> (f64, f64) {
        match *self {
            Forcing::DecayingSinusoid {
                baseline,
                amplitude,
                decay_time,
                oscillation_time,
            } => {
                let env = amplitude * (-t / decay_time).exp();
                let (s, c) = (t / oscillation_time).sin_cos();
                (baseline + env * s, -env / decay_time * s + env / oscillation_time * c)
            }
            Forcing::Step {
                v_before,
                v_after,
                step_time,
            } => {
                if t < step_time {
                    (v_before, 0.0)
                } else {
                    (v_after, 0.0)
                }
            }
        }
    }

    /// Like [`Forcing::load_point`], but a jump is resolved to the side of it
    /// on which the interval `[lo, hi]` lies.
    pub fn load_point_on_interval(&self, t: f64, lo: f64, hi: f64) -> (f64, f64) {
        match *self {
            Forcing::Step { step_time, .. } if t == step_time => self.load_point(0.5 * (lo + hi)),
            _ => self.load_point(t),
        }
    }

    /// Times at which `V_l` jumps; integrators restart there.
    pub fn discontinuities(&self) -> Vec<f64> {
        match *self {
            Forcing::Step {
                v_before,
                v_after,
                step_time,
            } if v_before != v_after => vec![step_time],
            _ => Vec::new(),
        }
    }
}

/// `V = V0·exp((μ − μ0 − B·ln(V0θ/d_c))/A)`.
pub fn slip_rate(mu: f64, theta: f64, p: &RsfParams) -> Result<f64, ModelError> {
    if !(theta > 0.0) {
        return Err(ModelError::NonPositiveTheta { theta });
    }
    let exponent = (mu - p.mu0 - p.b_coef * (p.v0 * theta / p.d_c).ln()) / p.a_coef;
    let v = p.v0 * exponent.exp();
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ModelError::SlipRateOverflow { mu, theta })
    }
}

/// Aging-law `(θ̇, θ̈)` with `θ̈ = −θ̇·V/d_c`.
pub fn state_rates(theta: f64, v: f64, d_c: f64) -> (f64, f64) {
    let dtheta = 1.0 - theta * v / d_c;
    (dtheta, -dtheta * v / d_c)
}

/// Spring–damper friction rates `μ̇ = k′(V_l − V) − k″V̇`, `μ̈ = k′(V̇_l − V̇) − k″V̈`.
pub fn friction_rates(v_l: f64, dv_l: f64, v: f64, dv: f64, ddv: f64, p: &RsfParams) -> (f64, f64) {
    (
        p.k_prime * (v_l - v) - p.k_dprime * dv,
        p.k_prime * (dv_l - dv) - p.k_dprime * ddv,
    )
}

/// Slip-rate and acceleration rates from the friction and state rates:
/// `V̇ = (V/A)(μ̇ − (B/θ)θ̇)` and
/// `ȧ = (V̇/A)(μ̇ − (B/θ)θ̇) + (V/A)(μ̈ − (B/θ)θ̈ + (B/θ²)θ̇)`.
#[allow(clippy::too_many_arguments)]
pub fn slip_accel_rates(
    v: f64,
    dv: f64,
    theta: f64,
    dtheta: f64,
    ddtheta: f64,
    dmu: f64,
    ddmu: f64,
    p: &RsfParams,
) -> (f64, f64) {
    slip_accel_rates_with(v, dv, theta, dtheta, ddtheta, dmu, ddmu, p, dtheta)
}

/// `curvature` is the factor multiplying `B/θ²` in the last term.
#[allow(clippy::too_many_arguments)]
fn slip_accel_rates_with(
    v: f64,
    dv: f64,
    theta: f64,
    dtheta: f64,
    ddtheta: f64,
    dmu: f64,
    ddmu: f64,
    p: &RsfParams,
    curvature: f64,
) -> (f64, f64) {
    let b_over_theta = p.b_coef / theta;
    let drive = dmu - b_over_theta * dtheta;
    let dv_out = v / p.a_coef * drive;
    let da = dv / p.a_coef * drive + v / p.a_coef * (ddmu - b_over_theta * ddtheta + b_over_theta * curvature / theta);
    (dv_out, da)
}

/// `μ_ss(V) = μ0 + (A − B)·ln(V/V0)`.
pub fn steady_state_friction(v: f64, p: &RsfParams) -> f64 {
    p.mu0 + (p.a_coef - p.b_coef) * (v / p.v0).ln()
}

/// How radiation damping enters `μ̇` and `μ̈`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingScheme {
    /// Evaluate undamped rates, subtract `k″V̇` / `k″ȧ` from the provisional
    /// values and recompute once (θ̈ is not updated).
    #[default]
    TwoPass,
    /// Solve the linear relations `μ̇ = k′(V_l − V) − k″V̇` and
    /// `μ̈ = k′(V̇_l − V̇) − k″ȧ` exactly.
    Implicit,
}

/// Which expression drives the acceleration state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelerationRate {
    /// The published expressions: `θ̈ = −θ̇V/d_c` and a `(B/θ²)·θ̇` term.
    /// The integrated `a` then drifts from the true `dV/dt` by about 1% of
    /// its peak on the default scenario.
    #[default]
    Published,
    /// Exact time derivative of `V̇`: `θ̈ = −(θ̇V + θV̇)/d_c` and a
    /// `(B/θ²)·θ̇²` term, so the integrated `a` tracks `dV/dt`.
    Exact,
}

/// Options for the right-hand side beyond the parameters themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhsOptions {
    #[serde(default)]
    pub damping: DampingScheme,
    #[serde(default)]
    pub acceleration: AccelerationRate,
}

/// Right-hand side of the four-state slider system.
///
/// Only `μ` and `θ` of `y` are read: `V` is recomputed from them, and the
/// integrated `V` and `a` components are outputs.
pub fn rhs(t: f64, y: &SliderState, p: &RsfParams, f: &Forcing) -> Result<SliderRates, ModelError> {
    rhs_with(t, y, p, f, RhsOptions::default())
}

pub fn rhs_with(
    t: f64,
    y: &SliderState,
    p: &RsfParams,
    f: &Forcing,
    opts: RhsOptions,
) -> Result<SliderRates, ModelError> {
    rhs_under_load(t, y, p, f.load_point(t), opts)
}

/// [`rhs_with`] with the load-point velocity and its rate supplied directly.
pub fn rhs_under_load(
    t: f64,
    y: &SliderState,
    p: &RsfParams,
    (v_l, dv_l): (f64, f64),
    opts: RhsOptions,
) -> Result<SliderRates, ModelError> {
    let theta = y.theta;
    let v = slip_rate(y.mu, theta, p)?;
    let (dtheta, ddtheta) = state_rates(theta, v, p.d_c);
    let accel = |dv: f64, dmu: f64, ddmu: f64| match opts.acceleration {
        AccelerationRate::Published => slip_accel_rates_with(v, dv, theta, dtheta, ddtheta, dmu, ddmu, p, dtheta),
        AccelerationRate::Exact => {
            let ddtheta = ddtheta - theta * dv / p.d_c;
            slip_accel_rates_with(v, dv, theta, dtheta, ddtheta, dmu, ddmu, p, dtheta * dtheta)
        }
    };

    let rates = match opts.damping {
        DampingScheme::TwoPass => {
            // undamped pass
            let mut dmu = p.k_prime * (v_l - v);
            let (mut dv, _) = accel(0.0, dmu, 0.0);
            let mut ddmu = p.k_prime * (dv_l - dv);
            let (_, mut da) = accel(dv, dmu, ddmu);
            // damping correction, one recomputation each
            dmu -= p.k_dprime * dv;
            dv = accel(0.0, dmu, 0.0).0;
            ddmu -= p.k_dprime * da;
            da = accel(dv, dmu, ddmu).1;
            SliderRates { dmu, dtheta, dv, da }
        }
        DampingScheme::Implicit => {
            let gain = v / p.a_coef;
            let b_over_theta = p.b_coef / theta;
            let denom = 1.0 + p.k_dprime * gain;
            let dmu = (p.k_prime * (v_l - v) + p.k_dprime * gain * b_over_theta * dtheta) / denom;
            let dv = gain * (dmu - b_over_theta * dtheta);
            // ȧ is affine in μ̈ with slope V/A, and μ̈ = k′(V̇_l − V̇) − k″ȧ.
            let (_, da_free) = accel(dv, dmu, p.k_prime * (dv_l - dv));
            let da = da_free / denom;
            SliderRates { dmu, dtheta, dv, da }
        }
    };

    if rates.to_array().iter().all(|x| x.is_finite()) {
        Ok(rates)
    } else {
        Err(ModelError::NonFiniteRate { t })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn paper() -> RsfParams {
        RsfParams::default()
    }

    #[test]
    fn slip_rate_at_reference() {
        let p = paper();
        assert_relative_eq!(slip_rate(0.6, p.d_c / p.v0, &p).unwrap(), 1.0, max_relative = 1e-15);
        let v = slip_rate(0.6 + 0.011 * 2f64.ln(), 20.0, &p).unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn slip_rate_off_reference() {
        // exp(0.01/0.011), mpmath at 50 digits
        let expected = 2.482065084623012;
        let v = slip_rate(0.61, 20.0, &paper()).unwrap();
        assert_relative_eq!(v, expected, max_relative = 1e-13);
    }

    #[test]
    fn slip_rate_errors() {
        let p = paper();
        assert!(matches!(
            slip_rate(0.6, 0.0, &p),
            Err(ModelError::NonPositiveTheta { .. })
        ));
        assert!(matches!(
            slip_rate(50.0, 20.0, &p),
            Err(ModelError::SlipRateOverflow { .. })
        ));
    }

    #[test]
    fn state_rate_cases() {
        assert_eq!(state_rates(20.0, 1.0, 20.0), (0.0, 0.0));
        assert_eq!(state_rates(10.0, 1.0, 20.0), (0.5, -0.025));
        let (d, dd) = state_rates(40.0, 2.0, 20.0);
        assert_relative_eq!(d, -3.0);
        assert_relative_eq!(dd, 0.3);
    }

    #[test]
    fn friction_rate_cases() {
        let p = paper();
        assert_eq!(friction_rates(1.3, 0.2, 1.3, 0.0, 0.0, &p), (0.0, 0.2 * p.k_prime));
        let undamped = RsfParams { k_dprime: 0.0, ..p };
        assert_relative_eq!(friction_rates(2.0, 0.0, 1.0, 0.0, 0.0, &undamped).0, 0.01);
        assert_relative_eq!(
            friction_rates(1.0, 0.0, 1.0, 100.0, 0.0, &p).0,
            -1e-5,
            max_relative = 1e-12
        );
    }

    #[test]
    fn slip_accel_rate_cases() {
        let p = paper();
        assert_eq!(slip_accel_rates(1.0, 0.0, 20.0, 0.0, 0.0, 0.0, 0.0, &p), (0.0, 0.0));
        assert_relative_eq!(slip_accel_rates(1.0, 0.0, 20.0, 0.0, 0.0, 0.011, 0.0, &p).0, 1.0);
        let (dv, _) = slip_accel_rates(1.0, 0.0, 20.0, 0.5, 0.0, 0.0, 0.0, &p);
        assert_relative_eq!(dv, -(1.0 / 0.011) * (0.014 / 20.0) * 0.5, max_relative = 1e-14);
    }

    #[test]
    fn load_point_cases() {
        let f = Forcing::default();
        assert_eq!(f.load_point(0.0), (1.0, 10.0));
        let (v_l, _) = f.load_point(std::f64::consts::PI * 0.1);
        assert_relative_eq!(v_l, 1.0, epsilon = 1e-15);
        let step = Forcing::Step {
            v_before: 1.0,
            v_after: 10.0,
            step_time: 5.0,
        };
        assert_eq!(step.load_point(4.999), (1.0, 0.0));
        assert_eq!(step.load_point(5.0), (10.0, 0.0));
        assert_eq!(step.discontinuities(), vec![5.0]);
        assert!(Forcing::constant(1.0).discontinuities().is_empty());
    }

    #[test]
    fn load_point_derivative_matches_central_difference() {
        let f = Forcing::default();
        let h = 1e-6;
        for i in 0..200 {
            let t = 0.137 + 0.25 * i as f64;
            let (_, dv) = f.load_point(t);
            let fd = (f.load_point(t + h).0 - f.load_point(t - h).0) / (2.0 * h);
            assert!((fd - dv).abs() <= 1e-6 * dv.abs().max(1e-3), "t={t}: {fd} vs {dv}");
        }
    }

    #[test]
    fn steady_state_friction_cases() {
        let p = paper();
        assert_eq!(steady_state_friction(1.0, &p), 0.6);
        assert_relative_eq!(
            steady_state_friction(10.0, &p),
            0.6 - 0.003 * 10f64.ln(),
            max_relative = 1e-15
        );
        assert_relative_eq!(0.6 - 0.003 * 10f64.ln(), 0.6 - 0.0069078, epsilon = 1e-7);
        let neutral = RsfParams {
            a_coef: 0.012,
            b_coef: 0.012,
            ..p
        };
        assert_eq!(steady_state_friction(37.0, &neutral), 0.6);
    }

    #[test]
    fn steady_state_is_fixed_point() {
        for opts in [
            RhsOptions::default(),
            RhsOptions {
                damping: DampingScheme::Implicit,
                acceleration: AccelerationRate::Exact,
            },
        ] {
            let p = paper();
            let r = rhs_with(3.0, &p.steady_state(), &p, &Forcing::constant(1.0), opts).unwrap();
            assert_eq!(r.to_array(), [0.0; 4]);
        }
    }

    #[test]
    fn rhs_at_start_of_default_scenario() {
        // Hand evaluation: V = 1, θ̇ = θ̈ = 0, V_l(0) = 1, V̇_l(0) = 10.
        let p = paper();
        let y = p.steady_state();
        let r = rhs(0.0, &y, &p, &Forcing::default()).unwrap();
        // pass 1: μ̇ = 0, V̇ = 0, μ̈ = 0.1, ȧ = 0.1/0.011
        let da1 = 0.1 / 0.011;
        // pass 2: μ̇ = 0, V̇ = 0, μ̈ = 0.1 − 1e-7·da1
        let da = (0.1 - 1e-7 * da1) / 0.011;
        assert_eq!(r.dmu, 0.0);
        assert_eq!(r.dtheta, 0.0);
        assert_eq!(r.dv, 0.0);
        assert_relative_eq!(r.da, da, max_relative = 1e-14);
        assert_relative_eq!(r.dmu, -p.k_dprime * r.dv);
    }

    #[test]
    fn undamped_two_pass_equals_first_pass() {
        let p = RsfParams {
            k_dprime: 0.0,
            ..paper()
        };
        let y = SliderState {
            mu: 0.605,
            theta: 13.0,
            v: 1.0,
            a: 0.0,
        };
        let t = 1.7;
        let r = rhs(t, &y, &p, &Forcing::default()).unwrap();
        let v = slip_rate(y.mu, y.theta, &p).unwrap();
        let (dtheta, ddtheta) = state_rates(y.theta, v, p.d_c);
        let (v_l, dv_l) = Forcing::default().load_point(t);
        let (dmu, _) = friction_rates(v_l, dv_l, v, 0.0, 0.0, &p);
        let (dv, _) = slip_accel_rates(v, 0.0, y.theta, dtheta, ddtheta, dmu, 0.0, &p);
        let (_, ddmu) = friction_rates(v_l, dv_l, v, dv, 0.0, &p);
        let (_, da) = slip_accel_rates(v, dv, y.theta, dtheta, ddtheta, dmu, ddmu, &p);
        assert_eq!(r.to_array(), [dmu, dtheta, dv, da]);
    }

    #[test]
    fn implicit_damping_satisfies_linear_relations() {
        let p = RsfParams {
            k_dprime: 1e-3,
            ..paper()
        };
        let y = SliderState {
            mu: 0.61,
            theta: 11.0,
            v: 1.0,
            a: 0.0,
        };
        let opts = RhsOptions {
            damping: DampingScheme::Implicit,
            ..Default::default()
        };
        let f = Forcing::default();
        let t = 0.4;
        let r = rhs_with(t, &y, &p, &f, opts).unwrap();
        let v = slip_rate(y.mu, y.theta, &p).unwrap();
        let (v_l, dv_l) = f.load_point(t);
        let (dmu, ddmu) = friction_rates(v_l, dv_l, v, r.dv, r.da, &p);
        assert_relative_eq!(dmu, r.dmu, max_relative = 1e-12);
        let (dtheta, ddtheta) = state_rates(y.theta, v, p.d_c);
        let (dv, da) = slip_accel_rates(v, r.dv, y.theta, dtheta, ddtheta, r.dmu, ddmu, &p);
        assert_relative_eq!(dv, r.dv, max_relative = 1e-12);
        assert_relative_eq!(da, r.da, max_relative = 1e-12);
    }

    #[test]
    fn physical_constants_derivation() {
        let c = PhysicalConstants::default();
        assert_relative_eq!(c.k_prime(), 5e10 / (3e-2 * 2e8) * 1e-6, max_relative = 1e-15);
        assert_relative_eq!(c.k_dprime(), 1e-7, max_relative = 1e-12);
        let derived = c.apply_to(paper());
        c.check_consistent(&derived, 1e-12).unwrap();
        // the rounded k′ = 1e-2 is only an order-of-magnitude match
        assert!(c.check_consistent(&paper(), 1e-3).is_err());
    }

    #[test]
    fn validation_rejects_bad_params() {
        assert!(paper().validate().is_ok());
        assert!(paper().with_d_c(-1.0).validate().is_err());
        assert!(RsfParams { a_coef: 0.0, ..paper() }.validate().is_err());
        assert!(RsfParams {
            k_prime: -1.0,
            ..paper()
        }
        .validate()
        .is_err());
        assert!(RsfParams {
            v0: f64::NAN,
            ..paper()
        }
        .validate()
        .is_err());
        assert!(Forcing::DecayingSinusoid {
            baseline: 1.0,
            amplitude: 1.0,
            decay_time: 0.0,
            oscillation_time: 0.1
        }
        .validate()
        .is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn inversion_round_trip(ln_v in -10.0f64..10.0, ln_theta in -5.0f64..8.0) {
                let p = paper();
                let (v, theta) = (ln_v.exp(), ln_theta.exp());
                let mu = p.friction(v, theta);
                let back = slip_rate(mu, theta, &p).unwrap();
                prop_assert!(((back - v) / v).abs() < 1e-12);
            }

            #[test]
            fn steady_friction_sign(a in 0.001f64..0.03, b in 0.001f64..0.03, ratio in 1.01f64..100.0) {
                let p = RsfParams { a_coef: a, b_coef: b, ..paper() };
                let delta = steady_state_friction(ratio * p.v0, &p) - p.mu0;
                if a < b { prop_assert!(delta < 0.0) } else if a > b { prop_assert!(delta > 0.0) }
            }
        }
    }
}
