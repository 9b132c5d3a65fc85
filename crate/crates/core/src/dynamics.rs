//! Longitudinal vehicle model.
//!
//! The nonlinear plant integrates position, velocity and engine torque; the
//! acceleration is an algebraic function of velocity, torque and the
//! environment. A feedback-linearizing torque law turns the acceleration
//! channel into the first-order lag `tau * da/dt = u - a`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid vehicle parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("road slope {0} rad is outside (-pi/2, pi/2)")]
    SlopeOutOfRange(f64),
    #[error("linear model order must be 3 or 4, got {0}")]
    InvalidOrder(usize),
}

/// Physical constants of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// Driveline efficiency in (0, 1].
    pub driveline_efficiency: f64,
    /// m
    pub tire_radius: f64,
    /// kg/m^3
    pub air_density: f64,
    pub drag_coefficient: f64,
    /// m/s^2
    pub gravity: f64,
    pub rolling_resistance: f64,
    /// Powertrain time constant, s.
    pub powertrain_tau: f64,
    /// m
    pub length: f64,
}

impl Default for VehicleParams {
    /// The passenger-car parameter set used for the reference scenario.
    fn default() -> Self {
        VehicleParams {
            mass: 1613.0,
            driveline_efficiency: 1.0,
            tire_radius: 0.34,
            air_density: 1.225,
            drag_coefficient: 0.62,
            gravity: 9.8,
            rolling_resistance: 0.01,
            powertrain_tau: 0.15,
            length: 0.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = [
            ("mass", self.mass),
            ("driveline_efficiency", self.driveline_efficiency),
            ("tire_radius", self.tire_radius),
            ("air_density", self.air_density),
            ("drag_coefficient", self.drag_coefficient),
            ("gravity", self.gravity),
            ("powertrain_tau", self.powertrain_tau),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(DynamicsError::InvalidParam { name, value });
            }
        }
        if self.driveline_efficiency > 1.0 {
            return Err(DynamicsError::InvalidParam {
                name: "driveline_efficiency",
                value: self.driveline_efficiency,
            });
        }
        for (name, value) in [("rolling_resistance", self.rolling_resistance), ("length", self.length)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(DynamicsError::InvalidParam { name, value });
            }
        }
        Ok(())
    }

    /// Copy with multiplicative perturbations applied, used for the
    /// controller's estimate of the plant.
    pub fn perturbed(&self, m: &ParamMismatch) -> VehicleParams {
        VehicleParams {
            mass: self.mass * m.mass,
            driveline_efficiency: self.driveline_efficiency * m.driveline_efficiency,
            tire_radius: self.tire_radius * m.tire_radius,
            air_density: self.air_density * m.air_density,
            drag_coefficient: self.drag_coefficient * m.drag_coefficient,
            gravity: self.gravity,
            rolling_resistance: self.rolling_resistance * m.rolling_resistance,
            powertrain_tau: self.powertrain_tau * m.powertrain_tau,
            length: self.length,
        }
    }
}

/// Multiplicative factors between the true plant and the controller's model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamMismatch {
    pub mass: f64,
    pub driveline_efficiency: f64,
    pub tire_radius: f64,
    pub air_density: f64,
    pub drag_coefficient: f64,
    pub rolling_resistance: f64,
    pub powertrain_tau: f64,
}

impl ParamMismatch {
    pub const NONE: ParamMismatch = ParamMismatch {
        mass: 1.0,
        driveline_efficiency: 1.0,
        tire_radius: 1.0,
        air_density: 1.0,
        drag_coefficient: 1.0,
        rolling_resistance: 1.0,
        powertrain_tau: 1.0,
    };

    /// The same relative error `frac` on drag, rolling resistance and
    /// powertrain lag, the lag underestimated and the losses overestimated.
    pub fn uniform(frac: f64) -> ParamMismatch {
        ParamMismatch {
            drag_coefficient: 1.0 + frac,
            rolling_resistance: 1.0 + frac,
            powertrain_tau: 1.0 - frac,
            ..ParamMismatch::NONE
        }
    }
}

impl Default for ParamMismatch {
    /// Drag +10%, rolling resistance +20%, powertrain lag -10%.
    fn default() -> Self {
        ParamMismatch {
            drag_coefficient: 1.10,
            rolling_resistance: 1.20,
            powertrain_tau: 0.90,
            ..ParamMismatch::NONE
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
    /// Engine torque, N m (plant side only).
    pub torque: f64,
    /// Running integral of the summed neighbour spacing error, m s.
    pub error_integral: f64,
}

/// Environment seen by one vehicle at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnvSample {
    /// Road inclination, rad.
    pub slope: f64,
    pub slope_rate: f64,
    /// Wind speed, m/s; positive values add to the vehicle speed in the drag
    /// term (headwind).
    pub wind: f64,
    pub wind_rate: f64,
    /// Additive acceleration disturbance at the plant input, m/s^2.
    pub input_bias: f64,
}

impl EnvSample {
    fn check(&self) -> Result<(), DynamicsError> {
        let all = [self.slope, self.slope_rate, self.wind, self.wind_rate, self.input_bias];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite("environment"));
        }
        if self.slope.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(DynamicsError::SlopeOutOfRange(self.slope));
        }
        Ok(())
    }
}

/// Time derivative of the plant state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantDerivative {
    pub position: f64,
    pub velocity: f64,
    /// Jerk implied by the torque and velocity dynamics.
    pub acceleration: f64,
    pub torque: f64,
}

/// Sign with `sgn(0) = 0`: rolling resistance vanishes at rest.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Aerodynamic drag, grade and rolling forces opposing motion, N.
pub fn resistive_force(velocity: f64, env: &EnvSample, p: &VehicleParams) -> f64 {
    let rel = velocity + env.wind;
    let drag = 0.5 * p.air_density * p.drag_coefficient * rel * rel.abs();
    let grade = p.mass * p.gravity * env.slope.sin();
    let rolling = p.mass * p.gravity * p.rolling_resistance * env.slope.cos() * sgn(rel);
    drag + grade + rolling
}

/// Acceleration from the force balance for a given engine torque.
pub fn longitudinal_acceleration(velocity: f64, torque: f64, env: &EnvSample, p: &VehicleParams) -> f64 {
    (p.driveline_efficiency / p.tire_radius * torque - resistive_force(velocity, env, p)) / p.mass
        + env.input_bias
}

/// Torque that produces `acceleration` at `velocity`.
pub fn torque_for_acceleration(velocity: f64, acceleration: f64, env: &EnvSample, p: &VehicleParams) -> f64 {
    p.tire_radius / p.driveline_efficiency
        * (p.mass * (acceleration - env.input_bias) + resistive_force(velocity, env, p))
}

/// Right-hand side of the nonlinear plant.
///
/// `state.acceleration` is not read: the acceleration is recomputed from
/// velocity and torque. The torque follows `tau * dT/dt = T_cmd - T`.
pub fn nonlinear_derivative(
    state: &VehicleState,
    commanded_torque: f64,
    env: &EnvSample,
    params: &VehicleParams,
) -> Result<PlantDerivative, DynamicsError> {
    if ![state.position, state.velocity, state.torque, commanded_torque]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(DynamicsError::NonFinite("plant state"));
    }
    env.check()?;
    let p = params;
    let accel = longitudinal_acceleration(state.velocity, state.torque, env, p);
    let torque_rate = (commanded_torque - state.torque) / p.powertrain_tau;

    let rel = state.velocity + env.wind;
    let rel_rate = accel + env.wind_rate;
    let mg = p.mass * p.gravity;
    let jerk = (p.driveline_efficiency / p.tire_radius * torque_rate
        - p.air_density * p.drag_coefficient * rel.abs() * rel_rate
        - mg * env.slope.cos() * env.slope_rate
        + mg * p.rolling_resistance * env.slope.sin() * env.slope_rate * sgn(rel))
        / p.mass;

    Ok(PlantDerivative {
        position: state.velocity,
        velocity: accel,
        acceleration: jerk,
        torque: torque_rate,
    })
}

/// How the drag-rate term of the linearizing torque is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DragRateTerm {
    /// `2 |v| dv/dt`, the exact derivative of `v |v|`.
    #[default]
    Exact,
    /// `(|v| + 2 v/|v|) dv/dt`, as the torque law is commonly printed. Does
    /// not cancel the drag dynamics exactly.
    Verbatim,
}

/// Desired torque that makes the acceleration channel obey
/// `tau * da/dt = u - a` when `params_hat` matches the plant.
///
/// `state.acceleration` is the measured acceleration; `env` is the
/// controller's knowledge of slope and wind (it may be zero even when the
/// true road is not). `env.input_bias` is ignored.
pub fn feedback_linearize(
    u_desired: f64,
    state: &VehicleState,
    env: &EnvSample,
    params_hat: &VehicleParams,
) -> Result<f64, DynamicsError> {
    feedback_linearize_with(DragRateTerm::Exact, u_desired, state, env, params_hat)
}

pub fn feedback_linearize_with(
    form: DragRateTerm,
    u_desired: f64,
    state: &VehicleState,
    env: &EnvSample,
    params_hat: &VehicleParams,
) -> Result<f64, DynamicsError> {
    env.check()?;
    let p = params_hat;
    let tau = p.powertrain_tau;
    let rel = state.velocity + env.wind;
    let rel_rate = state.acceleration + env.wind_rate;
    let rate_factor = match form {
        DragRateTerm::Exact => 2.0 * rel.abs(),
        DragRateTerm::Verbatim => rel.abs() + 2.0 * sgn(rel),
    };
    let (sin, cos) = env.slope.sin_cos();
    let mg = p.mass * p.gravity;

    let drag = 0.5 * p.air_density * p.drag_coefficient * (rel * rel.abs() + tau * rel_rate * rate_factor);
    let rolling = -mg * p.rolling_resistance * (sin * env.slope_rate * tau - cos) * sgn(rel);
    let grade = mg * (cos * env.slope_rate * tau + sin);
    let torque = p.tire_radius / p.driveline_efficiency * (drag + rolling + grade + p.mass * u_desired);
    if !torque.is_finite() {
        return Err(DynamicsError::NonFinite("linearizing torque"));
    }
    Ok(torque)
}

/// Integrator-chain state-space model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub order: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearModel {
    /// Rank of `[B, AB, ..., A^{n-1} B]`.
    pub fn controllability_rank(&self) -> usize {
        let n = self.order;
        let mut ctrb = DMatrix::<f64>::zeros(n, n);
        let mut col = self.b.clone();
        for k in 0..n {
            ctrb.set_column(k, &col.column(0));
            col = &self.a * col;
        }
        linalg::rank(&ctrb, 1e-12)
    }
}

/// Third order: `(p, v, a)`. Fourth order: `(s, p, v, a)` with `ds/dt = p`.
pub fn linear_model(order: usize, params: &VehicleParams) -> Result<LinearModel, DynamicsError> {
    if order != 3 && order != 4 {
        return Err(DynamicsError::InvalidOrder(order));
    }
    let tau = params.powertrain_tau;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(DynamicsError::InvalidParam {
            name: "powertrain_tau",
            value: tau,
        });
    }
    let mut a = DMatrix::<f64>::zeros(order, order);
    for i in 0..order - 1 {
        a[(i, i + 1)] = 1.0;
    }
    a[(order - 1, order - 1)] = -1.0 / tau;
    let mut b = DMatrix::<f64>::zeros(order, 1);
    b[(order - 1, 0)] = 1.0 / tau;
    Ok(LinearModel { order, a, b })
}
