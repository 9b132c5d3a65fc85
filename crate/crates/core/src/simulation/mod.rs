//! Closed-loop platoon simulation.
//!
//! The leader follows `tau * da/dt = u0 - a` with a scheduled `u0` and sees
//! no disturbances. Followers run the distributed law, the
//! feedback-linearizing torque and the nonlinear plant. Integration is
//! fixed-step RK4 on a uniform output grid; time-scheduled disturbance
//! switches split the step, and position-triggered slope switches are
//! located by bisection so that no RK4 stage straddles a discontinuity.

mod metrics;
mod output;
mod siso;

pub use metrics::{compute_metrics, EpochMetrics, Metrics, VehicleSummary};
pub use output::{metrics_csv, plot_script, trajectory_csv, PlotPane};
pub use siso::{siso_disturbance_run, siso_trajectory};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::analysis::{self, AnalysisError};
use crate::control::{self, certify_gains, ControlError, GainVector, SpacingPolicy};
use crate::dynamics::{
    self, feedback_linearize_with, nonlinear_derivative, DragRateTerm, DynamicsError, EnvSample, VehicleParams,
    VehicleState,
};
use crate::ode::Rk4;
use crate::topology::{coupling_spectrum, Topology, TopologyError};

/// Any state magnitude above this aborts the run.
pub const BLOWUP_LIMIT: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("gains are not certified stable for this topology ({0}); set the unsafe flag to run anyway")]
    Uncertified(String),
    #[error("numerical blow-up at t = {t:.4} s, vehicle {vehicle}: state magnitude {value:e}")]
    Diverged { t: f64, vehicle: usize, value: f64 },
    #[error("closed loop is unstable: {0}")]
    Unstable(String),
    #[error("settle window {window} s is longer than epoch '{epoch}' ({length} s)")]
    WindowTooLong { epoch: String, window: f64, length: f64 },
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderPulse {
    /// m/s^2
    pub magnitude: f64,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeStep {
    /// rad
    pub angle: f64,
    /// m
    pub trigger_position: f64,
    /// Each follower switches when its own position crosses the trigger;
    /// otherwise all followers switch when the leader does.
    pub per_vehicle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindStep {
    /// m/s, positive is a headwind.
    pub speed: f64,
    pub t_start: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasStep {
    /// m/s^2
    pub magnitude: f64,
    pub t_start: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DisturbanceSchedule {
    pub leader_pulse: Option<LeaderPulse>,
    pub slope: Option<SlopeStep>,
    pub wind: Option<WindStep>,
    /// Indexed by follower, `input_bias[i - 1]` for follower `i`. Steps
    /// accumulate.
    pub input_bias: Vec<Vec<BiasStep>>,
}

impl DisturbanceSchedule {
    /// Leader pulse of 1 m/s^2 on [30, 35] s, a 10 degree slope from 1680 m,
    /// and a 20 m/s wind from 150 s.
    pub fn reference() -> Self {
        DisturbanceSchedule {
            leader_pulse: Some(LeaderPulse {
                magnitude: 1.0,
                t_start: 30.0,
                t_end: 35.0,
            }),
            slope: Some(SlopeStep {
                angle: 10f64.to_radians(),
                trigger_position: 1680.0,
                per_vehicle: true,
            }),
            wind: Some(WindStep {
                speed: 20.0,
                t_start: 150.0,
            }),
            input_bias: Vec::new(),
        }
    }

    pub fn none() -> Self {
        DisturbanceSchedule::default()
    }

    pub fn leader_input(&self, t: f64) -> f64 {
        match self.leader_pulse {
            Some(p) if t >= p.t_start && t < p.t_end => p.magnitude,
            _ => 0.0,
        }
    }

    pub fn wind_at(&self, t: f64) -> f64 {
        match self.wind {
            Some(w) if t >= w.t_start => w.speed,
            _ => 0.0,
        }
    }

    /// Summed input bias of follower `i` (1-based) at time `t`.
    pub fn bias_at(&self, i: usize, t: f64) -> f64 {
        self.input_bias
            .get(i.wrapping_sub(1))
            .map(|steps| steps.iter().filter(|s| t >= s.t_start).map(|s| s.magnitude).sum())
            .unwrap_or(0.0)
    }

    /// Instants where a time-triggered input switches.
    fn switch_times(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(p) = self.leader_pulse {
            out.extend([p.t_start, p.t_end]);
        }
        if let Some(w) = self.wind {
            out.push(w.t_start);
        }
        for steps in &self.input_bias {
            out.extend(steps.iter().map(|s| s.t_start));
        }
        out.retain(|t| t.is_finite());
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    fn validate(&self, n: usize) -> Result<(), SimError> {
        if let Some(p) = self.leader_pulse {
            if !(p.magnitude.is_finite() && p.t_start.is_finite() && p.t_end.is_finite()) || p.t_end <= p.t_start {
                return Err(SimError::InvalidConfig(format!(
                    "leader pulse needs finite values and t_end > t_start, got {p:?}"
                )));
            }
        }
        if let Some(s) = self.slope {
            if !s.trigger_position.is_finite() || !(s.angle.abs() < std::f64::consts::FRAC_PI_2) {
                return Err(SimError::InvalidConfig(format!("invalid slope step {s:?}")));
            }
        }
        if let Some(w) = self.wind {
            if !(w.speed.is_finite() && w.t_start.is_finite()) {
                return Err(SimError::InvalidConfig(format!("invalid wind step {w:?}")));
            }
        }
        if self.input_bias.len() > n {
            return Err(SimError::InvalidConfig(format!(
                "input bias given for {} vehicles, platoon has {n} followers",
                self.input_bias.len()
            )));
        }
        for s in self.input_bias.iter().flatten() {
            if !(s.magnitude.is_finite() && s.t_start.is_finite()) {
                return Err(SimError::InvalidConfig(format!("invalid input bias step {s:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlantMode {
    /// Nonlinear plant with torque state and feedback linearization.
    #[default]
    Nonlinear,
    /// Ideal linearized followers: `tau da/dt = u + bias - a`. Slope and wind
    /// do not enter this model.
    LinearThirdOrder,
    /// One vehicle behind a static reference under a constant input bias.
    LinearFourthOrderSiso,
}

impl PlantMode {
    pub fn label(self) -> &'static str {
        match self {
            PlantMode::Nonlinear => "nonlinear",
            PlantMode::LinearThirdOrder => "linear-third-order",
            PlantMode::LinearFourthOrderSiso => "linear-fourth-order-siso",
        }
    }
}

impl fmt::Display for PlantMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PlantMode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nonlinear" => Ok(PlantMode::Nonlinear),
            "linear-third-order" => Ok(PlantMode::LinearThirdOrder),
            "linear-fourth-order-siso" => Ok(PlantMode::LinearFourthOrderSiso),
            other => Err(SimError::InvalidConfig(format!("unknown plant mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    /// Added to the nominal position of each follower; empty means all zero.
    pub gap_offsets: Vec<f64>,
    /// m/s, shared by all vehicles.
    pub speed: f64,
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition {
            gap_offsets: Vec::new(),
            speed: 15.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControllerOptions {
    /// Feed the true slope and wind to the linearizing torque law.
    pub sees_disturbances: bool,
    pub drag_rate_form: DragRateTerm,
    /// Conditional-integration bound on the integral state, m s.
    pub integral_clamp: Option<f64>,
    /// Saturation of the acceleration command, m/s^2.
    pub accel_limit: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub topology: Topology,
    pub gains: GainVector,
    pub plant_params: VehicleParams,
    /// The controller's estimate of the plant.
    pub controller_params: VehicleParams,
    pub policy: SpacingPolicy,
    pub schedule: DisturbanceSchedule,
    pub initial: InitialCondition,
    pub dt: f64,
    pub t_final: f64,
    pub plant_mode: PlantMode,
    pub controller: ControllerOptions,
    /// Run even when the gains are not certified.
    pub allow_uncertified: bool,
    /// Input bias for the single-vehicle mode, m/s^2.
    pub siso_kappa_psi: f64,
}

impl SimConfig {
    /// Reference scenario on `topology` with matched parameters.
    pub fn new(topology: Topology, gains: GainVector) -> Self {
        SimConfig {
            topology,
            gains,
            plant_params: VehicleParams::default(),
            controller_params: VehicleParams::default(),
            policy: SpacingPolicy::default(),
            schedule: DisturbanceSchedule::reference(),
            initial: InitialCondition::default(),
            dt: 0.01,
            t_final: 250.0,
            plant_mode: PlantMode::Nonlinear,
            controller: ControllerOptions::default(),
            allow_uncertified: false,
            siso_kappa_psi: 1.0,
        }
    }

    pub fn n_followers(&self) -> usize {
        self.topology.n_followers()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final.is_finite() && self.t_final > self.dt) {
            return bad(format!("t_final must exceed dt, got {}", self.t_final));
        }
        if self.t_final / self.dt > 1e8 {
            return bad("more than 1e8 time steps requested".into());
        }
        if !self.gains.is_finite() {
            return bad("gains must be finite".into());
        }
        self.plant_params.validate()?;
        self.controller_params.validate()?;
        if !(self.policy.gap.is_finite() && self.policy.gap > 0.0) {
            return bad(format!("gap must be positive, got {}", self.policy.gap));
        }
        if !(self.policy.vehicle_length.is_finite() && self.policy.vehicle_length >= 0.0) {
            return bad(format!("vehicle length must be >= 0, got {}", self.policy.vehicle_length));
        }
        let n = self.n_followers();
        if !self.initial.gap_offsets.is_empty() && self.initial.gap_offsets.len() != n {
            return bad(format!(
                "{} gap offsets given for {n} followers",
                self.initial.gap_offsets.len()
            ));
        }
        if self.initial.gap_offsets.iter().any(|o| !o.is_finite()) || !self.initial.speed.is_finite() {
            return bad("initial condition must be finite".into());
        }
        if let Some(c) = self.controller.integral_clamp {
            if !(c > 0.0) {
                return bad(format!("integral clamp must be positive, got {c}"));
            }
        }
        if let Some(c) = self.controller.accel_limit {
            if !(c > 0.0) {
                return bad(format!("acceleration limit must be positive, got {c}"));
            }
        }
        if !self.siso_kappa_psi.is_finite() {
            return bad("kappa_psi must be finite".into());
        }
        self.schedule.validate(n)
    }

    /// Stability check required before a run: the closed-form certificate
    /// when it applies, the numerical closed loop otherwise.
    pub fn check_stability(&self) -> Result<(), SimError> {
        let tau = self.plant_params.powertrain_tau;
        let spec = coupling_spectrum(&self.topology)?;
        match certify_gains(&self.gains, &spec, tau) {
            Ok(cert) if cert.holds => Ok(()),
            Ok(cert) => {
                let names: Vec<_> = cert.violations().map(|c| c.name).collect();
                Err(SimError::Uncertified(names.join("; ")))
            }
            Err(ControlError::NotApplicable) => {
                let sys = if self.gains.kappa_s == 0.0 {
                    analysis::build_closed_loop_reduced(&self.topology, &self.gains, tau)?
                } else {
                    analysis::build_closed_loop(&self.topology, &self.gains, tau)?
                };
                if analysis::is_hurwitz(&sys, 1e-9) {
                    Ok(())
                } else {
                    Err(SimError::Uncertified(format!(
                        "spectral abscissa {:.3e}",
                        sys.spectral_abscissa
                    )))
                }
            }
            Err(e) => Err(e.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    LeaderPulse,
    /// Slope reaches follower `vehicle`.
    Slope { vehicle: usize },
    Wind,
    InputBias { vehicle: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub t: f64,
    pub kind: EventKind,
}

/// Sampled series of one vehicle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VehicleSeries {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub acceleration: Vec<f64>,
    /// Acceleration command.
    pub input: Vec<f64>,
    /// Engine torque; zero for linear modes and the leader.
    pub torque: Vec<f64>,
}

impl VehicleSeries {
    fn with_capacity(n: usize) -> Self {
        VehicleSeries {
            position: Vec::with_capacity(n),
            velocity: Vec::with_capacity(n),
            acceleration: Vec::with_capacity(n),
            input: Vec::with_capacity(n),
            torque: Vec::with_capacity(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Index 0 is the leader.
    pub vehicles: Vec<VehicleSeries>,
    /// `spacing_errors[i - 1]` is `e_i = (p_{i-1} - p_i - l) - d`: negative
    /// when follower `i` is closer than desired.
    pub spacing_errors: Vec<Vec<f64>>,
    pub events: Vec<SimEvent>,
    pub gap: f64,
    pub label: String,
}

impl Trajectory {
    pub fn n_followers(&self) -> usize {
        self.spacing_errors.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Disturbance epochs as `(label, t_start)`, ascending, always starting
    /// with `("initial", t0)`. Each onset (leader pulse, first slope
    /// crossing, wind, input bias steps) opens a new epoch.
    pub fn epoch_starts(&self) -> Vec<(String, f64)> {
        let t0 = self.times.first().copied().unwrap_or(0.0);
        let t_end = self.times.last().copied().unwrap_or(0.0);
        let mut onsets: Vec<(String, f64)> = Vec::new();
        let mut slope_seen = false;
        for ev in &self.events {
            let label = match ev.kind {
                EventKind::LeaderPulse => "leader-pulse".to_string(),
                EventKind::Slope { .. } => {
                    if slope_seen {
                        continue;
                    }
                    slope_seen = true;
                    "slope".to_string()
                }
                EventKind::Wind => "wind".to_string(),
                EventKind::InputBias { vehicle } => format!("input-bias-{vehicle}"),
            };
            if ev.t > t0 && ev.t < t_end {
                onsets.push((label, ev.t));
            }
        }
        onsets.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut out = vec![("initial".to_string(), t0)];
        for (label, t) in onsets {
            let last = out.last_mut().expect("non-empty");
            if t - last.1 < 1e-9 {
                last.0 = format!("{}+{label}", last.0);
            } else {
                out.push((label, t));
            }
        }
        out
    }
}

const LEADER_DIM: usize = 3;
const FOLLOWER_DIM: usize = 4;

fn follower_base(i: usize) -> usize {
    LEADER_DIM + FOLLOWER_DIM * (i - 1)
}

struct Platoon<'a> {
    cfg: &'a SimConfig,
    neighbors: Vec<Vec<usize>>,
    slope_on: Vec<bool>,
    states: Vec<VehicleState>,
    envs: Vec<EnvSample>,
    inputs: Vec<f64>,
}

impl<'a> Platoon<'a> {
    fn new(cfg: &'a SimConfig) -> Self {
        let n = cfg.n_followers();
        Platoon {
            cfg,
            neighbors: (0..=n)
                .map(|i| if i == 0 { Vec::new() } else { cfg.topology.neighbors(i) })
                .collect(),
            slope_on: vec![false; n + 1],
            states: vec![VehicleState::default(); n + 1],
            envs: vec![EnvSample::default(); n + 1],
            inputs: vec![0.0; n + 1],
        }
    }

    fn n(&self) -> usize {
        self.states.len() - 1
    }

    fn nonlinear(&self) -> bool {
        self.cfg.plant_mode == PlantMode::Nonlinear
    }

    fn env(&self, i: usize, t_env: f64) -> EnvSample {
        let sched = &self.cfg.schedule;
        EnvSample {
            slope: match sched.slope {
                Some(s) if self.slope_on[i] => s.angle,
                _ => 0.0,
            },
            wind: sched.wind_at(t_env),
            input_bias: sched.bias_at(i, t_env),
            ..Default::default()
        }
    }

    /// Fill `states`, `envs` and `inputs` from the flat state vector.
    fn assemble(&mut self, y: &[f64], t_env: f64) -> Result<(), SimError> {
        let n = self.n();
        let plant = self.cfg.plant_params;
        self.states[0] = VehicleState {
            position: y[0],
            velocity: y[1],
            acceleration: y[2],
            ..Default::default()
        };
        self.inputs[0] = self.cfg.schedule.leader_input(t_env);
        for i in 1..=n {
            let b = follower_base(i);
            let env = self.env(i, t_env);
            let (acceleration, torque) = if self.nonlinear() {
                (dynamics::longitudinal_acceleration(y[b + 1], y[b + 2], &env, &plant), y[b + 2])
            } else {
                (y[b + 2], 0.0)
            };
            self.envs[i] = env;
            self.states[i] = VehicleState {
                position: y[b],
                velocity: y[b + 1],
                acceleration,
                torque,
                error_integral: self.clamped_integral(y[b + 3]),
            };
        }
        for i in 1..=n {
            let mut u = control::control_input(i, &self.states, &self.cfg.topology, &self.cfg.gains, &self.cfg.policy)?;
            if let Some(lim) = self.cfg.controller.accel_limit {
                u = u.clamp(-lim, lim);
            }
            self.inputs[i] = u;
        }
        Ok(())
    }

    fn clamped_integral(&self, s: f64) -> f64 {
        match self.cfg.controller.integral_clamp {
            Some(c) => s.clamp(-c, c),
            None => s,
        }
    }

    fn spacing_sum(&self, i: usize) -> f64 {
        let me = &self.states[i];
        self.neighbors[i]
            .iter()
            .map(|&j| me.position - self.states[j].position + self.cfg.policy.desired_offset(i, j))
            .sum()
    }

    fn derivative(&mut self, y: &[f64], t_env: f64, dy: &mut [f64]) -> Result<(), SimError> {
        self.assemble(y, t_env)?;
        let cfg = self.cfg;
        let tau = cfg.plant_params.powertrain_tau;
        dy[0] = y[1];
        dy[1] = y[2];
        dy[2] = (self.inputs[0] - y[2]) / tau;
        for i in 1..=self.n() {
            let b = follower_base(i);
            let state = self.states[i];
            let u = self.inputs[i];
            if self.nonlinear() {
                let env_hat = if cfg.controller.sees_disturbances {
                    self.envs[i]
                } else {
                    EnvSample::default()
                };
                let cmd = feedback_linearize_with(cfg.controller.drag_rate_form, u, &state, &env_hat, &cfg.controller_params)?;
                let d = nonlinear_derivative(&state, cmd, &self.envs[i], &cfg.plant_params)?;
                dy[b] = d.position;
                dy[b + 1] = d.velocity;
                dy[b + 2] = d.torque;
            } else {
                dy[b] = y[b + 1];
                dy[b + 1] = y[b + 2];
                dy[b + 2] = (u + self.envs[i].input_bias - y[b + 2]) / tau;
            }
            let mut ds = self.spacing_sum(i);
            if let Some(c) = cfg.controller.integral_clamp {
                let s = y[b + 3];
                if (s >= c && ds > 0.0) || (s <= -c && ds < 0.0) {
                    ds = 0.0;
                }
            }
            dy[b + 3] = ds;
        }
        Ok(())
    }

    /// One RK4 step of length `h` with the time-dependent inputs frozen at
    /// `t_env`.
    fn rk4(&mut self, rk: &mut Rk4, y: &mut [f64], t: f64, h: f64, t_env: f64) -> Result<(), SimError> {
        let mut err = None;
        rk.step(
            |_, yy, dy| {
                if err.is_none() {
                    if let Err(e) = self.derivative(yy, t_env, dy) {
                        err = Some(e);
                    }
                }
            },
            t,
            y,
            h,
        );
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Followers whose slope switch is still pending and whose trigger
    /// condition holds in `y`.
    fn slope_triggered(&self, y: &[f64]) -> Vec<usize> {
        let Some(s) = self.cfg.schedule.slope else {
            return Vec::new();
        };
        let n = self.n();
        if s.per_vehicle {
            (1..=n)
                .filter(|&i| !self.slope_on[i] && y[follower_base(i)] >= s.trigger_position)
                .collect()
        } else if !self.slope_on[1..].iter().all(|&on| on) && y[0] >= s.trigger_position {
            (1..=n).filter(|&i| !self.slope_on[i]).collect()
        } else {
            Vec::new()
        }
    }

    fn latch(&mut self, vehicles: &[usize], t: f64, events: &mut Vec<SimEvent>) {
        for &i in vehicles {
            self.slope_on[i] = true;
            events.push(SimEvent {
                t,
                kind: EventKind::Slope { vehicle: i },
            });
        }
    }

    /// Advance from `t0` by `h` over an interval free of time-scheduled
    /// switches, stopping at every slope crossing.
    fn advance(
        &mut self,
        rk: &mut Rk4,
        y: &mut Vec<f64>,
        t0: f64,
        h: f64,
        events: &mut Vec<SimEvent>,
    ) -> Result<(), SimError> {
        let t_env = t0 + 0.5 * h;
        let end = t0 + h;
        let mut t = t0;
        let mut trial = y.clone();
        loop {
            let remaining = end - t;
            if remaining <= 1e-12 * end.abs().max(1.0) {
                return Ok(());
            }
            trial.copy_from_slice(y);
            self.rk4(rk, &mut trial, t, remaining, t_env)?;
            if self.slope_triggered(&trial).is_empty() {
                y.copy_from_slice(&trial);
                return Ok(());
            }
            let (mut lo, mut hi) = (0.0, remaining);
            while hi - lo > 1e-12 {
                let mid = 0.5 * (lo + hi);
                trial.copy_from_slice(y);
                self.rk4(rk, &mut trial, t, mid, t_env)?;
                if self.slope_triggered(&trial).is_empty() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            self.rk4(rk, y, t, hi, t_env)?;
            t += hi;
            let crossed = self.slope_triggered(y);
            self.latch(&crossed, t, events);
        }
    }

    fn record(&mut self, y: &[f64], t: f64, traj: &mut Trajectory) -> Result<(), SimError> {
        self.assemble(y, t)?;
        traj.times.push(t);
        for (i, series) in traj.vehicles.iter_mut().enumerate() {
            let s = &self.states[i];
            series.position.push(s.position);
            series.velocity.push(s.velocity);
            series.acceleration.push(s.acceleration);
            series.input.push(self.inputs[i]);
            series.torque.push(s.torque);
        }
        let l = self.cfg.policy.vehicle_length;
        let d = self.cfg.policy.gap;
        for i in 1..=self.n() {
            let e = (self.states[i - 1].position - self.states[i].position - l) - d;
            traj.spacing_errors[i - 1].push(e);
        }
        Ok(())
    }
}

fn check_blowup(y: &[f64], t: f64) -> Result<(), SimError> {
    for (k, v) in y.iter().enumerate() {
        if !(v.abs() <= BLOWUP_LIMIT) {
            let vehicle = if k < LEADER_DIM { 0 } else { 1 + (k - LEADER_DIM) / FOLLOWER_DIM };
            return Err(SimError::Diverged { t, vehicle, value: *v });
        }
    }
    Ok(())
}

/// Simulate the platoon described by `config`.
pub fn run(config: &SimConfig) -> Result<Trajectory, SimError> {
    config.validate()?;
    if !config.allow_uncertified {
        config.check_stability()?;
    }
    if config.plant_mode == PlantMode::LinearFourthOrderSiso {
        return siso_trajectory(config);
    }
    let n = config.n_followers();
    let policy = config.policy;
    let v0 = config.initial.speed;
    let dim = LEADER_DIM + FOLLOWER_DIM * n;
    let mut y = vec![0.0; dim];
    y[1] = v0;
    let mut platoon = Platoon::new(config);
    let mut events = Vec::new();

    for i in 1..=n {
        let b = follower_base(i);
        let offset = config.initial.gap_offsets.get(i - 1).copied().unwrap_or(0.0);
        y[b] = -policy.desired_offset(i, 0) + offset;
        y[b + 1] = v0;
    }
    let latched = platoon.slope_triggered(&y);
    platoon.latch(&latched, 0.0, &mut events);
    for i in 1..=n {
        let b = follower_base(i);
        if platoon.nonlinear() {
            let env = platoon.env(i, 0.0);
            y[b + 2] = dynamics::torque_for_acceleration(v0, 0.0, &env, &config.plant_params);
        }
    }

    let steps = (config.t_final / config.dt).round() as usize;
    let switches = config.schedule.switch_times();
    for &t in &switches {
        if t > 0.0 && t <= config.t_final {
            push_switch_events(config, t, &mut events);
        }
    }

    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        vehicles: (0..=n).map(|_| VehicleSeries::with_capacity(steps + 1)).collect(),
        spacing_errors: (0..n).map(|_| Vec::with_capacity(steps + 1)).collect(),
        events: Vec::new(),
        gap: policy.gap,
        label: config.topology.kind().label().to_string(),
    };
    let mut rk = Rk4::new(dim);
    platoon.record(&y, 0.0, &mut traj)?;
    let mut next_switch = 0;
    for k in 0..steps {
        let t0 = k as f64 * config.dt;
        let t1 = (k + 1) as f64 * config.dt;
        let mut t = t0;
        while next_switch < switches.len() && switches[next_switch] <= t0 {
            next_switch += 1;
        }
        let mut s = next_switch;
        while s < switches.len() && switches[s] < t1 {
            platoon.advance(&mut rk, &mut y, t, switches[s] - t, &mut events)?;
            t = switches[s];
            s += 1;
        }
        platoon.advance(&mut rk, &mut y, t, t1 - t, &mut events)?;
        check_blowup(&y, t1)?;
        platoon.record(&y, t1, &mut traj)?;
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    traj.events = events;
    Ok(traj)
}

fn push_switch_events(config: &SimConfig, t: f64, events: &mut Vec<SimEvent>) {
    let sched = &config.schedule;
    if let Some(p) = sched.leader_pulse {
        if p.t_start == t && p.magnitude != 0.0 {
            events.push(SimEvent {
                t,
                kind: EventKind::LeaderPulse,
            });
        }
    }
    if let Some(w) = sched.wind {
        if w.t_start == t && w.speed != 0.0 {
            events.push(SimEvent { t, kind: EventKind::Wind });
        }
    }
    for (idx, steps) in sched.input_bias.iter().enumerate() {
        if steps.iter().any(|s| s.t_start == t && s.magnitude != 0.0) {
            events.push(SimEvent {
                t,
                kind: EventKind::InputBias { vehicle: idx + 1 },
            });
        }
    }
}
