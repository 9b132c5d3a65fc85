//! Sectioned key-value configuration.
//!
//! ```text
//! # comment
//! [topology]
//! kind = PF, BDL        # one scenario per kind
//! n = 9
//!
//! [gains]
//! preset = reference-integral
//! kappa_s = 0.2         # overrides the preset entry
//!
//! [schedule]
//! slope.angle_deg = 10
//! input_bias.3 = 0.5@40, -0.5@80
//! ```
//!
//! A `[section]` header prefixes the keys below it, so the file is a flat map
//! from dotted keys to strings. Keys outside any section are taken verbatim.
//! Every key must appear in [`KEYS`] (or match `schedule.input_bias.<i>`),
//! and each key may be set once per file; `--override key=value` replaces.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::control::{reference_gains, GainColumn, GainVector, SpacingPolicy};
use crate::dynamics::{DragRateTerm, ParamMismatch, VehicleParams};
use crate::simulation::{
    BiasStep, ControllerOptions, DisturbanceSchedule, InitialCondition, LeaderPulse, PlantMode, SimConfig, SimError,
    SlopeStep, WindStep,
};
use crate::topology::{build_named, Topology, TopologyError, TopologyKind, MAX_FOLLOWERS};

/// Upper bound on sweep points per axis.
pub const MAX_GRID_STEPS: usize = 10_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: key '{key}' set twice")]
    Duplicate { key: String, line: usize },
    #[error("unknown key '{key}'{}", location(*.line))]
    UnknownKey { key: String, line: Option<usize> },
    #[error("invalid value '{value}' for '{key}': {msg}")]
    InvalidValue { key: String, value: String, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read '{}': {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("{0}")]
    Sim(#[from] SimError),
}

fn location(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_else(|| " in override".into())
}

/// A documented configuration key.
#[derive(Debug, Clone, Copy)]
pub struct KeyDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

const fn k(key: &'static str, default: &'static str, doc: &'static str) -> KeyDoc {
    KeyDoc { key, default, doc }
}

/// Every accepted key except the indexed `schedule.input_bias.<i>`.
pub const KEYS: &[KeyDoc] = &[
    k("topology.kind", "PF", "Comma-separated kinds; one scenario each. PF PFL TPF TPFL rPF rPFL BD BDL rBD rBDL."),
    k("topology.n", "9", "Number of followers."),
    k("topology.range", "per kind", "Communication range r of the generalized kinds: 5 for rPF/rPFL, 4 for rBD/rBDL."),
    k("topology.file", "unset", "Topology matrix file, relative to the config file. Excludes kind/n/range."),
    k("gains.preset", "reference-integral", "reference-integral, reference-no-integral or none (then all four gains are required)."),
    k("gains.kappa_s", "preset", "Integral spacing gain."),
    k("gains.kappa_p", "preset", "Spacing gain."),
    k("gains.kappa_v", "preset", "Velocity gain."),
    k("gains.kappa_a", "preset", "Acceleration gain."),
    k("vehicle.mass", "1613", "kg."),
    k("vehicle.driveline_efficiency", "1.0", "In (0, 1]."),
    k("vehicle.tire_radius", "0.34", "m."),
    k("vehicle.air_density", "1.225", "kg/m^3."),
    k("vehicle.drag_coefficient", "0.62", "Aerodynamic drag coefficient."),
    k("vehicle.gravity", "9.8", "m/s^2."),
    k("vehicle.rolling_resistance", "0.01", "Rolling resistance coefficient."),
    k("vehicle.powertrain_tau", "0.15", "Powertrain time constant, s. Also the tau of certification."),
    k("vehicle.length", "0", "Vehicle length l, m."),
    k("mismatch.mass", "1.0", "Controller estimate / true value."),
    k("mismatch.driveline_efficiency", "1.0", "Controller estimate / true value."),
    k("mismatch.tire_radius", "1.0", "Controller estimate / true value."),
    k("mismatch.air_density", "1.0", "Controller estimate / true value."),
    k("mismatch.drag_coefficient", "1.10", "Controller estimate / true value."),
    k("mismatch.rolling_resistance", "1.20", "Controller estimate / true value."),
    k("mismatch.powertrain_tau", "0.90", "Controller estimate / true value."),
    k("controller.sees_disturbances", "false", "Feed the true slope and wind to the linearizing torque law."),
    k("controller.drag_rate", "exact", "exact or verbatim form of the drag-rate term in the torque law."),
    k("controller.integral_clamp", "none", "Anti-windup bound on each integral state, m s."),
    k("controller.accel_limit", "none", "Saturation of the acceleration command, m/s^2."),
    k("controller.allow_uncertified", "false", "Simulate gains that fail certification."),
    k("policy.gap", "10", "Desired gap d, m."),
    k("schedule.leader_pulse.enabled", "true", "Leader input pulse."),
    k("schedule.leader_pulse.magnitude", "1", "m/s^2."),
    k("schedule.leader_pulse.t_start", "30", "s."),
    k("schedule.leader_pulse.t_end", "35", "s."),
    k("schedule.slope.enabled", "true", "Road slope step."),
    k("schedule.slope.angle_deg", "10", "Degrees."),
    k("schedule.slope.trigger_position", "1680", "Position where the slope begins, m."),
    k("schedule.slope.per_vehicle", "true", "Each vehicle meets the slope at its own crossing; false applies it to all at the first."),
    k("schedule.wind.enabled", "true", "Wind step."),
    k("schedule.wind.speed", "20", "m/s; the sign is kept as given."),
    k("schedule.wind.t_start", "150", "s."),
    k("initial.speed", "15", "Initial speed of every vehicle, m/s."),
    k("initial.gap_offsets", "none", "Comma-separated initial spacing offsets, one per follower, m."),
    k("sim.dt", "0.01", "RK4 step, s."),
    k("sim.t_final", "250", "s."),
    k("sim.plant_mode", "nonlinear", "nonlinear, linear-third-order or linear-fourth-order-siso."),
    k("sim.kappa_psi", "1", "Input bias of the single-vehicle mode, m/s^2."),
    k("sim.output_stride", "1", "Write every k-th sample to the trajectory CSV."),
    k("analysis.settle_window", "20", "Steady-state window at the end of each epoch, s."),
    k("analysis.settle_band", "0.02", "Settling band on |e|, m."),
    k("analysis.tol", "1e-7", "Tolerance of the Hurwitz and spectrum-union checks."),
    k("analysis.max_states", "400", "Largest closed-loop matrix built."),
    k("sweep.x", "kappa_v:0.1:5:50", "Grid axis gain:min:max:steps."),
    k("sweep.y", "none", "Optional second axis gain:min:max:steps."),
];

const INPUT_BIAS_PREFIX: &str = "schedule.input_bias.";

fn is_known(key: &str) -> bool {
    if let Some(idx) = key.strip_prefix(INPUT_BIAS_PREFIX) {
        return idx.parse::<usize>().map(|i| i >= 1).unwrap_or(false);
    }
    KEYS.iter().any(|d| d.key == key)
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    /// `None` for overrides.
    line: Option<usize>,
}

/// The flat key-value map of a config file plus overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key.split('.').all(|part| {
            !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        })
}

fn strip_quotes(v: &str) -> &str {
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        &v[1..v.len() - 1]
    } else {
        v
    }
}

impl RawConfig {
    /// Parse the text form. Syntax and duplicate keys are checked here,
    /// key names are checked by [`RawConfig::check_keys`].
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        let mut section = String::new();
        for (idx, full) in text.lines().enumerate() {
            let line = idx + 1;
            let body = full.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line,
                    msg: "section header must end with ']'".into(),
                })?;
                let name = name.trim();
                if !name.is_empty() && !valid_key(name) {
                    return Err(ConfigError::Syntax {
                        line,
                        msg: format!("invalid section name '{name}'"),
                    });
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: "expected 'key = value'".into(),
            })?;
            let key = key.trim();
            if !valid_key(key) {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("invalid key '{key}'"),
                });
            }
            let full_key = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            let value = strip_quotes(value.trim()).to_string();
            if raw.entries.contains_key(&full_key) {
                return Err(ConfigError::Duplicate { key: full_key, line });
            }
            raw.entries.insert(full_key, Entry { value, line: Some(line) });
        }
        Ok(raw)
    }

    /// Apply `key=value`, replacing any value from the file.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("override '{assignment}' is not key=value")))?;
        let key = key.trim();
        if !valid_key(key) {
            return Err(ConfigError::Invalid(format!("override has invalid key '{key}'")));
        }
        self.entries.insert(
            key.to_string(),
            Entry {
                value: strip_quotes(value.trim()).to_string(),
                line: None,
            },
        );
        Ok(())
    }

    pub fn check_keys(&self) -> Result<(), ConfigError> {
        for (key, e) in &self.entries {
            if !is_known(key) {
                return Err(ConfigError::UnknownKey {
                    key: key.clone(),
                    line: e.line,
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn value<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| invalid(key, v, e)),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.value::<f64>(key)?.unwrap_or(default);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(invalid(key, &v.to_string(), "must be finite"))
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => parse_bool(v).ok_or_else(|| invalid(key, v, "expected true or false")),
        }
    }

    fn optional_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) if v.eq_ignore_ascii_case("none") => Ok(None),
            Some(_) => self.f64_or(key, 0.0).map(Some),
        }
    }
}

fn invalid(key: &str, value: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        msg: msg.to_string(),
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

/// Which gain the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainParam {
    KappaS,
    KappaP,
    KappaV,
    KappaA,
}

impl GainParam {
    pub fn label(self) -> &'static str {
        match self {
            GainParam::KappaS => "kappa_s",
            GainParam::KappaP => "kappa_p",
            GainParam::KappaV => "kappa_v",
            GainParam::KappaA => "kappa_a",
        }
    }

    pub fn set(self, g: &mut GainVector, value: f64) {
        match self {
            GainParam::KappaS => g.kappa_s = value,
            GainParam::KappaP => g.kappa_p = value,
            GainParam::KappaV => g.kappa_v = value,
            GainParam::KappaA => g.kappa_a = value,
        }
    }
}

impl FromStr for GainParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "kappa_s" => Ok(GainParam::KappaS),
            "kappa_p" => Ok(GainParam::KappaP),
            "kappa_v" => Ok(GainParam::KappaV),
            "kappa_a" => Ok(GainParam::KappaA),
            other => Err(format!("unknown gain '{other}'")),
        }
    }
}

/// One sweep axis: `steps` evenly spaced values from `min` to `max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub param: GainParam,
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        if self.steps == 1 {
            return vec![self.min];
        }
        let h = (self.max - self.min) / (self.steps - 1) as f64;
        (0..self.steps).map(|i| self.min + h * i as f64).collect()
    }
}

impl FromStr for GridAxis {
    type Err = String;

    /// `gain:min:max:steps`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if parts.len() != 4 {
            return Err("expected gain:min:max:steps".into());
        }
        let param = parts[0].parse()?;
        let min: f64 = parts[1].parse().map_err(|e| format!("min: {e}"))?;
        let max: f64 = parts[2].parse().map_err(|e| format!("max: {e}"))?;
        let steps: usize = parts[3].parse().map_err(|e| format!("steps: {e}"))?;
        if !(min.is_finite() && max.is_finite()) {
            return Err("bounds must be finite".into());
        }
        if max < min {
            return Err("max must not be below min".into());
        }
        if steps == 0 || steps > MAX_GRID_STEPS {
            return Err(format!("steps must be in 1..={MAX_GRID_STEPS}"));
        }
        if steps > 1 && max == min {
            return Err("a multi-point axis needs max > min".into());
        }
        Ok(GridAxis { param, min, max, steps })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepGrid {
    pub x: GridAxis,
    pub y: Option<GridAxis>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainPreset {
    Integral,
    NoIntegral,
    None,
}

impl FromStr for GainPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reference-integral" => Ok(GainPreset::Integral),
            "reference-no-integral" => Ok(GainPreset::NoIntegral),
            "none" => Ok(GainPreset::None),
            other => Err(format!("unknown preset '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisSettings {
    pub settle_window: f64,
    pub settle_band: f64,
    pub tol: f64,
    pub max_states: usize,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            settle_window: 20.0,
            settle_band: 0.02,
            tol: 1e-7,
            max_states: crate::analysis::DEFAULT_MAX_STATES,
        }
    }
}

/// One topology with its simulation setup.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: String,
    pub sim: SimConfig,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub scenarios: Vec<Scenario>,
    pub analysis: AnalysisSettings,
    pub sweep: SweepGrid,
    pub output_stride: usize,
}

impl Config {
    /// Read `path`, apply `overrides` and build the scenarios. A topology
    /// file is resolved against the config file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut raw = RawConfig::parse(&text)?;
        for o in overrides {
            raw.apply_override(o)?;
        }
        Config::from_raw(&raw, |p| {
            let full = base.join(p);
            std::fs::read_to_string(&full).map_err(|source| ConfigError::Io { path: full, source })
        })
    }

    /// Defaults plus `overrides`, without a file.
    pub fn from_overrides(overrides: &[String]) -> Result<Config, ConfigError> {
        let mut raw = RawConfig::default();
        for o in overrides {
            raw.apply_override(o)?;
        }
        Config::from_raw(&raw, |p| {
            std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })
        })
    }

    /// Build from a parsed map. `read_file` supplies `topology.file`.
    pub fn from_raw<F>(raw: &RawConfig, mut read_file: F) -> Result<Config, ConfigError>
    where
        F: FnMut(&Path) -> Result<String, ConfigError>,
    {
        raw.check_keys()?;
        let topologies = topologies(raw, &mut read_file)?;
        let preset = raw.value::<GainPreset>("gains.preset")?.unwrap_or(GainPreset::Integral);

        let plant = vehicle_params(raw)?;
        let mismatch = param_mismatch(raw)?;
        let controller_params = plant.perturbed(&mismatch);
        let schedule = schedule(raw, topologies[0].n_followers())?;
        let controller = ControllerOptions {
            sees_disturbances: raw.bool_or("controller.sees_disturbances", false)?,
            drag_rate_form: match raw.get("controller.drag_rate").map(str::to_ascii_lowercase).as_deref() {
                None | Some("exact") => DragRateTerm::Exact,
                Some("verbatim") => DragRateTerm::Verbatim,
                Some(v) => return Err(invalid("controller.drag_rate", v, "expected exact or verbatim")),
            },
            integral_clamp: raw.optional_f64("controller.integral_clamp")?,
            accel_limit: raw.optional_f64("controller.accel_limit")?,
        };
        let allow_uncertified = raw.bool_or("controller.allow_uncertified", false)?;
        let policy = SpacingPolicy {
            gap: raw.f64_or("policy.gap", SpacingPolicy::default().gap)?,
            vehicle_length: plant.length,
        };
        let initial = InitialCondition {
            speed: raw.f64_or("initial.speed", InitialCondition::default().speed)?,
            gap_offsets: match raw.get("initial.gap_offsets") {
                None => Vec::new(),
                Some(v) if v.eq_ignore_ascii_case("none") => Vec::new(),
                Some(v) => parse_list(v).map_err(|m| invalid("initial.gap_offsets", v, m))?,
            },
        };
        let plant_mode = match raw.get("sim.plant_mode") {
            None => PlantMode::Nonlinear,
            Some(v) => v.parse().map_err(|e: SimError| invalid("sim.plant_mode", v, e))?,
        };

        let mut scenarios = Vec::with_capacity(topologies.len());
        for topo in topologies {
            let gains = gains_for(raw, preset, &topo)?;
            let mut sim = SimConfig::new(topo, gains);
            sim.plant_params = plant;
            sim.controller_params = controller_params;
            sim.policy = policy;
            sim.schedule = schedule.clone();
            sim.initial = initial.clone();
            sim.dt = raw.f64_or("sim.dt", sim.dt)?;
            sim.t_final = raw.f64_or("sim.t_final", sim.t_final)?;
            sim.plant_mode = plant_mode;
            sim.controller = controller;
            sim.allow_uncertified = allow_uncertified;
            sim.siso_kappa_psi = raw.f64_or("sim.kappa_psi", sim.siso_kappa_psi)?;
            sim.validate()?;
            let label = sim.topology.kind().to_string();
            if scenarios.iter().any(|s: &Scenario| s.label == label) {
                return Err(ConfigError::Invalid(format!("topology '{label}' listed twice")));
            }
            scenarios.push(Scenario { label, sim });
        }

        let defaults = AnalysisSettings::default();
        let analysis = AnalysisSettings {
            settle_window: raw.f64_or("analysis.settle_window", defaults.settle_window)?,
            settle_band: raw.f64_or("analysis.settle_band", defaults.settle_band)?,
            tol: raw.f64_or("analysis.tol", defaults.tol)?,
            max_states: raw.value("analysis.max_states")?.unwrap_or(defaults.max_states),
        };
        for (key, v) in [
            ("analysis.settle_window", analysis.settle_window),
            ("analysis.settle_band", analysis.settle_band),
            ("analysis.tol", analysis.tol),
        ] {
            if v <= 0.0 {
                return Err(invalid(key, &v.to_string(), "must be positive"));
            }
        }
        let sweep = SweepGrid {
            x: raw.value("sweep.x")?.unwrap_or(GridAxis {
                param: GainParam::KappaV,
                min: 0.1,
                max: 5.0,
                steps: 50,
            }),
            y: match raw.get("sweep.y") {
                Some(v) if v.eq_ignore_ascii_case("none") => None,
                _ => raw.value("sweep.y")?,
            },
        };
        if sweep.y.is_some_and(|y| y.param == sweep.x.param) {
            return Err(ConfigError::Invalid("sweep.x and sweep.y vary the same gain".into()));
        }
        let output_stride = raw.value::<usize>("sim.output_stride")?.unwrap_or(1);
        if output_stride == 0 {
            return Err(invalid("sim.output_stride", "0", "must be at least 1"));
        }
        Ok(Config {
            scenarios,
            analysis,
            sweep,
            output_stride,
        })
    }
}

fn topologies<F>(raw: &RawConfig, read_file: &mut F) -> Result<Vec<Topology>, ConfigError>
where
    F: FnMut(&Path) -> Result<String, ConfigError>,
{
    if let Some(file) = raw.get("topology.file") {
        for key in ["topology.kind", "topology.n", "topology.range"] {
            if raw.contains(key) {
                return Err(ConfigError::Invalid(format!("'{key}' conflicts with topology.file")));
            }
        }
        let text = read_file(Path::new(file))?;
        return Ok(vec![Topology::parse(&text)?]);
    }
    let n: usize = raw.value("topology.n")?.unwrap_or(9);
    if n == 0 || n > MAX_FOLLOWERS {
        return Err(invalid("topology.n", &n.to_string(), format!("must be in 1..={MAX_FOLLOWERS}")));
    }
    let range: Option<usize> = raw.value("topology.range")?;
    let kinds = raw.get("topology.kind").unwrap_or("PF");
    let mut out = Vec::new();
    for label in kinds.split(',').map(str::trim) {
        let kind: TopologyKind = label.parse()?;
        if kind == TopologyKind::Custom {
            return Err(invalid("topology.kind", label, "custom topologies come from topology.file"));
        }
        let r = if kind.is_generalized() {
            range.unwrap_or(kind.reference_range())
        } else {
            1
        };
        out.push(build_named(kind, n, r)?);
    }
    Ok(out)
}

fn gains_for(raw: &RawConfig, preset: GainPreset, topo: &Topology) -> Result<GainVector, ConfigError> {
    let keys = ["gains.kappa_s", "gains.kappa_p", "gains.kappa_v", "gains.kappa_a"];
    let base = match preset {
        GainPreset::Integral => reference_gains(topo.kind(), GainColumn::WithIntegral),
        GainPreset::NoIntegral => reference_gains(topo.kind(), GainColumn::WithoutIntegral),
        GainPreset::None => None,
    };
    let mut g = match base {
        Some(g) => g,
        None => {
            if let Some(missing) = keys.iter().find(|k| !raw.contains(k)) {
                return Err(ConfigError::Invalid(format!(
                    "no preset gains for {} with preset {:?}; '{missing}' is required",
                    topo.kind(),
                    preset
                )));
            }
            GainVector::new(0.0, 0.0, 0.0, 0.0)
        }
    };
    g.kappa_s = raw.f64_or(keys[0], g.kappa_s)?;
    g.kappa_p = raw.f64_or(keys[1], g.kappa_p)?;
    g.kappa_v = raw.f64_or(keys[2], g.kappa_v)?;
    g.kappa_a = raw.f64_or(keys[3], g.kappa_a)?;
    Ok(g)
}

fn vehicle_params(raw: &RawConfig) -> Result<VehicleParams, ConfigError> {
    let d = VehicleParams::default();
    Ok(VehicleParams {
        mass: raw.f64_or("vehicle.mass", d.mass)?,
        driveline_efficiency: raw.f64_or("vehicle.driveline_efficiency", d.driveline_efficiency)?,
        tire_radius: raw.f64_or("vehicle.tire_radius", d.tire_radius)?,
        air_density: raw.f64_or("vehicle.air_density", d.air_density)?,
        drag_coefficient: raw.f64_or("vehicle.drag_coefficient", d.drag_coefficient)?,
        gravity: raw.f64_or("vehicle.gravity", d.gravity)?,
        rolling_resistance: raw.f64_or("vehicle.rolling_resistance", d.rolling_resistance)?,
        powertrain_tau: raw.f64_or("vehicle.powertrain_tau", d.powertrain_tau)?,
        length: raw.f64_or("vehicle.length", d.length)?,
    })
}

fn param_mismatch(raw: &RawConfig) -> Result<ParamMismatch, ConfigError> {
    let d = ParamMismatch::default();
    let m = ParamMismatch {
        mass: raw.f64_or("mismatch.mass", d.mass)?,
        driveline_efficiency: raw.f64_or("mismatch.driveline_efficiency", d.driveline_efficiency)?,
        tire_radius: raw.f64_or("mismatch.tire_radius", d.tire_radius)?,
        air_density: raw.f64_or("mismatch.air_density", d.air_density)?,
        drag_coefficient: raw.f64_or("mismatch.drag_coefficient", d.drag_coefficient)?,
        rolling_resistance: raw.f64_or("mismatch.rolling_resistance", d.rolling_resistance)?,
        powertrain_tau: raw.f64_or("mismatch.powertrain_tau", d.powertrain_tau)?,
    };
    Ok(m)
}

fn schedule(raw: &RawConfig, n: usize) -> Result<DisturbanceSchedule, ConfigError> {
    let r = DisturbanceSchedule::reference();
    let pulse = r.leader_pulse.expect("reference has a pulse");
    let slope = r.slope.expect("reference has a slope");
    let wind = r.wind.expect("reference has wind");
    let mut s = DisturbanceSchedule::none();
    if raw.bool_or("schedule.leader_pulse.enabled", true)? {
        s.leader_pulse = Some(LeaderPulse {
            magnitude: raw.f64_or("schedule.leader_pulse.magnitude", pulse.magnitude)?,
            t_start: raw.f64_or("schedule.leader_pulse.t_start", pulse.t_start)?,
            t_end: raw.f64_or("schedule.leader_pulse.t_end", pulse.t_end)?,
        });
    }
    if raw.bool_or("schedule.slope.enabled", true)? {
        s.slope = Some(SlopeStep {
            angle: raw.f64_or("schedule.slope.angle_deg", slope.angle.to_degrees())?.to_radians(),
            trigger_position: raw.f64_or("schedule.slope.trigger_position", slope.trigger_position)?,
            per_vehicle: raw.bool_or("schedule.slope.per_vehicle", slope.per_vehicle)?,
        });
    }
    if raw.bool_or("schedule.wind.enabled", true)? {
        s.wind = Some(WindStep {
            speed: raw.f64_or("schedule.wind.speed", wind.speed)?,
            t_start: raw.f64_or("schedule.wind.t_start", wind.t_start)?,
        });
    }
    for key in raw.keys().filter(|k| k.starts_with(INPUT_BIAS_PREFIX)) {
        let i: usize = key[INPUT_BIAS_PREFIX.len()..].parse().expect("checked by check_keys");
        if i > n {
            return Err(ConfigError::Invalid(format!("'{key}' names follower {i}, platoon has {n}")));
        }
        let value = raw.get(key).expect("key from map");
        let steps = parse_bias(value).map_err(|m| invalid(key, value, m))?;
        if s.input_bias.len() < i {
            s.input_bias.resize(i, Vec::new());
        }
        s.input_bias[i - 1] = steps;
    }
    Ok(s)
}

fn parse_list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',')
        .map(|x| {
            let x = x.trim();
            x.parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .ok_or_else(|| format!("'{x}' is not a finite number"))
        })
        .collect()
}

/// `mag@t, mag@t, ...`: steps adding `mag` m/s^2 from time `t`.
fn parse_bias(v: &str) -> Result<Vec<BiasStep>, String> {
    v.split(',')
        .map(|item| {
            let (m, t) = item.split_once('@').ok_or_else(|| format!("'{}' is not mag@t", item.trim()))?;
            let list = parse_list(&format!("{m},{t}"))?;
            Ok(BiasStep {
                magnitude: list[0],
                t_start: list[1],
            })
        })
        .collect()
}

/// Default config text with every key commented out at its default value.
pub fn template() -> String {
    let mut out = String::new();
    let mut section = "";
    for d in KEYS {
        let (sec, key) = d.key.split_once('.').expect("keys are dotted");
        if sec != section {
            if !section.is_empty() {
                out.push('\n');
            }
            out.push_str(&format!("[{sec}]\n"));
            section = sec;
        }
        out.push_str(&format!("# {}\n# {key} = {}\n", d.doc, d.default));
    }
    out
}
