//! Error classes and the exit-code contract shared by all commands.

use std::fmt;
use std::process::ExitCode;

use platoon_core::analysis::AnalysisError;
use platoon_core::config::ConfigError;
use platoon_core::control::ControlError;
use platoon_core::dynamics::DynamicsError;
use platoon_core::simulation::SimError;
use platoon_core::topology::TopologyError;

/// 0 success or stable, 1 certified unstable, 2 bad input, 3 not
/// applicable, 4 numerical failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Unstable = 1,
    BadInput = 2,
    NotApplicable = 3,
    Numerical = 4,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(s as u8)
    }
}

#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub message: String,
}

impl Failure {
    pub fn new(status: Status, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }

    pub fn bad_input(message: impl Into<String>) -> Self {
        Failure::new(Status::BadInput, message)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CmdResult = Result<Status, Failure>;

fn topology_status(e: &TopologyError) -> Status {
    match e {
        TopologyError::Linalg(_) => Status::Numerical,
        _ => Status::BadInput,
    }
}

fn control_status(e: &ControlError) -> Status {
    match e {
        ControlError::NotApplicable => Status::NotApplicable,
        ControlError::ZeroPivot { .. } => Status::Numerical,
        _ => Status::BadInput,
    }
}

fn analysis_status(e: &AnalysisError) -> Status {
    match e {
        AnalysisError::Linalg(_) => Status::Numerical,
        AnalysisError::Topology(t) => topology_status(t),
        _ => Status::BadInput,
    }
}

fn sim_status(e: &SimError) -> Status {
    match e {
        SimError::Uncertified(_) | SimError::Unstable(_) => Status::Unstable,
        SimError::Diverged { .. } | SimError::Dynamics(DynamicsError::NonFinite(_)) => Status::Numerical,
        SimError::Control(c) => control_status(c),
        SimError::Topology(t) => topology_status(t),
        SimError::Analysis(a) => analysis_status(a),
        _ => Status::BadInput,
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let status = match &e {
            ConfigError::Sim(s) => match sim_status(s) {
                Status::Numerical => Status::Numerical,
                _ => Status::BadInput,
            },
            ConfigError::Topology(t) => topology_status(t),
            _ => Status::BadInput,
        };
        Failure::new(status, format!("config: {e}"))
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::new(sim_status(&e), e.to_string())
    }
}

impl From<ControlError> for Failure {
    fn from(e: ControlError) -> Self {
        Failure::new(control_status(&e), e.to_string())
    }
}

impl From<TopologyError> for Failure {
    fn from(e: TopologyError) -> Self {
        Failure::new(topology_status(&e), e.to_string())
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        Failure::new(analysis_status(&e), e.to_string())
    }
}

/// Output files that cannot be written count as bad input (the output
/// directory is an input).
impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::bad_input(format!("i/o: {e}"))
    }
}
