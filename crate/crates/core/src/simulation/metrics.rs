//! Per-epoch spacing-error metrics.

use super::{SimError, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// Follower index, 1-based.
    pub vehicle: usize,
    pub epoch: String,
    pub t_start: f64,
    pub t_end: f64,
    /// Mean spacing error over the final window of the epoch.
    pub steady_state_error: f64,
    /// Largest `|e|` inside the final window.
    pub window_max_abs_error: f64,
    pub max_abs_error: f64,
    /// Time from epoch start until `|e|` last leaves the band; `Some(0)` if
    /// it never leaves, `None` if it is outside the band at the epoch end.
    pub settling_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSummary {
    pub vehicle: usize,
    pub max_abs_error: f64,
    pub min_spacing_error: f64,
    /// `min_spacing_error <= -gap`.
    pub collision: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub settle_window: f64,
    pub settle_band: f64,
    pub epochs: Vec<EpochMetrics>,
    pub vehicles: Vec<VehicleSummary>,
}

impl Metrics {
    pub fn any_collision(&self) -> bool {
        self.vehicles.iter().any(|v| v.collision)
    }

    pub fn epochs_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a EpochMetrics> + 'a {
        self.epochs.iter().filter(move |e| e.epoch == name)
    }
}

// Last instant |e| exits the band, linearly interpolated between samples.
fn settling_time(times: &[f64], errors: &[f64], band: f64) -> Option<f64> {
    let last_out = errors.iter().rposition(|e| e.abs() > band);
    match last_out {
        None => Some(0.0),
        Some(k) if k + 1 == errors.len() => None,
        Some(k) => {
            let (e0, e1) = (errors[k].abs(), errors[k + 1].abs());
            let frac = if e0 == e1 { 0.0 } else { (e0 - band) / (e0 - e1) };
            Some(times[k] + frac * (times[k + 1] - times[k]) - times[0])
        }
    }
}

/// Epoch-wise steady-state error, settling time and collision flags.
///
/// Epochs are taken from [`Trajectory::epoch_starts`]; the last one ends at
/// the final sample. Every epoch must be at least `settle_window` long.
pub fn compute_metrics(traj: &Trajectory, settle_window: f64, settle_band: f64) -> Result<Metrics, SimError> {
    if traj.is_empty() || traj.spacing_errors.is_empty() {
        return Err(SimError::EmptyTrajectory);
    }
    if !(settle_window > 0.0 && settle_window.is_finite()) || !(settle_band > 0.0 && settle_band.is_finite()) {
        return Err(SimError::InvalidConfig(format!(
            "settle window and band must be positive, got {settle_window} and {settle_band}"
        )));
    }
    let times = &traj.times;
    let t_last = *times.last().expect("non-empty");
    let starts = traj.epoch_starts();
    // Sample ranges [k0, k1] per epoch; the boundary sample belongs to the
    // later epoch.
    let mut ranges = Vec::with_capacity(starts.len());
    for (idx, (label, t0)) in starts.iter().enumerate() {
        let t1 = starts.get(idx + 1).map(|s| s.1).unwrap_or(t_last);
        let length = t1 - t0;
        if settle_window > length + 1e-9 {
            return Err(SimError::WindowTooLong {
                epoch: label.clone(),
                window: settle_window,
                length,
            });
        }
        let k0 = times.partition_point(|t| *t < *t0);
        let k1 = if idx + 1 < starts.len() {
            times.partition_point(|t| *t < t1).saturating_sub(1)
        } else {
            times.len() - 1
        };
        let w0 = times.partition_point(|t| *t < times[k1] - settle_window - 1e-9).max(k0);
        ranges.push((label.clone(), *t0, t1, k0, k1, w0));
    }

    let mut epochs = Vec::new();
    for (i, e) in traj.spacing_errors.iter().enumerate() {
        for (label, t0, t1, k0, k1, w0) in &ranges {
            let window = &e[*w0..=*k1];
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            let window_max = window.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let span = &e[*k0..=*k1];
            epochs.push(EpochMetrics {
                vehicle: i + 1,
                epoch: label.clone(),
                t_start: *t0,
                t_end: *t1,
                steady_state_error: mean,
                window_max_abs_error: window_max,
                max_abs_error: span.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                settling_time: settling_time(&times[*k0..=*k1], span, settle_band),
            });
        }
    }
    let vehicles = traj
        .spacing_errors
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let min = e.iter().copied().fold(f64::INFINITY, f64::min);
            VehicleSummary {
                vehicle: i + 1,
                max_abs_error: e.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                min_spacing_error: min,
                collision: min <= -traj.gap,
            }
        })
        .collect();
    Ok(Metrics {
        settle_window,
        settle_band,
        epochs,
        vehicles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{EventKind, SimEvent, VehicleSeries};

    fn synthetic(f: impl Fn(f64) -> f64, t_final: f64, dt: f64, events: Vec<SimEvent>) -> Trajectory {
        let n = (t_final / dt).round() as usize;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        let e = times.iter().map(|t| f(*t)).collect();
        Trajectory {
            times,
            vehicles: vec![VehicleSeries::default(); 2],
            spacing_errors: vec![e],
            events,
            gap: 10.0,
            label: "test".into(),
        }
    }

    #[test]
    fn constant_error_mean() {
        let traj = synthetic(|_| 0.5, 50.0, 0.01, Vec::new());
        let m = compute_metrics(&traj, 20.0, 0.02).unwrap();
        assert_eq!(m.epochs.len(), 1);
        assert!((m.epochs[0].steady_state_error - 0.5).abs() < 1e-12);
        assert_eq!(m.epochs[0].settling_time, None);
        assert!(!m.any_collision());
    }

    #[test]
    fn exponential_settling_time() {
        let traj = synthetic(|t| (-t).exp(), 30.0, 0.001, Vec::new());
        let m = compute_metrics(&traj, 20.0, 0.02).unwrap();
        let ts = m.epochs[0].settling_time.unwrap();
        assert!((ts - (1.0f64 / 0.02).ln()).abs() < 1e-3, "{ts}");
    }

    #[test]
    fn epochs_split_at_events() {
        let events = vec![
            SimEvent {
                t: 30.0,
                kind: EventKind::Wind,
            },
            SimEvent {
                t: 60.0,
                kind: EventKind::Slope { vehicle: 1 },
            },
            SimEvent {
                t: 61.0,
                kind: EventKind::Slope { vehicle: 2 },
            },
        ];
        let traj = synthetic(|t| if t < 30.0 { 0.0 } else if t < 60.0 { 1.0 } else { -2.0 }, 90.0, 0.01, events);
        let m = compute_metrics(&traj, 20.0, 0.02).unwrap();
        let ss: Vec<_> = m.epochs.iter().map(|e| (e.epoch.as_str(), e.steady_state_error)).collect();
        assert_eq!(ss.len(), 3);
        assert_eq!(ss[0], ("initial", 0.0));
        assert_eq!(ss[1], ("wind", 1.0));
        assert_eq!(ss[2], ("slope", -2.0));
        assert_eq!(m.epochs[1].settling_time, None);
    }

    #[test]
    fn window_longer_than_epoch_is_rejected() {
        let events = vec![SimEvent {
            t: 10.0,
            kind: EventKind::Wind,
        }];
        let traj = synthetic(|_| 0.0, 50.0, 0.01, events);
        assert!(matches!(
            compute_metrics(&traj, 20.0, 0.02),
            Err(SimError::WindowTooLong { .. })
        ));
    }

    #[test]
    fn collision_flag() {
        let traj = synthetic(|t| if t > 5.0 { -10.5 } else { 0.0 }, 30.0, 0.01, Vec::new());
        let m = compute_metrics(&traj, 20.0, 0.02).unwrap();
        assert!(m.any_collision());
        assert!(m.vehicles[0].min_spacing_error <= -10.0);
    }
}
