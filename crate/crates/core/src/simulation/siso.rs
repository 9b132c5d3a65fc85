//! Single vehicle behind a static reference under a constant input bias.
//!
//! State `(s, p, v, a)` with `ds/dt = p`, `u = -(k_s s + k_p p + k_v v +
//! k_a a)` and `tau da/dt = u + psi - a`. The spacing error is `-p`.

use super::{SimConfig, SimError, Trajectory, VehicleSeries};
use crate::control::{block_char_poly, routh_verdict, GainVector, RouthVerdict};
use crate::ode::Rk4;

const SISO_DT: f64 = 0.01;

fn check_loop(gains: &GainVector, tau: f64) -> Result<(), SimError> {
    let c = block_char_poly(1.0, gains, tau)?;
    let poly: &[f64] = if gains.kappa_s == 0.0 { &c[..4] } else { &c };
    match routh_verdict(poly)? {
        RouthVerdict::Stable => Ok(()),
        v => Err(SimError::Unstable(format!("single-vehicle loop is {v:?} for {gains:?}"))),
    }
}

fn integrate<F: FnMut(f64, &[f64; 4], f64)>(
    gains: &GainVector,
    tau: f64,
    psi: f64,
    dt: f64,
    t_final: f64,
    mut sample: F,
) -> Result<(), SimError> {
    let g = *gains;
    let input = |y: &[f64]| -(g.kappa_s * y[0] + g.kappa_p * y[1] + g.kappa_v * y[2] + g.kappa_a * y[3]);
    let mut y = [0.0; 4];
    let mut rk = Rk4::new(4);
    let steps = (t_final / dt).round() as usize;
    sample(0.0, &y, input(&y));
    for k in 0..steps {
        rk.step(
            |_, y, dy| {
                let u = input(y);
                dy[0] = y[1];
                dy[1] = y[2];
                dy[2] = y[3];
                dy[3] = (u + psi - y[3]) / tau;
            },
            k as f64 * dt,
            &mut y,
            dt,
        );
        let t = (k + 1) as f64 * dt;
        if y.iter().any(|v| !(v.abs() <= super::BLOWUP_LIMIT)) {
            return Err(SimError::Diverged {
                t,
                vehicle: 1,
                value: y.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            });
        }
        sample(t, &y, input(&y));
    }
    Ok(())
}

/// Long-run spacing error of the single-vehicle loop under an input step
/// `kappa_psi` applied at t = 0: the mean of `-p` over the last
/// `min(20 s, t_final / 4)`.
pub fn siso_disturbance_run(gains: &GainVector, tau: f64, kappa_psi: f64, t_final: f64) -> Result<f64, SimError> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(SimError::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    if !(t_final.is_finite() && t_final > SISO_DT) || !kappa_psi.is_finite() || !gains.is_finite() {
        return Err(SimError::InvalidConfig("t_final, kappa_psi and gains must be finite".into()));
    }
    check_loop(gains, tau)?;
    let window = (t_final / 4.0).min(20.0);
    let t_from = t_final - window;
    let (mut sum, mut count) = (0.0, 0usize);
    integrate(gains, tau, kappa_psi, SISO_DT, t_final, |t, y, _| {
        if t >= t_from - 1e-9 {
            sum += -y[1];
            count += 1;
        }
    })?;
    Ok(sum / count as f64)
}

/// Trajectory of the single-vehicle loop in platoon form: veh 0 is the
/// static reference at the origin, veh 1 the controlled vehicle.
pub fn siso_trajectory(config: &SimConfig) -> Result<Trajectory, SimError> {
    let tau = config.plant_params.powertrain_tau;
    if !config.allow_uncertified {
        check_loop(&config.gains, tau)?;
    }
    let spacing = config.policy.gap + config.policy.vehicle_length;
    let steps = (config.t_final / config.dt).round() as usize + 1;
    let mut times = Vec::with_capacity(steps);
    let mut lead = VehicleSeries::with_capacity(steps);
    let mut veh = VehicleSeries::with_capacity(steps);
    let mut errors = Vec::with_capacity(steps);
    integrate(&config.gains, tau, config.siso_kappa_psi, config.dt, config.t_final, |t, y, u| {
        times.push(t);
        for s in [&mut lead.position, &mut lead.velocity, &mut lead.acceleration, &mut lead.input, &mut lead.torque] {
            s.push(0.0);
        }
        veh.position.push(y[1] - spacing);
        veh.velocity.push(y[2]);
        veh.acceleration.push(y[3]);
        veh.input.push(u);
        veh.torque.push(0.0);
        errors.push(-y[1]);
    })?;
    Ok(Trajectory {
        times,
        vehicles: vec![lead, veh],
        spacing_errors: vec![errors],
        events: Vec::new(),
        gap: config.policy.gap,
        label: "SISO".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::steady_state_error;

    #[test]
    fn proportional_loop_keeps_offset() {
        let g = GainVector::new(0.0, 1.0, 3.45, 1.0);
        let e = siso_disturbance_run(&g, 0.15, 1.0, 200.0).unwrap();
        assert!((e + 1.0).abs() < 0.01, "{e}");
        assert!((e - steady_state_error(1.0, &g).unwrap()).abs() < 0.01);
    }

    #[test]
    fn integral_loop_removes_offset() {
        let g = GainVector::new(0.15, 1.0, 3.45, 1.0);
        let e = siso_disturbance_run(&g, 0.15, 1.0, 300.0).unwrap();
        assert!(e.abs() < 0.01, "{e}");
    }

    #[test]
    fn no_disturbance_no_error() {
        let g = GainVector::new(0.15, 1.0, 3.45, 1.0);
        assert_eq!(siso_disturbance_run(&g, 0.15, 0.0, 50.0).unwrap(), 0.0);
    }

    #[test]
    fn unstable_loop_is_rejected() {
        let g = GainVector::new(-0.1, 1.0, 3.45, 1.0);
        assert!(matches!(siso_disturbance_run(&g, 0.15, 1.0, 50.0), Err(SimError::Unstable(_))));
    }
}
