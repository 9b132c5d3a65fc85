//! Classical fixed-step fourth-order Runge–Kutta.

/// RK4 stepper with reusable stage buffers.
///
/// The right-hand side writes `dy/dt` into its output slice.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Rk4 {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Advance `y` from `t` to `t + h` in place.
    pub fn step<F>(&mut self, mut f: F, t: f64, y: &mut [f64], h: f64)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        debug_assert_eq!(n, self.k1.len());
        f(t, y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        f(t + h, &self.tmp, &mut self.k4);
        for i in 0..n {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_fourth_order() {
        let err_at = |h: f64| {
            let mut rk = Rk4::new(1);
            let mut y = [1.0];
            let steps = (1.0 / h).round() as usize;
            for k in 0..steps {
                rk.step(|_, y, dy| dy[0] = -y[0], k as f64 * h, &mut y, h);
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err_at(0.1) / err_at(0.05);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn harmonic_oscillator_conserves_energy_closely() {
        let mut rk = Rk4::new(2);
        let mut y = [1.0, 0.0];
        let h = 0.01;
        for k in 0..1000 {
            rk.step(
                |_, y, dy| {
                    dy[0] = y[1];
                    dy[1] = -y[0];
                },
                k as f64 * h,
                &mut y,
                h,
            );
        }
        assert!((y[0] - 10.0f64.cos()).abs() < 1e-8);
        assert!((y[1] + 10.0f64.sin()).abs() < 1e-8);
    }
}
