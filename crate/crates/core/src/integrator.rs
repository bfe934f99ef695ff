//! Classical fixed-step fourth-order Runge–Kutta.

/// Reusable stage buffers for a state of fixed length.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(len: usize) -> Self {
        Self {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }

    /// Advances `y` from `t` to `t + dt` in place. `rhs(t, y, dy)` writes the
    /// derivative into `dy`.
    pub fn step<E, F>(&mut self, rhs: &mut F, t: f64, y: &mut [f64], dt: f64) -> Result<(), E>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
    {
        let half = 0.5 * dt;
        rhs(t, y, &mut self.k1)?;
        for ((tmp, &yi), &k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k1) {
            *tmp = yi + half * k;
        }
        rhs(t + half, &self.tmp, &mut self.k2)?;
        for ((tmp, &yi), &k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k2) {
            *tmp = yi + half * k;
        }
        rhs(t + half, &self.tmp, &mut self.k3)?;
        for ((tmp, &yi), &k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k3) {
            *tmp = yi + dt * k;
        }
        rhs(t + dt, &self.tmp, &mut self.k4)?;
        let sixth = dt / 6.0;
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += sixth * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

/// Fixed-step time horizon with output decimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_end: f64,
    pub dt: f64,
    pub record_every: usize,
}

impl TimeGrid {
    /// Number of RK4 steps, `round(t_end / dt)`.
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Whether step index `step` (1-based, after the step) is logged. The
    /// initial state and the final step are always logged.
    pub fn records(&self, step: usize) -> bool {
        step.is_multiple_of(self.record_every.max(1)) || step == self.n_steps()
    }

    pub fn time_at(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }
}
