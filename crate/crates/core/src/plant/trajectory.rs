use std::io::Write;

use nalgebra::DVector;

use super::{rk4_step, InputSignal, LtiModel};
use crate::error::{Error, Result};

/// States on a uniform time grid together with the input applied on every
/// step.
///
/// Inputs are stored per step as one-sided endpoint values, so an input that
/// jumps at a grid point (a receding-horizon update) still integrates with
/// trapezoid accuracy on both sides of the jump.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    t0: f64,
    dt: f64,
    m: usize,
    states: Vec<DVector<f64>>,
    input_start: Vec<DVector<f64>>,
    input_end: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, x0: DVector<f64>, m: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Domain(format!("step must be positive, got {dt}")));
        }
        Ok(Trajectory {
            t0,
            dt,
            m,
            states: vec![x0],
            input_start: Vec::new(),
            input_end: Vec::new(),
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of grid points (steps + 1).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.input_start.len()
    }

    pub fn n(&self) -> usize {
        self.states[0].len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.steps())
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &DVector<f64> {
        &self.states[i]
    }

    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory always holds x0")
    }

    /// Input applied from grid point `i` onwards; the final grid point
    /// reports the left limit of the last step.
    pub fn input(&self, i: usize) -> Option<&DVector<f64>> {
        if i < self.input_start.len() {
            Some(&self.input_start[i])
        } else if i == self.input_start.len() && i > 0 {
            Some(&self.input_end[i - 1])
        } else {
            None
        }
    }

    /// One-sided input values `(u(t_i+), u(t_(i+1)-))` on step `i`.
    pub fn step_inputs(&self, i: usize) -> (&DVector<f64>, &DVector<f64>) {
        (&self.input_start[i], &self.input_end[i])
    }

    /// Grid index of time `t`, which must lie on the grid within the span.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = ((t - self.t0) / self.dt).round();
        if k < 0.0 || k as usize >= self.len() {
            return Err(Error::Domain(format!(
                "time {t} outside trajectory span [{}, {}]",
                self.t0,
                self.end_time()
            )));
        }
        if (self.t0 + k * self.dt - t).abs() > 1e-9 * self.dt.max(t.abs()) {
            return Err(Error::Domain(format!(
                "time {t} is not on the grid of step {}",
                self.dt
            )));
        }
        Ok(k as usize)
    }

    /// Trapezoid integral of the state between grid points `i0 <= i1`.
    pub fn integrate_state(&self, i0: usize, i1: usize) -> DVector<f64> {
        let mut acc = DVector::zeros(self.n());
        for i in i0..i1 {
            acc += (&self.states[i] + &self.states[i + 1]) * 0.5;
        }
        acc * self.dt
    }

    /// Trapezoid integral of the applied input between grid points `i0 <= i1`.
    pub fn integrate_input(&self, i0: usize, i1: usize) -> DVector<f64> {
        let mut acc = DVector::zeros(self.m);
        for i in i0..i1 {
            acc += (&self.input_start[i] + &self.input_end[i]) * 0.5;
        }
        acc * self.dt
    }

    /// Integrates `steps` further steps of the plant under `input`.
    pub fn advance<I: InputSignal + ?Sized>(
        &mut self,
        model: &LtiModel,
        input: &I,
        steps: usize,
    ) -> Result<()> {
        if model.n() != self.n() || model.m() != self.m {
            return Err(Error::shape(
                "Trajectory::advance",
                format!(
                    "model is {}x{}, trajectory is {}x{}",
                    model.n(),
                    model.m(),
                    self.n(),
                    self.m
                ),
            ));
        }
        self.states.reserve(steps);
        for _ in 0..steps {
            let i = self.steps();
            let t = self.time(i);
            let x = self.last_state().clone();
            let u0 = input.input(t, &x);
            let next = rk4_step(model, &x, input, t, self.dt)?;
            let u1 = input.input(self.time(i + 1), &next);
            self.input_start.push(u0);
            self.input_end.push(u1);
            self.states.push(next);
        }
        Ok(())
    }

    /// CSV with columns `t, x_0..x_{n-1}, u_0..u_{m-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.n()).map(|i| format!("x_{i}")));
        header.extend((0..self.m).map(|i| format!("u_{i}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.time(i).to_string()];
            row.extend(self.states[i].iter().map(|v| v.to_string()));
            match self.input(i) {
                Some(u) => row.extend(u.iter().map(|v| v.to_string())),
                None => row.extend((0..self.m).map(|_| String::new())),
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
