//! Closed-loop experiment: excite, collect, identify, then receding-horizon
//! control of the true plant with the identified model.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::collector::{Measurement, RegressorBatch};
use crate::error::{Error, Result};
use crate::identifier::{estimate, estimate_error, excitation_report, ExcitationReport, ParameterEstimate, Retention};
use crate::mpc::{self, ControlPlan, MpcConfig, QpProblem};
use crate::numerics::{kron, DEFAULT_CONDITION_THRESHOLD};
use crate::plant::{grid_steps, ExcitationSpec, LtiModel, ReferenceSpec, Sinusoid, Trajectory};

/// Nominal feedback and dither for the excitation phase. Without explicit
/// sinusoids a default dither is drawn from the experiment seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationConfig {
    /// `m x n` stabilizing gain.
    pub k0: nalgebra::DMatrix<f64>,
    pub sinusoids: Option<Vec<Sinusoid>>,
    /// Defaults to `l·δ`, plus `δ1 + δ2` in partial mode.
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Ground-truth plant; the controller only sees it through data unless
    /// `use_true_model` is set.
    pub plant: LtiModel,
    pub initial_state: DVector<f64>,
    pub measurement: Measurement,
    pub excitation: ExcitationConfig,
    /// Window length `δ`, also the sampling period of the regressor.
    pub delta: f64,
    /// Number of samples `l` collected during excitation.
    pub samples: usize,
    pub dt_sim: f64,
    pub retention: Retention,
    /// Re-estimate at every control update instead of freezing the
    /// excitation-phase estimate.
    pub reidentify: bool,
    /// Hand the true plant to the controller and skip identification.
    pub use_true_model: bool,
    pub condition_threshold: f64,
    pub mpc: MpcConfig,
    pub reference: ReferenceSpec,
    /// Control update period `δ_c`.
    pub control_period: f64,
    pub total_time: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    /// A config with the documented defaults: full measurement, growing
    /// memory, re-identification on, `δ_c = δ`, seed 0.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        plant: LtiModel,
        initial_state: DVector<f64>,
        k0: nalgebra::DMatrix<f64>,
        delta: f64,
        samples: usize,
        dt_sim: f64,
        mpc: MpcConfig,
        reference: ReferenceSpec,
        total_time: f64,
    ) -> Self {
        ExperimentConfig {
            plant,
            initial_state,
            measurement: Measurement::Full,
            excitation: ExcitationConfig {
                k0,
                sinusoids: None,
                duration: None,
            },
            delta,
            samples,
            dt_sim,
            retention: Retention::Growing,
            reidentify: true,
            use_true_model: false,
            condition_threshold: DEFAULT_CONDITION_THRESHOLD,
            mpc,
            reference,
            control_period: delta,
            total_time,
            seed: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.plant.n()
    }

    pub fn m(&self) -> usize {
        self.plant.m()
    }

    pub fn excitation_duration(&self) -> f64 {
        self.excitation.duration.unwrap_or(
            self.samples as f64 * self.delta
                + match self.measurement {
                    Measurement::Full => 0.0,
                    Measurement::Partial { delta1, delta2 } => delta1 + delta2,
                },
        )
    }

    /// Checks every cross-field invariant; errors carry the field path.
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        if self.initial_state.len() != n {
            return Err(Error::config(
                "initial_state",
                format!("expected {n} entries, got {}", self.initial_state.len()),
            ));
        }
        if !(self.dt_sim > 0.0) || !self.dt_sim.is_finite() {
            return Err(Error::config("collection.dt_sim", "must be positive"));
        }
        let on_grid = |field: &str, span: f64| -> Result<usize> {
            match grid_steps(span, self.dt_sim) {
                Ok(0) => Err(Error::config(field, "must be positive")),
                Ok(k) => Ok(k),
                Err(_) => Err(Error::config(
                    field,
                    format!("{span} is not an integer multiple of dt_sim = {}", self.dt_sim),
                )),
            }
        };
        on_grid("collection.delta", self.delta)?;
        on_grid("control_period", self.control_period)?;
        if let Measurement::Partial { delta1, delta2 } = self.measurement {
            if n % 2 != 0 {
                return Err(Error::config("measurement", "partial mode needs an even state dimension"));
            }
            on_grid("collection.delta1", delta1)?;
            on_grid("collection.delta2", delta2)?;
            if (delta1 - delta2).abs() <= 1e-12 * delta1.max(delta2) {
                return Err(Error::config("collection.delta2", "must differ from delta1"));
            }
        }
        let min_samples = RegressorBatch::new(self.measurement, n, m)?.min_samples();
        if self.samples < min_samples {
            return Err(Error::config(
                "collection.samples",
                format!("at least {min_samples} samples are needed, got {}", self.samples),
            ));
        }
        if let Retention::Sliding { samples } = self.retention {
            if samples < min_samples {
                return Err(Error::config(
                    "identification.retention",
                    format!("window must keep at least {min_samples} samples"),
                ));
            }
        }
        if !(self.condition_threshold > 1.0) {
            return Err(Error::config("identification.condition_threshold", "must exceed 1"));
        }
        if self.excitation.k0.shape() != (m, n) {
            return Err(Error::config(
                "excitation.k0",
                format!("expected {m}x{n}, got {:?}", self.excitation.k0.shape()),
            ));
        }
        if let Some(s) = self.excitation.sinusoids.iter().flatten().find(|s| s.channel >= m) {
            return Err(Error::config(
                "excitation.sinusoids",
                format!("channel {} out of range for m = {m}", s.channel),
            ));
        }
        let exc_steps = on_grid("excitation.duration", self.excitation_duration())?;
        let threshold = self.measurement.threshold(self.delta);
        if self.excitation_duration() < threshold + self.delta * (self.samples as f64 - 1.0) - 1e-9 {
            return Err(Error::config(
                "excitation.duration",
                "too short to collect the requested samples",
            ));
        }
        let total_steps = on_grid("total_time", self.total_time)?;
        if total_steps < exc_steps {
            return Err(Error::config("total_time", "must be at least the excitation duration"));
        }
        self.mpc.validate(n, m)?;
        if self.mpc.horizon < self.control_period * (1.0 - 1e-12) {
            return Err(Error::config("mpc.horizon", "must be at least control_period"));
        }
        if self.reference.dim() != n {
            return Err(Error::config(
                "reference",
                format!("expected dimension {n}, got {}", self.reference.dim()),
            ));
        }
        if let Some(max) = self.reference.max_derivative_order() {
            if max < self.mpc.order {
                return Err(Error::config(
                    "reference.max_derivative_order",
                    format!("must be at least mpc.order = {}", self.mpc.order),
                ));
            }
        }
        Ok(())
    }
}

/// `w = (Â - A) x + (B̂ - B) u`, the model mismatch seen by the true state.
pub fn residual_w(
    x: &DVector<f64>,
    u: &DVector<f64>,
    est: &ParameterEstimate,
    truth: &LtiModel,
) -> Result<DVector<f64>> {
    if est.a_hat.shape() != truth.a().shape()
        || est.b_hat.shape() != truth.b().shape()
        || x.len() != truth.n()
        || u.len() != truth.m()
    {
        return Err(Error::shape(
            "residual_w",
            format!(
                "x has {}, u has {} entries for a {}x{} plant",
                x.len(),
                u.len(),
                truth.n(),
                truth.m()
            ),
        ));
    }
    Ok((&est.a_hat - truth.a()) * x + (&est.b_hat - truth.b()) * u)
}

/// `ℋ(x, u) = [xᵀ ⊗ I_n, uᵀ ⊗ I_n]`, so that `ẋ = ℋ(x, u) [vec(A); vec(B)]`.
pub fn regressor_matrix(x: &DVector<f64>, u: &DVector<f64>) -> nalgebra::DMatrix<f64> {
    let n = x.len();
    let eye = nalgebra::DMatrix::identity(n, n);
    let hx = kron(&nalgebra::DMatrix::from_row_slice(1, n, x.as_slice()), &eye);
    let hu = kron(&nalgebra::DMatrix::from_row_slice(1, u.len(), u.as_slice()), &eye);
    let mut h = nalgebra::DMatrix::zeros(n, hx.ncols() + hu.ncols());
    h.view_mut((0, 0), hx.shape()).copy_from(&hx);
    h.view_mut((0, hx.ncols()), hu.shape()).copy_from(&hu);
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    /// Unconstrained optimum applied as is.
    Optimal,
    /// Optimum scaled back into the input box.
    Scaled,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Scaled => "scaled",
        }
    }
}

/// One row of the control-phase log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub x: DVector<f64>,
    pub u_applied: DVector<f64>,
    pub x_d: DVector<f64>,
    pub e_norm: f64,
    /// Only available when the true plant is known.
    pub w_norm: Option<f64>,
    pub theta_err: Option<f64>,
    pub stage_cost: f64,
    pub qp_status: QpStatus,
}

/// Record of one receding-horizon update.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    pub index: usize,
    pub t: f64,
    pub x: DVector<f64>,
    pub rho: usize,
    pub unconstrained: DVector<f64>,
    pub u_stack: DVector<f64>,
    pub scale: f64,
    /// Kept only when requested through [`RunOptions::keep_qp`].
    pub qp: Option<QpProblem>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub keep_qp: bool,
}

/// Result of the excitation and identification phase.
#[derive(Debug, Clone)]
pub struct Identification {
    pub estimate: ParameterEstimate,
    pub excitation: Option<ExcitationReport>,
    pub batch: RegressorBatch,
    pub trajectory: Trajectory,
    /// Index of the next regressor sample not yet in `batch`.
    next_sample: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub log: Vec<LogRecord>,
    pub steps: Vec<ControlStep>,
    pub initial_estimate: ParameterEstimate,
    pub final_estimate: ParameterEstimate,
    pub excitation: Option<ExcitationReport>,
    pub trajectory: Trajectory,
    /// Time at which control took over.
    pub control_start: f64,
}

/// Runs the excitation phase and fits the first estimate.
pub fn identify(cfg: &ExperimentConfig) -> Result<Identification> {
    cfg.validate()?;
    let (n, m) = (cfg.n(), cfg.m());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sinusoids = match &cfg.excitation.sinusoids {
        Some(s) => s.clone(),
        None => ExcitationSpec::default_dither(n, m, &mut rng),
    };
    let spec = ExcitationSpec::new(cfg.excitation.k0.clone(), sinusoids)?;
    let mut trajectory = Trajectory::new(0.0, cfg.dt_sim, cfg.initial_state.clone(), m)?;
    trajectory.advance(&cfg.plant, &spec, grid_steps(cfg.excitation_duration(), cfg.dt_sim)?)?;

    let mut batch = RegressorBatch::new(cfg.measurement, n, m)?;
    let mut next_sample = 1;
    collect_windows(cfg, &trajectory, &mut batch, &mut next_sample)?;
    log::info!(
        "excitation phase: {} samples over {} s",
        batch.samples(),
        trajectory.end_time()
    );

    if cfg.use_true_model {
        return Ok(Identification {
            estimate: ParameterEstimate::from_model(&cfg.plant),
            excitation: None,
            batch,
            trajectory,
            next_sample,
        });
    }
    let report = excitation_report(&batch, cfg.condition_threshold);
    if !report.rank_ok {
        log::error!(
            "regressor not persistently exciting: condition {:.3e}, min singular value {:.3e}",
            report.condition_estimate,
            report.min_singular_value
        );
        return Err(Error::RankDeficient {
            condition: report.condition_estimate,
        });
    }
    let est = estimate(&batch, cfg.condition_threshold)?;
    Ok(Identification {
        estimate: est,
        excitation: Some(report),
        batch,
        trajectory,
        next_sample,
    })
}

/// Appends every window whose end lies on the `δ` grid within the
/// trajectory and whose reach does not precede `t = 0`.
fn collect_windows(
    cfg: &ExperimentConfig,
    traj: &Trajectory,
    batch: &mut RegressorBatch,
    next_sample: &mut usize,
) -> Result<usize> {
    let d = grid_steps(cfg.delta, cfg.dt_sim)?;
    let reach = match cfg.measurement {
        Measurement::Full => d,
        Measurement::Partial { delta1, delta2 } => {
            grid_steps(delta1, cfg.dt_sim)? + grid_steps(delta2, cfg.dt_sim)?
        }
    };
    let mut added = 0;
    while *next_sample * d <= traj.steps() {
        let i = *next_sample * d;
        if i >= reach {
            batch.push_window(traj, traj.time(i), cfg.delta)?;
            added += 1;
        }
        *next_sample += 1;
    }
    if let Retention::Sliding { samples } = cfg.retention {
        batch.retain_latest(samples);
    }
    Ok(added)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_experiment_with(cfg, RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ExperimentOutcome> {
    let Identification {
        estimate: initial_estimate,
        excitation,
        mut batch,
        mut trajectory,
        mut next_sample,
    } = identify(cfg)?;
    let mut est = initial_estimate.clone();
    let control_start = trajectory.end_time();
    let total_steps = grid_steps(cfg.total_time, cfg.dt_sim)?;
    let period = grid_steps(cfg.control_period, cfg.dt_sim)?;
    let q = &cfg.mpc.q;
    let r = &cfg.mpc.r;

    let mut log_records = Vec::with_capacity(total_steps - trajectory.steps() + 1);
    let mut steps = Vec::new();
    let mut status = QpStatus::Optimal;

    let record = |traj: &Trajectory, i: usize, u: &DVector<f64>, est: &ParameterEstimate, status| -> Result<LogRecord> {
        let t = traj.time(i);
        let x = traj.state(i).clone();
        let x_d = cfg.reference.value(t);
        let e = &x - &x_d;
        let w = residual_w(&x, u, est, &cfg.plant)?;
        Ok(LogRecord {
            t,
            e_norm: e.norm(),
            w_norm: Some(w.norm()),
            theta_err: Some(estimate_error(est, &cfg.plant)?),
            stage_cost: e.dot(&(q * &e)) + u.dot(&(r * u)),
            qp_status: status,
            x,
            u_applied: u.clone(),
            x_d,
        })
    };

    while trajectory.steps() < total_steps {
        let k = steps.len();
        let i_k = trajectory.steps();
        let t_k = trajectory.time(i_k);

        if cfg.reidentify && !cfg.use_true_model {
            let added = collect_windows(cfg, &trajectory, &mut batch, &mut next_sample)?;
            if added > 0 {
                match estimate(&batch, cfg.condition_threshold) {
                    Ok(new) => est = new,
                    Err(e) => log::warn!("re-identification at t = {t_k} failed, keeping previous estimate: {e}"),
                }
            }
        }

        let x = trajectory.last_state().clone();
        let plan: ControlPlan = mpc::plan(&est, &cfg.mpc, &cfg.reference, &x, t_k).map_err(|e| match e {
            Error::Numerical(msg) => Error::Numerical(format!("control step {k} (t = {t_k}): {msg}")),
            other => other,
        })?;
        status = if plan.solution.is_scaled() {
            QpStatus::Scaled
        } else {
            QpStatus::Optimal
        };

        let span = period.min(total_steps - i_k);
        let policy = plan.policy.clone();
        let u_box = &cfg.mpc.u_box;
        let input = move |t: f64, _: &DVector<f64>| u_box.clamp(&policy.eval(t - t_k));
        trajectory.advance(&cfg.plant, &input, span)?;
        for i in i_k..i_k + span {
            let u = trajectory.step_inputs(i).0.clone();
            log_records.push(record(&trajectory, i, &u, &est, status)?);
        }

        steps.push(ControlStep {
            index: k,
            t: t_k,
            x,
            rho: plan.rho,
            unconstrained: plan.unconstrained,
            u_stack: plan.solution.u_stack,
            scale: plan.solution.scale,
            qp: opts.keep_qp.then_some(plan.qp),
        });
    }
    // closing record at the final time, with the input the last policy
    // applies there
    let last = trajectory.steps();
    if last > 0 && !steps.is_empty() {
        let u = trajectory.step_inputs(last - 1).1.clone();
        log_records.push(record(&trajectory, last, &u, &est, status)?);
    }

    Ok(ExperimentOutcome {
        log: log_records,
        steps,
        initial_estimate,
        final_estimate: est,
        excitation,
        trajectory,
        control_start,
    })
}

/// Aggregates over a control log.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub records: usize,
    pub final_time: f64,
    pub final_tracking_error: f64,
    pub final_error: DVector<f64>,
    pub max_abs_u: f64,
    pub mean_stage_cost: f64,
    pub scaled_steps: usize,
    pub estimate_error_trace: Vec<f64>,
    pub w_norm_trace: Vec<f64>,
}

pub fn summarize(log: &[LogRecord]) -> Result<Report> {
    let last = log
        .last()
        .ok_or_else(|| Error::Domain("cannot summarize an empty log".into()))?;
    Ok(Report {
        records: log.len(),
        final_time: last.t,
        final_tracking_error: last.e_norm,
        final_error: &last.x - &last.x_d,
        max_abs_u: log.iter().map(|r| r.u_applied.amax()).fold(0.0, f64::max),
        mean_stage_cost: log.iter().map(|r| r.stage_cost).sum::<f64>() / log.len() as f64,
        scaled_steps: log.iter().filter(|r| r.qp_status == QpStatus::Scaled).count(),
        estimate_error_trace: log.iter().filter_map(|r| r.theta_err).collect(),
        w_norm_trace: log.iter().filter_map(|r| r.w_norm).collect(),
    })
}

/// CSV columns: `t, x_*, u_*, xd_*, e_norm, w_norm, theta_err, stage_cost,
/// qp_status`. Unknown optional fields are left empty.
pub fn write_log_csv<W: Write>(log: &[LogRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (n, m) = match log.first() {
        Some(r) => (r.x.len(), r.u_applied.len()),
        None => return Err(Error::Domain("cannot write an empty log".into())),
    };
    w.write_record(log_header(n, m))?;
    for r in log {
        let mut row = Vec::with_capacity(2 * n + m + 5);
        row.push(r.t.to_string());
        row.extend(r.x.iter().map(f64::to_string));
        row.extend(r.u_applied.iter().map(f64::to_string));
        row.extend(r.x_d.iter().map(f64::to_string));
        row.push(r.e_norm.to_string());
        row.push(r.w_norm.map(|v| v.to_string()).unwrap_or_default());
        row.push(r.theta_err.map(|v| v.to_string()).unwrap_or_default());
        row.push(r.stage_cost.to_string());
        row.push(r.qp_status.as_str().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn log_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n).map(|i| format!("x_{i}")));
    h.extend((0..m).map(|i| format!("u_{i}")));
    h.extend((0..n).map(|i| format!("xd_{i}")));
    h.extend(["e_norm", "w_norm", "theta_err", "stage_cost", "qp_status"].map(String::from));
    h
}

fn sci(v: f64) -> String {
    format!("{v:>16.8e}")
}

fn trace_line(s: &mut String, name: &str, trace: &[f64]) {
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        let min = trace.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            s,
            "{name:<22}first {} last {} min {} max {}",
            sci(*first),
            sci(*last),
            sci(min),
            sci(max)
        );
    }
}

/// Plain-text report with fixed-width, 9-significant-digit numbers.
pub fn render_report(outcome: &ExperimentOutcome) -> Result<String> {
    let rep = summarize(&outcome.log)?;
    let mut s = String::new();
    let _ = writeln!(s, "control start         {}", sci(outcome.control_start));
    let _ = writeln!(s, "final time            {}", sci(rep.final_time));
    let _ = writeln!(s, "control updates       {:>16}", outcome.steps.len());
    let _ = writeln!(s, "log records           {:>16}", rep.records);
    let _ = writeln!(s, "scaled records        {:>16}", rep.scaled_steps);
    let _ = writeln!(s, "final tracking error  {}", sci(rep.final_tracking_error));
    let _ = write!(s, "final error          ");
    for v in rep.final_error.iter() {
        let _ = write!(s, " {}", sci(*v));
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "max |u|               {}", sci(rep.max_abs_u));
    let _ = writeln!(s, "mean stage cost       {}", sci(rep.mean_stage_cost));
    trace_line(&mut s, "estimate error", &rep.estimate_error_trace);
    trace_line(&mut s, "w norm", &rep.w_norm_trace);
    if let Some(ex) = &outcome.excitation {
        let _ = writeln!(s, "excitation condition  {}", sci(ex.condition_estimate));
        let _ = writeln!(s, "excitation min sv     {}", sci(ex.min_singular_value));
    }
    let _ = writeln!(s);
    s.push_str(&outcome.final_estimate.report_block());
    Ok(s)
}
