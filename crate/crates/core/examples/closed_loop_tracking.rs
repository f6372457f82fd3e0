//! Identify an unknown scalar plant from excited data, then track a
//! setpoint with the identified model, with and without a tight input box.

use ddmpc::mpc::{InputBox, MpcConfig};
use ddmpc::plant::{LtiModel, ReferenceSpec};
use ddmpc::runner::{run_experiment, summarize, ExperimentConfig};
use nalgebra::{DMatrix, DVector};

fn main() -> ddmpc::Result<()> {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let plant = LtiModel::new(one(-1.0), one(1.0))?;

    for (r_weight, limit) in [(1e-3, 5.0), (1.0, 5.0), (1e-3, 0.2)] {
        let mpc = MpcConfig::new(1.0, 1, one(1.0), one(r_weight), InputBox::symmetric(1, limit)?);
        let cfg = ExperimentConfig::new(
            plant.clone(),
            DVector::zeros(1),
            one(0.0),
            0.05,
            50,
            1e-3,
            mpc,
            ReferenceSpec::Constant { setpoint: vec![1.0] },
            10.0,
        );
        let out = run_experiment(&cfg)?;
        let rep = summarize(&out.log)?;
        println!(
            "R = {r_weight:<6} box = ±{limit:<4} final x = {:.6}  |e| = {:.3e}  max|u| = {:.4}  scaled records = {}  estimate error = {:.3e} -> {:.3e}",
            out.log.last().unwrap().x[0],
            rep.final_tracking_error,
            rep.max_abs_u,
            rep.scaled_steps,
            rep.estimate_error_trace.first().unwrap(),
            rep.estimate_error_trace.last().unwrap(),
        );
    }
    Ok(())
}
