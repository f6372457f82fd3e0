//! Build the horizon QP for `ẋ = u` with hand-checkable numbers, solve it,
//! and scale the optimum into progressively tighter input boxes.

use ddmpc::mpc::{build_prediction, build_qp, enforce_box, extract_policy, solve_unconstrained, InputBox, MpcConfig};
use ddmpc::plant::{reference_stack, ReferenceSpec};
use nalgebra::{DMatrix, DVector};

fn main() -> ddmpc::Result<()> {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    let pm = build_prediction(&one(0.0), &one(1.0), 1, 2)?;
    let stack = reference_stack(&ReferenceSpec::Constant { setpoint: vec![0.0] }, 0.0, 2, 1)?;
    let x = DVector::from_element(1, 1.0);

    for limit in [10.0, 1.0, 0.5, 0.2] {
        let cfg = MpcConfig::new(1.0, 2, one(1.0), one(1.0), InputBox::symmetric(1, limit)?);
        let qp = build_qp(&pm, &cfg, &x, &stack)?;
        let u = solve_unconstrained(&qp)?;
        let boxed = enforce_box(&u, &pm, &cfg)?;
        let policy = extract_policy(&boxed.u_stack, 1, 2, 1)?;
        println!(
            "box ±{limit:<4} u* = [{:+.6}, {:+.6}]  scale = {:.6}  u(0) = {:+.6}  u(T) = {:+.6}  J = {:.6}",
            u[0],
            u[1],
            boxed.scale,
            policy.eval(0.0)[0],
            policy.eval(1.0)[0],
            qp.objective(&boxed.u_stack)
        );
    }
    Ok(())
}
