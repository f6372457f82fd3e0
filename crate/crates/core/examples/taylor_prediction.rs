//! Compare the Taylor-polynomial state prediction with an RK4 simulation
//! under the same input polynomial, for increasing control order.

use ddmpc::mpc::{build_prediction, extract_policy, predict_state};
use ddmpc::plant::{simulate, LtiModel};
use nalgebra::{DMatrix, DVector};

fn main() -> ddmpc::Result<()> {
    let plant = LtiModel::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    )?;
    let x = DVector::from_vec(vec![1.0, -0.5]);
    println!("{:>3} {:>12} {:>12} {:>8}", "r", "err(0.2)", "err(0.1)", "ratio");
    for r in 1..=4 {
        let pm = build_prediction(plant.a(), plant.b(), 1, r)?;
        let u = DVector::from_iterator(r, [0.7, -0.4, 0.3, -0.1].into_iter().take(r));
        let policy = extract_policy(&u, 1, r, 1)?;
        let gap = |tau: f64| -> ddmpc::Result<f64> {
            let input = |t: f64, _: &DVector<f64>| policy.eval(t);
            let traj = simulate(&plant, &x, &input, 0.0, tau, tau / 2000.0)?;
            Ok((predict_state(&pm, &x, &u, tau) - traj.last_state()).norm())
        };
        let (coarse, fine) = (gap(0.2)?, gap(0.1)?);
        println!("{r:>3} {coarse:>12.4e} {fine:>12.4e} {:>8.3}", coarse / fine);
    }
    Ok(())
}
