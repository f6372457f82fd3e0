//! Identify a second-order plant `p'' = A1 p + A2 p' + B1 u` from the
//! position alone, using nested windows of two different lengths.

use ddmpc::collector::{assemble_batch, window_partial, Measurement};
use ddmpc::identifier::{estimate, estimate_error};
use ddmpc::numerics::DEFAULT_CONDITION_THRESHOLD;
use ddmpc::plant::{simulate, ExcitationSpec, LtiModel};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ddmpc::Result<()> {
    let plant = LtiModel::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let excitation = ExcitationSpec::new(DMatrix::zeros(1, 2), ExcitationSpec::default_dither(2, 1, &mut rng))?;
    let (delta, samples) = (0.05, 50);
    let traj = simulate(&plant, &DVector::from_vec(vec![0.5, -0.2]), &excitation, 0.0, 53.0 * delta, 1e-3)?;

    let partial = Measurement::Partial {
        delta1: delta,
        delta2: 2.0 * delta,
    };
    let w = window_partial(&traj, 1.0, delta, 2.0 * delta)?;
    println!(
        "window at t = 1: F1 = {:.6e}, -2 Xi_p - 3 Xi_v + Xi_u1 = {:.6e}",
        w.f1[0],
        -2.0 * w.xi_p[0] - 3.0 * w.xi_v[0] + w.xi_u1[0]
    );

    let est = estimate(&assemble_batch(&traj, delta, samples, partial)?, DEFAULT_CONDITION_THRESHOLD)?;
    println!(
        "(a1, a2, b1) = ({:.8}, {:.8}, {:.8})",
        est.theta_hat[0], est.theta_hat[1], est.theta_hat[2]
    );
    println!("relative error = {:.3e}", estimate_error(&est, &plant)?);
    print!("{}", est.report_block());
    Ok(())
}
