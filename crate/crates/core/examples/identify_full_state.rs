//! Excite a two-state plant, assemble integral-window regressors from the
//! full state and recover `(A, B)` by least squares.

use ddmpc::collector::{assemble_batch, Measurement};
use ddmpc::identifier::{estimate, estimate_error, excitation_report};
use ddmpc::numerics::DEFAULT_CONDITION_THRESHOLD;
use ddmpc::plant::{simulate, ExcitationSpec, LtiModel};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ddmpc::Result<()> {
    let plant = LtiModel::new(
        DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.4]),
        DMatrix::from_row_slice(2, 1, &[0.3, 1.0]),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dither = ExcitationSpec::default_dither(plant.n(), plant.m(), &mut rng);
    let excitation = ExcitationSpec::new(DMatrix::zeros(1, 2), dither)?;

    let (delta, samples) = (0.1, 60);
    for dt in [2e-3, 1e-3, 5e-4] {
        let traj = simulate(&plant, &DVector::from_vec(vec![1.0, 0.0]), &excitation, 0.0, delta * samples as f64, dt)?;
        let batch = assemble_batch(&traj, delta, samples, Measurement::Full)?;
        let report = excitation_report(&batch, DEFAULT_CONDITION_THRESHOLD);
        let est = estimate(&batch, DEFAULT_CONDITION_THRESHOLD)?;
        println!(
            "dt = {dt:<6} rows = {:<4} condition = {:.3e}  relative error = {:.3e}",
            batch.rows(),
            report.condition_estimate,
            estimate_error(&est, &plant)?
        );
        if dt == 5e-4 {
            print!("{}", est.report_block());
        }
    }
    Ok(())
}
