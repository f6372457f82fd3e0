use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::InputSignal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub channel: usize,
    pub amplitude: f64,
    /// rad/s
    pub frequency: f64,
    pub phase: f64,
}

/// Nominal stabilizing feedback `u = -K0 x` plus a sum-of-sinusoids dither
/// that keeps the regressor persistently exciting.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSpec {
    k0: DMatrix<f64>,
    sinusoids: Vec<Sinusoid>,
}

impl ExcitationSpec {
    /// `k0` is `m x n`. Warns when fewer distinct frequencies than
    /// parameters (`n^2 + nm`) are present.
    pub fn new(k0: DMatrix<f64>, sinusoids: Vec<Sinusoid>) -> Result<Self> {
        let m = k0.nrows();
        if let Some(s) = sinusoids.iter().find(|s| s.channel >= m) {
            return Err(Error::shape(
                "ExcitationSpec::new",
                format!("sinusoid channel {} but m = {m}", s.channel),
            ));
        }
        let spec = ExcitationSpec { k0, sinusoids };
        let (n, m) = (spec.k0.ncols(), m);
        let required = n * n + n * m;
        let distinct = spec.distinct_frequencies();
        if distinct < required {
            log::warn!(
                "excitation has {distinct} distinct frequencies, {required} parameters to identify"
            );
        }
        Ok(spec)
    }

    /// Default dither for an `n`-state, `m`-input plant: `n^2 + nm`
    /// sinusoids at `0.3 i` rad/s, amplitude 0.5, assigned to channels
    /// round-robin, with random phases.
    pub fn default_dither<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<Sinusoid> {
        (1..=n * n + n * m)
            .map(|i| Sinusoid {
                channel: (i - 1) % m,
                amplitude: 0.5,
                frequency: 0.3 * i as f64,
                phase: rng.random::<f64>() * TAU,
            })
            .collect()
    }

    pub fn k0(&self) -> &DMatrix<f64> {
        &self.k0
    }

    pub fn sinusoids(&self) -> &[Sinusoid] {
        &self.sinusoids
    }

    pub fn distinct_frequencies(&self) -> usize {
        let mut f: Vec<f64> = self.sinusoids.iter().map(|s| s.frequency.abs()).collect();
        f.sort_by(|a, b| a.total_cmp(b));
        f.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        f.len()
    }
}

/// `u = -K0 x + Σ a_i sin(ω_i t + φ_i)` on each channel.
pub fn excitation_input(spec: &ExcitationSpec, x: &DVector<f64>, t: f64) -> DVector<f64> {
    let mut u = -(&spec.k0 * x);
    for s in &spec.sinusoids {
        u[s.channel] += s.amplitude * (s.frequency * t + s.phase).sin();
    }
    u
}

impl InputSignal for ExcitationSpec {
    fn input(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        excitation_input(self, x, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{simulate, LtiModel};
    use rand::SeedableRng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn pure_feedback_without_dither() {
        let k0 = DMatrix::from_row_slice(1, 2, &[2.0, -1.0]);
        let spec = ExcitationSpec::new(k0, vec![]).unwrap();
        let u = excitation_input(&spec, &DVector::from_vec(vec![1.0, 3.0]), 0.7);
        assert_eq!(u[0], 1.0);
    }

    #[test]
    fn single_sinusoid_peak() {
        let spec = ExcitationSpec::new(
            DMatrix::zeros(1, 1),
            vec![Sinusoid {
                channel: 0,
                amplitude: 1.0,
                frequency: 1.0,
                phase: 0.0,
            }],
        )
        .unwrap();
        let u = excitation_input(&spec, &DVector::from_element(1, 5.0), FRAC_PI_2);
        assert_eq!(u[0], 1.0);
    }

    #[test]
    fn zero_phase_at_origin() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut dither = ExcitationSpec::default_dither(2, 1, &mut rng);
        dither.iter_mut().for_each(|s| s.phase = 0.0);
        let spec = ExcitationSpec::new(DMatrix::from_element(1, 2, 0.4), dither).unwrap();
        assert_eq!(excitation_input(&spec, &DVector::zeros(2), 0.0), DVector::zeros(1));
    }

    #[test]
    fn default_dither_layout() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let d = ExcitationSpec::default_dither(2, 2, &mut rng);
        assert_eq!(d.len(), 8);
        assert_eq!(d[0].channel, 0);
        assert_eq!(d[1].channel, 1);
        assert!((d[7].frequency - 2.4).abs() < 1e-12);
        assert!(d.iter().all(|s| (0.0..TAU).contains(&s.phase)));
    }

    #[test]
    fn channel_out_of_range_is_rejected() {
        let s = Sinusoid {
            channel: 1,
            amplitude: 1.0,
            frequency: 1.0,
            phase: 0.0,
        };
        assert!(ExcitationSpec::new(DMatrix::zeros(1, 2), vec![s]).is_err());
    }

    #[test]
    fn stabilizing_feedback_keeps_unstable_plant_bounded() {
        // open loop has eigenvalues 1 and -2
        let model = LtiModel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, -1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        // closed loop A - B K0 = [[0, 1], [-2, -3]]
        let spec = ExcitationSpec::new(DMatrix::from_row_slice(1, 2, &[4.0, 2.0]), vec![]).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -0.5]);
        let traj = simulate(&model, &x0, &spec, 0.0, 10.0, 1e-2).unwrap();
        let peak = traj.states().iter().map(|x| x.norm()).fold(0.0, f64::max);
        assert!(peak < 2.0 * x0.norm());
        assert!(traj.last_state().norm() < 1e-3);
    }
}
