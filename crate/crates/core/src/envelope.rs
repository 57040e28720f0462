//! Comparison of simulated trajectories with certified decay envelopes.

use serde::Serialize;

use crate::error::Result;
use crate::simulator::{l2_window_norm, Trajectory};

/// Rate reduction applied before comparing with a certified rate.
pub const RATE_SLACK: f64 = 1e-6;
/// Relative slack on the envelope value.
pub const VALUE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeCheck {
    /// `max_t measured(t) / (amplitude ||phi||_c e^{-(rate - RATE_SLACK) t})`.
    pub worst_ratio: f64,
    pub worst_time: f64,
    pub samples: usize,
    pub holds: bool,
}

fn check(
    traj: &Trajectory,
    amplitude: f64,
    phi_norm: f64,
    rate: f64,
    stride: usize,
    measure: impl Fn(usize) -> Result<f64>,
) -> Result<EnvelopeCheck> {
    let stride = stride.max(1);
    let slowed = rate - RATE_SLACK;
    let mut worst_ratio = 0.0f64;
    let mut worst_time = 0.0;
    let mut samples = 0;
    for i in (0..traj.len()).step_by(stride) {
        let t = traj.time(i);
        let bound = amplitude * phi_norm * (-slowed * t).exp();
        let ratio = measure(i)? / bound;
        samples += 1;
        if ratio > worst_ratio || ratio.is_nan() {
            worst_ratio = ratio;
            worst_time = t;
        }
    }
    Ok(EnvelopeCheck { worst_ratio, worst_time, samples, holds: worst_ratio <= 1.0 + VALUE_SLACK })
}

/// `||x(t)|| <= amplitude ||phi||_c e^{-rate t}` on every `stride`-th sample.
pub fn pointwise(traj: &Trajectory, amplitude: f64, phi_norm: f64, rate: f64, stride: usize) -> Result<EnvelopeCheck> {
    check(traj, amplitude, phi_norm, rate, stride, |i| Ok(traj.norm(i)))
}

/// `||x_t||_{L2} <= amplitude ||phi||_c e^{-rate t}` on every `stride`-th sample.
pub fn l2_window(traj: &Trajectory, amplitude: f64, phi_norm: f64, rate: f64, stride: usize) -> Result<EnvelopeCheck> {
    check(traj, amplitude, phi_norm, rate, stride, |i| l2_window_norm(traj, traj.time(i)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::simulate;
    use crate::systems::{DelaySystem, InitialFunction};

    #[test]
    fn scalar_decay_within_exact_envelope() {
        // x(t) = a x(t - 1) with phi = 1 gives |x(t)| = a^{floor(t) + 1}, attained at t = 0.
        let a: f64 = 0.5;
        let s = DelaySystem::scalar(&[a], &[1.0]).unwrap();
        let phi = InitialFunction::Constant { value: vec![1.0] };
        let traj = simulate(&s, &phi, 10.0, 0.01).unwrap();
        let mu = -a.ln();
        let c = pointwise(&traj, 1.0 / a, 1.0, mu, 1).unwrap();
        assert!(c.holds, "{c:?}");
        let tight = pointwise(&traj, 0.999 * a, 1.0, mu, 1).unwrap();
        assert!(!tight.holds);
    }
}
