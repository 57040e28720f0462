//! Delay-independent stability tests.

use std::f64::consts::TAU;

use nalgebra::{Complex, DMatrix};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{complex_spectral_radius, eigenvalues, induced_norm};
use crate::systems::DelaySystem;

pub const DEFAULT_RESOLUTION: usize = 64;
pub const DEFAULT_REFINE_ITERS: usize = 30;
pub const DEFAULT_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TriState {
    Yes,
    No,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralVerdict {
    /// Best value found; a lower bound of the true supremum.
    pub sup_estimate: f64,
    pub refined: bool,
    pub grid: usize,
    pub argmax_angles: Vec<f64>,
    pub stable_in_delays: TriState,
    /// Best value after the grid stage and after each refinement round.
    pub refinement_trace: Vec<f64>,
}

/// `rho(sum_k e^{j theta_k} A_k)`.
pub fn torus_radius(system: &DelaySystem, angles: &[f64]) -> f64 {
    let n = system.dim();
    let mut sum = DMatrix::<Complex<f64>>::zeros(n, n);
    for (a, &theta) in system.matrices().iter().zip(angles) {
        let w = Complex::from_polar(1.0, theta);
        sum.zip_apply(a, |s, v| *s += w * v);
    }
    complex_spectral_radius(&sum).unwrap_or(f64::NAN)
}

/// Grid search over the torus with `theta_1 = 0`, then coordinate descent.
pub fn torus_sup(system: &DelaySystem, resolution: usize, refine_iters: usize) -> Result<SpectralVerdict> {
    torus_sup_with_margin(system, resolution, refine_iters, DEFAULT_MARGIN)
}

/// [`torus_sup`] on a dedicated pool of `threads` workers.
pub fn torus_sup_threads(
    system: &DelaySystem,
    resolution: usize,
    refine_iters: usize,
    threads: usize,
) -> Result<SpectralVerdict> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| torus_sup(system, resolution, refine_iters))
}

pub fn torus_sup_with_margin(
    system: &DelaySystem,
    resolution: usize,
    refine_iters: usize,
    margin: f64,
) -> Result<SpectralVerdict> {
    if resolution < 8 {
        return Err(Error::InvalidInput(format!("grid resolution {resolution} must be at least 8")));
    }
    let free = system.num_delays() - 1;
    let total = (resolution as u128).checked_pow(free as u32).filter(|&t| t <= u64::MAX as u128);
    let total = total.ok_or_else(|| Error::InvalidInput("torus grid too large".into()))? as u64;
    let step = TAU / resolution as f64;
    let angles_of = |index: u64| -> Vec<f64> {
        let mut angles = vec![0.0; free + 1];
        let mut rest = index;
        // Last angle varies fastest so index order is lexicographic.
        for slot in (1..=free).rev() {
            angles[slot] = (rest % resolution as u64) as f64 * step;
            rest /= resolution as u64;
        }
        angles
    };

    let (best_value, best_index) = (0..total)
        .into_par_iter()
        .map(|i| (torus_radius(system, &angles_of(i)), i))
        .reduce(|| (f64::NEG_INFINITY, u64::MAX), better);

    let mut angles = angles_of(best_index);
    let mut best = best_value;
    let mut trace = vec![best];
    let mut delta = step;
    for _ in 0..refine_iters {
        let mut improved = false;
        for slot in 1..=free {
            for sign in [1.0, -1.0] {
                let mut trial = angles.clone();
                trial[slot] = (trial[slot] + sign * delta).rem_euclid(TAU);
                let value = torus_radius(system, &trial);
                if value > best {
                    best = value;
                    angles = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            delta *= 0.5;
        }
        trace.push(best);
    }

    let stable_in_delays = if best < 1.0 - margin {
        TriState::Yes
    } else if best >= 1.0 {
        TriState::No
    } else {
        TriState::Inconclusive
    };
    Ok(SpectralVerdict {
        sup_estimate: best,
        refined: refine_iters > 0 && free > 0,
        grid: resolution,
        argmax_angles: angles,
        stable_in_delays,
        refinement_trace: trace,
    })
}

// Larger value wins; ties (and NaN-free equal values) go to the smaller index.
fn better(a: (f64, u64), b: (f64, u64)) -> (f64, u64) {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Greater => a,
        std::cmp::Ordering::Less => b,
        std::cmp::Ordering::Equal => {
            if a.1 <= b.1 {
                a
            } else {
                b
            }
        }
    }
}

/// `sum_k |a_k|` for a scalar system.
pub fn scalar_sum_test(system: &DelaySystem) -> Result<f64> {
    if system.dim() != 1 {
        return Err(Error::NotScalar(system.dim()));
    }
    Ok(system.matrices().iter().map(|a| a[(0, 0)].abs()).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleDelayClass {
    AsymptoticallyStable,
    Stable,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub class: SingleDelayClass,
    pub spectral_radius: f64,
}

/// Distance from the unit circle below which an eigenvalue counts as unimodular.
const UNIT_TOL: f64 = 1e-9;
/// Eigenvalues closer than this are treated as one repeated eigenvalue.
const CLUSTER_TOL: f64 = 1e-6;

/// Default rank tolerance `1e-8 ||A||`.
pub fn default_rank_tol(a: &DMatrix<f64>) -> f64 {
    1e-8 * induced_norm(a)
}

/// Stability class of `x(t) = A x(t - r)` from the spectrum of `A`.
pub fn classify_single_delay(a: &DMatrix<f64>, rank_tol: f64) -> Result<Classification> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch("matrix must be square".into()));
    }
    let eig = eigenvalues(a)?;
    let rho = eig.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let class = if rho < 1.0 - UNIT_TOL {
        SingleDelayClass::AsymptoticallyStable
    } else if rho > 1.0 + UNIT_TOL {
        SingleDelayClass::Unstable
    } else {
        let unit: Vec<Complex<f64>> = eig.into_iter().filter(|z| (z.norm() - 1.0).abs() <= UNIT_TOL).collect();
        if unit_eigenvalues_semisimple(a, &unit, rank_tol) {
            SingleDelayClass::Stable
        } else {
            SingleDelayClass::Unstable
        }
    };
    Ok(Classification { class, spectral_radius: rho })
}

fn unit_eigenvalues_semisimple(a: &DMatrix<f64>, unit: &[Complex<f64>], rank_tol: f64) -> bool {
    let n = a.nrows();
    let mut used = vec![false; unit.len()];
    for i in 0..unit.len() {
        if used[i] {
            continue;
        }
        let members: Vec<usize> = (i..unit.len())
            .filter(|&j| !used[j] && (unit[j] - unit[i]).norm() <= CLUSTER_TOL)
            .collect();
        for &j in &members {
            used[j] = true;
        }
        let lambda = members.iter().map(|&j| unit[j]).sum::<Complex<f64>>() / members.len() as f64;
        let shifted = DMatrix::from_fn(n, n, |r, c| {
            Complex::new(a[(r, c)], 0.0) - if r == c { lambda } else { Complex::new(0.0, 0.0) }
        });
        let singular = shifted.singular_values();
        let rank = singular.iter().filter(|&&s| s > rank_tol).count();
        if n - rank != members.len() {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn example_one_torus_sup() {
        let s = DelaySystem::scalar(&[0.75, -0.75], &[1.0, 2.0]).unwrap();
        let v = torus_sup(&s, DEFAULT_RESOLUTION, DEFAULT_REFINE_ITERS).unwrap();
        assert!((v.sup_estimate - 1.5).abs() <= 1e-6);
        assert_eq!(v.stable_in_delays, TriState::No);
        assert_eq!(scalar_sum_test(&s).unwrap(), 1.5);
    }

    #[test]
    fn zero_system_is_stable_in_delays() {
        let s = DelaySystem::new(vec![DMatrix::zeros(2, 2); 2], vec![1.0, 2.5]).unwrap();
        let v = torus_sup(&s, 16, 5).unwrap();
        assert_eq!(v.sup_estimate, 0.0);
        assert_eq!(v.stable_in_delays, TriState::Yes);
    }

    #[test]
    fn scalar_torus_sup_is_absolute_sum() {
        let s = DelaySystem::scalar(&[0.2, -0.05, -0.5], &[1.0, 2.0, 3.0]).unwrap();
        let v = torus_sup(&s, DEFAULT_RESOLUTION, DEFAULT_REFINE_ITERS).unwrap();
        assert!((v.sup_estimate - 0.75).abs() <= 1e-6);
        assert_eq!(v.stable_in_delays, TriState::Yes);
        assert_eq!(v.argmax_angles.len(), 3);
        assert_eq!(v.argmax_angles[0], 0.0);
    }

    #[test]
    fn refinement_is_monotone_off_grid() {
        let a2 = dmatrix![0.0, 0.4; -0.4, 0.0];
        let s = DelaySystem::new(vec![dmatrix![0.3, 0.1; 0.0, 0.2], a2], vec![1.0, 1.7]).unwrap();
        let v = torus_sup(&s, 8, 30).unwrap();
        assert!(v.refinement_trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(v.sup_estimate >= torus_radius(&s, &[0.0, 0.0]));
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let s = DelaySystem::new(
            vec![dmatrix![0.3, 0.1; -0.2, 0.2], dmatrix![0.1, -0.3; 0.2, 0.1], dmatrix![0.05, 0.0; 0.1, -0.2]],
            vec![1.0, 1.5, 2.2],
        )
        .unwrap();
        let one = torus_sup_threads(&s, 32, 10, 1).unwrap();
        let four = torus_sup_threads(&s, 32, 10, 4).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn scalar_sum_rejects_matrices() {
        let s = DelaySystem::new(vec![DMatrix::identity(2, 2)], vec![1.0]).unwrap();
        assert_eq!(scalar_sum_test(&s).unwrap_err(), Error::NotScalar(2));
    }

    #[test]
    fn classification_cases() {
        let companion = dmatrix![0.75, -0.75; 1.0, 0.0];
        let c = classify_single_delay(&companion, default_rank_tol(&companion)).unwrap();
        assert_eq!(c.class, SingleDelayClass::AsymptoticallyStable);
        assert_relative_eq!(c.spectral_radius, 3f64.sqrt() / 2.0, epsilon = 1e-12);

        let id = DMatrix::<f64>::identity(2, 2);
        assert_eq!(classify_single_delay(&id, default_rank_tol(&id)).unwrap().class, SingleDelayClass::Stable);

        let jordan = dmatrix![1.0, 1.0; 0.0, 1.0];
        assert_eq!(
            classify_single_delay(&jordan, default_rank_tol(&jordan)).unwrap().class,
            SingleDelayClass::Unstable
        );

        let rotation = dmatrix![0.0, -1.0; 1.0, 0.0];
        assert_eq!(
            classify_single_delay(&rotation, default_rank_tol(&rotation)).unwrap().class,
            SingleDelayClass::Stable
        );
        let big = dmatrix![1.1];
        assert_eq!(classify_single_delay(&big, 1e-8).unwrap().class, SingleDelayClass::Unstable);
    }
}
