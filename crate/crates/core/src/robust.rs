//! Stability margins under norm-bounded perturbations `A_k + Delta_k`,
//! `|||Delta_k||| <= delta_k`.
//!
//! Margins are the largest eigenvalue of the left-hand side of the robust
//! inequality; a test passes when the margin is at most `psd_tol`, the
//! tolerance [`verify_certificate`] uses for the same `M_mu`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{is_positive_definite, lambda_max, lambda_min};
pub use crate::linalg::induced_norm;
use crate::lyapunov::{build_m_mu, verify_certificate, CertificateLmi, SearchOptions};
use crate::systems::DelaySystem;

/// Returned by [`max_delta`] for a zero scaling ray.
pub const UNBOUNDED_DELTA: f64 = f64::MAX;

const DELTA_REL_TOL: f64 = 1e-6;
/// Budgets beyond this are reported as [`UNBOUNDED_DELTA`].
const DELTA_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustVerdict {
    pub passed: bool,
    pub margin: f64,
    pub psd_tol: f64,
    /// `sqrt(lambda_max(P) / lambda_min(P))` for one delay, the L2 amplitude otherwise.
    pub amplitude: f64,
}

/// Single-delay test:
/// `lambda_max(A^T P A - e^{-2 mu r} P) + lambda_max(P) (delta + 2 |||A|||) delta`.
pub fn verify_robust_single(a: &DMatrix<f64>, r: f64, delta: f64, p: &DMatrix<f64>, mu: f64) -> Result<RobustVerdict> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidInput(format!("uncertainty radius {delta} must be nonnegative")));
    }
    let system = DelaySystem::new(vec![a.clone()], vec![r])?;
    let cert = verify_certificate(&system, std::slice::from_ref(p), mu)?;
    let m = build_m_mu(&system, &cert.p_list, mu)?;
    let lhs = -m.matrix();
    let margin = lambda_max(&lhs) + lambda_max(p) * (delta + 2.0 * induced_norm(a)) * delta;
    Ok(RobustVerdict {
        passed: margin <= cert.psd_tol,
        margin,
        psd_tol: cert.psd_tol,
        amplitude: cert.alpha_exp.unwrap_or(cert.alpha_l2),
    })
}

/// Block-diagonal `Q_Delta` with blocks
/// `sum_p (|||A_j||| delta_p + delta_j |||A_p||| + delta_p delta_j) I_n`.
pub fn q_delta(system: &DelaySystem, deltas: &[f64]) -> Result<DMatrix<f64>> {
    check_budget(system, deltas)?;
    let n = system.dim();
    let count = system.num_delays();
    let norms: Vec<f64> = system.matrices().iter().map(induced_norm).collect();
    let mut q = DMatrix::zeros(n * count, n * count);
    for j in 0..count {
        let w: f64 = (0..count)
            .map(|p| norms[j] * deltas[p] + deltas[j] * norms[p] + deltas[p] * deltas[j])
            .sum();
        for i in 0..n {
            q[(j * n + i, j * n + i)] = w;
        }
    }
    Ok(q)
}

fn check_budget(system: &DelaySystem, deltas: &[f64]) -> Result<()> {
    if deltas.len() != system.num_delays() {
        return Err(Error::DimensionMismatch(format!(
            "{} uncertainty radii for {} delays",
            deltas.len(),
            system.num_delays()
        )));
    }
    if let Some(d) = deltas.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::InvalidInput(format!("uncertainty radius {d} must be nonnegative")));
    }
    Ok(())
}

/// Multi-delay test: `lambda_max(-M_mu + lambda_max(P_1) Q_Delta)`.
pub fn verify_robust_multi(
    system: &DelaySystem,
    deltas: &[f64],
    p_list: &[DMatrix<f64>],
    mu: f64,
) -> Result<RobustVerdict> {
    check_budget(system, deltas)?;
    let cert = verify_certificate(system, p_list, mu)?;
    let m = build_m_mu(system, &cert.p_list, mu)?;
    let lhs = -m.matrix() + q_delta(system, deltas)? * lambda_max(&cert.p_list[0]);
    let margin = lambda_max(&lhs);
    Ok(RobustVerdict {
        passed: margin <= cert.psd_tol,
        margin,
        psd_tol: cert.psd_tol,
        amplitude: cert.alpha_exp.unwrap_or(cert.alpha_l2),
    })
}

/// Dispatch on the number of delays.
pub fn verify_robust(system: &DelaySystem, deltas: &[f64], p_list: &[DMatrix<f64>], mu: f64) -> Result<RobustVerdict> {
    if system.num_delays() == 1 {
        check_budget(system, deltas)?;
        check_p_count(system, p_list)?;
        verify_robust_single(&system.matrices()[0], system.delays()[0], deltas[0], &p_list[0], mu)
    } else {
        verify_robust_multi(system, deltas, p_list, mu)
    }
}

fn check_p_count(system: &DelaySystem, p_list: &[DMatrix<f64>]) -> Result<()> {
    if p_list.len() != system.num_delays() {
        return Err(Error::DimensionMismatch(format!(
            "{} matrices P for {} delays",
            p_list.len(),
            system.num_delays()
        )));
    }
    Ok(())
}

/// Largest `s` with the robust test passing at `delta = s * scaling`, with
/// `P` held fixed. Bisection to `1e-6` relative.
pub fn max_delta(system: &DelaySystem, p_list: &[DMatrix<f64>], mu: f64, scaling: &[f64]) -> Result<f64> {
    check_budget(system, scaling)?;
    let nominal = verify_certificate(system, p_list, mu)?;
    if !nominal.verified {
        return Err(Error::NoNominalCertificate);
    }
    let passes = |s: f64| -> Result<bool> {
        let deltas: Vec<f64> = scaling.iter().map(|c| c * s).collect();
        Ok(verify_robust(system, &deltas, p_list, mu)?.passed)
    };
    bisect_budget(scaling, passes)
}

/// [`max_delta`] re-searching `P` (with `P_1 <= I`) at every bisection step.
pub fn max_delta_research(system: &DelaySystem, mu: f64, scaling: &[f64], options: &SearchOptions) -> Result<f64> {
    check_budget(system, scaling)?;
    let lmi = CertificateLmi::new(system);
    let search = |s: f64| -> Result<bool> {
        let deltas: Vec<f64> = scaling.iter().map(|c| c * s).collect();
        Ok(robust_certificate(system, &lmi, mu, &deltas, options)?.is_some())
    };
    if !search(0.0)? {
        return Err(Error::NoNominalCertificate);
    }
    bisect_budget(scaling, search)
}

/// Matrices `P` passing the robust test at budget `deltas`, found by
/// alternating projections on `M_mu(P) - Q_Delta >= 0`, `P_1 <= I`.
pub fn robust_certificate_search(
    system: &DelaySystem,
    mu: f64,
    deltas: &[f64],
    options: &SearchOptions,
) -> Result<Option<Vec<DMatrix<f64>>>> {
    check_budget(system, deltas)?;
    robust_certificate(system, &CertificateLmi::new(system), mu, deltas, options)
}

fn robust_certificate(
    system: &DelaySystem,
    lmi: &CertificateLmi,
    mu: f64,
    deltas: &[f64],
    options: &SearchOptions,
) -> Result<Option<Vec<DMatrix<f64>>>> {
    let offset = -q_delta(system, deltas)?;
    let problem = lmi.problem(mu, Some(&offset), true)?;
    let mut best = f64::NEG_INFINITY;
    Ok(lmi.run(&problem, 1e-4, options, mu.to_bits(), None, &mut best, |list| {
        if list.iter().any(|p| !is_positive_definite(p) || lambda_min(p) < options.psd_margin) {
            return None;
        }
        let verdict = verify_robust(system, deltas, &list, mu).ok()?;
        verdict.passed.then_some(list)
    }))
}

fn bisect_budget(scaling: &[f64], mut passes: impl FnMut(f64) -> Result<bool>) -> Result<f64> {
    if scaling.iter().all(|&c| c == 0.0) {
        return Ok(UNBOUNDED_DELTA);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while passes(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > DELTA_CAP {
            return Ok(UNBOUNDED_DELTA);
        }
    }
    while hi - lo > DELTA_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if passes(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `delta U diag(sigma) V^T` with `sigma` uniform in `[0, 1]` and `U`, `V`
/// orthogonal factors of Gaussian matrices; `|||result||| <= delta`.
pub fn random_perturbation(n: usize, delta: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut gaussian = || DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = gaussian().qr().q();
    let v = gaussian().qr().q();
    let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| rng.random_range(0.0..=1.0)));
    u * sigma * v.transpose() * delta
}

/// Deterministic generator for [`random_perturbation`] draws.
pub fn perturbation_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn example2_a() -> DMatrix<f64> {
        dmatrix![0.5, -0.3; 0.35, 0.0]
    }

    #[test]
    fn induced_norm_cases() {
        assert_relative_eq!(induced_norm(&dmatrix![2.0, 0.0; 0.0, -3.0]), 3.0, epsilon = 1e-14);
        assert_eq!(induced_norm(&DMatrix::zeros(2, 2)), 0.0);
        // Oracle: largest eigenvalue of A^T A = [[0.3725, -0.15], [-0.15, 0.09]].
        let (t, d): (f64, f64) = (0.3725 + 0.09, 0.3725 * 0.09 - 0.15 * 0.15);
        let oracle = ((t + (t * t - 4.0 * d).sqrt()) / 2.0).sqrt();
        assert_relative_eq!(induced_norm(&example2_a()), oracle, epsilon = 1e-14);
    }

    #[test]
    fn zero_radius_matches_nominal() {
        let a = example2_a();
        let p = dmatrix![4.5412, -2.5013; -2.5013, 3.5768];
        let r = std::f64::consts::PI;
        let v = verify_robust_single(&a, r, 0.0, &p, 0.2354).unwrap();
        let s = DelaySystem::new(vec![a], vec![r]).unwrap();
        let c = verify_certificate(&s, &[p], 0.2354).unwrap();
        assert_eq!(v.passed, c.verified);
        assert!((v.margin + c.min_eig_margin).abs() <= 1e-12);
    }

    #[test]
    fn large_radius_fails() {
        let p = dmatrix![4.5412, -2.5013; -2.5013, 3.5768];
        let v = verify_robust_single(&example2_a(), std::f64::consts::PI, 10.0, &p, 0.2354).unwrap();
        assert!(!v.passed);
    }

    #[test]
    fn zero_system_budget_root() {
        let s = DelaySystem::new(vec![dmatrix![0.0]], vec![1.0]).unwrap();
        let mu = 0.05;
        let s_max = max_delta(&s, &[dmatrix![1.0]], mu, &[1.0]).unwrap();
        assert!((s_max - (-mu).exp()).abs() <= 1e-5, "{s_max}");
    }

    #[test]
    fn zero_scaling_is_unbounded() {
        let s = DelaySystem::new(vec![dmatrix![0.2]], vec![1.0]).unwrap();
        assert_eq!(max_delta(&s, &[dmatrix![1.0]], 0.1, &[0.0]).unwrap(), UNBOUNDED_DELTA);
    }

    #[test]
    fn no_nominal_certificate_detected() {
        let s = DelaySystem::new(vec![dmatrix![0.99]], vec![1.0]).unwrap();
        assert_eq!(max_delta(&s, &[dmatrix![1.0]], 0.5, &[1.0]).unwrap_err(), Error::NoNominalCertificate);
    }

    #[test]
    fn random_perturbation_norm_bound() {
        let mut rng = perturbation_rng(7);
        for _ in 0..50 {
            let d = random_perturbation(3, 0.2, &mut rng);
            assert!(induced_norm(&d) <= 0.2 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn research_mode_finds_budget() {
        let s = DelaySystem::scalar(&[0.2, -0.05, -0.5], &[1.0, 2f64.sqrt(), 2.0 * std::f64::consts::PI]).unwrap();
        let opts = SearchOptions { max_iters: 300, ..SearchOptions::default() };
        let s_max = max_delta_research(&s, 0.01, &[1.0, 1.0, 1.0], &opts).unwrap();
        assert!(s_max > 0.0 && s_max < 0.25 / 3.0 + 1e-9, "{s_max}");
    }
}
