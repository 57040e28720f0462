//! Decay-rate certificates for delays `r_k(t) = r0_k + delta_k(t)` with
//! `delta_k(t) <= delta_k` and `d/dt delta_k(t) <= delta1_k < 1`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{is_positive_definite, lambda_max, lambda_min};
use crate::lyapunov::{build_m_mu, search_certificate, verify_certificate, Certificate, SearchOptions};
use crate::systems::DelaySystem;

#[derive(Debug, Clone, PartialEq)]
pub struct VaryingCertificate {
    pub beta: f64,
    pub gamma_max: f64,
    /// Reported rate; equal to `gamma_max`.
    pub gamma: f64,
    /// `1 - beta - e^{-2 mu r0_k}`; each `delta1_k` must lie strictly below.
    pub delta1_caps: Vec<f64>,
    /// Upper end of the admissible `epsilon` per delay (recorded, not enforced).
    pub epsilon_bounds: Vec<f64>,
    /// Amplitude. Single delay: `sqrt(lambda_max(P) / lambda_min(P))`, pointwise.
    /// Several delays: `sqrt(alpha2 / alpha1)` for the L2 window norm, with
    /// `alpha1` evaluated at the rate `max(mu, gamma)`.
    pub alpha: f64,
    /// Several delays only: `sqrt(alpha2 / alpha1)` with `alpha1` at `gamma`.
    pub alpha_tight: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub base_certificate: Certificate,
}

/// Per-delay perturbation bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VaryingBounds {
    pub delta: Vec<f64>,
    pub delta1: Vec<f64>,
}

fn nominal(system: &DelaySystem, p_list: &[DMatrix<f64>], mu: f64) -> Result<(Certificate, f64)> {
    let cert = verify_certificate(system, p_list, mu)?;
    if !cert.verified {
        return Err(Error::NominalNotVerified { margin: cert.min_eig_margin });
    }
    let m = build_m_mu(system, &cert.p_list, mu)?;
    let lambda_neg = lambda_max(&(-m.matrix()));
    Ok((cert, lambda_neg))
}

fn rates(
    beta: f64,
    mu: f64,
    r0: &[f64],
    bounds: &VaryingBounds,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let mut caps = Vec::with_capacity(r0.len());
    let mut eps = Vec::with_capacity(r0.len());
    let mut gamma_max = f64::INFINITY;
    for (k, &r) in r0.iter().enumerate() {
        let (delta, delta1) = (bounds.delta[k], bounds.delta1[k]);
        let decay = (-2.0 * mu * r).exp();
        let cap = 1.0 - beta - decay;
        caps.push(cap);
        if !(delta1 < cap) || !(delta1 < 1.0) {
            return Err(Error::DerivativeBoundTooLarge { index: k + 1, delta1, cap: cap.min(1.0) });
        }
        let ratio = (beta + decay) / (1.0 - delta1);
        let gamma_k = -ratio.ln() / (2.0 * (r + delta));
        gamma_max = gamma_max.min(gamma_k);
        let lower = ((decay - beta) / (1.0 - delta1)).ln();
        eps.push(-ratio.ln() - (-lower).max(0.0));
    }
    Ok((caps, eps, gamma_max))
}

fn check_bounds(count: usize, bounds: &VaryingBounds) -> Result<()> {
    if bounds.delta.len() != count || bounds.delta1.len() != count {
        return Err(Error::DimensionMismatch(format!(
            "{} / {} perturbation bounds for {count} delays",
            bounds.delta.len(),
            bounds.delta1.len()
        )));
    }
    if let Some(d) = bounds.delta.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::InvalidInput(format!("delay bound {d} must be nonnegative")));
    }
    Ok(())
}

/// Single time-varying delay around `r0`.
pub fn varying_single(
    a: &DMatrix<f64>,
    r0: f64,
    delta: f64,
    delta1: f64,
    p: &DMatrix<f64>,
    mu: f64,
) -> Result<VaryingCertificate> {
    let system = DelaySystem::new(vec![a.clone()], vec![r0])?;
    let bounds = VaryingBounds { delta: vec![delta], delta1: vec![delta1] };
    check_bounds(1, &bounds)?;
    let (cert, lambda_neg) = nominal(&system, std::slice::from_ref(p), mu)?;
    let beta = lambda_neg / lambda_max(&cert.p_list[0]);
    let (delta1_caps, epsilon_bounds, gamma_max) = rates(beta, mu, &[r0], &bounds)?;
    Ok(VaryingCertificate {
        beta,
        gamma_max,
        gamma: gamma_max,
        delta1_caps,
        epsilon_bounds,
        alpha: cert.alpha_exp.unwrap_or(f64::NAN),
        alpha_tight: None,
        alpha1: None,
        alpha2: None,
        base_certificate: cert,
    })
}

/// Several time-varying delays around the delays of `system`.
pub fn varying_multi(
    system: &DelaySystem,
    bounds: &VaryingBounds,
    p_list: &[DMatrix<f64>],
    mu: f64,
) -> Result<VaryingCertificate> {
    let count = system.num_delays();
    check_bounds(count, bounds)?;
    let (cert, lambda_neg) = nominal(system, p_list, mu)?;
    let p = &cert.p_list;
    let denominator = (0..count)
        .map(|k| lambda_max(&p[k]) - if k + 1 < count { lambda_min(&p[k + 1]) } else { 0.0 })
        .fold(f64::NEG_INFINITY, f64::max);
    let beta = lambda_neg / denominator;
    let r0 = system.delays();
    let (delta1_caps, epsilon_bounds, gamma_max) = rates(beta, mu, r0, bounds)?;

    let reach: Vec<f64> = r0.iter().zip(&bounds.delta).map(|(r, d)| r + d).collect();
    let alpha1_at = |rate: f64| {
        (0..count)
            .map(|k| (-2.0 * rate * reach[k]).exp() * lambda_min(&p[k]))
            .fold(f64::INFINITY, f64::min)
    };
    let alpha2 = reach[count - 1] * p.iter().map(lambda_max).fold(0.0, f64::max);
    let alpha1 = alpha1_at(mu.max(gamma_max));
    Ok(VaryingCertificate {
        beta,
        gamma_max,
        gamma: gamma_max,
        delta1_caps,
        epsilon_bounds,
        alpha: (alpha2 / alpha1).sqrt(),
        alpha_tight: Some((alpha2 / alpha1_at(gamma_max)).sqrt()),
        alpha1: Some(alpha1),
        alpha2: Some(alpha2),
        base_certificate: cert,
    })
}

/// Dispatch on the number of delays, searching a nominal certificate when
/// none is supplied.
pub fn certify_varying(
    system: &DelaySystem,
    bounds: &VaryingBounds,
    certificate: Option<(&[DMatrix<f64>], f64)>,
    options: &SearchOptions,
) -> Result<VaryingCertificate> {
    let searched;
    let (p_list, mu) = match certificate {
        Some(c) => c,
        None => {
            searched = search_certificate(system, options)?;
            (searched.p_list.as_slice(), searched.mu)
        }
    };
    if system.num_delays() == 1 {
        check_bounds(1, bounds)?;
        if p_list.len() != 1 {
            return Err(Error::DimensionMismatch(format!("{} matrices P for 1 delay", p_list.len())));
        }
        varying_single(
            &system.matrices()[0],
            system.delays()[0],
            bounds.delta[0],
            bounds.delta1[0],
            &p_list[0],
            mu,
        )
    } else {
        varying_multi(system, bounds, p_list, mu)
    }
}

/// `min{1, lambda_min(M) / lambda_max(P)}`.
pub fn asymptotic_delta_max(p: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<f64> {
    if !is_positive_definite(p) {
        return Err(Error::NotPositiveDefinite(1));
    }
    if !is_positive_definite(m) {
        return Err(Error::NotPositiveDefinite(2));
    }
    Ok((lambda_min(m) / lambda_max(p)).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::solve_stein;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn example2() -> (DMatrix<f64>, DMatrix<f64>) {
        (dmatrix![0.5, -0.3; 0.35, 0.0], dmatrix![22.8565, -16.3276; -16.3276, 19.5955])
    }

    #[test]
    fn no_perturbation_recovers_rate_when_beta_vanishes() {
        // a^2 = e^{-2 mu r} makes M_mu singular, so beta = 0.
        let mu = 2f64.ln();
        let c = varying_single(&dmatrix![0.5], 1.0, 0.0, 0.0, &dmatrix![1.0], mu).unwrap();
        assert!(c.beta.abs() <= 1e-15);
        assert_relative_eq!(c.gamma_max, mu, epsilon = 1e-12);
    }

    #[test]
    fn boundary_derivative_rejected() {
        let (a, p) = example2();
        let ok = varying_single(&a, std::f64::consts::PI, 0.5, 0.25, &p, 0.3584).unwrap();
        let cap = ok.delta1_caps[0];
        let err = varying_single(&a, std::f64::consts::PI, 0.5, cap, &p, 0.3584).unwrap_err();
        assert!(matches!(err, Error::DerivativeBoundTooLarge { index: 1, .. }));
    }

    #[test]
    fn single_beta_nonpositive() {
        let (a, p) = example2();
        let c = varying_single(&a, std::f64::consts::PI, 0.5, 0.25, &p, 0.3584).unwrap();
        assert!(c.beta <= 0.0);
        assert!(c.delta1_caps[0] > 0.0 && c.delta1_caps[0] <= 1.0);
    }

    #[test]
    fn one_delay_multi_matches_single() {
        let (a, p) = example2();
        let r = std::f64::consts::PI;
        let single = varying_single(&a, r, 0.5, 0.25, &p, 0.3584).unwrap();
        let s = DelaySystem::new(vec![a], vec![r]).unwrap();
        let multi =
            varying_multi(&s, &VaryingBounds { delta: vec![0.5], delta1: vec![0.25] }, &[p], 0.3584).unwrap();
        assert_relative_eq!(single.gamma_max, multi.gamma_max, epsilon = 1e-15);
        assert_eq!(single.beta, multi.beta);
    }

    #[test]
    fn unverified_nominal_rejected() {
        let (a, p) = example2();
        assert!(matches!(
            varying_single(&a, std::f64::consts::PI, 0.5, 0.25, &p, 2.0).unwrap_err(),
            Error::NominalNotVerified { .. }
        ));
    }

    #[test]
    fn asymptotic_delta_scalar() {
        assert_relative_eq!(asymptotic_delta_max(&dmatrix![4.0 / 3.0], &dmatrix![1.0]).unwrap(), 0.75);
        let p = dmatrix![2.0, 0.5; 0.5, 1.0];
        assert!(asymptotic_delta_max(&p, &p).unwrap() <= 1.0);
    }

    #[test]
    fn asymptotic_delta_matches_rate_zero_cap() {
        let (a, _) = example2();
        let m = DMatrix::identity(2, 2);
        let p = solve_stein(&a, &m).unwrap();
        let d = asymptotic_delta_max(&p, &m).unwrap();
        assert!(d > 0.0 && d < 1.0);
        // At mu = 0, beta = -lambda_min(M) / lambda_max(P) and the cap is -beta.
        let c = varying_single(&a, 1.0, 0.0, 0.0, &p, 0.0).unwrap();
        assert_relative_eq!(c.delta1_caps[0], d, epsilon = 1e-12);
    }
}
