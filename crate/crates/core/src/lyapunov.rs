//! Lyapunov-Krasovskii certificates.
//!
//! A certificate is a list `P_1, ..., P_N` of symmetric positive definite
//! matrices together with a rate `mu` such that the block matrix `M_mu` is
//! positive semidefinite. [`verify_certificate`] is the only gate: searched
//! certificates are accepted solely through it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    asymmetry, is_positive_definite, lambda_max, lambda_min, psd_tolerance, solve_refined, spectral_radius,
    SymBasis,
};
use crate::lmi::{Constraint, LmiProblem};
use crate::spectral::torus_sup;
use crate::systems::{commensurability, lift_commensurate, DelaySystem};

/// Symmetric `(N n) x (N n)` matrix with `n x n` block addressing.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    matrix: DMatrix<f64>,
    block: usize,
}

impl BlockMatrix {
    pub fn new(matrix: DMatrix<f64>, block: usize) -> Self {
        debug_assert_eq!(matrix.nrows() % block, 0);
        Self { matrix, block }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn blocks(&self) -> usize {
        self.matrix.nrows() / self.block
    }

    pub fn block_at(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.matrix.view((i * self.block, j * self.block), (self.block, self.block)).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    Exponential,
    L2Exponential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub p_list: Vec<DMatrix<f64>>,
    pub mu: f64,
    /// `sqrt(lambda_max(P) / lambda_min(P))`, single delay only.
    pub alpha_exp: Option<f64>,
    pub alpha_l2: f64,
    /// `lambda_min(P_N) e^{-2 mu r_N}`.
    pub alpha1: f64,
    /// `sum_k (r_k - r_{k-1}) lambda_max(P_k)`.
    pub alpha2: f64,
    pub kind: CertificateKind,
    pub verified: bool,
    pub min_eig_margin: f64,
    pub psd_tol: f64,
}

impl Certificate {
    /// `P_N <= ... <= P_1` within `tol`.
    pub fn ordering_holds(&self, tol: f64) -> bool {
        self.p_list.windows(2).all(|w| lambda_min(&(&w[0] - &w[1])) >= -tol)
    }
}

/// `M_mu` for the current system. `-M_mu` has off-diagonal blocks
/// `A_i^T P_1 A_j` and diagonal blocks
/// `A_k^T P_1 A_k + e^{-2 mu r_k} (P_{k+1} - P_k)` with `P_{N+1} = 0`.
pub fn build_m_mu(system: &DelaySystem, p_list: &[DMatrix<f64>], mu: f64) -> Result<BlockMatrix> {
    let n = system.dim();
    let count = system.num_delays();
    check_shapes(n, count, p_list)?;
    let p1 = &p_list[0];
    let mats = system.matrices();
    let left: Vec<DMatrix<f64>> = mats.iter().map(|a| a.transpose() * p1).collect();
    let mut neg = DMatrix::zeros(n * count, n * count);
    for i in 0..count {
        for j in i..count {
            let mut blk = &left[i] * &mats[j];
            if i == j {
                let w = (-2.0 * mu * system.delays()[i]).exp();
                blk -= &p_list[i] * w;
                if i + 1 < count {
                    blk += &p_list[i + 1] * w;
                }
            }
            neg.view_mut((i * n, j * n), (n, n)).copy_from(&blk);
            if i != j {
                neg.view_mut((j * n, i * n), (n, n)).copy_from(&blk.transpose());
            }
        }
    }
    Ok(BlockMatrix::new(-neg, n))
}

fn check_shapes(n: usize, count: usize, p_list: &[DMatrix<f64>]) -> Result<()> {
    if p_list.len() != count {
        return Err(Error::DimensionMismatch(format!("{} matrices P for {count} delays", p_list.len())));
    }
    if let Some(k) = p_list.iter().position(|p| p.nrows() != n || p.ncols() != n) {
        return Err(Error::DimensionMismatch(format!("P_{} is not {n}x{n}", k + 1)));
    }
    Ok(())
}

/// Unique symmetric `P` with `A^T P A - P = -M`.
pub fn solve_stein(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch("Stein operands must be square and equal size".into()));
    }
    let rho = spectral_radius(a)?;
    if rho >= 1.0 {
        return Err(Error::SpectralRadiusNotLessThanOne(rho));
    }
    let basis = SymBasis::new(n);
    let d = basis.dim();
    let mut op = DMatrix::zeros(d, d);
    for i in 0..d {
        let e = basis.element(i);
        let image = a.transpose() * &e * a - &e;
        op.set_column(i, &DVector::from_vec(basis.coords(&image)));
    }
    let rhs = DVector::from_vec(basis.coords(&(-m)));
    let coords = solve_refined(&op, &rhs)?;
    let p = basis.matrix(coords.as_slice());
    let residual = (a.transpose() * &p * a - &p + m).norm();
    if !(residual <= 1e-10 * (1.0 + m.norm())) {
        return Err(Error::SingularSystem);
    }
    Ok(p)
}

/// Right endpoint `-(1 / 2r) ln(1 - lambda_min(M) / lambda_max(P))` of the
/// admissible rate interval.
pub fn mu_from_stein(p: &DMatrix<f64>, m: &DMatrix<f64>, r: f64) -> Result<f64> {
    let min_m = lambda_min(m);
    let max_p = lambda_max(p);
    if !(min_m < max_p) || !(min_m > 0.0) || !(r > 0.0) {
        return Err(Error::InvalidRatio { min_m, max_p });
    }
    Ok(-(1.0 - min_m / max_p).ln() / (2.0 * r))
}

/// Check `M_mu >= -psd_tol` and compute the amplitude constants.
pub fn verify_certificate(system: &DelaySystem, p_list: &[DMatrix<f64>], mu: f64) -> Result<Certificate> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::InvalidInput(format!("decay rate {mu} must be finite and nonnegative")));
    }
    check_shapes(system.dim(), system.num_delays(), p_list)?;
    for (k, p) in p_list.iter().enumerate() {
        if asymmetry(p) > 1e-12 {
            return Err(Error::NotSymmetric(k + 1));
        }
        if !is_positive_definite(p) {
            return Err(Error::NotPositiveDefinite(k + 1));
        }
    }
    let p_list: Vec<DMatrix<f64>> = p_list.iter().map(crate::linalg::symmetrize).collect();
    let m = build_m_mu(system, &p_list, mu)?;
    let psd_tol = psd_tolerance(m.matrix());
    let min_eig_margin = lambda_min(m.matrix());

    let delays = system.delays();
    let count = system.num_delays();
    let r_n = delays[count - 1];
    let alpha1 = lambda_min(&p_list[count - 1]) * (-2.0 * mu * r_n).exp();
    let alpha2: f64 = (0..count)
        .map(|k| {
            let prev = if k == 0 { 0.0 } else { delays[k - 1] };
            (delays[k] - prev) * lambda_max(&p_list[k])
        })
        .sum();
    let alpha_exp = (count == 1).then(|| (lambda_max(&p_list[0]) / lambda_min(&p_list[0])).sqrt());
    Ok(Certificate {
        alpha_exp,
        alpha_l2: (alpha2 / alpha1).sqrt(),
        alpha1,
        alpha2,
        kind: if count == 1 { CertificateKind::Exponential } else { CertificateKind::L2Exponential },
        verified: min_eig_margin >= -psd_tol,
        min_eig_margin,
        psd_tol,
        p_list,
        mu,
    })
}

/// Rate to use for a certificate whose `mu` was printed with `decimals`
/// decimals.
///
/// Returns `mu` itself when it verifies. Otherwise returns the largest rate in
/// `[mu - h, mu]`, `h = 0.5e-decimals`, that verifies with the same matrices,
/// or `None` if even `mu - h` fails.
pub fn resolve_rounded_mu(
    system: &DelaySystem,
    p_list: &[DMatrix<f64>],
    mu: f64,
    decimals: i32,
) -> Result<Option<f64>> {
    if verify_certificate(system, p_list, mu)?.verified {
        return Ok(Some(mu));
    }
    let mut lo = (mu - 0.5 * 10f64.powi(-decimals)).max(0.0);
    if !verify_certificate(system, p_list, lo)?.verified {
        return Ok(None);
    }
    let mut hi = mu;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if verify_certificate(system, p_list, mid)?.verified {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    /// Required `lambda_min` of `M_mu` and of every `P_k`, relative to
    /// `max_k lambda_max(P_k) = 1`. Multi-delay search only.
    pub psd_margin: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub restarts: usize,
    pub bisection_iters: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { psd_margin: 1e-6, max_iters: 500, seed: 0, restarts: 2, bisection_iters: 40 }
    }
}

/// Largest verified rate found by bisection, with its certificate.
pub fn search_certificate(system: &DelaySystem, options: &SearchOptions) -> Result<Certificate> {
    if system.num_delays() == 1 {
        search_single(system, options)
    } else {
        search_multi(system, options)
    }
}

/// Lift a commensurate system to one delay and certify the lifted system.
pub fn search_lifted_certificate(
    system: &DelaySystem,
    tol: f64,
    options: &SearchOptions,
) -> Result<(DelaySystem, Certificate)> {
    let comm = commensurability(system, tol);
    let lifted = lift_commensurate(system, &comm)?;
    let cert = search_single(&lifted, options)?;
    Ok((lifted, cert))
}

fn single_candidate(system: &DelaySystem, mu: f64) -> Option<Certificate> {
    let r = system.delays()[0];
    let scaled = &system.matrices()[0] * (mu * r).exp();
    let n = system.dim();
    let p = solve_stein(&scaled, &DMatrix::identity(n, n)).ok()?;
    let cert = verify_certificate(system, &[p], mu).ok()?;
    cert.verified.then_some(cert)
}

fn search_single(system: &DelaySystem, options: &SearchOptions) -> Result<Certificate> {
    let a = &system.matrices()[0];
    let r = system.delays()[0];
    let n = system.dim();
    let rho = spectral_radius(a)?;
    let p0 = solve_stein(a, &DMatrix::identity(n, n)).map_err(|_| Error::SearchFailure {
        best_margin: 1.0 - rho,
    })?;
    let mu0 = mu_from_stein(&p0, &DMatrix::identity(n, n), r).unwrap_or(0.0);
    let mut best = single_candidate(system, mu0)
        .or_else(|| single_candidate(system, 0.0))
        .ok_or(Error::SearchFailure { best_margin: 1.0 - rho })?;
    let mut lo = best.mu;
    let mut hi = if rho > 0.0 { -rho.ln() / r } else { 1.0 / r };
    if rho == 0.0 {
        while let Some(c) = single_candidate(system, hi).filter(|_| hi < 1e6) {
            best = c;
            lo = hi;
            hi *= 2.0;
        }
    }
    for _ in 0..options.bisection_iters {
        let mid = 0.5 * (lo + hi);
        match single_candidate(system, mid) {
            Some(c) => {
                best = c;
                lo = mid;
            }
            None => hi = mid,
        }
    }
    Ok(best)
}

/// LMI in the stacked svec coordinates of `P_1, ..., P_N`:
/// `M_mu(P) + offset >= target`, every `P_k >= target` and, when bounded,
/// `I - P_1 >= target`.
pub(crate) struct CertificateLmi<'a> {
    system: &'a DelaySystem,
    basis: SymBasis,
}

impl<'a> CertificateLmi<'a> {
    pub(crate) fn new(system: &'a DelaySystem) -> Self {
        Self { system, basis: SymBasis::new(system.dim()) }
    }

    pub(crate) fn unpack(&self, p: &[f64]) -> Vec<DMatrix<f64>> {
        p.chunks(self.basis.dim()).map(|c| self.basis.matrix(c)).collect()
    }

    pub(crate) fn pack(&self, p_list: &[DMatrix<f64>]) -> Vec<f64> {
        p_list.iter().flat_map(|p| self.basis.coords(p)).collect()
    }

    pub(crate) fn problem(&self, mu: f64, offset: Option<&DMatrix<f64>>, bound_p1: bool) -> Result<LmiProblem> {
        let n = self.system.dim();
        let count = self.system.num_delays();
        let d = self.basis.dim();
        let total = d * count;
        let zero_list = vec![DMatrix::zeros(n, n); count];
        let mut m_gens = Vec::with_capacity(total);
        let mut p_constraints: Vec<Constraint> = (0..count)
            .map(|_| Constraint { offset: DMatrix::zeros(n, n), generators: Vec::with_capacity(total) })
            .collect();
        let mut cap = Constraint { offset: DMatrix::identity(n, n), generators: Vec::with_capacity(total) };
        for var in 0..total {
            let (k, i) = (var / d, var % d);
            let mut list = zero_list.clone();
            list[k] = self.basis.element(i);
            m_gens.push(build_m_mu(self.system, &list, mu)?.matrix().clone());
            for (j, c) in p_constraints.iter_mut().enumerate() {
                c.generators.push(if j == k { list[k].clone() } else { DMatrix::zeros(n, n) });
            }
            cap.generators.push(if k == 0 { -&list[0] } else { DMatrix::zeros(n, n) });
        }
        let m_offset = offset.cloned().unwrap_or_else(|| DMatrix::zeros(n * count, n * count));
        let mut constraints = vec![Constraint { offset: m_offset, generators: m_gens }];
        constraints.extend(p_constraints);
        if bound_p1 {
            constraints.push(cap);
        }
        LmiProblem::new(total, constraints)
    }

    fn default_start(&self) -> Vec<f64> {
        let n = self.system.dim();
        let count = self.system.num_delays();
        let list: Vec<DMatrix<f64>> =
            (0..count).map(|k| DMatrix::identity(n, n) * (count - k) as f64).collect();
        self.pack(&list)
    }

    // Random decreasing chain P_1 >= ... >= P_N > 0.
    fn random_start(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.system.dim();
        let count = self.system.num_delays();
        let mut list = vec![DMatrix::zeros(n, n); count];
        let mut acc = DMatrix::zeros(n, n);
        for k in (0..count).rev() {
            let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            acc += &g * g.transpose() + DMatrix::identity(n, n) * rng.random_range(0.1..1.0);
            list[k] = acc.clone();
        }
        self.pack(&list)
    }

    /// Run alternating projections from the warm start, the deterministic
    /// start and `options.restarts` seeded random starts, in that order; the
    /// first start whose iterates satisfy `accept` wins.
    pub(crate) fn run<T>(
        &self,
        problem: &LmiProblem,
        target: f64,
        options: &SearchOptions,
        stream: u64,
        warm: Option<&[f64]>,
        best_margin: &mut f64,
        mut accept: impl FnMut(Vec<DMatrix<f64>>) -> Option<T>,
    ) -> Option<T> {
        let mut starts: Vec<Vec<f64>> = Vec::new();
        if let Some(w) = warm {
            starts.push(w.to_vec());
        }
        starts.push(self.default_start());
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ stream);
        for _ in 0..options.restarts {
            starts.push(self.random_start(&mut rng));
        }
        for start in starts {
            let mut found = None;
            let outcome = problem.solve(&start, target, options.max_iters, |p| match accept(self.unpack(p)) {
                Some(c) => {
                    found = Some(c);
                    true
                }
                None => false,
            });
            *best_margin = best_margin.max(outcome.best_margin);
            if found.is_some() {
                return found;
            }
        }
        None
    }
}

/// Normalise to `max_k lambda_max(P_k) = 1` and accept when `M_mu` and every
/// `P_k` clear `margin`.
fn accept_normalised(system: &DelaySystem, list: Vec<DMatrix<f64>>, mu: f64, margin: f64) -> Option<Certificate> {
    let scale = list.iter().map(lambda_max).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let list: Vec<DMatrix<f64>> = list.into_iter().map(|m| m / scale).collect();
    if list.iter().any(|m| lambda_min(m) < margin) {
        return None;
    }
    let cert = verify_certificate(system, &list, mu).ok()?;
    (cert.verified && cert.min_eig_margin >= margin).then_some(cert)
}

fn feasible_multi(
    lmi: &CertificateLmi,
    mu: f64,
    options: &SearchOptions,
    warm: Option<&[f64]>,
    best_margin: &mut f64,
) -> Result<Option<Certificate>> {
    let problem = lmi.problem(mu, None, false)?;
    Ok(lmi.run(&problem, 1.0, options, mu.to_bits(), warm, best_margin, |list| {
        accept_normalised(lmi.system, list, mu, options.psd_margin)
    }))
}

/// A verified certificate at the fixed rate `mu`, if the search finds one.
pub fn certificate_at_rate(system: &DelaySystem, mu: f64, options: &SearchOptions) -> Result<Option<Certificate>> {
    if system.num_delays() == 1 {
        return Ok(single_candidate(system, mu));
    }
    let lmi = CertificateLmi::new(system);
    let mut best_margin = f64::NEG_INFINITY;
    feasible_multi(&lmi, mu, options, None, &mut best_margin)
}

fn search_multi(system: &DelaySystem, options: &SearchOptions) -> Result<Certificate> {
    let lmi = CertificateLmi::new(system);
    let mut best_margin = f64::NEG_INFINITY;
    let mut best =
        feasible_multi(&lmi, 0.0, options, None, &mut best_margin)?.ok_or(Error::SearchFailure { best_margin })?;

    let r1 = system.min_delay();
    let sup = torus_sup(system, 32, 10)?.sup_estimate;
    let mut lo = 0.0;
    let mut hi = if sup > 0.0 && sup < 1.0 { -sup.ln() / r1 } else { 1.0 / r1 };
    for _ in 0..30 {
        let warm = lmi.pack(&best.p_list);
        match feasible_multi(&lmi, hi, options, Some(&warm), &mut best_margin)? {
            Some(c) => {
                best = c;
                lo = hi;
                hi *= 2.0;
            }
            None => break,
        }
    }
    for _ in 0..options.bisection_iters {
        let mid = 0.5 * (lo + hi);
        let warm = lmi.pack(&best.p_list);
        match feasible_multi(&lmi, mid, options, Some(&warm), &mut best_margin)? {
            Some(c) => {
                best = c;
                lo = mid;
            }
            None => hi = mid,
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn example2() -> DelaySystem {
        DelaySystem::new(vec![dmatrix![0.5, -0.3; 0.35, 0.0]], vec![std::f64::consts::PI]).unwrap()
    }

    #[test]
    fn single_delay_block_is_stein_form() {
        let s = example2();
        let p = dmatrix![2.0, 0.3; 0.3, 1.0];
        let m = build_m_mu(&s, &[p.clone()], 0.1).unwrap();
        let a = &s.matrices()[0];
        let expected = &p * (-0.2 * std::f64::consts::PI).exp() - a.transpose() * &p * a;
        assert_relative_eq!(m.matrix().clone(), expected, epsilon = 1e-14);
    }

    #[test]
    fn zero_dynamics_give_block_diagonal() {
        let s = DelaySystem::new(vec![DMatrix::zeros(1, 1); 3], vec![1.0, 2.0, 3.0]).unwrap();
        let p = vec![dmatrix![3.0], dmatrix![2.0], dmatrix![1.5]];
        let m = build_m_mu(&s, &p, 0.0).unwrap();
        assert_relative_eq!(m.matrix().clone(), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, 1.5])));
        assert_eq!(m.blocks(), 3);
        assert_eq!(m.block_at(1, 1), dmatrix![0.5]);
    }

    #[test]
    fn stein_scalar_and_zero() {
        assert_relative_eq!(solve_stein(&dmatrix![0.5], &dmatrix![1.0]).unwrap()[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
        let m = dmatrix![2.0, 0.5; 0.5, 1.0];
        assert_relative_eq!(solve_stein(&DMatrix::zeros(2, 2), &m).unwrap(), m, epsilon = 1e-14);
        assert!(matches!(
            solve_stein(&dmatrix![1.0], &dmatrix![1.0]).unwrap_err(),
            Error::SpectralRadiusNotLessThanOne(_)
        ));
    }

    #[test]
    fn stein_companion_residual() {
        let a = dmatrix![0.75, -0.75; 1.0, 0.0];
        let p = solve_stein(&a, &DMatrix::identity(2, 2)).unwrap();
        assert!((a.transpose() * &p * &a - &p + DMatrix::identity(2, 2)).norm() <= 1e-10);
        assert!(is_positive_definite(&p));
    }

    #[test]
    fn mu_from_stein_closed_form() {
        let mu = mu_from_stein(&dmatrix![4.0 / 3.0], &dmatrix![1.0], 1.0).unwrap();
        assert_relative_eq!(mu, 2f64.ln(), epsilon = 1e-14);
        assert!(matches!(mu_from_stein(&dmatrix![1.0], &dmatrix![2.0], 1.0), Err(Error::InvalidRatio { .. })));
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let s = example2();
        assert_eq!(
            verify_certificate(&s, &[dmatrix![1.0, 0.0; 0.0, -1.0]], 0.0).unwrap_err(),
            Error::NotPositiveDefinite(1)
        );
        assert_eq!(verify_certificate(&s, &[dmatrix![1.0, 0.5; 0.0, 1.0]], 0.0).unwrap_err(), Error::NotSymmetric(1));
        assert!(matches!(verify_certificate(&s, &[], 0.0).unwrap_err(), Error::DimensionMismatch(_)));
    }

    #[test]
    fn zero_dynamics_verify_at_any_rate() {
        let s = DelaySystem::new(vec![DMatrix::zeros(2, 2)], vec![1.0]).unwrap();
        let p = dmatrix![4.0, 1.0; 1.0, 2.0];
        let c = verify_certificate(&s, &[p.clone()], 7.0).unwrap();
        assert!(c.verified);
        assert_relative_eq!(c.alpha_exp.unwrap(), (lambda_max(&p) / lambda_min(&p)).sqrt());
    }

    #[test]
    fn scalar_search_reaches_log_bound() {
        let s = DelaySystem::scalar(&[0.9], &[1.0]).unwrap();
        let c = search_certificate(&s, &SearchOptions::default()).unwrap();
        assert!(c.verified);
        assert!((c.mu - (-(0.9f64).ln())).abs() <= 1e-6);
    }

    #[test]
    fn unstable_in_delays_fails_search() {
        let s = DelaySystem::scalar(&[0.75, -0.75], &[1.0, 2.0]).unwrap();
        let opts = SearchOptions { max_iters: 100, ..SearchOptions::default() };
        assert!(matches!(search_certificate(&s, &opts).unwrap_err(), Error::SearchFailure { .. }));
    }

    #[test]
    fn multi_delay_search_verifies_and_orders() {
        let s = DelaySystem::scalar(&[0.2, -0.05, -0.5], &[1.0, 2f64.sqrt(), 2.0 * std::f64::consts::PI]).unwrap();
        let c = search_certificate(&s, &SearchOptions { bisection_iters: 20, ..SearchOptions::default() }).unwrap();
        assert!(c.verified && c.mu > 0.0);
        assert!(c.ordering_holds(1e-9));
        assert!(verify_certificate(&s, &c.p_list, c.mu / 2.0).unwrap().verified);
    }

    #[test]
    fn lifted_search_certifies_companion() {
        let s = DelaySystem::scalar(&[0.3, -0.2], &[1.0, 2.0]).unwrap();
        let (lifted, c) = search_lifted_certificate(&s, 1e-9, &SearchOptions::default()).unwrap();
        assert_eq!(lifted.dim(), 2);
        assert!(c.verified);
    }
}
