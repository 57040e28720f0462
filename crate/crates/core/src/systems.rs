//! Plant description, initial functions and commensurate-delay lifting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `x(t) = sum_k A_k x(t - r_k)` with `0 < r_1 < ... < r_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySystem {
    matrices: Vec<DMatrix<f64>>,
    delays: Vec<f64>,
}

impl DelaySystem {
    pub fn new(matrices: Vec<DMatrix<f64>>, delays: Vec<f64>) -> Result<Self> {
        if matrices.is_empty() || delays.is_empty() {
            return Err(Error::EmptySystem);
        }
        if matrices.len() != delays.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} matrices for {} delays",
                matrices.len(),
                delays.len()
            )));
        }
        let n = matrices[0].nrows();
        if n == 0 {
            return Err(Error::DimensionMismatch("state dimension must be positive".into()));
        }
        for (k, a) in matrices.iter().enumerate() {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "A_{} is {}x{}, expected {n}x{n}",
                    k + 1,
                    a.nrows(),
                    a.ncols()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("A_{} has non-finite entries", k + 1)));
            }
        }
        for (k, &r) in delays.iter().enumerate() {
            if !r.is_finite() || r <= 0.0 {
                return Err(Error::NonPositiveDelay { index: k + 1, value: r });
            }
            if k > 0 && r <= delays[k - 1] {
                return Err(Error::NonIncreasingDelays {
                    index: k + 1,
                    value: r,
                    previous: delays[k - 1],
                });
            }
        }
        Ok(Self { matrices, delays })
    }

    /// Scalar convenience constructor.
    pub fn scalar(coefficients: &[f64], delays: &[f64]) -> Result<Self> {
        let matrices = coefficients.iter().map(|&a| DMatrix::from_element(1, 1, a)).collect();
        Self::new(matrices, delays.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn num_delays(&self) -> usize {
        self.delays.len()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn max_delay(&self) -> f64 {
        *self.delays.last().expect("validated non-empty")
    }

    pub fn min_delay(&self) -> f64 {
        self.delays[0]
    }
}

/// One component `a sin(omega t + phase) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub omega: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub offset: f64,
}

impl Sinusoid {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t + self.phase).sin() + self.offset
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.amplitude * self.omega * (self.omega * t + self.phase).cos()
    }

    /// Exact `max |f|` over `[a, b]` from endpoints and interior critical points.
    pub fn sup_abs(&self, a: f64, b: f64) -> f64 {
        let mut best = self.eval(a).abs().max(self.eval(b).abs());
        if self.omega != 0.0 && self.amplitude != 0.0 {
            let (lo, hi) = if self.omega > 0.0 {
                (self.omega * a + self.phase, self.omega * b + self.phase)
            } else {
                (self.omega * b + self.phase, self.omega * a + self.phase)
            };
            let pi = std::f64::consts::PI;
            let first = ((lo - pi / 2.0) / pi).ceil();
            let last = ((hi - pi / 2.0) / pi).floor();
            if first <= last {
                // Both a crest and a trough are interior once two critical points fit.
                let parity_first = (first as i64).rem_euclid(2);
                let crest = self.offset + self.amplitude * if parity_first == 0 { 1.0 } else { -1.0 };
                best = best.max(crest.abs());
                if last > first {
                    let other = self.offset - self.amplitude * if parity_first == 0 { 1.0 } else { -1.0 };
                    best = best.max(other.abs());
                }
            }
        }
        best
    }
}

/// Bounded initial function on `[-r_N, 0[`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialFunction {
    Constant { value: Vec<f64> },
    Sinusoid { components: Vec<Sinusoid> },
    /// Per component, coefficients `c_0 + c_1 t + c_2 t^2 + ...`.
    Polynomial { coefficients: Vec<Vec<f64>> },
    /// Knots with linear interpolation; held constant past the last knot.
    Table { times: Vec<f64>, values: Vec<Vec<f64>> },
}

impl InitialFunction {
    pub fn dim(&self) -> usize {
        match self {
            Self::Constant { value } => value.len(),
            Self::Sinusoid { components } => components.len(),
            Self::Polynomial { coefficients } => coefficients.len(),
            Self::Table { values, .. } => values.first().map_or(0, Vec::len),
        }
    }

    /// Check dimension and (for tables) coverage of `[-history, 0[`.
    pub fn validate(&self, n: usize, history: f64) -> Result<()> {
        if self.dim() != n {
            return Err(Error::DimensionMismatch(format!(
                "initial function has dimension {}, system has {n}",
                self.dim()
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Self::Constant { value } if !finite(value) => {
                Err(Error::InvalidInput("non-finite constant initial value".into()))
            }
            Self::Sinusoid { components }
                if components
                    .iter()
                    .any(|c| !finite(&[c.amplitude, c.omega, c.phase, c.offset])) =>
            {
                Err(Error::InvalidInput("non-finite sinusoid parameter".into()))
            }
            Self::Polynomial { coefficients } if coefficients.iter().any(|c| !finite(c)) => {
                Err(Error::InvalidInput("non-finite polynomial coefficient".into()))
            }
            Self::Table { times, values } => {
                if times.len() < 2 || times.len() != values.len() {
                    return Err(Error::InvalidInput(
                        "table needs at least two knots with one value row each".into(),
                    ));
                }
                if values.iter().any(|row| row.len() != n || !finite(row)) || !finite(times) {
                    return Err(Error::InvalidInput("malformed table values".into()));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidInput("table times must be strictly increasing".into()));
                }
                if times[0] > -history + 1e-12 * history.max(1.0) {
                    return Err(Error::InvalidInput(format!(
                        "table starts at {} but must cover [-{history}, 0[",
                        times[0]
                    )));
                }
                if *times.last().unwrap() > 0.0 {
                    return Err(Error::InvalidInput("table knots must lie in [-r_N, 0]".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        match self {
            Self::Constant { value } => out.copy_from_slice(value),
            Self::Sinusoid { components } => {
                for (o, c) in out.iter_mut().zip(components) {
                    *o = c.eval(t);
                }
            }
            Self::Polynomial { coefficients } => {
                for (o, c) in out.iter_mut().zip(coefficients) {
                    *o = c.iter().rev().fold(0.0, |acc, &ci| acc * t + ci);
                }
            }
            Self::Table { times, values } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    out.copy_from_slice(&values[0]);
                } else if t >= times[last] {
                    out.copy_from_slice(&values[last]);
                } else {
                    let hi = times.partition_point(|&s| s <= t).min(last);
                    let lo = hi - 1;
                    let w = (t - times[lo]) / (times[hi] - times[lo]);
                    for (i, o) in out.iter_mut().enumerate() {
                        *o = (1.0 - w) * values[lo][i] + w * values[hi][i];
                    }
                }
            }
        }
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval_into(t, out.as_mut_slice());
        out
    }

    /// `sup ||phi(theta)||` over `theta in [-history, 0]`.
    ///
    /// Exact for constants, scalar sinusoids and tables (the norm of a
    /// piecewise-linear path peaks at a knot or an end point); otherwise a
    /// dense scan refined by golden-section search.
    pub fn sup_norm(&self, history: f64) -> f64 {
        let a = -history;
        match self {
            Self::Constant { value } => value.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Self::Sinusoid { components } if components.len() == 1 => components[0].sup_abs(a, 0.0),
            Self::Table { times, .. } => {
                let norm_at = |t: f64| self.eval(t).norm();
                let mut best = norm_at(a).max(norm_at(0.0));
                for &t in times.iter().filter(|&&t| t > a && t < 0.0) {
                    best = best.max(norm_at(t));
                }
                best
            }
            _ => maximize_on_interval(|t| self.eval(t).norm(), a, 0.0),
        }
    }
}

fn maximize_on_interval(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const SAMPLES: usize = 8192;
    let step = (b - a) / SAMPLES as f64;
    let values: Vec<f64> = (0..=SAMPLES).map(|i| f(a + step * i as f64)).collect();
    let mut best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Refine around every sampled local peak.
    for i in 0..=SAMPLES {
        let left = if i > 0 { values[i - 1] } else { f64::NEG_INFINITY };
        let right = if i < SAMPLES { values[i + 1] } else { f64::NEG_INFINITY };
        if values[i] >= left && values[i] >= right {
            let lo = a + step * (i.max(1) - 1) as f64;
            let hi = (a + step * (i + 1) as f64).min(b);
            best = best.max(golden_max(&f, lo, hi));
        }
    }
    best
}

fn golden_max(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
    }
    f1.max(f2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommensurabilityResult {
    pub commensurate: bool,
    pub base: Option<f64>,
    pub multipliers: Vec<u64>,
}

/// Largest admissible continued-fraction denominator.
pub const MAX_DENOMINATOR: u64 = 1_000_000;

/// Decide whether every delay is an integer multiple of a common base.
///
/// Each ratio `r_k / r_1` is reduced to its first continued-fraction
/// convergent `p/q` with `|r_k - (p/q) r_1| <= tol * r_N`. Any real number
/// has convergents within `1/q^2`, so a match only counts when
/// `q <= 0.1 / sqrt(tol_rel)`; otherwise every irrational ratio would pass
/// at a large enough denominator.
pub fn commensurability(system: &DelaySystem, tol: f64) -> CommensurabilityResult {
    let delays = system.delays();
    let r1 = delays[0];
    let abs_tol = tol * system.max_delay();
    let rel_tol = abs_tol / r1;
    let cap = ((0.1 / rel_tol.sqrt()).floor() as u64).clamp(1, MAX_DENOMINATOR);

    let mut fractions = Vec::with_capacity(delays.len());
    for &r in delays {
        match best_convergent(r / r1, rel_tol, cap) {
            Some(f) => fractions.push(f),
            None => return not_commensurate(),
        }
    }
    let lcm = fractions.iter().fold(1u64, |acc, &(_, q)| lcm(acc, q));
    if lcm > MAX_DENOMINATOR {
        return not_commensurate();
    }
    let base = r1 / lcm as f64;
    let multipliers: Vec<u64> = fractions.iter().map(|&(p, q)| p * (lcm / q)).collect();
    let consistent = delays
        .iter()
        .zip(&multipliers)
        .all(|(&r, &m)| (r - m as f64 * base).abs() <= abs_tol)
        && multipliers.windows(2).all(|w| w[0] < w[1]);
    if !consistent {
        return not_commensurate();
    }
    CommensurabilityResult {
        commensurate: true,
        base: Some(base),
        multipliers,
    }
}

fn not_commensurate() -> CommensurabilityResult {
    CommensurabilityResult {
        commensurate: false,
        base: None,
        multipliers: Vec::new(),
    }
}

fn best_convergent(x: f64, tol: f64, max_den: u64) -> Option<(u64, u64)> {
    let (mut p_prev, mut p) = (1u64, x.floor() as u64);
    let (mut q_prev, mut q) = (0u64, 1u64);
    let mut frac = x - x.floor();
    loop {
        if (x - p as f64 / q as f64).abs() <= tol {
            return Some((p, q));
        }
        if frac < 1e-15 {
            return None;
        }
        let inv = 1.0 / frac;
        let a = inv.floor();
        frac = inv - a;
        let a = a as u64;
        let p_next = a.checked_mul(p)?.checked_add(p_prev)?;
        let q_next = a.checked_mul(q)?.checked_add(q_prev)?;
        if q_next > max_den {
            return None;
        }
        (p_prev, p, q_prev, q) = (p, p_next, q, q_next);
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Block-companion single-delay realization of a commensurate system.
///
/// The stacked state `X(t) = [x(t); x(t-r); ...; x(t-(m_N-1) r)]` obeys
/// `X(t) = A X(t - r)` where the first block row of `A` holds `A_k` at block
/// column `m_k` and identities sit on the block sub-diagonal.
pub fn lift_commensurate(system: &DelaySystem, comm: &CommensurabilityResult) -> Result<DelaySystem> {
    let base = match (comm.commensurate, comm.base) {
        (true, Some(b)) if comm.multipliers.len() == system.num_delays() => b,
        _ => return Err(Error::NotCommensurate),
    };
    let n = system.dim();
    let depth = *comm.multipliers.last().unwrap() as usize;
    let mut lifted = DMatrix::zeros(n * depth, n * depth);
    for (a, &m) in system.matrices().iter().zip(&comm.multipliers) {
        let col = (m as usize - 1) * n;
        lifted.view_mut((0, col), (n, n)).copy_from(a);
    }
    for block in 1..depth {
        lifted
            .view_mut((block * n, (block - 1) * n), (n, n))
            .fill_with_identity();
    }
    DelaySystem::new(vec![lifted], vec![base])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn minimal_system_is_valid() {
        let s = DelaySystem::scalar(&[0.5], &[1.0]).unwrap();
        assert_eq!((s.dim(), s.num_delays()), (1, 1));
    }

    #[test]
    fn rejects_decreasing_delays() {
        let err = DelaySystem::scalar(&[0.5, 0.2], &[2.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NonIncreasingDelays { index: 2, .. }));
    }

    #[test]
    fn rejects_bad_shapes_and_delays() {
        assert_eq!(DelaySystem::new(vec![], vec![]).unwrap_err(), Error::EmptySystem);
        assert!(matches!(
            DelaySystem::scalar(&[0.5], &[0.0]).unwrap_err(),
            Error::NonPositiveDelay { .. }
        ));
        let err = DelaySystem::new(vec![DMatrix::zeros(2, 2), DMatrix::zeros(1, 1)], vec![1.0, 2.0]);
        assert!(matches!(err.unwrap_err(), Error::DimensionMismatch(_)));
    }

    #[test]
    fn three_incommensurate_delays_validate() {
        let pi = std::f64::consts::PI;
        let s = DelaySystem::scalar(&[0.2, -0.05, -0.5], &[1.0, 2f64.sqrt(), 2.0 * pi]).unwrap();
        assert_eq!(s.num_delays(), 3);
    }

    #[test]
    fn integer_delays_are_commensurate() {
        let s = DelaySystem::scalar(&[0.75, -0.75], &[1.0, 2.0]).unwrap();
        let c = commensurability(&s, 1e-9);
        assert!(c.commensurate);
        assert_eq!(c.base, Some(1.0));
        assert_eq!(c.multipliers, vec![1, 2]);
    }

    #[test]
    fn root_two_is_not_commensurate() {
        let s = DelaySystem::scalar(&[0.1, 0.1], &[1.0, 2f64.sqrt()]).unwrap();
        assert!(!commensurability(&s, 1e-9).commensurate);
        let golden = DelaySystem::scalar(&[0.1, 0.1], &[1.0, (1.0 + 5f64.sqrt()) / 2.0]).unwrap();
        assert!(!commensurability(&golden, 1e-9).commensurate);
    }

    #[test]
    fn decimal_delays_find_common_base() {
        // 0.6 / 0.3 and 1.5 / 0.3 are the integers 2 and 5.
        let s = DelaySystem::scalar(&[0.1, 0.1, 0.1], &[0.3, 0.6, 1.5]).unwrap();
        let c = commensurability(&s, 1e-9);
        assert!(c.commensurate);
        assert_relative_eq!(c.base.unwrap(), 0.3, epsilon = 1e-15);
        assert_eq!(c.multipliers, vec![1, 2, 5]);
    }

    #[test]
    fn lift_two_delay_scalar_example() {
        let s = DelaySystem::scalar(&[0.75, -0.75], &[1.0, 2.0]).unwrap();
        let lifted = lift_commensurate(&s, &commensurability(&s, 1e-9)).unwrap();
        assert_eq!(lifted.matrices()[0], dmatrix![0.75, -0.75; 1.0, 0.0]);
        assert_eq!(lifted.delays(), &[1.0]);
    }

    #[test]
    fn lifting_single_delay_is_identity() {
        let s = DelaySystem::new(vec![dmatrix![0.5, -0.3; 0.35, 0.0]], vec![3.0]).unwrap();
        let lifted = lift_commensurate(&s, &commensurability(&s, 1e-9)).unwrap();
        assert_eq!(lifted, s);
    }

    #[test]
    fn lifting_requires_commensurate_verdict() {
        let s = DelaySystem::scalar(&[0.1, 0.1], &[1.0, 2f64.sqrt()]).unwrap();
        let c = commensurability(&s, 1e-9);
        assert_eq!(lift_commensurate(&s, &c).unwrap_err(), Error::NotCommensurate);
    }

    #[test]
    fn scalar_sinusoid_sup_is_exact() {
        // 2 sin t + 1 on [-2 pi, 0] peaks at 3.
        let s = Sinusoid {
            amplitude: 2.0,
            omega: 1.0,
            phase: 0.0,
            offset: 1.0,
        };
        assert_relative_eq!(s.sup_abs(-2.0 * std::f64::consts::PI, 0.0), 3.0, epsilon = 1e-15);
        // On [-0.5, 0] no critical point: max at the endpoint t = 0.
        assert_relative_eq!(s.sup_abs(-0.5, 0.0), 1.0, epsilon = 1e-15);
        // On [-2, -1] the trough at -pi/2 is interior.
        assert_relative_eq!(s.sup_abs(-2.0, -1.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn vector_sinusoid_sup_norm() {
        let phi = InitialFunction::Sinusoid {
            components: vec![
                Sinusoid { amplitude: 1.0, omega: 3.0, phase: 0.0, offset: 0.0 },
                Sinusoid { amplitude: 1.0, omega: 3.0, phase: std::f64::consts::FRAC_PI_2, offset: 0.0 },
            ],
        };
        assert_relative_eq!(phi.sup_norm(std::f64::consts::PI), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn table_interpolates_and_holds() {
        let phi = InitialFunction::Table {
            times: vec![-2.0, -1.0, -0.5],
            values: vec![vec![0.0], vec![2.0], vec![1.0]],
        };
        phi.validate(1, 2.0).unwrap();
        assert_relative_eq!(phi.eval(-1.5)[0], 1.0);
        assert_relative_eq!(phi.eval(-0.1)[0], 1.0);
        assert_relative_eq!(phi.sup_norm(2.0), 2.0);
        assert!(phi.validate(1, 3.0).is_err());
    }

    #[test]
    fn polynomial_sup_norm() {
        // 1 - t^2 on [-2, 0]: |.| peaks at t = -2 with value 3.
        let phi = InitialFunction::Polynomial {
            coefficients: vec![vec![1.0, 0.0, -1.0]],
        };
        assert_relative_eq!(phi.sup_norm(2.0), 3.0, epsilon = 1e-12);
    }
}
