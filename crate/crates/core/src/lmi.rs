//! Alternating projections for small linear matrix inequalities.
//!
//! Each constraint has the form `F0_j + sum_i p_i G_ij >= target I`. One
//! iteration clips every constraint matrix onto the shifted PSD cone and then
//! projects the pair `(p, Z)` back onto the affine graph
//! `Z_j = F0_j + L_j p` in the joint Euclidean metric.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{clip_eigenvalues, lambda_min};

#[derive(Debug, Clone)]
pub struct Constraint {
    pub offset: DMatrix<f64>,
    pub generators: Vec<DMatrix<f64>>,
}

impl Constraint {
    pub fn eval(&self, p: &[f64]) -> DMatrix<f64> {
        let mut s = self.offset.clone();
        for (g, &c) in self.generators.iter().zip(p) {
            if c != 0.0 {
                s += g * c;
            }
        }
        s
    }

    fn adjoint(&self, z: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.generators.len(), self.generators.iter().map(|g| g.dot(z)))
    }
}

#[derive(Debug, Clone)]
pub struct LmiProblem {
    dim: usize,
    constraints: Vec<Constraint>,
    normal: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApOutcome {
    /// First iterate accepted by the caller's test.
    pub solution: Option<Vec<f64>>,
    pub iterations: usize,
    /// Largest `min_j lambda_min(S_j(p))` seen, scaled by `1 / max(1, |p|)`.
    pub best_margin: f64,
}

impl LmiProblem {
    pub fn new(dim: usize, constraints: Vec<Constraint>) -> Result<Self> {
        if constraints.iter().any(|c| c.generators.len() != dim) {
            return Err(Error::DimensionMismatch("generator count differs from variable count".into()));
        }
        let mut normal = DMatrix::<f64>::identity(dim, dim);
        for c in &constraints {
            for a in 0..dim {
                for b in a..dim {
                    let v = c.generators[a].dot(&c.generators[b]);
                    normal[(a, b)] += v;
                    if a != b {
                        normal[(b, a)] += v;
                    }
                }
            }
        }
        let normal = normal.cholesky().ok_or(Error::SingularSystem)?;
        Ok(Self { dim, constraints, normal })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// `min_j lambda_min(S_j(p))`.
    pub fn margin(&self, p: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| lambda_min(&c.eval(p)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Iterate from `start` until `accept` returns true or `max_iters` runs out.
    pub fn solve(
        &self,
        start: &[f64],
        target: f64,
        max_iters: usize,
        mut accept: impl FnMut(&[f64]) -> bool,
    ) -> ApOutcome {
        let mut p = DVector::from_column_slice(start);
        let mut best_margin = f64::NEG_INFINITY;
        for iteration in 0..=max_iters {
            let slice = p.as_slice();
            let scale = p.norm().max(1.0);
            let values: Vec<DMatrix<f64>> = self.constraints.iter().map(|c| c.eval(slice)).collect();
            let margin = values.iter().map(lambda_min).fold(f64::INFINITY, f64::min);
            best_margin = best_margin.max(margin / scale);
            if margin.is_finite() && accept(slice) {
                return ApOutcome { solution: Some(slice.to_vec()), iterations: iteration, best_margin };
            }
            if iteration == max_iters {
                break;
            }
            let mut rhs = p.clone();
            for (c, s) in self.constraints.iter().zip(&values) {
                let z = clip_eigenvalues(s, target);
                rhs += c.adjoint(&(z - &c.offset));
            }
            p = self.normal.solve(&rhs);
            if p.iter().any(|v| !v.is_finite()) {
                break;
            }
        }
        ApOutcome { solution: None, iterations: max_iters, best_margin }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn finds_point_in_feasible_interval() {
        // p >= 1 and 3 - p >= 1 in 1x1 blocks.
        let lower = Constraint { offset: dmatrix![0.0], generators: vec![dmatrix![1.0]] };
        let upper = Constraint { offset: dmatrix![3.0], generators: vec![dmatrix![-1.0]] };
        let problem = LmiProblem::new(1, vec![lower, upper]).unwrap();
        let out = problem.solve(&[-5.0], 1.0, 200, |p| p[0] >= 1.0 - 1e-9 && p[0] <= 2.0 + 1e-9);
        let p = out.solution.unwrap();
        assert!(p[0] >= 1.0 - 1e-9 && p[0] <= 2.0 + 1e-9);
    }

    #[test]
    fn reports_failure_on_infeasible_problem() {
        let lower = Constraint { offset: dmatrix![0.0], generators: vec![dmatrix![1.0]] };
        let upper = Constraint { offset: dmatrix![-1.0], generators: vec![dmatrix![-1.0]] };
        let problem = LmiProblem::new(1, vec![lower, upper]).unwrap();
        let out = problem.solve(&[0.0], 0.1, 100, |p| problem.margin(p) >= 0.0);
        assert!(out.solution.is_none());
        assert!(out.best_margin < 0.0);
    }
}
