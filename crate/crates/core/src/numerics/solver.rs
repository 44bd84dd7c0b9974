//! Gauss-Newton with Levenberg-Marquardt fallback for small dense
//! nonlinear least-squares problems.
//!
//! Each iteration first tries the undamped Gauss-Newton step. If that step is
//! singular or does not lower the cost, the damped system
//! `(JᵀJ + λ·diag(JᵀJ)) δ = −Jᵀr` is solved instead, multiplying `λ` by 10 on
//! every rejection and dividing it by 10 after an accepted damped step.
//! Normal equations are assembled and solved in `f64`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Residual model `r: ℝⁿ → ℝᵐ`.
pub trait LeastSquaresProblem {
    fn num_params(&self) -> usize;
    fn num_residuals(&self) -> usize;
    fn residuals(&self, params: &[f64]) -> Vec<f64>;

    /// `m × n` Jacobian. Defaults to central differences.
    fn jacobian(&self, params: &[f64]) -> DMatrix<f64> {
        numeric_jacobian(|p| self.residuals(p), params, self.num_residuals())
    }

    /// Called after every accepted step. Problems with manifold parameters
    /// (rotations) fold the increment into their base point here and reset
    /// the corresponding entries of `params`.
    fn retract(&mut self, _params: &mut [f64]) {}
}

pub fn numeric_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, params: &[f64], m: usize) -> DMatrix<f64> {
    let n = params.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut p = params.to_vec();
    for j in 0..n {
        let h = 1e-6 * params[j].abs().max(1.0);
        p[j] = params[j] + h;
        let rp = f(&p);
        p[j] = params[j] - h;
        let rm = f(&p);
        p[j] = params[j];
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    jac
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Initial Levenberg-Marquardt damping.
    pub damping: f64,
    /// Relative cost-decrease tolerance.
    pub tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iterations: 100, damping: 1e-3, tolerance: 1e-10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// Residual vector is (numerically) zero.
    ZeroResidual,
    /// Gradient `Jᵀr` vanished.
    Stationary,
    /// Relative cost decrease fell below the tolerance.
    Converged,
    /// No damping level produced a decrease.
    NoProgress,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub params: Vec<f64>,
    /// Euclidean norm of the final residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub termination: Termination,
    /// Cost `½‖r‖²` after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

const MAX_DAMPING: f64 = 1e12;

fn cost_of(r: &[f64]) -> Result<f64> {
    let c = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    if !c.is_finite() {
        return Err(Error::NonFinite("residuals".into()));
    }
    Ok(c)
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let x = a.clone().cholesky()?.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub fn gauss_newton<P: LeastSquaresProblem>(problem: &mut P, init: &[f64], opts: &SolverOptions) -> Result<Solution> {
    let n = problem.num_params();
    if init.len() != n {
        return Err(Error::invalid(format!("expected {n} parameters, got {}", init.len())));
    }
    let mut params = init.to_vec();
    let mut r = problem.residuals(&params);
    if r.len() != problem.num_residuals() {
        return Err(Error::invalid(format!(
            "residual function returned {} values, declared {}",
            r.len(),
            problem.num_residuals()
        )));
    }
    let mut cost = cost_of(&r)?;
    let mut history = vec![cost];
    let mut lambda = opts.damping;
    let mut accepted = 0;
    let mut iterations = 0;

    let termination = loop {
        if cost <= f64::MIN_POSITIVE {
            break Termination::ZeroResidual;
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let jac = problem.jacobian(&params);
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &rv;
        let gscale = jtj.diagonal().iter().fold(0.0f64, |m, v| m.max(*v)).max(1.0);
        if grad.amax() <= 1e-15 * gscale.sqrt() * (2.0 * cost).sqrt() {
            break Termination::Stationary;
        }
        let rhs = -&grad;

        let try_step = |delta: &DVector<f64>| -> Option<(Vec<f64>, f64)> {
            let cand: Vec<f64> = params.iter().zip(delta.iter()).map(|(p, d)| p + d).collect();
            let c = cost_of(&problem.residuals(&cand)).ok()?;
            (c < cost).then_some((cand, c))
        };

        let mut step = solve_spd(&jtj, &rhs).and_then(|d| try_step(&d));
        while step.is_none() && lambda <= MAX_DAMPING {
            let mut damped = jtj.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            step = solve_spd(&damped, &rhs).and_then(|d| try_step(&d));
            if step.is_some() {
                lambda = (lambda / 10.0).max(1e-12);
            } else {
                lambda *= 10.0;
            }
        }
        let Some((mut cand, c)) = step else {
            break Termination::NoProgress;
        };

        let rel = (cost - c) / cost;
        problem.retract(&mut cand);
        params = cand;
        r = problem.residuals(&params);
        cost = cost_of(&r)?;
        history.push(cost);
        accepted += 1;
        if rel < opts.tolerance {
            break Termination::Converged;
        }
    };

    Ok(Solution {
        residual_norm: (2.0 * cost).sqrt(),
        params,
        iterations,
        accepted_steps: accepted,
        termination,
        cost_history: history,
    })
}
