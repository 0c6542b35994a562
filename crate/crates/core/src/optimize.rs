//! Damped Gauss-Newton (Levenberg-Marquardt) nonlinear least squares
//! with finite-difference Jacobians and per-parameter scaling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Infinity norm of the scaled gradient below which we stop.
    pub gradient_tolerance: f64,
    /// Scaled step norm below which we stop.
    pub step_tolerance: f64,
    pub lambda_init: f64,
    pub lambda_ceiling: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-12,
            lambda_init: 1e-3,
            lambda_ceiling: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    DampingCeiling,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: DVector<f64>,
    /// Euclidean norm of the residual vector at the solution.
    pub residual_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective value after each accepted step; non-increasing.
    pub accepted_costs: Vec<f64>,
}

impl LmReport {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::GradientTolerance | Termination::StepTolerance
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DifferenceScheme {
    Central,
    Forward,
}

/// Per-parameter finite-difference step: relative 1e-6 with an absolute
/// floor of 1e-9 in native units.
pub fn fd_step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-9)
}

/// Numerical Jacobian of `f` at `x`.
pub fn numerical_jacobian<F>(f: &F, x: &DVector<f64>, scheme: DifferenceScheme) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let r0 = f(x);
    let m = r0.len();
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    for j in 0..n {
        let h = fd_step(x[j]);
        match scheme {
            DifferenceScheme::Central => {
                xp[j] = x[j] + h;
                let rp = f(&xp);
                xp[j] = x[j] - h;
                let rm = f(&xp);
                xp[j] = x[j];
                for i in 0..m {
                    jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
                }
            }
            DifferenceScheme::Forward => {
                xp[j] = x[j] + h;
                let rp = f(&xp);
                xp[j] = x[j];
                for i in 0..m {
                    jac[(i, j)] = (rp[i] - r0[i]) / h;
                }
            }
        }
    }
    jac
}

/// Minimizes `||f(x)||^2` by damped Gauss-Newton with an adaptive
/// damping parameter. `scales` nondimensionalizes the parameters so the
/// normal equations stay well conditioned; pass 1.0 for parameters that
/// are already O(1).
pub fn levenberg_marquardt<F>(
    f: &F,
    x0: DVector<f64>,
    scales: &[f64],
    opts: &LmOptions,
) -> Result<LmReport>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x0.len();
    if scales.len() != n {
        return Err(Error::invalid("scales length must match parameter count"));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { field: "initial parameters" });
    }

    let mut x = x0;
    let mut r = f(&x);
    let mut cost = r.norm_squared();
    let mut lambda = opts.lambda_init;
    let mut accepted_costs = vec![cost];
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    'outer: for iter in 0..opts.max_iterations {
        iterations = iter + 1;
        let jac = numerical_jacobian(f, &x, DifferenceScheme::Central);
        // scaled Jacobian: columns multiplied by the parameter scales
        let mut js = jac.clone();
        for j in 0..n {
            for i in 0..js.nrows() {
                js[(i, j)] *= scales[j];
            }
        }
        let jtj = js.transpose() * &js;
        let g = js.transpose() * &r;
        if g.amax() < opts.gradient_tolerance {
            termination = Termination::GradientTolerance;
            break;
        }

        loop {
            // Marquardt scaling of the damping term, with a floor so
            // flat directions stay solvable.
            let mut a = jtj.clone();
            for j in 0..n {
                let d = jtj[(j, j)].max(1e-12);
                a[(j, j)] += lambda * d;
            }
            let step_s = match a.cholesky() {
                Some(chol) => chol.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    if lambda > opts.lambda_ceiling {
                        termination = Termination::DampingCeiling;
                        break 'outer;
                    }
                    continue;
                }
            };
            let mut x_trial = x.clone();
            for j in 0..n {
                x_trial[j] += step_s[j] * scales[j];
            }
            let r_trial = f(&x_trial);
            let cost_trial = r_trial.norm_squared();
            if cost_trial.is_finite() && cost_trial <= cost {
                let step_norm = step_s.norm();
                let x_norm_scaled = (0..n)
                    .map(|j| (x[j] / scales[j]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                x = x_trial;
                r = r_trial;
                cost = cost_trial;
                accepted_costs.push(cost);
                lambda = (lambda / 3.0).max(1e-14);
                if step_norm < opts.step_tolerance * (x_norm_scaled + opts.step_tolerance) {
                    termination = Termination::StepTolerance;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > opts.lambda_ceiling {
                termination = Termination::DampingCeiling;
                break 'outer;
            }
        }
    }

    Ok(LmReport {
        x,
        residual_norm: cost.sqrt(),
        iterations,
        termination,
        accepted_costs,
    })
}

/// Parameter covariance from the Gauss-Newton approximation,
/// `s^2 (J^T J)^{-1}` with `s^2 = rss / (m - n)`. Returns `None` when
/// the system is rank deficient or has no spare degrees of freedom.
pub fn gauss_newton_covariance(jac: &DMatrix<f64>, rss: f64) -> Option<DMatrix<f64>> {
    let m = jac.nrows();
    let n = jac.ncols();
    if m <= n {
        return None;
    }
    let jtj = jac.transpose() * jac;
    let s2 = rss / (m - n) as f64;
    jtj.try_inverse().map(|inv| inv * s2)
}
