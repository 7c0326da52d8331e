//! Damped Gauss–Newton (Levenberg–Marquardt) for small dense problems with
//! analytic Jacobians and box constraints.
//!
//! The damping parameter is multiplied by 10 after a rejected step and
//! divided by 10 after an accepted one. Trial points are projected onto the
//! box before they are evaluated.

use crate::error::{Error, Result};

/// A least-squares objective `0.5 * sum_i r_i(p)^2`.
pub trait Residuals {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, params: &[f64], out: &mut [f64]);
    /// Row-major `n_residuals x n_params` Jacobian of the residuals.
    fn jacobian(&self, params: &[f64], jac: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease of an accepted step falls below this.
    pub ftol: f64,
    /// Stop when the relative step length falls below this.
    pub xtol: f64,
    /// Absolute cost below which the fit counts as exact.
    pub cost_floor: f64,
    pub initial_damping: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            ftol: 1e-15,
            xtol: 1e-13,
            cost_floor: 1e-30,
            initial_damping: 1e-3,
            lower: None,
            upper: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// `0.5 * sum r^2` at `params`.
    pub cost: f64,
    pub rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Unscaled `(J^T J)^{-1}` at the solution, row-major, if it is invertible.
    pub jtj_inverse: Option<Vec<f64>>,
}

impl LmReport {
    /// Parameter covariance estimate `s^2 (J^T J)^{-1}` with `s^2 = 2 cost / (n - p)`.
    pub fn covariance(&self, n_residuals: usize) -> Option<Vec<f64>> {
        let p = self.params.len();
        let dof = n_residuals.saturating_sub(p).max(1) as f64;
        let s2 = 2.0 * self.cost / dof;
        self.jtj_inverse
            .as_ref()
            .map(|m| m.iter().map(|v| v * s2).collect())
    }
}

fn project(p: &mut [f64], opts: &LmOptions) {
    if let Some(lo) = &opts.lower {
        for (x, l) in p.iter_mut().zip(lo) {
            if *x < *l {
                *x = *l;
            }
        }
    }
    if let Some(hi) = &opts.upper {
        for (x, h) in p.iter_mut().zip(hi) {
            if *x > *h {
                *x = *h;
            }
        }
    }
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Minimize from `start`. Returns `Err(FitNotConverged)` carrying the best
/// parameters if the iteration budget runs out first.
pub fn minimize<P: Residuals + ?Sized>(problem: &P, start: &[f64], opts: &LmOptions) -> Result<LmReport> {
    let report = minimize_report(problem, start, opts);
    if report.converged {
        Ok(report)
    } else {
        Err(Error::FitNotConverged {
            iterations: report.iterations,
            rms: report.rms,
            best: report.params,
        })
    }
}

/// Like [`minimize`] but always returns the final state, converged or not.
pub fn minimize_report<P: Residuals + ?Sized>(problem: &P, start: &[f64], opts: &LmOptions) -> LmReport {
    let np = problem.n_params();
    let nr = problem.n_residuals();
    assert_eq!(start.len(), np);

    let mut p = start.to_vec();
    project(&mut p, opts);
    let mut r = vec![0.0; nr];
    let mut jac = vec![0.0; nr * np];
    let mut trial = vec![0.0; np];
    let mut r_trial = vec![0.0; nr];
    problem.residuals(&p, &mut r);
    let mut cost = cost_of(&r);
    let mut lambda = opts.initial_damping;
    let mut converged = cost <= opts.cost_floor;
    let mut iterations = 0;

    let mut jtj = vec![0.0; np * np];
    let mut jtr = vec![0.0; np];
    let mut need_jac = true;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        if need_jac {
            problem.jacobian(&p, &mut jac);
            normal_equations(&jac, &r, nr, np, &mut jtj, &mut jtr);
            need_jac = false;
        }

        let mut a = jtj.clone();
        for i in 0..np {
            let d = jtj[i * np + i];
            a[i * np + i] = d + lambda * d.max(1e-12);
        }
        let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
        let Some(step) = solve_spd(&a, &rhs, np) else {
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
            continue;
        };

        for i in 0..np {
            trial[i] = p[i] + step[i];
        }
        project(&mut trial, opts);
        problem.residuals(&trial, &mut r_trial);
        let trial_cost = cost_of(&r_trial);

        if trial_cost.is_finite() && trial_cost < cost {
            let rel_decrease = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
            let step_norm: f64 = trial.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let p_norm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            p.copy_from_slice(&trial);
            std::mem::swap(&mut r, &mut r_trial);
            cost = trial_cost;
            lambda = (lambda / 10.0).max(1e-15);
            need_jac = true;
            if cost <= opts.cost_floor
                || rel_decrease < opts.ftol
                || step_norm <= opts.xtol * (p_norm + opts.xtol)
            {
                converged = true;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e16 {
                // No descent direction left at any damping: a stationary point.
                converged = true;
            }
        }
    }

    problem.jacobian(&p, &mut jac);
    normal_equations(&jac, &r, nr, np, &mut jtj, &mut jtr);
    let jtj_inverse = invert_spd(&jtj, np);
    LmReport {
        rms: (2.0 * cost / nr.max(1) as f64).sqrt(),
        params: p,
        cost,
        iterations,
        converged,
        jtj_inverse,
    }
}

fn normal_equations(jac: &[f64], r: &[f64], nr: usize, np: usize, jtj: &mut [f64], jtr: &mut [f64]) {
    jtj.fill(0.0);
    jtr.fill(0.0);
    for row in 0..nr {
        let jr = &jac[row * np..(row + 1) * np];
        for i in 0..np {
            jtr[i] += jr[i] * r[row];
            for j in 0..=i {
                jtj[i * np + j] += jr[i] * jr[j];
            }
        }
    }
    for i in 0..np {
        for j in 0..i {
            jtj[j * np + i] = jtj[i * np + j];
        }
    }
}

fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    y
}

/// Solve `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let l = cholesky(a, n)?;
    Some(cholesky_solve(&l, b, n))
}

pub fn invert_spd(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let l = cholesky(a, n)?;
    let mut inv = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for col in 0..n {
        e.fill(0.0);
        e[col] = 1.0;
        let x = cholesky_solve(&l, &e, n);
        for row in 0..n {
            inv[row * n + col] = x[row];
        }
    }
    Some(inv)
}
