//! Finite-difference collocation for the E-L boundary value problem.
//!
//! On a uniform grid with step τ the interior equations are
//!
//! ```text
//! R_i = z_{i+1} − 2 z_i + z_{i−1} − τ² g(z_i, (z_{i+1} − z_{i−1}) / 2τ) = 0
//! ```
//!
//! i.e. the stencil residual multiplied through by τ². Newton's Jacobian is
//! block tridiagonal and is solved by block elimination.

use nalgebra::{DMatrix, DVector};

use crate::action::{rhs_partials, ElResidualSpec};
use crate::error::{check_dim, invalid, Error, Result};
use crate::model::{BoundaryConditions, PathSample};

#[derive(Debug, Clone)]
pub struct CollocationProblem {
    pub spec: ElResidualSpec,
    pub bc: BoundaryConditions,
    /// Total node count, endpoints included.
    pub n: usize,
    /// Max-norm tolerance on the τ²-scaled residual.
    pub tol: f64,
    pub max_newton_iters: usize,
    /// Number of drift scalings `s = 1/k, 2/k, …, 1` solved in sequence;
    /// 0 solves the target problem directly.
    pub continuation_steps: usize,
}

impl CollocationProblem {
    pub fn new(spec: ElResidualSpec, bc: BoundaryConditions, n: usize) -> Result<Self> {
        let continuation_steps = if bc.t_final >= 7.0 { 5 } else { 0 };
        let p = Self { spec, bc, n, tol: 1e-10, max_newton_iters: 50, continuation_steps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.bc.validate()?;
        check_dim(self.spec.dim(), self.bc.dim())?;
        if self.n < 3 {
            return invalid("collocation needs at least 3 nodes");
        }
        if !(self.tol > 0.0) {
            return invalid("tolerance must be positive");
        }
        Ok(())
    }

    fn tau(&self) -> f64 {
        self.bc.t_final / (self.n - 1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct CollocationSolution {
    pub path: PathSample,
    /// Max-norm of the τ²-scaled residual at the returned path.
    pub max_residual: f64,
    pub newton_iterations: usize,
}

struct Linearization {
    res: Vec<f64>,
    // per interior node: lower, diagonal, upper d×d blocks
    lower: Vec<DMatrix<f64>>,
    diag: Vec<DMatrix<f64>>,
    upper: Vec<DMatrix<f64>>,
}

fn residual(p: &CollocationProblem, z: &[f64], scale: f64) -> Vec<f64> {
    let d = p.spec.dim();
    let tau = p.tau();
    let mut out = vec![0.0; (p.n - 2) * d];
    let mut zd = vec![0.0; d];
    for i in 1..p.n - 1 {
        for k in 0..d {
            zd[k] = (z[(i + 1) * d + k] - z[(i - 1) * d + k]) / (2.0 * tau);
        }
        let g = crate::action::el_rhs_scaled(
            p.spec.model.kind(),
            p.spec.model.params(),
            &p.spec.noise,
            &z[i * d..(i + 1) * d],
            &zd,
            scale,
        );
        for k in 0..d {
            out[(i - 1) * d + k] =
                z[(i + 1) * d + k] - 2.0 * z[i * d + k] + z[(i - 1) * d + k] - tau * tau * g[k];
        }
    }
    out
}

fn linearize(p: &CollocationProblem, z: &[f64], scale: f64) -> Linearization {
    let d = p.spec.dim();
    let tau = p.tau();
    let m = p.n - 2;
    let res = residual(p, z, scale);
    let mut lower = Vec::with_capacity(m);
    let mut diag = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    let mut zd = vec![0.0; d];
    for i in 1..p.n - 1 {
        for k in 0..d {
            zd[k] = (z[(i + 1) * d + k] - z[(i - 1) * d + k]) / (2.0 * tau);
        }
        let part = rhs_partials(
            p.spec.model.kind(),
            p.spec.model.params(),
            &p.spec.noise,
            &z[i * d..(i + 1) * d],
            &zd,
            scale,
            false,
        );
        let gz = DMatrix::from_row_slice(d, d, &part.dz);
        let gzd = DMatrix::from_row_slice(d, d, &part.dzd);
        let eye = DMatrix::<f64>::identity(d, d);
        lower.push(&eye + &gzd * (0.5 * tau));
        diag.push(&eye * -2.0 - gz * (tau * tau));
        upper.push(&eye - gzd * (0.5 * tau));
    }
    Linearization { res, lower, diag, upper }
}

/// Solves `J δ = −R` for the block-tridiagonal Jacobian.
fn block_solve(lin: &Linearization, d: usize) -> Option<Vec<f64>> {
    let m = lin.diag.len();
    let mut c_prime: Vec<DMatrix<f64>> = Vec::with_capacity(m);
    let mut d_prime: Vec<DVector<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let rhs = -DVector::from_column_slice(&lin.res[i * d..(i + 1) * d]);
        let (piv, rhs) = if i == 0 {
            (lin.diag[0].clone(), rhs)
        } else {
            (&lin.diag[i] - &lin.lower[i] * &c_prime[i - 1], rhs - &lin.lower[i] * &d_prime[i - 1])
        };
        let lu = piv.lu();
        c_prime.push(lu.solve(&lin.upper[i])?);
        d_prime.push(lu.solve(&rhs)?);
    }
    let mut x = vec![DVector::<f64>::zeros(d); m];
    x[m - 1] = d_prime[m - 1].clone();
    for i in (0..m - 1).rev() {
        x[i] = &d_prime[i] - &c_prime[i] * &x[i + 1];
    }
    Some(x.iter().flat_map(|v| v.iter().copied()).collect())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Damped Newton at one drift scaling; returns (iterations, max residual).
fn newton(p: &CollocationProblem, z: &mut [f64], scale: f64) -> (usize, f64, bool) {
    let d = p.spec.dim();
    let m = p.n - 2;
    let mut res_max = max_abs(&residual(p, z, scale));
    for it in 0..p.max_newton_iters {
        if res_max <= p.tol {
            return (it, res_max, true);
        }
        let lin = linearize(p, z, scale);
        let Some(step) = block_solve(&lin, d) else {
            return (it, res_max, false);
        };
        let r0 = sq_norm(&lin.res);
        let mut lambda = 1.0;
        let mut accepted = false;
        let mut trial = z.to_vec();
        for _ in 0..=30 {
            for j in 0..m * d {
                trial[d + j] = z[d + j] + lambda * step[j];
            }
            let r = residual(p, &trial, scale);
            if sq_norm(&r) < r0 {
                z.copy_from_slice(&trial);
                res_max = max_abs(&r);
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return (it, res_max, res_max <= p.tol);
        }
    }
    (p.max_newton_iters, res_max, res_max <= p.tol)
}

/// Solves the E-L boundary value problem by collocation and damped Newton.
///
/// `init` must live on the problem's uniform grid; the default is the
/// straight line between the boundary states. The solution found is the one
/// in the basin of the initial guess.
pub fn solve_el_collocation(p: &CollocationProblem, init: Option<&PathSample>) -> Result<CollocationSolution> {
    p.validate()?;
    let d = p.spec.dim();
    let times = PathSample::uniform_times(p.bc.t_final, p.n);
    let mut z = match init {
        None => PathSample::straight_line(&p.bc, p.n)?.states().to_vec(),
        Some(path) => {
            check_dim(d, path.dim())?;
            check_dim(p.n, path.len())?;
            let tol = 1e-9 * p.bc.t_final;
            if path.times().iter().zip(&times).any(|(a, b)| (a - b).abs() > tol) {
                return invalid("initial path is not on the collocation grid");
            }
            path.states().to_vec()
        }
    };
    z[..d].copy_from_slice(&p.bc.x0);
    z[(p.n - 1) * d..].copy_from_slice(&p.bc.xt);

    let scales: Vec<f64> = if p.continuation_steps == 0 {
        vec![1.0]
    } else {
        (1..=p.continuation_steps).map(|j| j as f64 / p.continuation_steps as f64).collect()
    };
    let mut total = 0;
    for &s in &scales {
        let (iters, res, ok) = newton(p, &mut z, s);
        total += iters;
        if !ok {
            let best = PathSample::new(times, z, d)?;
            return Err(Error::Stagnation { iterations: total, residual: res, best: Box::new(best) });
        }
    }
    let max_residual = max_abs(&residual(p, &z, 1.0));
    Ok(CollocationSolution { path: PathSample::new(times, z, d)?, max_residual, newton_iterations: total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::fw_energy;
    use crate::model::{DriftModel, NoiseSpec};

    fn fw_problem(model: DriftModel, x0: Vec<f64>, xt: Vec<f64>, t: f64, n: usize) -> CollocationProblem {
        let d = model.dim();
        let spec = ElResidualSpec::new(model, NoiseSpec::fw(d)).unwrap();
        CollocationProblem::new(spec, BoundaryConditions::new(x0, xt, t).unwrap(), n).unwrap()
    }

    #[test]
    fn zero_drift_is_the_straight_line() {
        let p = fw_problem(DriftModel::zero(2), vec![-1.0, 0.5], vec![1.0, 2.0], 2.0, 41);
        let sol = solve_el_collocation(&p, None).unwrap();
        let line = PathSample::straight_line(&p.bc, 41).unwrap();
        let (linf, _) = sol.path.distance(&line).unwrap();
        assert!(linf < 1e-14);
    }

    #[test]
    fn linear_decay_matches_sinh() {
        let p = fw_problem(DriftModel::linear_decay(1.0, 1), vec![0.0], vec![1.0], 1.0, 2001);
        let sol = solve_el_collocation(&p, None).unwrap();
        assert!(sol.max_residual <= 1e-10);
        let mid = sol.path.state(1000)[0];
        assert!((mid - 0.5f64.sinh() / 1f64.sinh()).abs() < 1e-5);
        assert!((mid - 0.443409).abs() < 1e-5);
    }

    #[test]
    fn double_well_solution_is_antisymmetric() {
        let p = fw_problem(DriftModel::double_well(1.0, -1.0), vec![-1.0], vec![1.0], 5.0, 2001);
        let sol = solve_el_collocation(&p, None).unwrap();
        let z = sol.path.component(0);
        let asym = (0..z.len()).map(|i| (z[i] + z[z.len() - 1 - i]).abs()).fold(0.0, f64::max);
        assert!(asym <= 1e-6, "asymmetry {asym}");
    }

    #[test]
    fn energy_is_flat_on_the_double_well_oracle() {
        let m = DriftModel::double_well(1.0, -1.0);
        let p = fw_problem(m.clone(), vec![-1.0], vec![1.0], 5.0, 2001);
        let sol = solve_el_collocation(&p, None).unwrap();
        let v = crate::action::path_velocity(&sol.path).unwrap();
        let e: Vec<f64> = (0..sol.path.len()).map(|i| fw_energy(&m, sol.path.state(i), &v[i..i + 1]).unwrap()).collect();
        let spread = e.iter().cloned().fold(f64::MIN, f64::max) - e.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread <= 1e-5, "energy spread {spread}");
    }

    #[test]
    fn stagnation_reports_best_iterate() {
        let mut p = fw_problem(DriftModel::double_well(1.0, -1.0), vec![-1.0], vec![1.0], 5.0, 201);
        p.max_newton_iters = 1;
        match solve_el_collocation(&p, None) {
            Err(Error::Stagnation { best, .. }) => assert_eq!(best.len(), 201),
            other => panic!("expected stagnation, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_problems_and_grids() {
        let p = fw_problem(DriftModel::zero(1), vec![0.0], vec![1.0], 1.0, 11);
        let off = PathSample::straight_line(&p.bc, 12).unwrap();
        assert!(solve_el_collocation(&p, Some(&off)).is_err());
        let spec = ElResidualSpec::new(DriftModel::zero(1), NoiseSpec::fw(1)).unwrap();
        let bc = BoundaryConditions::new(vec![0.0], vec![1.0], 1.0).unwrap();
        assert!(CollocationProblem::new(spec.clone(), bc.clone(), 2).is_err());
        let bc2 = BoundaryConditions::new(vec![0.0, 0.0], vec![1.0, 1.0], 1.0).unwrap();
        assert!(CollocationProblem::new(spec, bc2, 11).is_err());
    }
}
