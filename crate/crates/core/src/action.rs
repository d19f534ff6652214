//! Action functionals, Euler–Lagrange residuals and the conserved energy of
//! the Freidlin–Wentzell dynamics.
//!
//! With per-coordinate amplitudes `a_k` the Onsager–Machlup equation reads
//!
//! ```text
//! z̈_k = ż_j [∂_j f^k − (a_k²/a_j²) ∂_k f^j] + (a_k²/a_j²) f^j ∂_k f^j + (a_k²/2) ∂_k ∂_j f^j
//! ```
//!
//! and the Freidlin–Wentzell equation is the identity-diffusion form
//!
//! ```text
//! z̈_k = ż_j [∂_j f^k − ∂_k f^j] + f^j ∂_k f^j
//! ```
//!
//! FW amplitudes are ignored. A diagonal non-identity FW problem can be
//! mapped onto the identity form by the change of variables `y_k = z_k / σ_kk`,
//! with drift `g_k(y) = f_k(σ y) / σ_kk`.

use smallvec::SmallVec;

use crate::error::{check_dim, invalid, Result};
use crate::model::{drift_terms, DriftKind, DriftModel, Framework, NoiseSpec, PathSample, Vec4};
use crate::scalar::{Dual, Real};

/// Drift model plus noise model: everything the residual needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ElResidualSpec {
    pub model: DriftModel,
    pub noise: NoiseSpec,
}

/// Right-hand side of the E-L equation for arbitrary scalars.
pub(crate) fn el_rhs<S: Real>(kind: DriftKind, params: &[S], noise: &NoiseSpec, z: &[S], zd: &[S]) -> Vec4<S> {
    el_rhs_scaled(kind, params, noise, z, zd, 1.0)
}

/// Same, for the drift `scale·f` (used by parameter continuation).
pub(crate) fn el_rhs_scaled<S: Real>(
    kind: DriftKind,
    params: &[S],
    noise: &NoiseSpec,
    z: &[S],
    zd: &[S],
    scale: f64,
) -> Vec4<S> {
    let d = z.len();
    let mut t = drift_terms(kind, params, z);
    if scale != 1.0 {
        let s = S::cst(scale);
        t.f.iter_mut().chain(t.jac.iter_mut()).chain(t.grad_div.iter_mut()).for_each(|v| *v = *v * s);
    }
    let a = &noise.amplitudes;
    let mut out: Vec4<S> = SmallVec::with_capacity(d);
    for k in 0..d {
        let mut acc = S::cst(0.0);
        for j in 0..d {
            let ratio = match noise.framework {
                Framework::Fw => 1.0,
                Framework::Om => (a[k] * a[k]) / (a[j] * a[j]),
            };
            let jkj = t.jac[k * d + j];
            let jjk = t.jac[j * d + k];
            acc = acc + zd[j] * (jkj - S::cst(ratio) * jjk) + S::cst(ratio) * t.f[j] * jjk;
        }
        if noise.framework == Framework::Om {
            acc = acc + S::cst(0.5 * a[k] * a[k]) * t.grad_div[k];
        }
        out.push(acc);
    }
    out
}

/// Partial derivatives of the E-L right-hand side at one point.
/// Matrices are row-major with rows indexed by the output coordinate.
#[derive(Debug, Clone)]
pub(crate) struct RhsPartials {
    pub rhs: Vec4<f64>,
    /// `d × d`: ∂RHS_k/∂z_j
    pub dz: SmallVec<[f64; 16]>,
    /// `d × d`: ∂RHS_k/∂ż_j
    pub dzd: SmallVec<[f64; 16]>,
    /// `d × p`: ∂RHS_k/∂β_q (empty unless requested)
    pub dbeta: SmallVec<[f64; 16]>,
}

/// Forward-mode evaluation of the right-hand side and its partials; one
/// dual pass per input direction.
pub(crate) fn rhs_partials(
    kind: DriftKind,
    params: &[f64],
    noise: &NoiseSpec,
    z: &[f64],
    zd: &[f64],
    scale: f64,
    with_beta: bool,
) -> RhsPartials {
    let d = z.len();
    let p = params.len();
    let rhs = el_rhs_scaled(kind, params, noise, z, zd, scale);
    let lift = |v: &[f64], dir: Option<usize>| -> Vec4<Dual> {
        v.iter().enumerate().map(|(i, &x)| Dual::new(x, if Some(i) == dir { 1.0 } else { 0.0 })).collect()
    };
    let pc = lift(params, None);
    let zc = lift(z, None);
    let zdc = lift(zd, None);
    let mut dz: SmallVec<[f64; 16]> = SmallVec::from_elem(0.0, d * d);
    let mut dzd: SmallVec<[f64; 16]> = SmallVec::from_elem(0.0, d * d);
    for j in 0..d {
        let r = el_rhs_scaled(kind, &pc, noise, &lift(z, Some(j)), &zdc, scale);
        for k in 0..d {
            dz[k * d + j] = r[k].d;
        }
        let r = el_rhs_scaled(kind, &pc, noise, &zc, &lift(zd, Some(j)), scale);
        for k in 0..d {
            dzd[k * d + j] = r[k].d;
        }
    }
    let mut dbeta: SmallVec<[f64; 16]> = SmallVec::new();
    if with_beta {
        dbeta.resize(d * p, 0.0);
        for q in 0..p {
            let r = el_rhs_scaled(kind, &lift(params, Some(q)), noise, &zc, &zdc, scale);
            for k in 0..d {
                dbeta[k * p + q] = r[k].d;
            }
        }
    }
    RhsPartials { rhs, dz, dzd, dbeta }
}

impl ElResidualSpec {
    pub fn new(model: DriftModel, noise: NoiseSpec) -> Result<Self> {
        check_dim(model.dim(), noise.dim())?;
        Ok(Self { model, noise })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// `g(z, ż)` such that the E-L equation is `z̈ = g(z, ż)`.
    pub fn rhs(&self, z: &[f64], zd: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), z.len())?;
        check_dim(self.dim(), zd.len())?;
        Ok(el_rhs(self.model.kind(), self.model.params(), &self.noise, z, zd).to_vec())
    }

    /// `z̈ − g(z, ż)`.
    pub fn residual(&self, z: &[f64], zd: &[f64], zdd: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), zdd.len())?;
        let g = self.rhs(z, zd)?;
        Ok(zdd.iter().zip(g).map(|(a, b)| a - b).collect())
    }
}

/// Convenience wrapper matching the operation signature.
pub fn el_residual(spec: &ElResidualSpec, z: &[f64], zd: &[f64], zdd: &[f64]) -> Result<Vec<f64>> {
    spec.residual(z, zd, zdd)
}

/// `E = ½‖ż‖² − ½‖f(z)‖²`, constant along FW (identity diffusion) solutions.
pub fn fw_energy(model: &DriftModel, z: &[f64], zd: &[f64]) -> Result<f64> {
    check_dim(model.dim(), zd.len())?;
    let f = model.drift(z)?;
    let kin: f64 = zd.iter().map(|v| v * v).sum();
    let pot: f64 = f.iter().map(|v| v * v).sum();
    Ok(0.5 * (kin - pot))
}

/// `fw_energy` at every node, with velocities from `path_velocity`.
pub fn fw_energy_profile(path: &PathSample, model: &DriftModel) -> Result<Vec<f64>> {
    check_dim(model.dim(), path.dim())?;
    let d = path.dim();
    let zd = path_velocity(path)?;
    (0..path.len()).map(|i| fw_energy(model, path.state(i), &zd[i * d..(i + 1) * d])).collect()
}

/// First time derivative of a path by second-order three-point stencils
/// (central inside, one-sided at the ends); valid on non-uniform grids.
pub fn path_velocity(path: &PathSample) -> Result<Vec<f64>> {
    let n = path.len();
    if n < 3 {
        return invalid("path derivatives need at least 3 nodes");
    }
    let d = path.dim();
    let t = path.times();
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        // stencil nodes (i0, i1, i2) and the evaluation node
        let (i0, i1, i2) = if i == 0 {
            (0, 1, 2)
        } else if i == n - 1 {
            (n - 3, n - 2, n - 1)
        } else {
            (i - 1, i, i + 1)
        };
        let (t0, t1, t2, x) = (t[i0], t[i1], t[i2], t[i]);
        // derivatives of the Lagrange basis polynomials at x
        let w0 = ((x - t1) + (x - t2)) / ((t0 - t1) * (t0 - t2));
        let w1 = ((x - t0) + (x - t2)) / ((t1 - t0) * (t1 - t2));
        let w2 = ((x - t0) + (x - t1)) / ((t2 - t0) * (t2 - t1));
        for k in 0..d {
            out[i * d + k] = w0 * path.state(i0)[k] + w1 * path.state(i1)[k] + w2 * path.state(i2)[k];
        }
    }
    Ok(out)
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times.windows(2).zip(values.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum()
}

/// `½ ∫ ‖ż − f(z)‖² dt` (identity diffusion).
pub fn fw_action(path: &PathSample, model: &DriftModel) -> Result<f64> {
    check_dim(model.dim(), path.dim())?;
    let d = path.dim();
    let zd = path_velocity(path)?;
    let integrand = (0..path.len())
        .map(|i| {
            let f = model.drift(path.state(i))?;
            Ok((0..d).map(|k| (zd[i * d + k] - f[k]).powi(2)).sum::<f64>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(0.5 * trapezoid(path.times(), &integrand))
}

/// `½ ∫ Σ_k (ż_k − f_k)²/a_k² + ∇·f dt`.
pub fn om_action(path: &PathSample, model: &DriftModel, noise: &NoiseSpec) -> Result<f64> {
    check_dim(model.dim(), path.dim())?;
    check_dim(model.dim(), noise.dim())?;
    let d = path.dim();
    let zd = path_velocity(path)?;
    let integrand = (0..path.len())
        .map(|i| {
            let e = model.eval(path.state(i))?;
            let quad: f64 = (0..d).map(|k| (zd[i * d + k] - e.f[k]).powi(2) / noise.amplitudes[k].powi(2)).sum();
            let div: f64 = (0..d).map(|k| e.jac[k * d + k]).sum();
            Ok(quad + div)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(0.5 * trapezoid(path.times(), &integrand))
}
