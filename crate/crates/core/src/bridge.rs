//! Approximate Markovian bridges pinned at both ends, simulated by
//! Euler–Maruyama with `dZ = b(t, Z) dt + ε dW`.
//!
//! Short-time (OM) variant, any dimension:
//!
//! ```text
//! b = (xT − Z)/(T − t) − (T − t)/4 · ∇g(Z),   g = ‖f‖² − ε ∇·f
//! ```
//!
//! Small-noise (FW) variant, one dimension:
//!
//! ```text
//! b = (xT − Z)/(T − t) − (T − t)/2 · ∫₀¹ (1 − u) (f²)'(xT u + Z (1 − u)) du
//! ```
//!
//! `g` uses the first power of ε, as written for the short-time bridge.
//! The step that would land on `t = T` is replaced by pinning to `xT`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::model::{BoundaryConditions, DriftModel, PathSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeVariant {
    OmShortTime,
    FwSmallNoise,
}

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub model: DriftModel,
    pub bc: BoundaryConditions,
    pub eps: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    /// Trapezoid nodes on `[0, 1]` for the FW drift integral.
    pub n_quad: usize,
    pub seed: u64,
    pub variant: BridgeVariant,
}

impl BridgeConfig {
    /// Ten paths, 1000 steps, 65 quadrature nodes; ε = 1e-4 for FW and
    /// 0.1 for OM.
    pub fn new(model: DriftModel, bc: BoundaryConditions, variant: BridgeVariant) -> Self {
        let eps = match variant {
            BridgeVariant::FwSmallNoise => 1e-4,
            BridgeVariant::OmShortTime => 0.1,
        };
        Self { model, bc, eps, n_steps: 1000, n_paths: 10, n_quad: 65, seed: 0, variant }
    }

    pub fn validate(&self) -> Result<()> {
        self.bc.validate()?;
        check_dim(self.model.dim(), self.bc.dim())?;
        if self.n_steps < 2 {
            return invalid("bridge needs at least 2 steps");
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return invalid("noise amplitude must be non-negative");
        }
        if self.variant == BridgeVariant::FwSmallNoise {
            if self.model.dim() != 1 {
                return Err(Error::Unsupported("the small-noise bridge is one-dimensional".into()));
            }
            if self.n_quad < 2 {
                return invalid("n_quad must be at least 2");
            }
        }
        Ok(())
    }
}

/// `∇g` for `g = ‖f‖² − ε ∇·f`.
pub fn grad_g(model: &DriftModel, eps: f64, x: &[f64]) -> Result<Vec<f64>> {
    let e = model.eval(x)?;
    let d = x.len();
    Ok((0..d)
        .map(|k| {
            let ff: f64 = (0..d).map(|j| e.f[j] * e.jac[j * d + k]).sum();
            2.0 * ff - eps * e.grad_div[k]
        })
        .collect())
}

/// `∫₀¹ (1 − u) (f²)'(xT u + z (1 − u)) du` by the composite trapezoid rule.
pub fn fw_bridge_integral(model: &DriftModel, z: f64, xt: f64, n_quad: usize) -> Result<f64> {
    if n_quad < 2 {
        return invalid("n_quad must be at least 2");
    }
    let h = 1.0 / (n_quad - 1) as f64;
    let mut acc = 0.0;
    for q in 0..n_quad {
        let u = q as f64 * h;
        let e = model.eval(&[xt * u + z * (1.0 - u)])?;
        let w = if q == 0 || q == n_quad - 1 { 0.5 } else { 1.0 };
        acc += w * (1.0 - u) * 2.0 * e.f[0] * e.jac[0];
    }
    Ok(acc * h)
}

/// Bridge drift `b(t, z)` for `t < T`.
pub fn bridge_drift(cfg: &BridgeConfig, t: f64, z: &[f64]) -> Result<Vec<f64>> {
    let rem = cfg.bc.t_final - t;
    if !(rem > 0.0) {
        return invalid("bridge drift is singular at t = T");
    }
    let xt = &cfg.bc.xt;
    let mut b: Vec<f64> = z.iter().zip(xt).map(|(zi, xi)| (xi - zi) / rem).collect();
    match cfg.variant {
        BridgeVariant::OmShortTime => {
            let g = grad_g(&cfg.model, cfg.eps, z)?;
            b.iter_mut().zip(g).for_each(|(bk, gk)| *bk -= 0.25 * rem * gk);
        }
        BridgeVariant::FwSmallNoise => {
            b[0] -= 0.5 * rem * fw_bridge_integral(&cfg.model, z[0], xt[0], cfg.n_quad)?;
        }
    }
    Ok(b)
}

/// A path that left the finite range; the rest of the ensemble is kept.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeFailure {
    pub path_index: usize,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct BridgeEnsemble {
    pub paths: Vec<PathSample>,
    pub failures: Vec<BridgeFailure>,
}

fn simulate_one(cfg: &BridgeConfig, index: usize) -> Result<std::result::Result<PathSample, BridgeFailure>> {
    let d = cfg.model.dim();
    let n = cfg.n_steps;
    let times = PathSample::uniform_times(cfg.bc.t_final, n + 1);
    let dt = cfg.bc.t_final / n as f64;
    let sdt = cfg.eps * dt.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(index as u64));
    let mut states = Vec::with_capacity((n + 1) * d);
    states.extend_from_slice(&cfg.bc.x0);
    for i in 0..n - 1 {
        let z = &states[i * d..(i + 1) * d];
        let b = bridge_drift(cfg, times[i], z)?;
        let next: Vec<f64> = (0..d)
            .map(|k| {
                let w: f64 = StandardNormal.sample(&mut rng);
                z[k] + b[k] * dt + sdt * w
            })
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Ok(Err(BridgeFailure { path_index: index, step: i + 1 }));
        }
        states.extend(next);
    }
    states.extend_from_slice(&cfg.bc.xt);
    Ok(Ok(PathSample::new(times, states, d)?))
}

/// Simulates `n_paths` bridges; path `i` uses seed `seed + i`.
pub fn simulate_bridge(cfg: &BridgeConfig) -> Result<BridgeEnsemble> {
    cfg.validate()?;
    let mut paths = Vec::with_capacity(cfg.n_paths);
    let mut failures = Vec::new();
    for i in 0..cfg.n_paths {
        match simulate_one(cfg, i)? {
            Ok(p) => paths.push(p),
            Err(f) => failures.push(f),
        }
    }
    Ok(BridgeEnsemble { paths, failures })
}

/// Pointwise mean of paths sharing one grid.
pub fn average_paths(paths: &[PathSample]) -> Result<PathSample> {
    let Some(first) = paths.first() else {
        return invalid("cannot average an empty ensemble");
    };
    let mut acc = vec![0.0; first.states().len()];
    for p in paths {
        check_dim(first.dim(), p.dim())?;
        if p.times() != first.times() {
            return invalid("paths live on different grids");
        }
        acc.iter_mut().zip(p.states()).for_each(|(a, s)| *a += s);
    }
    let n = paths.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    PathSample::new(first.times().to_vec(), acc, first.dim())
}

/// Multiplicative observation noise `z (1 + η ξ)`, iid standard normal ξ
/// per entry (endpoints included).
pub fn perturb_path(path: &PathSample, eta: f64, seed: u64) -> Result<PathSample> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return invalid("η must be non-negative");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = path
        .states()
        .iter()
        .map(|&s| {
            let xi: f64 = StandardNormal.sample(&mut rng);
            s * (1.0 + eta * xi)
        })
        .collect();
    PathSample::new(path.times().to_vec(), states, path.dim())
}
