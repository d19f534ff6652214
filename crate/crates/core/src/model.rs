//! System definitions shared by every solver: drift fields with analytic
//! derivatives, noise amplitudes, boundary data and sampled paths.
//!
//! The noise of `dX = f(X) dt + ε σ dW` is collapsed to one amplitude per
//! coordinate, `a_k = ε·σ_kk`. Only diagonal diffusion is represented.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{check_dim, invalid, Error, Result};
use crate::scalar::Real;

pub(crate) type Vec4<S> = SmallVec<[S; 4]>;
pub(crate) type Mat4<S> = SmallVec<[S; 16]>;

/// Family of drift fields. Parameters live in [`DriftModel::params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// `f(x) = λ1 x + λ2 x³`
    DoubleWell,
    /// `f(x) = k_f x² / (x² + K_d) − k_d x + R_bas`
    GeneRegulation,
    /// `f = −∇V`, `V = −λ1 x²/2 − λ2 x⁴/4 − λ3 x²y²/2 − λ4 y²/2`
    MaierStein,
    /// `f(x) = −a x` in any dimension
    LinearDecay,
    /// `f ≡ 0` in any dimension
    ZeroDrift,
}

impl DriftKind {
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            DriftKind::DoubleWell => &["lambda1", "lambda2"],
            DriftKind::GeneRegulation => &["k_f", "K_d", "k_d", "R_bas"],
            DriftKind::MaierStein => &["lambda1", "lambda2", "lambda3", "lambda4"],
            DriftKind::LinearDecay => &["a"],
            DriftKind::ZeroDrift => &[],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DriftKind::DoubleWell => "double_well",
            DriftKind::GeneRegulation => "gene_regulation",
            DriftKind::MaierStein => "maier_stein",
            DriftKind::LinearDecay => "linear_decay",
            DriftKind::ZeroDrift => "zero_drift",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "double_well" => DriftKind::DoubleWell,
            "gene_regulation" => DriftKind::GeneRegulation,
            "maier_stein" => DriftKind::MaierStein,
            "linear_decay" => DriftKind::LinearDecay,
            "zero_drift" => DriftKind::ZeroDrift,
            _ => return None,
        })
    }

    pub fn fixed_dim(self) -> Option<usize> {
        match self {
            DriftKind::DoubleWell | DriftKind::GeneRegulation => Some(1),
            DriftKind::MaierStein => Some(2),
            DriftKind::LinearDecay | DriftKind::ZeroDrift => None,
        }
    }
}

/// Drift value with its Jacobian (`jac[k*d + j] = ∂_j f^k`) and the
/// gradient of the divergence (`grad_div[k] = ∂_k ∂_j f^j`).
#[derive(Debug, Clone, PartialEq)]
pub struct DriftEval {
    pub f: Vec<f64>,
    pub jac: Vec<f64>,
    pub grad_div: Vec<f64>,
}

pub(crate) struct DriftTerms<S> {
    pub f: Vec4<S>,
    pub jac: Mat4<S>,
    pub grad_div: Vec4<S>,
}

/// Evaluates a drift family for arbitrary scalar types; `p` are the
/// family parameters, `x` the state.
pub(crate) fn drift_terms<S: Real>(kind: DriftKind, p: &[S], x: &[S]) -> DriftTerms<S> {
    let c = S::cst;
    let d = x.len();
    match kind {
        DriftKind::DoubleWell => {
            let (l1, l2, z) = (p[0], p[1], x[0]);
            let z2 = z * z;
            DriftTerms {
                f: smallvec::smallvec![l1 * z + l2 * z2 * z],
                jac: smallvec::smallvec![l1 + c(3.0) * l2 * z2],
                grad_div: smallvec::smallvec![c(6.0) * l2 * z],
            }
        }
        DriftKind::GeneRegulation => {
            let (kf, kdis, kdeg, rbas, z) = (p[0], p[1], p[2], p[3], x[0]);
            let z2 = z * z;
            let den = z2 + kdis;
            let f = kf * z2 / den - kdeg * z + rbas;
            let df = c(2.0) * kf * kdis * z / (den * den) - kdeg;
            let d2f = c(2.0) * kf * kdis * (kdis - c(3.0) * z2) / (den * den * den);
            DriftTerms {
                f: smallvec::smallvec![f],
                jac: smallvec::smallvec![df],
                grad_div: smallvec::smallvec![d2f],
            }
        }
        DriftKind::MaierStein => {
            let (l1, l2, l3, l4) = (p[0], p[1], p[2], p[3]);
            let (u, v) = (x[0], x[1]);
            let (u2, v2) = (u * u, v * v);
            let f1 = l1 * u + l2 * u2 * u + l3 * u * v2;
            let f2 = l3 * u2 * v + l4 * v;
            let cross = c(2.0) * l3 * u * v;
            DriftTerms {
                f: smallvec::smallvec![f1, f2],
                jac: smallvec::smallvec![l1 + c(3.0) * l2 * u2 + l3 * v2, cross, cross, l3 * u2 + l4],
                grad_div: smallvec::smallvec![c(6.0) * l2 * u + c(2.0) * l3 * u, c(2.0) * l3 * v],
            }
        }
        DriftKind::LinearDecay => {
            let a = p[0];
            let mut jac: Mat4<S> = smallvec::smallvec![c(0.0); d * d];
            for k in 0..d {
                jac[k * d + k] = -a;
            }
            DriftTerms {
                f: x.iter().map(|&xi| -a * xi).collect(),
                jac,
                grad_div: smallvec::smallvec![c(0.0); d],
            }
        }
        DriftKind::ZeroDrift => DriftTerms {
            f: smallvec::smallvec![c(0.0); d],
            jac: smallvec::smallvec![c(0.0); d * d],
            grad_div: smallvec::smallvec![c(0.0); d],
        },
    }
}

/// A drift field from one of the supported families.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftModel {
    kind: DriftKind,
    params: Vec<f64>,
    dim: usize,
}

impl DriftModel {
    pub fn new(kind: DriftKind, params: Vec<f64>, dim: usize) -> Result<Self> {
        let names = kind.param_names();
        check_dim(names.len(), params.len())?;
        if let Some(fixed) = kind.fixed_dim() {
            check_dim(fixed, dim)?;
        }
        if dim == 0 {
            return invalid("drift dimension must be positive");
        }
        if params.iter().any(|p| !p.is_finite()) {
            return invalid("drift parameters must be finite");
        }
        if kind == DriftKind::GeneRegulation && params[1] <= 0.0 {
            return invalid("gene regulation requires K_d > 0");
        }
        Ok(Self { kind, params, dim })
    }

    pub fn double_well(lambda1: f64, lambda2: f64) -> Self {
        Self::new(DriftKind::DoubleWell, vec![lambda1, lambda2], 1).expect("finite parameters")
    }

    pub fn gene_regulation(k_f: f64, k_dis: f64, k_deg: f64, r_bas: f64) -> Result<Self> {
        Self::new(DriftKind::GeneRegulation, vec![k_f, k_dis, k_deg, r_bas], 1)
    }

    pub fn maier_stein(lambda: [f64; 4]) -> Self {
        Self::new(DriftKind::MaierStein, lambda.to_vec(), 2).expect("finite parameters")
    }

    pub fn linear_decay(a: f64, dim: usize) -> Self {
        Self::new(DriftKind::LinearDecay, vec![a], dim).expect("finite parameter")
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(DriftKind::ZeroDrift, vec![], dim).expect("no parameters")
    }

    pub fn kind(&self) -> DriftKind {
        self.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same family and dimension with different parameters.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        Self::new(self.kind, params.to_vec(), self.dim)
    }

    /// Drift, Jacobian and gradient of the divergence at `x`.
    pub fn eval(&self, x: &[f64]) -> Result<DriftEval> {
        check_dim(self.dim, x.len())?;
        let t = drift_terms(self.kind, &self.params, x);
        Ok(DriftEval { f: t.f.to_vec(), jac: t.jac.to_vec(), grad_div: t.grad_div.to_vec() })
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval(x)?.f)
    }

    pub fn divergence(&self, x: &[f64]) -> Result<f64> {
        let e = self.eval(x)?;
        Ok((0..self.dim).map(|k| e.jac[k * self.dim + k]).sum())
    }

    /// Potential `U` with `f = −∇U`, for the gradient families.
    pub fn potential(&self, x: &[f64]) -> Result<Option<f64>> {
        check_dim(self.dim, x.len())?;
        let p = &self.params;
        Ok(match self.kind {
            DriftKind::DoubleWell => {
                let z = x[0];
                Some(-p[0] * z * z / 2.0 - p[1] * z.powi(4) / 4.0)
            }
            DriftKind::GeneRegulation => {
                let z = x[0];
                let s = p[1].sqrt();
                Some(p[0] * s * (z / s).atan() + p[2] / 2.0 * z * z - (p[3] + p[0]) * z)
            }
            DriftKind::MaierStein => {
                let (u, v) = (x[0], x[1]);
                Some(
                    -p[0] / 2.0 * u * u - p[1] / 4.0 * u.powi(4) - p[2] / 2.0 * u * u * v * v
                        - p[3] / 2.0 * v * v,
                )
            }
            DriftKind::LinearDecay => Some(p[0] / 2.0 * x.iter().map(|v| v * v).sum::<f64>()),
            DriftKind::ZeroDrift => Some(0.0),
        })
    }

    /// Parameters keyed by their conventional names.
    pub fn named_params(&self) -> BTreeMap<String, f64> {
        self.kind
            .param_names()
            .iter()
            .zip(&self.params)
            .map(|(n, v)| (n.to_string(), *v))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct DriftModelRepr {
    kind: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
}

impl Serialize for DriftModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let dim = match self.kind.fixed_dim() {
            Some(_) => None,
            None => Some(self.dim),
        };
        DriftModelRepr { kind: self.kind.name().to_string(), params: self.named_params(), dim }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DriftModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = DriftModelRepr::deserialize(d)?;
        let kind = DriftKind::from_name(&repr.kind)
            .ok_or_else(|| D::Error::custom(format!("unknown drift kind `{}`", repr.kind)))?;
        let names = kind.param_names();
        if let Some(extra) = repr.params.keys().find(|k| !names.contains(&k.as_str())) {
            return Err(D::Error::custom(format!("unknown parameter `{extra}` for {}", repr.kind)));
        }
        let params = names
            .iter()
            .map(|n| {
                repr.params
                    .get(*n)
                    .copied()
                    .ok_or_else(|| D::Error::custom(format!("missing parameter `{n}`")))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let dim = kind.fixed_dim().or(repr.dim).unwrap_or(1);
        DriftModel::new(kind, params, dim).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    /// Onsager–Machlup (finite noise, includes the divergence term).
    Om,
    /// Freidlin–Wentzell (small-noise limit).
    Fw,
}

/// Framework selector plus per-coordinate amplitudes `a_k = ε·σ_kk`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub framework: Framework,
    pub amplitudes: Vec<f64>,
}

impl NoiseSpec {
    pub fn new(framework: Framework, amplitudes: Vec<f64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return invalid("noise amplitudes must not be empty");
        }
        if amplitudes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return invalid("noise amplitudes must be positive and finite");
        }
        Ok(Self { framework, amplitudes })
    }

    /// Freidlin–Wentzell with identity diffusion.
    pub fn fw(dim: usize) -> Self {
        Self { framework: Framework::Fw, amplitudes: vec![1.0; dim] }
    }

    /// Onsager–Machlup with the same amplitude on every coordinate.
    pub fn om(amplitude: f64, dim: usize) -> Result<Self> {
        Self::new(Framework::Om, vec![amplitude; dim])
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }
}

/// Fixed endpoints `z(0) = x0`, `z(T) = xT`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub x0: Vec<f64>,
    #[serde(rename = "xT")]
    pub xt: Vec<f64>,
    #[serde(rename = "T")]
    pub t_final: f64,
}

impl BoundaryConditions {
    pub fn new(x0: Vec<f64>, xt: Vec<f64>, t_final: f64) -> Result<Self> {
        let bc = Self { x0, xt, t_final };
        bc.validate()?;
        Ok(bc)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.x0.len(), self.xt.len())?;
        if self.x0.is_empty() {
            return invalid("boundary states must not be empty");
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return invalid("transition time T must be positive");
        }
        if self.x0.iter().chain(&self.xt).any(|v| !v.is_finite()) {
            return invalid("boundary states must be finite");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }
}

/// States on a strictly increasing time grid; `states` is row-major
/// `(N+1) × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    times: Vec<f64>,
    states: Vec<f64>,
    dim: usize,
}

impl PathSample {
    pub fn new(times: Vec<f64>, states: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return invalid("path dimension must be positive");
        }
        if times.is_empty() {
            return invalid("path must contain at least one node");
        }
        check_dim(times.len() * dim, states.len())?;
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("path times must be strictly increasing");
        }
        Ok(Self { times, states, dim })
    }

    pub fn from_rows(times: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return invalid("ragged path rows");
        }
        Self::new(times, rows.concat(), dim)
    }

    /// `n` uniform nodes on `[0, T]`.
    pub fn uniform_times(t_final: f64, n: usize) -> Vec<f64> {
        let h = t_final / (n - 1) as f64;
        (0..n).map(|i| if i + 1 == n { t_final } else { i as f64 * h }).collect()
    }

    /// Straight line from `x0` to `xT` on `n` uniform nodes.
    pub fn straight_line(bc: &BoundaryConditions, n: usize) -> Result<Self> {
        if n < 2 {
            return invalid("a path needs at least two nodes");
        }
        let times = Self::uniform_times(bc.t_final, n);
        let mut states = Vec::with_capacity(n * bc.dim());
        for &t in &times {
            let s = t / bc.t_final;
            states.extend(bc.x0.iter().zip(&bc.xt).map(|(a, b)| a + s * (b - a)));
        }
        Self::new(times, states, bc.dim())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [f64] {
        &mut self.states
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.states.iter().skip(k).step_by(self.dim).copied().collect()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("non-empty path")
    }

    /// Uniform step if the grid is uniform to relative tolerance `rtol`.
    pub fn uniform_step(&self, rtol: f64) -> Option<f64> {
        if self.len() < 2 {
            return None;
        }
        let h = (self.final_time() - self.times[0]) / (self.len() - 1) as f64;
        let ok = self.times.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= rtol * h);
        ok.then_some(h)
    }

    /// Piecewise-linear interpolation at `t` (clamped to the grid).
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let n = self.len();
        if t <= self.times[0] || n == 1 {
            return self.state(0).to_vec();
        }
        if t >= self.final_time() {
            return self.state(n - 1).to_vec();
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        self.state(i).iter().zip(self.state(i + 1)).map(|(a, b)| a + w * (b - a)).collect()
    }

    /// Resamples onto `times` by linear interpolation.
    pub fn resample(&self, times: &[f64]) -> Result<Self> {
        let states = times.iter().flat_map(|&t| self.interpolate(t)).collect();
        Self::new(times.to_vec(), states, self.dim)
    }

    /// L∞ and RMS distance to `other`, evaluated on this path's grid
    /// (`other` is linearly interpolated).
    pub fn distance(&self, other: &Self) -> Result<(f64, f64)> {
        check_dim(self.dim, other.dim)?;
        let mut linf: f64 = 0.0;
        let mut sq = 0.0;
        for (i, &t) in self.times.iter().enumerate() {
            let o = other.interpolate(t);
            for (a, b) in self.state(i).iter().zip(&o) {
                let e = (a - b).abs();
                linf = linf.max(e);
                sq += e * e;
            }
        }
        Ok((linf, (sq / self.states.len() as f64).sqrt()))
    }
}

/// A root of a one-dimensional drift with its stability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub x: f64,
    pub stable: bool,
}

/// All sign-change roots of a 1D drift in `[lo, hi]`, scanned on `n_scan`
/// uniform subintervals and refined by bisection.
pub fn find_equilibria(model: &DriftModel, lo: f64, hi: f64, n_scan: usize) -> Result<Vec<Equilibrium>> {
    if model.dim() != 1 {
        return Err(Error::Unsupported("equilibrium scan is only available for 1D drifts".into()));
    }
    if n_scan < 2 || !(lo < hi) {
        return invalid("need n_scan >= 2 and lo < hi");
    }
    let f = |x: f64| drift_terms(model.kind, &model.params, &[x]).f[0];
    let grid: Vec<f64> = (0..=n_scan).map(|i| lo + (hi - lo) * i as f64 / n_scan as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let mut roots = Vec::new();
    for i in 0..=n_scan {
        if vals[i] == 0.0 {
            roots.push(grid[i]);
        }
        if i < n_scan && vals[i] * vals[i + 1] < 0.0 {
            let (mut a, mut b, mut fa) = (grid[i], grid[i + 1], vals[i]);
            let mut x = 0.5 * (a + b);
            for _ in 0..200 {
                x = 0.5 * (a + b);
                let fx = f(x);
                if fx == 0.0 {
                    break;
                }
                if fa * fx < 0.0 {
                    b = x;
                } else {
                    a = x;
                    fa = fx;
                }
                if b - a <= f64::EPSILON * (1.0 + x.abs()) {
                    break;
                }
            }
            roots.push(x);
        }
    }
    roots.sort_by(|a, b| a.total_cmp(b));
    roots.dedup_by(|b, a| (*b - *a).abs() < 1e-8);
    Ok(roots
        .into_iter()
        .map(|x| {
            let slope = drift_terms(model.kind, &model.params, &[x]).jac[0];
            Equilibrium { x, stable: slope < 0.0 }
        })
        .collect())
}
