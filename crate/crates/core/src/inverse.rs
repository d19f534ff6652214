//! Drift recovery from observed transition paths.
//!
//! The parametric trainer fits a path network `h` and drift parameters β
//! jointly:
//!
//! ```text
//! loss = λ_r/m Σ_j ‖ḧ(t_j) − g(h, ḣ; β)‖² + λ_d/N Σ_i ‖h(t_i) − z_i‖²
//! ```
//!
//! The nonparametric trainer replaces the drift by a network `f_θ` and
//! evaluates the E-L equation on the observations with finite differences:
//!
//! ```text
//! loss = 1/(N−2) Σ_i (z̈_i − g(z_i))² + γ1/N_d Σ_a (f_θ(x_a) − f_a)² + γ2 ‖w‖²
//! ```
//!
//! where in one dimension `g = f f'` (FW) or `g = f f' + a²/2 f''` (OM),
//! with `f'` and `f''` taken from the network's input jets.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::action::el_rhs;
use crate::error::{check_dim, invalid, Error, Result};
use crate::model::{DriftKind, DriftModel, Framework, NoiseSpec, PathSample};
use crate::nn::{loss_grad, AdamState, Jet2, JetAdjoint, JetTrace, MlpParams, Objective};
use crate::pinn::{data_term, default_hidden, network_path, residual_term, sample_residual_points};

/// A point where the drift value is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftAnchor {
    pub x: Vec<f64>,
    pub f: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    times: Vec<f64>,
    states: Vec<f64>,
    dim: usize,
    /// Multiplicative noise level the data were generated with, if known.
    pub eta: Option<f64>,
    pub anchors: Vec<DriftAnchor>,
}

impl ObservationSet {
    pub fn new(times: Vec<f64>, states: Vec<f64>, dim: usize) -> Result<Self> {
        if times.is_empty() {
            return invalid("observation set is empty");
        }
        if times[0] < 0.0 {
            return invalid("observation times must be non-negative");
        }
        // reuse the path checks (monotone times, row count)
        let p = PathSample::new(times, states, dim)?;
        Ok(Self { times: p.times().to_vec(), states: p.states().to_vec(), dim, eta: None, anchors: Vec::new() })
    }

    pub fn from_path(path: &PathSample) -> Result<Self> {
        Self::new(path.times().to_vec(), path.states().to_vec(), path.dim())
    }

    /// `n` nodes of `path` at evenly spaced indices (first and last included).
    pub fn subsample(path: &PathSample, n: usize) -> Result<Self> {
        if n < 2 || n > path.len() {
            return invalid("subsample size must lie in [2, path length]");
        }
        let last = path.len() - 1;
        let idx: Vec<usize> = (0..n).map(|i| (i * last + (n - 1) / 2) / (n - 1)).collect();
        let times = idx.iter().map(|&i| path.times()[i]).collect();
        let states = idx.iter().flat_map(|&i| path.state(i).iter().copied()).collect();
        Self::new(times, states, path.dim())
    }

    pub fn with_anchors(mut self, anchors: Vec<DriftAnchor>) -> Result<Self> {
        for a in &anchors {
            check_dim(self.dim, a.x.len())?;
            check_dim(self.dim, a.f.len())?;
        }
        self.anchors = anchors;
        Ok(self)
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

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_path(&self) -> Result<PathSample> {
        PathSample::new(self.times.clone(), self.states.clone(), self.dim)
    }

    fn uniform_step(&self) -> Result<f64> {
        if self.len() < 3 {
            return invalid("finite-difference residual needs at least 3 observations");
        }
        self.to_path()?.uniform_step(1e-9).ok_or_else(|| Error::InvalidInput("observation grid is not uniform".into()))
    }
}

/// Anything that can supply the E-L right-hand side `g(z, ż)`.
pub trait DriftField {
    fn dim(&self) -> usize;
    fn el_rhs(&self, noise: &NoiseSpec, z: &[f64], zd: &[f64]) -> Result<Vec<f64>>;
}

impl DriftField for DriftModel {
    fn dim(&self) -> usize {
        DriftModel::dim(self)
    }

    fn el_rhs(&self, noise: &NoiseSpec, z: &[f64], zd: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), noise.dim())?;
        check_dim(self.dim(), z.len())?;
        check_dim(self.dim(), zd.len())?;
        Ok(el_rhs(self.kind(), self.params(), noise, z, zd).to_vec())
    }
}

/// Scalar drift represented by a `1 → … → 1` network.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftNet {
    net: MlpParams,
}

impl DriftNet {
    pub fn new(net: MlpParams) -> Result<Self> {
        if net.input_dim() != 1 || net.output_dim() != 1 {
            return Err(Error::Unsupported("drift networks are scalar (1 → 1)".into()));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    /// `(f, f', f'')` at `x`.
    pub fn jet(&self, x: f64) -> Result<Jet2> {
        self.net.jet2(x)
    }

    pub fn drift(&self, x: f64) -> Result<f64> {
        Ok(self.net.forward(&[x])?[0])
    }
}

fn scalar_rhs(noise: &NoiseSpec, f: f64, f1: f64, f2: f64) -> f64 {
    match noise.framework {
        Framework::Fw => f * f1,
        Framework::Om => f * f1 + 0.5 * noise.amplitudes[0].powi(2) * f2,
    }
}

impl DriftField for DriftNet {
    fn dim(&self) -> usize {
        1
    }

    fn el_rhs(&self, noise: &NoiseSpec, z: &[f64], zd: &[f64]) -> Result<Vec<f64>> {
        check_dim(1, noise.dim())?;
        check_dim(1, z.len())?;
        check_dim(1, zd.len())?;
        let j = self.jet(z[0])?;
        Ok(vec![scalar_rhs(noise, j.value[0], j.d1[0], j.d2[0])])
    }
}

/// Stencil residuals `z̈_i − g(z_i, ż_i)` at the interior observations,
/// row-major `(N − 2) × d`.
pub fn fd_el_residual(obs: &ObservationSet, drift: &dyn DriftField, noise: &NoiseSpec) -> Result<Vec<f64>> {
    check_dim(obs.dim(), drift.dim())?;
    let tau = obs.uniform_step()?;
    let d = obs.dim();
    let mut out = Vec::with_capacity((obs.len() - 2) * d);
    for i in 1..obs.len() - 1 {
        let (zm, z, zp) = (obs.state(i - 1), obs.state(i), obs.state(i + 1));
        let zd: Vec<f64> = (0..d).map(|k| (zp[k] - zm[k]) / (2.0 * tau)).collect();
        let g = drift.el_rhs(noise, z, &zd)?;
        out.extend((0..d).map(|k| (zp[k] - 2.0 * z[k] + zm[k]) / (tau * tau) - g[k]));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ParamInverseConfig {
    pub family: DriftKind,
    pub dim: usize,
    pub noise: NoiseSpec,
    pub beta_init: Vec<f64>,
    /// Entries of β updated by the optimizer; the others stay at their
    /// initial value.
    pub trainable: Vec<bool>,
    pub lambda_r: f64,
    pub lambda_d: f64,
    pub iterations: usize,
    pub lr: f64,
    /// Learning rate for β; defaults to `lr`.
    pub beta_lr: Option<f64>,
    pub m: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub record_every: usize,
}

impl ParamInverseConfig {
    pub fn new(family: DriftKind, dim: usize, noise: NoiseSpec, beta_init: Vec<f64>) -> Self {
        let p = beta_init.len();
        Self {
            family,
            dim,
            noise,
            beta_init,
            trainable: vec![true; p],
            lambda_r: 1.0,
            lambda_d: 1.0,
            iterations: 10_000,
            lr: 1e-4,
            beta_lr: None,
            m: if dim == 1 { 1001 } else { 501 },
            seed: 0,
            hidden: default_hidden(family),
            record_every: 10,
        }
    }

    pub fn validate(&self, obs: &ObservationSet) -> Result<()> {
        check_dim(self.family.param_names().len(), self.beta_init.len())?;
        check_dim(self.beta_init.len(), self.trainable.len())?;
        check_dim(self.dim, self.noise.dim())?;
        check_dim(self.dim, obs.dim())?;
        if let Some(d) = self.family.fixed_dim() {
            check_dim(d, self.dim)?;
        }
        if obs.is_empty() {
            return invalid("no observations");
        }
        if !(self.lambda_d > 0.0 && self.lambda_r > 0.0) {
            return invalid("loss weights must be positive");
        }
        if self.m < 1 || self.record_every == 0 {
            return invalid("m and record_every must be positive");
        }
        if obs.times()[obs.len() - 1] <= obs.times()[0] {
            return invalid("observations must span a positive time interval");
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![1];
        dims.extend(&self.hidden);
        dims.push(self.dim);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamLoss {
    pub total: f64,
    pub residual: f64,
    pub data: f64,
}

/// Parametric inverse loss with residual points and observation times as
/// network inputs; the auxiliary vector is the full β.
pub struct ParamObjective<'a> {
    cfg: &'a ParamInverseConfig,
    obs: &'a ObservationSet,
    inputs: Vec<f64>,
    m: usize,
    last: Cell<ParamLoss>,
}

impl<'a> ParamObjective<'a> {
    pub fn new(cfg: &'a ParamInverseConfig, obs: &'a ObservationSet, points: &[f64]) -> Self {
        let mut inputs = points.to_vec();
        inputs.extend(obs.times());
        Self { cfg, obs, inputs, m: points.len(), last: Cell::new(ParamLoss::default()) }
    }

    pub fn components(&self) -> ParamLoss {
        self.last.get()
    }
}

impl Objective for ParamObjective<'_> {
    fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    fn evaluate(&self, trace: &JetTrace, beta: &[f64], adj: &mut JetAdjoint, grad_beta: &mut [f64]) -> f64 {
        let cfg = self.cfg;
        let m = self.m;
        let residual = residual_term(
            cfg.family,
            beta,
            &cfg.noise,
            trace,
            0..m,
            cfg.lambda_r / m as f64,
            adj,
            Some((grad_beta, &cfg.trainable)),
        );
        let n = self.obs.len();
        let data = data_term(trace, m..m + n, self.obs.states(), cfg.dim, cfg.lambda_d / n as f64, adj);
        let total = residual + data;
        self.last.set(ParamLoss { total, residual, data });
        total
    }
}

/// Residual points for the parametric trainer: uniform on the open
/// observation window.
pub fn param_residual_points(cfg: &ParamInverseConfig, obs: &ObservationSet) -> Result<Vec<f64>> {
    let (t0, t1) = (obs.times()[0], obs.times()[obs.len() - 1]);
    Ok(sample_residual_points(cfg.m, t1 - t0, cfg.seed)?.into_iter().map(|t| t + t0).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub iteration: usize,
    pub total: f64,
    pub residual: f64,
    pub data: f64,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ParamInverseRun {
    pub beta: Vec<f64>,
    pub net: MlpParams,
    pub path: PathSample,
    pub history: Vec<ParamRecord>,
    pub diverged_at: Option<usize>,
}

/// Joint Adam over network weights and the trainable drift parameters.
pub fn train_parametric(cfg: &ParamInverseConfig, obs: &ObservationSet) -> Result<ParamInverseRun> {
    cfg.validate(obs)?;
    let points = param_residual_points(cfg, obs)?;
    let mut net = MlpParams::init(&cfg.layer_dims(), cfg.seed)?;
    let mut beta = cfg.beta_init.clone();
    let obj = ParamObjective::new(cfg, obs, &points);
    let mut adam_net = AdamState::new(net.len(), cfg.lr)?;
    let mut adam_beta = AdamState::new(beta.len(), cfg.beta_lr.unwrap_or(cfg.lr))?;
    let mut history = Vec::new();
    let mut diverged_at = None;
    for it in 0..cfg.iterations {
        let g = match loss_grad(&obj, &net, &beta) {
            Ok(g) => g,
            Err(Error::Divergence { .. }) => {
                diverged_at = Some(it);
                break;
            }
            Err(e) => return Err(e),
        };
        if it % cfg.record_every == 0 || it + 1 == cfg.iterations {
            let c = obj.components();
            history.push(ParamRecord { iteration: it, total: c.total, residual: c.residual, data: c.data, beta: beta.clone() });
        }
        adam_net.step(net.as_mut_slice(), &g.grad_params)?;
        adam_beta.step(&mut beta, &g.grad_aux)?;
    }
    let t_end = obs.times()[obs.len() - 1];
    let path = network_path(&net, t_end, 1001)?;
    Ok(ParamInverseRun { beta, net, path, history, diverged_at })
}

#[derive(Debug, Clone)]
pub struct NonParamConfig {
    pub hidden: Vec<usize>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    pub record_every: usize,
}

impl Default for NonParamConfig {
    fn default() -> Self {
        Self { hidden: vec![20; 4], gamma1: 1e4, gamma2: 0.0, iterations: 10_000, lr: 1e-4, seed: 0, record_every: 10 }
    }
}

impl NonParamConfig {
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![1];
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NonParamLoss {
    pub total: f64,
    pub ode: f64,
    pub drift: f64,
    pub weight: f64,
}

/// Nonparametric loss; network inputs are the interior observed states
/// followed by the anchor locations.
pub struct NonParamObjective<'a> {
    cfg: &'a NonParamConfig,
    noise: &'a NoiseSpec,
    inputs: Vec<f64>,
    zdd: Vec<f64>,
    anchor_f: Vec<f64>,
    last: Cell<NonParamLoss>,
}

impl<'a> NonParamObjective<'a> {
    pub fn new(cfg: &'a NonParamConfig, noise: &'a NoiseSpec, obs: &ObservationSet) -> Result<Self> {
        if obs.dim() != 1 || noise.dim() != 1 {
            return Err(Error::Unsupported("nonparametric drift recovery is one-dimensional".into()));
        }
        if !(cfg.gamma1 >= 0.0 && cfg.gamma2 >= 0.0) {
            return invalid("γ weights must be non-negative");
        }
        let tau = obs.uniform_step()?;
        let z = obs.states();
        let mut inputs = Vec::with_capacity(z.len() - 2 + obs.anchors.len());
        let mut zdd = Vec::with_capacity(z.len() - 2);
        for i in 1..z.len() - 1 {
            inputs.push(z[i]);
            zdd.push((z[i + 1] - 2.0 * z[i] + z[i - 1]) / (tau * tau));
        }
        inputs.extend(obs.anchors.iter().map(|a| a.x[0]));
        let anchor_f = obs.anchors.iter().map(|a| a.f[0]).collect();
        Ok(Self { cfg, noise, inputs, zdd, anchor_f, last: Cell::new(NonParamLoss::default()) })
    }

    pub fn components(&self) -> NonParamLoss {
        self.last.get()
    }
}

impl Objective for NonParamObjective<'_> {
    fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    fn evaluate(&self, trace: &JetTrace, _aux: &[f64], adj: &mut JetAdjoint, _grad_aux: &mut [f64]) -> f64 {
        let n = self.zdd.len();
        let c = match self.noise.framework {
            Framework::Fw => 0.0,
            Framework::Om => 0.5 * self.noise.amplitudes[0].powi(2),
        };
        let w = 1.0 / n as f64;
        let mut ode = 0.0;
        for i in 0..n {
            let (f, f1, f2) = (trace.value(i, 0), trace.d1(i, 0), trace.d2(i, 0));
            let r = self.zdd[i] - scalar_rhs(self.noise, f, f1, f2);
            ode += w * r * r;
            adj.value[i] -= 2.0 * w * r * f1;
            adj.d1[i] -= 2.0 * w * r * f;
            adj.d2[i] -= 2.0 * w * r * c;
        }
        let drift = if self.anchor_f.is_empty() {
            0.0
        } else {
            let wa = self.cfg.gamma1 / self.anchor_f.len() as f64;
            data_term(trace, n..n + self.anchor_f.len(), &self.anchor_f, 1, wa, adj)
        };
        let total = ode + drift;
        let prev = self.last.get();
        self.last.set(NonParamLoss { total: total + prev.weight, ode, drift, weight: prev.weight });
        total
    }

    fn param_term(&self, params: &MlpParams, grad: &mut [f64]) -> f64 {
        let g2 = self.cfg.gamma2;
        let weight = g2 * params.weight_sq_norm();
        if g2 != 0.0 {
            for j in 0..params.n_layers() {
                let r = params.weight_range(j);
                for (g, &w) in grad[r.clone()].iter_mut().zip(&params.as_slice()[r]) {
                    *g += 2.0 * g2 * w;
                }
            }
        }
        self.last.set(NonParamLoss { weight, ..NonParamLoss::default() });
        weight
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonParamRecord {
    pub iteration: usize,
    pub total: f64,
    pub ode: f64,
    pub drift: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct NonParamRun {
    pub drift: DriftNet,
    pub history: Vec<NonParamRecord>,
    pub diverged_at: Option<usize>,
}

pub fn train_nonparametric(obs: &ObservationSet, noise: &NoiseSpec, cfg: &NonParamConfig) -> Result<NonParamRun> {
    if cfg.record_every == 0 {
        return invalid("record_every must be positive");
    }
    let obj = NonParamObjective::new(cfg, noise, obs)?;
    let mut net = MlpParams::init(&cfg.layer_dims(), cfg.seed)?;
    let mut adam = AdamState::new(net.len(), cfg.lr)?;
    let mut history = Vec::new();
    let mut diverged_at = None;
    for it in 0..cfg.iterations {
        let g = match loss_grad(&obj, &net, &[]) {
            Ok(g) => g,
            Err(Error::Divergence { .. }) => {
                diverged_at = Some(it);
                break;
            }
            Err(e) => return Err(e),
        };
        if it % cfg.record_every == 0 || it + 1 == cfg.iterations {
            let c = obj.components();
            history.push(NonParamRecord { iteration: it, total: c.total, ode: c.ode, drift: c.drift, weight: c.weight });
        }
        adam.step(net.as_mut_slice(), &g.grad_params)?;
    }
    Ok(NonParamRun { drift: DriftNet::new(net)?, history, diverged_at })
}
