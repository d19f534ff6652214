//! Forward problem: train a network `h: [0,T] → R^d` so that it satisfies
//! the E-L equation at sampled residual points and the boundary data.
//!
//! ```text
//! loss = λ_r/m Σ_j ‖ḧ(t_j) − g(h, ḣ)‖² + λ_b/2 (‖h(0) − x0‖² + ‖h(T) − xT‖²) [+ λ_R R(h)]
//! ```
//!
//! `R(h)` is the empirical Hölder seminorm sum over orders 0, 1 and 2,
//! evaluated on a uniform grid; its gradient uses the maximizing pair.

use std::cell::Cell;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::rhs_partials;
use crate::error::{check_dim, invalid, Error, Result};
use crate::model::{BoundaryConditions, DriftKind, DriftModel, NoiseSpec, PathSample};
use crate::nn::{loss_grad, AdamState, JetAdjoint, JetTrace, MlpParams, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderConfig {
    pub alpha: f64,
    pub weight: f64,
    /// Uniform grid nodes on `[0, T]` used for the seminorm estimate.
    #[serde(default = "default_holder_grid")]
    pub grid: usize,
}

fn default_holder_grid() -> usize {
    101
}

#[derive(Debug, Clone)]
pub struct ForwardConfig {
    pub model: DriftModel,
    pub noise: NoiseSpec,
    pub bc: BoundaryConditions,
    pub m: usize,
    pub lambda_r: f64,
    pub lambda_b: f64,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub regularizer: Option<HolderConfig>,
    pub output_nodes: usize,
    /// Keep one history record every this many iterations (the last
    /// iteration is always recorded).
    pub record_every: usize,
}

/// Default hidden layers: two for Maier–Stein, four otherwise, 20 wide.
pub fn default_hidden(kind: DriftKind) -> Vec<usize> {
    match kind {
        DriftKind::MaierStein => vec![20; 2],
        _ => vec![20; 4],
    }
}

impl ForwardConfig {
    pub fn new(model: DriftModel, noise: NoiseSpec, bc: BoundaryConditions) -> Self {
        let hidden = default_hidden(model.kind());
        let m = if model.dim() == 1 { 1001 } else { 501 };
        Self {
            model,
            noise,
            bc,
            m,
            lambda_r: 1.0,
            lambda_b: 1.0,
            iterations: 10_000,
            lr: 1e-4,
            seed: 0,
            hidden,
            regularizer: None,
            output_nodes: 1001,
            record_every: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bc.validate()?;
        check_dim(self.model.dim(), self.bc.dim())?;
        check_dim(self.model.dim(), self.noise.dim())?;
        if self.m < 1 {
            return invalid("m must be at least 1");
        }
        if !(self.lambda_r > 0.0 && self.lambda_b > 0.0) {
            return invalid("loss weights must be positive");
        }
        if let Some(r) = &self.regularizer {
            if !(r.alpha > 0.0 && r.alpha <= 1.0) {
                return invalid("Hölder exponent must lie in (0, 1]");
            }
            if !(r.weight >= 0.0) || r.grid < 2 {
                return invalid("regularizer needs a non-negative weight and at least 2 grid nodes");
            }
        }
        if self.output_nodes < 2 || self.record_every == 0 {
            return invalid("output grid needs 2 nodes and record_every must be positive");
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![1];
        dims.extend(&self.hidden);
        dims.push(self.model.dim());
        dims
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub total: f64,
    pub residual: f64,
    pub boundary: f64,
    pub regularizer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub residual: f64,
    pub boundary: f64,
    pub regularizer: f64,
}

/// `m` iid uniform draws on the open interval `(0, T)`.
pub fn sample_residual_points(m: usize, t_final: f64, seed: u64) -> Result<Vec<f64>> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return invalid("T must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let t = rng.random::<f64>() * t_final;
        if t > 0.0 && t < t_final {
            out.push(t);
        }
    }
    Ok(out)
}

/// Adds `weight · Σ_{j∈points} ‖ḧ − g(h, ḣ)‖²` and its adjoints. When
/// `grad_beta` is given, also accumulates the gradient with respect to
/// the entries of `params` flagged in `mask`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn residual_term(
    kind: DriftKind,
    params: &[f64],
    noise: &NoiseSpec,
    trace: &JetTrace,
    points: Range<usize>,
    weight: f64,
    adj: &mut JetAdjoint,
    mut grad_beta: Option<(&mut [f64], &[bool])>,
) -> f64 {
    let d = noise.dim();
    let p = params.len();
    let mut z = vec![0.0; d];
    let mut zd = vec![0.0; d];
    let mut r = vec![0.0; d];
    let mut total = 0.0;
    for c in points {
        for k in 0..d {
            z[k] = trace.value(c, k);
            zd[k] = trace.d1(c, k);
        }
        let part = rhs_partials(kind, params, noise, &z, &zd, 1.0, grad_beta.is_some());
        let mut sq = 0.0;
        for k in 0..d {
            r[k] = trace.d2(c, k) - part.rhs[k];
            sq += r[k] * r[k];
        }
        total += weight * sq;
        for j in 0..d {
            let mut gv = 0.0;
            let mut g1 = 0.0;
            for k in 0..d {
                gv -= r[k] * part.dz[k * d + j];
                g1 -= r[k] * part.dzd[k * d + j];
            }
            adj.value[c * d + j] += 2.0 * weight * gv;
            adj.d1[c * d + j] += 2.0 * weight * g1;
            adj.d2[c * d + j] += 2.0 * weight * r[j];
        }
        if let Some((gb, mask)) = grad_beta.as_mut() {
            for q in 0..p {
                if mask[q] {
                    let s: f64 = (0..d).map(|k| r[k] * part.dbeta[k * p + q]).sum();
                    gb[q] -= 2.0 * weight * s;
                }
            }
        }
    }
    total
}

/// `Σ_{c∈points} weight·‖h(t_c) − target_c‖²` with adjoints.
pub(crate) fn data_term(
    trace: &JetTrace,
    points: Range<usize>,
    targets: &[f64],
    d: usize,
    weight: f64,
    adj: &mut JetAdjoint,
) -> f64 {
    let mut total = 0.0;
    for (i, c) in points.enumerate() {
        for k in 0..d {
            let e = trace.value(c, k) - targets[i * d + k];
            total += weight * e * e;
            adj.value[c * d + k] += 2.0 * weight * e;
        }
    }
    total
}

fn channel(trace: &JetTrace, order: usize, c: usize, k: usize) -> f64 {
    match order {
        0 => trace.value(c, k),
        1 => trace.d1(c, k),
        _ => trace.d2(c, k),
    }
}

/// Hölder seminorm sum on the jets at `points` (times taken from the
/// trace inputs). Adjoints are written for the maximizing pair of each
/// order, scaled by `weight`.
pub(crate) fn holder_term(
    trace: &JetTrace,
    points: Range<usize>,
    d: usize,
    alpha: f64,
    weight: f64,
    adj: Option<&mut JetAdjoint>,
) -> f64 {
    let t = trace.inputs();
    let idx: Vec<usize> = points.collect();
    let mut total = 0.0;
    let mut argmax = [None; 3];
    for (order, slot) in argmax.iter_mut().enumerate() {
        let mut best = 0.0;
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                let sq: f64 = (0..d).map(|k| (channel(trace, order, i, k) - channel(trace, order, j, k)).powi(2)).sum();
                let q = sq.sqrt() / (t[i] - t[j]).abs().powf(alpha);
                if q > best {
                    best = q;
                    *slot = Some((i, j, sq.sqrt()));
                }
            }
        }
        total += best;
    }
    if let Some(adj) = adj {
        for (order, slot) in argmax.iter().enumerate() {
            let Some((i, j, norm)) = *slot else { continue };
            let scale = weight / (norm * (t[i] - t[j]).abs().powf(alpha));
            let buf = match order {
                0 => &mut adj.value,
                1 => &mut adj.d1,
                _ => &mut adj.d2,
            };
            for k in 0..d {
                let diff = channel(trace, order, i, k) - channel(trace, order, j, k);
                buf[i * d + k] += scale * diff;
                buf[j * d + k] -= scale * diff;
            }
        }
    }
    weight * total
}

/// Empirical Hölder regularizer `R(h)` on `grid`.
pub fn holder_regularizer(net: &MlpParams, grid: &[f64], alpha: f64) -> Result<f64> {
    if grid.len() < 2 {
        return invalid("Hölder grid needs at least 2 nodes");
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return invalid("Hölder exponent must lie in (0, 1]");
    }
    for (a, &ta) in grid.iter().enumerate() {
        if grid[a + 1..].contains(&ta) {
            return invalid("Hölder grid has duplicate times");
        }
    }
    let trace = net.jet2_batch(grid)?;
    Ok(holder_term(&trace, 0..grid.len(), net.output_dim(), alpha, 1.0, None))
}

/// Forward loss on fixed residual points. Input layout:
/// `[t_1..t_m | 0, T | Hölder grid]`.
pub struct ForwardObjective<'a> {
    cfg: &'a ForwardConfig,
    inputs: Vec<f64>,
    m: usize,
    last: Cell<LossComponents>,
}

impl<'a> ForwardObjective<'a> {
    pub fn new(cfg: &'a ForwardConfig, points: &[f64]) -> Self {
        let mut inputs = points.to_vec();
        inputs.push(0.0);
        inputs.push(cfg.bc.t_final);
        if let Some(r) = &cfg.regularizer {
            inputs.extend(PathSample::uniform_times(cfg.bc.t_final, r.grid));
        }
        Self { cfg, inputs, m: points.len(), last: Cell::new(LossComponents::default()) }
    }

    /// Components of the most recent evaluation.
    pub fn components(&self) -> LossComponents {
        self.last.get()
    }
}

impl Objective for ForwardObjective<'_> {
    fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    fn evaluate(&self, trace: &JetTrace, _aux: &[f64], adj: &mut JetAdjoint, _grad_aux: &mut [f64]) -> f64 {
        let cfg = self.cfg;
        let d = cfg.model.dim();
        let m = self.m;
        let residual = if m == 0 {
            0.0
        } else {
            let w = cfg.lambda_r / m as f64;
            residual_term(cfg.model.kind(), cfg.model.params(), &cfg.noise, trace, 0..m, w, adj, None)
        };
        let mut ends = cfg.bc.x0.clone();
        ends.extend(&cfg.bc.xt);
        let boundary = data_term(trace, m..m + 2, &ends, d, 0.5 * cfg.lambda_b, adj);
        let regularizer = match &cfg.regularizer {
            Some(r) => holder_term(trace, m + 2..self.inputs.len(), d, r.alpha, r.weight, Some(adj)),
            None => 0.0,
        };
        let total = residual + boundary + regularizer;
        self.last.set(LossComponents { total, residual, boundary, regularizer });
        total
    }
}

/// Loss components of `net` at the given residual points.
pub fn empirical_loss(net: &MlpParams, cfg: &ForwardConfig, points: &[f64]) -> Result<LossComponents> {
    check_dim(1, net.input_dim())?;
    check_dim(cfg.model.dim(), net.output_dim())?;
    let obj = ForwardObjective::new(cfg, points);
    let trace = net.jet2_batch(obj.inputs())?;
    let mut adj = JetAdjoint::zeros(trace.batch(), net.output_dim());
    obj.evaluate(&trace, &[], &mut adj, &mut []);
    Ok(obj.components())
}

/// Evaluates a scalar-input network on a uniform grid of `n` nodes.
pub fn network_path(net: &MlpParams, t_final: f64, n: usize) -> Result<PathSample> {
    let times = PathSample::uniform_times(t_final, n);
    let mut states = Vec::with_capacity(n * net.output_dim());
    for &t in &times {
        states.extend(net.forward(&[t])?);
    }
    PathSample::new(times, states, net.output_dim())
}

#[derive(Debug, Clone)]
pub struct ForwardRun {
    pub net: MlpParams,
    pub path: PathSample,
    pub history: Vec<TrainRecord>,
    pub points: Vec<f64>,
    /// Iteration at which the loss became non-finite; `net` then holds the
    /// last finite parameters.
    pub diverged_at: Option<usize>,
}

/// Full-batch Adam on the forward loss.
pub fn train_forward(cfg: &ForwardConfig) -> Result<ForwardRun> {
    cfg.validate()?;
    let points = sample_residual_points(cfg.m, cfg.bc.t_final, cfg.seed)?;
    let mut net = MlpParams::init(&cfg.layer_dims(), cfg.seed)?;
    let obj = ForwardObjective::new(cfg, &points);
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
            history.push(TrainRecord {
                iteration: it,
                total: c.total,
                residual: c.residual,
                boundary: c.boundary,
                regularizer: c.regularizer,
            });
        }
        let before = net.clone();
        adam.step(net.as_mut_slice(), &g.grad_params)?;
        if net.as_slice().iter().any(|v| !v.is_finite()) {
            net = before;
            diverged_at = Some(it);
            break;
        }
    }
    let path = network_path(&net, cfg.bc.t_final, cfg.output_nodes)?;
    Ok(ForwardRun { net, path, history, points, diverged_at })
}
