//! Fully connected tanh network `h^1 = w^1 x + b^1`,
//! `h^j = w^j tanh(h^{j-1}) + b^j`, with second-order input jets and a
//! reverse pass over the jet computation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};

/// Layer sizes plus all weights and biases in one flat buffer.
///
/// Layout per layer `j`: the `n_j × n_{j-1}` weight matrix (row-major)
/// followed by the `n_j` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    dims: Vec<usize>,
    data: Vec<f64>,
}

/// Network value and its first and second derivatives with respect to a
/// scalar input.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return invalid("a network needs at least an input and an output layer");
    }
    if dims.contains(&0) {
        return invalid("layer widths must be positive");
    }
    Ok(())
}

impl MlpParams {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        let n = dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        Ok(Self { dims: dims.to_vec(), data: vec![0.0; n] })
    }

    /// Truncated-normal weights (std `1/√n_{j−1}`, cut at two standard
    /// deviations) and zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for j in 0..p.n_layers() {
            let std = 1.0 / (dims[j] as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in p.weights_mut(j) {
                *w = loop {
                    let x = normal.sample(&mut rng);
                    if x.abs() <= 2.0 * std {
                        break x;
                    }
                };
            }
        }
        Ok(p)
    }

    pub fn from_parts(dims: &[usize], weights: &[Vec<f64>], biases: &[Vec<f64>]) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        check_dim(p.n_layers(), weights.len())?;
        check_dim(p.n_layers(), biases.len())?;
        for j in 0..p.n_layers() {
            check_dim(p.weights(j).len(), weights[j].len())?;
            check_dim(p.bias(j).len(), biases[j].len())?;
            p.weights_mut(j).copy_from_slice(&weights[j]);
            p.bias_mut(j).copy_from_slice(&biases[j]);
        }
        if p.data.iter().any(|v| !v.is_finite()) {
            return invalid("network parameters must be finite");
        }
        Ok(p)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of affine layers `L`.
    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated dims")
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offset(&self, j: usize) -> usize {
        self.dims[..=j].windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub(crate) fn weight_range(&self, j: usize) -> std::ops::Range<usize> {
        let o = self.offset(j);
        o..o + self.dims[j + 1] * self.dims[j]
    }

    pub(crate) fn bias_range(&self, j: usize) -> std::ops::Range<usize> {
        let o = self.offset(j) + self.dims[j + 1] * self.dims[j];
        o..o + self.dims[j + 1]
    }

    /// Weights of affine layer `j` (0-based), row-major `n_{j+1} × n_j`.
    pub fn weights(&self, j: usize) -> &[f64] {
        &self.data[self.weight_range(j)]
    }

    pub fn weights_mut(&mut self, j: usize) -> &mut [f64] {
        let r = self.weight_range(j);
        &mut self.data[r]
    }

    pub fn bias(&self, j: usize) -> &[f64] {
        &self.data[self.bias_range(j)]
    }

    pub fn bias_mut(&mut self, j: usize) -> &mut [f64] {
        let r = self.bias_range(j);
        &mut self.data[r]
    }

    /// Sum of squared weights (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        (0..self.n_layers()).flat_map(|j| self.weights(j).iter()).map(|w| w * w).sum()
    }

    /// Plain forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let mut a = x.to_vec();
        for j in 0..self.n_layers() {
            let (w, b) = (self.weights(j), self.bias(j));
            let n_in = self.dims[j];
            let mut out: Vec<f64> = (0..self.dims[j + 1])
                .map(|i| {
                    let mut acc = 0.0;
                    for k in 0..n_in {
                        acc += w[i * n_in + k] * a[k];
                    }
                    acc + b[i]
                })
                .collect();
            if j + 1 < self.n_layers() {
                out.iter_mut().for_each(|v| *v = tanh(*v));
            }
            a = out;
        }
        Ok(a)
    }

    /// Value, first and second input derivative at scalar input `t`.
    pub fn jet2(&self, t: f64) -> Result<Jet2> {
        let trace = self.jet2_batch(&[t])?;
        Ok(trace.jet(0))
    }

    /// Jets at every input point, keeping the intermediate values needed
    /// by [`JetTrace::backward`].
    pub fn jet2_batch(&self, inputs: &[f64]) -> Result<JetTrace> {
        if self.input_dim() != 1 {
            return Err(Error::Unsupported("jets require a scalar network input".into()));
        }
        let b = inputs.len();
        let cols = 3 * b;
        let n_layers = self.n_layers();
        let mut pre = Vec::with_capacity(n_layers);
        let mut act = Vec::with_capacity(n_layers.saturating_sub(1));

        // first affine layer: P = w t + b, Ṗ = w, P̈ = 0
        let (w, bias) = (self.weights(0), self.bias(0));
        let n1 = self.dims[1];
        let mut p = vec![0.0; n1 * cols];
        for i in 0..n1 {
            let row = &mut p[i * cols..(i + 1) * cols];
            for (c, &t) in inputs.iter().enumerate() {
                row[c] = w[i] * t + bias[i];
                row[b + c] = w[i];
            }
        }
        pre.push(p);

        for j in 1..n_layers {
            let a = tanh_jet(&pre[j - 1], self.dims[j], b);
            let (w, bias) = (self.weights(j), self.bias(j));
            let (n_in, n_out) = (self.dims[j], self.dims[j + 1]);
            let mut p = vec![0.0; n_out * cols];
            affine_block(w, &a, &mut p, n_in, n_out, cols);
            for i in 0..n_out {
                p[i * cols..i * cols + b].iter_mut().for_each(|v| *v += bias[i]);
            }
            act.push(a);
            pre.push(p);
        }
        Ok(JetTrace { dims: self.dims.clone(), batch: b, inputs: inputs.to_vec(), pre, act })
    }
}

const BLOCK: usize = 128;
const LANES: usize = 8;

/// `p = W a` for a row-major `n_out × n_in` weight matrix and `n_in × cols`
/// input; each output lane strip is accumulated in registers, summing over
/// `k` in increasing order.
fn affine_block(w: &[f64], a: &[f64], p: &mut [f64], n_in: usize, n_out: usize, cols: usize) {
    let full = cols - cols % LANES;
    for c0 in (0..full).step_by(LANES) {
        for i in 0..n_out {
            let wr = &w[i * n_in..(i + 1) * n_in];
            let mut acc = [0.0; LANES];
            for (k, &wik) in wr.iter().enumerate() {
                let ar: &[f64; LANES] = a[k * cols + c0..k * cols + c0 + LANES].try_into().expect("lane strip");
                for l in 0..LANES {
                    acc[l] += wik * ar[l];
                }
            }
            p[i * cols + c0..i * cols + c0 + LANES].copy_from_slice(&acc);
        }
    }
    for c in full..cols {
        for i in 0..n_out {
            let mut acc = 0.0;
            for k in 0..n_in {
                acc += w[i * n_in + k] * a[k * cols + c];
            }
            p[i * cols + c] = acc;
        }
    }
}

/// tanh through a single `exp`, about three times cheaper than the libm
/// routine; odd series near zero where `e − 1` would cancel.
#[inline]
pub(crate) fn tanh(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 0.02 {
        let x2 = x * x;
        return x * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0 + x2 * (62.0 / 2835.0)))));
    }
    if ax > 20.0 {
        return x.signum();
    }
    let e = (2.0 * x).exp();
    (e - 1.0) / (e + 1.0)
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        let a: &[f64; 8] = a.try_into().expect("chunk of 8");
        let b: &[f64; 8] = b.try_into().expect("chunk of 8");
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// tanh applied to a `[value | d1 | d2]` block matrix with `n` rows.
fn tanh_jet(p: &[f64], n: usize, b: usize) -> Vec<f64> {
    let cols = 3 * b;
    let mut a = vec![0.0; n * cols];
    for i in 0..n {
        let pr = &p[i * cols..(i + 1) * cols];
        let ar = &mut a[i * cols..(i + 1) * cols];
        for c in 0..b {
            let s = tanh(pr[c]);
            let s1 = 1.0 - s * s;
            let s2 = -2.0 * s * s1;
            let (p1, p2) = (pr[b + c], pr[2 * b + c]);
            ar[c] = s;
            ar[b + c] = s1 * p1;
            ar[2 * b + c] = s2 * p1 * p1 + s1 * p2;
        }
    }
    a
}

/// Stored forward jet computation for a batch of scalar inputs.
///
/// Every layer buffer has one row per unit and `3B` columns: values,
/// first derivatives, second derivatives.
#[derive(Debug, Clone)]
pub struct JetTrace {
    dims: Vec<usize>,
    batch: usize,
    inputs: Vec<f64>,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
}

/// Adjoints of a scalar loss with respect to the network outputs; each
/// channel is row-major `B × n_out`.
#[derive(Debug, Clone)]
pub struct JetAdjoint {
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl JetAdjoint {
    pub fn zeros(batch: usize, n_out: usize) -> Self {
        let n = batch * n_out;
        Self { value: vec![0.0; n], d1: vec![0.0; n], d2: vec![0.0; n] }
    }
}

impl JetTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    fn out(&self) -> &[f64] {
        self.pre.last().expect("at least one layer")
    }

    fn n_out(&self) -> usize {
        *self.dims.last().expect("validated dims")
    }

    #[inline]
    pub fn value(&self, point: usize, k: usize) -> f64 {
        self.out()[k * 3 * self.batch + point]
    }

    #[inline]
    pub fn d1(&self, point: usize, k: usize) -> f64 {
        self.out()[k * 3 * self.batch + self.batch + point]
    }

    #[inline]
    pub fn d2(&self, point: usize, k: usize) -> f64 {
        self.out()[k * 3 * self.batch + 2 * self.batch + point]
    }

    pub fn jet(&self, point: usize) -> Jet2 {
        let n = self.n_out();
        Jet2 {
            value: (0..n).map(|k| self.value(point, k)).collect(),
            d1: (0..n).map(|k| self.d1(point, k)).collect(),
            d2: (0..n).map(|k| self.d2(point, k)).collect(),
        }
    }

    /// Reverse pass: accumulates `∂loss/∂θ` into `grad` given the output
    /// adjoints.
    pub fn backward(&self, params: &MlpParams, adj: &JetAdjoint, grad: &mut [f64]) -> Result<()> {
        check_dim(params.len(), grad.len())?;
        if params.layer_dims() != self.dims.as_slice() {
            return invalid("trace and parameters have different architectures");
        }
        let b = self.batch;
        let cols = 3 * b;
        let n_out = self.n_out();
        check_dim(b * n_out, adj.value.len())?;
        check_dim(b * n_out, adj.d1.len())?;
        check_dim(b * n_out, adj.d2.len())?;

        // adjoint of the last pre-activation, same block layout
        let mut pbar = vec![0.0; n_out * cols];
        for k in 0..n_out {
            for c in 0..b {
                pbar[k * cols + c] = adj.value[c * n_out + k];
                pbar[k * cols + b + c] = adj.d1[c * n_out + k];
                pbar[k * cols + 2 * b + c] = adj.d2[c * n_out + k];
            }
        }

        for j in (0..params.n_layers()).rev() {
            let (n_in, n_o) = (self.dims[j], self.dims[j + 1]);
            let bias_range = params.bias_range(j);
            for i in 0..n_o {
                grad[bias_range.start + i] += pbar[i * cols..i * cols + b].iter().sum::<f64>();
            }
            let wr = params.weight_range(j);
            if j == 0 {
                for i in 0..n_o {
                    let row = &pbar[i * cols..(i + 1) * cols];
                    let mut g = 0.0;
                    for c in 0..b {
                        g += row[c] * self.inputs[c] + row[b + c];
                    }
                    grad[wr.start + i] += g;
                }
                break;
            }
            let a = &self.act[j - 1];
            let w = params.weights(j);
            let mut abar = vec![0.0; n_in * cols];
            let gw = &mut grad[wr];
            for c0 in (0..cols).step_by(BLOCK) {
                let c1 = (c0 + BLOCK).min(cols);
                for i in 0..n_o {
                    let prow = &pbar[i * cols + c0..i * cols + c1];
                    for k in 0..n_in {
                        let arow = &a[k * cols + c0..k * cols + c1];
                        gw[i * n_in + k] += dot(prow, arow);
                        let wik = w[i * n_in + k];
                        let brow = &mut abar[k * cols + c0..k * cols + c1];
                        for (r, &x) in brow.iter_mut().zip(prow) {
                            *r += wik * x;
                        }
                    }
                }
            }
            // through the tanh jet of layer j-1
            let p = &self.pre[j - 1];
            let mut next = vec![0.0; n_in * cols];
            for k in 0..n_in {
                let pr = &p[k * cols..(k + 1) * cols];
                let sr = &a[k * cols..(k + 1) * cols];
                let ar = &abar[k * cols..(k + 1) * cols];
                let nr = &mut next[k * cols..(k + 1) * cols];
                for c in 0..b {
                    let s = sr[c];
                    let s1 = 1.0 - s * s;
                    let s2 = -2.0 * s * s1;
                    let s3 = -2.0 * s1 * s1 + 4.0 * s * s * s1;
                    let (p1, p2) = (pr[b + c], pr[2 * b + c]);
                    let (a0, a1, a2) = (ar[c], ar[b + c], ar[2 * b + c]);
                    nr[c] = a0 * s1 + a1 * s2 * p1 + a2 * (s3 * p1 * p1 + s2 * p2);
                    nr[b + c] = a1 * s1 + 2.0 * a2 * s2 * p1;
                    nr[2 * b + c] = a2 * s1;
                }
            }
            pbar = next;
        }
        Ok(())
    }
}

/// Checkpoint file contents: layer sizes plus row-major weights and biases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<&MlpParams> for Checkpoint {
    fn from(p: &MlpParams) -> Self {
        Self {
            layer_dims: p.dims.clone(),
            weights: (0..p.n_layers()).map(|j| p.weights(j).to_vec()).collect(),
            biases: (0..p.n_layers()).map(|j| p.bias(j).to_vec()).collect(),
        }
    }
}

impl TryFrom<Checkpoint> for MlpParams {
    type Error = Error;
    fn try_from(c: Checkpoint) -> Result<Self> {
        MlpParams::from_parts(&c.layer_dims, &c.weights, &c.biases)
    }
}

impl MlpParams {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Checkpoint::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<Checkpoint>(s)?.try_into()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
