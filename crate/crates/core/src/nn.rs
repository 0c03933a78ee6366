//! Minimal differentiable-network substrate.
//!
//! Supports exactly what the agents need: chains of dense layers and LSTM
//! cells, analytic gradients for both parameters and inputs, global-norm
//! gradient clipping, Adam/SGD steps, and a binary checkpoint format.
//! Everything is `f64` and single-threaded; training sequences are processed
//! time-major (a 64-transition mini-batch is one 64-step sequence, and any
//! recurrent state starts from zero at the head of the sequence).
//!
//! Parameters live in a [`ParameterSet`] addressed by stable names
//! (`l0.w`, `l2.wx`, `out.b`, ...) so checkpoints are self-describing.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::mat;
use crate::{CoreError, Result};

/// Checkpoint file magic plus the current format version.
const CKPT_MAGIC: &[u8; 4] = b"NNCP";
const CKPT_VERSION: u16 = 1;

// ─── Parameters ──────────────────────────────────────────────────────────

/// One named tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// An ordered, name-indexed collection of parameters.  Order is creation
/// order and is part of the contract: checkpoints, optimizer state and
/// soft updates all walk parameters positionally.
#[derive(Debug, Clone, Default)]
pub struct ParameterSet {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor.  Names must be unique and the value count must
    /// match the shape.
    pub fn add(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) -> Result<()> {
        if self.by_name.contains_key(name) {
            return Err(CoreError::Usage(format!("duplicate parameter name {name:?}")));
        }
        let expect: usize = shape.iter().product();
        if values.len() != expect {
            return Err(CoreError::Shape(format!(
                "parameter {name:?}: {} values for shape {shape:?}",
                values.len()
            )));
        }
        let grad = vec![0.0; values.len()];
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(Param { name: name.to_string(), shape, values, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.by_name.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        let i = *self.by_name.get(name)?;
        Some(&mut self.params[i])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub(crate) fn at(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub(crate) fn at_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Euclidean norm over every gradient scalar in the set.
    pub fn grad_global_norm(&self) -> f64 {
        self.params.iter().map(|p| mat::sum_squares(&p.grad)).sum::<f64>().sqrt()
    }

    /// Errors (naming the first offender) if any value is non-finite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for p in &self.params {
            if let Some(pos) = p.values.iter().position(|v| !v.is_finite()) {
                return Err(CoreError::Numeric(format!(
                    "{context}: non-finite value in parameter {:?} at index {pos}",
                    p.name
                )));
            }
        }
        Ok(())
    }

    /// True when both sets have identical structure and bitwise-equal values.
    pub fn bitwise_eq(&self, other: &ParameterSet) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| {
                    a.name == b.name
                        && a.shape == b.shape
                        && a.values.len() == b.values.len()
                        && a.values
                            .iter()
                            .zip(&b.values)
                            .all(|(x, y)| x.to_bits() == y.to_bits())
                })
    }
}

/// Scales every gradient in the set so the global norm does not exceed
/// `max_norm`.  Returns `(norm_before, scale_applied)`; gradients already
/// within the bound are left untouched.
pub fn clip_global_norm(params: &mut ParameterSet, max_norm: f64) -> (f64, f64) {
    let norm = params.grad_global_norm();
    if norm <= max_norm || norm == 0.0 {
        return (norm, 1.0);
    }
    let scale = max_norm / norm;
    for p in &mut params.params {
        p.grad.iter_mut().for_each(|g| *g *= scale);
    }
    (norm, scale)
}

/// In-place Polyak update `target <- tau * source + (1 - tau) * target`.
pub fn soft_update(target: &mut ParameterSet, source: &ParameterSet, tau: f64) -> Result<()> {
    if target.params.len() != source.params.len() {
        return Err(CoreError::Shape("soft_update: parameter count mismatch".into()));
    }
    for (t, s) in target.params.iter_mut().zip(&source.params) {
        if t.shape != s.shape || t.name != s.name {
            return Err(CoreError::Shape(format!(
                "soft_update: mismatched parameter {:?} vs {:?}",
                t.name, s.name
            )));
        }
        for (tv, &sv) in t.values.iter_mut().zip(&s.values) {
            *tv = tau * sv + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}

// ─── Optimizer ───────────────────────────────────────────────────────────

/// Which update rule [`Optimizer::step`] applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer with per-parameter moment state (sidecar to a [`ParameterSet`]).
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer { kind, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn adam() -> Self {
        Self::new(OptimizerKind::adam())
    }

    pub fn sgd() -> Self {
        Self::new(OptimizerKind::Sgd)
    }

    /// Applies one update from the gradients stored in `params`.  Fails fast
    /// (naming the parameter) if the update would write a non-finite value.
    pub fn step(&mut self, params: &mut ParameterSet, lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.params.len() {
            return Err(CoreError::Shape("optimizer state does not match parameter set".into()));
        }
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in &mut params.params {
                    for (w, &g) in p.values.iter_mut().zip(&p.grad) {
                        *w -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (pi, p) in params.params.iter_mut().enumerate() {
                    let m = &mut self.m[pi];
                    let v = &mut self.v[pi];
                    for i in 0..p.values.len() {
                        let g = p.grad[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p.values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        for p in &params.params {
            if let Some(pos) = p.values.iter().position(|w| !w.is_finite()) {
                return Err(CoreError::Numeric(format!(
                    "optimizer step produced non-finite value in {:?} at index {pos}",
                    p.name
                )));
            }
        }
        Ok(())
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }
}

// ─── Network specification ───────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, pre: &[f64], out: &mut [f64]) {
        match self {
            Activation::Linear => out.copy_from_slice(pre),
            Activation::Relu => {
                for (o, &p) in out.iter_mut().zip(pre) {
                    *o = if p > 0.0 { p } else { 0.0 };
                }
            }
            Activation::Tanh => {
                for (o, &p) in out.iter_mut().zip(pre) {
                    *o = p.tanh();
                }
            }
        }
    }

    /// `d_pre = d_out * act'`, derivative evaluated from cached pre/post
    /// activations.
    fn backprop(self, d_out: &[f64], pre: &[f64], out: &[f64], d_pre: &mut [f64]) {
        match self {
            Activation::Linear => d_pre.copy_from_slice(d_out),
            Activation::Relu => {
                for ((d, &go), &p) in d_pre.iter_mut().zip(d_out).zip(pre) {
                    *d = if p > 0.0 { go } else { 0.0 };
                }
            }
            Activation::Tanh => {
                for ((d, &go), &y) in d_pre.iter_mut().zip(d_out).zip(out) {
                    *d = go * (1.0 - y * y);
                }
            }
        }
    }
}

/// One hidden layer in a [`NetworkSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { width: usize, activation: Activation },
    Lstm { width: usize },
}

/// Declarative network description: hidden layers plus a final dense output
/// layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub output_dim: usize,
    pub output_activation: Activation,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(CoreError::Config("network input/output dims must be positive".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let w = match l {
                LayerSpec::Dense { width, .. } => *width,
                LayerSpec::Lstm { width } => *width,
            };
            if w == 0 {
                return Err(CoreError::Config(format!("layer {i} has zero width")));
            }
        }
        Ok(())
    }
}

// Compiled layer: dimensions plus positional parameter indices.
#[derive(Debug, Clone)]
enum PlanLayer {
    Dense { w: usize, b: usize, in_dim: usize, out_dim: usize, act: Activation },
    Lstm { wx: usize, wh: usize, b: usize, in_dim: usize, units: usize },
}

/// Recurrent (hidden, cell) state for every LSTM layer of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Vec<Vec<f64>>,
    pub cell: Vec<Vec<f64>>,
}

impl RecurrentState {
    pub fn zero(&mut self) {
        for h in &mut self.hidden {
            h.iter_mut().for_each(|v| *v = 0.0);
        }
        for c in &mut self.cell {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// A compiled network: layer plan with resolved parameter positions.
/// Parameters themselves stay in a [`ParameterSet`] so targets, checkpoints
/// and soft updates can treat them uniformly.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    plan: Vec<PlanLayer>,
    param_names: Vec<(String, Vec<usize>)>,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut plan = Vec::new();
        let mut names: Vec<(String, Vec<usize>)> = Vec::new();
        let mut in_dim = spec.input_dim;
        let mut next = 0usize;
        for (li, layer) in spec.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { width, activation } => {
                    names.push((format!("l{li}.w"), vec![in_dim, width]));
                    names.push((format!("l{li}.b"), vec![width]));
                    plan.push(PlanLayer::Dense {
                        w: next,
                        b: next + 1,
                        in_dim,
                        out_dim: width,
                        act: activation,
                    });
                    next += 2;
                    in_dim = width;
                }
                LayerSpec::Lstm { width } => {
                    names.push((format!("l{li}.wx"), vec![in_dim, 4 * width]));
                    names.push((format!("l{li}.wh"), vec![width, 4 * width]));
                    names.push((format!("l{li}.b"), vec![4 * width]));
                    plan.push(PlanLayer::Lstm {
                        wx: next,
                        wh: next + 1,
                        b: next + 2,
                        in_dim,
                        units: width,
                    });
                    next += 3;
                    in_dim = width;
                }
            }
        }
        names.push(("out.w".into(), vec![in_dim, spec.output_dim]));
        names.push(("out.b".into(), vec![spec.output_dim]));
        plan.push(PlanLayer::Dense {
            w: next,
            b: next + 1,
            in_dim,
            out_dim: spec.output_dim,
            act: spec.output_activation,
        });
        Ok(Network { spec, plan, param_names: names })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    /// Canonical `(name, shape)` list in creation order.
    pub fn param_layout(&self) -> &[(String, Vec<usize>)] {
        &self.param_names
    }

    /// Fresh parameters: uniform fan-in initialization (`±1/√fan_in` per
    /// tensor), with the output layer additionally scaled by `final_scale`.
    pub fn init_params(&self, rng: &mut impl Rng, final_scale: f64) -> ParameterSet {
        let mut ps = ParameterSet::new();
        let last = self.param_names.len();
        for (idx, (name, shape)) in self.param_names.iter().enumerate() {
            // weights: fan_in = rows; biases: inherit the preceding weight
            // tensor's fan_in so the whole layer shares one bound
            let fan_in = if shape.len() == 2 {
                shape[0]
            } else {
                self.param_names[idx - 1].1[0]
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if idx >= last - 2 { final_scale } else { 1.0 };
            let n: usize = shape.iter().product();
            let values: Vec<f64> =
                (0..n).map(|_| rng.gen_range(-bound..bound) * scale).collect();
            ps.add(name, shape.clone(), values).expect("canonical layout is unique");
        }
        ps
    }

    /// Verifies that `params` matches this network's canonical layout.
    pub fn check_params(&self, params: &ParameterSet) -> Result<()> {
        if params.len() != self.param_names.len() {
            return Err(CoreError::Shape(format!(
                "parameter count mismatch: set has {}, network expects {}",
                params.len(),
                self.param_names.len()
            )));
        }
        for (i, (name, shape)) in self.param_names.iter().enumerate() {
            let p = params.at(i);
            if &p.name != name || &p.shape != shape {
                return Err(CoreError::Shape(format!(
                    "parameter {i} mismatch: set has {:?} {:?}, network expects {name:?} {shape:?}",
                    p.name, p.shape
                )));
            }
        }
        Ok(())
    }

    /// Zeroed recurrent state sized for this network.
    pub fn zero_state(&self) -> RecurrentState {
        let mut hidden = Vec::new();
        for l in &self.plan {
            if let PlanLayer::Lstm { units, .. } = l {
                hidden.push(vec![0.0; *units]);
            }
        }
        RecurrentState { cell: hidden.clone(), hidden }
    }

    /// Single-step forward for rollouts: advances `state` in place and
    /// returns the output vector.  No cache is built.
    pub fn forward_step(
        &self,
        params: &ParameterSet,
        x: &[f64],
        state: &mut RecurrentState,
    ) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.spec.input_dim);
        let mut cur = x.to_vec();
        let mut lstm_idx = 0usize;
        for layer in &self.plan {
            match *layer {
                PlanLayer::Dense { w, b, in_dim, out_dim, act } => {
                    let mut pre = params.at(b).values.clone();
                    mat::matmul_acc(&mut pre, &cur, &params.at(w).values, 1, in_dim, out_dim);
                    let mut out = vec![0.0; out_dim];
                    act.apply(&pre, &mut out);
                    cur = out;
                }
                PlanLayer::Lstm { wx, wh, b, in_dim, units } => {
                    let mut z = params.at(b).values.clone();
                    mat::matmul_acc(&mut z, &cur, &params.at(wx).values, 1, in_dim, 4 * units);
                    mat::matmul_acc(
                        &mut z,
                        &state.hidden[lstm_idx],
                        &params.at(wh).values,
                        1,
                        units,
                        4 * units,
                    );
                    let mut h = vec![0.0; units];
                    for u in 0..units {
                        let i = sigmoid(z[u]);
                        let f = sigmoid(z[units + u]);
                        let g = z[2 * units + u].tanh();
                        let o = sigmoid(z[3 * units + u]);
                        let c = f * state.cell[lstm_idx][u] + i * g;
                        state.cell[lstm_idx][u] = c;
                        h[u] = o * c.tanh();
                    }
                    state.hidden[lstm_idx] = h.clone();
                    cur = h;
                    lstm_idx += 1;
                }
            }
        }
        cur
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ─── Sequence forward/backward with cache ────────────────────────────────

#[derive(Debug, Clone, Default)]
struct DenseCache {
    pre: Vec<f64>,
    out: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct LstmCache {
    // all seq_len × units, time-major
    gate_i: Vec<f64>,
    gate_f: Vec<f64>,
    gate_g: Vec<f64>,
    gate_o: Vec<f64>,
    cell: Vec<f64>,
    tanh_c: Vec<f64>,
    hidden: Vec<f64>,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Dense(DenseCache),
    Lstm(LstmCache),
}

/// Reusable forward cache + backward scratch for one network.  Allocate once
/// and reuse across updates; buffers are resized on demand.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    seq_len: usize,
    input: Vec<f64>,
    layers: Vec<LayerCache>,
    // backward scratch
    d_cur: Vec<f64>,
    d_prev: Vec<f64>,
    d_pre: Vec<f64>,
    w_t: Vec<f64>,
    d_input: Vec<f64>,
}

impl ForwardCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Network output for the cached forward pass, time-major
    /// `seq_len × output_dim`.
    pub fn output(&self) -> &[f64] {
        match self.layers.last() {
            Some(LayerCache::Dense(d)) => &d.out,
            _ => &[],
        }
    }

    /// Input gradient of the last backward pass (`seq_len × input_dim`);
    /// empty if input gradients were not requested.
    pub fn input_grad(&self) -> &[f64] {
        &self.d_input
    }
}

impl Network {
    /// Sequence forward pass.  `input` is time-major `seq_len × input_dim`;
    /// recurrent layers start from zero state at t = 0 and carry state across
    /// the whole sequence.  Returns the output slice (also retrievable via
    /// [`ForwardCache::output`]).
    pub fn forward_seq<'c>(
        &self,
        params: &ParameterSet,
        input: &[f64],
        seq_len: usize,
        cache: &'c mut ForwardCache,
    ) -> &'c [f64] {
        debug_assert_eq!(input.len(), seq_len * self.spec.input_dim);
        cache.seq_len = seq_len;
        cache.input.clear();
        cache.input.extend_from_slice(input);
        let layout_matches = cache.layers.len() == self.plan.len()
            && cache.layers.iter().zip(&self.plan).all(|(c, p)| {
                matches!(
                    (c, p),
                    (LayerCache::Dense(_), PlanLayer::Dense { .. })
                        | (LayerCache::Lstm(_), PlanLayer::Lstm { .. })
                )
            });
        if !layout_matches {
            cache.layers = self
                .plan
                .iter()
                .map(|l| match l {
                    PlanLayer::Dense { .. } => LayerCache::Dense(DenseCache::default()),
                    PlanLayer::Lstm { .. } => LayerCache::Lstm(LstmCache::default()),
                })
                .collect();
        }

        let mut prev_is_input = true;
        for (li, layer) in self.plan.iter().enumerate() {
            // Split so we can read the previous layer's output while writing
            // this layer's cache.
            let (done, rest) = cache.layers.split_at_mut(li);
            let cur_in: &[f64] = if prev_is_input {
                &cache.input
            } else {
                match &done[li - 1] {
                    LayerCache::Dense(d) => &d.out,
                    LayerCache::Lstm(l) => &l.hidden,
                }
            };
            match (layer, &mut rest[0]) {
                (&PlanLayer::Dense { w, b, in_dim, out_dim, act }, LayerCache::Dense(dc)) => {
                    dc.pre.clear();
                    dc.pre.resize(seq_len * out_dim, 0.0);
                    // bias rows then accumulate the matmul
                    for t in 0..seq_len {
                        dc.pre[t * out_dim..(t + 1) * out_dim]
                            .copy_from_slice(&params.at(b).values);
                    }
                    mat::matmul_acc(&mut dc.pre, cur_in, &params.at(w).values, seq_len, in_dim, out_dim);
                    dc.out.clear();
                    dc.out.resize(seq_len * out_dim, 0.0);
                    act.apply(&dc.pre, &mut dc.out);
                }
                (&PlanLayer::Lstm { wx, wh, b, in_dim, units }, LayerCache::Lstm(lc)) => {
                    let n = seq_len * units;
                    for buf in [
                        &mut lc.gate_i,
                        &mut lc.gate_f,
                        &mut lc.gate_g,
                        &mut lc.gate_o,
                        &mut lc.cell,
                        &mut lc.tanh_c,
                        &mut lc.hidden,
                    ] {
                        buf.clear();
                        buf.resize(n, 0.0);
                    }
                    let wx_v = &params.at(wx).values;
                    let wh_v = &params.at(wh).values;
                    let b_v = &params.at(b).values;
                    let mut z = vec![0.0; 4 * units];
                    let mut h_prev = vec![0.0; units];
                    let mut c_prev = vec![0.0; units];
                    for t in 0..seq_len {
                        z.copy_from_slice(b_v);
                        let x_t = &cur_in[t * in_dim..(t + 1) * in_dim];
                        mat::matmul_acc(&mut z, x_t, wx_v, 1, in_dim, 4 * units);
                        mat::matmul_acc(&mut z, &h_prev, wh_v, 1, units, 4 * units);
                        for u in 0..units {
                            let ig = sigmoid(z[u]);
                            let fg = sigmoid(z[units + u]);
                            let gg = z[2 * units + u].tanh();
                            let og = sigmoid(z[3 * units + u]);
                            let c = fg * c_prev[u] + ig * gg;
                            let tc = c.tanh();
                            let h = og * tc;
                            let at = t * units + u;
                            lc.gate_i[at] = ig;
                            lc.gate_f[at] = fg;
                            lc.gate_g[at] = gg;
                            lc.gate_o[at] = og;
                            lc.cell[at] = c;
                            lc.tanh_c[at] = tc;
                            lc.hidden[at] = h;
                        }
                        h_prev.copy_from_slice(&lc.hidden[t * units..(t + 1) * units]);
                        c_prev.copy_from_slice(&lc.cell[t * units..(t + 1) * units]);
                    }
                }
                _ => unreachable!("cache layout always mirrors the plan"),
            }
            prev_is_input = false;
        }
        cache.output()
    }

    /// Backward pass through the cached forward.  `d_output` is time-major
    /// `seq_len × output_dim` holding ∂L/∂output.
    ///
    /// * `accumulate_param_grads` — add parameter gradients into
    ///   `params.grad` (callers zero them beforehand),
    /// * `want_input_grads` — also compute ∂L/∂input, retrievable via
    ///   [`ForwardCache::input_grad`].
    pub fn backward_seq(
        &self,
        params: &mut ParameterSet,
        cache: &mut ForwardCache,
        d_output: &[f64],
        accumulate_param_grads: bool,
        want_input_grads: bool,
    ) {
        let seq_len = cache.seq_len;
        debug_assert_eq!(d_output.len(), seq_len * self.spec.output_dim);

        // d_cur holds ∂L/∂(current layer output) while walking backwards.
        cache.d_cur.clear();
        cache.d_cur.extend_from_slice(d_output);

        for li in (0..self.plan.len()).rev() {
            let in_is_input = li == 0;
            // Previous layer output = this layer's input.
            let (done, rest) = cache.layers.split_at(li);
            let cur_in: &[f64] = if in_is_input {
                &cache.input
            } else {
                match &done[li - 1] {
                    LayerCache::Dense(d) => &d.out,
                    LayerCache::Lstm(l) => &l.hidden,
                }
            };
            let need_dx = !in_is_input || want_input_grads;

            match (&self.plan[li], &rest[0]) {
                (&PlanLayer::Dense { w, b, in_dim, out_dim, act }, LayerCache::Dense(dc)) => {
                    cache.d_pre.clear();
                    cache.d_pre.resize(seq_len * out_dim, 0.0);
                    act.backprop(&cache.d_cur, &dc.pre, &dc.out, &mut cache.d_pre);
                    if accumulate_param_grads {
                        // lift the two grads out to appease the borrow checker
                        let mut gw = std::mem::take(&mut params.at_mut(w).grad);
                        mat::matmul_at_b_acc(&mut gw, cur_in, &cache.d_pre, seq_len, in_dim, out_dim);
                        params.at_mut(w).grad = gw;
                        let mut gb = std::mem::take(&mut params.at_mut(b).grad);
                        mat::col_sum_acc(&mut gb, &cache.d_pre, seq_len, out_dim);
                        params.at_mut(b).grad = gb;
                    }
                    if need_dx {
                        mat::transpose_into(&mut cache.w_t, &params.at(w).values, in_dim, out_dim);
                        cache.d_prev.clear();
                        cache.d_prev.resize(seq_len * in_dim, 0.0);
                        mat::matmul_acc(
                            &mut cache.d_prev,
                            &cache.d_pre,
                            &cache.w_t,
                            seq_len,
                            out_dim,
                            in_dim,
                        );
                        std::mem::swap(&mut cache.d_cur, &mut cache.d_prev);
                    }
                }
                (&PlanLayer::Lstm { wx, wh, b, in_dim, units }, LayerCache::Lstm(lc)) => {
                    let mut dwx = vec![0.0; in_dim * 4 * units];
                    let mut dwh = vec![0.0; units * 4 * units];
                    let mut db = vec![0.0; 4 * units];
                    let mut wx_t = Vec::new();
                    let mut wh_t = Vec::new();
                    mat::transpose_into(&mut wx_t, &params.at(wx).values, in_dim, 4 * units);
                    mat::transpose_into(&mut wh_t, &params.at(wh).values, units, 4 * units);

                    let mut dx_all = vec![0.0; seq_len * in_dim];
                    let mut dh_next = vec![0.0; units];
                    let mut dc_next = vec![0.0; units];
                    let mut dz = vec![0.0; 4 * units];
                    for t in (0..seq_len).rev() {
                        let at = t * units;
                        for u in 0..units {
                            let dh = cache.d_cur[at + u] + dh_next[u];
                            let ig = lc.gate_i[at + u];
                            let fg = lc.gate_f[at + u];
                            let gg = lc.gate_g[at + u];
                            let og = lc.gate_o[at + u];
                            let tc = lc.tanh_c[at + u];
                            let c_prev = if t == 0 { 0.0 } else { lc.cell[at - units + u] };
                            let d_o = dh * tc;
                            let d_c = dh * og * (1.0 - tc * tc) + dc_next[u];
                            let d_f = d_c * c_prev;
                            let d_i = d_c * gg;
                            let d_g = d_c * ig;
                            dc_next[u] = d_c * fg;
                            dz[u] = d_i * ig * (1.0 - ig);
                            dz[units + u] = d_f * fg * (1.0 - fg);
                            dz[2 * units + u] = d_g * (1.0 - gg * gg);
                            dz[3 * units + u] = d_o * og * (1.0 - og);
                        }
                        let x_t = &cur_in[t * in_dim..(t + 1) * in_dim];
                        if accumulate_param_grads {
                            mat::matmul_at_b_acc(&mut dwx, x_t, &dz, 1, in_dim, 4 * units);
                            db.iter_mut().zip(&dz).for_each(|(d, &z)| *d += z);
                        }
                        if t > 0 {
                            let h_prev = &lc.hidden[(t - 1) * units..t * units];
                            if accumulate_param_grads {
                                mat::matmul_at_b_acc(&mut dwh, h_prev, &dz, 1, units, 4 * units);
                            }
                        }
                        // dh_prev and dx via the transposed weights
                        dh_next.iter_mut().for_each(|v| *v = 0.0);
                        mat::matmul_acc(&mut dh_next, &dz, &wh_t, 1, 4 * units, units);
                        if need_dx {
                            mat::matmul_acc(
                                &mut dx_all[t * in_dim..(t + 1) * in_dim],
                                &dz,
                                &wx_t,
                                1,
                                4 * units,
                                in_dim,
                            );
                        }
                    }
                    if accumulate_param_grads {
                        let gwx = &mut params.at_mut(wx).grad;
                        gwx.iter_mut().zip(&dwx).for_each(|(g, &d)| *g += d);
                        let gwh = &mut params.at_mut(wh).grad;
                        gwh.iter_mut().zip(&dwh).for_each(|(g, &d)| *g += d);
                        let gb = &mut params.at_mut(b).grad;
                        gb.iter_mut().zip(&db).for_each(|(g, &d)| *g += d);
                    }
                    if need_dx {
                        cache.d_cur.clear();
                        cache.d_cur.extend_from_slice(&dx_all);
                    }
                }
                _ => unreachable!("cache layout always mirrors the plan"),
            }
        }
        if want_input_grads {
            cache.d_input.clear();
            cache.d_input.extend_from_slice(&cache.d_cur);
        } else {
            cache.d_input.clear();
        }
    }
}

// ─── Checkpoints ─────────────────────────────────────────────────────────

/// Writes `params` to `path` in the versioned binary checkpoint format:
/// a manifest of `{name, shape, byte offset}` entries followed by the raw
/// little-endian `f64` payload.  Save → load → save is byte-identical.
pub fn save_checkpoint(params: &ParameterSet, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    let mut offset = 0u64;
    for p in params.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[p.shape.len() as u8])?;
        for &d in &p.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&offset.to_le_bytes())?;
        offset += (p.values.len() * 8) as u64;
    }
    w.write_all(&offset.to_le_bytes())?;
    for p in params.iter() {
        for v in &p.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_corrupt(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| CoreError::Checkpoint(format!("truncated checkpoint while reading {what}")))
}

/// Reads a checkpoint back into a fresh [`ParameterSet`] (gradients zeroed).
pub fn load_checkpoint(path: &Path) -> Result<ParameterSet> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    read_exact_or_corrupt(&mut r, &mut magic, "magic")?;
    if &magic != CKPT_MAGIC {
        return Err(CoreError::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let mut u16b = [0u8; 2];
    read_exact_or_corrupt(&mut r, &mut u16b, "version")?;
    let version = u16::from_le_bytes(u16b);
    if version != CKPT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported checkpoint format version {version} (expected {CKPT_VERSION})"
        )));
    }
    let mut u32b = [0u8; 4];
    read_exact_or_corrupt(&mut r, &mut u32b, "parameter count")?;
    let count = u32::from_le_bytes(u32b) as usize;
    let mut u64b = [0u8; 8];

    let mut entries: Vec<(String, Vec<usize>, u64)> = Vec::with_capacity(count);
    for i in 0..count {
        read_exact_or_corrupt(&mut r, &mut u16b, "name length")?;
        let name_len = u16::from_le_bytes(u16b) as usize;
        let mut name = vec![0u8; name_len];
        read_exact_or_corrupt(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name)
            .map_err(|_| CoreError::Checkpoint(format!("parameter {i}: name is not utf-8")))?;
        let mut ndim = [0u8; 1];
        read_exact_or_corrupt(&mut r, &mut ndim, "rank")?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            read_exact_or_corrupt(&mut r, &mut u64b, "dimension")?;
            shape.push(u64::from_le_bytes(u64b) as usize);
        }
        read_exact_or_corrupt(&mut r, &mut u64b, "offset")?;
        entries.push((name, shape, u64::from_le_bytes(u64b)));
    }
    read_exact_or_corrupt(&mut r, &mut u64b, "payload length")?;
    let payload_len = u64::from_le_bytes(u64b);

    let expect: u64 = entries
        .iter()
        .map(|(_, s, _)| (s.iter().product::<usize>() * 8) as u64)
        .sum();
    if payload_len != expect {
        return Err(CoreError::Checkpoint(format!(
            "manifest/payload size mismatch: payload says {payload_len} bytes, shapes need {expect}"
        )));
    }
    let mut running = 0u64;
    for (name, shape, off) in &entries {
        if *off != running {
            return Err(CoreError::Checkpoint(format!(
                "parameter {name:?}: offset {off} does not match running total {running}"
            )));
        }
        running += (shape.iter().product::<usize>() * 8) as u64;
    }

    let mut ps = ParameterSet::new();
    for (name, shape, _) in entries {
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        let mut fb = [0u8; 8];
        for _ in 0..n {
            read_exact_or_corrupt(&mut r, &mut fb, "payload")?;
            values.push(f64::from_le_bytes(fb));
        }
        ps.add(&name, shape, values)?;
    }
    // anything left over is corruption too
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(CoreError::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(ps)
}

/// Loads a checkpoint and verifies it matches the network's canonical
/// layout (names and shapes), so it can be used with that network directly.
pub fn load_checkpoint_for(network: &Network, path: &Path) -> Result<ParameterSet> {
    let ps = load_checkpoint(path)?;
    network.check_params(&ps)?;
    Ok(ps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_net(act: Activation) -> Network {
        Network::new(NetworkSpec {
            input_dim: 3,
            layers: vec![LayerSpec::Dense { width: 5, activation: act }],
            output_dim: 2,
            output_activation: Activation::Linear,
        })
        .unwrap()
    }

    fn lstm_net() -> Network {
        Network::new(NetworkSpec {
            input_dim: 3,
            layers: vec![LayerSpec::Lstm { width: 4 }],
            output_dim: 2,
            output_activation: Activation::Linear,
        })
        .unwrap()
    }

    /// Scalar loss L = Σ c_i · y_i over all sequence outputs, with fixed
    /// random coefficients — exercises every output path.
    fn loss_and_coeffs(out: &[f64], rng: &mut ChaCha8Rng) -> (f64, Vec<f64>) {
        let coeffs: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = out.iter().zip(&coeffs).map(|(o, c)| o * c).sum();
        (loss, coeffs)
    }

    fn numeric_vs_analytic(net: &Network, seq_len: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = net.init_params(&mut rng, 1.0);
        let input: Vec<f64> =
            (0..seq_len * net.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut cache = ForwardCache::new();
        net.forward_seq(&params, &input, seq_len, &mut cache);
        let mut coeff_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let (_, coeffs) = loss_and_coeffs(cache.output(), &mut coeff_rng);
        params.zero_grads();
        net.backward_seq(&mut params, &mut cache, &coeffs, true, false);
        let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.clone()).collect();

        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for pi in 0..params.len() {
            for i in 0..params.at(pi).values.len() {
                let orig = params.at(pi).values[i];
                params.at_mut(pi).values[i] = orig + eps;
                net.forward_seq(&params, &input, seq_len, &mut cache);
                let plus: f64 =
                    cache.output().iter().zip(&coeffs).map(|(o, c)| o * c).sum();
                params.at_mut(pi).values[i] = orig - eps;
                net.forward_seq(&params, &input, seq_len, &mut cache);
                let minus: f64 =
                    cache.output().iter().zip(&coeffs).map(|(o, c)| o * c).sum();
                params.at_mut(pi).values[i] = orig;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[pi][i];
                let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = dense_net(Activation::Relu);
        let mut params = net.init_params(&mut ChaCha8Rng::seed_from_u64(0), 1.0);
        for i in 0..params.len() {
            params.at_mut(i).values.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut state = net.zero_state();
        let out = net.forward_step(&params, &[1.0, -2.0, 3.0], &mut state);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let net = Network::new(NetworkSpec {
            input_dim: 3,
            layers: vec![],
            output_dim: 3,
            output_activation: Activation::Linear,
        })
        .unwrap();
        let mut params = net.init_params(&mut ChaCha8Rng::seed_from_u64(0), 1.0);
        let w = params.get_mut("out.w").unwrap();
        w.values.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..3 {
            w.values[i * 3 + i] = 1.0;
        }
        params.get_mut("out.b").unwrap().values.iter_mut().for_each(|v| *v = 0.0);
        let mut state = net.zero_state();
        let out = net.forward_step(&params, &[0.5, -1.5, 2.0], &mut state);
        assert_eq!(out, vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn forward_step_matches_forward_seq() {
        // rollout path and training path must agree on the same sequence
        let net = Network::new(NetworkSpec {
            input_dim: 3,
            layers: vec![
                LayerSpec::Dense { width: 6, activation: Activation::Relu },
                LayerSpec::Lstm { width: 4 },
            ],
            output_dim: 1,
            output_activation: Activation::Tanh,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = net.init_params(&mut rng, 1.0);
        let seq_len = 5;
        let input: Vec<f64> = (0..seq_len * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut cache = ForwardCache::new();
        net.forward_seq(&params, &input, seq_len, &mut cache);
        let seq_out: Vec<f64> = cache.output().to_vec();

        let mut state = net.zero_state();
        for t in 0..seq_len {
            let out = net.forward_step(&params, &input[t * 3..(t + 1) * 3], &mut state);
            assert!(
                (out[0] - seq_out[t]).abs() < 1e-12,
                "step {t}: {} vs {}",
                out[0],
                seq_out[t]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_dense() {
        for (seed, act) in
            [(1, Activation::Relu), (2, Activation::Tanh), (3, Activation::Linear)]
        {
            let net = dense_net(act);
            let worst = numeric_vs_analytic(&net, 4, seed);
            assert!(worst < 1e-4, "{act:?}: worst rel err {worst}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_lstm() {
        let net = lstm_net();
        let worst = numeric_vs_analytic(&net, 3, 7);
        assert!(worst < 1e-4, "lstm worst rel err {worst}");
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let net = Network::new(NetworkSpec {
            input_dim: 5,
            layers: vec![LayerSpec::Dense { width: 6, activation: Activation::Relu }],
            output_dim: 1,
            output_activation: Activation::Linear,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = net.init_params(&mut rng, 1.0);
        let seq_len = 3;
        let mut input: Vec<f64> = (0..seq_len * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d_out = vec![1.0; seq_len];

        let mut cache = ForwardCache::new();
        net.forward_seq(&params, &input, seq_len, &mut cache);
        net.backward_seq(&mut params, &mut cache, &d_out, false, true);
        let analytic = cache.input_grad().to_vec();

        let eps = 1e-5;
        for i in 0..input.len() {
            let orig = input[i];
            input[i] = orig + eps;
            net.forward_seq(&params, &input, seq_len, &mut cache);
            let plus: f64 = cache.output().iter().sum();
            input[i] = orig - eps;
            net.forward_seq(&params, &input, seq_len, &mut cache);
            let minus: f64 = cache.output().iter().sum();
            input[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (analytic[i] - numeric).abs()
                / (analytic[i].abs() + numeric.abs()).max(1e-8);
            assert!(err < 1e-4, "input grad {i}: {} vs {numeric}", analytic[i]);
        }
    }

    #[test]
    fn param_grads_untouched_when_not_accumulating() {
        let net = dense_net(Activation::Tanh);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = net.init_params(&mut rng, 1.0);
        params.zero_grads();
        let input = vec![0.1, 0.2, 0.3];
        let mut cache = ForwardCache::new();
        net.forward_seq(&params, &input, 1, &mut cache);
        net.backward_seq(&mut params, &mut cache, &[1.0, 1.0], false, true);
        assert!(params.iter().all(|p| p.grad.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn clip_leaves_small_gradients_alone_and_scales_large() {
        let mut ps = ParameterSet::new();
        ps.add("a", vec![2], vec![0.0, 0.0]).unwrap();
        ps.get_mut("a").unwrap().grad = vec![0.3, 0.4]; // norm 0.5
        let (norm, scale) = clip_global_norm(&mut ps, 0.5);
        assert!((norm - 0.5).abs() < 1e-15);
        assert_eq!(scale, 1.0);
        assert_eq!(ps.get("a").unwrap().grad, vec![0.3, 0.4]);

        ps.get_mut("a").unwrap().grad = vec![3.0, 4.0]; // norm 5
        let (norm, scale) = clip_global_norm(&mut ps, 0.5);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((scale - 0.1).abs() < 1e-12);
        let g = &ps.get("a").unwrap().grad;
        assert!((g[0] - 0.3).abs() < 1e-12 && (g[1] - 0.4).abs() < 1e-12);

        // zero gradients: no-op, scale 1
        ps.get_mut("a").unwrap().grad = vec![0.0, 0.0];
        let (norm, scale) = clip_global_norm(&mut ps, 0.5);
        assert_eq!(norm, 0.0);
        assert_eq!(scale, 1.0);
    }

    #[test]
    fn adam_step_magnitude_approaches_lr_for_constant_gradient() {
        let mut ps = ParameterSet::new();
        ps.add("w", vec![1], vec![1.0]).unwrap();
        let mut opt = Optimizer::adam();
        let lr = 1e-3;
        let mut prev = 1.0;
        for step in 0..50 {
            ps.get_mut("w").unwrap().grad = vec![0.7];
            opt.step(&mut ps, lr).unwrap();
            let cur = ps.get("w").unwrap().values[0];
            let delta = prev - cur;
            if step > 5 {
                assert!((delta - lr).abs() < lr * 0.02, "step {step}: delta {delta}");
            }
            prev = cur;
        }
    }

    #[test]
    fn sgd_step_is_plain_descent() {
        let mut ps = ParameterSet::new();
        ps.add("w", vec![2], vec![1.0, -2.0]).unwrap();
        ps.get_mut("w").unwrap().grad = vec![0.5, -0.25];
        Optimizer::sgd().step(&mut ps, 0.1).unwrap();
        let v = &ps.get("w").unwrap().values;
        assert!((v[0] - 0.95).abs() < 1e-15);
        assert!((v[1] + 1.975).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let net = dense_net(Activation::Relu);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = net.init_params(&mut rng, 1.0);
        let before = params.clone();
        for p_idx in 0..params.len() {
            params.at_mut(p_idx).grad.iter_mut().for_each(|g| *g = 1.0);
        }
        Optimizer::adam().step(&mut params, 0.0).unwrap();
        assert!(params.bitwise_eq(&before));
    }

    #[test]
    fn non_finite_gradient_is_reported_with_name() {
        let mut ps = ParameterSet::new();
        ps.add("layer.weight", vec![1], vec![1.0]).unwrap();
        ps.get_mut("layer.weight").unwrap().grad = vec![f64::NAN];
        let err = Optimizer::sgd().step(&mut ps, 0.1).unwrap_err();
        assert!(err.to_string().contains("layer.weight"), "{err}");
    }

    #[test]
    fn soft_update_blends_and_converges() {
        let net = dense_net(Activation::Relu);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let source = net.init_params(&mut rng, 1.0);
        let mut target = net.init_params(&mut rng, 1.0);

        // tau = 0: no change; tau = 1: copy
        let frozen = target.clone();
        soft_update(&mut target, &source, 0.0).unwrap();
        assert!(target.bitwise_eq(&frozen));
        soft_update(&mut target, &source, 1.0).unwrap();
        for (t, s) in target.iter().zip(source.iter()) {
            assert_eq!(t.values, s.values);
        }
    }

    #[test]
    fn duplicate_parameter_names_rejected() {
        let mut ps = ParameterSet::new();
        ps.add("x", vec![1], vec![0.0]).unwrap();
        assert!(ps.add("x", vec![1], vec![0.0]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = Network::new(NetworkSpec {
            input_dim: 4,
            layers: vec![
                LayerSpec::Dense { width: 7, activation: Activation::Relu },
                LayerSpec::Lstm { width: 3 },
            ],
            output_dim: 2,
            output_activation: Activation::Tanh,
        })
        .unwrap();
        let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(21), 0.1);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&params, &p1).unwrap();
        let loaded = load_checkpoint_for(&net, &p1).unwrap();
        assert!(loaded.bitwise_eq(&params));
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_checkpoint_is_corrupt() {
        let net = dense_net(Activation::Relu);
        let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(2), 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, CoreError::Checkpoint(_)), "{err}");
    }

    #[test]
    fn mismatched_network_is_a_shape_error() {
        let net = dense_net(Activation::Relu);
        let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(2), 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let other = lstm_net();
        let err = load_checkpoint_for(&other, &path).unwrap_err();
        assert!(matches!(err, CoreError::Shape(_)), "{err}");
    }

    #[test]
    fn init_scales_output_layer() {
        let net = dense_net(Activation::Relu);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ps = net.init_params(&mut rng, 0.0);
        assert!(ps.get("out.w").unwrap().values.iter().all(|&v| v == 0.0));
        assert!(ps.get("out.b").unwrap().values.iter().all(|&v| v == 0.0));
        assert!(ps.get("l0.w").unwrap().values.iter().any(|&v| v != 0.0));
        // hidden layer respects the fan-in bound
        let bound = 1.0 / (3.0f64).sqrt();
        assert!(ps.get("l0.w").unwrap().values.iter().all(|&v| v.abs() < bound));
    }
}
