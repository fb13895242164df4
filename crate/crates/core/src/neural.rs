//! A small fully connected Q-network with hand-written backpropagation.
//!
//! The trunk is a stack of dense layers with a shared activation; the head is
//! either a single linear layer producing one value per action, or a dueling
//! pair of linear layers combined as `Q = V + A - mean(A)`.
//!
//! # Checkpoint layout
//!
//! Little-endian throughout:
//!
//! ```text
//! magic        4 bytes "CSQN"
//! version      u32     1
//! activation   u8      0 = tanh, 1 = identity
//! head         u8      0 = standard, 1 = dueling
//! input        u32
//! actions      u32
//! n_hidden     u32, then n_hidden × u32 widths
//! layers       for each layer in order (trunk..., head | value, advantage):
//!              rows u32, cols u32, rows*cols f64 weights (row-major), rows f64 bias
//! ```

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Rng;

const MAGIC: &[u8; 4] = b"CSQN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    Standard,
    Dueling,
}

/// Layer widths and head type of a Q-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub actions: usize,
    pub activation: Activation,
    pub head: HeadKind,
}

impl Architecture {
    /// 200 → 64 → 32 → 200 with tanh hidden units.
    pub fn interview(head: HeadKind) -> Self {
        Self {
            input: 200,
            hidden: vec![64, 32],
            actions: 200,
            activation: Activation::Tanh,
            head,
        }
    }
}

/// Dense layer `y = W x + b`, `W` stored row-major as `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Self {
            rows,
            cols,
            weights: (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect(),
            bias: vec![0.0; rows],
        }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.cols..(r + 1) * self.cols]
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.bias);
        // inputs are mostly sparse binary vectors
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for (r, o) in out.iter_mut().enumerate() {
                *o += self.weights[r * self.cols + j] * xj;
            }
        }
    }

    /// Adds `dy ⊗ x` to the weight gradient and `dy` to the bias gradient.
    fn accumulate(&mut self, dy: &[f64], x: &[f64]) {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            self.bias[r] += g;
            let row = &mut self.weights[r * self.cols..(r + 1) * self.cols];
            for (w, &xj) in row.iter_mut().zip(x) {
                *w += g * xj;
            }
        }
    }

    /// `Wᵀ dy`
    fn backprop(&self, dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.cols];
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, &w) in dx.iter_mut().zip(self.row(r)) {
                *d += g * w;
            }
        }
        dx
    }

    fn scale(&mut self, s: f64) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Standard(Dense),
    Dueling { value: Dense, advantage: Dense },
}

/// Network parameters. The same type also holds gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    trunk: Vec<Dense>,
    head: Head,
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input; `acts[l + 1]` the output of trunk layer `l`.
    acts: Vec<Vec<f64>>,
    q: Vec<f64>,
}

impl Trace {
    pub fn q(&self) -> &[f64] {
        &self.q
    }
}

impl Mlp {
    fn build(arch: &Architecture, mut make: impl FnMut(usize, usize) -> Dense) -> Self {
        let mut trunk = Vec::with_capacity(arch.hidden.len());
        let mut width = arch.input;
        for &h in &arch.hidden {
            trunk.push(make(h, width));
            width = h;
        }
        let head = match arch.head {
            HeadKind::Standard => Head::Standard(make(arch.actions, width)),
            HeadKind::Dueling => Head::Dueling {
                value: make(1, width),
                advantage: make(arch.actions, width),
            },
        };
        Self {
            arch: arch.clone(),
            trunk,
            head,
        }
    }

    /// Glorot-initialized network.
    pub fn new(arch: &Architecture, rng: &mut Rng) -> Self {
        Self::build(arch, |r, c| Dense::glorot(r, c, rng))
    }

    pub fn zeros(arch: &Architecture) -> Self {
        Self::build(arch, Dense::zeros)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.arch)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn trunk(&self) -> &[Dense] {
        &self.trunk
    }

    /// Named layers in checkpoint order.
    pub fn layers(&self) -> Vec<(String, &Dense)> {
        let mut out: Vec<(String, &Dense)> =
            self.trunk.iter().enumerate().map(|(l, d)| (format!("trunk.{l}"), d)).collect();
        match &self.head {
            Head::Standard(d) => out.push(("head".into(), d)),
            Head::Dueling { value, advantage } => {
                out.push(("value".into(), value));
                out.push(("advantage".into(), advantage));
            }
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut out: Vec<&mut Dense> = self.trunk.iter_mut().collect();
        match &mut self.head {
            Head::Standard(d) => out.push(d),
            Head::Dueling { value, advantage } => {
                out.push(value);
                out.push(advantage);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, d)| d.weights.len() + d.bias.len()).sum()
    }

    /// All parameters flattened: per layer, weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, d) in self.layers() {
            out.extend_from_slice(&d.weights);
            out.extend_from_slice(&d.bias);
        }
        out
    }

    /// Mutable access to the `idx`-th flattened parameter.
    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for d in self.layers_mut() {
            if idx < d.weights.len() {
                return &mut d.weights[idx];
            }
            idx -= d.weights.len();
            if idx < d.bias.len() {
                return &mut d.bias[idx];
            }
            idx -= d.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .iter()
            .all(|(_, d)| d.weights.iter().chain(&d.bias).all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, s: f64) {
        self.layers_mut().into_iter().for_each(|d| d.scale(s));
    }

    pub fn fill_zero(&mut self) {
        self.scale(0.0);
    }

    /// Overwrites these parameters with `other`'s (same architecture).
    pub fn copy_from(&mut self, other: &Mlp) {
        assert_eq!(self.arch, other.arch, "architecture mismatch");
        self.clone_from(other);
    }

    fn check_input(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.arch.input {
            return Err(Error::Contract(format!(
                "state has {} entries, network expects {}",
                state.len(),
                self.arch.input
            )));
        }
        Ok(())
    }

    /// Forward pass keeping the activations needed by backpropagation.
    pub fn forward_trace(&self, state: &[f64]) -> Result<Trace> {
        self.check_input(state)?;
        let mut acts = Vec::with_capacity(self.trunk.len() + 1);
        acts.push(state.to_vec());
        for layer in &self.trunk {
            let mut out = Vec::with_capacity(layer.rows);
            layer.forward_into(acts.last().unwrap(), &mut out);
            for v in &mut out {
                *v = self.arch.activation.apply(*v);
            }
            acts.push(out);
        }
        let h = acts.last().unwrap();
        let mut q = Vec::with_capacity(self.arch.actions);
        match &self.head {
            Head::Standard(d) => d.forward_into(h, &mut q),
            Head::Dueling { value, advantage } => {
                let mut v = Vec::with_capacity(1);
                value.forward_into(h, &mut v);
                advantage.forward_into(h, &mut q);
                let mean = q.iter().sum::<f64>() / q.len() as f64;
                for a in &mut q {
                    *a = v[0] + *a - mean;
                }
            }
        }
        Ok(Trace { acts, q })
    }

    /// Q-values for every action.
    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(state)?.q)
    }

    /// State value `V(s)` of a dueling network; `None` for a standard head.
    pub fn state_value(&self, state: &[f64]) -> Result<Option<f64>> {
        self.check_input(state)?;
        let Head::Dueling { value, .. } = &self.head else {
            return Ok(None);
        };
        let trace = self.forward_trace(state)?;
        let mut v = Vec::new();
        value.forward_into(trace.acts.last().unwrap(), &mut v);
        Ok(Some(v[0]))
    }

    /// Adds `dloss_dq · ∂q[action]/∂θ` into `grads`.
    pub fn accumulate_gradient(&self, trace: &Trace, action: usize, dloss_dq: f64, grads: &mut Mlp) -> Result<()> {
        if action >= self.arch.actions {
            return Err(Error::Index {
                what: "action",
                index: action,
                len: self.arch.actions,
            });
        }
        if dloss_dq == 0.0 {
            return Ok(());
        }
        let h = trace.acts.last().unwrap();
        let mut dh = match (&self.head, &mut grads.head) {
            (Head::Standard(d), Head::Standard(g)) => {
                let mut dy = vec![0.0; d.rows];
                dy[action] = dloss_dq;
                g.accumulate(&dy, h);
                d.backprop(&dy)
            }
            (
                Head::Dueling { value, advantage },
                Head::Dueling {
                    value: gv,
                    advantage: ga,
                },
            ) => {
                let dv = [dloss_dq];
                gv.accumulate(&dv, h);
                // ∂q_a/∂A_b = δ_ab - 1/|A|
                let n = advantage.rows as f64;
                let mut da = vec![-dloss_dq / n; advantage.rows];
                da[action] += dloss_dq;
                ga.accumulate(&da, h);
                let mut dh = value.backprop(&dv);
                for (x, y) in dh.iter_mut().zip(advantage.backprop(&da)) {
                    *x += y;
                }
                dh
            }
            _ => return Err(Error::Contract("gradient buffer has a different head".into())),
        };
        for l in (0..self.trunk.len()).rev() {
            let out = &trace.acts[l + 1];
            for (g, &y) in dh.iter_mut().zip(out) {
                *g *= self.arch.activation.derivative_from_output(y);
            }
            grads.trunk[l].accumulate(&dh, &trace.acts[l]);
            if l > 0 {
                dh = self.trunk[l].backprop(&dh);
            }
        }
        Ok(())
    }

    /// Gradient of `dloss_dq · q[action]` with respect to every parameter.
    pub fn backward(&self, state: &[f64], action: usize, dloss_dq: f64) -> Result<Mlp> {
        let trace = self.forward_trace(state)?;
        let mut grads = self.zeros_like();
        self.accumulate_gradient(&trace, action, dloss_dq, &mut grads)?;
        Ok(grads)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(match self.arch.activation {
            Activation::Tanh => 0,
            Activation::Identity => 1,
        });
        buf.push(match self.arch.head {
            HeadKind::Standard => 0,
            HeadKind::Dueling => 1,
        });
        let push_u32 = |buf: &mut Vec<u8>, v: usize| buf.extend_from_slice(&(v as u32).to_le_bytes());
        push_u32(&mut buf, self.arch.input);
        push_u32(&mut buf, self.arch.actions);
        push_u32(&mut buf, self.arch.hidden.len());
        for &h in &self.arch.hidden {
            push_u32(&mut buf, h);
        }
        for (_, d) in self.layers() {
            push_u32(&mut buf, d.rows);
            push_u32(&mut buf, d.cols);
            for v in d.weights.iter().chain(&d.bias) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not a Q-network checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported network version {version}")));
        }
        let activation = match r.take(1)?[0] {
            0 => Activation::Tanh,
            1 => Activation::Identity,
            x => return Err(Error::Checkpoint(format!("unknown activation tag {x}"))),
        };
        let head = match r.take(1)?[0] {
            0 => HeadKind::Standard,
            1 => HeadKind::Dueling,
            x => return Err(Error::Checkpoint(format!("unknown head tag {x}"))),
        };
        let input = r.u32()? as usize;
        let actions = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        let hidden = (0..n_hidden).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let arch = Architecture {
            input,
            hidden,
            actions,
            activation,
            head,
        };
        let mut net = Mlp::zeros(&arch);
        for d in net.layers_mut() {
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            if (rows, cols) != (d.rows, d.cols) {
                return Err(Error::Checkpoint(format!(
                    "layer shape {rows}x{cols} does not match {}x{}",
                    d.rows, d.cols
                )));
            }
            for v in d.weights.iter_mut().chain(d.bias.iter_mut()) {
                *v = r.f64()?;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after network".into()));
        }
        Ok(net)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated network checkpoint".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Deep copy used as the frozen target network.
pub fn clone_into_target(online: &Mlp) -> Mlp {
    online.clone()
}

/// Huber loss and its derivative with respect to `pred`.
pub fn huber_loss(pred: f64, target: f64, delta: f64) -> (f64, f64) {
    let e = pred - target;
    let loss = if e.abs() <= delta {
        0.5 * e * e
    } else {
        delta * (e.abs() - 0.5 * delta)
    };
    (loss, e.clamp(-delta, delta))
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Mlp,
    v: Mlp,
}

impl Adam {
    pub fn new(params: &Mlp, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Rejects the whole update if any gradient is non-finite.
    pub fn step(&mut self, params: &mut Mlp, grads: &Mlp) -> Result<()> {
        if params.arch != grads.arch {
            return Err(Error::Contract("gradient shape does not match parameters".into()));
        }
        for (name, g) in grads.layers() {
            if g.weights.iter().chain(&g.bias).any(|v| !v.is_finite()) {
                return Err(Error::UpdateRejected { layer: name });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = self.learning_rate;
        let eps = self.epsilon;
        let layers = params
            .layers_mut()
            .into_iter()
            .zip(grads.layers())
            .zip(self.m.layers_mut().into_iter().zip(self.v.layers_mut()));
        for ((p, (_, g)), (m, v)) in layers {
            let p_iter = p.weights.iter_mut().chain(p.bias.iter_mut());
            let g_iter = g.weights.iter().chain(&g.bias);
            let mv_iter = m
                .weights
                .iter_mut()
                .chain(m.bias.iter_mut())
                .zip(v.weights.iter_mut().chain(v.bias.iter_mut()));
            for ((p, &g), (m, v)) in p_iter.zip(g_iter).zip(mv_iter) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Single-step optimizer update, returning the new parameters and state.
pub fn optimizer_step(params: &Mlp, grads: &Mlp, opt: &Adam) -> Result<(Mlp, Adam)> {
    let mut p = params.clone();
    let mut o = opt.clone();
    o.step(&mut p, grads)?;
    Ok((p, o))
}
