//! Minimal reverse-mode autodiff over `f64` matrices.
//!
//! Enough to train the toy encoder-decoder used for tests and bundled
//! checkpoints: embedding gathers, matmuls, row softmax, layer norm, GELU and
//! token-level cross-entropy. Values are kept on a per-forward [`Graph`];
//! parameters live in a [`ParamStore`] that outlives graphs.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    lookup: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn add_normal<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut R) -> ParamId {
        let value = if std == 0.0 {
            Array2::zeros((rows, cols))
        } else {
            let dist = Normal::new(0.0, std).expect("valid std");
            Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
        };
        self.add(name, value)
    }

    pub fn add_const(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, Array2::from_elem((rows, cols), v))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array2<f64>)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }
}

/// Per-parameter gradients, aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Grads {
    grads: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { grads: vec![None; store.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }

    fn accumulate(&mut self, id: usize, g: &Array2<f64>) {
        match &mut self.grads[id] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(i, g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Param(usize),
    Const,
    Gather { param: usize, ids: Vec<usize> },
    Add(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Softmax(Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<f64>, inv_std: Array1<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Array2<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// A single forward pass; call [`Graph::backward`] on a scalar output.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).clone();
        self.push(value, Op::Param(id.0))
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const)
    }

    /// Rows `ids` of a parameter table.
    pub fn gather(&mut self, table: ParamId, ids: &[usize]) -> Var {
        let t = self.params.get(table);
        let mut out = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        self.push(out, Op::Gather { param: table.0, ids: ids.to_vec() })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `a + row`, broadcasting a `[1, d]` row over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    /// Adds a constant (e.g. an attention mask); no gradient flows into it.
    pub fn add_const(&mut self, a: Var, c: &Array2<f64>) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddConst(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.push(v, Op::Softmax(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mean = xv.sum_axis(Axis(1)) / d;
        let centered = xv - &mean.clone().insert_axis(Axis(1));
        let var = centered.mapv(|c| c * c).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        let xhat = centered * &inv_std.clone().insert_axis(Axis(1));
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let v = self.value(x).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("matching row counts");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Mean token cross-entropy of row-wise logits against target ids.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len());
        let mut probs = lv.clone();
        let mut total = 0.0;
        for (mut row, &t) in probs.rows_mut().into_iter().zip(targets) {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            total += lse - row[t];
            row.mapv_inplace(|x| (x - lse).exp());
        }
        let loss = Array2::from_elem((1, 1), total / targets.len() as f64);
        self.push(loss, Op::CrossEntropy { logits, targets: targets.to_vec(), probs })
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Back-propagates from the scalar `output` into parameter gradients.
    pub fn backward(&self, output: Var) -> Grads {
        let mut grads = Grads { grads: vec![None; self.params.len()] };
        let mut node_grads: Vec<Option<Array2<f64>>> = (0..=output.0).map(|_| None).collect();
        node_grads[output.0] = Some(Array2::ones(self.value(output).raw_dim()));

        fn acc(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
            match slot {
                Some(a) => *a += &g,
                None => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(dy) = node_grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(p) => grads.accumulate(*p, &dy),
                Op::Const => {}
                Op::Gather { param, ids } => {
                    let shape = self.params.values[*param].raw_dim();
                    let mut g = Array2::zeros(shape);
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = g.row_mut(id);
                        row += &dy.row(r);
                    }
                    grads.accumulate(*param, &g);
                }
                Op::Add(a, b) => {
                    acc(&mut node_grads[a.0], dy.clone());
                    acc(&mut node_grads[b.0], dy);
                }
                Op::AddRow(a, row) => {
                    acc(&mut node_grads[row.0], dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut node_grads[a.0], dy);
                }
                Op::MatMul(a, b) => {
                    let da = dy.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&dy);
                    acc(&mut node_grads[a.0], da);
                    acc(&mut node_grads[b.0], db);
                }
                Op::MatMulT(a, b) => {
                    let da = dy.dot(self.value(*b));
                    let db = dy.t().dot(self.value(*a));
                    acc(&mut node_grads[a.0], da);
                    acc(&mut node_grads[b.0], db);
                }
                Op::Scale(a, s) => acc(&mut node_grads[a.0], dy * *s),
                Op::AddConst(a) => acc(&mut node_grads[a.0], dy),
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot = (&dy * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut node_grads[a.0], y * &(dy - &dot));
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut dx = x.mapv(gelu_grad);
                    dx *= &dy;
                    acc(&mut node_grads[a.0], dx);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let d = xhat.ncols() as f64;
                    acc(&mut node_grads[beta.0], dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut node_grads[gamma.0], (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &dy * self.value(*gamma);
                    let mean_d = (dxhat.sum_axis(Axis(1)) / d).insert_axis(Axis(1));
                    let mean_dx = ((&dxhat * xhat).sum_axis(Axis(1)) / d).insert_axis(Axis(1));
                    let dx = (dxhat - &mean_d - xhat * &mean_dx) * &inv_std.clone().insert_axis(Axis(1));
                    acc(&mut node_grads[x.0], dx);
                }
                Op::SliceCols { x, start } => {
                    let mut g = Array2::zeros(self.value(*x).raw_dim());
                    g.slice_mut(s![.., *start..*start + dy.ncols()]).assign(&dy);
                    acc(&mut node_grads[x.0], g);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut node_grads[p.0], dy.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = dy[[0, 0]] / targets.len() as f64;
                    let mut g = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        g[[r, t]] -= 1.0;
                    }
                    g *= scale;
                    acc(&mut node_grads[logits.0], g);
                }
            }
        }
        grads
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clipping; `None` disables it.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(1.0) }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<_> = store.values.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self { cfg, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let clip = match self.cfg.clip_norm {
            Some(max) => {
                let n = grads.global_norm();
                if n > max {
                    max / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.step);
        let bc2 = 1.0 - b2.powi(self.step);
        for (i, g) in grads.grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut store.values[i]).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g * clip;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            });
        }
    }
}
