//! Minimal reverse-mode autodiff over 2-D f64 tensors.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns gradients for all variable leaves. All
//! tensors are `Array2<f64>`; scalars are 1x1, row vectors 1xN. This is
//! enough to express the whole network (attention, GLU, layer norm, Gaussian
//! heads) while keeping gradients exact for finite-difference verification.

use ndarray::{Array2, Axis};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    /// Input tensor. `param` carries the parameter-store slot when the leaf
    /// is a learnable weight.
    Leaf { param: Option<usize> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    /// m x n plus a 1 x n row broadcast over rows.
    AddRow(NodeId, NodeId),
    Transpose(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Ln(NodeId),
    ClampMin(NodeId, f64),
    /// Row-wise softmax; mask (if any) already applied in the stored value.
    SoftmaxRows(NodeId),
    LayerNormRows {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    SliceRows {
        x: NodeId,
        start: usize,
        len: usize,
    },
    /// Tile a 1 x n row over the output rows.
    RepeatRows(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradient buffers produced by one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.nodes[id].value;
        debug_assert_eq!(v.dim(), (1, 1));
        v[(0, 0)]
    }

    /// True if any recorded value is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.nodes
            .iter()
            .any(|n| n.value.iter().any(|v| !v.is_finite()))
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    /// Fixed input that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// Differentiable leaf without a parameter-store slot (tests, probes).
    pub fn variable(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf { param: None }, true)
    }

    /// Differentiable leaf tied to parameter-store slot `param`.
    pub fn param(&mut self, param: usize, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf { param: Some(param) }, true)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.nodes[a].value.dim(), self.nodes[b].value.dim());
        let v = &self.nodes[a].value + &self.nodes[b].value;
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.nodes[a].value.dim(), self.nodes[b].value.dim());
        let v = &self.nodes[a].value - &self.nodes[b].value;
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::Sub(a, b), g)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.nodes[a].value.dim(), self.nodes[b].value.dim());
        let v = &self.nodes[a].value * &self.nodes[b].value;
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::Mul(a, b), g)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.nodes[a].value.dim(), self.nodes[b].value.dim());
        let v = &self.nodes[a].value / &self.nodes[b].value;
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::Div(a, b), g)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::Matmul(a, b), g)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.nodes[row].value.nrows(), 1);
        debug_assert_eq!(self.nodes[a].value.ncols(), self.nodes[row].value.ncols());
        let v = &self.nodes[a].value + &self.nodes[row].value;
        let g = self.needs(a) || self.needs(row);
        self.push(v, Op::AddRow(a, row), g)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.t().to_owned();
        let g = self.needs(a);
        self.push(v, Op::Transpose(a), g)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = &self.nodes[a].value * c;
        let g = self.needs(a);
        self.push(v, Op::Scale(a, c), g)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = &self.nodes[a].value + c;
        let g = self.needs(a);
        self.push(v, Op::AddConst(a), g)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| if x > 0.0 { x } else { slope * x });
        let g = self.needs(a);
        self.push(v, Op::LeakyRelu(a, slope), g)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(sigmoid);
        let g = self.needs(a);
        self.push(v, Op::Sigmoid(a), g)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(softplus);
        let g = self.needs(a);
        self.push(v, Op::Softplus(a), g)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::ln);
        let g = self.needs(a);
        self.push(v, Op::Ln(a), g)
    }

    pub fn clamp_min(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x.max(c));
        let g = self.needs(a);
        self.push(v, Op::ClampMin(a, c), g)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        self.softmax_rows_inner(a, None)
    }

    /// Row softmax restricted to `true` mask entries; fully masked rows
    /// come out all-zero.
    pub fn softmax_rows_masked(&mut self, a: NodeId, mask: Array2<bool>) -> NodeId {
        debug_assert_eq!(self.nodes[a].value.dim(), mask.dim());
        self.softmax_rows_inner(a, Some(mask))
    }

    fn softmax_rows_inner(&mut self, a: NodeId, mask: Option<Array2<bool>>) -> NodeId {
        let x = &self.nodes[a].value;
        let mut v = Array2::zeros(x.dim());
        for (r, row) in x.outer_iter().enumerate() {
            let live = |c: usize| mask.as_ref().map_or(true, |m| m[(r, c)]);
            let mut max = f64::NEG_INFINITY;
            for (c, &e) in row.iter().enumerate() {
                if live(c) && e > max {
                    max = e;
                }
            }
            if max == f64::NEG_INFINITY {
                continue; // fully masked row stays zero
            }
            let mut denom = 0.0;
            for (c, &e) in row.iter().enumerate() {
                if live(c) {
                    let w = (e - max).exp();
                    v[(r, c)] = w;
                    denom += w;
                }
            }
            for c in 0..row.len() {
                v[(r, c)] /= denom;
            }
            debug_assert!(
                (v.row(r).sum() - 1.0).abs() < 1e-6,
                "softmax row does not sum to 1"
            );
        }
        let g = self.needs(a);
        self.push(v, Op::SoftmaxRows(a), g)
    }

    /// Row-wise layer norm with learnable 1 x n gain and bias.
    pub fn layer_norm_rows(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> NodeId {
        let xv = &self.nodes[x].value;
        let gv = &self.nodes[gain].value;
        let bv = &self.nodes[bias].value;
        debug_assert_eq!(gv.nrows(), 1);
        debug_assert_eq!(gv.ncols(), xv.ncols());
        let n = xv.ncols() as f64;
        let mut v = Array2::zeros(xv.dim());
        for (r, row) in xv.outer_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / n;
            let inv_std = 1.0 / (var + eps).sqrt();
            for (c, &e) in row.iter().enumerate() {
                v[(r, c)] = (e - mean) * inv_std * gv[(0, c)] + bv[(0, c)];
            }
        }
        let g = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(v, Op::LayerNormRows { x, gain, bias, eps }, g)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.nodes[parts[0]].value.nrows();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.ncols()).sum();
        let mut v = Array2::zeros((rows, total));
        let mut at = 0;
        for &p in parts {
            let pv = &self.nodes[p].value;
            v.slice_mut(ndarray::s![.., at..at + pv.ncols()]).assign(pv);
            at += pv.ncols();
        }
        let g = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.nodes[parts[0]].value.ncols();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.nrows()).sum();
        let mut v = Array2::zeros((total, cols));
        let mut at = 0;
        for &p in parts {
            let pv = &self.nodes[p].value;
            v.slice_mut(ndarray::s![at..at + pv.nrows(), ..]).assign(pv);
            at += pv.nrows();
        }
        let g = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), g)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.nodes[x]
            .value
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        let g = self.needs(x);
        self.push(v, Op::SliceCols { x, start, len }, g)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.nodes[x]
            .value
            .slice(ndarray::s![start..start + len, ..])
            .to_owned();
        let g = self.needs(x);
        self.push(v, Op::SliceRows { x, start, len }, g)
    }

    pub fn row(&mut self, x: NodeId, r: usize) -> NodeId {
        self.slice_rows(x, r, 1)
    }

    pub fn repeat_rows(&mut self, x: NodeId, count: usize) -> NodeId {
        debug_assert_eq!(self.nodes[x].value.nrows(), 1);
        let row = self.nodes[x].value.row(0).to_owned();
        let v = Array2::from_shape_fn((count, row.len()), |(_, c)| row[c]);
        let g = self.needs(x);
        self.push(v, Op::RepeatRows(x), g)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x].value.sum();
        let g = self.needs(x);
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(x), g)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x].value;
        let s = v.sum() / (v.len() as f64);
        let g = self.needs(x);
        self.push(Array2::from_elem((1, 1), s), Op::MeanAll(x), g)
    }

    /// Reverse pass from a 1x1 output node seeded with dL/dout = 1.
    pub fn backward(&self, output: NodeId) -> Gradients {
        assert_eq!(
            self.nodes[output].value.dim(),
            (1, 1),
            "backward output must be scalar"
        );
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output] = Some(Array2::from_elem((1, 1), 1.0));

        for id in (0..self.nodes.len()).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], id: NodeId, delta: Array2<f64>) {
        if !self.nodes[id].needs_grad {
            return;
        }
        match &mut grads[id] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, id: NodeId, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        match &self.nodes[id].op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, g * &self.nodes[*b].value);
                self.accumulate(grads, *b, g * &self.nodes[*a].value);
            }
            Op::Div(a, b) => {
                let bv = &self.nodes[*b].value;
                self.accumulate(grads, *a, g / bv);
                let av = &self.nodes[*a].value;
                self.accumulate(grads, *b, -(g * av) / (bv * bv));
            }
            Op::Matmul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                if self.nodes[*a].needs_grad {
                    self.accumulate(grads, *a, g.dot(&bv.t()));
                }
                if self.nodes[*b].needs_grad {
                    self.accumulate(grads, *b, av.t().dot(g));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                let summed = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.accumulate(grads, *row, summed);
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, g.t().to_owned());
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g * *c);
            }
            Op::AddConst(a) => {
                self.accumulate(grads, *a, g.clone());
            }
            Op::LeakyRelu(a, slope) => {
                let xv = &self.nodes[*a].value;
                let d = xv.mapv(|x| if x > 0.0 { 1.0 } else { *slope });
                self.accumulate(grads, *a, g * &d);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[id].value;
                self.accumulate(grads, *a, g * &(y * &(1.0 - y)));
            }
            Op::Softplus(a) => {
                let d = self.nodes[*a].value.mapv(sigmoid);
                self.accumulate(grads, *a, g * &d);
            }
            Op::Ln(a) => {
                self.accumulate(grads, *a, g / &self.nodes[*a].value);
            }
            Op::ClampMin(a, c) => {
                let xv = &self.nodes[*a].value;
                let d = xv.mapv(|x| if x > *c { 1.0 } else { 0.0 });
                self.accumulate(grads, *a, g * &d);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[id].value;
                let mut gx = Array2::zeros(y.dim());
                for r in 0..y.nrows() {
                    let dot: f64 = y
                        .row(r)
                        .iter()
                        .zip(g.row(r).iter())
                        .map(|(&yi, &gi)| yi * gi)
                        .sum();
                    for c in 0..y.ncols() {
                        gx[(r, c)] = y[(r, c)] * (g[(r, c)] - dot);
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::LayerNormRows { x, gain, bias, eps } => {
                let xv = &self.nodes[*x].value;
                let gv = &self.nodes[*gain].value;
                let n = xv.ncols() as f64;
                let mut gx = Array2::zeros(xv.dim());
                let mut ggain = Array2::zeros((1, xv.ncols()));
                let mut gbias = Array2::zeros((1, xv.ncols()));
                for r in 0..xv.nrows() {
                    let row = xv.row(r);
                    let mean = row.sum() / n;
                    let var = row.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / n;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    // gy = dL/dy ⊙ gain; gx = inv_std * (gy - mean(gy) - x̂ * mean(gy ⊙ x̂))
                    let mut gy_mean = 0.0;
                    let mut gyxh_mean = 0.0;
                    for c in 0..xv.ncols() {
                        let xh = (xv[(r, c)] - mean) * inv_std;
                        let gy = g[(r, c)] * gv[(0, c)];
                        gy_mean += gy;
                        gyxh_mean += gy * xh;
                        ggain[(0, c)] += g[(r, c)] * xh;
                        gbias[(0, c)] += g[(r, c)];
                    }
                    gy_mean /= n;
                    gyxh_mean /= n;
                    for c in 0..xv.ncols() {
                        let xh = (xv[(r, c)] - mean) * inv_std;
                        let gy = g[(r, c)] * gv[(0, c)];
                        gx[(r, c)] = inv_std * (gy - gy_mean - xh * gyxh_mean);
                    }
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gain, ggain);
                self.accumulate(grads, *bias, gbias);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = self.nodes[p].value.ncols();
                    let part = g.slice(ndarray::s![.., at..at + w]).to_owned();
                    self.accumulate(grads, p, part);
                    at += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for &p in parts {
                    let h = self.nodes[p].value.nrows();
                    let part = g.slice(ndarray::s![at..at + h, ..]).to_owned();
                    self.accumulate(grads, p, part);
                    at += h;
                }
            }
            Op::SliceCols { x, start, len } => {
                let xv = &self.nodes[*x].value;
                let mut gx = Array2::zeros(xv.dim());
                gx.slice_mut(ndarray::s![.., *start..*start + *len]).assign(g);
                self.accumulate(grads, *x, gx);
            }
            Op::SliceRows { x, start, len } => {
                let xv = &self.nodes[*x].value;
                let mut gx = Array2::zeros(xv.dim());
                gx.slice_mut(ndarray::s![*start..*start + *len, ..]).assign(g);
                self.accumulate(grads, *x, gx);
            }
            Op::RepeatRows(x) => {
                let summed = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.accumulate(grads, *x, summed);
            }
            Op::SumAll(x) => {
                let s = g[(0, 0)];
                let xv = &self.nodes[*x].value;
                self.accumulate(grads, *x, Array2::from_elem(xv.dim(), s));
            }
            Op::MeanAll(x) => {
                let xv = &self.nodes[*x].value;
                let s = g[(0, 0)] / (xv.len() as f64);
                self.accumulate(grads, *x, Array2::from_elem(xv.dim(), s));
            }
        }
    }

    /// Fold each parameter leaf's gradient into `sink[param] += weight * g`.
    pub fn accumulate_param_grads(
        &self,
        grads: &Gradients,
        weight: f64,
        sink: &mut [Array2<f64>],
    ) {
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(p) } = node.op {
                if let Some(g) = grads.get(id) {
                    sink[p].scaled_add(weight, g);
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    // ln(1 + e^x), stable in both tails
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Sinusoidal positional encoding table: len x dim.
pub fn sinusoidal_encoding(len: usize, dim: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((len, dim));
    for pos in 0..len {
        for i in 0..dim {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            pe[(pos, i)] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central finite differences on every entry of every variable input.
    fn fd_check<F>(build: F, inputs: &[Array2<f64>], tol: f64)
    where
        F: Fn(&mut Tape, &[NodeId]) -> NodeId,
    {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|x| tape.variable(x.clone())).collect();
        let out = build(&mut tape, &ids);
        let grads = tape.backward(out);

        let h = 1e-6;
        for (k, x) in inputs.iter().enumerate() {
            let analytic = grads
                .get(ids[k])
                .cloned()
                .unwrap_or_else(|| Array2::zeros(x.dim()));
            for r in 0..x.nrows() {
                for c in 0..x.ncols() {
                    let eval = |delta: f64| {
                        let mut bumped: Vec<Array2<f64>> = inputs.to_vec();
                        bumped[k][(r, c)] += delta;
                        let mut t = Tape::new();
                        let ids: Vec<NodeId> =
                            bumped.iter().map(|x| t.variable(x.clone())).collect();
                        let o = build(&mut t, &ids);
                        t.scalar(o)
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let a = analytic[(r, c)];
                    let denom = a.abs().max(fd.abs()).max(1.0);
                    assert!(
                        (a - fd).abs() / denom < tol,
                        "input {k} entry ({r},{c}): analytic {a} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn grad_matmul_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 4, 2);
        fd_check(
            |t, ids| {
                let m = t.matmul(ids[0], ids[1]);
                let s = t.sigmoid(m);
                t.sum_all(s)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn grad_elementwise_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_mat(&mut rng, 2, 3) + 2.0; // keep away from ln/div trouble
        let b = rand_mat(&mut rng, 2, 3) + 2.0;
        fd_check(
            |t, ids| {
                let d = t.div(ids[0], ids[1]);
                let m = t.mul(d, ids[0]);
                let l = t.ln(m);
                let sp = t.softplus(l);
                t.mean_all(sp)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn grad_leaky_relu_away_from_kink() {
        let a = array![[0.5, -0.7, 1.2], [-0.3, 0.9, -1.5]];
        fd_check(
            |t, ids| {
                let y = t.leaky_relu(ids[0], 0.1);
                t.sum_all(y)
            },
            &[a],
            1e-6,
        );
    }

    #[test]
    fn grad_softmax_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_mat(&mut rng, 3, 5);
        let w = rand_mat(&mut rng, 3, 5);
        let wc = w.clone();
        fd_check(
            move |t, ids| {
                let s = t.softmax_rows(ids[0]);
                let weights = t.constant(wc.clone());
                let m = t.mul(s, weights);
                t.sum_all(m)
            },
            &[a],
            1e-6,
        );
    }

    #[test]
    fn grad_masked_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_mat(&mut rng, 2, 4);
        let mask = array![[true, false, true, true], [false, true, true, false]];
        let w = rand_mat(&mut rng, 2, 4);
        fd_check(
            move |t, ids| {
                let s = t.softmax_rows_masked(ids[0], mask.clone());
                let weights = t.constant(w.clone());
                let m = t.mul(s, weights);
                t.sum_all(m)
            },
            &[a],
            1e-6,
        );
    }

    #[test]
    fn masked_softmax_values() {
        let mut t = Tape::new();
        let a = t.variable(array![[1.0, 5.0, 1.0], [3.0, 3.0, 3.0]]);
        let mask = array![[true, false, true], [false, false, false]];
        let s = t.softmax_rows_masked(a, mask);
        let v = t.value(s);
        assert!((v[(0, 0)] - 0.5).abs() < 1e-12);
        assert_eq!(v[(0, 1)], 0.0);
        assert!((v[(0, 2)] - 0.5).abs() < 1e-12);
        assert_eq!(v.row(1).sum(), 0.0);
    }

    #[test]
    fn grad_layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_mat(&mut rng, 3, 6);
        let gain = rand_mat(&mut rng, 1, 6) + 1.0;
        let bias = rand_mat(&mut rng, 1, 6);
        let w = rand_mat(&mut rng, 3, 6);
        fd_check(
            move |t, ids| {
                let y = t.layer_norm_rows(ids[0], ids[1], ids[2], 1e-5);
                let weights = t.constant(w.clone());
                let m = t.mul(y, weights);
                t.sum_all(m)
            },
            &[x, gain, bias],
            1e-5,
        );
    }

    #[test]
    fn grad_slice_concat_repeat() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_mat(&mut rng, 4, 6);
        let r = rand_mat(&mut rng, 1, 3);
        fd_check(
            |t, ids| {
                let a = t.slice_cols(ids[0], 1, 3);
                let b = t.slice_rows(a, 0, 2);
                let c = t.repeat_rows(ids[1], 2);
                let d = t.add(b, c);
                let e = t.concat_rows(&[d, b]);
                let f = t.transpose(e);
                let g = t.concat_cols(&[f, f]);
                t.mean_all(g)
            },
            &[x, r],
            1e-6,
        );
    }

    #[test]
    fn grad_add_row_broadcast() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_mat(&mut rng, 5, 3);
        let b = rand_mat(&mut rng, 1, 3);
        fd_check(
            |t, ids| {
                let y = t.add_row(ids[0], ids[1]);
                let z = t.leaky_relu(y, 0.1);
                t.sum_all(z)
            },
            &[x, b],
            1e-6,
        );
    }

    #[test]
    fn grad_clamp_min_passthrough_and_block() {
        let x = array![[2.0, 0.5]];
        let mut t = Tape::new();
        let id = t.variable(x);
        let c = t.clamp_min(id, 1.0);
        let s = t.sum_all(c);
        let g = t.backward(s);
        let gx = g.get(id).unwrap();
        assert_eq!(gx[(0, 0)], 1.0);
        assert_eq!(gx[(0, 1)], 0.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let a = t.constant(array![[1.0, 2.0]]);
        let b = t.variable(array![[3.0, 4.0]]);
        let m = t.mul(a, b);
        let s = t.sum_all(m);
        let g = t.backward(s);
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap(), &array![[1.0, 2.0]]);
    }

    #[test]
    fn positional_encoding_shape_and_range() {
        let pe = sinusoidal_encoding(10, 8);
        assert_eq!(pe.dim(), (10, 8));
        assert!(pe.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        // row 0 is sin(0)/cos(0) pattern
        assert_eq!(pe[(0, 0)], 0.0);
        assert_eq!(pe[(0, 1)], 1.0);
    }
}
