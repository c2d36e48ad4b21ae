//! Vector-level reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass together with its
//! value. [`Tape::backward`] consumes the tape and walks it in reverse,
//! accumulating gradients for every [`ParamId`] the loss depends on.
//! Parameters are never copied onto the tape; parameter leaves read their
//! value from the borrowed [`ParamStore`].

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matvec_into, matvec_t_acc, outer_acc, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatVec { m: NodeId, x: NodeId },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Mask(NodeId, Vec<f64>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Concat(Vec<NodeId>),
    Slice { src: NodeId, start: usize },
    Row { table: NodeId, row: usize },
    LogSoftmax(NodeId),
    Pick { src: NodeId, index: usize },
    AddN(Vec<NodeId>),
    SumAll(NodeId),
    LstmStep(Box<LstmCache>),
}

#[derive(Debug)]
struct LstmCache {
    x: NodeId,
    state: NodeId,
    wx: NodeId,
    wh: NodeId,
    b: NodeId,
    // i, f, g, o activations, 4h
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
}

/// Records one forward computation. Single-threaded; distinct tapes are independent.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (_, Some(v)) => v,
            (Op::Param(p), None) => self.params.get(*p),
            _ => unreachable!("node without value"),
        }
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).values()[0]
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value: Some(value) });
        NodeId(self.nodes.len() - 1)
    }

    fn vec_len(&self, id: NodeId, what: &str) -> Result<usize> {
        let v = self.value(id);
        if !v.is_vector() {
            return Err(Error::Shape(format!("{what}: expected a vector, got shape {:?}", v.shape())));
        }
        Ok(v.len())
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn input_vector(&mut self, values: Vec<f64>) -> Result<NodeId> {
        Ok(self.input(Tensor::vector(values)?))
    }

    pub fn zeros(&mut self, len: usize) -> NodeId {
        self.input(Tensor::zeros(&[len]))
    }

    /// Leaf for a trainable parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node { op: Op::Param(id), value: None });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    pub fn matvec(&mut self, m: NodeId, x: NodeId) -> Result<NodeId> {
        let mt = self.value(m);
        let xt = self.value(x);
        if !mt.is_matrix() || !xt.is_vector() || mt.cols() != xt.len() {
            return Err(Error::Shape(format!(
                "matvec: {:?} · {:?}",
                mt.shape(),
                xt.shape()
            )));
        }
        let (rows, cols) = (mt.rows(), mt.cols());
        let mut out = vec![0.0; rows];
        matvec_into(mt.values(), rows, cols, xt.values(), &mut out);
        Ok(self.push(Op::MatVec { m, x }, Tensor::from_parts(vec![rows], out)))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, what: &str) -> Result<(Vec<usize>, &[f64], &[f64])> {
        let at = self.value(a);
        let bt = self.value(b);
        if at.shape() != bt.shape() {
            return Err(Error::Shape(format!("{what}: {:?} vs {:?}", at.shape(), bt.shape())));
        }
        Ok((at.shape().to_vec(), at.values(), bt.values()))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (shape, av, bv) = self.binary(a, b, "add")?;
        let out = av.iter().zip(bv).map(|(x, y)| x + y).collect();
        Ok(self.push(Op::Add(a, b), Tensor::from_parts(shape, out)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (shape, av, bv) = self.binary(a, b, "mul")?;
        let out = av.iter().zip(bv).map(|(x, y)| x * y).collect();
        Ok(self.push(Op::Mul(a, b), Tensor::from_parts(shape, out)))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let t = self.value(a);
        let out = t.values().iter().map(|x| x * k).collect();
        let shape = t.shape().to_vec();
        self.push(Op::Scale(a, k), Tensor::from_parts(shape, out))
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mask(&mut self, a: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let t = self.value(a);
        if t.len() != mask.len() {
            return Err(Error::Shape(format!("mask: {} vs {}", t.len(), mask.len())));
        }
        let out = t.values().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = t.shape().to_vec();
        Ok(self.push(Op::Mask(a, mask), Tensor::from_parts(shape, out)))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let out = t.values().iter().map(|&x| sigmoid(x)).collect();
        let shape = t.shape().to_vec();
        self.push(Op::Sigmoid(a), Tensor::from_parts(shape, out))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let out = t.values().iter().map(|x| x.tanh()).collect();
        let shape = t.shape().to_vec();
        self.push(Op::Tanh(a), Tensor::from_parts(shape, out))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat of zero vectors".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            self.vec_len(p, "concat")?;
            out.extend_from_slice(self.value(p).values());
        }
        let n = out.len();
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::from_parts(vec![n], out)))
    }

    pub fn slice(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let n = self.vec_len(src, "slice")?;
        if len == 0 || start + len > n {
            return Err(Error::Shape(format!("slice [{start}, {}) of length {n}", start + len)));
        }
        let out = self.value(src).values()[start..start + len].to_vec();
        Ok(self.push(Op::Slice { src, start }, Tensor::from_parts(vec![len], out)))
    }

    /// Row `row` of a matrix as a vector (embedding lookup).
    pub fn row(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        let t = self.value(table);
        if !t.is_matrix() || row >= t.rows() {
            return Err(Error::Shape(format!("row {row} of {:?}", t.shape())));
        }
        let out = t.row(row).to_vec();
        let n = out.len();
        Ok(self.push(Op::Row { table, row }, Tensor::from_parts(vec![n], out)))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.vec_len(a, "log_softmax")?;
        let out = log_softmax(self.value(a).values())?;
        let n = out.len();
        Ok(self.push(Op::LogSoftmax(a), Tensor::from_parts(vec![n], out)))
    }

    pub fn pick(&mut self, src: NodeId, index: usize) -> Result<NodeId> {
        let n = self.vec_len(src, "pick")?;
        if index >= n {
            return Err(Error::Lookup(format!("pick index {index} of length {n}")));
        }
        let v = self.value(src).values()[index];
        Ok(self.push(Op::Pick { src, index }, Tensor::from_parts(vec![1], vec![v])))
    }

    /// Sum of same-shaped nodes.
    pub fn add_n(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| Error::EmptyInput("add_n of nothing".into()))?;
        let shape = self.value(*first).shape().to_vec();
        let mut out = vec![0.0; self.value(*first).len()];
        for &p in parts {
            let t = self.value(p);
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("add_n: {:?} vs {shape:?}", t.shape())));
            }
            for (o, v) in out.iter_mut().zip(t.values()) {
                *o += v;
            }
        }
        Ok(self.push(Op::AddN(parts.to_vec()), Tensor::from_parts(shape, out)))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).values().iter().sum();
        self.push(Op::SumAll(a), Tensor::from_parts(vec![1], vec![s]))
    }

    /// One LSTM step. `state` is the concatenation `[h; c]` (length 2h) and so
    /// is the result. Gate order in the weight rows: input, forget, candidate, output.
    pub fn lstm_step(
        &mut self,
        x: NodeId,
        state: NodeId,
        wx: NodeId,
        wh: NodeId,
        b: NodeId,
    ) -> Result<NodeId> {
        let d = self.vec_len(x, "lstm x")?;
        let s = self.vec_len(state, "lstm state")?;
        let bl = self.vec_len(b, "lstm bias")?;
        let wxt = self.value(wx);
        let wht = self.value(wh);
        if s % 2 != 0 {
            return Err(Error::Shape(format!("lstm state length {s} is odd")));
        }
        let h = s / 2;
        let ok = wxt.is_matrix()
            && wht.is_matrix()
            && wxt.rows() == 4 * h
            && wxt.cols() == d
            && wht.rows() == 4 * h
            && wht.cols() == h
            && bl == 4 * h;
        if !ok {
            return Err(Error::Shape(format!(
                "lstm: x {d}, state {s}, wx {:?}, wh {:?}, b {bl}",
                wxt.shape(),
                wht.shape()
            )));
        }
        let (gates, tanh_c, out) = {
            let sv = self.value(state).values();
            let (h_prev, c_prev) = sv.split_at(h);
            lstm_forward(
                self.value(x).values(),
                h_prev,
                c_prev,
                wxt.values(),
                wht.values(),
                self.value(b).values(),
            )
        };
        let cache = LstmCache { x, state, wx, wh, b, gates, tanh_c };
        Ok(self.push(Op::LstmStep(Box::new(cache)), Tensor::from_parts(vec![2 * h], out)))
    }

    /// Reverse pass from a scalar `loss`, returning fresh gradients.
    pub fn backward(self, loss: NodeId) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self.params);
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Reverse pass from a scalar `loss`, adding into `out`.
    pub fn backward_into(self, loss: NodeId, out: &mut Gradients) -> Result<()> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Contract(format!("loss must be scalar, got shape {:?}", lt.shape())));
        }
        if !lt.is_finite() {
            return Err(Error::NonFinite("loss value".into()));
        }
        if out.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer does not match parameter store".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(p) => {
                    for (o, v) in out.get_mut(*p).values_mut().iter_mut().zip(&g) {
                        *o += v;
                    }
                }
                Op::MatVec { m, x } => {
                    let mt = self.value(*m);
                    let (rows, cols) = (mt.rows(), mt.cols());
                    let xv = self.value(*x).values();
                    outer_acc(&g, xv, self.slot(&mut grads, *m));
                    matvec_t_acc(mt.values(), rows, cols, &g, self.slot(&mut grads, *x));
                }
                Op::Add(a, b) => {
                    add_into(self.slot(&mut grads, *a), &g);
                    add_into(self.slot(&mut grads, *b), &g);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).values();
                    let bv = self.value(*b).values();
                    for ((o, gi), bi) in self.slot(&mut grads, *a).iter_mut().zip(&g).zip(bv) {
                        *o += gi * bi;
                    }
                    for ((o, gi), ai) in self.slot(&mut grads, *b).iter_mut().zip(&g).zip(av) {
                        *o += gi * ai;
                    }
                }
                Op::Scale(a, k) => {
                    for (o, gi) in self.slot(&mut grads, *a).iter_mut().zip(&g) {
                        *o += gi * k;
                    }
                }
                Op::Mask(a, mask) => {
                    for ((o, gi), m) in self.slot(&mut grads, *a).iter_mut().zip(&g).zip(mask) {
                        *o += gi * m;
                    }
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap().values();
                    for ((o, gi), yi) in self.slot(&mut grads, *a).iter_mut().zip(&g).zip(y) {
                        *o += gi * yi * (1.0 - yi);
                    }
                }
                Op::Tanh(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap().values();
                    for ((o, gi), yi) in self.slot(&mut grads, *a).iter_mut().zip(&g).zip(y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        add_into(self.slot(&mut grads, p), &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Slice { src, start } => {
                    let s = self.slot(&mut grads, *src);
                    add_into(&mut s[*start..*start + g.len()], &g);
                }
                Op::Row { table, row } => {
                    let n = g.len();
                    let s = self.slot(&mut grads, *table);
                    add_into(&mut s[row * n..(row + 1) * n], &g);
                }
                Op::LogSoftmax(a) => {
                    let y = self.nodes[i].value.as_ref().unwrap().values();
                    let total: f64 = g.iter().sum();
                    for ((o, gi), yi) in self.slot(&mut grads, *a).iter_mut().zip(&g).zip(y) {
                        *o += gi - yi.exp() * total;
                    }
                }
                Op::Pick { src, index } => {
                    self.slot(&mut grads, *src)[*index] += g[0];
                }
                Op::AddN(parts) => {
                    for &p in parts {
                        add_into(self.slot(&mut grads, p), &g);
                    }
                }
                Op::SumAll(a) => {
                    let s = self.slot(&mut grads, *a);
                    s.iter_mut().for_each(|o| *o += g[0]);
                }
                Op::LstmStep(cache) => self.lstm_backward(cache, &g, &mut grads),
            }
        }
        Ok(())
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> &'g mut Vec<f64> {
        let n = self.value(id).len();
        grads[id.0].get_or_insert_with(|| vec![0.0; n])
    }

    fn lstm_backward(&self, c: &LstmCache, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let h = g.len() / 2;
        let (dh, dc_out) = g.split_at(h);
        let sv = self.value(c.state).values();
        let (h_prev, c_prev) = sv.split_at(h);
        let (gi, rest) = c.gates.split_at(h);
        let (gf, rest) = rest.split_at(h);
        let (gg, go) = rest.split_at(h);

        let mut dz = vec![0.0; 4 * h];
        let mut dstate = vec![0.0; 2 * h];
        for k in 0..h {
            let tc = c.tanh_c[k];
            let dc = dc_out[k] + dh[k] * go[k] * (1.0 - tc * tc);
            let d_o = dh[k] * tc;
            let d_i = dc * gg[k];
            let d_g = dc * gi[k];
            let d_f = dc * c_prev[k];
            dstate[h + k] = dc * gf[k];
            dz[k] = d_i * gi[k] * (1.0 - gi[k]);
            dz[h + k] = d_f * gf[k] * (1.0 - gf[k]);
            dz[2 * h + k] = d_g * (1.0 - gg[k] * gg[k]);
            dz[3 * h + k] = d_o * go[k] * (1.0 - go[k]);
        }
        let wxt = self.value(c.wx);
        let wht = self.value(c.wh);
        let xv = self.value(c.x).values();
        matvec_t_acc(wht.values(), 4 * h, h, &dz, &mut dstate[..h]);
        add_into(self.slot(grads, c.state), &dstate);
        matvec_t_acc(wxt.values(), 4 * h, xv.len(), &dz, self.slot(grads, c.x));
        outer_acc(&dz, xv, self.slot(grads, c.wx));
        outer_acc(&dz, h_prev, self.slot(grads, c.wh));
        add_into(self.slot(grads, c.b), &dz);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|v| v - lse).collect())
}

/// Returns (gate activations, tanh(c), [h; c]).
pub(crate) fn lstm_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    wx: &[f64],
    wh: &[f64],
    b: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = h_prev.len();
    let mut z = b.to_vec();
    matvec_into(wx, 4 * h, x.len(), x, &mut z);
    matvec_into(wh, 4 * h, h, h_prev, &mut z);
    for (k, zk) in z.iter_mut().enumerate() {
        *zk = if (2 * h..3 * h).contains(&k) { zk.tanh() } else { sigmoid(*zk) };
    }
    let mut out = vec![0.0; 2 * h];
    let mut tanh_c = vec![0.0; h];
    for k in 0..h {
        let c = z[h + k] * c_prev[k] + z[k] * z[2 * h + k];
        tanh_c[k] = c.tanh();
        out[h + k] = c;
        out[k] = z[3 * h + k] * tanh_c[k];
    }
    (z, tanh_c, out)
}
