use rand::Rng;

use super::params::{glorot_uniform, ParamId, ParamStore};
use super::tape::{lstm_forward, NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Weights of one LSTM. Gate rows are ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
}

impl LstmParams {
    pub fn new(wx: Tensor, wh: Tensor, b: Tensor) -> Result<Self> {
        if !wx.is_matrix() || !wh.is_matrix() || !b.is_vector() {
            return Err(Error::Shape("lstm params: wx, wh must be matrices and b a vector".into()));
        }
        let h4 = wx.rows();
        if h4 == 0 || !h4.is_multiple_of(4) || wh.rows() != h4 || wh.cols() != h4 / 4 || b.len() != h4 {
            return Err(Error::Shape(format!(
                "lstm params: wx {:?}, wh {:?}, b {:?}",
                wx.shape(),
                wh.shape(),
                b.shape()
            )));
        }
        Ok(Self { wx, wh, b })
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            wx: Tensor::zeros(&[4 * hidden, input]),
            wh: Tensor::zeros(&[4 * hidden, hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.wx.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.wh.cols()
    }

    pub fn wx(&self) -> &Tensor {
        &self.wx
    }

    pub fn wh(&self) -> &Tensor {
        &self.wh
    }

    pub fn b(&self) -> &Tensor {
        &self.b
    }
}

/// One step of the recurrence, evaluated directly.
pub fn lstm_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = p.hidden_dim();
    if x.len() != p.input_dim() || h_prev.len() != h || c_prev.len() != h {
        return Err(Error::Shape(format!(
            "lstm_step: x {}, h {}, c {} for params ({}, {h})",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            p.input_dim()
        )));
    }
    let (_, _, mut out) =
        lstm_forward(x, h_prev, c_prev, p.wx.values(), p.wh.values(), p.b.values());
    let c = out.split_off(h);
    Ok((out, c))
}

/// Runs the LSTM left to right from a zero state. Returns the final hidden
/// state and the hidden state after every step.
pub fn run_lstm(seq: &[Vec<f64>], p: &LstmParams) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("run_lstm over an empty sequence".into()));
    }
    let hd = p.hidden_dim();
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut all = Vec::with_capacity(seq.len());
    for x in seq {
        let (h2, c2) = lstm_step(x, &h, &c, p)?;
        all.push(h2.clone());
        h = h2;
        c = c2;
    }
    Ok((h, all))
}

/// Parameter handles of an LSTM living in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmIds {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

impl LstmIds {
    /// Registers `<prefix>.wx`, `<prefix>.wh`, `<prefix>.b`, initialized with
    /// Glorot-uniform weights, zero biases and a forget-gate bias of 1.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let wx = store.add(format!("{prefix}.wx"), glorot_uniform(4 * hidden, input, rng))?;
        let wh = store.add(format!("{prefix}.wh"), glorot_uniform(4 * hidden, hidden, rng))?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        let b = store.add(format!("{prefix}.b"), Tensor::vector(b)?)?;
        Ok(Self { wx, wh, b })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |s: &str| {
            let name = format!("{prefix}.{s}");
            store.find(&name).ok_or_else(|| Error::Format(format!("missing parameter {name}")))
        };
        Ok(Self { wx: get("wx")?, wh: get("wh")?, b: get("b")? })
    }

    pub fn hidden_dim(&self, store: &ParamStore) -> usize {
        store.get(self.wh).cols()
    }

    pub fn to_params(&self, store: &ParamStore) -> Result<LstmParams> {
        LstmParams::new(store.get(self.wx).clone(), store.get(self.wh).clone(), store.get(self.b).clone())
    }

    /// Runs over `seq` on the tape from a zero state; returns the `[h; c]`
    /// state node after each step.
    pub fn run(&self, tape: &mut Tape<'_>, seq: &[NodeId]) -> Result<Vec<NodeId>> {
        if seq.is_empty() {
            return Err(Error::EmptyInput("lstm over an empty sequence".into()));
        }
        let h = self.hidden_dim(tape.params());
        let wx = tape.param(self.wx);
        let wh = tape.param(self.wh);
        let b = tape.param(self.b);
        let mut state = tape.zeros(2 * h);
        let mut states = Vec::with_capacity(seq.len());
        for &x in seq {
            state = tape.lstm_step(x, state, wx, wh, b)?;
            states.push(state);
        }
        Ok(states)
    }

    /// Hidden part of a state node.
    pub fn hidden(&self, tape: &mut Tape<'_>, state: NodeId) -> Result<NodeId> {
        let h = self.hidden_dim(tape.params());
        tape.slice(state, 0, h)
    }
}
