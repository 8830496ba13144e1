//! Network building blocks over the tape: linear layers, affine layer
//! normalization, and an LSTM cell with separate per-gate weights.

use crate::autodiff::{DiffValue, Tape, TensorShape};
use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use rand::Rng;

/// Fan-in scaled uniform bound for ReLU-style layers: sqrt(6 / fan_in).
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Uniform sample in [-bound, bound].
pub fn kaiming_sample<R: Rng>(rng: &mut R, fan_in: usize) -> f64 {
    let b = kaiming_bound(fan_in);
    rng.gen_range(-b..b)
}

// ── Linear ───────────────────────────────────────────────────────────

/// Trainable affine map `x [B,in] -> x·W + b [B,out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Linear> {
        let w: Vec<f64> = (0..in_dim * out_dim).map(|_| kaiming_sample(rng, in_dim)).collect();
        let w = store.add(&format!("{name}.w"), w, TensorShape::matrix(in_dim, out_dim))?;
        let b = store.add(&format!("{name}.b"), vec![0.0; out_dim], TensorShape::matrix(1, out_dim))?;
        Ok(Linear { w, b, in_dim, out_dim })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundLinear {
        BoundLinear { w: tape.param(store, self.w), b: tape.param(store, self.b) }
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// Linear layer registered on a specific tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub w: DiffValue,
    pub b: DiffValue,
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: DiffValue) -> Result<DiffValue> {
        let h = tape.matmul(x, self.w)?;
        tape.add_bias_row(h, self.b)
    }
}

// ── Layer normalization ──────────────────────────────────────────────

/// Trainable per-feature gain and bias for layer normalization.
#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNormParams {
    pub fn init(store: &mut ParamStore, name: &str, dim: usize) -> Result<LayerNormParams> {
        let gain = store.add(&format!("{name}.gain"), vec![1.0; dim], TensorShape::matrix(1, dim))?;
        let bias = store.add(&format!("{name}.bias"), vec![0.0; dim], TensorShape::matrix(1, dim))?;
        Ok(LayerNormParams { gain, bias, dim })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundLayerNorm {
        BoundLayerNorm { gain: tape.param(store, self.gain), bias: tape.param(store, self.bias) }
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.gain, self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLayerNorm {
    pub gain: DiffValue,
    pub bias: DiffValue,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl BoundLayerNorm {
    pub fn forward(&self, tape: &mut Tape, x: DiffValue) -> Result<DiffValue> {
        tape.layer_norm(x, self.gain, self.bias, LAYER_NORM_EPS)
    }
}

/// Layer normalization with fixed gain 1 and bias 0 (no trainable state).
pub fn layer_norm_fixed(tape: &mut Tape, x: DiffValue, dim: usize) -> Result<DiffValue> {
    let gain = tape.constant(&vec![1.0; dim], TensorShape::matrix(1, dim));
    let bias = tape.constant(&vec![0.0; dim], TensorShape::matrix(1, dim));
    tape.layer_norm(x, gain, bias, LAYER_NORM_EPS)
}

// ── LSTM cell ────────────────────────────────────────────────────────

/// LSTM cell parameters. Each gate has its own input and recurrent weight
/// matrices, so the forward pass needs no slicing:
///
///   i = sigmoid(x·Wxi + h·Whi + bi)
///   f = sigmoid(x·Wxf + h·Whf + bf)
///   g = tanh   (x·Wxg + h·Whg + bg)
///   o = sigmoid(x·Wxo + h·Who + bo)
///   c' = f ⊙ c + i ⊙ g
///   h' = o ⊙ tanh(c')
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub wx: [ParamId; 4],
    pub wh: [ParamId; 4],
    pub b: [ParamId; 4],
    pub input_dim: usize,
    pub hidden_dim: usize,
}

const GATE_NAMES: [&str; 4] = ["i", "f", "g", "o"];

impl LstmCell {
    /// Initializes all gates with fan-in scaled weights and zero biases,
    /// except the forget-gate bias which starts at +1 to retain state early
    /// in training.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<LstmCell> {
        let fan_in = input_dim + hidden_dim;
        let mut wx = Vec::new();
        let mut wh = Vec::new();
        let mut b = Vec::new();
        for gate in GATE_NAMES {
            let wxd: Vec<f64> =
                (0..input_dim * hidden_dim).map(|_| kaiming_sample(rng, fan_in)).collect();
            wx.push(store.add(
                &format!("{name}.wx{gate}"),
                wxd,
                TensorShape::matrix(input_dim, hidden_dim),
            )?);
            let whd: Vec<f64> =
                (0..hidden_dim * hidden_dim).map(|_| kaiming_sample(rng, fan_in)).collect();
            wh.push(store.add(
                &format!("{name}.wh{gate}"),
                whd,
                TensorShape::matrix(hidden_dim, hidden_dim),
            )?);
            let bias0 = if gate == "f" { 1.0 } else { 0.0 };
            b.push(store.add(
                &format!("{name}.b{gate}"),
                vec![bias0; hidden_dim],
                TensorShape::matrix(1, hidden_dim),
            )?);
        }
        Ok(LstmCell {
            wx: [wx[0], wx[1], wx[2], wx[3]],
            wh: [wh[0], wh[1], wh[2], wh[3]],
            b: [b[0], b[1], b[2], b[3]],
            input_dim,
            hidden_dim,
        })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundLstmCell {
        BoundLstmCell {
            wx: self.wx.map(|p| tape.param(store, p)),
            wh: self.wh.map(|p| tape.param(store, p)),
            b: self.b.map(|p| tape.param(store, p)),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::with_capacity(12);
        ids.extend(self.wx);
        ids.extend(self.wh);
        ids.extend(self.b);
        ids
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLstmCell {
    pub wx: [DiffValue; 4],
    pub wh: [DiffValue; 4],
    pub b: [DiffValue; 4],
}

impl BoundLstmCell {
    /// One step for a batch: `x [B,in]`, `h`/`c` `[B,hidden]` -> `(h', c')`.
    pub fn step(
        &self,
        tape: &mut Tape,
        x: DiffValue,
        h: DiffValue,
        c: DiffValue,
    ) -> Result<(DiffValue, DiffValue)> {
        let mut pre = [None; 4];
        for k in 0..4 {
            let xin = tape.matmul(x, self.wx[k])?;
            let hin = tape.matmul(h, self.wh[k])?;
            let sum = tape.add(xin, hin)?;
            pre[k] = Some(tape.add_bias_row(sum, self.b[k])?);
        }
        let i = tape.sigmoid(pre[0].unwrap());
        let f = tape.sigmoid(pre[1].unwrap());
        let g = tape.tanh(pre[2].unwrap());
        let o = tape.sigmoid(pre[3].unwrap());
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let c_act = tape.tanh(c_next);
        let h_next = tape.mul(o, c_act)?;
        Ok((h_next, c_next))
    }
}
