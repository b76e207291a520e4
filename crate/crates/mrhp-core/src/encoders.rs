//! Modality-specific encoders.
//!
//! Text: token ids → embedding rows → unidirectional LSTM, keeping the
//! hidden state at every timestep (`l×d`). Images: precomputed ROI feature
//! rows → linear projection to width d → one self-attention block (`m×d`).

use crate::init;
use crate::params::{ParamBinding, ParamId, ParamSet};
use crate::tensor::{Result, Tape, Tensor, TensorId};
use rand::Rng;

pub const LN_EPS: f64 = 1e-5;

/// Trainable word embedding table. Row 0 is reserved for the unknown token.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn init<R: Rng>(ps: &mut ParamSet, name: &str, vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        let table = ps.add(
            format!("{name}.table"),
            init::normal_matrix(rng, vocab_size, dim, 0.1),
        );
        EmbeddingTable {
            table,
            vocab_size,
            dim,
        }
    }

    /// Row lookup; the gradient scatters back to the used rows only.
    pub fn embed(&self, tape: &mut Tape, bind: &ParamBinding, tokens: &[u32]) -> Result<TensorId> {
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        tape.embed(bind.id(self.table), &ids)
    }
}

const GATE_NAMES: [&str; 4] = ["input", "forget", "cell", "output"];

/// One unidirectional LSTM layer: per-gate input weights `W[d_in×d]`,
/// recurrent weights `U[d×d]`, and biases. The forget-gate bias starts at 1.
#[derive(Debug, Clone)]
pub struct LstmParams {
    w: [ParamId; 4],
    u: [ParamId; 4],
    b: [ParamId; 4],
    pub hidden: usize,
}

impl LstmParams {
    pub fn init<R: Rng>(ps: &mut ParamSet, name: &str, d_in: usize, d: usize, rng: &mut R) -> Self {
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in GATE_NAMES {
            w.push(ps.add(format!("{name}.w_{gate}"), init::uniform_fan_in(rng, d_in, d)));
            u.push(ps.add(format!("{name}.u_{gate}"), init::uniform_fan_in(rng, d, d)));
            let bias = if gate == "forget" {
                init::ones(d)
            } else {
                init::zeros_vec(d)
            };
            b.push(ps.add(format!("{name}.b_{gate}"), bias));
        }
        LstmParams {
            w: [w[0], w[1], w[2], w[3]],
            u: [u[0], u[1], u[2], u[3]],
            b: [b[0], b[1], b[2], b[3]],
            hidden: d,
        }
    }

    /// Encode an embedded sequence (`l×d_in`) into per-timestep hidden
    /// states (`l×d`). Initial hidden and cell state are zero.
    pub fn encode(&self, tape: &mut Tape, bind: &ParamBinding, embedded: TensorId) -> Result<TensorId> {
        let l = tape.value(embedded).rows();
        let d = self.hidden;
        let mut h = tape.input(Tensor::zeros(vec![1, d]));
        let mut c = tape.input(Tensor::zeros(vec![1, d]));
        let mut states = Vec::with_capacity(l);
        for t in 0..l {
            let x_t = tape.slice_rows(embedded, t, 1)?;
            let mut pre = [None; 4];
            for gate in 0..4 {
                let xw = tape.matmul(x_t, bind.id(self.w[gate]))?;
                let hu = tape.matmul(h, bind.id(self.u[gate]))?;
                let sum = tape.add(xw, hu)?;
                pre[gate] = Some(tape.add_bias(sum, bind.id(self.b[gate]))?);
            }
            let i = tape.sigmoid(pre[0].unwrap())?;
            let f = tape.sigmoid(pre[1].unwrap())?;
            let g = tape.tanh(pre[2].unwrap())?;
            let o = tape.sigmoid(pre[3].unwrap())?;
            let fc = tape.mul(f, c)?;
            let ig = tape.mul(i, g)?;
            c = tape.add(fc, ig)?;
            let ct = tape.tanh(c)?;
            h = tape.mul(o, ct)?;
            states.push(h);
        }
        tape.concat_rows(&states)
    }
}

/// Multi-head scaled dot-product self-attention with output projection and
/// (optionally) residual + layer norm.
#[derive(Debug, Clone)]
pub struct SelfAttnParams {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln_gamma: ParamId,
    ln_beta: ParamId,
    pub heads: usize,
    pub width: usize,
    pub residual_ln: bool,
}

impl SelfAttnParams {
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        d: usize,
        heads: usize,
        residual_ln: bool,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        SelfAttnParams {
            wq: ps.add(format!("{name}.wq"), init::uniform_fan_in(rng, d, d)),
            wk: ps.add(format!("{name}.wk"), init::uniform_fan_in(rng, d, d)),
            wv: ps.add(format!("{name}.wv"), init::uniform_fan_in(rng, d, d)),
            wo: ps.add(format!("{name}.wo"), init::uniform_fan_in(rng, d, d)),
            bo: ps.add(format!("{name}.bo"), init::zeros_vec(d)),
            ln_gamma: ps.add(format!("{name}.ln_gamma"), init::ones(d)),
            ln_beta: ps.add(format!("{name}.ln_beta"), init::zeros_vec(d)),
            heads,
            width: d,
            residual_ln,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bind: &ParamBinding, x: TensorId) -> Result<TensorId> {
        let q = tape.matmul(x, bind.id(self.wq))?;
        let k = tape.matmul(x, bind.id(self.wk))?;
        let v = tape.matmul(x, bind.id(self.wv))?;
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scaled = tape.scale(scores, scale)?;
            let attn = tape.softmax(scaled, 1)?;
            outputs.push(tape.matmul(attn, vh)?);
        }
        let z = tape.concat_cols(&outputs)?;
        let proj = tape.matmul(z, bind.id(self.wo))?;
        let out = tape.add_bias(proj, bind.id(self.bo))?;
        if self.residual_ln {
            let res = tape.add(out, x)?;
            tape.layer_norm(res, bind.id(self.ln_gamma), bind.id(self.ln_beta), LN_EPS)
        } else {
            Ok(out)
        }
    }
}

/// ROI feature encoder: linear projection from the dataset feature width to
/// d, then one self-attention block over the object axis.
#[derive(Debug, Clone)]
pub struct ImageEncoderParams {
    w_proj: ParamId,
    b_proj: ParamId,
    pub attn: SelfAttnParams,
    pub input_dim: usize,
}

impl ImageEncoderParams {
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        input_dim: usize,
        d: usize,
        heads: usize,
        residual_ln: bool,
        rng: &mut R,
    ) -> Self {
        ImageEncoderParams {
            w_proj: ps.add(format!("{name}.w_proj"), init::uniform_fan_in(rng, input_dim, d)),
            b_proj: ps.add(format!("{name}.b_proj"), init::zeros_vec(d)),
            attn: SelfAttnParams::init(ps, &format!("{name}.attn"), d, heads, residual_ln, rng),
            input_dim,
        }
    }

    /// Project ROI rows to width d on the tape, without attention.
    pub fn project(&self, tape: &mut Tape, bind: &ParamBinding, rows: &[Vec<f64>]) -> Result<TensorId> {
        let m = rows.len();
        let mut flat = Vec::with_capacity(m * self.input_dim);
        for row in rows {
            flat.extend_from_slice(row);
        }
        let x = tape.input(Tensor::matrix(m, self.input_dim, flat)?);
        let proj = tape.matmul(x, bind.id(self.w_proj))?;
        tape.add_bias(proj, bind.id(self.b_proj))
    }

    /// Full image encoding: `A = SelfAttn(project(rows))`, shape `m×d`.
    pub fn encode(&self, tape: &mut Tape, bind: &ParamBinding, rows: &[Vec<f64>]) -> Result<TensorId> {
        let projected = self.project(tape, bind, rows)?;
        self.attn.forward(tape, bind, projected)
    }
}
