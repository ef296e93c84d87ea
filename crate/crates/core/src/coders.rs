//! LSTM building blocks: the shared bidirectional encoder and the attentional
//! decoder with input feeding, a countdown feature and length-aware
//! initialization.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..=bound)).collect())
}

/// One LSTM layer in one direction. Gates are stacked `[i; f; g; o]`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(&[4 * hidden, input + hidden], bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), uniform(&[4 * hidden], bound, rng));
        LstmCell {
            weight,
            bias,
            input,
            hidden,
        }
    }

    pub fn num_params(input: usize, hidden: usize) -> usize {
        4 * hidden * (input + hidden) + 4 * hidden
    }

    /// Advances `(h, c)` by one input vector.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xh = g.concat(&[x, h])?;
        let pre = g.matmul(w, xh)?;
        let pre = g.add(pre, b)?;
        let n = self.hidden;
        let i = g.slice(pre, 0, n)?;
        let f = g.slice(pre, n, n)?;
        let cand = g.slice(pre, 2 * n, n)?;
        let o = g.slice(pre, 3 * n, n)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;
        let squashed = g.tanh(c_new);
        let h_new = g.mul(o, squashed)?;
        Ok((h_new, c_new))
    }
}

fn zeros(g: &mut Graph, n: usize) -> Var {
    g.constant(Tensor::zeros(&[n]))
}

/// Output of the bidirectional encoder over `N` inputs.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `h^s_t = [→h_t; ←h_t]` of the top layer.
    pub states: Vec<Var>,
    /// `states` stacked as an `N × 2h` matrix.
    pub matrix: Var,
    /// Left-to-right state after the last token.
    pub forward_final: Var,
    /// Right-to-left state after reading back to the first token.
    pub backward_final: Var,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Stacked bidirectional LSTM; layer `l > 0` reads `[→h; ←h]` of layer `l - 1`.
#[derive(Clone, Debug)]
pub struct BiEncoder {
    pub layers: Vec<(LstmCell, LstmCell)>,
    pub hidden: usize,
}

impl BiEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                let fwd = LstmCell::new(store, &format!("{name}.l{l}.fwd"), inp, hidden, rng);
                let bwd = LstmCell::new(store, &format!("{name}.l{l}.bwd"), inp, hidden, rng);
                (fwd, bwd)
            })
            .collect();
        BiEncoder { layers, hidden }
    }

    pub fn num_params(input: usize, hidden: usize, layers: usize) -> usize {
        (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                2 * LstmCell::num_params(inp, hidden)
            })
            .sum()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn encode(&self, g: &mut Graph, store: &ParamStore, inputs: &[Var]) -> Result<EncoderOutput> {
        if inputs.is_empty() {
            return Err(Error::Input("cannot encode an empty sequence".into()));
        }
        let n = inputs.len();
        let h = self.hidden;
        let mut current: Vec<Var> = inputs.to_vec();
        let mut fwd_final = None;
        let mut bwd_final = None;
        for (fwd, bwd) in &self.layers {
            let mut fwd_states = Vec::with_capacity(n);
            let (mut hs, mut cs) = (zeros(g, h), zeros(g, h));
            for &x in &current {
                (hs, cs) = fwd.step(g, store, x, hs, cs)?;
                fwd_states.push(hs);
            }
            let mut bwd_states = vec![hs; n];
            let (mut hs, mut cs) = (zeros(g, h), zeros(g, h));
            for t in (0..n).rev() {
                (hs, cs) = bwd.step(g, store, current[t], hs, cs)?;
                bwd_states[t] = hs;
            }
            fwd_final = Some(fwd_states[n - 1]);
            bwd_final = Some(bwd_states[0]);
            current = fwd_states
                .iter()
                .zip(&bwd_states)
                .map(|(&f, &b)| g.concat(&[f, b]))
                .collect::<Result<_>>()?;
        }
        let matrix = g.stack(&current)?;
        Ok(EncoderOutput {
            states: current,
            matrix,
            forward_final: fwd_final.expect("at least one layer"),
            backward_final: bwd_final.expect("at least one layer"),
        })
    }
}

/// `W_c`, its bias and the length scale `w_v` of the decoder initializer.
#[derive(Clone, Debug)]
pub struct InitParams {
    pub w_c: ParamId,
    pub b_c: ParamId,
    pub w_len: ParamId,
}

/// Recurrent state carried between decoder steps.
#[derive(Clone, Debug)]
pub struct DecoderState {
    /// `(h, c)` per layer, bottom first.
    pub layers: Vec<(Var, Var)>,
    /// Previous attention context, fed back as input.
    pub context: Var,
    pub step: usize,
}

impl DecoderState {
    pub fn top(&self) -> Var {
        self.layers.last().expect("non-empty decoder").0
    }
}

/// Result of one decoder step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub logits: Var,
    pub state: DecoderState,
    pub context: Var,
    pub attention: Var,
}

/// Attentional LSTM decoder whose output projection is tied to the embedding matrix.
#[derive(Clone, Debug)]
pub struct AttentionDecoder {
    pub cells: Vec<LstmCell>,
    pub w_a: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    /// Tied output projection (the shared embedding matrix).
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub w_d: ParamId,
    pub init: InitParams,
    pub emb_dim: usize,
    pub enc_dim: usize,
    pub hidden: usize,
}

impl AttentionDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        embedding: ParamId,
        emb_dim: usize,
        enc_dim: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let vocab = store.value(embedding).rows();
        let cells = (0..layers)
            .map(|l| {
                let inp = if l == 0 { emb_dim + enc_dim + 1 } else { hidden };
                LstmCell::new(store, &format!("{name}.l{l}"), inp, hidden, rng)
            })
            .collect();
        let b_attn = 1.0 / (hidden as f64).sqrt();
        let w_a = store.add(format!("{name}.w_a"), uniform(&[enc_dim, hidden], b_attn, rng));
        let ln_gain = store.add(format!("{name}.ln_gain"), Tensor::from_parts(vec![enc_dim], vec![1.0; enc_dim]));
        let ln_bias = store.add(format!("{name}.ln_bias"), Tensor::zeros(&[enc_dim]));
        let b_out = 1.0 / ((enc_dim + hidden) as f64).sqrt();
        let w_o = store.add(format!("{name}.w_o"), uniform(&[emb_dim, enc_dim + hidden], b_out, rng));
        let b_o = store.add(format!("{name}.b_o"), Tensor::zeros(&[emb_dim]));
        let b_v = store.add(format!("{name}.b_v"), Tensor::zeros(&[vocab]));
        let w_d = store.add(format!("{name}.w_d"), Tensor::scalar(1.0));
        let b_init = 1.0 / ((enc_dim + 2) as f64).sqrt();
        let init = InitParams {
            w_c: store.add(format!("{name}.w_c"), uniform(&[hidden, enc_dim + 2], b_init, rng)),
            b_c: store.add(format!("{name}.b_c"), Tensor::zeros(&[hidden])),
            w_len: store.add(format!("{name}.w_v"), Tensor::scalar(0.01)),
        };
        AttentionDecoder {
            cells,
            w_a,
            ln_gain,
            ln_bias,
            w_o,
            b_o,
            w_v: embedding,
            b_v,
            w_d,
            init,
            emb_dim,
            enc_dim,
            hidden,
        }
    }

    /// Parameters owned by one decoder (the tied projection is not counted).
    pub fn num_params(vocab: usize, emb_dim: usize, enc_dim: usize, hidden: usize, layers: usize) -> usize {
        let cells: usize = (0..layers)
            .map(|l| {
                let inp = if l == 0 { emb_dim + enc_dim + 1 } else { hidden };
                LstmCell::num_params(inp, hidden)
            })
            .sum();
        cells
            + enc_dim * hidden
            + 2 * enc_dim
            + emb_dim * (enc_dim + hidden)
            + emb_dim
            + vocab
            + 1
            + hidden * (enc_dim + 2)
            + hidden
            + 1
    }

    /// `h_0 = tanh(W_c [→h_N; ←h_1; w_v·M; M/N] + b)` for the bottom layer;
    /// every other hidden, every cell state and the initial context are zero.
    pub fn init_state(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        enc: &EncoderOutput,
        target_len: usize,
        source_len: usize,
    ) -> Result<DecoderState> {
        if target_len == 0 || source_len == 0 {
            return Err(Error::Input(format!(
                "decoder init needs positive lengths, got M={target_len} N={source_len}"
            )));
        }
        let w_len = g.param(store, self.init.w_len);
        let scaled = g.scale(w_len, target_len as f64);
        let ratio = g.constant(Tensor::scalar(target_len as f64 / source_len as f64));
        let features = g.concat(&[enc.forward_final, enc.backward_final, scaled, ratio])?;
        let w_c = g.param(store, self.init.w_c);
        let b_c = g.param(store, self.init.b_c);
        let pre = g.matmul(w_c, features)?;
        let pre = g.add(pre, b_c)?;
        let h0 = g.tanh(pre);
        let mut layers = Vec::with_capacity(self.cells.len());
        for l in 0..self.cells.len() {
            let h = if l == 0 { h0 } else { zeros(g, self.hidden) };
            let c = zeros(g, self.hidden);
            layers.push((h, c));
        }
        let context = zeros(g, self.enc_dim);
        Ok(DecoderState {
            layers,
            context,
            step: 0,
        })
    }

    /// Global bilinear attention: `a = softmax(H W_a h)`, `c = Hᵀ a`.
    pub fn attend(&self, g: &mut Graph, store: &ParamStore, enc: &EncoderOutput, h: Var) -> Result<(Var, Var)> {
        let w_a = g.param(store, self.w_a);
        let q = g.matmul(w_a, h)?;
        let scores = g.matmul(enc.matrix, q)?;
        let weights = g.softmax(scores, 1.0)?;
        let context = g.matvec_t(enc.matrix, weights)?;
        Ok((weights, context))
    }

    /// Feeds `[input; previous context; w_d·countdown]` through the LSTM stack,
    /// attends with the new top state and projects to vocabulary logits.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        enc: &EncoderOutput,
        state: &DecoderState,
        input: Var,
        countdown: f64,
    ) -> Result<StepOutput> {
        let w_d = g.param(store, self.w_d);
        let count = g.scale(w_d, countdown);
        let mut x = g.concat(&[input, state.context, count])?;
        let mut layers = Vec::with_capacity(self.cells.len());
        for (cell, &(h, c)) in self.cells.iter().zip(&state.layers) {
            let (h, c) = cell.step(g, store, x, h, c)?;
            layers.push((h, c));
            x = h;
        }
        let top = x;
        let (attention, context) = self.attend(g, store, enc, top)?;
        let gain = g.param(store, self.ln_gain);
        let bias = g.param(store, self.ln_bias);
        let normed = g.layer_norm(context, gain, bias)?;
        let w_o = g.param(store, self.w_o);
        let b_o = g.param(store, self.b_o);
        let joined = g.concat(&[normed, top])?;
        let o = g.matmul(w_o, joined)?;
        let o = g.add(o, b_o)?;
        let o = g.tanh(o);
        let w_v = g.param(store, self.w_v);
        let b_v = g.param(store, self.b_v);
        let logits = g.matmul(w_v, o)?;
        let logits = g.add(logits, b_v)?;
        Ok(StepOutput {
            logits,
            state: DecoderState {
                layers,
                context,
                step: state.step + 1,
            },
            context,
            attention,
        })
    }
}
