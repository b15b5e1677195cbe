use serde::{Deserialize, Serialize};

use crate::decoder::vocab::{TokenId, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::numeric::ops::{add_assign, cross_entropy_slice, matvec_acc, matvec_t_acc, outer_acc, sigmoid_scalar};
use crate::numeric::{rng::Rng, ParamId, ParamStore};

/// Content tokens of a generated or reference sentence. BOS/EOS are implied;
/// `truncated` marks a generation that hit the length limit before EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<TokenId>,
    #[serde(default)]
    pub truncated: bool,
}

/// LSTM sentence decoder conditioned on a node's fusion feature: the
/// feature initializes the hidden state through an affine map, the cell
/// state starts at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    hidden: usize,
    vocab_size: usize,
    cond_dim: usize,
    embed: ParamId,
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
    w_init: ParamId,
    b_init: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

#[derive(Debug, Clone)]
struct StepCache {
    input: TokenId,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Gate activations i, f, o, g packed in that order.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    d_logits: Vec<f64>,
}

/// Cached teacher-forced pass, consumed by [`Decoder::backward`].
#[derive(Debug, Clone)]
pub struct DecoderPass {
    /// Mean per-token cross-entropy.
    pub loss: f64,
    steps: Vec<StepCache>,
}

impl Decoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cond_dim: usize,
        hidden: usize,
        vocab_size: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if vocab_size < 4 {
            return Err(Error::Vocabulary(format!(
                "vocabulary of {vocab_size} tokens lacks reserved ids"
            )));
        }
        let name = |s: &str| format!("{prefix}.{s}");
        Ok(Decoder {
            hidden,
            vocab_size,
            cond_dim,
            embed: store.add_glorot(name("embed"), vocab_size, hidden, rng)?,
            w_x: store.add_glorot(name("W_x"), 4 * hidden, hidden, rng)?,
            w_h: store.add_glorot(name("W_h"), 4 * hidden, hidden, rng)?,
            b: store.add_zeros(name("b"), &[4 * hidden])?,
            w_init: store.add_glorot(name("W_init"), hidden, cond_dim, rng)?,
            b_init: store.add_zeros(name("b_init"), &[hidden])?,
            w_out: store.add_glorot(name("W_out"), vocab_size, hidden, rng)?,
            b_out: store.add_zeros(name("b_out"), &[vocab_size])?,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn output_params(&self) -> [ParamId; 2] {
        [self.w_out, self.b_out]
    }

    fn initial_state(&self, store: &ParamStore, h_o: &[f64]) -> Result<Vec<f64>> {
        if h_o.len() != self.cond_dim {
            return Err(Error::dim(
                "decoder",
                format!(
                    "conditioning vector has length {}, expected {}",
                    h_o.len(),
                    self.cond_dim
                ),
            ));
        }
        let mut h = store.values(self.b_init).to_vec();
        matvec_acc(store.values(self.w_init), self.hidden, self.cond_dim, h_o, &mut h);
        Ok(h)
    }

    fn cell(
        &self,
        store: &ParamStore,
        input: TokenId,
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let e = &store.values(self.embed)[input as usize * hd..(input as usize + 1) * hd];
        let mut a = store.values(self.b).to_vec();
        matvec_acc(store.values(self.w_x), 4 * hd, hd, e, &mut a);
        matvec_acc(store.values(self.w_h), 4 * hd, hd, h_prev, &mut a);
        for (k, v) in a.iter_mut().enumerate() {
            *v = if k < 3 * hd { sigmoid_scalar(*v) } else { v.tanh() };
        }
        let (i, f, o, g) = (&a[..hd], &a[hd..2 * hd], &a[2 * hd..3 * hd], &a[3 * hd..]);
        let c: Vec<f64> = (0..hd).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
        (a, c, tanh_c, h)
    }

    fn logits(&self, store: &ParamStore, h: &[f64]) -> Vec<f64> {
        let mut logits = store.values(self.b_out).to_vec();
        matvec_acc(store.values(self.w_out), self.vocab_size, self.hidden, h, &mut logits);
        logits
    }

    /// Content tokens of `target` up to its first EOS or PAD.
    fn content<'a>(&self, target: &'a [TokenId]) -> Result<&'a [TokenId]> {
        let end = target
            .iter()
            .position(|&t| t == EOS || t == PAD)
            .unwrap_or(target.len());
        let content = &target[..end];
        if content.is_empty() {
            return Err(Error::EmptyInput("decoder target sentence"));
        }
        if let Some(&bad) = content.iter().find(|&&t| t as usize >= self.vocab_size || t == BOS) {
            return Err(Error::Vocabulary(format!(
                "token id {bad} is not a valid content token for a vocabulary of {}",
                self.vocab_size
            )));
        }
        Ok(content)
    }

    /// Teacher-forced pass: inputs BOS, w1..wn; targets w1..wn, EOS.
    pub fn teacher_forced(&self, store: &ParamStore, h_o: &[f64], target: &[TokenId]) -> Result<DecoderPass> {
        let content = self.content(target)?;
        let mut h = self.initial_state(store, h_o)?;
        let mut c = vec![0.0; self.hidden];
        let inputs = std::iter::once(BOS).chain(content.iter().copied());
        let targets = content.iter().copied().chain(std::iter::once(EOS));
        let mut steps = Vec::with_capacity(content.len() + 1);
        let mut total = 0.0;
        for (input, tgt) in inputs.zip(targets) {
            let (gates, c_new, tanh_c, h_new) = self.cell(store, input, &h, &c);
            let logits = self.logits(store, &h_new);
            let mut d_logits = vec![0.0; self.vocab_size];
            total += cross_entropy_slice(&logits, tgt as usize, &mut d_logits);
            steps.push(StepCache {
                input,
                h_prev: std::mem::replace(&mut h, h_new.clone()),
                c_prev: std::mem::replace(&mut c, c_new),
                gates,
                tanh_c,
                h: h_new,
                d_logits,
            });
        }
        Ok(DecoderPass {
            loss: total / steps.len() as f64,
            steps,
        })
    }

    /// BPTT through a teacher-forced pass for the loss `weight · pass.loss`.
    /// Accumulates parameter gradients and returns `∂/∂h^o`.
    pub fn backward(&self, store: &mut ParamStore, h_o: &[f64], pass: &DecoderPass, weight: f64) -> Vec<f64> {
        let hd = self.hidden;
        let scale = weight / pass.steps.len() as f64;
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        for step in pass.steps.iter().rev() {
            let d_logits: Vec<f64> = step.d_logits.iter().map(|g| g * scale).collect();
            let mut dh = dh_next;
            {
                let (w, dw) = store.value_and_grad(self.w_out);
                outer_acc(dw, &d_logits, &step.h);
                matvec_t_acc(w, self.vocab_size, hd, &d_logits, &mut dh);
            }
            add_assign(store.grad_mut(self.b_out), &d_logits);

            let g = &step.gates;
            let (i, f, o, gg) = (&g[..hd], &g[hd..2 * hd], &g[2 * hd..3 * hd], &g[3 * hd..]);
            let mut da = vec![0.0; 4 * hd];
            let mut dc_prev = vec![0.0; hd];
            for k in 0..hd {
                let tc = step.tanh_c[k];
                let d_o = dh[k] * tc;
                let dc = dc_next[k] + dh[k] * o[k] * (1.0 - tc * tc);
                let d_i = dc * gg[k];
                let d_g = dc * i[k];
                let d_f = dc * step.c_prev[k];
                dc_prev[k] = dc * f[k];
                da[k] = d_i * i[k] * (1.0 - i[k]);
                da[hd + k] = d_f * f[k] * (1.0 - f[k]);
                da[2 * hd + k] = d_o * o[k] * (1.0 - o[k]);
                da[3 * hd + k] = d_g * (1.0 - gg[k] * gg[k]);
            }
            let row = step.input as usize * hd;
            let e: Vec<f64> = store.values(self.embed)[row..row + hd].to_vec();
            let mut de = vec![0.0; hd];
            {
                let (w, dw) = store.value_and_grad(self.w_x);
                outer_acc(dw, &da, &e);
                matvec_t_acc(w, 4 * hd, hd, &da, &mut de);
            }
            add_assign(&mut store.grad_mut(self.embed)[row..row + hd], &de);
            let mut dh_prev = vec![0.0; hd];
            {
                let (w, dw) = store.value_and_grad(self.w_h);
                outer_acc(dw, &da, &step.h_prev);
                matvec_t_acc(w, 4 * hd, hd, &da, &mut dh_prev);
            }
            add_assign(store.grad_mut(self.b), &da);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        let mut d_h_o = vec![0.0; self.cond_dim];
        {
            let (w, dw) = store.value_and_grad(self.w_init);
            outer_acc(dw, &dh_next, h_o);
            matvec_t_acc(w, hd, self.cond_dim, &dh_next, &mut d_h_o);
        }
        add_assign(store.grad_mut(self.b_init), &dh_next);
        d_h_o
    }

    /// Mean token loss of `target`, with gradients of `weight · loss`
    /// accumulated into `store`. Returns the unweighted loss and `∂/∂h^o`.
    pub fn loss_and_backward(
        &self,
        store: &mut ParamStore,
        h_o: &[f64],
        target: &[TokenId],
        weight: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let pass = self.teacher_forced(store, h_o, target)?;
        let d = self.backward(store, h_o, &pass, weight);
        Ok((pass.loss, d))
    }

    /// Argmax decoding until EOS or `max_len` content tokens.
    pub fn decode_greedy(&self, store: &ParamStore, h_o: &[f64], max_len: usize) -> Result<Sentence> {
        let mut h = self.initial_state(store, h_o)?;
        let mut c = vec![0.0; self.hidden];
        let mut input = BOS;
        let mut tokens = Vec::new();
        loop {
            let (_, c_new, _, h_new) = self.cell(store, input, &h, &c);
            let logits = self.logits(store, &h_new);
            let mut best = 0;
            for (k, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = k;
                }
            }
            let next = best as TokenId;
            if next == EOS {
                return Ok(Sentence {
                    tokens,
                    truncated: false,
                });
            }
            if tokens.len() == max_len {
                return Ok(Sentence {
                    tokens,
                    truncated: true,
                });
            }
            tokens.push(next);
            input = next;
            h = h_new;
            c = c_new;
        }
    }
}
