//! Parameterized building blocks shared by the encoders, the context-fusion
//! branches and the heads.

use rand::Rng;

use crate::tensor::{Graph, ParamId, ParamStore, Result, Role, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

/// Glorot-uniform matrix.
pub fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(vec![rows, cols], data).expect("valid shape")
}

/// Uniform matrix with the given standard deviation.
pub fn uniform_std(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let a = std * 3f64.sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(vec![rows, cols], data).expect("valid shape")
}

/// `y = x W + b` with `W [in×out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        role: Role,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier(rng, input, output), role);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[output]), role));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(ps, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(ps, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, role: Role) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0), role),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim]), role),
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Result of a multi-head attention call. `weights` holds one `[queries×keys]`
/// attention matrix per head.
pub struct Attended {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Scaled dot-product multi-head attention with trainable Q/K/V/O projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, role: Role, rng: &mut impl Rng) -> Self {
        assert!(
            heads > 0 && dim.is_multiple_of(heads),
            "dim {dim} not divisible by heads {heads}"
        );
        Self {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, true, role, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, true, role, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, true, role, rng),
            output: Linear::new(store, &format!("{name}.o"), dim, dim, true, role, rng),
            heads,
            dim,
        }
    }

    /// `query [m×d]` attends over `memory [n×d]`. `mask` is `[m×n]` or a
    /// single `[n]` row of 0 / -inf entries.
    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        query: Var,
        memory: Var,
        mask: Option<&Tensor>,
    ) -> Result<Attended> {
        let q = self.query.forward(g, ps, query)?;
        let k = self.key.forward(g, ps, memory)?;
        let v = self.value.forward(g, ps, memory)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, lo, hi)?,
                    g.slice_cols(k, lo, hi)?,
                    g.slice_cols(v, lo, hi)?,
                )
            };
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let w = match mask {
                Some(m) => g.masked_softmax(scores, m)?,
                None => g.softmax(scores)?,
            };
            outs.push(g.matmul(w, vh)?);
            weights.push(w);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        let output = self.output.forward(g, ps, cat)?;
        Ok(Attended { output, weights })
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, role: Role, rng: &mut impl Rng) -> Self {
        Self {
            inner: Linear::new(store, &format!("{name}.inner"), dim, hidden, true, role, rng),
            outer: Linear::new(store, &format!("{name}.outer"), hidden, dim, true, role, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, ps, x)?;
        let h = g.gelu(h);
        self.outer.forward(g, ps, h)
    }
}

/// Post-norm transformer block: `x = LN(x + MHA(x)); x = LN(x + FFN(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        role: Role,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, role, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim, role),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, ff_dim, role, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim, role),
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var, mask: Option<&Tensor>) -> Result<Var> {
        let a = self.attention.forward(g, ps, x, x, mask)?.output;
        let x = g.add(x, a)?;
        let x = self.norm1.forward(g, ps, x)?;
        let f = self.ffn.forward(g, ps, x)?;
        let x = g.add(x, f)?;
        self.norm2.forward(g, ps, x)
    }
}

/// Gated recurrent cell:
///
/// ```text
/// z  = σ(x Wz + h Uz + bz)
/// r  = σ(x Wr + h Ur + br)
/// h~ = tanh(x Wh + (r ⊙ h) Uh + bh)
/// h' = (1 - z) ⊙ h~ + z ⊙ h
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input_update: Linear,
    pub hidden_update: Linear,
    pub input_reset: Linear,
    pub hidden_reset: Linear,
    pub input_candidate: Linear,
    pub hidden_candidate: Linear,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let t = Role::Trainable;
        Self {
            input_update: Linear::new(store, &format!("{name}.wz"), input, hidden, true, t, rng),
            hidden_update: Linear::new(store, &format!("{name}.uz"), hidden, hidden, false, t, rng),
            input_reset: Linear::new(store, &format!("{name}.wr"), input, hidden, true, t, rng),
            hidden_reset: Linear::new(store, &format!("{name}.ur"), hidden, hidden, false, t, rng),
            input_candidate: Linear::new(store, &format!("{name}.wh"), input, hidden, true, t, rng),
            hidden_candidate: Linear::new(store, &format!("{name}.uh"), hidden, hidden, false, t, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let zx = self.input_update.forward(g, ps, x)?;
        let zh = self.hidden_update.forward(g, ps, h)?;
        let z = g.add(zx, zh)?;
        let z = g.sigmoid(z);
        let rx = self.input_reset.forward(g, ps, x)?;
        let rh = self.hidden_reset.forward(g, ps, h)?;
        let r = g.add(rx, rh)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, h)?;
        let cx = self.input_candidate.forward(g, ps, x)?;
        let ch = self.hidden_candidate.forward(g, ps, rh)?;
        let c = g.add(cx, ch)?;
        let c = g.tanh(c);
        let keep = g.mul(z, h)?;
        let one_minus_z = g.one_minus(z);
        let fresh = g.mul(one_minus_z, c)?;
        g.add(fresh, keep)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [
            &self.input_update,
            &self.hidden_update,
            &self.input_reset,
            &self.hidden_reset,
            &self.input_candidate,
            &self.hidden_candidate,
        ]
        .iter()
        .flat_map(|l| l.params())
        .collect()
    }
}
