//! Reusable transformer building blocks: multi-head attention with learned
//! projections, feed-forward layers, and the pre-norm decoder layer shared
//! by the latent predictor and the denoiser.

use rand::Rng;

use crate::nn::ops::{linear, layer_norm, LN_EPS};
use crate::nn::params::{ParamInit, ParamStore};
use crate::nn::tape::{Id, Tape};
use crate::nn::NnError;

/// Learned layer-norm scale/shift pair.
#[derive(Debug, Clone)]
pub struct LnParams {
    pub gamma: String,
    pub beta: String,
}

impl LnParams {
    pub fn register<R: Rng>(init: &mut ParamInit<R>, prefix: &str, d: usize) -> Self {
        let gamma = format!("{prefix}.ln_g");
        let beta = format!("{prefix}.ln_b");
        init.ones(&gamma, vec![d]);
        init.zeros(&beta, vec![d]);
        Self { gamma, beta }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Id) -> Result<Id, NnError> {
        let g = tape.param(store, &self.gamma);
        let b = tape.param(store, &self.beta);
        layer_norm(tape, x, g, b, LN_EPS)
    }
}

/// Multi-head attention with learned query/key/value projections and an
/// optional output projection (the alignment adapter omits it).
#[derive(Debug, Clone)]
pub struct Mha {
    pub heads: usize,
    wq: String,
    bq: String,
    wk: String,
    bk: String,
    wv: String,
    bv: String,
    out: Option<(String, String)>,
}

impl Mha {
    pub fn register<R: Rng>(init: &mut ParamInit<R>, prefix: &str, d: usize, heads: usize) -> Self {
        Self::register_opts(init, prefix, d, heads, true, false)
    }

    /// `zero_out` zero-initializes the output projection so the layer starts
    /// as an exact identity in its residual position.
    pub fn register_opts<R: Rng>(
        init: &mut ParamInit<R>,
        prefix: &str,
        d: usize,
        heads: usize,
        with_output_proj: bool,
        zero_out: bool,
    ) -> Self {
        assert!(d % heads == 0, "width {d} not divisible by {heads} heads");
        let mk = |suffix: &str| format!("{prefix}.{suffix}");
        init.weight(&mk("wq"), d, d);
        init.zeros(&mk("bq"), vec![d]);
        init.weight(&mk("wk"), d, d);
        init.zeros(&mk("bk"), vec![d]);
        init.weight(&mk("wv"), d, d);
        init.zeros(&mk("bv"), vec![d]);
        let out = if with_output_proj {
            if zero_out {
                init.zeros(&mk("wo"), vec![d, d]);
            } else {
                init.weight(&mk("wo"), d, d);
            }
            init.zeros(&mk("bo"), vec![d]);
            Some((mk("wo"), mk("bo")))
        } else {
            None
        };
        Self {
            heads,
            wq: mk("wq"),
            bq: mk("bq"),
            wk: mk("wk"),
            bk: mk("bk"),
            wv: mk("wv"),
            bv: mk("bv"),
            out,
        }
    }

    /// `softmax(Q K^T / sqrt(d_h)) V` per head over projected inputs.
    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        q_in: Id,
        k_in: Id,
        v_in: Id,
    ) -> Result<Id, NnError> {
        if tape.value(k_in).shape[0] == 0 {
            return Err(NnError::EmptyContext);
        }
        if tape.value(q_in).shape[1] != tape.value(k_in).shape[1] {
            return Err(NnError::DimMismatch(format!(
                "attention width: q {:?} vs k {:?}",
                tape.value(q_in).shape,
                tape.value(k_in).shape
            )));
        }
        let wq = tape.param(store, &self.wq);
        let bq = tape.param(store, &self.bq);
        let wk = tape.param(store, &self.wk);
        let bk = tape.param(store, &self.bk);
        let wv = tape.param(store, &self.wv);
        let bv = tape.param(store, &self.bv);
        let q = linear(tape, q_in, wq, bq)?;
        let k = linear(tape, k_in, wk, bk)?;
        let v = linear(tape, v_in, wv, bv)?;
        let attn = tape.attention(q, k, v, self.heads);
        match &self.out {
            Some((wo, bo)) => {
                let wo = tape.param(store, wo);
                let bo = tape.param(store, bo);
                linear(tape, attn, wo, bo)
            }
            None => Ok(attn),
        }
    }
}

/// Two-layer feed-forward with GELU.
#[derive(Debug, Clone)]
pub struct Ffn {
    w1: String,
    b1: String,
    w2: String,
    b2: String,
}

impl Ffn {
    pub fn register<R: Rng>(init: &mut ParamInit<R>, prefix: &str, d: usize, hidden: usize) -> Self {
        let mk = |suffix: &str| format!("{prefix}.{suffix}");
        init.weight(&mk("w1"), d, hidden);
        init.zeros(&mk("b1"), vec![hidden]);
        init.weight(&mk("w2"), hidden, d);
        init.zeros(&mk("b2"), vec![d]);
        Self { w1: mk("w1"), b1: mk("b1"), w2: mk("w2"), b2: mk("b2") }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Id) -> Result<Id, NnError> {
        let w1 = tape.param(store, &self.w1);
        let b1 = tape.param(store, &self.b1);
        let w2 = tape.param(store, &self.w2);
        let b2 = tape.param(store, &self.b2);
        let h = linear(tape, x, w1, b1)?;
        let h = tape.gelu(h);
        linear(tape, h, w2, b2)
    }
}

/// Pre-norm decoder layer: self-attention, cross-attention over a context,
/// and a feed-forward, each wrapped in a residual.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    self_ln: LnParams,
    self_attn: Mha,
    cross_ln: LnParams,
    cross_attn: Mha,
    ffn_ln: LnParams,
    ffn: Ffn,
}

impl DecoderLayer {
    pub fn register<R: Rng>(
        init: &mut ParamInit<R>,
        prefix: &str,
        d: usize,
        heads: usize,
        ffn_width: usize,
    ) -> Self {
        Self {
            self_ln: LnParams::register(init, &format!("{prefix}.self"), d),
            self_attn: Mha::register(init, &format!("{prefix}.self"), d, heads),
            cross_ln: LnParams::register(init, &format!("{prefix}.cross"), d),
            cross_attn: Mha::register(init, &format!("{prefix}.cross"), d, heads),
            ffn_ln: LnParams::register(init, &format!("{prefix}.ffn"), d),
            ffn: Ffn::register(init, &format!("{prefix}.ffn"), d, ffn_width),
        }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Id,
        context: Id,
    ) -> Result<Id, NnError> {
        let n = self.self_ln.apply(tape, store, x)?;
        let a = self.self_attn.apply(tape, store, n, n, n)?;
        let x = tape.add(a, x);
        let n = self.cross_ln.apply(tape, store, x)?;
        let a = self.cross_attn.apply(tape, store, n, context, context)?;
        let x = tape.add(a, x);
        let n = self.ffn_ln.apply(tape, store, x)?;
        let f = self.ffn.apply(tape, store, n)?;
        Ok(tape.add(f, x))
    }
}
