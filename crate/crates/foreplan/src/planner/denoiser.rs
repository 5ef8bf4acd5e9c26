//! Future-conditioned diffusion transformer. Each block self-attends over
//! action tokens, cross-attends to the scene context (timestep embedding
//! plus scene latent), then to the future condition, then applies a
//! feed-forward, all pre-norm residual. The future cross-attention output
//! projection starts at zero so the untrained block is an exact identity
//! in the condition.

use rand::Rng;

use crate::nn::blocks::{Ffn, LnParams, Mha};
use crate::nn::ops::linear;
use crate::nn::params::{ParamInit, ParamStore};
use crate::nn::tape::{Id, Tape};
use crate::nn::{NnError, Tensor};
use crate::planner::PlannerError;

#[derive(Debug, Clone)]
struct DitBlock {
    self_ln: LnParams,
    self_attn: Mha,
    scene_ln: LnParams,
    scene_attn: Mha,
    fut_ln: LnParams,
    fut_attn: Mha,
    ffn_ln: LnParams,
    ffn: Ffn,
}

impl DitBlock {
    fn register<R: Rng>(
        init: &mut ParamInit<R>,
        prefix: &str,
        d: usize,
        heads: usize,
        ffn_width: usize,
    ) -> Self {
        Self {
            self_ln: LnParams::register(init, &format!("{prefix}.self"), d),
            self_attn: Mha::register(init, &format!("{prefix}.self"), d, heads),
            scene_ln: LnParams::register(init, &format!("{prefix}.scene"), d),
            scene_attn: Mha::register(init, &format!("{prefix}.scene"), d, heads),
            fut_ln: LnParams::register(init, &format!("{prefix}.fut"), d),
            fut_attn: Mha::register_opts(init, &format!("{prefix}.fut"), d, heads, true, true),
            ffn_ln: LnParams::register(init, &format!("{prefix}.ffn"), d),
            ffn: Ffn::register(init, &format!("{prefix}.ffn"), d, ffn_width),
        }
    }

    fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Id,
        scene: Id,
        future: Option<Id>,
    ) -> Result<Id, NnError> {
        let n = self.self_ln.apply(tape, store, x)?;
        let a = self.self_attn.apply(tape, store, n, n, n)?;
        let x = tape.add(a, x);
        let n = self.scene_ln.apply(tape, store, x)?;
        let a = self.scene_attn.apply(tape, store, n, scene, scene)?;
        let x = tape.add(a, x);
        let x = match future {
            Some(cond) => {
                let n = self.fut_ln.apply(tape, store, x)?;
                let a = self.fut_attn.apply(tape, store, n, cond, cond)?;
                tape.add(a, x)
            }
            None => x,
        };
        let n = self.ffn_ln.apply(tape, store, x)?;
        let f = self.ffn.apply(tape, store, n)?;
        Ok(tape.add(f, x))
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserParams {
    pub d: usize,
    pub horizon: usize,
    pub s_train: usize,
    in_w: String,
    in_b: String,
    pos: String,
    steps: String,
    blocks: Vec<DitBlock>,
    out_ln: LnParams,
    out_w: String,
    out_b: String,
}

impl DenoiserParams {
    pub fn register<R: Rng>(
        init: &mut ParamInit<R>,
        d: usize,
        heads: usize,
        layers: usize,
        ffn_width: usize,
        horizon: usize,
        s_train: usize,
    ) -> Self {
        let p = "planner.denoiser";
        let in_w = format!("{p}.in_w");
        let in_b = format!("{p}.in_b");
        let pos = format!("{p}.pos");
        let steps = format!("{p}.steps");
        init.weight(&in_w, 4, d);
        init.zeros(&in_b, vec![d]);
        init.table(&pos, horizon, d);
        init.table(&steps, s_train, d);
        let blocks = (0..layers)
            .map(|i| DitBlock::register(init, &format!("{p}.b{i}"), d, heads, ffn_width))
            .collect();
        let out_ln = LnParams::register(init, &format!("{p}.out"), d);
        let out_w = format!("{p}.out_w");
        let out_b = format!("{p}.out_b");
        init.weight(&out_w, d, 4);
        init.zeros(&out_b, vec![4]);
        Self { d, horizon, s_train, in_w, in_b, pos, steps, blocks, out_ln, out_w, out_b }
    }
}

/// Noise prediction for a noisy action tensor at step index `s_index`
/// (0-based into the training schedule). `future_cond` is the `K x d`
/// foresight latent; `None` skips the future cross-attention entirely,
/// which is how the no-world-model variants run.
pub fn predict_noise(
    tape: &mut Tape,
    store: &ParamStore,
    params: &DenoiserParams,
    a_s: &Tensor,
    s_index: usize,
    z_t: Id,
    future_cond: Option<Id>,
) -> Result<Id, PlannerError> {
    if a_s.shape != vec![params.horizon, 4] {
        return Err(PlannerError::Nn(NnError::DimMismatch(format!(
            "action tensor {:?}, expected [{}, 4]",
            a_s.shape, params.horizon
        ))));
    }
    if s_index >= params.s_train {
        return Err(PlannerError::StepOutOfRange { s: s_index, s_train: params.s_train });
    }
    if tape.value(z_t).shape[1] != params.d {
        return Err(PlannerError::Nn(NnError::DimMismatch(format!(
            "scene width {} vs model width {}",
            tape.value(z_t).shape[1],
            params.d
        ))));
    }
    if let Some(c) = future_cond {
        if tape.value(c).shape[1] != params.d {
            return Err(PlannerError::Nn(NnError::DimMismatch(format!(
                "future condition width {} vs model width {}",
                tape.value(c).shape[1],
                params.d
            ))));
        }
    }
    let actions = tape.constant(a_s.clone());
    let in_w = tape.param(store, &params.in_w);
    let in_b = tape.param(store, &params.in_b);
    let mut x = linear(tape, actions, in_w, in_b)?;
    let pos = tape.param(store, &params.pos);
    x = tape.add(x, pos);
    let table = tape.param(store, &params.steps);
    let e_s = tape.gather_rows(table, &[s_index]);
    let scene = tape.concat_rows(e_s, z_t);
    for block in &params.blocks {
        x = block.apply(tape, store, x, scene, future_cond).map_err(PlannerError::Nn)?;
    }
    let n = params.out_ln.apply(tape, store, x).map_err(PlannerError::Nn)?;
    let out_w = tape.param(store, &params.out_w);
    let out_b = tape.param(store, &params.out_b);
    Ok(linear(tape, n, out_w, out_b)?)
}
