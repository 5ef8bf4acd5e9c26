//! Latent dynamics predictor and future alignment adapter: learnable future
//! queries decode the current scene plus a trajectory intent into a compact
//! foresight latent, which cross-attention can ground against an encoded
//! future observation during training.

use rand::Rng;

use crate::geometry::{tokenize_trajectory, NormStats, Trajectory, TokenizerParams};
use crate::nn::blocks::{DecoderLayer, LnParams, Mha};
use crate::nn::params::{ParamInit, ParamStore};
use crate::nn::tape::{Id, Tape};
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum WorldModelError {
    #[error("width mismatch: scene tokens {scene} vs conditioning tokens {cond}")]
    WidthMismatch { scene: usize, cond: usize },
    #[error("grounded latent required when a future frame is present")]
    MissingGrounded,
    #[error("alpha {0} outside [0, 1]")]
    BadAlpha(f32),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Where a foresight latent came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Predicted,
    Grounded,
    Mixed,
    NullBranch,
    KinBranch,
    TwBranch,
}

/// `K x d` foresight tokens plus their provenance.
#[derive(Debug, Clone, Copy)]
pub struct FutureLatent {
    pub id: Id,
    pub provenance: Provenance,
}

/// Trajectory intent fed to the predictor: tokenized poses or the learned
/// null sequence.
#[derive(Debug, Clone, Copy)]
pub enum TrajCondition {
    Tokens(Id),
    Null,
}

#[derive(Debug, Clone, Copy)]
pub struct WorldModelConfig {
    pub d: usize,
    pub heads: usize,
    pub k_queries: usize,
    pub layers: usize,
    pub ffn_width: usize,
    pub horizon: usize,
}

/// Parameter names and layer structure of the predictor and adapter, all
/// registered under the `world_model.` checkpoint prefix.
#[derive(Debug, Clone)]
pub struct WorldModelParams {
    pub cfg: WorldModelConfig,
    pub tokenizer: TokenizerParams,
    queries: String,
    null_tokens: String,
    layers: Vec<DecoderLayer>,
    adapter_ln: LnParams,
    adapter: Mha,
}

impl WorldModelParams {
    pub fn register<R: Rng>(init: &mut ParamInit<R>, cfg: WorldModelConfig) -> Self {
        let tokenizer =
            TokenizerParams::register(init, "world_model.tokenizer", cfg.d, cfg.horizon);
        let queries = "world_model.queries".to_string();
        let null_tokens = "world_model.null_tokens".to_string();
        init.table(&queries, cfg.k_queries, cfg.d);
        init.table(&null_tokens, cfg.horizon, cfg.d);
        let layers = (0..cfg.layers)
            .map(|i| {
                DecoderLayer::register(
                    init,
                    &format!("world_model.layer{i}"),
                    cfg.d,
                    cfg.heads,
                    cfg.ffn_width,
                )
            })
            .collect();
        // The adapter is a bare multi-head cross-attention: no output
        // projection and no residual, so it is a pure selection over the
        // future token bank.
        let adapter_ln = LnParams::register(init, "world_model.adapter", cfg.d);
        let adapter = Mha::register_opts(
            init,
            "world_model.adapter",
            cfg.d,
            cfg.heads,
            false,
            false,
        );
        Self { cfg, tokenizer, queries, null_tokens, layers, adapter_ln, adapter }
    }

    pub fn null_condition(&self, tape: &mut Tape, store: &ParamStore) -> Id {
        tape.param(store, &self.null_tokens)
    }

    pub fn tokenize(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        traj: &Trajectory,
        stats: &NormStats,
    ) -> Result<Id, WorldModelError> {
        Ok(tokenize_trajectory(tape, store, traj, stats, &self.tokenizer)?)
    }
}

/// Learnable future queries attend to `[scene tokens || trajectory tokens]`
/// through the decoder stack; output is `K x d` regardless of context size.
pub fn predict_future_latent(
    tape: &mut Tape,
    store: &ParamStore,
    params: &WorldModelParams,
    scene_tokens: Id,
    condition: TrajCondition,
) -> Result<FutureLatent, WorldModelError> {
    let cond_id = match condition {
        TrajCondition::Tokens(id) => id,
        TrajCondition::Null => params.null_condition(tape, store),
    };
    let scene_w = tape.value(scene_tokens).shape[1];
    let cond_w = tape.value(cond_id).shape[1];
    if scene_w != cond_w {
        return Err(WorldModelError::WidthMismatch { scene: scene_w, cond: cond_w });
    }
    let context = tape.concat_rows(scene_tokens, cond_id);
    let mut x = tape.param(store, &params.queries);
    for layer in &params.layers {
        x = layer.apply(tape, store, x, context)?;
    }
    Ok(FutureLatent { id: x, provenance: Provenance::Predicted })
}

/// Cross-attention grounding of the predicted latent against the encoded
/// future frame. The future bank is detached (no gradient reaches its
/// producer) and there is no residual from the query side.
pub fn ground_future_latent(
    tape: &mut Tape,
    store: &ParamStore,
    params: &WorldModelParams,
    z_hat: &FutureLatent,
    z_future: Id,
) -> Result<FutureLatent, WorldModelError> {
    if tape.value(z_future).shape[0] == 0 {
        return Err(WorldModelError::Nn(NnError::EmptyContext));
    }
    let bank = tape.detach(z_future);
    let q = params.adapter_ln.apply(tape, store, z_hat.id)?;
    let out = params.adapter.apply(tape, store, q, bank, bank)?;
    Ok(FutureLatent { id: out, provenance: Provenance::Grounded })
}

/// Planning condition selection: grounded-vs-predicted mix when a future
/// frame exists, plain forecast otherwise.
pub fn select_planning_condition(
    tape: &mut Tape,
    z_hat: &FutureLatent,
    z_grounded: Option<&FutureLatent>,
    has_future: bool,
    alpha: f32,
) -> Result<FutureLatent, WorldModelError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(WorldModelError::BadAlpha(alpha));
    }
    if !has_future {
        return Ok(*z_hat);
    }
    let grounded = z_grounded.ok_or(WorldModelError::MissingGrounded)?;
    let mixed = tape.add_scaled(grounded.id, z_hat.id, alpha, 1.0 - alpha);
    Ok(FutureLatent { id: mixed, provenance: Provenance::Mixed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{NormStats, Pose, Trajectory};
    use crate::nn::Tensor;
    use crate::rng::{normal_tensor, rng_for, Purpose};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_cfg() -> WorldModelConfig {
        WorldModelConfig { d: 16, heads: 2, k_queries: 4, layers: 2, ffn_width: 32, horizon: 8 }
    }

    fn fixture() -> (ParamStore, WorldModelParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = {
            let mut init = ParamInit::new(&mut store, &mut rng);
            WorldModelParams::register(&mut init, toy_cfg())
        };
        (store, params)
    }

    fn scene_tokens(tape: &mut Tape, d: usize) -> Id {
        let mut rng = rng_for(9, Purpose::Data);
        let t = normal_tensor(&mut rng, vec![65, d]);
        tape.constant(t)
    }

    fn straight(t: usize) -> Trajectory {
        Trajectory::new((1..=t).map(|k| Pose::new(k as f32, 0.0, 0.0)).collect(), 0.5)
    }

    #[test]
    fn predictor_output_shape_is_k_by_d() {
        let (store, params) = fixture();
        let mut tape = Tape::new();
        let scene = scene_tokens(&mut tape, 16);
        let out =
            predict_future_latent(&mut tape, &store, &params, scene, TrajCondition::Null).unwrap();
        assert_eq!(tape.value(out.id).shape, vec![4, 16]);
        assert_eq!(out.provenance, Provenance::Predicted);
    }

    #[test]
    fn predictor_output_size_independent_of_context_rows() {
        let (store, params) = fixture();
        let mut tape = Tape::new();
        let big_scene = {
            let mut rng = rng_for(10, Purpose::Data);
            let t = normal_tensor(&mut rng, vec![129, 16]);
            tape.constant(t)
        };
        let out =
            predict_future_latent(&mut tape, &store, &params, big_scene, TrajCondition::Null)
                .unwrap();
        assert_eq!(tape.value(out.id).shape, vec![4, 16]);
    }

    #[test]
    fn predictor_is_deterministic() {
        let (store, params) = fixture();
        let run = || {
            let mut tape = Tape::new();
            let scene = scene_tokens(&mut tape, 16);
            let tok = params
                .tokenize(&mut tape, &store, &straight(8), &NormStats::identity())
                .unwrap();
            let out = predict_future_latent(
                &mut tape,
                &store,
                &params,
                scene,
                TrajCondition::Tokens(tok),
            )
            .unwrap();
            tape.value(out.id).data.clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn predictor_rejects_width_mismatch() {
        let (store, params) = fixture();
        let mut tape = Tape::new();
        let scene = scene_tokens(&mut tape, 16);
        let bad = tape.constant(Tensor::zeros(vec![8, 12]));
        assert!(matches!(
            predict_future_latent(&mut tape, &store, &params, scene, TrajCondition::Tokens(bad)),
            Err(WorldModelError::WidthMismatch { scene: 16, cond: 12 })
        ));
    }

    #[test]
    fn adapter_single_token_bank_copies_value_projection() {
        let (mut store, params) = fixture();
        // Identity value projection, single head: collapse to the lone token.
        for name in ["world_model.adapter.wv"] {
            let t = store.value_mut(name);
            let n = t.shape[0];
            t.data.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                t.data[i * n + i] = 1.0;
            }
        }
        let mut tape = Tape::new();
        let scene = scene_tokens(&mut tape, 16);
        let z_hat =
            predict_future_latent(&mut tape, &store, &params, scene, TrajCondition::Null).unwrap();
        let token: Vec<f32> = (0..16).map(|i| 0.1 * i as f32 - 0.5).collect();
        let bank = tape.constant(Tensor::new(vec![1, 16], token.clone()).unwrap());
        let out = ground_future_latent(&mut tape, &store, &params, &z_hat, bank).unwrap();
        assert_eq!(out.provenance, Provenance::Grounded);
        for r in 0..4 {
            for c in 0..16 {
                assert!((tape.value(out.id).at(r, c) - token[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn adapter_zero_value_projection_gives_zero_latent() {
        let (mut store, params) = fixture();
        store
            .value_mut("world_model.adapter.wv")
            .data
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let mut tape = Tape::new();
        let scene = scene_tokens(&mut tape, 16);
        let z_hat =
            predict_future_latent(&mut tape, &store, &params, scene, TrajCondition::Null).unwrap();
        let bank = {
            let mut rng = rng_for(77, Purpose::Data);
            let t = normal_tensor(&mut rng, vec![64, 16]);
            tape.constant(t)
        };
        let out = ground_future_latent(&mut tape, &store, &params, &z_hat, bank).unwrap();
        assert!(tape.value(out.id).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adapter_rejects_empty_bank() {
        let (store, params) = fixture();
        let mut tape = Tape::new();
        let scene = scene_tokens(&mut tape, 16);
        let z_hat =
            predict_future_latent(&mut tape, &store, &params, scene, TrajCondition::Null).unwrap();
        let bank = tape.constant(Tensor::zeros(vec![0, 16]));
        assert!(ground_future_latent(&mut tape, &store, &params, &z_hat, bank).is_err());
    }

    #[test]
    fn adapter_blocks_gradient_into_future_bank_producer() {
        // The bank is produced by a parameter here; grounding must leave that
        // parameter's gradient at zero while adapter parameters still match
        // the gradients obtained with the bank supplied as a constant.
        let (mut store, params) = fixture();
        store
            .insert("probe.future_src", {
                let mut rng = rng_for(31, Purpose::Data);
                normal_tensor(&mut rng, vec![6, 16])
            })
            .unwrap();
        let run = |store: &mut ParamStore, as_constant: bool| -> Vec<f32> {
            store.zero_grads();
            let mut tape = Tape::new();
            let scene = scene_tokens(&mut tape, 16);
            let z_hat =
                predict_future_latent(&mut tape, store, &params, scene, TrajCondition::Null)
                    .unwrap();
            let bank = if as_constant {
                let t = store.value("probe.future_src").clone();
                tape.constant(t)
            } else {
                tape.param(store, "probe.future_src")
            };
            let out = ground_future_latent(&mut tape, store, &params, &z_hat, bank).unwrap();
            let loss = tape.mse_loss(out.id, &Tensor::zeros(vec![4, 16]));
            tape.backward(loss, store);
            store.grad("world_model.adapter.wq").data.clone()
        };
        let grads_via_param = run(&mut store, false);
        assert!(store
            .grad("probe.future_src")
            .data
            .iter()
            .all(|&g| g == 0.0));
        let grads_via_const = run(&mut store, true);
        assert_eq!(grads_via_param, grads_via_const);
    }

    #[test]
    fn select_without_future_returns_forecast() {
        let (store, params) = fixture();
        let mut tape = Tape::new();
        let scene = scene_tokens(&mut tape, 16);
        let z_hat =
            predict_future_latent(&mut tape, &store, &params, scene, TrajCondition::Null).unwrap();
        let picked = select_planning_condition(&mut tape, &z_hat, None, false, 0.7).unwrap();
        assert_eq!(picked.id, z_hat.id);
        assert_eq!(picked.provenance, Provenance::Predicted);
    }

    #[test]
    fn select_alpha_one_returns_grounded_exactly() {
        let mut tape = Tape::new();
        let hat = FutureLatent {
            id: tape.constant(Tensor::full(vec![2, 3], 5.0)),
            provenance: Provenance::Predicted,
        };
        let grounded = FutureLatent {
            id: tape.constant(Tensor::full(vec![2, 3], -1.25)),
            provenance: Provenance::Grounded,
        };
        let picked =
            select_planning_condition(&mut tape, &hat, Some(&grounded), true, 1.0).unwrap();
        assert_eq!(tape.value(picked.id).data, tape.value(grounded.id).data);
    }

    #[test]
    fn select_mixes_half_and_half() {
        let mut tape = Tape::new();
        let hat = FutureLatent {
            id: tape.constant(Tensor::zeros(vec![1, 2])),
            provenance: Provenance::Predicted,
        };
        let grounded = FutureLatent {
            id: tape.constant(Tensor::full(vec![1, 2], 2.0)),
            provenance: Provenance::Grounded,
        };
        let picked =
            select_planning_condition(&mut tape, &hat, Some(&grounded), true, 0.5).unwrap();
        assert_eq!(tape.value(picked.id).data, vec![1.0, 1.0]);
        assert_eq!(picked.provenance, Provenance::Mixed);
    }

    #[test]
    fn select_missing_grounded_is_contract_error() {
        let mut tape = Tape::new();
        let hat = FutureLatent {
            id: tape.constant(Tensor::zeros(vec![1, 2])),
            provenance: Provenance::Predicted,
        };
        assert!(matches!(
            select_planning_condition(&mut tape, &hat, None, true, 0.5),
            Err(WorldModelError::MissingGrounded)
        ));
    }
}
