//! Privileged-observation scene encoder: class-histogram pooling over an
//! 8x8 anchor partition of the raster, plus a learned status token. Also
//! the per-anchor decode head for the semantic occupancy loss.

use rand::Rng;

use crate::env::raster::{BevRaster, NUM_CLASSES};
use crate::geometry::EgoStatus;
use crate::nn::ops::linear;
use crate::nn::params::{ParamInit, ParamStore};
use crate::nn::tape::{Id, Tape};
use crate::nn::{NnError, Tensor};
use crate::planner::PlannerError;

pub const ANCHORS_PER_SIDE: usize = 8;
pub const NUM_ANCHORS: usize = ANCHORS_PER_SIDE * ANCHORS_PER_SIDE;

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub d: usize,
    class_embed: String,
    proj_w: String,
    proj_b: String,
    anchor_pos: String,
    status_w: String,
    status_b: String,
}

impl EncoderParams {
    pub fn register<R: Rng>(init: &mut ParamInit<R>, d: usize) -> Self {
        let class_embed = "planner.encoder.class_embed".to_string();
        let proj_w = "planner.encoder.proj_w".to_string();
        let proj_b = "planner.encoder.proj_b".to_string();
        let anchor_pos = "planner.encoder.anchor_pos".to_string();
        let status_w = "planner.encoder.status_w".to_string();
        let status_b = "planner.encoder.status_b".to_string();
        init.table(&class_embed, NUM_CLASSES, d);
        init.weight(&proj_w, d, d);
        init.zeros(&proj_b, vec![d]);
        init.table(&anchor_pos, NUM_ANCHORS, d);
        init.weight(&status_w, 7, d);
        init.zeros(&status_b, vec![d]);
        Self { d, class_embed, proj_w, proj_b, anchor_pos, status_w, status_b }
    }
}

/// Per-anchor class fractions: a constant `[64, 7]` pooling matrix.
pub fn anchor_fractions(raster: &BevRaster) -> Result<Tensor, PlannerError> {
    if raster.cells % ANCHORS_PER_SIDE != 0 {
        return Err(PlannerError::BadGrid(raster.cells));
    }
    let patch = raster.cells / ANCHORS_PER_SIDE;
    let cells_per_anchor = (patch * patch) as f32;
    let mut data = vec![0.0f32; NUM_ANCHORS * NUM_CLASSES];
    for ar in 0..ANCHORS_PER_SIDE {
        for ac in 0..ANCHORS_PER_SIDE {
            let a = ar * ANCHORS_PER_SIDE + ac;
            for r in 0..patch {
                for c in 0..patch {
                    let class = raster.at(ar * patch + r, ac * patch + c) as usize;
                    data[a * NUM_CLASSES + class] += 1.0;
                }
            }
            for k in 0..NUM_CLASSES {
                data[a * NUM_CLASSES + k] /= cells_per_anchor;
            }
        }
    }
    Ok(Tensor { shape: vec![NUM_ANCHORS, NUM_CLASSES], data })
}

/// 64 BEV tokens: pooled class embeddings, projected, plus anchor
/// positional embeddings. No status token.
pub fn encode_bev_tokens(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EncoderParams,
    raster: &BevRaster,
) -> Result<Id, PlannerError> {
    let fractions = tape.constant(anchor_fractions(raster)?);
    let embed = tape.param(store, &params.class_embed);
    let pooled = tape.matmul(fractions, embed);
    let w = tape.param(store, &params.proj_w);
    let b = tape.param(store, &params.proj_b);
    let projected = linear(tape, pooled, w, b)?;
    let pos = tape.param(store, &params.anchor_pos);
    Ok(tape.add(projected, pos))
}

/// Full scene latent: 64 BEV tokens plus one status token.
pub fn encode_scene(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EncoderParams,
    raster: &BevRaster,
    status: &EgoStatus,
) -> Result<Id, PlannerError> {
    let bev = encode_bev_tokens(tape, store, params, raster)?;
    let feats = tape.constant(Tensor::new(vec![1, 7], status.features().to_vec()).unwrap());
    let w = tape.param(store, &params.status_w);
    let b = tape.param(store, &params.status_b);
    let status_token = linear(tape, feats, w, b)?;
    Ok(tape.concat_rows(bev, status_token))
}

/// Per-anchor linear decode to a patch of class logits.
#[derive(Debug, Clone)]
pub struct BevHeadParams {
    w: String,
    b: String,
    pub patch: usize,
}

impl BevHeadParams {
    pub fn register<R: Rng>(init: &mut ParamInit<R>, d: usize, grid: usize) -> Self {
        let patch = grid / ANCHORS_PER_SIDE;
        let w = "planner.bev_head.w".to_string();
        let b = "planner.bev_head.b".to_string();
        init.weight(&w, d, patch * patch * NUM_CLASSES);
        init.zeros(&b, vec![patch * patch * NUM_CLASSES]);
        Self { w, b, patch }
    }

    /// Logit rows `[grid*grid, 7]` in anchor-major cell order; pair with
    /// [`bev_targets`].
    pub fn logits(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bev_tokens: Id,
    ) -> Result<Id, PlannerError> {
        let w = tape.param(store, &self.w);
        let b = tape.param(store, &self.b);
        let per_anchor = linear(tape, bev_tokens, w, b)?;
        let rows = NUM_ANCHORS * self.patch * self.patch;
        Ok(tape.reshape(per_anchor, vec![rows, NUM_CLASSES]))
    }
}

/// Raster classes in the anchor-major cell order used by the decode head.
pub fn bev_targets(raster: &BevRaster) -> Result<Vec<usize>, PlannerError> {
    if raster.cells % ANCHORS_PER_SIDE != 0 {
        return Err(PlannerError::BadGrid(raster.cells));
    }
    let patch = raster.cells / ANCHORS_PER_SIDE;
    let mut targets = Vec::with_capacity(raster.cells * raster.cells);
    for ar in 0..ANCHORS_PER_SIDE {
        for ac in 0..ANCHORS_PER_SIDE {
            for r in 0..patch {
                for c in 0..patch {
                    targets.push(raster.at(ar * patch + r, ac * patch + c) as usize);
                }
            }
        }
    }
    Ok(targets)
}
