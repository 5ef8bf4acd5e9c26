//! Instrumentation counters proving the planner's information diet: the
//! sampler must never consume expert trajectories or future observations,
//! so the access points bump these counters and tests assert on them.

use std::sync::atomic::{AtomicU64, Ordering};

/// Expert trajectories tokenized as a world-model conditioning source.
pub static EXPERT_CONDITIONING_READS: AtomicU64 = AtomicU64::new(0);

/// Future observations encoded for adapter grounding.
pub static FUTURE_FRAME_ENCODES: AtomicU64 = AtomicU64::new(0);

pub fn note_expert_conditioning() {
    EXPERT_CONDITIONING_READS.fetch_add(1, Ordering::Relaxed);
}

pub fn note_future_frame_encode() {
    FUTURE_FRAME_ENCODES.fetch_add(1, Ordering::Relaxed);
}

pub fn snapshot() -> (u64, u64) {
    (
        EXPERT_CONDITIONING_READS.load(Ordering::Relaxed),
        FUTURE_FRAME_ENCODES.load(Ordering::Relaxed),
    )
}
