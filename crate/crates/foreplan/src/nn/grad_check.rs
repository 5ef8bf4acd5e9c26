//! Central finite-difference validation of analytic gradients.

use crate::nn::params::ParamStore;

/// Relative-error floor: coordinates whose analytic and numeric gradients
/// are both below this magnitude are compared absolutely against it.
const REL_FLOOR: f32 = 1.0;

/// Coordinates checked per tensor before seeded subsampling kicks in.
const SUBSET: usize = 256;

/// Compare analytic gradients against central finite differences.
///
/// `eval(store, true)` must populate gradients (after an internal zeroing
/// here) and return the loss; `eval(store, false)` returns the loss only.
/// The loss must be deterministic in the store contents. Tensors larger
/// than 256 entries are probed on a seeded coordinate subset. Returns the
/// worst relative discrepancy over all probed coordinates.
pub fn grad_check<F>(store: &mut ParamStore, h: f32, mut eval: F) -> f32
where
    F: FnMut(&mut ParamStore, bool) -> f64,
{
    assert!(
        (1e-5..=1e-2).contains(&h),
        "finite-difference step {h} outside [1e-5, 1e-2]"
    );
    store.zero_grads();
    eval(store, true);
    let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
    let analytic: Vec<Vec<f32>> = names
        .iter()
        .map(|n| store.grad(n).data.clone())
        .collect();

    let mut worst = 0.0f32;
    for (name, grads) in names.iter().zip(&analytic) {
        let numel = store.value(name).data.len();
        let coords = coordinate_subset(name, numel);
        for i in coords {
            let p0 = store.value(name).data[i];
            let step = h * p0.abs().max(1.0);
            let p_plus = p0 + step;
            let p_minus = p0 - step;
            store.value_mut(name).data[i] = p_plus;
            let l_plus = eval(store, false);
            store.value_mut(name).data[i] = p_minus;
            let l_minus = eval(store, false);
            store.value_mut(name).data[i] = p0;
            let denom = p_plus as f64 - p_minus as f64;
            let fd = ((l_plus - l_minus) / denom) as f32;
            let a = grads[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(REL_FLOOR);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

fn coordinate_subset(name: &str, numel: usize) -> Vec<usize> {
    if numel <= SUBSET {
        return (0..numel).collect();
    }
    // Deterministic per-name LCG so reruns probe the same coordinates.
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    for b in name.bytes() {
        state = state.wrapping_mul(0x100_0000_01B3).wrapping_add(b as u64);
    }
    let mut seen = std::collections::BTreeSet::new();
    while seen.len() < SUBSET {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        seen.insert(((state >> 16) as usize) % numel);
    }
    seen.into_iter().collect()
}
