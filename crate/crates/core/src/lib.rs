//! Numerical core for monocular full-body capture: parametric body and
//! face models, keypoint map encoding/decoding, detection losses, learned
//! inverse kinematics, global-translation recovery, and evaluation metrics.

pub mod assets;
pub mod body;
pub mod error;
pub mod face;
pub mod geometry;
pub mod ik;
pub mod kba;
pub mod maps;
pub mod math;
pub mod pipeline;

/// Worker-thread cap: the `KINEBODY_THREADS` environment variable when set
/// to a positive integer, otherwise the available parallelism (capped at 8).
/// Results never depend on the thread count — parallel sections derive all
/// randomness from `(seed, item index)` and reduce in index order.
pub fn max_threads() -> usize {
    if let Ok(v) = std::env::var("KINEBODY_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get().min(8))
        .unwrap_or(1)
}
