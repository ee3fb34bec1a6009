//! Cross-modal audio/MIDI retrieval with hand-crafted descriptor injection.
//!
//! The numeric core ([`tensor`], [`loss`], [`model`]) is generic over
//! [`Scalar`]; the aliases below fix the precision for everyday use.

pub mod error;
pub mod loss;
pub mod midi;
pub mod model;
pub mod retrieval;
pub mod rng;
pub mod scalar;
pub mod signal;
pub mod tensor;
pub mod train;
pub mod validation;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Graph32 = tensor::Graph<f32>;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "XMODAL_THREADS";

/// Worker count: `XMODAL_THREADS` if set to a positive integer, else the
/// available parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Order-preserving map over independent items on [`worker_threads`] threads.
pub fn parallel_map<I, O, F>(items: &[I], f: F) -> Result<Vec<O>>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> Result<O> + Sync,
{
    let threads = worker_threads().min(items.len()).max(1);
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    let parts: Vec<Result<Vec<O>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(f).collect::<Result<Vec<O>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
