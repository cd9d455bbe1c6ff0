//! Group-aware binary hashing for recommender systems.
//!
//! The crate trains bit-packed ±1 codes for users and items jointly with
//! group affinities extracted from matrix-factorization latent factors, and
//! serves top-k recommendations by Hamming-distance scoring. It also carries
//! the surrounding harness: rating/content ingestion, per-user sparsity
//! splits, NDCG evaluation, retrieval benchmarking, and a reproducible
//! end-to-end pipeline.
//!
//! Data-parallel inner loops (factorization half-sweeps, bitwise code
//! updates, evaluation) run on rayon when the default `parallel` feature is
//! enabled and fall back to sequential loops without it; either way results
//! are bitwise reproducible for a fixed seed.

pub mod codes;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod grouping;
pub mod mf;
pub mod model;
pub mod optimizer;
mod par;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};

/// Configure the global worker pool.
///
/// With the `parallel` feature, `threads > 0` pins the rayon pool size
/// (1 gives a fully serial schedule and 0 keeps the default); without the
/// feature this is a no-op. Results are bitwise identical either way.
pub fn configure_threads(threads: usize) -> Result<()> {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    if threads > 1 {
        log::warn!("built without the parallel feature; --threads {threads} ignored");
    }
    Ok(())
}
