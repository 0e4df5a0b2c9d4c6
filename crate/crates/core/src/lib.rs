//! Numerical laboratory for the divisible sandpile on finite graphs.
//!
//! A configuration assigns a real mass `s(x)` to every vertex; a vertex with
//! mass above 1 is unstable and topples by keeping 1 and splitting the excess
//! equally among its neighbors. The crate provides
//!
//! * graph substrates: discrete tori `Z_n^d`, boxes of `Z^d` with absorbing
//!   boundary, and general adjacency-list graphs ([`graph`]);
//! * toppling engines (parallel, nested volumes, two stages) and an exact
//!   odometer solver ([`sandpile`]);
//! * killed and averaged Green functions, the torus Laplacian spectrum and
//!   the Fourier variogram ([`green`]);
//! * samplers for the bi-Laplacian Gaussian field whose min-shifted version
//!   has the law of the critical odometer ([`field`]);
//! * reproducible experiments that check the quantitative statements
//!   (equality in law, odometer scaling, cone certificates) at desk scale
//!   ([`experiments`]).

pub mod error;
pub mod experiments;
pub mod field;
pub mod graph;
pub mod green;
pub mod numeric;
pub mod report;
pub mod rng;
pub mod sandpile;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
pub use graph::{Graph, VertexCoord};
pub use sandpile::{Configuration, OdometerReport, Status};

/// Sizes the global worker pool. Results never depend on the thread count,
/// so this only controls resource usage.
#[cfg(feature = "parallel")]
pub fn init_thread_pool(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
pub fn init_thread_pool(_threads: usize) -> Result<()> {
    Ok(())
}
