//! Deterministic floating-point reductions.
//!
//! Experiment results must be identical regardless of thread count, so every
//! reduction over a field either runs sequentially with compensated
//! (Neumaier) summation or splits into fixed-size chunks whose partial sums
//! are combined in chunk order. Neither path depends on how work is
//! scheduled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const CHUNK: usize = 1 << 14;

/// Neumaier-compensated sequential sum.
pub fn neumaier_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Compensated sum over a slice; chunked in fixed blocks so the result is
/// independent of the degree of parallelism.
pub fn det_sum(xs: &[f64]) -> f64 {
    if xs.len() <= CHUNK {
        return neumaier_sum(xs.iter().copied());
    }
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = xs
        .par_chunks(CHUNK)
        .map(|c| neumaier_sum(c.iter().copied()))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = xs
        .chunks(CHUNK)
        .map(|c| neumaier_sum(c.iter().copied()))
        .collect();
    neumaier_sum(partials)
}

/// Sum of `f(x)` over a slice, chunk-deterministic like [`det_sum`].
pub fn det_sum_by(xs: &[f64], f: impl Fn(f64) -> f64 + Sync) -> f64 {
    if xs.len() <= CHUNK {
        return neumaier_sum(xs.iter().map(|&x| f(x)));
    }
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = xs
        .par_chunks(CHUNK)
        .map(|c| neumaier_sum(c.iter().map(|&x| f(x))))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = xs
        .chunks(CHUNK)
        .map(|c| neumaier_sum(c.iter().map(|&x| f(x))))
        .collect();
    neumaier_sum(partials)
}

/// Sum of `f(x)` over `x in 0..len`, chunk-deterministic like [`det_sum`].
pub fn det_sum_indexed(len: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    if len <= CHUNK {
        return neumaier_sum((0..len).map(&f));
    }
    let starts: Vec<usize> = (0..len).step_by(CHUNK).collect();
    #[cfg(feature = "parallel")]
    let partials: Vec<f64> = starts
        .par_iter()
        .map(|&s| neumaier_sum((s..(s + CHUNK).min(len)).map(&f)))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<f64> = starts
        .iter()
        .map(|&s| neumaier_sum((s..(s + CHUNK).min(len)).map(&f)))
        .collect();
    neumaier_sum(partials)
}

/// Minimum of a non-empty slice (exact, order-independent; no NaNs).
pub fn det_min(xs: &[f64]) -> f64 {
    #[cfg(feature = "parallel")]
    if xs.len() > CHUNK {
        return xs
            .par_chunks(CHUNK)
            .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
            .reduce(|| f64::INFINITY, f64::min);
    }
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Maximum of a non-empty slice (exact, order-independent; no NaNs).
pub fn det_max(xs: &[f64]) -> f64 {
    #[cfg(feature = "parallel")]
    if xs.len() > CHUNK {
        return xs
            .par_chunks(CHUNK)
            .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .reduce(|| f64::NEG_INFINITY, f64::max);
    }
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
