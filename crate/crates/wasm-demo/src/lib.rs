//! Browser demo bindings: three interactive views of the divisible
//! sandpile on the 2d torus.
//!
//! * [`critical_odometer`] stabilizes a critical Gaussian configuration and
//!   returns the odometer field (heatmap data);
//! * [`bilaplacian_sample`] draws an independent min-shifted bi-Laplacian
//!   field sample, which has exactly the same law;
//! * [`variogram_curve`] evaluates `E(eta_0 - eta_x)^2` along an axis.
//!
//! All functions are pure in `(n, seed)` and return row-major `n x n`
//! buffers (or a curve), so the page needs no state beyond its sliders.

use std::sync::Arc;

use wasm_bindgen::prelude::*;

use sandpile_core::field::SpectralSampler;
use sandpile_core::graph::Graph;
use sandpile_core::green::variogram_fourier;
use sandpile_core::numeric::neumaier_sum;
use sandpile_core::rng::{standard_normal_field, trial_rng, Purpose};
use sandpile_core::sandpile::{solve_odometer_exact, topple_parallel, Configuration, ToppleParams};

fn critical_config(n: usize, seed: u32) -> Result<Configuration, JsError> {
    let graph = Arc::new(Graph::torus(n, 2).map_err(to_js)?);
    let sites = graph.vertex_count();
    let mut rng = trial_rng(seed as u64, Purpose::Generic, 0);
    let sigma = standard_normal_field(&mut rng, sites);
    let mean = neumaier_sum(sigma.iter().copied()) / sites as f64;
    let values: Vec<f64> = sigma.iter().map(|&s| 1.0 + s - mean).collect();
    Configuration::new(graph, values).map_err(to_js)
}

fn to_js(e: sandpile_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Odometer of `s = 1 + sigma - mean(sigma)` on `Z_n^2`, by exact solve or
/// by running the parallel toppling engine.
#[wasm_bindgen]
pub fn critical_odometer(n: u32, seed: u32, use_toppling: bool) -> Result<Vec<f64>, JsError> {
    let cfg = critical_config(n as usize, seed)?;
    if use_toppling {
        let params = ToppleParams {
            tol: 1e-8,
            max_sweeps: 200_000,
            record_trace: false,
        };
        Ok(topple_parallel(&cfg, &params).map_err(to_js)?.odometer)
    } else {
        solve_odometer_exact(&cfg).map_err(to_js)
    }
}

/// Number of sweeps the parallel engine needed (for the demo's caption).
#[wasm_bindgen]
pub fn toppling_sweeps(n: u32, seed: u32) -> Result<u32, JsError> {
    let cfg = critical_config(n as usize, seed)?;
    let params = ToppleParams {
        tol: 1e-8,
        max_sweeps: 200_000,
        record_trace: false,
    };
    Ok(topple_parallel(&cfg, &params).map_err(to_js)?.sweeps as u32)
}

/// One min-shifted bi-Laplacian field sample on `Z_n^2`; same law as the
/// critical odometer, from an independent pipeline.
#[wasm_bindgen]
pub fn bilaplacian_sample(n: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    let mut sampler = SpectralSampler::new(n as usize, 2).map_err(to_js)?;
    let mut rng = trial_rng(seed as u64, Purpose::FieldRoute, 0);
    Ok(sampler.sample(&mut rng).map_err(to_js)?.values)
}

/// `E(eta_0 - eta_x)^2` for axis lags `x = (0..=max_lag, 0, ...)` on `Z_n^d`.
#[wasm_bindgen]
pub fn variogram_curve(n: u32, d: u32, max_lag: u32) -> Result<Vec<f64>, JsError> {
    let d = d as usize;
    let mut out = Vec::with_capacity(max_lag as usize + 1);
    for lag in 0..=max_lag as i64 {
        let mut coords = vec![0i64; d];
        coords[0] = lag;
        out.push(variogram_fourier(n as usize, d, &coords).map_err(to_js)?);
    }
    Ok(out)
}
