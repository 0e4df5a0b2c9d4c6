//! The discrete bi-Laplacian Gaussian field.
//!
//! `η` is the centered Gaussian vector with covariance
//! `E[η(x) η(y)] = (1/(deg x deg y)) Σ_z g(z,x) g(z,y)` built from the
//! averaged Green function; its min-shifted version `η - min η` has exactly
//! the law of the odometer of a critical Gaussian configuration.
//!
//! Two samplers are provided. The Cholesky sampler factors the dense
//! covariance and is exact on any graph up to the dense cap. The spectral
//! sampler works on tori of any size: it draws an i.i.d. standard normal
//! field `σ`, solves `Δv = -(σ - mean σ)` by FFT and min-shifts `v`. The
//! additive Gaussian constant that separates `η` from `v` cancels in the
//! shift, so min-shifted samples from both routes agree in law.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::green::{GreenMode, GreenTable};
use crate::numeric::{det_max, det_min};
use crate::rng::standard_normal_field;
use crate::solver::TorusPoisson;
use crate::stats::mean_se;

/// Covariance matrix of the field, with the constant-term bookkeeping.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    graph: Arc<Graph>,
    cov: DMatrix<f64>,
    k_constant: f64,
}

impl CovarianceModel {
    pub fn from_parts(graph: Arc<Graph>, cov: DMatrix<f64>, k_constant: f64) -> CovarianceModel {
        CovarianceModel {
            graph,
            cov,
            k_constant,
        }
    }

    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// The constant `K = (1/deg y) Σ_w g(w,y)`; the variance of the global
    /// Gaussian constant in the field decomposition is `K²/|V|`.
    pub fn k_constant(&self) -> f64 {
        self.k_constant
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.cov[(x, y)]
    }
}

/// Assembles `Cov(x,y) = (1/(deg x deg y)) Σ_z g(z,x) g(z,y)` from an
/// averaged Green table.
pub fn covariance(gt: &GreenTable) -> Result<CovarianceModel> {
    if *gt.mode() != GreenMode::Averaged {
        return Err(Error::InvalidParameter(
            "covariance needs an averaged Green table".into(),
        ));
    }
    let graph = Arc::clone(gt.graph());
    let n = graph.vertex_count();
    // scaled[z, x] = g(z, x) / deg(x); cov = scaledᵀ · scaled
    let mut scaled = DMatrix::<f64>::zeros(n, n);
    for z in 0..n {
        for x in 0..n {
            scaled[(z, x)] = gt.value(z, x) / graph.degree(x) as f64;
        }
    }
    let cov = scaled.transpose() * &scaled;
    let k = gt.k_values()[0];
    Ok(CovarianceModel {
        graph,
        cov,
        k_constant: k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Raw,
    MinShifted,
}

/// One realization of the field.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub values: Vec<f64>,
    pub kind: FieldKind,
}

/// Shifts a sample so its minimum is exactly zero. Idempotent.
pub fn min_shift(sample: &FieldSample) -> FieldSample {
    let min = det_min(&sample.values);
    FieldSample {
        values: sample.values.iter().map(|&v| v - min).collect(),
        kind: FieldKind::MinShifted,
    }
}

/// Exact sampler from the dense covariance factorization.
#[derive(Debug, Clone)]
pub struct CholeskySampler {
    lower: DMatrix<f64>,
    dim: usize,
    /// Diagonal jitter that was needed to factor (0.0 when clean).
    pub jitter: f64,
}

impl CholeskySampler {
    /// Factors the covariance, escalating a diagonal jitter of
    /// `1e-12 trace/|V|` by factors of 10 up to three times if the matrix is
    /// only semidefinite in floating point.
    pub fn new(model: &CovarianceModel) -> Result<CholeskySampler> {
        let n = model.cov.nrows();
        let trace: f64 = (0..n).map(|i| model.cov[(i, i)]).sum();
        let base = 1e-12 * trace / n as f64;
        let mut jitter = 0.0;
        for attempt in 0..=3 {
            let mut m = model.cov.clone();
            if attempt > 0 {
                jitter = base * 10f64.powi(attempt - 1);
                for i in 0..n {
                    m[(i, i)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::new(m) {
                return Ok(CholeskySampler {
                    lower: chol.unpack(),
                    dim: n,
                    jitter,
                });
            }
        }
        Err(Error::SolveFailure(
            "covariance factorization failed after jitter escalation".into(),
        ))
    }

    /// Mean-zero Gaussian vector with the model covariance; deterministic
    /// given the rng state.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> FieldSample {
        let z = DVector::from_vec(standard_normal_field(rng, self.dim));
        let v = &self.lower * z;
        FieldSample {
            values: v.iter().copied().collect(),
            kind: FieldKind::Raw,
        }
    }
}

/// Min-shifted field sampler on the torus via the FFT Poisson solver.
pub struct SpectralSampler {
    poisson: TorusPoisson,
    len: usize,
}

impl SpectralSampler {
    pub fn new(n: usize, d: usize) -> Result<SpectralSampler> {
        let poisson = TorusPoisson::new(n, d)?;
        let len = poisson.vertex_count();
        Ok(SpectralSampler { poisson, len })
    }

    pub fn vertex_count(&self) -> usize {
        self.len
    }

    /// Draws `σ` i.i.d. standard normal, solves `Δv = -(σ - mean σ)` and
    /// min-shifts; the result has the law of `η - min η` (and of the
    /// critical odometer).
    pub fn sample(&mut self, rng: &mut ChaCha8Rng) -> Result<FieldSample> {
        let sigma = standard_normal_field(rng, self.len);
        let rhs: Vec<f64> = sigma.iter().map(|&s| -s).collect();
        let mut v = self.poisson.solve_mean_zero(&rhs)?;
        let min = det_min(&v);
        for x in &mut v {
            *x -= min;
        }
        Ok(FieldSample {
            values: v,
            kind: FieldKind::MinShifted,
        })
    }
}

/// Monte Carlo estimate of `E max` over field samples.
#[derive(Debug, Clone, Copy)]
pub struct MaxEstimate {
    pub mean: f64,
    pub se: f64,
    pub trials: u64,
}

/// Mean and standard error of the per-sample maximum of `source`.
pub fn expected_max(
    mut source: impl FnMut(u64) -> Result<FieldSample>,
    trials: u64,
) -> Result<MaxEstimate> {
    if trials < 2 {
        return Err(Error::InvalidParameter("need at least 2 trials".into()));
    }
    let maxima: Vec<f64> = (0..trials)
        .map(|t| source(t).map(|s| det_max(&s.values)))
        .collect::<Result<_>>()?;
    let (mean, se) = mean_se(&maxima);
    Ok(MaxEstimate { mean, se, trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::{green_averaged, variogram_fourier};
    use crate::rng::{trial_rng, Purpose};
    use crate::stats::{ks_two_sample, skewness, variance};

    fn model_for(graph: Arc<Graph>) -> CovarianceModel {
        let table = green_averaged(&graph).unwrap();
        covariance(&table).unwrap()
    }

    #[test]
    fn covariance_cyclic_invariance_on_c3() {
        let model = model_for(Arc::new(Graph::torus(3, 1).unwrap()));
        for x in 0..3 {
            for y in 0..3 {
                let a = model.value(x, y);
                let b = model.value((x + 1) % 3, (y + 1) % 3);
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn covariance_translation_invariance_on_z4() {
        let model = model_for(Arc::new(Graph::torus(4, 1).unwrap()));
        for x in 0..4 {
            for y in 0..4 {
                let lag = (4 + y - x) % 4;
                assert!((model.value(x, y) - model.value(0, lag)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn covariance_psd_floor() {
        let model = model_for(Arc::new(Graph::torus(4, 1).unwrap()));
        let eig = model.matrix().clone().symmetric_eigenvalues();
        let trace: f64 = (0..4).map(|i| model.value(i, i)).sum();
        let floor = -1e-8 * trace / 4.0;
        for lam in eig.iter() {
            assert!(*lam >= floor);
        }
    }

    #[test]
    fn variogram_identity_against_fourier_route() {
        // Cov(0,0) + Cov(x,x) - 2 Cov(0,x) = E(η_0 - η_x)^2 from the
        // independent Fourier summation.
        let graph = Arc::new(Graph::torus(4, 1).unwrap());
        let model = model_for(Arc::clone(&graph));
        for x in 0..4 {
            let lag = graph.coord(x).unwrap().coords;
            let fourier = variogram_fourier(4, 1, &lag).unwrap();
            let cov_route = model.value(0, 0) + model.value(x, x) - 2.0 * model.value(0, x);
            assert!(
                (fourier - cov_route).abs() < 1e-8,
                "lag {lag:?}: {fourier} vs {cov_route}"
            );
        }
    }

    #[test]
    fn cholesky_sampler_is_deterministic() {
        let model = model_for(Arc::new(Graph::torus(4, 1).unwrap()));
        let sampler = CholeskySampler::new(&model).unwrap();
        let a = sampler.sample(&mut trial_rng(1, Purpose::FieldRoute, 7));
        let b = sampler.sample(&mut trial_rng(1, Purpose::FieldRoute, 7));
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn cholesky_sampler_jitter_handles_singular_matrices() {
        // rank-1 covariance: strictly semidefinite, needs jitter
        let graph = Arc::new(Graph::torus(3, 1).unwrap());
        let mut cov = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                cov[(i, j)] = 1.0;
            }
        }
        let model = CovarianceModel::from_parts(graph, cov, 0.0);
        let sampler = CholeskySampler::new(&model).unwrap();
        assert!(sampler.jitter > 0.0);
        let s = sampler.sample(&mut trial_rng(2, Purpose::FieldRoute, 0));
        assert!(s.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cholesky_empirical_moments_match() {
        let model = model_for(Arc::new(Graph::torus(8, 1).unwrap()));
        let sampler = CholeskySampler::new(&model).unwrap();
        let trials = 10_000usize;
        let mut per_site: Vec<Vec<f64>> = (0..8).map(|_| Vec::with_capacity(trials)).collect();
        for t in 0..trials {
            let s = sampler.sample(&mut trial_rng(3, Purpose::FieldRoute, t as u64));
            for (site, v) in s.values.iter().enumerate() {
                per_site[site].push(*v);
            }
        }
        // per-site variance within 5 SE of Cov(x,x)
        for (site, vals) in per_site.iter().enumerate() {
            let v = variance(vals);
            let se = v * (2.0 / (trials as f64 - 1.0)).sqrt();
            let target = model.value(site, site);
            assert!(
                (v - target).abs() < 5.0 * se,
                "site {site}: var {v} vs {target} (se {se})"
            );
        }
        // empirical Cov(0,x) within 5 SE for all lags
        for x in 0..8 {
            let prods: Vec<f64> = (0..trials)
                .map(|t| per_site[0][t] * per_site[x][t])
                .collect();
            let (m, se) = mean_se(&prods);
            let target = model.value(0, x);
            assert!(
                (m - target).abs() < 5.0 * se.max(1e-12),
                "lag {x}: {m} vs {target}"
            );
        }
    }

    #[test]
    fn spectral_sampler_min_is_zero_and_deterministic() {
        let mut s = SpectralSampler::new(8, 2).unwrap();
        let a = s
            .sample(&mut trial_rng(4, Purpose::FieldRoute, 11))
            .unwrap();
        let b = s
            .sample(&mut trial_rng(4, Purpose::FieldRoute, 11))
            .unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(det_min(&a.values), 0.0);
        assert_eq!(a.kind, FieldKind::MinShifted);
    }

    #[test]
    fn min_shift_behaviors() {
        let constant = FieldSample {
            values: vec![2.5; 4],
            kind: FieldKind::Raw,
        };
        assert_eq!(min_shift(&constant).values, vec![0.0; 4]);
        let nonneg = FieldSample {
            values: vec![0.0, 1.0, 2.0],
            kind: FieldKind::Raw,
        };
        assert_eq!(min_shift(&nonneg).values, vec![0.0, 1.0, 2.0]);
        let once = min_shift(&nonneg);
        let twice = min_shift(&once);
        assert_eq!(once.values, twice.values);
    }

    #[test]
    fn spectral_and_cholesky_agree_in_law() {
        // two-sample KS per site on Z_8², min-shifted fields from fully
        // disjoint random streams; >= 95% of sites should pass at p > 0.001.
        let graph = Arc::new(Graph::torus(8, 2).unwrap());
        let sites = graph.vertex_count();
        let trials = 2000usize;
        let model = model_for(Arc::clone(&graph));
        let chol = CholeskySampler::new(&model).unwrap();
        let mut spectral = SpectralSampler::new(8, 2).unwrap();
        let mut a: Vec<Vec<f64>> = (0..sites).map(|_| Vec::with_capacity(trials)).collect();
        let mut b: Vec<Vec<f64>> = (0..sites).map(|_| Vec::with_capacity(trials)).collect();
        for t in 0..trials {
            let raw = chol.sample(&mut trial_rng(99, Purpose::FieldRoute, t as u64));
            let shifted = min_shift(&raw);
            for (site, v) in shifted.values.iter().enumerate() {
                a[site].push(*v);
            }
            let s = spectral
                .sample(&mut trial_rng(99, Purpose::OdometerRoute, t as u64))
                .unwrap();
            for (site, v) in s.values.iter().enumerate() {
                b[site].push(*v);
            }
        }
        let passed = (0..sites)
            .filter(|&site| ks_two_sample(&a[site], &b[site]).1 > 0.001)
            .count();
        assert!(
            passed as f64 >= 0.95 * sites as f64,
            "only {passed}/{sites} sites passed"
        );
    }

    #[test]
    fn law_is_translation_invariant() {
        // marginals at o and at o+x agree; use disjoint trial ranges so the
        // two samples are independent.
        let mut sampler = SpectralSampler::new(8, 1).unwrap();
        let trials = 2000usize;
        let mut at_o = Vec::with_capacity(trials);
        let mut at_x = Vec::with_capacity(trials);
        for t in 0..trials {
            let s = sampler
                .sample(&mut trial_rng(5, Purpose::FieldRoute, t as u64))
                .unwrap();
            at_o.push(s.values[0]);
        }
        for t in trials..2 * trials {
            let s = sampler
                .sample(&mut trial_rng(5, Purpose::FieldRoute, t as u64))
                .unwrap();
            at_x.push(s.values[3]);
        }
        let (_, p) = ks_two_sample(&at_o, &at_x);
        assert!(p > 0.001, "p = {p}");
    }

    #[test]
    fn raw_field_is_symmetric_in_law() {
        let model = model_for(Arc::new(Graph::torus(4, 1).unwrap()));
        let sampler = CholeskySampler::new(&model).unwrap();
        let trials = 10_000;
        let vals: Vec<f64> = (0..trials)
            .map(|t| {
                sampler
                    .sample(&mut trial_rng(6, Purpose::FieldRoute, t))
                    .values[0]
            })
            .collect();
        let skew = skewness(&vals);
        let se = (6.0 / trials as f64).sqrt();
        assert!(skew.abs() < 5.0 * se, "skew {skew} vs se {se}");
    }

    #[test]
    fn expected_max_identity_raw_vs_minshifted_origin() {
        // E[max η] = E[(η - min η)(o)]: estimate the left side from raw
        // Cholesky samples and the right side from spectral min-shifted
        // samples; they must agree within 5 combined SE.
        let graph = Arc::new(Graph::torus(8, 1).unwrap());
        let model = model_for(Arc::clone(&graph));
        let chol = CholeskySampler::new(&model).unwrap();
        let trials = 4000u64;
        let max_est = expected_max(
            |t| Ok(chol.sample(&mut trial_rng(7, Purpose::MaxStatistic, t))),
            trials,
        )
        .unwrap();
        let mut spectral = SpectralSampler::new(8, 1).unwrap();
        let origin_vals: Vec<f64> = (0..trials)
            .map(|t| {
                spectral
                    .sample(&mut trial_rng(7, Purpose::FieldRoute, t))
                    .unwrap()
                    .values[0]
            })
            .collect();
        let (m, se) = mean_se(&origin_vals);
        let combined = (max_est.se * max_est.se + se * se).sqrt();
        assert!(
            (max_est.mean - m).abs() < 5.0 * combined,
            "{} vs {m} (combined se {combined})",
            max_est.mean
        );
    }

    #[test]
    fn expected_max_se_shrinks_like_root_trials() {
        let mut sampler = SpectralSampler::new(16, 1).unwrap();
        let small = expected_max(
            |t| sampler.sample(&mut trial_rng(8, Purpose::MaxStatistic, t)),
            100,
        )
        .unwrap();
        let mut sampler2 = SpectralSampler::new(16, 1).unwrap();
        let large = expected_max(
            |t| sampler2.sample(&mut trial_rng(8, Purpose::MaxStatistic, t)),
            10_000,
        )
        .unwrap();
        let ratio = small.se / large.se;
        assert!(
            (7.0..14.0).contains(&ratio),
            "se ratio {ratio} not near sqrt(100)"
        );
    }

    #[test]
    fn expected_max_scaling_stability_1d() {
        // estimate / n^{3/2} at n = 64 within a factor 3 of the n = 32 value
        let est = |n: usize| {
            let mut s = SpectralSampler::new(n, 1).unwrap();
            let trials = 10_000u64;
            let vals: Vec<f64> = (0..trials)
                .map(|t| {
                    s.sample(&mut trial_rng(9, Purpose::Scaling, t))
                        .unwrap()
                        .values[0]
                })
                .collect();
            mean_se(&vals).0 / (n as f64).powf(1.5)
        };
        let r32 = est(32);
        let r64 = est(64);
        let ratio = r64 / r32;
        assert!((1.0 / 3.0..3.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn expected_max_rejects_tiny_trials() {
        let model = model_for(Arc::new(Graph::torus(3, 1).unwrap()));
        let sampler = CholeskySampler::new(&model).unwrap();
        assert!(expected_max(
            |t| Ok(sampler.sample(&mut trial_rng(1, Purpose::MaxStatistic, t))),
            1
        )
        .is_err());
    }
}
