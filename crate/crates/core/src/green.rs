//! Green functions on finite graphs, the torus Laplacian spectrum, and the
//! Fourier variogram of the bi-Laplacian field.
//!
//! `g^z(x,y)` is the expected number of visits to `y` by simple random walk
//! started at `x` before hitting `z`; `f = g^z(x,·)/deg(·)` is the unique
//! solution of `Δf = δ_z - δ_x` with `f(z) = 0`. Walks started at the
//! killing site are killed before counting, so row `z` of the table is
//! identically zero. The averaged kernel `g(x,y) = (1/|V|) Σ_z g^z(x,y)`
//! satisfies `Δ(g(x,·)/deg) = 1/|V| - δ_x` and drives the covariance of the
//! bi-Laplacian field.
//!
//! Tables are computed by linear solves, not walk simulation; random-walk
//! Monte Carlo appears only as a test oracle.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numeric::{det_sum_indexed, neumaier_sum};
use crate::solver::solve_poisson_cg;

/// Dense Green tables are capped at this many vertices (`|V|^2` memory).
pub const GREEN_DENSE_MAX: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum GreenMode {
    Killed { z: usize },
    Averaged,
}

/// Dense table of Green values `g(x, y)`.
#[derive(Debug, Clone)]
pub struct GreenTable {
    graph: Arc<Graph>,
    mode: GreenMode,
    entries: DMatrix<f64>,
}

impl GreenTable {
    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn mode(&self) -> &GreenMode {
        &self.mode
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.entries[(x, y)]
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// `K(y) = (1/deg y) Σ_w g(w, y)`; constant in `y` for averaged tables.
    pub fn k_values(&self) -> Vec<f64> {
        let n = self.graph.vertex_count();
        (0..n)
            .map(|y| {
                neumaier_sum((0..n).map(|w| self.entries[(w, y)])) / self.graph.degree(y) as f64
            })
            .collect()
    }
}

fn check_dense_cap(graph: &Graph) -> Result<()> {
    let n = graph.vertex_count();
    if n > GREEN_DENSE_MAX {
        return Err(Error::SizeOverflow(format!(
            "dense Green tables capped at {GREEN_DENSE_MAX} vertices, got {n}"
        )));
    }
    Ok(())
}

fn neg_laplacian_dense(graph: &Graph) -> DMatrix<f64> {
    let n = graph.vertex_count();
    let mut m = DMatrix::zeros(n, n);
    for v in 0..n {
        m[(v, v)] = graph.degree(v) as f64;
        for w in graph.neighbors(v) {
            m[(v, w)] -= 1.0;
        }
    }
    m
}

/// Killed Green table `g^z(x, y)`, by one grounded factorization.
pub fn green_killed(graph: &Arc<Graph>, z: usize) -> Result<GreenTable> {
    let n = graph.vertex_count();
    if z >= n {
        return Err(Error::InvalidParameter(format!(
            "killing vertex {z} out of range"
        )));
    }
    check_dense_cap(graph)?;
    // grounded at z: remove row and column z from -Δ
    let m = n - 1;
    let map = |v: usize| if v > z { v - 1 } else { v };
    let mut grounded = DMatrix::<f64>::zeros(m, m);
    for v in 0..n {
        if v == z {
            continue;
        }
        grounded[(map(v), map(v))] = graph.degree(v) as f64;
        for w in graph.neighbors(v) {
            if w != z {
                grounded[(map(v), map(w))] -= 1.0;
            }
        }
    }
    let inv = Cholesky::new(grounded)
        .ok_or_else(|| Error::SolveFailure("grounded Laplacian not positive definite".into()))?
        .inverse();
    // g^z(x,y)/deg(y) solves Δf = δ_z - δ_x with f(z) = 0, which is the
    // grounded inverse column: f_x(y) = inv[map(y), map(x)].
    let mut entries = DMatrix::zeros(n, n);
    for x in 0..n {
        if x == z {
            continue;
        }
        for y in 0..n {
            if y == z {
                continue;
            }
            entries[(x, y)] = graph.degree(y) as f64 * inv[(map(y), map(x))];
        }
    }
    Ok(GreenTable {
        graph: Arc::clone(graph),
        mode: GreenMode::Killed { z },
        entries,
    })
}

/// Averaged Green table `g(x,y) = (1/|V|) Σ_z g^z(x,y)`.
///
/// Averaging the grounded-inverse identity
/// `g^z(x,y)/deg(y) = P[y,x] - P[y,z] - P[z,x] + P[z,z]`
/// over `z` (rows of the pseudo-inverse `P` of `-Δ` sum to zero) collapses
/// the whole family into `g(x,y) = deg(y) (P[y,x] + trace(P)/|V|)`, so one
/// factorization suffices instead of `|V|` of them.
pub fn green_averaged(graph: &Arc<Graph>) -> Result<GreenTable> {
    check_dense_cap(graph)?;
    let n = graph.vertex_count();
    let p = laplacian_pseudo_inverse(graph)?;
    let c = (0..n).map(|i| p[(i, i)]).sum::<f64>() / n as f64;
    let mut entries = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            entries[(x, y)] = graph.degree(y) as f64 * (p[(y, x)] + c);
        }
    }
    Ok(GreenTable {
        graph: Arc::clone(graph),
        mode: GreenMode::Averaged,
        entries,
    })
}

/// Moore-Penrose pseudo-inverse of `-Δ`, via `(L + J/n)^{-1} - J/n`.
fn laplacian_pseudo_inverse(graph: &Graph) -> Result<DMatrix<f64>> {
    let n = graph.vertex_count();
    let mut m = neg_laplacian_dense(graph);
    let jn = 1.0 / n as f64;
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += jn;
        }
    }
    let mut inv = Cholesky::new(m)
        .ok_or_else(|| Error::SolveFailure("shifted Laplacian not positive definite".into()))?
        .inverse();
    for i in 0..n {
        for j in 0..n {
            inv[(i, j)] -= jn;
        }
    }
    Ok(inv)
}

/// One column of the Green function killed on exiting a box.
#[derive(Debug, Clone)]
pub struct GreenColumn {
    pub graph: Arc<Graph>,
    pub source: usize,
    /// `values[y] = g_n(source, y)`.
    pub values: Vec<f64>,
}

/// `g_n(o, ·)` on the box `[-radius, radius]^d`: the expected visit counts
/// of walk started at `o` and killed on leaving the box. Solves
/// `Δ(g_n(o,·)/2d) = -δ_o` with the absorbing stubs supplying the killing.
pub fn green_dirichlet_column(radius: i64, d: usize, source: &[i64]) -> Result<GreenColumn> {
    let graph = Arc::new(Graph::dirichlet_box(radius, d)?);
    let o = graph
        .index(source)
        .ok_or_else(|| Error::InvalidParameter("source outside the box".into()))?;
    let n = graph.vertex_count();
    let mut rhs = vec![0.0; n];
    rhs[o] = -1.0;
    let f = solve_poisson_cg(&graph, &rhs, 1e-12, 200_000)?;
    let deg = 2.0 * d as f64;
    let values = f.iter().map(|&v| deg * v).collect();
    Ok(GreenColumn {
        graph,
        source: o,
        values,
    })
}

/// `ν = (Σ_y g(o,y)^2)^{1/2}`, the CLT normalization.
pub fn nu_n(col: &GreenColumn) -> f64 {
    det_sum_indexed(col.values.len(), |y| col.values[y] * col.values[y]).sqrt()
}

/// Laplacian eigenvalue `λ_a = -4 Σ_i sin²(π a_i / n)` on `Z_n^d`.
pub fn torus_eigenvalue(n: usize, a: &[i64]) -> f64 {
    -4.0 * a
        .iter()
        .map(|&ai| {
            let s = (std::f64::consts::PI * ai as f64 / n as f64).sin();
            s * s
        })
        .sum::<f64>()
}

/// All `n^d` Laplacian eigenvalues of the torus, indexed like vertices.
#[derive(Debug, Clone)]
pub struct TorusSpectrum {
    pub n: usize,
    pub d: usize,
    pub eigenvalues: Vec<f64>,
}

pub fn torus_spectrum(n: usize, d: usize) -> Result<TorusSpectrum> {
    let graph = Graph::torus(n, d)?;
    let count = graph.vertex_count();
    let mut eigenvalues = Vec::with_capacity(count);
    for v in 0..count {
        let coords = graph.coord(v).unwrap();
        eigenvalues.push(torus_eigenvalue(n, &coords.coords));
    }
    Ok(TorusSpectrum { n, d, eigenvalues })
}

/// Variogram of the bi-Laplacian field by direct Fourier summation:
/// `E(η_0 - η_x)^2 = F_{n,d}(x)/4` with
/// `F_{n,d}(x) = n^{-d} Σ_{z≠0} sin²(π x·z / n) / (Σ_i sin²(π z_i / n))²`.
pub fn variogram_fourier(n: usize, d: usize, x: &[i64]) -> Result<f64> {
    let graph = Graph::torus(n, d)?;
    if x.len() != d {
        return Err(Error::InvalidParameter(format!(
            "lag has {} coordinates, expected {d}",
            x.len()
        )));
    }
    let len = graph.vertex_count();
    let sin2: Vec<f64> = (0..n)
        .map(|k| {
            let s = (std::f64::consts::PI * k as f64 / n as f64).sin();
            s * s
        })
        .collect();
    // reduce the lag mod n so the running dot product stays nonnegative
    let xr: Vec<usize> = x.iter().map(|&c| c.rem_euclid(n as i64) as usize).collect();
    let mut digits = vec![0usize; d];
    let mut denom_prefix = vec![0.0f64; d + 1];
    let mut dot_prefix = vec![0usize; d + 1];
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for flat in 0..len {
        if flat != 0 {
            let denom = denom_prefix[d];
            let num = sin2[dot_prefix[d] % n];
            let term = num / (denom * denom);
            // Neumaier accumulation
            let t = sum + term;
            if sum.abs() >= term.abs() {
                comp += (sum - t) + term;
            } else {
                comp += (term - t) + sum;
            }
            sum = t;
        }
        let mut i = d;
        while i > 0 {
            i -= 1;
            digits[i] += 1;
            if digits[i] == n {
                digits[i] = 0;
                if i == 0 {
                    break;
                }
            } else {
                break;
            }
        }
        for j in i..d {
            denom_prefix[j + 1] = denom_prefix[j] + sin2[digits[j]];
            dot_prefix[j + 1] = dot_prefix[j] + xr[j] * digits[j];
        }
    }
    let f = (sum + comp) / len as f64;
    Ok(f / 4.0)
}

/// Green convolution: `v(y) = (1/deg y) Σ_x g(x,y) σ(x)` for an averaged
/// table, so that `Δv = mean(σ) - σ`.
pub fn green_convolve(gt: &GreenTable, sigma: &[f64]) -> Result<Vec<f64>> {
    if gt.mode != GreenMode::Averaged {
        return Err(Error::InvalidParameter(
            "green_convolve needs an averaged table".into(),
        ));
    }
    let n = gt.graph.vertex_count();
    if sigma.len() != n {
        return Err(Error::FieldLengthMismatch {
            expected: n,
            got: sigma.len(),
        });
    }
    let mut v = vec![0.0; n];
    for (y, vy) in v.iter_mut().enumerate() {
        let acc = neumaier_sum((0..n).map(|x| gt.entries[(x, y)] * sigma[x]));
        *vy = acc / gt.graph.degree(y) as f64;
    }
    Ok(v)
}
