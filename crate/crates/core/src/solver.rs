//! Poisson solvers for the graph Laplacian: a dense grounded factorization
//! for small graphs, matrix-free conjugate gradients, and an FFT solver on
//! the torus.
//!
//! All of them solve `Δu = f`. On a torus or general graph the Laplacian has
//! a one-dimensional kernel (constants), so `f` must have zero mean and `u`
//! is determined up to an additive constant; callers normalize afterwards
//! (odometers are shifted so `min u = 0`). On a Dirichlet box the absorbing
//! stubs make `-Δ` positive definite and no normalization is needed.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numeric::{det_sum, neumaier_sum};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Largest graph handled by the dense factorization path.
pub const DENSE_SOLVE_MAX: usize = 4096;

/// Flat adjacency cache for hot loops (toppling sweeps, CG applications).
#[derive(Debug, Clone)]
pub struct Adjacency {
    pub offsets: Vec<u32>,
    pub nbrs: Vec<u32>,
    pub degree: Vec<u32>,
    pub stubs: Vec<u32>,
}

impl Adjacency {
    pub fn build(g: &Graph) -> Adjacency {
        let n = g.vertex_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut nbrs = Vec::new();
        let mut degree = Vec::with_capacity(n);
        let mut stubs = Vec::with_capacity(n);
        offsets.push(0u32);
        for v in 0..n {
            for w in g.neighbors(v) {
                nbrs.push(w as u32);
            }
            offsets.push(nbrs.len() as u32);
            degree.push(g.degree(v) as u32);
            stubs.push(g.absorbing_stubs(v) as u32);
        }
        Adjacency {
            offsets,
            nbrs,
            degree,
            stubs,
        }
    }

    #[inline]
    pub fn neighbors_of(&self, v: usize) -> &[u32] {
        &self.nbrs[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }

    /// `out = -Δ x` (stubs included in the diagonal).
    pub fn apply_neg_laplacian(&self, x: &[f64], out: &mut [f64]) {
        for v in 0..x.len() {
            let mut acc = self.degree[v] as f64 * x[v];
            for &w in self.neighbors_of(v) {
                acc -= x[w as usize];
            }
            out[v] = acc;
        }
    }
}

/// Dense grounded solve of `Δu = f` with `u[0] = 0`.
///
/// The row and column of the pin vertex are removed; the remaining grounded
/// matrix `-Δ̃` is positive definite for a connected graph.
pub fn solve_poisson_dense(g: &Graph, f: &[f64]) -> Result<Vec<f64>> {
    let n = g.vertex_count();
    if f.len() != n {
        return Err(Error::FieldLengthMismatch {
            expected: n,
            got: f.len(),
        });
    }
    if n > DENSE_SOLVE_MAX {
        return Err(Error::SizeOverflow(format!(
            "dense solve capped at {DENSE_SOLVE_MAX} vertices, got {n}"
        )));
    }
    let pin = 0usize;
    let m = n - 1;
    let mut grounded = DMatrix::<f64>::zeros(m, m);
    // index map: vertex v>0 -> v-1
    for v in 1..n {
        grounded[(v - 1, v - 1)] = g.degree(v) as f64;
        for w in g.neighbors(v) {
            if w != pin {
                grounded[(v - 1, w - 1)] -= 1.0;
            }
        }
    }
    let b = DVector::from_iterator(m, (1..n).map(|v| -f[v]));
    let chol = Cholesky::new(grounded)
        .ok_or_else(|| Error::SolveFailure("grounded Laplacian not positive definite".into()))?;
    let sol = chol.solve(&b);
    let mut u = vec![0.0; n];
    for v in 1..n {
        u[v] = sol[v - 1];
    }
    Ok(u)
}

/// Matrix-free conjugate gradients for `Δu = f`.
///
/// On graphs without absorption the system is solved on the mean-zero
/// subspace (both `f` and the iterates are deflated), which is where the
/// Laplacian is invertible.
pub fn solve_poisson_cg(g: &Graph, f: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = g.vertex_count();
    if f.len() != n {
        return Err(Error::FieldLengthMismatch {
            expected: n,
            got: f.len(),
        });
    }
    let adj = Adjacency::build(g);
    let deflate = !g.has_absorption();
    let mut b: Vec<f64> = f.iter().map(|&v| -v).collect();
    if deflate {
        let mean = det_sum(&b) / n as f64;
        for v in &mut b {
            *v -= mean;
        }
    }
    let bnorm = dot(&b, &b).sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for _ in 0..max_iter {
        adj.apply_neg_laplacian(&p, &mut ap);
        if deflate {
            let mean = det_sum(&ap) / n as f64;
            for v in &mut ap {
                *v -= mean;
            }
        }
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol * bnorm {
            if deflate {
                let mean = det_sum(&x) / n as f64;
                for v in &mut x {
                    *v -= mean;
                }
            }
            return Ok(x);
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::SolveFailure(format!(
        "CG did not reach tolerance {tol} in {max_iter} iterations (residual {:.3e})",
        rr.sqrt() / bnorm
    )))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    neumaier_sum(a.iter().zip(b).map(|(&x, &y)| x * y))
}

/// Spectral Poisson solver on the torus `Z_n^d`.
///
/// Eigenvalues of the Laplacian are `λ_a = -4 Σ_i sin²(π a_i / n)`, so a
/// forward transform, a coefficient divide with the zero mode removed, and
/// an inverse transform solve `Δu = f - mean(f)` with `mean(u) = 0`.
///
/// Multi-dimensional transforms run as `d` rounds of a contiguous last-axis
/// FFT followed by an axis rotation, which keeps every pass cache-friendly
/// and safely parallel.
pub struct TorusPoisson {
    n: usize,
    d: usize,
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    sin2: Vec<f64>,
    buf: Vec<Complex64>,
    swap: Vec<Complex64>,
}

impl TorusPoisson {
    pub fn new(n: usize, d: usize) -> Result<TorusPoisson> {
        let g = Graph::torus(n, d)?;
        let len = g.vertex_count();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let sin2 = (0..n)
            .map(|a| {
                let s = (std::f64::consts::PI * a as f64 / n as f64).sin();
                s * s
            })
            .collect();
        Ok(TorusPoisson {
            n,
            d,
            len,
            fwd,
            inv,
            sin2,
            buf: vec![Complex64::default(); len],
            swap: vec![Complex64::default(); len],
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.len
    }

    /// Solves `Δu = f - mean(f)` and returns the mean-zero `u`.
    pub fn solve_mean_zero(&mut self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.len {
            return Err(Error::FieldLengthMismatch {
                expected: self.len,
                got: f.len(),
            });
        }
        for (b, &v) in self.buf.iter_mut().zip(f) {
            *b = Complex64::new(v, 0.0);
        }
        self.transform(true);
        self.divide_by_spectrum();
        self.transform(false);
        Ok(self.buf.iter().map(|c| c.re).collect())
    }

    fn transform(&mut self, forward: bool) {
        let fft = if forward { &self.fwd } else { &self.inv };
        for _ in 0..self.d {
            fft_last_axis(&mut self.buf, self.n, fft.as_ref());
            if self.d > 1 {
                rotate_axes(&self.buf, &mut self.swap, self.n);
                std::mem::swap(&mut self.buf, &mut self.swap);
            }
        }
    }

    /// Multiplies coefficient `a` by `1 / (λ_a n^d)` and zeroes the `a = 0`
    /// mode. The `n^d` factor undoes the unnormalized transform pair.
    fn divide_by_spectrum(&mut self) {
        let scale = 1.0 / self.len as f64;
        let n = self.n;
        let d = self.d;
        let sin2 = &self.sin2;
        let work = |start: usize, chunk: &mut [Complex64]| {
            // digit decomposition of the running flat index, a_{d-1} fastest
            let mut digits = vec![0usize; d];
            let mut rem = start;
            for i in (0..d).rev() {
                digits[i] = rem % n;
                rem /= n;
            }
            let mut prefix = vec![0.0f64; d + 1];
            for i in 0..d {
                prefix[i + 1] = prefix[i] + sin2[digits[i]];
            }
            for (k, c) in chunk.iter_mut().enumerate() {
                let flat = start + k;
                if flat == 0 {
                    *c = Complex64::default();
                } else {
                    let lambda = -4.0 * prefix[d];
                    *c *= scale / lambda;
                }
                // increment the digit odometer
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
                    prefix[j + 1] = prefix[j] + sin2[digits[j]];
                }
            }
        };
        #[cfg(feature = "parallel")]
        const CH: usize = 1 << 15;
        #[cfg(feature = "parallel")]
        if self.len > CH {
            self.buf
                .par_chunks_mut(CH)
                .enumerate()
                .for_each(|(ci, chunk)| work(ci * CH, chunk));
            return;
        }
        work(0, &mut self.buf);
    }
}

fn fft_last_axis(data: &mut [Complex64], n: usize, fft: &dyn Fft<f64>) {
    let scratch_len = fft.get_inplace_scratch_len();
    #[cfg(feature = "parallel")]
    if data.len() > n && data.len() > (1 << 16) {
        data.par_chunks_mut(n).for_each_init(
            || vec![Complex64::default(); scratch_len],
            |scratch, lane| fft.process_with_scratch(lane, scratch),
        );
        return;
    }
    let mut scratch = vec![Complex64::default(); scratch_len];
    for lane in data.chunks_mut(n) {
        fft.process_with_scratch(lane, &mut scratch);
    }
}

/// Moves the last axis of a row-major `[n; d]` array to the front:
/// `out[o] = in[(o % n) * (len/n) + o / n]`.
fn rotate_axes(input: &[Complex64], out: &mut [Complex64], n: usize) {
    let len = input.len();
    let stride = len / n;
    #[cfg(feature = "parallel")]
    const CH: usize = 1 << 14;
    let work = |start: usize, chunk: &mut [Complex64]| {
        for (k, v) in chunk.iter_mut().enumerate() {
            let o = start + k;
            *v = input[(o % n) * stride + o / n];
        }
    };
    #[cfg(feature = "parallel")]
    if len > CH {
        out.par_chunks_mut(CH)
            .enumerate()
            .for_each(|(ci, chunk)| work(ci * CH, chunk));
        return;
    }
    work(0, out);
}
