//! Graph substrates: discrete torus `Z_n^d`, boxes of `Z^d` with absorbing
//! boundary, and general adjacency-list graphs.
//!
//! The graph Laplacian acts on functions `f: V -> R` by
//! `Δf(x) = Σ_{y~x} (f(y) - f(x))`. On a box, edges that would leave the box
//! are kept as absorbing stubs: they contribute `(0 - f(x))` to the Laplacian
//! and mass sent across them vanishes, so every interior site keeps degree
//! `2d`.

use crate::error::{Error, Result};

/// Hard cap on vertex counts; protects against accidental `n^d` blowups.
pub const MAX_VERTICES: usize = 1 << 26;

/// Structure of the vertex set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphKind {
    /// Discrete torus `Z_n^d`, vertex-transitive with constant degree `2d`.
    Torus { n: usize, d: usize },
    /// Interior sites of `[-radius, radius]^d` with absorbing boundary stubs.
    DirichletBox { radius: i64, d: usize },
    /// Explicit adjacency lists, undirected and connected.
    General { adjacency: Vec<Vec<usize>> },
}

/// A finite undirected connected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    kind: GraphKind,
    vertex_count: usize,
}

/// Lattice coordinates of a vertex, canonicalized into `(-n/2, n/2]` per
/// axis on the torus so that p-norms are unambiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexCoord {
    pub coords: Vec<i64>,
}

impl VertexCoord {
    pub fn norm1(&self) -> f64 {
        self.coords.iter().map(|&c| c.abs() as f64).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.coords
            .iter()
            .map(|&c| (c * c) as f64)
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.coords.iter().map(|&c| c.abs()).max().unwrap_or(0) as f64
    }
}

impl Graph {
    /// Discrete torus `Z_n^d`. Requires `n >= 3` so that neighbor pairs are
    /// distinct (n = 2 would create parallel edges).
    pub fn torus(n: usize, d: usize) -> Result<Graph> {
        if n < 3 {
            return Err(Error::InvalidParameter(format!(
                "torus side length must be >= 3, got {n}"
            )));
        }
        if d < 1 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        let count = checked_power(n, d)?;
        Ok(Graph {
            kind: GraphKind::Torus { n, d },
            vertex_count: count,
        })
    }

    /// Box of interior sites of `[-radius, radius]^d` with absorbing stubs.
    pub fn dirichlet_box(radius: i64, d: usize) -> Result<Graph> {
        if radius < 1 {
            return Err(Error::InvalidParameter(format!(
                "box radius must be >= 1, got {radius}"
            )));
        }
        if d < 1 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        let side = 2 * radius as usize + 1;
        let count = checked_power(side, d)?;
        Ok(Graph {
            kind: GraphKind::DirichletBox { radius, d },
            vertex_count: count,
        })
    }

    /// General graph from adjacency lists. Checks symmetry (with edge
    /// multiplicity), absence of self-loops, and connectivity.
    pub fn general(adjacency: Vec<Vec<usize>>) -> Result<Graph> {
        let n = adjacency.len();
        if n == 0 {
            return Err(Error::InvalidParameter("empty vertex set".into()));
        }
        for (x, nbrs) in adjacency.iter().enumerate() {
            for &y in nbrs {
                if y >= n {
                    return Err(Error::InvalidParameter(format!(
                        "vertex {x} lists out-of-range neighbor {y}"
                    )));
                }
                if y == x {
                    return Err(Error::InvalidParameter(format!("self-loop at vertex {x}")));
                }
                let fwd = adjacency[x].iter().filter(|&&v| v == y).count();
                let bwd = adjacency[y].iter().filter(|&&v| v == x).count();
                if fwd != bwd {
                    return Err(Error::NotUndirected { x, y });
                }
            }
        }
        // BFS connectivity check.
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut reached = 1;
        while let Some(v) = stack.pop() {
            for &w in &adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    reached += 1;
                    stack.push(w);
                }
            }
        }
        if reached != n {
            return Err(Error::Disconnected);
        }
        Ok(Graph {
            kind: GraphKind::General { adjacency },
            vertex_count: n,
        })
    }

    pub fn kind(&self) -> &GraphKind {
        &self.kind
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    /// Degree used by the Laplacian. On a box this counts absorbing stubs,
    /// so it is `2d` everywhere.
    pub fn degree(&self, v: usize) -> usize {
        match &self.kind {
            GraphKind::Torus { d, .. } | GraphKind::DirichletBox { d, .. } => 2 * d,
            GraphKind::General { adjacency } => adjacency[v].len(),
        }
    }

    /// Number of absorbing stubs at `v` (0 except on box boundaries).
    pub fn absorbing_stubs(&self, v: usize) -> usize {
        match &self.kind {
            GraphKind::DirichletBox { radius, d } => {
                let side = (2 * radius + 1) as usize;
                let mut rem = v;
                let mut stubs = 0;
                for _ in 0..*d {
                    let c = rem % side;
                    rem /= side;
                    if c == 0 {
                        stubs += 1;
                    }
                    if c == side - 1 {
                        stubs += 1;
                    }
                }
                stubs
            }
            _ => 0,
        }
    }

    /// Real (non-absorbing) neighbors of `v`.
    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        match &self.kind {
            GraphKind::Torus { n, d } => {
                let mut out = Vec::with_capacity(2 * d);
                let mut stride = 1;
                let mut rem = v;
                for _ in 0..*d {
                    let c = rem % n;
                    rem /= n;
                    let up = if c + 1 == *n {
                        v - (n - 1) * stride
                    } else {
                        v + stride
                    };
                    let down = if c == 0 {
                        v + (n - 1) * stride
                    } else {
                        v - stride
                    };
                    out.push(up);
                    out.push(down);
                    stride *= n;
                }
                out
            }
            GraphKind::DirichletBox { radius, d } => {
                let side = (2 * radius + 1) as usize;
                let mut out = Vec::with_capacity(2 * d);
                let mut stride = 1;
                let mut rem = v;
                for _ in 0..*d {
                    let c = rem % side;
                    rem /= side;
                    if c + 1 < side {
                        out.push(v + stride);
                    }
                    if c > 0 {
                        out.push(v - stride);
                    }
                    stride *= side;
                }
                out
            }
            GraphKind::General { adjacency } => adjacency[v].clone(),
        }
    }

    /// Canonical lattice coordinates of vertex `v` (torus and box only).
    pub fn coord(&self, v: usize) -> Option<VertexCoord> {
        match &self.kind {
            GraphKind::Torus { n, d } => {
                let mut coords = vec![0i64; *d];
                let mut rem = v;
                // Row-major with the first coordinate varying slowest.
                for i in (0..*d).rev() {
                    let c = (rem % n) as i64;
                    rem /= n;
                    let n = *n as i64;
                    coords[i] = if c > n / 2 { c - n } else { c };
                }
                Some(VertexCoord { coords })
            }
            GraphKind::DirichletBox { radius, d } => {
                let side = (2 * radius + 1) as usize;
                let mut coords = vec![0i64; *d];
                let mut rem = v;
                for i in (0..*d).rev() {
                    coords[i] = (rem % side) as i64 - radius;
                    rem /= side;
                }
                Some(VertexCoord { coords })
            }
            GraphKind::General { .. } => None,
        }
    }

    /// Linear index of canonical coordinates; inverse of [`Graph::coord`].
    pub fn index(&self, coords: &[i64]) -> Option<usize> {
        match &self.kind {
            GraphKind::Torus { n, d } => {
                if coords.len() != *d {
                    return None;
                }
                let n_i = *n as i64;
                let mut idx = 0usize;
                for &c in coords {
                    let c = c.rem_euclid(n_i) as usize;
                    idx = idx * n + c;
                }
                Some(idx)
            }
            GraphKind::DirichletBox { radius, d } => {
                if coords.len() != *d {
                    return None;
                }
                let side = (2 * radius + 1) as usize;
                let mut idx = 0usize;
                for &c in coords {
                    if c < -radius || c > *radius {
                        return None;
                    }
                    idx = idx * side + (c + radius) as usize;
                }
                Some(idx)
            }
            GraphKind::General { .. } => None,
        }
    }

    /// Index of the origin (all-zero coordinates) on lattice graphs.
    pub fn origin(&self) -> usize {
        match &self.kind {
            GraphKind::Torus { .. } | GraphKind::DirichletBox { .. } => {
                let d = match &self.kind {
                    GraphKind::Torus { d, .. } => *d,
                    GraphKind::DirichletBox { d, .. } => *d,
                    _ => unreachable!(),
                };
                self.index(&vec![0i64; d]).unwrap()
            }
            GraphKind::General { .. } => 0,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.kind, GraphKind::Torus { .. })
    }

    pub fn has_absorption(&self) -> bool {
        matches!(self.kind, GraphKind::DirichletBox { .. })
    }

    /// Applies the graph Laplacian: `Δf(x) = Σ_{y~x} (f(y) - f(x))`, with
    /// absorbing stubs contributing `(0 - f(x))`.
    pub fn laplacian_apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.vertex_count {
            return Err(Error::FieldLengthMismatch {
                expected: self.vertex_count,
                got: f.len(),
            });
        }
        let mut out = vec![0.0; self.vertex_count];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = -(self.degree(x) as f64) * f[x];
            for y in self.neighbors(x) {
                acc += f[y];
            }
            *o = acc;
        }
        Ok(out)
    }
}

fn checked_power(base: usize, exp: usize) -> Result<usize> {
    let mut acc: usize = 1;
    for _ in 0..exp {
        acc = acc
            .checked_mul(base)
            .ok_or_else(|| Error::SizeOverflow(format!("{base}^{exp} overflows")))?;
        if acc > MAX_VERTICES {
            return Err(Error::SizeOverflow(format!(
                "{base}^{exp} exceeds the {MAX_VERTICES}-vertex budget"
            )));
        }
    }
    Ok(acc)
}
