//! Two-dimensional uniform lattice with a cubic-convolution (Keys) basis and
//! patch-sparse operator matrices.
//!
//! A function is stored by its nodal values f_k; between nodes it is the
//! Keys interpolant Σ f_k φ_k. Off the lattice the interpolant is extended by
//! clamping stencil indices, which makes it constant along the outward normal
//! far away. An operator row for a point x holds the moments ∫K(x,y)φ_k(y)dy
//! on a rectangular patch of nodes.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Uniform n×n lattice on [−L, L]².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub half: f64,
    pub n: usize,
    pub dx: f64,
}

/// Keys cubic convolution kernel (a = −1/2).
#[inline]
pub fn keys(s: f64) -> f64 {
    let a = s.abs();
    if a < 1.0 {
        (1.5 * a - 2.5) * a * a + 1.0
    } else if a < 2.0 {
        ((-0.5 * a + 2.5) * a - 4.0) * a + 2.0
    } else {
        0.0
    }
}

/// Four clamped indices and weights of the 1-D stencil at coordinate u (in
/// units of Δx from the first node).
#[inline]
pub fn stencil(u: f64, n: usize) -> ([usize; 4], [f64; 4]) {
    let b = u.floor();
    let s = u - b;
    let w = [keys(1.0 + s), keys(s), keys(1.0 - s), keys(2.0 - s)];
    let last = (n - 1) as i64;
    let b = b as i64;
    let idx = [
        (b - 1).clamp(0, last) as usize,
        b.clamp(0, last) as usize,
        (b + 1).clamp(0, last) as usize,
        (b + 2).clamp(0, last) as usize,
    ];
    (idx, w)
}

impl Lattice {
    pub fn new(half: f64, dx: f64) -> Result<Lattice> {
        if !(half > 0.0 && dx > 0.0) {
            return Err(Error::Parameter("lattice extent and spacing must be positive".into()));
        }
        let cells = (2.0 * half / dx).round();
        if ((cells * dx) - 2.0 * half).abs() > 1e-9 * half || cells < 4.0 {
            return Err(Error::Parameter(format!("spacing {dx} does not divide [-{half}, {half}]")));
        }
        let n = cells as usize + 1;
        if n > u16::MAX as usize {
            return Err(Error::Parameter("lattice too large".into()));
        }
        Ok(Lattice { half, n, dx })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.half + i as f64 * self.dx
    }

    #[inline]
    pub fn node(&self, k: usize) -> [f64; 2] {
        [self.coord(k / self.n), self.coord(k % self.n)]
    }

    pub fn nodes(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    /// Nodal values of f.
    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64 + Sync) -> Vec<f64> {
        (0..self.len()).into_par_iter().map(|k| f(self.node(k))).collect()
    }

    /// Stencils in both axes at y.
    #[inline]
    pub fn stencil2(&self, y: [f64; 2]) -> (([usize; 4], [f64; 4]), ([usize; 4], [f64; 4])) {
        let u0 = (y[0] + self.half) / self.dx;
        let u1 = (y[1] + self.half) / self.dx;
        (stencil(u0, self.n), stencil(u1, self.n))
    }

    /// Keys interpolant of nodal values at y.
    /// Two clamped indices and weights per axis of the tensor hat basis.
    #[inline]
    pub fn hat_stencil2(&self, y: [f64; 2]) -> (([usize; 2], [f64; 2]), ([usize; 2], [f64; 2])) {
        let one = |v: f64| {
            let u = (v + self.half) / self.dx;
            let b = u.floor();
            let s = u - b;
            let last = (self.n - 1) as i64;
            let b = b as i64;
            ([b.clamp(0, last) as usize, (b + 1).clamp(0, last) as usize], [1.0 - s, s])
        };
        (one(y[0]), one(y[1]))
    }

    pub fn interpolate(&self, v: &[f64], y: [f64; 2]) -> f64 {
        let ((ia, wa), (ib, wb)) = self.stencil2(y);
        let mut s = 0.0;
        for a in 0..4 {
            let mut r = 0.0;
            for b in 0..4 {
                r += wb[b] * v[ia[a] * self.n + ib[b]];
            }
            s += wa[a] * r;
        }
        s
    }

    /// Basis weights at y as a one-row patch.
    pub fn point_row(&self, y: [f64; 2]) -> PatchRow {
        let mut acc = RowAccumulator::new(*self);
        acc.add(y, 1.0);
        acc.finish(0.0)
    }
}

/// Dense coefficients on the node rectangle [i0, i0+ni) × [j0, j0+nj).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRow {
    pub i0: usize,
    pub j0: usize,
    pub ni: usize,
    pub nj: usize,
    pub vals: Vec<f64>,
}

impl PatchRow {
    pub fn empty() -> PatchRow {
        PatchRow { i0: 0, j0: 0, ni: 0, nj: 0, vals: Vec::new() }
    }

    /// Σ vals · v over the patch.
    #[inline]
    pub fn dot(&self, n: usize, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for a in 0..self.ni {
            let base = (self.i0 + a) * n + self.j0;
            let row = &self.vals[a * self.nj..(a + 1) * self.nj];
            let vv = &v[base..base + self.nj];
            s += row.iter().zip(vv).map(|(x, y)| x * y).sum::<f64>();
        }
        s
    }

    /// out += c · vals scattered to node indices.
    #[inline]
    pub fn scatter(&self, n: usize, c: f64, out: &mut [f64]) {
        if c == 0.0 {
            return;
        }
        for a in 0..self.ni {
            let base = (self.i0 + a) * n + self.j0;
            let row = &self.vals[a * self.nj..(a + 1) * self.nj];
            for (o, x) in out[base..base + self.nj].iter_mut().zip(row) {
                *o += c * x;
            }
        }
    }

    pub fn sum(&self) -> f64 {
        self.vals.iter().sum()
    }

    pub fn abs_sum(&self) -> f64 {
        self.vals.iter().map(|v| v.abs()).sum()
    }

    /// Dense node-indexed vector of the row.
    pub fn to_dense(&self, lat: &Lattice) -> Vec<f64> {
        let mut out = vec![0.0; lat.len()];
        self.scatter(lat.n, 1.0, &mut out);
        out
    }
}

/// Collects weighted point evaluations of the basis into a patch.
pub struct RowAccumulator {
    lat: Lattice,
    pts: Vec<([usize; 4], [f64; 4], [usize; 4], [f64; 4], f64, [f64; 2])>,
    lo: [usize; 2],
    hi: [usize; 2],
}

impl RowAccumulator {
    pub fn new(lat: Lattice) -> Self {
        RowAccumulator { lat, pts: Vec::new(), lo: [usize::MAX; 2], hi: [0; 2] }
    }

    pub fn clear(&mut self) {
        self.pts.clear();
        self.lo = [usize::MAX; 2];
        self.hi = [0; 2];
    }

    /// Adds c · φ_k(y) to every entry k.
    #[inline]
    pub fn add(&mut self, y: [f64; 2], c: f64) {
        if c == 0.0 {
            return;
        }
        let ((ia, wa), (ib, wb)) = self.lat.stencil2(y);
        self.lo[0] = self.lo[0].min(ia[0]);
        self.hi[0] = self.hi[0].max(ia[3]);
        self.lo[1] = self.lo[1].min(ib[0]);
        self.hi[1] = self.hi[1].max(ib[3]);
        self.pts.push((ia, wa, ib, wb, c, y));
    }

    /// Dense patch; border rows and columns whose entries are all below
    /// `trim` times the largest magnitude are dropped.
    pub fn finish(&self, trim: f64) -> PatchRow {
        if self.pts.is_empty() {
            return PatchRow::empty();
        }
        let ni = self.hi[0] - self.lo[0] + 1;
        let nj = self.hi[1] - self.lo[1] + 1;
        let mut vals = vec![0.0; ni * nj];
        for (ia, wa, ib, wb, c, _) in &self.pts {
            for a in 0..4 {
                let ca = c * wa[a];
                let r = (ia[a] - self.lo[0]) * nj;
                for b in 0..4 {
                    vals[r + ib[b] - self.lo[1]] += ca * wb[b];
                }
            }
        }
        let row = PatchRow { i0: self.lo[0], j0: self.lo[1], ni, nj, vals };
        if trim > 0.0 { trim_row(row, trim) } else { row }
    }
}

impl RowAccumulator {
    /// Moments against the nonnegative tensor hat basis instead of the Keys
    /// basis: local averages that stay nonnegative for nonnegative kernels.
    pub fn finish_hat(&self, trim: f64) -> PatchRow {
        if self.pts.is_empty() {
            return PatchRow::empty();
        }
        let st: Vec<_> = self.pts.iter().map(|p| (self.lat.hat_stencil2(p.5), p.4)).collect();
        let lo = [0, 1].map(|a| st.iter().map(|(((i, _), (j, _)), _)| if a == 0 { i[0] } else { j[0] }).min().unwrap());
        let hi = [0, 1].map(|a| st.iter().map(|(((i, _), (j, _)), _)| if a == 0 { i[1] } else { j[1] }).max().unwrap());
        let ni = hi[0] - lo[0] + 1;
        let nj = hi[1] - lo[1] + 1;
        let mut vals = vec![0.0; ni * nj];
        for (((ia, wa), (ib, wb)), c) in &st {
            for a in 0..2 {
                for b in 0..2 {
                    vals[(ia[a] - lo[0]) * nj + ib[b] - lo[1]] += c * wa[a] * wb[b];
                }
            }
        }
        let row = PatchRow { i0: lo[0], j0: lo[1], ni, nj, vals };
        if trim > 0.0 { trim_row(row, trim) } else { row }
    }
}

fn trim_row(row: PatchRow, trim: f64) -> PatchRow {
    let m = row.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return PatchRow::empty();
    }
    let cut = trim * m;
    let big = |a: usize, b: usize| row.vals[a * row.nj + b].abs() > cut;
    let (mut a0, mut a1, mut b0, mut b1) = (row.ni, 0, row.nj, 0);
    for a in 0..row.ni {
        for b in 0..row.nj {
            if big(a, b) {
                a0 = a0.min(a);
                a1 = a1.max(a + 1);
                b0 = b0.min(b);
                b1 = b1.max(b + 1);
            }
        }
    }
    let (ni, nj) = (a1 - a0, b1 - b0);
    let mut vals = Vec::with_capacity(ni * nj);
    for a in a0..a1 {
        vals.extend_from_slice(&row.vals[a * row.nj + b0..a * row.nj + b1]);
    }
    PatchRow { i0: row.i0 + a0, j0: row.j0 + b0, ni, nj, vals }
}

/// Operator on lattice functions, one patch row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    pub lat: Lattice,
    pub rows: Vec<PatchRow>,
}

impl PatchMatrix {
    /// Assembles rows in parallel; `row` fills the accumulator for node k.
    pub fn assemble(lat: Lattice, trim: f64, row: impl Fn(usize, &mut RowAccumulator) + Sync) -> PatchMatrix {
        let rows = (0..lat.len())
            .into_par_iter()
            .map_init(
                || RowAccumulator::new(lat),
                |acc, k| {
                    acc.clear();
                    row(k, acc);
                    acc.finish(trim)
                },
            )
            .collect();
        PatchMatrix { lat, rows }
    }

    /// Identity on nodal values.
    pub fn identity(lat: Lattice) -> PatchMatrix {
        let rows = (0..lat.len())
            .map(|k| PatchRow { i0: k / lat.n, j0: k % lat.n, ni: 1, nj: 1, vals: vec![1.0] })
            .collect();
        PatchMatrix { lat, rows }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.lat.n;
        self.rows.par_iter().map(|r| r.dot(n, v)).collect()
    }

    /// Row vector times matrix: out_j = Σ_k w_k M_kj.
    pub fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.lat.len()];
        for (r, c) in self.rows.iter().zip(w) {
            r.scatter(self.lat.n, *c, &mut out);
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.vals.len()).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sum()).collect()
    }

    /// self + c · other, with patches merged.
    pub fn add_scaled(&self, c: f64, other: &PatchMatrix) -> PatchMatrix {
        let rows = self
            .rows
            .par_iter()
            .zip(&other.rows)
            .map(|(a, b)| merge(a, b, c))
            .collect();
        PatchMatrix { lat: self.lat, rows }
    }
}

fn merge(a: &PatchRow, b: &PatchRow, c: f64) -> PatchRow {
    if b.vals.is_empty() {
        return a.clone();
    }
    if a.vals.is_empty() {
        return PatchRow { vals: b.vals.iter().map(|v| c * v).collect(), ..b.clone() };
    }
    let i0 = a.i0.min(b.i0);
    let j0 = a.j0.min(b.j0);
    let i1 = (a.i0 + a.ni).max(b.i0 + b.ni);
    let j1 = (a.j0 + a.nj).max(b.j0 + b.nj);
    let (ni, nj) = (i1 - i0, j1 - j0);
    let mut vals = vec![0.0; ni * nj];
    for (r, s) in [(a, 1.0), (b, c)] {
        for p in 0..r.ni {
            for q in 0..r.nj {
                vals[(r.i0 + p - i0) * nj + r.j0 + q - j0] += s * r.vals[p * r.nj + q];
            }
        }
    }
    PatchRow { i0, j0, ni, nj, vals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_partition_of_unity_and_interpolation() {
        for k in 0..50 {
            let s = k as f64 / 50.0;
            let w = [keys(1.0 + s), keys(s), keys(1.0 - s), keys(2.0 - s)];
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            // reproduces quadratics
            let q = |x: f64| 1.0 + 2.0 * x - 0.7 * x * x;
            let v = w[0] * q(-1.0) + w[1] * q(0.0) + w[2] * q(1.0) + w[3] * q(2.0);
            assert!((v - q(s)).abs() < 1e-13);
        }
        assert_eq!(keys(0.0), 1.0);
        assert_eq!(keys(1.0), 0.0);
    }

    #[test]
    fn interpolant_is_exact_at_nodes_and_constant_far_out() {
        let lat = Lattice::new(1.0, 0.25).unwrap();
        let v = lat.sample(|x| (x[0] + 2.0 * x[1]).sin());
        for k in 0..lat.len() {
            assert!((lat.interpolate(&v, lat.node(k)) - v[k]).abs() < 1e-14);
        }
        let far = lat.interpolate(&v, [10.0, -10.0]);
        assert!((far - v[(lat.n - 1) * lat.n]).abs() < 1e-14);
    }

    #[test]
    fn transpose_is_adjoint() {
        let lat = Lattice::new(1.0, 0.25).unwrap();
        let m = PatchMatrix::assemble(lat, 0.0, |k, acc| {
            let x = lat.node(k);
            acc.add([x[0] + 0.1, x[1] - 0.05], 0.7);
            acc.add([x[0] * 0.5, x[1] + 0.3], -0.2);
        });
        let u = lat.sample(|x| x[0].cos() + x[1]);
        let w = lat.sample(|x| (x[0] * x[1]).exp());
        let a: f64 = m.apply(&u).iter().zip(&w).map(|(p, q)| p * q).sum();
        let b: f64 = m.apply_transpose(&w).iter().zip(&u).map(|(p, q)| p * q).sum();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        let s = m.add_scaled(2.0, &PatchMatrix::identity(lat));
        let lhs = s.apply(&u);
        let rhs: Vec<f64> = m.apply(&u).iter().zip(&u).map(|(p, q)| p + 2.0 * q).collect();
        for (p, q) in lhs.iter().zip(&rhs) {
            assert!((p - q).abs() < 1e-13);
        }
    }
}
