//! The parametrix construction: q₀ (by a separable expansion on lattices and by
//! direct singular quadrature as a reference), the Picard terms qₙ, and the
//! Duhamel kernel u, discretised in space by the lattice basis and in time by
//! product integration on a uniform mesh.
//!
//! Time discretisation. With L_c = ∫_cell Q⁰_τ(1−v)dτ and R_c = ∫_cell Q⁰_τ v dτ
//! (v the local cell coordinate), the identity u = p + u∗q₀ becomes
//!
//!   U(t_k) = P(t_k) + Σ_c [U(t_{k−c}) L_c + U(t_{k−c−1}) R_c],
//!
//! whose only singular factor, Q⁰ near τ = 0, sits inside the cell integrals.
//! The first cell uses the substitution τ = Δt·s^{1/(1−σ)}.

use rayon::prelude::*;

use crate::density::{PsiTable, SpectralGrid};
use crate::error::{Error, Result};
use crate::field::{CoefficientField, M2, m2_det, m2_inv, m2_mul, m2_vec};
use crate::frozen::KernelTables;
use crate::lattice::{Lattice, PatchMatrix, PatchRow, RowAccumulator};
use crate::levy::{LevyMeasure, LevyModel1D};
use crate::quad::{self, Tol, legendre};
use crate::truncation::TruncatedModel1D;

/// Which structural assumption the coordinate laws satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssumptionMode {
    /// All coordinates share one law.
    Z1,
    /// Different laws with α > (2/3)β.
    Z2,
}

impl AssumptionMode {
    /// Mode and the system exponents α = min αᵢ, β = max βᵢ.
    pub fn classify(models: &[LevyModel1D]) -> Result<(AssumptionMode, f64, f64)> {
        if models.len() < 2 {
            return Err(Error::Parameter(format!("dimension must be at least 2, got {}", models.len())));
        }
        let alpha = models.iter().map(|m| m.alpha).fold(f64::INFINITY, f64::min);
        let beta = models.iter().map(|m| m.beta).fold(0.0, f64::max);
        if models.windows(2).all(|w| w[0] == w[1]) {
            return Ok((AssumptionMode::Z1, alpha, beta));
        }
        Self::check_z2(alpha, beta)?;
        Ok((AssumptionMode::Z2, alpha, beta))
    }

    pub fn check_z2(alpha: f64, beta: f64) -> Result<()> {
        if alpha > 2.0 * beta / 3.0 {
            Ok(())
        } else {
            Err(Error::Parameter(format!("different coordinate laws need alpha > (2/3) beta; got alpha = {alpha}, beta = {beta}")))
        }
    }

    /// σ = 1 − α/(3β) under Z1, 2β/(3α) under Z2.
    pub fn sigma(self, alpha: f64, beta: f64) -> f64 {
        match self {
            AssumptionMode::Z1 => 1.0 - alpha / (3.0 * beta),
            AssumptionMode::Z2 => 2.0 * beta / (3.0 * alpha),
        }
    }
}

/// Everything time-independent needed to evaluate frozen kernels and q₀.
#[derive(Debug, Clone)]
pub struct KernelSetup {
    pub field: CoefficientField,
    /// Distinct truncated laws.
    pub laws: Vec<TruncatedModel1D>,
    /// Law index per coordinate.
    pub coord_law: Vec<usize>,
    pub psi: Vec<PsiTable>,
    /// Order of the separable q₀ expansion.
    pub order: usize,
    pub t_min: f64,
    pub mode: AssumptionMode,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
}

impl KernelSetup {
    pub fn new(field: CoefficientField, coords: &[TruncatedModel1D], grid: &SpectralGrid, order: usize, t_min: f64) -> Result<Self> {
        if coords.len() != field.dim {
            return Err(Error::Parameter(format!("{} coordinate laws for a {}-dimensional field", coords.len(), field.dim)));
        }
        if !(t_min > 0.0) {
            return Err(Error::Parameter("t_min must be positive".into()));
        }
        let bases: Vec<LevyModel1D> = coords.iter().map(|c| c.base.clone()).collect();
        let (mode, alpha, beta) = AssumptionMode::classify(&bases)?;
        let mut laws: Vec<TruncatedModel1D> = Vec::new();
        let mut coord_law = Vec::new();
        for c in coords {
            match laws.iter().position(|l| l == c) {
                Some(i) => coord_law.push(i),
                None => {
                    coord_law.push(laws.len());
                    laws.push(c.clone());
                }
            }
        }
        let psi = laws.iter().map(|l| PsiTable::new(l, grid, order)).collect();
        Ok(KernelSetup {
            field,
            laws,
            coord_law,
            psi,
            order,
            t_min,
            mode,
            alpha,
            beta,
            sigma: mode.sigma(alpha, beta),
        })
    }

    pub fn dim(&self) -> usize {
        self.field.dim
    }

    pub fn law(&self, coord: usize) -> &TruncatedModel1D {
        &self.laws[self.coord_law[coord]]
    }

    /// Kernel tables at time t; times below t_min are frozen at t_min.
    pub fn tables(&self, t: f64) -> Result<TimeTables> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("kernel time must be positive, got {t}")));
        }
        if t < self.t_min * (1.0 - 1e-12) {
            log::debug!("kernel time {t:.3e} below t_min; frozen at {:.3e}", self.t_min);
        }
        let te = t.max(self.t_min);
        let mut laws = Vec::new();
        let mut width = Vec::new();
        let mut radius = Vec::new();
        for (law, psi) in self.laws.iter().zip(&self.psi) {
            let kt = KernelTables::new(psi, te, self.order, psi.grid.half_width)?;
            width.push(law.base.h_inverse(1.0 / te)?);
            radius.push((support_radius(&kt, 1e-13) + 2.0 * law.delta).min(psi.grid.half_width * 0.98));
            laws.push(kt);
        }
        Ok(TimeTables { t: te, laws, coord_law: self.coord_law.clone(), width, radius })
    }
}

/// Largest |v| where g exceeds `tol` times its peak, or the FFT noise floor
/// seen in the outer tenth of the table if that is higher.
fn support_radius(kt: &KernelTables, tol: f64) -> f64 {
    let g = &kt.g[0];
    let peak = g.v.iter().cloned().fold(0.0f64, f64::max);
    let n = g.v.len();
    let edge = n / 20;
    let noise = g.v[..edge].iter().chain(&g.v[n - edge..]).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (tol * peak).max(10.0 * noise);
    let lo = g.v.iter().position(|v| *v > floor).unwrap_or(0);
    let hi = g.v.iter().rposition(|v| *v > floor).unwrap_or(n - 1);
    let x_lo = g.x0 + lo as f64 * g.dx;
    let x_hi = g.x0 + hi as f64 * g.dx;
    x_lo.abs().max(x_hi.abs())
}

/// Kernel tables for one time with per-law width and support radius.
#[derive(Debug, Clone)]
pub struct TimeTables {
    pub t: f64,
    pub laws: Vec<KernelTables>,
    pub coord_law: Vec<usize>,
    pub width: Vec<f64>,
    pub radius: Vec<f64>,
}

impl TimeTables {
    #[inline]
    pub fn coord(&self, i: usize) -> &KernelTables {
        &self.laws[self.coord_law[i]]
    }
}

const FACT: [f64; 5] = [1.0, 1.0, 2.0, 6.0, 24.0];

/// p_y(t, x − y) for d = 2.
#[inline]
pub fn p_kernel_2d(tt: &TimeTables, field: &CoefficientField, x: [f64; 2], y: [f64; 2]) -> f64 {
    let ay = field.a2(y);
    let by = m2_inv(&ay);
    let z = m2_vec(&by, [x[0] - y[0], x[1] - y[1]]);
    tt.coord(0).g(0, z[0]) * tt.coord(1).g(0, z[1]) / m2_det(&ay)
}

/// q₀(t,x,y) for d = 2 by the separable expansion
///
///   q₀ = det B(y) Σ_i Σ_{1≤|α|≤N} D_i^α/α! · J_{i,|α|,α_i}(z_i) Π_{k≠i} g_k^{(α_k)}(z_k),
///
/// with D = B(y)A(x) − I, D_i its i-th column and z = B(y)(x − y).
#[inline]
pub fn q0_kernel_2d(tt: &TimeTables, field: &CoefficientField, ax: &M2, x: [f64; 2], y: [f64; 2]) -> f64 {
    let ay = field.a2(y);
    let by = m2_inv(&ay);
    let m = m2_mul(&by, ax);
    let d = [[m[0][0] - 1.0, m[0][1]], [m[1][0], m[1][1] - 1.0]];
    let z = m2_vec(&by, [x[0] - y[0], x[1] - y[1]]);
    let kt = [tt.coord(0), tt.coord(1)];
    let h = [kt[0].g[0].locate(z[0]), kt[1].g[0].locate(z[1])];
    let order = kt[0].order;
    let mut gv = [[0.0; 4]; 2];
    for k in 0..2 {
        for mm in 0..=order {
            gv[k][mm] = kt[k].g[mm].eval_at(&h[k]);
        }
    }
    let mut s = 0.0;
    for i in 0..2 {
        let o = 1 - i;
        let (dii, doi) = (d[i][i], d[o][i]);
        for n in 1..=order {
            for ai in 0..=n {
                let ao = n - ai;
                let coef = dii.powi(ai as i32) * doi.powi(ao as i32) / (FACT[ai] * FACT[ao]);
                if coef != 0.0 && gv[o][ao] != 0.0 {
                    s += coef * kt[i].j[n - 1][ai].eval_at(&h[i]) * gv[o][ao];
                }
            }
        }
    }
    s / m2_det(&ay)
}

/// Reference q₀(t,x,y) for any d: a single w-integral per coordinate of the
/// difference of second differences (frozen at x minus frozen at y), with
/// the products expanded telescopically, and a Taylor inner region.
pub fn q0_eval(setup: &KernelSetup, tt: &TimeTables, x: &[f64], y: &[f64]) -> Result<f64> {
    let d = setup.dim();
    let ax = setup.field.a(x);
    let (det_ay, by) = setup.field.b(y)?;
    let m = by.mul(&ax);
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let z = by.mul_vec(&diff);
    let g = |k: usize, der: usize, v: f64| tt.coord(k).g(der, v);
    let w_min = tt.width.iter().cloned().fold(f64::INFINITY, f64::min);
    // Hessian of G = Π g_k at z.
    let mut hess = vec![0.0; d * d];
    for k in 0..d {
        for l in 0..d {
            let mut p = 1.0;
            for r in 0..d {
                let der = (r == k) as usize + (r == l) as usize;
                p *= g(r, der, z[r]);
            }
            hess[k * d + l] = p;
        }
    }
    let mut total = 0.0;
    for i in 0..d {
        let law = setup.law(i);
        let mi = m.column(i);
        let zeta = 1e-2 * w_min.min(law.delta);
        let mut sec_m = 0.0;
        for k in 0..d {
            for l in 0..d {
                sec_m += mi[k] * mi[l] * hess[k * d + l];
            }
        }
        let inner = (sec_m - hess[i * d + i]) * law.second_moment(zeta)?;
        let integrand = |w: f64| -> f64 {
            let a: Vec<f64> = (0..d).map(|k| g(k, 0, z[k] + w * mi[k])).collect();
            let b: Vec<f64> = (0..d).map(|k| g(k, 0, z[k] - w * mi[k])).collect();
            let c: Vec<f64> = (0..d).map(|k| g(k, 0, z[k] + if k == i { w } else { 0.0 })).collect();
            let e: Vec<f64> = (0..d).map(|k| g(k, 0, z[k] - if k == i { w } else { 0.0 })).collect();
            (telescope(&a, &c) + telescope(&b, &e)) * law.density(w)
        };
        let mut edges = quad::geometric_edges(zeta, w_min.min(law.delta).max(zeta * 2.0), 2.0);
        let step = 0.25 * w_min;
        for (lo, hi) in [(*edges.last().unwrap(), law.delta), (law.delta, 2.0 * law.delta)] {
            if hi > lo {
                let k = ((hi - lo) / step).ceil().max(1.0) as usize;
                for j in 1..=k {
                    edges.push(lo + (hi - lo) * j as f64 / k as f64);
                }
            }
        }
        edges.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        let rule = legendre(10);
        let outer: f64 = edges.windows(2).map(|e| rule.integrate(e[0], e[1], integrand)).sum();
        total += inner + outer;
    }
    Ok(total / det_ay)
}

/// Π a − Π c = Σ_j (Π_{k<j} c_k)(a_j − c_j)(Π_{k>j} a_k), left to right.
fn telescope(a: &[f64], c: &[f64]) -> f64 {
    let d = a.len();
    let mut s = 0.0;
    for j in 0..d {
        let mut p = a[j] - c[j];
        if p == 0.0 {
            continue;
        }
        for k in 0..j {
            p *= c[k];
        }
        for k in j + 1..d {
            p *= a[k];
        }
        s += p;
    }
    s
}

/// ℒ^z f(x) = ½ Σ_i ∫ [f(x + a_i(z)w) + f(x − a_i(z)w) − 2f(x)] μ_i(w) dw.
///
/// The region |w| < ζ uses the second-order Taylor form; ζ shrinks until the
/// total changes by less than `rtol` (relative) or a roundoff floor.
pub fn apply_frozen_generator(
    setup: &KernelSetup,
    z: &[f64],
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    rtol: f64,
) -> Result<f64> {
    let d = setup.dim();
    let a = setup.field.a(z);
    let fx = f(x);
    let mut total = 0.0;
    for i in 0..d {
        let law = setup.law(i);
        let ai = a.column(i);
        let shifted = |w: f64| -> f64 {
            let p: Vec<f64> = (0..d).map(|k| x[k] + w * ai[k]).collect();
            let m: Vec<f64> = (0..d).map(|k| x[k] - w * ai[k]).collect();
            f(&p) + f(&m) - 2.0 * fx
        };
        let mut zeta = 1e-2 * law.delta;
        let floor = 1e-12 * (1.0 + fx.abs()) * law.tail_mass(zeta)?;
        let mut result = None;
        let mut prev: Option<f64> = None;
        for _ in 0..12 {
            // Roundoff in the second difference is about ε|f(x)| per unit of ν-mass.
            let tol = Tol { abs: 1e-13 * (1.0 + fx.abs()) * law.tail_mass(zeta)?, rel: 1e-10, max_segments: 4000 };
            let (outer, _) = quad::adaptive_with_breaks(
                |w| shifted(w) * law.density(w),
                zeta,
                2.0 * law.delta,
                &[law.delta],
                tol,
                "frozen generator, outer region",
            )?;
            let inner = shifted(zeta) / (zeta * zeta) * law.second_moment(zeta)?;
            let sum = outer + inner;
            if prev.is_some_and(|p| (sum - p).abs() <= rtol * sum.abs() + floor) || inner.abs() <= floor {
                result = Some(sum);
                break;
            }
            prev = Some(sum);
            zeta *= 0.25;
        }
        total += result.ok_or_else(|| Error::Quadrature {
            context: "frozen generator, inner region".into(),
            value: f64::NAN,
            estimate: zeta,
        })?;
    }
    Ok(total)
}

/// Tensor-product quadrature in z-space around one row.
#[derive(Debug, Clone)]
pub struct ZRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Relative size of the kernel near each node, for pruning.
    pub env: Vec<f64>,
}

impl ZRule {
    /// Two central panels [−w, 0], [0, w], then panels doubling outwards up
    /// to `cap` length until the support radius.
    pub fn graded(kt: &KernelTables, width: f64, radius: f64, cap: f64, order: usize, shift: f64) -> ZRule {
        let w = width.min(radius).min(cap);
        let mut pos = vec![0.0, w];
        let mut len = w;
        let mut x = w;
        while x < radius * (1.0 - 1e-12) {
            len = (2.0 * len).min(cap.max(w));
            x = (x + len).min(radius);
            pos.push(x);
        }
        let mut edges: Vec<f64> = pos.iter().rev().map(|v| -v).collect();
        edges.pop();
        edges.extend(pos);
        let rule = legendre(order);
        let (mut nodes, mut weights) = (Vec::new(), Vec::new());
        for e in edges.windows(2) {
            rule.push_mapped(e[0], e[1], &mut nodes, &mut weights);
        }
        let g0 = kt.g(0, 0.0).max(f64::MIN_POSITIVE);
        let env = nodes
            .iter()
            .map(|v| {
                [0.0, shift, -shift, 2.0 * shift, -2.0 * shift]
                    .iter()
                    .map(|s| kt.g(0, v + s).abs())
                    .fold(0.0, f64::max)
                    / g0
            })
            .collect();
        ZRule { nodes, weights, env }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Quadrature controls for lattice assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyConfig {
    /// Gauss order per panel for frozen densities.
    pub order_p: usize,
    /// Gauss order per panel for q₀.
    pub order_q: usize,
    /// Largest panel length in units of the lattice spacing.
    pub cap: f64,
    /// Tensor points whose envelope product is below this are skipped.
    pub prune: f64,
    /// Border trimming of patch rows, relative to the row maximum.
    pub trim: f64,
    /// Substitution nodes on the first time cell.
    pub first_cell_nodes: usize,
    /// Gauss nodes on the other cells.
    pub cell_nodes: usize,
    /// Also build cell operators against the hat basis (for local averages).
    pub hat_moments: bool,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig { order_p: 8, order_q: 5, cap: 1.0, prune: 1e-14, trim: 1e-15, first_cell_nodes: 6, cell_nodes: 3, hat_moments: false }
    }
}

/// Tables and z-rules for one time.
#[derive(Debug, Clone)]
pub struct TimeSlice {
    pub tables: TimeTables,
    pub rules: [ZRule; 2],
}

impl TimeSlice {
    pub fn new(setup: &KernelSetup, t: f64, lat: &Lattice, order: usize, cfg: &AssemblyConfig) -> Result<TimeSlice> {
        if setup.dim() != 2 {
            return Err(Error::Unsupported("lattice operators are implemented for d = 2".into()));
        }
        let tables = setup.tables(t)?;
        let rule = |i: usize| {
            let l = setup.coord_law[i];
            ZRule::graded(&tables.laws[l], tables.width[l], tables.radius[l], cfg.cap * lat.dx, order, setup.laws[l].delta)
        };
        let rules = [rule(0), rule(1)];
        Ok(TimeSlice { tables, rules })
    }

    /// Calls `sink(y, c)` for each quadrature point, with c the kernel value
    /// times the quadrature weight in y.
    fn for_each(&self, field: &CoefficientField, x: [f64; 2], prune: f64, q0: bool, mut sink: impl FnMut([f64; 2], f64)) {
        let ax = field.a2(x);
        let det_ax = m2_det(&ax);
        let [r0, r1] = &self.rules;
        for a in 0..r0.len() {
            let (za, wa, ea) = (r0.nodes[a], r0.weights[a] * det_ax, r0.env[a]);
            for b in 0..r1.len() {
                if ea * r1.env[b] < prune {
                    continue;
                }
                let zz = [za, r1.nodes[b]];
                let off = m2_vec(&ax, zz);
                let y = [x[0] - off[0], x[1] - off[1]];
                let v = if q0 {
                    q0_kernel_2d(&self.tables, field, &ax, x, y)
                } else {
                    p_kernel_2d(&self.tables, field, x, y)
                };
                sink(y, wa * r1.weights[b] * v);
            }
        }
    }

    /// ∫ p_y(t, x − y) dy.
    pub fn p_mass(&self, field: &CoefficientField, x: [f64; 2], prune: f64) -> f64 {
        let mut s = 0.0;
        self.for_each(field, x, prune, false, |_, c| s += c);
        s
    }

    /// ∫ |q₀(t, x, y)| dy.
    pub fn q0_l1(&self, field: &CoefficientField, x: [f64; 2], prune: f64) -> f64 {
        let mut s = 0.0;
        self.for_each(field, x, prune, true, |_, c| s += c.abs());
        s
    }

    /// max_y |q₀(t, x, y)| over the quadrature points.
    pub fn q0_max(&self, field: &CoefficientField, x: [f64; 2], prune: f64) -> f64 {
        let ax = field.a2(x);
        let mut m = 0.0f64;
        let [r0, r1] = &self.rules;
        for a in 0..r0.len() {
            for b in 0..r1.len() {
                if r0.env[a] * r1.env[b] < prune {
                    continue;
                }
                let off = m2_vec(&ax, [r0.nodes[a], r1.nodes[b]]);
                let y = [x[0] - off[0], x[1] - off[1]];
                m = m.max(q0_kernel_2d(&self.tables, field, &ax, x, y).abs());
            }
        }
        m
    }
}

/// Row of P_t at an arbitrary point.
pub fn p_point_row(setup: &KernelSetup, lat: &Lattice, slice: &TimeSlice, x: [f64; 2], cfg: &AssemblyConfig) -> PatchRow {
    let mut acc = RowAccumulator::new(*lat);
    slice.for_each(&setup.field, x, cfg.prune, false, |y, c| acc.add(y, c));
    acc.finish(cfg.trim)
}

/// Row of Q⁰_t at an arbitrary point.
pub fn q0_point_row(setup: &KernelSetup, lat: &Lattice, slice: &TimeSlice, x: [f64; 2], cfg: &AssemblyConfig) -> PatchRow {
    let mut acc = RowAccumulator::new(*lat);
    slice.for_each(&setup.field, x, cfg.prune, true, |y, c| acc.add(y, c));
    acc.finish(cfg.trim)
}

/// P_t on the lattice.
pub fn assemble_p(setup: &KernelSetup, lat: &Lattice, t: f64, cfg: &AssemblyConfig) -> Result<PatchMatrix> {
    let slice = TimeSlice::new(setup, t, lat, cfg.order_p, cfg)?;
    Ok(PatchMatrix::assemble(*lat, cfg.trim, |k, acc| {
        slice.for_each(&setup.field, lat.node(k), cfg.prune, false, |y, c| acc.add(y, c))
    }))
}

/// Uniform time mesh t_k = kΔt, k ≤ cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeMesh {
    pub dt: f64,
    pub cells: usize,
}

impl TimeMesh {
    pub fn new(dt: f64, cells: usize) -> Result<TimeMesh> {
        if !(dt > 0.0) || cells == 0 {
            return Err(Error::Mesh(format!("need dt > 0 and at least one cell, got dt = {dt}, cells = {cells}")));
        }
        Ok(TimeMesh { dt, cells })
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Index of a mesh time, if t lies on the mesh.
    pub fn index(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if (k * self.dt - t).abs() > 1e-9 * self.dt || k < 0.0 || k as usize > self.cells {
            return Err(Error::Mesh(format!("t = {t} is not a mesh time (dt = {}, cells = {})", self.dt, self.cells)));
        }
        Ok(k as usize)
    }

    /// Nodes (τ, w_L, w_R) of the product rule on cell c; the first cell uses
    /// τ = Δt·s^{1/(1−σ)}.
    pub fn cell_rule(&self, c: usize, sigma: f64, cfg: &AssemblyConfig) -> Vec<(f64, f64, f64)> {
        let dt = self.dt;
        let t0 = c as f64 * dt;
        if c == 0 {
            let p = 1.0 / (1.0 - sigma);
            let r = legendre(cfg.first_cell_nodes);
            r.nodes
                .iter()
                .zip(&r.weights)
                .map(|(x, w)| {
                    let s = 0.5 * (x + 1.0);
                    let v = s.powf(p);
                    let jac = 0.5 * w * dt * p * s.powf(p - 1.0);
                    (dt * v, jac * (1.0 - v), jac * v)
                })
                .collect()
        } else {
            let r = legendre(cfg.cell_nodes);
            r.nodes
                .iter()
                .zip(&r.weights)
                .map(|(x, w)| {
                    let v = 0.5 * (x + 1.0);
                    (t0 + dt * v, 0.5 * w * dt * (1.0 - v), 0.5 * w * dt * v)
                })
                .collect()
        }
    }
}

/// Cell nodes grouped by effective time (everything below t_min shares one slice).
fn cell_slices(setup: &KernelSetup, lat: &Lattice, mesh: &TimeMesh, c: usize, cfg: &AssemblyConfig) -> Result<Vec<(TimeSlice, f64, f64)>> {
    let mut groups: Vec<(f64, f64, f64)> = Vec::new();
    for (tau, wl, wr) in mesh.cell_rule(c, setup.sigma, cfg) {
        let te = tau.max(setup.t_min);
        match groups.iter_mut().find(|g| (g.0 - te).abs() <= 1e-15 * te) {
            Some(g) => {
                g.1 += wl;
                g.2 += wr;
            }
            None => groups.push((te, wl, wr)),
        }
    }
    groups
        .into_iter()
        .map(|(te, wl, wr)| Ok((TimeSlice::new(setup, te, lat, cfg.order_q, cfg)?, wl, wr)))
        .collect()
}

/// Rows of L_c and R_c at an arbitrary point, in the Keys or the hat basis.
fn cell_point_rows(setup: &KernelSetup, lat: &Lattice, slices: &[(TimeSlice, f64, f64)], x: [f64; 2], cfg: &AssemblyConfig, hat: bool) -> (PatchRow, PatchRow) {
    let mut al = RowAccumulator::new(*lat);
    let mut ar = RowAccumulator::new(*lat);
    for (s, wl, wr) in slices {
        s.for_each(&setup.field, x, cfg.prune, true, |y, c| {
            al.add(y, wl * c);
            ar.add(y, wr * c);
        });
    }
    if hat {
        (al.finish_hat(cfg.trim), ar.finish_hat(cfg.trim))
    } else {
        (al.finish(cfg.trim), ar.finish(cfg.trim))
    }
}

/// L_c and R_c on the lattice, and their hat-basis versions if requested.
#[derive(Debug, Clone)]
pub struct CellMatrices {
    pub l: PatchMatrix,
    pub r: PatchMatrix,
    pub l_hat: Option<PatchMatrix>,
    pub r_hat: Option<PatchMatrix>,
}

pub fn assemble_cell(setup: &KernelSetup, lat: &Lattice, mesh: &TimeMesh, c: usize, cfg: &AssemblyConfig) -> Result<CellMatrices> {
    let slices = cell_slices(setup, lat, mesh, c, cfg)?;
    let rows: Vec<[PatchRow; 4]> = (0..lat.len())
        .into_par_iter()
        .map_init(
            || (RowAccumulator::new(*lat), RowAccumulator::new(*lat)),
            |(al, ar), k| {
                al.clear();
                ar.clear();
                let x = lat.node(k);
                for (s, wl, wr) in &slices {
                    s.for_each(&setup.field, x, cfg.prune, true, |y, c| {
                        al.add(y, wl * c);
                        ar.add(y, wr * c);
                    });
                }
                let hat = |a: &RowAccumulator| if cfg.hat_moments { a.finish_hat(cfg.trim) } else { PatchRow::empty() };
                [al.finish(cfg.trim), ar.finish(cfg.trim), hat(al), hat(ar)]
            },
        )
        .collect();
    let mut cols: [Vec<PatchRow>; 4] = Default::default();
    for row in rows {
        for (col, r) in cols.iter_mut().zip(row) {
            col.push(r);
        }
    }
    let [l, r, lh, rh] = cols.map(|rows| PatchMatrix { lat: *lat, rows });
    Ok(CellMatrices {
        l,
        r,
        l_hat: cfg.hat_moments.then_some(lh),
        r_hat: cfg.hat_moments.then_some(rh),
    })
}

/// Product-integration operators for every cell of a mesh.
#[derive(Debug, Clone)]
pub struct CellOperators {
    pub mesh: TimeMesh,
    pub sigma: f64,
    pub l: Vec<PatchMatrix>,
    pub r: Vec<PatchMatrix>,
    /// Hat-basis versions; empty unless requested.
    pub l_hat: Vec<PatchMatrix>,
    pub r_hat: Vec<PatchMatrix>,
}

impl CellOperators {
    pub fn assemble(setup: &KernelSetup, lat: &Lattice, mesh: TimeMesh, cfg: &AssemblyConfig) -> Result<Self> {
        let mut ops = CellOperators { mesh, sigma: setup.sigma, l: vec![], r: vec![], l_hat: vec![], r_hat: vec![] };
        for c in 0..mesh.cells {
            let m = assemble_cell(setup, lat, &mesh, c, cfg)?;
            log::debug!("cell {c}: nnz {} + {}", m.l.nnz(), m.r.nnz());
            ops.l.push(m.l);
            ops.r.push(m.r);
            if let (Some(a), Some(b)) = (m.l_hat, m.r_hat) {
                ops.l_hat.push(a);
                ops.r_hat.push(b);
            }
        }
        Ok(ops)
    }
}

/// Solves ρ = b + ρ·L₀ by fixed-point iteration.
fn solve_first_cell_left(l0: &PatchMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let scale = b.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut rho = b.to_vec();
    for _ in 0..200 {
        let next: Vec<f64> = l0.apply_transpose(&rho).iter().zip(b).map(|(a, c)| a + c).collect();
        let change: f64 = next.iter().zip(&rho).map(|(a, c)| (a - c).abs()).sum();
        rho = next;
        if change <= 1e-15 * scale {
            return Ok(rho);
        }
    }
    Err(Error::Divergence("first-cell implicit solve did not converge; refine the time mesh".into()))
}

/// Solves w = v + L₀ w by fixed-point iteration.
fn solve_first_cell_right(l0: &PatchMatrix, v: &[f64]) -> Result<Vec<f64>> {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let mut w = v.to_vec();
    for _ in 0..200 {
        let next: Vec<f64> = l0.apply(&w).iter().zip(v).map(|(a, c)| a + c).collect();
        let change = next.iter().zip(&w).fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
        w = next;
        if change <= 1e-15 * scale {
            return Ok(w);
        }
    }
    Err(Error::Divergence("first-cell implicit solve did not converge; refine the time mesh".into()))
}

/// Rows x ↦ (∫K(t_k,x,y)φ_j(y)dy)_j of a space–time kernel at one point x,
/// for every mesh time.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRows {
    pub x: [f64; 2],
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl KernelRows {
    /// ∫K(t_k, x, y) dy.
    pub fn mass(&self, k: usize) -> f64 {
        self.rows[k].iter().sum()
    }

    /// Discrete L¹ norm Σ_j |moment_j|.
    pub fn l1(&self, k: usize) -> f64 {
        self.rows[k].iter().map(|v| v.abs()).sum()
    }

    /// Kernel value estimate moment_j/Δx² at lattice node j.
    pub fn nodal_density(&self, lat: &Lattice, k: usize) -> Vec<f64> {
        let a = lat.dx * lat.dx;
        self.rows[k].iter().map(|v| v / a).collect()
    }

    /// Keys interpolant of the nodal densities at y.
    pub fn density_at(&self, lat: &Lattice, k: usize, y: [f64; 2]) -> f64 {
        lat.interpolate(&self.rows[k], y) / (lat.dx * lat.dx)
    }

    /// ∫K(t_k,x,y) f(y) dy for nodal values f.
    pub fn pair(&self, k: usize, f: &[f64]) -> f64 {
        self.rows[k].iter().zip(f).map(|(a, b)| a * b).sum()
    }
}

/// Rows of U(t_k) at x, k = 0..=cells, from U = P + U∗Q⁰. The term with
/// U(0) = δ_x uses the rows of R_c at x itself.
pub fn u_rows(setup: &KernelSetup, lat: &Lattice, ops: &CellOperators, x: [f64; 2], cfg: &AssemblyConfig) -> Result<KernelRows> {
    u_rows_in(setup, lat, ops, x, cfg, false).map(|(u, _)| u)
}

/// [`u_rows`] together with local averages of u(t_k, x, ·) against the hat
/// basis (index 0 of the latter is left empty). Needs hat cell operators.
pub fn u_rows_with_hat(setup: &KernelSetup, lat: &Lattice, ops: &CellOperators, x: [f64; 2], cfg: &AssemblyConfig) -> Result<(KernelRows, KernelRows)> {
    if ops.l_hat.len() != ops.mesh.cells {
        return Err(Error::Parameter("cell operators were assembled without hat moments".into()));
    }
    let (u, h) = u_rows_in(setup, lat, ops, x, cfg, true)?;
    Ok((u, h.unwrap_or_else(|| unreachable!())))
}

fn u_rows_in(setup: &KernelSetup, lat: &Lattice, ops: &CellOperators, x: [f64; 2], cfg: &AssemblyConfig, hat: bool) -> Result<(KernelRows, Option<KernelRows>)> {
    let mesh = ops.mesh;
    let n = lat.len();
    let mut rows: Vec<Vec<f64>> = vec![lat.point_row(x).to_dense(lat)];
    let mut hats: Vec<Vec<f64>> = vec![vec![0.0; n]];
    let mut point_r = Vec::new();
    let mut point_r_hat = Vec::new();
    for c in 0..mesh.cells {
        let slices = cell_slices(setup, lat, &mesh, c, cfg)?;
        point_r.push(cell_point_rows(setup, lat, &slices, x, cfg, false).1.to_dense(lat));
        if hat {
            point_r_hat.push(cell_point_rows(setup, lat, &slices, x, cfg, true).1.to_dense(lat));
        }
    }
    for k in 1..=mesh.cells {
        let slice = TimeSlice::new(setup, mesh.time(k), lat, cfg.order_p, cfg)?;
        let mut acc = RowAccumulator::new(*lat);
        slice.for_each(&setup.field, x, cfg.prune, false, |y, c| acc.add(y, c));
        let mut b = acc.finish(cfg.trim).to_dense(lat);
        add_into(&mut b, &point_r[k - 1]);
        for c in 0..k {
            if c >= 1 {
                add_into(&mut b, &ops.l[c].apply_transpose(&rows[k - c]));
            }
            if c + 1 < k {
                add_into(&mut b, &ops.r[c].apply_transpose(&rows[k - c - 1]));
            }
        }
        let rho = solve_first_cell_left(&ops.l[0], &b)?;
        if hat {
            let mut h = acc.finish_hat(cfg.trim).to_dense(lat);
            add_into(&mut h, &point_r_hat[k - 1]);
            for c in 0..k {
                let src = if c == 0 { &rho } else { &rows[k - c] };
                add_into(&mut h, &ops.l_hat[c].apply_transpose(src));
                if c + 1 < k {
                    add_into(&mut h, &ops.r_hat[c].apply_transpose(&rows[k - c - 1]));
                }
            }
            hats.push(h);
        }
        rows.push(rho);
    }
    let times: Vec<f64> = (0..=mesh.cells).map(|k| mesh.time(k)).collect();
    let hat_rows = hat.then(|| KernelRows { x, times: times.clone(), rows: hats });
    Ok((KernelRows { x, times, rows }, hat_rows))
}

/// Rows of P(t_k) at x (index 0 is the point evaluation).
pub fn p_rows(setup: &KernelSetup, lat: &Lattice, mesh: &TimeMesh, x: [f64; 2], cfg: &AssemblyConfig) -> Result<KernelRows> {
    let mut rows = vec![lat.point_row(x).to_dense(lat)];
    for k in 1..=mesh.cells {
        let slice = TimeSlice::new(setup, mesh.time(k), lat, cfg.order_p, cfg)?;
        rows.push(p_point_row(setup, lat, &slice, x, cfg).to_dense(lat));
    }
    Ok(KernelRows { x, times: (0..=mesh.cells).map(|k| mesh.time(k)).collect(), rows })
}

/// Rows of Q⁰(t_k) at x for k = 1..=cells (index 0 holds the t_min row).
pub fn q0_rows(setup: &KernelSetup, lat: &Lattice, mesh: &TimeMesh, x: [f64; 2], cfg: &AssemblyConfig) -> Result<KernelRows> {
    let mut rows = Vec::new();
    let mut times = Vec::new();
    for k in 0..=mesh.cells {
        let t = if k == 0 { setup.t_min } else { mesh.time(k) };
        let slice = TimeSlice::new(setup, t, lat, cfg.order_q, cfg)?;
        rows.push(q0_point_row(setup, lat, &slice, x, cfg).to_dense(lat));
        times.push(t);
    }
    Ok(KernelRows { x, times, rows })
}

/// One Picard step on rows: qₙ = qₙ₋₁ ∗ q₀ by product integration. On the
/// last cell the factor qₙ₋₁(r), singular like r^{n(1−σ)−1} as r → 0, is
/// modelled by that power law scaled to its value at Δt.
pub fn picard_step(ops: &CellOperators, prev: &KernelRows, n: usize) -> Result<KernelRows> {
    if prev.rows.len() != ops.mesh.cells + 1 {
        return Err(Error::Mesh("kernel rows and cell operators use different meshes".into()));
    }
    if n == 0 {
        return Err(Error::Parameter("Picard steps start at n = 1".into()));
    }
    let len = prev.rows[0].len();
    let endpoint = 1.0 / (n as f64 * (1.0 - ops.sigma));
    let mut rows = vec![vec![0.0; len]];
    for k in 1..=ops.mesh.cells {
        let mut acc = vec![0.0; len];
        for c in 0..k - 1 {
            add_into(&mut acc, &ops.l[c].apply_transpose(&prev.rows[k - c]));
            add_into(&mut acc, &ops.r[c].apply_transpose(&prev.rows[k - c - 1]));
        }
        let last = k - 1;
        let mut tail = ops.l[last].apply_transpose(&prev.rows[1]);
        add_into(&mut tail, &ops.r[last].apply_transpose(&prev.rows[1]));
        for (a, t) in acc.iter_mut().zip(&tail) {
            *a += endpoint * t;
        }
        rows.push(acc);
    }
    Ok(KernelRows { x: prev.x, times: prev.times.clone(), rows })
}

/// Partial sum of the Picard series at mesh index k.
#[derive(Debug, Clone, PartialEq)]
pub struct QSum {
    pub row: Vec<f64>,
    pub n_terms: usize,
    /// Discrete L¹ norm of each term at index k.
    pub norms: Vec<f64>,
}

/// q = Σ qₙ at index k, stopping when a term's L¹ norm drops below
/// rtol times the partial sum's; non-decay by n = 25 is a divergence.
pub fn sum_q(ops: &CellOperators, q0: &KernelRows, k: usize, rtol: f64) -> Result<QSum> {
    if !(rtol > 0.0) {
        return Err(Error::Parameter("rtol must be positive".into()));
    }
    let mut term = q0.clone();
    let mut row = q0.rows[k].clone();
    let mut norms = vec![q0.l1(k)];
    for n in 1..=25 {
        let current: f64 = row.iter().map(|v| v.abs()).sum();
        if norms[n - 1] <= rtol * current || current == 0.0 {
            return Ok(QSum { row, n_terms: n, norms });
        }
        term = picard_step(ops, &term, n)?;
        add_into(&mut row, &term.rows[k]);
        norms.push(term.l1(k));
    }
    Err(Error::Divergence(format!(
        "Picard terms not decaying after n = 25 (last norms {:?}); refine the mesh or shorten t",
        &norms[norms.len() - 3..]
    )))
}

/// U over one mesh step, U_h = (P_h + R₀)(I − L₀)⁻¹, applied without forming it.
#[derive(Debug, Clone)]
pub struct UStep {
    pub h: f64,
    pub p: PatchMatrix,
    pub l0: PatchMatrix,
    pub r0: PatchMatrix,
}

impl UStep {
    pub fn assemble(setup: &KernelSetup, lat: &Lattice, h: f64, cfg: &AssemblyConfig) -> Result<UStep> {
        let mesh = TimeMesh::new(h, 1)?;
        let m = assemble_cell(setup, lat, &mesh, 0, cfg)?;
        let p = assemble_p(setup, lat, h, cfg)?;
        Ok(UStep { h, p, l0: m.l, r0: m.r })
    }

    /// Reuses the first cell of assembled operators (h = their Δt).
    pub fn from_cells(setup: &KernelSetup, lat: &Lattice, ops: &CellOperators, cfg: &AssemblyConfig) -> Result<UStep> {
        let h = ops.mesh.dt;
        let p = assemble_p(setup, lat, h, cfg)?;
        Ok(UStep { h, p, l0: ops.l[0].clone(), r0: ops.r[0].clone() })
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let w = solve_first_cell_right(&self.l0, v)?;
        let mut out = self.p.apply(&w);
        add_into(&mut out, &self.r0.apply(&w));
        Ok(out)
    }

    pub fn apply_transpose(&self, rho: &[f64]) -> Result<Vec<f64>> {
        let mut s = self.p.apply_transpose(rho);
        add_into(&mut s, &self.r0.apply_transpose(rho));
        solve_first_cell_left(&self.l0, &s)
    }

    /// Row of U_h at an arbitrary point: ρ = row_x(P_h) + row_x(R₀) + ρL₀.
    pub fn row_at(&self, setup: &KernelSetup, x: [f64; 2], cfg: &AssemblyConfig) -> Result<Vec<f64>> {
        let lat = self.p.lat;
        let slice = TimeSlice::new(setup, self.h, &lat, cfg.order_p, cfg)?;
        let mut b = p_point_row(setup, &lat, &slice, x, cfg).to_dense(&lat);
        let mesh = TimeMesh::new(self.h, 1)?;
        let slices = cell_slices(setup, &lat, &mesh, 0, cfg)?;
        add_into(&mut b, &cell_point_rows(setup, &lat, &slices, x, cfg, false).1.to_dense(&lat));
        solve_first_cell_left(&self.l0, &b)
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevyModel1D;
    use crate::truncation::truncate;

    fn setup(field: CoefficientField) -> KernelSetup {
        let tm = truncate(&LevyModel1D::truncated_stable(1.0).unwrap(), 1.0 / 40.0).unwrap();
        let grid = SpectralGrid::new(2.0, 1 << 14).unwrap();
        KernelSetup::new(field, &[tm.clone(), tm], &grid, 2, 1e-2).unwrap()
    }

    #[test]
    fn sigma_branches() {
        assert!((AssumptionMode::Z1.sigma(1.0, 1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((AssumptionMode::Z2.sigma(1.2, 1.5) - 2.0 * 1.5 / 3.6).abs() < 1e-15);
        assert!(AssumptionMode::check_z2(1.0, 1.5).is_err());
        let a = LevyModel1D::stable(1.0).unwrap();
        let b = LevyModel1D::stable(1.6).unwrap();
        assert!(AssumptionMode::classify(&[a.clone(), b]).is_err());
        assert_eq!(AssumptionMode::classify(&[a.clone(), a]).unwrap().0, AssumptionMode::Z1);
    }

    #[test]
    fn expansion_matches_direct_quadrature() {
        let s = setup(CoefficientField::rotation(0.5).unwrap());
        let tt = s.tables(0.05).unwrap();
        let x = [0.4, 0.2];
        let ax = s.field.a2(x);
        for y in [[0.42, 0.19], [0.37, 0.25], [0.45, 0.2], [0.5, 0.1]] {
            let fast = q0_kernel_2d(&tt, &s.field, &ax, x, y);
            let direct = q0_eval(&s, &tt, &x, &y).unwrap();
            let scale = tt.coord(0).g(0, 0.0).powi(2) / 0.05;
            assert!((fast - direct).abs() < 2e-5 * scale, "y = {y:?}: {fast} vs {direct} (scale {scale})");
        }
    }

    #[test]
    fn constant_field_gives_zero_q0() {
        let m = crate::field::Mat::from_rows(&[vec![1.0, 0.5], vec![0.2, 1.1]]).unwrap();
        let s = setup(CoefficientField::constant(m).unwrap());
        let tt = s.tables(0.1).unwrap();
        let x = [0.1, 0.0];
        let ax = s.field.a2(x);
        for y in [[0.1, 0.0], [0.12, 0.03], [0.0, -0.1]] {
            assert!(q0_kernel_2d(&tt, &s.field, &ax, x, y).abs() < 1e-12);
            assert!(q0_eval(&s, &tt, &x, &y).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn frozen_generator_kills_affine_functions() {
        let s = setup(CoefficientField::rotation(0.5).unwrap());
        let c = |_: &[f64]| 3.0;
        let l = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1];
        let z = [0.3, 0.1];
        assert!(apply_frozen_generator(&s, &z, &c, &[0.2, 0.2], 1e-6).unwrap().abs() < 1e-12);
        assert!(apply_frozen_generator(&s, &z, &l, &[0.2, 0.2], 1e-6).unwrap().abs() < 1e-10);
        // f = x₀²: ℒf = Σ_i a_{0i}² ∫ w² μ(dw)
        let q = |x: &[f64]| x[0] * x[0];
        let a = s.field.a(&z);
        let m2 = 2.0 * s.law(0).second_moment(2.0 * s.law(0).delta).unwrap();
        let exact = (a.get(0, 0).powi(2) + a.get(0, 1).powi(2)) * m2;
        let got = apply_frozen_generator(&s, &z, &q, &[0.2, 0.2], 1e-8).unwrap();
        assert!((got - exact).abs() < 1e-7 * exact, "{got} vs {exact}");
    }

    #[test]
    fn cell_rule_weights_integrate_hat_functions() {
        let mesh = TimeMesh::new(0.1, 3).unwrap();
        let cfg = AssemblyConfig::default();
        for c in 0..3 {
            let r = mesh.cell_rule(c, 2.0 / 3.0, &cfg);
            let wl: f64 = r.iter().map(|n| n.1).sum();
            let wr: f64 = r.iter().map(|n| n.2).sum();
            assert!((wl - 0.05).abs() < 1e-6 && (wr - 0.05).abs() < 1e-6, "{c}: {wl} {wr}");
        }
        // τ^{−2/3} is integrated well on the first cell
        let r = mesh.cell_rule(0, 2.0 / 3.0, &cfg);
        let s: f64 = r.iter().map(|n| (n.1 + n.2) * n.0.powf(-2.0 / 3.0)).sum();
        assert!((s - 3.0 * 0.1f64.powf(1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_field_kernel_is_frozen_kernel() {
        let m = crate::field::Mat::from_rows(&[vec![1.0, 0.5], vec![0.2, 1.1]]).unwrap();
        let s = setup(CoefficientField::constant(m).unwrap());
        let lat = Lattice::new(1.0, 0.1).unwrap();
        let cfg = AssemblyConfig::default();
        let mesh = TimeMesh::new(0.05, 2).unwrap();
        let ops = CellOperators::assemble(&s, &lat, mesh, &cfg).unwrap();
        let x = [0.0, 0.1];
        let u = u_rows(&s, &lat, &ops, x, &cfg).unwrap();
        let p = p_rows(&s, &lat, &mesh, x, &cfg).unwrap();
        for k in 1..=2 {
            let pm = p.rows[k].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let d = u.rows[k].iter().zip(&p.rows[k]).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(d <= 1e-9 * pm, "k = {k}: {d}");
            assert!((u.mass(k) - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn one_step_operator_conserves_mass_and_is_adjoint() {
        let s = setup(CoefficientField::rotation(0.5).unwrap());
        let lat = Lattice::new(1.0, 0.1).unwrap();
        let cfg = AssemblyConfig::default();
        let step = UStep::assemble(&s, &lat, 0.05, &cfg).unwrap();
        let one = vec![1.0; lat.len()];
        let u1 = step.apply(&one).unwrap();
        let centre = lat.len() / 2;
        assert!((u1[centre] - 1.0).abs() < 1e-5, "{}", u1[centre]);
        let v: Vec<f64> = lat.nodes().iter().map(|y| (-(y[0] * y[0] + y[1] * y[1]) * 4.0).exp()).collect();
        let w: Vec<f64> = lat.nodes().iter().map(|y| (y[0] - 0.3).cos() * (-y[1] * y[1]).exp()).collect();
        let lhs: f64 = w.iter().zip(step.apply(&v).unwrap()).map(|(a, b)| a * b).sum();
        let rhs: f64 = v.iter().zip(step.apply_transpose(&w).unwrap()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs());
        // the row at a node agrees with the transposed action on a unit vector
        let mut e = vec![0.0; lat.len()];
        e[centre] = 1.0;
        let row = step.row_at(&s, lat.node(centre), &cfg).unwrap();
        let via = step.apply_transpose(&e).unwrap();
        let diff = row.iter().zip(&via).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(diff < 1e-12, "{diff}");
    }
}
