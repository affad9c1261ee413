//! The full semigroup Tₜ = e^{−λ₀t} Σₙ Ψₙ,ₜ: the long-jump operator 𝒩, the
//! interlacing recursion over the truncated kernel u, transition densities,
//! and the Hölder and smoothing estimators.
//!
//! Time stepping. With U_h the one-step operator of the truncated kernel and
//! Φₙ(t) = e^{−λ₀t}Ψₙ,ₜ f,
//!
//!   Φₙ(t+h) = e^{−λ₀h} U_h Φₙ(t) + w₀ U_h 𝒩 Φₙ₋₁(t) + w₁ 𝒩 Φₙ₋₁(t+h),
//!
//! with w₀ = ∫₀^h e^{−λ₀r} r/h dr and w₁ = ∫₀^h e^{−λ₀r}(1 − r/h) dr. The
//! rule is exact for f ≡ 1 whenever U_h1 = 1 and 𝒩1 = λ₀. Summed over n it
//! gives T(t+h) = (I − w₁𝒩)⁻¹(e^{−λ₀h}U_h + w₀U_h𝒩) T(t).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::levy::{LevyMeasure, loglog_slope};
use crate::parametrix::{AssemblyConfig, KernelSetup, UStep, apply_frozen_generator};
use crate::quad::{self, Tol, legendre};

/// Test functions selectable by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// amplitude · exp(−|x − center|²/(2 width²)).
    GaussBump { center: [f64; 2], width: f64, amplitude: f64 },
    /// tanh(((x − center)·normal)/width), normal a unit vector.
    TanhStep { center: [f64; 2], normal: [f64; 2], width: f64 },
    /// Indicator of the box [lo, hi].
    IndicatorBox { lo: [f64; 2], hi: [f64; 2] },
    /// sin(k·x_coord) · exp(−|x|²/(2 envelope²)).
    CoordinateSine { coord: usize, k: f64, envelope: f64 },
}

/// Regularity class of a test function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    C0,
    C02,
    Indicator,
}

impl TestFunction {
    /// Gaussian bump with unit integral.
    pub fn unit_mass_bump(center: [f64; 2], width: f64) -> TestFunction {
        TestFunction::GaussBump { center, width, amplitude: 1.0 / (2.0 * std::f64::consts::PI * width * width) }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::GaussBump { .. } => "gauss_bump",
            TestFunction::TanhStep { .. } => "tanh_step",
            TestFunction::IndicatorBox { .. } => "indicator_box",
            TestFunction::CoordinateSine { .. } => "coordinate_sine",
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            TestFunction::GaussBump { center, width, amplitude } => {
                let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                amplitude * (-0.5 * r2 / (width * width)).exp()
            }
            TestFunction::TanhStep { center, normal, width } => {
                (((x[0] - center[0]) * normal[0] + (x[1] - center[1]) * normal[1]) / width).tanh()
            }
            TestFunction::IndicatorBox { lo, hi } => {
                if (lo[0]..=hi[0]).contains(&x[0]) && (lo[1]..=hi[1]).contains(&x[1]) {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::CoordinateSine { coord, k, envelope } => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                (k * x[coord]).sin() * (-0.5 * r2 / (envelope * envelope)).exp()
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match *self {
            TestFunction::GaussBump { amplitude, .. } => amplitude.abs(),
            TestFunction::TanhStep { .. } | TestFunction::IndicatorBox { .. } => 1.0,
            // bounded by 1; the maximum of the product is below that
            TestFunction::CoordinateSine { .. } => 1.0,
        }
    }

    pub fn l1_norm(&self) -> Option<f64> {
        match *self {
            TestFunction::GaussBump { width, amplitude, .. } => Some(amplitude.abs() * 2.0 * std::f64::consts::PI * width * width),
            TestFunction::IndicatorBox { lo, hi } => Some((hi[0] - lo[0]).max(0.0) * (hi[1] - lo[1]).max(0.0)),
            _ => None,
        }
    }

    pub fn support_radius(&self) -> Option<f64> {
        match *self {
            TestFunction::IndicatorBox { lo, hi } => Some(lo.iter().chain(&hi).fold(0.0f64, |m, v| m.max(v.abs())) * 2f64.sqrt()),
            _ => None,
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match self {
            TestFunction::GaussBump { .. } | TestFunction::CoordinateSine { .. } => Smoothness::C02,
            TestFunction::TanhStep { .. } => Smoothness::C0,
            TestFunction::IndicatorBox { .. } => Smoothness::Indicator,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TestFunction::GaussBump { width, amplitude, .. } => width > 0.0 && amplitude.is_finite(),
            TestFunction::TanhStep { normal, width, .. } => width > 0.0 && ((normal[0].hypot(normal[1])) - 1.0).abs() < 1e-9,
            TestFunction::IndicatorBox { lo, hi } => lo[0] < hi[0] && lo[1] < hi[1],
            TestFunction::CoordinateSine { coord, envelope, .. } => coord < 2 && envelope > 0.0,
        };
        if ok { Ok(()) } else { Err(Error::Parameter(format!("invalid {} parameters", self.name()))) }
    }

    /// Nodal values on a lattice.
    pub fn sample(&self, lat: &Lattice) -> Vec<f64> {
        lat.sample(|y| self.eval(&y))
    }
}

/// Density of ν − μ on the positive half-line (zero below δ).
fn long_jump_density(setup: &KernelSetup, coord: usize, w: f64) -> f64 {
    let tm = setup.law(coord);
    if w <= tm.delta { 0.0 } else { tm.base.density(w) - tm.density(w) }
}

/// Radius beyond which the base tail mass is below `tol`, if the support is unbounded.
fn tail_radius(setup: &KernelSetup, coord: usize, tol: f64) -> Result<f64> {
    let base = &setup.law(coord).base;
    if let Some(e) = base.support_end() {
        return Ok(e);
    }
    let mut r = 2.0 * setup.law(coord).delta;
    while base.tail_mass(r)? > tol {
        r *= 2.0;
        if r > 1e15 {
            return Err(Error::Quadrature { context: "long-jump tail radius".into(), value: r, estimate: base.tail_mass(r)? });
        }
    }
    Ok(r)
}

/// 𝒩f(x) = Σ_i ∫ f(x + a_i(x)w)(ν_i − μ_i)(w) dw by adaptive quadrature.
/// The tail beyond the radius where the ν tail mass drops below 1e−10 is dropped.
pub fn apply_n(setup: &KernelSetup, f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Result<f64> {
    let d = setup.dim();
    let a = setup.field.a(x);
    let mut total = 0.0;
    for i in 0..d {
        let tm = setup.law(i);
        let ai = a.column(i);
        let r = tail_radius(setup, i, 1e-10)?;
        let mut breaks = vec![2.0 * tm.delta];
        if r > 4.0 * tm.delta {
            breaks.extend(quad::geometric_edges(2.0 * tm.delta, r, 2.0).into_iter().skip(1));
            breaks.pop();
        }
        let tol = Tol { abs: 1e-10, rel: 1e-10, max_segments: 4000 };
        for s in [1.0, -1.0] {
            let g = |w: f64| {
                let y: Vec<f64> = (0..d).map(|k| x[k] + s * w * ai[k]).collect();
                f(&y) * long_jump_density(setup, i, w)
            };
            total += quad::adaptive_with_breaks(g, tm.delta, r, &breaks, tol, "long-jump operator")?.0;
        }
    }
    Ok(total)
}

/// ℛf(x) = 𝒩f(x) − λ₀f(x).
pub fn apply_r(setup: &KernelSetup, f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Result<f64> {
    Ok(apply_n(setup, f, x)? - lambda0(setup) * f(x))
}

/// 𝒦f(x) = ℒ^x f(x) + ℛf(x), the generator of the full process.
pub fn apply_generator(setup: &KernelSetup, f: &dyn Fn(&[f64]) -> f64, x: &[f64], rtol: f64) -> Result<f64> {
    Ok(apply_frozen_generator(setup, x, f, x, rtol)? + apply_r(setup, f, x)?)
}

/// λ₀ = Σ over coordinates of ∫(ν_i − μ_i).
pub fn lambda0(setup: &KernelSetup) -> f64 {
    (0..setup.dim()).map(|i| setup.law(i).mass_defect).sum()
}

/// 𝒩 on lattice functions: rows hold Σ_q w_q φ_j(x_i + a w_q), merged.
/// Off-lattice landing points use clamped stencils (constant extension), and
/// each coordinate half-line is normalised to its exact mass.
#[derive(Debug, Clone, PartialEq)]
pub struct LongJumpOperator {
    pub lat: Lattice,
    pub lambda0: f64,
    rows: Vec<Vec<(u32, f64)>>,
}

impl LongJumpOperator {
    pub fn assemble(setup: &KernelSetup, lat: &Lattice) -> Result<Self> {
        if setup.dim() != 2 {
            return Err(Error::Unsupported("lattice operators are implemented for d = 2".into()));
        }
        let rule = legendre(4);
        // Per coordinate: panel edges on the half-line and the mass beyond the last edge.
        let mut plans = Vec::new();
        for i in 0..2 {
            let tm = setup.law(i);
            let reach = 2.0 * lat.half * 2f64.sqrt() * setup.field.eta1 + 4.0 * lat.dx;
            let end = tm.base.support_end().unwrap_or(f64::INFINITY).min(reach);
            let mut edges = vec![tm.delta, 2.0 * tm.delta];
            let panel = 0.5 * lat.dx / setup.field.eta1;
            let mut x = 2.0 * tm.delta;
            // geometric growth is fine where ν varies fast, capped at the lattice scale
            let mut len = tm.delta;
            while x < end * (1.0 - 1e-12) {
                len = (len * 1.5).min(panel).max(1e-3 * panel);
                x = (x + len).min(end);
                edges.push(x);
            }
            let far = if end.is_finite() { tm.base.tail_mass(end)? } else { 0.0 };
            let half_mass = 0.5 * tm.mass_defect;
            let mut nodes = Vec::new();
            let mut weights = Vec::new();
            for e in edges.windows(2) {
                rule.push_mapped(e[0], e[1], &mut nodes, &mut weights);
            }
            for (w, x) in weights.iter_mut().zip(&nodes) {
                *w *= long_jump_density(setup, i, *x);
            }
            let s: f64 = weights.iter().sum::<f64>() + far;
            let scale = half_mass / s;
            weights.iter_mut().for_each(|w| *w *= scale);
            plans.push((nodes, weights, far * scale));
        }
        let rows = (0..lat.len())
            .into_par_iter()
            .map(|k| {
                let x = lat.node(k);
                let a = setup.field.a2(x);
                let mut entries: Vec<(u32, f64)> = Vec::new();
                let mut push = |y: [f64; 2], c: f64| {
                    let ((ia, wa), (ib, wb)) = lat.stencil2(y);
                    for p in 0..4 {
                        for q in 0..4 {
                            let v = c * wa[p] * wb[q];
                            if v != 0.0 {
                                entries.push(((ia[p] * lat.n + ib[q]) as u32, v));
                            }
                        }
                    }
                };
                for (i, (nodes, weights, far)) in plans.iter().enumerate() {
                    let col = [a[0][i], a[1][i]];
                    for s in [1.0, -1.0] {
                        for (w, c) in nodes.iter().zip(weights) {
                            push([x[0] + s * w * col[0], x[1] + s * w * col[1]], *c);
                        }
                        if *far > 0.0 {
                            // clamped stencils send every far landing point to the same border nodes
                            push([x[0] + s * 1e6 * col[0], x[1] + s * 1e6 * col[1]], *far);
                        }
                    }
                }
                entries.sort_unstable_by_key(|e| e.0);
                let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len() / 4);
                for (j, v) in entries {
                    match merged.last_mut() {
                        Some(last) if last.0 == j => last.1 += v,
                        _ => merged.push((j, v)),
                    }
                }
                merged
            })
            .collect();
        Ok(LongJumpOperator { lat: *lat, lambda0: lambda0(setup), rows })
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.rows.par_iter().map(|r| r.iter().map(|(j, v)| v * f[*j as usize]).sum()).collect()
    }

    pub fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; w.len()];
        for (r, c) in self.rows.iter().zip(w) {
            if *c != 0.0 {
                for (j, v) in r {
                    out[*j as usize] += c * v;
                }
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Smallest n with P(Poisson(m) > n) < tol.
pub fn poisson_terms(m: f64, tol: f64) -> usize {
    let mut p = (-m).exp();
    let mut cdf = p;
    let mut n = 0;
    while 1.0 - cdf >= tol && n < 10_000 {
        n += 1;
        p *= m / n as f64;
        cdf += p;
    }
    n
}

/// Per-term output of the interlacing series at the final time.
#[derive(Debug, Clone, PartialEq)]
pub struct SemigroupResult {
    pub t: f64,
    /// e^{−λ₀t}Σ Ψₙ,ₜf at the lattice nodes.
    pub values: Vec<f64>,
    /// Ψₙ,ₜf at the lattice nodes, n = 0..n_terms.
    pub terms: Vec<Vec<f64>>,
    pub n_terms: usize,
    pub lambda0: f64,
    /// sup norms of the Ψₙ,ₜf.
    pub term_norms: Vec<f64>,
}

/// Tₜ on the lattice, stepped with the one-step operator of the truncated kernel.
#[derive(Debug, Clone)]
pub struct Semigroup {
    pub step: UStep,
    pub jumps: LongJumpOperator,
    pub h: f64,
    pub lambda0: f64,
    w0: f64,
    w1: f64,
}

impl Semigroup {
    pub fn new(step: UStep, jumps: LongJumpOperator) -> Semigroup {
        let h = step.h;
        let l = jumps.lambda0;
        let (w0, w1) = if l * h < 1e-8 {
            (0.5 * h, 0.5 * h)
        } else {
            let e = (-l * h).exp();
            // ∫₀^h e^{−lr} r/h dr and ∫₀^h e^{−lr}(1 − r/h) dr
            let w0 = (1.0 - e * (1.0 + l * h)) / (l * l * h);
            let w1 = (1.0 - e) / l - w0;
            (w0, w1)
        };
        Semigroup { step, jumps, h, lambda0: l, w0, w1 }
    }

    pub fn lattice(&self) -> Lattice {
        self.step.p.lat
    }

    /// Number of steps for time t (t must be a multiple of h).
    pub fn steps_for(&self, t: f64) -> Result<usize> {
        let k = (t / self.h).round();
        if (k * self.h - t).abs() > 1e-9 * self.h.max(t) || k < 0.0 {
            return Err(Error::Mesh(format!("t = {t} is not a multiple of the step {}", self.h)));
        }
        Ok(k as usize)
    }

    /// z = b + w₁𝒩z.
    fn solve_jump(&self, b: &[f64]) -> Result<Vec<f64>> {
        fixed_point(b, |z| self.jumps.apply(z).into_iter().map(|v| self.w1 * v).collect(), "long-jump implicit step")
    }

    fn solve_jump_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        fixed_point(b, |z| self.jumps.apply_transpose(z).into_iter().map(|v| self.w1 * v).collect(), "long-jump implicit step")
    }

    /// One step of T on nodal values.
    pub fn advance(&self, v: &[f64]) -> Result<Vec<f64>> {
        let e = (-self.lambda0 * self.h).exp();
        let nv = self.jumps.apply(v);
        let mix: Vec<f64> = v.iter().zip(&nv).map(|(a, b)| e * a + self.w0 * b).collect();
        let b = self.step.apply(&mix)?;
        self.solve_jump(&b)
    }

    /// Adjoint of [`Self::advance`] on row vectors.
    pub fn advance_transpose(&self, rho: &[f64]) -> Result<Vec<f64>> {
        let z = self.solve_jump_transpose(rho)?;
        self.mix_transpose(&self.step.apply_transpose(&z)?)
    }

    fn mix_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        let e = (-self.lambda0 * self.h).exp();
        let nv = self.jumps.apply_transpose(v);
        Ok(v.iter().zip(&nv).map(|(a, b)| e * a + self.w0 * b).collect())
    }

    /// Tₜf at the nodes for t = k·h, k = 0..=steps; `observe(k, values)` sees each.
    pub fn evolve(&self, f: &[f64], steps: usize, mut observe: impl FnMut(usize, &[f64]) -> Result<()>) -> Result<Vec<f64>> {
        let mut v = f.to_vec();
        observe(0, &v)?;
        for k in 1..=steps {
            v = self.advance(&v)?;
            observe(k, &v)?;
        }
        Ok(v)
    }

    /// Row of the one-step map at an arbitrary point x, so that
    /// T_{t+h}f(x) = row · T_t f; the U_h part uses the direct row at x.
    pub fn point_row(&self, setup: &KernelSetup, x: [f64; 2], cfg: &AssemblyConfig) -> Result<Vec<f64>> {
        let lat = self.lattice();
        let ex = lat.point_row(x).to_dense(&lat);
        let z = self.solve_jump_transpose(&ex)?;
        let rest: Vec<f64> = z.iter().zip(&ex).map(|(a, b)| a - b).collect();
        let mut v = self.step.row_at(setup, x, cfg)?;
        for (a, b) in v.iter_mut().zip(self.step.apply_transpose(&rest)?) {
            *a += b;
        }
        self.mix_transpose(&v)
    }

    /// Moments ∫p(t,x,y)φ_j(y)dy of the transition density for t = steps·h.
    pub fn density_row(&self, setup: &KernelSetup, x: [f64; 2], steps: usize, cfg: &AssemblyConfig) -> Result<Vec<f64>> {
        if steps == 0 {
            return Err(Error::Domain("the transition density needs t > 0".into()));
        }
        let mut rho = self.point_row(setup, x, cfg)?;
        for _ in 1..steps {
            rho = self.advance_transpose(&rho)?;
        }
        Ok(rho)
    }

    /// The interlacing series term by term. Terms are kept while the Poisson
    /// weight of the remainder exceeds `rtol`, up to `n_cap`.
    ///
    /// The r-integral coupling Ψₙ to Ψₙ₋₁ uses up to four past levels with
    /// weights exact for quadratics in r and exactly mass conserving, so that
    /// single terms stay accurate even when λ₀h is not small.
    pub fn psi_series(&self, f: &[f64], steps: usize, rtol: f64, n_cap: usize) -> Result<SemigroupResult> {
        let t = steps as f64 * self.h;
        let n_terms = (poisson_terms(self.lambda0 * t, rtol) + 1).min(n_cap.max(1));
        let e = (-self.lambda0 * self.h).exp();
        let len = f.len();
        let mut phi: Vec<Vec<f64>> = vec![f.to_vec()];
        phi.extend((1..n_terms).map(|_| vec![0.0; len]));
        // hist[n][j] = 𝒩Φₙ at t_k − j·h, newest first.
        let mut hist: Vec<Vec<Vec<f64>>> = phi.iter().map(|p| vec![self.jumps.apply(p)]).collect();
        for k in 0..steps {
            let c = multistep_weights(self.lambda0, self.h, (k + 1).min(3));
            let mut next: Vec<Vec<f64>> = Vec::with_capacity(n_terms);
            for n in 0..n_terms {
                // Horner form of e Φₙ(t_k) + Σ_{j≥1} c_j U^{j−1}𝒩Φₙ₋₁(t_{k+1−j}), then U.
                let mut acc = vec![0.0; len];
                if n > 0 {
                    for j in (1..c.len()).rev() {
                        if j + 1 < c.len() {
                            acc = self.step.apply(&acc)?;
                        }
                        acc.iter_mut().zip(&hist[n - 1][j - 1]).for_each(|(a, v)| *a += c[j] * v);
                    }
                }
                acc.iter_mut().zip(&phi[n]).for_each(|(a, v)| *a += e * v);
                let mut out = self.step.apply(&acc)?;
                if n > 0 {
                    let nv = self.jumps.apply(&next[n - 1]);
                    out.iter_mut().zip(&nv).for_each(|(a, v)| *a += c[0] * v);
                }
                next.push(out);
            }
            for (n, p) in next.iter().enumerate() {
                hist[n].insert(0, self.jumps.apply(p));
                hist[n].truncate(3);
            }
            phi = next;
        }
        let growth = (self.lambda0 * t).exp();
        let terms: Vec<Vec<f64>> = phi.iter().map(|p| p.iter().map(|v| v * growth).collect()).collect();
        let mut values = vec![0.0; len];
        for p in &phi {
            values.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        let term_norms = terms.iter().map(|p| p.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect();
        Ok(SemigroupResult { t, values, terms, n_terms, lambda0: self.lambda0, term_norms })
    }
}

/// Weights c_j, j = 0..=m, for ∫₀^h e^{−λr}U_r𝒩Φ(t+h−r) dr ≈ Σ c_j U_{jh}𝒩Φ(t+h−jh):
/// exact when e^{λs}Φ(s) is a polynomial of degree < m, and Σ c_j = ∫₀^h e^{−λr} dr.
fn multistep_weights(lambda: f64, h: f64, m: usize) -> Vec<f64> {
    let z = lambda * h;
    let k = m + 1;
    let mut a = vec![vec![0.0; k + 1]; k];
    // Unknowns d_j = c_j e^{λjh}, in units of h, nodes s_j = j.
    for p in 0..m {
        for j in 0..k {
            a[p][j] = (j as f64).powi(p as i32);
        }
        a[p][k] = 1.0 / (p as f64 + 1.0);
    }
    if z > 1e-6 {
        for j in 0..k {
            a[m][j] = (-z * j as f64).exp();
        }
        a[m][k] = -(-z).exp_m1() / z;
    } else {
        for j in 0..k {
            a[m][j] = (j as f64).powi(m as i32);
        }
        a[m][k] = 1.0 / (m as f64 + 1.0);
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for row in 0..k {
            if row != col {
                let r = a[row][col] / a[col][col];
                for c in col..=k {
                    a[row][c] -= r * a[col][c];
                }
            }
        }
    }
    (0..k).map(|j| h * a[j][k] / a[j][j] * (-z * j as f64).exp()).collect()
}

/// Solves z = b + A z by iteration; A must be a contraction.
fn fixed_point(b: &[f64], a: impl Fn(&[f64]) -> Vec<f64>, context: &str) -> Result<Vec<f64>> {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut z = b.to_vec();
    for _ in 0..200 {
        let next: Vec<f64> = a(&z).iter().zip(b).map(|(x, y)| x + y).collect();
        let change = next.iter().zip(&z).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        z = next;
        if change <= 1e-15 * scale {
            return Ok(z);
        }
    }
    Err(Error::Divergence(format!("{context}: fixed-point iteration did not converge; reduce the step")))
}

/// Tₜf(x) for t on the step grid: exact f(x) at t = 0, otherwise the
/// final step is taken with the row at x.
pub fn t_apply(
    sg: &Semigroup,
    setup: &KernelSetup,
    f: &TestFunction,
    t: f64,
    x: [f64; 2],
    cfg: &AssemblyConfig,
) -> Result<f64> {
    let steps = sg.steps_for(t)?;
    if steps == 0 {
        return Ok(f.eval(&x));
    }
    let lat = sg.lattice();
    let v = sg.evolve(&f.sample(&lat), steps - 1, |_, _| Ok(()))?;
    let row = sg.point_row(setup, x, cfg)?;
    Ok(row.iter().zip(&v).map(|(a, b)| a * b).sum())
}

/// Fit of a power law y ≈ c·t^slope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerFit {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    /// log c
    pub intercept: f64,
    pub target: f64,
}

impl PowerFit {
    pub fn new(times: &[f64], values: &[f64], target: f64) -> Result<PowerFit> {
        if times.len() < 2 || times.len() != values.len() || values.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Parameter("power fit needs at least two positive samples".into()));
        }
        let slope = loglog_slope(times, values);
        let n = times.len() as f64;
        let intercept = (values.iter().map(|v| v.ln()).sum::<f64>() - slope * times.iter().map(|t| t.ln()).sum::<f64>()) / n;
        Ok(PowerFit { times: times.to_vec(), values: values.to_vec(), slope, intercept, target })
    }

    /// Relative deviation of the slope from the target.
    pub fn relative_error(&self) -> f64 {
        ((self.slope - self.target) / self.target).abs()
    }
}

/// Hölder quotient R = max over pairs of |g(x) − g(x′)|/(|x − x′|^γ ‖f‖∞).
pub fn holder_quotient(values: &[(f64, f64)], pairs: &[([f64; 2], [f64; 2])], gamma: f64, f_sup: f64) -> Result<f64> {
    if values.len() != pairs.len() || pairs.is_empty() {
        return Err(Error::Parameter("one value pair per point pair is required".into()));
    }
    let mut r = 0.0f64;
    for ((a, b), (x, y)) in values.iter().zip(pairs) {
        let sep = (x[0] - y[0]).hypot(x[1] - y[1]);
        if !(sep > 0.0) {
            return Err(Error::Parameter(format!("degenerate pair {x:?}, {y:?}")));
        }
        r = r.max((a - b).abs() / (sep.powf(gamma) * f_sup));
    }
    Ok(r)
}

/// Hölder estimate: R_t for each requested time (multiples of h) and the
/// fit of log R_t against log t with target −γ/α.
pub fn holder_estimate(
    sg: &Semigroup,
    setup: &KernelSetup,
    f: &TestFunction,
    times: &[f64],
    pairs: &[([f64; 2], [f64; 2])],
    gamma: f64,
    cfg: &AssemblyConfig,
) -> Result<PowerFit> {
    let alpha = setup.alpha;
    if !(gamma > 0.0 && gamma < alpha && gamma <= 1.0) {
        return Err(Error::Parameter(format!("gamma must lie in (0, alpha) and (0, 1], got {gamma}")));
    }
    let rows: Vec<(Vec<f64>, Vec<f64>)> = pairs
        .iter()
        .map(|(x, y)| Ok((sg.point_row(setup, *x, cfg)?, sg.point_row(setup, *y, cfg)?)))
        .collect::<Result<_>>()?;
    let r = probe_series(sg, f, times, |v| {
        let vals: Vec<(f64, f64)> = rows.iter().map(|(a, b)| (dot(a, v), dot(b, v))).collect();
        holder_quotient(&vals, pairs, gamma, f.sup_norm())
    })?;
    PowerFit::new(times, &r, -gamma / alpha)
}

/// Smoothing estimate: sup over probe points of |Tₜf| and its fit against
/// the exponent −γ(d + β − α)/α.
pub fn smoothing_estimate(
    sg: &Semigroup,
    setup: &KernelSetup,
    f: &TestFunction,
    times: &[f64],
    probes: &[[f64; 2]],
    gamma: f64,
    cfg: &AssemblyConfig,
) -> Result<PowerFit> {
    let (alpha, beta, d) = (setup.alpha, setup.beta, setup.dim() as f64);
    let kappa = d + beta - alpha;
    if !(gamma > 0.0 && gamma < alpha / kappa) {
        return Err(Error::Parameter(format!("gamma must lie in (0, alpha/(d+beta-alpha)), got {gamma}")));
    }
    let rows: Vec<Vec<f64>> = probes.iter().map(|x| sg.point_row(setup, *x, cfg)).collect::<Result<_>>()?;
    let sup = probe_series(sg, f, times, |v| Ok(rows.iter().map(|r| dot(r, v).abs()).fold(0.0, f64::max)))?;
    PowerFit::new(times, &sup, -gamma * kappa / alpha)
}

/// Evaluates `measure` on T_{t−h}f (which the point rows step to t) at each time.
fn probe_series(sg: &Semigroup, f: &TestFunction, times: &[f64], mut measure: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let steps: Vec<usize> = times.iter().map(|t| sg.steps_for(*t)).collect::<Result<_>>()?;
    if steps.iter().any(|s| *s == 0) || steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("times must be positive, increasing multiples of the step".into()));
    }
    let last = *steps.last().unwrap();
    let mut out = Vec::with_capacity(times.len());
    sg.evolve(&f.sample(&sg.lattice()), last - 1, |k, v| {
        if steps.contains(&(k + 1)) {
            out.push(measure(v)?);
        }
        Ok(())
    })?;
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::SpectralGrid;
    use crate::field::CoefficientField;
    use crate::levy::LevyModel1D;
    use crate::truncation::truncate;

    fn setup(model: LevyModel1D) -> KernelSetup {
        let tm = truncate(&model, 1.0 / 40.0).unwrap();
        let grid = SpectralGrid::new(2.0, 1 << 14).unwrap();
        KernelSetup::new(CoefficientField::rotation(0.5).unwrap(), &[tm.clone(), tm], &grid, 2, 1e-2).unwrap()
    }

    #[test]
    fn multistep_terms_follow_poisson_weights() {
        // Scalar model U = 1, 𝒩 = λ: Φₙ(t) must be e^{−λt}(λt)ⁿ/n!.
        let (l, h, steps): (f64, f64, usize) = (33.24, 0.0125, 20);
        let e = (-l * h).exp();
        let mut phi = vec![vec![1.0], vec![0.0; 1], vec![0.0], vec![0.0], vec![0.0]];
        let mut hist: Vec<Vec<f64>> = phi.iter().map(|p| vec![l * p[0]]).collect();
        for k in 0..steps {
            let c = multistep_weights(l, h, (k + 1).min(3));
            let total: f64 = c.iter().sum();
            assert!((total - (1.0 - e) / l).abs() < 1e-15);
            let mut next: Vec<f64> = Vec::new();
            for n in 0..phi.len() {
                let mut v = e * phi[n][0];
                if n > 0 {
                    v += c[0] * l * next[n - 1] + (1..c.len()).map(|j| c[j] * hist[n - 1][j - 1]).sum::<f64>();
                }
                next.push(v);
            }
            for (n, v) in next.iter().enumerate() {
                hist[n].insert(0, l * v);
                hist[n].truncate(3);
                phi[n][0] = *v;
            }
        }
        let lt = l * h * steps as f64;
        let mut fact = 1.0;
        for (n, p) in phi.iter().enumerate() {
            if n > 0 {
                fact *= n as f64;
            }
            let exact = (-lt).exp() * lt.powi(n as i32) / fact;
            assert!((p[0] / exact - 1.0).abs() < 1e-3, "term {n}: {} vs {exact}", p[0]);
        }
        // Small λh falls back to plain polynomial exactness.
        let c = multistep_weights(1e-9, 0.1, 3);
        assert!((c.iter().sum::<f64>() - 0.1).abs() < 1e-10, "{c:?}");
    }

    #[test]
    fn poisson_rule() {
        assert_eq!(poisson_terms(0.0, 1e-6), 0);
        let n = poisson_terms(17.0, 1e-7);
        assert!((35..45).contains(&n), "{n}");
    }

    #[test]
    fn long_jumps_of_one_give_lambda0() {
        let s = setup(LevyModel1D::truncated_stable(1.0).unwrap());
        let l = lambda0(&s);
        let v = apply_n(&s, &|_| 1.0, &[0.2, -0.1]).unwrap();
        assert!((v - l).abs() < 1e-8 * l, "{v} vs {l}");
        assert_eq!(apply_n(&s, &|_| 0.0, &[0.2, -0.1]).unwrap(), 0.0);
        let lat = Lattice::new(1.0, 0.1).unwrap();
        let n = LongJumpOperator::assemble(&s, &lat).unwrap();
        let ones = n.apply(&vec![1.0; lat.len()]);
        assert!(ones.iter().all(|v| (v - l).abs() < 1e-10 * l));
    }

    #[test]
    fn long_jump_matrix_matches_pointwise_operator() {
        for model in [LevyModel1D::truncated_stable(1.0).unwrap(), LevyModel1D::stable(1.2).unwrap()] {
            let s = setup(model);
            let lat = Lattice::new(2.0, 0.05).unwrap();
            let n = LongJumpOperator::assemble(&s, &lat).unwrap();
            let f = TestFunction::GaussBump { center: [0.3, 0.0], width: 0.4, amplitude: 1.0 };
            let nf = n.apply(&f.sample(&lat));
            let k = lat.len() / 2;
            let exact = apply_n(&s, &|y| f.eval(y), &lat.node(k)).unwrap();
            assert!((nf[k] - exact).abs() < 2e-3 * lambda0(&s), "{} vs {exact}", nf[k]);
        }
    }

    #[test]
    fn far_indicator_sees_only_the_tail() {
        let s = setup(LevyModel1D::stable(1.0).unwrap());
        // half-space x₀ > 3 seen from the origin along the rotated axes
        let v = apply_n(&s, &|y| if y[0] > 3.0 { 1.0 } else { 0.0 }, &[0.0, 0.0]).unwrap();
        let a = s.field.a(&[0.0, 0.0]);
        let oracle: f64 = (0..2)
            .map(|i| {
                let c = a.get(0, i).abs();
                if c == 0.0 { 0.0 } else { s.law(i).base.tail_mass(3.0 / c).unwrap() }
            })
            .sum();
        assert!((v - oracle).abs() < 1e-8, "{v} vs {oracle}");
        assert!(v <= lambda0(&s));
    }

    #[test]
    fn test_function_norms() {
        let b = TestFunction::unit_mass_bump([0.0, 0.0], 0.2);
        assert!((b.l1_norm().unwrap() - 1.0).abs() < 1e-14);
        assert!(b.eval(&[0.0, 0.0]) <= b.sup_norm());
        let step = TestFunction::TanhStep { center: [0.0, 0.0], normal: [1.0, 0.0], width: 0.1 };
        assert!(step.validate().is_ok());
        assert!(TestFunction::TanhStep { center: [0.0, 0.0], normal: [1.0, 1.0], width: 0.1 }.validate().is_err());
    }

    #[test]
    fn fits_and_quotients() {
        let t = [0.1, 0.2, 0.4];
        let v: Vec<f64> = t.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        let fit = PowerFit::new(&t, &v, -0.5).unwrap();
        assert!(fit.relative_error() < 1e-12 && (fit.intercept - 3f64.ln()).abs() < 1e-12);
        let pairs = [([0.0, 0.0], [0.0, 0.25])];
        assert!((holder_quotient(&[(1.0, 0.5)], &pairs, 0.5, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(holder_quotient(&[(1.0, 1.0)], &[([0.0, 0.0], [0.0, 0.0])], 0.5, 1.0).is_err());
    }
}
