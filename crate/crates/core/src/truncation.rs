//! Truncation of a Lévy density to small jumps: μ^(δ) = ν on (0, δ], a smooth
//! monotone taper on (δ, 2δ) and zero beyond, together with the exponent
//! ψ^(δ), its ξ-derivatives, the mass defect and the long-jump rate λ₀.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levy::{log_grid, LevyMeasure, LevyModel1D};
use crate::quad::{self, Composite, Tol};

/// Default ceiling for the truncation radius.
pub const DELTA0_DEFAULT: f64 = 1.0 / 24.0;

/// Largest steepening exponent tried before giving up.
pub const MAX_STEEPENING: u32 = 8;

/// δ = min{δ₀, εα/(8d + 8β + 16), ε/(d η₁²)}.
pub fn choose_delta(epsilon: f64, alpha: f64, beta: f64, d: usize, eta1: f64, delta0: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Parameter(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    if d == 0 || !(eta1 > 0.0) || !(delta0 > 0.0 && delta0 <= DELTA0_DEFAULT) {
        return Err(Error::Parameter("need d ≥ 1, eta1 > 0 and 0 < delta0 ≤ 1/24".into()));
    }
    let d = d as f64;
    Ok(delta0
        .min(epsilon * alpha / (8.0 * d + 8.0 * beta + 16.0))
        .min(epsilon / (d * eta1 * eta1)))
}

/// Shape of the cut-off on (δ, 2δ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Taper {
    /// S(s^k) with S the quintic blend 1 − (10s³ − 15s⁴ + 6s⁵).
    Quintic { k: u32 },
    /// μ = ν·1_{x ≤ δ}; not C¹, kept for diagnostics.
    HardCutoff,
}

impl Taper {
    /// Blend value and its derivative in s ∈ [0, 1].
    pub fn blend(&self, s: f64) -> (f64, f64) {
        match *self {
            Taper::HardCutoff => (0.0, 0.0),
            Taper::Quintic { k } => {
                if s <= 0.0 {
                    return (1.0, 0.0);
                }
                if s >= 1.0 {
                    return (0.0, 0.0);
                }
                let k = k.max(1) as i32;
                let u = s.powi(k);
                let du = k as f64 * s.powi(k - 1);
                let v = 1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
                let dv = -30.0 * u * u * (1.0 - u) * (1.0 - u);
                (v, dv * du)
            }
        }
    }
}

/// A truncated model μ^(δ) built from a base model.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedModel1D {
    pub base: LevyModel1D,
    pub delta: f64,
    pub taper: Taper,
    /// ∫_ℝ (ν − μ^(δ)).
    pub mass_defect: f64,
}

/// Build μ^(δ) with the quintic taper, steepening until [`validate_taper`] passes.
pub fn truncate(model: &LevyModel1D, delta: f64) -> Result<TruncatedModel1D> {
    let mut last = None;
    for k in 1..=MAX_STEEPENING {
        let tm = truncate_with_taper(model, delta, Taper::Quintic { k })?;
        let rep = validate_taper(&tm);
        if rep.passed() {
            return Ok(tm);
        }
        last = rep.first_violation;
    }
    let (what, x) = last.unwrap_or_else(|| ("unknown".into(), f64::NAN));
    Err(Error::Taper(format!("{what} violated at x = {x:.6e} after steepening to k = {MAX_STEEPENING}")))
}

/// Build μ^(δ) with the given taper, without validating it.
pub fn truncate_with_taper(model: &LevyModel1D, delta: f64, taper: Taper) -> Result<TruncatedModel1D> {
    if !(delta > 0.0 && delta <= DELTA0_DEFAULT) {
        return Err(Error::Parameter(format!("delta must lie in (0, 1/24], got {delta}")));
    }
    if model.eta4 < 2.0 * delta {
        return Err(Error::Parameter(format!(
            "regularity radius {} is smaller than 2·delta = {}",
            model.eta4,
            2.0 * delta
        )));
    }
    let mut tm = TruncatedModel1D { base: model.clone(), delta, taper, mass_defect: 0.0 };
    // ∫(ν − μ) = 2[∫_δ^{2δ} ν(1 − S) + ∫_{2δ}^∞ ν].
    let cut = tm.taper_integral(|x| x.powi(0), true)?;
    tm.mass_defect = 2.0 * (cut + model.tail_mass(2.0 * delta)?);
    Ok(tm)
}

impl TruncatedModel1D {
    fn s_of(&self, x: f64) -> f64 {
        (x - self.delta) / self.delta
    }

    /// ∫_δ^{2δ} w(x) ν(x) S(...) dx, or with (1 − S) when `complement`.
    fn taper_integral(&self, w: impl Fn(f64) -> f64, complement: bool) -> Result<f64> {
        self.taper_integral_on(self.delta, 2.0 * self.delta, w, complement)
    }

    fn taper_integral_on(&self, a: f64, b: f64, w: impl Fn(f64) -> f64, complement: bool) -> Result<f64> {
        if b <= a {
            return Ok(0.0);
        }
        let f = |x: f64| {
            let (s, _) = self.taper.blend(self.s_of(x));
            let s = if complement { 1.0 - s } else { s };
            w(x) * self.base.density(x) * s
        };
        let tol = Tol { abs: 1e-300, rel: 1e-13, max_segments: 2000 };
        quad::adaptive(f, a, b, tol, "taper integral").map(|v| v.0)
    }

    /// ξ-derivatives ψ^(δ), ψ^(δ)′, …, up to order `nmax`, at each ξ ≥ 0.
    ///
    /// The node set is built once for the largest |ξ|: geometric panels
    /// towards the origin and sub-panels of length ≤ π/ξ_max elsewhere.
    pub fn psi_derivatives(&self, xis: &[f64], nmax: usize) -> Vec<Vec<f64>> {
        let xi_max = xis.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let rule = PsiRule::new(self, xi_max);
        let rows: Vec<Vec<f64>> = xis.par_iter().map(|&xi| rule.eval(xi, nmax)).collect();
        // Transpose to order-major.
        (0..=nmax).map(|n| rows.iter().map(|r| r[n]).collect()).collect()
    }

    /// [`Self::psi_derivatives`] on the uniform grid ξ_k = k·dξ, k < count.
    pub fn psi_derivatives_uniform(&self, dxi: f64, count: usize, nmax: usize) -> Vec<Vec<f64>> {
        let xi_max = (count.max(2) - 1) as f64 * dxi;
        let rule = PsiRule::new(self, xi_max.max(1.0));
        let chunks: Vec<Vec<Vec<f64>>> = (0..count.div_ceil(RESYNC))
            .into_par_iter()
            .map(|c| rule.eval_run(c * RESYNC, RESYNC.min(count - c * RESYNC), dxi, nmax))
            .collect();
        (0..=nmax).map(|n| chunks.iter().flat_map(|c| c[n].iter().copied()).collect()).collect()
    }
}

/// Recurrence steps between exact phase evaluations.
const RESYNC: usize = 512;

struct PsiRule {
    x: Vec<f64>,
    /// Weight times μ at each node.
    wmu: Vec<f64>,
    /// ∫_0^{x_lo} x² μ.
    m2_lo: f64,
}

impl PsiRule {
    fn new(tm: &TruncatedModel1D, xi_max: f64) -> PsiRule {
        let d = tm.delta;
        let x_lo = d * 1e-12;
        let hmax = std::f64::consts::PI / xi_max;
        let mut edges = quad::geometric_edges(x_lo, d, 2.0);
        edges.push(2.0 * d);
        let mut fine = vec![edges[0]];
        for e in edges.windows(2) {
            let m = ((e[1] - e[0]) / hmax).ceil().max(if e[0] >= d { 4.0 } else { 1.0 }) as usize;
            for j in 1..=m {
                fine.push(e[0] + (e[1] - e[0]) * j as f64 / m as f64);
            }
        }
        let c = Composite::from_panels(&fine, 8);
        let wmu = c.x.iter().zip(&c.w).map(|(x, w)| w * tm.density(*x)).collect();
        let m2_lo = tm.base.second_moment(x_lo).unwrap_or(0.0);
        PsiRule { x: c.x, wmu, m2_lo }
    }

    /// Orders 0..=nmax at ξ = (k0 + j)·dξ, j < len. The half angle is
    /// advanced by rotation, so 1 − cos = 2 sin²(·/2) keeps full relative
    /// accuracy near ξx = 0.
    fn eval_run(&self, k0: usize, len: usize, dxi: f64, nmax: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; len]; nmax + 1];
        for (&x, &wm) in self.x.iter().zip(&self.wmu) {
            let (mut sh, mut ch) = (0.5 * k0 as f64 * dxi * x).sin_cos();
            let (sp, cp) = (0.5 * dxi * x).sin_cos();
            for j in 0..len {
                let h2 = sh * sh;
                out[0][j] += wm * 2.0 * h2;
                if nmax >= 1 {
                    let (c, s) = (1.0 - 2.0 * h2, 2.0 * sh * ch);
                    let mut xp = 1.0;
                    for (n, o) in out.iter_mut().enumerate().skip(1) {
                        xp *= x;
                        let cn = match n % 4 {
                            0 => c,
                            1 => -s,
                            2 => -c,
                            _ => s,
                        };
                        o[j] -= wm * xp * cn;
                    }
                }
                (sh, ch) = (sh * cp + ch * sp, ch * cp - sh * sp);
            }
        }
        for j in 0..len {
            let xi = (k0 + j) as f64 * dxi;
            for o in out.iter_mut() {
                o[j] *= 2.0;
            }
            out[0][j] += xi * xi * self.m2_lo;
            if nmax >= 1 {
                out[1][j] += 2.0 * xi * self.m2_lo;
            }
            if nmax >= 2 {
                out[2][j] += 2.0 * self.m2_lo;
            }
        }
        out
    }

    fn eval(&self, xi: f64, nmax: usize) -> Vec<f64> {
        let sgn = xi.signum();
        let xi = xi.abs();
        let mut out = vec![0.0; nmax + 1];
        for (&x, &wm) in self.x.iter().zip(&self.wmu) {
            let (s, c) = (xi * x).sin_cos();
            let h = (0.5 * xi * x).sin();
            out[0] += wm * 2.0 * h * h;
            let mut xp = 1.0;
            for (n, o) in out.iter_mut().enumerate().skip(1) {
                xp *= x;
                // d^n/dξ^n (1 − cos ξx) = −x^n cos(ξx + nπ/2)
                let cn = match n % 4 {
                    0 => c,
                    1 => -s,
                    2 => -c,
                    _ => s,
                };
                *o -= wm * xp * cn;
            }
        }
        for o in out.iter_mut() {
            *o *= 2.0;
        }
        // Leading Taylor terms on (0, x_lo).
        out[0] += xi * xi * self.m2_lo;
        if nmax >= 1 {
            out[1] += 2.0 * xi * self.m2_lo;
        }
        if nmax >= 2 {
            out[2] += 2.0 * self.m2_lo;
        }
        // ψ is even: odd derivatives flip sign for negative ξ.
        for (n, o) in out.iter_mut().enumerate() {
            if n % 2 == 1 && sgn < 0.0 {
                *o = -*o;
            }
        }
        out
    }
}

impl LevyMeasure for TruncatedModel1D {
    fn density(&self, x: f64) -> f64 {
        let d = self.delta;
        if x <= d {
            self.base.density(x)
        } else if x >= 2.0 * d {
            0.0
        } else {
            self.base.density(x) * self.taper.blend(self.s_of(x)).0
        }
    }

    fn density_prime(&self, x: f64) -> f64 {
        let d = self.delta;
        if x <= d {
            self.base.density_prime(x)
        } else if x >= 2.0 * d {
            0.0
        } else {
            let (s, ds) = self.taper.blend(self.s_of(x));
            self.base.density_prime(x) * s + self.base.density(x) * ds / d
        }
    }

    fn second_moment(&self, r: f64) -> Result<f64> {
        let d = self.delta;
        if r <= d {
            return self.base.second_moment(r);
        }
        Ok(self.base.second_moment(d)? + self.taper_integral_on(d, r.min(2.0 * d), |x| x * x, false)?)
    }

    fn tail_mass(&self, r: f64) -> Result<f64> {
        let d = self.delta;
        if r >= 2.0 * d {
            return Ok(0.0);
        }
        if r > d {
            return self.taper_integral_on(r, 2.0 * d, |_| 1.0, false);
        }
        let tol = Tol { abs: 1e-300, rel: 1e-13, max_segments: 2000 };
        let breaks = if r > 0.0 { quad::geometric_edges(r, d, 2.0) } else { vec![] };
        let inner = quad::adaptive_with_breaks(|x| self.base.density(x), r, d, &breaks, tol, "truncated tail")?.0;
        Ok(inner + self.taper_integral(|_| 1.0, false)?)
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.delta]
    }

    fn support_end(&self) -> Option<f64> {
        Some(2.0 * self.delta)
    }
}

/// Outcome of the structural checks on μ^(δ) over a log grid in (δ/10, 4δ).
#[derive(Debug, Clone, PartialEq)]
pub struct TaperReport {
    pub grid_points: usize,
    pub c1: bool,
    pub nonincreasing: bool,
    pub ratio_nonincreasing: bool,
    /// −max μ′ over the grid (≥ 0 when monotone).
    pub monotone_margin: f64,
    /// min over consecutive points of the relative decrease of −μ′/x.
    pub ratio_margin: f64,
    /// Largest relative mismatch of one-sided derivatives (including at δ and 2δ).
    pub c1_mismatch: f64,
    pub first_violation: Option<(String, f64)>,
}

impl TaperReport {
    pub fn passed(&self) -> bool {
        self.c1 && self.nonincreasing && self.ratio_nonincreasing
    }
}

/// Grid check of C¹, μ′ ≤ 0 and −μ′/x nonincreasing.
pub fn validate_taper(tm: &TruncatedModel1D) -> TaperReport {
    const N: usize = 1025;
    let d = tm.delta;
    let xs = log_grid(d / 10.0, 4.0 * d, N);
    let mut first: Option<(String, f64)> = None;
    let note = |what: &str, x: f64, first: &mut Option<(String, f64)>| {
        if first.is_none() {
            *first = Some((what.to_string(), x));
        }
    };

    // C¹ via one-sided difference quotients at grid points and the knots.
    let mut c1_mismatch = 0.0f64;
    let scale = tm.base.density(d) / d;
    let mut probe: Vec<f64> = xs.clone();
    probe.extend([d, 2.0 * d]);
    for &x in &probe {
        let h = 1e-7 * x;
        let right = (tm.density(x + h) - tm.density(x)) / h;
        let left = (tm.density(x) - tm.density(x - h)) / h;
        let mis = (right - left).abs() / (right.abs() + left.abs() + 1e-3 * scale);
        if mis > c1_mismatch {
            c1_mismatch = mis;
        }
        if mis > 1e-3 {
            note("continuity of the derivative", x, &mut first);
        }
    }
    let c1 = c1_mismatch <= 1e-3;

    let dmu: Vec<f64> = xs.iter().map(|&x| tm.density_prime(x)).collect();
    let max_d = dmu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let nonincreasing = max_d <= 0.0;
    if !nonincreasing {
        let i = dmu.iter().position(|v| *v > 0.0).unwrap_or(0);
        note("nonpositive derivative", xs[i], &mut first);
    }
    let ratio: Vec<f64> = xs.iter().zip(&dmu).map(|(x, v)| -v / x).collect();
    let rmax = ratio.iter().cloned().fold(0.0f64, f64::max);
    let mut ratio_margin = f64::INFINITY;
    let mut ratio_ok = true;
    for i in 1..N {
        let dec = (ratio[i - 1] - ratio[i]) / rmax.max(1e-300);
        ratio_margin = ratio_margin.min(dec);
        if ratio[i] > ratio[i - 1] * (1.0 + 1e-9) + 1e-12 * rmax {
            ratio_ok = false;
            note("monotonicity of -mu'/x", xs[i], &mut first);
        }
    }
    TaperReport {
        grid_points: N,
        c1,
        nonincreasing,
        ratio_nonincreasing: ratio_ok,
        monotone_margin: -max_d,
        ratio_margin,
        c1_mismatch,
        first_violation: first,
    }
}

/// λ₀ = Σ_i ∫(ν_i − μ_i).
pub fn lambda_zero(tms: &[TruncatedModel1D]) -> f64 {
    tms.iter().map(|t| t.mass_defect).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cauchy_tm(delta: f64) -> TruncatedModel1D {
        truncate(&LevyModel1D::stable(1.0).unwrap(), delta).unwrap()
    }

    #[test]
    fn delta_formula() {
        let d = choose_delta(1.0, 1.0, 1.0, 2, 1.0, DELTA0_DEFAULT).unwrap();
        assert!((d - 1.0 / 40.0).abs() < 1e-15);
        assert!(choose_delta(0.5, 1.0, 1.0, 2, 1.0, DELTA0_DEFAULT).unwrap() < d);
    }

    #[test]
    fn identity_and_zero_regions() {
        let tm = cauchy_tm(1.0 / 32.0);
        let x = 1.0 / 64.0;
        assert_eq!(tm.density(x), tm.base.density(x));
        assert_eq!(tm.density(3.0 / 32.0), 0.0);
        assert_eq!(tm.taper, Taper::Quintic { k: 1 });
    }

    #[test]
    fn cauchy_mass_defect_bracket() {
        let delta = 1.0 / 32.0;
        let tm = cauchy_tm(delta);
        let lo = 1.0 / (PI * delta);
        let hi = 2.0 / (PI * delta);
        assert!(tm.mass_defect > lo && tm.mass_defect < hi, "{}", tm.mass_defect);
        // Oracle: ∫_δ^{2δ} x^{-2}(1 − S) by Simpson on a fine grid, plus the tail.
        let n = 200_000;
        let h = delta / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let x = delta + i as f64 * h;
            let s = (x - delta) / delta;
            let v = (1.0 - Taper::Quintic { k: 1 }.blend(s).0) / (PI * x * x);
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * v;
        }
        let oracle = 2.0 * (acc * h / 3.0 + 1.0 / (PI * 2.0 * delta));
        assert!((tm.mass_defect - oracle).abs() < 1e-9 * oracle);
    }

    #[test]
    fn hard_cutoff_fails_c1() {
        let tm = truncate_with_taper(&LevyModel1D::stable(1.0).unwrap(), 1.0 / 32.0, Taper::HardCutoff).unwrap();
        let rep = validate_taper(&tm);
        assert!(!rep.c1);
        let (_, x) = rep.first_violation.unwrap();
        assert!((x / tm.delta - 1.0).abs() < 1e-6);
    }

    #[test]
    fn psi_derivatives_match_finite_differences() {
        let tm = cauchy_tm(1.0 / 40.0);
        let xis = [0.0, 0.7, 13.0, 250.0, 4000.0];
        let tab = tm.psi_derivatives(&xis, 3);
        for (j, &xi) in xis.iter().enumerate() {
            let q = tm.psi(xi).unwrap();
            assert!((tab[0][j] - q).abs() <= 2e-8 * q.max(1e-12), "xi={xi}: {} vs {q}", tab[0][j]);
        }
        let h = 1e-3;
        for &xi in &[0.7, 13.0, 250.0] {
            let t = tm.psi_derivatives(&[xi - h, xi, xi + h], 3);
            let fd1 = (t[0][2] - t[0][0]) / (2.0 * h);
            let fd2 = (t[1][2] - t[1][0]) / (2.0 * h);
            let fd3 = (t[2][2] - t[2][0]) / (2.0 * h);
            assert!((fd1 - t[1][1]).abs() < 1e-6 * (1.0 + t[1][1].abs()));
            assert!((fd2 - t[2][1]).abs() < 1e-6 * (1.0 + t[2][1].abs()));
            assert!((fd3 - t[3][1]).abs() < 1e-5 * (1.0 + t[3][1].abs()));
        }
    }

    #[test]
    fn uniform_grid_matches_pointwise_evaluation() {
        let tm = cauchy_tm(1.0 / 40.0);
        let (dxi, count) = (0.37, 3000);
        let fast = tm.psi_derivatives_uniform(dxi, count, 2);
        let xis: Vec<f64> = (0..count).map(|k| k as f64 * dxi).collect();
        let slow = tm.psi_derivatives(&xis, 2);
        for n in 0..=2 {
            for k in 0..count {
                let (a, b) = (fast[n][k], slow[n][k]);
                assert!((a - b).abs() <= 1e-11 * (b.abs() + 1e-3), "order {n}, k {k}: {a} vs {b}");
            }
        }
    }
}
