//! One-dimensional symmetric Lévy models: the jump density ν, the exponent
//! ψ(ξ) = ∫(1 − cos ξx) ν(x) dx, the concentration functions h and K, the
//! inverse h⁻¹ and numerical certificates for the standing assumptions.
//!
//! Densities are stored for x > 0 only; negative arguments are reflected.
//! The stable normalisation is fixed so that ψ(ξ) = |ξ|^α.

use std::f64::consts::PI;
use std::sync::Arc;

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quad::{self, Tol};

/// Below |ξx| < this, (1 − cos ξx) is replaced by ½ξ²x².
pub const PSI_TAYLOR_SWITCH: f64 = 1e-3;

/// Normalisation 𝒜_α of the stable density 𝒜_α|x|^{-1-α} with ψ(ξ) = |ξ|^α.
pub fn stable_constant(alpha: f64) -> f64 {
    gamma(1.0 + alpha) * (PI * alpha / 2.0).sin() / PI
}

/// Shared numerics of symmetric Lévy measures with a density.
///
/// Implementors supply the density on (0, ∞) and the two elementary
/// integrals; everything else is derived.
pub trait LevyMeasure: Send + Sync {
    /// Density at x > 0.
    fn density(&self, x: f64) -> f64;

    /// ∫_0^r x² ν(x) dx over the positive half-line.
    fn second_moment(&self, r: f64) -> Result<f64>;

    /// ∫_r^∞ ν(x) dx over the positive half-line.
    fn tail_mass(&self, r: f64) -> Result<f64>;

    /// Points in (0, ∞) where the density is not smooth.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    /// End of the support, if finite.
    fn support_end(&self) -> Option<f64> {
        None
    }

    /// Closed-form exponent, if available.
    fn psi_closed(&self, _xi: f64) -> Option<f64> {
        None
    }

    /// ν′ at x > 0; central differences unless overridden.
    fn density_prime(&self, x: f64) -> f64 {
        let h = 1e-5 * x;
        (self.density(x + h) - self.density(x - h)) / (2.0 * h)
    }

    /// Even extension of the density.
    fn nu(&self, x: f64) -> f64 {
        let a = x.abs();
        if a == 0.0 {
            f64::INFINITY
        } else {
            self.density(a)
        }
    }

    fn psi(&self, xi: f64) -> Result<f64> {
        let xi = xi.abs();
        if xi == 0.0 {
            return Ok(0.0);
        }
        if let Some(v) = self.psi_closed(xi) {
            return Ok(v);
        }
        psi_quadrature(self, xi)
    }

    /// h(r) = ∫(1 ∧ x²/r²) ν.
    fn h(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("h requires r > 0, got {r}")));
        }
        Ok(2.0 * (self.second_moment(r)? / (r * r) + self.tail_mass(r)?))
    }

    /// K(r) = ∫_{|x| ≤ r} x²/r² ν.
    fn k(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("K requires r > 0, got {r}")));
        }
        Ok(2.0 * self.second_moment(r)? / (r * r))
    }

    /// h⁻¹(s) by bisection to 1e-10 relative in the value of h.
    fn h_inverse(&self, s: f64) -> Result<f64> {
        h_inverse_bracketed(self, s, None)
    }
}

/// ψ by quadrature of ∫(1 − cos ξx) ν with the Taylor replacement near 0.
pub fn psi_quadrature<M: LevyMeasure + ?Sized>(m: &M, xi: f64) -> Result<f64> {
    let xi = xi.abs();
    if xi == 0.0 {
        return Ok(0.0);
    }
    let xs = PSI_TAYLOR_SWITCH / xi;
    let inner = xi * xi * m.second_moment(xs)?;
    let period = 2.0 * PI / xi;
    let integrand = |x: f64| 2.0 * (0.5 * xi * x).sin().powi(2) * m.density(x);
    let mut total = inner;
    let tol = Tol { abs: 1e-13, rel: 1e-10, max_segments: 400_000 };
    let end = match m.support_end() {
        Some(e) => e,
        None => {
            // Truncate where the tail mass is negligible; the remaining
            // (1 − cos) integral is bounded by twice that mass.
            let mut x = (10.0 * period).max(xs * 2.0).max(1.0);
            while m.tail_mass(x)? > 1e-13 * total.max(1e-300) && x < 1e12 {
                x *= 4.0;
            }
            total += 2.0 * m.tail_mass(x)?;
            x
        }
    };
    // Past this many periods the remainder is handled by integrating the
    // cosine part by parts twice; the leftover is O(ν''/ξ³).
    const DIRECT_PERIODS: f64 = 1000.0;
    let x0 = if (end - xs) / period > 2.0 * DIRECT_PERIODS {
        xs + DIRECT_PERIODS * period
    } else {
        end
    };
    if x0 > xs {
        let mut breaks: Vec<f64> = m.breakpoints().into_iter().filter(|b| *b < x0).collect();
        let n_per = ((x0 - xs) / period).ceil() as usize;
        if n_per > 1 {
            let step = (x0 - xs) / n_per as f64;
            breaks.extend((1..n_per).map(|k| xs + k as f64 * step));
        }
        // Geometric seeding near the Taylor switch handles the x^{-1-α} growth.
        let mut g = xs * 2.0;
        while g < x0.min(period) {
            breaks.push(g);
            g *= 2.0;
        }
        let (v, _) = quad::adaptive_with_breaks(integrand, xs, x0, &breaks, tol, "psi")?;
        total += 2.0 * v;
    }
    if x0 < end {
        let mass = m.tail_mass(x0)? - m.tail_mass(end)?;
        let d_left = |x: f64| {
            let h = 1e-6 * x;
            (m.density(x - h) - m.density(x - 2.0 * h)) / h
        };
        let d_right = |x: f64| {
            let h = 1e-6 * x;
            (m.density(x + 2.0 * h) - m.density(x + h)) / h
        };
        let lim_left = |x: f64| m.density(x * (1.0 - 1e-12));
        // ∫_{x0}^{end} cos(ξx) ν: x0 sits on a whole period, so sin(ξx0) = 0 and cos(ξx0) = 1.
        let mut cosint = (xi * end).sin() * lim_left(end) / xi
            + ((xi * end).cos() * d_left(end) - d_right(x0)) / (xi * xi);
        for b in m.breakpoints().into_iter().filter(|b| *b > x0 && *b < end) {
            cosint += (xi * b).sin() * (lim_left(b) - m.density(b * (1.0 + 1e-12))) / xi
                + (xi * b).cos() * (d_left(b) - d_right(b)) / (xi * xi);
        }
        total += 2.0 * (mass - cosint);
    }
    Ok(total)
}

/// h⁻¹(s), optionally seeded with a bracket [lo, hi] (e.g. from C₃/C₄).
pub fn h_inverse_bracketed<M: LevyMeasure + ?Sized>(
    m: &M,
    s: f64,
    seed: Option<(f64, f64)>,
) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("h_inverse requires s > 0, got {s}")));
    }
    let (mut lo, mut hi) = seed.unwrap_or((1.0, 1.0));
    lo = lo.max(1e-300);
    hi = hi.max(lo);
    // h is decreasing: need h(lo) ≥ s ≥ h(hi).
    let mut k = 0;
    while m.h(lo)? < s {
        lo *= 0.5;
        k += 1;
        if k > 400 {
            return Err(Error::Range { target: s, lo: m.h(lo)?, hi: f64::INFINITY });
        }
    }
    k = 0;
    while m.h(hi)? > s {
        hi *= 2.0;
        k += 1;
        if k > 400 {
            return Err(Error::Range { target: s, lo: 0.0, hi: m.h(hi)? });
        }
    }
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        let v = m.h(mid)?;
        if ((v - s) / s).abs() <= 1e-10 {
            return Ok(mid);
        }
        if v > s {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            return Ok(mid);
        }
    }
    Ok((lo * hi).sqrt())
}

/// Descriptive family label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyTag {
    Stable,
    Relativistic,
    TruncatedStable,
    SubordinatedBm,
    Custom,
}

/// Tabulated density on a strictly increasing grid of x > 0, interpolated
/// log-linearly; zero beyond the last point, power-law below the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    pub x: Vec<f64>,
    pub nu: Vec<f64>,
}

impl Tabulated {
    pub fn new(x: Vec<f64>, nu: Vec<f64>) -> Result<Tabulated> {
        if x.len() < 2 || x.len() != nu.len() {
            return Err(Error::Parameter("tabulated density needs ≥ 2 matching (x, nu) rows".into()));
        }
        if x.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Parameter(
                "tabulated density must be given for x > 0 only; symmetry is imposed, not read".into(),
            ));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("tabulated x must be strictly increasing".into()));
        }
        if nu.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Parameter("tabulated nu must be positive and finite".into()));
        }
        Ok(Tabulated { x, nu })
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.x.len();
        if x > self.x[n - 1] {
            return 0.0;
        }
        let i = match self.x.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => return self.nu[i],
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let i = i.min(n - 2);
        let (x0, x1) = (self.x[i].ln(), self.x[i + 1].ln());
        let (y0, y1) = (self.nu[i].ln(), self.nu[i + 1].ln());
        let s = (x.ln() - x0) / (x1 - x0);
        (y0 + s * (y1 - y0)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// ν = 𝒜_α|x|^{-1-α}, ψ = |ξ|^α.
    Stable,
    /// ψ = (m^{2/α} + ξ²)^{α/2} − m; Brownian motion subordinated by a tempered stable subordinator.
    Relativistic { m: f64 },
    /// ν = 𝒜_α|x|^{-1-α} on (−1, 1), zero outside.
    TruncatedStable,
    Tabulated(Arc<Tabulated>),
}

/// One coordinate's Lévy model with declared scaling metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyModel1D {
    pub family: Family,
    /// Stability index of the stable-type families (the α in 𝒜_α|x|^{-1-α}).
    pub index: f64,
    pub alpha: f64,
    pub beta: f64,
    pub c_lower: f64,
    pub c_upper: f64,
    pub eta4: f64,
}

fn check_index(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 2), got {alpha}")));
    }
    Ok(())
}

/// K_ν(z) e^{z} from ∫_0^∞ e^{−z(cosh u − 1)} cosh(νu) du.
fn bessel_k_scaled(order: f64, z: f64) -> f64 {
    let umax = (1.0 + 60.0 / z).acosh() + 1.0;
    let f = |u: f64| (-z * (u.cosh() - 1.0)).exp() * (order * u).cosh();
    let tol = Tol { abs: 0.0, rel: 1e-13, max_segments: 2000 };
    quad::adaptive(f, 0.0, umax, tol, "bessel K").map(|r| r.0).unwrap_or(f64::NAN)
}

impl LevyModel1D {
    /// Symmetric α-stable: ψ = |ξ|^α, scaling constants exactly 1.
    pub fn stable(alpha: f64) -> Result<Self> {
        check_index(alpha)?;
        Ok(LevyModel1D {
            family: Family::Stable,
            index: alpha,
            alpha,
            beta: alpha,
            c_lower: 1.0,
            c_upper: 1.0,
            eta4: f64::INFINITY,
        })
    }

    /// Relativistic α-stable with mass parameter m > 0.
    ///
    /// With u = m^{2/α}/ξ², ψ(ξ)/|ξ|^α = (1 + u)^{α/2} − u^{α/2} increases in
    /// |ξ| towards 1, so C̲ = 1 and C̄ = 1/ψ(1) are sharp.
    pub fn relativistic(alpha: f64, m: f64) -> Result<Self> {
        check_index(alpha)?;
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::Parameter(format!("relativistic mass must be > 0, got {m}")));
        }
        let psi1 = (m.powf(2.0 / alpha) + 1.0).powf(alpha / 2.0) - m;
        Ok(LevyModel1D {
            family: Family::Relativistic { m },
            index: alpha,
            alpha,
            beta: alpha,
            c_lower: 1.0,
            c_upper: (1.0 + 1e-9) / psi1,
            eta4: f64::INFINITY,
        })
    }

    /// Stable density restricted to (−1, 1), with sharp scaling constants.
    pub fn truncated_stable(alpha: f64) -> Result<Self> {
        check_index(alpha)?;
        let mut m = LevyModel1D {
            family: Family::TruncatedStable,
            index: alpha,
            alpha,
            beta: alpha,
            c_lower: 1.0,
            c_upper: 1.0,
            eta4: 1.0,
        };
        // ψ(ξ)/|ξ|^α = 2𝒜_α ∫_0^{|ξ|} (1 − cos u) u^{-1-α} du is nondecreasing
        // and tends to 1, so C̲ = 1 and C̄ = 1/ψ(1) are sharp.
        m.c_lower = 1.0;
        m.c_upper = (1.0 + 1e-9) / m.psi(1.0)?;
        Ok(m)
    }

    /// Tabulated density with user-declared scaling metadata.
    pub fn tabulated(
        table: Tabulated,
        alpha: f64,
        beta: f64,
        c_lower: f64,
        c_upper: f64,
        eta4: f64,
    ) -> Result<Self> {
        check_index(alpha)?;
        if !(beta >= alpha && beta < 2.0) {
            return Err(Error::Parameter(format!("beta must lie in [alpha, 2), got {beta}")));
        }
        if !(c_lower > 0.0 && c_upper > 0.0 && eta4 > 0.0) {
            return Err(Error::Parameter("scaling constants and eta4 must be positive".into()));
        }
        let eta4 = eta4.min(*table.x.last().expect("non-empty"));
        Ok(LevyModel1D {
            family: Family::Tabulated(Arc::new(table)),
            index: alpha,
            alpha,
            beta,
            c_lower,
            c_upper,
            eta4,
        })
    }

    /// Override the declared scaling metadata (validated later by [`verify_scaling`]).
    pub fn with_scaling(mut self, alpha: f64, beta: f64, c_lower: f64, c_upper: f64) -> Result<Self> {
        check_index(alpha)?;
        if !(beta >= alpha && beta < 2.0) {
            return Err(Error::Parameter(format!("beta must lie in [alpha, 2), got {beta}")));
        }
        if !(c_lower > 0.0 && c_upper > 0.0) {
            return Err(Error::Parameter("scaling constants must be positive".into()));
        }
        self.alpha = alpha;
        self.beta = beta;
        self.c_lower = c_lower;
        self.c_upper = c_upper;
        Ok(self)
    }

    pub fn family_tag(&self) -> FamilyTag {
        match self.family {
            Family::Stable => FamilyTag::Stable,
            Family::Relativistic { .. } => FamilyTag::Relativistic,
            Family::TruncatedStable => FamilyTag::TruncatedStable,
            Family::Tabulated(_) => FamilyTag::Custom,
        }
    }

    pub fn scaling_constants(&self, tau: f64) -> Result<ScalingConstants> {
        ScalingConstants::new(self, tau)
    }
}

impl LevyMeasure for LevyModel1D {
    fn density(&self, x: f64) -> f64 {
        match &self.family {
            Family::Stable => stable_constant(self.index) * x.powf(-1.0 - self.index),
            Family::TruncatedStable => {
                if x < 1.0 {
                    stable_constant(self.index) * x.powf(-1.0 - self.index)
                } else {
                    0.0
                }
            }
            Family::Relativistic { m } => {
                let g = self.index / 2.0;
                let mu = m.powf(2.0 / self.index);
                let order = g + 0.5;
                let z = x * mu.sqrt();
                g / (gamma(1.0 - g) * PI.sqrt())
                    * (4.0 * mu / (x * x)).powf(order / 2.0)
                    * bessel_k_scaled(order, z)
                    * (-z).exp()
            }
            Family::Tabulated(t) => t.eval(x),
        }
    }

    fn density_prime(&self, x: f64) -> f64 {
        match &self.family {
            Family::Stable => -(1.0 + self.index) * self.density(x) / x,
            Family::TruncatedStable if x < 1.0 => -(1.0 + self.index) * self.density(x) / x,
            _ => {
                let h = 1e-5 * x;
                (self.density(x + h) - self.density(x - h)) / (2.0 * h)
            }
        }
    }

    fn second_moment(&self, r: f64) -> Result<f64> {
        let a = self.index;
        let c = stable_constant(a);
        match &self.family {
            Family::Stable => Ok(c * r.powf(2.0 - a) / (2.0 - a)),
            Family::TruncatedStable => Ok(c * r.min(1.0).powf(2.0 - a) / (2.0 - a)),
            _ => {
                let breaks = self.breakpoints();
                let tol = Tol { abs: 1e-300, rel: 1e-12, max_segments: 4000 };
                // Substitute x = r u^k to tame the x^{1-α} endpoint.
                let k = 4.0;
                let f = |u: f64| {
                    let x = r * u.powf(k);
                    x * x * self.density(x) * r * k * u.powf(k - 1.0)
                };
                let ub: Vec<f64> = breaks.iter().filter(|b| **b < r).map(|b| (b / r).powf(1.0 / k)).collect();
                quad::adaptive_with_breaks(f, 0.0, 1.0, &ub, tol, "second moment").map(|v| v.0)
            }
        }
    }

    fn tail_mass(&self, r: f64) -> Result<f64> {
        let a = self.index;
        let c = stable_constant(a);
        match &self.family {
            Family::Stable => Ok(c * r.powf(-a) / a),
            Family::TruncatedStable => {
                if r >= 1.0 {
                    Ok(0.0)
                } else {
                    Ok(c * (r.powf(-a) - 1.0) / a)
                }
            }
            Family::Relativistic { .. } => {
                let tol = Tol { abs: 1e-300, rel: 1e-12, max_segments: 4000 };
                quad::adaptive_to_infinity(|x| self.density(x), r, tol, "tail mass").map(|v| v.0)
            }
            Family::Tabulated(t) => {
                let end = *t.x.last().expect("non-empty");
                if r >= end {
                    return Ok(0.0);
                }
                let tol = Tol { abs: 1e-300, rel: 1e-12, max_segments: 20000 };
                let breaks: Vec<f64> = t.x.iter().copied().filter(|x| *x > r && *x < end).collect();
                quad::adaptive_with_breaks(|x| self.density(x), r, end, &breaks, tol, "tail mass").map(|v| v.0)
            }
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match &self.family {
            Family::TruncatedStable => vec![1.0],
            Family::Tabulated(t) => t.x.clone(),
            _ => Vec::new(),
        }
    }

    fn support_end(&self) -> Option<f64> {
        match &self.family {
            Family::TruncatedStable => Some(1.0),
            Family::Tabulated(t) => t.x.last().copied(),
            _ => None,
        }
    }

    fn psi_closed(&self, xi: f64) -> Option<f64> {
        match self.family {
            Family::Stable => Some(xi.abs().powf(self.index)),
            Family::Relativistic { m } => {
                let a = self.index;
                let m2 = m.powf(2.0 / a);
                // (m2 + ξ²)^{a/2} − m, written to avoid cancellation for small ξ.
                let base = m2 + xi * xi;
                let full = base.powf(a / 2.0);
                if xi * xi < 1e-6 * m2 {
                    let u = xi * xi / m2;
                    Some(m * ((a / 2.0) * u.ln_1p()).exp_m1())
                } else {
                    Some(full - m)
                }
            }
            _ => None,
        }
    }
}

/// C₁..C₄ for a model and horizon τ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl ScalingConstants {
    pub fn new(model: &LevyModel1D, tau: f64) -> Result<ScalingConstants> {
        if !(tau > 0.0) {
            return Err(Error::Parameter(format!("horizon must be positive, got {tau}")));
        }
        let c1 = model.c_lower / (PI * PI);
        let c2 = PI * PI * model.c_upper;
        let h1 = model.h(1.0)?;
        let c3 = c1.powf(1.0 / model.alpha) * h1.min(1.0 / tau).powf(1.0 / model.alpha);
        let c4 = c2.powf(1.0 / model.beta) * model.h_inverse(1.0 / tau)?.max(1.0) * h1.powf(1.0 / model.beta);
        Ok(ScalingConstants { c1, c2, c3, c4 })
    }

    /// Bracket [C₃ t^{1/α}, C₄ t^{1/β}] for h⁻¹(1/t), t ≤ τ.
    pub fn h_inverse_bracket(&self, model: &LevyModel1D, t: f64) -> (f64, f64) {
        (self.c3 * t.powf(1.0 / model.alpha), self.c4 * t.powf(1.0 / model.beta))
    }
}

/// Empirical scaling certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    /// inf ψ(λθ)/(λ^α ψ(θ)) over λ ≥ 1, θ > 0.
    pub c_lower_candidate: f64,
    /// sup ψ(λθ)/(λ^β ψ(θ)) over λ ≥ 1, θ ≥ 1.
    pub c_upper_candidate: f64,
    pub lower_violated: bool,
    pub upper_violated: bool,
}

impl ScalingReport {
    pub fn passed(&self) -> bool {
        !self.lower_violated && !self.upper_violated
    }
}

pub fn verify_scaling<M: LevyMeasure + ?Sized>(
    model: &M,
    alpha: f64,
    beta: f64,
    c_lower: f64,
    c_upper: f64,
    lambda_grid: &[f64],
    theta_grid: &[f64],
) -> Result<ScalingReport> {
    if lambda_grid.is_empty() || theta_grid.is_empty() {
        return Err(Error::Parameter("scaling grids must be nonempty".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &th in theta_grid.iter().filter(|t| **t > 0.0) {
        let p = model.psi(th)?;
        for &l in lambda_grid.iter().filter(|l| **l >= 1.0) {
            let q = model.psi(l * th)?;
            lo = lo.min(q / (l.powf(alpha) * p));
            if th >= 1.0 {
                hi = hi.max(q / (l.powf(beta) * p));
            }
        }
    }
    Ok(ScalingReport {
        c_lower_candidate: lo,
        c_upper_candidate: hi,
        lower_violated: lo < c_lower * (1.0 - 1e-6),
        upper_violated: hi > c_upper * (1.0 + 1e-6),
    })
}

/// Scaling check against the model's own declared constants.
pub fn verify_model_scaling(model: &LevyModel1D, lambda_grid: &[f64], theta_grid: &[f64]) -> Result<ScalingReport> {
    verify_scaling(
        model,
        model.alpha,
        model.beta,
        model.c_lower,
        model.c_upper,
        lambda_grid,
        theta_grid,
    )
}

/// (2/π²) h(r) ≤ ψ(1/r) ≤ 2 h(r) at every grid point (1e-9 relative slack).
pub fn check_equivalence_h_psi<M: LevyMeasure + ?Sized>(model: &M, r_grid: &[f64]) -> Result<bool> {
    for &r in r_grid {
        let h = model.h(r)?;
        let p = model.psi(1.0 / r)?;
        let slack = 1e-9 * h;
        if p < 2.0 / (PI * PI) * h - slack || p > 2.0 * h + slack {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Result of the sampled-grid checks of the structural assumptions on ν.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub grid_points: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub positive_finite: bool,
    pub c1_smooth: bool,
    pub decreasing: bool,
    pub minus_derivative_over_x_nonincreasing: bool,
    pub h1_finite: bool,
    /// Partial masses ∫_ε^1 ν for ε = 1e-2, 1e-4, 1e-6, 1e-8.
    pub partial_masses: Vec<f64>,
    pub infinite_mass: bool,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.positive_finite
            && self.c1_smooth
            && self.decreasing
            && self.minus_derivative_over_x_nonincreasing
            && self.h1_finite
            && self.infinite_mass
    }
}

/// ν′ (analytic where available, central differences otherwise).
pub fn density_derivative<M: LevyMeasure + ?Sized>(m: &M, x: f64) -> f64 {
    m.density_prime(x)
}

/// Numeric certification of the standing assumptions on a 257-point log grid in (0, η₄).
pub fn check_assumptions<M: LevyMeasure + ?Sized>(m: &M, eta4: f64) -> Result<AssumptionReport> {
    const N: usize = 257;
    let hi = if eta4.is_finite() { eta4 * (1.0 - 1e-3) } else { 10.0 };
    let lo = hi * 1e-4;
    let xs: Vec<f64> = (0..N).map(|i| lo * (hi / lo).powf(i as f64 / (N - 1) as f64)).collect();
    let nu: Vec<f64> = xs.iter().map(|&x| m.density(x)).collect();
    let positive_finite = nu.iter().all(|v| *v > 0.0 && v.is_finite());
    let d: Vec<f64> = xs.iter().map(|&x| density_derivative(m, x)).collect();
    let decreasing = d.iter().all(|v| *v < 0.0);
    // C¹: one-sided difference quotients agree with the central one.
    let c1_smooth = xs.iter().zip(&d).all(|(&x, &dc)| {
        let h = 1e-4 * x;
        let fwd = (m.density(x + h) - m.density(x)) / h;
        let bwd = (m.density(x) - m.density(x - h)) / h;
        (fwd - bwd).abs() <= 1e-2 * dc.abs() + 1e-12
    });
    let r: Vec<f64> = xs.iter().zip(&d).map(|(x, dv)| -dv / x).collect();
    let minus_derivative_over_x_nonincreasing = r.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6));
    let h1_finite = m.h(1.0)?.is_finite();
    let top = m.tail_mass(1.0)?;
    let partial_masses: Vec<f64> = [1e-2, 1e-4, 1e-6, 1e-8]
        .iter()
        .map(|&e| m.tail_mass(e).map(|v| v - top))
        .collect::<Result<_>>()?;
    let infinite_mass = partial_masses.windows(2).all(|w| w[1] > w[0] * 1.05);
    Ok(AssumptionReport {
        grid_points: N,
        grid_lo: lo,
        grid_hi: hi,
        positive_finite,
        c1_smooth,
        decreasing,
        minus_derivative_over_x_nonincreasing,
        h1_finite,
        partial_masses,
        infinite_mass,
    })
}

/// Mom(t, η) = ∫_0^1 x^η (1/h⁻¹(1/t) ∧ t h(x)/x) dx.
pub fn moment_integral<M: LevyMeasure + ?Sized>(m: &M, t: f64, eta: f64) -> Result<f64> {
    let cap = 1.0 / m.h_inverse(1.0 / t)?;
    let f = |x: f64| {
        if x <= 0.0 {
            return 0.0;
        }
        let g = match m.h(x) {
            Ok(h) => (t * h / x).min(cap),
            Err(_) => cap,
        };
        x.powf(eta) * g
    };
    let tol = Tol { abs: 1e-300, rel: 1e-9, max_segments: 4000 };
    let kink = 1.0 / cap;
    quad::adaptive_with_breaks(f, 0.0, 1.0, &[kink], tol, "moment diagnostic").map(|v| v.0)
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Log-spaced grid of `n` points on [a, b].
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a * (b / a).powf(i as f64 / (n - 1) as f64)).collect()
}
