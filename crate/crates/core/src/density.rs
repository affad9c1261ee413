//! One-dimensional truncated transition densities g_t^(δ) by discrete Fourier
//! inversion of e^{−tψ^(δ)}, their first two derivatives, and the analytic
//! envelopes g* and g̃ used as sanity bounds.
//!
//! Convention: g(x) = (1/2π) ∫ e^{−iξx} ĝ(ξ) dξ, so ∂ₓ acts as multiplication
//! by −iξ on the spectral side.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::levy::LevyMeasure;
use crate::truncation::TruncatedModel1D;

/// Largest transform length tried by the grid policy.
pub const MAX_LOG2_N: u32 = 22;

/// Uniform grid x_j = −L + jΔx (j < n) with its conjugate frequency grid.
#[derive(Clone)]
pub struct SpectralGrid {
    pub half_width: f64,
    pub n: usize,
    pub dx: f64,
    pub dxi: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("half_width", &self.half_width)
            .field("n", &self.n)
            .finish()
    }
}

impl SpectralGrid {
    pub fn new(half_width: f64, n: usize) -> Result<SpectralGrid> {
        if !(half_width > 0.0) || n < 16 || !n.is_power_of_two() {
            return Err(Error::Parameter(format!("grid needs L > 0 and n a power of two ≥ 16 (L={half_width}, n={n})")));
        }
        let dx = 2.0 * half_width / n as f64;
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(SpectralGrid { half_width, n, dx, dxi: std::f64::consts::PI / half_width, fft })
    }

    /// Frequency at FFT index k (0, Δξ, …, then negative frequencies).
    pub fn xi(&self, k: usize) -> f64 {
        let k = k as i64;
        let n = self.n as i64;
        let kk = if k < n / 2 { k } else { k - n };
        kk as f64 * self.dxi
    }

    /// Largest resolved |ξ|.
    pub fn xi_max(&self) -> f64 {
        self.dxi * (self.n / 2) as f64
    }

    /// Spatial node j in natural order.
    pub fn x(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Inverse transform of a spectrum given in FFT order, returned in
    /// natural spatial order. Spectra are assumed Hermitian (real output).
    pub fn invert(&self, spec: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(spec.len(), self.n);
        let n = self.n;
        let mut buf = spec.to_vec();
        // Only −ξ_max is stored; for Hermitian spectra splitting it evenly
        // between ±ξ_max leaves its real part.
        buf[n / 2] = Complex64::new(buf[n / 2].re, 0.0);
        self.fft.process(&mut buf);
        let scale = self.dxi / (2.0 * std::f64::consts::PI);
        // The transform yields x in FFT order; natural index j sits at (j + n/2) mod n.
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (j, o) in out.iter_mut().enumerate() {
            let src = (j + n / 2) % n;
            *o = buf[src] * scale;
        }
        out
    }

    /// Forward transform ĝ(ξ_k) ≈ Δx Σ g(x_j) e^{iξ_k x_j} of data in natural order.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let n = self.n;
        // Place x = 0 at index 0, then e^{+iξx}: conjugate-FFT-conjugate.
        let mut buf: Vec<Complex64> = (0..n).map(|j| Complex64::new(values[(j + n / 2) % n], 0.0)).collect();
        for b in buf.iter_mut() {
            *b = b.conj();
        }
        self.fft.process(&mut buf);
        buf.iter().map(|b| b.conj() * self.dx).collect()
    }
}

/// ψ^(δ) and its ξ-derivatives tabulated on a spectral grid (FFT order).
#[derive(Debug, Clone)]
pub struct PsiTable {
    pub grid: SpectralGrid,
    /// derivs[n][k] = ψ^{(n)}(ξ_k).
    pub derivs: Vec<Vec<f64>>,
}

impl PsiTable {
    pub fn new(tm: &TruncatedModel1D, grid: &SpectralGrid, nmax: usize) -> PsiTable {
        let n = grid.n;
        let half = tm.psi_derivatives_uniform(grid.dxi, n / 2 + 1, nmax);
        let derivs = half
            .into_iter()
            .enumerate()
            .map(|(order, v)| {
                (0..n)
                    .map(|k| {
                        if k <= n / 2 {
                            v[k]
                        } else {
                            let s = if order % 2 == 1 { -1.0 } else { 1.0 };
                            s * v[n - k]
                        }
                    })
                    .collect()
            })
            .collect();
        PsiTable { grid: grid.clone(), derivs }
    }

    pub fn psi(&self) -> &[f64] {
        &self.derivs[0]
    }
}

/// Values and derivatives of a smooth function on a uniform grid, evaluated
/// by cubic Hermite interpolation; zero outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub x0: f64,
    pub dx: f64,
    pub v: Vec<f64>,
    pub d: Vec<f64>,
}

impl Profile {
    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.x0) / self.dx;
        if !(u >= 0.0) {
            return 0.0;
        }
        let j = u.floor() as usize;
        if j + 1 >= self.v.len() {
            return 0.0;
        }
        let s = u - j as f64;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.v[j] + h10 * self.dx * self.d[j] + h01 * self.v[j + 1] + h11 * self.dx * self.d[j + 1]
    }

    pub fn end(&self) -> f64 {
        self.x0 + self.dx * (self.v.len() - 1) as f64
    }

    /// Interpolation weights at x, reusable across profiles on the same grid.
    #[inline]
    pub fn locate(&self, x: f64) -> Hermite {
        let u = (x - self.x0) / self.dx;
        if !(u >= 0.0) || u as usize + 1 >= self.v.len() {
            return Hermite { j: usize::MAX, w: [0.0; 4] };
        }
        let j = u as usize;
        let s = u - j as f64;
        let s2 = s * s;
        let s3 = s2 * s;
        Hermite {
            j,
            w: [2.0 * s3 - 3.0 * s2 + 1.0, (s3 - 2.0 * s2 + s) * self.dx, -2.0 * s3 + 3.0 * s2, (s3 - s2) * self.dx],
        }
    }

    #[inline]
    pub fn eval_at(&self, h: &Hermite) -> f64 {
        if h.j == usize::MAX {
            return 0.0;
        }
        let j = h.j;
        h.w[0] * self.v[j] + h.w[1] * self.d[j] + h.w[2] * self.v[j + 1] + h.w[3] * self.d[j + 1]
    }
}

/// Density of the untruncated law Z_t at time t on `grid`, by inversion of
/// e^{−tψ}; used as the reference law for simulation checks.
pub fn law_density<M: LevyMeasure + ?Sized>(model: &M, t: f64, grid: &SpectralGrid) -> Result<Profile> {
    if !(t > 0.0) {
        return Err(Error::Parameter(format!("law_density needs t > 0, got {t}")));
    }
    let n = grid.n;
    let half: Vec<f64> = (0..=n / 2)
        .into_par_iter()
        .map(|k| model.psi(k as f64 * grid.dxi).map(|p| (-t * p).exp()))
        .collect::<Result<_>>()?;
    if half[n / 2] >= 1e-14 {
        return Err(Error::Resolution(format!("spectral tail {:.3e} at t = {t}; increase n", half[n / 2])));
    }
    let e = |k: usize| if k <= n / 2 { half[k] } else { half[n - k] };
    let s0: Vec<Complex64> = (0..n).map(|k| Complex64::new(e(k), 0.0)).collect();
    let s1: Vec<Complex64> = (0..n).map(|k| Complex64::new(0.0, -grid.xi(k)) * e(k)).collect();
    Ok(Profile {
        x0: grid.x(0),
        dx: grid.dx,
        v: grid.invert(&s0).iter().map(|c| c.re.max(0.0)).collect(),
        d: grid.invert(&s1).iter().map(|c| c.re).collect(),
    })
}

/// Cubic Hermite weights at one abscissa (`j == usize::MAX` means outside).
#[derive(Debug, Clone, Copy)]
pub struct Hermite {
    pub j: usize,
    pub w: [f64; 4],
}

/// g_t^(δ), ∂ₓg and ∂ₓ²g for a list of times on one spectral grid.
#[derive(Debug, Clone)]
pub struct DensityTable {
    pub tmodel: TruncatedModel1D,
    pub times: Vec<f64>,
    pub grid: SpectralGrid,
    pub values: Vec<Vec<f64>>,
    pub d1: Vec<Vec<f64>>,
    pub d2: Vec<Vec<f64>>,
    /// Fitted exponential decay rate of the right tail per time.
    pub tail_rate: Vec<f64>,
    /// Most negative raw value before clipping, per time.
    pub min_raw: Vec<f64>,
}

/// Spectrally differentiated inversion of e^{−tψ}.
pub fn invert_heat(psi: &PsiTable, t: f64) -> [Vec<f64>; 3] {
    let g = &psi.grid;
    let n = g.n;
    let e: Vec<f64> = psi.psi().iter().map(|p| (-t * p).exp()).collect();
    let s0: Vec<Complex64> = e.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    let s1: Vec<Complex64> = (0..n).map(|k| Complex64::new(0.0, -g.xi(k)) * e[k]).collect();
    let s2: Vec<Complex64> = (0..n).map(|k| Complex64::new(-g.xi(k) * g.xi(k) * e[k], 0.0)).collect();
    [g.invert(&s0), g.invert(&s1), g.invert(&s2)].map(|v| v.into_iter().map(|c| c.re).collect())
}

impl DensityTable {
    /// Build tables with an explicit grid; checks the spectral tail at the smallest time.
    pub fn compute(tm: &TruncatedModel1D, times: &[f64], half_width: f64, n: usize) -> Result<DensityTable> {
        let grid = SpectralGrid::new(half_width, n)?;
        let psi = PsiTable::new(tm, &grid, 0);
        Self::from_psi(tm, &psi, times)
    }

    /// Build tables on a grid chosen by the policy: n doubles until
    /// e^{−t_min ψ^(δ)(ξ_max)} < 1e−14.
    pub fn with_policy(tm: &TruncatedModel1D, times: &[f64], half_width: f64) -> Result<DensityTable> {
        let tmin = times.iter().cloned().fold(f64::INFINITY, f64::min);
        for p in 10..=MAX_LOG2_N {
            let n = 1usize << p;
            let xi_max = std::f64::consts::PI / half_width * (n / 2) as f64;
            if (-tmin * tm.psi(xi_max)?).exp() < 1e-14 {
                return Self::compute(tm, times, half_width, n);
            }
        }
        Err(Error::Resolution(format!(
            "spectral tail above 1e-14 at t = {tmin} even with n = 2^{MAX_LOG2_N}"
        )))
    }

    pub fn from_psi(tm: &TruncatedModel1D, psi: &PsiTable, times: &[f64]) -> Result<DensityTable> {
        if times.is_empty() || times.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Parameter("times must be positive and nonempty".into()));
        }
        let mut times = times.to_vec();
        times.sort_by(f64::total_cmp);
        let tmin = times[0];
        let tail = (-tmin * psi.psi()[psi.grid.n / 2]).exp();
        if tail >= 1e-14 {
            return Err(Error::Resolution(format!(
                "spectral tail e^(-t psi(xi_max)) = {tail:.3e} at t = {tmin}; increase n"
            )));
        }
        let rows: Vec<[Vec<f64>; 3]> = times.par_iter().map(|&t| invert_heat(psi, t)).collect();
        let mut values = Vec::new();
        let mut d1 = Vec::new();
        let mut d2 = Vec::new();
        let mut min_raw = Vec::new();
        let mut tail_rate = Vec::new();
        for (i, [mut v, a, b]) in rows.into_iter().enumerate() {
            let peak = v.iter().cloned().fold(0.0f64, f64::max);
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            if lo < -1e-12 * peak.max(1.0) {
                return Err(Error::Resolution(format!(
                    "negative ringing {lo:.3e} in the density at t = {}",
                    times[i]
                )));
            }
            for x in v.iter_mut() {
                if *x < 0.0 {
                    *x = 0.0;
                }
            }
            tail_rate.push(fit_tail_rate(&psi.grid, &v, peak));
            min_raw.push(lo);
            values.push(v);
            d1.push(a);
            d2.push(b);
        }
        Ok(DensityTable {
            tmodel: tm.clone(),
            times,
            grid: psi.grid.clone(),
            values,
            d1,
            d2,
            tail_rate,
            min_raw,
        })
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|s| (s - t).abs() <= 1e-14 * t.max(1.0))
    }

    /// Δx·Σg at time index i (periodic trapezoid).
    pub fn mass(&self, i: usize) -> f64 {
        self.values[i].iter().sum::<f64>() * self.grid.dx
    }

    /// max_j |g(x_j) − g(−x_j)|.
    pub fn evenness_defect(&self, i: usize) -> f64 {
        let n = self.grid.n;
        let v = &self.values[i];
        (1..n / 2).map(|k| (v[n / 2 + k] - v[n / 2 - k]).abs()).fold(0.0, f64::max)
    }

    pub fn profile(&self, i: usize) -> Profile {
        Profile { x0: self.grid.x(0), dx: self.grid.dx, v: self.values[i].clone(), d: self.d1[i].clone() }
    }

    pub fn derivative_profile(&self, i: usize) -> Profile {
        Profile { x0: self.grid.x(0), dx: self.grid.dx, v: self.d1[i].clone(), d: self.d2[i].clone() }
    }

    /// Value at an arbitrary x for a tabulated time.
    pub fn eval(&self, i: usize, x: f64) -> f64 {
        self.profile(i).eval(x)
    }

    /// CSV rows x, g, g′, g″ for time index i.
    pub fn csv_rows(&self, i: usize) -> impl Iterator<Item = [f64; 4]> + '_ {
        (0..self.grid.n).map(move |j| [self.grid.x(j), self.values[i][j], self.d1[i][j], self.d2[i][j]])
    }
}

fn fit_tail_rate(grid: &SpectralGrid, v: &[f64], peak: f64) -> f64 {
    // Least-squares slope of log g over the right half where g is above the noise floor.
    let n = grid.n;
    let pts: Vec<(f64, f64)> = (n / 2..n)
        .filter(|&j| v[j] > 1e-12 * peak && grid.x(j) > 0.25 * grid.half_width)
        .map(|j| (grid.x(j), v[j].ln()))
        .collect();
    if pts.len() < 2 {
        return f64::INFINITY;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -sxy / sxx
}

/// Parameters of the envelope g̃.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeParams {
    pub epsilon: f64,
    pub tau: f64,
    pub c_eps: f64,
    pub dim: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl EnvelopeParams {
    /// c_ε = (1/h⁻¹(1/τ) ∧ τh(ε)/ε) e^ε / τ^{(d+β−1)/α}.
    pub fn new<M: LevyMeasure + ?Sized>(h_model: &M, epsilon: f64, tau: f64, dim: usize, alpha: f64, beta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) || !(tau > 0.0) {
            return Err(Error::Parameter("need epsilon in (0, 1] and tau > 0".into()));
        }
        let a = (1.0 / h_model.h_inverse(1.0 / tau)?).min(tau * h_model.h(epsilon)? / epsilon);
        let p = (dim as f64 + beta - 1.0) / alpha;
        Ok(EnvelopeParams { epsilon, tau, c_eps: a * epsilon.exp() / tau.powf(p), dim, alpha, beta })
    }
}

/// g*_t(x) = 1/h⁻¹(1/t) ∧ t h(|x|)/|x|, with h the concentration function of ν.
pub fn envelope_gstar<M: LevyMeasure + ?Sized>(h_model: &M, t: f64, x: f64) -> Result<f64> {
    let cap = 1.0 / h_model.h_inverse(1.0 / t)?;
    let a = x.abs();
    if a == 0.0 {
        return Ok(cap);
    }
    Ok(cap.min(t * h_model.h(a)? / a))
}

/// g̃_t^(ε)(x): the g* branch for |x| < ε, c_ε t^{(d+β−1)/α} e^{−|x|} otherwise.
pub fn envelope_gtilde<M: LevyMeasure + ?Sized>(env: &EnvelopeParams, h_model: &M, t: f64, x: f64) -> Result<f64> {
    if x.abs() < env.epsilon {
        envelope_gstar(h_model, t, x)
    } else {
        let p = (env.dim as f64 + env.beta - 1.0) / env.alpha;
        Ok(env.c_eps * t.powf(p) * (-x.abs()).exp())
    }
}

/// Per-time empirical envelope ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport {
    pub times: Vec<f64>,
    /// sup g/g̃, sup|g′|h⁻¹/g̃, sup|g″|(h⁻¹)²/g̃ for each time.
    pub ratios: Vec<[f64; 3]>,
    pub finite: bool,
    /// max/min of each ratio across times.
    pub spread: [f64; 3],
    pub stable: bool,
}

/// Envelope ratios over the grid points with g̃ above 1e−300.
pub fn check_envelope(dt: &DensityTable, env: &EnvelopeParams) -> Result<EnvelopeReport> {
    let base = &dt.tmodel.base;
    let mut ratios = Vec::new();
    let xs = dt.grid.xs();
    // g̃ is even: tabulate once per time on |x|.
    for (i, &t) in dt.times.iter().enumerate() {
        let hi = base.h_inverse(1.0 / t)?;
        let cap = 1.0 / hi;
        let mut r = [0.0f64; 3];
        for (j, &x) in xs.iter().enumerate() {
            let a = x.abs();
            let gt = if a < env.epsilon {
                if a == 0.0 { cap } else { cap.min(t * base.h(a)? / a) }
            } else {
                envelope_gtilde(env, base, t, a)?
            };
            if gt <= 1e-300 {
                continue;
            }
            r[0] = r[0].max(dt.values[i][j] / gt);
            r[1] = r[1].max(dt.d1[i][j].abs() * hi / gt);
            r[2] = r[2].max(dt.d2[i][j].abs() * hi * hi / gt);
        }
        ratios.push(r);
    }
    let finite = ratios.iter().all(|r| r.iter().all(|v| v.is_finite()));
    let mut spread = [1.0f64; 3];
    for k in 0..3 {
        let mx = ratios.iter().map(|r| r[k]).fold(0.0f64, f64::max);
        let mn = ratios.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
        spread[k] = mx / mn.max(1e-300);
    }
    let stable = spread.iter().all(|s| *s <= 3.0);
    Ok(EnvelopeReport { times: dt.times.clone(), ratios, finite, spread, stable })
}

/// ‖g_{t+s} − g_t ⋆ g_s‖∞ with the convolution done spectrally from the tabulated values.
pub fn chapman_kolmogorov_defect(dt: &DensityTable, it: usize, is: usize, its: usize) -> f64 {
    let g = &dt.grid;
    let a = g.forward(&dt.values[it]);
    let b = g.forward(&dt.values[is]);
    let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let conv = g.invert(&prod);
    conv.iter()
        .zip(&dt.values[its])
        .map(|(c, v)| (c.re - v).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::LevyModel1D;
    use crate::truncation::truncate;

    fn table(times: &[f64]) -> DensityTable {
        let tm = truncate(&LevyModel1D::truncated_stable(1.0).unwrap(), 1.0 / 40.0).unwrap();
        DensityTable::compute(&tm, times, 2.0, 1 << 14).unwrap()
    }

    #[test]
    fn forward_inverts() {
        let g = SpectralGrid::new(3.0, 256).unwrap();
        let v: Vec<f64> = g.xs().iter().map(|x| (-x * x * 4.0).exp()).collect();
        let back = g.invert(&g.forward(&v));
        for (a, b) in back.iter().zip(&v) {
            assert!((a.re - b).abs() < 1e-13);
        }
    }

    #[test]
    fn gaussian_spectrum_inverts_to_gaussian() {
        // ĝ = e^{−ξ²} ↔ g = e^{−x²/4}/√(4π)
        let g = SpectralGrid::new(20.0, 1024).unwrap();
        let spec: Vec<Complex64> = (0..g.n).map(|k| Complex64::new((-g.xi(k).powi(2)).exp(), 0.0)).collect();
        let v = g.invert(&spec);
        for j in (0..g.n).step_by(37) {
            let x = g.x(j);
            let exact = (-x * x / 4.0).exp() / (4.0 * std::f64::consts::PI).sqrt();
            assert!((v[j].re - exact).abs() < 1e-14, "x={x}");
        }
    }

    #[test]
    fn mass_and_symmetry() {
        let dt = table(&[0.05, 0.5]);
        for i in 0..2 {
            assert!((dt.mass(i) - 1.0).abs() < 1e-10);
            assert!(dt.evenness_defect(i) < 1e-10);
        }
    }

    #[test]
    fn spectral_derivative_matches_differences() {
        let dt = table(&[0.2]);
        let n = dt.grid.n;
        let h = dt.grid.dx;
        let dmax = dt.d1[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for j in n / 4..3 * n / 4 {
            let v = &dt.values[0];
            let fd = (v[j - 2] - 8.0 * v[j - 1] + 8.0 * v[j + 1] - v[j + 2]) / (12.0 * h);
            assert!((fd - dt.d1[0][j]).abs() < 1e-6 * dmax);
        }
    }

    #[test]
    fn gstar_at_origin_for_cauchy() {
        let m = LevyModel1D::stable(1.0).unwrap();
        let t = std::f64::consts::PI / 4.0;
        assert!((envelope_gstar(&m, t, 0.0).unwrap() - 1.0).abs() < 1e-9);
    }
}
