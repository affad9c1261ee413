//! Euler simulation of dX = A(X₋)dZ as an independent check of the
//! parametrix pipeline.
//!
//! Coordinate increments are drawn from the full Lévy law: stable laws
//! exactly (Chambers–Mallows–Stuck), relativistic laws by subordination,
//! and compactly supported or tabulated laws as compound Poisson jumps above
//! a cut ρ plus a Gaussian surrogate (or nothing) for the jumps below it.
//!
//! Every path owns the ChaCha8 stream `path index` under the configured
//! seed, and batch moments are merged in a fixed order, so estimates are
//! bit-identical for any thread count on one platform. Different platforms
//! may differ in the last bits of `sin`/`pow`.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::field::CoefficientField;
use crate::levy::{Family, LevyMeasure, LevyModel1D};

/// Treatment of the jumps below the compound-Poisson cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallJumpPolicy {
    GaussianSurrogate,
    Discard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub policy: SmallJumpPolicy,
    /// Compound-Poisson cut ρ.
    pub rho: f64,
}

/// Paths per reduction batch; fixed so the merge order never depends on threads.
const BATCH: usize = 1024;

impl SimConfig {
    /// Defaults: 256 steps, Gaussian surrogate, ρ = δ/4.
    pub fn new(n_paths: usize, seed: u64, delta: f64) -> SimConfig {
        SimConfig { n_paths, n_steps: 256, seed, policy: SmallJumpPolicy::GaussianSurrogate, rho: delta / 4.0 }
    }

    pub fn validate(&self, models: &[LevyModel1D]) -> Result<()> {
        if self.n_paths == 0 || self.n_steps == 0 {
            return Err(Error::Parameter("n_paths and n_steps must be at least 1".into()));
        }
        for m in models {
            if !(self.rho > 0.0 && self.rho < m.eta4) {
                return Err(Error::Parameter(format!("cut rho = {} must lie in (0, eta4 = {})", self.rho, m.eta4)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation / √n_paths.
    pub stderr: f64,
    pub n_paths: usize,
    pub elapsed: Duration,
}

/// Inverse of the tail r ↦ ∫_r^end ν on [ρ, end], tabulated in log–log space.
#[derive(Debug, Clone)]
struct TailTable {
    log_r: Vec<f64>,
    log_tail: Vec<f64>,
}

impl TailTable {
    fn new(model: &LevyModel1D, rho: f64, end: f64) -> Result<TailTable> {
        let n = 2048;
        let (a, b) = (rho.ln(), end.ln());
        let mut log_r = Vec::with_capacity(n);
        let mut log_tail = Vec::with_capacity(n);
        for k in 0..n - 1 {
            let r = (a + (b - a) * k as f64 / (n - 1) as f64).exp();
            log_r.push(r.ln());
            log_tail.push(model.tail_mass(r)?.ln());
        }
        // The tail vanishes at the end of the support; close the table with a
        // point just inside it so the last cell stays finite in log space.
        let r = end * (1.0 - 1e-9);
        log_r.push(r.ln());
        log_tail.push(model.tail_mass(r)?.max(f64::MIN_POSITIVE).ln());
        Ok(TailTable { log_r, log_tail })
    }

    /// r with tail(r) = u · tail(ρ), u ∈ (0, 1].
    fn invert(&self, u: f64) -> f64 {
        let target = self.log_tail[0] + u.ln();
        // log_tail decreases.
        let k = self.log_tail.partition_point(|v| *v > target).clamp(1, self.log_r.len() - 1);
        let (t0, t1) = (self.log_tail[k - 1], self.log_tail[k]);
        let s = if t1 < t0 { (t0 - target) / (t0 - t1) } else { 0.0 };
        (self.log_r[k - 1] + s * (self.log_r[k] - self.log_r[k - 1])).exp()
    }
}

#[derive(Debug, Clone)]
enum JumpLaw {
    /// ν ∝ |x|^{−1−α} on ρ < |x| < 1.
    TruncatedPower { alpha: f64, rho_pow: f64 },
    Table(TailTable),
}

#[derive(Debug, Clone)]
enum Kind {
    Stable { alpha: f64, scale: f64 },
    /// √(2S)·N with S the tempered stable subordinator increment.
    Subordinated { a: f64, scale: f64, theta: f64 },
    CompoundPoisson { rate: f64, jump: JumpLaw, sd: f64, poisson: Option<Poisson<f64>> },
}

/// Increment sampler of one coordinate for a fixed step dt.
#[derive(Debug, Clone)]
pub struct IncrementSampler {
    kind: Kind,
}

impl IncrementSampler {
    pub fn new(model: &LevyModel1D, dt: f64, cfg: &SimConfig) -> Result<IncrementSampler> {
        if !(dt > 0.0) {
            return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
        }
        let compound = |jump: JumpLaw| -> Result<Kind> {
            let rate = 2.0 * model.tail_mass(cfg.rho)? * dt;
            let sd = match cfg.policy {
                SmallJumpPolicy::GaussianSurrogate => (2.0 * model.second_moment(cfg.rho)? * dt).sqrt(),
                SmallJumpPolicy::Discard => 0.0,
            };
            let poisson = if rate > 0.0 {
                Some(Poisson::new(rate).map_err(|e| Error::Parameter(format!("jump rate {rate}: {e}")))?)
            } else {
                None
            };
            Ok(Kind::CompoundPoisson { rate, jump, sd, poisson })
        };
        let kind = match &model.family {
            Family::Stable => Kind::Stable { alpha: model.index, scale: dt.powf(1.0 / model.index) },
            Family::Relativistic { m } => {
                let a = model.index / 2.0;
                Kind::Subordinated { a, scale: dt.powf(1.0 / a), theta: m.powf(2.0 / model.index) }
            }
            Family::TruncatedStable => {
                let alpha = model.index;
                if cfg.rho >= 1.0 {
                    return Err(Error::Parameter("cut rho must lie inside the support (0, 1)".into()));
                }
                compound(JumpLaw::TruncatedPower { alpha, rho_pow: cfg.rho.powf(-alpha) })?
            }
            Family::Tabulated(_) => {
                let end = model.support_end().ok_or_else(|| Error::Unsupported("tabulated law without finite support".into()))?;
                if cfg.rho >= end {
                    return Err(Error::Parameter("cut rho must lie inside the tabulated support".into()));
                }
                compound(JumpLaw::Table(TailTable::new(model, cfg.rho, end)?))?
            }
        };
        Ok(IncrementSampler { kind })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            Kind::Stable { alpha, scale } => scale * standard_stable(*alpha, rng),
            Kind::Subordinated { a, scale, theta } => {
                let s = loop {
                    let s = scale * positive_stable(*a, rng);
                    if rng.random::<f64>() < (-theta * s).exp() {
                        break s;
                    }
                };
                let n: f64 = StandardNormal.sample(rng);
                (2.0 * s).sqrt() * n
            }
            Kind::CompoundPoisson { rate, jump, sd, poisson } => {
                let mut x = if *sd > 0.0 {
                    let n: f64 = StandardNormal.sample(rng);
                    sd * n
                } else {
                    0.0
                };
                if *rate > 0.0 {
                    let k = poisson.as_ref().map_or(0.0, |p| p.sample(rng)) as usize;
                    for _ in 0..k {
                        // 1 − u keeps the uniform in (0, 1].
                        let u = 1.0 - rng.random::<f64>();
                        let r = match jump {
                            JumpLaw::TruncatedPower { alpha, rho_pow } => (1.0 + u * (rho_pow - 1.0)).powf(-1.0 / alpha),
                            JumpLaw::Table(t) => t.invert(u),
                        };
                        x += if rng.random::<bool>() { r } else { -r };
                    }
                }
                x
            }
        }
    }
}

/// Symmetric stable variable with E e^{iξX} = e^{−|ξ|^α}.
fn standard_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    if (alpha - 1.0).abs() < 1e-12 {
        return v.tan();
    }
    let w: f64 = Exp1.sample(rng);
    (alpha * v).sin() / v.cos().powf(1.0 / alpha) * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Positive stable variable with E e^{−λS} = e^{−λ^a}, 0 < a < 1 (Kanter).
fn positive_stable<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let v = PI * (1.0 - rng.random::<f64>());
    let e: f64 = Exp1.sample(rng);
    (a * v).sin() / v.sin().powf(1.0 / a) * (((1.0 - a) * v).sin() / e).powf((1.0 - a) / a)
}

/// One draw of Z_dt for a single model; builds the sampler on every call.
pub fn sample_increment<R: Rng + ?Sized>(model: &LevyModel1D, dt: f64, cfg: &SimConfig, rng: &mut R) -> Result<f64> {
    Ok(IncrementSampler::new(model, dt, cfg)?.sample(rng))
}

/// Samplers for every coordinate at the step t / n_steps.
pub fn samplers(models: &[LevyModel1D], t: f64, cfg: &SimConfig) -> Result<Vec<IncrementSampler>> {
    cfg.validate(models)?;
    if !(t > 0.0) {
        return Err(Error::Parameter(format!("simulation time must be positive, got {t}")));
    }
    let dt = t / cfg.n_steps as f64;
    models.iter().map(|m| IncrementSampler::new(m, dt, cfg)).collect()
}

/// X_t of the Euler scheme X_{k+1} = X_k + A(X_k)ΔZ_k.
pub fn euler_path<R: Rng + ?Sized>(
    field: &CoefficientField,
    samplers: &[IncrementSampler],
    x0: &[f64],
    n_steps: usize,
    rng: &mut R,
) -> Vec<f64> {
    let d = x0.len();
    if d == 2 {
        let mut x = [x0[0], x0[1]];
        for _ in 0..n_steps {
            let a = field.a2(x);
            let dz = [samplers[0].sample(rng), samplers[1].sample(rng)];
            x = [x[0] + a[0][0] * dz[0] + a[0][1] * dz[1], x[1] + a[1][0] * dz[0] + a[1][1] * dz[1]];
        }
        return x.to_vec();
    }
    let mut x = x0.to_vec();
    let mut dz = vec![0.0; d];
    for _ in 0..n_steps {
        let a = field.a(&x);
        for (z, s) in dz.iter_mut().zip(samplers) {
            *z = s.sample(rng);
        }
        let step = a.mul_vec(&dz);
        x.iter_mut().zip(&step).for_each(|(v, s)| *v += s);
    }
    x
}

/// Generator owned by one path.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

fn check_inputs(field: &CoefficientField, models: &[LevyModel1D], x0: &[f64]) -> Result<()> {
    if models.len() != field.dim || x0.len() != field.dim {
        return Err(Error::Parameter("dimension mismatch between field, models and start point".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite start point".into()));
    }
    Ok(())
}

/// Endpoints X_t of `cfg.n_paths` paths from x0, in path order.
pub fn endpoints(field: &CoefficientField, models: &[LevyModel1D], x0: &[f64], t: f64, cfg: &SimConfig) -> Result<Vec<Vec<f64>>> {
    check_inputs(field, models, x0)?;
    let s = samplers(models, t, cfg)?;
    Ok((0..cfg.n_paths)
        .into_par_iter()
        .map(|p| euler_path(field, &s, x0, cfg.n_steps, &mut path_rng(cfg.seed, p as u64)))
        .collect())
}

/// (count, mean, M2) of a batch, merged by Chan's rule.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if o.n == 0.0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments { n, mean: self.mean + d * o.n / n, m2: self.m2 + o.m2 + d * d * self.n * o.n / n }
    }
}

/// E^{x0} f_j(X_t) for several functions on the same paths.
pub fn estimate_many(
    field: &CoefficientField,
    models: &[LevyModel1D],
    x0: &[f64],
    fs: &[&(dyn Fn(&[f64]) -> f64 + Sync)],
    t: f64,
    cfg: &SimConfig,
) -> Result<Vec<McEstimate>> {
    check_inputs(field, models, x0)?;
    let start = Instant::now();
    let s = samplers(models, t, cfg)?;
    let n_batches = cfg.n_paths.div_ceil(BATCH);
    let batches: Vec<Vec<Moments>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut m = vec![Moments::default(); fs.len()];
            for p in b * BATCH..((b + 1) * BATCH).min(cfg.n_paths) {
                let x = euler_path(field, &s, x0, cfg.n_steps, &mut path_rng(cfg.seed, p as u64));
                for (mj, f) in m.iter_mut().zip(fs) {
                    mj.push(f(&x));
                }
            }
            m
        })
        .collect();
    let elapsed = start.elapsed();
    Ok((0..fs.len())
        .map(|j| {
            let m = batches.iter().fold(Moments::default(), |acc, b| acc.merge(b[j]));
            let var = if m.n > 1.0 { m.m2 / (m.n - 1.0) } else { 0.0 };
            McEstimate { mean: m.mean, stderr: (var / m.n).sqrt(), n_paths: cfg.n_paths, elapsed }
        })
        .collect())
}

/// P_t f(x0) = E^{x0} f(X_t).
pub fn estimate_ptf(
    field: &CoefficientField,
    models: &[LevyModel1D],
    x0: &[f64],
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    t: f64,
    cfg: &SimConfig,
) -> Result<McEstimate> {
    Ok(estimate_many(field, models, x0, &[f], t, cfg)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZReport {
    pub diff: f64,
    pub z: f64,
    pub pass: bool,
}

/// z = (parametrix − mc)/(stderr + model_tol); passes iff |z| ≤ 3.
pub fn compare(parametrix_value: f64, mc: &McEstimate, model_tol: f64) -> ZReport {
    let diff = parametrix_value - mc.mean;
    let den = mc.stderr + model_tol;
    let z = if den > 0.0 {
        diff / den
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    ZReport { diff, z, pass: z.abs() <= 3.0 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    /// Upper critical value at the requested level.
    pub critical: f64,
    pub p_value: f64,
}

impl ChiSquareReport {
    pub fn passed(&self) -> bool {
        self.statistic <= self.critical
    }
}

/// Pearson χ² of observed counts against cell probabilities (the remainder
/// 1 − Σp forms one extra cell). Cells with expected count below 5 are
/// pooled with their right neighbour.
pub fn chi_square(counts: &[u64], probs: &[f64], outside: u64, level: f64) -> Result<ChiSquareReport> {
    if counts.len() != probs.len() || counts.is_empty() {
        return Err(Error::Parameter("counts and probabilities must match".into()));
    }
    let n = (counts.iter().sum::<u64>() + outside) as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (c, p) in counts.iter().zip(probs) {
        o += *c as f64;
        e += p * n;
        if e >= 5.0 {
            cells.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    let rest = (1.0 - probs.iter().sum::<f64>()).max(0.0) * n;
    o += outside as f64;
    e += rest;
    if e >= 5.0 || cells.is_empty() {
        cells.push((o, e));
    } else if let Some(last) = cells.last_mut() {
        last.0 += o;
        last.1 += e;
    }
    if cells.len() < 2 {
        return Err(Error::Parameter("too few populated cells for a chi-square test".into()));
    }
    let statistic = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(ChiSquareReport { statistic, dof, critical: dist.inverse_cdf(1.0 - level), p_value: 1.0 - dist.cdf(statistic) })
}

/// Two-sample Kolmogorov–Smirnov statistic sup|F_a − F_b|.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Asymptotic critical value of the two-sample KS statistic at `level`.
pub fn ks_critical(n: usize, m: usize, level: f64) -> f64 {
    let c = (-0.5 * (level / 2.0).ln()).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}
