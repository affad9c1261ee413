//! Experiment configuration: one TOML file per experiment.
//!
//! Parsing rejects unknown keys and reports the line and column of syntax
//! and type errors; the semantic checks that follow name the offending key.

use std::path::{Path, PathBuf};

use levy_parametrix::field::{CoefficientField, FieldKind, Mat, TabulatedField};
use levy_parametrix::levy::{LevyModel1D, Tabulated};
use levy_parametrix::montecarlo::SmallJumpPolicy;
use levy_parametrix::parametrix::AssumptionMode;
use levy_parametrix::semigroup::TestFunction;
use levy_parametrix::truncation::DELTA0_DEFAULT;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// One coordinate's driving law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Stable { alpha: f64 },
    Relativistic { alpha: f64, m: f64 },
    TruncatedStable { alpha: f64 },
    Tabulated { x: Vec<f64>, nu: Vec<f64>, alpha: f64, beta: f64, c_lower: f64, c_upper: f64, eta4: f64 },
}

impl ModelSpec {
    pub fn build(&self) -> levy_parametrix::error::Result<LevyModel1D> {
        match self {
            ModelSpec::Stable { alpha } => LevyModel1D::stable(*alpha),
            ModelSpec::Relativistic { alpha, m } => LevyModel1D::relativistic(*alpha, *m),
            ModelSpec::TruncatedStable { alpha } => LevyModel1D::truncated_stable(*alpha),
            ModelSpec::Tabulated { x, nu, alpha, beta, c_lower, c_upper, eta4 } => {
                LevyModel1D::tabulated(Tabulated::new(x.clone(), nu.clone())?, *alpha, *beta, *c_lower, *c_upper, *eta4)
            }
        }
    }
}

/// Coefficient field A(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Identity,
    /// Rotation of the first two coordinates by θ₀/(1 + |x|²).
    Rotation { theta0: f64 },
    Constant { matrix: Vec<Vec<f64>> },
    Diagonal { values: Vec<f64> },
    /// I + κ e^{−|x − c|²/ℓ²} E with declared constants.
    Bump { kappa: f64, center: Vec<f64>, length: f64, pattern: Vec<Vec<f64>>, eta1: f64, eta2: f64, eta3: f64 },
    /// Bilinear samples of a 2×2 field; values row-major [a00, a01, a10, a11].
    Tabulated { x0: [f64; 2], dx: [f64; 2], n: [usize; 2], values: Vec<[f64; 4]>, eta1: f64, eta2: f64, eta3: f64 },
}

impl FieldSpec {
    pub fn build(&self, dim: usize) -> levy_parametrix::error::Result<CoefficientField> {
        match self {
            FieldSpec::Identity => CoefficientField::identity(dim),
            FieldSpec::Rotation { theta0 } => CoefficientField::new(dim, FieldKind::Rotation { theta0: *theta0 }, 1.0, 1.0, 1.0),
            FieldSpec::Constant { matrix } => CoefficientField::constant(Mat::from_rows(matrix)?),
            FieldSpec::Diagonal { values } => CoefficientField::diagonal(values.clone()),
            FieldSpec::Bump { kappa, center, length, pattern, eta1, eta2, eta3 } => CoefficientField::new(
                dim,
                FieldKind::Bump { kappa: *kappa, center: center.clone(), length: *length, pattern: Mat::from_rows(pattern)? },
                *eta1,
                *eta2,
                *eta3,
            ),
            FieldSpec::Tabulated { x0, dx, n, values, eta1, eta2, eta3 } => {
                if values.len() != n[0] * n[1] || n[0] < 2 || n[1] < 2 {
                    return Err(levy_parametrix::error::Error::Parameter(
                        "tabulated field needs n[0]·n[1] ≥ 4 samples, one per grid point".into(),
                    ));
                }
                let values = values.iter().map(|v| [[v[0], v[1]], [v[2], v[3]]]).collect();
                let t = TabulatedField { x0: *x0, dx: *dx, n: *n, values };
                CoefficientField::new(dim, FieldKind::Tabulated(t), *eta1, *eta2, *eta3)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSpec {
    Z1,
    Z2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationSpec {
    pub epsilon: f64,
    pub delta0: f64,
    /// Explicit δ; otherwise chosen from ε, α, β, d and η₁.
    pub delta: Option<f64>,
}

impl Default for TruncationSpec {
    fn default() -> Self {
        TruncationSpec { epsilon: 1.0, delta0: DELTA0_DEFAULT, delta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSpec {
    /// Lattice [−L, L]².
    pub half_width: f64,
    pub dx: f64,
    /// Semigroup step h.
    pub dt: f64,
    /// Kernels below this time are frozen at it.
    pub t_min: f64,
    pub spectral_half_width: f64,
    pub spectral_log2_n: u32,
    pub expansion_order: usize,
    /// Border of the hat-basis positivity check, relative to the lattice spacing.
    pub cap: f64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec {
            half_width: 4.0,
            dx: 0.1,
            dt: 0.0125,
            t_min: 1e-3,
            spectral_half_width: 2.0,
            spectral_log2_n: 16,
            expansion_order: 2,
            cap: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceSpec {
    /// Relative tolerance of pointwise quadratures.
    pub rtol: f64,
    /// Poisson remainder weight below which series terms are dropped.
    pub series_rtol: f64,
    pub series_cap: usize,
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        ToleranceSpec { rtol: 1e-6, series_rtol: 1e-7, series_cap: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySpec {
    pub times: Vec<f64>,
    /// Output window |x| ≤ x_max and grid stride of the CSV rows.
    pub x_max: f64,
    pub stride: usize,
}

impl Default for DensitySpec {
    fn default() -> Self {
        DensitySpec { times: vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5], x_max: 1.0, stride: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    /// Uniform time cell of the Duhamel discretisation.
    pub dt: f64,
    pub cells: usize,
    pub probes: Vec<[f64; 2]>,
    /// Picard terms q₀..q_{n−1} reported.
    pub picard_terms: usize,
    /// Times at which mass, positivity and q₀ are reported.
    pub times: Vec<f64>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec { dt: 0.025, cells: 10, probes: vec![[0.0, 0.0], [0.5, 0.3]], picard_terms: 5, times: vec![0.1, 0.2, 0.25] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemigroupSpec {
    pub times: Vec<f64>,
    pub probes: Vec<[f64; 2]>,
    pub functions: Vec<TestFunction>,
}

impl Default for SemigroupSpec {
    fn default() -> Self {
        SemigroupSpec {
            times: vec![0.1, 0.2, 0.5],
            probes: vec![[0.0, 0.0], [0.5, 0.3], [-0.4, 0.6], [1.0, -0.8], [-1.5, -0.5]],
            functions: vec![TestFunction::GaussBump { center: [0.2, -0.1], width: 0.5, amplitude: 1.0 }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolderSpec {
    pub gamma: f64,
    pub times: Vec<f64>,
    /// Pair separations, centred on `center` along `direction`.
    pub separations: Vec<f64>,
    pub center: [f64; 2],
    pub direction: [f64; 2],
    pub function: TestFunction,
    pub smoothing_gamma: f64,
    pub smoothing_times: Vec<f64>,
    pub smoothing_width: f64,
    pub smoothing_probes: Vec<[f64; 2]>,
}

impl Default for HolderSpec {
    fn default() -> Self {
        HolderSpec {
            gamma: 0.5,
            times: vec![0.2, 0.25, 0.3, 0.35, 0.4, 0.5],
            separations: (0..8).map(|k| 0.05 * 2f64.powf(0.5 * k as f64)).collect(),
            center: [0.0, 0.1],
            direction: [1.0, 0.0],
            function: TestFunction::TanhStep { center: [0.0, 0.0], normal: [1.0, 0.0], width: 0.02 },
            smoothing_gamma: 0.25,
            smoothing_times: vec![0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5],
            smoothing_width: 0.1,
            smoothing_probes: (-2..=2).flat_map(|i| (-2..=2).map(move |j| [0.05 * i as f64, 0.05 * j as f64])).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSpec {
    pub n_paths: usize,
    pub n_steps: usize,
    pub policy: SmallJumpPolicy,
    /// Compound-Poisson cut; δ/4 when absent.
    pub rho: Option<f64>,
    pub time: f64,
    /// Model tolerance in units of ‖f‖∞.
    pub model_tol: f64,
}

impl Default for McSpec {
    fn default() -> Self {
        McSpec { n_paths: 100_000, n_steps: 256, policy: SmallJumpPolicy::GaussianSurrogate, rho: None, time: 0.2, model_tol: 2e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Declared assumption branch; checked against the models.
    pub mode: Option<ModeSpec>,
    pub models: Vec<ModelSpec>,
    pub field: FieldSpec,
    #[serde(default)]
    pub truncation: TruncationSpec,
    #[serde(default)]
    pub mesh: MeshSpec,
    #[serde(default)]
    pub tolerances: ToleranceSpec,
    #[serde(default)]
    pub density: DensitySpec,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub semigroup: SemigroupSpec,
    #[serde(default)]
    pub holder: HolderSpec,
    #[serde(default)]
    pub mc: McSpec,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// The shipped desk configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

fn invalid(key: &str, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("{key}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn default_desk() -> ExperimentConfig {
        Self::from_toml(DEFAULT_CONFIG).expect("shipped configuration is valid")
    }

    pub fn dim(&self) -> usize {
        self.models.len()
    }

    /// Structural checks that need no numerics beyond building the models.
    pub fn check(&self) -> Result<()> {
        let d = self.dim();
        if d < 2 {
            return Err(invalid("models", format!("at least two coordinates are required, got {d}")));
        }
        let models: Vec<LevyModel1D> = self
            .models
            .iter()
            .enumerate()
            .map(|(i, m)| m.build().map_err(|e| invalid(&format!("models[{i}]"), e)))
            .collect::<Result<_>>()?;
        let (mode, alpha, beta) = AssumptionMode::classify(&models).map_err(|e| invalid("models", e))?;
        match (self.mode, mode) {
            (Some(ModeSpec::Z1), AssumptionMode::Z2) => {
                return Err(invalid("mode", "Z1 requires identical model specifications for every coordinate"));
            }
            (Some(ModeSpec::Z2), _) => {
                AssumptionMode::check_z2(alpha, beta).map_err(|e| invalid("mode", e))?;
            }
            _ => {}
        }
        self.field.build(d).map_err(|e| invalid("field", e))?;
        let t = &self.truncation;
        if !(t.epsilon > 0.0 && t.epsilon <= 1.0) {
            return Err(invalid("truncation.epsilon", "must lie in (0, 1]"));
        }
        if !(t.delta0 > 0.0 && t.delta0 <= DELTA0_DEFAULT) {
            return Err(invalid("truncation.delta0", format!("must lie in (0, {DELTA0_DEFAULT}]")));
        }
        if let Some(delta) = t.delta {
            if !(delta > 0.0 && delta <= t.delta0) {
                return Err(invalid("truncation.delta", "must lie in (0, delta0]"));
            }
        }
        let m = &self.mesh;
        if d != 2 {
            return Err(invalid("models", "the lattice pipeline is two-dimensional; use d = 2"));
        }
        if !(m.half_width > 0.0 && m.dx > 0.0 && m.dx < m.half_width) {
            return Err(invalid("mesh", "need 0 < dx < half_width"));
        }
        if !(m.dt > 0.0 && m.t_min > 0.0 && m.t_min < m.dt) {
            return Err(invalid("mesh", "need 0 < t_min < dt"));
        }
        if !(m.spectral_half_width > 0.0 && (10..=22).contains(&m.spectral_log2_n)) {
            return Err(invalid("mesh", "spectral_log2_n must lie in 10..=22 and spectral_half_width be positive"));
        }
        if !(1..=3).contains(&m.expansion_order) {
            return Err(invalid("mesh.expansion_order", "must be 1, 2 or 3"));
        }
        if !(m.cap > 0.0) {
            return Err(invalid("mesh.cap", "must be positive"));
        }
        let tol = &self.tolerances;
        if !(tol.rtol > 0.0 && tol.rtol < 1.0 && tol.series_rtol > 0.0 && tol.series_rtol < 1.0 && tol.series_cap >= 1) {
            return Err(invalid("tolerances", "tolerances must lie in (0, 1) and series_cap ≥ 1"));
        }
        positive_times("density.times", &self.density.times)?;
        if self.density.stride == 0 || !(self.density.x_max > 0.0) {
            return Err(invalid("density", "stride ≥ 1 and x_max > 0 required"));
        }
        let k = &self.kernel;
        if !(k.dt > 0.0 && k.cells >= 1 && k.picard_terms >= 1) {
            return Err(invalid("kernel", "need dt > 0, cells ≥ 1 and picard_terms ≥ 1"));
        }
        positive_times("kernel.times", &k.times)?;
        if k.times.iter().any(|t| *t > k.dt * k.cells as f64 * (1.0 + 1e-12)) {
            return Err(invalid("kernel.times", "times must not exceed dt · cells"));
        }
        positive_times("semigroup.times", &self.semigroup.times)?;
        for (i, f) in self.semigroup.functions.iter().enumerate() {
            f.validate().map_err(|e| invalid(&format!("semigroup.functions[{i}]"), e))?;
        }
        let h = &self.holder;
        positive_times("holder.times", &h.times)?;
        positive_times("holder.smoothing_times", &h.smoothing_times)?;
        if h.separations.is_empty() || h.separations.iter().any(|s| !(*s > 0.0)) {
            return Err(invalid("holder.separations", "must be positive and nonempty"));
        }
        if (h.direction[0].hypot(h.direction[1]) - 1.0).abs() > 1e-9 {
            return Err(invalid("holder.direction", "must be a unit vector"));
        }
        h.function.validate().map_err(|e| invalid("holder.function", e))?;
        if !(h.smoothing_width > 0.0) || h.smoothing_probes.is_empty() {
            return Err(invalid("holder", "smoothing_width > 0 and at least one smoothing probe required"));
        }
        let mc = &self.mc;
        if mc.n_paths == 0 || mc.n_steps == 0 || !(mc.time > 0.0) || !(mc.model_tol >= 0.0) {
            return Err(invalid("mc", "need n_paths ≥ 1, n_steps ≥ 1, time > 0 and model_tol ≥ 0"));
        }
        if let Some(rho) = mc.rho {
            if let Some(m) = models.iter().find(|m| !(rho > 0.0 && rho < m.eta4)) {
                return Err(invalid("mc.rho", format!("must lie in (0, eta4 = {})", m.eta4)));
            }
        }
        Ok(())
    }
}

fn positive_times(key: &str, times: &[f64]) -> Result<()> {
    if times.is_empty() || times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(invalid(key, "times must be positive and nonempty"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(key, "times must be strictly increasing"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_config_loads() {
        let c = ExperimentConfig::default_desk();
        assert_eq!(c.dim(), 2);
        assert_eq!(c.mode, Some(ModeSpec::Z1));
    }

    #[test]
    fn one_dimensional_config_is_rejected() {
        let text = "models = [{ family = \"stable\", alpha = 1.0 }]\nfield = { kind = \"identity\" }\n";
        let err = ExperimentConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("at least two"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn z2_gate_rejects_wide_index_spread() {
        let text = "mode = \"z2\"\nmodels = [{ family = \"stable\", alpha = 0.5 }, { family = \"stable\", alpha = 1.5 }]\nfield = { kind = \"identity\" }\n";
        let err = ExperimentConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().starts_with("configuration error: mode"), "{err}");
        let ok = "mode = \"z2\"\nmodels = [{ family = \"stable\", alpha = 1.0 }, { family = \"stable\", alpha = 1.2 }]\nfield = { kind = \"identity\" }\n";
        assert!(ExperimentConfig::from_toml(ok).is_ok());
    }

    #[test]
    fn z1_requires_identical_models() {
        let text = "mode = \"z1\"\nmodels = [{ family = \"stable\", alpha = 1.0 }, { family = \"stable\", alpha = 1.2 }]\nfield = { kind = \"identity\" }\n";
        assert!(ExperimentConfig::from_toml(text).is_err());
    }

    #[test]
    fn unknown_keys_report_a_position() {
        let text = "models = [{ family = \"stable\", alpha = 1.0 }, { family = \"stable\", alpha = 1.0 }]\nfield = { kind = \"identity\" }\n[mesh]\ndxx = 0.1\n";
        let err = ExperimentConfig::from_toml(text).unwrap_err().to_string();
        assert!(err.contains("line 4") && err.contains("dxx"), "{err}");
    }
}
