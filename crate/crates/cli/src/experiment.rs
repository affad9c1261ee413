//! Builds the numerical objects an experiment configuration describes.

use levy_parametrix::density::SpectralGrid;
use levy_parametrix::field::CoefficientField;
use levy_parametrix::lattice::Lattice;
use levy_parametrix::levy::LevyModel1D;
use levy_parametrix::montecarlo::SimConfig;
use levy_parametrix::parametrix::{AssemblyConfig, AssumptionMode, KernelSetup, UStep};
use levy_parametrix::semigroup::{LongJumpOperator, Semigroup};
use levy_parametrix::truncation::{choose_delta, truncate, TruncatedModel1D};

use crate::config::ExperimentConfig;
use crate::error::Result;

/// Models, truncation and field of one configuration, ready for the pipeline.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub models: Vec<LevyModel1D>,
    pub mode: AssumptionMode,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub truncated: Vec<TruncatedModel1D>,
    pub field: CoefficientField,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Experiment> {
        config.check()?;
        let models: Vec<LevyModel1D> = config.models.iter().map(|m| m.build()).collect::<levy_parametrix::error::Result<_>>()?;
        let (mode, alpha, beta) = AssumptionMode::classify(&models)?;
        let field = config.field.build(models.len())?;
        let t = &config.truncation;
        let delta = match t.delta {
            Some(d) => d,
            None => choose_delta(t.epsilon, alpha, beta, models.len(), field.eta1, t.delta0)?,
        };
        let truncated = models.iter().map(|m| truncate(m, delta)).collect::<levy_parametrix::error::Result<_>>()?;
        Ok(Experiment { config, models, mode, alpha, beta, delta, truncated, field })
    }

    pub fn grid(&self) -> Result<SpectralGrid> {
        let m = &self.config.mesh;
        Ok(SpectralGrid::new(m.spectral_half_width, 1usize << m.spectral_log2_n)?)
    }

    pub fn setup(&self) -> Result<KernelSetup> {
        let m = &self.config.mesh;
        Ok(KernelSetup::new(self.field.clone(), &self.truncated, &self.grid()?, m.expansion_order, m.t_min)?)
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Ok(Lattice::new(self.config.mesh.half_width, self.config.mesh.dx)?)
    }

    pub fn assembly(&self) -> AssemblyConfig {
        AssemblyConfig { cap: self.config.mesh.cap, ..AssemblyConfig::default() }
    }

    /// Tₜ with step `mesh.dt`; assembly dominates the cost.
    pub fn semigroup(&self, setup: &KernelSetup) -> Result<Semigroup> {
        let lat = self.lattice()?;
        let step = UStep::assemble(setup, &lat, self.config.mesh.dt, &self.assembly())?;
        let jumps = LongJumpOperator::assemble(setup, &lat)?;
        Ok(Semigroup::new(step, jumps))
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let mc = &self.config.mc;
        let cfg = SimConfig {
            n_paths: mc.n_paths,
            n_steps: mc.n_steps,
            seed: self.config.seed,
            policy: mc.policy,
            rho: mc.rho.unwrap_or(self.delta / 4.0),
        };
        cfg.validate(&self.models)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_experiment_picks_the_truncation_level() {
        let e = Experiment::new(ExperimentConfig::default_desk()).unwrap();
        assert_eq!(e.mode, AssumptionMode::Z1);
        assert!((e.delta - 1.0 / 40.0).abs() < 1e-15);
        assert_eq!(e.truncated.len(), 2);
        let sim = e.sim_config().unwrap();
        assert!((sim.rho - 1.0 / 160.0).abs() < 1e-15);
    }
}
