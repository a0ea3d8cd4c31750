//! Experiment configuration: one JSON document, every field defaulted.

use std::path::Path;

use clap::Args;
use dimred_ct::filter::{FlowGate, FlowParams, MotionPolicy, NonNegativity};
use dimred_ct::projector::{AngleSchedule, ScanGeometry};
use dimred_ct::recon::TikhonovMode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_at, CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub prior: PriorConfig,
    pub geometry: GeometryConfig,
    pub noise: NoiseConfig,
    pub solver: SolverConfig,
    pub filter: FilterSettings,
    pub smoother: SmootherSettings,
    pub simulation: SimulationConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisMethod {
    #[default]
    Kronecker,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Prior standard deviation σ.
    pub sigma: f64,
    /// Correlation length in pixels of the covariance grid.
    pub length: f64,
    /// Covariance grid side `n_c`; the image side when absent.
    pub grid: Option<usize>,
    pub rank: usize,
    pub method: BasisMethod,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { sigma: 0.5, length: 3.0, grid: None, rank: 100, method: BasisMethod::Kronecker }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub size: usize,
    /// Defaults to `size`.
    pub detector_count: Option<usize>,
    pub detector_spacing: f64,
    pub angles_per_step: usize,
    /// Rotation of the angle set between consecutive steps, degrees.
    pub increment: f64,
    pub steps: usize,
    /// Fixed angle list used at every step instead of the rotating schedule.
    pub angles: Option<Vec<f64>>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            size: 64,
            detector_count: None,
            detector_spacing: 1.0,
            angles_per_step: 4,
            increment: 3.0,
            steps: 15,
            angles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Observation noise variance σ_obs².
    pub observation_variance: f64,
    /// Model error variance q².
    pub process_variance: f64,
    /// Simulated noise standard deviation relative to the peak of each sinogram.
    pub level: f64,
    pub seed: Option<u64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { observation_variance: 0.01, process_variance: 1e-3, level: 0.01, seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SolverConfig {
    Tikhonov {
        gamma: f64,
        #[serde(default)]
        mode: TikhonovMode,
    },
    Bayes,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::Tikhonov { gamma: 1.0, mode: TikhonovMode::Whitened }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub motion: MotionPolicy,
    pub nonnegativity: NonNegativity,
    pub flow: FlowParams,
    pub gate: FlowGate,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            motion: MotionPolicy::Identity,
            nonnegativity: NonNegativity::Output,
            flow: FlowParams::default(),
            gate: FlowGate::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherSettings {
    /// Also propagate smoothed covariances (r×r per step).
    pub covariance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Scene file; the built-in two-ellipse scene when absent.
    pub scene: Option<String>,
    /// Built-in scene: `default` or `translation`.
    pub builtin: String,
    pub oversample: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { scene: None, builtin: "default".into(), oversample: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Grey-level window for 8-bit previews.
    pub window: [f64; 2],
    pub previews: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { window: [0.0, 1.0], previews: true }
    }
}

/// Command-line overrides shared by every verb.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Experiment configuration (JSON); defaults apply to absent fields.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    /// Reconstruction grid side in pixels.
    #[arg(long, global = true)]
    pub size: Option<usize>,
    /// Number of basis vectors.
    #[arg(long, global = true)]
    pub rank: Option<usize>,
    /// Prior standard deviation.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Prior correlation length in pixels.
    #[arg(long, global = true)]
    pub length: Option<f64>,
    /// Covariance grid side.
    #[arg(long = "n-c", global = true)]
    pub grid: Option<usize>,
    /// Projection angles per time step.
    #[arg(long, global = true)]
    pub angles_per_step: Option<usize>,
    /// Rotation of the angle set between steps, in degrees.
    #[arg(long, global = true)]
    pub increment: Option<f64>,
    /// Number of time steps.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Comma-separated fixed angle list in degrees.
    #[arg(long, global = true, value_delimiter = ',')]
    pub angles: Option<Vec<f64>>,
    /// Observation noise variance.
    #[arg(long, global = true)]
    pub obs_var: Option<f64>,
    /// Process noise variance.
    #[arg(long, global = true)]
    pub q2: Option<f64>,
    /// Simulated noise level relative to the sinogram peak.
    #[arg(long, global = true)]
    pub noise_level: Option<f64>,
    /// Noise seed; required when simulating.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Static solver: `tikhonov` or `bayes`.
    #[arg(long, global = true)]
    pub solver: Option<String>,
    /// Tikhonov weight.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// `identity` or `flow`.
    #[arg(long, global = true)]
    pub motion: Option<String>,
    /// Last step predicted with identity motion before flow takes over.
    #[arg(long, global = true)]
    pub flow_start: Option<usize>,
    /// Simulation grid refinement factor.
    #[arg(long, global = true)]
    pub oversample: Option<usize>,
    /// Scene file (JSON) replacing the built-in scene.
    #[arg(long, global = true)]
    pub scene: Option<String>,
    /// Propagate smoothed covariances.
    #[arg(long, global = true)]
    pub smoother_covariance: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = io_at(path, std::fs::read_to_string(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Reads the optional config file and applies the overrides.
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut c = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        set(&mut c.geometry.size, o.size);
        set(&mut c.prior.rank, o.rank);
        set(&mut c.prior.sigma, o.sigma);
        set(&mut c.prior.length, o.length);
        if o.grid.is_some() {
            c.prior.grid = o.grid;
        }
        set(&mut c.geometry.angles_per_step, o.angles_per_step);
        set(&mut c.geometry.increment, o.increment);
        set(&mut c.geometry.steps, o.steps);
        if o.angles.is_some() {
            c.geometry.angles = o.angles.clone();
        }
        set(&mut c.noise.observation_variance, o.obs_var);
        set(&mut c.noise.process_variance, o.q2);
        set(&mut c.noise.level, o.noise_level);
        if o.seed.is_some() {
            c.noise.seed = o.seed;
        }
        if let Some(s) = &o.solver {
            c.solver = match s.as_str() {
                "bayes" => SolverConfig::Bayes,
                "tikhonov" => match c.solver {
                    t @ SolverConfig::Tikhonov { .. } => t,
                    SolverConfig::Bayes => SolverConfig::default(),
                },
                other => return Err(CliError::config(format!("unknown solver '{other}'"))),
            };
        }
        if let Some(g) = o.gamma {
            match &mut c.solver {
                SolverConfig::Tikhonov { gamma, .. } => *gamma = g,
                SolverConfig::Bayes => return Err(CliError::config("--gamma needs the tikhonov solver")),
            }
        }
        if let Some(m) = &o.motion {
            c.filter.motion = match m.as_str() {
                "identity" => MotionPolicy::Identity,
                "flow" => MotionPolicy::Flow { start_step: o.flow_start.unwrap_or(10) },
                other => return Err(CliError::config(format!("unknown motion model '{other}'"))),
            };
        } else if let (Some(k0), MotionPolicy::Flow { start_step }) = (o.flow_start, &mut c.filter.motion) {
            *start_step = k0;
        }
        set(&mut c.simulation.oversample, o.oversample);
        if o.scene.is_some() {
            c.simulation.scene = o.scene.clone();
        }
        c.smoother.covariance |= o.smoother_covariance;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::config(m));
        let g = &self.geometry;
        if g.size == 0 {
            return bad("geometry.size must be positive");
        }
        if self.prior.grid.is_some_and(|n| n == 0 || n > g.size) {
            return bad("prior.grid must be between 1 and geometry.size");
        }
        if !(self.prior.sigma > 0.0 && self.prior.length > 0.0) {
            return bad("prior.sigma and prior.length must be positive");
        }
        let n_c = self.covariance_grid();
        if self.prior.rank == 0 || self.prior.rank > n_c * n_c {
            return Err(CliError::config(format!("prior.rank must be between 1 and {}", n_c * n_c)));
        }
        if !(self.noise.observation_variance > 0.0 && self.noise.process_variance > 0.0) {
            return bad("noise variances must be positive");
        }
        if !(self.noise.level >= 0.0) {
            return bad("noise.level must be non-negative");
        }
        if let SolverConfig::Tikhonov { gamma, .. } = self.solver {
            if !(gamma > 0.0) {
                return bad("solver.gamma must be positive");
            }
        }
        if g.steps == 0 || g.angles_per_step == 0 {
            return bad("geometry.steps and geometry.angles_per_step must be positive");
        }
        if self.simulation.oversample == 0 {
            return bad("simulation.oversample must be positive");
        }
        self.base_geometry()?;
        self.schedule()?;
        Ok(())
    }

    pub fn covariance_grid(&self) -> usize {
        self.prior.grid.unwrap_or(self.geometry.size)
    }

    /// Detector layout with a placeholder angle.
    pub fn base_geometry(&self) -> Result<ScanGeometry> {
        let g = &self.geometry;
        Ok(ScanGeometry::new(vec![0.0], g.detector_count.unwrap_or(g.size), g.detector_spacing, g.size)?)
    }

    pub fn schedule(&self) -> Result<AngleSchedule> {
        let g = &self.geometry;
        Ok(AngleSchedule::new(g.angles_per_step, g.increment, g.steps)?)
    }

    /// Angles measured at step `k`.
    pub fn angles(&self, k: usize) -> Result<Vec<f64>> {
        Ok(match &self.geometry.angles {
            Some(a) => a.clone(),
            None => self.schedule()?.angles(k),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
