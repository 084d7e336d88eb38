use std::path::{Path, PathBuf};

use nlwave::dispersion::DispersionReport;
use nlwave::evolve::{Domain, LogisticInit, SimOptions, Stepper};
use nlwave::kernel::{MomentFn, TabulatedKernel};
use nlwave::profile::{Continuation, SolverOptions};
use nlwave::{Extension, Kernel, Params};
use serde::Deserialize;

use crate::exit::CliError;

/// Kernel shapes accepted in config files.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Gaussian {
        sigma: f64,
    },
    Laplace {
        alpha: f64,
    },
    Uniform {
        radius: f64,
    },
    /// Two-column CSV `(offset, density)`; relative paths resolve against
    /// the config file's directory.
    Tabulated {
        path: PathBuf,
    },
    /// `M(λ) = Σ coeffs[k] λ^k`.
    MomentPolynomial {
        coeffs: Vec<f64>,
        #[serde(default = "infinite")]
        lambda0: f64,
    },
    /// `M(λ) = 1 + λ²`.
    LocalDiffusion,
}

fn infinite() -> f64 {
    f64::INFINITY
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Gaussian { sigma: 1.0 }
    }
}

impl KernelSpec {
    pub fn build(&self, base: &Path) -> Result<Kernel, CliError> {
        let k = match self {
            KernelSpec::Gaussian { sigma } => Kernel::gaussian(*sigma)?,
            KernelSpec::Laplace { alpha } => Kernel::laplace(*alpha)?,
            KernelSpec::Uniform { radius } => Kernel::uniform(*radius)?,
            KernelSpec::Tabulated { path } => {
                Kernel::Tabulated(TabulatedKernel::from_csv_path(base.join(path))?)
            }
            KernelSpec::MomentPolynomial { coeffs, lambda0 } => {
                Kernel::moment_defined(MomentFn::polynomial(coeffs.clone())?, *lambda0)?
            }
            KernelSpec::LocalDiffusion => Kernel::local_diffusion(),
        };
        Ok(k)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    /// Absolute speeds to report decay rates for.
    #[serde(default)]
    pub speeds: Vec<f64>,
    /// Speeds given as multiples of `c*`.
    #[serde(default)]
    pub speed_factors: Vec<f64>,
}

/// Overrides for [`SolverOptions::for_report`].
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub half_width: Option<f64>,
    pub h: Option<f64>,
    pub max_iter: Option<usize>,
    pub fix_tol: Option<f64>,
    pub boundary_tol: Option<f64>,
    pub relaxation: Option<f64>,
    pub anderson_depth: Option<usize>,
}

impl SolverSection {
    pub fn options(&self, rep: &DispersionReport) -> SolverOptions {
        let mut o = SolverOptions::for_report(rep);
        if let Some(v) = self.half_width {
            o.half_width = v;
        }
        if let Some(v) = self.h {
            o.h = v;
        }
        if let Some(v) = self.max_iter {
            o.max_iter = v;
        }
        if let Some(v) = self.fix_tol {
            o.fix_tol = v;
        }
        if let Some(v) = self.boundary_tol {
            o.boundary_tol = v;
        }
        if let Some(v) = self.relaxation {
            o.relaxation = v;
        }
        if let Some(v) = self.anderson_depth {
            o.anderson_depth = v;
        }
        o
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationSection {
    pub factor: Option<f64>,
    pub delta: Option<f64>,
    pub cauchy_tol: Option<f64>,
    pub min_steps: Option<usize>,
    pub max_steps: Option<usize>,
    pub window: Option<f64>,
}

impl ContinuationSection {
    pub fn continuation(&self) -> Continuation {
        let d = Continuation::default();
        Continuation {
            factor: self.factor.unwrap_or(d.factor),
            delta: self.delta.or(d.delta),
            cauchy_tol: self.cauchy_tol.unwrap_or(d.cauchy_tol),
            min_steps: self.min_steps.unwrap_or(d.min_steps),
            max_steps: self.max_steps.unwrap_or(d.max_steps),
            window: self.window.unwrap_or(d.window),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveSection {
    /// Absolute wave speed; overridden by `--c`.
    pub c: Option<f64>,
    /// Wave speed as a multiple of `c*`, used when `c` is absent.
    pub c_factor: f64,
    /// Points in the super/sub-solution verification grid.
    pub verify_points: usize,
    pub squeeze_tol: f64,
    pub squeeze_max_steps: usize,
}

impl Default for WaveSection {
    fn default() -> Self {
        WaveSection {
            c: None,
            c_factor: 1.2,
            verify_points: 4001,
            squeeze_tol: 1e-12,
            squeeze_max_steps: 100,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub half_width: f64,
    pub h: f64,
    pub dt: f64,
    pub t_end: f64,
    pub theta: Option<f64>,
    pub extra_levels: Vec<f64>,
    pub extension: Extension,
    pub stepper: Stepper,
    pub sample_every: f64,
    /// Probe rays `x = k·c*·t`.
    pub probe_factors: Vec<f64>,
    pub snapshot_times: Vec<f64>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            half_width: 240.0,
            h: 0.1,
            dt: 0.1,
            t_end: 100.0,
            theta: None,
            extra_levels: Vec::new(),
            extension: Extension::Clamp,
            stepper: Stepper::Rk4,
            sample_every: 0.5,
            probe_factors: Vec::new(),
            snapshot_times: Vec::new(),
        }
    }
}

impl SimSection {
    pub fn domain(&self) -> Domain {
        Domain::symmetric(self.half_width, self.h)
    }

    pub fn options(&self, c_star: f64) -> SimOptions {
        SimOptions {
            dt: self.dt,
            t_end: self.t_end,
            theta: self.theta,
            extra_levels: self.extra_levels.clone(),
            extension: self.extension,
            stepper: self.stepper,
            sample_every: self.sample_every,
            probe_speeds: self.probe_factors.iter().map(|k| k * c_star).collect(),
            snapshot_times: self.snapshot_times.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticSection {
    pub zeta: f64,
    pub eps1: f64,
    /// Windows `|x| < k·c*·t`.
    pub speed_factors: Vec<f64>,
}

impl Default for LogisticSection {
    fn default() -> Self {
        LogisticSection {
            zeta: 0.4,
            eps1: 2.0,
            speed_factors: vec![0.9],
        }
    }
}

impl LogisticSection {
    pub fn init(&self) -> LogisticInit {
        LogisticInit {
            zeta: self.zeta,
            eps1: self.eps1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub axes: Vec<Axis>,
    /// Also solve the wave at `c_factor·c*` for each admissible point.
    #[serde(default)]
    pub solve_wave: bool,
    #[serde(default = "default_factor")]
    pub c_factor: f64,
}

fn default_factor() -> f64 {
    1.2
}

pub const PARAM_NAMES: [&str; 6] = ["d1", "d2", "m", "a", "s", "b"];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: Params,
    #[serde(default)]
    pub kernel1: KernelSpec,
    /// Defaults to `kernel1`.
    pub kernel2: Option<KernelSpec>,
    #[serde(default)]
    pub analyze: AnalyzeSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub continuation: ContinuationSection,
    #[serde(default)]
    pub wave: WaveSection,
    #[serde(default)]
    pub sim: SimSection,
    pub logistic: Option<LogisticSection>,
    pub sweep: Option<SweepSpec>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

/// A parsed config with its kernels built and parameters validated.
pub struct Loaded {
    pub cfg: RunConfig,
    pub k1: Kernel,
    pub k2: Kernel,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
        }
    }

    pub fn load(path: &Path) -> Result<Loaded, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.params
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let k1 = cfg.kernel1.build(base)?;
        let k2 = cfg.kernel2.as_ref().unwrap_or(&cfg.kernel1).build(base)?;
        if let Some(sw) = &cfg.sweep {
            sw.check()?;
        }
        Ok(Loaded { cfg, k1, k2 })
    }
}

impl SweepSpec {
    pub fn check(&self) -> Result<(), CliError> {
        if self.axes.is_empty() || self.axes.iter().any(|a| a.values.is_empty()) {
            return Err(CliError::Usage(
                "sweep needs at least one non-empty axis".into(),
            ));
        }
        if let Some(a) = self
            .axes
            .iter()
            .find(|a| !PARAM_NAMES.contains(&a.name.as_str()))
        {
            return Err(CliError::Usage(format!(
                "unknown sweep axis {:?}; expected one of {PARAM_NAMES:?}",
                a.name
            )));
        }
        Ok(())
    }
}
