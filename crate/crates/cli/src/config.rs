//! Run configuration: one TOML or JSON document with a section per stage.
//! Every field has a default, unknown keys are rejected, and the resolved
//! document (defaults filled in) is echoed next to each command's outputs.

use std::path::{Path, PathBuf};

use gpmpc_core::gp::SearchSpace;
use gpmpc_core::mpc::MpcConfig;
use gpmpc_core::planner::PlannerConfig;
use gpmpc_core::sim::{GroundTruthModel, Sweep};
use gpmpc_core::sysid::{SysIdConfig, TrainingConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Plant and logging interval of the training run, s.
    pub dt: f64,
    pub f_max: f64,
    pub f_step: f64,
    pub alpha_step_deg: f64,
    pub dwell_steps: usize,
    pub stride: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        let s = Sweep::default();
        Self {
            dt: 0.1,
            f_max: s.f_max,
            f_step: s.f_step,
            alpha_step_deg: s.alpha_step_deg,
            dwell_steps: s.dwell_steps,
            stride: s.stride,
        }
    }
}

impl SweepSection {
    pub fn sweep(&self) -> Sweep {
        Sweep {
            f_max: self.f_max,
            f_step: self.f_step,
            alpha_step_deg: self.alpha_step_deg,
            dwell_steps: self.dwell_steps,
            stride: self.stride,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SysIdSection {
    /// Position low-pass cutoff in Hz; 0 disables filtering.
    pub lowpass_cutoff_hz: f64,
    pub train_fraction: f64,
    pub max_train_points: usize,
    pub hyperopt_points: usize,
    pub strata: [usize; 2],
}

impl Default for SysIdSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            lowpass_cutoff_hz: SysIdConfig::default().lowpass_cutoff_hz.unwrap_or(0.0),
            train_fraction: t.train_fraction,
            max_train_points: t.max_train_points,
            hyperopt_points: t.hyperopt_points,
            strata: t.strata,
        }
    }
}

/// What `track` follows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSection {
    Circle {
        radius: f64,
        angular_speed: f64,
        duration: f64,
    },
    /// A path CSV from `plan`, resampled at `a0_hat * nominal_freq * dt`.
    /// The optional world is only used to draw obstacles.
    PlannerPath {
        path_csv: PathBuf,
        nominal_freq: f64,
        #[serde(default)]
        world: Option<PathBuf>,
    },
    /// Waypoints CSV (`x,y`) used verbatim, one per control step.
    Custom { waypoints_csv: PathBuf },
}

impl Default for ReferenceSection {
    fn default() -> Self {
        ReferenceSection::Circle {
            radius: 50.0,
            angular_speed: 0.05,
            duration: std::f64::consts::TAU / 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Plant step of the closed loop; must equal `mpc.dt`.
    pub dt: f64,
    pub reference: ReferenceSection,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            dt: MpcConfig::default().dt,
            reference: ReferenceSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub ground_truth: GroundTruthModel,
    pub sweep: SweepSection,
    pub sysid: SysIdSection,
    pub gp: SearchSpace,
    pub mpc: MpcConfig,
    pub planner: PlannerConfig,
    pub scenario: ScenarioSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            ground_truth: GroundTruthModel::default(),
            sweep: SweepSection::default(),
            sysid: SysIdSection::default(),
            gp: SearchSpace::default(),
            mpc: MpcConfig::default(),
            planner: PlannerConfig::default(),
            scenario: ScenarioSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if is_json {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        };
        cfg.map_err(|e| match e {
            CliError::BadInput(msg) => CliError::BadInput(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::BadInput(format!("config: {e}")))
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::BadInput(format!("config: {e}")))
    }

    pub fn sysid_config(&self) -> SysIdConfig {
        SysIdConfig {
            lowpass_cutoff_hz: (self.sysid.lowpass_cutoff_hz > 0.0).then_some(self.sysid.lowpass_cutoff_hz),
            training: TrainingConfig {
                train_fraction: self.sysid.train_fraction,
                max_train_points: self.sysid.max_train_points,
                hyperopt_points: self.sysid.hyperopt_points,
                strata: self.sysid.strata,
                search: self.gp.clone(),
            },
        }
    }

    pub fn resolved_json(&self) -> CliResult<String> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::BadInput(e.to_string()))
    }
}
