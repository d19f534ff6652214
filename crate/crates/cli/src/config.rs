//! Experiment config schema.
//!
//! ```json
//! {
//!   "command": "forward",
//!   "system": {"kind": "double_well", "params": {"lambda1": 1, "lambda2": -1}},
//!   "noise": {"framework": "fw", "amplitudes": [1.0]},
//!   "bc": {"x0": [-1], "xT": [1], "T": 5},
//!   "solver": {"iterations": 20000},
//!   "output_dir": "runs/dw_t5",
//!   "seed": 0
//! }
//! ```
//!
//! Relative paths inside a config resolve against the config file's
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mptp_core::bridge::BridgeVariant;
use mptp_core::pinn::HolderConfig;
use mptp_core::{BoundaryConditions, DriftModel, NoiseSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Forward,
    Oracle,
    Bridge,
    InverseParam,
    InverseNonparam,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Oracle => "oracle",
            Command::Bridge => "bridge",
            Command::InverseParam => "inverse-param",
            Command::InverseNonparam => "inverse-nonparam",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub system: Option<DriftModel>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub bc: Option<BoundaryConditions>,
    #[serde(default)]
    pub solver: serde_json::Value,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardSolver {
    pub m: Option<usize>,
    pub lambda_r: Option<f64>,
    pub lambda_b: Option<f64>,
    pub iterations: Option<usize>,
    pub lr: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub regularizer: Option<HolderConfig>,
    pub output_nodes: Option<usize>,
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSolver {
    /// Total grid nodes including both endpoints.
    pub n: Option<usize>,
    pub tol: Option<f64>,
    pub max_newton_iters: Option<usize>,
    pub continuation_steps: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeSolver {
    pub variant: Option<BridgeVariant>,
    pub eps: Option<f64>,
    pub n_steps: Option<usize>,
    pub n_paths: Option<usize>,
    pub n_quad: Option<usize>,
}

/// Where inverse runs get their observations from. Synthetic sources use
/// `system` as ground truth.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationSpec {
    File {
        path: PathBuf,
    },
    Oracle {
        n_obs: usize,
        #[serde(default)]
        nodes: Option<usize>,
        #[serde(default)]
        continuation_steps: Option<usize>,
        #[serde(default)]
        eta: f64,
    },
    BridgeMean {
        n_obs: usize,
        #[serde(default)]
        bridge: BridgeSolver,
        #[serde(default)]
        eta: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSolver {
    pub observations: ObservationSpec,
    pub beta_init: BTreeMap<String, f64>,
    /// Names of the parameters to fit; all of them when omitted.
    #[serde(default)]
    pub trainable: Option<Vec<String>>,
    #[serde(default)]
    pub lambda_r: Option<f64>,
    #[serde(default)]
    pub lambda_d: Option<f64>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub beta_lr: Option<f64>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorSpec {
    /// CSV with `x1,f1` rows.
    pub file: Option<PathBuf>,
    /// Locations where the true drift of `system` is supplied.
    pub at: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonParamSolver {
    pub observations: ObservationSpec,
    #[serde(default)]
    pub anchors: AnchorSpec,
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    #[serde(default)]
    pub gamma1: Option<f64>,
    #[serde(default)]
    pub gamma2: Option<f64>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub record_every: Option<usize>,
    /// Nodes of the learned-drift curve written to `drift.csv`.
    #[serde(default)]
    pub curve_nodes: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSolver {
    pub runs: Vec<PathBuf>,
    /// Compare every run against this one instead of all pairs.
    #[serde(default)]
    pub reference: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check_finite()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let raw = serde_json::from_str(&text)?;
        Ok((cfg, raw))
    }

    fn check_finite(&self) -> Result<(), CliError> {
        let vals = self.system.iter().flat_map(|m| m.params().iter().copied());
        let vals = vals.chain(self.noise.iter().flat_map(|n| n.amplitudes.iter().copied()));
        let mut vals = vals.chain(self.bc.iter().flat_map(|b| b.x0.iter().chain(&b.xt).copied().chain([b.t_final])));
        if !vals.all(f64::is_finite) {
            return Err(CliError::Config("numeric fields must be finite".into()));
        }
        if let Some(bc) = &self.bc {
            bc.validate().map_err(|e| CliError::Config(format!("bc: {e}")))?;
        }
        Ok(())
    }

    pub fn system(&self) -> Result<&DriftModel, CliError> {
        self.system.as_ref().ok_or_else(|| CliError::Config("missing `system` block".into()))
    }

    pub fn bc(&self) -> Result<&BoundaryConditions, CliError> {
        let bc = self.bc.as_ref().ok_or_else(|| CliError::Config("missing `bc` block".into()))?;
        let d = self.system()?.dim();
        if bc.dim() != d {
            return Err(CliError::Config(format!("bc has dimension {}, system has {d}", bc.dim())));
        }
        Ok(bc)
    }

    /// Defaults to Freidlin–Wentzell with unit amplitudes.
    pub fn noise(&self) -> Result<NoiseSpec, CliError> {
        let d = self.system()?.dim();
        let noise = self.noise.clone().unwrap_or_else(|| NoiseSpec::fw(d));
        if noise.dim() != d {
            return Err(CliError::Config(format!("noise has dimension {}, system has {d}", noise.dim())));
        }
        NoiseSpec::new(noise.framework, noise.amplitudes).map_err(|e| CliError::Config(format!("noise: {e}")))
    }

    /// Decodes the `solver` block; a missing block means all defaults.
    pub fn solver<T: serde::de::DeserializeOwned>(&self) -> Result<T, CliError> {
        let v = if self.solver.is_null() { serde_json::json!({}) } else { self.solver.clone() };
        serde_json::from_value(v).map_err(|e| CliError::Config(format!("solver: {e}")))
    }
}
