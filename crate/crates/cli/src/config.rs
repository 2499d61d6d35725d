//! JSON run configurations. Every document is parsed with unknown keys
//! rejected and validated before any computation starts.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use sensaug::augment::{AugmentConfig, ParamBox};
use sensaug::harness::{CaseConfig, ImitationConfig, LinearPolicy, RolloutConfig};
use sensaug::nlp::ParametricNlp;
use sensaug::oracles::{oracle_eqp, oracle_ineq};
use sensaug::pendulum::{build_nlp, parameter_box, MpcSpec, PendulumParams};
use sensaug::sqp::SolverConfig;

/// A configuration problem; reported with exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Problem {
    Pendulum {
        #[serde(default)]
        pendulum: PendulumParams,
        #[serde(default)]
        mpc: MpcSpec,
    },
    OracleEqp,
    OracleIneq,
}

impl Problem {
    pub fn build(&self) -> ParametricNlp {
        match self {
            Problem::Pendulum { pendulum, mpc } => build_nlp(pendulum, mpc),
            Problem::OracleEqp => oracle_eqp(),
            Problem::OracleIneq => oracle_ineq(),
        }
    }

    pub fn default_box(&self) -> ParamBox {
        match self {
            Problem::Pendulum { .. } => parameter_box(),
            Problem::OracleEqp | Problem::OracleIneq => vec![(0.0, 2.0)],
        }
    }

    fn validate(&self) -> Result<(), String> {
        if let Problem::Pendulum { pendulum, mpc } = self {
            pendulum
                .validate()
                .map_err(|e| format!("problem.pendulum: {e}"))?;
            mpc.validate().map_err(|e| format!("problem.mpc: {e}"))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySettings {
    pub bandwidth: Option<f64>,
}

/// Configuration of `generate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Problem,
    /// Parameter box; the problem's own box when absent.
    #[serde(default)]
    pub pbox: Option<ParamBox>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    /// Fits and writes a policy model when present.
    #[serde(default)]
    pub policy: Option<PolicySettings>,
    /// Exact re-solves for the error estimate; zero skips it.
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default)]
    pub probe_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_probes() -> usize {
    200
}

impl RunConfig {
    pub fn pbox(&self) -> ParamBox {
        self.pbox
            .clone()
            .unwrap_or_else(|| self.problem.default_box())
    }

    fn validate(&self) -> Result<(), String> {
        self.problem.validate()?;
        self.solver.validate().map_err(|e| format!("solver: {e}"))?;
        let pbox = self.pbox();
        let n_p = self.problem.build().n_p();
        if pbox.len() != n_p {
            return Err(format!(
                "pbox: expected {n_p} dimensions, got {}",
                pbox.len()
            ));
        }
        self.augment
            .validate(&pbox)
            .map_err(|e| format!("augment.{}", strip_prefix(&e.to_string())))?;
        if let Some(PolicySettings { bandwidth: Some(b) }) = &self.policy {
            if !(*b > 0.0 && b.is_finite()) {
                return Err("policy.bandwidth: must be positive".into());
            }
        }
        check_threads(self.threads)
    }
}

/// Configuration of `case`: overrides merged onto the case's preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    #[serde(default)]
    pub case: Option<Value>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
}

/// Configuration of `rollout`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutFile {
    pub rollout: RolloutConfig,
    /// Expert settings, used with `--expert`.
    pub mpc: MpcSpec,
    pub solver: SolverConfig,
    pub output_dir: PathBuf,
}

impl Default for RolloutFile {
    fn default() -> Self {
        Self {
            rollout: RolloutConfig::default(),
            mpc: MpcSpec::default(),
            solver: SolverConfig::default(),
            output_dir: default_output_dir(),
        }
    }
}

/// Configuration of `imitate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImitateFile {
    pub imitation: ImitationConfig,
    pub initial_policy: LinearPolicy,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
}

impl Default for ImitateFile {
    fn default() -> Self {
        Self {
            imitation: ImitationConfig::default(),
            initial_policy: LinearPolicy::new(-11.0, -7.0, 35.0),
            output_dir: default_output_dir(),
            threads: None,
        }
    }
}

fn strip_prefix(msg: &str) -> &str {
    msg.strip_prefix("invalid augmentation config: ")
        .unwrap_or(msg)
}

fn check_threads(threads: Option<usize>) -> Result<(), String> {
    match threads {
        Some(0) => Err("threads: must be positive".into()),
        _ => Ok(()),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

pub fn load_run(path: &Path) -> anyhow::Result<RunConfig> {
    let cfg: RunConfig = read_json(path)?;
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

/// Recursively overlays `patch` onto `base`; objects merge, anything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn load_case(case: u8, path: Option<&Path>) -> anyhow::Result<(CaseConfig, CaseFile)> {
    let preset = CaseConfig::for_case(case).map_err(|e| config_error(e.to_string()))?;
    let file: CaseFile = match path {
        Some(p) => read_json(p)?,
        None => CaseFile::default(),
    };
    let cfg = match &file.case {
        Some(patch) => {
            let mut v = serde_json::to_value(&preset)?;
            merge(&mut v, patch.clone());
            serde_json::from_value(v).map_err(|e| config_error(format!("case: {e}")))?
        }
        None => preset,
    };
    cfg.validate().map_err(|e| config_error(e.to_string()))?;
    check_threads(file.threads).map_err(config_error)?;
    Ok((cfg, file))
}

pub fn load_rollout(path: Option<&Path>) -> anyhow::Result<RolloutFile> {
    let file: RolloutFile = match path {
        Some(p) => read_json(p)?,
        None => RolloutFile::default(),
    };
    file.rollout
        .validate()
        .map_err(|e| config_error(format!("rollout: {e}")))?;
    file.mpc
        .validate()
        .map_err(|e| config_error(format!("mpc: {e}")))?;
    file.solver
        .validate()
        .map_err(|e| config_error(format!("solver: {e}")))?;
    Ok(file)
}

pub fn load_imitate(path: Option<&Path>) -> anyhow::Result<ImitateFile> {
    let file: ImitateFile = match path {
        Some(p) => read_json(p)?,
        None => ImitateFile::default(),
    };
    let im = &file.imitation;
    im.rollout
        .validate()
        .map_err(|e| config_error(format!("imitation.rollout: {e}")))?;
    im.mpc
        .validate()
        .map_err(|e| config_error(format!("imitation.mpc: {e}")))?;
    im.solver
        .validate()
        .map_err(|e| config_error(format!("imitation.solver: {e}")))?;
    if !(im.eps_tol > 0.0) {
        return Err(config_error("imitation.eps_tol: must be positive"));
    }
    if im.neighborhood.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(config_error(
            "imitation.neighborhood: half-widths must be positive",
        ));
    }
    if let Some(b) = im.bandwidth {
        if !(b > 0.0 && b.is_finite()) {
            return Err(config_error("imitation.bandwidth: must be positive"));
        }
    }
    check_threads(file.threads).map_err(config_error)?;
    Ok(file)
}
