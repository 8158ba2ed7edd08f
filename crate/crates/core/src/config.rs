//! Run configuration in TOML.
//!
//! Every section except `[problem]` is optional; omitted values take the
//! defaults below and are echoed back by [`RunConfig::to_toml`].
//!
//! ```toml
//! seed = 1
//!
//! [problem]
//! drift = "5*(0.4 - x1)"    # one expression per state coordinate
//! lipschitz = 5.0           # optional, enables the a-priori bounds
//! drift_bound = 7.0         # optional uniform bound on the drift
//! sigma = 0.61              # scalar (times identity) or matrix [[..], ..]
//! x0 = -0.3                 # scalar or vector
//! horizon = 1.0
//!
//! [noise]                   # defaults to Wiener noise matching sigma
//! kind = "wiener"
//!
//! [mesh]
//! n = 512
//!
//! [network]
//! width_cap = 512
//! precision = "single"      # or "double"
//! init = "glorot"           # or "zero"
//!
//! [training]
//! epochs = 2000
//! batch_size = 64
//! loss = "auto"             # "bridge" (Wiener only) or "grid"
//! checkpoint_every = 0      # 0 writes only the final checkpoint
//! eval_every = 0            # 0 disables evaluation during training
//! schedule = { kind = "power_decay", eta0 = 0.001, gamma = 0.6 }
//!
//! [evaluation]
//! paths = 1000
//! reference_steps = 131072
//! dump_paths = 0            # per-path trajectory dumps to write
//!
//! [simulate]
//! paths = 1
//!
//! [output]
//! dir = "out"
//! ```

use std::path::PathBuf;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::expr::parse_drift_expr;
use crate::levy_paths::{NoiseKind, TimeGrid};
use crate::network::{InitScheme, Precision, DEFAULT_WIDTH_CAP};
use crate::reference::REFERENCE_STEPS;
use crate::sde::{DriftDescriptor, SdeSpec};
use crate::training::{LossChoice, LrSchedule, TrainConfig, DEFAULT_BATCH_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub drift: OneOrMany<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_bound: Option<f64>,
    pub sigma: SigmaSpec,
    pub x0: OneOrMany<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub width_cap: usize,
    pub precision: Precision,
    pub init: InitScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossChoice,
    pub checkpoint_every: usize,
    pub eval_every: usize,
    pub schedule: LrSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub paths: usize,
    pub reference_steps: usize,
    pub dump_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub problem: ProblemConfig,
    /// Filled in with Wiener noise of the right dimension when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseKind>,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_horizon() -> f64 {
    1.0
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { n: 512 }
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            width_cap: DEFAULT_WIDTH_CAP,
            precision: Precision::Single,
            init: InitScheme::Glorot,
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs: 2000,
            batch_size: DEFAULT_BATCH_SIZE,
            loss: LossChoice::Auto,
            checkpoint_every: 0,
            eval_every: 0,
            schedule: LrSchedule::default(),
        }
    }
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            paths: 1000,
            reference_steps: REFERENCE_STEPS,
            dump_paths: 0,
        }
    }
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { paths: 1 }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let start = before.rfind('\n').map_or(0, |i| i + 1);
    (line, before[start..].chars().count() + 1)
}

fn syntax_error(text: &str, err: &toml::de::Error) -> Error {
    let (line, column) = err.span().map_or((1, 1), |s| line_column(text, s.start));
    Error::Syntax {
        line,
        column,
        message: err.message().trim().to_string(),
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    if text.trim().is_empty() {
        return Err(Error::Syntax {
            line: 1,
            column: 1,
            message: "empty configuration".into(),
        });
    }
    text.parse::<toml::Table>().map_err(|e| syntax_error(text, &e))
}

/// Parse a `key.path=value` override; the value is read as a TOML value and
/// falls back to a bare string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config_key(key, "empty component in override key"));
    }
    let (last, parents) = parts.split_last().unwrap();
    let mut node = table;
    for p in parents {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::config_key(key, format!("`{p}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with::<&str>(text, &[])
}

/// Parse, apply `key=value` overrides (they win over the file), then validate.
pub fn parse_config_with<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<RunConfig> {
    let mut table = parse_table(text)?;
    for o in overrides {
        apply_override(&mut table, o.as_ref())?;
    }
    let mut config: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." { "<root>".to_string() } else { path };
        Error::config_key(key, e.inner().message().trim())
    })?;
    config.normalize()?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    fn normalize(&mut self) -> Result<()> {
        if self.noise.is_none() {
            let m = self.sigma_matrix()?.ncols();
            self.noise = Some(NoiseKind::wiener(m));
        }
        Ok(())
    }

    pub fn noise(&self) -> NoiseKind {
        self.noise.clone().unwrap_or_else(|| NoiseKind::wiener(1))
    }

    fn state_dim(&self) -> usize {
        self.problem.drift.to_vec().len()
    }

    fn sigma_matrix(&self) -> Result<Array2<f64>> {
        let d = self.state_dim();
        match &self.problem.sigma {
            SigmaSpec::Scalar(s) => Ok(Array2::eye(d) * *s),
            SigmaSpec::Matrix(rows) => {
                let m = rows.first().map_or(0, Vec::len);
                if rows.len() != d || m == 0 || rows.iter().any(|r| r.len() != m) {
                    return Err(Error::config_key(
                        "problem.sigma",
                        format!("expected a {d}-row rectangular matrix"),
                    ));
                }
                Ok(Array2::from_shape_fn((d, m), |(i, j)| rows[i][j]))
            }
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.mesh.n, self.problem.horizon).map_err(|e| Error::config_key("mesh.n", e.to_string()))
    }

    /// Build the problem statement.
    pub fn sde(&self) -> Result<SdeSpec> {
        let sources = self.problem.drift.to_vec();
        let mut components = Vec::with_capacity(sources.len());
        for (i, s) in sources.iter().enumerate() {
            let key = if sources.len() == 1 {
                "problem.drift".to_string()
            } else {
                format!("problem.drift[{i}]")
            };
            components.push(parse_drift_expr(s).map_err(|e| Error::config_key(key, e.to_string()))?);
        }
        let drift = DriftDescriptor::expression(components, self.problem.lipschitz, self.problem.drift_bound)
            .map_err(|e| Error::config_key("problem", e.to_string()))?;
        let x0 = match &self.problem.x0 {
            OneOrMany::One(v) => vec![*v; drift.dim()],
            OneOrMany::Many(v) => v.clone(),
        };
        let noise = self.noise();
        noise.validate().map_err(|e| Error::config_key("noise", e.to_string()))?;
        SdeSpec::new(drift, self.sigma_matrix()?, x0, self.problem.horizon, noise)
            .map_err(|e| Error::config_key("problem", e.to_string()))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let sde = self.sde()?;
        let loss = self.training.loss.resolve(sde.noise())?;
        Ok(TrainConfig {
            grid: self.grid()?,
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            schedule: self.training.schedule,
            loss,
            seed: self.seed,
            width_cap: self.network.width_cap,
            init: self.network.init,
            sde,
        })
    }

    pub fn eval_config(&self) -> EvalConfig {
        let mut c = EvalConfig::new(self.evaluation.paths, self.seed);
        c.reference_steps = self.evaluation.reference_steps;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::config_key("seed", "must be below 2^63"));
        }
        let positive = [
            ("mesh.n", self.mesh.n),
            ("network.width_cap", self.network.width_cap),
            ("training.epochs", self.training.epochs),
            ("training.batch_size", self.training.batch_size),
            ("evaluation.paths", self.evaluation.paths),
            ("evaluation.reference_steps", self.evaluation.reference_steps),
            ("simulate.paths", self.simulate.paths),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config_key(key, "must be positive"));
            }
        }
        if !(self.problem.horizon.is_finite() && self.problem.horizon > 0.0) {
            return Err(Error::config_key("problem.horizon", "must be positive"));
        }
        if !self.evaluation.reference_steps.is_multiple_of(self.mesh.n) {
            return Err(Error::config_key(
                "evaluation.reference_steps, mesh.n",
                "the reference mesh must refine the training mesh",
            ));
        }
        if self.evaluation.dump_paths > self.evaluation.paths {
            return Err(Error::config_key("evaluation.dump_paths", "cannot exceed evaluation.paths"));
        }
        self.training
            .schedule
            .validate()
            .map_err(|e| Error::config_key("training.schedule", e.to_string()))?;
        if self.problem.x0.to_vec().iter().any(|v| !v.is_finite()) {
            return Err(Error::config_key("problem.x0", "must be finite"));
        }
        if let OneOrMany::Many(v) = &self.problem.x0 {
            if v.len() != self.state_dim() {
                return Err(Error::config_key(
                    "problem.x0",
                    format!("has length {} but the drift has {} components", v.len(), self.state_dim()),
                ));
            }
        }
        let noise = self.noise();
        if noise.dimension() != self.sigma_matrix()?.ncols() {
            return Err(Error::config_key(
                "problem.sigma, noise",
                format!(
                    "sigma has {} columns but the noise has dimension {}",
                    self.sigma_matrix()?.ncols(),
                    noise.dimension()
                ),
            ));
        }
        self.training.loss.resolve(&noise)?;
        self.sde()?;
        Ok(())
    }

    /// Canonical serialized form with every default spelled out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize configuration: {e}")))
    }
}
