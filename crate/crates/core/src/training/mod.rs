//! Empirical losses, the Robbins–Monro loop and the trained model.

mod surrogate;

pub use surrogate::{
    quadrature_loss_estimate, surrogate_grid_loss, theoretical_loss_estimate, Estimate, HermiteTrajectory,
    NetworkSurrogate, PerturbedSurrogate, RodeSolutionSurrogate, Surrogate,
};

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge::{sample_bridge, BridgeDraw};
use crate::csv_io::Table;
use crate::error::{Error, Result};
use crate::levy_paths::{sample_levy_path, NoiseKind, PathSample, TimeGrid};
use crate::network::{
    head_forward, head_forward_with_time_derivative, init_params, loss_weight_gradient, Architecture, EvalBatch,
    HeadBinding, InitScheme, MlpParams, PointLoss, Real, DEFAULT_WIDTH_CAP,
};
use crate::rng::{stream, Domain};
use crate::sde::{make_rode_rhs, RodeRhs, SdeSpec};

/// Batch losses above this abort training.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;
pub const DEFAULT_BATCH_SIZE: usize = 64;
/// Points per forward/backward pass when the grid loss is used.
const GRID_CHUNK_POINTS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    /// `eta0 (1 + k)^(-gamma)`
    PowerDecay { eta0: f64, gamma: f64 },
    Constant { eta0: f64 },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::PowerDecay { eta0: 1e-3, gamma: 0.6 }
    }
}

impl LrSchedule {
    pub fn eta(&self, k: usize) -> f64 {
        match *self {
            LrSchedule::PowerDecay { eta0, gamma } => eta0 * (1.0 + k as f64).powf(-gamma),
            LrSchedule::Constant { eta0 } => eta0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let eta0 = match *self {
            LrSchedule::PowerDecay { eta0, gamma } => {
                if !(gamma > 0.5 && gamma <= 1.0) {
                    return Err(Error::InvalidParameter(format!("gamma must lie in (0.5, 1], got {gamma}")));
                }
                eta0
            }
            LrSchedule::Constant { eta0 } => eta0,
        };
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta0 must be positive, got {eta0}")));
        }
        Ok(())
    }

    /// A constant rate has a divergent sum of squares.
    pub fn is_theory_violating(&self) -> bool {
        matches!(self, LrSchedule::Constant { .. })
    }

    pub fn describe(&self) -> String {
        match *self {
            LrSchedule::PowerDecay { eta0, gamma } => format!("power_decay(eta0={eta0}, gamma={gamma})"),
            LrSchedule::Constant { eta0 } => format!("constant(eta0={eta0}, theory-violating)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Random time, driving value drawn from the Wiener bridge.
    Bridge,
    /// Left-point Riemann sum on the mesh.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    #[default]
    Auto,
    Bridge,
    Grid,
}

impl LossChoice {
    /// Auto selects the bridge loss for Wiener noise and the grid loss otherwise.
    pub fn resolve(self, noise: &NoiseKind) -> Result<LossKind> {
        match self {
            LossChoice::Auto if noise.is_wiener() => Ok(LossKind::Bridge),
            LossChoice::Auto | LossChoice::Grid => Ok(LossKind::Grid),
            LossChoice::Bridge if noise.is_wiener() => Ok(LossKind::Bridge),
            LossChoice::Bridge => Err(Error::ConfigKey {
                key: "training.loss, noise.kind".into(),
                message: format!(
                    "the bridge loss needs Wiener noise but noise.kind is {}; use loss = \"grid\"",
                    noise.label()
                ),
            }),
        }
    }
}

impl LossKind {
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Bridge => "bridge",
            LossKind::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sde: SdeSpec,
    /// The information mesh the network sees.
    pub grid: TimeGrid,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub loss: LossKind,
    pub seed: u64,
    pub width_cap: usize,
    pub init: InitScheme,
}

impl TrainConfig {
    /// Defaults: batch 64, `PowerDecay(1e-3, 0.6)`, automatic loss, width cap 512.
    pub fn new(sde: SdeSpec, n: usize, epochs: usize, seed: u64) -> Result<Self> {
        let grid = TimeGrid::new(n, sde.horizon())?;
        let loss = LossChoice::Auto.resolve(sde.noise())?;
        Ok(TrainConfig {
            sde,
            grid,
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            schedule: LrSchedule::default(),
            loss,
            seed,
            width_cap: DEFAULT_WIDTH_CAP,
            init: InitScheme::Glorot,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.width_cap == 0 {
            return Err(Error::InvalidParameter(
                "epochs, batch size and width cap must be positive".into(),
            ));
        }
        if (self.grid.horizon() - self.sde.horizon()).abs() > 0.0 {
            return Err(Error::Config("mesh horizon differs from the problem horizon".into()));
        }
        if self.loss == LossKind::Bridge && !self.sde.noise().is_wiener() {
            LossChoice::Bridge.resolve(self.sde.noise())?;
        }
        self.schedule.validate()
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::for_problem(
            self.grid.n(),
            self.sde.noise_dim(),
            self.sde.state_dim(),
            self.width_cap,
        )
    }

    pub fn initial_params<T: Real>(&self) -> Result<MlpParams<T>> {
        Ok(init_params(
            &self.architecture()?,
            self.init,
            &mut stream(self.seed, Domain::Init, 0, 0),
        ))
    }
}

/// One batch element: a path on the training mesh and, for the bridge
/// loss, the random time with its bridge draw.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub path: PathSample,
    pub draw: Option<BridgeDraw>,
}

/// The batch of epoch `k`; element `b` uses stream `(seed, training, k, b)`.
pub fn sample_batch(config: &TrainConfig, epoch: usize) -> Result<Vec<TrainingSample>> {
    (0..config.batch_size)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(config.seed, Domain::Training, epoch as u64, b as u64);
            let path = sample_levy_path(config.sde.noise(), config.grid, &mut rng)?;
            let draw = match config.loss {
                LossKind::Bridge => {
                    let tau = rng.random::<f64>() * config.grid.horizon();
                    Some(sample_bridge(&path, tau, &mut rng)?)
                }
                LossKind::Grid => None,
            };
            Ok(TrainingSample { path, draw })
        })
        .collect()
}

/// `Σ_k weight_k ||∂t N̄(t_k) - f(t_k, N̄(t_k), w_k)||²`, with `w_k`
/// stored row-wise in `noise`.
struct ResidualLoss<'a> {
    rhs: &'a RodeRhs,
    noise: Vec<f64>,
    weights: Vec<f64>,
}

impl ResidualLoss<'_> {
    fn residual(&self, k: usize, t: f64, value: &[f64], dvalue: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = self.rhs.noise_dim();
        let w = &self.noise[k * m..(k + 1) * m];
        let (f, jac) = self.rhs.eval_with_jacobian(t, value, w)?;
        let r = dvalue.iter().zip(&f).map(|(a, b)| a - b).collect();
        Ok((r, jac))
    }
}

impl PointLoss for ResidualLoss<'_> {
    fn eval(&mut self, k: usize, t: f64, value: &[f64], dvalue: &[f64], gv: &mut [f64], gdv: &mut [f64]) -> Result<f64> {
        let (r, jac) = self.residual(k, t, value, dvalue)?;
        let d = r.len();
        let c = self.weights[k];
        for i in 0..d {
            gdv[i] = 2.0 * c * r[i];
            // -2c (df/dy)^T r
            gv[i] = -2.0 * c * (0..d).map(|a| jac[a * d + i] * r[a]).sum::<f64>();
        }
        Ok(c * r.iter().map(|x| x * x).sum::<f64>())
    }
}

fn to_batch<T: Real>(paths: &[&PathSample], grid: TimeGrid, points: Vec<(usize, f64)>) -> Result<EvalBatch<T>> {
    let inputs: Vec<Vec<f64>> = paths.iter().map(|p| p.network_input(grid)).collect::<Result<_>>()?;
    let rows: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
    EvalBatch::from_rows(&rows, points)
}

/// Batch-mean loss and its gradient. Accumulation order is fixed.
pub fn batch_loss_gradient<T: Real>(
    params: &MlpParams<T>,
    head: &HeadBinding,
    rhs: &RodeRhs,
    grid: TimeGrid,
    samples: &[TrainingSample],
) -> Result<(f64, MlpParams<T>)> {
    let b = samples.len() as f64;
    let horizon = grid.horizon();
    let m = rhs.noise_dim();
    if samples.iter().all(|s| s.draw.is_some()) {
        let paths: Vec<&PathSample> = samples.iter().map(|s| &s.path).collect();
        let mut points = Vec::with_capacity(samples.len());
        let mut noise = Vec::with_capacity(samples.len() * m);
        for (i, s) in samples.iter().enumerate() {
            let draw = s.draw.as_ref().unwrap();
            points.push((i, draw.tau));
            noise.extend_from_slice(&draw.value);
        }
        let batch = to_batch(&paths, grid, points)?;
        let mut loss = ResidualLoss {
            rhs,
            noise,
            weights: vec![horizon / b; samples.len()],
        };
        return loss_weight_gradient(params, head, &batch, &mut loss);
    }

    let n = grid.n();
    let per_chunk = (GRID_CHUNK_POINTS / n).max(1);
    let mut total = 0.0;
    let mut grad = MlpParams::zeros(&params.arch);
    for chunk in samples.chunks(per_chunk) {
        let paths: Vec<&PathSample> = chunk.iter().map(|s| &s.path).collect();
        let mut points = Vec::with_capacity(chunk.len() * n);
        let mut noise = Vec::with_capacity(chunk.len() * n * m);
        for (i, s) in chunk.iter().enumerate() {
            let stride = grid
                .stride_in(&s.path.grid)
                .ok_or_else(|| Error::Config("sample path is not on the training mesh".into()))?;
            for j in 0..n {
                points.push((i, grid.point(j)));
                noise.extend(s.path.at(j * stride).iter());
            }
        }
        let batch = to_batch(&paths, grid, points)?;
        let mut loss = ResidualLoss {
            rhs,
            noise,
            weights: vec![horizon / n as f64 / b; chunk.len() * n],
        };
        let (l, g) = loss_weight_gradient(params, head, &batch, &mut loss)?;
        total += l;
        grad.axpy(T::one(), &g)?;
    }
    Ok((total, grad))
}

/// Single-path bridge loss: `||N̄(0) - x0||² + T ||∂t N̄(τ) - f(τ, N̄(τ), L̃(τ))||²`.
pub fn empirical_loss_bridge<T: Real>(
    params: &MlpParams<T>,
    head: &HeadBinding,
    rhs: &RodeRhs,
    path: &PathSample,
    draw: &BridgeDraw,
) -> Result<f64> {
    let input = path.network_input(path.grid)?;
    let v0 = head_forward(params, head, 0.0, &input)?;
    let initial: f64 = v0.iter().zip(&head.x0).map(|(a, b)| (a - b).powi(2)).sum();
    let (v, dv) = head_forward_with_time_derivative(params, head, draw.tau, &input)?;
    let f = rhs.eval(draw.tau, &v, &draw.value)?;
    let res: f64 = dv.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(initial + path.grid.horizon() * res)
}

/// Grid loss `(T/N) Σ_{j<N} ||∂t N̄(t_j) - f(t_j, N̄(t_j), L(t_j))||²` over the
/// nodes of `path.grid`; the network sees the path through `net_grid`.
pub fn empirical_loss_grid<T: Real>(
    params: &MlpParams<T>,
    head: &HeadBinding,
    rhs: &RodeRhs,
    net_grid: TimeGrid,
    path: &PathSample,
) -> Result<f64> {
    let input = path.network_input(net_grid)?;
    let g = path.grid;
    let points: Vec<(usize, f64)> = (0..g.n()).map(|j| (0, g.point(j))).collect();
    let batch = EvalBatch::<T>::from_rows(&[&input], points)?;
    let out = crate::network::head_forward_batch(params, head, &batch)?;
    let mut sum = 0.0;
    for j in 0..g.n() {
        let v = out.value.row(j).to_vec();
        let f = rhs.eval(g.point(j), &v, path.at(j).as_slice().unwrap())?;
        sum += out.dvalue.row(j).iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(g.step() * sum)
}

/// `w <- w - eta g`.
pub fn sgd_step<T: Real>(params: &mut MlpParams<T>, gradient: &MlpParams<T>, eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!("learning rate must be positive, got {eta}")));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { stage: "gradient", index: i });
    }
    params.axpy(-T::lift(eta), gradient)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-mean loss at the parameters before this epoch's step.
    pub loss: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<T> {
    pub params: MlpParams<T>,
    pub head: HeadBinding,
    pub sde: SdeSpec,
    pub grid: TimeGrid,
    pub loss: LossKind,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    pub wall_seconds: f64,
}

impl<T: Real> TrainedModel<T> {
    /// Wrap parameters (e.g. a loaded checkpoint or a fresh init) as a model.
    pub fn from_params(params: MlpParams<T>, sde: SdeSpec, grid: TimeGrid) -> Result<Self> {
        let rhs = make_rode_rhs(&sde)?;
        let head = HeadBinding::new(&rhs, sde.x0())?;
        let expected = Architecture::for_problem(grid.n(), sde.noise_dim(), sde.state_dim(), usize::MAX)?;
        if params.arch.input_dim != expected.input_dim || params.arch.output_dim != expected.output_dim {
            return Err(Error::Config(format!(
                "network has input {} and output {} but the problem needs {} and {}",
                params.arch.input_dim, params.arch.output_dim, expected.input_dim, expected.output_dim
            )));
        }
        Ok(TrainedModel {
            params,
            head,
            loss: LossChoice::Auto.resolve(sde.noise())?,
            sde,
            grid,
            schedule: LrSchedule::default(),
            seed: 0,
            history: Vec::new(),
            wall_seconds: 0.0,
        })
    }

    /// Loss history as `epoch,loss,eta`; the header comments carry no timing.
    pub fn history_table(&self) -> Table {
        let mut t = Table::new(["epoch", "loss", "eta"])
            .comment(format!("seed={}", self.seed))
            .comment(format!("loss={}", self.loss.label()))
            .comment(format!("schedule={}", self.schedule.describe()));
        for r in &self.history {
            t.push(vec![
                r.epoch.to_string(),
                crate::csv_io::format_float(r.loss),
                crate::csv_io::format_float(r.eta),
            ]);
        }
        t
    }

    pub fn write_history(&self, path: &Path) -> Result<()> {
        self.history_table().write(path)
    }
}

pub fn train<T: Real>(config: &TrainConfig) -> Result<TrainedModel<T>> {
    train_with(config, config.initial_params()?, |_, _| Ok(()))
}

/// Training from given initial parameters; `observer` runs after every step.
pub fn train_with<T: Real, F>(config: &TrainConfig, init: MlpParams<T>, mut observer: F) -> Result<TrainedModel<T>>
where
    F: FnMut(&EpochRecord, &MlpParams<T>) -> Result<()>,
{
    config.validate()?;
    let start = Instant::now();
    let rhs = make_rode_rhs(&config.sde)?;
    let head = HeadBinding::new(&rhs, config.sde.x0())?;
    let mut params = init;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let eta = config.schedule.eta(epoch);
        let samples = sample_batch(config, epoch)?;
        let (loss, grad) = match batch_loss_gradient(&params, &head, &rhs, config.grid, &samples) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() || loss > DIVERGENCE_THRESHOLD {
            return Err(Error::Diverged { epoch, loss });
        }
        sgd_step(&mut params, &grad, eta).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Diverged { epoch, loss },
            e => e,
        })?;
        let record = EpochRecord { epoch, loss, eta };
        history.push(record);
        observer(&record, &params)?;
    }
    Ok(TrainedModel {
        params,
        head,
        sde: config.sde.clone(),
        grid: config.grid,
        loss: config.loss,
        schedule: config.schedule,
        seed: config.seed,
        history,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean of the first and last `window` recorded losses.
pub fn window_means(history: &[EpochRecord], window: usize) -> (f64, f64) {
    let w = window.min(history.len()).max(1);
    let mean = |s: &[EpochRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len() as f64;
    (mean(&history[..w]), mean(&history[history.len() - w..]))
}
