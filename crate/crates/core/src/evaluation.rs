//! Reconstruction `X̄ = N̄ + σ L` and the mean-square error metrics
//!
//! err_time     = sqrt( (1/M) Σ_i (T/n) Σ_{j=1..n} ||X̄_i(t_j) - X_i(t_j)||² )
//! err_terminal = sqrt( (1/M) Σ_i ||X̄_i(T) - X_i(T)||² )
//!
//! against Euler–Maruyama on fresh fine paths.

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::bridge::brownian_bridge_mean_var;
use crate::csv_io::{format_float, Table};
use crate::error::{Error, Result};
use crate::levy_paths::{sample_levy_path, PathSample, TimeGrid};
use crate::network::{head_forward_batch, head_values, EvalBatch, Real};
use crate::reference::{euler_maruyama, subsample, Trajectory, REFERENCE_STEPS};
use crate::rng::{stream, Domain};
use crate::sde::{make_rode_rhs, SdeSpec};
use crate::training::TrainedModel;

/// Paths evaluated per parallel work item.
const EVAL_CHUNK: usize = 8;

/// Produces `X̄` on every node of the coarse path's mesh.
pub trait Predictor: Sync {
    /// `fine` is the reference-resolution path and `coarse` its restriction to
    /// the evaluation mesh. Returns `(n+1) x d`.
    fn predict(&self, fine: &PathSample, coarse: &PathSample) -> Result<Array2<f64>>;
}

/// `x0 + σ L(t)`: the drift-free yardstick.
pub struct Baseline<'a> {
    pub sde: &'a SdeSpec,
}

pub fn baseline_predictor(sde: &SdeSpec, path: &PathSample, t: f64) -> Result<Vec<f64>> {
    let j = path
        .grid
        .index_of(t)
        .ok_or_else(|| Error::Domain(format!("t = {t} is not a mesh point")))?;
    let mut out = vec![0.0; sde.state_dim()];
    sde.apply_sigma(path.at(j).as_slice().unwrap(), &mut out);
    for (o, x) in out.iter_mut().zip(sde.x0()) {
        *o += x;
    }
    Ok(out)
}

fn add_noise_rows(sde: &SdeSpec, path: &PathSample, base: &mut Array2<f64>) {
    let mut shift = vec![0.0; sde.state_dim()];
    for (j, mut row) in base.rows_mut().into_iter().enumerate() {
        sde.apply_sigma(path.at(j).as_slice().unwrap(), &mut shift);
        for (r, s) in row.iter_mut().zip(&shift) {
            *r += s;
        }
    }
}

impl Predictor for Baseline<'_> {
    fn predict(&self, _fine: &PathSample, coarse: &PathSample) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((coarse.grid.n() + 1, self.sde.state_dim()));
        for mut row in out.rows_mut() {
            row.assign(&ndarray::ArrayView1::from(self.sde.x0()));
        }
        add_noise_rows(self.sde, coarse, &mut out);
        Ok(out)
    }
}

/// The Euler–Maruyama reference itself.
pub struct ReferencePredictor<'a> {
    pub sde: &'a SdeSpec,
}

impl Predictor for ReferencePredictor<'_> {
    fn predict(&self, fine: &PathSample, coarse: &PathSample) -> Result<Array2<f64>> {
        Ok(subsample(&euler_maruyama(self.sde, fine)?, coarse.grid)?.states)
    }
}

fn model_batch<T: Real>(model: &TrainedModel<T>, path: &PathSample, times: &[f64]) -> Result<EvalBatch<T>> {
    let input = path.network_input(model.grid)?;
    EvalBatch::from_rows(&[&input], times.iter().map(|&t| (0, t)).collect())
}

impl<T: Real> Predictor for TrainedModel<T> {
    fn predict(&self, _fine: &PathSample, coarse: &PathSample) -> Result<Array2<f64>> {
        let times = coarse.grid.points();
        let mut out = head_values(&self.params, &self.head, &model_batch(self, coarse, &times)?)?;
        add_noise_rows(&self.sde, coarse, &mut out);
        Ok(out)
    }
}

/// `X̄(t) = N̄(t) + σ L(t)`. Off-mesh times need `interpolate`, which uses the
/// bridge mean for `L(t)`.
pub fn reconstruct_x<T: Real>(model: &TrainedModel<T>, path: &PathSample, t: f64, interpolate: bool) -> Result<Vec<f64>> {
    let noise = match path.grid.index_of(t) {
        Some(j) => path.at(j).to_vec(),
        None if interpolate => {
            if path.kind.is_wiener() {
                brownian_bridge_mean_var(path, t)?.0
            } else {
                let mut l = vec![0.0; path.dimension()];
                path.interpolate(t, &mut l);
                l
            }
        }
        None => {
            return Err(Error::Domain(format!(
                "t = {t} is not a mesh point; enable interpolation to evaluate off the mesh"
            )))
        }
    };
    let v = head_values(&model.params, &model.head, &model_batch(model, path, &[t])?)?;
    let mut shift = vec![0.0; model.sde.state_dim()];
    model.sde.apply_sigma(&noise, &mut shift);
    Ok(v.row(0).iter().zip(&shift).map(|(a, b)| a + b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub paths: usize,
    pub reference_steps: usize,
    pub seed: u64,
    pub keep_per_path: bool,
}

impl EvalConfig {
    pub fn new(paths: usize, seed: u64) -> Self {
        EvalConfig {
            paths,
            reference_steps: REFERENCE_STEPS,
            seed,
            keep_per_path: false,
        }
    }
}

/// Per-path squared errors, before averaging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathError {
    pub time_sq: f64,
    pub terminal_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub n: usize,
    pub m: usize,
    pub err_time: f64,
    pub err_terminal: f64,
    pub baseline_err_time: f64,
    pub baseline_err_terminal: f64,
    pub per_path: Vec<PathError>,
}

impl ErrorReport {
    pub const HEADER: [&'static str; 6] = [
        "n",
        "M",
        "err_time",
        "err_terminal",
        "baseline_err_time",
        "baseline_err_terminal",
    ];

    pub fn row(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            self.m.to_string(),
            format_float(self.err_time),
            format_float(self.err_terminal),
            format_float(self.baseline_err_time),
            format_float(self.baseline_err_terminal),
        ]
    }

    pub fn to_table(&self, seed: u64) -> Table {
        let mut t = Table::new(Self::HEADER).comment(format!("seed={seed}"));
        t.push(self.row());
        t
    }

    pub fn write_csv(&self, path: &Path, seed: u64) -> Result<()> {
        self.to_table(seed).write(path)
    }
}

fn path_error(grid: TimeGrid, pred: &Array2<f64>, reference: &Trajectory) -> PathError {
    let n = grid.n();
    let sq = |j: usize| -> f64 {
        pred.row(j)
            .iter()
            .zip(reference.at(j).iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum()
    };
    let time_sq = grid.step() * (1..=n).map(sq).sum::<f64>();
    PathError {
        time_sq,
        terminal_sq: sq(n),
    }
}

fn root_mean(xs: &[PathError]) -> (f64, f64) {
    let m = xs.len() as f64;
    (
        (xs.iter().map(|e| e.time_sq).sum::<f64>() / m).sqrt(),
        (xs.iter().map(|e| e.terminal_sq).sum::<f64>() / m).sqrt(),
    )
}

/// `(fine, coarse, reference on the coarse mesh)` for evaluation path `i`.
pub fn evaluation_path(sde: &SdeSpec, grid: TimeGrid, config: &EvalConfig, i: usize) -> Result<(PathSample, PathSample, Trajectory)> {
    let fine_grid = TimeGrid::new(config.reference_steps, sde.horizon())?;
    let mut rng = stream(config.seed, Domain::Evaluation, i as u64, 0);
    let fine = sample_levy_path(sde.noise(), fine_grid, &mut rng)?;
    let coarse = fine.subsample(grid)?;
    let reference = subsample(&euler_maruyama(sde, &fine)?, grid)?;
    Ok((fine, coarse, reference))
}

/// Error reports for several predictors on the same evaluation paths. The
/// baseline columns of every report refer to `x0 + σ L`.
pub fn compare_predictors(
    predictors: &[&dyn Predictor],
    sde: &SdeSpec,
    grid: TimeGrid,
    config: &EvalConfig,
) -> Result<Vec<ErrorReport>> {
    if config.paths == 0 {
        return Err(Error::Config("evaluation needs at least one path (M >= 1)".into()));
    }
    if grid.stride_in(&TimeGrid::new(config.reference_steps, sde.horizon())?).is_none() {
        return Err(Error::Config(format!(
            "evaluation mesh n={} is not nested in the reference mesh n={}",
            grid.n(),
            config.reference_steps
        )));
    }
    let baseline = Baseline { sde };
    let chunks: Vec<Vec<(Vec<PathError>, PathError)>> = (0..config.paths.div_ceil(EVAL_CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * EVAL_CHUNK;
            let hi = (lo + EVAL_CHUNK).min(config.paths);
            (lo..hi)
                .map(|i| {
                    let (fine, coarse, reference) = evaluation_path(sde, grid, config, i)?;
                    let errs = predictors
                        .iter()
                        .map(|p| Ok(path_error(grid, &p.predict(&fine, &coarse)?, &reference)))
                        .collect::<Result<Vec<_>>>()?;
                    let base = path_error(grid, &baseline.predict(&fine, &coarse)?, &reference);
                    Ok((errs, base))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<(Vec<PathError>, PathError)> = chunks.into_iter().flatten().collect();
    let base: Vec<PathError> = rows.iter().map(|r| r.1).collect();
    let (bt, bh) = root_mean(&base);
    let reports = (0..predictors.len())
        .map(|k| {
            let errs: Vec<PathError> = rows.iter().map(|r| r.0[k]).collect();
            let (et, eh) = root_mean(&errs);
            ErrorReport {
                n: grid.n(),
                m: config.paths,
                err_time: et,
                err_terminal: eh,
                baseline_err_time: bt,
                baseline_err_terminal: bh,
                per_path: if config.keep_per_path { errs } else { Vec::new() },
            }
        })
        .collect();
    Ok(reports)
}

pub fn err_metrics(predictor: &dyn Predictor, sde: &SdeSpec, grid: TimeGrid, config: &EvalConfig) -> Result<ErrorReport> {
    Ok(compare_predictors(&[predictor], sde, grid, config)?.remove(0))
}

/// Single-path trajectory dump with columns
/// `t, expected_derivative_k, actual_derivative_k, x_bar_k, x_ref_k`:
/// the expected derivative is `f(t, N̄, L(t))`, the actual one `∂t N̄`.
pub fn trajectory_dump<T: Real>(model: &TrainedModel<T>, config: &EvalConfig, grid: TimeGrid, i: usize) -> Result<Table> {
    let sde = &model.sde;
    let (fine, coarse, reference) = evaluation_path(sde, grid, config, i)?;
    let rhs = make_rode_rhs(sde)?;
    let times = grid.points();
    let out = head_forward_batch(&model.params, &model.head, &model_batch(model, &coarse, &times)?)?;
    let xbar = model.predict(&fine, &coarse)?;
    let d = sde.state_dim();
    let mut header = vec!["t".to_string()];
    for prefix in ["expected_derivative", "actual_derivative", "x_bar", "x_ref"] {
        header.extend((1..=d).map(|k| format!("{prefix}_{k}")));
    }
    let mut table = Table::new(header)
        .comment(format!("seed={}", config.seed))
        .comment(format!("path={i}"));
    for (j, &t) in times.iter().enumerate() {
        // f at T uses L(T-) for jump noise
        let row_l = if j == grid.n() && coarse.kind.has_jumps() { j - 1 } else { j };
        let f = rhs.eval(t, out.value.row(j).as_slice().unwrap(), coarse.at(row_l).as_slice().unwrap())?;
        let mut row = vec![t];
        row.extend(f);
        row.extend(out.dvalue.row(j).iter());
        row.extend(xbar.row(j).iter());
        row.extend(reference.at(j).iter());
        table.push_floats(&row);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Architecture, MlpParams};
    use crate::sde::DriftDescriptor;

    fn example1() -> SdeSpec {
        SdeSpec::scalar(DriftDescriptor::mean_reversion(5.0, 0.4, 1), 0.61, -0.3, 1.0).unwrap()
    }

    fn zero_model(sde: &SdeSpec, n: usize) -> TrainedModel<f64> {
        let grid = TimeGrid::new(n, sde.horizon()).unwrap();
        let arch = Architecture::for_problem(n, 1, 1, 16).unwrap();
        TrainedModel::from_params(MlpParams::zeros(&arch), sde.clone(), grid).unwrap()
    }

    fn small_eval(paths: usize) -> EvalConfig {
        EvalConfig {
            paths,
            reference_steps: 1 << 12,
            seed: 5,
            keep_per_path: true,
        }
    }

    #[test]
    fn reconstruction_of_zero_model() {
        let sde = example1();
        let model = zero_model(&sde, 8);
        let path = PathSample::generate(sde.noise(), model.grid, 2).unwrap();
        assert_eq!(reconstruct_x(&model, &path, 0.0, false).unwrap(), vec![-0.3]);
        for j in 0..=8 {
            let t = model.grid.point(j);
            let x = reconstruct_x(&model, &path, t, false).unwrap()[0];
            let expected = -0.3 + 3.5 * t + 0.61 * path.values[[j, 0]];
            assert!((x - expected).abs() < 1e-15);
        }
        assert!(matches!(reconstruct_x(&model, &path, 0.3, false), Err(Error::Domain(_))));
        assert!(reconstruct_x(&model, &path, 0.3, true).is_ok());
    }

    #[test]
    fn no_noise_recovers_pinn_prediction() {
        let sde = SdeSpec::scalar(DriftDescriptor::mean_reversion(5.0, 0.4, 1), 0.0, -0.3, 1.0).unwrap();
        let model = zero_model(&sde, 4);
        let path = PathSample::generate(sde.noise(), model.grid, 2).unwrap();
        let input = path.network_input(model.grid).unwrap();
        for j in 0..=4 {
            let t = model.grid.point(j);
            let nbar = crate::network::head_forward(&model.params, &model.head, t, &input).unwrap();
            assert_eq!(reconstruct_x(&model, &path, t, false).unwrap(), nbar);
        }
    }

    #[test]
    fn self_comparison_is_exact() {
        let sde = example1();
        let grid = TimeGrid::new(16, 1.0).unwrap();
        let r = err_metrics(&ReferencePredictor { sde: &sde }, &sde, grid, &small_eval(10)).unwrap();
        assert_eq!(r.err_time, 0.0);
        assert_eq!(r.err_terminal, 0.0);
        assert!(r.baseline_err_time > 0.0);
    }

    #[test]
    fn baseline_exact_without_drift() {
        let sde = SdeSpec::scalar(DriftDescriptor::zero(1), 0.61, -0.3, 1.0).unwrap();
        let grid = TimeGrid::new(16, 1.0).unwrap();
        let r = err_metrics(&Baseline { sde: &sde }, &sde, grid, &small_eval(10)).unwrap();
        assert!(r.err_time < 1e-14 && r.err_terminal < 1e-14);
        assert!(r.baseline_err_time < 1e-14);
    }

    #[test]
    fn streaming_and_two_pass_agree() {
        let sde = example1();
        let model = zero_model(&sde, 16);
        let r = err_metrics(&model, &sde, model.grid, &small_eval(20)).unwrap();
        let m = r.per_path.len() as f64;
        // reversed accumulation of the per-path sums
        let reversed = (r.per_path.iter().rev().map(|e| e.time_sq).sum::<f64>() / m).sqrt();
        assert!((reversed - r.err_time).abs() <= 1e-12 * r.err_time);
        let again = err_metrics(&model, &sde, model.grid, &small_eval(20)).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn zero_paths_rejected() {
        let sde = example1();
        let model = zero_model(&sde, 16);
        assert!(matches!(
            err_metrics(&model, &sde, model.grid, &small_eval(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dump_has_consistent_columns() {
        let sde = example1();
        let model = zero_model(&sde, 8);
        let table = trajectory_dump(&model, &small_eval(1), model.grid, 0).unwrap();
        assert_eq!(table.header.len(), 5);
        assert_eq!(table.rows.len(), 9);
        let actual = table.floats("actual_derivative_1").unwrap();
        assert_eq!(actual[0], 3.5);
        let x = table.floats("x_bar_1").unwrap();
        let xr = table.floats("x_ref_1").unwrap();
        assert_eq!(x[0], -0.3);
        assert_eq!(xr[0], -0.3);
    }
}
