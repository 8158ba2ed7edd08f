//! Command-line front end: one TOML config plus `--set key=value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{parse_config_with, RunConfig};
use crate::csv_io::{format_float, Table};
use crate::error::{Error, Result};
use crate::evaluation::{compare_predictors, err_metrics, evaluation_path, trajectory_dump, ErrorReport};
use crate::levy_paths::{sample_levy_path, TimeGrid};
use crate::network::{checkpoint_precision, read_checkpoint, write_checkpoint, Checkpoint, Precision, Real};
use crate::reference::integrate_rode;
use crate::rng::{stream, Domain};
use crate::sde::{a_priori_bounds, make_rode_rhs};
use crate::training::{train_with, TrainedModel};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const ERRORS_FILE: &str = "errors.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "spinn", version, about = "Train and evaluate stochastic physics-informed networks for additive-noise SDEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override a configuration value, e.g. `--set training.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network; writes a checkpoint and the loss history.
    Train(Common),
    /// Compare a trained network with the reference solution on fresh paths.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load; defaults to `<output.dir>/checkpoint.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sample driving paths on the training mesh.
    SimulatePaths(Common),
    /// Reference Euler-Maruyama trajectories of the evaluation paths.
    Reference(Common),
    /// Check the a-priori bounds on integrated random-ODE trajectories.
    BoundsAudit(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train(c)
            | Command::SimulatePaths(c)
            | Command::Reference(c)
            | Command::BoundsAudit(c)
            | Command::Evaluate { common: c, .. } => c,
        }
    }
}

/// One-line error message: `error[<kind>]: <message>`.
pub fn error_line(err: &Error) -> String {
    let msg = err.to_string().replace(['\n', '\r'], " ");
    format!("error[{}]: {msg}", err.kind())
}

pub fn load_config(common: &Common) -> Result<RunConfig> {
    let path = &common.config;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match parse_config_with(&text, &common.overrides) {
        Err(Error::Syntax { line, column, message }) => Err(Error::Syntax {
            line,
            column,
            message: format!("{}: {message}", path.display()),
        }),
        other => other,
    }
}

fn output_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Execute a command; returns the lines to print on success.
pub fn run(cli: &Cli) -> Result<Vec<String>> {
    let config = load_config(cli.command.common())?;
    match &cli.command {
        Command::Train(_) => match config.network.precision {
            Precision::Single => train_cmd::<f32>(&config),
            Precision::Double => train_cmd::<f64>(&config),
        },
        Command::Evaluate { checkpoint, .. } => {
            let path = checkpoint
                .clone()
                .unwrap_or_else(|| config.output.dir.join(CHECKPOINT_FILE));
            match checkpoint_precision(&path)? {
                Precision::Single => evaluate_cmd::<f32>(&config, &path),
                Precision::Double => evaluate_cmd::<f64>(&config, &path),
            }
        }
        Command::SimulatePaths(_) => simulate_cmd(&config),
        Command::Reference(_) => reference_cmd(&config),
        Command::BoundsAudit(_) => bounds_cmd(&config),
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn checkpoint_of<T: Real>(model: &TrainedModel<T>, config: &RunConfig, epoch: usize) -> Checkpoint<T> {
    let mut meta = BTreeMap::new();
    meta.insert("seed".into(), config.seed.to_string());
    meta.insert("epoch".into(), epoch.to_string());
    meta.insert("mesh_n".into(), model.grid.n().to_string());
    meta.insert("loss".into(), model.loss.label().into());
    meta.insert("schedule".into(), model.schedule.describe());
    Checkpoint {
        params: model.params.clone(),
        head: model.head.clone(),
        meta,
    }
}

fn train_cmd<T: Real>(config: &RunConfig) -> Result<Vec<String>> {
    let tc = config.train_config()?;
    let dir = output_dir(config)?;
    let resolved = dir.join(RESOLVED_CONFIG_FILE);
    std::fs::write(&resolved, config.to_toml()?).map_err(|e| Error::io(&resolved, e))?;

    let eval = config.eval_config();
    let ck_every = config.training.checkpoint_every;
    let ev_every = config.training.eval_every;
    let mut emitted = vec![display(&resolved)];
    let mut eval_table = Table::new(ErrorReport::HEADER.iter().copied().chain(["epoch"]))
        .comment(format!("seed={}", config.seed));
    let observer = |rec: &crate::training::EpochRecord, params: &crate::network::MlpParams<T>| -> Result<()> {
        let done = rec.epoch + 1;
        let snapshot = || -> Result<TrainedModel<T>> {
            let mut m = TrainedModel::from_params(params.clone(), tc.sde.clone(), tc.grid)?;
            m.loss = tc.loss;
            m.schedule = tc.schedule;
            m.seed = tc.seed;
            Ok(m)
        };
        if ck_every > 0 && done.is_multiple_of(ck_every) && done < tc.epochs {
            let path = dir.join(format!("checkpoint_{done:06}.ckpt"));
            write_checkpoint(&path, &checkpoint_of(&snapshot()?, config, done))?;
            emitted.push(display(&path));
        }
        if ev_every > 0 && done.is_multiple_of(ev_every) {
            let report = err_metrics(&snapshot()?, &tc.sde, tc.grid, &eval)?;
            let mut row = report.row();
            row.push(done.to_string());
            eval_table.push(row);
        }
        Ok(())
    };
    let model = train_with(&tc, tc.initial_params::<T>()?, observer)?;

    let ck = dir.join(CHECKPOINT_FILE);
    write_checkpoint(&ck, &checkpoint_of(&model, config, tc.epochs))?;
    let loss = dir.join(LOSS_FILE);
    model.write_history(&loss)?;
    emitted.push(display(&ck));
    emitted.push(display(&loss));
    if ev_every > 0 {
        let path = dir.join("eval_history.csv");
        eval_table.write(&path)?;
        emitted.push(display(&path));
    }
    let last = model.history.last().map_or(f64::NAN, |r| r.loss);
    emitted.push(format!(
        "trained {} epochs in {:.1}s, final batch loss {}",
        tc.epochs, model.wall_seconds, format_float(last)
    ));
    Ok(emitted)
}

fn evaluate_cmd<T: Real>(config: &RunConfig, checkpoint: &Path) -> Result<Vec<String>> {
    let ck: Checkpoint<T> = read_checkpoint(checkpoint)?;
    let sde = config.sde()?;
    let grid = config.grid()?;
    let mut model = TrainedModel::from_params(ck.params, sde.clone(), grid)?;
    let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    if !same(&model.head.x0, &ck.head.x0) || !same(&model.head.d0, &ck.head.d0) {
        return Err(Error::Format {
            path: checkpoint.into(),
            message: "checkpoint was trained for a different initial value or drift".into(),
        });
    }
    model.seed = config.seed;
    let eval = config.eval_config();
    let dir = output_dir(config)?;
    let report = compare_predictors(&[&model], &sde, grid, &eval)?.remove(0);
    let path = dir.join(ERRORS_FILE);
    report.write_csv(&path, config.seed)?;
    let mut emitted = vec![display(&path)];
    for i in 0..config.evaluation.dump_paths {
        let p = dir.join(format!("trajectory_{i:04}.csv"));
        trajectory_dump(&model, &eval, grid, i)?.write(&p)?;
        emitted.push(display(&p));
    }
    emitted.push(format!(
        "err_time {} err_terminal {} (baseline {} {})",
        format_float(report.err_time),
        format_float(report.err_terminal),
        format_float(report.baseline_err_time),
        format_float(report.baseline_err_terminal)
    ));
    Ok(emitted)
}

fn simulate_cmd(config: &RunConfig) -> Result<Vec<String>> {
    let sde = config.sde()?;
    let grid = config.grid()?;
    let dir = output_dir(config)?;
    (0..config.simulate.paths)
        .map(|i| {
            let path = sample_levy_path(sde.noise(), grid, &mut stream(config.seed, Domain::Simulation, i as u64, 0))?;
            let file = dir.join(format!("path_{i:04}.csv"));
            path.to_table()
                .comment(format!("seed={}", config.seed))
                .comment(format!("path={i}"))
                .write(&file)?;
            Ok(display(&file))
        })
        .collect()
}

fn reference_cmd(config: &RunConfig) -> Result<Vec<String>> {
    let sde = config.sde()?;
    let grid = config.grid()?;
    let eval = config.eval_config();
    let dir = output_dir(config)?;
    (0..config.simulate.paths)
        .map(|i| {
            let (_, _, reference) = evaluation_path(&sde, grid, &eval, i)?;
            let file = dir.join(format!("reference_{i:04}.csv"));
            reference
                .to_table()
                .comment(format!("seed={}", config.seed))
                .comment(format!("path={i}"))
                .comment(format!("reference_steps={}", eval.reference_steps))
                .write(&file)?;
            Ok(display(&file))
        })
        .collect()
}

fn bounds_cmd(config: &RunConfig) -> Result<Vec<String>> {
    let sde = config.sde()?;
    let rhs = make_rode_rhs(&sde)?;
    let fine = TimeGrid::new(config.evaluation.reference_steps, sde.horizon())?;
    let dir = output_dir(config)?;
    let reports = (0..config.evaluation.paths)
        .into_par_iter()
        .map(|i| {
            let path = sample_levy_path(sde.noise(), fine, &mut stream(config.seed, Domain::Audit, i as u64, 2))?;
            let y = integrate_rode(&rhs, &path, sde.x0())?;
            a_priori_bounds(&rhs, &sde, &path, &y)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new([
        "path",
        "sup_y",
        "energy",
        "lipschitz_sup_bound",
        "lipschitz_energy_bound",
        "bounded_sup_bound",
        "bounded_energy_bound",
        "passed",
    ])
    .comment(format!("seed={}", config.seed));
    let opt = |v: Option<f64>| v.map_or(String::new(), format_float);
    for (i, r) in reports.iter().enumerate() {
        table.push(vec![
            i.to_string(),
            format_float(r.sup_y),
            format_float(r.energy),
            opt(r.lipschitz.as_ref().map(|b| b.sup_bound)),
            opt(r.lipschitz.as_ref().map(|b| b.energy_bound)),
            opt(r.bounded.as_ref().map(|b| b.sup_bound)),
            opt(r.bounded.as_ref().map(|b| b.energy_bound)),
            r.passed().to_string(),
        ]);
    }
    let file = dir.join("bounds.csv");
    table.write(&file)?;
    let passed = reports.iter().filter(|r| r.passed()).count();
    Ok(vec![
        display(&file),
        format!("bounds hold on {passed} of {} paths", reports.len()),
    ])
}
