//! Benchmark solvers: Euler–Maruyama for the SDE and a classical RK4
//! integrator for the random ODE along a fixed noise path.

use std::path::Path;

use ndarray::{s, Array2, ArrayView1};

use crate::csv_io::Table;
use crate::error::{Error, Result};
use crate::levy_paths::{PathSample, TimeGrid};
use crate::sde::{RodeRhs, SdeSpec};

/// Fine mesh used for the benchmark solution.
pub const REFERENCE_STEPS: usize = 1 << 17;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// Row `j` is the state at `t_j`.
    pub states: Array2<f64>,
}

impl Trajectory {
    pub fn at(&self, j: usize) -> ArrayView1<'_, f64> {
        self.states.row(j)
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn terminal(&self) -> ArrayView1<'_, f64> {
        self.states.row(self.grid.n())
    }

    pub fn to_table(&self) -> Table {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|k| format!("x_{k}")));
        let mut table = Table::new(header);
        let mut row = Vec::with_capacity(self.dim() + 1);
        for j in 0..=self.grid.n() {
            row.clear();
            row.push(self.grid.point(j));
            row.extend(self.states.row(j).iter().copied());
            table.push_floats(&row);
        }
        table
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.to_table().write(path)
    }

    pub fn read_csv(path: &Path) -> Result<Trajectory> {
        let table = Table::read(path)?;
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let times = table.floats("t").ok_or_else(|| bad("missing or bad t column".into()))?;
        if times.len() < 2 {
            return Err(bad("need at least two rows".into()));
        }
        let d = table.header.len() - 1;
        let mut states = Array2::zeros((times.len(), d));
        for k in 0..d {
            let col = table
                .floats(&format!("x_{}", k + 1))
                .ok_or_else(|| bad(format!("missing column x_{}", k + 1)))?;
            states.column_mut(k).assign(&ArrayView1::from(&col));
        }
        Ok(Trajectory {
            grid: TimeGrid::new(times.len() - 1, *times.last().unwrap())?,
            states,
        })
    }
}

fn check_finite(state: &[f64], stage: &'static str, index: usize) -> Result<()> {
    if state.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { stage, index })
    }
}

/// `X_{j+1} = X_j + a(t_j, X_j) h + sigma (L(t_{j+1}) - L(t_j))`.
pub fn euler_maruyama(sde: &SdeSpec, path: &PathSample) -> Result<Trajectory> {
    if path.dimension() != sde.noise_dim() {
        return Err(Error::Config(format!(
            "path has dimension {} but sigma expects {}",
            path.dimension(),
            sde.noise_dim()
        )));
    }
    let grid = path.grid;
    let d = sde.state_dim();
    let m = sde.noise_dim();
    let h = grid.step();
    let mut states = Array2::zeros((grid.n() + 1, d));
    let mut x = sde.x0().to_vec();
    let mut a = vec![0.0; d];
    let mut dl = vec![0.0; m];
    let mut shift = vec![0.0; d];
    states.row_mut(0).assign(&ArrayView1::from(&x));
    for j in 0..grid.n() {
        sde.drift().eval(grid.point(j), &x, &mut a)?;
        for (k, v) in dl.iter_mut().enumerate() {
            *v = path.values[[j + 1, k]] - path.values[[j, k]];
        }
        sde.apply_sigma(&dl, &mut shift);
        for i in 0..d {
            x[i] += a[i] * h + shift[i];
        }
        check_finite(&x, "euler_maruyama", j + 1)?;
        states.row_mut(j + 1).assign(&ArrayView1::from(&x));
    }
    Ok(Trajectory { grid, states })
}

/// Classical RK4 for `y' = f(t, y, L(t))` on the path's mesh. Between mesh
/// points `L` is interpolated linearly for continuous noise and held
/// left-constant for jump noise.
pub fn integrate_rode(rhs: &RodeRhs, path: &PathSample, x0: &[f64]) -> Result<Trajectory> {
    let d = rhs.dim();
    let m = rhs.noise_dim();
    if path.dimension() != m || x0.len() != d {
        return Err(Error::Config(format!(
            "integrate_rode: expected noise dimension {m} and state dimension {d}, got {} and {}",
            path.dimension(),
            x0.len()
        )));
    }
    let jumps = path.kind.has_jumps();
    let grid = path.grid;
    let h = grid.step();
    let mut states = Array2::zeros((grid.n() + 1, d));
    let mut y = x0.to_vec();
    let mut tmp = vec![0.0; d];
    let mut z = vec![0.0; d];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut w_mid = vec![0.0; m];
    states.row_mut(0).assign(&ArrayView1::from(&y));
    for j in 0..grid.n() {
        let t = grid.point(j);
        let w0 = path.values.row(j).to_slice().unwrap();
        let w1 = if jumps {
            w0
        } else {
            path.values.row(j + 1).to_slice().unwrap()
        };
        for k in 0..m {
            w_mid[k] = if jumps { w0[k] } else { 0.5 * (w0[k] + w1[k]) };
        }
        rhs.eval_into(t, &y, w0, &mut z, &mut k1)?;
        for i in 0..d {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs.eval_into(t + 0.5 * h, &tmp, &w_mid, &mut z, &mut k2)?;
        for i in 0..d {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs.eval_into(t + 0.5 * h, &tmp, &w_mid, &mut z, &mut k3)?;
        for i in 0..d {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs.eval_into(grid.point(j + 1), &tmp, w1, &mut z, &mut k4)?;
        for i in 0..d {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_finite(&y, "integrate_rode", j + 1)?;
        states.row_mut(j + 1).assign(&ArrayView1::from(&y));
    }
    Ok(Trajectory { grid, states })
}

/// Exact row extraction onto a nested coarser grid.
pub fn subsample(traj: &Trajectory, coarse: TimeGrid) -> Result<Trajectory> {
    let stride = coarse.stride_in(&traj.grid).ok_or_else(|| {
        Error::Config(format!(
            "grid with n={} is not nested in grid with n={}",
            coarse.n(),
            traj.grid.n()
        ))
    })?;
    Ok(Trajectory {
        grid: coarse,
        states: traj.states.slice(s![..;stride, ..]).to_owned(),
    })
}

/// `Y(t_j) + sigma L(t_j)` row by row.
pub fn add_noise(traj: &Trajectory, sde: &SdeSpec, path: &PathSample) -> Result<Trajectory> {
    let stride = traj.grid.stride_in(&path.grid).ok_or_else(|| {
        Error::Config("trajectory grid is not nested in the path grid".into())
    })?;
    let d = traj.dim();
    let mut shift = vec![0.0; d];
    let mut states = traj.states.clone();
    for j in 0..=traj.grid.n() {
        sde.apply_sigma(path.values.row(j * stride).to_slice().unwrap(), &mut shift);
        for i in 0..d {
            states[[j, i]] += shift[i];
        }
    }
    Ok(Trajectory {
        grid: traj.grid,
        states,
    })
}
