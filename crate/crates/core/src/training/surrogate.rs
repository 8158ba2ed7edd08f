//! Monte Carlo estimators of the theoretical loss
//! `E||x0 - y(0)||² + T E||y'(τ) - f(τ, y(τ), L(τ))||²` for arbitrary
//! pathwise surrogates `y`, used as test oracles.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use crate::bridge::sample_bridge;
use crate::error::{Error, Result};
use crate::levy_paths::{sample_levy_path, NoiseKind, PathSample, TimeGrid};
use crate::network::{head_forward_with_time_derivative, HeadBinding, MlpParams, Real};
use crate::reference::integrate_rode;
use crate::rng::{stream, Domain};
use crate::sde::RodeRhs;

/// A process `y(t)` with time derivative, defined pathwise from mesh values.
pub trait Surrogate: Sync {
    fn eval(&self, path: &PathSample, t: f64, value: &mut [f64], deriv: &mut [f64]) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::InvalidParameter(
                "at least two samples are needed for a standard error".into(),
            ));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(Estimate {
            mean,
            std_err: (var / n).sqrt(),
            samples: xs.len(),
        })
    }

    /// `|a - b| <= k sqrt(se_a² + se_b²)`
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        (self.mean - other.mean).abs() <= k * self.std_err.hypot(other.std_err)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn initial_term<S: Surrogate>(s: &S, path: &PathSample, x0: &[f64]) -> Result<f64> {
    let d = x0.len();
    let (mut v, mut dv) = (vec![0.0; d], vec![0.0; d]);
    s.eval(path, 0.0, &mut v, &mut dv)?;
    Ok(sq_dist(&v, x0))
}

fn residual_sq<S: Surrogate>(s: &S, rhs: &RodeRhs, path: &PathSample, t: f64, w: &[f64]) -> Result<f64> {
    let d = rhs.dim();
    let (mut v, mut dv) = (vec![0.0; d], vec![0.0; d]);
    s.eval(path, t, &mut v, &mut dv)?;
    let f = rhs.eval(t, &v, w)?;
    Ok(sq_dist(&dv, &f))
}

/// Random-time estimator: one `(τ_i, L_i)` pair per sample, `L_i(τ_i)` drawn
/// from the bridge given the mesh values on `grid`.
#[allow(clippy::too_many_arguments)]
pub fn theoretical_loss_estimate<S: Surrogate>(
    surrogate: &S,
    rhs: &RodeRhs,
    x0: &[f64],
    noise: &NoiseKind,
    grid: TimeGrid,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if samples < 2 {
        return Err(Error::InvalidParameter("M must be at least 2".into()));
    }
    let horizon = grid.horizon();
    let xs: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Domain::Audit, i as u64, 0);
            let path = sample_levy_path(noise, grid, &mut rng)?;
            let tau = rng.random::<f64>() * horizon;
            let draw = sample_bridge(&path, tau, &mut rng)?;
            Ok(initial_term(surrogate, &path, x0)? + horizon * residual_sq(surrogate, rhs, &path, tau, &draw.value)?)
        })
        .collect::<Result<_>>()?;
    Estimate::from_samples(&xs)
}

/// Time-quadrature estimator: midpoint rule with `nodes` points on fresh
/// paths. The midpoints must be mesh points of `grid`.
#[allow(clippy::too_many_arguments)]
pub fn quadrature_loss_estimate<S: Surrogate>(
    surrogate: &S,
    rhs: &RodeRhs,
    x0: &[f64],
    noise: &NoiseKind,
    grid: TimeGrid,
    nodes: usize,
    samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if nodes == 0 || !grid.n().is_multiple_of(2 * nodes) {
        return Err(Error::Config(format!(
            "mesh n={} must be a multiple of twice the {nodes} quadrature nodes",
            grid.n()
        )));
    }
    let stride = grid.n() / (2 * nodes);
    let horizon = grid.horizon();
    let xs: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Domain::Audit, i as u64, 1);
            let path = sample_levy_path(noise, grid, &mut rng)?;
            let mut sum = 0.0;
            for k in 0..nodes {
                let j = (2 * k + 1) * stride;
                sum += residual_sq(surrogate, rhs, &path, grid.point(j), path.at(j).as_slice().unwrap())?;
            }
            Ok(initial_term(surrogate, &path, x0)? + horizon / nodes as f64 * sum)
        })
        .collect::<Result<_>>()?;
    Estimate::from_samples(&xs)
}

/// `(T/n) Σ_{j<n} ||y'(t_j) - f(t_j, y(t_j), L(t_j))||²` on the nodes of `path.grid`.
pub fn surrogate_grid_loss<S: Surrogate>(surrogate: &S, rhs: &RodeRhs, path: &PathSample) -> Result<f64> {
    let g = path.grid;
    let mut sum = 0.0;
    for j in 0..g.n() {
        sum += residual_sq(surrogate, rhs, path, g.point(j), path.at(j).as_slice().unwrap())?;
    }
    Ok(g.step() * sum)
}

/// Piecewise cubic Hermite interpolant through `(t_j, y_j, y'_j)`. Bound to
/// one trajectory; the path argument of `eval` is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteTrajectory {
    pub grid: TimeGrid,
    pub values: Array2<f64>,
    pub derivs: Array2<f64>,
}

impl HermiteTrajectory {
    /// Integrate the random ODE on the path's mesh; node slopes are
    /// `f(t_j, Y_j, L(t_j))`.
    pub fn from_rode(rhs: &RodeRhs, path: &PathSample, x0: &[f64]) -> Result<Self> {
        let traj = integrate_rode(rhs, path, x0)?;
        let mut derivs = Array2::zeros(traj.states.dim());
        for j in 0..=path.grid.n() {
            let f = rhs.eval(path.grid.point(j), traj.at(j).as_slice().unwrap(), path.at(j).as_slice().unwrap())?;
            derivs.row_mut(j).assign(&ndarray::ArrayView1::from(&f));
        }
        Ok(HermiteTrajectory {
            grid: path.grid,
            values: traj.states,
            derivs,
        })
    }

    pub fn eval_at(&self, t: f64, value: &mut [f64], deriv: &mut [f64]) -> Result<()> {
        if !(0.0..=self.grid.horizon()).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.grid.horizon())));
        }
        if let Some(j) = self.grid.index_of(t) {
            value.copy_from_slice(self.values.row(j).as_slice().unwrap());
            deriv.copy_from_slice(self.derivs.row(j).as_slice().unwrap());
            return Ok(());
        }
        let j = self.grid.bracket(t);
        let h = self.grid.step();
        let s = (t - self.grid.point(j)) / h;
        let (s2, s3) = (s * s, s * s * s);
        let (h00, h10, h01, h11) = (2.0 * s3 - 3.0 * s2 + 1.0, s3 - 2.0 * s2 + s, 3.0 * s2 - 2.0 * s3, s3 - s2);
        let (d00, d10, d01, d11) = (6.0 * (s2 - s) / h, 3.0 * s2 - 4.0 * s + 1.0, 6.0 * (s - s2) / h, 3.0 * s2 - 2.0 * s);
        for c in 0..value.len() {
            let (y0, y1) = (self.values[[j, c]], self.values[[j + 1, c]]);
            let (m0, m1) = (self.derivs[[j, c]], self.derivs[[j + 1, c]]);
            value[c] = h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1;
            deriv[c] = d00 * y0 + d10 * m0 + d01 * y1 + d11 * m1;
        }
        Ok(())
    }
}

impl Surrogate for HermiteTrajectory {
    fn eval(&self, _path: &PathSample, t: f64, value: &mut [f64], deriv: &mut [f64]) -> Result<()> {
        self.eval_at(t, value, deriv)
    }
}

/// The reference RODE solution on whatever path it is handed.
pub struct RodeSolutionSurrogate<'a> {
    pub rhs: &'a RodeRhs,
    pub x0: Vec<f64>,
}

impl Surrogate for RodeSolutionSurrogate<'_> {
    fn eval(&self, path: &PathSample, t: f64, value: &mut [f64], deriv: &mut [f64]) -> Result<()> {
        HermiteTrajectory::from_rode(self.rhs, path, &self.x0)?.eval_at(t, value, deriv)
    }
}

/// The constrained network head seen as a surrogate.
pub struct NetworkSurrogate<'a, T> {
    pub params: &'a MlpParams<T>,
    pub head: &'a HeadBinding,
    pub grid: TimeGrid,
}

impl<T: Real> Surrogate for NetworkSurrogate<'_, T> {
    fn eval(&self, path: &PathSample, t: f64, value: &mut [f64], deriv: &mut [f64]) -> Result<()> {
        let input = path.network_input(self.grid)?;
        let (v, dv) = head_forward_with_time_derivative(self.params, self.head, t, &input)?;
        value.copy_from_slice(&v);
        deriv.copy_from_slice(&dv);
        Ok(())
    }
}

/// `y(t) + a sin(ω t)` in every component.
pub struct PerturbedSurrogate<S> {
    pub base: S,
    pub amplitude: f64,
    pub omega: f64,
}

impl<S: Surrogate> Surrogate for PerturbedSurrogate<S> {
    fn eval(&self, path: &PathSample, t: f64, value: &mut [f64], deriv: &mut [f64]) -> Result<()> {
        self.base.eval(path, t, value, deriv)?;
        let (s, c) = (self.omega * t).sin_cos();
        for (v, d) in value.iter_mut().zip(deriv.iter_mut()) {
            *v += self.amplitude * s;
            *d += self.amplitude * self.omega * c;
        }
        Ok(())
    }
}

impl<S: Surrogate> Surrogate for &S {
    fn eval(&self, path: &PathSample, t: f64, value: &mut [f64], deriv: &mut [f64]) -> Result<()> {
        (**self).eval(path, t, value, deriv)
    }
}
