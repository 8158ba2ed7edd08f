//! Drift coefficients `a(t, x)` with their declared regularity constants.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dual::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::expr::DriftExpr;

#[derive(Debug, Clone, PartialEq)]
pub enum DriftKind {
    /// `a_i(t, x) = theta (mu - x_i)`
    MeanReversion { theta: f64, mu: f64 },
    /// `a_i(t, x) = theta (mu - sin(kappa x_i))`
    Sine { theta: f64, mu: f64, kappa: f64 },
    /// One expression per state coordinate.
    Expression(Vec<DriftExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftDescriptor {
    kind: DriftKind,
    dim: usize,
    /// Lipschitz constant in the state, if known.
    pub lipschitz: Option<f64>,
    /// Uniform bound `sup ||a(t, z)||`, if known.
    pub bound: Option<f64>,
}

fn check_constant(name: &str, value: Option<f64>) -> Result<()> {
    match value {
        Some(v) if !(v.is_finite() && v >= 0.0) => Err(Error::InvalidParameter(format!(
            "{name} must be a nonnegative finite number, got {v}"
        ))),
        _ => Ok(()),
    }
}

impl DriftDescriptor {
    pub fn mean_reversion(theta: f64, mu: f64, dim: usize) -> Self {
        DriftDescriptor {
            kind: DriftKind::MeanReversion { theta, mu },
            dim,
            lipschitz: Some(theta.abs()),
            bound: None,
        }
    }

    pub fn sine(theta: f64, mu: f64, kappa: f64, dim: usize) -> Self {
        // ||a|| over d coordinates of magnitude <= |theta| (|mu| + 1)
        let per_coord = theta.abs() * (mu.abs() + 1.0);
        DriftDescriptor {
            kind: DriftKind::Sine { theta, mu, kappa },
            dim,
            lipschitz: Some((theta * kappa).abs()),
            bound: Some(per_coord * (dim as f64).sqrt()),
        }
    }

    /// Expression drift; constants are whatever the user declares.
    pub fn expression(components: Vec<DriftExpr>, lipschitz: Option<f64>, bound: Option<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("drift needs at least one component".into()));
        }
        let dim = components.len();
        for (i, c) in components.iter().enumerate() {
            if c.state_arity() > dim {
                return Err(Error::InvalidParameter(format!(
                    "drift component {} references x{} but the state has dimension {dim}",
                    i + 1,
                    c.state_arity()
                )));
            }
        }
        check_constant("lipschitz", lipschitz)?;
        check_constant("drift bound", bound)?;
        Ok(DriftDescriptor {
            kind: DriftKind::Expression(components),
            dim,
            lipschitz,
            bound,
        })
    }

    /// The identically zero drift in `dim` dimensions.
    pub fn zero(dim: usize) -> Self {
        DriftDescriptor {
            kind: DriftKind::MeanReversion { theta: 0.0, mu: 0.0 },
            dim,
            lipschitz: Some(0.0),
            bound: Some(0.0),
        }
    }

    pub fn with_lipschitz(mut self, lipschitz: Option<f64>) -> Result<Self> {
        check_constant("lipschitz", lipschitz)?;
        if lipschitz.is_some() {
            self.lipschitz = lipschitz;
        }
        Ok(self)
    }

    pub fn with_bound(mut self, bound: Option<f64>) -> Result<Self> {
        check_constant("drift bound", bound)?;
        if bound.is_some() {
            self.bound = bound;
        }
        Ok(self)
    }

    pub fn kind(&self) -> &DriftKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_autonomous(&self) -> bool {
        match &self.kind {
            DriftKind::Expression(c) => !c.iter().any(DriftExpr::uses_time),
            _ => true,
        }
    }

    pub fn eval<S: Scalar>(&self, t: S, x: &[S], out: &mut [S]) -> Result<()> {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            DriftKind::MeanReversion { theta, mu } => {
                let (theta, mu) = (S::constant(*theta), S::constant(*mu));
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = theta * (mu - xi);
                }
            }
            DriftKind::Sine { theta, mu, kappa } => {
                let (theta, mu, kappa) = (S::constant(*theta), S::constant(*mu), S::constant(*kappa));
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = theta * (mu - (kappa * xi).sin());
                }
            }
            DriftKind::Expression(c) => {
                for (o, e) in out.iter_mut().zip(c) {
                    *o = e.eval(t, x)?;
                }
            }
        }
        Ok(())
    }

    pub fn eval_f64(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.eval(t, x, &mut out)?;
        Ok(out)
    }

    /// Spot-check the declared Lipschitz constant on `samples` random pairs.
    /// Returns `None` when no constant is declared.
    pub fn spot_check_lipschitz<R: Rng + ?Sized>(&self, horizon: f64, samples: usize, rng: &mut R) -> Result<Option<bool>> {
        let Some(l) = self.lipschitz else {
            return Ok(None);
        };
        let mut y1 = vec![0.0; self.dim];
        let mut y2 = vec![0.0; self.dim];
        for _ in 0..samples {
            let t = horizon * rng.random::<f64>();
            for k in 0..self.dim {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                y1[k] = 2.0 * a;
                y2[k] = y1[k] + 0.5 * b;
            }
            let a1 = self.eval_f64(t, &y1)?;
            let a2 = self.eval_f64(t, &y2)?;
            let lhs = norm_diff(&a1, &a2);
            let rhs = l * norm_diff(&y1, &y2);
            if lhs > rhs * (1.0 + 1e-12) + 1e-14 {
                return Ok(Some(false));
            }
        }
        Ok(Some(true))
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Value and state Jacobian (row-major `d x d`) of a drift-like map, by
/// forward-mode differentiation, one seeded coordinate at a time.
pub(crate) fn value_and_jacobian(
    dim: usize,
    x: &[f64],
    mut eval: impl FnMut(&[Dual], &mut [Dual]) -> Result<()>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut xs: Vec<Dual> = x.iter().map(|&v| Dual::constant(v)).collect();
    let mut out = vec![Dual::constant(0.0); dim];
    let mut value = vec![0.0; dim];
    let mut jac = vec![0.0; dim * dim];
    for k in 0..dim {
        xs[k].du = 1.0;
        eval(&xs, &mut out)?;
        for i in 0..dim {
            value[i] = out[i].re;
            jac[i * dim + k] = out[i].du;
        }
        xs[k].du = 0.0;
    }
    Ok((value, jac))
}
