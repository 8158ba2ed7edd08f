//! Problem statement `dX = a(t, X) dt + sigma dL`, its random-ODE form
//! `Y' = f(t, Y, L)` with `f(t, y, w) = a(t, y + sigma w)`, and the
//! log transform for scalar multiplicative noise.

mod bounds;
pub mod drift;

pub use bounds::{a_priori_bounds, BoundReport, BoundedDriftBounds, LipschitzBounds};
pub use drift::{DriftDescriptor, DriftKind};

use ndarray::Array2;

use crate::dual::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::levy_paths::NoiseKind;

/// Points used to estimate `sup_t ||a(t, 0)||` for time-dependent drifts.
pub const SUP_ESTIMATE_POINTS: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct SdeSpec {
    drift: DriftDescriptor,
    sigma: Array2<f64>,
    x0: Vec<f64>,
    horizon: f64,
    noise: NoiseKind,
}

impl SdeSpec {
    pub fn new(
        drift: DriftDescriptor,
        sigma: Array2<f64>,
        x0: Vec<f64>,
        horizon: f64,
        noise: NoiseKind,
    ) -> Result<Self> {
        noise.validate()?;
        let d = drift.dim();
        if sigma.nrows() != d || x0.len() != d {
            return Err(Error::Config(format!(
                "dimension mismatch: drift has d={d}, sigma is {}x{}, x0 has length {}",
                sigma.nrows(),
                sigma.ncols(),
                x0.len()
            )));
        }
        if sigma.ncols() != noise.dimension() {
            return Err(Error::Config(format!(
                "sigma has {} columns but the noise has dimension {}",
                sigma.ncols(),
                noise.dimension()
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        if sigma.iter().chain(x0.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("sigma and x0 must be finite".into()));
        }
        Ok(SdeSpec {
            drift,
            sigma,
            x0,
            horizon,
            noise,
        })
    }

    /// Scalar problem driven by a one-dimensional Wiener process.
    pub fn scalar(drift: DriftDescriptor, sigma: f64, x0: f64, horizon: f64) -> Result<Self> {
        SdeSpec::new(
            drift,
            Array2::from_elem((1, 1), sigma),
            vec![x0],
            horizon,
            NoiseKind::wiener(1),
        )
    }

    pub fn drift(&self) -> &DriftDescriptor {
        &self.drift
    }

    pub fn sigma(&self) -> &Array2<f64> {
        &self.sigma
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn noise(&self) -> &NoiseKind {
        &self.noise
    }

    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    pub fn noise_dim(&self) -> usize {
        self.sigma.ncols()
    }

    /// `out = sigma w`.
    pub fn apply_sigma(&self, w: &[f64], out: &mut [f64]) {
        apply_matrix(&self.sigma, w, out);
    }
}

fn apply_matrix(m: &Array2<f64>, w: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = m.row(i).iter().zip(w).map(|(a, b)| a * b).sum();
    }
}

pub fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsForm {
    /// `f(t, y, w) = a(t, y + sigma w)`
    Additive,
    /// `f(t, y, w) = exp(-(y + sigma w)) a(t, exp(y + sigma w)) - sigma^2 / 2`
    LogTransformed,
}

/// Right-hand side of the random ODE together with its growth constants.
#[derive(Debug, Clone, PartialEq)]
pub struct RodeRhs {
    drift: DriftDescriptor,
    sigma: Array2<f64>,
    form: RhsForm,
    /// Lipschitz constant of `f` jointly in `(y, w)`.
    pub c1: Option<f64>,
    /// Linear-growth constant of `f`.
    pub c2: Option<f64>,
}

impl RodeRhs {
    pub fn form(&self) -> RhsForm {
        self.form
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.sigma.ncols()
    }

    pub fn drift(&self) -> &DriftDescriptor {
        &self.drift
    }

    /// Generic evaluation; `z` is scratch space of length `d`.
    pub fn eval_generic<S: Scalar>(&self, t: f64, y: &[S], w: &[f64], z: &mut [S], out: &mut [S]) -> Result<()> {
        for (i, zi) in z.iter_mut().enumerate() {
            let shift: f64 = self.sigma.row(i).iter().zip(w).map(|(a, b)| a * b).sum();
            *zi = y[i] + S::constant(shift);
        }
        match self.form {
            RhsForm::Additive => self.drift.eval(S::constant(t), z, out),
            RhsForm::LogTransformed => {
                let zv = z[0];
                let x = [zv.exp()];
                self.drift.eval(S::constant(t), &x, out)?;
                let s = self.sigma[[0, 0]];
                out[0] = (-zv).exp() * out[0] - S::constant(0.5 * s * s);
                Ok(())
            }
        }
    }

    pub fn eval_into(&self, t: f64, y: &[f64], w: &[f64], z: &mut [f64], out: &mut [f64]) -> Result<()> {
        self.eval_generic(t, y, w, z, out)
    }

    pub fn eval(&self, t: f64, y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut z = vec![0.0; d];
        let mut out = vec![0.0; d];
        self.eval_generic(t, y, w, &mut z, &mut out)?;
        Ok(out)
    }

    /// `f(t, y, w)` and `df/dy` as a row-major `d x d` matrix.
    pub fn eval_with_jacobian(&self, t: f64, y: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        let mut z = vec![Dual::constant(0.0); d];
        drift::value_and_jacobian(d, y, |ys, out| self.eval_generic(t, ys, w, &mut z, out))
    }
}

fn sup_drift_at_origin(drift: &DriftDescriptor, horizon: f64) -> Result<f64> {
    let origin = vec![0.0; drift.dim()];
    if drift.is_autonomous() {
        return Ok(drift::norm(&drift.eval_f64(0.0, &origin)?));
    }
    let mut sup: f64 = 0.0;
    for k in 0..SUP_ESTIMATE_POINTS {
        let t = horizon * k as f64 / (SUP_ESTIMATE_POINTS - 1) as f64;
        sup = sup.max(drift::norm(&drift.eval_f64(t, &origin)?));
    }
    Ok(sup)
}

/// Remove the diffusion: `Y = X - sigma L` solves `Y' = a(t, Y + sigma L)`.
pub fn make_rode_rhs(sde: &SdeSpec) -> Result<RodeRhs> {
    let d = sde.state_dim();
    if sde.drift.dim() != d || sde.sigma.nrows() != d {
        return Err(Error::Config("drift, sigma and x0 dimensions disagree".into()));
    }
    let (c1, c2) = match sde.drift.lipschitz {
        Some(l) => {
            let c1 = l * frobenius(&sde.sigma).max(1.0);
            let c2 = sup_drift_at_origin(&sde.drift, sde.horizon)?.max(c1);
            (Some(c1), Some(c2))
        }
        None => (None, None),
    };
    Ok(RodeRhs {
        drift: sde.drift.clone(),
        sigma: sde.sigma.clone(),
        form: RhsForm::Additive,
        c1,
        c2,
    })
}

/// Random-ODE form of `dX = a(t, X) dt + sigma X dW`, `X(0) = x0 > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DossSussmann {
    pub rhs: RodeRhs,
    /// `ln x0`
    pub y0: f64,
    pub sigma: f64,
}

impl DossSussmann {
    /// `X(t) = exp(Y(t) + sigma W(t))`.
    pub fn reconstruct(&self, y: f64, w: f64) -> f64 {
        (y + self.sigma * w).exp()
    }
}

pub fn doss_sussmann_scalar(drift: &DriftDescriptor, sigma: f64, x0: f64) -> Result<DossSussmann> {
    if drift.dim() != 1 {
        return Err(Error::Unsupported(
            "the log transform is only available for scalar problems".into(),
        ));
    }
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::Domain(format!("x0 must be positive, got {x0}")));
    }
    if !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be finite, got {sigma}")));
    }
    Ok(DossSussmann {
        rhs: RodeRhs {
            drift: drift.clone(),
            sigma: Array2::from_elem((1, 1), sigma),
            form: RhsForm::LogTransformed,
            c1: None,
            c2: None,
        },
        y0: x0.ln(),
        sigma,
    })
}
