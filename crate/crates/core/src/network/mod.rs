//! The feedforward approximator `N(w, t, L)` and its hard-constrained head
//! `N̄ = x0 + t d0 + (t²/2) N` with `d0 = f(0, x0, 0)`.

mod checkpoint;
mod engine;

pub use checkpoint::{checkpoint_precision, read_checkpoint, write_checkpoint, Checkpoint};
pub use engine::{
    head_forward, head_forward_batch, head_forward_with_time_derivative, head_values, loss_weight_gradient, raw_forward, EvalBatch,
    HeadOutput, PointLoss,
};

use std::fmt::{Debug, Display};

use ndarray::{Array1, Array2, LinalgScalar, ScalarOperand, Zip};
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::RodeRhs;

pub const DEFAULT_WIDTH_CAP: usize = 512;
pub const HIDDEN_LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    pub fn label(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }
}

/// Working precision of network parameters.
pub trait Real:
    Float + LinalgScalar + ScalarOperand + Debug + Display + Default + Send + Sync + 'static
{
    const PRECISION: Precision;
    const BYTES: usize;
    fn lift(x: f64) -> Self;
    fn lower(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;
    const BYTES: usize = 4;
    fn lift(x: f64) -> Self {
        x as f32
    }
    fn lower(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;
    const BYTES: usize = 8;
    fn lift(x: f64) -> Self {
        x
    }
    fn lower(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// `1 + n m`: the time input followed by the flattened mesh values.
    pub input_dim: usize,
    pub hidden: [usize; HIDDEN_LAYERS],
    pub output_dim: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: [usize; HIDDEN_LAYERS], output_dim: usize) -> Result<Self> {
        if input_dim < 2 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "invalid architecture {input_dim} -> {hidden:?} -> {output_dim}"
            )));
        }
        Ok(Architecture {
            input_dim,
            hidden,
            output_dim,
        })
    }

    /// Hidden widths `n m`, capped at `cap`.
    pub fn for_problem(n: usize, m: usize, d: usize, cap: usize) -> Result<Self> {
        let w = (n * m).min(cap).max(1);
        Architecture::new(1 + n * m, [w; HIDDEN_LAYERS], d)
    }

    /// Number of mesh values per path the network expects.
    pub fn path_inputs(&self) -> usize {
        self.input_dim - 1
    }

    /// `(fan_out, fan_in)` of each dense layer.
    pub fn layer_shapes(&self) -> [(usize, usize); HIDDEN_LAYERS + 1] {
        let [h1, h2, h3] = self.hidden;
        [(h1, self.input_dim), (h2, h1), (h3, h2), (self.output_dim, h3)]
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `fan_out x fan_in`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

/// Parameters of the three-hidden-layer tanh network. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub arch: Architecture,
    pub layers: Vec<Dense<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    Glorot,
    Zero,
}

impl<T: Real> MlpParams<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        let layers = arch
            .layer_shapes()
            .iter()
            .map(|&(o, i)| Dense {
                weight: Array2::zeros((o, i)),
                bias: Array1::zeros(o),
            })
            .collect();
        MlpParams {
            arch: arch.clone(),
            layers,
        }
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn num_params(&self) -> usize {
        self.arch.num_params()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Flat view in layer order, weights (row-major) before biases.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.iter().copied().collect()
    }

    pub fn from_flat(arch: &Architecture, flat: &[T]) -> Result<Self> {
        if flat.len() != arch.num_params() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                arch.num_params(),
                flat.len()
            )));
        }
        let mut p = MlpParams::zeros(arch);
        for (dst, src) in p.iter_mut().zip(flat) {
            *dst = *src;
        }
        Ok(p)
    }

    fn check_shape(&self, other: &MlpParams<T>) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::Config("parameter shapes differ".into()));
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &MlpParams<T>) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            Zip::from(&mut a.weight).and(&b.weight).for_each(|x, &y| *x = *x + alpha * y);
            Zip::from(&mut a.bias).and(&b.bias).for_each(|x, &y| *x = *x + alpha * y);
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        for v in self.iter_mut() {
            *v = *v * alpha;
        }
    }

    pub fn cast<U: Real>(&self) -> MlpParams<U> {
        MlpParams {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.mapv(|v| U::lift(v.lower())),
                    bias: l.bias.mapv(|v| U::lift(v.lower())),
                })
                .collect(),
        }
    }
}

pub fn init_params<T: Real, R: Rng + ?Sized>(arch: &Architecture, scheme: InitScheme, rng: &mut R) -> MlpParams<T> {
    let mut p = MlpParams::zeros(arch);
    if scheme == InitScheme::Zero {
        return p;
    }
    for layer in &mut p.layers {
        let (o, i) = layer.weight.dim();
        let limit = (6.0 / (o + i) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limits");
        for w in layer.weight.iter_mut() {
            *w = T::lift(dist.sample(rng));
        }
    }
    p
}

/// Constants of the hard-constrained head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadBinding {
    pub x0: Vec<f64>,
    /// `f(0, x0, 0)`
    pub d0: Vec<f64>,
}

impl HeadBinding {
    pub fn new(rhs: &RodeRhs, x0: &[f64]) -> Result<Self> {
        if x0.len() != rhs.dim() {
            return Err(Error::Config(format!(
                "x0 has length {} but the problem has d={}",
                x0.len(),
                rhs.dim()
            )));
        }
        let d0 = rhs.eval(0.0, x0, &vec![0.0; rhs.noise_dim()])?;
        Ok(HeadBinding { x0: x0.to_vec(), d0 })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }
}
