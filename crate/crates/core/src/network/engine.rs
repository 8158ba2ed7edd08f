//! Batched forward pass carrying a tangent in the time input, and reverse
//! accumulation through both the value and tangent channels.
//!
//! Activations of `P` points are stored as a `2P x h` stack: rows `0..P`
//! hold `a = tanh(z)` and rows `P..2P` hold `ȧ = (1 - a²) ż`, so one GEMM
//! propagates both. The first layer is split into its time column and its
//! path block; the path block is applied once per path, not once per point.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::{HeadBinding, MlpParams, Real};
use crate::error::{Error, Result};

/// Points `(path index, t)` evaluated against a set of path inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBatch<T> {
    /// `paths x n m`, row `i` holds `L(t_1), ..., L(t_n)` of path `i`.
    pub inputs: Array2<T>,
    pub points: Vec<(usize, f64)>,
}

impl<T: Real> EvalBatch<T> {
    pub fn new(inputs: Array2<T>, points: Vec<(usize, f64)>) -> Result<Self> {
        if let Some(&(i, _)) = points.iter().find(|(i, _)| *i >= inputs.nrows()) {
            return Err(Error::Config(format!(
                "point refers to path {i} but only {} paths are present",
                inputs.nrows()
            )));
        }
        Ok(EvalBatch { inputs, points })
    }

    /// Batch of single-path inputs given as `f64` rows.
    pub fn from_rows(rows: &[&[f64]], points: Vec<(usize, f64)>) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Config("path inputs have different lengths".into()));
        }
        let mut inputs = Array2::zeros((rows.len(), width));
        for (mut dst, src) in inputs.rows_mut().into_iter().zip(rows) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d = T::lift(*s);
            }
        }
        EvalBatch::new(inputs, points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Head outputs (`P x d`, double precision).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub value: Array2<f64>,
    pub dvalue: Array2<f64>,
}

/// Point-wise scalar loss of `(N̄(t), ∂t N̄(t))`.
pub trait PointLoss {
    /// Returns the loss of point `k` and writes its partial derivatives with
    /// respect to the value and the time derivative.
    fn eval(
        &mut self,
        k: usize,
        t: f64,
        value: &[f64],
        dvalue: &[f64],
        g_value: &mut [f64],
        g_dvalue: &mut [f64],
    ) -> Result<f64>;
}

struct Tape<T> {
    stacks: Vec<Array2<T>>,
    /// Pre-activation tangents `ż`; layer 0 stores a single row.
    ztan: Vec<Array2<T>>,
    raw: Array2<T>,
}

fn check_batch<T: Real>(params: &MlpParams<T>, batch: &EvalBatch<T>) -> Result<()> {
    if batch.inputs.ncols() != params.arch.path_inputs() {
        return Err(Error::Config(format!(
            "network expects {} path values but the batch provides {}",
            params.arch.path_inputs(),
            batch.inputs.ncols()
        )));
    }
    Ok(())
}

fn forward_tape<T: Real>(params: &MlpParams<T>, batch: &EvalBatch<T>, tangent: bool) -> Result<Tape<T>> {
    check_batch(params, batch)?;
    let p = batch.len();
    let rows = if tangent { 2 * p } else { p };
    let one = T::one();
    let first = &params.layers[0];
    let h1 = first.weight.nrows();
    let wt = first.weight.column(0);
    let u = batch.inputs.dot(&first.weight.slice(s![.., 1..]).t());

    let mut stack = Array2::<T>::zeros((rows, h1));
    for (k, &(i, t)) in batch.points.iter().enumerate() {
        let t = T::lift(t);
        let ui = u.row(i);
        for c in 0..h1 {
            let z = ui[c] + t * wt[c] + first.bias[c];
            if !z.is_finite() {
                return Err(Error::NonFinite { stage: "forward", index: 0 });
            }
            let a = z.tanh();
            stack[[k, c]] = a;
            if tangent {
                stack[[p + k, c]] = (one - a * a) * wt[c];
            }
        }
    }
    let mut stacks = vec![stack];
    let mut ztan = vec![wt.to_owned().insert_axis(Axis(0))];

    for (l, layer) in params.layers.iter().enumerate().take(3).skip(1) {
        let mut s = stacks[l - 1].dot(&layer.weight.t());
        let h = s.ncols();
        let mut zt = Array2::<T>::zeros((if tangent { p } else { 0 }, h));
        for k in 0..p {
            for c in 0..h {
                let z = s[[k, c]] + layer.bias[c];
                if !z.is_finite() {
                    return Err(Error::NonFinite { stage: "forward", index: l });
                }
                let a = z.tanh();
                s[[k, c]] = a;
                if tangent {
                    let dz = s[[p + k, c]];
                    zt[[k, c]] = dz;
                    s[[p + k, c]] = (one - a * a) * dz;
                }
            }
        }
        stacks.push(s);
        ztan.push(zt);
    }

    let last = &params.layers[3];
    let mut raw = stacks[2].dot(&last.weight.t());
    for k in 0..p {
        for c in 0..raw.ncols() {
            raw[[k, c]] = raw[[k, c]] + last.bias[c];
        }
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { stage: "forward", index: 3 });
    }
    Ok(Tape { stacks, ztan, raw })
}

fn apply_head<T: Real>(head: &HeadBinding, batch: &EvalBatch<T>, raw: &Array2<T>, tangent: bool) -> HeadOutput {
    let p = batch.len();
    let d = head.dim();
    let mut value = Array2::zeros((p, d));
    let mut dvalue = Array2::zeros((if tangent { p } else { 0 }, d));
    for (k, &(_, t)) in batch.points.iter().enumerate() {
        let q = 0.5 * t * t;
        for c in 0..d {
            let n = raw[[k, c]].lower();
            value[[k, c]] = head.x0[c] + t * head.d0[c] + q * n;
            if tangent {
                dvalue[[k, c]] = head.d0[c] + t * n + q * raw[[p + k, c]].lower();
            }
        }
    }
    HeadOutput { value, dvalue }
}

fn check_head<T: Real>(params: &MlpParams<T>, head: &HeadBinding) -> Result<()> {
    if head.dim() != params.arch.output_dim {
        return Err(Error::Config(format!(
            "head has d={} but the network outputs {}",
            head.dim(),
            params.arch.output_dim
        )));
    }
    Ok(())
}

/// `N̄` and `∂t N̄` at every batch point.
pub fn head_forward_batch<T: Real>(params: &MlpParams<T>, head: &HeadBinding, batch: &EvalBatch<T>) -> Result<HeadOutput> {
    check_head(params, head)?;
    let tape = forward_tape(params, batch, true)?;
    Ok(apply_head(head, batch, &tape.raw, true))
}

/// `N̄` only (`P x d`); skips the tangent channel.
pub fn head_values<T: Real>(params: &MlpParams<T>, head: &HeadBinding, batch: &EvalBatch<T>) -> Result<Array2<f64>> {
    check_head(params, head)?;
    let tape = forward_tape(params, batch, false)?;
    Ok(apply_head(head, batch, &tape.raw, false).value)
}

fn single<T: Real>(t: f64, path_input: &[f64]) -> Result<EvalBatch<T>> {
    EvalBatch::from_rows(&[path_input], vec![(0, t)])
}

/// Unconstrained network output `N(w, t, L)`.
pub fn raw_forward<T: Real>(params: &MlpParams<T>, t: f64, path_input: &[f64]) -> Result<Vec<f64>> {
    let batch = single(t, path_input)?;
    let tape = forward_tape(params, &batch, false)?;
    Ok(tape.raw.row(0).iter().map(|v| v.lower()).collect())
}

pub fn head_forward<T: Real>(params: &MlpParams<T>, head: &HeadBinding, t: f64, path_input: &[f64]) -> Result<Vec<f64>> {
    Ok(head_values(params, head, &single(t, path_input)?)?.row(0).to_vec())
}

pub fn head_forward_with_time_derivative<T: Real>(
    params: &MlpParams<T>,
    head: &HeadBinding,
    t: f64,
    path_input: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let out = head_forward_batch(params, head, &single(t, path_input)?)?;
    Ok((out.value.row(0).to_vec(), out.dvalue.row(0).to_vec()))
}

fn tanh_backward<T: Real>(g: &mut Array2<T>, stack: &Array2<T>, ztan: ArrayView2<T>, p: usize, layer: usize) -> Result<()> {
    let one = T::one();
    let two = one + one;
    let broadcast = ztan.nrows() == 1;
    for k in 0..p {
        let zrow = if broadcast { ztan.row(0) } else { ztan.row(k) };
        for c in 0..g.ncols() {
            let a = stack[[k, c]];
            let s = one - a * a;
            let ga = g[[k, c]];
            let gad = g[[p + k, c]];
            let gz = s * ga - two * a * s * zrow[c] * gad;
            let gzt = s * gad;
            if !(gz.is_finite() && gzt.is_finite()) {
                return Err(Error::NonFinite { stage: "backward", index: layer });
            }
            g[[k, c]] = gz;
            g[[p + k, c]] = gzt;
        }
    }
    Ok(())
}

/// Total loss `Σ_k loss(k)` over the batch and its exact gradient with
/// respect to every weight and bias, including the dependence through `∂t N̄`.
pub fn loss_weight_gradient<T: Real, L: PointLoss + ?Sized>(
    params: &MlpParams<T>,
    head: &HeadBinding,
    batch: &EvalBatch<T>,
    loss: &mut L,
) -> Result<(f64, MlpParams<T>)> {
    check_head(params, head)?;
    let tape = forward_tape(params, batch, true)?;
    let out = apply_head(head, batch, &tape.raw, true);
    let p = batch.len();
    let d = head.dim();

    let mut g = Array2::<T>::zeros((2 * p, d));
    let mut gv = vec![0.0; d];
    let mut gdv = vec![0.0; d];
    let mut total = 0.0;
    for (k, &(_, t)) in batch.points.iter().enumerate() {
        gv.iter_mut().for_each(|v| *v = 0.0);
        gdv.iter_mut().for_each(|v| *v = 0.0);
        let value = out.value.row(k);
        let dvalue = out.dvalue.row(k);
        total += loss.eval(
            k,
            t,
            value.as_slice().unwrap(),
            dvalue.as_slice().unwrap(),
            &mut gv,
            &mut gdv,
        )?;
        let q = 0.5 * t * t;
        for c in 0..d {
            g[[k, c]] = T::lift(q * gv[c] + t * gdv[c]);
            g[[p + k, c]] = T::lift(q * gdv[c]);
        }
    }
    if !total.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { stage: "loss", index: 4 });
    }

    let mut grad = MlpParams::zeros(&params.arch);
    grad.layers[3].weight = g.t().dot(&tape.stacks[2]);
    grad.layers[3].bias = g.slice(s![..p, ..]).sum_axis(Axis(0));
    let mut g = g.dot(&params.layers[3].weight);

    for l in (0..3).rev() {
        tanh_backward(&mut g, &tape.stacks[l], tape.ztan[l].view(), p, l)?;
        grad.layers[l].bias = g.slice(s![..p, ..]).sum_axis(Axis(0));
        if l > 0 {
            grad.layers[l].weight = g.t().dot(&tape.stacks[l - 1]);
            g = g.dot(&params.layers[l].weight);
        } else {
            let h1 = g.ncols();
            let mut per_path = Array2::<T>::zeros((batch.inputs.nrows(), h1));
            let mut col0 = vec![T::zero(); h1];
            for (k, &(i, t)) in batch.points.iter().enumerate() {
                let t = T::lift(t);
                for c in 0..h1 {
                    let gz = g[[k, c]];
                    per_path[[i, c]] = per_path[[i, c]] + gz;
                    col0[c] = col0[c] + t * gz + g[[p + k, c]];
                }
            }
            let w1 = &mut grad.layers[0].weight;
            w1.slice_mut(s![.., 1..]).assign(&per_path.t().dot(&batch.inputs));
            for (c, v) in col0.into_iter().enumerate() {
                w1[[c, 0]] = v;
            }
        }
    }
    Ok((total, grad))
}
