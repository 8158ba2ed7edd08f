//! Pathwise a-priori bounds for random-ODE solutions.
//!
//! With linear growth constant `C2`:
//!   sup ||Y|| <= C3 (1 + ∫ ||L||),     C3 = e^{C2 T} (1 + ||x0||) max{1, C2, C2 T}
//!   ∫ ||Y'||² <= C4 (1 + ∫ ||L||²),    C4 = 3 C2² max{1, T} (1 + 2 C3² T)
//! With a uniformly bounded drift `||a|| <= D0`:
//!   sup ||Y|| <= ||x0|| + D0 T,        ∫ ||Y'||² <= D0² T

use super::drift::norm;
use super::{RodeRhs, SdeSpec};
use crate::error::{Error, Result};
use crate::levy_paths::PathSample;
use crate::reference::Trajectory;

/// Slack for rounding in the discrete estimates.
const REL_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzBounds {
    pub c3: f64,
    pub c4: f64,
    pub sup_bound: f64,
    pub energy_bound: f64,
    pub sup_ok: bool,
    pub energy_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundedDriftBounds {
    pub sup_bound: f64,
    pub energy_bound: f64,
    pub sup_ok: bool,
    pub energy_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    /// `max_j ||Y(t_j)||`
    pub sup_y: f64,
    /// Trapezoid estimate of `∫ ||Y'||²`.
    pub energy: f64,
    /// Trapezoid estimates of `∫ ||L||` and `∫ ||L||²`.
    pub int_l: f64,
    pub int_l2: f64,
    pub lipschitz: Option<LipschitzBounds>,
    pub bounded: Option<BoundedDriftBounds>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.lipschitz.as_ref().is_none_or(|b| b.sup_ok && b.energy_ok)
            && self.bounded.as_ref().is_none_or(|b| b.sup_ok && b.energy_ok)
    }
}

fn trapezoid(h: f64, g: &[f64]) -> f64 {
    let n = g.len() - 1;
    h * (g.iter().sum::<f64>() - 0.5 * (g[0] + g[n]))
}

fn within(value: f64, bound: f64) -> bool {
    value <= bound * (1.0 + REL_SLACK) + f64::MIN_POSITIVE
}

pub fn a_priori_bounds(rhs: &RodeRhs, sde: &SdeSpec, path: &PathSample, y: &Trajectory) -> Result<BoundReport> {
    let c2 = rhs.c2;
    let d0 = sde.drift().bound;
    if c2.is_none() && d0.is_none() {
        return Err(Error::CannotBound);
    }
    if y.grid != path.grid {
        return Err(Error::Config("trajectory and path must share one mesh".into()));
    }
    let grid = path.grid;
    let n = grid.n();
    let horizon = grid.horizon();
    let h = grid.step();
    let mut d_sq = Vec::with_capacity(n + 1);
    let mut l1 = Vec::with_capacity(n + 1);
    let mut l2 = Vec::with_capacity(n + 1);
    let mut sup_y: f64 = 0.0;
    for j in 0..=n {
        let yj = y.at(j).to_vec();
        let lj = path.at(j).to_vec();
        sup_y = sup_y.max(norm(&yj));
        let ln = norm(&lj);
        l1.push(ln);
        l2.push(ln * ln);
        // Y'(T) is the left limit; for jump noise that sees L(T-)
        let w = if j == n && path.kind.has_jumps() {
            path.at(n - 1).to_vec()
        } else {
            lj
        };
        let dy = rhs.eval(grid.point(j), &yj, &w)?;
        let dn = norm(&dy);
        d_sq.push(dn * dn);
    }
    let energy = trapezoid(h, &d_sq);
    let int_l = trapezoid(h, &l1);
    let int_l2 = trapezoid(h, &l2);
    let x0n = norm(sde.x0());

    let lipschitz = c2.map(|c2| {
        let c3 = (c2 * horizon).exp() * (1.0 + x0n) * 1f64.max(c2).max(c2 * horizon);
        let c4 = 3.0 * c2 * c2 * horizon.max(1.0) * (1.0 + 2.0 * c3 * c3 * horizon);
        let sup_bound = c3 * (1.0 + int_l);
        let energy_bound = c4 * (1.0 + int_l2);
        LipschitzBounds {
            c3,
            c4,
            sup_bound,
            energy_bound,
            sup_ok: within(sup_y, sup_bound),
            energy_ok: within(energy, energy_bound),
        }
    });
    let bounded = d0.map(|d0| {
        let sup_bound = x0n + d0 * horizon;
        let energy_bound = d0 * d0 * horizon;
        BoundedDriftBounds {
            sup_bound,
            energy_bound,
            sup_ok: within(sup_y, sup_bound),
            energy_ok: within(energy, energy_bound),
        }
    });
    Ok(BoundReport {
        sup_y,
        energy,
        int_l,
        int_l2,
        lipschitz,
        bounded,
    })
}
