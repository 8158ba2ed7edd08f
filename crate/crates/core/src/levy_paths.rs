//! Driving-noise trajectories observed on a uniform time mesh.

use std::path::Path;

use ndarray::{s, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Open01, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::csv_io::Table;
use crate::error::{Error, Result};
use crate::rng;

/// Nesting depth accepted for [`NoiseKind::LinearCombination`].
pub const MAX_COMBINATION_DEPTH: usize = 4;

/// Uniform mesh `0 = t_0 < t_1 < ... < t_n = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    n: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(n: usize, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("mesh count n must be >= 1".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(TimeGrid { n, horizon })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n as f64
    }

    /// `t_j = T * (j / n)`; exact at both endpoints and identical across
    /// dyadically nested grids.
    pub fn point(&self, j: usize) -> f64 {
        if j >= self.n {
            self.horizon
        } else {
            self.horizon * (j as f64 / self.n as f64)
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.n).map(|j| self.point(j)).collect()
    }

    /// If every point of `self` is a point of `fine`, the index stride.
    pub fn stride_in(&self, fine: &TimeGrid) -> Option<usize> {
        if self.horizon != fine.horizon || !fine.n.is_multiple_of(self.n) {
            return None;
        }
        Some(fine.n / self.n)
    }

    /// Index `j` such that `t_j <= t <= t_{j+1}`, with `j <= n - 1`.
    pub fn bracket(&self, t: f64) -> usize {
        let j = (t / self.step()).floor();
        if j <= 0.0 {
            0
        } else {
            let j = (j as usize).min(self.n - 1);
            // guard against rounding in t / h
            if self.point(j) > t {
                j - 1
            } else if self.point(j + 1) < t {
                (j + 1).min(self.n - 1)
            } else {
                j
            }
        }
    }

    /// Mesh index equal to `t`, if `t` is exactly a mesh point.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let j = self.bracket(t);
        if self.point(j) == t {
            Some(j)
        } else if self.point(j + 1) == t {
            Some(j + 1)
        } else {
            None
        }
    }
}

/// Law of a single compound-Poisson jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpLaw {
    Constant { value: f64 },
    Gaussian { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

impl JumpLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            JumpLaw::Constant { value } => value.is_finite(),
            JumpLaw::Gaussian { mean, std } => mean.is_finite() && std.is_finite() && std >= 0.0,
            JumpLaw::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid jump law {self:?}")))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JumpLaw::Constant { value } => value,
            JumpLaw::Gaussian { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
            JumpLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }
}

fn one() -> usize {
    1
}

/// Law of the driving Lévy process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKind {
    Wiener {
        #[serde(default = "one")]
        dimension: usize,
    },
    /// Independent coordinates, each a compound Poisson process of intensity `rate`.
    CompoundPoisson {
        rate: f64,
        jump: JumpLaw,
        #[serde(default = "one")]
        dimension: usize,
    },
    LinearCombination {
        terms: Vec<NoiseTerm>,
    },
    /// Independent symmetric Cauchy coordinates with increments of scale `scale * h`.
    Cauchy {
        scale: f64,
        #[serde(default = "one")]
        dimension: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseTerm {
    pub coefficient: f64,
    pub noise: NoiseKind,
}

impl NoiseKind {
    pub fn wiener(dimension: usize) -> Self {
        NoiseKind::Wiener { dimension }
    }

    pub fn dimension(&self) -> usize {
        match self {
            NoiseKind::Wiener { dimension }
            | NoiseKind::CompoundPoisson { dimension, .. }
            | NoiseKind::Cauchy { dimension, .. } => *dimension,
            NoiseKind::LinearCombination { terms } => {
                terms.first().map_or(0, |t| t.noise.dimension())
            }
        }
    }

    pub fn is_wiener(&self) -> bool {
        matches!(self, NoiseKind::Wiener { .. })
    }

    /// Whether paths can jump (anything with a Poisson or Cauchy part).
    pub fn has_jumps(&self) -> bool {
        match self {
            NoiseKind::Wiener { .. } => false,
            NoiseKind::CompoundPoisson { .. } | NoiseKind::Cauchy { .. } => true,
            NoiseKind::LinearCombination { terms } => terms.iter().any(|t| t.noise.has_jumps()),
        }
    }

    /// Whether `E ∫ ||L(t)||² dt` is finite.
    pub fn has_finite_second_moment(&self) -> bool {
        match self {
            NoiseKind::Cauchy { .. } => false,
            NoiseKind::LinearCombination { terms } => terms
                .iter()
                .all(|t| t.coefficient == 0.0 || t.noise.has_finite_second_moment()),
            _ => true,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            NoiseKind::Wiener { .. } => "wiener",
            NoiseKind::CompoundPoisson { .. } => "compound_poisson",
            NoiseKind::LinearCombination { .. } => "linear_combination",
            NoiseKind::Cauchy { .. } => "cauchy",
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at(1)
    }

    fn validate_at(&self, depth: usize) -> Result<()> {
        match self {
            NoiseKind::Wiener { dimension } => check_dimension(*dimension),
            NoiseKind::CompoundPoisson {
                rate,
                jump,
                dimension,
            } => {
                check_dimension(*dimension)?;
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "compound Poisson rate must be positive, got {rate}"
                    )));
                }
                jump.validate()
            }
            NoiseKind::Cauchy { scale, dimension } => {
                check_dimension(*dimension)?;
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "Cauchy scale must be positive, got {scale}"
                    )));
                }
                Ok(())
            }
            NoiseKind::LinearCombination { terms } => {
                if depth > MAX_COMBINATION_DEPTH {
                    return Err(Error::Config(format!(
                        "linear combinations nested deeper than {MAX_COMBINATION_DEPTH} are not supported"
                    )));
                }
                let first = terms.first().ok_or_else(|| {
                    Error::InvalidParameter("linear combination needs at least one term".into())
                })?;
                let m = first.noise.dimension();
                for term in terms {
                    if !term.coefficient.is_finite() {
                        return Err(Error::InvalidParameter(format!(
                            "combination coefficient must be finite, got {}",
                            term.coefficient
                        )));
                    }
                    term.noise.validate_at(depth + 1)?;
                    if term.noise.dimension() != m {
                        return Err(Error::InvalidParameter(
                            "all combination terms must share one dimension".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }
}

fn check_dimension(m: usize) -> Result<()> {
    if m == 0 {
        Err(Error::InvalidParameter("noise dimension must be >= 1".into()))
    } else {
        Ok(())
    }
}

/// A trajectory `L(t_0), ..., L(t_n)` stored row-wise; row 0 is `L(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub grid: TimeGrid,
    pub values: Array2<f64>,
    pub kind: NoiseKind,
    /// Seed of the stream that produced the path, when it had its own stream.
    pub seed: Option<u64>,
}

impl PathSample {
    pub fn dimension(&self) -> usize {
        self.values.ncols()
    }

    pub fn at(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.row(j)
    }

    /// Generate a path from its own stream seeded with `seed`.
    pub fn generate(kind: &NoiseKind, grid: TimeGrid, seed: u64) -> Result<Self> {
        let mut rng = rng::rng_from_seed(seed);
        let mut path = sample_levy_path(kind, grid, &mut rng)?;
        path.seed = Some(seed);
        Ok(path)
    }

    /// Exact row extraction onto a nested coarser grid.
    pub fn subsample(&self, coarse: TimeGrid) -> Result<PathSample> {
        let stride = coarse.stride_in(&self.grid).ok_or_else(|| {
            Error::Config(format!(
                "grid with n={} is not nested in grid with n={}",
                coarse.n(),
                self.grid.n()
            ))
        })?;
        Ok(PathSample {
            grid: coarse,
            values: self.values.slice(s![..;stride, ..]).to_owned(),
            kind: self.kind.clone(),
            seed: self.seed,
        })
    }

    /// Flattened `L(t_1), ..., L(t_n)` on `grid` (nested in the path's grid),
    /// the information the network sees.
    pub fn network_input(&self, grid: TimeGrid) -> Result<Vec<f64>> {
        let stride = grid.stride_in(&self.grid).ok_or_else(|| {
            Error::Config(format!(
                "network mesh n={} is not nested in path mesh n={}",
                grid.n(),
                self.grid.n()
            ))
        })?;
        let mut out = Vec::with_capacity(grid.n() * self.dimension());
        for j in 1..=grid.n() {
            out.extend(self.values.row(j * stride).iter().copied());
        }
        Ok(out)
    }

    /// `L(t)` under the interpolation matching the path's regularity class:
    /// linear for continuous kinds, left-constant (càdlàg) for jump kinds.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let j = self.grid.bracket(t);
        let a = self.grid.point(j);
        if self.kind.has_jumps() {
            let row = if t >= self.grid.point(j + 1) { j + 1 } else { j };
            out.copy_from_slice(self.values.row(row).as_slice().unwrap());
            return;
        }
        let w = (t - a) / self.grid.step();
        let lo = self.values.row(j);
        let hi = self.values.row(j + 1);
        for k in 0..out.len() {
            out[k] = lo[k] + w * (hi[k] - lo[k]);
        }
    }

    pub fn is_valid(&self) -> bool {
        self.values.nrows() == self.grid.n() + 1
            && self.values.row(0).iter().all(|&v| v == 0.0)
            && self.values.iter().all(|v| v.is_finite())
    }

    pub fn to_table(&self) -> Table {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dimension()).map(|k| format!("l_{k}")));
        let mut table = Table::new(header);
        if let Some(seed) = self.seed {
            table = table.comment(format!("seed={seed}"));
        }
        table = table.comment(format!("noise={}", self.kind.label()));
        let mut row = Vec::with_capacity(self.dimension() + 1);
        for j in 0..=self.grid.n() {
            row.clear();
            row.push(self.grid.point(j));
            row.extend(self.values.row(j).iter().copied());
            table.push_floats(&row);
        }
        table
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.to_table().write(path)
    }

    /// Read a trajectory dump back; the law is not recorded in the file and
    /// must be supplied.
    pub fn read_csv(path: &Path, kind: NoiseKind) -> Result<PathSample> {
        let table = Table::read(path)?;
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let times = table.floats("t").ok_or_else(|| bad("missing or bad t column".into()))?;
        if times.len() < 2 {
            return Err(bad("need at least two rows".into()));
        }
        let m = table.header.len() - 1;
        let mut values = Array2::zeros((times.len(), m));
        for k in 0..m {
            let col = table
                .floats(&format!("l_{}", k + 1))
                .ok_or_else(|| bad(format!("missing column l_{}", k + 1)))?;
            values.column_mut(k).assign(&ArrayView1::from(&col));
        }
        let grid = TimeGrid::new(times.len() - 1, *times.last().unwrap())?;
        let seed = table
            .comments
            .iter()
            .find_map(|c| c.strip_prefix("seed=")?.parse().ok());
        Ok(PathSample {
            grid,
            values,
            kind,
            seed,
        })
    }
}

fn from_increments(grid: TimeGrid, increments: Array2<f64>, kind: NoiseKind) -> PathSample {
    let m = increments.ncols();
    let mut values = Array2::zeros((grid.n() + 1, m));
    for j in 0..grid.n() {
        for k in 0..m {
            values[[j + 1, k]] = values[[j, k]] + increments[[j, k]];
        }
    }
    PathSample {
        grid,
        values,
        kind,
        seed: None,
    }
}

/// Wiener increments are i.i.d. `N(0, h I_m)`.
pub fn sample_wiener_path<R: Rng + ?Sized>(grid: TimeGrid, m: usize, rng: &mut R) -> Result<PathSample> {
    check_dimension(m)?;
    let sd = grid.step().sqrt();
    let inc = Array2::from_shape_simple_fn((grid.n(), m), || {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    });
    Ok(from_increments(grid, inc, NoiseKind::wiener(m)))
}

/// Jump times are uniform given a `Poisson(rate T)` count; a jump at time `s`
/// is visible from the first mesh point `t_j >= s`.
pub fn sample_compound_poisson_path<R: Rng + ?Sized>(
    grid: TimeGrid,
    rate: f64,
    jump: &JumpLaw,
    m: usize,
    rng: &mut R,
) -> Result<PathSample> {
    let kind = NoiseKind::CompoundPoisson {
        rate,
        jump: jump.clone(),
        dimension: m,
    };
    kind.validate()?;
    let count_law = Poisson::new(rate * grid.horizon())
        .map_err(|e| Error::InvalidParameter(format!("Poisson intensity: {e}")))?;
    let mut inc = Array2::zeros((grid.n(), m));
    let h = grid.step();
    for k in 0..m {
        let count = count_law.sample(rng) as u64;
        for _ in 0..count {
            let s = grid.horizon() * rng.random::<f64>();
            let j = ((s / h).ceil() as usize).clamp(1, grid.n());
            inc[[j - 1, k]] += jump.sample(rng);
        }
    }
    Ok(from_increments(grid, inc, kind))
}

/// Cauchy increments by inverse CDF: `scale h tan(pi (U - 1/2))`.
pub fn sample_cauchy_path<R: Rng + ?Sized>(
    grid: TimeGrid,
    scale: f64,
    m: usize,
    rng: &mut R,
) -> Result<PathSample> {
    let kind = NoiseKind::Cauchy {
        scale,
        dimension: m,
    };
    kind.validate()?;
    let width = scale * grid.step();
    let inc = Array2::from_shape_simple_fn((grid.n(), m), || {
        let u: f64 = Open01.sample(rng);
        width * (std::f64::consts::PI * (u - 0.5)).tan()
    });
    Ok(from_increments(grid, inc, kind))
}

pub fn sample_levy_path<R: Rng + ?Sized>(kind: &NoiseKind, grid: TimeGrid, rng: &mut R) -> Result<PathSample> {
    kind.validate()?;
    sample_unchecked(kind, grid, rng)
}

fn sample_unchecked<R: Rng + ?Sized>(kind: &NoiseKind, grid: TimeGrid, rng: &mut R) -> Result<PathSample> {
    match kind {
        NoiseKind::Wiener { dimension } => sample_wiener_path(grid, *dimension, rng),
        NoiseKind::CompoundPoisson {
            rate,
            jump,
            dimension,
        } => sample_compound_poisson_path(grid, *rate, jump, *dimension, rng),
        NoiseKind::Cauchy { scale, dimension } => sample_cauchy_path(grid, *scale, *dimension, rng),
        NoiseKind::LinearCombination { terms } => {
            let mut values = Array2::zeros((grid.n() + 1, kind.dimension()));
            for term in terms {
                let part = sample_unchecked(&term.noise, grid, rng)?;
                values.scaled_add(term.coefficient, &part.values);
            }
            Ok(PathSample {
                grid,
                values,
                kind: kind.clone(),
                seed: None,
            })
        }
    }
}
