//! Conditional sampling of the driving process between mesh points.
//!
//! Only the Wiener bridge is available: given `L(a)` and `L(b)`, the value at
//! `a <= tau <= b` is Gaussian with mean on the chord and variance
//! `(tau - a)(b - tau) / (b - a)` per coordinate.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::levy_paths::PathSample;

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeDraw {
    pub tau: f64,
    pub value: Vec<f64>,
    /// Bracketing mesh indices `(j, j + 1)` with `t_j <= tau <= t_{j+1}`.
    pub interval: (usize, usize),
}

fn check_tau(path: &PathSample, tau: f64) -> Result<()> {
    if !(0.0..=path.grid.horizon()).contains(&tau) {
        return Err(Error::Domain(format!(
            "tau = {tau} outside [0, {}]",
            path.grid.horizon()
        )));
    }
    Ok(())
}

fn check_wiener(path: &PathSample) -> Result<()> {
    if path.kind.is_wiener() {
        Ok(())
    } else {
        Err(Error::UnsupportedBridge {
            kind: path.kind.label().to_string(),
        })
    }
}

/// Conditional mean and per-coordinate variance of `L(tau)` given the mesh.
pub fn brownian_bridge_mean_var(path: &PathSample, tau: f64) -> Result<(Vec<f64>, f64)> {
    check_tau(path, tau)?;
    check_wiener(path)?;
    if let Some(j) = path.grid.index_of(tau) {
        return Ok((path.at(j).to_vec(), 0.0));
    }
    let j = path.grid.bracket(tau);
    let a = path.grid.point(j);
    let b = path.grid.point(j + 1);
    let w = (tau - a) / (b - a);
    let lo = path.at(j);
    let hi = path.at(j + 1);
    let mean = lo.iter().zip(hi.iter()).map(|(l, h)| l + w * (h - l)).collect();
    let var = ((tau - a) * (b - tau) / (b - a)).max(0.0);
    Ok((mean, var))
}

/// One draw from the bridge law; mesh points are returned exactly and
/// consume no randomness.
pub fn sample_bridge<R: Rng + ?Sized>(path: &PathSample, tau: f64, rng: &mut R) -> Result<BridgeDraw> {
    let (mut value, var) = brownian_bridge_mean_var(path, tau)?;
    let j = path.grid.bracket(tau);
    if var > 0.0 {
        let sd = var.sqrt();
        for v in &mut value {
            let z: f64 = StandardNormal.sample(rng);
            *v += sd * z;
        }
    }
    Ok(BridgeDraw {
        tau,
        value,
        interval: (j, j + 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_paths::{JumpLaw, NoiseKind, TimeGrid};
    use crate::rng::{self, stream, Domain};

    fn path(n: usize, seed: u64) -> PathSample {
        PathSample::generate(&NoiseKind::wiener(1), TimeGrid::new(n, 1.0).unwrap(), seed).unwrap()
    }

    #[test]
    fn mesh_point_is_known() {
        let p = path(8, 3);
        for j in 0..=8 {
            let t = p.grid.point(j);
            let (mean, var) = brownian_bridge_mean_var(&p, t).unwrap();
            assert_eq!(mean[0], p.values[[j, 0]]);
            assert_eq!(var, 0.0);
        }
        let mut r = stream(0, Domain::Test, 0, 0);
        let mut untouched = r.clone();
        let d = sample_bridge(&p, 1.0, &mut r).unwrap();
        assert_eq!(d.value[0], p.values[[8, 0]]);
        // no randomness consumed at a mesh point
        assert_eq!(r.random::<u64>(), untouched.random::<u64>());
    }

    #[test]
    fn midpoint_and_quarter_variance() {
        let p = path(4, 1);
        let h = 0.25;
        let (mean, var) = brownian_bridge_mean_var(&p, 0.25 + h / 2.0).unwrap();
        assert!((mean[0] - 0.5 * (p.values[[1, 0]] + p.values[[2, 0]])).abs() < 1e-15);
        assert!((var - h / 4.0).abs() < 1e-15);
        let (_, var) = brownian_bridge_mean_var(&p, 0.5 + h / 4.0).unwrap();
        assert!((var - 3.0 * h / 16.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_tau() {
        let p = path(4, 1);
        assert!(matches!(brownian_bridge_mean_var(&p, -0.1), Err(Error::Domain(_))));
        assert!(matches!(brownian_bridge_mean_var(&p, 1.1), Err(Error::Domain(_))));
    }

    #[test]
    fn non_wiener_rejected() {
        let kind = NoiseKind::CompoundPoisson {
            rate: 1.0,
            jump: JumpLaw::Constant { value: 1.0 },
            dimension: 1,
        };
        let p = PathSample::generate(&kind, TimeGrid::new(4, 1.0).unwrap(), 0).unwrap();
        let err = sample_bridge(&p, 0.3, &mut stream(0, Domain::Test, 0, 0)).unwrap_err();
        assert!(matches!(err, Error::UnsupportedBridge { .. }));
        assert!(err.to_string().contains("grid loss"));
    }

    #[test]
    fn repeated_state_repeated_draw() {
        let p = path(16, 2);
        let r = stream(5, Domain::Test, 1, 1);
        let a = sample_bridge(&p, 0.37, &mut r.clone()).unwrap();
        let b = sample_bridge(&p, 0.37, &mut r.clone()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.interval, (5, 6));
    }

    #[test]
    fn bridge_draws_follow_conditional_law() {
        let p = path(8, 4);
        let tau = 0.3125; // midpoint of [0.25, 0.375]
        let (mean, var) = brownian_bridge_mean_var(&p, tau).unwrap();
        let draws = 100_000;
        let mut r = stream(9, Domain::Test, 0, 0);
        let xs: Vec<f64> = (0..draws).map(|_| sample_bridge(&p, tau, &mut r).unwrap().value[0]).collect();
        let m = xs.iter().sum::<f64>() / draws as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!((m - mean[0]).abs() < 3.0 * se);
        assert!((v / var - 1.0).abs() < 0.02, "variance ratio {}", v / var);
    }

    #[test]
    fn bridge_marginal_recovers_wiener_variance() {
        let tau = 0.3;
        let paths = 10_000;
        let xs: Vec<f64> = (0..paths)
            .map(|i| {
                let seed = rng::derive_seed(6, Domain::Test, i, 0);
                let p = path(8, seed);
                let mut r = stream(6, Domain::Test, i, 1);
                sample_bridge(&p, tau, &mut r).unwrap().value[0]
            })
            .collect();
        let v = xs.iter().map(|x| x * x).sum::<f64>() / paths as f64;
        assert!((v / tau - 1.0).abs() < 0.05, "{}", v / tau);
    }

    proptest::proptest! {
        #[test]
        fn variance_nonnegative_and_zero_at_nodes(tau in 0.0f64..=1.0, n in 1usize..20) {
            let p = path(n, 7);
            let (_, var) = brownian_bridge_mean_var(&p, tau).unwrap();
            proptest::prop_assert!(var >= 0.0);
            proptest::prop_assert!(var <= p.grid.step() / 4.0 + 1e-15);
            for j in 0..=n {
                let (_, v) = brownian_bridge_mean_var(&p, p.grid.point(j)).unwrap();
                proptest::prop_assert_eq!(v, 0.0);
            }
        }
    }
}
