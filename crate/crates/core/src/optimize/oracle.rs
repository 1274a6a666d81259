//! Brute-force grid searches used as reference solutions in tests.

use crate::linalg::Vector;
use crate::optimize::dc::DcProgram;
use crate::{Error, Result};

/// Largest dimension accepted by the dense grids.
pub const ORACLE_MAX_N: usize = 4;

/// Best point of a uniform grid over `[0,1]^n` with `1ᵀp ≤ budget`,
/// maximizing `objective`. `resolution` is the number of intervals per axis.
pub fn grid_oracle<F>(n: usize, budget: f64, resolution: usize, mut objective: F) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> Option<f64>,
{
    if n == 0 || n > ORACLE_MAX_N {
        return Err(Error::TooLarge { n, cap: ORACLE_MAX_N });
    }
    if resolution == 0 {
        return Err(Error::Config("grid resolution must be positive".into()));
    }
    let pts = resolution + 1;
    let total = pts.pow(n as u32);
    let mut p = vec![0.0; n];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for idx in 0..total {
        let mut rem = idx;
        for x in p.iter_mut() {
            *x = (rem % pts) as f64 / resolution as f64;
            rem /= pts;
        }
        if p.iter().sum::<f64>() > budget + 1e-12 {
            continue;
        }
        if let Some(v) = objective(&p) {
            if v.is_finite() && best.as_ref().is_none_or(|b| v > b.1) {
                best = Some((p.clone(), v));
            }
        }
    }
    best.ok_or_else(|| Error::Infeasible("no feasible grid point".into()))
}

/// Best `πᵀDπ` over `‖π‖ = r` within the polytope, searching a grid of
/// hyperspherical angles in the nonnegative orthant.
pub fn sphere_oracle(prog: &DcProgram, r: f64, budget: f64, resolution: usize) -> Result<Option<(Vector, f64)>> {
    let n = prog.n();
    if n == 0 || n > ORACLE_MAX_N {
        return Err(Error::TooLarge { n, cap: ORACLE_MAX_N });
    }
    let angles = n - 1;
    let pts = resolution + 1;
    let total = pts.pow(angles as u32);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut best: Option<(Vector, f64)> = None;
    let mut th = vec![0.0; angles];
    for idx in 0..total {
        let mut rem = idx;
        for t in th.iter_mut() {
            *t = half_pi * (rem % pts) as f64 / resolution as f64;
            rem /= pts;
        }
        let mut u = vec![0.0; n];
        let mut sin_prod = 1.0;
        for i in 0..angles {
            u[i] = sin_prod * th[i].cos();
            sin_prod *= th[i].sin();
        }
        u[n - 1] = sin_prod;
        let pi = Vector::from_vec(u) * r;
        let feasible = pi.iter().zip(prog.scale.iter()).all(|(p, s)| *p <= s * (1.0 + 1e-12))
            && pi.iter().zip(prog.scale.iter()).map(|(p, s)| p / s).sum::<f64>() <= budget + 1e-12;
        if !feasible {
            continue;
        }
        let v: f64 = pi.iter().zip(prog.d.iter()).map(|(p, d)| d * p * p).sum();
        if best.as_ref().is_none_or(|b| v > b.1) {
            best = Some((pi, v));
        }
    }
    Ok(best)
}
