//! Relaxed Neyman-Pearson schedule for one observed realization.
//!
//! The objective `(t√(pᵀΣ₀p) - qᵀp) / √(pᵀΣ₁p)` with `t = Q⁻¹(α)` is
//! homogeneous of degree zero, so the relaxed minimizer is found on the
//! ellipsoid `pᵀΣ₀p = 1` and then rescaled onto the feasible region.

use crate::detection::{np_pieces, qfunc_inv, NpPieces};
use crate::linalg::{self, Mat, Vector};
use crate::model::{BernoulliSchedule, Realization};
use crate::moments::MomentSet;
use crate::{Error, Result};

/// Relaxed optimum and its certificate.
#[derive(Debug, Clone)]
pub struct KktSolution {
    pub zeta: Vector,
    pub kappa: f64,
    /// `|‖(tI + κB)⁻¹c‖ - 1|`.
    pub residual: f64,
    /// Smallest eigenvalue of `tI + κB`.
    pub min_eig: f64,
}

/// `(t√(pᵀΣ₀p) - qᵀp) / √(pᵀΣ₁p)`.
pub fn np_objective(sigma0: &Mat, sigma1: &Mat, q: &Vector, alpha: f64, p: &Vector) -> Result<f64> {
    let t = qfunc_inv(alpha)?;
    let v1 = linalg::quad(sigma1, p);
    if !(v1 > 0.0) {
        return Err(Error::Degenerate("pᵀΣ₁p is zero".into()));
    }
    Ok((t * linalg::quad(sigma0, p).max(0.0).sqrt() - q.dot(p)) / v1.sqrt())
}

/// Minimizer of the relaxed objective (no box or budget).
///
/// With `B = Σ₀^{-1/2} Σ₁ Σ₀^{-1/2}` and `c = Σ₀^{-1/2} q`, stationarity on
/// the sphere gives `x = (tI + κB)⁻¹c`, `‖x‖ = 1`, and `ζ = Σ₀^{-1/2} x`.
/// `κ` is found by bisection on the interval where `tI + κB ≻ 0`, on which
/// `‖x(κ)‖` decreases monotonically.
pub fn kkt_direction(sigma0: &Mat, sigma1: &Mat, q: &Vector, alpha: f64) -> Result<KktSolution> {
    let n = q.len();
    if sigma0.nrows() != n || sigma1.nrows() != n {
        return Err(Error::dim("kkt_direction", n, sigma0.nrows().min(sigma1.nrows())));
    }
    let t = qfunc_inv(alpha)?;
    let e0 = linalg::symmetrize(sigma0).symmetric_eigen();
    let top = e0.eigenvalues.amax();
    if e0.eigenvalues.min() <= 1e-14 * top.max(1e-300) {
        return Err(Error::Singular("Σ₀ is not positive definite".into()));
    }
    let inv_sqrt =
        &e0.eigenvectors * Mat::from_diagonal(&e0.eigenvalues.map(|l| 1.0 / l.sqrt())) * e0.eigenvectors.transpose();
    let bmat = linalg::symmetrize(&(&inv_sqrt * sigma1 * &inv_sqrt));
    let c = &inv_sqrt * q;
    let eb = bmat.clone().symmetric_eigen();
    let lam = &eb.eigenvalues;
    // In the eigenbasis of B: x_i = ĉ_i / (t + κλ_i).
    let chat = eb.eigenvectors.transpose() * &c;
    let norm_at = |kappa: f64| -> f64 {
        chat.iter()
            .zip(lam.iter())
            .map(|(&ci, &li)| (ci / (t + kappa * li)).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let lam_max = lam.max();
    let lam_min = lam.min();
    if lam_min < -1e-10 * lam_max.abs().max(1e-300) {
        return Err(Error::Assumption("Σ₁ is not positive semidefinite".into()));
    }
    if c.norm() == 0.0 {
        return Err(Error::Infeasible("q = 0: no stationary direction".into()));
    }
    // tI + κB ≻ 0 ⇔ t + κλ_i > 0 for every i.
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for &l in lam.iter() {
        if l > 0.0 {
            lo = lo.max(-t / l);
        } else if t <= 0.0 {
            return Err(Error::Infeasible(format!(
                "tI + κB cannot be positive definite: t = {t}, null direction in B"
            )));
        }
    }
    if lam_max <= 0.0 {
        // B = 0: the norm is constant ‖c‖/t.
        return Err(Error::Infeasible("Σ₁ vanishes on the relaxed problem".into()));
    }
    // Lower end: norm → ∞ unless c has no weight on the top eigenvector.
    let mut a = lo + 1e-15 * lo.abs().max(1.0);
    if norm_at(a) < 1.0 {
        // Step towards the singular end until the norm exceeds one.
        let mut gap = (a - lo).max(1e-300);
        let mut found = false;
        for _ in 0..200 {
            gap *= 0.5;
            let k = lo + gap;
            if k <= lo {
                break;
            }
            if norm_at(k) >= 1.0 {
                a = k;
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::Infeasible(
                "‖(tI + κB)⁻¹c‖ stays below 1 on the admissible interval".into(),
            ));
        }
    }
    let mut b = a.abs().max(1.0);
    while norm_at(b) > 1.0 {
        b = b * 2.0 + 1.0;
        if !b.is_finite() || b > hi.min(1e300) {
            return Err(Error::Infeasible("κ bracket overflow".into()));
        }
    }
    hi = b;
    let mut lo_k = a;
    for _ in 0..400 {
        let mid = 0.5 * (lo_k + hi);
        if norm_at(mid) > 1.0 {
            lo_k = mid;
        } else {
            hi = mid;
        }
        if hi - lo_k <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    let kappa = 0.5 * (lo_k + hi);
    let x = Vector::from_iterator(n, chat.iter().zip(lam.iter()).map(|(&ci, &li)| ci / (t + kappa * li)));
    let x = &eb.eigenvectors * x;
    let residual = (x.norm() - 1.0).abs();
    let min_eig = lam.iter().map(|&l| t + kappa * l).fold(f64::INFINITY, f64::min);
    Ok(KktSolution {
        zeta: &inv_sqrt * x,
        kappa,
        residual,
        min_eig,
    })
}

/// Map a relaxed direction onto the boundary of `{0 ⪯ p ⪯ 1, 1ᵀp ≤ budget}`.
///
/// Negative entries are clipped to zero first. The budget scaling is used
/// when it keeps every entry at most one, otherwise the largest entry is
/// scaled to one.
pub fn scale_to_feasible(zeta: &Vector, budget: f64) -> Result<Vector> {
    let z = zeta.map(|v| v.max(0.0));
    let total = z.sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("scaling direction has no positive entry".into()));
    }
    let lam = budget / total;
    let max = z.max();
    let scaled = if lam * max <= 1.0 { z * lam } else { z / max };
    Ok(scaled.map(|v| v.clamp(0.0, 1.0)))
}

/// Uniform fallback `(1-η)` schedule.
pub fn uniform_budget(n: usize, eta: f64) -> Result<BernoulliSchedule> {
    BernoulliSchedule::uniform(n, (1.0 - eta).clamp(0.0, 1.0))
}

/// NP schedule for the detector realized by `b`: approximate pieces, KKT
/// direction, then boundary scaling.
pub fn solve_npc_two_stage(
    mom: &MomentSet,
    w: &Vector,
    b: &Realization,
    sigma_z2: f64,
    alpha: f64,
    eta: f64,
) -> Result<BernoulliSchedule> {
    let pieces = np_pieces(w, mom, b, sigma_z2)?;
    solve_pieces(&pieces, alpha, (1.0 - eta) * mom.n() as f64)
}

pub fn solve_pieces(pieces: &NpPieces, alpha: f64, budget: f64) -> Result<BernoulliSchedule> {
    let sol = kkt_direction(&pieces.sigma_h_b[0], &pieces.sigma_h_b[1], &pieces.q_b, alpha)?;
    BernoulliSchedule::new(scale_to_feasible(&sol.zeta, budget)?.iter().cloned().collect())
}
