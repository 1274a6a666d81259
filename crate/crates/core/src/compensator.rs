//! MMSE linear compensator `û = ξᵀ y_L + ε` and the statistics of its output.

use serde::{Deserialize, Serialize};

use crate::linalg::{self, Mat, Vector};
use crate::model::{BernoulliSchedule, Hypothesis, Realization};
use crate::moments::{MomentSet, ReportMoments};
use crate::{Error, Result};

/// Exact matrix products or their first-order Taylor forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatMode {
    #[default]
    Exact,
    Approx,
}

/// Default relative ridge added to `C_yL` before solving.
pub const DEFAULT_RIDGE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct CompensatorWeights {
    /// `n × K` weight matrix ξ*.
    pub xi: Mat,
    /// Bias ε* (length K).
    pub eps: Vector,
    /// Absolute ridge that was added to the diagonal of `C_yL`.
    pub ridge: f64,
}

/// `ξ* = C_yL⁻¹ C_yLu`, `ε* = E[u] - ξ*ᵀ E[y_L]` with the default ridge.
pub fn fit(mom: &MomentSet, rep: &ReportMoments) -> Result<CompensatorWeights> {
    fit_with_ridge(mom, rep, DEFAULT_RIDGE)
}

/// As [`fit`] with ridge `ridge_scale · trace(C_yL) / n`. A zero scale
/// reports singular systems instead of regularizing them.
pub fn fit_with_ridge(mom: &MomentSet, rep: &ReportMoments, ridge_scale: f64) -> Result<CompensatorWeights> {
    let n = mom.n();
    if rep.cov_uncond.nrows() != n {
        return Err(Error::dim("fit report covariance", n, rep.cov_uncond.nrows()));
    }
    let ridge = ridge_scale * rep.cov_uncond.trace() / n as f64;
    let mut c = linalg::symmetrize(&rep.cov_uncond);
    for i in 0..n {
        c[(i, i)] += ridge;
    }
    let xi = if ridge_scale == 0.0 {
        c.clone()
            .cholesky()
            .map(|ch| ch.solve(&rep.cross))
            .ok_or_else(|| Error::Singular("C_yL is not positive definite".into()))?
    } else {
        linalg::solve_spd(&c, &rep.cross)?
    };
    let eps = mom.current_mean(None) - xi.transpose() * &rep.mean_uncond;
    Ok(CompensatorWeights { xi, eps, ridge })
}

impl CompensatorWeights {
    pub fn window_len(&self) -> usize {
        self.xi.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.xi.ncols()
    }

    /// `û = ξᵀ y_L + ε`.
    pub fn apply(&self, y_window: &[f64]) -> Result<Vector> {
        if y_window.len() != self.window_len() {
            return Err(Error::dim("apply window", self.window_len(), y_window.len()));
        }
        let mut out = self.eps.clone();
        for (i, &y) in y_window.iter().enumerate() {
            if y != 0.0 {
                for c in 0..self.outputs() {
                    out[c] += self.xi[(i, c)] * y;
                }
            }
        }
        Ok(out)
    }

    /// Analytic mean-squared error `E‖ξᵀ y_L + ε - u‖²` under the moment set's
    /// unconditional statistics.
    pub fn mse(&self, mom: &MomentSet, rep: &ReportMoments) -> f64 {
        let cu: Mat = {
            let cols: Vec<usize> = mom.current_positions().collect();
            Mat::from_fn(mom.nodes, mom.nodes, |a, b| mom.cov_uncond[(cols[a], cols[b])])
        };
        let xt = self.xi.transpose();
        let quad = &xt * &rep.cov_uncond * &self.xi - &xt * &rep.cross * 2.0 + cu;
        let bias = &xt * &rep.mean_uncond + &self.eps - mom.current_mean(None);
        quad.trace() + bias.norm_squared()
    }
}

/// Mean and covariance of `û` given `H_h` and `θ_L = b`.
#[derive(Debug, Clone)]
pub struct ConditionalStats {
    pub mean: Vector,
    pub cov: Mat,
}

/// `μ = ξᵀ B̃ E[u_L|H_h] + ε`, `C = ξᵀ (B̃ C_{u_L|H_h} B̃ + σ_z² I) ξ`.
pub fn conditional_stats(
    w: &CompensatorWeights,
    mom: &MomentSet,
    b: &Realization,
    h: Hypothesis,
    sigma_z2: f64,
) -> Result<ConditionalStats> {
    let n = mom.n();
    if b.len() != n {
        return Err(Error::dim("conditional_stats realization", n, b.len()));
    }
    let bv = Vector::from_vec(b.as_f64());
    let gated_mean = mom.mean[h.index()].component_mul(&bv);
    let mean = w.xi.transpose() * gated_mean + &w.eps;
    let inner = gated_cov(&mom.cov[h.index()], b.bits(), sigma_z2);
    let cov = linalg::symmetrize(&(w.xi.transpose() * inner * &w.xi));
    Ok(ConditionalStats { mean, cov })
}

/// `B̃ C B̃ + σ_z² I`.
pub fn gated_cov(cov: &Mat, bits: &[bool], sigma_z2: f64) -> Mat {
    let n = bits.len();
    let mut m = Mat::from_fn(n, n, |i, j| if bits[i] && bits[j] { cov[(i, j)] } else { 0.0 });
    for i in 0..n {
        m[(i, i)] += sigma_z2;
    }
    m
}

/// Conditional mean difference `a_b = μ_{û|H1,b} - μ_{û|H0,b}`.
///
/// Approx mode uses `C_{u_L u}ᵀ P̃ B̃ Δμ / σ_z²`, the first-order expansion of
/// `C_yL⁻¹` around `σ_z² I`.
pub fn mean_shift_conditional(
    w: &CompensatorWeights,
    mom: &MomentSet,
    sched: &BernoulliSchedule,
    b: &Realization,
    sigma_z2: f64,
    mode: StatMode,
) -> Result<Vector> {
    let n = mom.n();
    if b.len() != n || sched.len() != n {
        return Err(Error::dim("mean_shift_conditional", n, b.len().min(sched.len())));
    }
    let gated = mom.mean_shift().component_mul(&Vector::from_vec(b.as_f64()));
    Ok(match mode {
        StatMode::Exact => w.xi.transpose() * gated,
        StatMode::Approx => {
            let p = Vector::from_column_slice(sched.probs());
            mom.cross_cov(None).transpose() * gated.component_mul(&p) / sigma_z2
        }
    })
}

/// Unconditional mean difference `a = ξᵀ P̃ Δμ`; approx `C_{u_L u}ᵀ P̃² Δμ / σ_z²`.
pub fn mean_shift_unconditional(
    w: &CompensatorWeights,
    mom: &MomentSet,
    sched: &BernoulliSchedule,
    sigma_z2: f64,
    mode: StatMode,
) -> Result<Vector> {
    let n = mom.n();
    if sched.len() != n {
        return Err(Error::dim("mean_shift_unconditional", n, sched.len()));
    }
    let p = Vector::from_column_slice(sched.probs());
    let gated = mom.mean_shift().component_mul(&p);
    Ok(match mode {
        StatMode::Exact => w.xi.transpose() * gated,
        StatMode::Approx => mom.cross_cov(None).transpose() * gated.component_mul(&p) / sigma_z2,
    })
}

/// `C_{û|H_h} = ξᵀ C_{y_L|H_h} ξ`; approx `C_{u_L u}ᵀ P̃² C_{u_L u} / σ_z⁴`.
pub fn estimate_cov_unconditional(
    w: &CompensatorWeights,
    rep: &ReportMoments,
    mom: &MomentSet,
    sched: &BernoulliSchedule,
    h: Hypothesis,
    sigma_z2: f64,
    mode: StatMode,
) -> Result<Mat> {
    let n = mom.n();
    if sched.len() != n {
        return Err(Error::dim("estimate_cov_unconditional", n, sched.len()));
    }
    Ok(match mode {
        StatMode::Exact => linalg::symmetrize(&(w.xi.transpose() * &rep.cov[h.index()] * &w.xi)),
        StatMode::Approx => {
            let mut scaled = mom.cross_cov(None);
            for (i, mut row) in scaled.row_iter_mut().enumerate() {
                row *= sched.probs()[i];
            }
            linalg::symmetrize(&(scaled.transpose() * &scaled)) / (sigma_z2 * sigma_z2)
        }
    })
}

/// Unconditional mean of `û` under `H_h`: `ξᵀ P̃ E[u_L|H_h] + ε`.
pub fn estimate_mean(w: &CompensatorWeights, mom: &MomentSet, sched: &BernoulliSchedule, h: Hypothesis) -> Vector {
    let p = Vector::from_column_slice(sched.probs());
    w.xi.transpose() * mom.mean[h.index()].component_mul(&p) + &w.eps
}

/// Conditional and unconditional statistics of `û` bundled for one realization.
#[derive(Debug, Clone)]
pub struct EstimateStats {
    /// Indexed by hypothesis.
    pub mu_hat_h_b: [Vector; 2],
    pub c_hat_h_b: [Mat; 2],
    pub a_b: Vector,
    pub a: Vector,
    pub c_hat_h: [Mat; 2],
}

pub fn estimate_stats(
    w: &CompensatorWeights,
    mom: &MomentSet,
    rep: &ReportMoments,
    sched: &BernoulliSchedule,
    b: &Realization,
    sigma_z2: f64,
) -> Result<EstimateStats> {
    let s0 = conditional_stats(w, mom, b, Hypothesis::H0, sigma_z2)?;
    let s1 = conditional_stats(w, mom, b, Hypothesis::H1, sigma_z2)?;
    let a_b = mean_shift_conditional(w, mom, sched, b, sigma_z2, StatMode::Exact)?;
    let a = mean_shift_unconditional(w, mom, sched, sigma_z2, StatMode::Exact)?;
    let c0 = estimate_cov_unconditional(w, rep, mom, sched, Hypothesis::H0, sigma_z2, StatMode::Exact)?;
    let c1 = estimate_cov_unconditional(w, rep, mom, sched, Hypothesis::H1, sigma_z2, StatMode::Exact)?;
    Ok(EstimateStats {
        mu_hat_h_b: [s0.mean, s1.mean],
        c_hat_h_b: [s0.cov, s1.cov],
        a_b,
        a,
        c_hat_h: [c0, c1],
    })
}
