//! Fusion statistics and detection probabilities.
//!
//! The fusion center forms `S = wᵀû` and decides `H1` when `S > τ`.
//! Conditioned on a realization `b` of the interruption process `û` is
//! Gaussian, so every probability here is a mixture over realizations of
//! Gaussian tail probabilities.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::compensator::{self, CompensatorWeights, StatMode};
use crate::linalg::{self, Mat, Vector};
use crate::model::{BernoulliSchedule, Hypothesis, Realization};
use crate::moments::{report_covariance, MomentSet, ReportMoments};
use crate::par::{self, Execution};
use crate::{Error, Result};

/// Largest number of random reporting slots enumerated exactly.
pub const ENUMERATION_CAP: usize = 20;

/// Gaussian tail `Q(x) = P(N(0,1) > x)`.
pub fn qfunc(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of [`qfunc`] on `(0, 1)`.
pub fn qfunc_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Range(format!("qfunc_inv needs p in (0,1), got {p}")));
    }
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    let mut x = 0.0;
    for _ in 0..200 {
        let f = qfunc(x) - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut next = x + f / dens;
        if !next.is_finite() || next < lo || next > hi {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() < 1e-13 * x.abs().max(1.0) {
            return Ok(next);
        }
        x = next;
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionRule {
    pub w: Vector,
    pub tau: f64,
}

impl FusionRule {
    pub fn new(w: Vector, tau: f64) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite()) || w.iter().all(|&x| x == 0.0) {
            return Err(Error::Config("fusion weights must be finite and not all zero".into()));
        }
        Ok(FusionRule { w, tau })
    }
}

/// `S = wᵀû` and the decision `S > τ`. Ties decide `H0`.
pub fn fuse(rule: &FusionRule, u_hat: &[f64]) -> Result<(f64, bool)> {
    if u_hat.len() != rule.w.len() {
        return Err(Error::dim("fuse", rule.w.len(), u_hat.len()));
    }
    let s: f64 = rule.w.iter().zip(u_hat).map(|(a, b)| a * b).sum();
    Ok((s, s > rule.tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub pf: f64,
    pub pd: f64,
    pub pd_alpha: f64,
    pub deflection: f64,
}

/// Per-realization conditional probabilities. `degenerate` marks a zero
/// variance, in which case the probabilities are step functions of τ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondProbs {
    pub pf: f64,
    pub pd: f64,
    pub degenerate: bool,
}

fn tail(tau: f64, mean: f64, var: f64) -> (f64, bool) {
    if var > 0.0 {
        (qfunc((tau - mean) / var.sqrt()), false)
    } else {
        (if mean > tau { 1.0 } else { 0.0 }, true)
    }
}

/// Quadratic-form ingredients of the approximate conditional NP objective.
#[derive(Debug, Clone)]
pub struct NpPieces {
    pub q_b: Vector,
    /// Indexed by hypothesis.
    pub sigma_h_b: [Mat; 2],
}

/// `q_b = C_{u_L u}w ∘ B̃Δμ`, `Σ_{h,b} = (B̃ C_h B̃ + σ_z² I) ∘ (C_{u_L u}w)(C_{u_L u}w)ᵀ`.
///
/// With `σ_z² = 1` these are the textbook pieces; for other noise levels
/// `σ_z` cancels in [`NpPieces::pd_alpha`].
pub fn np_pieces(w: &Vector, mom: &MomentSet, b: &Realization, sigma_z2: f64) -> Result<NpPieces> {
    let n = mom.n();
    if b.len() != n {
        return Err(Error::dim("np_pieces realization", n, b.len()));
    }
    let cross = mom.cross_cov(None);
    if w.len() != cross.ncols() {
        return Err(Error::dim("np_pieces weights", cross.ncols(), w.len()));
    }
    let v = &cross * w;
    let gated = mom.mean_shift().component_mul(&Vector::from_vec(b.as_f64()));
    let q_b = v.component_mul(&gated);
    let scale = q_b.amax().max(1.0);
    if let Some(i) = q_b.iter().position(|&q| q < -1e-9 * scale) {
        return Err(Error::Assumption(format!(
            "q_b[{i}] = {} is negative; fusion weights or correlations have mixed signs",
            q_b[i]
        )));
    }
    let q_b = q_b.map(|q| q.max(0.0));
    let vv = &v * v.transpose();
    let sigma = |h: Hypothesis| {
        let g = compensator::gated_cov(&mom.cov[h.index()], b.bits(), sigma_z2);
        linalg::symmetrize(&linalg::hadamard(&g, &vv))
    };
    Ok(NpPieces {
        q_b,
        sigma_h_b: [sigma(Hypothesis::H0), sigma(Hypothesis::H1)],
    })
}

impl NpPieces {
    /// `Q((Q⁻¹(α)√(pᵀΣ₀p) - q_bᵀp) / √(pᵀΣ₁p))`.
    pub fn pd_alpha(&self, p: &[f64], alpha: f64) -> Result<f64> {
        if p.len() != self.q_b.len() {
            return Err(Error::dim("NpPieces::pd_alpha", self.q_b.len(), p.len()));
        }
        let t = qfunc_inv(alpha)?;
        let p = Vector::from_column_slice(p);
        let v0 = linalg::quad(&self.sigma_h_b[0], &p).max(0.0);
        let v1 = linalg::quad(&self.sigma_h_b[1], &p).max(0.0);
        let num = t * v0.sqrt() - self.q_b.dot(&p);
        Ok(if v1 > 0.0 {
            qfunc(num / v1.sqrt())
        } else if num < 0.0 {
            1.0
        } else {
            0.0
        })
    }
}

/// Which conditional variance normalizes the deflection coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeflectionVariance {
    #[default]
    H0,
    H1,
}

/// `aᵀw / √(wᵀ C_{û|H} w)` over the unconditional statistics of `û`.
#[allow(clippy::too_many_arguments)]
pub fn deflection(
    w: &Vector,
    comp: &CompensatorWeights,
    mom: &MomentSet,
    rep: &ReportMoments,
    sched: &BernoulliSchedule,
    sigma_z2: f64,
    mode: StatMode,
    variance: DeflectionVariance,
) -> Result<f64> {
    let a = compensator::mean_shift_unconditional(comp, mom, sched, sigma_z2, mode)?;
    let h = match variance {
        DeflectionVariance::H0 => Hypothesis::H0,
        DeflectionVariance::H1 => Hypothesis::H1,
    };
    let c = compensator::estimate_cov_unconditional(comp, rep, mom, sched, h, sigma_z2, mode)?;
    let var = linalg::quad(&c, w);
    if !(var > 0.0) {
        return Err(Error::Degenerate("fusion statistic has zero variance".into()));
    }
    Ok(a.dot(w) / var.sqrt())
}

/// Deflection-optimal linear weights for the uninterrupted system (`p = 1`)
/// with the same memory: `w ∝ C_{û|H0}⁻¹ a`, negatives clipped, unit norm.
pub fn optimal_linear_weights(mom: &MomentSet, sigma_z2: f64) -> Result<Vector> {
    let sched = BernoulliSchedule::uniform(mom.n(), 1.0)?;
    let rep = report_covariance(mom, &sched, sigma_z2)?;
    let comp = compensator::fit(mom, &rep)?;
    let a = compensator::mean_shift_unconditional(&comp, mom, &sched, sigma_z2, StatMode::Exact)?;
    let c0 =
        compensator::estimate_cov_unconditional(&comp, &rep, mom, &sched, Hypothesis::H0, sigma_z2, StatMode::Exact)?;
    let raw = linalg::solve_spd(&c0, &Mat::from_column_slice(a.len(), 1, a.as_slice()))?;
    let w = Vector::from_iterator(a.len(), raw.column(0).iter().map(|&x| x.max(0.0)));
    let norm = w.norm();
    if !(norm > 0.0) {
        return Err(Error::Degenerate("no positive optimal linear weight".into()));
    }
    Ok(w / norm)
}

/// Unit-norm equal weights.
pub fn equal_weights(k: usize) -> Vector {
    Vector::from_element(k, 1.0 / (k as f64).sqrt())
}

/// Monte Carlo replacement for realization enumeration beyond the cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampling {
    pub draws: usize,
    pub seed: u64,
}

const SAMPLE_CHUNK: usize = 4096;

/// Slots whose participation is random, and the fixed bits elsewhere.
fn random_support(sched: &BernoulliSchedule) -> (Vec<usize>, Vec<bool>) {
    let random = (0..sched.len())
        .filter(|&i| sched.probs()[i] > 0.0 && sched.probs()[i] < 1.0)
        .collect();
    let base = sched.probs().iter().map(|&p| p >= 1.0).collect();
    (random, base)
}

/// `Σ_b Pr{b} f(b)` over realizations with positive mass.
///
/// Only slots with `0 < p < 1` are enumerated, so the cap applies to the
/// number of genuinely random slots. Beyond the cap `sampling` switches to a
/// Monte Carlo average; without it a `TooLarge` error is returned.
pub fn mixture_expectation<const M: usize, F>(
    sched: &BernoulliSchedule,
    exec: Execution,
    sampling: Option<Sampling>,
    f: F,
) -> Result<[f64; M]>
where
    F: Fn(&Realization) -> Result<[f64; M]> + Sync + Send,
{
    let (random, base) = random_support(sched);
    let r = random.len();
    let add = |acc: &mut [f64; M], x: [f64; M], wgt: f64| {
        for (a, v) in acc.iter_mut().zip(x) {
            *a += wgt * v;
        }
    };
    if r <= ENUMERATION_CAP {
        let count = 1usize << r;
        let chunk = 1024.min(count);
        let chunks = count.div_ceil(chunk);
        let parts = par::map_indices(exec, chunks, |c| -> Result<[f64; M]> {
            let mut acc = [0.0; M];
            let mut bits = base.clone();
            for m in c * chunk..((c + 1) * chunk).min(count) {
                let mut mass = 1.0;
                for (j, &i) in random.iter().enumerate() {
                    let on = (m >> j) & 1 == 1;
                    bits[i] = on;
                    let p = sched.probs()[i];
                    mass *= if on { p } else { 1.0 - p };
                }
                let b = Realization::new(bits.clone());
                add(&mut acc, f(&b)?, mass);
            }
            Ok(acc)
        });
        let mut total = [0.0; M];
        for p in parts {
            add(&mut total, p?, 1.0);
        }
        return Ok(total);
    }
    let Some(s) = sampling else {
        return Err(Error::TooLarge {
            n: r,
            cap: ENUMERATION_CAP,
        });
    };
    let chunks = s.draws.div_ceil(SAMPLE_CHUNK);
    let parts = par::map_indices(exec, chunks, |c| -> Result<[f64; M]> {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        rng.set_stream(c as u64);
        let mut acc = [0.0; M];
        let mut bits = base.clone();
        for _ in c * SAMPLE_CHUNK..((c + 1) * SAMPLE_CHUNK).min(s.draws) {
            for &i in &random {
                bits[i] = rng.random::<f64>() < sched.probs()[i];
            }
            add(&mut acc, f(&Realization::new(bits.clone()))?, 1.0);
        }
        Ok(acc)
    });
    let mut total = [0.0; M];
    for p in parts {
        add(&mut total, p?, 1.0 / s.draws as f64);
    }
    Ok(total)
}

/// A linear fusion detector for one schedule: compensator, fusion weights and
/// the derived scalar statistics of `S`.
#[derive(Debug, Clone)]
pub struct Detector {
    pub mom: MomentSet,
    pub sched: BernoulliSchedule,
    pub sigma_z2: f64,
    pub comp: CompensatorWeights,
    pub report: ReportMoments,
    pub w: Vector,
    /// `ξ w`, the effective per-report weights.
    v: Vector,
    w_eps: f64,
    pub exec: Execution,
    pub sampling: Option<Sampling>,
}

impl Detector {
    pub fn new(mom: &MomentSet, sched: &BernoulliSchedule, sigma_z2: f64, w: Vector) -> Result<Self> {
        if w.len() != mom.nodes {
            return Err(Error::dim("Detector weights", mom.nodes, w.len()));
        }
        FusionRule::new(w.clone(), 0.0)?;
        let report = report_covariance(mom, sched, sigma_z2)?;
        let comp = compensator::fit(mom, &report)?;
        let v = &comp.xi * &w;
        let w_eps = comp.eps.dot(&w);
        Ok(Detector {
            mom: mom.clone(),
            sched: sched.clone(),
            sigma_z2,
            comp,
            report,
            w,
            v,
            w_eps,
            exec: Execution::available(),
            sampling: None,
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_sampling(mut self, sampling: Option<Sampling>) -> Self {
        self.sampling = sampling;
        self
    }

    /// `ξ w`.
    pub fn effective_weights(&self) -> &Vector {
        &self.v
    }

    /// Mean and variance of `S` given `H_h` and `b`.
    pub fn scalar_stats(&self, b: &Realization, h: Hypothesis) -> Result<(f64, f64)> {
        let n = self.mom.n();
        if b.len() != n {
            return Err(Error::dim("scalar_stats realization", n, b.len()));
        }
        let mu = &self.mom.mean[h.index()];
        let cov = &self.mom.cov[h.index()];
        let on: Vec<usize> = (0..n).filter(|&i| b.get(i)).collect();
        let mean = on.iter().map(|&i| self.v[i] * mu[i]).sum::<f64>() + self.w_eps;
        let mut var = self.sigma_z2 * self.v.norm_squared();
        for &i in &on {
            let mut row = 0.0;
            for &j in &on {
                row += cov[(i, j)] * self.v[j];
            }
            var += self.v[i] * row;
        }
        Ok((mean, var.max(0.0)))
    }

    /// Realization-adaptive threshold giving `Pf|b = α`.
    pub fn cfar_threshold(&self, b: &Realization, alpha: f64) -> Result<f64> {
        let t = qfunc_inv(alpha)?;
        let (m0, v0) = self.scalar_stats(b, Hypothesis::H0)?;
        Ok(t * v0.sqrt() + m0)
    }

    pub fn conditional_probs(&self, tau: f64, b: &Realization) -> Result<CondProbs> {
        let (m0, v0) = self.scalar_stats(b, Hypothesis::H0)?;
        let (m1, v1) = self.scalar_stats(b, Hypothesis::H1)?;
        let (pf, d0) = tail(tau, m0, v0);
        let (pd, d1) = tail(tau, m1, v1);
        Ok(CondProbs {
            pf,
            pd,
            degenerate: d0 || d1,
        })
    }

    /// Overall `(Pf, Pd)` for a fixed threshold.
    pub fn overall_probs(&self, tau: f64) -> Result<(f64, f64)> {
        let [pf, pd] = mixture_expectation(&self.sched, self.exec, self.sampling, |b| {
            let c = self.conditional_probs(tau, b)?;
            Ok([c.pf, c.pd])
        })?;
        Ok((pf, pd))
    }

    /// Detection probability given `b` with the CFAR threshold at level `α`.
    pub fn pd_alpha_conditional(&self, b: &Realization, alpha: f64, mode: StatMode) -> Result<f64> {
        match mode {
            StatMode::Exact => {
                let tau = self.cfar_threshold(b, alpha)?;
                Ok(self.conditional_probs(tau, b)?.pd)
            }
            StatMode::Approx => np_pieces(&self.w, &self.mom, b, self.sigma_z2)?.pd_alpha(self.sched.probs(), alpha),
        }
    }

    pub fn pd_alpha_overall(&self, alpha: f64, mode: StatMode) -> Result<f64> {
        let [pd] = mixture_expectation(&self.sched, self.exec, self.sampling, |b| {
            Ok([self.pd_alpha_conditional(b, alpha, mode)?])
        })?;
        Ok(pd)
    }

    pub fn deflection(&self, mode: StatMode, variance: DeflectionVariance) -> Result<f64> {
        deflection(
            &self.w,
            &self.comp,
            &self.mom,
            &self.report,
            &self.sched,
            self.sigma_z2,
            mode,
            variance,
        )
    }

    pub fn report(&self, tau: f64, alpha: f64) -> Result<DetectionReport> {
        let (pf, pd) = self.overall_probs(tau)?;
        Ok(DetectionReport {
            pf,
            pd,
            pd_alpha: self.pd_alpha_overall(alpha, StatMode::Exact)?,
            deflection: self.deflection(StatMode::Exact, DeflectionVariance::H0)?,
        })
    }

    fn require_enumerable(&self) -> Result<()> {
        let n = self.mom.n();
        if n > ENUMERATION_CAP {
            return Err(Error::TooLarge {
                n,
                cap: ENUMERATION_CAP,
            });
        }
        Ok(())
    }

    /// `ln f(û | H_h)` of the Gaussian mixture over realizations.
    pub fn mixture_log_pdf(&self, u_hat: &[f64], h: Hypothesis) -> Result<f64> {
        self.require_enumerable()?;
        let k = self.mom.nodes;
        if u_hat.len() != k {
            return Err(Error::dim("mixture_log_pdf", k, u_hat.len()));
        }
        let x = Vector::from_column_slice(u_hat);
        let mut terms = Vec::new();
        for b in Realization::enumerate(self.mom.n()) {
            let mass = self.sched.realization_mass(&b)?;
            if mass == 0.0 {
                continue;
            }
            let st = compensator::conditional_stats(&self.comp, &self.mom, &b, h, self.sigma_z2)?;
            terms.push(mass.ln() + gaussian_log_pdf(&x, &st.mean, &st.cov)?);
        }
        Ok(log_sum_exp(&terms))
    }

    pub fn mixture_pdf(&self, u_hat: &[f64], h: Hypothesis) -> Result<f64> {
        Ok(self.mixture_log_pdf(u_hat, h)?.exp())
    }

    /// `ln Λ(û) = ln f(û|H1) - ln f(û|H0)`.
    pub fn log_lrt(&self, u_hat: &[f64]) -> Result<f64> {
        Ok(self.mixture_log_pdf(u_hat, Hypothesis::H1)? - self.mixture_log_pdf(u_hat, Hypothesis::H0)?)
    }
}

/// LRT decision `Λ > τ_Λ`, given as a log-domain threshold.
pub fn lrt_decision(log_lambda: f64, log_tau: f64) -> bool {
    log_lambda > log_tau
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn gaussian_log_pdf(x: &Vector, mean: &Vector, cov: &Mat) -> Result<f64> {
    let k = x.len();
    let chol = match cov.clone().cholesky() {
        Some(c) => c,
        None => {
            let ridge = 1e-9 * (cov.trace() / k as f64).max(1e-300);
            log::warn!("singular mixture component covariance; adding ridge {ridge:e}");
            let mut c = cov.clone();
            for i in 0..k {
                c[(i, i)] += ridge;
            }
            c.cholesky()
                .ok_or_else(|| Error::Singular("mixture component covariance".into()))?
        }
    };
    let d = x - mean;
    let z = chol
        .l()
        .solve_lower_triangular(&d)
        .ok_or_else(|| Error::Singular("cholesky solve".into()))?;
    let logdet: f64 = chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * (z.norm_squared() + logdet + k as f64 * (2.0 * std::f64::consts::PI).ln()))
}
