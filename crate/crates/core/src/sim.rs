//! Seeded Monte Carlo engine for the sensing and reporting chain.
//!
//! Every random quantity of trial `t` comes from a ChaCha8 generator keyed by
//! `(seed, role)` and positioned on stream `t`, so results do not depend on
//! how trials are split across threads.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::compensator::StatMode;
use crate::detection::{qfunc_inv, Detector};
use crate::linalg::{self, Mat, Vector};
use crate::model::{Hypothesis, NetworkConfig, NodeChannel, PuSignalModel, Realization};
use crate::moments::{build_moments, MomentOptions, MomentSet};
use crate::par::{self, Execution};
use crate::{Error, Result};

/// How local energies are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// Complex baseband samples through an energy detector.
    #[default]
    Physical,
    /// Jointly Gaussian energies with the analytic first and second moments.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Hypothesis = 1,
    Signal = 2,
    Gain = 3,
    Noise = 4,
    Gate = 5,
    Report = 6,
}

fn stream(seed: u64, role: Role, trial: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8] = role as u8;
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(trial);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Channel and signal description used to draw local energies.
#[derive(Debug, Clone)]
pub struct SimModel {
    pub cfg: NetworkConfig,
    pub channels: Vec<NodeChannel>,
    pub signal: PuSignalModel,
    pub mode: SampleMode,
    /// Per hypothesis: mean and a square-root factor of the covariance.
    gaussian: Option<[(Vector, Mat); 2]>,
}

impl SimModel {
    pub fn new(
        cfg: &NetworkConfig,
        channels: &[NodeChannel],
        signal: &PuSignalModel,
        mode: SampleMode,
    ) -> Result<Self> {
        cfg.validate()?;
        if channels.len() != cfg.nodes {
            return Err(Error::dim("SimModel channels", cfg.nodes, channels.len()));
        }
        for ch in channels {
            ch.validate()?;
        }
        signal.validate()?;
        let gaussian = match mode {
            SampleMode::Physical => None,
            SampleMode::Gaussian => {
                let mom = build_moments(cfg, channels, signal, MomentOptions::default())?;
                let factor = |c: &Mat| {
                    let e = linalg::symmetrize(c).symmetric_eigen();
                    let s = e.eigenvalues.map(|l| l.max(0.0).sqrt());
                    &e.eigenvectors * Mat::from_diagonal(&s)
                };
                Some([
                    (mom.mean[0].clone(), factor(&mom.cov[0])),
                    (mom.mean[1].clone(), factor(&mom.cov[1])),
                ])
            }
        };
        Ok(SimModel {
            cfg: cfg.clone(),
            channels: channels.to_vec(),
            signal: signal.clone(),
            mode,
            gaussian,
        })
    }

    /// Local energies over the window for one trial, in window order
    /// (node-major, lag 0 first).
    pub fn local_window(&self, h: Hypothesis, seed: u64, trial: u64) -> Vec<f64> {
        match &self.gaussian {
            Some(g) => {
                let (mean, f) = &g[h.index()];
                let mut rng = stream(seed, Role::Signal, trial);
                let z = Vector::from_iterator(mean.len(), (0..mean.len()).map(|_| normal(&mut rng)));
                (mean + f * z).iter().copied().collect()
            }
            None => self.physical_window(h, seed, trial),
        }
    }

    fn physical_window(&self, h: Hypothesis, seed: u64, trial: u64) -> Vec<f64> {
        let k_nodes = self.cfg.nodes;
        let n_samp = self.cfg.samples;
        let lags = self.cfg.memory + 1;
        let span = lags * n_samp;
        let mut out = vec![0.0; k_nodes * lags];

        let mut sig_rng = stream(seed, Role::Signal, trial);
        let mut gain_rng = stream(seed, Role::Gain, trial);
        let mut noise_rng = stream(seed, Role::Noise, trial);

        let taps = &self.signal.taps;
        let amp = self.signal.power.sqrt();
        let draw_signal = |rng: &mut ChaCha8Rng| -> Vec<(f64, f64)> {
            let hist = span + taps.len() - 1;
            let w: Vec<(f64, f64)> = (0..hist)
                .map(|_| (normal(rng) * FRAC_1_SQRT_2, normal(rng) * FRAC_1_SQRT_2))
                .collect();
            (0..span)
                .map(|t| {
                    let top = t + taps.len() - 1;
                    let (mut re, mut im) = (0.0, 0.0);
                    for (j, c) in taps.iter().enumerate() {
                        re += c * w[top - j].0;
                        im += c * w[top - j].1;
                    }
                    (amp * re, amp * im)
                })
                .collect()
        };
        let signal_present = h.signal_present() && self.signal.power > 0.0;
        let c = self.signal.spatial;
        let common = if signal_present && c > 0.0 {
            Some(draw_signal(&mut sig_rng))
        } else {
            None
        };

        for (k, ch) in self.channels.iter().enumerate() {
            let gain = if ch.gain_var > 0.0 && ch.gain_mean > 0.0 {
                let shape = ch.gain_mean * ch.gain_mean / ch.gain_var;
                let scale = ch.gain_var / ch.gain_mean;
                Gamma::new(shape, scale)
                    .map(|d| d.sample(&mut gain_rng))
                    .unwrap_or(ch.gain_mean)
            } else {
                ch.gain_mean
            };
            let s: Option<Vec<(f64, f64)>> = if !signal_present {
                None
            } else if c >= 1.0 {
                common.clone()
            } else {
                let own = draw_signal(&mut sig_rng);
                let (a, b) = (c.sqrt(), (1.0 - c).sqrt());
                Some(match &common {
                    Some(s0) => s0
                        .iter()
                        .zip(&own)
                        .map(|(x, e)| (a * x.0 + b * e.0, a * x.1 + b * e.1))
                        .collect(),
                    None => own,
                })
            };
            let hg = gain.sqrt();
            let sn = (ch.noise_var / 2.0).sqrt();
            for t in 0..span {
                let (mut re, mut im) = (sn * normal(&mut noise_rng), sn * normal(&mut noise_rng));
                if let Some(s) = &s {
                    re += hg * s[t].0;
                    im += hg * s[t].1;
                }
                // Oldest block first in time; it carries the largest lag.
                let lag = lags - 1 - t / n_samp;
                out[k * lags + lag] += re * re + im * im;
            }
        }
        out
    }
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Which hypothesis each trial runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypothesisDraw {
    Fixed(Hypothesis),
    /// Drawn per trial with the configured prior.
    Prior,
}

/// Decision rule applied to the fused statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    /// Realization-adaptive threshold holding `Pf|b = α`.
    Cfar(f64),
    /// Minimum error probability under the Gaussian law of `S | b` and the
    /// configured prior.
    MinError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub hypothesis: Hypothesis,
    pub u: Vec<f64>,
    pub theta: Realization,
    pub y: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub s: f64,
    pub decision: bool,
}

/// Compact per-trial result kept for every batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub hypothesis: Hypothesis,
    pub theta: Realization,
    pub s: f64,
    pub decision: bool,
}

#[derive(Debug, Clone)]
pub struct TrialBatch {
    pub seed: u64,
    pub trials: usize,
    pub draw: HypothesisDraw,
    pub outcomes: Vec<Outcome>,
    pub records: Option<Vec<TrialRecord>>,
}

/// Alarm counts split by the true hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Rates {
    pub h0_trials: u64,
    pub false_alarms: u64,
    pub h1_trials: u64,
    pub detections: u64,
}

impl Rates {
    pub fn pf(&self) -> f64 {
        ratio(self.false_alarms, self.h0_trials)
    }

    pub fn pd(&self) -> f64 {
        ratio(self.detections, self.h1_trials)
    }

    pub fn pf_ci(&self, confidence: f64) -> Result<(f64, f64)> {
        binomial_ci(self.false_alarms, self.h0_trials, confidence)
    }

    pub fn pd_ci(&self, confidence: f64) -> Result<(f64, f64)> {
        binomial_ci(self.detections, self.h1_trials, confidence)
    }

    pub fn pmd(&self) -> f64 {
        ratio(self.h1_trials - self.detections, self.h1_trials)
    }

    pub fn pmd_ci(&self, confidence: f64) -> Result<(f64, f64)> {
        binomial_ci(self.h1_trials - self.detections, self.h1_trials, confidence)
    }

    pub fn merge(&self, other: &Rates) -> Rates {
        Rates {
            h0_trials: self.h0_trials + other.h0_trials,
            false_alarms: self.false_alarms + other.false_alarms,
            h1_trials: self.h1_trials + other.h1_trials,
            detections: self.detections + other.detections,
        }
    }
}

fn ratio(k: u64, n: u64) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        k as f64 / n as f64
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn binomial_ci(k: u64, n: u64, confidence: f64) -> Result<(f64, f64)> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Range(format!("confidence {confidence} outside (0,1)")));
    }
    if n == 0 || k > n {
        return Err(Error::Range(format!("{k} successes in {n} trials")));
    }
    let z = qfunc_inv((1.0 - confidence) / 2.0)?;
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    Ok(((centre - half).max(0.0), (centre + half).min(1.0)))
}

/// `Pr{H0} Pf + Pr{H1} (1 − Pd)`.
pub fn error_probability(pf: f64, pd: f64, prior_h1: f64) -> f64 {
    (1.0 - prior_h1) * pf + prior_h1 * (1.0 - pd)
}

/// Error probability from the rates of an H0 batch and an H1 batch.
pub fn batch_error_probability(h0: &Rates, h1: &Rates, prior_h1: f64) -> f64 {
    error_probability(h0.pf(), h1.pd(), prior_h1)
}

/// Per-realization decision rule with cached Gaussian statistics of `S`.
struct Decider<'a> {
    det: &'a Detector,
    rule: Threshold,
    prior_h1: f64,
    q_alpha: f64,
    cache: HashMap<Realization, [f64; 4]>,
}

impl<'a> Decider<'a> {
    fn new(det: &'a Detector, rule: Threshold, prior_h1: f64) -> Result<Self> {
        let q_alpha = match rule {
            Threshold::Cfar(a) => qfunc_inv(a)?,
            _ => 0.0,
        };
        Ok(Decider {
            det,
            rule,
            prior_h1,
            q_alpha,
            cache: HashMap::new(),
        })
    }

    fn stats(&mut self, b: &Realization) -> Result<[f64; 4]> {
        if let Some(s) = self.cache.get(b) {
            return Ok(*s);
        }
        let (m0, v0) = self.det.scalar_stats(b, Hypothesis::H0)?;
        let (m1, v1) = self.det.scalar_stats(b, Hypothesis::H1)?;
        let s = [m0, v0, m1, v1];
        self.cache.insert(b.clone(), s);
        Ok(s)
    }

    fn decide(&mut self, b: &Realization, s: f64) -> Result<bool> {
        match self.rule {
            Threshold::Fixed(t) => Ok(s > t),
            Threshold::Cfar(_) => {
                let [m0, v0, ..] = self.stats(b)?;
                Ok(s > self.q_alpha * v0.sqrt() + m0)
            }
            Threshold::MinError => {
                let [m0, v0, m1, v1] = self.stats(b)?;
                if !(v0 > 0.0 && v1 > 0.0) {
                    return Ok((s - m1).abs() < (s - m0).abs());
                }
                let log_odds =
                    (self.prior_h1 / (1.0 - self.prior_h1)).ln() - 0.5 * (v1 / v0).ln() - (s - m1).powi(2) / (2.0 * v1)
                        + (s - m0).powi(2) / (2.0 * v0);
                Ok(log_odds > 0.0)
            }
        }
    }
}

const TRIAL_CHUNK: usize = 1024;

/// Run `trials` independent windows through gating, reporting noise, the
/// compensator and linear fusion.
#[allow(clippy::too_many_arguments)]
pub fn run_batch(
    model: &SimModel,
    det: &Detector,
    draw: HypothesisDraw,
    threshold: Threshold,
    trials: usize,
    seed: u64,
    exec: Execution,
    keep_records: bool,
) -> Result<TrialBatch> {
    let n = model.cfg.n();
    if det.sched.len() != n || det.comp.window_len() != n {
        return Err(Error::dim("run_batch schedule", n, det.sched.len()));
    }
    let sz = model.cfg.sigma_z2.sqrt();
    let prior = model.cfg.prior_h1;
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    type Part = (Vec<Outcome>, Vec<TrialRecord>);
    let parts = par::map_indices(exec, chunks, |c| -> Result<Part> {
        let mut decider = Decider::new(det, threshold, prior)?;
        let mut outs = Vec::new();
        let mut recs = Vec::new();
        for t in c * TRIAL_CHUNK..((c + 1) * TRIAL_CHUNK).min(trials) {
            let t = t as u64;
            let h = match draw {
                HypothesisDraw::Fixed(h) => h,
                HypothesisDraw::Prior => {
                    if stream(seed, Role::Hypothesis, t).random::<f64>() < prior {
                        Hypothesis::H1
                    } else {
                        Hypothesis::H0
                    }
                }
            };
            let u = model.local_window(h, seed, t);
            let mut gate = stream(seed, Role::Gate, t);
            let bits: Vec<bool> = det.sched.probs().iter().map(|&p| gate.random::<f64>() < p).collect();
            let mut rep = stream(seed, Role::Report, t);
            let y: Vec<f64> = u
                .iter()
                .zip(&bits)
                .map(|(&x, &on)| if on { x } else { 0.0 } + sz * normal(&mut rep))
                .collect();
            let u_hat = det.comp.apply(&y)?;
            let s = det.w.dot(&u_hat);
            let theta = Realization::new(bits);
            let decision = decider.decide(&theta, s)?;
            if keep_records {
                recs.push(TrialRecord {
                    hypothesis: h,
                    u,
                    theta: theta.clone(),
                    y,
                    u_hat: u_hat.iter().copied().collect(),
                    s,
                    decision,
                });
            }
            outs.push(Outcome {
                hypothesis: h,
                theta,
                s,
                decision,
            });
        }
        Ok((outs, recs))
    });
    let mut outcomes = Vec::with_capacity(trials);
    let mut records = Vec::new();
    for p in parts {
        let (o, r) = p?;
        outcomes.extend(o);
        records.extend(r);
    }
    Ok(TrialBatch {
        seed,
        trials,
        draw,
        outcomes,
        records: keep_records.then_some(records),
    })
}

impl TrialBatch {
    pub fn rates(&self) -> Rates {
        let mut r = Rates::default();
        for o in &self.outcomes {
            match o.hypothesis {
                Hypothesis::H0 => {
                    r.h0_trials += 1;
                    r.false_alarms += o.decision as u64;
                }
                Hypothesis::H1 => {
                    r.h1_trials += 1;
                    r.detections += o.decision as u64;
                }
            }
        }
        r
    }

    /// Rates under a different decision rule, reusing the simulated statistics.
    pub fn rates_with(&self, det: &Detector, threshold: Threshold, prior_h1: f64) -> Result<Rates> {
        let mut decider = Decider::new(det, threshold, prior_h1)?;
        let mut r = Rates::default();
        for o in &self.outcomes {
            let d = decider.decide(&o.theta, o.s)? as u64;
            match o.hypothesis {
                Hypothesis::H0 => {
                    r.h0_trials += 1;
                    r.false_alarms += d;
                }
                Hypothesis::H1 => {
                    r.h1_trials += 1;
                    r.detections += d;
                }
            }
        }
        Ok(r)
    }
}

/// One point of an empirical complementary ROC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrocPoint {
    pub alpha: f64,
    pub pf: f64,
    pub pf_ci: (f64, f64),
    pub pmd: f64,
    pub pmd_ci: (f64, f64),
    pub pmd_analytic: f64,
}

/// Confidence level of the intervals attached to CROC points.
pub const CROC_CONFIDENCE: f64 = 0.99;

/// Empirical `(Pf, Pmd)` with CFAR thresholds at each `α`, from one H0 and
/// one H1 batch of `trials` windows each.
pub fn empirical_croc(
    model: &SimModel,
    det: &Detector,
    alphas: &[f64],
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<CrocPoint>> {
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::Range(format!("alpha {a} outside (0,1)")));
    }
    let first = Threshold::Cfar(*alphas.first().ok_or_else(|| Error::Config("empty alpha grid".into()))?);
    let h0 = run_batch(
        model,
        det,
        HypothesisDraw::Fixed(Hypothesis::H0),
        first,
        trials,
        seed,
        exec,
        false,
    )?;
    let h1 = run_batch(
        model,
        det,
        HypothesisDraw::Fixed(Hypothesis::H1),
        first,
        trials,
        seed,
        exec,
        false,
    )?;
    let prior = model.cfg.prior_h1;
    alphas
        .iter()
        .map(|&alpha| {
            let r = h0.rates_with(det, Threshold::Cfar(alpha), prior)?.merge(&h1.rates_with(
                det,
                Threshold::Cfar(alpha),
                prior,
            )?);
            Ok(CrocPoint {
                alpha,
                pf: r.pf(),
                pf_ci: r.pf_ci(CROC_CONFIDENCE)?,
                pmd: r.pmd(),
                pmd_ci: r.pmd_ci(CROC_CONFIDENCE)?,
                pmd_analytic: 1.0 - det.pd_alpha_overall(alpha, StatMode::Exact)?,
            })
        })
        .collect()
}

/// Multiplicative Gaussian error on every estimated channel statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsiPerturbation {
    /// Variance of the relative error `e` in `s ↦ s (1 + e)`.
    pub normalized_var: f64,
    /// Leave off-diagonal covariance entries untouched.
    #[serde(default)]
    pub diagonal_only: bool,
}

/// Perturbed copy of `mom`: means and covariance entries scaled by
/// `1 + e`, `e ~ N(0, var)`, then covariances projected back onto the PSD cone.
pub fn perturb_csi(mom: &MomentSet, pert: &CsiPerturbation, seed: u64) -> Result<MomentSet> {
    if !(pert.normalized_var >= 0.0) {
        return Err(Error::Range(format!("normalized variance {} < 0", pert.normalized_var)));
    }
    if pert.normalized_var == 0.0 {
        return Ok(mom.clone());
    }
    let sd = pert.normalized_var.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factor = || 1.0 + sd * normal(&mut rng);
    let n = mom.n();
    let mut mean = mom.mean.clone();
    let mut cov = mom.cov.clone();
    for h in 0..2 {
        for i in 0..n {
            mean[h][i] *= factor();
        }
        for i in 0..n {
            for j in i..n {
                if pert.diagonal_only && i != j {
                    continue;
                }
                let f = factor();
                cov[h][(i, j)] *= f;
                cov[h][(j, i)] = cov[h][(i, j)];
            }
        }
        cov[h] = linalg::psd_project(&cov[h]);
    }
    MomentSet::from_parts(mom.nodes, mom.memory, mom.prior_h1, mom.mixing, mean, cov)
}

/// Smallest SNR in `[lo, hi]` (dB) at which `pd_at` reaches `target_pd`,
/// by bisection. `pd_at` must be nondecreasing on the bracket.
pub fn required_snr<F>(mut pd_at: F, target_pd: f64, lo: f64, hi: f64, tol_db: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo < hi) {
        return Err(Error::Bracket(format!("empty SNR bracket [{lo}, {hi}]")));
    }
    let (f_lo, f_hi) = (pd_at(lo)?, pd_at(hi)?);
    if f_lo >= target_pd {
        return Err(Error::Bracket(format!(
            "Pd({lo} dB) = {f_lo:.4} already meets {target_pd}"
        )));
    }
    if f_hi < target_pd {
        return Err(Error::Bracket(format!("Pd({hi} dB) = {f_hi:.4} below {target_pd}")));
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol_db {
        let m = 0.5 * (a + b);
        if pd_at(m)? >= target_pd {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Extra SNR (dB) method `a` needs over method `b` to reach `Pmd = target_pmd`.
pub fn snr_loss<A, B>(method_a: A, method_b: B, target_pmd: f64, bracket: (f64, f64), tol_db: f64) -> Result<f64>
where
    A: FnMut(f64) -> Result<f64>,
    B: FnMut(f64) -> Result<f64>,
{
    let target = 1.0 - target_pmd;
    let a = required_snr(method_a, target, bracket.0, bracket.1, tol_db)?;
    let b = required_snr(method_b, target, bracket.0, bracket.1, tol_db)?;
    Ok(a - b)
}
