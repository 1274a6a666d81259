//! Configuration types, the flat `(node, lag)` index map and Bernoulli schedules.
//!
//! Public index arguments are 1-based: node `k ∈ 1..=K`, lag `l ∈ 0..=L`, flat
//! index `i ∈ 1..=n` with `n = K(L+1)`. Inside the crate vectors are 0-based
//! with position `(k-1)(L+1) + l`, so node blocks are contiguous and lag 0
//! (the current slot) comes first in each block.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Network-level parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Number of sensing nodes `K`.
    pub nodes: usize,
    /// Energy-detector samples per decision `N`.
    pub samples: usize,
    /// Compensator memory depth `L`.
    pub memory: usize,
    /// Reporting-channel noise variance.
    pub sigma_z2: f64,
    /// `Pr{H1}`.
    pub prior_h1: f64,
    /// Target false-alarm probability.
    pub alpha: f64,
    /// Power-efficiency level: the expected report budget is `(1 - eta) n`.
    pub eta: f64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 {
            return Err(Error::Config("node count must be positive".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples per decision must be positive".into()));
        }
        if !(self.sigma_z2 > 0.0 && self.sigma_z2.is_finite()) {
            return Err(Error::Config(format!("sigma_z2 must be > 0, got {}", self.sigma_z2)));
        }
        if !(self.prior_h1 > 0.0 && self.prior_h1 < 1.0) {
            return Err(Error::Config(format!(
                "prior_h1 must lie in (0,1), got {}",
                self.prior_h1
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must lie in [0,1], got {}", self.eta)));
        }
        Ok(())
    }

    /// Stacked window length `n = K(L+1)`.
    pub fn n(&self) -> usize {
        self.nodes * (self.memory + 1)
    }

    pub fn index_map(&self) -> IndexMap {
        IndexMap {
            nodes: self.nodes,
            memory: self.memory,
        }
    }

    /// Upper bound `(1 - eta) n` on `1ᵀp`.
    pub fn budget(&self) -> f64 {
        (1.0 - self.eta) * self.n() as f64
    }
}

/// Binary hypothesis: PU absent (`H0`) or present (`H1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

impl Hypothesis {
    pub const BOTH: [Hypothesis; 2] = [Hypothesis::H0, Hypothesis::H1];

    pub fn index(self) -> usize {
        match self {
            Hypothesis::H0 => 0,
            Hypothesis::H1 => 1,
        }
    }

    pub fn signal_present(self) -> bool {
        self == Hypothesis::H1
    }
}

/// Listening channel and receiver noise of one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeChannel {
    /// `E[g_k]`, mean channel power gain.
    pub gain_mean: f64,
    /// `Var[g_k]`; zero for fixed-gain runs.
    pub gain_var: f64,
    /// Receiver noise power `σ_ν²`.
    pub noise_var: f64,
}

impl NodeChannel {
    /// Fixed gain chosen so that `g σ_s² / σ_ν² = 10^(snr_db/10)`.
    pub fn fixed_snr(snr_db: f64, signal_power: f64, noise_var: f64) -> Self {
        NodeChannel {
            gain_mean: 10f64.powf(snr_db / 10.0) * noise_var / signal_power,
            gain_var: 0.0,
            noise_var,
        }
    }

    /// Rayleigh fading: exponential power gain with the given mean.
    pub fn rayleigh_snr(snr_db: f64, signal_power: f64, noise_var: f64) -> Self {
        let mut ch = Self::fixed_snr(snr_db, signal_power, noise_var);
        ch.gain_var = ch.gain_mean * ch.gain_mean;
        ch
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain_mean >= 0.0 && self.gain_var >= 0.0 && self.noise_var > 0.0) {
            return Err(Error::Config(format!("invalid channel {self:?}")));
        }
        Ok(())
    }

    /// `E[g²]`.
    pub fn gain_second_moment(&self) -> f64 {
        self.gain_mean * self.gain_mean + self.gain_var
    }
}

/// Zero-mean circularly-symmetric Gaussian PU signal shaped by a moving-average filter.
///
/// With unit-energy taps `c`, the complex correlation is `ρ_s(τ) = Σ_j c_j c_{j+|τ|}`
/// and `R_{|s|²}(τ) = σ_s⁴ (1 + ρ_s(τ)²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PuSignalModel {
    /// `E[|s|²]`.
    pub power: f64,
    /// Moving-average taps, normalized to unit energy.
    pub taps: Vec<f64>,
    /// Correlation `c ∈ [0,1]` between the waveforms seen by different nodes:
    /// `s_k = √c s_0 + √(1-c) e_k`. One means a common waveform, zero makes
    /// local statistics independent. Noise-free energies of two nodes then
    /// correlate with coefficient `c²`.
    pub spatial: f64,
}

impl PuSignalModel {
    /// White signal (single tap).
    pub fn white(power: f64) -> Self {
        PuSignalModel {
            power,
            taps: vec![1.0],
            spatial: 1.0,
        }
    }

    /// Geometric taps `β^j`, `j < 3N`, with `β` found by bisection so that the
    /// correlation between consecutive noise-free energy blocks equals `rho`,
    /// and spatial correlation `√rho` so that same-block energies of two
    /// nodes also correlate with `rho`.
    pub fn calibrated(power: f64, rho: f64, samples: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Config(format!("correlation must lie in [0,1), got {rho}")));
        }
        let window = 3 * samples.max(1);
        let build = |beta: f64| {
            let mut taps: Vec<f64> = (0..window).map(|j| beta.powi(j as i32)).collect();
            let norm = taps.iter().map(|c| c * c).sum::<f64>().sqrt();
            taps.iter_mut().for_each(|c| *c /= norm);
            PuSignalModel {
                power,
                taps,
                spatial: rho.sqrt(),
            }
        };
        if rho == 0.0 {
            return Ok(Self::white(power).with_spatial(0.0));
        }
        let top = build(1.0).block_lag_correlation(samples);
        if rho > top {
            return Err(Error::Config(format!(
                "correlation {rho} exceeds the reachable maximum {top:.4} for N = {samples}"
            )));
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if build(mid).block_lag_correlation(samples) < rho {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        Ok(build(0.5 * (lo + hi)))
    }

    pub fn with_spatial(mut self, spatial: f64) -> Self {
        self.spatial = spatial;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() || !(self.power >= 0.0) || !(0.0..=1.0).contains(&self.spatial) {
            return Err(Error::Config(format!(
                "invalid signal model: power {}, {} taps, spatial {}",
                self.power,
                self.taps.len(),
                self.spatial
            )));
        }
        Ok(())
    }

    pub fn ma_window(&self) -> usize {
        self.taps.len()
    }

    /// Normalized complex autocorrelation `ρ_s(τ)`.
    pub fn rho(&self, tau: i64) -> f64 {
        let t = tau.unsigned_abs() as usize;
        if t >= self.taps.len() {
            return 0.0;
        }
        self.taps[..self.taps.len() - t]
            .iter()
            .zip(&self.taps[t..])
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `R_{|s|²}(τ) = E[|s(m)|² |s(m-τ)|²]`.
    pub fn sq_autocorr(&self, tau: i64) -> f64 {
        let r = self.rho(tau);
        self.power * self.power * (1.0 + r * r)
    }

    /// Correlation coefficient between the signal energies of two consecutive
    /// `N`-sample blocks.
    pub fn block_lag_correlation(&self, samples: usize) -> f64 {
        let n = samples as i64;
        let weighted = |offset: i64| -> f64 {
            (-(n - 1)..n)
                .map(|d| {
                    let r = self.rho(offset + d);
                    (n - d.abs()) as f64 * r * r
                })
                .sum()
        };
        weighted(n) / weighted(0)
    }
}

/// Bijection between `(node, lag)` and flat window positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexMap {
    pub nodes: usize,
    pub memory: usize,
}

impl IndexMap {
    pub fn n(&self) -> usize {
        self.nodes * (self.memory + 1)
    }

    /// 1-based flat index of node `k` (1-based) at lag `l`.
    pub fn flat_index(&self, k: usize, l: usize) -> Result<usize> {
        if k == 0 || k > self.nodes || l > self.memory {
            return Err(Error::Range(format!(
                "(k={k}, l={l}) with K={}, L={}",
                self.nodes, self.memory
            )));
        }
        Ok((k - 1) * (self.memory + 1) + l + 1)
    }

    /// Inverse of [`flat_index`](Self::flat_index): `k = ⌈i/(L+1)⌉`, `l = (i+L) mod (L+1)`.
    pub fn unflatten(&self, i: usize) -> Result<(usize, usize)> {
        if i == 0 || i > self.n() {
            return Err(Error::Range(format!("flat index {i} outside 1..={}", self.n())));
        }
        let w = self.memory + 1;
        Ok((i.div_ceil(w), (i + self.memory) % w))
    }

    /// 0-based position of 0-based node `k` at lag `l`.
    #[inline]
    pub fn pos(&self, k: usize, l: usize) -> usize {
        k * (self.memory + 1) + l
    }

    /// 0-based `(node, lag)` of a 0-based position.
    #[inline]
    pub fn node_lag(&self, pos: usize) -> (usize, usize) {
        (pos / (self.memory + 1), pos % (self.memory + 1))
    }
}

/// Per-position Bernoulli probabilities `p_i = Pr{θ_i = 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliSchedule {
    p: Vec<f64>,
}

impl BernoulliSchedule {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range(format!("p[{i}] = {v} outside [0,1]")));
        }
        Ok(BernoulliSchedule { p })
    }

    pub fn uniform(n: usize, p0: f64) -> Result<Self> {
        Self::new(vec![p0; n])
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    /// `1ᵀp ≤ (1 - eta) n` (with a small absolute slack).
    pub fn is_budget_feasible(&self, eta: f64) -> bool {
        self.total() <= (1.0 - eta) * self.len() as f64 + 1e-9
    }

    /// `Pr{θ = b} = Π p_i^{b_i} (1 - p_i)^{1 - b_i}`, in log space for `n > 30`.
    pub fn realization_mass(&self, b: &Realization) -> Result<f64> {
        if b.len() != self.len() {
            return Err(Error::dim("realization_mass", self.len(), b.len()));
        }
        let factors = self
            .p
            .iter()
            .zip(b.bits())
            .map(|(&p, &bit)| if bit { p } else { 1.0 - p });
        if self.len() > 30 {
            let mut log = 0.0;
            for f in factors {
                if f == 0.0 {
                    return Ok(0.0);
                }
                log += f.ln();
            }
            Ok(log.exp())
        } else {
            Ok(factors.product())
        }
    }

    /// `c_θ(i, j) = δ_ij p_i (1 - p_i)` for 0-based positions.
    pub fn theta_cov(&self, i: usize, j: usize) -> Result<f64> {
        self.check(i)?;
        self.check(j)?;
        Ok(if i == j { self.p[i] * (1.0 - self.p[i]) } else { 0.0 })
    }

    /// `ω_θ(i, j) = p_i p_j + δ_ij p_i (1 - p_i)` for 0-based positions.
    pub fn theta_autocorr(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.p[i] * self.p[j] + self.theta_cov(i, j)?)
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::Range(format!("position {i} outside 0..{}", self.len())));
        }
        Ok(())
    }
}

/// A draw `b` of the gating vector θ.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Realization {
    bits: Vec<bool>,
}

impl Realization {
    pub fn new(bits: Vec<bool>) -> Self {
        Realization { bits }
    }

    pub fn all(n: usize, value: bool) -> Self {
        Realization { bits: vec![value; n] }
    }

    /// Bit `i` of `mask` becomes position `i`.
    pub fn from_mask(n: usize, mask: u64) -> Self {
        Realization {
            bits: (0..n).map(|i| mask >> i & 1 == 1).collect(),
        }
    }

    pub fn mask(&self) -> u64 {
        self.bits
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &b)| acc | ((b as u64) << i))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// All `2^n` realizations in mask order.
    pub fn enumerate(n: usize) -> impl Iterator<Item = Realization> {
        assert!(n < 64, "cannot enumerate 2^{n} realizations");
        (0..1u64 << n).map(move |m| Realization::from_mask(n, m))
    }
}
