//! First- and second-order statistics of the stacked local energy statistics
//! `u_L` and of the gated, noisy report window `y_L = Θ u_L + z_L`.

use serde::{Deserialize, Serialize};

use crate::linalg::{self, Mat, Vector};
use crate::model::{BernoulliSchedule, Hypothesis, NetworkConfig, NodeChannel, PuSignalModel};
use crate::{Error, Result};

/// How unconditional covariances are formed from the conditional ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMixing {
    /// `C = Pr{H0} C_0 + Pr{H1} C_1`.
    #[default]
    Literal,
    /// Law of total covariance: adds `Pr{H0} Pr{H1} Δμ Δμᵀ`.
    TotalCovariance,
}

/// Which closed form is used for `E[u_k u_n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FourthMomentForm {
    /// Includes the signal-noise cross term `2 E[g_k] E|s|² σ_ν²` that appears when
    /// both factors are the same sample of the same node.
    #[default]
    Complete,
    /// Omits that cross term.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MomentOptions {
    pub mixing: CovarianceMixing,
    pub form: FourthMomentForm,
}

/// `E[u_k | H_h] = N (E[g_k] E|s|² [h = 1] + σ_ν²)`.
pub fn local_mean(ch: &NodeChannel, sig: &PuSignalModel, samples: usize, h: Hypothesis) -> f64 {
    let signal = if h.signal_present() {
        ch.gain_mean * sig.power
    } else {
        0.0
    };
    samples as f64 * (signal + ch.noise_var)
}

/// `E[u_k(m-l) u_n(m-r) | H_h]` for 1-based nodes `k`, `n` and lags `l`, `r`.
///
/// The double sum over sample offsets is collapsed by lag `d = i' - j'`, which
/// occurs `N - |d|` times. Gains are held fixed over the whole window, so
/// `E[g_k g_k] = E[g_k]² + Var[g_k]` at every lag pair.
#[allow(clippy::too_many_arguments)]
pub fn local_autocorr(
    k: usize,
    n: usize,
    l: usize,
    r: usize,
    channels: &[NodeChannel],
    sig: &PuSignalModel,
    samples: usize,
    h: Hypothesis,
    form: FourthMomentForm,
) -> Result<f64> {
    if k == 0 || n == 0 || k > channels.len() || n > channels.len() {
        return Err(Error::Range(format!("nodes ({k}, {n}) outside 1..={}", channels.len())));
    }
    Ok(autocorr_entry(k - 1, n - 1, l, r, channels, sig, samples, h, form))
}

#[allow(clippy::too_many_arguments)]
fn autocorr_entry(
    k: usize,
    n: usize,
    l: usize,
    r: usize,
    channels: &[NodeChannel],
    sig: &PuSignalModel,
    samples: usize,
    h: Hypothesis,
    form: FourthMomentForm,
) -> f64 {
    let (ck, cn) = (&channels[k], &channels[n]);
    let big_n = samples as i64;
    let shift = big_n * (l as i64 - r as i64);
    let same_node = k == n;
    let s2 = sig.power;
    let on = h.signal_present();

    let mut total = 0.0;
    for d in -(big_n - 1)..big_n {
        let mult = (big_n - d.abs()) as f64;
        let tau = shift + d;
        let same_sample = same_node && tau == 0;
        let mut term = ck.noise_var * cn.noise_var * if same_sample { 2.0 } else { 1.0 };
        if on {
            term += if same_node {
                ck.gain_second_moment() * sig.sq_autocorr(tau)
            } else {
                let c = sig.spatial * sig.rho(tau);
                ck.gain_mean * cn.gain_mean * s2 * s2 * (1.0 + c * c)
            };
            term += s2 * (cn.noise_var * ck.gain_mean + ck.noise_var * cn.gain_mean);
            if same_sample && form == FourthMomentForm::Complete {
                term += 2.0 * ck.gain_mean * s2 * ck.noise_var;
            }
        }
        total += mult * term;
    }
    total
}

/// Statistics of `u_L` under each hypothesis plus their prior mixtures.
#[derive(Debug, Clone)]
pub struct MomentSet {
    pub nodes: usize,
    pub memory: usize,
    pub prior_h1: f64,
    pub mixing: CovarianceMixing,
    /// `E[u_L | H_h]`, indexed by `Hypothesis::index`.
    pub mean: [Vector; 2],
    /// `C_{u_L | H_h}`.
    pub cov: [Mat; 2],
    /// `R_{u_L | H_h} = C + μ μᵀ`.
    pub autocorr: [Mat; 2],
    pub mean_uncond: Vector,
    pub cov_uncond: Mat,
    /// Main diagonal of the unconditional autocorrelation.
    pub autocorr_diag_uncond: Vector,
}

impl MomentSet {
    /// Assemble from conditional means and covariances.
    pub fn from_parts(
        nodes: usize,
        memory: usize,
        prior_h1: f64,
        mixing: CovarianceMixing,
        mean: [Vector; 2],
        cov: [Mat; 2],
    ) -> Result<Self> {
        let n = nodes * (memory + 1);
        for h in 0..2 {
            if mean[h].len() != n {
                return Err(Error::dim("MomentSet mean", n, mean[h].len()));
            }
            if cov[h].nrows() != n || cov[h].ncols() != n {
                return Err(Error::dim("MomentSet covariance", n, cov[h].nrows()));
            }
        }
        let cov = [linalg::symmetrize(&cov[0]), linalg::symmetrize(&cov[1])];
        for (h, c) in cov.iter().enumerate() {
            if !linalg::is_psd(c, 1e-9) {
                return Err(Error::Numerical(format!(
                    "C_uL|H{h} has eigenvalue {:.3e}",
                    linalg::min_eigenvalue(c)
                )));
            }
        }
        let (p0, p1) = (1.0 - prior_h1, prior_h1);
        let autocorr = [
            &cov[0] + &mean[0] * mean[0].transpose(),
            &cov[1] + &mean[1] * mean[1].transpose(),
        ];
        let mean_uncond = &mean[0] * p0 + &mean[1] * p1;
        let mut cov_uncond = &cov[0] * p0 + &cov[1] * p1;
        if mixing == CovarianceMixing::TotalCovariance {
            let dm = &mean[1] - &mean[0];
            cov_uncond += &dm * dm.transpose() * (p0 * p1);
        }
        let autocorr_diag_uncond = autocorr[0].diagonal() * p0 + autocorr[1].diagonal() * p1;
        Ok(MomentSet {
            nodes,
            memory,
            prior_h1,
            mixing,
            mean,
            cov,
            autocorr,
            mean_uncond,
            cov_uncond,
            autocorr_diag_uncond,
        })
    }

    pub fn n(&self) -> usize {
        self.nodes * (self.memory + 1)
    }

    /// Window positions of the current (lag 0) slot of each node.
    pub fn current_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes).map(move |k| k * (self.memory + 1))
    }

    /// `n × K` cross-covariance between `u_L` and the current `u`.
    /// `None` selects the unconditional version.
    pub fn cross_cov(&self, h: Option<Hypothesis>) -> Mat {
        let src = match h {
            Some(h) => &self.cov[h.index()],
            None => &self.cov_uncond,
        };
        let cols: Vec<usize> = self.current_positions().collect();
        Mat::from_fn(self.n(), self.nodes, |i, c| src[(i, cols[c])])
    }

    /// Mean of the current `u`; `None` selects the unconditional mean.
    pub fn current_mean(&self, h: Option<Hypothesis>) -> Vector {
        let src = match h {
            Some(h) => &self.mean[h.index()],
            None => &self.mean_uncond,
        };
        let cols: Vec<usize> = self.current_positions().collect();
        Vector::from_fn(self.nodes, |c, _| src[cols[c]])
    }

    /// `E[u_L | H1] - E[u_L | H0]`.
    pub fn mean_shift(&self) -> Vector {
        &self.mean[1] - &self.mean[0]
    }

    /// Diagonal of `R_{u_L | H_h}` (the 𝕽 matrix) as a vector.
    pub fn autocorr_diag(&self, h: Option<Hypothesis>) -> Vector {
        match h {
            Some(h) => self.autocorr[h.index()].diagonal(),
            None => self.autocorr_diag_uncond.clone(),
        }
    }

    pub fn cov_of(&self, h: Option<Hypothesis>) -> &Mat {
        match h {
            Some(h) => &self.cov[h.index()],
            None => &self.cov_uncond,
        }
    }
}

/// Compute all statistics of `u_L` from channel and signal statistics.
pub fn build_moments(
    cfg: &NetworkConfig,
    channels: &[NodeChannel],
    sig: &PuSignalModel,
    opts: MomentOptions,
) -> Result<MomentSet> {
    cfg.validate()?;
    if channels.len() != cfg.nodes {
        return Err(Error::dim("build_moments channels", cfg.nodes, channels.len()));
    }
    for ch in channels {
        ch.validate()?;
    }
    sig.validate()?;
    let map = cfg.index_map();
    let n = cfg.n();
    let mut mean = [Vector::zeros(n), Vector::zeros(n)];
    let mut cov = [Mat::zeros(n, n), Mat::zeros(n, n)];
    for h in Hypothesis::BOTH {
        let hi = h.index();
        for i in 0..n {
            let (k, _) = map.node_lag(i);
            mean[hi][i] = local_mean(&channels[k], sig, cfg.samples, h);
        }
        for i in 0..n {
            let (k, l) = map.node_lag(i);
            for j in i..n {
                let (m, r) = map.node_lag(j);
                let raw = autocorr_entry(k, m, l, r, channels, sig, cfg.samples, h, opts.form);
                let c = raw - mean[hi][i] * mean[hi][j];
                cov[hi][(i, j)] = c;
                cov[hi][(j, i)] = c;
            }
        }
    }
    MomentSet::from_parts(cfg.nodes, cfg.memory, cfg.prior_h1, opts.mixing, mean, cov)
}

/// Statistics of the report window `y_L` for a given schedule.
#[derive(Debug, Clone)]
pub struct ReportMoments {
    pub cov: [Mat; 2],
    pub cov_uncond: Mat,
    /// `C_{y_L u} = P̃ C_{u_L u}`.
    pub cross: Mat,
    pub mean: [Vector; 2],
    pub mean_uncond: Vector,
}

/// `P̃(I - P̃)𝕽 + P̃ C P̃ + σ_z² I` for the given 𝕽 diagonal and covariance.
pub fn gated_covariance(p: &[f64], rdiag: &Vector, cov: &Mat, sigma_z2: f64) -> Mat {
    let n = p.len();
    let mut out = Mat::from_fn(n, n, |i, j| p[i] * cov[(i, j)] * p[j]);
    for i in 0..n {
        out[(i, i)] += p[i] * (1.0 - p[i]) * rdiag[i] + sigma_z2;
    }
    out
}

pub fn report_covariance(mom: &MomentSet, sched: &BernoulliSchedule, sigma_z2: f64) -> Result<ReportMoments> {
    let n = mom.n();
    if sched.len() != n {
        return Err(Error::dim("report_covariance schedule", n, sched.len()));
    }
    let p = sched.probs();
    let pv = Vector::from_column_slice(p);
    let cov = [
        gated_covariance(p, &mom.autocorr_diag(Some(Hypothesis::H0)), &mom.cov[0], sigma_z2),
        gated_covariance(p, &mom.autocorr_diag(Some(Hypothesis::H1)), &mom.cov[1], sigma_z2),
    ];
    let cov_uncond = gated_covariance(p, &mom.autocorr_diag_uncond, &mom.cov_uncond, sigma_z2);
    let mut cross = mom.cross_cov(None);
    for (i, mut row) in cross.row_iter_mut().enumerate() {
        row *= p[i];
    }
    Ok(ReportMoments {
        cov,
        cov_uncond,
        cross,
        mean: [mom.mean[0].component_mul(&pv), mom.mean[1].component_mul(&pv)],
        mean_uncond: mom.mean_uncond.component_mul(&pv),
    })
}
