//! Experiment configuration files (TOML).
//!
//! A config names the network, the node list, the PU signal, the schedule and
//! fusion-weight sources and one experiment. Node SNRs are given as
//! `snr_db + shift + spread · Δ`, where sweep experiments supply the shift
//! (their SNR0 axis) and the dispersion `Δ`; for other experiments both are 0.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detection::{equal_weights, optimal_linear_weights, Sampling};
use crate::linalg::Vector;
use crate::model::{NetworkConfig, NodeChannel, PuSignalModel};
use crate::moments::MomentSet;
use crate::optimize::{ScheduleSource, SweepOptions};
use crate::sim::SampleMode;
use crate::{Error, Result};

pub const DEFAULT_TRIALS: usize = 100_000;

/// Realizations drawn when a schedule has more random slots than can be enumerated.
pub const MIXTURE_DRAWS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Monte Carlo trials per point and hypothesis.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Output directory.
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub sample_mode: SampleMode,
    pub network: NetworkSection,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub signal: SignalSpec,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleSource,
    #[serde(default)]
    pub weights: WeightSource,
    #[serde(default)]
    pub sweep: SweepSpec,
    pub experiment: Experiment,
    /// Parameters the figure does not state, with the value chosen here.
    #[serde(default)]
    pub paper_unstated: BTreeMap<String, String>,
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn default_schedule() -> ScheduleSource {
    ScheduleSource::Uniform { p0: 1.0 }
}

/// Everything in [`NetworkConfig`] except the node count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub samples: usize,
    #[serde(default)]
    pub memory: usize,
    pub sigma_z2: f64,
    #[serde(default = "half")]
    pub prior_h1: f64,
    pub alpha: f64,
    #[serde(default)]
    pub eta: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fading {
    #[default]
    Fixed,
    Rayleigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    #[serde(default)]
    pub snr_db: f64,
    /// Multiplier of the dispersion `Δ` in sweep experiments.
    #[serde(default)]
    pub spread: f64,
    #[serde(default)]
    pub fading: Fading,
    #[serde(default = "one")]
    pub noise_var: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    #[serde(default = "one")]
    pub power: f64,
    /// Lag-1 correlation of consecutive energy blocks; 0 is a white signal.
    #[serde(default)]
    pub rho: f64,
    /// Cross-node waveform correlation; defaults to the calibrated `√rho`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial: Option<f64>,
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec {
            power: 1.0,
            rho: 0.0,
            spatial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightSource {
    /// Deflection-optimal weights for all-reporting operation.
    #[default]
    OptimalLinear,
    Equal,
    Explicit {
        w: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_radii")]
    pub radii: usize,
    #[serde(default = "default_refine")]
    pub refine_steps: usize,
    #[serde(default = "default_polish")]
    pub polish_steps: usize,
    /// Cheaper settings for large programs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub large: Option<LargeSweep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LargeSweep {
    /// Applies when the window length `n` exceeds this.
    pub above_n: usize,
    pub radii: usize,
    pub refine_steps: usize,
}

fn default_radii() -> usize {
    64
}

fn default_refine() -> usize {
    8
}

fn default_polish() -> usize {
    200
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            radii: default_radii(),
            refine_steps: default_refine(),
            polish_steps: default_polish(),
            large: None,
        }
    }
}

/// What to compute. Each kind writes one CSV; see the README for columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// Analytic and empirical `Pf`, `Pd` at the network settings.
    Point,
    /// `Pd` against SNR0 for uniform schedules.
    SnrSweep {
        snr0_db: Vec<f64>,
        delta_db: Vec<f64>,
        memory: Vec<usize>,
        p0: Vec<f64>,
    },
    /// Empirical false-alarm rate of the CFAR rule.
    Cfar {
        alphas: Vec<f64>,
        memory: Vec<usize>,
        p0: Vec<f64>,
    },
    /// CROC curves of the configured schedule source over efficiency levels.
    Croc {
        eta: Vec<f64>,
        memory: Vec<usize>,
        alphas: Vec<f64>,
    },
    /// CROC of the designed schedule and of full reporting as the node list
    /// is replicated.
    NodeScaling { replicate: Vec<usize>, alphas: Vec<f64> },
    /// Error probability under perturbed channel statistics.
    CsiSweep {
        variances: Vec<f64>,
        seeds: usize,
        #[serde(default)]
        diagonal_only: bool,
    },
    /// SNR loss of the designed schedule against full reporting.
    SnrLoss {
        snr0_db: Vec<f64>,
        delta_db: Vec<f64>,
        eta: Vec<f64>,
        /// Search bracket relative to SNR0.
        #[serde(default = "default_bracket")]
        bracket_db: [f64; 2],
        #[serde(default = "default_tol")]
        tol_db: f64,
        #[serde(default)]
        measure: LossMeasure,
    },
}

/// Detection quality matched when computing SNR losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMeasure {
    /// `Pd = Q(Q⁻¹(α) - d)` with `d` the deflection coefficient normalized by
    /// the H0 spread of the fused statistic.
    #[default]
    Deflection,
    /// Exact `Pd` of the realization-wise CFAR detector. Interruption puts a
    /// floor under `Pmd`, so high efficiency levels may never reach the target.
    ExactPd,
}

fn default_bracket() -> [f64; 2] {
    [-20.0, 30.0]
}

fn default_tol() -> f64 {
    0.02
}

/// One concrete network: configuration, channels and signal.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: NetworkConfig,
    pub channels: Vec<NodeChannel>,
    pub signal: PuSignalModel,
}

impl ExperimentConfig {
    /// Parse TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a TOML config, or the `config` object of a JSON run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let inner = v
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Config(format!("{}: manifest has no `config` object", path.display())))?;
            serde_json::from_value::<ExperimentConfig>(inner)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str::<ExperimentConfig>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }?;
        parsed.validate()?;
        Ok(parsed)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name", format!("must be a non-empty file stem, got {:?}", self.name));
        }
        if self.nodes.is_empty() {
            return bad("nodes", "node list is empty".into());
        }
        if self.trials == 0 {
            return bad("trials", "must be positive".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !(n.noise_var > 0.0) || !n.snr_db.is_finite() || !n.spread.is_finite() {
                return bad(&format!("nodes[{i}]"), format!("invalid node {n:?}"));
            }
        }
        self.network_config(self.nodes.len(), self.network.memory, self.network.eta)
            .validate()
            .or_else(|e| bad("network", e.to_string()))?;
        if !(0.0..1.0).contains(&self.signal.rho) || !(self.signal.power > 0.0) {
            return bad("signal", format!("invalid signal {:?}", self.signal));
        }
        if let Some(c) = self.signal.spatial {
            if !(0.0..=1.0).contains(&c) {
                return bad("signal.spatial", format!("{c} outside [0,1]"));
            }
        }
        match &self.schedule {
            ScheduleSource::Uniform { p0 } => unit("schedule.p0", &[*p0])?,
            ScheduleSource::Explicit { p } => unit("schedule.p", p)?,
            _ => {}
        }
        if let WeightSource::Explicit { w } = &self.weights {
            if w.len() != self.nodes.len() {
                return bad(
                    "weights.w",
                    format!("expected {} entries, got {}", self.nodes.len(), w.len()),
                );
            }
        }
        if self.sweep.radii < 2 {
            return bad("sweep.radii", "need at least 2 radii".into());
        }
        if let Some(l) = self.sweep.large {
            if l.radii < 2 {
                return bad("sweep.large.radii", "need at least 2 radii".into());
            }
        }
        match &self.experiment {
            Experiment::Point => {}
            Experiment::SnrSweep {
                snr0_db,
                delta_db,
                memory,
                p0,
            } => {
                nonempty("experiment.snr0_db", snr0_db)?;
                nonempty("experiment.delta_db", delta_db)?;
                nonempty("experiment.memory", memory)?;
                unit("experiment.p0", p0)?;
            }
            Experiment::Cfar { alphas, memory, p0 } => {
                open_unit("experiment.alphas", alphas)?;
                nonempty("experiment.memory", memory)?;
                unit("experiment.p0", p0)?;
            }
            Experiment::Croc { eta, memory, alphas } => {
                unit("experiment.eta", eta)?;
                nonempty("experiment.memory", memory)?;
                open_unit("experiment.alphas", alphas)?;
            }
            Experiment::NodeScaling { replicate, alphas } => {
                nonempty("experiment.replicate", replicate)?;
                if replicate.contains(&0) {
                    return bad("experiment.replicate", "replication factors must be positive".into());
                }
                open_unit("experiment.alphas", alphas)?;
            }
            Experiment::CsiSweep { variances, seeds, .. } => {
                nonempty("experiment.variances", variances)?;
                if let Some(v) = variances.iter().find(|v| !(**v >= 0.0)) {
                    return bad("experiment.variances", format!("{v} < 0"));
                }
                if *seeds == 0 {
                    return bad("experiment.seeds", "must be positive".into());
                }
            }
            Experiment::SnrLoss {
                snr0_db,
                delta_db,
                eta,
                bracket_db,
                tol_db,
                ..
            } => {
                nonempty("experiment.snr0_db", snr0_db)?;
                nonempty("experiment.delta_db", delta_db)?;
                unit("experiment.eta", eta)?;
                if !(bracket_db[0] < bracket_db[1]) {
                    return bad("experiment.bracket_db", format!("empty bracket {bracket_db:?}"));
                }
                if !(*tol_db > 0.0) {
                    return bad("experiment.tol_db", "must be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn network_config(&self, nodes: usize, memory: usize, eta: f64) -> NetworkConfig {
        let n = &self.network;
        NetworkConfig {
            nodes,
            samples: n.samples,
            memory,
            sigma_z2: n.sigma_z2,
            prior_h1: n.prior_h1,
            alpha: n.alpha,
            eta,
        }
    }

    /// Network with node SNRs shifted by `shift_db`, dispersion `delta_db`,
    /// memory depth `memory` and the node list repeated `replicate` times.
    pub fn scenario(&self, shift_db: f64, delta_db: f64, memory: usize, replicate: usize) -> Result<Scenario> {
        let power = self.signal.power;
        let channels: Vec<NodeChannel> = (0..replicate)
            .flat_map(|_| self.nodes.iter())
            .map(|n| {
                let snr = n.snr_db + shift_db + n.spread * delta_db;
                match n.fading {
                    Fading::Fixed => NodeChannel::fixed_snr(snr, power, n.noise_var),
                    Fading::Rayleigh => NodeChannel::rayleigh_snr(snr, power, n.noise_var),
                }
            })
            .collect();
        let mut signal = PuSignalModel::calibrated(power, self.signal.rho, self.network.samples)?;
        if let Some(c) = self.signal.spatial {
            signal = signal.with_spatial(c);
        }
        Ok(Scenario {
            cfg: self.network_config(channels.len(), memory, self.network.eta),
            channels,
            signal,
        })
    }

    pub fn fusion_weights(&self, mom: &MomentSet) -> Result<Vector> {
        match &self.weights {
            WeightSource::OptimalLinear => optimal_linear_weights(mom, self.network.sigma_z2),
            WeightSource::Equal => Ok(equal_weights(mom.nodes)),
            WeightSource::Explicit { w } => {
                if w.len() != mom.nodes {
                    return Err(Error::dim("explicit fusion weights", mom.nodes, w.len()));
                }
                Ok(Vector::from_vec(w.clone()))
            }
        }
    }

    /// Sweep settings for a program with window length `n`.
    pub fn sweep_options(&self, n: usize) -> SweepOptions {
        let s = &self.sweep;
        let (radii, refine_steps) = match s.large {
            Some(l) if n > l.above_n => (l.radii, l.refine_steps),
            _ => (s.radii, s.refine_steps),
        };
        SweepOptions {
            radii,
            refine_steps,
            polish_steps: s.polish_steps,
            ..Default::default()
        }
    }

    pub fn mixture_sampling(&self) -> Sampling {
        Sampling {
            draws: MIXTURE_DRAWS,
            seed: self.seed,
        }
    }
}

fn nonempty<T>(field: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Config(format!("{field}: list is empty")));
    }
    Ok(())
}

fn unit(field: &str, v: &[f64]) -> Result<()> {
    nonempty(field, v)?;
    match v.iter().position(|x| !(0.0..=1.0).contains(x)) {
        Some(i) => Err(Error::Config(format!("{field}[{i}]: {} outside [0,1]", v[i]))),
        None => Ok(()),
    }
}

fn open_unit(field: &str, v: &[f64]) -> Result<()> {
    nonempty(field, v)?;
    match v.iter().position(|x| !(*x > 0.0 && *x < 1.0)) {
        Some(i) => Err(Error::Config(format!("{field}[{i}]: {} outside (0,1)", v[i]))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
[network]
samples = 20
sigma_z2 = 10.0
alpha = 0.01
[[nodes]]
snr_db = 3.0
[[nodes]]
snr_db = -1.0
fading = "rayleigh"
[experiment]
kind = "point"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.trials, DEFAULT_TRIALS);
        assert_eq!(c.network.prior_h1, 0.5);
        assert_eq!(c.schedule, ScheduleSource::Uniform { p0: 1.0 });
        let s = c.scenario(0.0, 0.0, 0, 1).unwrap();
        assert!((s.channels[0].gain_mean - 10f64.powf(0.3)).abs() < 1e-12);
        assert_eq!(s.channels[1].gain_var, s.channels[1].gain_mean.powi(2));
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn empty_node_list_is_rejected() {
        let text = MINIMAL.replace(
            "[[nodes]]\nsnr_db = 3.0\n[[nodes]]\nsnr_db = -1.0\nfading = \"rayleigh\"\n",
            "nodes = []\n",
        );
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("nodes"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected_with_location() {
        let text = MINIMAL.replace("alpha = 0.01", "alpha = 0.01\nalpah = 3");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("alpah") && err.contains("line"), "{err}");
        let text = MINIMAL.replace(
            "kind = \"point\"",
            "kind = \"cfar\"\nalphas = [0.1]\nmemory = [0]\np0 = [0.5]\nbogus = 1",
        );
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn out_of_range_values_name_the_field() {
        let text = MINIMAL.replace(
            "kind = \"point\"",
            "kind = \"cfar\"\nalphas = [0.1, 1.5]\nmemory = [0]\np0 = [0.5]",
        );
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("experiment.alphas[1]"), "{err}");
    }

    #[test]
    fn spread_and_replication() {
        let text = MINIMAL.replace("snr_db = 3.0", "snr_db = 0.0\nspread = 1.0");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        let s = c.scenario(5.0, 2.0, 1, 3).unwrap();
        assert_eq!(s.channels.len(), 6);
        assert_eq!(s.cfg.n(), 12);
        let snr = |g: f64| 10.0 * g.log10();
        assert!((snr(s.channels[0].gain_mean) - 7.0).abs() < 1e-9);
        assert!((snr(s.channels[3].gain_mean) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn large_programs_use_cheaper_sweep() {
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.sweep.large = Some(LargeSweep {
            above_n: 16,
            radii: 12,
            refine_steps: 4,
        });
        assert_eq!(c.sweep_options(9).radii, 64);
        assert_eq!(c.sweep_options(30).radii, 12);
    }
}
