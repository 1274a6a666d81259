//! Strategies and checks shared by the invariant proptests and the
//! acceptance run. Checks return `Err(message)` instead of panicking.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use proptest::prelude::*;

use intercoop::compensator::conditional_stats;
use intercoop::detection::{np_pieces, optimal_linear_weights, Detector};
use intercoop::linalg::{min_eigenvalue, Mat, Vector};
use intercoop::model::{
    BernoulliSchedule, Hypothesis, IndexMap, NetworkConfig, NodeChannel, PuSignalModel, Realization,
};
use intercoop::moments::{build_moments, report_covariance, CovarianceMixing, MomentOptions, MomentSet};
use intercoop::optimize::np_objective;
use intercoop::par::Execution;
use intercoop::sim::{run_batch, HypothesisDraw, SampleMode, SimModel, Threshold};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn psd(m: &Mat) -> bool {
    min_eigenvalue(m) >= -1e-9 * m.trace().abs().max(1e-300)
}

#[derive(Debug, Clone)]
pub struct Net {
    pub cfg: NetworkConfig,
    pub chs: Vec<NodeChannel>,
    pub sig: PuSignalModel,
}

impl Net {
    pub fn moments(&self) -> MomentSet {
        build_moments(&self.cfg, &self.chs, &self.sig, MomentOptions::default()).unwrap()
    }
}

/// Networks of up to four nodes with memory up to two.
pub fn net() -> impl Strategy<Value = Net> {
    (1usize..=4, 0usize..=2, 0.0..0.5f64, 0.1..20.0f64, 0.1..0.9f64)
        .prop_flat_map(|(k, l, rho, sz, prior)| {
            (
                Just((k, l, rho, sz, prior)),
                prop::collection::vec((-10.0..15.0f64, any::<bool>()), k),
            )
        })
        .prop_map(|((k, l, rho, sz, prior), nodes)| {
            let cfg = NetworkConfig {
                nodes: k,
                samples: 10,
                memory: l,
                sigma_z2: sz,
                prior_h1: prior,
                alpha: 0.05,
                eta: 0.3,
            };
            let chs = nodes
                .iter()
                .map(|&(s, ray)| {
                    if ray {
                        NodeChannel::rayleigh_snr(s, 1.0, 1.0)
                    } else {
                        NodeChannel::fixed_snr(s, 1.0, 1.0)
                    }
                })
                .collect();
            let sig = PuSignalModel::calibrated(1.0, rho, cfg.samples).unwrap();
            Net { cfg, chs, sig }
        })
}

pub fn index_map_bijection(k: usize, l: usize) -> Check {
    let map = IndexMap { nodes: k, memory: l };
    let mut seen = vec![false; map.n() + 1];
    for node in 1..=k {
        for lag in 0..=l {
            let i = map.flat_index(node, lag).map_err(|e| e.to_string())?;
            ensure!(i >= 1 && i <= map.n(), "index {i} out of 1..={}", map.n());
            ensure!(!seen[i], "index {i} hit twice");
            seen[i] = true;
            let back = map.unflatten(i).map_err(|e| e.to_string())?;
            ensure!(
                back == (node, lag),
                "unflatten({i}) = {back:?}, expected {:?}",
                (node, lag)
            );
        }
    }
    ensure!(seen[1..].iter().all(|&s| s), "indices not covered");
    ensure!(map.flat_index(k + 1, 0).is_err(), "node {} accepted", k + 1);
    ensure!(map.unflatten(map.n() + 1).is_err(), "index {} accepted", map.n() + 1);
    Ok(())
}

pub fn realization_mass(p: &[f64]) -> Check {
    let s = BernoulliSchedule::new(p.to_vec()).map_err(|e| e.to_string())?;
    let total: f64 = Realization::enumerate(p.len())
        .map(|b| s.realization_mass(&b).unwrap())
        .sum();
    ensure!((total - 1.0).abs() < 1e-12, "total mass {total}");
    Ok(())
}

pub fn covariances_psd(n: &Net, p: &[f64]) -> Check {
    let mom = n.moments();
    let dim = mom.n();
    let sched = BernoulliSchedule::new(p[..dim].to_vec()).unwrap();
    ensure!(
        psd(&mom.cov[0]) && psd(&mom.cov[1]) && psd(&mom.cov_uncond),
        "moment covariance"
    );
    let rep = report_covariance(&mom, &sched, n.cfg.sigma_z2).unwrap();
    ensure!(
        psd(&rep.cov[0]) && psd(&rep.cov[1]) && psd(&rep.cov_uncond),
        "report covariance"
    );
    let w = optimal_linear_weights(&mom, n.cfg.sigma_z2).unwrap();
    let det = Detector::new(&mom, &sched, n.cfg.sigma_z2, w).unwrap();
    for b in [Realization::all(dim, true), Realization::from_mask(dim, 0b101)] {
        for h in Hypothesis::BOTH {
            let st = conditional_stats(&det.comp, &mom, &b, h, n.cfg.sigma_z2).unwrap();
            ensure!(psd(&st.cov), "conditional covariance under {h:?}");
        }
    }
    Ok(())
}

pub fn np_pieces_valid(n: &Net, mask: u64) -> Check {
    let mom = n.moments();
    let w = optimal_linear_weights(&mom, n.cfg.sigma_z2).unwrap();
    let b = Realization::from_mask(mom.n(), mask & ((1u64 << mom.n()) - 1));
    let pieces = np_pieces(&w, &mom, &b, n.cfg.sigma_z2).unwrap();
    ensure!(
        pieces.q_b.iter().all(|&q| q >= 0.0),
        "negative q entry: {:?}",
        pieces.q_b
    );
    ensure!(
        psd(&pieces.sigma_h_b[0]) && psd(&pieces.sigma_h_b[1]),
        "piece covariance"
    );
    Ok(())
}

pub fn np_objective_scale_free(n: &Net, p: &[f64], c: f64, alpha: f64) -> Check {
    let mom = n.moments();
    let dim = mom.n();
    let w = optimal_linear_weights(&mom, n.cfg.sigma_z2).unwrap();
    let pieces = np_pieces(&w, &mom, &Realization::all(dim, true), n.cfg.sigma_z2).unwrap();
    let pv = Vector::from_column_slice(&p[..dim]);
    let [s0, s1] = &pieces.sigma_h_b;
    let a = np_objective(s0, s1, &pieces.q_b, alpha, &pv).unwrap();
    let b = np_objective(s0, s1, &pieces.q_b, alpha, &(pv * c)).unwrap();
    ensure!(
        (a - b).abs() <= 1e-9 * a.abs().max(1.0),
        "{a} vs {b} after scaling by {c}"
    );
    Ok(())
}

/// The compensator's estimation error is uncorrelated with every report in
/// the window and unbiased, within 3σ on simulated trials.
pub fn compensator_orthogonality() -> Check {
    let cfg = NetworkConfig {
        nodes: 2,
        samples: 20,
        memory: 1,
        sigma_z2: 5.0,
        prior_h1: 0.5,
        alpha: 0.05,
        eta: 0.3,
    };
    let chs = [
        NodeChannel::fixed_snr(3.0, 1.0, 1.0),
        NodeChannel::fixed_snr(-2.0, 1.0, 1.0),
    ];
    let sig = PuSignalModel::calibrated(1.0, 0.3, cfg.samples).unwrap();
    // The estimator is linear MMSE for the mixture only with the full
    // law-of-total-covariance term.
    let opts = MomentOptions {
        mixing: CovarianceMixing::TotalCovariance,
        ..Default::default()
    };
    let mom = build_moments(&cfg, &chs, &sig, opts).unwrap();
    let sched = BernoulliSchedule::new(vec![0.9, 0.4, 0.7, 0.6]).unwrap();
    let w = optimal_linear_weights(&mom, cfg.sigma_z2).unwrap();
    let det = Detector::new(&mom, &sched, cfg.sigma_z2, w).unwrap();
    let model = SimModel::new(&cfg, &chs, &sig, SampleMode::Physical).unwrap();
    let trials = 100_000;
    let batch = run_batch(
        &model,
        &det,
        HypothesisDraw::Prior,
        Threshold::Fixed(0.0),
        trials,
        31,
        Execution::available(),
        true,
    )
    .map_err(|e| e.to_string())?;
    let recs = batch.records.unwrap();
    let n = cfg.n();
    let tf = trials as f64;
    for (k, pos) in mom.current_positions().enumerate() {
        for j in 0..n {
            let prods: Vec<f64> = recs.iter().map(|r| (r.u[pos] - r.u_hat[k]) * r.y[j]).collect();
            let mean = prods.iter().sum::<f64>() / tf;
            let var = prods.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (tf - 1.0);
            let bound = 3.0 * (var / tf).sqrt();
            ensure!(mean.abs() <= bound, "node {k}, report {j}: {mean} vs 3σ = {bound}");
        }
        let bias = recs.iter().map(|r| r.u[pos] - r.u_hat[k]).sum::<f64>() / tf;
        let sd = (recs.iter().map(|r| (r.u[pos] - r.u_hat[k]).powi(2)).sum::<f64>() / tf).sqrt();
        ensure!(bias.abs() <= 3.0 * sd / tf.sqrt(), "node {k} bias {bias}");
    }
    Ok(())
}
