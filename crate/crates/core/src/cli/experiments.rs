//! Experiment drivers: each turns a config into one result table.

use crate::cli::config::{Experiment, ExperimentConfig, LossMeasure, Scenario};
use crate::cli::output::{Cell, Table};
use crate::compensator::StatMode;
use crate::detection::{qfunc, qfunc_inv, DeflectionVariance, Detector};
use crate::linalg::Vector;
use crate::model::{BernoulliSchedule, Hypothesis};
use crate::moments::{build_moments, MomentOptions, MomentSet};
use crate::optimize::design_schedule;
use crate::par::Execution;
use crate::sim::{
    batch_error_probability, empirical_croc, perturb_csi, required_snr, run_batch, CsiPerturbation, HypothesisDraw,
    SampleMode, SimModel, Threshold, CROC_CONFIDENCE,
};
use crate::{Error, Result};

pub const SNR_SWEEP_COLUMNS: &[&str] = &[
    "snr0_db",
    "delta_db",
    "L",
    "p0",
    "pd_analytic",
    "pd_empirical",
    "ci_lo",
    "ci_hi",
];
pub const CFAR_COLUMNS: &[&str] = &["p0", "L", "alpha", "pf_analytic", "pf_empirical", "ci_lo", "ci_hi"];
pub const CROC_COLUMNS: &[&str] = &[
    "eta",
    "L",
    "alpha",
    "pf_emp",
    "pmd_emp",
    "pmd_analytic",
    "pf_ci_lo",
    "pf_ci_hi",
    "pmd_ci_lo",
    "pmd_ci_hi",
    "schedule",
];
pub const NODE_SCALING_COLUMNS: &[&str] = &[
    "K",
    "method",
    "alpha",
    "pf_emp",
    "pmd_emp",
    "pmd_analytic",
    "pmd_ci_lo",
    "pmd_ci_hi",
];
pub const CSI_COLUMNS: &[&str] = &["seed", "normalized_var", "method", "pe", "pf", "pd"];
pub const SNR_LOSS_COLUMNS: &[&str] = &[
    "snr0_db",
    "delta_db",
    "eta",
    "target_pmd",
    "snr_proposed_db",
    "snr_linear_db",
    "loss_db",
];
pub const POINT_COLUMNS: &[&str] = &[
    "alpha",
    "pf_analytic",
    "pf_empirical",
    "pf_ci_lo",
    "pf_ci_hi",
    "pd_analytic",
    "pd_empirical",
    "pd_ci_lo",
    "pd_ci_hi",
    "schedule",
];

/// Method labels in comparison tables.
pub const PROPOSED: &str = "proposed";
pub const LINEAR: &str = "linear";

/// Independent seed for point `idx` of a sweep.
pub fn point_seed(base: u64, idx: usize) -> u64 {
    base.wrapping_add((idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

const PERTURBATION_SALT: u64 = 0x05EE_DC51;

struct Prepared {
    sc: Scenario,
    mom: MomentSet,
    w: Vector,
}

fn prepare(cfg: &ExperimentConfig, sc: Scenario) -> Result<Prepared> {
    let mom = build_moments(&sc.cfg, &sc.channels, &sc.signal, MomentOptions::default())?;
    let w = cfg.fusion_weights(&mom)?;
    Ok(Prepared { sc, mom, w })
}

impl Prepared {
    fn model(&self, mode: SampleMode) -> Result<SimModel> {
        SimModel::new(&self.sc.cfg, &self.sc.channels, &self.sc.signal, mode)
    }

    fn design(&self, cfg: &ExperimentConfig, eta: f64, exec: Execution) -> Result<BernoulliSchedule> {
        let mut opts = cfg.sweep_options(self.mom.n());
        opts.exec = exec;
        design_schedule(
            &cfg.schedule,
            &self.mom,
            &self.w,
            cfg.network.sigma_z2,
            cfg.network.alpha,
            eta,
            &opts,
        )
    }

    fn detector(&self, cfg: &ExperimentConfig, sched: &BernoulliSchedule, exec: Execution) -> Result<Detector> {
        detector(cfg, &self.mom, sched, &self.w, exec)
    }
}

fn detector(
    cfg: &ExperimentConfig,
    mom: &MomentSet,
    sched: &BernoulliSchedule,
    w: &Vector,
    exec: Execution,
) -> Result<Detector> {
    Ok(Detector::new(mom, sched, cfg.network.sigma_z2, w.clone())?
        .with_execution(exec)
        .with_sampling(Some(cfg.mixture_sampling())))
}

fn schedule_cell(s: &BernoulliSchedule) -> Cell {
    Cell::Text(
        s.probs()
            .iter()
            .map(|p| format!("{p:.6}"))
            .collect::<Vec<_>>()
            .join(";"),
    )
}

/// Run the configured experiment.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<Table>> {
    cfg.validate()?;
    let table = match &cfg.experiment {
        Experiment::Point => point(cfg, exec)?,
        Experiment::SnrSweep {
            snr0_db,
            delta_db,
            memory,
            p0,
        } => snr_sweep(cfg, snr0_db, delta_db, memory, p0, exec)?,
        Experiment::Cfar { alphas, memory, p0 } => cfar(cfg, alphas, memory, p0, exec)?,
        Experiment::Croc { eta, memory, alphas } => croc(cfg, eta, memory, alphas, exec)?,
        Experiment::NodeScaling { replicate, alphas } => node_scaling(cfg, replicate, alphas, exec)?,
        Experiment::CsiSweep {
            variances,
            seeds,
            diagonal_only,
        } => csi_sweep(cfg, variances, *seeds, *diagonal_only, exec)?,
        Experiment::SnrLoss {
            snr0_db,
            delta_db,
            eta,
            bracket_db,
            tol_db,
            measure,
        } => snr_loss_table(cfg, snr0_db, delta_db, eta, *bracket_db, *tol_db, *measure, exec)?,
    };
    Ok(vec![table])
}

fn point(cfg: &ExperimentConfig, exec: Execution) -> Result<Table> {
    let alpha = cfg.network.alpha;
    let prep = prepare(cfg, cfg.scenario(0.0, 0.0, cfg.network.memory, 1)?)?;
    let sched = prep.design(cfg, cfg.network.eta, exec)?;
    let det = prep.detector(cfg, &sched, exec)?;
    let model = prep.model(cfg.sample_mode)?;
    let th = Threshold::Cfar(alpha);
    let h0 = run_batch(
        &model,
        &det,
        HypothesisDraw::Fixed(Hypothesis::H0),
        th,
        cfg.trials,
        cfg.seed,
        exec,
        false,
    )?;
    let h1 = run_batch(
        &model,
        &det,
        HypothesisDraw::Fixed(Hypothesis::H1),
        th,
        cfg.trials,
        cfg.seed,
        exec,
        false,
    )?;
    let r = h0.rates().merge(&h1.rates());
    let (pf_lo, pf_hi) = r.pf_ci(CROC_CONFIDENCE)?;
    let (pd_lo, pd_hi) = r.pd_ci(CROC_CONFIDENCE)?;
    let mut t = Table::new(cfg.name.clone(), POINT_COLUMNS);
    t.push(vec![
        alpha.into(),
        // The realization-wise CFAR threshold holds every conditional Pf at α.
        alpha.into(),
        r.pf().into(),
        pf_lo.into(),
        pf_hi.into(),
        det.pd_alpha_overall(alpha, StatMode::Exact)?.into(),
        r.pd().into(),
        pd_lo.into(),
        pd_hi.into(),
        schedule_cell(&sched),
    ]);
    Ok(t)
}

fn snr_sweep(
    cfg: &ExperimentConfig,
    snr0_db: &[f64],
    delta_db: &[f64],
    memory: &[usize],
    p0: &[f64],
    exec: Execution,
) -> Result<Table> {
    let alpha = cfg.network.alpha;
    let mut t = Table::new(cfg.name.clone(), SNR_SWEEP_COLUMNS);
    let mut idx = 0;
    for &l in memory {
        for &delta in delta_db {
            for &p in p0 {
                for &snr0 in snr0_db {
                    let prep = prepare(cfg, cfg.scenario(snr0, delta, l, 1)?)?;
                    let sched = BernoulliSchedule::uniform(prep.mom.n(), p)?;
                    let det = prep.detector(cfg, &sched, exec)?;
                    let model = prep.model(cfg.sample_mode)?;
                    let b = run_batch(
                        &model,
                        &det,
                        HypothesisDraw::Fixed(Hypothesis::H1),
                        Threshold::Cfar(alpha),
                        cfg.trials,
                        point_seed(cfg.seed, idx),
                        exec,
                        false,
                    )?;
                    idx += 1;
                    let r = b.rates();
                    let (lo, hi) = r.pd_ci(CROC_CONFIDENCE)?;
                    let pd = det.pd_alpha_overall(alpha, StatMode::Exact)?;
                    log::info!(
                        "snr0 {snr0} dB, delta {delta} dB, L {l}, p0 {p}: Pd {pd:.4} analytic, {:.4} empirical",
                        r.pd()
                    );
                    t.push(vec![
                        snr0.into(),
                        delta.into(),
                        l.into(),
                        p.into(),
                        pd.into(),
                        r.pd().into(),
                        lo.into(),
                        hi.into(),
                    ]);
                }
            }
        }
    }
    Ok(t)
}

fn cfar(cfg: &ExperimentConfig, alphas: &[f64], memory: &[usize], p0: &[f64], exec: Execution) -> Result<Table> {
    let mut t = Table::new(cfg.name.clone(), CFAR_COLUMNS);
    let mut idx = 0;
    for &p in p0 {
        for &l in memory {
            let prep = prepare(cfg, cfg.scenario(0.0, 0.0, l, 1)?)?;
            let sched = BernoulliSchedule::uniform(prep.mom.n(), p)?;
            let det = prep.detector(cfg, &sched, exec)?;
            let model = prep.model(cfg.sample_mode)?;
            let h0 = run_batch(
                &model,
                &det,
                HypothesisDraw::Fixed(Hypothesis::H0),
                Threshold::Cfar(alphas[0]),
                cfg.trials,
                point_seed(cfg.seed, idx),
                exec,
                false,
            )?;
            idx += 1;
            for &alpha in alphas {
                let r = h0.rates_with(&det, Threshold::Cfar(alpha), cfg.network.prior_h1)?;
                let (lo, hi) = r.pf_ci(CROC_CONFIDENCE)?;
                log::info!("p0 {p}, L {l}, alpha {alpha}: Pf {:.5}", r.pf());
                t.push(vec![
                    p.into(),
                    l.into(),
                    alpha.into(),
                    alpha.into(),
                    r.pf().into(),
                    lo.into(),
                    hi.into(),
                ]);
            }
        }
    }
    Ok(t)
}

fn croc(cfg: &ExperimentConfig, etas: &[f64], memory: &[usize], alphas: &[f64], exec: Execution) -> Result<Table> {
    let mut t = Table::new(cfg.name.clone(), CROC_COLUMNS);
    let mut idx = 0;
    for &l in memory {
        let prep = prepare(cfg, cfg.scenario(0.0, 0.0, l, 1)?)?;
        let model = prep.model(cfg.sample_mode)?;
        for &eta in etas {
            let sched = prep.design(cfg, eta, exec)?;
            let det = prep.detector(cfg, &sched, exec)?;
            let pts = empirical_croc(&model, &det, alphas, cfg.trials, point_seed(cfg.seed, idx), exec)?;
            idx += 1;
            log::info!("L {l}, eta {eta}: schedule {:?}", sched.probs());
            for c in pts {
                t.push(vec![
                    eta.into(),
                    l.into(),
                    c.alpha.into(),
                    c.pf.into(),
                    c.pmd.into(),
                    c.pmd_analytic.into(),
                    c.pf_ci.0.into(),
                    c.pf_ci.1.into(),
                    c.pmd_ci.0.into(),
                    c.pmd_ci.1.into(),
                    schedule_cell(&sched),
                ]);
            }
        }
    }
    Ok(t)
}

fn node_scaling(cfg: &ExperimentConfig, replicate: &[usize], alphas: &[f64], exec: Execution) -> Result<Table> {
    let mut t = Table::new(cfg.name.clone(), NODE_SCALING_COLUMNS);
    for (idx, &r) in replicate.iter().enumerate() {
        let prep = prepare(cfg, cfg.scenario(0.0, 0.0, cfg.network.memory, r)?)?;
        let model = prep.model(cfg.sample_mode)?;
        let k = prep.sc.cfg.nodes;
        let start = std::time::Instant::now();
        let designed = prep.design(cfg, cfg.network.eta, exec)?;
        log::info!("K {k}: schedule designed in {:.1?}", start.elapsed());
        let full = BernoulliSchedule::uniform(prep.mom.n(), 1.0)?;
        // Both methods see the same simulated windows.
        let seed = point_seed(cfg.seed, idx);
        for (method, sched) in [(PROPOSED, &designed), (LINEAR, &full)] {
            let det = prep.detector(cfg, sched, exec)?;
            for c in empirical_croc(&model, &det, alphas, cfg.trials, seed, exec)? {
                t.push(vec![
                    k.into(),
                    method.into(),
                    c.alpha.into(),
                    c.pf.into(),
                    c.pmd.into(),
                    c.pmd_analytic.into(),
                    c.pmd_ci.0.into(),
                    c.pmd_ci.1.into(),
                ]);
            }
        }
    }
    Ok(t)
}

fn csi_sweep(
    cfg: &ExperimentConfig,
    variances: &[f64],
    seeds: usize,
    diagonal_only: bool,
    exec: Execution,
) -> Result<Table> {
    let prep = prepare(cfg, cfg.scenario(0.0, 0.0, cfg.network.memory, 1)?)?;
    let model = prep.model(cfg.sample_mode)?;
    let prior = cfg.network.prior_h1;
    let mut t = Table::new(cfg.name.clone(), CSI_COLUMNS);
    for s in 0..seeds {
        // Common random numbers: one error draw per seed, scaled by each
        // variance, and one simulation stream per seed.
        let pert_seed = point_seed(cfg.seed ^ PERTURBATION_SALT, s);
        let sim_seed = point_seed(cfg.seed, s);
        for &var in variances {
            let pert = CsiPerturbation {
                normalized_var: var,
                diagonal_only,
            };
            let mom = perturb_csi(&prep.mom, &pert, pert_seed)?;
            let w = cfg.fusion_weights(&mom)?;
            let est = Prepared {
                sc: prep.sc.clone(),
                mom,
                w,
            };
            let designed = est.design(cfg, cfg.network.eta, exec)?;
            let full = BernoulliSchedule::uniform(est.mom.n(), 1.0)?;
            for (method, sched) in [(PROPOSED, &designed), (LINEAR, &full)] {
                let det = detector(cfg, &est.mom, sched, &est.w, exec)?;
                let b = run_batch(
                    &model,
                    &det,
                    HypothesisDraw::Prior,
                    Threshold::MinError,
                    cfg.trials,
                    sim_seed,
                    exec,
                    false,
                )?;
                let r = b.rates();
                let pe = batch_error_probability(&r, &r, prior);
                log::info!("seed {s}, var {var}, {method}: Pe {pe:.4}");
                t.push(vec![
                    s.into(),
                    var.into(),
                    method.into(),
                    pe.into(),
                    r.pf().into(),
                    r.pd().into(),
                ]);
            }
        }
    }
    Ok(t)
}

/// A detection score increasing in SNR for the network shifted to `snr0` dB,
/// with either full reporting or a schedule designed at efficiency `eta`.
/// Under the deflection measure the score is the deflection itself, since
/// matching `Pmd` is matching `d` and `Pmd` underflows long before `d` does.
fn score_at_snr(
    cfg: &ExperimentConfig,
    snr0: f64,
    delta: f64,
    eta: Option<f64>,
    measure: LossMeasure,
    exec: Execution,
) -> Result<f64> {
    let prep = prepare(cfg, cfg.scenario(snr0, delta, cfg.network.memory, 1)?)?;
    let sched = match eta {
        Some(e) => prep.design(cfg, e, exec)?,
        None => BernoulliSchedule::uniform(prep.mom.n(), 1.0)?,
    };
    let det = prep.detector(cfg, &sched, exec)?;
    let alpha = cfg.network.alpha;
    match measure {
        LossMeasure::Deflection => det.deflection(StatMode::Exact, DeflectionVariance::H0),
        LossMeasure::ExactPd => det.pd_alpha_overall(alpha, StatMode::Exact),
    }
}

/// Missed-detection probability for a score from [`score_at_snr`].
fn pmd_of_score(cfg: &ExperimentConfig, score: f64, measure: LossMeasure) -> Result<f64> {
    Ok(match measure {
        LossMeasure::Deflection => qfunc(score - qfunc_inv(cfg.network.alpha)?),
        LossMeasure::ExactPd => 1.0 - score,
    })
}

fn bracketed(r: Result<f64>) -> Result<f64> {
    match r {
        Err(Error::Bracket(msg)) => {
            log::warn!("no SNR in the bracket reaches the target: {msg}");
            Ok(f64::INFINITY)
        }
        other => other,
    }
}

#[allow(clippy::too_many_arguments)]
fn snr_loss_table(
    cfg: &ExperimentConfig,
    snr0_db: &[f64],
    delta_db: &[f64],
    etas: &[f64],
    bracket: [f64; 2],
    tol_db: f64,
    measure: LossMeasure,
    exec: Execution,
) -> Result<Table> {
    let mut t = Table::new(cfg.name.clone(), SNR_LOSS_COLUMNS);
    for &snr0 in snr0_db {
        for &delta in delta_db {
            // The target is what full reporting achieves at the nominal SNR.
            let target = score_at_snr(cfg, snr0, delta, None, measure, exec)?;
            let target_pmd = pmd_of_score(cfg, target, measure)?;
            let (lo, hi) = (snr0 + bracket[0], snr0 + bracket[1]);
            let lin = bracketed(required_snr(
                |s| score_at_snr(cfg, s, delta, None, measure, exec),
                target,
                lo,
                hi,
                tol_db,
            ))?;
            for &eta in etas {
                let prop = bracketed(required_snr(
                    |s| score_at_snr(cfg, s, delta, Some(eta), measure, exec),
                    target,
                    lo,
                    hi,
                    tol_db,
                ))?;
                log::info!("snr0 {snr0}, delta {delta}, eta {eta}: loss {:.3} dB", prop - lin);
                t.push(vec![
                    snr0.into(),
                    delta.into(),
                    eta.into(),
                    target_pmd.into(),
                    prop.into(),
                    lin.into(),
                    (prop - lin).into(),
                ]);
            }
        }
    }
    Ok(t)
}
