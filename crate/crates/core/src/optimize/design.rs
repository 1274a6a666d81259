//! Schedule sources: fixed vectors or one of the two optimization routes.

use serde::{Deserialize, Serialize};

use crate::linalg::Vector;
use crate::model::{BernoulliSchedule, Realization};
use crate::moments::MomentSet;
use crate::optimize::dc::{dc_matrices, solve_dc_sweep, SweepOptions};
use crate::optimize::kkt::{solve_npc_two_stage, uniform_budget};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSource {
    /// `p = p0 · 1`.
    Uniform {
        p0: f64,
    },
    Explicit {
        p: Vec<f64>,
    },
    /// Two-stage Neyman-Pearson design through the KKT direction, for the
    /// all-reporting observation.
    NpcKkt,
    /// Deflection design by the radius sweep over SDP relaxations.
    DcSdp,
}

/// Decision for the next stage of a scenario tree.
///
/// The root (no observation yet) spends the budget uniformly. Later stages
/// solve the two-stage problem for the last observation and fall back to the
/// uniform schedule when that observation carries no usable direction.
pub fn stage_decision(
    history: &[Realization],
    mom: &MomentSet,
    w: &Vector,
    sigma_z2: f64,
    alpha: f64,
    eta: f64,
) -> Result<BernoulliSchedule> {
    let Some(last) = history.last() else {
        return uniform_budget(mom.n(), eta);
    };
    match solve_npc_two_stage(mom, w, last, sigma_z2, alpha, eta) {
        Ok(s) => Ok(s),
        Err(e @ (Error::Degenerate(_) | Error::Infeasible(_))) => {
            log::debug!("stage decision falls back to uniform: {e}");
            uniform_budget(mom.n(), eta)
        }
        Err(e) => Err(e),
    }
}

/// Resolve a schedule source for the given statistics and fusion weights.
pub fn design_schedule(
    source: &ScheduleSource,
    mom: &MomentSet,
    w: &Vector,
    sigma_z2: f64,
    alpha: f64,
    eta: f64,
    sweep: &SweepOptions,
) -> Result<BernoulliSchedule> {
    let n = mom.n();
    match source {
        ScheduleSource::Uniform { p0 } => BernoulliSchedule::uniform(n, *p0),
        ScheduleSource::Explicit { p } => {
            if p.len() != n {
                return Err(Error::dim("explicit schedule", n, p.len()));
            }
            BernoulliSchedule::new(p.clone())
        }
        ScheduleSource::NpcKkt => {
            if eta == 0.0 {
                return BernoulliSchedule::uniform(n, 1.0);
            }
            stage_decision(&[Realization::all(n, true)], mom, w, sigma_z2, alpha, eta)
        }
        ScheduleSource::DcSdp => {
            if eta == 0.0 {
                return BernoulliSchedule::uniform(n, 1.0);
            }
            let prog = dc_matrices(mom, w)?;
            Ok(solve_dc_sweep(&prog, (1.0 - eta) * n as f64, sweep)?.schedule)
        }
    }
}
