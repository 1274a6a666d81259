//! Decision procedures for the reporting schedule: the relaxed NP route,
//! scenario trees, the deflection-criterion sweep with its SDP relaxation,
//! and brute-force oracles.

pub mod dc;
pub mod design;
pub mod kkt;
pub mod oracle;
pub mod scenario;
pub mod sdp;

pub use dc::{dc_matrices, solve_dc_sweep, solve_qcqp_sdp, DcProgram, SweepOptions, SweepResult};
pub use design::{design_schedule, stage_decision, ScheduleSource};
pub use kkt::{kkt_direction, np_objective, scale_to_feasible, solve_npc_two_stage, KktSolution};
pub use oracle::{grid_oracle, sphere_oracle};
pub use scenario::{build_scenario_tree, ScenarioTree, TreeMode};
pub use sdp::{sdp_solve, Constraint, SdpOptions, SdpProblem, SdpSolution, SparseSym};
