//! Control/inclusion link and the minimizing-sequence experiment.

use super::MayerProblem;
use crate::dynamics::{flow, ControlSignal, TimeGrid, Trajectory};
use crate::error::Result;
use crate::inclusion::{compactness_harness, membership_distances, CompactnessOptions, CompactnessReport, InclusionProblem};
use crate::measures::ParticleMeasure;

/// Membership tolerance for [`verify_control_inclusion`].
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-9;

/// Whether the driving velocity of `traj` matches some dictionary entry on
/// the lattice at every node.
pub fn verify_control_inclusion(problem: &InclusionProblem, traj: &Trajectory) -> bool {
    membership_distances(problem, traj)
        .iter()
        .all(|&d| d <= MEMBERSHIP_TOLERANCE)
}

#[derive(Debug, Clone)]
pub struct SequenceReport {
    pub costs: Vec<f64>,
    pub feasible: Vec<bool>,
    /// Smallest cost over the extracted cluster.
    pub liminf: f64,
    /// Cost of the limit candidate.
    pub cluster_cost: f64,
    pub cluster_feasible: bool,
    /// `cluster_cost <= liminf + tolerance`.
    pub lower_semicontinuous: bool,
    pub tolerance: f64,
    pub compactness: CompactnessReport,
    pub notes: Vec<String>,
}

/// Integrates `signals`, extracts a cluster and compares the cost of its
/// limit candidate with the costs along the cluster.
pub fn minimizing_sequence_experiment(
    problem: &MayerProblem,
    mu0: &ParticleMeasure,
    grid: &TimeGrid,
    signals: &[ControlSignal],
    opts: CompactnessOptions,
    tolerance: f64,
) -> Result<SequenceReport> {
    let inc = &problem.inclusion;
    let mut costs = Vec::with_capacity(signals.len());
    let mut feasible = Vec::with_capacity(signals.len());
    for s in signals {
        let tr = flow(inc.field.as_ref(), &inc.dictionary, s, mu0, grid)?;
        costs.push(problem.cost.eval(tr.final_state())?);
        feasible.push(problem.is_feasible(&tr));
    }
    let report = compactness_harness(inc, mu0, grid, signals, opts)?;
    let liminf = report
        .members
        .iter()
        .map(|&i| costs[i])
        .fold(f64::INFINITY, f64::min);
    let limit = &report.candidate.trajectory;
    let cluster_cost = problem.cost.eval(limit.final_state())?;
    let cluster_feasible = problem.is_feasible(limit) && report.admissible;
    let mut notes = report.notes.clone();
    if feasible.iter().any(|f| !f) {
        notes.push("some members of the sequence are infeasible".to_string());
    }
    Ok(SequenceReport {
        lower_semicontinuous: cluster_cost <= liminf + tolerance,
        costs,
        feasible,
        liminf,
        cluster_cost,
        cluster_feasible,
        tolerance,
        compactness: report,
        notes,
    })
}
