//! Constrained Mayer problems over finite control dictionaries.
//!
//! The cost is a terminal functional of the measure. State constraints are
//! soft: a running predicate must hold within `eps_k` at every node and a
//! terminal predicate within `eps_q` at the last node.

mod direct;
mod sequence;
mod value;

pub use direct::{solve_direct, solve_exhaustive, DirectSolution};
pub use sequence::{minimizing_sequence_experiment, verify_control_inclusion, SequenceReport};
pub use value::{value_functions, ValueOptions, ValueReport};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::estimates::cauchy_lipschitz_envelope;
use crate::inclusion::InclusionProblem;
use crate::measures::ParticleMeasure;
use crate::transport;
use crate::vecops::dist;

/// Built-in terminal functionals.
#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    Constant(f64),
    /// `|mean(μ) - x*|`.
    MeanDistance(Vec<f64>),
    /// `∫ |x - mean(μ)|² dμ`.
    Variance,
    /// `W_p(μ, target)`.
    Wasserstein { target: ParticleMeasure, p: f64 },
    SupportRadius,
}

/// `scale · φ(μ)`; a negative scale turns a distance into a reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Cost {
    pub kind: CostKind,
    pub scale: f64,
}

impl Cost {
    pub fn new(kind: CostKind) -> Self {
        Self { kind, scale: 1.0 }
    }

    pub fn scaled(kind: CostKind, scale: f64) -> Self {
        Self { kind, scale }
    }

    pub fn eval(&self, mu: &ParticleMeasure) -> Result<f64> {
        let v = match &self.kind {
            CostKind::Constant(c) => *c,
            CostKind::MeanDistance(x) => {
                if x.len() != mu.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: mu.dim(),
                        got: x.len(),
                    });
                }
                dist(&mu.mean(), x)
            }
            CostKind::Variance => {
                let m = mu.mean();
                mu.points()
                    .zip(mu.weights())
                    .map(|(x, w)| w * dist(x, &m).powi(2))
                    .sum()
            }
            CostKind::Wasserstein { target, p } => transport::distance(mu, target, *p)?,
            CostKind::SupportRadius => mu.support_radius(),
        };
        Ok(self.scale * v)
    }
}

/// Predicates with a nonnegative violation, zero when satisfied.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `supp μ ⊂ B(0, radius)`.
    SupportCap(f64),
    /// `M_p(μ) <= cap`.
    MomentCap { p: f64, cap: f64 },
}

impl Constraint {
    pub fn violation(&self, mu: &ParticleMeasure) -> f64 {
        match self {
            Constraint::SupportCap(r) => (mu.support_radius() - r).max(0.0),
            Constraint::MomentCap { p, cap } => (mu.momentum(*p).unwrap_or(f64::INFINITY) - cap).max(0.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Constraint::SupportCap(r) => *r >= 0.0 && r.is_finite(),
            Constraint::MomentCap { p, cap } => *p >= 1.0 && *cap >= 0.0 && cap.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("bad constraint {self:?}")))
        }
    }
}

#[derive(Clone)]
pub struct MayerProblem {
    pub inclusion: InclusionProblem,
    pub cost: Cost,
    pub running: Vec<Constraint>,
    pub terminal: Vec<Constraint>,
    pub eps_k: f64,
    pub eps_q: f64,
}

impl MayerProblem {
    /// Unconstrained problem with tolerances `1e-3 R`.
    pub fn new(inclusion: InclusionProblem, cost: Cost) -> Self {
        let (rr, _) = cauchy_lipschitz_envelope(&inclusion.bounds);
        Self {
            inclusion,
            cost,
            running: Vec::new(),
            terminal: Vec::new(),
            eps_k: 1e-3 * rr,
            eps_q: 1e-3 * rr,
        }
    }

    pub fn with_running(mut self, c: Constraint) -> Self {
        self.running.push(c);
        self
    }

    pub fn with_terminal(mut self, c: Constraint) -> Self {
        self.terminal.push(c);
        self
    }

    pub fn with_tolerances(mut self, eps_k: f64, eps_q: f64) -> Self {
        self.eps_k = eps_k;
        self.eps_q = eps_q;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_k > 0.0 && self.eps_q > 0.0) {
            return Err(Error::Invalid("constraint tolerances must be positive".into()));
        }
        self.running.iter().chain(&self.terminal).try_for_each(Constraint::validate)
    }

    pub fn running_violation(&self, mu: &ParticleMeasure) -> f64 {
        self.running.iter().map(|c| c.violation(mu)).fold(0.0, f64::max)
    }

    pub fn terminal_violation(&self, mu: &ParticleMeasure) -> f64 {
        self.terminal.iter().map(|c| c.violation(mu)).fold(0.0, f64::max)
    }

    /// Whether every node meets the running constraint within `eps_k` and
    /// the final node meets the terminal one within `eps_q`.
    pub fn is_feasible(&self, traj: &Trajectory) -> bool {
        traj.states.iter().all(|m| self.running_violation(m) <= self.eps_k)
            && self.terminal_violation(traj.final_state()) <= self.eps_q
    }

    /// Largest raw violation along `traj`.
    pub fn violation(&self, traj: &Trajectory) -> f64 {
        let run = traj
            .states
            .iter()
            .map(|m| self.running_violation(m))
            .fold(0.0, f64::max);
        run.max(self.terminal_violation(traj.final_state()))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dynamics::{ControlDictionary, FieldSpec};
    use crate::estimates::HypothesisBounds;
    use std::sync::Arc;

    pub(crate) fn drifts(values: &[f64]) -> InclusionProblem {
        let field = Arc::new(FieldSpec::preset("control-translation", 1).build().unwrap());
        let dict = ControlDictionary::constants(values.iter().map(|&v| vec![v]).collect()).unwrap();
        let bounds = HypothesisBounds::constant(1.0, 0.1, 1.0, 1.0, 0.0, 0.0).unwrap();
        InclusionProblem::new(field, dict, bounds).unwrap()
    }

    #[test]
    fn cost_library() {
        let mu = ParticleMeasure::uniform(1, vec![vec![-1.0], vec![3.0]]).unwrap();
        assert_eq!(Cost::new(CostKind::MeanDistance(vec![0.5])).eval(&mu).unwrap(), 0.5);
        assert_eq!(Cost::new(CostKind::Variance).eval(&mu).unwrap(), 4.0);
        assert_eq!(Cost::new(CostKind::SupportRadius).eval(&mu).unwrap(), 3.0);
        assert_eq!(Cost::scaled(CostKind::Constant(2.0), -1.0).eval(&mu).unwrap(), -2.0);
        let target = ParticleMeasure::dirac(&[1.0]);
        let w = Cost::new(CostKind::Wasserstein { target, p: 1.0 }).eval(&mu).unwrap();
        assert!((w - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constraint_violations() {
        let mu = ParticleMeasure::dirac(&[0.5]);
        assert_eq!(Constraint::SupportCap(0.3).violation(&mu), 0.2);
        assert_eq!(Constraint::SupportCap(1.0).violation(&mu), 0.0);
        assert_eq!(Constraint::MomentCap { p: 2.0, cap: 0.25 }.violation(&mu), 0.25);
        let p = MayerProblem::new(drifts(&[1.0]), Cost::new(CostKind::Variance));
        assert!((p.eps_k - 1e-3 * 1.1 * std::f64::consts::E).abs() < 1e-15);
        assert!(p.clone().with_tolerances(0.0, 1.0).validate().is_err());
    }
}
