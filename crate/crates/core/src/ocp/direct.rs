//! Direct method over piecewise-constant pure signals with a switch budget.
//!
//! Signals are enumerated depth first in lexicographic order. Any prefix
//! whose running violation exceeds `eps_k` is dropped. There is no cost
//! pruning: a Mayer cost of a partial state gives no lower bound on the
//! terminal cost. Steps reuse the same RK4 kernel as [`crate::dynamics::flow`]
//! so the winning trajectory is reproduced bit for bit.

use rayon::prelude::*;

use super::MayerProblem;
use crate::dynamics::{
    flow, step, AtomVelocity, ControlDictionary, ControlSignal, ControlledField, Controlled,
    StepControl, StepDriver, TimeGrid,
};
use crate::error::{Error, Result};
use crate::inclusion::TrajectorySelection;
use crate::measures::ParticleMeasure;

#[derive(Debug, Clone)]
pub struct DirectSolution {
    pub best: TrajectorySelection,
    pub cost: f64,
    pub feasible: bool,
    /// Largest raw constraint violation along `best`.
    pub violation: f64,
    /// Complete signals evaluated.
    pub leaves: usize,
}

struct SelectDriver<'a> {
    field: &'a dyn ControlledField,
    dictionary: &'a ControlDictionary,
    control: StepControl,
}

impl StepDriver for SelectDriver<'_> {
    fn stage<'a>(&'a self, _k: usize, t: f64, state: &ParticleMeasure) -> Box<dyn AtomVelocity + 'a> {
        Box::new(Controlled {
            frozen: self.field.freeze(t, state),
            dictionary: self.dictionary,
            control: &self.control,
            dim: self.field.dim(),
        })
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Goal {
    /// Minimize the cost over feasible signals.
    Cost,
    /// Minimize the largest violation.
    Violation,
}

struct Search<'a> {
    problem: &'a MayerProblem,
    grid: &'a TimeGrid,
    drivers: Vec<SelectDriver<'a>>,
    budget: usize,
    goal: Goal,
}

#[derive(Clone)]
struct Best {
    score: f64,
    selection: Vec<usize>,
    leaves: usize,
}

impl Best {
    fn empty() -> Self {
        Self {
            score: f64::INFINITY,
            selection: Vec::new(),
            leaves: 0,
        }
    }

    /// Strict improvement; equal scores keep the earlier (lexicographically
    /// smaller) signal.
    fn offer(&mut self, score: f64, sel: &[usize]) {
        if self.selection.is_empty() || score < self.score {
            self.score = score;
            self.selection = sel.to_vec();
        }
    }
}

impl Search<'_> {
    fn dfs(
        &self,
        state: &ParticleMeasure,
        sel: &mut Vec<usize>,
        switches: usize,
        run_max: f64,
        best: &mut Best,
    ) -> Result<()> {
        let k = sel.len();
        if k == self.grid.steps() {
            best.leaves += 1;
            let score = match self.goal {
                Goal::Cost => {
                    if self.problem.terminal_violation(state) > self.problem.eps_q {
                        return Ok(());
                    }
                    self.problem.cost.eval(state)?
                }
                Goal::Violation => run_max.max(self.problem.terminal_violation(state)),
            };
            best.offer(score, sel);
            return Ok(());
        }
        for (j, driver) in self.drivers.iter().enumerate() {
            let sw = switches + usize::from(k > 0 && sel[k - 1] != j);
            if sw > self.budget {
                continue;
            }
            let next = step(driver, self.grid, k, state)?;
            let v = self.problem.running_violation(&next);
            let keep = match self.goal {
                Goal::Cost => v <= self.problem.eps_k,
                // The running maximum only grows, so a prefix already at the
                // incumbent cannot win.
                Goal::Violation => run_max.max(v) < best.score,
            };
            if !keep {
                continue;
            }
            sel.push(j);
            self.dfs(&next, sel, sw, run_max.max(v), best)?;
            sel.pop();
        }
        Ok(())
    }

    fn run(&self, mu0: &ParticleMeasure) -> Result<Best> {
        let v0 = self.problem.running_violation(mu0);
        if self.goal == Goal::Cost && v0 > self.problem.eps_k {
            return Ok(Best::empty());
        }
        let first: Vec<Best> = (0..self.drivers.len())
            .into_par_iter()
            .map(|j| {
                let mut best = Best::empty();
                let next = step(&self.drivers[j], self.grid, 0, mu0)?;
                let v = self.problem.running_violation(&next);
                if self.goal == Goal::Violation || v <= self.problem.eps_k {
                    let mut sel = vec![j];
                    self.dfs(&next, &mut sel, 0, v0.max(v), &mut best)?;
                }
                Ok(best)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Best::empty();
        for b in first {
            out.leaves += b.leaves;
            if !b.selection.is_empty() && (out.selection.is_empty() || b.score < out.score) {
                out.score = b.score;
                out.selection = b.selection;
            }
        }
        Ok(out)
    }
}

fn check(problem: &MayerProblem, mu0: &ParticleMeasure) -> Result<()> {
    problem.validate()?;
    let inc = &problem.inclusion;
    if mu0.dim() != inc.dim() {
        return Err(Error::DimensionMismatch {
            expected: inc.dim(),
            got: mu0.dim(),
        });
    }
    inc.dictionary.validate(inc.dim(), inc.field.control_dim())
}

fn solution(problem: &MayerProblem, mu0: &ParticleMeasure, grid: &TimeGrid, sel: Vec<usize>, leaves: usize) -> Result<DirectSolution> {
    let inc = &problem.inclusion;
    let traj = flow(
        inc.field.as_ref(),
        &inc.dictionary,
        &ControlSignal::from_indices(&sel),
        mu0,
        grid,
    )?;
    let cost = problem.cost.eval(traj.final_state())?;
    let feasible = problem.is_feasible(&traj);
    let violation = problem.violation(&traj);
    Ok(DirectSolution {
        best: TrajectorySelection::from_trajectory(traj)?,
        cost,
        feasible,
        violation,
        leaves,
    })
}

/// Exact minimizer over pure signals with at most `switch_budget` switches.
/// When nothing is feasible the least-violating signal is returned with
/// `feasible = false`.
pub fn solve_direct(
    problem: &MayerProblem,
    mu0: &ParticleMeasure,
    grid: &TimeGrid,
    switch_budget: usize,
) -> Result<DirectSolution> {
    check(problem, mu0)?;
    let inc = &problem.inclusion;
    let drivers = |goal| Search {
        problem,
        grid,
        drivers: (0..inc.dictionary.len())
            .map(|j| SelectDriver {
                field: inc.field.as_ref(),
                dictionary: &inc.dictionary,
                control: StepControl::Select(j),
            })
            .collect(),
        budget: switch_budget,
        goal,
    };
    let best = drivers(Goal::Cost).run(mu0)?;
    if !best.selection.is_empty() {
        return solution(problem, mu0, grid, best.selection, best.leaves);
    }
    let worst = drivers(Goal::Violation).run(mu0)?;
    solution(problem, mu0, grid, worst.selection, best.leaves + worst.leaves)
}

/// Reference enumeration: integrates every signal in lexicographic order
/// with [`flow`] and keeps the first strict minimizer among feasible ones.
pub fn solve_exhaustive(
    problem: &MayerProblem,
    mu0: &ParticleMeasure,
    grid: &TimeGrid,
    switch_budget: usize,
) -> Result<DirectSolution> {
    check(problem, mu0)?;
    let inc = &problem.inclusion;
    let n = inc.dictionary.len();
    let steps = grid.steps();
    let total = (n as u128).checked_pow(steps as u32).filter(|&t| t <= 1 << 24).ok_or_else(|| {
        Error::Refusal(format!("{n}^{steps} signals are too many to enumerate"))
    })?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut least: Option<(f64, Vec<usize>)> = None;
    let mut leaves = 0;
    for code in 0..total {
        let mut sel = vec![0; steps];
        let mut c = code;
        for k in (0..steps).rev() {
            sel[k] = (c % n as u128) as usize;
            c /= n as u128;
        }
        let signal = ControlSignal::from_indices(&sel);
        if signal.switches() > switch_budget {
            continue;
        }
        leaves += 1;
        let traj = flow(inc.field.as_ref(), &inc.dictionary, &signal, mu0, grid)?;
        if problem.is_feasible(&traj) {
            let cost = problem.cost.eval(traj.final_state())?;
            if best.as_ref().is_none_or(|b| cost < b.0) {
                best = Some((cost, sel));
            }
        } else {
            let v = problem.violation(&traj);
            if least.as_ref().is_none_or(|b| v < b.0) {
                least = Some((v, sel));
            }
        }
    }
    let sel = best.or(least).map(|b| b.1).unwrap();
    solution(problem, mu0, grid, sel, leaves)
}
