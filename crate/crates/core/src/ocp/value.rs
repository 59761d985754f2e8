//! Value of the pure problem against the value of its convexification.
//!
//! `V` is the direct-method optimum over pure signals. `V_co` minimizes over
//! relaxed signals whose weights are constant on a few equal segments and lie
//! on a simplex grid of the given resolution. Pure signals are relaxed
//! signals too, so `V_co` is reported as the smaller of the search result and
//! `V`.

use rayon::prelude::*;

use super::{solve_direct, MayerProblem};
use crate::dynamics::{flow, ControlSignal, StepControl, TimeGrid};
use crate::error::{Error, Result};
use crate::measures::ParticleMeasure;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueOptions {
    /// Weights are multiples of `1 / resolution`.
    pub resolution: usize,
    /// Equal segments carrying their own weight vector.
    pub segments: usize,
    pub switch_budget: usize,
    /// Coordinate-descent sweeps per restart.
    pub max_sweeps: usize,
}

impl Default for ValueOptions {
    fn default() -> Self {
        Self {
            resolution: 20,
            segments: 1,
            switch_budget: 1,
            max_sweeps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueReport {
    pub v: f64,
    pub v_feasible: bool,
    pub v_co: f64,
    /// Best value found by the relaxed search alone.
    pub v_search: f64,
    /// Per-segment weights of the best relaxed signal, when the search won.
    pub relaxed_weights: Option<Vec<Vec<f64>>>,
    /// Whether the relaxed search enumerated the whole simplex grid.
    pub exhaustive: bool,
    pub notes: Vec<String>,
}

/// Integer compositions of `r` into `n` parts, in lexicographic order.
fn simplex_grid(n: usize, r: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n == 1 {
            cur.push(r);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for a in 0..=r {
            cur.push(a);
            rec(n - 1, r - a, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, r, &mut Vec::new(), &mut out);
    out
}

struct Relaxed<'a> {
    problem: &'a MayerProblem,
    mu0: &'a ParticleMeasure,
    grid: &'a TimeGrid,
    segments: usize,
    resolution: usize,
}

impl Relaxed<'_> {
    fn signal(&self, w: &[Vec<usize>]) -> ControlSignal {
        let steps = self.grid.steps();
        let r = self.resolution as f64;
        ControlSignal {
            steps: (0..steps)
                .map(|k| {
                    let s = k * self.segments / steps;
                    StepControl::Mix(w[s].iter().map(|&a| a as f64 / r).collect())
                })
                .collect(),
        }
    }

    /// Cost, or `+inf` when the relaxed trajectory is infeasible.
    fn value(&self, w: &[Vec<usize>]) -> Result<f64> {
        let inc = &self.problem.inclusion;
        let tr = flow(inc.field.as_ref(), &inc.dictionary, &self.signal(w), self.mu0, self.grid)?;
        if !self.problem.is_feasible(&tr) {
            return Ok(f64::INFINITY);
        }
        self.problem.cost.eval(tr.final_state())
    }
}

/// `(V, V_co)` from node `tau` with state `mu_tau`.
pub fn value_functions(
    problem: &MayerProblem,
    tau: f64,
    mu_tau: &ParticleMeasure,
    grid: &TimeGrid,
    opts: ValueOptions,
) -> Result<ValueReport> {
    let k = grid
        .index_of(tau)
        .ok_or_else(|| Error::Invalid(format!("tau = {tau} is not a grid node")))?;
    if k == grid.steps() {
        return Err(Error::Invalid("tau must lie before the horizon".into()));
    }
    if opts.resolution == 0 || opts.segments == 0 {
        return Err(Error::Invalid("resolution and segments must be positive".into()));
    }
    let sub = grid.tail(k)?;
    let direct = solve_direct(problem, mu_tau, &sub, opts.switch_budget)?;
    let v = if direct.feasible { direct.cost } else { f64::INFINITY };

    let n = problem.inclusion.dictionary.len();
    let segments = opts.segments.min(sub.steps());
    let relaxed = Relaxed {
        problem,
        mu0: mu_tau,
        grid: &sub,
        segments,
        resolution: opts.resolution,
    };
    let grid_pts = simplex_grid(n, opts.resolution);
    let exhaustive = n <= 3 && segments == 1;
    let mut notes = Vec::new();
    let (v_search, best_w) = if exhaustive {
        let vals = grid_pts
            .par_iter()
            .map(|w| relaxed.value(std::slice::from_ref(w)))
            .collect::<Result<Vec<f64>>>()?;
        let mut best = (f64::INFINITY, None);
        for (w, v) in grid_pts.iter().zip(vals) {
            if v < best.0 {
                best = (v, Some(vec![w.clone()]));
            }
        }
        best
    } else {
        notes.push("relaxed value from coordinate descent; not certified global".to_string());
        // Restarts from every vertex, held on all segments.
        let starts: Vec<Vec<Vec<usize>>> = (0..n)
            .map(|j| {
                let mut e = vec![0; n];
                e[j] = opts.resolution;
                vec![e; segments]
            })
            .collect();
        let runs = starts
            .into_par_iter()
            .map(|mut w| {
                let mut cur = relaxed.value(&w)?;
                for _ in 0..opts.max_sweeps {
                    let mut improved = false;
                    for s in 0..segments {
                        for i in 0..n {
                            for j in 0..n {
                                if i == j || w[s][i] == 0 {
                                    continue;
                                }
                                w[s][i] -= 1;
                                w[s][j] += 1;
                                let v = relaxed.value(&w)?;
                                if v < cur {
                                    cur = v;
                                    improved = true;
                                } else {
                                    w[s][i] += 1;
                                    w[s][j] -= 1;
                                }
                            }
                        }
                    }
                    if !improved {
                        break;
                    }
                }
                Ok((cur, w))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut best = (f64::INFINITY, None);
        for (v, w) in runs {
            if v < best.0 {
                best = (v, Some(w));
            }
        }
        best
    };

    let r = opts.resolution as f64;
    let relaxed_weights = if v_search < v {
        best_w.map(|w| w.iter().map(|s| s.iter().map(|&a| a as f64 / r).collect()).collect())
    } else {
        None
    };
    if !direct.feasible {
        notes.push("no feasible pure signal within the switch budget".to_string());
    }
    Ok(ValueReport {
        v,
        v_feasible: direct.feasible,
        v_co: v_search.min(v),
        v_search,
        relaxed_weights,
        exhaustive,
        notes,
    })
}
