//! Approximation of relaxed trajectories by chattering and Filippov repair.
//!
//! A relaxed control puts per-step convex weights on the dictionary. The
//! horizon is cut into subintervals on which `∫ m` is small, each
//! subinterval is split into consecutive blocks in dictionary order with
//! lengths proportional to the average weights, and the resulting pure
//! signal is integrated along the relaxed curve. Filippov then lands on an
//! admissible trajectory near that reference.

use rayon::prelude::*;

use super::{filippov, FilippovOptions, FilippovResult, InclusionProblem, Reference};
use crate::dynamics::{flow, flow_along, ControlSignal, StepControl, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::estimates::{cauchy_lipschitz_envelope, certify, default_tolerance, Certificate};
use crate::measures::ParticleMeasure;
use crate::transport;

/// How the horizon is cut into subintervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Subdivision {
    /// Greedy on grid steps so that `∫ m <= δ' / (2 (1 + 2 R_r))` on each
    /// piece; needs `delta`.
    FromDelta,
    /// `N` pieces with equal step counts (up to one step).
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxOptions {
    pub delta: Option<f64>,
    pub subdivision: Subdivision,
    /// Largest admissible number of subintervals; the grid step count when
    /// absent.
    pub max_subintervals: Option<usize>,
    pub filippov: FilippovOptions,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self {
            delta: None,
            subdivision: Subdivision::FromDelta,
            max_subintervals: None,
            filippov: FilippovOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelaxResult {
    pub relaxed: Trajectory,
    /// Pure chattering signal integrated along the relaxed curve.
    pub chattering: Trajectory,
    pub filippov: FilippovResult,
    /// Step ranges `[a, b)` of the subintervals.
    pub subintervals: Vec<(usize, usize)>,
    pub delta_prime: Option<f64>,
    /// `W_p(μ(t_k), μ_δ(t_k))` at every node.
    pub distances: Vec<f64>,
    pub achieved_sup_distance: f64,
    /// `sup_k W_1(μ(t_k), μ_δ(t_k)) <= δ`, when `δ` is given.
    pub delta_certificate: Option<Certificate>,
}

/// `δ' = δ / [(1 + ‖L_K‖₁ exp(C_{K,1}(T) + ‖l_K‖₁)) (2 + ‖l_K‖₁) exp(‖l_K‖₁)]`.
pub fn delta_prime(problem: &InclusionProblem, delta: f64) -> f64 {
    let b = &problem.bounds;
    let nl = b.l_k.integral(0.0, b.horizon);
    let nbig = b.big_l_k.integral(0.0, b.horizon);
    // C_1 = C_1' = 1.
    let c_k1 = nbig * nl.exp();
    delta / ((1.0 + nbig * (c_k1 + nl).exp()) * (2.0 + nl) * nl.exp())
}

fn greedy_pieces(problem: &InclusionProblem, grid: &TimeGrid, threshold: f64) -> Result<Vec<(usize, usize)>> {
    let m = &problem.bounds.m;
    let mut pieces = Vec::new();
    let mut a = 0;
    let mut acc = 0.0;
    for k in 0..grid.steps() {
        let ik = m.integral(grid.t(k), grid.t(k + 1));
        if ik > threshold {
            return Err(Error::Refusal(format!(
                "grid step {k} carries ∫m = {ik:e} above the subinterval threshold {threshold:e}; \
                 refine the grid to at least {} steps",
                (m.integral(grid.start(), grid.horizon()) / threshold).ceil()
            )));
        }
        if acc + ik > threshold && k > a {
            pieces.push((a, k));
            a = k;
            acc = 0.0;
        }
        acc += ik;
    }
    pieces.push((a, grid.steps()));
    Ok(pieces)
}

fn equal_pieces(steps: usize, n: usize) -> Result<Vec<(usize, usize)>> {
    if n == 0 {
        return Err(Error::Invalid("subdivision needs at least one piece".into()));
    }
    if n > steps {
        return Err(Error::Refusal(format!(
            "{n} subintervals need at least {n} grid steps, the grid has {steps}"
        )));
    }
    Ok((0..n).map(|i| (i * steps / n, (i + 1) * steps / n)).collect())
}

fn step_weights(signal: &ControlSignal, k: usize, entries: usize) -> Vec<f64> {
    match &signal.steps[k] {
        StepControl::Mix(w) => w.clone(),
        StepControl::Select(j) => {
            let mut w = vec![0.0; entries];
            w[*j] = 1.0;
            w
        }
    }
}

/// Pure selections realizing the average weights on every piece. Step `k`
/// goes to the block containing its midpoint.
fn chatter(
    signal: &ControlSignal,
    grid: &TimeGrid,
    pieces: &[(usize, usize)],
    entries: usize,
) -> Result<Vec<usize>> {
    let mut sel = vec![0; grid.steps()];
    for &(a, b) in pieces {
        let (ta, tb) = (grid.t(a), grid.t(b));
        let mut mass = vec![0.0; entries];
        for k in a..b {
            let w = step_weights(signal, k, entries);
            for (m, wj) in mass.iter_mut().zip(w) {
                *m += grid.h(k) * wj;
            }
        }
        let active = mass.iter().filter(|&&m| m > 0.0).count();
        if active > b - a {
            return Err(Error::Refusal(format!(
                "subinterval [{ta}, {tb}] has {} steps for {active} active controls; refine the grid",
                b - a
            )));
        }
        let last = mass.iter().rposition(|&m| m > 0.0).unwrap_or(0);
        let mut cum = Vec::with_capacity(entries);
        let mut s = 0.0;
        for m in &mass {
            s += m;
            cum.push(s);
        }
        for k in a..b {
            let mid = 0.5 * (grid.t(k) + grid.t(k + 1)) - ta;
            sel[k] = (0..entries)
                .find(|&j| mass[j] > 0.0 && mid < cum[j])
                .unwrap_or(last);
        }
    }
    Ok(sel)
}

/// Chattering approximation of the relaxed trajectory driven by `weights`
/// (one `Mix` or `Select` per step), followed by Filippov repair.
pub fn relax(
    problem: &InclusionProblem,
    weights: &ControlSignal,
    mu0: &ParticleMeasure,
    grid: &TimeGrid,
    opts: RelaxOptions,
) -> Result<RelaxResult> {
    let field = problem.field.as_ref();
    let dict = &problem.dictionary;
    let entries = dict.len();
    if let Some(d) = opts.delta {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Invalid(format!("delta must be positive, got {d}")));
        }
    }
    let relaxed = flow(field, dict, weights, mu0, grid)?;

    let cap = opts.max_subintervals.unwrap_or(grid.steps());
    let (rr, mr) = cauchy_lipschitz_envelope(&problem.bounds);
    let dp = opts.delta.map(|d| delta_prime(problem, d));
    let pieces = match opts.subdivision {
        Subdivision::Count(n) => equal_pieces(grid.steps(), n)?,
        Subdivision::FromDelta => {
            let dp = dp.ok_or_else(|| Error::Invalid("subdivision from delta needs delta".into()))?;
            greedy_pieces(problem, grid, dp / (2.0 * (1.0 + 2.0 * rr)))?
        }
    };
    if pieces.len() > cap {
        return Err(Error::Refusal(format!(
            "subdivision needs {} pieces, the cap is {cap}",
            pieces.len()
        )));
    }

    let sel = chatter(weights, grid, &pieces, entries)?;
    let chattering = flow_along(
        field,
        dict,
        &ControlSignal::from_indices(&sel),
        &relaxed.states,
        mu0,
        grid,
    )?;
    let reference = Reference::from_trajectory(
        problem.field.clone(),
        dict.clone(),
        chattering.clone(),
        problem.lattice.radius,
    );
    let fil = filippov(problem, &reference, mu0, opts.filippov)?;

    let landed = &fil.selection.trajectory.states;
    let pairs: Vec<(f64, f64)> = relaxed
        .states
        .par_iter()
        .zip(landed)
        .map(|(a, b)| Ok((transport::distance(a, b, problem.p())?, transport::distance(a, b, 1.0)?)))
        .collect::<Result<Vec<_>>>()?;
    let distances: Vec<f64> = pairs.iter().map(|d| d.0).collect();
    let achieved = distances.iter().cloned().fold(0.0, f64::max);

    let delta_certificate = match opts.delta {
        Some(d) => {
            let w1: Vec<f64> = pairs.iter().map(|d| d.1).collect();
            let allowance = grid.max_step() * mr.max();
            Some(
                certify(
                    "relax-delta",
                    grid.times(),
                    &w1,
                    &vec![d; w1.len()],
                    default_tolerance(d, allowance),
                )?
                .with_note(format!("W_1 distances; allowance h*max(m_r) = {allowance:e}")),
            )
        }
        None => None,
    };

    Ok(RelaxResult {
        relaxed,
        chattering,
        filippov: fil,
        subintervals: pieces,
        delta_prime: dp,
        distances,
        achieved_sup_distance: achieved,
        delta_certificate,
    })
}
