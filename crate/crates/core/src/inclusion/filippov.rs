//! Picard-type construction of an admissible trajectory near a reference.
//!
//! Stage 1 picks, at every node, the entry nearest to the reference velocity
//! `ŵ` evaluated along `ν`. Stage `n + 1` picks the entry nearest to the
//! stage-`n` velocity, evaluated along `μ_n`, and integrates the linear
//! continuity equation along `μ_n`. The iteration stops once consecutive
//! curves agree within `tol` in `sup_k W_p`; the returned trajectory is the
//! self-consistent flow of the final pure selections.

use rayon::prelude::*;

use super::{closed_loop, BatterySize, mismatch, sup_distance, InclusionProblem, Reference, TrajectorySelection};
use crate::dynamics::{flow_along, ControlSignal, Trajectory};
use crate::error::{Error, Result};
use crate::estimates::{
    cauchy_lipschitz_envelope, certify, default_tolerance, filippov_envelopes, Certificate,
    FilippovEnvelopes,
};
use crate::measures::ParticleMeasure;
use crate::transport;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilippovOptions {
    /// Stopping tolerance on the stage residual; `1e-6 R` when absent.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Refuse when the sampled hypothesis battery fails.
    pub enforce_hypotheses: bool,
    pub seed: u64,
}

impl Default for FilippovOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 50,
            enforce_hypotheses: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilippovResult {
    pub selection: TrajectorySelection,
    /// `W_p(μ(t_k), ν(t_k)) <= χ_p exp(C_{K,p})`.
    pub distance_certificate: Certificate,
    /// `‖v(t_k) - ŵ(t_k)‖ <= L_K χ_p exp(C_{K,p}) + η`.
    pub velocity_certificate: Certificate,
    /// Stage residuals against `χ_p(T) C_{K,p}(T)^n / n!`.
    pub stage_certificate: Certificate,
    pub envelopes: FilippovEnvelopes,
    pub distances: Vec<f64>,
    pub velocity_gaps: Vec<f64>,
    /// `sup_k W_p(μ_{n+1}, μ_n)` for `n = 1, 2, ...`.
    pub residuals: Vec<f64>,
    /// Discretization allowance `h · max m_r` added to the tolerances.
    pub allowance: f64,
}

fn sup_w(a: &[ParticleMeasure], b: &[ParticleMeasure], p: f64) -> Result<f64> {
    let d = a
        .par_iter()
        .zip(b)
        .map(|(x, y)| transport::distance(x, y, p))
        .collect::<Result<Vec<f64>>>()?;
    Ok(d.into_iter().fold(0.0, f64::max))
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Runs the iteration from `mu0` near `reference`.
pub fn filippov(
    problem: &InclusionProblem,
    reference: &Reference,
    mu0: &ParticleMeasure,
    opts: FilippovOptions,
) -> Result<FilippovResult> {
    let field = problem.field.as_ref();
    let dict = &problem.dictionary;
    let p = problem.p();
    let nu = &reference.trajectory;
    let grid = &nu.grid;
    let nodes = grid.times().len();
    let steps = grid.steps();
    let (rr, mr) = cauchy_lipschitz_envelope(&problem.bounds);
    let tol = opts.tol.unwrap_or(1e-6 * rr);
    if mu0.dim() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: mu0.dim(),
        });
    }
    if opts.enforce_hypotheses {
        problem.validate_hypotheses(&problem.battery(opts.seed, BatterySize::default()))?;
    }

    // Stage 1: nearest entries to the reference velocity along ν.
    let eta_sel = mismatch(problem, reference);
    let eta: Vec<f64> = eta_sel.iter().map(|&(_, d)| d).collect();
    let mut sel: Vec<usize> = eta_sel[..steps].iter().map(|&(j, _)| j).collect();
    let mut prev_curve: Vec<ParticleMeasure> = nu.states.clone();
    let mut cur: Trajectory = flow_along(
        field,
        dict,
        &ControlSignal::from_indices(&sel),
        &prev_curve,
        mu0,
        grid,
    )?;

    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        // v_n(t_k) = v̂(t_k, μ_{n-1}(t_k), ω_{sel(k)}); pick the nearest entry along μ_n.
        let next_sel: Vec<usize> = (0..steps)
            .into_par_iter()
            .map(|k| {
                let t = grid.t(k);
                let mu_n = &cur.states[k];
                let pts = problem.lattice.with_atoms(&[mu_n]);
                let v_n = problem.entry_velocity(t, &prev_curve[k], sel[k], &pts);
                problem.nearest_selection(t, mu_n, &pts, &v_n).0
            })
            .collect();
        let next = flow_along(
            field,
            dict,
            &ControlSignal::from_indices(&next_sel),
            &cur.states,
            mu0,
            grid,
        )?;
        let r = sup_w(&next.states, &cur.states, p)?;
        residuals.push(r);
        prev_curve = std::mem::replace(&mut cur, next).states;
        sel = next_sel;
        if r < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: residuals.len(),
            last: residuals.last().copied().unwrap_or(f64::NAN),
            history: residuals,
        });
    }

    let traj = closed_loop(problem, &sel, mu0, grid)?;
    let times = grid.times().to_vec();
    let w0 = transport::distance(mu0, &nu.states[0], p)?;
    let env = filippov_envelopes(&problem.bounds, w0, &times, &eta)?;
    let bound = env.distance_bound();
    let distances = traj
        .states
        .par_iter()
        .zip(&nu.states)
        .map(|(a, b)| transport::distance(a, b, p))
        .collect::<Result<Vec<f64>>>()?;

    let allowance = grid.max_step() * mr.max();
    let scale = bound.iter().cloned().fold(1.0, f64::max);
    let distance_certificate = certify(
        "filippov-distance",
        &times,
        &distances,
        &bound,
        default_tolerance(scale, allowance),
    )?
    .with_note(format!("allowance h*max(m_r) = {allowance:e}"));

    // Velocity gap on K_ν: the lattice and the reference atoms.
    let velocity_gaps: Vec<f64> = (0..nodes)
        .into_par_iter()
        .map(|k| {
            let nu_k = &nu.states[k];
            let pts = problem.lattice.with_atoms(&[nu_k]);
            let v = traj.driving_velocity(field, dict, k, &pts);
            let w = reference.velocity(k, &pts);
            sup_distance(&v, &w, problem.dim())
        })
        .collect();
    let velocity_bound: Vec<f64> = (0..nodes)
        .map(|k| problem.bounds.big_l_k.eval(times[k]) * bound[k] + eta[k])
        .collect();
    let vscale = velocity_bound.iter().cloned().fold(1.0, f64::max);
    let lattice_allowance = problem.bounds.l_k.max() * problem.lattice.spacing;
    let velocity_certificate = certify(
        "filippov-velocity",
        &times,
        &velocity_gaps,
        &velocity_bound,
        default_tolerance(vscale, allowance),
    )?
    .with_note(format!(
        "evaluated on the lattice of K_nu plus reference atoms; lattice error l_K*spacing = {lattice_allowance:e}"
    ));

    let chi_t = *env.chi.last().unwrap();
    let c_t = *env.c_kp.last().unwrap();
    let stage_idx: Vec<f64> = (1..=residuals.len()).map(|n| n as f64).collect();
    let stage_bound: Vec<f64> = (1..=residuals.len())
        .map(|n| chi_t * c_t.powi(n as i32) / factorial(n))
        .collect();
    let stage_certificate = certify(
        "filippov-stages",
        &stage_idx,
        &residuals,
        &stage_bound,
        default_tolerance(chi_t, allowance),
    )?
    .with_note("grid is the stage index n");

    Ok(FilippovResult {
        selection: TrajectorySelection {
            trajectory: traj,
            selection: sel,
            mismatch: eta,
        },
        distance_certificate,
        velocity_certificate,
        stage_certificate,
        envelopes: env,
        distances,
        velocity_gaps,
        residuals,
        allowance,
    })
}
