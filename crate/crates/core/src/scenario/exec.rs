//! Per-kind execution of a loaded scenario.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::schema::{Built, Kind, Scenario};
use super::{load, Loaded, Results, Writer};
use crate::dynamics::{check_c1_c2, check_di, flow, ControlSignal, ControlledField, Trajectory};
use crate::error::{Error, Result};
use crate::estimates::{
    cauchy_lipschitz_envelope, certify, default_tolerance, gronwall_curve, momentum_bound, Certificate,
    HypothesisBounds,
};
use crate::inclusion::{
    compactness_harness, filippov, relax, BatterySize, CompactnessOptions, FilippovOptions, InclusionProblem,
    Lattice, Reference, RelaxOptions, Subdivision, TrajectorySelection, LATTICE_DIVISIONS,
};
use crate::measures::ParticleMeasure;
use crate::ocp::{minimizing_sequence_experiment, solve_direct, value_functions, MayerProblem, ValueOptions};
use crate::transport;

#[derive(Serialize)]
struct TrajectoryJson<'a> {
    grid: &'a [f64],
    weights: &'a [f64],
    atoms: Vec<Vec<Vec<f64>>>,
}

fn trajectory_json<'a>(tr: &'a Trajectory) -> TrajectoryJson<'a> {
    TrajectoryJson {
        grid: tr.grid.times(),
        weights: tr.states[0].weights(),
        atoms: tr
            .states
            .iter()
            .map(|s| s.points().map(<[f64]>::to_vec).collect())
            .collect(),
    }
}

#[derive(Serialize)]
struct SelectionJson<'a> {
    grid: &'a [f64],
    weights: &'a [f64],
    atoms: Vec<Vec<Vec<f64>>>,
    selection: &'a [usize],
    mismatch: &'a [f64],
}

fn selection_json(s: &TrajectorySelection) -> SelectionJson<'_> {
    let t = trajectory_json(&s.trajectory);
    SelectionJson {
        grid: t.grid,
        weights: t.weights,
        atoms: t.atoms,
        selection: &s.selection,
        mismatch: &s.mismatch,
    }
}

fn signal_of(s: &Scenario, b: &Built) -> Result<ControlSignal> {
    match &s.control {
        Some(c) => c.build(b.grid.steps()),
        None => Ok(ControlSignal::constant(0, b.grid.steps())),
    }
}

fn p_of(b: &Built) -> f64 {
    b.bounds.as_ref().map_or(1.0, |x| x.p)
}

/// Support and momentum estimates along a flow.
fn flow_certificates(bounds: &HypothesisBounds, tr: &Trajectory) -> Result<Vec<Certificate>> {
    let times = tr.grid.times();
    let (rr, _) = cauchy_lipschitz_envelope(bounds);
    let radius: Vec<f64> = tr.states.iter().map(ParticleMeasure::support_radius).collect();
    let support = certify("support-envelope", times, &radius, &vec![rr; times.len()], 0.01 * rr)?
        .with_note("tolerance 1% of R_r");
    let mp0 = tr.states[0].momentum(bounds.p)?;
    let lhs = tr
        .states
        .iter()
        .map(|s| s.momentum(bounds.p))
        .collect::<Result<Vec<f64>>>()?;
    let rhs = times
        .iter()
        .map(|&t| momentum_bound(bounds, mp0, t))
        .collect::<Result<Vec<f64>>>()?;
    let scale = rhs.iter().cloned().fold(1.0, f64::max);
    let momentum = certify("momentum", times, &lhs, &rhs, default_tolerance(scale, 0.0))?;
    Ok(vec![support, momentum])
}

fn moments_csv(w: &Writer, tr: &Trajectory, p: f64) -> Result<super::Artifact> {
    let d = tr.states[0].dim();
    let mut header = vec!["t", "support_radius", "momentum"];
    let names: Vec<String> = (0..d).map(|i| format!("mean_{i}")).collect();
    header.extend(names.iter().map(String::as_str));
    let rows = tr
        .states
        .iter()
        .zip(tr.grid.times())
        .map(|(s, &t)| {
            let mut r = vec![t, s.support_radius(), s.momentum(p)?];
            r.extend(s.mean());
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    w.csv("moments.csv", &header, &rows)
}

fn simulate(s: &Scenario, b: &Built, w: &Writer) -> Result<Results> {
    let signal = signal_of(s, b)?;
    let tr = flow(b.field.as_ref(), &b.dictionary, &signal, &b.mu0, &b.grid)?;
    let mut r = Results::default();
    r.artifacts.push(w.json("trajectory.json", &trajectory_json(&tr))?);
    r.artifacts.push(moments_csv(w, &tr, p_of(b))?);
    if let Some(bounds) = &b.bounds {
        r.certificates.extend(flow_certificates(bounds, &tr)?);
    }
    Ok(r)
}

fn certify_kind(s: &Scenario, b: &Built, w: &Writer, base: &Path) -> Result<Results> {
    let bounds = b
        .bounds
        .as_ref()
        .ok_or_else(|| Error::Invalid("certify scenarios need [bounds]".into()))?;
    let spec = s.certify.clone().unwrap_or(super::schema::CertifySpec {
        perturbation: None,
        perturbation_initial: None,
        battery_points: None,
        battery_pairs: None,
    });
    let perturbed = match &spec.perturbation {
        Some(f) => {
            let field = f.build()?;
            if field.control_dim() != b.field.control_dim() || f.dim != s.field.dim {
                return Err(Error::Invalid("perturbation must match the field's dimensions".into()));
            }
            let nu0 = match &spec.perturbation_initial {
                Some(m) => m.build(s.field.dim, base)?,
                None => b.mu0.clone(),
            };
            Some((field, nu0))
        }
        None => None,
    };
    let size = BatterySize {
        points: spec.battery_points.unwrap_or(BatterySize::default().points),
        pairs: spec.battery_pairs.unwrap_or(BatterySize::default().pairs),
        ..Default::default()
    };
    let k_radius = bounds.k_radius();
    let battery = crate::dynamics::SampleBattery::random(
        s.seed,
        s.field.dim,
        k_radius,
        bounds.horizon,
        b.dictionary.len(),
        size.points,
        size.pairs,
        size.atoms,
    );
    let report = check_c1_c2(b.field.as_ref(), &b.dictionary, bounds, &battery);
    let mut r = Results::default();
    r.artifacts.push(w.json("hypotheses.json", &report)?);
    r.certificates.push(
        certify(
            "hypotheses",
            &[0.0, 1.0],
            &[report.sublinear_ratio, report.lipschitz_ratio],
            &[1.0, 1.0],
            crate::dynamics::HYPOTHESIS_TOLERANCE,
        )?
        .with_note("sampled ratios: sublinear growth, Lipschitz in space"),
    );

    let signal = signal_of(s, b)?;
    let tr = flow(b.field.as_ref(), &b.dictionary, &signal, &b.mu0, &b.grid)?;
    r.artifacts.push(w.json("trajectory.json", &trajectory_json(&tr))?);
    r.artifacts.push(moments_csv(w, &tr, bounds.p)?);
    r.certificates.extend(flow_certificates(bounds, &tr)?);

    if let Some((field, nu0)) = perturbed {
        let nu = flow(&field, &b.dictionary, &signal, &nu0, &b.grid)?;
        let lattice = Lattice::new(s.field.dim, k_radius, k_radius / LATTICE_DIVISIONS)?;
        let times = b.grid.times();
        let dev: Vec<f64> = (0..times.len())
            .into_par_iter()
            .map(|k| {
                let pts = lattice.with_atoms(&[&tr.states[k], &nu.states[k]]);
                let a = tr.driving_velocity(b.field.as_ref(), &b.dictionary, k, &pts);
                let c = nu.driving_velocity(&field, &b.dictionary, k, &pts);
                crate::inclusion::sup_distance(&a, &c, s.field.dim)
            })
            .collect();
        let dist_curve = tr
            .states
            .par_iter()
            .zip(&nu.states)
            .map(|(x, y)| transport::distance(x, y, bounds.p))
            .collect::<Result<Vec<f64>>>()?;
        let rhs = gronwall_curve(bounds, dist_curve[0], times, &dev)?;
        let allowance = bounds.l_k.max() * lattice.spacing;
        let scale = rhs.iter().cloned().fold(1.0, f64::max);
        let mut cert = certify("gronwall", times, &dist_curve, &rhs, default_tolerance(scale, allowance))?
            .with_note(format!("lattice allowance l_K*spacing = {allowance:e}"));
        if bounds.p > 2.0 {
            cert = cert.with_note("p > 2: lattice allowance carried over from p <= 2 unchanged");
        }
        r.certificates.push(cert);
        let rows: Vec<Vec<f64>> = (0..times.len())
            .map(|k| vec![times[k], dist_curve[k], rhs[k], dev[k]])
            .collect();
        r.artifacts
            .push(w.csv("gronwall.csv", &["t", "distance", "bound", "deviation"], &rows)?);
    }
    Ok(r)
}

fn filippov_opts(s: &Scenario) -> FilippovOptions {
    let mut o = FilippovOptions {
        seed: s.seed,
        ..Default::default()
    };
    if let Some(f) = &s.filippov {
        o.tol = f.tol;
        if let Some(m) = f.max_iter {
            o.max_iter = m;
        }
        o.enforce_hypotheses = f.enforce_hypotheses;
    }
    o
}

fn filippov_outputs(w: &Writer, r: &mut Results, out: &crate::inclusion::FilippovResult) -> Result<()> {
    r.artifacts.push(w.json("selection.json", &selection_json(&out.selection))?);
    let dc = &out.distance_certificate;
    let vc = &out.velocity_certificate;
    let rows: Vec<Vec<f64>> = (0..dc.t_grid.len())
        .map(|k| {
            vec![
                dc.t_grid[k],
                dc.lhs[k],
                dc.rhs[k],
                vc.lhs[k],
                vc.rhs[k],
                out.selection.mismatch[k],
            ]
        })
        .collect();
    r.artifacts.push(w.csv(
        "filippov.csv",
        &["t", "distance", "distance_bound", "velocity_gap", "velocity_bound", "mismatch"],
        &rows,
    )?);
    let sc = &out.stage_certificate;
    let rows: Vec<Vec<f64>> = (0..sc.t_grid.len())
        .map(|k| vec![sc.t_grid[k], sc.lhs[k], sc.rhs[k]])
        .collect();
    r.artifacts
        .push(w.csv("residuals.csv", &["stage", "residual", "bound"], &rows)?);
    r.certificates
        .extend([dc.clone(), vc.clone(), sc.clone()]);
    Ok(())
}

fn filippov_kind(s: &Scenario, b: &Built, w: &Writer, base: &Path) -> Result<Results> {
    let problem = s.inclusion(b)?;
    let spec = s
        .reference
        .as_ref()
        .ok_or_else(|| Error::Invalid("filippov scenarios need [reference]".into()))?;
    let wf: Arc<dyn ControlledField> = Arc::new(spec.field.build()?);
    if spec.field.dim != s.field.dim {
        return Err(Error::DimensionMismatch {
            expected: s.field.dim,
            got: spec.field.dim,
        });
    }
    let nu0 = match &spec.initial {
        Some(m) => m.build(s.field.dim, base)?,
        None => b.mu0.clone(),
    };
    let reference = Reference::open(wf, &spec.control, &nu0, &b.grid, problem.lattice.radius)?;
    let out = filippov(&problem, &reference, &b.mu0, filippov_opts(s))?;
    let mut r = Results::default();
    filippov_outputs(w, &mut r, &out)?;
    Ok(r)
}

fn relax_kind(s: &Scenario, b: &Built, w: &Writer) -> Result<Results> {
    let problem = s.inclusion(b)?;
    let spec = s
        .relax
        .as_ref()
        .ok_or_else(|| Error::Invalid("relax scenarios need [relax]".into()))?;
    let signal = spec.signal(b.grid.steps())?;
    let opts = RelaxOptions {
        delta: spec.delta,
        subdivision: match spec.subintervals {
            Some(n) => Subdivision::Count(n),
            None => Subdivision::FromDelta,
        },
        max_subintervals: spec.max_subintervals,
        filippov: filippov_opts(s),
    };
    let out = relax(&problem, &signal, &b.mu0, &b.grid, opts)?;
    let mut r = Results::default();
    filippov_outputs(w, &mut r, &out.filippov)?;
    if let Some(c) = &out.delta_certificate {
        r.certificates.push(c.clone());
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        achieved_sup_distance: f64,
        subintervals: &'a [(usize, usize)],
        delta: Option<f64>,
        delta_prime: Option<f64>,
        chattering: Vec<usize>,
    }
    r.artifacts.push(w.json(
        "relax.json",
        &Summary {
            achieved_sup_distance: out.achieved_sup_distance,
            subintervals: &out.subintervals,
            delta: spec.delta,
            delta_prime: out.delta_prime,
            chattering: out.chattering.signal().and_then(ControlSignal::selections).unwrap_or_default(),
        },
    )?);
    let rows: Vec<Vec<f64>> = b
        .grid
        .times()
        .iter()
        .zip(&out.distances)
        .map(|(&t, &d)| vec![t, d])
        .collect();
    r.artifacts.push(w.csv("relax.csv", &["t", "distance"], &rows)?);
    r.artifacts
        .push(w.json("relaxed.json", &trajectory_json(&out.relaxed))?);
    Ok(r)
}

fn constraint_certificates(p: &MayerProblem, tr: &Trajectory) -> Result<Vec<Certificate>> {
    let times = tr.grid.times();
    let run: Vec<f64> = tr.states.iter().map(|m| p.running_violation(m)).collect();
    let mut out = vec![certify("running-constraint", times, &run, &vec![p.eps_k; run.len()], 0.0)?];
    let t = *times.last().unwrap();
    out.push(certify(
        "terminal-constraint",
        &[t],
        &[p.terminal_violation(tr.final_state())],
        &[p.eps_q],
        0.0,
    )?);
    Ok(out)
}

fn ocp_kind(s: &Scenario, b: &Built, w: &Writer, base: &Path) -> Result<Results> {
    let problem = s.mayer(b, base)?;
    let spec = s.ocp.as_ref().unwrap();
    let sol = solve_direct(&problem, &b.mu0, &b.grid, spec.switch_budget)?;
    let mut r = Results::default();
    #[derive(Serialize)]
    struct Best<'a> {
        selection: &'a [usize],
        cost: f64,
        feasible: bool,
        violation: f64,
        switch_budget: usize,
        leaves: usize,
    }
    r.artifacts.push(w.json(
        "best_control.json",
        &Best {
            selection: &sol.best.selection,
            cost: sol.cost,
            feasible: sol.feasible,
            violation: sol.violation,
            switch_budget: spec.switch_budget,
            leaves: sol.leaves,
        },
    )?);
    r.artifacts.push(w.json("selection.json", &selection_json(&sol.best))?);
    let tr = &sol.best.trajectory;
    let rows: Vec<Vec<f64>> = tr
        .states
        .iter()
        .zip(tr.grid.times())
        .map(|(m, &t)| vec![t, problem.running_violation(m), problem.eps_k])
        .collect();
    r.artifacts
        .push(w.csv("constraints.csv", &["t", "running_violation", "eps_k"], &rows)?);
    if !sol.feasible {
        r.refusal = Some(format!(
            "no feasible signal within {} switches; least violation {:e}",
            spec.switch_budget, sol.violation
        ));
        return Ok(r);
    }
    r.certificates.extend(constraint_certificates(&problem, tr)?);
    if let Some(v) = &spec.value {
        let d = ValueOptions::default();
        let opts = ValueOptions {
            resolution: v.resolution.unwrap_or(d.resolution),
            segments: v.segments.unwrap_or(d.segments),
            switch_budget: spec.switch_budget,
            ..d
        };
        let k = b
            .grid
            .index_of(v.tau)
            .ok_or_else(|| Error::Invalid(format!("tau = {} is not a grid node", v.tau)))?;
        let rep = value_functions(&problem, v.tau, &tr.states[k], &b.grid, opts)?;
        let gap_tol = v.gap_tolerance.unwrap_or(0.02);
        r.certificates.push(
            certify("value-gap", &[v.tau], &[rep.v - rep.v_co], &[gap_tol], 0.0)?
                .with_note(format!("V = {}, V_co = {}", rep.v, rep.v_co)),
        );
        #[derive(Serialize)]
        struct ValueJson<'a> {
            tau: f64,
            v: f64,
            v_co: f64,
            v_search: f64,
            exhaustive: bool,
            relaxed_weights: &'a Option<Vec<Vec<f64>>>,
            notes: &'a [String],
        }
        r.artifacts.push(w.json(
            "value.json",
            &ValueJson {
                tau: v.tau,
                v: rep.v,
                v_co: rep.v_co,
                v_search: rep.v_search,
                exhaustive: rep.exhaustive,
                relaxed_weights: &rep.relaxed_weights,
                notes: &rep.notes,
            },
        )?);
    }
    Ok(r)
}

fn compactness_kind(s: &Scenario, b: &Built, w: &Writer, base: &Path) -> Result<Results> {
    let problem = s.inclusion(b)?;
    let spec = s
        .compactness
        .as_ref()
        .ok_or_else(|| Error::Invalid("compactness scenarios need [compactness]".into()))?;
    let signals = match (&spec.signals, &spec.zigzag) {
        (Some(list), None) => list.iter().map(|i| ControlSignal::from_indices(i)).collect(),
        (None, Some(z)) => z.build(b.grid.steps())?,
        _ => return Err(Error::Invalid("compactness needs exactly one of `signals` or `zigzag`".into())),
    };
    let d = CompactnessOptions::default();
    let opts = CompactnessOptions {
        epsilon: spec.epsilon.unwrap_or(d.epsilon),
        tol: spec.tol.unwrap_or(d.tol),
        seed: s.seed,
        ..d
    };
    let mut r = Results::default();
    let (report, seq) = match &spec.cost {
        Some(c) => {
            let mayer = MayerProblem::new(problem.clone(), c.build(s.field.dim, base)?);
            let tol = spec.lsc_tolerance.unwrap_or(1e-3);
            let seq = minimizing_sequence_experiment(&mayer, &b.mu0, &b.grid, &signals, opts, tol)?;
            (seq.compactness.clone(), Some(seq))
        }
        None => (compactness_harness(&problem, &b.mu0, &b.grid, &signals, opts)?, None),
    };
    r.artifacts.push(w.json("cluster.json", &selection_json(&report.cluster))?);
    r.artifacts.push(w.json("candidate.json", &selection_json(&report.candidate))?);
    #[derive(Serialize)]
    struct ReportJson<'a> {
        members: &'a [usize],
        diameters: &'a [f64],
        distance_matrix: &'a [Vec<f64>],
        window: usize,
        admissibility: &'a [f64],
        admissible: bool,
        candidate_gap: f64,
        convexity_defect: f64,
        notes: &'a [String],
        #[serde(skip_serializing_if = "Option::is_none")]
        costs: Option<&'a [f64]>,
        #[serde(skip_serializing_if = "Option::is_none")]
        liminf: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        cluster_cost: Option<f64>,
    }
    r.artifacts.push(w.json(
        "compactness.json",
        &ReportJson {
            members: &report.members,
            diameters: &report.diameters,
            distance_matrix: &report.distance_matrix,
            window: report.window,
            admissibility: &report.admissibility,
            admissible: report.admissible,
            candidate_gap: report.candidate_gap,
            convexity_defect: report.convexity_defect,
            notes: seq.as_ref().map_or(&report.notes, |q| &q.notes),
            costs: seq.as_ref().map(|q| q.costs.as_slice()),
            liminf: seq.as_ref().map(|q| q.liminf),
            cluster_cost: seq.as_ref().map(|q| q.cluster_cost),
        },
    )?);
    let windows: Vec<f64> = (0..report.admissibility.len())
        .map(|i| b.grid.t(i * report.window))
        .collect();
    r.certificates.push(certify(
        "compactness-admissibility",
        &windows,
        &report.admissibility,
        &vec![opts.tol; windows.len()],
        0.0,
    )?);
    if let Some(q) = &seq {
        r.certificates.push(certify(
            "lower-semicontinuity",
            &[b.grid.horizon()],
            &[q.cluster_cost],
            &[q.liminf + q.tolerance],
            0.0,
        )?);
        let inc_feasible = if q.cluster_feasible { 0.0 } else { 1.0 };
        r.certificates
            .push(certify("cluster-feasibility", &[b.grid.horizon()], &[inc_feasible], &[0.0], 0.0)?);
    }
    Ok(r)
}

pub(crate) fn execute(loaded: &Loaded, w: &Writer) -> Result<Results> {
    let s = &loaded.scenario;
    let b = s.build(&loaded.base)?;
    match s.kind {
        Kind::Simulate => simulate(s, &b, w),
        Kind::Certify => certify_kind(s, &b, w, &loaded.base),
        Kind::Filippov => filippov_kind(s, &b, w, &loaded.base),
        Kind::Relax => relax_kind(s, &b, w),
        Kind::Ocp => ocp_kind(s, &b, w, &loaded.base),
        Kind::Compactness => compactness_kind(s, &b, w, &loaded.base),
    }
}

fn battery_line(problem: &InclusionProblem, seed: u64) -> Result<String> {
    let battery = problem.battery(seed, BatterySize::default());
    let rep = check_di(problem.field.as_ref(), &problem.dictionary, &problem.bounds, &battery)?;
    if !rep.pass {
        return Err(Error::Refusal(format!(
            "hypothesis check failed: {}",
            rep.failures.join("; ")
        )));
    }
    Ok(format!(
        "hypotheses ok: sublinear ratio {:.6}, Lipschitz ratio {:.6}, measure excess {:e}",
        rep.sublinear_ratio,
        rep.lipschitz_ratio,
        rep.measure_lipschitz_excess.unwrap_or(0.0)
    ))
}

pub(crate) fn validate(path: &Path) -> Result<Vec<String>> {
    let loaded = load(path)?;
    let s = &loaded.scenario;
    let b = s.build(&loaded.base)?;
    let mut lines = vec![format!("schema ok: {} scenario, config {}", s.kind.name(), loaded.hash)];
    match s.kind {
        Kind::Simulate | Kind::Certify => {
            if let Some(bounds) = &b.bounds {
                let battery = crate::dynamics::SampleBattery::random(
                    s.seed,
                    s.field.dim,
                    bounds.k_radius(),
                    bounds.horizon,
                    b.dictionary.len(),
                    BatterySize::default().points,
                    BatterySize::default().pairs,
                    BatterySize::default().atoms,
                );
                let rep = check_c1_c2(b.field.as_ref(), &b.dictionary, bounds, &battery);
                if !rep.pass {
                    return Err(Error::Refusal(format!(
                        "hypothesis check failed: {}",
                        rep.failures.join("; ")
                    )));
                }
                lines.push(format!(
                    "hypotheses ok: sublinear ratio {:.6}, Lipschitz ratio {:.6}",
                    rep.sublinear_ratio, rep.lipschitz_ratio
                ));
            }
        }
        Kind::Ocp => {
            let m = s.mayer(&b, &loaded.base)?;
            lines.push(battery_line(&m.inclusion, s.seed)?);
        }
        _ => {
            let p = s.inclusion(&b)?;
            lines.push(battery_line(&p, s.seed)?);
        }
    }
    Ok(lines)
}
