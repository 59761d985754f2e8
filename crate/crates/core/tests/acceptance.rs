//! Acceptance suite. Each test prints one verdict line with the measured
//! quantity and the pinned tolerance, then asserts it.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wassinc::dynamics::{
    check_c1_c2, flow, flow_open, weak_residual, ControlDictionary, ControlSignal, ControlledField, FieldSpec,
    Modulation, PlaneWave, SampleBattery, TestFunction, TimeGrid, Trajectory,
};
use wassinc::estimates::{cauchy_lipschitz_envelope, constants, gronwall_curve, momentum_bound, HypothesisBounds};
use wassinc::inclusion::{
    filippov, relax, sup_distance, CompactnessOptions, FilippovOptions, InclusionProblem, Lattice, Reference,
    RelaxOptions, Subdivision, LATTICE_DIVISIONS,
};
use wassinc::ocp::{
    minimizing_sequence_experiment, solve_direct, value_functions, Constraint, Cost, CostKind, MayerProblem,
    ValueOptions,
};
use wassinc::transport::{brute_force_wasserstein, distance, wasserstein};
use wassinc::ParticleMeasure;

fn verdict(label: &str, ok: bool, detail: String) -> bool {
    println!("{} {label}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn random_uniform(rng: &mut ChaCha8Rng, n: usize, d: usize, spread: f64) -> ParticleMeasure {
    let pts = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-spread..spread)).collect())
        .collect();
    ParticleMeasure::uniform(d, pts).unwrap()
}

fn random_weighted(rng: &mut ChaCha8Rng, n: usize, d: usize) -> ParticleMeasure {
    let pts = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    ParticleMeasure::normalized(d, pts, w).unwrap()
}

#[test]
fn transport_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let n = rng.gen_range(1..=6);
        let d = rng.gen_range(1..=3);
        let p = if i % 2 == 0 { 1.0 } else { 2.0 };
        let mu = random_uniform(&mut rng, n, d, 2.0);
        let nu = random_uniform(&mut rng, n, d, 2.0);
        let (w, _) = wasserstein(&mu, &nu, p).unwrap();
        worst = worst.max((w - brute_force_wasserstein(&mu, &nu, p).unwrap()).abs());
    }
    assert!(verdict(
        "exact transport equals permutation search",
        worst <= 1e-9,
        format!("max |W - W_brute| = {worst:.3e} over 200 instances, tol 1e-9")
    ));
}

#[test]
fn metric_axioms_and_ordering() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut triangle, mut order, mut symmetry): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..200 {
        let d = rng.gen_range(1..=3);
        let (a, b, c) = (rng.gen_range(1..=7), rng.gen_range(1..=7), rng.gen_range(1..=7));
        let x = random_weighted(&mut rng, a, d);
        let y = random_weighted(&mut rng, b, d);
        let z = random_weighted(&mut rng, c, d);
        for p in [1.0, 2.0] {
            let (xy, yz, xz) = (
                distance(&x, &y, p).unwrap(),
                distance(&y, &z, p).unwrap(),
                distance(&x, &z, p).unwrap(),
            );
            triangle = triangle.max(xz - xy - yz);
            symmetry = symmetry.max((xy - distance(&y, &x, p).unwrap()).abs());
        }
        order = order.max(distance(&x, &y, 1.0).unwrap() - distance(&x, &y, 2.0).unwrap());
    }
    let ok = triangle <= 1e-9 && order <= 1e-9 && symmetry <= 1e-9;
    assert!(verdict(
        "triangle inequality, symmetry and W_1 <= W_2",
        ok,
        format!("worst triangle excess {triangle:.3e}, ordering excess {order:.3e}, asymmetry {symmetry:.3e}, tol 1e-9")
    ));
}

/// Fields with `|v| <= 1 + |x|` on the whole space.
fn field_battery(d: usize) -> Vec<(String, Arc<dyn ControlledField>)> {
    let mut out: Vec<(String, Arc<dyn ControlledField>)> = Vec::new();
    let mut push = |name: &str, spec: FieldSpec| out.push((name.to_string(), Arc::new(spec.build().unwrap())));
    push("zero", FieldSpec::preset("zero", d));
    push(
        "constant-drift",
        FieldSpec {
            drift: Some((0..d).map(|i| if i == 0 { 0.6 } else { -0.3 }).collect()),
            ..FieldSpec::preset("constant-drift", d)
        },
    );
    push(
        "contraction",
        FieldSpec {
            rate: Some(0.8),
            ..FieldSpec::preset("linear-contraction", d)
        },
    );
    push(
        "kuramoto",
        FieldSpec {
            rate: Some(0.5),
            ..FieldSpec::preset("kuramoto", d)
        },
    );
    // Saturates the growth bound: v = x + e_1 along the first axis.
    let mut lin = vec![0.0; d * d];
    for i in 0..d {
        lin[i * d + i] = 1.0;
    }
    let mut drift = vec![0.0; d];
    drift[0] = 1.0;
    push(
        "expansion",
        FieldSpec {
            linear: Some(lin),
            drift: Some(drift),
            ..FieldSpec::preset("affine", d)
        },
    );
    push(
        "modulated",
        FieldSpec {
            rate: Some(0.5),
            modulation: Some(Modulation {
                amplitude: vec![0.4; d],
                frequency: 3.0,
                phase: 0.2,
            }),
            ..FieldSpec::preset("linear-contraction", d)
        },
    );
    out
}

fn battery_flows(p: f64) -> Vec<(String, HypothesisBounds, Trajectory, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut out = Vec::new();
    for d in [1, 2] {
        for (name, field) in field_battery(d) {
            let mut mu0 = random_uniform(&mut rng, 12, d, 1.0);
            // Put one atom on the unit sphere so that r = 1 is attained.
            let mut coords = mu0.coords().to_vec();
            coords[..d].fill(0.0);
            coords[0] = 1.0;
            mu0 = mu0.with_coords(coords).unwrap();
            let bounds = HypothesisBounds::constant(p, 1.0, 1.0, 1.0, 1.0, 0.0).unwrap();
            let dict = ControlDictionary::trivial();
            let bat = SampleBattery::random(5, d, bounds.k_radius(), 1.0, 1, 200, 0, 4);
            let valid = check_c1_c2(field.as_ref(), &dict, &bounds, &bat).sublinear_ratio <= 1.0 + 1e-6;
            let tr = flow(field.as_ref(), &dict, &ControlSignal::constant(0, 100), &mu0, &TimeGrid::uniform(1.0, 100).unwrap())
                .unwrap();
            out.push((format!("{name}/d={d}"), bounds, tr, valid));
        }
    }
    out
}

#[test]
fn support_stays_inside_the_envelope() {
    let b = HypothesisBounds::constant(1.0, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
    let (rr, _) = cauchy_lipschitz_envelope(&b);
    let oracle = (1.0 + 1.0) * 1f64.exp();
    let mut ok = verdict(
        "support envelope closed form",
        (rr - oracle).abs() < 1e-12,
        format!("R_r = {rr:.6} for r = 1, |m|_1 = 1; expected 2e = {oracle:.6}"),
    );
    let mut worst: f64 = 0.0;
    for (name, _, tr, valid) in battery_flows(1.0) {
        assert!(valid, "{name} fails the growth check");
        let reach = tr.states.iter().map(ParticleMeasure::support_radius).fold(0.0, f64::max);
        worst = worst.max(reach / (oracle * 1.01));
    }
    ok &= verdict(
        "support radius under R_r (1 + 1%) on the field battery",
        worst <= 1.0,
        format!("largest radius / (1.01 R_r) = {worst:.4} over 12 fields"),
    );
    assert!(ok);
}

#[test]
fn momentum_estimate_holds() {
    let (c1, c1p) = constants(1.0).unwrap();
    let (c2, c2p) = constants(2.0).unwrap();
    // C_p = 2^{(p-1)/p}, C_p' = 2^{p-1}/p.
    let mut ok = verdict(
        "momentum constants",
        c1 == 1.0 && c1p == 1.0 && (c2 - 2f64.sqrt()).abs() < 1e-15 && c2p == 1.0,
        format!("(C_1, C_1') = ({c1}, {c1p}), (C_2, C_2') = ({c2:.6}, {c2p})"),
    );
    let mut worst = f64::INFINITY;
    for p in [1.0, 2.0] {
        let (cp, cpp) = (2f64.powf((p - 1.0) / p), 2f64.powf(p - 1.0) / p);
        for (name, bounds, tr, valid) in battery_flows(p) {
            assert!(valid, "{name}");
            let m0 = tr.states[0].momentum(p).unwrap();
            for (k, s) in tr.states.iter().enumerate() {
                let t = tr.grid.t(k);
                let oracle = cp * (m0 + t) * (cpp * t.powf(p)).exp();
                let bound = momentum_bound(&bounds, m0, t).unwrap();
                assert!((bound - oracle).abs() <= 1e-12 * oracle.max(1.0));
                let margin = (bound - s.momentum(p).unwrap()) / bound.max(1.0);
                worst = worst.min(margin);
            }
        }
    }
    ok &= verdict(
        "momentum bound on battery flows, p in {1, 2}",
        worst >= -1e-6,
        format!("smallest relative margin {worst:.4e}, tol -1e-6"),
    );
    assert!(ok);
}

#[test]
fn gronwall_estimate_dominates_perturbed_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    let mut worst = f64::INFINITY;
    for i in 0..20 {
        let d = 1 + i % 2;
        let p = if i % 4 < 2 { 1.0 } else { 2.0 };
        let base = match i % 5 {
            0 => FieldSpec::preset("linear-contraction", d),
            1 => FieldSpec::preset("mean-attraction", d),
            2 => FieldSpec {
                rate: Some(0.5),
                ..FieldSpec::preset("kuramoto", d)
            },
            3 => FieldSpec {
                linear: Some((0..d * d).map(|j| if j % (d + 1) == 0 { 1.0 } else { 0.0 }).collect()),
                ..FieldSpec::preset("affine", d)
            },
            _ => FieldSpec {
                rate: Some(0.3),
                modulation: Some(Modulation {
                    amplitude: vec![0.5; d],
                    frequency: 2.0,
                    phase: 0.0,
                }),
                ..FieldSpec::preset("linear-contraction", d)
            },
        };
        let shift: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let perturbed = FieldSpec {
            drift: Some(base.drift.clone().unwrap_or(vec![0.0; d]).iter().zip(&shift).map(|(a, b)| a + b).collect()),
            ..base.clone()
        };
        let (v, w) = (base.build().unwrap(), perturbed.build().unwrap());
        let mu0 = random_uniform(&mut rng, 8, d, 0.8);
        let nu0 = mu0
            .with_coords(mu0.coords().iter().map(|c| c + rng.gen_range(-0.05..0.05)).collect())
            .unwrap();
        let r = mu0.support_radius().max(nu0.support_radius());
        // All presets here are 1-Lipschitz in space with |v| <= 1 + |x|.
        let bounds = HypothesisBounds::constant(p, r, 1.0, 1.5, 1.0, 0.0).unwrap();
        let dict = ControlDictionary::trivial();
        let a = flow_open(&v, &[], &mu0, &grid).unwrap();
        let b = flow_open(&w, &[], &nu0, &grid).unwrap();
        let k_radius = bounds.k_radius();
        let lattice = Lattice::new(d, k_radius, k_radius / LATTICE_DIVISIONS).unwrap();
        let dev: Vec<f64> = (0..=grid.steps())
            .map(|k| {
                let pts = lattice.with_atoms(&[&a.states[k], &b.states[k]]);
                sup_distance(
                    &a.driving_velocity(&v, &dict, k, &pts),
                    &b.driving_velocity(&w, &dict, k, &pts),
                    d,
                )
            })
            .collect();
        let measured: Vec<f64> = (0..=grid.steps())
            .map(|k| distance(&a.states[k], &b.states[k], p).unwrap())
            .collect();
        let bound = gronwall_curve(&bounds, measured[0], grid.times(), &dev).unwrap();
        let allowance = 1e-6 + lattice.spacing;
        for k in 0..=grid.steps() {
            worst = worst.min((bound[k] - measured[k]) / allowance);
        }
    }
    assert!(verdict(
        "Grönwall bound over 20 perturbed pairs",
        worst >= -1.0,
        format!("smallest margin / (1e-6 + l_K spacing) = {worst:.4e}, tol -1")
    ));
}

fn two_drift(r: f64) -> InclusionProblem {
    let field = Arc::new(FieldSpec::preset("control-translation", 1).build().unwrap());
    let dict = ControlDictionary::constants(vec![vec![-1.0], vec![1.0]]).unwrap();
    let bounds = HypothesisBounds::constant(1.0, r, 1.0, 1.0, 0.0, 0.0).unwrap();
    InclusionProblem::new(field, dict, bounds).unwrap()
}

#[test]
fn filippov_on_two_drift() {
    let problem = two_drift(0.1);
    let steps = 100;
    let h = 1.0 / steps as f64;
    let grid = TimeGrid::uniform(1.0, steps).unwrap();
    let w = Arc::new(
        FieldSpec {
            drift: Some(vec![0.9]),
            ..FieldSpec::preset("constant-drift", 1)
        }
        .build()
        .unwrap(),
    );
    let mu0 = ParticleMeasure::dirac(&[0.0]);
    let reference = Reference::open(w, &[], &mu0, &grid, problem.lattice.radius).unwrap();
    let out = filippov(&problem, &reference, &mu0, FilippovOptions::default()).unwrap();
    let err = out
        .distances
        .iter()
        .enumerate()
        .map(|(k, d)| (d - 0.1 * grid.t(k)).abs())
        .fold(0.0, f64::max);
    let mut ok = verdict(
        "Filippov distance W_1 = 0.1 t",
        err <= 2.0 * h,
        format!("max |W_1 - 0.1 t| = {err:.3e}, tol 2h = {:.3e}", 2.0 * h),
    );
    for c in [&out.distance_certificate, &out.velocity_certificate] {
        ok &= verdict(
            &format!("certificate {}", c.name),
            c.pass,
            format!("margin {:.3e}, tol {:.3e}", c.margin, c.tolerance),
        );
    }
    let s = &out.stage_certificate;
    ok &= verdict(
        "stage residuals under chi C^n / n! plus C h",
        s.pass,
        format!("{} stages, margin {:.3e}, tol {:.3e}", s.lhs.len(), s.margin, s.tolerance),
    );
    assert!(ok);
}

#[test]
fn chattering_distance_decays_like_one_over_n() {
    let problem = two_drift(0.1);
    let steps = 400;
    let grid = TimeGrid::uniform(1.0, steps).unwrap();
    let mut ok = true;
    for n in [10, 50, 200] {
        let opts = RelaxOptions {
            subdivision: Subdivision::Count(n),
            ..Default::default()
        };
        let weights = ControlSignal::constant_mix(vec![0.5, 0.5], steps);
        let r = relax(&problem, &weights, &ParticleMeasure::dirac(&[0.0]), &grid, opts).unwrap();
        let want = 1.0 / (2.0 * n as f64);
        let rel = (r.achieved_sup_distance - want).abs() / want;
        ok &= verdict(
            &format!("chattering sup distance, N = {n}"),
            rel <= 0.1,
            format!("{:.6e} against T/(2N) = {want:.6e}, relative error {rel:.3e}, tol 10%", r.achieved_sup_distance),
        );
        ok &= r.filippov.distance_certificate.pass;
    }
    assert!(ok);
}

fn zigzag(blocks: usize, steps: usize, low: usize, high: usize) -> ControlSignal {
    let len = steps / (2 * blocks);
    let idx: Vec<usize> = (0..steps).map(|k| if (k / len).is_multiple_of(2) { low } else { high }).collect();
    ControlSignal::from_indices(&idx)
}

#[test]
fn minimizing_sequence_has_an_admissible_limit() {
    let field = Arc::new(FieldSpec::preset("control-translation", 1).build().unwrap());
    let dict = ControlDictionary::constants(vec![vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
    let bounds = HypothesisBounds::constant(1.0, 0.1, 1.0, 1.0, 0.0, 0.0).unwrap();
    let inc = InclusionProblem::new(field, dict, bounds).unwrap().with_convexity(true);
    let grid = TimeGrid::uniform(1.0, 64).unwrap();
    let family: Vec<ControlSignal> = [2, 4, 8, 16, 32].iter().map(|&b| zigzag(b, 64, 0, 2)).collect();
    let mut ok = true;
    for (label, kind) in [
        ("mean distance", CostKind::MeanDistance(vec![0.0])),
        ("support radius", CostKind::SupportRadius),
    ] {
        let p = MayerProblem::new(inc.clone(), Cost::new(kind));
        let opts = CompactnessOptions::default();
        let r = minimizing_sequence_experiment(&p, &ParticleMeasure::dirac(&[0.0]), &grid, &family, opts, 1e-3).unwrap();
        let adm = r.compactness.admissibility.iter().cloned().fold(0.0, f64::max);
        ok &= verdict(
            &format!("cluster limit, {label} cost"),
            r.cluster_cost <= r.liminf + 1e-3 && r.compactness.admissible && adm <= opts.tol,
            format!(
                "cluster cost {:.3e}, liminf {:.3e} (+1e-3), selection distance {adm:.3e} (tol {:.0e})",
                r.cluster_cost, r.liminf, opts.tol
            ),
        );
    }
    assert!(ok);
}

#[test]
fn value_of_pure_and_relaxed_problems_agree() {
    let grid = TimeGrid::uniform(1.0, 100).unwrap();
    let mut ok = true;
    let cases = [
        ("mean distance to 0.25", CostKind::MeanDistance(vec![0.25]), ParticleMeasure::dirac(&[0.0])),
        (
            "W_1 to a Dirac",
            CostKind::Wasserstein {
                target: ParticleMeasure::dirac(&[0.37]),
                p: 1.0,
            },
            ParticleMeasure::uniform(1, vec![vec![-0.1], vec![0.0], vec![0.1]]).unwrap(),
        ),
    ];
    for (label, kind, mu0) in cases {
        let p = MayerProblem::new(two_drift(0.1), Cost::new(kind));
        let r = value_functions(&p, 0.0, &mu0, &grid, ValueOptions::default()).unwrap();
        let gap = (r.v - r.v_co).abs();
        ok &= verdict(
            &format!("|V - V_co|, {label}"),
            gap <= 0.02,
            format!("V = {:.4e}, V_co = {:.4e}, gap {gap:.3e}, tol 0.02", r.v, r.v_co),
        );
    }
    assert!(ok);
}

/// Lexicographic enumeration of every signal, keeping the first strict
/// improvement; infeasible problems fall back to the least violation.
fn enumerate_all(p: &MayerProblem, mu0: &ParticleMeasure, grid: &TimeGrid) -> (Vec<usize>, f64, bool) {
    let n = p.inclusion.dictionary.len();
    let steps = grid.steps();
    let mut idx = vec![0usize; steps];
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut least: Option<(Vec<usize>, f64)> = None;
    loop {
        let tr = flow(p.inclusion.field.as_ref(), &p.inclusion.dictionary, &ControlSignal::from_indices(&idx), mu0, grid)
            .unwrap();
        if p.is_feasible(&tr) {
            let c = p.cost.eval(tr.final_state()).unwrap();
            if best.as_ref().is_none_or(|b| c < b.1) {
                best = Some((idx.clone(), c));
            }
        } else {
            let v = p.violation(&tr);
            if least.as_ref().is_none_or(|b| v < b.1) {
                least = Some((idx.clone(), v));
            }
        }
        let mut k = steps;
        loop {
            if k == 0 {
                return match best {
                    Some((s, c)) => (s, c, true),
                    None => {
                        let (s, _) = least.unwrap();
                        let tr = flow(
                            p.inclusion.field.as_ref(),
                            &p.inclusion.dictionary,
                            &ControlSignal::from_indices(&s),
                            mu0,
                            grid,
                        )
                        .unwrap();
                        let c = p.cost.eval(tr.final_state()).unwrap();
                        (s, c, false)
                    }
                };
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
        }
    }
}

#[test]
fn direct_method_matches_full_enumeration() {
    let dicts: [&[f64]; 3] = [&[0.5], &[-1.0, 1.0], &[-1.0, 0.2, 1.0]];
    let translation = FieldSpec::preset("control-translation", 1);
    let attraction = FieldSpec {
        control_dim: Some(1),
        control: Some(vec![1.0]),
        ..FieldSpec::preset("mean-attraction", 1)
    };
    let mu0 = ParticleMeasure::uniform(1, vec![vec![-0.1], vec![0.15]]).unwrap();
    let mut instances = 0;
    let mut mismatches = Vec::new();
    for spec in [&translation, &attraction] {
        let field: Arc<dyn ControlledField> = Arc::new(spec.build().unwrap());
        for values in dicts {
            let dict = ControlDictionary::constants(values.iter().map(|&v| vec![v]).collect()).unwrap();
            let bounds = HypothesisBounds::constant(1.0, 0.15, 1.0, 2.0, 1.0, 1.0).unwrap();
            let inc = InclusionProblem::new(field.clone(), dict, bounds).unwrap();
            for steps in 1..=8 {
                let grid = TimeGrid::uniform(1.0, steps).unwrap();
                let problems = [
                    MayerProblem::new(inc.clone(), Cost::new(CostKind::MeanDistance(vec![0.3]))),
                    MayerProblem::new(inc.clone(), Cost::new(CostKind::Variance)),
                    MayerProblem::new(inc.clone(), Cost::scaled(CostKind::SupportRadius, -1.0))
                        .with_running(Constraint::SupportCap(0.5)),
                    MayerProblem::new(inc.clone(), Cost::new(CostKind::MeanDistance(vec![-0.2])))
                        .with_terminal(Constraint::SupportCap(0.05)),
                ];
                for p in &problems {
                    instances += 1;
                    let s = solve_direct(p, &mu0, &grid, steps).unwrap();
                    let (sel, cost, feasible) = enumerate_all(p, &mu0, &grid);
                    if s.best.selection != sel || s.cost != cost || s.feasible != feasible {
                        mismatches.push(format!(
                            "{} steps={steps}: direct {:?} {} vs {:?} {}",
                            spec.name, s.best.selection, s.cost, sel, cost
                        ));
                    }
                }
            }
        }
    }
    assert!(verdict(
        "direct method equals full enumeration",
        mismatches.is_empty(),
        format!("{} mismatches over {instances} instances; first: {:?}", mismatches.len(), mismatches.first())
    ));
}

fn smooth_field() -> FieldSpec {
    FieldSpec {
        rate: Some(0.7),
        kuramoto: Some(0.4),
        modulation: Some(Modulation {
            amplitude: vec![0.3, -0.2],
            frequency: 2.0,
            phase: 0.1,
        }),
        ..FieldSpec::preset("mean-attraction", 2)
    }
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" ")
}

fn fixed(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn ratios(e: &[f64]) -> Vec<f64> {
    e.windows(2).map(|w| w[0] / w[1]).collect()
}

const REFINEMENTS: [usize; 4] = [10, 20, 40, 80];

#[test]
fn weak_residual_converges_at_second_order() {
    let field = smooth_field().build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mu0 = random_uniform(&mut rng, 16, 2, 1.0);
    let waves = [
        PlaneWave {
            k: vec![1.3, -0.7],
            omega: 2.1,
            phase: 0.3,
        },
        PlaneWave {
            k: vec![-0.4, 1.9],
            omega: -1.2,
            phase: 1.0,
        },
    ];
    let tf: Vec<&dyn TestFunction> = waves.iter().map(|w| w as &dyn TestFunction).collect();
    let res: Vec<f64> = REFINEMENTS
        .iter()
        .map(|&n| {
            let tr = flow_open(&field, &[], &mu0, &TimeGrid::uniform(1.0, n).unwrap()).unwrap();
            weak_residual(&tr, &field, &ControlDictionary::trivial(), &tf).unwrap().value
        })
        .collect();
    let r = ratios(&res);
    assert!(verdict(
        "weak residual ratio under step halving",
        r.iter().all(|&x| (3.0..=5.0).contains(&x)),
        format!("residuals {}, ratios {}, window [3, 5]", sci(&res), fixed(&r))
    ));
}

#[test]
fn final_state_error_converges_at_second_order() {
    let field = smooth_field().build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mu0 = random_uniform(&mut rng, 16, 2, 1.0);
    let fine = flow_open(&field, &[], &mu0, &TimeGrid::uniform(1.0, 2560).unwrap()).unwrap();
    let errs: Vec<f64> = REFINEMENTS
        .iter()
        .map(|&n| {
            let tr = flow_open(&field, &[], &mu0, &TimeGrid::uniform(1.0, n).unwrap()).unwrap();
            tr.final_state()
                .coords()
                .iter()
                .zip(fine.final_state().coords())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let r = ratios(&errs);
    assert!(verdict(
        "final-state error ratio under step halving",
        r.iter().all(|&x| (3.0..=5.0).contains(&x)),
        format!("errors {}, ratios {}, window [3, 5]", sci(&errs), fixed(&r))
    ));
}

#[test]
fn shipped_scenarios_are_deterministic() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    files.sort();
    let tmp = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    for f in &files {
        let stem = f.file_stem().unwrap().to_string_lossy().into_owned();
        let (a, b) = (tmp.path().join(format!("{stem}-a")), tmp.path().join(format!("{stem}-b")));
        wassinc::scenario::run(f, Some(&a));
        wassinc::scenario::run(f, Some(&b));
        let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        let other = std::fs::read_dir(&b).unwrap().count();
        if other != names.len() {
            differing.push(format!("{stem}: file sets differ"));
        }
        for n in names {
            let (x, y) = (std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap());
            let same = if n == "manifest.json" {
                let strip = |v: &[u8]| {
                    let mut j: serde_json::Value = serde_json::from_slice(v).unwrap();
                    j.as_object_mut().unwrap().remove("wall_time");
                    j
                };
                strip(&x) == strip(&y)
            } else {
                x == y
            };
            if !same {
                differing.push(format!("{stem}/{}", n.to_string_lossy()));
            }
        }
    }
    assert!(verdict(
        "repeated runs of shipped scenarios are byte-identical",
        differing.is_empty() && !files.is_empty(),
        format!("{} scenarios, differing outputs {differing:?} (manifest wall time excluded)", files.len())
    ));
}
