use std::sync::Arc;

use proptest::prelude::*;

use wassinc::dynamics::{flow, flow_open, ControlDictionary, ControlSignal, FieldSpec, TimeGrid};
use wassinc::estimates::{
    cauchy_lipschitz_envelope, filippov_envelopes, gronwall_curve, momentum_bound, HypothesisBounds,
};
use wassinc::inclusion::{membership_distances, relax, InclusionProblem, RelaxOptions, Subdivision};
use wassinc::transport::{brute_force_wasserstein, distance, kantorovich_gap, wasserstein};
use wassinc::ocp::{solve_direct, Constraint, Cost, CostKind, MayerProblem};
use wassinc::ParticleMeasure;

fn measure(dim: usize, max_atoms: usize) -> impl Strategy<Value = ParticleMeasure> {
    (1..=max_atoms).prop_flat_map(move |n| {
        (
            prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), n),
            prop::collection::vec(0.05..1.0f64, n),
        )
            .prop_map(move |(pts, w)| ParticleMeasure::normalized(dim, pts, w).unwrap())
    })
}

fn uniform_pair(max_atoms: usize) -> impl Strategy<Value = (ParticleMeasure, ParticleMeasure)> {
    (1..=2usize, 1..=max_atoms).prop_flat_map(|(d, n)| {
        let pts = move || prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), n);
        (pts(), pts()).prop_map(move |(a, b)| {
            (
                ParticleMeasure::uniform(d, a).unwrap(),
                ParticleMeasure::uniform(d, b).unwrap(),
            )
        })
    })
}

fn triple() -> impl Strategy<Value = (ParticleMeasure, ParticleMeasure, ParticleMeasure)> {
    (1..=3usize).prop_flat_map(|d| (measure(d, 6), measure(d, 6), measure(d, 6)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn momentum_is_nondecreasing_in_order(mu in measure(2, 8), p in 1.0..4.0f64, dp in 0.0..2.0f64) {
        prop_assert!(mu.momentum(p).unwrap() <= mu.momentum(p + dp).unwrap() + 1e-12);
    }

    #[test]
    fn pushforward_keeps_mass_and_bounds_support(mu in measure(2, 8), a in -2.0..2.0f64, b in -1.0..1.0f64) {
        let f = |x: &[f64]| vec![a * x[0] + b, (x[1] * a).sin()];
        let nu = mu.pushforward(f).unwrap();
        prop_assert!((nu.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let sup = mu.points().map(|x| f(x).iter().map(|c| c * c).sum::<f64>().sqrt()).fold(0.0, f64::max);
        prop_assert!(nu.support_radius() <= sup);
    }

    #[test]
    fn distance_to_itself_is_zero(mu in measure(2, 8), p in 1.0..3.0f64) {
        prop_assert!(distance(&mu, &mu, p).unwrap() <= 1e-9);
    }

    #[test]
    fn triangle_symmetry_and_ordering((x, y, z) in triple(), p in 1.0..3.0f64, dp in 0.0..2.0f64) {
        let (xy, yz, xz) = (distance(&x, &y, p).unwrap(), distance(&y, &z, p).unwrap(), distance(&x, &z, p).unwrap());
        prop_assert!(xz <= xy + yz + 1e-9);
        prop_assert!((xy - distance(&y, &x, p).unwrap()).abs() <= 1e-9);
        prop_assert!(xy <= distance(&x, &y, p + dp).unwrap() + 1e-9);
    }

    #[test]
    fn exact_solver_matches_permutations((mu, nu) in uniform_pair(6), p in prop::sample::select(vec![1.0, 1.5, 2.0, 3.0])) {
        let (w, plan) = wasserstein(&mu, &nu, p).unwrap();
        prop_assert!((w - brute_force_wasserstein(&mu, &nu, p).unwrap()).abs() <= 1e-9);
        prop_assert!(plan.marginal_error() <= 1e-9);
    }

    #[test]
    fn line_distance_is_the_quantile_coupling(a in prop::collection::vec(-3.0..3.0f64, 1..12), shift in -2.0..2.0f64, p in 1.0..3.0f64) {
        // Sorted matching of equal-size uniform samples on the line.
        let b: Vec<f64> = a.iter().rev().map(|x| 0.5 * x + shift).collect();
        let mu = ParticleMeasure::uniform(1, a.iter().map(|&x| vec![x]).collect()).unwrap();
        let nu = ParticleMeasure::uniform(1, b.iter().map(|&x| vec![x]).collect()).unwrap();
        let (mut sa, mut sb) = (a.clone(), b.clone());
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        let oracle = (sa.iter().zip(&sb).map(|(x, y)| (x - y).abs().powf(p)).sum::<f64>() / a.len() as f64).powf(1.0 / p);
        prop_assert!((distance(&mu, &nu, p).unwrap() - oracle).abs() <= 1e-9 * oracle.max(1.0));
    }

    #[test]
    fn translation_moves_by_its_length(mu in measure(2, 6), a in -2.0..2.0f64, b in -2.0..2.0f64, p in 1.0..3.0f64) {
        let moved = mu.pushforward(|x| vec![x[0] + a, x[1] + b]).unwrap();
        let len = (a * a + b * b).sqrt();
        prop_assert!((distance(&mu, &moved, p).unwrap() - len).abs() <= 1e-9 * len.max(1.0));
    }

    #[test]
    fn dual_gap_is_nonnegative((x, y, _) in triple(), c in prop::collection::vec(-1.0..1.0f64, 3)) {
        // |⟨c, x⟩| / |c| is 1-Lipschitz.
        let n = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
        let phi = |p: &[f64]| p.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>().abs() / n;
        prop_assert!(kantorovich_gap(&x, &y, phi).unwrap() >= -1e-9);
    }

    #[test]
    fn envelopes_are_monotone(
        r in 0.05..2.0f64, m in 0.0..2.0f64, dm in 0.0..1.0f64, l in 0.0..2.0f64, dl in 0.0..1.0f64,
        big in 0.0..2.0f64, w0 in 0.0..1.0f64, dw in 0.0..1.0f64, eta in 0.0..1.0f64, p in 1.0..3.0f64,
    ) {
        let lo = HypothesisBounds::constant(p, r, 1.0, m, l, big).unwrap();
        let hi = HypothesisBounds::constant(p, r + dw, 1.0, m + dm, l + dl, big + dl).unwrap();
        prop_assert!(cauchy_lipschitz_envelope(&lo).0 <= cauchy_lipschitz_envelope(&hi).0);
        let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let mut last = 0.0;
        for &t in &times {
            let b = momentum_bound(&lo, w0, t).unwrap();
            prop_assert!(b >= last);
            prop_assert!(b <= momentum_bound(&hi, w0 + dw, t).unwrap() + 1e-12);
            last = b;
        }
        let dev_lo = vec![eta; times.len()];
        let dev_hi = vec![eta + dw; times.len()];
        let g_lo = gronwall_curve(&lo, w0, &times, &dev_lo).unwrap();
        let g_hi = gronwall_curve(&hi, w0 + dw, &times, &dev_hi).unwrap();
        prop_assert!(g_lo.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(g_lo.iter().zip(&g_hi).all(|(a, b)| a <= b));
        let f_lo = filippov_envelopes(&lo, w0, &times, &dev_lo).unwrap().distance_bound();
        let f_hi = filippov_envelopes(&hi, w0 + dw, &times, &dev_hi).unwrap().distance_bound();
        prop_assert!(f_lo.iter().zip(&f_hi).all(|(a, b)| a <= b));
    }

    #[test]
    fn flows_are_reproducible_and_keep_weights(mu in measure(1, 10), rate in 0.0..1.5f64) {
        let field = FieldSpec { rate: Some(rate), ..FieldSpec::preset("mean-attraction", 1) }.build().unwrap();
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let a = flow_open(&field, &[], &mu, &grid).unwrap();
        let b = flow_open(&field, &[], &mu, &grid).unwrap();
        prop_assert_eq!(&a.states, &b.states);
        prop_assert!(a.states.iter().all(|s| s.weights() == mu.weights()));
    }

    #[test]
    fn flows_stay_regular_in_time(mu in measure(1, 6), drift in -1.0..1.0f64, rate in 0.0..0.9f64) {
        // |v| = |drift - rate x| <= 1 + |x|, so m = 1.
        let field = FieldSpec { rate: Some(rate), drift: Some(vec![drift]), ..FieldSpec::preset("linear-contraction", 1) }
            .build()
            .unwrap();
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let tr = flow_open(&field, &[], &mu, &grid).unwrap();
        let bounds = HypothesisBounds::constant(1.0, mu.support_radius().max(1e-3), 1.0, 1.0, 1.0, 0.0).unwrap();
        let (rr, mr) = cauchy_lipschitz_envelope(&bounds);
        for (k, s) in tr.states.iter().enumerate() {
            prop_assert!(s.support_radius() <= 1.01 * rr);
            let t = grid.t(k);
            prop_assert!(distance(&tr.states[0], s, 1.0).unwrap() <= mr.integral(0.0, t) + 1e-6);
        }
    }

    #[test]
    fn chattering_selections_are_members(w in 0.0..1.0f64, n in prop::sample::select(vec![2usize, 5, 10, 20])) {
        let field = Arc::new(FieldSpec::preset("control-translation", 1).build().unwrap());
        let dict = ControlDictionary::constants(vec![vec![-1.0], vec![1.0]]).unwrap();
        let bounds = HypothesisBounds::constant(1.0, 0.1, 1.0, 1.0, 0.0, 0.0).unwrap();
        let problem = InclusionProblem::new(field, dict, bounds).unwrap();
        let grid = TimeGrid::uniform(1.0, 40).unwrap();
        let opts = RelaxOptions { subdivision: Subdivision::Count(n), ..Default::default() };
        let weights = ControlSignal::constant_mix(vec![w, 1.0 - w], 40);
        let r = relax(&problem, &weights, &ParticleMeasure::dirac(&[0.0]), &grid, opts).unwrap();
        prop_assert!(membership_distances(&problem, &r.filippov.selection.trajectory).iter().all(|&d| d == 0.0));
        // Oscillation inside a subinterval plus one step of rounding per
        // subinterval, each worth at most the velocity gap 2 times h/2.
        let h = grid.max_step();
        prop_assert!(r.achieved_sup_distance <= 2.0 / n as f64 + n as f64 * h + 1e-12);
    }

    #[test]
    fn zero_field_is_at_rest(mu in measure(2, 8)) {
        let field = FieldSpec::preset("zero", 2).build().unwrap();
        let tr = flow(&field, &ControlDictionary::trivial(), &ControlSignal::constant(0, 10), &mu, &TimeGrid::uniform(1.0, 10).unwrap())
            .unwrap();
        prop_assert!(tr.states.iter().all(|s| s == &mu));
    }

    #[test]
    fn feasible_optima_respect_constraints(target in -1.0..1.0f64, cap in 0.05..0.6f64, budget in 0usize..4) {
        let field = Arc::new(FieldSpec::preset("control-translation", 1).build().unwrap());
        let dict = ControlDictionary::constants(vec![vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
        let bounds = HypothesisBounds::constant(1.0, 0.1, 1.0, 1.0, 0.0, 0.0).unwrap();
        let inc = InclusionProblem::new(field, dict, bounds).unwrap();
        let p = MayerProblem::new(inc.clone(), Cost::new(CostKind::MeanDistance(vec![target])))
            .with_running(Constraint::SupportCap(cap));
        let grid = TimeGrid::uniform(1.0, 6).unwrap();
        let s = solve_direct(&p, &ParticleMeasure::dirac(&[0.0]), &grid, budget).unwrap();
        prop_assert!(s.best.trajectory.signal().unwrap().switches() <= budget);
        prop_assert!(membership_distances(&inc, &s.best.trajectory).iter().all(|&d| d == 0.0));
        if s.feasible {
            prop_assert!(s.best.trajectory.states.iter().all(|m| p.running_violation(m) <= p.eps_k));
        }
    }
}
