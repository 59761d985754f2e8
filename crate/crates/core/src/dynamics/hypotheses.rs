//! Sampled checks of the sublinearity and Lipschitz hypotheses.
//!
//! These are necessary conditions evaluated on finitely many samples, never
//! proofs. A report passes when every sampled ratio stays below
//! `1 + HYPOTHESIS_TOLERANCE` and the measure-Lipschitz excess below
//! `HYPOTHESIS_TOLERANCE`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ControlDictionary, ControlledField, Controlled, StepControl, AtomVelocity};
use crate::error::Result;
use crate::estimates::HypothesisBounds;
use crate::measures::ParticleMeasure;
use crate::transport;
use crate::vecops::{ball_lattice, clamp_to_ball, dist, norm};

pub const HYPOTHESIS_TOLERANCE: f64 = 1e-6;

/// Two positions probed for one `(t, μ, ω)`.
#[derive(Debug, Clone)]
pub struct PointSample {
    pub t: f64,
    pub mu: ParticleMeasure,
    pub control: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Measure pair probed for the Lipschitz dependence on the measure.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub t: f64,
    pub mu: ParticleMeasure,
    pub nu: ParticleMeasure,
}

#[derive(Debug, Clone)]
pub struct SampleBattery {
    pub points: Vec<PointSample>,
    pub pairs: Vec<PairSample>,
    /// Flat lattice on `K` for sup norms over `K`.
    pub lattice: Vec<f64>,
}

fn random_ball_point(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-radius..=radius)).collect();
    clamp_to_ball(&x, radius)
}

fn random_measure(rng: &mut ChaCha8Rng, dim: usize, radius: f64, atoms: usize) -> ParticleMeasure {
    let n = rng.gen_range(1..=atoms.max(1));
    let pts: Vec<Vec<f64>> = (0..n).map(|_| random_ball_point(rng, dim, radius)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    ParticleMeasure::normalized(dim, pts, w).expect("random measure is valid")
}

impl SampleBattery {
    /// Seeded battery: positions in `B(0, k_radius)`, measures supported in
    /// the same ball, half of the pairs being small perturbations.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        seed: u64,
        dim: usize,
        k_radius: f64,
        horizon: f64,
        entries: usize,
        points: usize,
        pairs: usize,
        atoms: usize,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::with_capacity(points);
        for _ in 0..points {
            let t = rng.gen_range(0.0..=horizon);
            let mu = random_measure(&mut rng, dim, k_radius, atoms);
            let control = rng.gen_range(0..entries);
            let x = random_ball_point(&mut rng, dim, k_radius);
            let y = if rng.gen_bool(0.5) {
                // Close pairs probe local slopes.
                let e = random_ball_point(&mut rng, dim, 0.05 * k_radius);
                clamp_to_ball(&x.iter().zip(&e).map(|(a, b)| a + b).collect::<Vec<_>>(), k_radius)
            } else {
                random_ball_point(&mut rng, dim, k_radius)
            };
            pts.push(PointSample { t, mu, control, x, y });
        }
        let mut prs = Vec::with_capacity(pairs);
        for i in 0..pairs {
            let t = rng.gen_range(0.0..=horizon);
            let mu = random_measure(&mut rng, dim, k_radius, atoms);
            let nu = if i % 2 == 0 {
                let s = 0.1 * k_radius;
                let coords = mu
                    .coords()
                    .iter()
                    .map(|c| c + rng.gen_range(-s..=s))
                    .collect::<Vec<_>>();
                let moved: Vec<Vec<f64>> = coords
                    .chunks(dim)
                    .map(|p| clamp_to_ball(p, k_radius))
                    .collect();
                ParticleMeasure::new(dim, moved, mu.weights().to_vec()).expect("perturbed measure")
            } else {
                random_measure(&mut rng, dim, k_radius, atoms)
            };
            prs.push(PairSample { t, mu, nu });
        }
        let spacing = k_radius / if dim == 1 { 32.0 } else { 8.0 };
        Self {
            points: pts,
            pairs: prs,
            lattice: ball_lattice(dim, k_radius, spacing),
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct HypothesisReport {
    /// Worst `|v̂(x)| / (m(t)(1 + |x| [+ M_1(μ)]))`.
    pub sublinear_ratio: f64,
    /// Worst `|v̂(x) - v̂(y)| / (l_K(t) |x - y|)`.
    pub lipschitz_ratio: f64,
    /// Worst `min_ω' sup_K |v̂(t,μ,ω) - v̂(t,ν,ω')| - L_K(t) W_p(μ,ν)`, when checked.
    pub measure_lipschitz_excess: Option<f64>,
    pub pass: bool,
    pub failures: Vec<String>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num <= 1e-300 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn eval_at(
    field: &dyn ControlledField,
    dictionary: &ControlDictionary,
    t: f64,
    mu: &ParticleMeasure,
    j: usize,
    points: &[&[f64]],
) -> Vec<Vec<f64>> {
    let ctrl = StepControl::Select(j);
    let v = Controlled {
        frozen: field.freeze(t, mu),
        dictionary,
        control: &ctrl,
        dim: field.dim(),
    };
    points
        .iter()
        .map(|x| {
            let mut o = vec![0.0; field.dim()];
            v.eval(x, &mut o);
            o
        })
        .collect()
}

fn point_checks(
    field: &dyn ControlledField,
    dictionary: &ControlDictionary,
    bounds: &HypothesisBounds,
    battery: &SampleBattery,
    with_moment: bool,
    failures: &mut Vec<String>,
) -> (f64, f64) {
    let mut sub: f64 = 0.0;
    let mut lip: f64 = 0.0;
    for s in &battery.points {
        let v = eval_at(field, dictionary, s.t, &s.mu, s.control, &[&s.x, &s.y]);
        let m = bounds.m.eval(s.t);
        let extra = if with_moment { norm_moment(&s.mu) } else { 0.0 };
        for (p, vp) in [(&s.x, &v[0]), (&s.y, &v[1])] {
            let r = ratio(norm(vp), m * (1.0 + norm(p) + extra));
            if r > 1.0 + HYPOTHESIS_TOLERANCE && r > sub {
                failures.push(format!("sublinearity ratio {r:.6} at t={:.4}", s.t));
            }
            sub = sub.max(r);
        }
        let dx = dist(&s.x, &s.y);
        if dx > 0.0 {
            let r = ratio(dist(&v[0], &v[1]), bounds.l_k.eval(s.t) * dx);
            if r > 1.0 + HYPOTHESIS_TOLERANCE && r > lip {
                failures.push(format!("Lipschitz ratio {r:.6} at t={:.4}", s.t));
            }
            lip = lip.max(r);
        }
    }
    (sub, lip)
}

fn norm_moment(mu: &ParticleMeasure) -> f64 {
    mu.momentum(1.0).unwrap_or(0.0)
}

/// Sampled sublinearity `|v| <= m(t)(1 + |x|)` and Lipschitz bound
/// `Lip(v(t,·); K) <= l_K(t)` for every dictionary entry used by the battery.
pub fn check_c1_c2(
    field: &dyn ControlledField,
    dictionary: &ControlDictionary,
    bounds: &HypothesisBounds,
    battery: &SampleBattery,
) -> HypothesisReport {
    let mut failures = Vec::new();
    let (sub, lip) = point_checks(field, dictionary, bounds, battery, false, &mut failures);
    HypothesisReport {
        sublinear_ratio: sub,
        lipschitz_ratio: lip,
        measure_lipschitz_excess: None,
        pass: sub <= 1.0 + HYPOTHESIS_TOLERANCE && lip <= 1.0 + HYPOTHESIS_TOLERANCE,
        failures,
    }
}

/// The inclusion hypotheses: sublinearity with the first moment, the spatial
/// Lipschitz bound, and the Lipschitz dependence of the velocity set on the
/// measure measured in `W_p` with sup norms over the battery lattice.
pub fn check_di(
    field: &dyn ControlledField,
    dictionary: &ControlDictionary,
    bounds: &HypothesisBounds,
    battery: &SampleBattery,
) -> Result<HypothesisReport> {
    let mut failures = Vec::new();
    let (sub, lip) = point_checks(field, dictionary, bounds, battery, true, &mut failures);
    let d = field.dim();
    let lattice: Vec<&[f64]> = battery.lattice.chunks_exact(d).collect();
    let mut excess = f64::NEG_INFINITY;
    for s in &battery.pairs {
        let w = transport::distance(&s.mu, &s.nu, bounds.p)?;
        let allowed = bounds.big_l_k.eval(s.t) * w;
        let on_nu: Vec<Vec<Vec<f64>>> = (0..dictionary.len())
            .map(|j| eval_at(field, dictionary, s.t, &s.nu, j, &lattice))
            .collect();
        for j in 0..dictionary.len() {
            let on_mu = eval_at(field, dictionary, s.t, &s.mu, j, &lattice);
            let best = on_nu
                .iter()
                .map(|vn| {
                    on_mu
                        .iter()
                        .zip(vn)
                        .map(|(a, b)| dist(a, b))
                        .fold(0.0, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            let e = best - allowed;
            if e > HYPOTHESIS_TOLERANCE && e > excess {
                failures.push(format!(
                    "set-valued Lipschitz excess {e:.6} at t={:.4} (W_p = {w:.6})",
                    s.t
                ));
            }
            excess = excess.max(e);
        }
    }
    let excess = if battery.pairs.is_empty() { None } else { Some(excess) };
    let pass = sub <= 1.0 + HYPOTHESIS_TOLERANCE
        && lip <= 1.0 + HYPOTHESIS_TOLERANCE
        && excess.is_none_or(|e| e <= HYPOTHESIS_TOLERANCE);
    Ok(HypothesisReport {
        sublinear_ratio: sub,
        lipschitz_ratio: lip,
        measure_lipschitz_excess: excess,
        pass,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ExpressionField, FieldSpec, FnField};
    use crate::estimates::HypothesisBounds;

    fn battery(dim: usize, radius: f64, entries: usize) -> SampleBattery {
        SampleBattery::random(7, dim, radius, 1.0, entries, 300, 40, 4)
    }

    #[test]
    fn zero_field_passes_with_zero_ratios() {
        let f = ExpressionField::zero(1, 0);
        let d = ControlDictionary::trivial();
        let b = HypothesisBounds::constant(1.0, 1.0, 1.0, 0.0, 0.0, 0.0).unwrap();
        let r = check_c1_c2(&f, &d, &b, &battery(1, 2.0, 1));
        assert!(r.pass);
        assert_eq!(r.sublinear_ratio, 0.0);
        assert_eq!(r.lipschitz_ratio, 0.0);
    }

    #[test]
    fn identity_field_is_sublinear() {
        let f = FnField::new(1, 0, |_, _, _, x| x.to_vec());
        let d = ControlDictionary::trivial();
        let b = HypothesisBounds::constant(1.0, 1.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let r = check_c1_c2(&f, &d, &b, &battery(1, 2.0, 1));
        assert!(r.pass);
        assert!(r.sublinear_ratio < 1.0);
    }

    #[test]
    fn square_field_breaks_declared_lipschitz() {
        let f = FnField::new(1, 0, |_, _, _, x| vec![x[0] * x[0]]);
        let d = ControlDictionary::trivial();
        let b = HypothesisBounds::constant(1.0, 1.0, 1.0, 10.0, 2.0, 0.0).unwrap();
        let r = check_c1_c2(&f, &d, &b, &battery(1, 2.0, 1));
        assert!(!r.pass);
        assert!(r.lipschitz_ratio > 1.5 && r.lipschitz_ratio <= 2.0 + 1e-9);
    }

    #[test]
    fn measure_independent_field_needs_no_measure_lipschitz() {
        let f = FieldSpec::preset("control-translation", 1).build().unwrap();
        let d = ControlDictionary::constants(vec![vec![-1.0], vec![1.0]]).unwrap();
        let b = HypothesisBounds::constant(1.0, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        let r = check_di(&f, &d, &b, &battery(1, 2.0, 2)).unwrap();
        assert!(r.pass, "{:?}", r.failures);
    }

    #[test]
    fn control_times_mean_is_w1_lipschitz() {
        let f = FnField::new(1, 1, |_, mu, u, _| vec![u[0] * mu.mean()[0]]);
        let d = ControlDictionary::constants(vec![vec![-1.0], vec![1.0]]).unwrap();
        let b = HypothesisBounds::constant(1.0, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
        let r = check_di(&f, &d, &b, &battery(1, 2.0, 2)).unwrap();
        assert!(r.pass, "{:?}", r.failures);
    }

    #[test]
    fn second_moment_is_not_w1_lipschitz() {
        let f = FnField::new(1, 0, |_, mu, _, _| vec![mu.momentum(2.0).unwrap()]);
        let d = ControlDictionary::trivial();
        let b = HypothesisBounds::constant(1.0, 1.0, 1.0, 10.0, 0.0, 1.0).unwrap();
        // δ_0 against (1 - ε)δ_0 + εδ_a: M_2 = a√ε while W_1 = εa.
        let (a, eps) = (1.0, 0.01);
        let mu = ParticleMeasure::dirac(&[0.0]);
        let nu = ParticleMeasure::new(1, vec![vec![0.0], vec![a]], vec![1.0 - eps, eps]).unwrap();
        let bat = SampleBattery {
            points: Vec::new(),
            pairs: vec![PairSample { t: 0.5, mu, nu }],
            lattice: vec![0.0],
        };
        let r = check_di(&f, &d, &b, &bat).unwrap();
        assert!(!r.pass);
        let e = r.measure_lipschitz_excess.unwrap();
        assert!((e - (a * eps.sqrt() - eps * a)).abs() < 1e-12);
    }
}
