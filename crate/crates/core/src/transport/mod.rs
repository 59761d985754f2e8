//! Exact Wasserstein distances and optimal plans between particle measures.
//!
//! Routing: the monotone coupling on the line, the Hungarian method for
//! equal-size uniform measures, and min-cost flow otherwise. All three are
//! exact up to floating point; there is no regularization.

mod assignment;
mod flow;
mod quantile;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::ParticleMeasure;
use crate::vecops::dist;

/// Tolerance on plan marginals.
pub const MARGINAL_TOLERANCE: f64 = 1e-9;

/// Largest atom count accepted by [`brute_force_wasserstein`].
pub const BRUTE_FORCE_MAX: usize = 8;

/// Discrete coupling between two particle measures.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    gamma: Vec<f64>,
    pub source: ParticleMeasure,
    pub target: ParticleMeasure,
    /// `Σ γ_ij |x_i - y_j|^p`.
    pub cost: f64,
    pub p: f64,
}

#[derive(Serialize)]
struct PlanJson {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TransportPlan {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.cols + j]
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// Nonzero entries in row-major order.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.rows {
            for j in 0..self.cols {
                let m = self.mass(i, j);
                if m > 0.0 {
                    out.push((i, j, m));
                }
            }
        }
        out
    }

    /// Largest deviation of a row or column sum from the prescribed weight.
    pub fn marginal_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..self.rows {
            let s: f64 = (0..self.cols).map(|j| self.mass(i, j)).sum();
            err = err.max((s - self.source.weights()[i]).abs());
        }
        for j in 0..self.cols {
            let s: f64 = (0..self.rows).map(|i| self.mass(i, j)).sum();
            err = err.max((s - self.target.weights()[j]).abs());
        }
        err
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&PlanJson {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries(),
        })?)
    }
}

fn check_order(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("transport order must be >= 1, got {p}")))
    }
}

fn check_dims(mu: &ParticleMeasure, nu: &ParticleMeasure) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    Ok(())
}

#[inline]
fn ground_cost(x: &[f64], y: &[f64], p: f64) -> f64 {
    let d = dist(x, y);
    if p == 1.0 {
        d
    } else if p == 2.0 {
        d * d
    } else {
        d.powf(p)
    }
}

fn is_uniform(w: &[f64]) -> bool {
    let target = 1.0 / w.len() as f64;
    w.iter().all(|&x| (x - target).abs() <= 1e-14)
}

fn cost_matrix(mu: &ParticleMeasure, nu: &ParticleMeasure, p: f64) -> Vec<f64> {
    let n = nu.len();
    let mut c = vec![0.0; mu.len() * n];
    for (i, x) in mu.points().enumerate() {
        for (j, y) in nu.points().enumerate() {
            c[i * n + j] = ground_cost(x, y, p);
        }
    }
    c
}

/// Optimal coupling as sparse entries. Assumes validated inputs.
fn solve(mu: &ParticleMeasure, nu: &ParticleMeasure, p: f64) -> Vec<(usize, usize, f64)> {
    if mu.len() == 1 {
        return nu.weights().iter().enumerate().map(|(j, &w)| (0, j, w)).collect();
    }
    if nu.len() == 1 {
        return mu.weights().iter().enumerate().map(|(i, &w)| (i, 0, w)).collect();
    }
    if mu.dim() == 1 {
        return quantile::couple(mu.coords(), mu.weights(), nu.coords(), nu.weights());
    }
    if mu.len() == nu.len() && is_uniform(mu.weights()) && is_uniform(nu.weights()) {
        let n = mu.len();
        let c = cost_matrix(mu, nu, p);
        let w = 1.0 / n as f64;
        return assignment::hungarian(&c, n)
            .into_iter()
            .enumerate()
            .map(|(i, j)| (i, j, w))
            .collect();
    }
    let c = cost_matrix(mu, nu, p);
    flow::transport(&c, mu.weights(), nu.weights())
}

fn entries_cost(mu: &ParticleMeasure, nu: &ParticleMeasure, p: f64, e: &[(usize, usize, f64)]) -> f64 {
    e.iter()
        .map(|&(i, j, m)| m * ground_cost(mu.point(i), nu.point(j), p))
        .sum::<f64>()
        .max(0.0)
}

/// `W_p(μ, ν)` together with an optimal plan.
pub fn wasserstein(mu: &ParticleMeasure, nu: &ParticleMeasure, p: f64) -> Result<(f64, TransportPlan)> {
    check_order(p)?;
    check_dims(mu, nu)?;
    let e = solve(mu, nu, p);
    let cost = entries_cost(mu, nu, p, &e);
    let (rows, cols) = (mu.len(), nu.len());
    let mut gamma = vec![0.0; rows * cols];
    for &(i, j, m) in &e {
        gamma[i * cols + j] += m;
    }
    let plan = TransportPlan {
        rows,
        cols,
        gamma,
        source: mu.clone(),
        target: nu.clone(),
        cost,
        p,
    };
    let err = plan.marginal_error();
    if err > MARGINAL_TOLERANCE {
        return Err(Error::Internal(format!(
            "transport solver returned a plan with marginal error {err:e}"
        )));
    }
    Ok((cost.powf(1.0 / p), plan))
}

/// `W_p(μ, ν)` without materializing the dense plan.
pub fn distance(mu: &ParticleMeasure, nu: &ParticleMeasure, p: f64) -> Result<f64> {
    check_order(p)?;
    check_dims(mu, nu)?;
    let e = solve(mu, nu, p);
    Ok(entries_cost(mu, nu, p, &e).powf(1.0 / p))
}

/// Minimum over all permutations; an oracle for small uniform instances.
pub fn brute_force_wasserstein(mu: &ParticleMeasure, nu: &ParticleMeasure, p: f64) -> Result<f64> {
    check_order(p)?;
    check_dims(mu, nu)?;
    let n = mu.len();
    if n != nu.len() {
        return Err(Error::Invalid("brute force needs equal atom counts".into()));
    }
    if n > BRUTE_FORCE_MAX {
        return Err(Error::Refusal(format!(
            "brute force limited to {BRUTE_FORCE_MAX} atoms, got {n}"
        )));
    }
    if !is_uniform(mu.weights()) || !is_uniform(nu.weights()) {
        return Err(Error::Invalid("brute force needs uniform weights".into()));
    }
    let c = cost_matrix(mu, nu, p);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &c, n, &mut best);
    Ok((best / n as f64).max(0.0).powf(1.0 / p))
}

fn permute(perm: &mut [usize], k: usize, c: &[f64], n: usize, best: &mut f64) {
    if k == n {
        let s: f64 = perm.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum();
        if s < *best {
            *best = s;
        }
        return;
    }
    for i in k..n {
        perm.swap(k, i);
        permute(perm, k + 1, c, n, best);
        perm.swap(k, i);
    }
}

/// Number of random pairs used for the Lipschitz check when the union of the
/// supports is too large for all pairs.
const LIPSCHITZ_SAMPLES: usize = 20_000;

/// `W_1(μ, ν) - ∫φ d(μ - ν)`; nonnegative for every 1-Lipschitz `φ`.
///
/// `φ` is checked on pairs of support atoms (all pairs when there are at most
/// 200 atoms in total, a seeded sample otherwise) and rejected if some pair
/// has slope above `1 + 1e-9`.
pub fn kantorovich_gap<F>(mu: &ParticleMeasure, nu: &ParticleMeasure, phi: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    check_dims(mu, nu)?;
    let pts: Vec<&[f64]> = mu.points().chain(nu.points()).collect();
    let vals: Vec<f64> = pts.iter().map(|x| phi(x)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("test function is not finite on the support".into()));
    }
    let check = |a: usize, b: usize| -> Result<()> {
        let d = dist(pts[a], pts[b]);
        let dv = (vals[a] - vals[b]).abs();
        if dv > (1.0 + 1e-9) * d + 1e-12 {
            return Err(Error::Invalid(format!(
                "test function is not 1-Lipschitz: slope {} between atoms {a} and {b}",
                dv / d
            )));
        }
        Ok(())
    };
    let n = pts.len();
    if n <= 200 {
        for a in 0..n {
            for b in a + 1..n {
                check(a, b)?;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..LIPSCHITZ_SAMPLES {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b {
                check(a, b)?;
            }
        }
    }
    let w1 = distance(mu, nu, 1.0)?;
    let m = mu.len();
    let pair: f64 = mu.weights().iter().zip(&vals[..m]).map(|(w, v)| w * v).sum::<f64>()
        - nu.weights().iter().zip(&vals[m..]).map(|(w, v)| w * v).sum::<f64>();
    Ok(w1 - pair)
}

/// Symmetric matrix of `W_p` distances, computed in parallel over pairs.
pub fn pairwise_distances(measures: &[ParticleMeasure], p: f64) -> Result<Vec<Vec<f64>>> {
    let n = measures.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let vals = pairs
        .par_iter()
        .map(|&(i, j)| distance(&measures[i], &measures[j], p))
        .collect::<Result<Vec<f64>>>()?;
    let mut out = vec![vec![0.0; n]; n];
    for (&(i, j), d) in pairs.iter().zip(vals) {
        out[i][j] = d;
        out[j][i] = d;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> ParticleMeasure {
        ParticleMeasure::uniform(1, points.iter().map(|&x| vec![x]).collect()).unwrap()
    }

    fn plane(points: &[[f64; 2]], weights: &[f64]) -> ParticleMeasure {
        ParticleMeasure::new(2, points.iter().map(|p| p.to_vec()).collect(), weights.to_vec())
            .unwrap()
    }

    #[test]
    fn dirac_to_dirac() {
        let a = ParticleMeasure::dirac(&[0.0, 0.0]);
        let b = ParticleMeasure::dirac(&[3.0, 4.0]);
        let (d, plan) = wasserstein(&a, &b, 1.0).unwrap();
        assert_eq!(d, 5.0);
        assert_eq!(plan.mass(0, 0), 1.0);
    }

    #[test]
    fn identical_measures() {
        let mu = line(&[0.0, 1.0]);
        assert_eq!(wasserstein(&mu, &mu, 1.0).unwrap().0, 0.0);
        assert_eq!(brute_force_wasserstein(&mu, &mu, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn shifted_pair() {
        let mu = line(&[0.0, 1.0]);
        let nu = line(&[0.5, 1.5]);
        assert!((wasserstein(&mu, &nu, 1.0).unwrap().0 - 0.5).abs() < 1e-15);
        assert!((brute_force_wasserstein(&mu, &nu, 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn brute_force_examples() {
        let a = ParticleMeasure::dirac(&[0.0]);
        let b = ParticleMeasure::dirac(&[3.0]);
        assert!((brute_force_wasserstein(&a, &b, 2.0).unwrap() - 3.0).abs() < 1e-15);
        let mu = line(&[0.0, 1.0, 2.0]);
        let nu = line(&[0.1, 1.1, 2.1]);
        assert!((brute_force_wasserstein(&mu, &nu, 1.0).unwrap() - 0.1).abs() < 1e-12);
        let big = line(&[0.0; 9]);
        assert!(matches!(
            brute_force_wasserstein(&big, &big, 1.0),
            Err(Error::Refusal(_))
        ));
    }

    #[test]
    fn solvers_agree_in_the_plane() {
        let mu = plane(&[[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]], &[1.0 / 3.0; 3]);
        let nu = plane(&[[0.5, 0.5], [1.0, 1.0], [-1.0, 1.0]], &[1.0 / 3.0; 3]);
        for p in [1.0, 2.0, 3.0] {
            let h = distance(&mu, &nu, p).unwrap();
            let b = brute_force_wasserstein(&mu, &nu, p).unwrap();
            // Same problem through the flow solver.
            let c = cost_matrix(&mu, &nu, p);
            let e = flow::transport(&c, mu.weights(), nu.weights());
            let f = entries_cost(&mu, &nu, p, &e).powf(1.0 / p);
            assert!((h - b).abs() < 1e-12, "p={p}: {h} vs {b}");
            assert!((f - b).abs() < 1e-12, "p={p}: {f} vs {b}");
        }
    }

    #[test]
    fn unequal_weights_in_the_plane() {
        // All mass of one atom splits between two targets: cost is a weighted sum.
        let mu = ParticleMeasure::dirac(&[0.0, 0.0]);
        let nu = plane(&[[1.0, 0.0], [0.0, 2.0]], &[0.25, 0.75]);
        let (d, plan) = wasserstein(&mu, &nu, 1.0).unwrap();
        assert!((d - 1.75).abs() < 1e-15);
        assert!(plan.marginal_error() < 1e-15);

        let mu = plane(&[[0.0, 0.0], [2.0, 0.0]], &[0.5, 0.5]);
        let nu = plane(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], &[0.25, 0.5, 0.25]);
        let (d, plan) = wasserstein(&mu, &nu, 1.0).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
        assert!(plan.marginal_error() < 1e-15);
    }

    #[test]
    fn kantorovich_examples() {
        let a = ParticleMeasure::dirac(&[0.0]);
        let b = ParticleMeasure::dirac(&[1.0]);
        assert_eq!(kantorovich_gap(&a, &b, |_| 0.0).unwrap(), 1.0);
        assert_eq!(kantorovich_gap(&a, &b, |x| -x[0]).unwrap(), 0.0);
        assert_eq!(kantorovich_gap(&a, &b, |x| x[0]).unwrap(), 2.0);
        assert!(kantorovich_gap(&a, &b, |x| 3.0 * x[0]).is_err());
    }

    #[test]
    fn plan_json_shape() {
        let mu = line(&[0.0, 1.0]);
        let nu = line(&[1.0, 0.0]);
        let (_, plan) = wasserstein(&mu, &nu, 1.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&plan.to_json().unwrap()).unwrap();
        assert_eq!(v["rows"], 2);
        assert_eq!(v["entries"].as_array().unwrap().len(), 2);
        assert_eq!(v["entries"][0][1], 1);
    }

    #[test]
    fn rejects_bad_order_and_dims() {
        let a = ParticleMeasure::dirac(&[0.0]);
        let b = ParticleMeasure::dirac(&[0.0, 1.0]);
        assert!(matches!(distance(&a, &a, 0.5), Err(Error::Domain(_))));
        assert!(matches!(
            distance(&a, &b, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
