//! Distributional residual of a simulated continuity equation.
//!
//! For a smooth test function `φ`, an exact solution satisfies
//! `∫φ(T) dμ(T) - ∫φ(0) dμ(0) = ∫₀ᵀ ∫ (∂_t φ + ⟨∇φ, v⟩) dμ(t) dt`.
//! The residual is the absolute difference of the two sides, with the time
//! integral taken by the trapezoid rule on the trajectory grid.

use std::sync::Arc;

use super::{ControlDictionary, ControlledField, Trajectory};
use crate::error::{Error, Result};

pub trait TestFunction: Send + Sync {
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn dt(&self, t: f64, x: &[f64]) -> f64;
    fn grad(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// Radius outside which `φ` may stop being the intended function.
    fn support_radius(&self) -> Option<f64> {
        None
    }
}

/// `φ(t, x) = sin(⟨k, x⟩ + ω t + phase)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneWave {
    pub k: Vec<f64>,
    pub omega: f64,
    pub phase: f64,
}

impl PlaneWave {
    fn arg(&self, t: f64, x: &[f64]) -> f64 {
        self.k.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.omega * t + self.phase
    }
}

impl TestFunction for PlaneWave {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.arg(t, x).sin()
    }

    fn dt(&self, t: f64, x: &[f64]) -> f64 {
        self.omega * self.arg(t, x).cos()
    }

    fn grad(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let c = self.arg(t, x).cos();
        for (o, k) in out.iter_mut().zip(&self.k) {
            *o = k * c;
        }
    }
}

type Scalar = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type Vector = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Test function from closures for the value and both derivatives.
#[derive(Clone)]
pub struct FnTestFunction {
    value: Scalar,
    dt: Scalar,
    grad: Vector,
    support: Option<f64>,
}

impl FnTestFunction {
    pub fn new<V, T, G>(value: V, dt: T, grad: G) -> Self
    where
        V: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        T: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            value: Arc::new(value),
            dt: Arc::new(dt),
            grad: Arc::new(grad),
            support: None,
        }
    }

    /// Declares that the closures only describe `φ` on `B(0, radius)`.
    pub fn with_support(mut self, radius: f64) -> Self {
        self.support = Some(radius);
        self
    }
}

impl TestFunction for FnTestFunction {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.value)(t, x)
    }

    fn dt(&self, t: f64, x: &[f64]) -> f64 {
        (self.dt)(t, x)
    }

    fn grad(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&(self.grad)(t, x));
    }

    fn support_radius(&self) -> Option<f64> {
        self.support
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakResidual {
    /// Largest residual over the test functions.
    pub value: f64,
    pub per_function: Vec<f64>,
    pub warnings: Vec<String>,
}

pub fn weak_residual(
    traj: &Trajectory,
    field: &dyn ControlledField,
    dictionary: &ControlDictionary,
    testfns: &[&dyn TestFunction],
) -> Result<WeakResidual> {
    if testfns.is_empty() {
        return Err(Error::Invalid("weak residual needs at least one test function".into()));
    }
    let d = field.dim();
    let grid = &traj.grid;
    let reach = traj
        .states
        .iter()
        .map(|s| s.support_radius())
        .fold(0.0, f64::max);
    let mut warnings = Vec::new();
    for (i, phi) in testfns.iter().enumerate() {
        if let Some(r) = phi.support_radius() {
            if reach > r {
                warnings.push(format!(
                    "test function {i}: trajectory reaches radius {reach:.6} beyond its support {r:.6}"
                ));
            }
        }
    }
    // Driving velocities at every node, shared by all test functions.
    let velocities: Vec<Vec<f64>> = (0..grid.times().len())
        .map(|k| traj.driving_velocity(field, dictionary, k, traj.states[k].coords()))
        .collect();
    let mut per_function = Vec::with_capacity(testfns.len());
    let mut g = vec![0.0; d];
    for phi in testfns {
        let pair = |k: usize| -> f64 {
            let s = &traj.states[k];
            let t = grid.t(k);
            s.points()
                .zip(s.weights())
                .map(|(x, w)| w * phi.value(t, x))
                .sum()
        };
        let mut integrand = Vec::with_capacity(grid.times().len());
        for (k, v) in velocities.iter().enumerate() {
            let s = &traj.states[k];
            let t = grid.t(k);
            let mut acc = 0.0;
            for ((x, w), vx) in s.points().zip(s.weights()).zip(v.chunks_exact(d)) {
                phi.grad(t, x, &mut g);
                let dot: f64 = g.iter().zip(vx).map(|(a, b)| a * b).sum();
                acc += w * (phi.dt(t, x) + dot);
            }
            integrand.push(acc);
        }
        let mut quad = 0.0;
        for k in 0..grid.steps() {
            quad += 0.5 * grid.h(k) * (integrand[k] + integrand[k + 1]);
        }
        let boundary = pair(grid.steps()) - pair(0);
        per_function.push((boundary - quad).abs());
    }
    let value = per_function.iter().cloned().fold(0.0, f64::max);
    Ok(WeakResidual {
        value,
        per_function,
        warnings,
    })
}
