//! Differential inclusions `∂_t μ ∈ -div(V(t, μ) μ)` with
//! `V(t, μ) = { v̂(t, μ, ω) : ω in a finite dictionary }`.
//!
//! Sup norms over the compact set `K` are evaluated on a fixed cubic lattice
//! of `K` together with the atoms of the measures involved.

mod compactness;
mod filippov;
mod relax;

pub use compactness::{compactness_harness, CompactnessOptions, CompactnessReport};
pub use filippov::{filippov, FilippovOptions, FilippovResult};
pub use relax::{relax, RelaxOptions, RelaxResult, Subdivision};

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{
    check_di, flow, ControlDictionary, ControlSignal, ControlledField, Controlled, SampleBattery,
    StepControl, TimeGrid, Trajectory, AtomVelocity,
};
use crate::error::{Error, Result};
use crate::estimates::HypothesisBounds;
use crate::measures::ParticleMeasure;
use crate::vecops::{ball_lattice, clamp_to_ball, dist};

/// Default number of lattice spacings per radius of `K`.
pub const LATTICE_DIVISIONS: f64 = 32.0;

/// Fixed evaluation lattice on `K = B(0, radius)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub dim: usize,
    pub radius: f64,
    pub spacing: f64,
    points: Vec<f64>,
}

impl Lattice {
    pub fn new(dim: usize, radius: f64, spacing: f64) -> Result<Self> {
        if !(radius > 0.0 && spacing > 0.0 && radius.is_finite() && spacing.is_finite()) {
            return Err(Error::Invalid("lattice radius and spacing must be positive".into()));
        }
        Ok(Self {
            dim,
            radius,
            spacing,
            points: ball_lattice(dim, radius, spacing),
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Lattice nodes followed by the atoms of `extra`.
    pub fn with_atoms(&self, extra: &[&ParticleMeasure]) -> Vec<f64> {
        let mut pts = self.points.clone();
        for m in extra {
            pts.extend_from_slice(m.coords());
        }
        pts
    }
}

/// A field, a finite dictionary, declared envelopes and an evaluation lattice.
#[derive(Clone)]
pub struct InclusionProblem {
    pub field: Arc<dyn ControlledField>,
    pub dictionary: ControlDictionary,
    pub bounds: HypothesisBounds,
    pub lattice: Lattice,
    /// Declares that the velocity sets are convex on the lattice.
    pub convex_declared: bool,
}

/// How many samples the default hypothesis battery draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatterySize {
    pub points: usize,
    pub pairs: usize,
    pub atoms: usize,
}

impl Default for BatterySize {
    fn default() -> Self {
        Self {
            points: 200,
            pairs: 12,
            atoms: 4,
        }
    }
}

impl InclusionProblem {
    /// Builds a problem with the default lattice spacing `R / 32`, where `R`
    /// is the radius of `K`.
    pub fn new(
        field: Arc<dyn ControlledField>,
        dictionary: ControlDictionary,
        bounds: HypothesisBounds,
    ) -> Result<Self> {
        bounds.validate()?;
        dictionary.validate(field.dim(), field.control_dim())?;
        let r = bounds.k_radius();
        let lattice = Lattice::new(field.dim(), r, r / LATTICE_DIVISIONS)?;
        Ok(Self {
            field,
            dictionary,
            bounds,
            lattice,
            convex_declared: false,
        })
    }

    pub fn with_lattice_spacing(mut self, spacing: f64) -> Result<Self> {
        self.lattice = Lattice::new(self.field.dim(), self.lattice.radius, spacing)?;
        Ok(self)
    }

    pub fn with_convexity(mut self, declared: bool) -> Self {
        self.convex_declared = declared;
        self
    }

    pub fn p(&self) -> f64 {
        self.bounds.p
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    /// Seeded battery on `K` for [`Self::validate_hypotheses`].
    pub fn battery(&self, seed: u64, size: BatterySize) -> SampleBattery {
        SampleBattery::random(
            seed,
            self.dim(),
            self.lattice.radius,
            self.bounds.horizon,
            self.dictionary.len(),
            size.points,
            size.pairs,
            size.atoms,
        )
    }

    /// Runs the inclusion hypothesis checks and refuses on failure.
    pub fn validate_hypotheses(&self, battery: &SampleBattery) -> Result<()> {
        let r = check_di(self.field.as_ref(), &self.dictionary, &self.bounds, battery)?;
        if !r.pass {
            return Err(Error::Refusal(format!(
                "hypothesis check failed: {}",
                r.failures.first().cloned().unwrap_or_default()
            )));
        }
        Ok(())
    }

    /// `v̂(t, μ, ω_j)` on the flat point list.
    pub fn entry_velocity(&self, t: f64, mu: &ParticleMeasure, j: usize, points: &[f64]) -> Vec<f64> {
        let ctrl = StepControl::Select(j);
        let v = Controlled {
            frozen: self.field.freeze(t, mu),
            dictionary: &self.dictionary,
            control: &ctrl,
            dim: self.dim(),
        };
        let d = self.dim();
        let mut out = vec![0.0; points.len()];
        for (x, o) in points.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            v.eval(x, o);
        }
        out
    }

    /// Nearest dictionary entry to `w` in the sup norm over `points`; ties go
    /// to the smallest index.
    pub fn nearest_selection(&self, t: f64, mu: &ParticleMeasure, points: &[f64], w: &[f64]) -> (usize, f64) {
        let dists: Vec<f64> = (0..self.dictionary.len())
            .into_par_iter()
            .map(|j| sup_distance(&self.entry_velocity(t, mu, j, points), w, self.dim()))
            .collect();
        let mut best = (0, dists[0]);
        for (j, &d) in dists.iter().enumerate().skip(1) {
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }
}

/// `max_i |a_i - b_i|` over the `dim`-blocks of two flat vectors.
pub fn sup_distance(a: &[f64], b: &[f64], dim: usize) -> f64 {
    a.chunks_exact(dim)
        .zip(b.chunks_exact(dim))
        .map(|(x, y)| dist(x, y))
        .fold(0.0, f64::max)
}

/// A reference curve `ν(·)` with its driving field `w`.
#[derive(Clone)]
pub struct Reference {
    pub field: Arc<dyn ControlledField>,
    pub dictionary: ControlDictionary,
    pub trajectory: Trajectory,
    /// Radius of `K_ν`; query points outside are clamped radially before the
    /// reference field is evaluated.
    pub radius: f64,
}

impl Reference {
    /// Reference integrated from `nu0` under `field` with a raw control held
    /// fixed.
    pub fn open(
        field: Arc<dyn ControlledField>,
        control: &[f64],
        nu0: &ParticleMeasure,
        grid: &TimeGrid,
        radius: f64,
    ) -> Result<Self> {
        let trajectory = crate::dynamics::flow_open(field.as_ref(), control, nu0, grid)?;
        Ok(Self {
            field,
            dictionary: ControlDictionary::trivial(),
            trajectory,
            radius,
        })
    }

    pub fn from_trajectory(
        field: Arc<dyn ControlledField>,
        dictionary: ControlDictionary,
        trajectory: Trajectory,
        radius: f64,
    ) -> Self {
        Self {
            field,
            dictionary,
            trajectory,
            radius,
        }
    }

    /// `ŵ(t_k, x) = w(t_k, π(x))` on the flat point list.
    pub fn velocity(&self, k: usize, points: &[f64]) -> Vec<f64> {
        let d = self.field.dim();
        let clamped: Vec<f64> = points
            .chunks_exact(d)
            .flat_map(|x| clamp_to_ball(x, self.radius))
            .collect();
        self.trajectory
            .driving_velocity(self.field.as_ref(), &self.dictionary, k, &clamped)
    }
}

/// Trajectory driven by pure dictionary selections, with the per-node
/// distance of the target velocity to the chosen entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySelection {
    pub trajectory: Trajectory,
    pub selection: Vec<usize>,
    pub mismatch: Vec<f64>,
}

#[derive(Serialize)]
struct SelectionJson<'a> {
    grid: &'a [f64],
    atoms: Vec<Vec<Vec<f64>>>,
    weights: &'a [f64],
    selection: &'a [usize],
    mismatch: &'a [f64],
}

impl TrajectorySelection {
    /// Wraps a trajectory whose driver is a pure selection signal.
    pub fn from_trajectory(trajectory: Trajectory) -> Result<Self> {
        let selection = trajectory
            .signal()
            .and_then(ControlSignal::selections)
            .ok_or_else(|| Error::Invalid("trajectory is not driven by pure selections".into()))?;
        let n = trajectory.grid.times().len();
        Ok(Self {
            trajectory,
            selection,
            mismatch: vec![0.0; n],
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let tr = &self.trajectory;
        Ok(serde_json::to_string(&SelectionJson {
            grid: tr.grid.times(),
            atoms: tr
                .states
                .iter()
                .map(|s| s.points().map(|p| p.to_vec()).collect())
                .collect(),
            weights: tr.states[0].weights(),
            selection: &self.selection,
            mismatch: &self.mismatch,
        })?)
    }
}

/// Mismatch `η_ν(t_k)` between the reference velocity and the admissible
/// set along the reference, with the minimizing index at every node.
pub fn mismatch(problem: &InclusionProblem, reference: &Reference) -> Vec<(usize, f64)> {
    let tr = &reference.trajectory;
    (0..tr.grid.times().len())
        .into_par_iter()
        .map(|k| {
            let nu = &tr.states[k];
            let pts = problem.lattice.with_atoms(&[nu]);
            let w = reference.velocity(k, &pts);
            problem.nearest_selection(tr.grid.t(k), nu, &pts, &w)
        })
        .collect()
}

/// Sup distance at every node between the driving velocity and its nearest
/// dictionary entry evaluated on the trajectory's own states.
pub fn membership_distances(problem: &InclusionProblem, traj: &Trajectory) -> Vec<f64> {
    (0..traj.grid.times().len())
        .into_par_iter()
        .map(|k| {
            let mu = &traj.states[k];
            let pts = problem.lattice.with_atoms(&[mu]);
            let v = traj.driving_velocity(problem.field.as_ref(), &problem.dictionary, k, &pts);
            problem.nearest_selection(traj.grid.t(k), mu, &pts, &v).1
        })
        .collect()
}

/// Self-consistent trajectory of a pure selection signal.
pub(crate) fn closed_loop(
    problem: &InclusionProblem,
    selection: &[usize],
    mu0: &ParticleMeasure,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    flow(
        problem.field.as_ref(),
        &problem.dictionary,
        &ControlSignal::from_indices(selection),
        mu0,
        grid,
    )
}
