//! Particle characteristics for non-local continuity equations.
//!
//! A trajectory is a bundle of atoms moved by a fixed-step classical RK4
//! scheme. The measure argument of the velocity is re-evaluated at every
//! stage from the stage positions, so smooth non-local fields keep fourth
//! order without implicit solves. Weights never change, which means
//! `states[k]` is always the image of `states[0]` along the characteristics.

mod control;
mod field;
mod hypotheses;
mod weak;

pub use control::{ControlDictionary, DictionaryKind, FeedbackMap};
pub use field::{
    ControlledField, ExpressionField, FieldSpec, FnField, FrozenField, Interaction, Modulation,
    PRESETS,
};
pub use hypotheses::{
    check_c1_c2, check_di, HypothesisReport, PairSample, PointSample, SampleBattery,
    HYPOTHESIS_TOLERANCE,
};
pub use weak::{weak_residual, FnTestFunction, PlaneWave, TestFunction, WeakResidual};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::ParticleMeasure;

/// Atom count from which per-atom derivative evaluations run in parallel.
const PARALLEL_ATOMS: usize = 256;

/// Strictly increasing time nodes `t_0 < t_1 < ... < t_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// `M` equal steps on `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::Invalid("grid needs at least one step".into()));
        }
        let times = (0..=steps)
            .map(|k| k as f64 * horizon / steps as f64)
            .collect();
        Ok(Self { times })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Invalid("grid needs at least two nodes".into()));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("grid times must be finite and strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// Number of steps `M`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// Length of step `k`.
    #[inline]
    pub fn h(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn max_step(&self) -> f64 {
        (0..self.steps()).map(|k| self.h(k)).fold(0.0, f64::max)
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Nodes from index `k` on.
    pub fn tail(&self, k: usize) -> Result<Self> {
        Self::from_times(self.times[k..].to_vec())
    }

    /// Index of the node equal to `t` within `1e-12`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-12)
    }
}

/// The control played on one grid step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepControl {
    /// A single dictionary entry.
    Select(usize),
    /// Convex weights over the dictionary (a relaxed control).
    Mix(Vec<f64>),
}

/// Per-step controls, piecewise constant on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    pub steps: Vec<StepControl>,
}

impl ControlSignal {
    pub fn constant(j: usize, steps: usize) -> Self {
        Self {
            steps: vec![StepControl::Select(j); steps],
        }
    }

    pub fn from_indices(idx: &[usize]) -> Self {
        Self {
            steps: idx.iter().map(|&j| StepControl::Select(j)).collect(),
        }
    }

    pub fn constant_mix(weights: Vec<f64>, steps: usize) -> Self {
        Self {
            steps: vec![StepControl::Mix(weights); steps],
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Step indices when every step is a pure selection.
    pub fn selections(&self) -> Option<Vec<usize>> {
        self.steps
            .iter()
            .map(|s| match s {
                StepControl::Select(j) => Some(*j),
                StepControl::Mix(_) => None,
            })
            .collect()
    }

    /// Number of control changes between consecutive steps.
    pub fn switches(&self) -> usize {
        self.steps.windows(2).filter(|w| w[0] != w[1]).count()
    }

    fn validate(&self, steps: usize, entries: usize) -> Result<()> {
        if self.steps.len() != steps {
            return Err(Error::Invalid(format!(
                "control signal has {} steps, grid has {steps}",
                self.steps.len()
            )));
        }
        for (k, s) in self.steps.iter().enumerate() {
            match s {
                StepControl::Select(j) if *j >= entries => {
                    return Err(Error::Invalid(format!(
                        "step {k} selects entry {j} of a {entries}-entry dictionary"
                    )))
                }
                StepControl::Mix(w) => {
                    if w.len() != entries {
                        return Err(Error::Invalid(format!(
                            "step {k} has {} weights for {entries} entries",
                            w.len()
                        )));
                    }
                    if w.iter().any(|x| !(*x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9
                    {
                        return Err(Error::Invalid(format!(
                            "step {k} weights are not a probability vector"
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// What drove a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum Driver {
    /// Dictionary controls with the trajectory itself as the measure argument.
    SelfConsistent(ControlSignal),
    /// Dictionary controls with an external curve of measures (given at the
    /// grid nodes) as the measure argument.
    Along {
        signal: ControlSignal,
        curve: Vec<ParticleMeasure>,
    },
    /// A raw control vector held fixed, with the self-consistent measure.
    Open(Vec<f64>),
}

/// Curve of particle measures on a time grid together with its driver.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<ParticleMeasure>,
    pub driver: Driver,
}

impl Trajectory {
    pub fn final_state(&self) -> &ParticleMeasure {
        self.states.last().unwrap()
    }

    /// Positions of atom `i` at every grid node.
    pub fn characteristic(&self, i: usize) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| s.point(i).to_vec()).collect()
    }

    pub fn signal(&self) -> Option<&ControlSignal> {
        match &self.driver {
            Driver::SelfConsistent(s) | Driver::Along { signal: s, .. } => Some(s),
            Driver::Open(_) => None,
        }
    }

    /// Step control governing node `k` (the last step for the final node).
    pub fn step_control(&self, k: usize) -> Option<&StepControl> {
        let k = k.min(self.grid.steps() - 1);
        self.signal().map(|s| &s.steps[k])
    }

    /// The measure argument fed to the field at node `k`.
    pub fn measure_argument(&self, k: usize) -> &ParticleMeasure {
        match &self.driver {
            Driver::Along { curve, .. } => &curve[k],
            _ => &self.states[k],
        }
    }

    /// Driving velocity at node `k` evaluated on `points` (flat, row-major).
    pub fn driving_velocity(
        &self,
        field: &dyn ControlledField,
        dictionary: &ControlDictionary,
        k: usize,
        points: &[f64],
    ) -> Vec<f64> {
        let t = self.grid.t(k);
        let mu = self.measure_argument(k);
        let frozen = field.freeze(t, mu);
        let d = field.dim();
        let mut out = vec![0.0; points.len()];
        match &self.driver {
            Driver::Open(u) => {
                for (x, o) in points.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
                    frozen.eval(u, x, o);
                }
            }
            _ => {
                let ctrl = self.step_control(k).unwrap();
                let v = Controlled {
                    frozen,
                    dictionary,
                    control: ctrl,
                    dim: d,
                };
                for (x, o) in points.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
                    v.eval(x, o);
                }
            }
        }
        out
    }
}

/// Velocity of a single atom under a fixed stage.
pub(crate) trait AtomVelocity: Sync {
    fn eval(&self, x: &[f64], out: &mut [f64]);
}

/// Evaluates `v̂(t, μ, ω)` or a convex combination of such fields.
pub(crate) struct Controlled<'a> {
    pub frozen: Box<dyn FrozenField + 'a>,
    pub dictionary: &'a ControlDictionary,
    pub control: &'a StepControl,
    pub dim: usize,
}

impl AtomVelocity for Controlled<'_> {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let mut u = Vec::new();
        match self.control {
            StepControl::Select(j) => {
                self.dictionary.entry(*j).apply(x, &mut u);
                self.frozen.eval(&u, x, out);
            }
            StepControl::Mix(w) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let mut tmp = vec![0.0; self.dim];
                for (j, &wj) in w.iter().enumerate() {
                    if wj == 0.0 {
                        continue;
                    }
                    self.dictionary.entry(j).apply(x, &mut u);
                    self.frozen.eval(&u, x, &mut tmp);
                    for (o, t) in out.iter_mut().zip(&tmp) {
                        *o += wj * t;
                    }
                }
            }
        }
    }
}

struct OpenVelocity<'a> {
    frozen: Box<dyn FrozenField + 'a>,
    control: &'a [f64],
}

impl AtomVelocity for OpenVelocity<'_> {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.frozen.eval(self.control, x, out);
    }
}

/// Supplies the stage velocity for step `k` at time `t` given the stage state.
pub(crate) trait StepDriver: Sync {
    fn stage<'a>(&'a self, k: usize, t: f64, state: &ParticleMeasure) -> Box<dyn AtomVelocity + 'a>;
}

pub(crate) struct SelfDriver<'a> {
    pub field: &'a dyn ControlledField,
    pub dictionary: &'a ControlDictionary,
    pub signal: &'a ControlSignal,
}

impl StepDriver for SelfDriver<'_> {
    fn stage<'a>(&'a self, k: usize, t: f64, state: &ParticleMeasure) -> Box<dyn AtomVelocity + 'a> {
        Box::new(Controlled {
            frozen: self.field.freeze(t, state),
            dictionary: self.dictionary,
            control: &self.signal.steps[k],
            dim: self.field.dim(),
        })
    }
}

pub(crate) struct AlongDriver<'a> {
    pub field: &'a dyn ControlledField,
    pub dictionary: &'a ControlDictionary,
    pub signal: &'a ControlSignal,
    pub curve: &'a [ParticleMeasure],
    pub grid: &'a TimeGrid,
}

impl StepDriver for AlongDriver<'_> {
    fn stage<'a>(&'a self, k: usize, t: f64, _state: &ParticleMeasure) -> Box<dyn AtomVelocity + 'a> {
        let theta = ((t - self.grid.t(k)) / self.grid.h(k)).clamp(0.0, 1.0);
        let a = &self.curve[k];
        let frozen = if theta == 0.0 {
            self.field.freeze(t, a)
        } else if theta == 1.0 {
            self.field.freeze(t, &self.curve[k + 1])
        } else {
            let b = &self.curve[k + 1];
            let coords = a
                .coords()
                .iter()
                .zip(b.coords())
                .map(|(x, y)| x + theta * (y - x))
                .collect();
            let mid = ParticleMeasure::from_parts_unchecked(a.dim(), coords, a.weights().to_vec());
            self.field.freeze(t, &mid)
        };
        Box::new(Controlled {
            frozen,
            dictionary: self.dictionary,
            control: &self.signal.steps[k],
            dim: self.field.dim(),
        })
    }
}

struct OpenDriver<'a> {
    field: &'a dyn ControlledField,
    control: &'a [f64],
}

impl StepDriver for OpenDriver<'_> {
    fn stage<'a>(&'a self, _k: usize, t: f64, state: &ParticleMeasure) -> Box<dyn AtomVelocity + 'a> {
        Box::new(OpenVelocity {
            frozen: self.field.freeze(t, state),
            control: self.control,
        })
    }
}

fn derivative(v: &dyn AtomVelocity, coords: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; coords.len()];
    if coords.len() / dim >= PARALLEL_ATOMS {
        out.par_chunks_mut(dim)
            .zip(coords.par_chunks(dim))
            .for_each(|(o, x)| v.eval(x, o));
    } else {
        for (o, x) in out.chunks_exact_mut(dim).zip(coords.chunks_exact(dim)) {
            v.eval(x, o);
        }
    }
    out
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

/// One classical RK4 step from `state` at node `k`.
fn rk4_step(driver: &dyn StepDriver, grid: &TimeGrid, k: usize, state: &ParticleMeasure) -> Vec<f64> {
    let t = grid.t(k);
    let h = grid.h(k);
    let d = state.dim();
    let w = state.weights();
    let x = state.coords();
    let stage = |c: Vec<f64>| ParticleMeasure::from_parts_unchecked(d, c, w.to_vec());

    let k1 = derivative(driver.stage(k, t, state).as_ref(), x, d);
    let x2 = axpy(x, 0.5 * h, &k1);
    let s2 = stage(x2);
    let k2 = derivative(driver.stage(k, t + 0.5 * h, &s2).as_ref(), s2.coords(), d);
    let x3 = axpy(x, 0.5 * h, &k2);
    let s3 = stage(x3);
    let k3 = derivative(driver.stage(k, t + 0.5 * h, &s3).as_ref(), s3.coords(), d);
    let x4 = axpy(x, h, &k3);
    let s4 = stage(x4);
    let k4 = derivative(driver.stage(k, t + h, &s4).as_ref(), s4.coords(), d);

    let mut next = x.to_vec();
    for i in 0..next.len() {
        next[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    next
}

/// Advances one step and checks for divergence.
pub(crate) fn step(
    driver: &dyn StepDriver,
    grid: &TimeGrid,
    k: usize,
    state: &ParticleMeasure,
) -> Result<ParticleMeasure> {
    let next = rk4_step(driver, grid, k, state);
    if let Some(i) = next.iter().position(|c| !c.is_finite()) {
        return Err(Error::Divergence {
            time: grid.t(k + 1),
            atom: i / state.dim(),
        });
    }
    Ok(ParticleMeasure::from_parts_unchecked(
        state.dim(),
        next,
        state.weights().to_vec(),
    ))
}

pub(crate) fn integrate(
    driver: &dyn StepDriver,
    grid: &TimeGrid,
    mu0: &ParticleMeasure,
) -> Result<Vec<ParticleMeasure>> {
    let mut states = Vec::with_capacity(grid.steps() + 1);
    states.push(mu0.clone());
    for k in 0..grid.steps() {
        let next = step(driver, grid, k, &states[k])?;
        states.push(next);
    }
    Ok(states)
}

fn check_setup(
    field: &dyn ControlledField,
    dictionary: &ControlDictionary,
    mu0: &ParticleMeasure,
) -> Result<()> {
    if mu0.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: mu0.dim(),
        });
    }
    dictionary.validate(field.dim(), field.control_dim())
}

/// Self-consistent flow of `mu0` under the dictionary controls in `signal`.
pub fn flow(
    field: &dyn ControlledField,
    dictionary: &ControlDictionary,
    signal: &ControlSignal,
    mu0: &ParticleMeasure,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    check_setup(field, dictionary, mu0)?;
    signal.validate(grid.steps(), dictionary.len())?;
    let driver = SelfDriver {
        field,
        dictionary,
        signal,
    };
    let states = integrate(&driver, grid, mu0)?;
    Ok(Trajectory {
        grid: grid.clone(),
        states,
        driver: Driver::SelfConsistent(signal.clone()),
    })
}

/// Flow of `mu0` under the linear continuity equation whose velocity uses
/// `curve` (one measure per grid node, same atom count throughout) as the
/// measure argument. Between nodes the curve is interpolated linearly along
/// its atoms.
pub fn flow_along(
    field: &dyn ControlledField,
    dictionary: &ControlDictionary,
    signal: &ControlSignal,
    curve: &[ParticleMeasure],
    mu0: &ParticleMeasure,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    check_setup(field, dictionary, mu0)?;
    signal.validate(grid.steps(), dictionary.len())?;
    if curve.len() != grid.times().len() {
        return Err(Error::Invalid(format!(
            "measure curve has {} nodes, grid has {}",
            curve.len(),
            grid.times().len()
        )));
    }
    let (n, d) = (curve[0].len(), curve[0].dim());
    if curve.iter().any(|m| m.len() != n || m.dim() != d) || d != field.dim() {
        return Err(Error::Invalid("measure curve must keep a fixed atom layout".into()));
    }
    let driver = AlongDriver {
        field,
        dictionary,
        signal,
        curve,
        grid,
    };
    let states = integrate(&driver, grid, mu0)?;
    Ok(Trajectory {
        grid: grid.clone(),
        states,
        driver: Driver::Along {
            signal: signal.clone(),
            curve: curve.to_vec(),
        },
    })
}

/// Self-consistent flow with a raw control vector held fixed.
pub fn flow_open(
    field: &dyn ControlledField,
    control: &[f64],
    mu0: &ParticleMeasure,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    if mu0.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: mu0.dim(),
        });
    }
    if control.len() != field.control_dim() {
        return Err(Error::DimensionMismatch {
            expected: field.control_dim(),
            got: control.len(),
        });
    }
    let driver = OpenDriver { field, control };
    let states = integrate(&driver, grid, mu0)?;
    Ok(Trajectory {
        grid: grid.clone(),
        states,
        driver: Driver::Open(control.to_vec()),
    })
}
