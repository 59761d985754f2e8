//! TOML schema of scenario files and its translation into problem objects.

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::dynamics::{
    ControlDictionary, ControlSignal, ControlledField, ExpressionField, FeedbackMap, FieldSpec, StepControl,
    TimeGrid,
};
use crate::error::{Error, Result};
use crate::estimates::{HypothesisBounds, PiecewiseConstant};
use crate::inclusion::InclusionProblem;
use crate::measures::ParticleMeasure;
use crate::ocp::{Constraint, Cost, CostKind, MayerProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    Filippov,
    Relax,
    Ocp,
    Certify,
    Compactness,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::Filippov => "filippov",
            Kind::Relax => "relax",
            Kind::Ocp => "ocp",
            Kind::Certify => "certify",
            Kind::Compactness => "compactness",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<String>,
    pub field: FieldSpec,
    pub dictionary: Option<DictionarySpec>,
    pub bounds: Option<BoundsSpec>,
    pub grid: GridSpec,
    pub initial: MeasureSpec,
    pub control: Option<SignalSpec>,
    pub inclusion: Option<InclusionSpec>,
    pub reference: Option<ReferenceSpec>,
    pub filippov: Option<FilippovSpec>,
    pub relax: Option<RelaxSpec>,
    pub ocp: Option<OcpSpec>,
    pub certify: Option<CertifySpec>,
    pub compactness: Option<CompactnessSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionarySpec {
    /// Open-loop constant controls.
    pub constants: Option<Vec<Vec<f64>>>,
    pub entries: Option<Vec<FeedbackMap>>,
    pub template: Option<TemplateSpec>,
    #[serde(default)]
    pub lipschitz_budget: f64,
}

/// Affine-saturated feedback grid `clamp(a·x + b, lo, hi)`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSpec {
    pub gains: Vec<f64>,
    pub offsets: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

/// A constant value or a step function.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Envelope {
    Constant(f64),
    Steps { breaks: Vec<f64>, values: Vec<f64> },
}

impl Envelope {
    fn build(&self, horizon: f64) -> Result<PiecewiseConstant> {
        match self {
            Envelope::Constant(v) => PiecewiseConstant::constant(*v, 0.0, horizon),
            Envelope::Steps { breaks, values } => PiecewiseConstant::new(breaks.clone(), values.clone()),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    #[serde(default = "one")]
    pub p: f64,
    /// Initial support radius; the radius of the initial measure when absent.
    pub r: Option<f64>,
    pub m: Envelope,
    pub l_k: Option<Envelope>,
    pub big_l_k: Option<Envelope>,
    pub k_radius: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon: Option<f64>,
    pub steps: Option<usize>,
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub points: Option<Vec<Vec<f64>>>,
    /// Uniform when absent.
    pub weights: Option<Vec<f64>>,
    /// CSV (coordinates then weight per row) or JSON file, relative to the
    /// scenario file.
    pub file: Option<String>,
}

/// Per-step controls for `simulate` and `certify`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub constant: Option<usize>,
    pub indices: Option<Vec<usize>>,
    pub mix: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InclusionSpec {
    pub lattice_spacing: Option<f64>,
    #[serde(default)]
    pub convex: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub field: FieldSpec,
    #[serde(default)]
    pub control: Vec<f64>,
    /// Start of the reference; the scenario's initial measure when absent.
    pub initial: Option<MeasureSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilippovSpec {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    #[serde(default = "yes")]
    pub enforce_hypotheses: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxSpec {
    /// Constant relaxed weights.
    pub weights: Option<Vec<f64>>,
    /// One weight vector per grid step.
    pub schedule: Option<Vec<Vec<f64>>>,
    pub subintervals: Option<usize>,
    pub delta: Option<f64>,
    pub max_subintervals: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostSpec {
    Constant {
        value: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    MeanDistance {
        target: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
    },
    Variance {
        #[serde(default = "one")]
        scale: f64,
    },
    Wasserstein {
        target: MeasureSpec,
        #[serde(default = "one")]
        p: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    SupportRadius {
        #[serde(default = "one")]
        scale: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstraintSpec {
    SupportCap { radius: f64 },
    MomentCap { p: f64, cap: f64 },
}

impl ConstraintSpec {
    fn build(&self) -> Constraint {
        match *self {
            ConstraintSpec::SupportCap { radius } => Constraint::SupportCap(radius),
            ConstraintSpec::MomentCap { p, cap } => Constraint::MomentCap { p, cap },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpSpec {
    pub cost: CostSpec,
    #[serde(default)]
    pub running: Vec<ConstraintSpec>,
    #[serde(default)]
    pub terminal: Vec<ConstraintSpec>,
    pub eps_k: Option<f64>,
    pub eps_q: Option<f64>,
    #[serde(default)]
    pub switch_budget: usize,
    pub value: Option<ValueSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueSpec {
    #[serde(default)]
    pub tau: f64,
    pub resolution: Option<usize>,
    pub segments: Option<usize>,
    /// Largest accepted `V - V_co`.
    pub gap_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySpec {
    /// Second field whose flow is compared with the Grönwall estimate.
    pub perturbation: Option<FieldSpec>,
    /// Start of the perturbed flow; the scenario's initial measure when absent.
    pub perturbation_initial: Option<MeasureSpec>,
    pub battery_points: Option<usize>,
    pub battery_pairs: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompactnessSpec {
    /// Explicit family of pure signals.
    pub signals: Option<Vec<Vec<usize>>>,
    /// Alternating family: `blocks[i]` pairs of `low`/`high` blocks each.
    pub zigzag: Option<ZigzagSpec>,
    pub epsilon: Option<f64>,
    pub tol: Option<f64>,
    /// Cost for the minimizing-sequence experiment.
    pub cost: Option<CostSpec>,
    pub lsc_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZigzagSpec {
    pub blocks: Vec<usize>,
    pub low: usize,
    pub high: usize,
}

impl MeasureSpec {
    pub fn build(&self, dim: usize, base: &Path) -> Result<ParticleMeasure> {
        let mu = match (&self.points, &self.file) {
            (Some(_), Some(_)) => {
                return Err(Error::Invalid("measure takes either `points` or `file`".into()))
            }
            (Some(pts), None) => match &self.weights {
                Some(w) => ParticleMeasure::new(dim, pts.clone(), w.clone())?,
                None => ParticleMeasure::uniform(dim, pts.clone())?,
            },
            (None, Some(f)) => {
                if self.weights.is_some() {
                    return Err(Error::Invalid("weights come from the measure file".into()));
                }
                let path = base.join(f);
                let text = std::fs::read(&path)?;
                if path.extension().is_some_and(|e| e == "json") {
                    ParticleMeasure::from_json(std::str::from_utf8(&text).map_err(|e| Error::Invalid(e.to_string()))?)?
                } else {
                    ParticleMeasure::from_csv(text.as_slice())?
                }
            }
            (None, None) => return Err(Error::Invalid("measure needs `points` or `file`".into())),
        };
        if mu.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: mu.dim(),
            });
        }
        Ok(mu)
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<TimeGrid> {
        match (&self.times, self.steps) {
            (Some(t), None) => {
                let g = TimeGrid::from_times(t.clone())?;
                if g.start() != 0.0 {
                    return Err(Error::Invalid("grid must start at 0".into()));
                }
                if let Some(h) = self.horizon {
                    if (g.horizon() - h).abs() > 1e-12 {
                        return Err(Error::Invalid("grid times do not end at the horizon".into()));
                    }
                }
                Ok(g)
            }
            (None, Some(s)) => {
                let h = self
                    .horizon
                    .ok_or_else(|| Error::Invalid("grid needs `horizon` with `steps`".into()))?;
                TimeGrid::uniform(h, s)
            }
            _ => Err(Error::Invalid("grid needs exactly one of `steps` or `times`".into())),
        }
    }
}

impl DictionarySpec {
    pub fn build(&self, dim: usize) -> Result<ControlDictionary> {
        match (&self.constants, &self.entries, &self.template) {
            (Some(c), None, None) => ControlDictionary::constants(c.clone()),
            (None, Some(e), None) => ControlDictionary::new(e.clone(), self.lipschitz_budget),
            (None, None, Some(t)) => ControlDictionary::affine_template(
                dim,
                &t.gains,
                &t.offsets,
                t.lo,
                t.hi,
                self.lipschitz_budget,
            ),
            _ => Err(Error::Invalid(
                "dictionary needs exactly one of `constants`, `entries` or `template`".into(),
            )),
        }
    }
}

impl SignalSpec {
    pub fn build(&self, steps: usize) -> Result<ControlSignal> {
        match (self.constant, &self.indices, &self.mix) {
            (Some(j), None, None) => Ok(ControlSignal::constant(j, steps)),
            (None, Some(i), None) => Ok(ControlSignal::from_indices(i)),
            (None, None, Some(w)) => Ok(ControlSignal::constant_mix(w.clone(), steps)),
            _ => Err(Error::Invalid(
                "control needs exactly one of `constant`, `indices` or `mix`".into(),
            )),
        }
    }
}

impl RelaxSpec {
    pub fn signal(&self, steps: usize) -> Result<ControlSignal> {
        match (&self.weights, &self.schedule) {
            (Some(w), None) => Ok(ControlSignal::constant_mix(w.clone(), steps)),
            (None, Some(s)) => Ok(ControlSignal {
                steps: s.iter().map(|w| StepControl::Mix(w.clone())).collect(),
            }),
            _ => Err(Error::Invalid("relax needs exactly one of `weights` or `schedule`".into())),
        }
    }
}

impl CostSpec {
    pub fn build(&self, dim: usize, base: &Path) -> Result<Cost> {
        Ok(match self {
            CostSpec::Constant { value, scale } => Cost::scaled(CostKind::Constant(*value), *scale),
            CostSpec::MeanDistance { target, scale } => {
                if target.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: target.len(),
                    });
                }
                Cost::scaled(CostKind::MeanDistance(target.clone()), *scale)
            }
            CostSpec::Variance { scale } => Cost::scaled(CostKind::Variance, *scale),
            CostSpec::Wasserstein { target, p, scale } => Cost::scaled(
                CostKind::Wasserstein {
                    target: target.build(dim, base)?,
                    p: *p,
                },
                *scale,
            ),
            CostSpec::SupportRadius { scale } => Cost::scaled(CostKind::SupportRadius, *scale),
        })
    }
}

impl ZigzagSpec {
    pub fn build(&self, steps: usize) -> Result<Vec<ControlSignal>> {
        self.blocks
            .iter()
            .map(|&b| {
                if b == 0 || !steps.is_multiple_of(2 * b) {
                    return Err(Error::Invalid(format!(
                        "zigzag with {b} block pairs does not divide {steps} steps"
                    )));
                }
                let len = steps / (2 * b);
                let idx: Vec<usize> = (0..steps)
                    .map(|k| if (k / len).is_multiple_of(2) { self.low } else { self.high })
                    .collect();
                Ok(ControlSignal::from_indices(&idx))
            })
            .collect()
    }
}

/// Objects shared by every scenario kind.
pub struct Built {
    pub field: Arc<ExpressionField>,
    pub dictionary: ControlDictionary,
    pub grid: TimeGrid,
    pub mu0: ParticleMeasure,
    pub bounds: Option<HypothesisBounds>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn build(&self, base: &Path) -> Result<Built> {
        let field = Arc::new(self.field.build()?);
        let dim = self.field.dim;
        let dictionary = match &self.dictionary {
            Some(d) => d.build(dim)?,
            None => ControlDictionary::trivial(),
        };
        dictionary.validate(dim, field.control_dim())?;
        let grid = self.grid.build()?;
        let mu0 = self.initial.build(dim, base)?;
        let bounds = match &self.bounds {
            Some(b) => {
                let h = grid.horizon();
                let r = b.r.unwrap_or_else(|| mu0.support_radius());
                let bounds = HypothesisBounds {
                    p: b.p,
                    r,
                    horizon: h,
                    m: b.m.build(h)?,
                    l_k: b.l_k.as_ref().unwrap_or(&Envelope::Constant(0.0)).build(h)?,
                    big_l_k: b.big_l_k.as_ref().unwrap_or(&Envelope::Constant(0.0)).build(h)?,
                    k_radius: b.k_radius,
                };
                bounds.validate()?;
                if mu0.support_radius() > r * (1.0 + 1e-12) {
                    return Err(Error::Invalid(format!(
                        "initial support radius {} exceeds r = {r}",
                        mu0.support_radius()
                    )));
                }
                Some(bounds)
            }
            None => None,
        };
        Ok(Built {
            field,
            dictionary,
            grid,
            mu0,
            bounds,
        })
    }

    /// Inclusion problem from the shared objects; needs `[bounds]`.
    pub fn inclusion(&self, b: &Built) -> Result<InclusionProblem> {
        let bounds = b
            .bounds
            .clone()
            .ok_or_else(|| Error::Invalid(format!("{} scenarios need [bounds]", self.kind.name())))?;
        let mut p = InclusionProblem::new(b.field.clone(), b.dictionary.clone(), bounds)?;
        if let Some(inc) = &self.inclusion {
            if let Some(s) = inc.lattice_spacing {
                p = p.with_lattice_spacing(s)?;
            }
            p = p.with_convexity(inc.convex);
        }
        Ok(p)
    }

    pub fn mayer(&self, b: &Built, base: &Path) -> Result<MayerProblem> {
        let spec = self
            .ocp
            .as_ref()
            .ok_or_else(|| Error::Invalid("ocp scenarios need [ocp]".into()))?;
        let inc = self.inclusion(b)?;
        let cost = spec.cost.build(self.field.dim, base)?;
        let mut p = MayerProblem::new(inc, cost);
        for c in &spec.running {
            p = p.with_running(c.build());
        }
        for c in &spec.terminal {
            p = p.with_terminal(c.build());
        }
        let (ek, eq) = (spec.eps_k.unwrap_or(p.eps_k), spec.eps_q.unwrap_or(p.eps_q));
        p = p.with_tolerances(ek, eq);
        p.validate()?;
        Ok(p)
    }
}
