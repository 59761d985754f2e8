//! Non-local controlled velocity fields.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::ParticleMeasure;

/// A field `v(t, μ, u)(x)` with everything that depends on `(t, μ)` already
/// evaluated.
pub trait FrozenField: Sync {
    fn eval(&self, u: &[f64], x: &[f64], out: &mut [f64]);
}

/// Velocity field depending on time, the current measure, a control value
/// and the position.
pub trait ControlledField: Send + Sync {
    fn dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    /// Evaluates the measure-dependent part once so that many positions can be
    /// queried cheaply.
    fn freeze(&self, t: f64, mu: &ParticleMeasure) -> Box<dyn FrozenField + '_>;

    fn velocity(&self, t: f64, mu: &ParticleMeasure, u: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.freeze(t, mu).eval(u, x, &mut out);
        out
    }
}

type BoxedFn = Box<dyn Fn(f64, &ParticleMeasure, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Field given by a closure. Each query recomputes the measure terms, so this
/// is meant for tests and small experiments.
pub struct FnField {
    dim: usize,
    control_dim: usize,
    f: BoxedFn,
}

impl FnField {
    pub fn new<F>(dim: usize, control_dim: usize, f: F) -> Self
    where
        F: Fn(f64, &ParticleMeasure, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            control_dim,
            f: Box::new(f),
        }
    }
}

struct FrozenFn<'a> {
    t: f64,
    mu: ParticleMeasure,
    f: &'a BoxedFn,
}

impl FrozenField for FrozenFn<'_> {
    fn eval(&self, u: &[f64], x: &[f64], out: &mut [f64]) {
        let v = (self.f)(self.t, &self.mu, u, x);
        out.copy_from_slice(&v);
    }
}

impl ControlledField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn freeze(&self, t: f64, mu: &ParticleMeasure) -> Box<dyn FrozenField + '_> {
        Box::new(FrozenFn {
            t,
            mu: mu.clone(),
            f: &self.f,
        })
    }
}

/// One pairwise interaction term `weight · (y - x) |y - x|^power`, averaged
/// over `y ~ μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interaction {
    pub weight: f64,
    #[serde(default)]
    pub power: u32,
}

/// Periodic drift `amplitude · sin(2π frequency t + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modulation {
    pub amplitude: Vec<f64>,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Velocity
/// `A x + b + s(t) + B u + C mean(μ) + Σ interactions + κ Σ_y w_y sin(y - x)`,
/// where `s` is the optional modulation and the sine acts componentwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionField {
    dim: usize,
    control_dim: usize,
    linear: Vec<f64>,
    drift: Vec<f64>,
    modulation: Option<Modulation>,
    control: Vec<f64>,
    mean_coupling: Vec<f64>,
    interactions: Vec<Interaction>,
    kuramoto: f64,
}

impl ExpressionField {
    /// Zero field in dimension `dim` with `control_dim` controls.
    pub fn zero(dim: usize, control_dim: usize) -> Self {
        Self {
            dim,
            control_dim,
            linear: vec![0.0; dim * dim],
            drift: vec![0.0; dim],
            modulation: None,
            control: vec![0.0; dim * control_dim],
            mean_coupling: vec![0.0; dim * dim],
            interactions: Vec::new(),
            kuramoto: 0.0,
        }
    }

    pub fn with_linear(mut self, a: Vec<f64>) -> Result<Self> {
        expect_len("linear", &a, self.dim * self.dim)?;
        self.linear = a;
        Ok(self)
    }

    pub fn with_drift(mut self, b: Vec<f64>) -> Result<Self> {
        expect_len("drift", &b, self.dim)?;
        self.drift = b;
        Ok(self)
    }

    pub fn with_modulation(mut self, m: Modulation) -> Result<Self> {
        expect_len("modulation amplitude", &m.amplitude, self.dim)?;
        self.modulation = Some(m);
        Ok(self)
    }

    pub fn with_control(mut self, bu: Vec<f64>) -> Result<Self> {
        expect_len("control", &bu, self.dim * self.control_dim)?;
        self.control = bu;
        Ok(self)
    }

    pub fn with_mean_coupling(mut self, c: Vec<f64>) -> Result<Self> {
        expect_len("mean_coupling", &c, self.dim * self.dim)?;
        self.mean_coupling = c;
        Ok(self)
    }

    pub fn with_interaction(mut self, i: Interaction) -> Self {
        self.interactions.push(i);
        self
    }

    pub fn with_kuramoto(mut self, k: f64) -> Self {
        self.kuramoto = k;
        self
    }

    fn identity(dim: usize, s: f64) -> Vec<f64> {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = s;
        }
        a
    }

    fn is_non_local(&self) -> bool {
        !self.interactions.is_empty() || self.kuramoto != 0.0
    }
}

fn expect_len(what: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Invalid(format!(
            "{what} needs {n} entries, got {}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid(format!("{what} has non-finite entries")));
    }
    Ok(())
}

struct FrozenExpr<'a> {
    field: &'a ExpressionField,
    /// `b + s(t) + C mean(μ)`.
    offset: Vec<f64>,
    /// Atoms of μ, kept only when pairwise terms are present.
    atoms: Option<ParticleMeasure>,
}

impl FrozenField for FrozenExpr<'_> {
    fn eval(&self, u: &[f64], x: &[f64], out: &mut [f64]) {
        let f = self.field;
        let d = f.dim;
        for i in 0..d {
            let row = &f.linear[i * d..(i + 1) * d];
            let mut v = self.offset[i];
            for (a, xk) in row.iter().zip(x) {
                v += a * xk;
            }
            if f.control_dim > 0 {
                let crow = &f.control[i * f.control_dim..(i + 1) * f.control_dim];
                for (b, uk) in crow.iter().zip(u) {
                    v += b * uk;
                }
            }
            out[i] = v;
        }
        if let Some(mu) = &self.atoms {
            let mut diff = vec![0.0; d];
            for (y, w) in mu.points().zip(mu.weights()) {
                let mut r2 = 0.0;
                for k in 0..d {
                    diff[k] = y[k] - x[k];
                    r2 += diff[k] * diff[k];
                }
                let r = r2.sqrt();
                for it in &f.interactions {
                    let s = w * it.weight * r.powi(it.power as i32);
                    for k in 0..d {
                        out[k] += s * diff[k];
                    }
                }
                if f.kuramoto != 0.0 {
                    for k in 0..d {
                        out[k] += f.kuramoto * w * diff[k].sin();
                    }
                }
            }
        }
    }
}

impl ControlledField for ExpressionField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn freeze(&self, t: f64, mu: &ParticleMeasure) -> Box<dyn FrozenField + '_> {
        let d = self.dim;
        let mut offset = self.drift.clone();
        if let Some(m) = &self.modulation {
            let s = (2.0 * PI * m.frequency * t + m.phase).sin();
            for (o, a) in offset.iter_mut().zip(&m.amplitude) {
                *o += a * s;
            }
        }
        if self.mean_coupling.iter().any(|&c| c != 0.0) {
            let mean = mu.mean();
            for i in 0..d {
                for k in 0..d {
                    offset[i] += self.mean_coupling[i * d + k] * mean[k];
                }
            }
        }
        Box::new(FrozenExpr {
            field: self,
            offset,
            atoms: self.is_non_local().then(|| mu.clone()),
        })
    }
}

/// Config-level description of a field: a named preset with parameters, or a
/// fully explicit affine form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub name: String,
    pub dim: usize,
    /// Control dimension; presets choose a default.
    #[serde(default)]
    pub control_dim: Option<usize>,
    /// Scalar rate used by the contraction, attraction and kuramoto presets.
    #[serde(default)]
    pub rate: Option<f64>,
    #[serde(default)]
    pub drift: Option<Vec<f64>>,
    #[serde(default)]
    pub linear: Option<Vec<f64>>,
    #[serde(default)]
    pub control: Option<Vec<f64>>,
    #[serde(default)]
    pub mean_coupling: Option<Vec<f64>>,
    #[serde(default)]
    pub modulation: Option<Modulation>,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
    #[serde(default)]
    pub kuramoto: Option<f64>,
}

/// Names accepted by [`FieldSpec::build`].
pub const PRESETS: &[&str] = &[
    "zero",
    "constant-drift",
    "linear-contraction",
    "mean-attraction",
    "control-translation",
    "kuramoto",
    "affine",
];

impl FieldSpec {
    pub fn preset(name: &str, dim: usize) -> Self {
        Self {
            name: name.to_string(),
            dim,
            control_dim: None,
            rate: None,
            drift: None,
            linear: None,
            control: None,
            mean_coupling: None,
            modulation: None,
            interactions: Vec::new(),
            kuramoto: None,
        }
    }

    pub fn build(&self) -> Result<ExpressionField> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::Invalid("field dimension must be positive".into()));
        }
        let rate = self.rate.unwrap_or(1.0);
        let base_cdim = match self.name.as_str() {
            "control-translation" => d,
            _ => 0,
        };
        let cdim = self.control_dim.unwrap_or(base_cdim);
        let mut f = ExpressionField::zero(d, cdim);
        match self.name.as_str() {
            "zero" | "affine" => {}
            "constant-drift" => {
                if self.drift.is_none() {
                    return Err(Error::Invalid("constant-drift needs `drift`".into()));
                }
            }
            "linear-contraction" => f = f.with_linear(ExpressionField::identity(d, -rate))?,
            "mean-attraction" => {
                f = f
                    .with_linear(ExpressionField::identity(d, -rate))?
                    .with_mean_coupling(ExpressionField::identity(d, rate))?
            }
            "control-translation" => {
                if cdim != d {
                    return Err(Error::Invalid(
                        "control-translation needs control_dim equal to dim".into(),
                    ));
                }
                f = f.with_control(ExpressionField::identity(d, 1.0))?
            }
            "kuramoto" => f = f.with_kuramoto(rate),
            other => {
                return Err(Error::Invalid(format!(
                    "unknown field {other:?}; expected one of {PRESETS:?}"
                )))
            }
        }
        if let Some(b) = &self.drift {
            f = f.with_drift(b.clone())?;
        }
        if let Some(a) = &self.linear {
            f = f.with_linear(a.clone())?;
        }
        if let Some(bu) = &self.control {
            f = f.with_control(bu.clone())?;
        }
        if let Some(c) = &self.mean_coupling {
            f = f.with_mean_coupling(c.clone())?;
        }
        if let Some(m) = &self.modulation {
            f = f.with_modulation(m.clone())?;
        }
        if let Some(k) = self.kuramoto {
            f = f.with_kuramoto(k);
        }
        for it in &self.interactions {
            f = f.with_interaction(*it);
        }
        Ok(f)
    }
}
