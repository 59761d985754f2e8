//! Explicit a priori constants and envelopes, and certificates comparing
//! simulated curves against them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative part of the default certificate tolerance.
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

/// Nonnegative step function on `[breaks[0], breaks[n]]`, right-continuous,
/// extended by its last value at the right endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstant {
    breaks: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breaks.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::Invalid(format!(
                "step function needs one more breakpoint than values ({} vs {})",
                breaks.len(),
                values.len()
            )));
        }
        if breaks.iter().any(|b| !b.is_finite()) || breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("breakpoints must be finite and increasing".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Invalid("envelope values must be finite and nonnegative".into()));
        }
        Ok(Self { breaks, values })
    }

    pub fn constant(value: f64, start: f64, end: f64) -> Result<Self> {
        Self::new(vec![start, end], vec![value])
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn start(&self) -> f64 {
        self.breaks[0]
    }

    pub fn end(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.breaks[1..].partition_point(|&b| b <= t);
        self.values[i.min(self.values.len() - 1)]
    }

    /// Exact integral over `[a, b]` intersected with the domain.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut s = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            let lo = self.breaks[i].max(a);
            let hi = self.breaks[i + 1].min(b);
            if hi > lo {
                s += v * (hi - lo);
            }
        }
        s
    }

    pub fn norm1(&self) -> f64 {
        self.integral(self.start(), self.end())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.breaks.clone(), self.values.iter().map(|v| v * s).collect())
    }
}

/// `(C_p, C_p')` with `C_p = 2^{(p-1)/p}` and `C_p' = 2^{p-1}/p`.
pub fn constants(p: f64) -> Result<(f64, f64)> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Domain(format!("order must be >= 1, got {p}")));
    }
    Ok((2f64.powf((p - 1.0) / p), 2f64.powf(p - 1.0) / p))
}

/// Declared envelopes of a field or an inclusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisBounds {
    pub p: f64,
    /// Radius of a ball containing the initial support.
    pub r: f64,
    pub horizon: f64,
    /// Sublinearity envelope.
    pub m: PiecewiseConstant,
    /// Lipschitz envelope in space on `K`.
    pub l_k: PiecewiseConstant,
    /// Lipschitz envelope of the set-valued map in the measure variable.
    pub big_l_k: PiecewiseConstant,
    /// Radius of `K`; the support envelope `R_r` when absent.
    #[serde(default)]
    pub k_radius: Option<f64>,
}

impl HypothesisBounds {
    /// Constant envelopes on `[0, horizon]`.
    pub fn constant(p: f64, r: f64, horizon: f64, m: f64, l_k: f64, big_l_k: f64) -> Result<Self> {
        let b = Self {
            p,
            r,
            horizon,
            m: PiecewiseConstant::constant(m, 0.0, horizon)?,
            l_k: PiecewiseConstant::constant(l_k, 0.0, horizon)?,
            big_l_k: PiecewiseConstant::constant(big_l_k, 0.0, horizon)?,
            k_radius: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        constants(self.p)?;
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Invalid(format!("r must be positive, got {}", self.r)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Invalid("horizon must be positive".into()));
        }
        for (name, f) in [("m", &self.m), ("l_K", &self.l_k), ("L_K", &self.big_l_k)] {
            if f.start() > 0.0 || f.end() < self.horizon {
                return Err(Error::Invalid(format!(
                    "envelope {name} does not cover [0, {}]",
                    self.horizon
                )));
            }
        }
        if let Some(k) = self.k_radius {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::Invalid("K radius must be positive".into()));
            }
        }
        Ok(())
    }

    /// Radius of the compact set `K` on which Lipschitz envelopes are declared.
    pub fn k_radius(&self) -> f64 {
        self.k_radius
            .unwrap_or_else(|| cauchy_lipschitz_envelope(self).0)
    }
}

/// Support envelope `R_r = (r + ‖m‖₁) exp(‖m‖₁)` and `m_r = (1 + R_r) m`.
pub fn cauchy_lipschitz_envelope(bounds: &HypothesisBounds) -> (f64, PiecewiseConstant) {
    let n = bounds.m.integral(0.0, bounds.horizon);
    let rr = (bounds.r + n) * n.exp();
    // Scaling a valid envelope by a finite positive factor stays valid.
    let mr = bounds.m.scaled(1.0 + rr).expect("scaled envelope");
    (rr, mr)
}

/// Momentum estimate
/// `C_p (M_p(μ⁰) + ∫₀ᵗ m) exp(C_p' ‖m‖_{L¹[0,t]}^p)`.
pub fn momentum_bound(bounds: &HypothesisBounds, mp0: f64, t: f64) -> Result<f64> {
    let (c, c2) = constants(bounds.p)?;
    let im = bounds.m.integral(0.0, t);
    Ok(c * (mp0 + im) * (c2 * im.powf(bounds.p)).exp())
}

/// Variant with sublinearity `m(t)(1 + |x| + M(t))`; `big_m` is sampled on
/// `times` and the integral `∫ m(1 + M)` uses the trapezoid rule.
pub fn momentum_bound_general(
    bounds: &HypothesisBounds,
    mp0: f64,
    times: &[f64],
    big_m: &[f64],
    t: f64,
) -> Result<f64> {
    if times.len() != big_m.len() || times.is_empty() {
        return Err(Error::Invalid("M(·) samples do not match their times".into()));
    }
    let (c, c2) = constants(bounds.p)?;
    let mut integral = 0.0;
    for k in 0..times.len() - 1 {
        let (a, b) = (times[k], times[k + 1].min(t));
        if b <= a {
            break;
        }
        // m is constant between its breakpoints; integrate exactly in m and
        // by trapezoid in M.
        let mean_m = 0.5 * (big_m[k] + big_m[k + 1]);
        integral += bounds.m.integral(a, b) * (1.0 + mean_m);
    }
    let im = bounds.m.integral(0.0, t);
    Ok(c * (mp0 + integral) * (c2 * im.powf(bounds.p)).exp())
}

/// Cumulative trapezoid integrals `∫_{times[0]}^{times[k]} f`.
pub fn cumulative_trapezoid(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut s = 0.0;
    out.push(0.0);
    for k in 1..times.len() {
        s += 0.5 * (values[k - 1] + values[k]) * (times[k] - times[k - 1]);
        out.push(s);
    }
    out
}

/// Grönwall estimate `C_p (W0 + ∫₀ᵗ dev) exp(C_p' ‖l_K‖_{L¹[0,t]}^p)` at every
/// node of `times`.
pub fn gronwall_curve(bounds: &HypothesisBounds, w0: f64, times: &[f64], dev: &[f64]) -> Result<Vec<f64>> {
    if times.len() != dev.len() {
        return Err(Error::Invalid("deviation samples do not match their times".into()));
    }
    let (c, c2) = constants(bounds.p)?;
    let id = cumulative_trapezoid(times, dev);
    Ok(times
        .iter()
        .zip(id)
        .map(|(&t, i)| {
            let il = bounds.l_k.integral(0.0, t);
            c * (w0 + i) * (c2 * il.powf(bounds.p)).exp()
        })
        .collect())
}

/// Grönwall estimate at a single time `t`, which must be a node of `times`.
pub fn gronwall_bound(bounds: &HypothesisBounds, w0: f64, times: &[f64], dev: &[f64], t: f64) -> Result<f64> {
    let k = node_index(times, t)?;
    Ok(gronwall_curve(bounds, w0, times, dev)?[k])
}

fn node_index(times: &[f64], t: f64) -> Result<usize> {
    times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-12)
        .ok_or_else(|| Error::Invalid(format!("t = {t} is not a sample time")))
}

/// `χ_p` and `C_{K,p}` sampled at `times`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilippovEnvelopes {
    pub chi: Vec<f64>,
    pub c_kp: Vec<f64>,
}

impl FilippovEnvelopes {
    /// `χ_p(t) exp(C_{K,p}(t))`.
    pub fn distance_bound(&self) -> Vec<f64> {
        self.chi.iter().zip(&self.c_kp).map(|(x, c)| x * c.exp()).collect()
    }
}

/// `χ_p(t) = C_p (W0 + ∫₀ᵗ η) exp(C_p' ‖l_K‖^p)` and
/// `C_{K,p}(t) = C_p (∫₀ᵗ L_K) exp(C_p' ‖l_K‖^p)`, norms over `[0, t]`.
pub fn filippov_envelopes(
    bounds: &HypothesisBounds,
    w0: f64,
    times: &[f64],
    eta: &[f64],
) -> Result<FilippovEnvelopes> {
    if times.len() != eta.len() {
        return Err(Error::Invalid("mismatch samples do not match their times".into()));
    }
    let (c, c2) = constants(bounds.p)?;
    let ie = cumulative_trapezoid(times, eta);
    let mut chi = Vec::with_capacity(times.len());
    let mut c_kp = Vec::with_capacity(times.len());
    for (&t, i) in times.iter().zip(ie) {
        let g = (c2 * bounds.l_k.integral(0.0, t).powf(bounds.p)).exp();
        chi.push(c * (w0 + i) * g);
        c_kp.push(c * bounds.big_l_k.integral(0.0, t) * g);
    }
    Ok(FilippovEnvelopes { chi, c_kp })
}

/// Explicit constant for chained integral inequalities, obtained by
/// unrolling the induction: `(α + f0) exp(α ‖m‖₁)`.
pub fn chained_bound(f0_sup: f64, alpha: f64, m_norm1: f64) -> Result<f64> {
    if !(f0_sup >= 0.0 && alpha >= 0.0 && m_norm1 >= 0.0) {
        return Err(Error::Domain("chained bound needs nonnegative inputs".into()));
    }
    Ok((alpha + f0_sup) * (alpha * m_norm1).exp())
}

/// Outcome of comparing a measured curve against a bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub name: String,
    pub t_grid: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `min_k (rhs_k - lhs_k)`.
    pub margin: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Free-form remarks, e.g. which allowance went into the tolerance.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Certificate {
    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

pub fn certify(name: &str, t_grid: &[f64], lhs: &[f64], rhs: &[f64], tolerance: f64) -> Result<Certificate> {
    if lhs.len() != rhs.len() || lhs.len() != t_grid.len() {
        return Err(Error::Invalid(format!(
            "certificate {name}: curves have lengths {}, {} on a grid of {}",
            lhs.len(),
            rhs.len(),
            t_grid.len()
        )));
    }
    if lhs.is_empty() {
        return Err(Error::Invalid(format!("certificate {name}: empty curves")));
    }
    if lhs.iter().chain(rhs).any(|v| v.is_nan()) {
        return Err(Error::Invalid(format!("certificate {name}: NaN in curves")));
    }
    let margin = lhs
        .iter()
        .zip(rhs)
        .map(|(l, r)| r - l)
        .fold(f64::INFINITY, f64::min);
    Ok(Certificate {
        name: name.to_string(),
        t_grid: t_grid.to_vec(),
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
        margin,
        tolerance,
        pass: margin >= -tolerance,
        notes: Vec::new(),
    })
}

/// `1e-6 · max(scale, 1) + allowance`.
pub fn default_tolerance(scale: f64, allowance: f64) -> f64 {
    RELATIVE_TOLERANCE * scale.max(1.0) + allowance
}
