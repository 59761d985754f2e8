//! Finite dictionaries of feedback maps `ω: R^d -> U`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops::dist;

/// A feedback map. Constant maps give open-loop controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FeedbackMap {
    Constant {
        value: Vec<f64>,
    },
    /// `clamp(A x + b, lo, hi)` componentwise, `A` row-major `m x d`.
    AffineSaturated {
        gain: Vec<f64>,
        offset: Vec<f64>,
        lo: f64,
        hi: f64,
    },
}

impl FeedbackMap {
    pub fn constant(value: Vec<f64>) -> Self {
        FeedbackMap::Constant { value }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            FeedbackMap::Constant { value } => value.len(),
            FeedbackMap::AffineSaturated { offset, .. } => offset.len(),
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match self {
            FeedbackMap::Constant { value } => out.extend_from_slice(value),
            FeedbackMap::AffineSaturated {
                gain,
                offset,
                lo,
                hi,
            } => {
                let d = x.len();
                for (i, b) in offset.iter().enumerate() {
                    let row = &gain[i * d..(i + 1) * d];
                    let v: f64 = row.iter().zip(x).map(|(a, xk)| a * xk).sum::<f64>() + b;
                    out.push(v.clamp(*lo, *hi));
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.control_dim());
        self.apply(x, &mut out);
        out
    }

    fn is_constant(&self) -> bool {
        matches!(self, FeedbackMap::Constant { .. })
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            FeedbackMap::Constant { value } => {
                if value.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Invalid("constant control is not finite".into()));
                }
            }
            FeedbackMap::AffineSaturated {
                gain,
                offset,
                lo,
                hi,
            } => {
                if gain.len() != offset.len() * dim {
                    return Err(Error::Invalid(format!(
                        "feedback gain needs {} entries, got {}",
                        offset.len() * dim,
                        gain.len()
                    )));
                }
                if !(lo <= hi) || gain.iter().chain(offset).any(|v| !v.is_finite()) {
                    return Err(Error::Invalid("feedback map has bad parameters".into()));
                }
            }
        }
        Ok(())
    }
}

/// Whether every entry is a constant map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DictionaryKind {
    OpenLoop,
    ClosedLoop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDictionary {
    entries: Vec<FeedbackMap>,
    lipschitz_budget: f64,
}

impl ControlDictionary {
    pub fn new(entries: Vec<FeedbackMap>, lipschitz_budget: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Invalid("control dictionary is empty".into()));
        }
        let m = entries[0].control_dim();
        if let Some(e) = entries.iter().find(|e| e.control_dim() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: e.control_dim(),
            });
        }
        if !(lipschitz_budget >= 0.0) {
            return Err(Error::Invalid("Lipschitz budget must be nonnegative".into()));
        }
        Ok(Self {
            entries,
            lipschitz_budget,
        })
    }

    /// Open-loop dictionary of constant control values.
    pub fn constants(values: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(values.into_iter().map(FeedbackMap::constant).collect(), 0.0)
    }

    /// Single empty control, for fields that take no control input.
    pub fn trivial() -> Self {
        Self {
            entries: vec![FeedbackMap::constant(Vec::new())],
            lipschitz_budget: 0.0,
        }
    }

    /// Affine-saturated maps `clamp(a·x + b)` in one control dimension for all
    /// `(a, b)` on the given grids with `|a| <= budget`. `a` is applied to
    /// every state coordinate.
    pub fn affine_template(
        dim: usize,
        gains: &[f64],
        offsets: &[f64],
        lo: f64,
        hi: f64,
        budget: f64,
    ) -> Result<Self> {
        let mut entries = Vec::new();
        for &a in gains {
            // The map x -> a(x_1 + ... + x_d) has Lipschitz constant |a| sqrt(d).
            if a.abs() * (dim as f64).sqrt() > budget + 1e-12 {
                continue;
            }
            for &b in offsets {
                entries.push(FeedbackMap::AffineSaturated {
                    gain: vec![a; dim],
                    offset: vec![b],
                    lo,
                    hi,
                });
            }
        }
        Self::new(entries, budget)
    }

    pub fn validate(&self, dim: usize, control_dim: usize) -> Result<()> {
        for e in &self.entries {
            e.validate(dim)?;
            if e.control_dim() != control_dim {
                return Err(Error::DimensionMismatch {
                    expected: control_dim,
                    got: e.control_dim(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FeedbackMap] {
        &self.entries
    }

    pub fn entry(&self, j: usize) -> &FeedbackMap {
        &self.entries[j]
    }

    pub fn lipschitz_budget(&self) -> f64 {
        self.lipschitz_budget
    }

    pub fn kind(&self) -> DictionaryKind {
        if self.entries.iter().all(FeedbackMap::is_constant) {
            DictionaryKind::OpenLoop
        } else {
            DictionaryKind::ClosedLoop
        }
    }

    /// Largest sampled slope `|ω(x) - ω(y)| / |x - y|` over all entries, with
    /// points drawn uniformly from the cube `[-radius, radius]^dim`.
    pub fn sampled_lipschitz(&self, dim: usize, radius: f64, pairs: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        let point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..dim).map(|_| rng.gen_range(-radius..=radius)).collect()
        };
        for e in &self.entries {
            if e.is_constant() {
                continue;
            }
            for _ in 0..pairs {
                let x = point(&mut rng);
                let y = point(&mut rng);
                let d = dist(&x, &y);
                if d > 0.0 {
                    worst = worst.max(dist(&e.eval(&x), &e.eval(&y)) / d);
                }
            }
        }
        worst
    }

    /// Sampled check `Lip(ω_j) <= L_U + 1e-9` for every entry.
    pub fn check_lipschitz(&self, dim: usize, radius: f64, pairs: usize, seed: u64) -> Result<f64> {
        let s = self.sampled_lipschitz(dim, radius, pairs, seed);
        if s > self.lipschitz_budget + 1e-9 {
            return Err(Error::Invalid(format!(
                "feedback slope {s} exceeds the Lipschitz budget {}",
                self.lipschitz_budget
            )));
        }
        Ok(s)
    }
}
