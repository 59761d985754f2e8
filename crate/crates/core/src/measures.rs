//! Weighted particle representation of compactly supported probability
//! measures on `R^d`.
//!
//! A [`ParticleMeasure`] is a finite sum `Σ_i w_i δ_{x_i}`. Coordinates are
//! stored row-major in one flat buffer so that flows can update them in place
//! without reallocating per atom.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops::{dist, norm};

/// Tolerance on the total mass of a measure.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Default tolerance below which two atoms are considered coincident.
pub const MERGE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeasureJson {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl ParticleMeasure {
    /// Builds a measure from a list of points and weights, validating every
    /// invariant.
    pub fn new(dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, weights)
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        if weights.is_empty() {
            return Err(Error::Invalid("a measure needs at least one atom".into()));
        }
        if coords.len() != weights.len() * dim {
            return Err(Error::Invalid(format!(
                "{} coordinates do not describe {} atoms in dimension {}",
                coords.len(),
                weights.len(),
                dim
            )));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid(format!(
                "weight {} is negative or not finite ({})",
                i, weights[i]
            )));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::Invalid(format!(
                "coordinate of atom {} is not finite",
                i / dim
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Invalid(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            dim,
            coords,
            weights,
        })
    }

    /// Like [`Self::new`] but rescales the weights to unit mass first.
    pub fn normalized(dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Invalid("weights must have positive finite sum".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Self::new(dim, points, weights)
    }

    pub fn dirac(x: &[f64]) -> Self {
        Self {
            dim: x.len(),
            coords: x.to_vec(),
            weights: vec![1.0],
        }
    }

    /// Uniform empirical measure on the given points.
    pub fn uniform(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::Invalid("a measure needs at least one atom".into()));
        }
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    /// Same weights, new coordinates. Only finiteness is checked.
    pub fn with_coords(&self, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != self.coords.len() {
            return Err(Error::Invalid("coordinate buffer has the wrong length".into()));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::Invalid(format!(
                "coordinate of atom {} is not finite",
                i / self.dim
            )));
        }
        Ok(Self {
            dim: self.dim,
            coords,
            weights: self.weights.clone(),
        })
    }

    pub(crate) fn from_parts_unchecked(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(coords.len(), weights.len() * dim);
        Self {
            dim,
            coords,
            weights,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of atoms.
    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Momentum of order `p`: `(Σ_i w_i |x_i|^p)^{1/p}`.
    pub fn momentum(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::Domain(format!("momentum order must be >= 1, got {p}")));
        }
        let s: f64 = self
            .points()
            .zip(&self.weights)
            .map(|(x, w)| w * norm(x).powf(p))
            .sum();
        Ok(s.powf(1.0 / p))
    }

    /// Largest Euclidean norm over the atoms.
    pub fn support_radius(&self) -> f64 {
        self.points().map(norm).fold(0.0, f64::max)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (x, w) in self.points().zip(&self.weights) {
            for (mk, xk) in m.iter_mut().zip(x) {
                *mk += w * xk;
            }
        }
        m
    }

    /// Image measure `f_# μ`: atoms mapped by `f`, weights unchanged.
    pub fn pushforward<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let mut out_dim = None;
        let mut coords = Vec::with_capacity(self.coords.len());
        for (i, x) in self.points().enumerate() {
            let y = f(x);
            match out_dim {
                None => out_dim = Some(y.len()),
                Some(d) if d != y.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: y.len(),
                    })
                }
                _ => {}
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!(
                    "pushforward map is not finite at atom {i}"
                )));
            }
            coords.extend_from_slice(&y);
        }
        let dim = out_dim.unwrap_or(self.dim);
        if dim == 0 {
            return Err(Error::Invalid("pushforward map returned empty vectors".into()));
        }
        Ok(Self {
            dim,
            coords,
            weights: self.weights.clone(),
        })
    }

    /// Pushforward followed by merging of coincident atoms.
    pub fn pushforward_merged<F>(&self, f: F, tol: f64) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        Ok(self.pushforward(f)?.merge_coincident(tol))
    }

    /// Merges atoms lying within `tol` of an earlier atom, summing weights.
    /// The first occurrence keeps its position.
    pub fn merge_coincident(&self, tol: f64) -> Self {
        let mut reps: Vec<usize> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (i, x) in self.points().enumerate() {
            match reps.iter().position(|&r| dist(self.point(r), x) <= tol) {
                Some(k) => weights[k] += self.weights[i],
                None => {
                    reps.push(i);
                    weights.push(self.weights[i]);
                }
            }
        }
        let mut coords = Vec::with_capacity(reps.len() * self.dim);
        for &r in &reps {
            coords.extend_from_slice(self.point(r));
        }
        Self {
            dim: self.dim,
            coords,
            weights,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Reads one atom per row; the last column is the weight. No header.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut dim = None;
        for rec in rdr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Invalid(format!("bad number {s:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() < 2 {
                return Err(Error::Invalid(
                    "CSV rows need at least one coordinate and a weight".into(),
                ));
            }
            let d = vals.len() - 1;
            if *dim.get_or_insert(d) != d {
                return Err(Error::DimensionMismatch {
                    expected: dim.unwrap(),
                    got: d,
                });
            }
            weights.push(vals[d]);
            points.push(vals[..d].to_vec());
        }
        let dim = dim.ok_or_else(|| Error::Invalid("empty CSV".into()))?;
        Self::new(dim, points, weights)
    }
}

impl Serialize for ParticleMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureJson {
            dim: self.dim,
            points: self.points().map(|p| p.to_vec()).collect(),
            weights: self.weights.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParticleMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = MeasureJson::deserialize(d)?;
        ParticleMeasure::new(raw.dim, raw.points, raw.weights).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64], weights: &[f64]) -> ParticleMeasure {
        ParticleMeasure::new(1, points.iter().map(|&x| vec![x]).collect(), weights.to_vec())
            .unwrap()
    }

    #[test]
    fn momentum_of_dirac_is_norm() {
        let mu = ParticleMeasure::dirac(&[3.0, 4.0]);
        for p in [1.0, 1.5, 2.0, 7.0] {
            assert!((mu.momentum(p).unwrap() - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn momentum_direct_sums() {
        let mu = line(&[-2.0, 2.0], &[0.5, 0.5]);
        assert!((mu.momentum(1.0).unwrap() - 2.0).abs() < 1e-15);
        let nu = line(&[0.0, 2.0], &[0.5, 0.5]);
        assert!((nu.momentum(2.0).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn momentum_rejects_small_order() {
        let mu = ParticleMeasure::dirac(&[1.0]);
        assert!(matches!(mu.momentum(0.5), Err(Error::Domain(_))));
        assert!(mu.momentum(f64::NAN).is_err());
    }

    #[test]
    fn support_radius_examples() {
        assert_eq!(ParticleMeasure::dirac(&[3.0, 4.0]).support_radius(), 5.0);
        let mu = ParticleMeasure::new(2, vec![vec![0.0, 0.0], vec![0.0, 2.0]], vec![0.5, 0.5])
            .unwrap();
        assert_eq!(mu.support_radius(), 2.0);
        let sq = ParticleMeasure::uniform(
            2,
            vec![
                vec![1.0, 1.0],
                vec![1.0, -1.0],
                vec![-1.0, 1.0],
                vec![-1.0, -1.0],
            ],
        )
        .unwrap();
        assert!((sq.support_radius() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pushforward_examples() {
        let mu = line(&[-1.0, 1.0], &[0.5, 0.5]);
        assert_eq!(mu.pushforward(|x| x.to_vec()).unwrap(), mu);

        let d = ParticleMeasure::dirac(&[0.0, 0.0]);
        let moved = d.pushforward(|x| vec![x[0] + 1.0, x[1]]).unwrap();
        assert_eq!(moved.point(0), &[1.0, 0.0]);

        let sq = mu.pushforward_merged(|x| vec![x[0] * x[0]], MERGE_TOLERANCE).unwrap();
        assert_eq!(sq.len(), 1);
        assert_eq!(sq.point(0), &[1.0]);
        assert!((sq.weights()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pushforward_rejects_non_finite() {
        let mu = line(&[0.0, 1.0], &[0.5, 0.5]);
        assert!(mu.pushforward(|x| vec![1.0 / x[0]]).is_err());
    }

    #[test]
    fn mean_examples() {
        assert_eq!(ParticleMeasure::dirac(&[1.5, -2.0]).mean(), vec![1.5, -2.0]);
        assert_eq!(line(&[-1.0, 1.0], &[0.5, 0.5]).mean(), vec![0.0]);
        assert!((line(&[0.0, 4.0], &[0.25, 0.75]).mean()[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(ParticleMeasure::new(1, vec![vec![0.0]], vec![0.9]).is_err());
        assert!(ParticleMeasure::new(1, vec![vec![0.0], vec![1.0]], vec![1.5, -0.5]).is_err());
        assert!(ParticleMeasure::new(1, vec![vec![f64::INFINITY]], vec![1.0]).is_err());
        assert!(ParticleMeasure::new(1, vec![], vec![]).is_err());
        assert!(ParticleMeasure::new(2, vec![vec![0.0]], vec![1.0]).is_err());
    }

    #[test]
    fn json_and_csv_io() {
        let mu = ParticleMeasure::new(2, vec![vec![0.0, 1.0], vec![2.0, 3.0]], vec![0.25, 0.75])
            .unwrap();
        let s = mu.to_json().unwrap();
        assert!(s.contains("\"points\""));
        assert_eq!(ParticleMeasure::from_json(&s).unwrap(), mu);

        let csv = "0.0, 1.0, 0.25\n2.0, 3.0, 0.75\n";
        assert_eq!(ParticleMeasure::from_csv(csv.as_bytes()).unwrap(), mu);
        assert!(ParticleMeasure::from_csv("1.0,0.5\n1.0,2.0,0.5\n".as_bytes()).is_err());
        assert!(ParticleMeasure::from_json(r#"{"dim":1,"points":[[0]],"weights":[0.5]}"#).is_err());
    }
}
