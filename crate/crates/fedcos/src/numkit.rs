//! Dense vector arithmetic, deterministic seed derivation, and the
//! finite-difference gradient oracle used by the rest of the crate's tests.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A model, displacement, or gradient: a flat vector in R^m.
///
/// All clients and the server in one experiment share the same length.
/// Entries are finite; operations that could break that (training steps,
/// objective evaluations) go through [`ParamVector::ensure_finite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Builds a vector, rejecting NaN/Inf entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let v = ParamVector(values);
        v.ensure_finite("ParamVector::new")?;
        Ok(v)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn check_len(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.len(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        other.check_len(self.len())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0f64, |m, a| m.max(a.abs()))
    }

    /// self += factor * other
    pub fn add_scaled(&mut self, other: &ParamVector, factor: f64) -> Result<()> {
        other.check_len(self.len())?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        other.check_len(self.len())?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scaled(&self, factor: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|a| a * factor).collect())
    }

    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.0.iter().all(|a| a.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<&[f64]> for ParamVector {
    fn from(values: &[f64]) -> Self {
        ParamVector(values.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for ParamVector {
    fn from(values: [f64; N]) -> Self {
        ParamVector(values.to_vec())
    }
}

/// Cosine of the angle between two vectors, clamped to [-1, 1].
///
/// A zero-length vector has no direction; by convention the cosine is 1 so
/// that the derived penalty term (1 - cos) vanishes.
pub fn cosine_between(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    b.check_len(a.len())?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(1.0);
    }
    Ok((a.dot(b)? / (na * nb)).clamp(-1.0, 1.0))
}

/// Central-difference gradient: (f(x + h e_k) - f(x - h e_k)) / (2h).
///
/// This is the oracle the analytic gradients are checked against; it must
/// never share code with them.
pub fn finite_diff_gradient<F>(f: F, x: &ParamVector, h: f64) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::config("finite_diff.h", "step must be positive"));
    }
    let mut probe = x.clone();
    let mut grad = ParamVector::zeros(x.len());
    for k in 0..x.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let hi = f(&probe);
        probe[k] = orig - h;
        let lo = f(&probe);
        probe[k] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite_diff_gradient probe at component {k}"),
            });
        }
        grad[k] = (hi - lo) / (2.0 * h);
    }
    Ok(grad)
}

/// Relative gap between two gradients: ||a - b|| / max(||a||, ||b||, 1e-12).
pub fn gradient_rel_error(a: &ParamVector, b: &ParamVector) -> f64 {
    let diff = a
        .sub(b)
        .expect("gradient_rel_error called with mismatched lengths");
    diff.norm() / a.norm().max(b.norm()).max(1e-12)
}

/// A reproducible RNG stream address: a root seed plus a list of
/// (tag, index) labels, e.g. root -> ("client", 3) -> ("epoch", 17).
///
/// Derivation is pure, so concurrent workers can never perturb each other's
/// streams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPath {
    root: u64,
    labels: Vec<(String, u64)>,
}

impl SeedPath {
    pub fn new(root: u64) -> Self {
        SeedPath {
            root,
            labels: Vec::new(),
        }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Appends one (tag, index) label, returning the extended path.
    pub fn child(&self, tag: &str, index: u64) -> Self {
        let mut labels = self.labels.clone();
        labels.push((tag.to_string(), index));
        SeedPath {
            root: self.root,
            labels,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Deterministic hash-mix of a seed path into a 64-bit stream seed.
pub fn derive_seed(path: &SeedPath) -> u64 {
    let mut acc = splitmix64(path.root ^ 0xA076_1D64_78BD_642F);
    for (tag, index) in &path.labels {
        acc = splitmix64(acc ^ fnv1a(tag.as_bytes()));
        acc = splitmix64(acc ^ *index);
    }
    acc
}

/// RNG for a stream address. ChaCha keeps the streams identical on every
/// platform and rustc version.
pub fn rng_for(path: &SeedPath) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from(v)
    }

    #[test]
    fn cosine_identical_directions() {
        assert_eq!(
            cosine_between(&pv(&[1.0, 0.0]), &pv(&[1.0, 0.0])).unwrap(),
            1.0
        );
    }

    #[test]
    fn cosine_orthogonal() {
        assert_eq!(
            cosine_between(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn cosine_zero_norm_convention() {
        assert_eq!(
            cosine_between(&pv(&[0.0, 0.0]), &pv(&[3.0, 4.0])).unwrap(),
            1.0
        );
    }

    #[test]
    fn cosine_length_mismatch_errors() {
        let err = cosine_between(&pv(&[1.0]), &pv(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn finite_diff_on_squared_norm() {
        let f = |x: &ParamVector| x.as_slice().iter().map(|a| a * a).sum::<f64>();
        let g = finite_diff_gradient(f, &pv(&[1.0, 2.0]), 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6);
        assert!((g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_on_linear_form() {
        let c = pv(&[3.0, -1.0]);
        let f = move |x: &ParamVector| x.dot(&c).unwrap();
        let g = finite_diff_gradient(f, &pv(&[0.7, 0.3]), 1e-5).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert!((g[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_rejects_non_finite_probe() {
        let f = |x: &ParamVector| if x[0] > 1.0 { f64::NAN } else { 0.0 };
        let err = finite_diff_gradient(f, &pv(&[1.0]), 1e-3).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn derive_seed_is_deterministic() {
        let p = SeedPath::new(42).child("client", 3).child("round", 17);
        assert_eq!(derive_seed(&p), derive_seed(&p.clone()));
    }

    #[test]
    fn derive_seed_empty_labels_depends_on_root_only() {
        assert_eq!(derive_seed(&SeedPath::new(7)), derive_seed(&SeedPath::new(7)));
        assert_ne!(derive_seed(&SeedPath::new(7)), derive_seed(&SeedPath::new(8)));
    }

    #[test]
    fn derive_seed_no_collisions_over_ten_thousand_labels() {
        let base = SeedPath::new(1234);
        let seeds: HashSet<u64> = (0..10_000u64)
            .map(|i| derive_seed(&base.child("client", i)))
            .collect();
        assert_eq!(seeds.len(), 10_000);
    }

    #[test]
    fn derive_seed_tag_matters() {
        let base = SeedPath::new(5);
        assert_ne!(
            derive_seed(&base.child("client", 0)),
            derive_seed(&base.child("round", 0))
        );
    }

    #[test]
    fn param_vector_rejects_nan() {
        assert!(ParamVector::new(vec![0.0, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_self_is_one(v in proptest::collection::vec(-1e3f64..1e3, 1..8)) {
            let a = pv(&v);
            prop_assume!(a.norm() > 1e-9);
            prop_assert_eq!(cosine_between(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn cosine_negated_is_minus_one(v in proptest::collection::vec(-1e3f64..1e3, 1..8)) {
            let a = pv(&v);
            prop_assume!(a.norm() > 1e-9);
            prop_assert_eq!(cosine_between(&a, &a.scaled(-1.0)).unwrap(), -1.0);
        }

        #[test]
        fn cosine_scale_invariant(
            v in proptest::collection::vec(-1e2f64..1e2, 2..8),
            w in proptest::collection::vec(-1e2f64..1e2, 2..8),
            s in 1e-3f64..1e3,
        ) {
            prop_assume!(v.len() == w.len());
            let a = pv(&v);
            let b = pv(&w);
            prop_assume!(a.norm() > 1e-6 && b.norm() > 1e-6);
            let c1 = cosine_between(&a, &b).unwrap();
            let c2 = cosine_between(&a.scaled(s), &b).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-12);
        }
    }
}
