//! Orthonormal bases whose vectors each touch species of a single abundance exponent.

use num_traits::Zero;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rational::{self, dot, format_rational, int, Rat};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomogeneousBasis {
    /// Unit vectors in species coordinates.
    pub vectors: Vec<Vec<f64>>,
    /// Exponent shared by the species each vector touches.
    #[serde(serialize_with = "ser_rats")]
    pub alpha_of: Vec<Rat>,
    /// Mutually orthogonal primitive integer generators, one per unit vector.
    #[serde(serialize_with = "ser_rat_rows")]
    pub rational_directions: Vec<Vec<Rat>>,
}

fn ser_rats<S: serde::Serializer>(v: &[Rat], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for q in v {
        seq.serialize_element(&format_rational(q))?;
    }
    seq.end()
}

fn ser_rat_rows<S: serde::Serializer>(v: &[Vec<Rat>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<String>> = v.iter().map(|r| r.iter().map(format_rational).collect()).collect();
    serde::Serialize::serialize(&rows, s)
}

impl HomogeneousBasis {
    pub fn empty() -> Self {
        HomogeneousBasis { vectors: vec![], alpha_of: vec![], rational_directions: vec![] }
    }

    pub fn standard(alphas: &[Rat]) -> Self {
        let s = alphas.len();
        let gens: Vec<Vec<Rat>> = (0..s)
            .map(|i| (0..s).map(|j| if i == j { int(1) } else { int(0) }).collect())
            .collect();
        Self::from_orthogonal(gens, alphas)
    }

    /// Wraps mutually orthogonal homogeneous generators.
    pub(crate) fn from_orthogonal(gens: Vec<Vec<Rat>>, alphas: &[Rat]) -> Self {
        let alpha_of = gens
            .iter()
            .map(|g| {
                let i = g.iter().position(|x| !x.is_zero()).expect("zero generator");
                alphas[i]
            })
            .collect();
        let vectors = gens
            .iter()
            .map(|g| {
                let n = rational::norm_f64(g);
                g.iter().map(|x| rational::to_f64(x) / n).collect()
            })
            .collect();
        HomogeneousBasis { vectors, alpha_of, rational_directions: gens }
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Exact test of theta_l . v != 0.
    pub fn touches(&self, l: usize, v: &[Rat]) -> bool {
        !dot(&self.rational_directions[l], v).is_zero()
    }

    /// Coordinates theta_l . v in floating point.
    pub fn coords(&self, v: &[f64]) -> Vec<f64> {
        self.vectors.iter().map(|t| t.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// Exact orthogonal projection of a rational vector onto the span.
    pub fn project_exact(&self, v: &[Rat]) -> Vec<Rat> {
        let mut out = vec![Rat::zero(); v.len()];
        for g in &self.rational_directions {
            let c = dot(g, v) / dot(g, g);
            for (o, x) in out.iter_mut().zip(g) {
                *o += c * x;
            }
        }
        out
    }

    /// Exact projection matrix onto the span.
    pub fn projection_exact(&self, s: usize) -> Vec<Vec<Rat>> {
        let mut p = vec![vec![Rat::zero(); s]; s];
        for g in &self.rational_directions {
            let nn = dot(g, g);
            for i in 0..s {
                for j in 0..s {
                    p[i][j] += g[i] * g[j] / nn;
                }
            }
        }
        p
    }

    pub fn concat(&self, other: &HomogeneousBasis) -> HomogeneousBasis {
        let mut b = self.clone();
        b.vectors.extend(other.vectors.iter().cloned());
        b.alpha_of.extend(other.alpha_of.iter().cloned());
        b.rational_directions.extend(other.rational_directions.iter().cloned());
        b
    }
}

/// Range and left-null bases of the matrix whose columns are `vectors`.
pub fn stoichiometric_subspace(vectors: &[Vec<Rat>], s: usize) -> (Vec<Vec<Rat>>, Vec<Vec<Rat>>) {
    let (range, _) = rational::rref(vectors, s);
    let null = rational::null_space(vectors, s);
    (range, null)
}

/// Splits a subspace given by spanning vectors into exponent blocks and orthonormalizes each block.
pub fn homogeneous_null_basis(spanning: &[Vec<Rat>], alphas: &[Rat]) -> Result<HomogeneousBasis> {
    let s = alphas.len();
    let total = rational::rank(spanning, s);
    let mut blocks: Vec<Rat> = alphas.to_vec();
    blocks.sort();
    blocks.dedup();

    let mut gens: Vec<Vec<Rat>> = Vec::new();
    let mut block_rank = 0;
    for a in &blocks {
        let restricted: Vec<Vec<Rat>> = spanning
            .iter()
            .map(|v| v.iter().zip(alphas).map(|(x, b)| if b == a { *x } else { Rat::zero() }).collect())
            .collect();
        let (canon, _) = rational::rref(&restricted, s);
        block_rank += canon.len();
        gens.extend(rational::gram_schmidt(&canon));
    }
    if block_rank != total {
        let mut acc: Vec<Vec<Rat>> = spanning.to_vec();
        let witness = gens
            .iter()
            .find(|g| {
                acc.push((*g).clone());
                let grew = rational::rank(&acc, s) > total;
                acc.pop();
                grew
            })
            .cloned()
            .unwrap_or_default();
        return Err(Error::NoHomogeneousBasis { witness: witness.iter().map(format_rational).collect() });
    }
    gens.sort_by_key(|g| g.iter().position(|x| !x.is_zero()).unwrap_or(usize::MAX));
    Ok(HomogeneousBasis::from_orthogonal(gens, alphas))
}

/// Orthogonal complement of `sub` inside the span of `within` (both homogeneous).
pub fn complement_within(within: &HomogeneousBasis, sub: &HomogeneousBasis, alphas: &[Rat]) -> Result<HomogeneousBasis> {
    if within.is_empty() {
        return Ok(HomogeneousBasis::empty());
    }
    let rows: Vec<Vec<Rat>> = sub
        .rational_directions
        .iter()
        .map(|r| within.rational_directions.iter().map(|g| dot(g, r)).collect())
        .collect();
    let coeffs = rational::null_space(&rows, within.dim());
    let s = alphas.len();
    let spanning: Vec<Vec<Rat>> = coeffs
        .iter()
        .map(|c| {
            let mut v = vec![Rat::zero(); s];
            for (ci, g) in c.iter().zip(&within.rational_directions) {
                for (o, x) in v.iter_mut().zip(g) {
                    *o += ci * x;
                }
            }
            v
        })
        .collect();
    if spanning.is_empty() {
        return Ok(HomogeneousBasis::empty());
    }
    homogeneous_null_basis(&spanning, alphas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{from_ints, rat};

    #[test]
    fn enzyme_fast_complement() {
        let alphas = [int(0), int(1), int(0), int(1), int(0)];
        let s2 = vec![from_ints(&[1, 0, 0, 0, -1]), from_ints(&[-1, 0, 0, 0, 1])];
        let (range, null) = stoichiometric_subspace(&s2, 5);
        assert_eq!(range.len(), 1);
        assert_eq!(null.len(), 4);
        let b = homogeneous_null_basis(&null, &alphas).unwrap();
        assert_eq!(
            b.rational_directions,
            vec![from_ints(&[1, 0, 0, 0, 1]), from_ints(&[0, 1, 0, 0, 0]), from_ints(&[0, 0, 1, 0, 0]), from_ints(&[0, 0, 0, 1, 0])]
        );
        assert_eq!(b.alpha_of, vec![int(0), int(1), int(0), int(1)]);
        assert!((b.vectors[0][0] - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn viral_slow_direction() {
        let alphas = [int(0), rat(2, 3), int(1)];
        let s1 = vec![from_ints(&[1, 0, 0]), from_ints(&[0, 0, 1])];
        let (_, null) = stoichiometric_subspace(&s1, 3);
        let b = homogeneous_null_basis(&null, &alphas).unwrap();
        assert_eq!(b.rational_directions, vec![from_ints(&[0, 1, 0])]);
        assert_eq!(b.alpha_of, vec![rat(2, 3)]);
    }

    #[test]
    fn empty_input_gives_full_space() {
        let (range, null) = stoichiometric_subspace(&[], 3);
        assert!(range.is_empty());
        assert_eq!(null.len(), 3);
        let b = homogeneous_null_basis(&null, &[int(1); 3]).unwrap();
        assert_eq!(b.rational_directions, HomogeneousBasis::standard(&[int(1); 3]).rational_directions);
    }

    #[test]
    fn mixed_direction_has_no_homogeneous_basis() {
        let alphas = [int(0), int(1)];
        let e = homogeneous_null_basis(&[from_ints(&[1, 1])], &alphas).unwrap_err();
        assert!(matches!(e, Error::NoHomogeneousBasis { .. }));
    }
}
