//! Numeric view of a decomposed network: coordinates, propensities and affine structure.

use nalgebra::{DMatrix, DVector};
use num_traits::Zero;

use crate::classify::choose_gamma;
use crate::decompose::{decompose, MultiscaleDecomposition};
use crate::error::{Error, Result};
use crate::network::{NetworkSpec, ReactionNetwork, ScalingSpec};
use crate::rational::{self, Rat};

/// A reaction acting on a level's coordinates.
#[derive(Debug, Clone)]
pub struct LevelTerm {
    pub reaction: usize,
    pub direction: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct MultiscaleModel {
    pub network: ReactionNetwork,
    /// Scaling with gamma chosen so that the slow level has exponent zero.
    pub scaling: ScalingSpec,
    pub decomposition: MultiscaleDecomposition,
    pub(crate) d0: usize,
    pub(crate) d1: usize,
    pub(crate) d2: usize,
    /// Rows: slow, level 1, level 2, constants.
    pub(crate) transform: DMatrix<f64>,
    /// Limiting terms per level in that level's range coordinates; index 0 is the slow level.
    pub(crate) terms: Vec<Vec<LevelTerm>>,
    pub(crate) inputs: Vec<Vec<(usize, u32)>>,
    pub(crate) kappa: Vec<f64>,
    /// Order of each reaction in species touched by the fast levels.
    pub(crate) fast_order: Vec<u32>,
    pub(crate) base_z: Vec<f64>,
}

impl MultiscaleModel {
    /// Chooses gamma, decomposes and prepares numeric structures.
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        let gamma = choose_gamma(&spec.network, &spec.scaling)?;
        let scaling = spec.scaling.with_gamma(gamma);
        Self::with_scaling(&spec.network, &scaling)
    }

    pub fn with_scaling(network: &ReactionNetwork, scaling: &ScalingSpec) -> Result<Self> {
        let decomposition = decompose(network, scaling)?;
        let d = &decomposition;
        let d0 = d.slow_dim();
        let d1 = d.level(1).map_or(0, |l| l.range.dim());
        let d2 = d.level(2).map_or(0, |l| l.range.dim());
        let transform = d.transform.clone();

        let terms = d
            .levels
            .iter()
            .map(|l| {
                l.level
                    .limiting_vectors
                    .iter()
                    .map(|(&k, lv)| {
                        let e: Vec<f64> = lv.embedded.iter().map(rational::to_f64).collect();
                        LevelTerm { reaction: k, direction: DVector::from_vec(l.range.coords(&e)) }
                    })
                    .collect()
            })
            .collect();

        let inputs = network
            .reactions
            .iter()
            .map(|r| r.inputs.iter().enumerate().filter(|(_, &n)| n > 0).map(|(i, &n)| (i, n)).collect())
            .collect();
        let kappa = network.reactions.iter().map(|r| r.kappa).collect();

        let mut fast_species = vec![false; network.num_species()];
        for l in d.levels.iter().skip(1) {
            for g in &l.range.rational_directions {
                for (f, x) in fast_species.iter_mut().zip(g) {
                    *f |= !x.is_zero();
                }
            }
        }
        let fast_order = network
            .reactions
            .iter()
            .map(|r| r.inputs.iter().zip(&fast_species).filter(|(_, &f)| f).map(|(&n, _)| n).sum())
            .collect();

        let mut model = MultiscaleModel {
            network: network.clone(),
            scaling: scaling.clone(),
            decomposition,
            d0,
            d1,
            d2,
            transform,
            terms,
            inputs,
            kappa,
            fast_order,
            base_z: vec![],
        };
        model.base_z = model.z_from(&vec![0.0; d0], &vec![0.0; d1 + d2]);
        Ok(model)
    }

    pub fn slow_dim(&self) -> usize {
        self.d0
    }

    pub fn fast_dims(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn num_levels(&self) -> usize {
        self.decomposition.num_levels()
    }

    pub fn m(&self, level: usize) -> Rat {
        self.decomposition.levels[level].level.m
    }

    pub fn species_count(&self) -> usize {
        self.network.num_species()
    }

    pub fn level_terms(&self, level: usize) -> &[LevelTerm] {
        &self.terms[level]
    }

    /// Orthonormal rows of the slow basis.
    pub fn slow_basis(&self) -> DMatrix<f64> {
        self.transform.rows(0, self.d0).into_owned()
    }

    pub fn fast_basis(&self, level: usize) -> DMatrix<f64> {
        match level {
            1 => self.transform.rows(self.d0, self.d1).into_owned(),
            2 => self.transform.rows(self.d0 + self.d1, self.d2).into_owned(),
            _ => self.slow_basis(),
        }
    }

    /// Normalized species state from slow coordinates and fast coordinates (level 1 then level 2).
    pub fn z_from(&self, v0: &[f64], fast: &[f64]) -> Vec<f64> {
        let s = self.species_count();
        let mut z = vec![0.0; s];
        let t = &self.transform;
        let consts = &self.decomposition.constant_values;
        for i in 0..s {
            let mut acc = 0.0;
            for (r, v) in v0.iter().enumerate() {
                acc += t[(r, i)] * v;
            }
            for (r, v) in fast.iter().enumerate() {
                acc += t[(self.d0 + r, i)] * v;
            }
            for (r, c) in consts.iter().enumerate() {
                acc += t[(self.d0 + self.d1 + self.d2 + r, i)] * c;
            }
            z[i] = acc;
        }
        z
    }

    /// Splits a normalized state into slow and fast coordinates.
    pub fn coords(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let v = &self.transform * DVector::from_column_slice(z);
        let v0 = v.rows(0, self.d0).iter().copied().collect();
        let y = v.rows(self.d0, self.d1 + self.d2).iter().copied().collect();
        (v0, y)
    }

    pub fn slow_coords(&self, z: &[f64]) -> Vec<f64> {
        self.coords(z).0
    }

    /// Slow coordinates of the initial state.
    pub fn initial_slow(&self) -> Vec<f64> {
        let z0 = self.network.normalize(&self.network.initial_state(), &self.scaling);
        self.slow_coords(&z0)
    }

    /// Limit mass-action intensity kappa_k prod z_i^nu.
    pub fn lambda(&self, k: usize, z: &[f64]) -> f64 {
        let mut v = self.kappa[k];
        for &(i, n) in &self.inputs[k] {
            v *= z[i].powi(n as i32);
        }
        v
    }

    pub fn is_affine(&self, k: usize) -> bool {
        self.fast_order[k] <= 1
    }

    pub(crate) fn require_affine(&self) -> Result<()> {
        let bad: Vec<String> = (0..self.network.num_reactions())
            .filter(|&k| !self.is_affine(k))
            .map(|k| self.network.reactions[k].name.clone())
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::MomentClosure(format!("reactions {bad:?} are not affine in the fast coordinates")))
        }
    }

    /// Intensities written as a_k + b_k . y in the fast coordinates at fixed slow coordinates.
    pub(crate) fn affine_rates(&self, v0: &[f64]) -> AffineRates {
        let nf = self.d1 + self.d2;
        let z0 = self.z_from(v0, &vec![0.0; nf]);
        let r = self.network.num_reactions();
        let a: Vec<f64> = (0..r).map(|k| self.lambda(k, &z0)).collect();
        let mut b = DMatrix::zeros(r, nf);
        let mut z = z0.clone();
        for j in 0..nf {
            let col = self.transform.row(self.d0 + j);
            for i in 0..z.len() {
                z[i] = z0[i] + col[i];
            }
            for k in 0..r {
                b[(k, j)] = self.lambda(k, &z) - a[k];
            }
        }
        AffineRates { a, b }
    }

    pub fn n(&self) -> f64 {
        self.scaling.n as f64
    }

    pub fn n_pow(&self, q: &Rat) -> f64 {
        self.scaling.pow(q)
    }

    pub fn component_names(&self) -> Vec<String> {
        let slow = &self.decomposition.levels[0].range;
        slow.rational_directions
            .iter()
            .enumerate()
            .map(|(l, g)| {
                let nz: Vec<usize> = (0..g.len()).filter(|&i| !g[i].is_zero()).collect();
                if nz.len() == 1 {
                    self.network.species[nz[0]].name.clone()
                } else {
                    format!("theta{}", l + 1)
                }
            })
            .collect()
    }

    /// Multipliers N^{alpha} turning slow coordinates into molecule counts.
    pub fn slow_count_scale(&self) -> Vec<f64> {
        self.decomposition.levels[0].range.alpha_of.iter().map(|a| self.scaling.pow(a)).collect()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AffineRates {
    pub a: Vec<f64>,
    /// Row k holds the slope of reaction k along each fast coordinate.
    pub b: DMatrix<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;

    #[test]
    fn viral_reconstruction() {
        let m = MultiscaleModel::new(&builtin::load("viral").unwrap()).unwrap();
        assert_eq!(m.scaling.gamma, rational::rat(2, 3));
        let z = m.z_from(&[1.5], &[3.0, 4.0]);
        assert_eq!(z, vec![3.0, 1.5, 4.0]);
        let (v0, y) = m.coords(&z);
        assert_eq!(v0, vec![1.5]);
        assert_eq!(y, vec![3.0, 4.0]);
        assert!((m.initial_slow()[0] - 0.1).abs() < 1e-12);
        assert_eq!(m.component_names(), vec!["G"]);
    }

    #[test]
    fn affine_coefficients_match_propensities() {
        let m = MultiscaleModel::new(&builtin::load("viral").unwrap()).unwrap();
        let ar = m.affine_rates(&[0.8]);
        assert!((ar.a[5] - 0.0).abs() < 1e-15);
        assert!((ar.b[(5, 1)] - 0.75 * 0.8).abs() < 1e-15);
        assert!((ar.b[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((ar.a[1] - 2.0).abs() < 1e-15);
    }
}
