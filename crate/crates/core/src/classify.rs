//! Reaction exponents, time-scale levels and reaction classes.

use std::collections::BTreeMap;

use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::basis::HomogeneousBasis;
use crate::decompose;
use crate::error::{Error, Result};
use crate::network::{ReactionNetwork, ScalingSpec};
use crate::rational::{self, dot, format_rational, Rat};

/// rho_k = nu_k . alpha + beta_k + gamma.
pub fn reaction_exponents(net: &ReactionNetwork, spec: &ScalingSpec) -> Vec<Rat> {
    net.reactions
        .iter()
        .map(|r| {
            let mut q = r.beta + spec.gamma;
            for (&nu, s) in r.inputs.iter().zip(&net.species) {
                q += s.alpha * Rat::from_integer(nu as i128);
            }
            q
        })
        .collect()
}

/// Largest rho_k - alpha_l over basis directions that see reaction k; `None` if none does.
pub fn level_exponent(net: &ReactionNetwork, spec: &ScalingSpec, basis: &HomogeneousBasis) -> Option<Rat> {
    let rho = reaction_exponents(net, spec);
    level_exponent_with(net, &rho, basis)
}

pub(crate) fn level_exponent_with(net: &ReactionNetwork, rho: &[Rat], basis: &HomogeneousBasis) -> Option<Rat> {
    let mut best: Option<Rat> = None;
    for (k, r) in net.reactions.iter().enumerate() {
        let zeta = rational::from_ints(&r.net_change());
        for l in 0..basis.dim() {
            if basis.touches(l, &zeta) {
                let e = rho[k] - basis.alpha_of[l];
                if best.is_none_or(|b| e > b) {
                    best = Some(e);
                }
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitingVector {
    /// Exponent-filtered projection in species coordinates (exact).
    #[serde(serialize_with = "ser_rats")]
    pub embedded: Vec<Rat>,
    /// Coordinates along the orthonormal basis of the level's subspace.
    pub theta: Vec<f64>,
}

fn ser_rats<S: serde::Serializer>(v: &[Rat], s: S) -> std::result::Result<S::Ok, S::Error> {
    let strs: Vec<String> = v.iter().map(format_rational).collect();
    serde::Serialize::serialize(&strs, s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleLevel {
    /// 0 for the slow level, increasing towards faster levels.
    pub index: usize,
    #[serde(serialize_with = "crate::classify::ser_rat")]
    pub m: Rat,
    pub jump_class: Vec<usize>,
    pub drift_class: Vec<usize>,
    pub limiting_vectors: BTreeMap<usize, LimitingVector>,
    /// Reactions with both a surviving jump and a surviving drift component.
    pub dual: Vec<usize>,
}

pub(crate) fn ser_rat<S: serde::Serializer>(q: &Rat, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format_rational(q))
}

impl ScaleLevel {
    pub fn classified(&self) -> Vec<usize> {
        self.limiting_vectors.keys().copied().collect()
    }
}

pub fn classify_level(net: &ReactionNetwork, spec: &ScalingSpec, basis: &HomogeneousBasis, m: Rat) -> ScaleLevel {
    let rho = reaction_exponents(net, spec);
    classify_level_with(net, &rho, basis, m)
}

pub(crate) fn classify_level_with(net: &ReactionNetwork, rho: &[Rat], basis: &HomogeneousBasis, m: Rat) -> ScaleLevel {
    let s = net.num_species();
    let mut level = ScaleLevel {
        index: 0,
        m,
        jump_class: vec![],
        drift_class: vec![],
        limiting_vectors: BTreeMap::new(),
        dual: vec![],
    };
    for (k, r) in net.reactions.iter().enumerate() {
        let zeta = rational::from_ints(&r.net_change());
        let mut jump = false;
        let mut drift = false;
        let mut embedded = vec![Rat::zero(); s];
        let mut theta = vec![0.0; basis.dim()];
        for l in 0..basis.dim() {
            let g = &basis.rational_directions[l];
            let gz = dot(g, &zeta);
            if gz.is_zero() || rho[k] - basis.alpha_of[l] != m {
                continue;
            }
            if basis.alpha_of[l].is_zero() {
                jump = true;
            } else if basis.alpha_of[l].is_positive() {
                drift = true;
            }
            let c = gz / dot(g, g);
            for (e, x) in embedded.iter_mut().zip(g) {
                *e += c * x;
            }
            theta[l] = rational::to_f64(&gz) / rational::norm_f64(g);
        }
        if jump {
            level.jump_class.push(k);
        }
        if drift {
            level.drift_class.push(k);
        }
        if jump && drift {
            level.dual.push(k);
        }
        if jump || drift {
            level.limiting_vectors.insert(k, LimitingVector { embedded, theta });
        }
    }
    level
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GeneratorKind {
    MarkovChain,
    Ode,
    Pdmp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorTerm {
    pub reaction: usize,
    /// Jump or drift direction in the level's basis coordinates.
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorDescription {
    pub kind: GeneratorKind,
    pub jump_terms: Vec<GeneratorTerm>,
    pub drift_terms: Vec<GeneratorTerm>,
}

pub fn limit_generator(level: &ScaleLevel, basis: &HomogeneousBasis) -> GeneratorDescription {
    let split = |k: usize, want_jump: bool| -> Vec<f64> {
        let lv = &level.limiting_vectors[&k];
        lv.theta
            .iter()
            .enumerate()
            .map(|(l, &x)| if basis.alpha_of[l].is_zero() == want_jump { x } else { 0.0 })
            .collect()
    };
    let jump_terms: Vec<GeneratorTerm> =
        level.jump_class.iter().map(|&k| GeneratorTerm { reaction: k, vector: split(k, true) }).collect();
    let drift_terms: Vec<GeneratorTerm> =
        level.drift_class.iter().map(|&k| GeneratorTerm { reaction: k, vector: split(k, false) }).collect();
    let kind = match (jump_terms.is_empty(), drift_terms.is_empty()) {
        (false, false) => GeneratorKind::Pdmp,
        (false, true) => GeneratorKind::MarkovChain,
        (true, _) => GeneratorKind::Ode,
    };
    GeneratorDescription { kind, jump_terms, drift_terms }
}

/// Shifts gamma so that the slowest level has exponent zero.
pub fn choose_gamma(net: &ReactionNetwork, spec: &ScalingSpec) -> Result<Rat> {
    let chain = decompose::level_chain(net, spec)?;
    let slow = chain.levels.last().ok_or(Error::NoSlowSubspace)?;
    Ok(spec.gamma - slow.level.m)
}
