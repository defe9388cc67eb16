//! Nested stoichiometric subspaces, projections and the change of basis.

use nalgebra::DMatrix;
use num_traits::Zero;
use serde::Serialize;

use crate::basis::{complement_within, homogeneous_null_basis, HomogeneousBasis};
use crate::classify::{classify_level_with, level_exponent_with, limit_generator, GeneratorDescription, ScaleLevel};
use crate::classify::reaction_exponents;
use crate::error::{Error, Result};
use crate::network::{ReactionNetwork, ScalingSpec};
use crate::rational::{self, format_rational, Rat};

#[derive(Debug, Clone, Serialize)]
pub struct LevelData {
    pub level: ScaleLevel,
    /// Subspace on which the level was classified.
    pub subspace: HomogeneousBasis,
    /// Span of the level's limiting vectors; the level's own coordinates.
    pub range: HomogeneousBasis,
    pub generator: GeneratorDescription,
}

/// Levels in discovery order (fastest first) plus the annihilated remainder.
#[derive(Debug, Clone)]
pub struct LevelChain {
    pub rho: Vec<Rat>,
    pub levels: Vec<LevelData>,
    pub constants: HomogeneousBasis,
}

pub fn level_chain(net: &ReactionNetwork, spec: &ScalingSpec) -> Result<LevelChain> {
    let alphas = net.alphas();
    let rho = reaction_exponents(net, spec);
    let mut within = HomogeneousBasis::standard(&alphas);
    let mut levels = Vec::new();
    while !within.is_empty() {
        let Some(m) = level_exponent_with(net, &rho, &within) else {
            break;
        };
        let level = classify_level_with(net, &rho, &within, m);
        let spanning: Vec<Vec<Rat>> = level.limiting_vectors.values().map(|v| v.embedded.clone()).collect();
        let range = homogeneous_null_basis(&spanning, &alphas)?;
        let generator = limit_generator(&level, &within);
        let next = complement_within(&within, &range, &alphas)?;
        levels.push(LevelData { level, subspace: within, range, generator });
        within = next;
        if levels.len() > 3 {
            return Err(Error::TooManyLevels(levels.len()));
        }
    }
    Ok(LevelChain { rho, levels, constants: within })
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiscaleDecomposition {
    #[serde(serialize_with = "crate::classify::ser_rat")]
    pub gamma: Rat,
    #[serde(skip)]
    pub rho: Vec<Rat>,
    /// Index 0 is the slow level; higher indices are faster.
    pub levels: Vec<LevelData>,
    /// Directions annihilated by every reaction.
    pub constants: HomogeneousBasis,
    /// Normalized values of the constant directions at the initial state.
    pub constant_values: Vec<f64>,
    /// Exact projections onto slow-plus-constant, level-1 and level-2 subspaces.
    #[serde(skip)]
    pub projections: [Vec<Vec<Rat>>; 3],
    /// Orthogonal change of basis; rows ordered slow, level 1, level 2, constants.
    #[serde(skip)]
    pub transform: DMatrix<f64>,
    /// (s0, s1, s2) with constants counted in s0.
    pub dims: (usize, usize, usize),
    /// (level, reaction) pairs whose limiting vector differs from the plain projection.
    pub projection_mismatches: Vec<(usize, usize)>,
}

impl MultiscaleDecomposition {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn slow(&self) -> &LevelData {
        &self.levels[0]
    }

    pub fn level(&self, i: usize) -> Option<&LevelData> {
        self.levels.get(i)
    }

    pub fn slow_dim(&self) -> usize {
        self.levels[0].range.dim()
    }

    /// Columns of the stoichiometric matrix of a level's subnetwork.
    pub fn stoichiometry(&self, i: usize) -> Vec<Vec<Rat>> {
        self.levels[i].level.limiting_vectors.values().map(|v| v.embedded.clone()).collect()
    }

    pub fn projection_f64(&self, i: usize) -> DMatrix<f64> {
        let p = &self.projections[i];
        let s = p.len();
        DMatrix::from_fn(s, s, |a, b| rational::to_f64(&p[a][b]))
    }

    pub fn m(&self, i: usize) -> Option<Rat> {
        self.levels.get(i).map(|l| l.level.m)
    }

    pub fn describe_m(&self) -> Vec<String> {
        self.levels.iter().map(|l| format_rational(&l.level.m)).collect()
    }
}

pub fn decompose(net: &ReactionNetwork, spec: &ScalingSpec) -> Result<MultiscaleDecomposition> {
    let chain = level_chain(net, spec)?;
    let n = chain.levels.len();
    if n == 0 {
        return Err(Error::NoSlowSubspace);
    }
    if n > 3 {
        return Err(Error::TooManyLevels(n));
    }
    for w in chain.levels.windows(2) {
        if w[1].level.m >= w[0].level.m {
            return Err(Error::ScalesNotSeparated(format!(
                "m = {} followed by m = {}",
                format_rational(&w[0].level.m),
                format_rational(&w[1].level.m)
            )));
        }
    }
    let mut levels = chain.levels;
    levels.reverse();
    for (i, l) in levels.iter_mut().enumerate() {
        l.level.index = i;
    }
    let slow = &levels[0].level;
    if !slow.jump_class.is_empty() {
        return Err(Error::SlowJumps(slow.jump_class.iter().map(|&k| net.reactions[k].name.clone()).collect()));
    }
    if !slow.m.is_zero() {
        return Err(Error::SlowExponentNonzero {
            m0: format_rational(&slow.m),
            suggested: format_rational(&(spec.gamma - slow.m)),
        });
    }

    let s = net.num_species();
    let constants = chain.constants;
    let z0 = net.normalize(&net.initial_state(), spec);
    let constant_values = constants.coords(&z0);

    let slow_and_constants = levels[0].range.concat(&constants);
    let empty = HomogeneousBasis::empty();
    let proj = |b: &HomogeneousBasis| b.projection_exact(s);
    let projections = [
        proj(&slow_and_constants),
        proj(levels.get(1).map(|l| &l.range).unwrap_or(&empty)),
        proj(levels.get(2).map(|l| &l.range).unwrap_or(&empty)),
    ];

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(s);
    for l in &levels {
        rows.extend(l.range.vectors.iter().cloned());
    }
    rows.extend(constants.vectors.iter().cloned());
    if rows.len() != s {
        return Err(Error::InvalidNetwork(format!("basis has {} vectors for {} species", rows.len(), s)));
    }
    let transform = DMatrix::from_fn(s, s, |i, j| rows[i][j]);

    let mut projection_mismatches = Vec::new();
    for (i, l) in levels.iter().enumerate() {
        for (&k, lv) in &l.level.limiting_vectors {
            let zeta = rational::from_ints(&net.reactions[k].net_change());
            if l.range.project_exact(&zeta) != lv.embedded {
                projection_mismatches.push((i, k));
            }
        }
    }

    let dims = (
        levels[0].range.dim() + constants.dim(),
        levels.get(1).map_or(0, |l| l.range.dim()),
        levels.get(2).map_or(0, |l| l.range.dim()),
    );
    Ok(MultiscaleDecomposition {
        gamma: spec.gamma,
        rho: chain.rho,
        levels,
        constants,
        constant_values,
        projections,
        transform,
        dims,
        projection_mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::rational::{from_ints, int, rat};

    fn load(name: &str) -> (ReactionNetwork, ScalingSpec) {
        let s = builtin::load(name).unwrap();
        (s.network, s.scaling)
    }

    fn check_projections(d: &MultiscaleDecomposition) {
        let s = d.transform.nrows();
        let p: Vec<DMatrix<f64>> = (0..3).map(|i| d.projection_f64(i)).collect();
        let id = DMatrix::<f64>::identity(s, s);
        assert!(((&p[0] + &p[1] + &p[2]) - &id).amax() < 1e-12);
        for i in 0..3 {
            assert!((&p[i] * &p[i] - &p[i]).amax() < 1e-12);
            assert!((&p[i] - p[i].transpose()).amax() < 1e-12);
            for j in 0..3 {
                if i != j {
                    assert!((&p[i] * &p[j]).amax() < 1e-12);
                }
            }
        }
        assert!((&d.transform * d.transform.transpose() - &id).amax() < 1e-12);
    }

    #[test]
    fn viral_two_levels() {
        let (net, spec) = load("viral");
        assert!(matches!(decompose(&net, &spec), Err(Error::SlowExponentNonzero { .. })));
        let d = decompose(&net, &spec.with_gamma(rat(2, 3))).unwrap();
        assert_eq!(d.num_levels(), 2);
        assert_eq!(d.dims, (1, 2, 0));
        assert_eq!(d.slow().range.rational_directions, vec![from_ints(&[0, 1, 0])]);
        assert_eq!(d.projections[0][1][1], int(1));
        assert_eq!(d.m(0), Some(int(0)));
        assert_eq!(d.m(1), Some(rat(2, 3)));
        assert!(d.constants.is_empty());
        check_projections(&d);
    }

    #[test]
    fn michaelis_menten_two_levels_with_total_enzyme() {
        let (net, spec) = load("michaelis-menten");
        let d = decompose(&net, &spec).unwrap();
        assert_eq!(d.num_levels(), 2);
        assert_eq!(d.slow().range.rational_directions, vec![from_ints(&[0, 1, 0, 0]), from_ints(&[0, 0, 0, 1])]);
        assert_eq!(d.levels[1].range.rational_directions, vec![from_ints(&[1, 0, -1, 0])]);
        assert_eq!(d.levels[1].level.jump_class, vec![0, 1, 2]);
        assert_eq!(d.constants.rational_directions, vec![from_ints(&[1, 0, 1, 0])]);
        assert!((d.constant_values[0] - 5.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(d.dims, (3, 1, 0));
        check_projections(&d);
    }

    #[test]
    fn enzyme_three_levels() {
        let (net, spec) = load("enzyme3");
        let d = decompose(&net, &spec).unwrap();
        assert_eq!(d.num_levels(), 3);
        assert_eq!(d.describe_m(), vec!["0", "1", "2"]);
        assert_eq!(d.levels[2].range.rational_directions, vec![from_ints(&[1, 0, 0, 0, -1])]);
        assert_eq!(
            d.levels[1].subspace.rational_directions,
            vec![from_ints(&[1, 0, 0, 0, 1]), from_ints(&[0, 1, 0, 0, 0]), from_ints(&[0, 0, 1, 0, 0]), from_ints(&[0, 0, 0, 1, 0])]
        );
        assert_eq!(d.levels[1].level.jump_class, vec![0, 1, 2]);
        assert_eq!(
            d.levels[1].level.limiting_vectors[&0].embedded,
            vec![rat(-1, 2), int(0), int(1), int(0), rat(-1, 2)]
        );
        assert_eq!(d.levels[1].range.rational_directions, vec![from_ints(&[1, 0, -2, 0, 1])]);
        assert_eq!(d.slow().range.rational_directions, vec![from_ints(&[0, 1, 0, 0, 0]), from_ints(&[0, 0, 0, 1, 0])]);
        assert_eq!(d.constants.rational_directions, vec![from_ints(&[1, 0, 1, 0, 1])]);
        assert_eq!(d.dims, (3, 1, 1));
        check_projections(&d);
    }

    #[test]
    fn slow_jump_reaction_is_rejected() {
        let net = crate::network::build_network(
            "slowjump",
            &[("A", int(0), 3)],
            &[("decay", &[(1, "A")], &[], 1.0, int(0))],
        )
        .unwrap();
        let e = decompose(&net, &ScalingSpec::new(10, int(0))).unwrap_err();
        assert_eq!(e, Error::SlowJumps(vec!["decay".into()]));
    }

    #[test]
    fn empty_network_has_no_slow_subspace() {
        let net = crate::network::build_network("e", &[("A", int(1), 3)], &[]).unwrap();
        assert_eq!(decompose(&net, &ScalingSpec::new(10, int(0))).unwrap_err(), Error::NoSlowSubspace);
    }
}
