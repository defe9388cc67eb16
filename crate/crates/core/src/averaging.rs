//! Conditional equilibria of the fast levels and the averaged slow drift.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use num_traits::Zero;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::markov::{stationary_distribution, Transition};
use crate::model::{AffineRates, MultiscaleModel};
use crate::rational::{self, Rat};

/// Largest fast lattice solved directly.
pub const MAX_FAST_STATES: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Strategy {
    /// No fast levels: the slow drift is evaluated directly.
    Direct,
    /// Stationary distribution of a finite fast chain.
    Finite,
    /// Stationary first moments of fast dynamics with affine intensities.
    Moments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EquilibriumKind {
    Finite,
    Moments,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionalEquilibrium {
    pub kind: EquilibriumKind,
    /// Fast coordinates of each supported state (finite kind only).
    pub states: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
    /// Stationary means of the fast coordinates.
    pub means: Vec<f64>,
    pub frozen: Vec<f64>,
    pub residual: f64,
}

/// Finite lattice of fast molecule counts with its level structure.
#[derive(Debug, Clone)]
struct FastLattice {
    /// Exponent-zero species.
    species: Vec<usize>,
    counts: Vec<Vec<i64>>,
    /// Fast coordinates of each state.
    y: Vec<Vec<f64>>,
    class_of: Vec<usize>,
    classes: Vec<Vec<usize>>,
    /// Transitions (from, to, reaction) inside a class.
    inner: Vec<(usize, usize, usize)>,
    /// Transitions (from, to, reaction) between classes.
    outer: Vec<(usize, usize, usize)>,
}

#[derive(Debug, Clone)]
pub(crate) struct MomentSolution {
    pub rates: AffineRates,
    /// Level-2 mean as p + q v1.
    pub p: DVector<f64>,
    pub q: DMatrix<f64>,
    /// Intensities averaged over level 2, as abar + bbar v1.
    pub abar: Vec<f64>,
    pub bbar: DMatrix<f64>,
    pub m1: DVector<f64>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AveragedModel {
    pub model: MultiscaleModel,
    pub strategy: Strategy,
    lattice: Option<FastLattice>,
    affine: bool,
}

pub(crate) fn inverse_checked(b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if b.nrows() == 0 {
        return Ok(b.clone());
    }
    let inv = b.clone().try_inverse().ok_or_else(|| Error::Singular(what.into()))?;
    let cond = b.amax() * inv.amax() * b.nrows() as f64;
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::Singular(format!("{what} (condition estimate {cond:e})")));
    }
    Ok(inv)
}

impl AveragedModel {
    pub fn build(model: MultiscaleModel) -> Result<Self> {
        let affine = model.require_affine().is_ok();
        if model.num_levels() == 1 {
            return Ok(AveragedModel { model, strategy: Strategy::Direct, lattice: None, affine });
        }
        if let Some(lattice) = build_lattice(&model) {
            return Ok(AveragedModel { model, strategy: Strategy::Finite, lattice: Some(lattice), affine });
        }
        model.require_affine()?;
        Ok(AveragedModel { model, strategy: Strategy::Moments, lattice: None, affine })
    }

    /// Builds with a fixed strategy, failing if it does not apply.
    pub fn with_strategy(model: MultiscaleModel, strategy: Strategy) -> Result<Self> {
        let mut avg = Self::build(model)?;
        match strategy {
            Strategy::Direct if avg.strategy != Strategy::Direct => {
                return Err(Error::InvalidArgument("network has fast levels".into()))
            }
            Strategy::Finite if avg.lattice.is_none() => {
                return Err(Error::UnboundedStateSpace(MAX_FAST_STATES))
            }
            Strategy::Moments if !avg.affine => avg.model.require_affine()?,
            _ => {}
        }
        avg.strategy = strategy;
        Ok(avg)
    }

    pub fn is_affine(&self) -> bool {
        self.affine
    }

    pub fn has_finite_lattice(&self) -> bool {
        self.lattice.is_some()
    }

    fn lattice_z(&self, lat: &FastLattice, v0: &[f64], s: usize) -> Vec<f64> {
        let mut z = self.model.z_from(v0, &lat.y[s]);
        for (j, &i) in lat.species.iter().enumerate() {
            z[i] = lat.counts[s][j] as f64;
        }
        z
    }

    /// Stationary law of the fast lattice at frozen slow coordinates, with per-class conditionals.
    fn finite_solution(&self, v0: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>, f64)> {
        let lat = self.lattice.as_ref().ok_or(Error::UnboundedStateSpace(MAX_FAST_STATES))?;
        let r = self.model.network.num_reactions();
        let n = lat.counts.len();
        let mut rates = vec![vec![0.0; r]; n];
        for (s, row) in rates.iter_mut().enumerate() {
            let z = self.lattice_z(lat, v0, s);
            for (k, x) in row.iter_mut().enumerate() {
                *x = self.model.lambda(k, &z);
                if *x < 0.0 || !x.is_finite() {
                    return Err(Error::InvalidArgument(format!("intensity {x} at frozen slow state {v0:?}")));
                }
            }
        }
        let mut local = vec![0usize; n];
        for c in &lat.classes {
            for (i, &s) in c.iter().enumerate() {
                local[s] = i;
            }
        }
        let mut within = vec![Vec::new(); lat.classes.len()];
        for &(a, b, k) in &lat.inner {
            within[lat.class_of[a]].push((local[a], local[b], rates[a][k]));
        }
        let mut worst: f64 = 0.0;
        let mut conditional = Vec::with_capacity(lat.classes.len());
        for (c, states) in lat.classes.iter().enumerate() {
            let (pi, res) = stationary_distribution(states.len(), &within[c])?;
            worst = worst.max(res);
            conditional.push(pi);
        }
        let mut between: Vec<Transition> = Vec::new();
        for &(a, b, k) in &lat.outer {
            let w = conditional[lat.class_of[a]][local[a]] * rates[a][k];
            if w > 0.0 {
                between.push((lat.class_of[a], lat.class_of[b], w));
            }
        }
        let (pc, res) = stationary_distribution(lat.classes.len(), &between)?;
        worst = worst.max(res);
        let mut mu = vec![0.0; n];
        for (c, states) in lat.classes.iter().enumerate() {
            for (i, &s) in states.iter().enumerate() {
                mu[s] = pc[c] * conditional[c][i];
            }
        }
        let lambda: Vec<f64> = (0..r).map(|k| (0..n).map(|s| mu[s] * rates[s][k]).sum()).collect();
        Ok((mu, vec![lambda], worst))
    }

    pub(crate) fn moments(&self, v0: &[f64]) -> Result<MomentSolution> {
        if !self.affine {
            self.model.require_affine()?;
        }
        let m = &self.model;
        let (d1, d2) = m.fast_dims();
        let rates = m.affine_rates(v0);
        let r = m.network.num_reactions();

        let (p, q) = if d2 > 0 {
            let mut a2 = DVector::zeros(d2);
            let mut b2 = DMatrix::zeros(d2, d1 + d2);
            for t in m.level_terms(2) {
                a2 += &t.direction * rates.a[t.reaction];
                b2 += &t.direction * rates.b.row(t.reaction);
            }
            let b21 = b2.columns(0, d1).into_owned();
            let b22 = b2.columns(d1, d2).into_owned();
            let inv = inverse_checked(&b22, "level-2 moment equations")?;
            (-&inv * a2, -&inv * b21)
        } else {
            (DVector::zeros(0), DMatrix::zeros(0, d1))
        };

        let mut abar = rates.a.clone();
        let mut bbar = DMatrix::zeros(r, d1);
        for k in 0..r {
            let b1 = rates.b.row(k).columns(0, d1).into_owned();
            let b2 = rates.b.row(k).columns(d1, d2).into_owned();
            if d2 > 0 {
                abar[k] += (&b2 * &p)[0];
            }
            let row = b1 + &b2 * &q;
            bbar.set_row(k, &row);
        }

        let mut a1 = DVector::zeros(d1);
        let mut b1 = DMatrix::zeros(d1, d1);
        for t in m.level_terms(1) {
            a1 += &t.direction * abar[t.reaction];
            b1 += &t.direction * bbar.row(t.reaction);
        }
        let inv = inverse_checked(&b1, "level-1 moment equations")?;
        let m1 = -inv * a1;
        let lambda = (0..r).map(|k| abar[k] + (bbar.row(k) * &m1)[0]).collect();
        Ok(MomentSolution { rates, p, q, abar, bbar, m1, lambda })
    }

    /// Stationary equilibrium of all fast levels at frozen slow coordinates, via the finite lattice.
    pub fn fast_stationary_finite(&self, v0: &[f64]) -> Result<ConditionalEquilibrium> {
        let lat = self.lattice.as_ref().ok_or(Error::UnboundedStateSpace(MAX_FAST_STATES))?;
        let (mu, _, residual) = self.finite_solution(v0)?;
        let nf = lat.y.first().map_or(0, |y| y.len());
        let means = (0..nf).map(|j| mu.iter().zip(&lat.y).map(|(p, y)| p * y[j]).sum()).collect();
        Ok(ConditionalEquilibrium {
            kind: EquilibriumKind::Finite,
            states: lat.y.clone(),
            probabilities: mu,
            means,
            frozen: v0.to_vec(),
            residual,
        })
    }

    /// Stationary first moments of all fast coordinates at frozen slow coordinates.
    pub fn fast_stationary_moments(&self, v0: &[f64]) -> Result<ConditionalEquilibrium> {
        let sol = self.moments(v0)?;
        let mut means: Vec<f64> = sol.m1.iter().copied().collect();
        if !sol.p.is_empty() {
            means.extend((&sol.p + &sol.q * &sol.m1).iter());
        }
        Ok(ConditionalEquilibrium {
            kind: EquilibriumKind::Moments,
            states: vec![],
            probabilities: vec![],
            means,
            frozen: v0.to_vec(),
            residual: 0.0,
        })
    }

    /// Equilibrium of the fast levels under the active strategy.
    pub fn equilibrium(&self, v0: &[f64]) -> Result<ConditionalEquilibrium> {
        match self.strategy {
            Strategy::Finite => self.fast_stationary_finite(v0),
            Strategy::Moments => self.fast_stationary_moments(v0),
            Strategy::Direct => Ok(ConditionalEquilibrium {
                kind: EquilibriumKind::Moments,
                states: vec![],
                probabilities: vec![],
                means: vec![],
                frozen: v0.to_vec(),
                residual: 0.0,
            }),
        }
    }

    /// Equilibrium of the fastest level with slow and level-1 coordinates frozen (three levels only).
    pub fn level2_equilibrium(&self, v0: &[f64], v1: &[f64]) -> Result<ConditionalEquilibrium> {
        let (d1, d2) = self.model.fast_dims();
        if d2 == 0 {
            return Err(Error::InvalidArgument("network has no second fast level".into()));
        }
        let mut frozen = v0.to_vec();
        frozen.extend_from_slice(v1);
        if let (Strategy::Finite, Some(lat)) = (self.strategy, &self.lattice) {
            if let Some(c) = find_class(lat, v1) {
                let states = &lat.classes[c];
                let n = states.len();
                let mut local = HashMap::new();
                for (i, &s) in states.iter().enumerate() {
                    local.insert(s, i);
                }
                let mut tr = Vec::new();
                for &(a, b, k) in &lat.inner {
                    if lat.class_of[a] == c {
                        let z = self.lattice_z(lat, v0, a);
                        tr.push((local[&a], local[&b], self.model.lambda(k, &z)));
                    }
                }
                let (pi, residual) = stationary_distribution(n, &tr)?;
                let ys: Vec<Vec<f64>> = states.iter().map(|&s| lat.y[s][d1..].to_vec()).collect();
                let means = (0..d2).map(|j| pi.iter().zip(&ys).map(|(p, y)| p * y[j]).sum()).collect();
                return Ok(ConditionalEquilibrium {
                    kind: EquilibriumKind::Finite,
                    states: ys,
                    probabilities: pi,
                    means,
                    frozen,
                    residual,
                });
            }
        }
        let sol = self.moments(v0)?;
        let mean = &sol.p + &sol.q * DVector::from_column_slice(v1);
        Ok(ConditionalEquilibrium {
            kind: EquilibriumKind::Moments,
            states: vec![],
            probabilities: vec![],
            means: mean.iter().copied().collect(),
            frozen,
            residual: 0.0,
        })
    }

    /// Doubly averaged intensities of every reaction at frozen slow coordinates.
    pub fn lambda_bar_bar(&self, v0: &[f64]) -> Result<Vec<f64>> {
        match self.strategy {
            Strategy::Finite => Ok(self.finite_solution(v0)?.1.remove(0)),
            Strategy::Moments => Ok(self.moments(v0)?.lambda),
            Strategy::Direct => {
                let z = self.model.z_from(v0, &[]);
                Ok((0..self.model.network.num_reactions()).map(|k| self.model.lambda(k, &z)).collect())
            }
        }
    }

    /// Intensities averaged over the fastest level only; equals the plain intensity with two levels.
    pub fn lambda_bar(&self, v0: &[f64], v1: &[f64]) -> Result<Vec<f64>> {
        let m = &self.model;
        let (_, d2) = m.fast_dims();
        let r = m.network.num_reactions();
        if d2 == 0 {
            let z = m.z_from(v0, v1);
            return Ok((0..r).map(|k| m.lambda(k, &z)).collect());
        }
        let eq = self.level2_equilibrium(v0, v1)?;
        if eq.kind == EquilibriumKind::Finite {
            let mut fast = v1.to_vec();
            fast.extend(std::iter::repeat_n(0.0, d2));
            let d1 = v1.len();
            let mut out = vec![0.0; r];
            for (y2, p) in eq.states.iter().zip(&eq.probabilities) {
                fast[d1..].copy_from_slice(y2);
                let z = m.z_from(v0, &fast);
                for (k, o) in out.iter_mut().enumerate() {
                    *o += p * m.lambda(k, &z);
                }
            }
            return Ok(out);
        }
        let sol = self.moments(v0)?;
        let v1 = DVector::from_column_slice(v1);
        Ok((0..r).map(|k| sol.abar[k] + (sol.bbar.row(k) * &v1)[0]).collect())
    }

    /// Slow drift assembled from given intensities.
    pub fn slow_drift(&self, lambda: &[f64]) -> DVector<f64> {
        let mut f = DVector::zeros(self.model.slow_dim());
        for t in self.model.level_terms(0) {
            f += &t.direction * lambda[t.reaction];
        }
        f
    }

    pub fn f1_bar(&self, v0: &[f64], v1: &[f64]) -> Result<DVector<f64>> {
        Ok(self.slow_drift(&self.lambda_bar(v0, v1)?))
    }

    pub fn f_bar(&self, v0: &[f64]) -> Result<DVector<f64>> {
        Ok(self.slow_drift(&self.lambda_bar_bar(v0)?))
    }

    /// Jacobian of the averaged drift by Richardson-extrapolated differences.
    pub fn jacobian(&self, v0: &[f64]) -> Result<DMatrix<f64>> {
        let d = v0.len();
        let mut jac = DMatrix::zeros(d, d);
        let shifted = |j: usize, h: f64| -> Result<DVector<f64>> {
            let mut v = v0.to_vec();
            v[j] += h;
            self.f_bar(&v)
        };
        for j in 0..d {
            let h = (1e-6 * v0[j].abs()).max(1e-6);
            let central = |h: f64| -> Result<DVector<f64>> { Ok((shifted(j, h)? - shifted(j, -h)?) / (2.0 * h)) };
            let col = match (central(h), central(h / 2.0)) {
                (Ok(a), Ok(b)) => (b * 4.0 - a) / 3.0,
                _ => {
                    let f0 = self.f_bar(v0)?;
                    let a = (shifted(j, h)? - &f0) / h;
                    let b = (shifted(j, h / 2.0)? - &f0) / (h / 2.0);
                    b * 2.0 - a
                }
            };
            jac.set_column(j, &col);
        }
        Ok(jac)
    }

    pub fn drift_jacobian(&self, v0: &[f64]) -> Result<DMatrix<f64>> {
        self.jacobian(v0)
    }
}

fn find_class(lat: &FastLattice, v1: &[f64]) -> Option<usize> {
    let d1 = v1.len();
    lat.classes.iter().position(|c| {
        let y = &lat.y[c[0]];
        (0..d1).all(|j| (y[j] - v1[j]).abs() < 1e-9 * (1.0 + v1[j].abs()))
    })
}

fn build_lattice(m: &MultiscaleModel) -> Option<FastLattice> {
    let d = &m.decomposition;
    let net = &m.network;
    let fast = &d.levels[1..];
    for l in fast {
        if !l.level.drift_class.is_empty() || l.range.alpha_of.iter().any(|a| !a.is_zero()) {
            return None;
        }
    }
    let species: Vec<usize> = (0..net.num_species()).filter(|&i| net.species[i].alpha.is_zero()).collect();
    let three = fast.len() == 2;
    let outer_rx: Vec<usize> = fast[0].level.jump_class.clone();
    let inner_rx: Vec<usize> = if three { fast[1].level.jump_class.clone() } else { vec![] };
    let moves: Vec<(usize, Vec<i64>, Vec<i64>, bool)> = outer_rx
        .iter()
        .map(|&k| (k, false))
        .chain(inner_rx.iter().map(|&k| (k, true)))
        .map(|(k, inner)| {
            let r = &net.reactions[k];
            let need = species.iter().map(|&i| r.inputs[i] as i64).collect();
            let delta = species.iter().map(|&i| r.outputs[i] as i64 - r.inputs[i] as i64).collect();
            (k, need, delta, inner)
        })
        .collect();

    let x0: Vec<i64> = species.iter().map(|&i| net.species[i].initial_count as i64).collect();
    let mut index: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut counts = vec![x0.clone()];
    index.insert(x0, 0);
    let mut queue = VecDeque::from([0usize]);
    let mut edges: Vec<(usize, usize, usize, bool)> = Vec::new();
    while let Some(s) = queue.pop_front() {
        for (k, need, delta, inner) in &moves {
            let x = &counts[s];
            if x.iter().zip(need).any(|(a, b)| a < b) {
                continue;
            }
            let y: Vec<i64> = x.iter().zip(delta).map(|(a, b)| a + b).collect();
            let t = match index.get(&y) {
                Some(&t) => t,
                None => {
                    if counts.len() >= MAX_FAST_STATES {
                        return None;
                    }
                    let t = counts.len();
                    index.insert(y.clone(), t);
                    counts.push(y);
                    queue.push_back(t);
                    t
                }
            };
            if t != s {
                edges.push((s, t, *k, *inner));
            }
        }
    }

    let fast_rows = m.fast_dims().0 + m.fast_dims().1;
    let s_total = net.num_species();
    let y: Vec<Vec<f64>> = counts
        .iter()
        .map(|x| {
            let mut full = vec![0.0; s_total];
            for (j, &i) in species.iter().enumerate() {
                full[i] = x[j] as f64;
            }
            (0..fast_rows)
                .map(|r| (0..s_total).map(|i| m.transform[(m.d0 + r, i)] * full[i]).sum())
                .collect()
        })
        .collect();

    // Classes are labelled exactly by the level-1 generators.
    let (class_of, classes) = if three {
        let gens = &fast[0].range.rational_directions;
        let mut keys: HashMap<Vec<Rat>, usize> = HashMap::new();
        let mut class_of = Vec::with_capacity(counts.len());
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for (s, x) in counts.iter().enumerate() {
            let mut full = vec![Rat::zero(); s_total];
            for (j, &i) in species.iter().enumerate() {
                full[i] = rational::int(x[j]);
            }
            let key: Vec<Rat> = gens.iter().map(|g| rational::dot(g, &full)).collect();
            let next = classes.len();
            let c = *keys.entry(key).or_insert(next);
            if c == next {
                classes.push(Vec::new());
            }
            classes[c].push(s);
            class_of.push(c);
        }
        (class_of, classes)
    } else {
        ((0..counts.len()).collect(), (0..counts.len()).map(|s| vec![s]).collect())
    };

    let mut inner = Vec::new();
    let mut outer = Vec::new();
    for (a, b, k, is_inner) in edges {
        if is_inner {
            inner.push((a, b, k));
        } else if class_of[a] != class_of[b] {
            outer.push((a, b, k));
        }
    }
    Some(FastLattice { species, counts, y, class_of, classes, inner, outer })
}
