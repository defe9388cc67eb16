//! Mass-action reaction networks: structure, text format and propensities.

use std::collections::HashMap;
use std::fmt::Write as _;

use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rational::{self, format_rational, parse_rational, Rat};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Species {
    pub name: String,
    #[serde(serialize_with = "ser_rat")]
    pub alpha: Rat,
    pub initial_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reaction {
    pub name: String,
    /// Input multiplicities, one entry per species.
    pub inputs: Vec<u32>,
    /// Output multiplicities, one entry per species.
    pub outputs: Vec<u32>,
    pub kappa: f64,
    #[serde(serialize_with = "ser_rat")]
    pub beta: Rat,
}

impl Reaction {
    pub fn net_change(&self) -> Vec<i64> {
        self.inputs
            .iter()
            .zip(&self.outputs)
            .map(|(&i, &o)| o as i64 - i as i64)
            .collect()
    }

    pub fn order(&self) -> u32 {
        self.inputs.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReactionNetwork {
    pub name: String,
    pub species: Vec<Species>,
    pub reactions: Vec<Reaction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingSpec {
    pub n: u64,
    #[serde(serialize_with = "ser_rat")]
    pub gamma: Rat,
}

impl ScalingSpec {
    pub fn new(n: u64, gamma: Rat) -> Self {
        ScalingSpec { n, gamma }
    }

    /// N raised to a rational power.
    pub fn pow(&self, q: &Rat) -> f64 {
        (self.n as f64).powf(rational::to_f64(q))
    }

    pub fn with_gamma(&self, gamma: Rat) -> Self {
        ScalingSpec { n: self.n, gamma }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimulationDefaults {
    pub t_end: Option<f64>,
    pub seed: Option<u64>,
}

/// Everything a network file declares.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkSpec {
    pub network: ReactionNetwork,
    pub scaling: ScalingSpec,
    pub defaults: SimulationDefaults,
}

fn ser_rat<S: serde::Serializer>(q: &Rat, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format_rational(q))
}

impl ReactionNetwork {
    pub fn num_species(&self) -> usize {
        self.species.len()
    }

    pub fn num_reactions(&self) -> usize {
        self.reactions.len()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s.name == name)
    }

    pub fn alphas(&self) -> Vec<Rat> {
        self.species.iter().map(|s| s.alpha).collect()
    }

    pub fn initial_state(&self) -> Vec<i64> {
        self.species.iter().map(|s| s.initial_count as i64).collect()
    }

    /// Columns of the stoichiometric matrix, one per reaction.
    pub fn reaction_vectors(&self) -> Vec<Vec<i64>> {
        self.reactions.iter().map(|r| r.net_change()).collect()
    }

    /// Maps counts to normalized abundances z_i = N^{-alpha_i} x_i.
    pub fn normalize(&self, x: &[i64], spec: &ScalingSpec) -> Vec<f64> {
        self.species
            .iter()
            .zip(x)
            .map(|(s, &xi)| xi as f64 / spec.pow(&s.alpha))
            .collect()
    }

    pub fn denormalize(&self, z: &[f64], spec: &ScalingSpec) -> Vec<f64> {
        self.species
            .iter()
            .zip(z)
            .map(|(s, &zi)| zi * spec.pow(&s.alpha))
            .collect()
    }
}

pub fn reaction_vector(net: &ReactionNetwork, k: usize) -> Vec<i64> {
    net.reactions[k].net_change()
}

/// Raw stochastic mass-action intensity with falling factorials and kappa' = kappa N^beta.
pub fn propensity(net: &ReactionNetwork, k: usize, x: &[i64], spec: &ScalingSpec) -> f64 {
    let r = &net.reactions[k];
    let mut v = r.kappa * spec.pow(&r.beta);
    for (&nu, &xi) in r.inputs.iter().zip(x) {
        for j in 0..nu as i64 {
            if xi - j <= 0 {
                return 0.0;
            }
            v *= (xi - j) as f64;
        }
    }
    v
}

/// Intensity in normalized coordinates; `limit` drops the finite-N falling-factorial shifts.
pub fn normalized_propensity(
    net: &ReactionNetwork,
    k: usize,
    z: &[f64],
    spec: &ScalingSpec,
    limit: bool,
) -> f64 {
    let r = &net.reactions[k];
    let mut v = r.kappa;
    for ((&nu, &zi), s) in r.inputs.iter().zip(z).zip(&net.species) {
        let step = if limit { 0.0 } else { 1.0 / spec.pow(&s.alpha) };
        for j in 0..nu {
            v *= zi - j as f64 * step;
        }
    }
    v
}

/// Basis of the rational null space of the transposed stoichiometric matrix of `subset`.
pub fn find_conservation_laws(net: &ReactionNetwork, subset: &[usize]) -> Vec<Vec<Rat>> {
    let rows: Vec<Vec<Rat>> = subset
        .iter()
        .map(|&k| rational::from_ints(&net.reactions[k].net_change()))
        .collect();
    rational::null_space(&rows, net.num_species())
}

pub fn parse_network(text: &str) -> Result<NetworkSpec> {
    let mut name: Option<String> = None;
    let mut species: Vec<Species> = Vec::new();
    let mut pending: Vec<(usize, String, Vec<(u32, String)>, Vec<(u32, String)>, f64, Rat)> =
        Vec::new();
    let mut n: Option<u64> = None;
    let mut gamma = Rat::zero();
    let mut defaults = SimulationDefaults::default();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |msg: String| Error::Parse { line, msg };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        match toks[0] {
            "network" => {
                if toks.len() != 2 {
                    return Err(err("expected `network <name>`".into()));
                }
                name = Some(toks[1].to_string());
            }
            "species" => {
                if toks.len() != 6 || toks[2] != "alpha" || toks[4] != "init" {
                    return Err(err("expected `species <name> alpha <rational> init <integer>`".into()));
                }
                let sname = toks[1];
                check_identifier(sname).map_err(err)?;
                if species.iter().any(|s| s.name == sname) {
                    return Err(err(format!("duplicate species `{sname}`")));
                }
                let alpha = parse_rational(toks[3])
                    .ok_or_else(|| err(format!("malformed rational `{}`", toks[3])))?;
                if alpha.is_negative() {
                    return Err(err(format!("alpha of `{sname}` is negative")));
                }
                let init: u64 = toks[5]
                    .parse()
                    .map_err(|_| err(format!("malformed initial count `{}`", toks[5])))?;
                species.push(Species { name: sname.to_string(), alpha, initial_count: init });
            }
            "reaction" => {
                let (rname, lhs, rhs, kappa, beta) = parse_reaction_line(&toks).map_err(err)?;
                if pending.iter().any(|p| p.1 == rname) {
                    return Err(err(format!("duplicate reaction `{rname}`")));
                }
                pending.push((line, rname, lhs, rhs, kappa, beta));
            }
            "N" => {
                if toks.len() != 2 {
                    return Err(err("expected `N <integer>`".into()));
                }
                let v: u64 = toks[1].parse().map_err(|_| err(format!("malformed N `{}`", toks[1])))?;
                if v < 2 {
                    return Err(err("N must be at least 2".into()));
                }
                n = Some(v);
            }
            "gamma" => {
                if toks.len() != 2 {
                    return Err(err("expected `gamma <rational>`".into()));
                }
                gamma = parse_rational(toks[1])
                    .ok_or_else(|| err(format!("malformed rational `{}`", toks[1])))?;
            }
            "tend" => {
                let v: f64 = toks
                    .get(1)
                    .and_then(|t| t.parse().ok())
                    .filter(|v: &f64| v.is_finite() && *v > 0.0)
                    .ok_or_else(|| err("expected `tend <positive real>`".into()))?;
                defaults.t_end = Some(v);
            }
            "seed" => {
                let v: u64 = toks
                    .get(1)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err("expected `seed <integer>`".into()))?;
                defaults.seed = Some(v);
            }
            other => return Err(err(format!("unknown keyword `{other}`"))),
        }
    }

    let s = species.len();
    let mut reactions = Vec::with_capacity(pending.len());
    for (line, rname, lhs, rhs, kappa, beta) in pending {
        let err = |msg: String| Error::Parse { line, msg };
        let resolve = |side: &[(u32, String)]| -> std::result::Result<Vec<u32>, String> {
            let mut v = vec![0u32; s];
            for (c, sp) in side {
                let i = species
                    .iter()
                    .position(|x| &x.name == sp)
                    .ok_or_else(|| format!("unknown species `{sp}`"))?;
                v[i] += c;
            }
            Ok(v)
        };
        let inputs = resolve(&lhs).map_err(err)?;
        let outputs = resolve(&rhs).map_err(err)?;
        if inputs == outputs {
            return Err(err(format!("reaction `{rname}` has zero net change")));
        }
        reactions.push(Reaction { name: rname, inputs, outputs, kappa, beta });
    }

    let n = n.ok_or(Error::Parse { line: text.lines().count().max(1), msg: "missing `N <integer>`".into() })?;
    Ok(NetworkSpec {
        network: ReactionNetwork { name: name.unwrap_or_else(|| "unnamed".into()), species, reactions },
        scaling: ScalingSpec { n, gamma },
        defaults,
    })
}

type ParsedReaction = (String, Vec<(u32, String)>, Vec<(u32, String)>, f64, Rat);

fn parse_reaction_line(toks: &[&str]) -> std::result::Result<ParsedReaction, String> {
    const USAGE: &str = "expected `reaction <name> : <multiset> -> <multiset> kappa <real> beta <rational>`";
    if toks.len() < 3 || toks[2] != ":" {
        return Err(USAGE.into());
    }
    let rname = toks[1];
    check_identifier(rname)?;
    let rest = &toks[3..];
    let arrow = rest.iter().position(|t| *t == "->").ok_or_else(|| USAGE.to_string())?;
    let kpos = rest.iter().position(|t| *t == "kappa").ok_or_else(|| USAGE.to_string())?;
    if kpos < arrow {
        return Err(USAGE.into());
    }
    let lhs = parse_multiset(&rest[..arrow])?;
    let rhs = parse_multiset(&rest[arrow + 1..kpos])?;
    let tail = &rest[kpos..];
    let kappa: f64 = tail
        .get(1)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| "malformed kappa".to_string())?;
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(format!("kappa of `{rname}` must be positive and finite"));
    }
    let beta = match tail.len() {
        2 => Rat::zero(),
        4 if tail[2] == "beta" => {
            parse_rational(tail[3]).ok_or_else(|| format!("malformed rational `{}`", tail[3]))?
        }
        _ => return Err(USAGE.into()),
    };
    Ok((rname.to_string(), lhs, rhs, kappa, beta))
}

fn parse_multiset(toks: &[&str]) -> std::result::Result<Vec<(u32, String)>, String> {
    if toks.is_empty() {
        return Err("empty side of reaction (use `0`)".into());
    }
    if toks == ["0"] {
        return Ok(Vec::new());
    }
    let joined = toks.join(" ");
    let mut out = Vec::new();
    for term in joined.split('+') {
        let parts: Vec<&str> = term.split_whitespace().collect();
        let (coef, sp) = match parts.as_slice() {
            [sp] => (1u32, *sp),
            [c, sp] => (c.parse::<u32>().map_err(|_| format!("malformed coefficient `{c}`"))?, *sp),
            _ => return Err(format!("malformed term `{}`", term.trim())),
        };
        if coef == 0 {
            return Err(format!("zero coefficient for `{sp}`"));
        }
        check_identifier(sp)?;
        out.push((coef, sp.to_string()));
    }
    Ok(out)
}

fn check_identifier(s: &str) -> std::result::Result<(), String> {
    let ok = s.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '\'');
    if ok {
        Ok(())
    } else {
        Err(format!("invalid identifier `{s}`"))
    }
}

fn format_multiset(counts: &[u32], species: &[Species]) -> String {
    let terms: Vec<String> = counts
        .iter()
        .zip(species)
        .filter(|(c, _)| **c > 0)
        .map(|(c, s)| if *c == 1 { s.name.clone() } else { format!("{c} {}", s.name) })
        .collect();
    if terms.is_empty() {
        "0".into()
    } else {
        terms.join(" + ")
    }
}

pub fn serialize_network(spec: &NetworkSpec) -> String {
    let net = &spec.network;
    let mut out = String::new();
    let _ = writeln!(out, "network {}", net.name);
    for s in &net.species {
        let _ = writeln!(out, "species {} alpha {} init {}", s.name, format_rational(&s.alpha), s.initial_count);
    }
    for r in &net.reactions {
        let _ = writeln!(
            out,
            "reaction {} : {} -> {} kappa {} beta {}",
            r.name,
            format_multiset(&r.inputs, &net.species),
            format_multiset(&r.outputs, &net.species),
            r.kappa,
            format_rational(&r.beta)
        );
    }
    let _ = writeln!(out, "N {}", spec.scaling.n);
    let _ = writeln!(out, "gamma {}", format_rational(&spec.scaling.gamma));
    if let Some(t) = spec.defaults.t_end {
        let _ = writeln!(out, "tend {t}");
    }
    if let Some(s) = spec.defaults.seed {
        let _ = writeln!(out, "seed {s}");
    }
    out
}

/// Builds a network programmatically from (name, alpha, init) and
/// (name, inputs, outputs, kappa, beta) tuples using species names.
pub fn build_network(
    name: &str,
    species: &[(&str, Rat, u64)],
    reactions: &[(&str, &[(u32, &str)], &[(u32, &str)], f64, Rat)],
) -> Result<ReactionNetwork> {
    let index: HashMap<&str, usize> = species.iter().enumerate().map(|(i, s)| (s.0, i)).collect();
    let s = species.len();
    let mut rs = Vec::new();
    for (rname, lhs, rhs, kappa, beta) in reactions {
        let mut inputs = vec![0; s];
        let mut outputs = vec![0; s];
        for (c, sp) in lhs.iter() {
            let i = *index.get(sp).ok_or_else(|| Error::InvalidNetwork(format!("unknown species `{sp}`")))?;
            inputs[i] += c;
        }
        for (c, sp) in rhs.iter() {
            let i = *index.get(sp).ok_or_else(|| Error::InvalidNetwork(format!("unknown species `{sp}`")))?;
            outputs[i] += c;
        }
        if inputs == outputs {
            return Err(Error::InvalidNetwork(format!("reaction `{rname}` has zero net change")));
        }
        rs.push(Reaction { name: rname.to_string(), inputs, outputs, kappa: *kappa, beta: *beta });
    }
    Ok(ReactionNetwork {
        name: name.to_string(),
        species: species
            .iter()
            .map(|(n, a, x)| Species { name: n.to_string(), alpha: *a, initial_count: *x })
            .collect(),
        reactions: rs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, rat};

    fn dimer() -> (ReactionNetwork, ScalingSpec) {
        let net = build_network(
            "dimer",
            &[("A", int(1), 5)],
            &[("d", &[(2, "A")], &[], 1.0, int(0))],
        )
        .unwrap();
        (net, ScalingSpec::new(10, int(0)))
    }

    #[test]
    fn dimerization_counts_ordered_pairs() {
        let (net, spec) = dimer();
        let brute = (0..5).flat_map(|i| (0..5).map(move |j| (i, j))).filter(|(i, j)| i != j).count();
        assert_eq!(propensity(&net, 0, &[5], &spec), brute as f64);
        assert_eq!(propensity(&net, 0, &[1], &spec), 0.0);
    }

    #[test]
    fn dimerization_normalized_keeps_finite_size_shift() {
        let (net, spec) = dimer();
        let v = normalized_propensity(&net, 0, &[0.5], &spec, false);
        assert!((v - propensity(&net, 0, &[5], &spec) / 100.0).abs() < 1e-15);
        assert!((v - 0.2).abs() < 1e-15);
        assert!((normalized_propensity(&net, 0, &[0.5], &spec, true) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input_with_line_numbers() {
        let e = parse_network("network x\nspecies A alpha 0 init 1\nreaction r : B -> A kappa 1 beta 0\nN 10\n")
            .unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e:?}");
        let e = parse_network("species A alpha -1 init 1\nN 10").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse_network("species A alpha 1/x init 1\nN 10").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse_network("species A alpha 0 init 1\nspecies A alpha 0 init 2\nN 10").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let e = parse_network("species A alpha 0 init 1\nreaction r : A -> A kappa 1 beta 0\nN 10").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_reaction_set_conserves_every_species() {
        let spec = parse_network("network e\nspecies A alpha 0 init 1\nspecies B alpha 1/2 init 3\nN 4\n").unwrap();
        assert!(spec.network.reactions.is_empty());
        let laws = find_conservation_laws(&spec.network, &[]);
        assert_eq!(laws, vec![rational::from_ints(&[1, 0]), rational::from_ints(&[0, 1])]);
        assert_eq!(spec.network.species[1].alpha, rat(1, 2));
    }

    #[test]
    fn multiset_syntax() {
        let spec = parse_network(
            "species A alpha 0 init 1\nspecies B alpha 0 init 0\nreaction r : 2 A + B -> 0 kappa 0.5\nN 3",
        )
        .unwrap();
        let r = &spec.network.reactions[0];
        assert_eq!(r.inputs, vec![2, 1]);
        assert_eq!(r.outputs, vec![0, 0]);
        assert_eq!(r.beta, int(0));
        let text = serialize_network(&spec);
        assert!(text.contains("reaction r : 2 A + B -> 0 kappa 0.5 beta 0"));
        assert_eq!(parse_network(&text).unwrap(), spec);
    }
}
