//! Randomized structural suites shared by the property tests and the acceptance report.

#![allow(dead_code)]

use std::cell::RefCell;
use std::sync::atomic::{AtomicUsize, Ordering};

use mscale::classify::choose_gamma;
use mscale::decompose::decompose;
use mscale::ensemble::{Engine, Method, RunConfig};
use mscale::network::{find_conservation_laws, parse_network, serialize_network, NetworkSpec, Reaction, ReactionNetwork, ScalingSpec, SimulationDefaults, Species};
use mscale::poisson::{psd_sqrt, AnsatzKind, CorrectionModel};
use mscale::rational::{dot, from_ints, int, null_space, rat, Rat};
use mscale::sim::{trajectory_rng, Observer, Ssa, SsaOptions};
use mscale::{analyze, builtin, Analysis};
use nalgebra::DMatrix;
use num_traits::Zero;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

pub const CASES: u32 = 200;

pub const SUITES: [&str; 6] = [
    "projection identities",
    "conservation exactness",
    "poisson residuals",
    "diffusion matrix psd",
    "seed determinism",
    "parse round-trip",
];

fn alpha() -> impl Strategy<Value = Rat> {
    prop_oneof![Just(int(0)), Just(rat(1, 2)), Just(rat(2, 3)), Just(int(1))]
}

fn beta() -> impl Strategy<Value = Rat> {
    prop_oneof![Just(int(-1)), Just(rat(-1, 2)), Just(int(0)), Just(rat(1, 3)), Just(int(1))]
}

/// Small networks with integer stoichiometries and mixed abundance exponents.
pub fn small_network() -> impl Strategy<Value = NetworkSpec> {
    (2usize..=4).prop_flat_map(|s| {
        let species = proptest::collection::vec((alpha(), 0u64..30), s);
        let reaction = (
            proptest::collection::vec(0u32..=2, s),
            proptest::collection::vec(0u32..=2, s),
            0.05f64..5.0,
            beta(),
        );
        let reactions = proptest::collection::vec(reaction, 1..=5);
        let n = prop_oneof![Just(100u64), Just(1000), Just(10_000)];
        let t_end = proptest::option::of(0.1f64..50.0);
        let seed = proptest::option::of(any::<u64>());
        (species, reactions, n, t_end, seed).prop_map(|(species, reactions, n, t_end, seed)| {
            let species: Vec<Species> = species
                .into_iter()
                .enumerate()
                .map(|(i, (alpha, initial_count))| Species { name: format!("X{i}"), alpha, initial_count })
                .collect();
            let reactions = reactions
                .into_iter()
                .enumerate()
                .map(|(k, (inputs, mut outputs, kappa, beta))| {
                    if inputs == outputs {
                        let i = k % inputs.len();
                        outputs[i] = (inputs[i] + 1) % 3;
                    }
                    Reaction { name: format!("R{k}"), inputs, outputs, kappa, beta }
                })
                .collect();
            NetworkSpec {
                network: ReactionNetwork { name: "random".into(), species, reactions },
                scaling: ScalingSpec::new(n, int(0)),
                defaults: SimulationDefaults { t_end, seed },
            }
        })
    })
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn mat_vec(p: &[Vec<Rat>], v: &[Rat]) -> Vec<Rat> {
    p.iter().map(|row| dot(row, v)).collect()
}

/// Conservation laws supported on species that share one abundance exponent.
pub fn homogeneous_laws(net: &ReactionNetwork) -> Vec<Vec<Rat>> {
    let alphas = net.alphas();
    let mut distinct = alphas.clone();
    distinct.sort();
    distinct.dedup();
    let mut laws = Vec::new();
    for a in distinct {
        let block: Vec<usize> = (0..alphas.len()).filter(|&i| alphas[i] == a).collect();
        let rows: Vec<Vec<Rat>> = net
            .reactions
            .iter()
            .map(|r| {
                let z = r.net_change();
                block.iter().map(|&i| int(z[i])).collect()
            })
            .collect();
        for v in null_space(&rows, block.len()) {
            let mut theta = vec![Rat::zero(); alphas.len()];
            for (j, &i) in block.iter().enumerate() {
                theta[i] = v[j];
            }
            laws.push(theta);
        }
    }
    laws
}

/// Count of random networks that survived decomposition, for coverage reporting.
pub static DECOMPOSED: AtomicUsize = AtomicUsize::new(0);

pub fn projection_identities(spec: &NetworkSpec) -> Result<(), TestCaseError> {
    let net = &spec.network;
    let Ok(gamma) = choose_gamma(net, &spec.scaling) else {
        return Ok(());
    };
    let Ok(d) = decompose(net, &spec.scaling.with_gamma(gamma)) else {
        return Ok(());
    };
    DECOMPOSED.fetch_add(1, Ordering::Relaxed);
    let s = net.species.len();
    let p: Vec<DMatrix<f64>> = (0..3).map(|i| d.projection_f64(i)).collect();
    let id = DMatrix::<f64>::identity(s, s);
    for (i, pi) in p.iter().enumerate() {
        ensure(max_abs(&(pi * pi - pi)) < 1e-12, || format!("projection {i} not idempotent"))?;
        ensure(max_abs(&(pi - pi.transpose())) < 1e-12, || format!("projection {i} not symmetric"))?;
        for (j, pj) in p.iter().enumerate().skip(i + 1) {
            ensure(max_abs(&(pi * pj)) < 1e-12, || format!("projections {i} and {j} overlap"))?;
        }
    }
    ensure(max_abs(&(&p[0] + &p[1] + &p[2] - &id)) < 1e-12, || "projections do not sum to identity".into())?;
    let t = &d.transform;
    ensure(max_abs(&(t * t.transpose() - &id)) < 1e-12, || "change of basis is not orthogonal".into())?;
    for theta in homogeneous_laws(net) {
        for i in 1..3 {
            let image = mat_vec(&d.projections[i], &theta);
            ensure(image.iter().all(Zero::is_zero), || format!("conservation law leaks into fast level {i}"))?;
        }
    }
    if d.num_levels() == 2 {
        ensure(max_abs(&p[2]) == 0.0, || "empty second fast level has a nonzero projection".into())?;
    }
    Ok(())
}

/// Records the first event at which a conserved quantity moved.
struct ConservationCheck {
    laws: Vec<Vec<i128>>,
    start: Vec<i128>,
    broken: Option<usize>,
}

impl ConservationCheck {
    fn totals(&self, x: &[i64]) -> Vec<i128> {
        self.laws.iter().map(|l| l.iter().zip(x).map(|(a, &b)| a * b as i128).sum()).collect()
    }
}

impl Observer for ConservationCheck {
    fn fired(&mut self, _t: f64, k: usize, x: &[i64]) {
        if self.broken.is_none() && self.totals(x) != self.start {
            self.broken = Some(k);
        }
    }
}

/// Integer generators of the rational conservation laws.
fn integer_laws(net: &ReactionNetwork) -> Vec<Vec<i128>> {
    let all: Vec<usize> = (0..net.reactions.len()).collect();
    find_conservation_laws(net, &all)
        .into_iter()
        .map(|l| {
            let den = l.iter().fold(1i128, |a, q| num_integer::lcm(a, *q.denom()));
            l.iter().map(|q| (q * Rat::from_integer(den)).to_integer()).collect()
        })
        .collect()
}

pub fn conservation_exactness(spec: &NetworkSpec, builtins: &[(&str, Analysis)], seed: u64) -> Result<(), TestCaseError> {
    let net = &spec.network;
    let all: Vec<usize> = (0..net.reactions.len()).collect();
    for theta in find_conservation_laws(net, &all) {
        for r in &net.reactions {
            ensure(dot(&theta, &from_ints(&r.net_change())).is_zero(), || format!("law {theta:?} moved by {}", r.name))?;
        }
    }
    for (name, a) in builtins.iter().filter(|(n, _)| *n != "viral") {
        let m = a.model();
        let laws = integer_laws(&m.network);
        ensure(!laws.is_empty(), || format!("{name} has no conservation law"))?;
        let x0 = m.network.initial_state();
        let mut check = ConservationCheck { laws, start: vec![], broken: None };
        check.start = check.totals(&x0);
        let ssa = Ssa::new(&m.network, &m.scaling);
        ssa.simulate(&x0, &[0.0, 2.0], &mut trajectory_rng(seed, 0), &SsaOptions::default(), &mut check)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        ensure(check.broken.is_none(), || format!("{name}: reaction {:?} broke a conservation law", check.broken))?;
    }
    Ok(())
}

pub fn builtin_analysis(name: &str) -> Analysis {
    analyze(&builtin::load(name).expect("builtin parses")).expect("builtin analyzes")
}

/// A slow state of a builtin, scaled from the unit interval into its simulated range.
pub fn slow_state(cm: &CorrectionModel, name: &str, u: f64, w: f64) -> Vec<f64> {
    match name {
        "viral" => vec![0.02 + 2.5 * u],
        _ => {
            let s = 0.01 + 0.6 * u;
            vec![s, (0.55 - s).max(0.0) * w]
        }
    }
    .into_iter()
    .take(cm.model().slow_dim())
    .collect()
}

pub fn poisson_residuals(a: &Analysis, name: &str, u: f64, w: f64, fast: &[f64]) -> Result<(), TestCaseError> {
    let cm = &a.correction;
    let v0 = slow_state(cm, name, u, w);
    let (d1, d2) = cm.model().fast_dims();
    let y: Vec<f64> = fast.iter().take(d1 + d2).copied().collect();
    let kinds: &[AnsatzKind] = if d2 > 0 { &[AnsatzKind::H1, AnsatzKind::H2, AnsatzKind::H3] } else { &[AnsatzKind::H1] };
    let fail = |e: mscale::Error| TestCaseError::fail(e.to_string());
    for &kind in kinds {
        let sol = cm.solve_poisson_linear_ansatz(kind, &v0).map_err(fail)?;
        ensure(sol.residual < 1e-10, || format!("{name} {kind:?} at {v0:?}: basis residual {}", sol.residual))?;
        let r = cm.poisson_residual(kind, &v0, &y).map_err(fail)?;
        ensure(r < 1e-10, || format!("{name} {kind:?} at {v0:?}, fast {y:?}: residual {r}"))?;
    }
    Ok(())
}

pub fn diffusion_matrix_psd(a: &Analysis, name: &str, u: f64, w: f64) -> Result<(), TestCaseError> {
    let cm = &a.correction;
    let v0 = slow_state(cm, name, u, w);
    let fail = |e: mscale::Error| TestCaseError::fail(e.to_string());
    let g = cm.g_bar(&v0).map_err(fail)?;
    ensure(max_abs(&(&g - g.transpose())) < 1e-12, || format!("{name}: asymmetric at {v0:?}"))?;
    let eig = g.clone().symmetric_eigen();
    let scale = 1.0f64.max(max_abs(&g));
    ensure(eig.eigenvalues.iter().all(|&l| l > -1e-10 * scale), || format!("{name}: negative eigenvalue at {v0:?}"))?;
    let s = psd_sqrt(&g).map_err(fail)?;
    ensure(max_abs(&(&s * s.transpose() - &g)) < 1e-8 * scale, || format!("{name}: square root mismatch at {v0:?}"))?;
    Ok(())
}

/// Two independently built generators per builtin and method.
pub struct EnginePairs<'a> {
    pairs: Vec<RefCell<(Engine<'a>, Engine<'a>)>>,
}

pub const DETERMINISM_METHODS: [Method; 3] = [Method::Ssa, Method::Lna, Method::Diffusion];

impl<'a> EnginePairs<'a> {
    pub fn new(builtins: &'a [(&str, Analysis)]) -> Result<Self, String> {
        let mut pairs = Vec::new();
        for (_, a) in builtins {
            for method in DETERMINISM_METHODS {
                let mut cfg = RunConfig::new(method, 4, 0.25 * a.spec.defaults.t_end.unwrap_or(1.0), 0);
                cfg.grid_points = 21;
                let build = || Engine::new(a, &cfg).map_err(|e| e.to_string());
                pairs.push(RefCell::new((build()?, build()?)));
            }
        }
        Ok(EnginePairs { pairs })
    }
}

pub fn seed_determinism(engines: &EnginePairs, case: usize, seed: u64, index: u64) -> Result<(), TestCaseError> {
    let mut pair = engines.pairs[case % engines.pairs.len()].borrow_mut();
    let fail = |e: mscale::Error| TestCaseError::fail(e.to_string());
    pair.0.set_seed(seed);
    pair.1.set_seed(seed);
    let first = pair.0.path(index).map_err(fail)?.to_csv();
    pair.1.path(index + 1).map_err(fail)?;
    let again = pair.1.path(index).map_err(fail)?.to_csv();
    ensure(first == again, || format!("case {case}: path {index} depends on evaluation history"))
}

pub fn parse_round_trip(spec: &NetworkSpec) -> Result<(), TestCaseError> {
    let text = serialize_network(spec);
    let back = parse_network(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
    ensure(&back == spec, || format!("round trip changed the network:\n{text}"))?;
    ensure(serialize_network(&back) == text, || "second serialization differs".into())
}

/// Runs one named suite for `CASES` random cases.
pub fn run_suite(name: &str) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() });
    let builtins: Vec<(&str, Analysis)> = builtin::NAMES.iter().map(|&n| (n, builtin_analysis(n))).collect();
    let outcome = match name {
        "projection identities" => runner.run(&small_network(), |spec| projection_identities(&spec)).map_err(|e| e.to_string()),
        "conservation exactness" => runner.run(&(small_network(), any::<u64>()), |(spec, seed)| conservation_exactness(&spec, &builtins, seed)).map_err(|e| e.to_string()),
        "poisson residuals" => runner.run(
            &(0usize..3, 0.0f64..1.0, 0.0f64..1.0, proptest::collection::vec(-5.0f64..5.0, 2)),
            |(i, u, w, fast)| poisson_residuals(&builtins[i].1, builtins[i].0, u, w, &fast),
        ).map_err(|e| e.to_string()),
        "diffusion matrix psd" => {
            runner.run(&(0usize..3, 0.0f64..1.0, 0.0f64..1.0), |(i, u, w)| diffusion_matrix_psd(&builtins[i].1, builtins[i].0, u, w)).map_err(|e| e.to_string())
        }
        "seed determinism" => {
            let engines = EnginePairs::new(&builtins)?;
            runner
                .run(&(0usize..9, any::<u64>(), 0u64..1000), |(case, seed, index)| seed_determinism(&engines, case, seed, index))
                .map_err(|e| e.to_string())
        }
        "parse round-trip" => runner.run(&small_network(), |spec| parse_round_trip(&spec)).map_err(|e| e.to_string()),
        other => return Err(format!("unknown suite {other}")),
    };
    outcome
}
