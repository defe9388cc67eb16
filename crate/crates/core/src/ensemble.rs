//! Trajectory ensembles over every simulation tier, absorption estimates and
//! cross-method comparison tables.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::Analysis;
use crate::error::{Error, Result};
use crate::poisson::CorrectionModel;
use crate::sim::sde::TabulatedCoefficients;
use crate::sim::ssa::{CountWatch, DEFAULT_EVENT_CAP};
use crate::sim::{
    diffusion_simulate, fast_subnetwork_simulate, fmt_num, lna_simulate, ode_solve, trajectory_rng, uniform_grid,
    Boundary, DiffusionCoefficients, LnaPath, OdeOptions, SdeOptions, Ssa, SsaMethod, SsaOptions, Trajectory, Watch,
};
use crate::stats::{wilson_interval, RunningStats, Z95};

/// Trajectories per work unit; fixed so results do not depend on the thread count.
const CHUNK: usize = 8;
const TABLE_NODES: usize = 2001;
/// Share of failed trajectories above which an ensemble is abandoned.
const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    Ssa,
    Ode,
    Lna,
    Diffusion,
    Fast,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ssa, Method::Ode, Method::Lna, Method::Diffusion, Method::Fast];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ssa => "ssa",
            Method::Ode => "ode",
            Method::Lna => "lna",
            Method::Diffusion => "diffusion",
            Method::Fast => "fast",
        }
    }

    pub fn is_deterministic(self) -> bool {
        self == Method::Ode
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}` (expected ssa|ode|lna|diffusion|fast)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Scale {
    /// Molecule counts, N^alpha times the normalized value.
    #[default]
    Counts,
    Normalized,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub method: Method,
    pub runs: usize,
    pub t_end: f64,
    pub grid_points: usize,
    pub seed: u64,
    /// Integration step; each method picks a default when absent.
    pub dt: Option<f64>,
    /// Halve the step until the ensemble mean stops moving (stochastic integrators only).
    pub auto_dt: bool,
    pub scale: Scale,
    pub ssa_method: SsaMethod,
    pub event_cap: u64,
    /// Initial molecule counts; the network's own when absent.
    pub initial: Option<Vec<i64>>,
    /// Drop paths on which the first slow coordinate dies out.
    pub filter_survivors: bool,
}

impl RunConfig {
    pub fn new(method: Method, runs: usize, t_end: f64, seed: u64) -> Self {
        RunConfig {
            method,
            runs,
            t_end,
            grid_points: 200,
            seed,
            dt: None,
            auto_dt: false,
            scale: Scale::Counts,
            ssa_method: SsaMethod::Direct,
            event_cap: DEFAULT_EVENT_CAP,
            initial: None,
            filter_survivors: false,
        }
    }

    /// Defaults stored with the network: end time and seed.
    pub fn for_network(analysis: &Analysis, method: Method, runs: usize) -> Self {
        let d = &analysis.spec.defaults;
        RunConfig::new(method, runs, d.t_end.unwrap_or(1.0), d.seed.unwrap_or(0))
    }

    fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidArgument("runs must be at least 1".into()));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument("end time must be positive".into()));
        }
        if self.dt.is_some_and(|h| !(h > 0.0)) {
            return Err(Error::InvalidArgument("step must be positive".into()));
        }
        Ok(())
    }

    fn step(&self) -> f64 {
        self.dt.unwrap_or(self.t_end / 2000.0)
    }
}

/// Share of paths on which the watched coordinate died out, with a Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbsorbedFraction {
    pub absorbed: usize,
    pub total: usize,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub method: String,
    /// Trajectories entering the statistics.
    pub runs: usize,
    pub failed: usize,
    /// Trajectories removed by the survivor filter.
    pub excluded: usize,
    pub dt: Option<f64>,
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// Indexed by component, then time.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    /// Standard deviation from the second-moment equation (Gaussian tier only).
    pub analytic_std: Option<Vec<Vec<f64>>>,
    pub absorbed: Option<AbsorbedFraction>,
}

impl EnsembleSummary {
    pub fn component(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Index of the grid point closest to `t`.
    pub fn time_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for n in &self.names {
            out.push_str(&format!(",mean_{n},std_{n},se_{n}"));
            if self.analytic_std.is_some() {
                out.push_str(&format!(",analytic_std_{n}"));
            }
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&fmt_num(*t));
            for c in 0..self.names.len() {
                for col in [&self.mean, &self.std, &self.se] {
                    out.push(',');
                    out.push_str(&fmt_num(col[c][i]));
                }
                if let Some(a) = &self.analytic_std {
                    out.push(',');
                    out.push_str(&fmt_num(a[c][i]));
                }
            }
            out.push('\n');
        }
        out
    }
}

enum Coeffs<'a> {
    Plain(&'a CorrectionModel),
    Table(TabulatedCoefficients<'a, CorrectionModel>),
}

impl Coeffs<'_> {
    fn get(&self) -> &dyn DiffusionCoefficients {
        match self {
            Coeffs::Plain(c) => *c,
            Coeffs::Table(t) => t,
        }
    }
}

enum Kind<'a> {
    Ssa { ssa: Ssa, x0: Vec<i64>, opts: SsaOptions },
    Ode { path: Trajectory },
    Lna { path: LnaPath },
    Diffusion { coeffs: Coeffs<'a>, v0: Vec<f64>, opts: SdeOptions },
    Fast { v0: Vec<f64>, z0: Vec<f64>, dt: f64 },
}

/// A configured trajectory generator; paths come out in the configured units.
pub struct Engine<'a> {
    analysis: &'a Analysis,
    cfg: RunConfig,
    grid: Vec<f64>,
    names: Vec<String>,
    /// Output multiplier per component.
    units: Vec<f64>,
    kind: Kind<'a>,
}

impl<'a> Engine<'a> {
    pub fn new(analysis: &'a Analysis, cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let cm = &analysis.correction;
        let m = cm.model();
        let grid = uniform_grid(cfg.t_end, cfg.grid_points);
        let x0 = match &cfg.initial {
            Some(x) if x.len() != m.species_count() => {
                return Err(Error::InvalidArgument(format!(
                    "initial state has {} entries, network has {} species",
                    x.len(),
                    m.species_count()
                )))
            }
            Some(x) => x.clone(),
            None => m.network.initial_state(),
        };
        let z0 = m.network.normalize(&x0, &m.scaling);
        let v0 = m.slow_coords(&z0);
        let counts = cfg.scale == Scale::Counts;
        let (names, units) = if cfg.method == Method::Fast {
            let names = m.network.species.iter().map(|s| s.name.clone()).collect();
            let units = m.network.species.iter().map(|s| if counts { m.scaling.pow(&s.alpha) } else { 1.0 }).collect();
            (names, units)
        } else {
            let units = if counts { m.slow_count_scale() } else { vec![1.0; v0.len()] };
            (m.component_names(), units)
        };
        let kind = match cfg.method {
            Method::Ssa => {
                let watch = if cfg.filter_survivors { Some(count_watch(analysis, 0, f64::INFINITY, false)) } else { None };
                let opts = SsaOptions { method: cfg.ssa_method, event_cap: cfg.event_cap, watch };
                Kind::Ssa { ssa: Ssa::new(&m.network, &m.scaling), x0, opts }
            }
            Method::Ode => {
                let opts = OdeOptions { dt: cfg.dt.unwrap_or(OdeOptions::default().dt), ..Default::default() };
                let path = ode_solve(|v| Ok(cm.averaged.f_bar(v)?.iter().copied().collect()), &v0, &grid, vec![], &opts)?;
                Kind::Ode { path }
            }
            Method::Lna => Kind::Lna { path: LnaPath::build(cm, &v0, &grid, cfg.step())? },
            Method::Diffusion => {
                let watch = cfg.filter_survivors.then_some(Watch { component: 0, lower: 0.0, upper: f64::INFINITY, halt: false });
                let coeffs = tabulate(cm, &v0, cfg.t_end, None)?;
                let opts = SdeOptions { dt: cfg.step(), noise_scale: 1.0 / cm.r_n(), watch };
                Kind::Diffusion { coeffs, v0, opts }
            }
            Method::Fast => Kind::Fast { v0, z0, dt: cfg.step() },
        };
        Ok(Engine { analysis, cfg: cfg.clone(), grid, names, units, kind })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Replaces the master seed; the configured generator is reused.
    pub fn set_seed(&mut self, seed: u64) {
        self.cfg.seed = seed;
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Path number `index` under the configured master seed.
    pub fn path(&self, index: u64) -> Result<Trajectory> {
        let cm = &self.analysis.correction;
        let m = cm.model();
        let mut rng = trajectory_rng(self.cfg.seed, index);
        let mut tr = match &self.kind {
            Kind::Ssa { ssa, x0, opts } => {
                let mut tr = ssa.simulate(x0, &self.grid, &mut rng, opts, &mut ())?;
                for s in tr.states.iter_mut() {
                    let z: Vec<f64> = s.iter().zip(&m.network.species).map(|(x, sp)| x / m.scaling.pow(&sp.alpha)).collect();
                    *s = m.slow_coords(&z);
                }
                tr
            }
            Kind::Ode { path } => path.clone(),
            Kind::Lna { path } => {
                let d = path.dim();
                let mut tr = lna_simulate(path, &vec![0.0; d], vec![], &mut rng)?;
                let r = cm.r_n();
                for (s, v) in tr.states.iter_mut().zip(&path.v0) {
                    for (u, v) in s.iter_mut().zip(v) {
                        *u = v + *u / r;
                    }
                }
                tr
            }
            Kind::Diffusion { coeffs, v0, opts } => diffusion_simulate(coeffs.get(), v0, &self.grid, vec![], opts, &mut rng)?,
            Kind::Fast { v0, z0, dt } => fast_subnetwork_simulate(m, v0, z0, &self.grid, *dt, &mut rng)?.trajectory,
        };
        for s in tr.states.iter_mut() {
            for (x, u) in s.iter_mut().zip(&self.units) {
                *x *= u;
            }
        }
        tr.names = self.names.clone();
        tr.meta.seed = self.cfg.seed;
        Ok(tr)
    }

    /// Standard deviation bands from the second-moment equation, in output units.
    fn analytic_std(&self) -> Option<Vec<Vec<f64>>> {
        let Kind::Lna { path } = &self.kind else { return None };
        let r = self.analysis.correction.r_n();
        Some(
            (0..path.dim())
                .map(|c| path.covariance.iter().map(|s| s[(c, c)].max(0.0).sqrt() / r * self.units[c]).collect())
                .collect(),
        )
    }

    pub fn summarize(&self) -> Result<EnsembleSummary> {
        let runs = if self.cfg.method.is_deterministic() { 1 } else { self.cfg.runs };
        let dims = self.names.len();
        let points = self.grid.len();
        let chunks: Vec<usize> = (0..runs.div_ceil(CHUNK)).collect();
        let partials: Vec<ChunkStats> = chunks
            .par_iter()
            .map(|&c| {
                let mut acc = ChunkStats::new(dims, points);
                for i in c * CHUNK..((c + 1) * CHUNK).min(runs) {
                    match self.path(i as u64) {
                        Ok(tr) if self.cfg.filter_survivors && tr.meta.absorbed() => acc.excluded += 1,
                        Ok(tr) => {
                            for (t, s) in tr.states.iter().enumerate() {
                                for (d, x) in s.iter().enumerate() {
                                    acc.stats[d][t].push(*x);
                                }
                            }
                        }
                        Err(e) => {
                            acc.failed += 1;
                            acc.first_error.get_or_insert(e.to_string());
                        }
                    }
                }
                acc
            })
            .collect();
        let mut total = ChunkStats::new(dims, points);
        for p in &partials {
            total.merge(p);
        }
        check_failures(total.failed, runs, total.first_error)?;
        let kept = runs - total.failed - total.excluded;
        // Deterministic tiers produce one path; replicate its statistics for any run count.
        let reported = if self.cfg.method.is_deterministic() { self.cfg.runs } else { kept };
        let col = |f: &dyn Fn(&RunningStats) -> f64| -> Vec<Vec<f64>> {
            total.stats.iter().map(|row| row.iter().map(f).collect()).collect()
        };
        let absorbed = self.cfg.filter_survivors.then(|| {
            let n = total.excluded + kept;
            let (ci_low, ci_high) = wilson_interval(total.excluded as u64, n as u64, Z95);
            AbsorbedFraction { absorbed: total.excluded, total: n, fraction: total.excluded as f64 / n as f64, ci_low, ci_high }
        });
        Ok(EnsembleSummary {
            method: self.cfg.method.name().into(),
            runs: reported,
            failed: total.failed,
            excluded: total.excluded,
            dt: match self.cfg.method {
                Method::Ssa => None,
                Method::Ode => Some(self.cfg.dt.unwrap_or(OdeOptions::default().dt)),
                _ => Some(self.cfg.step()),
            },
            times: self.grid.clone(),
            names: self.names.clone(),
            mean: col(&|s| s.mean),
            std: col(&|s| s.std()),
            se: col(&|s| s.std_error()),
            analytic_std: self.analytic_std(),
            absorbed,
        })
    }
}

struct ChunkStats {
    stats: Vec<Vec<RunningStats>>,
    failed: usize,
    excluded: usize,
    first_error: Option<String>,
}

impl ChunkStats {
    fn new(dims: usize, points: usize) -> Self {
        ChunkStats { stats: vec![vec![RunningStats::default(); points]; dims], failed: 0, excluded: 0, first_error: None }
    }

    fn merge(&mut self, other: &ChunkStats) {
        for (a, b) in self.stats.iter_mut().zip(&other.stats) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
        self.failed += other.failed;
        self.excluded += other.excluded;
        if self.first_error.is_none() {
            self.first_error = other.first_error.clone();
        }
    }
}

fn check_failures(failed: usize, runs: usize, first: Option<String>) -> Result<()> {
    if failed as f64 > MAX_FAILURE_RATE * runs as f64 || failed == runs {
        return Err(Error::EnsembleFailure { failed, runs, first: first.unwrap_or_default() });
    }
    Ok(())
}

/// Ensemble statistics for `cfg`. With `auto_dt`, the step is halved until the
/// mean changes by less than twice its standard error.
pub fn run_ensemble(analysis: &Analysis, cfg: &RunConfig) -> Result<EnsembleSummary> {
    let mut summary = Engine::new(analysis, cfg)?.summarize()?;
    if !cfg.auto_dt || !matches!(cfg.method, Method::Lna | Method::Diffusion) {
        return Ok(summary);
    }
    let mut cfg = cfg.clone();
    for _ in 0..6 {
        cfg.dt = Some(cfg.step() / 2.0);
        let finer = Engine::new(analysis, &cfg)?.summarize()?;
        let settled = (0..finer.names.len()).all(|c| {
            (0..finer.times.len()).all(|t| {
                let tol = 2.0 * (finer.se[c][t].powi(2) + summary.se[c][t].powi(2)).sqrt();
                (finer.mean[c][t] - summary.mean[c][t]).abs() <= tol.max(1e-12 * finer.mean[c][t].abs())
            })
        });
        summary = finer;
        if settled {
            break;
        }
    }
    Ok(summary)
}

/// A watch on slow coordinate `component` in counts. Its lower boundary is extinction of the
/// species that can regenerate the coordinate when such a closed set exists.
fn count_watch(analysis: &Analysis, component: usize, upper: f64, halt: bool) -> CountWatch {
    let m = analysis.model();
    let basis = m.slow_basis();
    let weights: Vec<(usize, f64)> = (0..m.species_count())
        .filter(|&i| basis[(component, i)] != 0.0)
        .map(|i| (i, basis[(component, i)] / m.scaling.pow(&m.network.species[i].alpha)))
        .collect();
    let seeds: Vec<usize> = weights.iter().map(|&(i, _)| i).collect();
    CountWatch {
        weights,
        watch: Watch { component, lower: 0.0, upper, halt },
        extinction: regenerating_set(&m.network, &seeds).unwrap_or_default(),
    }
}

/// Smallest species set containing `seeds` and every input of a reaction that produces a
/// member. Once all members are zero none can be produced again. `None` if an input-free
/// reaction produces a member.
pub fn regenerating_set(net: &crate::network::ReactionNetwork, seeds: &[usize]) -> Option<Vec<usize>> {
    let mut set: Vec<bool> = vec![false; net.num_species()];
    for &i in seeds {
        set[i] = true;
    }
    loop {
        let mut grew = false;
        for r in &net.reactions {
            let produces = r.net_change().iter().enumerate().any(|(i, &d)| d > 0 && set[i]);
            if !produces {
                continue;
            }
            if r.inputs.iter().all(|&n| n == 0) {
                return None;
            }
            for (i, &n) in r.inputs.iter().enumerate() {
                if n > 0 && !set[i] {
                    set[i] = true;
                    grew = true;
                }
            }
        }
        if !grew {
            break;
        }
    }
    Some((0..set.len()).filter(|&i| set[i]).collect())
}

/// Coefficients tabulated along the one slow coordinate they depend on, when there is one.
fn tabulate<'a>(cm: &'a CorrectionModel, v0: &[f64], t_end: f64, upper: Option<f64>) -> Result<Coeffs<'a>> {
    let d = cm.dim();
    let width = 2 * d + d * d;
    if width > 64 {
        return Ok(Coeffs::Plain(cm));
    }
    let eval = |v: &[f64]| -> Result<Vec<f64>> {
        let mut row = vec![0.0; width];
        let (dr, rest) = row.split_at_mut(d);
        let (co, g) = rest.split_at_mut(d);
        cm.eval_into(v, dr, co, g)?;
        Ok(row)
    };
    let base = eval(v0)?;
    let mut keys = Vec::new();
    for j in 0..d {
        let mut v = v0.to_vec();
        v[j] += 0.1 * v[j].abs() + 1e-3;
        let moved = eval(&v)?;
        let scale = base.iter().fold(1e-300f64, |a, x| a.max(x.abs()));
        if moved.iter().zip(&base).any(|(a, b)| (a - b).abs() > 1e-12 * scale) {
            keys.push(j);
        }
    }
    let key = match keys.as_slice() {
        [] => 0,
        [k] => *k,
        _ => return Ok(Coeffs::Plain(cm)),
    };
    let grid = uniform_grid(t_end, 201);
    let path = ode_solve(|v| cm.drift(v), v0, &grid, vec![], &OdeOptions::default())?;
    let mut hi = path.states.iter().fold(v0[key], |a, s| a.max(s[key]));
    if let Some(u) = upper.filter(|u| u.is_finite()) {
        hi = hi.max(u);
    }
    let hi = 1.25 * hi.max(1e-6);
    Ok(Coeffs::Table(TabulatedCoefficients::build(cm, key, v0, 0.0, hi, TABLE_NODES)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct AbsorptionConfig {
    pub method: Method,
    /// Slow coordinate watched.
    pub component: usize,
    /// Starting amount of the watched coordinate, in counts.
    pub start: f64,
    /// Escape threshold in normalized units.
    pub upper: f64,
    pub runs: usize,
    pub seed: u64,
    pub dt: Option<f64>,
    /// Horizon after which undecided runs are censored; 100 relaxation times when absent.
    pub time_cap: Option<f64>,
    pub ssa_method: SsaMethod,
    pub event_cap: u64,
}

impl AbsorptionConfig {
    pub fn new(method: Method, start: f64, runs: usize, seed: u64) -> Self {
        AbsorptionConfig {
            method,
            component: 0,
            start,
            upper: 1.0,
            runs,
            seed,
            dt: None,
            time_cap: None,
            ssa_method: SsaMethod::Direct,
            event_cap: DEFAULT_EVENT_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsorptionRecord {
    pub method: String,
    pub start: f64,
    pub runs: usize,
    pub absorbed: usize,
    pub escaped: usize,
    /// Runs that reached neither boundary before the time cap.
    pub censored: usize,
    pub failed: usize,
    /// Absorbed share of the decided runs.
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub time_cap: f64,
    pub dt: Option<f64>,
}

impl AbsorptionRecord {
    pub fn contains(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        kv("method", self.method.clone());
        kv("start", fmt_num(self.start));
        kv("runs", self.runs.to_string());
        kv("absorbed", self.absorbed.to_string());
        kv("escaped", self.escaped.to_string());
        kv("censored", self.censored.to_string());
        kv("failed", self.failed.to_string());
        kv("estimate", fmt_num(self.estimate));
        kv("ci_low", fmt_num(self.ci_low));
        kv("ci_high", fmt_num(self.ci_high));
        kv("time_cap", fmt_num(self.time_cap));
        if let Some(h) = self.dt {
            kv("dt", fmt_num(h));
        }
        out
    }
}

/// Probability that the watched coordinate dies out before reaching `upper`.
pub fn absorption_probability(analysis: &Analysis, cfg: &AbsorptionConfig) -> Result<AbsorptionRecord> {
    let cm = &analysis.correction;
    let m = cm.model();
    if cfg.runs == 0 {
        return Err(Error::InvalidArgument("runs must be at least 1".into()));
    }
    if cfg.component >= m.slow_dim() {
        return Err(Error::InvalidArgument(format!("no slow component {}", cfg.component)));
    }
    if !(cfg.start >= 0.0) || !(cfg.upper > 0.0) {
        return Err(Error::InvalidArgument("start must be non-negative and the threshold positive".into()));
    }
    let c = cfg.component;
    let mut v0 = m.initial_slow();
    v0[c] = cfg.start / m.slow_count_scale()[c];
    let time_cap = match cfg.time_cap {
        Some(t) => t,
        None => {
            let rate = cm.averaged.jacobian(&v0)?.complex_eigenvalues().iter().fold(0.0f64, |a, l| a.max(l.re.hypot(l.im)));
            if !(rate > 0.0) {
                return Err(Error::InvalidArgument("drift has no relaxation rate at the start; give a time cap".into()));
            }
            100.0 / rate
        }
    };
    let grid = [0.0, time_cap];
    let outcomes: Vec<Result<Option<Boundary>>> = match cfg.method {
        Method::Ssa => {
            let watch = count_watch(analysis, c, cfg.upper, true);
            let basis = m.slow_basis();
            let mut x0 = m.network.initial_state();
            let held: Vec<usize> = (0..m.species_count()).filter(|&i| basis[(c, i)] != 0.0).collect();
            let [i] = held.as_slice() else {
                return Err(Error::InvalidArgument("watched coordinate must be a single species for exact runs".into()));
            };
            let x = cfg.start / basis[(c, *i)] * m.scaling.pow(&m.network.species[*i].alpha) / m.slow_count_scale()[c];
            x0[*i] = x.round() as i64;
            let ssa = Ssa::new(&m.network, &m.scaling);
            let opts = SsaOptions { method: cfg.ssa_method, event_cap: cfg.event_cap, watch: Some(watch) };
            (0..cfg.runs)
                .into_par_iter()
                .with_min_len(CHUNK)
                .map(|k| {
                    let tr = ssa.simulate(&x0, &grid, &mut trajectory_rng(cfg.seed, k as u64), &opts, &mut ())?;
                    Ok(tr.meta.exit.map(|e| e.0))
                })
                .collect()
        }
        Method::Diffusion => {
            let coeffs = tabulate(cm, &v0, time_cap.min(100.0), Some(cfg.upper))?;
            let opts = SdeOptions {
                dt: cfg.dt.unwrap_or(1e-5),
                noise_scale: 1.0 / cm.r_n(),
                watch: Some(Watch { component: c, lower: 0.0, upper: cfg.upper, halt: true }),
            };
            (0..cfg.runs)
                .into_par_iter()
                .with_min_len(CHUNK)
                .map(|k| {
                    let tr = diffusion_simulate(coeffs.get(), &v0, &grid, vec![], &opts, &mut trajectory_rng(cfg.seed, k as u64))?;
                    Ok(tr.meta.exit.map(|e| e.0))
                })
                .collect()
        }
        other => return Err(Error::InvalidArgument(format!("absorption needs ssa or diffusion, not {other}"))),
    };
    let (mut absorbed, mut escaped, mut censored, mut failed) = (0, 0, 0, 0);
    let mut first = None;
    for o in outcomes {
        match o {
            Ok(Some(Boundary::Lower)) => absorbed += 1,
            Ok(Some(Boundary::Upper)) => escaped += 1,
            Ok(None) => censored += 1,
            Err(e) => {
                failed += 1;
                first.get_or_insert(e.to_string());
            }
        }
    }
    check_failures(failed, cfg.runs, first)?;
    let decided = (absorbed + escaped) as u64;
    let (ci_low, ci_high) = wilson_interval(absorbed as u64, decided, Z95);
    Ok(AbsorptionRecord {
        method: cfg.method.name().into(),
        start: cfg.start,
        runs: cfg.runs,
        absorbed,
        escaped,
        censored,
        failed,
        estimate: if decided == 0 { f64::NAN } else { absorbed as f64 / decided as f64 },
        ci_low,
        ci_high,
        time_cap,
        dt: (cfg.method == Method::Diffusion).then(|| cfg.dt.unwrap_or(1e-5)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deviation {
    pub method: String,
    pub component: String,
    /// Largest mean gap over the grid relative to the reference's largest mean.
    pub mean: f64,
    pub std: f64,
    /// Largest mean gap in units of the combined standard error (zero when both are exact).
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub reference: String,
    pub times: Vec<f64>,
    pub names: Vec<String>,
    pub methods: Vec<String>,
    pub summaries: Vec<EnsembleSummary>,
    pub deviations: Vec<Deviation>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for s in &self.summaries {
            for n in &self.names {
                out.push_str(&format!(",mean_{n}_{m},std_{n}_{m}", m = s.method));
            }
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&fmt_num(*t));
            for s in &self.summaries {
                for c in 0..self.names.len() {
                    out.push_str(&format!(",{},{}", fmt_num(s.mean[c][i]), fmt_num(s.std[c][i])));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Side-by-side table; deviations are measured against the exact tier when present,
/// otherwise against the first summary.
pub fn compare_report(summaries: &[EnsembleSummary]) -> Result<Comparison> {
    let first = summaries.first().ok_or_else(|| Error::InvalidArgument("nothing to compare".into()))?;
    for s in &summaries[1..] {
        if s.times != first.times {
            return Err(Error::GridMismatch(format!("{} and {} use different time grids", first.method, s.method)));
        }
        if s.names != first.names {
            return Err(Error::GridMismatch(format!("{} and {} report different components", first.method, s.method)));
        }
    }
    let reference = summaries.iter().find(|s| s.method == Method::Ssa.name()).unwrap_or(first);
    let mut deviations = Vec::new();
    for s in summaries {
        if std::ptr::eq(s, reference) {
            continue;
        }
        for (c, name) in first.names.iter().enumerate() {
            let peak = |col: &Vec<Vec<f64>>| col[c].iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let gap = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
                a[c].iter().zip(&b[c]).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
            };
            let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else if num > 0.0 { f64::INFINITY } else { 0.0 };
            let mut z = 0.0f64;
            for t in 0..first.times.len() {
                let d = (s.mean[c][t] - reference.mean[c][t]).abs();
                let se = (s.se[c][t].powi(2) + reference.se[c][t].powi(2)).sqrt();
                z = z.max(ratio(d, se));
            }
            deviations.push(Deviation {
                method: s.method.clone(),
                component: name.clone(),
                mean: ratio(gap(&s.mean, &reference.mean), peak(&reference.mean)),
                std: ratio(gap(&s.std, &reference.std), peak(&reference.std)),
                z,
            });
        }
    }
    Ok(Comparison {
        reference: reference.method.clone(),
        times: first.times.clone(),
        names: first.names.clone(),
        methods: summaries.iter().map(|s| s.method.clone()).collect(),
        summaries: summaries.to_vec(),
        deviations,
    })
}
