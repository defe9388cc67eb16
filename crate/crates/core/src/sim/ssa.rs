//! Exact simulation of the counting process (direct and next-reaction methods).

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use super::{Boundary, Trajectory, TrajectoryMeta, Watch};
use crate::error::{Error, Result};
use crate::network::{ReactionNetwork, ScalingSpec};

pub const DEFAULT_EVENT_CAP: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum SsaMethod {
    #[default]
    Direct,
    NextReaction,
}

/// Hooks into a running simulation. All methods default to no-ops.
pub trait Observer {
    /// The path sat in `x` over `[t0, t1)` with propensities `a`.
    #[inline]
    fn interval(&mut self, _t0: f64, _t1: f64, _x: &[i64], _a: &[f64]) {}
    /// Reaction `k` fired at `t`, leading to `x`.
    #[inline]
    fn fired(&mut self, _t: f64, _k: usize, _x: &[i64]) {}
}

impl Observer for () {}

/// A watch on a linear functional of the counts.
#[derive(Debug, Clone)]
pub struct CountWatch {
    /// Functional in normalized units: sum of w_i x_i.
    pub weights: Vec<(usize, f64)>,
    pub watch: Watch,
    /// When non-empty, the lower boundary means every listed species is at zero.
    pub extinction: Vec<usize>,
}

impl CountWatch {
    fn value(&self, x: &[i64]) -> f64 {
        self.weights.iter().map(|&(i, w)| w * x[i] as f64).sum()
    }

    fn check(&self, x: &[i64]) -> Option<Boundary> {
        let v = self.value(x);
        if self.extinction.is_empty() {
            return self.watch.check(v);
        }
        if self.extinction.iter().all(|&i| x[i] == 0) {
            Some(Boundary::Lower)
        } else if v >= self.watch.upper {
            Some(Boundary::Upper)
        } else {
            None
        }
    }

    fn touches(&self, i: usize) -> bool {
        self.weights.iter().any(|&(j, _)| i == j) || self.extinction.contains(&i)
    }
}

#[derive(Debug, Clone)]
pub struct SsaOptions {
    pub method: SsaMethod,
    pub event_cap: u64,
    pub watch: Option<CountWatch>,
}

impl Default for SsaOptions {
    fn default() -> Self {
        SsaOptions { method: SsaMethod::Direct, event_cap: DEFAULT_EVENT_CAP, watch: None }
    }
}

#[derive(Debug, Clone, Copy)]
enum Law {
    Constant,
    Linear(usize),
    Square(usize),
    Pair(usize, usize),
    General,
}

/// Compiled propensities and dependency graph for a network at a given scaling.
#[derive(Debug, Clone)]
pub struct Ssa {
    names: Vec<String>,
    reaction_names: Vec<String>,
    rate: Vec<f64>,
    law: Vec<Law>,
    inputs: Vec<Vec<(usize, u32)>>,
    delta: Vec<Vec<(usize, i64)>>,
    /// Per reaction: its changes, then the reactions whose propensity it affects,
    /// flattened and indexed through `spans`.
    flat_delta: Vec<(usize, i64)>,
    flat_deps: Vec<usize>,
    spans: Vec<(usize, usize, usize, usize)>,
}

impl Ssa {
    /// Rates kappa N^(beta + gamma) so that time runs on the gamma scale.
    pub fn new(net: &ReactionNetwork, scaling: &ScalingSpec) -> Self {
        let s = net.num_species();
        let rate = net.reactions.iter().map(|r| r.kappa * scaling.pow(&(r.beta + scaling.gamma))).collect();
        let inputs: Vec<Vec<(usize, u32)>> = net
            .reactions
            .iter()
            .map(|r| (0..s).filter(|&i| r.inputs[i] > 0).map(|i| (i, r.inputs[i])).collect())
            .collect();
        let delta: Vec<Vec<(usize, i64)>> = net
            .reactions
            .iter()
            .map(|r| {
                let z = r.net_change();
                (0..s).filter(|&i| z[i] != 0).map(|i| (i, z[i])).collect()
            })
            .collect();
        let deps: Vec<Vec<usize>> = delta
            .iter()
            .map(|d| {
                (0..inputs.len())
                    .filter(|&j| inputs[j].iter().any(|&(i, _)| d.iter().any(|&(c, _)| c == i)))
                    .collect()
            })
            .collect();
        let law = inputs
            .iter()
            .map(|inp| match inp.as_slice() {
                [] => Law::Constant,
                [(i, 1)] => Law::Linear(*i),
                [(i, 2)] => Law::Square(*i),
                [(i, 1), (j, 1)] => Law::Pair(*i, *j),
                _ => Law::General,
            })
            .collect();
        let mut flat_delta = Vec::new();
        let mut flat_deps = Vec::new();
        let mut spans = Vec::new();
        for (d, e) in delta.iter().zip(&deps) {
            let (a, b) = (flat_delta.len(), flat_deps.len());
            flat_delta.extend_from_slice(d);
            flat_deps.extend_from_slice(e);
            spans.push((a, flat_delta.len(), b, flat_deps.len()));
        }
        Ssa {
            names: net.species.iter().map(|s| s.name.clone()).collect(),
            reaction_names: net.reactions.iter().map(|r| r.name.clone()).collect(),
            rate,
            law,
            inputs,
            delta,
            flat_delta,
            flat_deps,
            spans,
        }
    }

    pub fn num_reactions(&self) -> usize {
        self.rate.len()
    }

    /// Mass-action propensity with falling factorials.
    #[inline(always)]
    pub fn propensity(&self, k: usize, x: &[i64]) -> f64 {
        let c = self.rate[k];
        match self.law[k] {
            Law::Constant => c,
            Law::Linear(i) => c * x[i].max(0) as f64,
            Law::Square(i) => {
                let v = x[i];
                if v < 2 { 0.0 } else { c * (v * (v - 1)) as f64 }
            }
            Law::Pair(i, j) => c * x[i].max(0) as f64 * x[j].max(0) as f64,
            Law::General => {
                let mut v = c;
                for &(i, n) in &self.inputs[k] {
                    let xi = x[i];
                    for j in 0..n as i64 {
                        if xi <= j {
                            return 0.0;
                        }
                        v *= (xi - j) as f64;
                    }
                }
                v
            }
        }
    }

    fn overflow(&self, a: &[f64]) -> Error {
        let k = a.iter().position(|v| !v.is_finite()).unwrap_or(0);
        Error::PropensityOverflow(self.reaction_names[k].clone())
    }

    /// Runs one path from `x0`, recording the state at each time of `grid`.
    pub fn simulate<R: Rng, O: Observer>(
        &self,
        x0: &[i64],
        grid: &[f64],
        rng: &mut R,
        opts: &SsaOptions,
        obs: &mut O,
    ) -> Result<Trajectory> {
        if x0.iter().any(|&v| v < 0) {
            return Err(Error::InvalidArgument("initial counts must be non-negative".into()));
        }
        let t_end = *grid.last().ok_or_else(|| Error::InvalidArgument("empty output grid".into()))?;
        if !(t_end > 0.0) {
            return Err(Error::InvalidArgument("end time must be positive".into()));
        }
        let r = self.num_reactions();
        let mut x = x0.to_vec();
        let mut a = vec![0.0; r];
        for k in 0..r {
            a[k] = self.propensity(k, &x);
        }
        let mut states = Vec::with_capacity(grid.len());
        let mut gi = 0;
        let mut t = 0.0;
        let mut events = 0u64;
        let mut exit = None;
        let watch_touch: Vec<bool> = match &opts.watch {
            Some(w) => self.delta.iter().map(|d| d.iter().any(|&(i, _)| w.touches(i))).collect(),
            None => vec![false; r],
        };
        if let Some(w) = &opts.watch {
            if let Some(b) = w.check(&x) {
                exit = Some((b, 0.0));
            }
        }
        let halted = |exit: &Option<(Boundary, f64)>| exit.is_some() && opts.watch.as_ref().is_some_and(|w| w.watch.halt);

        // Next-reaction bookkeeping: internal times and next firing thresholds.
        let nrm = opts.method == SsaMethod::NextReaction;
        let mut internal = vec![0.0; r];
        let mut total = 0.0;
        let mut next_fire: Vec<f64> = if nrm { (0..r).map(|_| Exp1.sample(rng)).collect() } else { Vec::new() };

        while !halted(&exit) {
            let (t_next, k) = if nrm {
                let mut best = (f64::INFINITY, usize::MAX);
                if a.iter().any(|v| !v.is_finite()) {
                    return Err(self.overflow(&a));
                }
                for j in 0..r {
                    if a[j] > 0.0 {
                        let dt = (next_fire[j] - internal[j]) / a[j];
                        if dt < best.0 {
                            best = (dt, j);
                        }
                    }
                }
                (t + best.0, best.1)
            } else {
                total = a.iter().sum();
                if !total.is_finite() {
                    return Err(self.overflow(&a));
                }
                if total <= 0.0 {
                    (f64::INFINITY, usize::MAX)
                } else {
                    let e: f64 = Exp1.sample(rng);
                    (t + e / total, usize::MAX)
                }
            };
            while gi < grid.len() && grid[gi] < t_next {
                states.push(x.iter().map(|&v| v as f64).collect());
                gi += 1;
            }
            if t_next > t_end {
                obs.interval(t, t_end, &x, &a);
                break;
            }
            obs.interval(t, t_next, &x, &a);
            let k = if nrm {
                let dt = t_next - t;
                for j in 0..r {
                    internal[j] += a[j] * dt;
                }
                let e: f64 = Exp1.sample(rng);
                next_fire[k] += e;
                k
            } else {
                let target = rng.gen::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = r - 1;
                for j in 0..r {
                    acc += a[j];
                    if target < acc {
                        pick = j;
                        break;
                    }
                }
                while a[pick] <= 0.0 {
                    pick -= 1;
                }
                pick
            };
            t = t_next;
            let (d0, d1, e0, e1) = self.spans[k];
            for &(i, d) in &self.flat_delta[d0..d1] {
                x[i] += d;
            }
            events += 1;
            if events > opts.event_cap {
                return Err(Error::EventCap(opts.event_cap));
            }
            for &j in &self.flat_deps[e0..e1] {
                a[j] = self.propensity(j, &x);
            }
            obs.fired(t, k, &x);
            if let Some(w) = opts.watch.as_ref().filter(|_| exit.is_none() && watch_touch[k]) {
                if let Some(b) = w.check(&x) {
                    exit = Some((b, t));
                }
            }
        }
        while states.len() < grid.len() {
            states.push(x.iter().map(|&v| v as f64).collect());
        }
        Ok(Trajectory {
            times: grid.to_vec(),
            states,
            names: self.names.clone(),
            meta: TrajectoryMeta { method: "ssa".into(), seed: 0, events, exit, clamps: 0 },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network;
    use crate::sim::{trajectory_rng, uniform_grid};

    fn net(text: &str) -> (ReactionNetwork, ScalingSpec) {
        let s = parse_network(text).unwrap();
        (s.network, s.scaling)
    }

    const DEATH: &str = "network death\nspecies A alpha 0 init 1000\nreaction R1 : A -> 0 kappa 1 beta 0\nN 2\ngamma 0\n";

    #[test]
    fn absorbing_state_is_constant() {
        let (n, s) = net("network z\nspecies A alpha 0 init 0\nreaction R1 : A -> 0 kappa 1 beta 0\nN 2\ngamma 0\n");
        let ssa = Ssa::new(&n, &s);
        let tr = ssa.simulate(&[0], &uniform_grid(5.0, 6), &mut trajectory_rng(1, 0), &SsaOptions::default(), &mut ()).unwrap();
        assert!(tr.states.iter().all(|x| x[0] == 0.0));
        assert_eq!(tr.meta.events, 0);
    }

    fn death_mean(method: SsaMethod) -> (f64, f64) {
        let (n, s) = net(DEATH);
        let ssa = Ssa::new(&n, &s);
        let grid = [0.0, 1.0];
        let opts = SsaOptions { method, ..Default::default() };
        let runs = 1000;
        let xs: Vec<f64> = (0..runs)
            .map(|i| ssa.simulate(&[1000], &grid, &mut trajectory_rng(11, i), &opts, &mut ()).unwrap().states[1][0])
            .collect();
        let mean = xs.iter().sum::<f64>() / runs as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        (mean, (var / runs as f64).sqrt())
    }

    #[test]
    fn linear_death_mean() {
        let exact = 1000.0 * (-1.0f64).exp();
        for m in [SsaMethod::Direct, SsaMethod::NextReaction] {
            let (mean, se) = death_mean(m);
            assert!((mean - exact).abs() < 3.0 * se, "{m:?}: {mean} vs {exact} (se {se})");
        }
    }

    #[test]
    fn birth_death_stationary_moments() {
        // Immigration at 20, death at rate 1: Poisson(20) at stationarity.
        let (n, s) = net(
            "network bd\nspecies A alpha 0 init 0\nreaction R1 : 0 -> A kappa 20 beta 0\nreaction R2 : A -> 0 kappa 1 beta 0\nN 2\ngamma 0\n",
        );
        let ssa = Ssa::new(&n, &s);
        let runs = 10_000;
        let xs: Vec<f64> = (0..runs)
            .map(|i| ssa.simulate(&[20], &[0.0, 8.0], &mut trajectory_rng(5, i), &SsaOptions::default(), &mut ()).unwrap().states[1][0])
            .collect();
        let mean = xs.iter().sum::<f64>() / runs as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        let se_mean = (var / runs as f64).sqrt();
        // Variance of the sample variance for a Poisson(20) is about (2 m^2 + m) / n.
        let se_var = ((2.0 * 400.0 + 20.0) / runs as f64).sqrt();
        assert!((mean - 20.0).abs() < 3.0 * se_mean, "{mean}");
        assert!((var - 20.0).abs() < 3.0 * se_var, "{var}");
    }

    #[test]
    fn same_seed_same_path() {
        let (n, s) = net(DEATH);
        let ssa = Ssa::new(&n, &s);
        let g = uniform_grid(2.0, 50);
        let a = ssa.simulate(&[1000], &g, &mut trajectory_rng(3, 9), &SsaOptions::default(), &mut ()).unwrap();
        let b = ssa.simulate(&[1000], &g, &mut trajectory_rng(3, 9), &SsaOptions::default(), &mut ()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn event_cap_is_enforced() {
        let (n, s) = net(DEATH);
        let ssa = Ssa::new(&n, &s);
        let opts = SsaOptions { event_cap: 10, ..Default::default() };
        let e = ssa.simulate(&[1000], &[0.0, 10.0], &mut trajectory_rng(1, 1), &opts, &mut ()).unwrap_err();
        assert_eq!(e, Error::EventCap(10));
    }

    #[test]
    fn watch_halts_at_lower_boundary() {
        let (n, s) = net(DEATH);
        let ssa = Ssa::new(&n, &s);
        let opts = SsaOptions {
            watch: Some(CountWatch {
                weights: vec![(0, 1.0)],
                watch: Watch { component: 0, lower: 990.0, upper: 2000.0, halt: true },
                extinction: vec![],
            }),
            ..Default::default()
        };
        let tr = ssa.simulate(&[1000], &uniform_grid(5.0, 11), &mut trajectory_rng(1, 2), &opts, &mut ()).unwrap();
        assert!(tr.meta.absorbed());
        assert_eq!(tr.meta.events, 10);
        assert_eq!(tr.states.last().unwrap()[0], 990.0);
    }
}
