//! The fastest subnetwork's limit process with slower coordinates frozen:
//! a Markov chain, an ODE or a piecewise deterministic process.

use std::collections::BTreeMap;

use num_traits::Zero;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{Trajectory, TrajectoryMeta};
use crate::error::{Error, Result};
use crate::model::MultiscaleModel;
use crate::rational;

pub const MAX_FAST_JUMPS: u64 = 100_000_000;

#[derive(Debug, Clone)]
pub struct FastRun {
    /// Normalized species state at the grid times.
    pub trajectory: Trajectory,
    /// Time average of each normalized species over the second half of the run.
    pub time_means: Vec<f64>,
    /// Fraction of the second half spent in each configuration of the jumping species.
    pub occupation: BTreeMap<Vec<i64>, f64>,
    /// Species indices making up the occupation keys.
    pub jump_species: Vec<usize>,
}

struct Term {
    reaction: usize,
    jump: Vec<(usize, f64)>,
    drift: Vec<(usize, f64)>,
}

/// Simulates the fastest level at frozen slow coordinates `v0`, starting from `z_start`.
pub fn fast_subnetwork_simulate<R: Rng>(
    model: &MultiscaleModel,
    v0: &[f64],
    z_start: &[f64],
    grid: &[f64],
    dt: f64,
    rng: &mut R,
) -> Result<FastRun> {
    let levels = model.num_levels();
    if levels < 2 {
        return Err(Error::InvalidArgument("network has no fast level".into()));
    }
    let level = &model.decomposition.levels[levels - 1].level;
    let alphas = model.network.alphas();
    let s = model.species_count();
    let terms: Vec<Term> = level
        .limiting_vectors
        .iter()
        .map(|(&k, lv)| {
            let mut t = Term { reaction: k, jump: vec![], drift: vec![] };
            for (i, e) in lv.embedded.iter().enumerate() {
                if e.is_zero() {
                    continue;
                }
                let x = rational::to_f64(e);
                if alphas[i].is_zero() {
                    t.jump.push((i, x));
                } else {
                    t.drift.push((i, x));
                }
            }
            t
        })
        .collect();
    let mut jump_species: Vec<usize> = terms.iter().flat_map(|t| t.jump.iter().map(|&(i, _)| i)).collect();
    jump_species.sort_unstable();
    jump_species.dedup();
    let has_flow = terms.iter().any(|t| !t.drift.is_empty());

    // Freeze the slow coordinates and keep the starting fast configuration.
    let (_, y) = model.coords(z_start);
    let mut z = model.z_from(v0, &y);
    for &i in &jump_species {
        z[i] = z[i].round();
    }
    let t_end = *grid.last().ok_or_else(|| Error::InvalidArgument("empty output grid".into()))?;
    let half = 0.5 * t_end;

    let rates = |z: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.extend(terms.iter().map(|t| if t.jump.is_empty() { 0.0 } else { model.lambda(t.reaction, z) }));
    };
    let flow = |z: &[f64]| -> Vec<f64> {
        let mut f = vec![0.0; s];
        for t in &terms {
            if t.drift.is_empty() {
                continue;
            }
            let l = model.lambda(t.reaction, z);
            for &(i, x) in &t.drift {
                f[i] += l * x;
            }
        }
        f
    };

    let mut states = Vec::with_capacity(grid.len());
    let mut sums = vec![0.0; s];
    let mut occupation: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    let mut a = Vec::with_capacity(terms.len());
    let mut t = 0.0;
    let mut jumps = 0u64;
    let mut hazard = 0.0;
    let mut target: f64 = Exp1.sample(rng);
    let mut gi = 0;

    // Accumulates averages over [t0, t1) given states at both ends.
    let mut accumulate = |t0: f64, t1: f64, za: &[f64], zb: &[f64]| {
        let lo = t0.max(half);
        if t1 <= lo {
            return;
        }
        let w = t1 - lo;
        let frac = if t1 > t0 { (lo - t0) / (t1 - t0) } else { 0.0 };
        for i in 0..s {
            let start = za[i] + frac * (zb[i] - za[i]);
            sums[i] += 0.5 * w * (start + zb[i]);
        }
        let key: Vec<i64> = jump_species.iter().map(|&i| za[i] as i64).collect();
        *occupation.entry(key).or_insert(0.0) += w;
    };

    while gi < grid.len() {
        if grid[gi] <= t {
            states.push(z.clone());
            gi += 1;
            continue;
        }
        let stop = grid[gi];
        rates(&z, &mut a);
        let total: f64 = a.iter().sum();
        if !has_flow {
            // Rates are constant between jumps: exact waiting times.
            let wait = if total > 0.0 { (target - hazard) / total } else { f64::INFINITY };
            if t + wait > stop {
                hazard += total * (stop - t);
                accumulate(t, stop, &z, &z);
                t = stop;
                continue;
            }
            accumulate(t, t + wait, &z, &z);
            t += wait;
        } else {
            let h = dt.min(stop - t);
            let z1 = rk4(&flow, &z, h);
            rates(&z1, &mut a);
            let total1: f64 = a.iter().sum();
            let gained = 0.5 * h * (total + total1);
            if hazard + gained < target {
                hazard += gained;
                accumulate(t, t + h, &z, &z1);
                z = z1;
                t = if stop - t <= h { stop } else { t + h };
                continue;
            }
            // Locate the jump inside the step by linear interpolation of the hazard.
            let theta = ((target - hazard) / gained).clamp(0.0, 1.0);
            let zj = rk4(&flow, &z, theta * h);
            accumulate(t, t + theta * h, &z, &zj);
            z = zj;
            t += theta * h;
            rates(&z, &mut a);
        }
        let total: f64 = a.iter().sum();
        if total <= 0.0 {
            hazard = 0.0;
            target = Exp1.sample(rng);
            continue;
        }
        let pick = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = terms.len() - 1;
        for (j, &r) in a.iter().enumerate() {
            acc += r;
            if pick < acc {
                chosen = j;
                break;
            }
        }
        while a[chosen] <= 0.0 {
            chosen -= 1;
        }
        for &(i, x) in &terms[chosen].jump {
            z[i] += x;
        }
        jumps += 1;
        if jumps > MAX_FAST_JUMPS {
            return Err(Error::EventCap(MAX_FAST_JUMPS));
        }
        hazard = 0.0;
        target = Exp1.sample(rng);
    }

    let span = t_end - half;
    let time_means = sums.iter().map(|x| if span > 0.0 { x / span } else { 0.0 }).collect();
    for v in occupation.values_mut() {
        *v /= span;
    }
    Ok(FastRun {
        trajectory: Trajectory {
            times: grid.to_vec(),
            states,
            names: model.network.species.iter().map(|s| s.name.clone()).collect(),
            meta: TrajectoryMeta { method: "fast".into(), events: jumps, ..Default::default() },
        },
        time_means,
        occupation,
        jump_species,
    })
}

fn rk4<F: Fn(&[f64]) -> Vec<f64>>(f: &F, y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let k1 = f(y);
    let y2: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * h * k1[i]).collect();
    let k2 = f(&y2);
    let y3: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * h * k2[i]).collect();
    let k3 = f(&y3);
    let y4: Vec<f64> = (0..n).map(|i| y[i] + h * k3[i]).collect();
    let k4 = f(&y4);
    (0..n).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}
