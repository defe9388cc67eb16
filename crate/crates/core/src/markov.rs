//! Stationary distributions of finite continuous-time Markov chains.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A transition `from -> to` with a rate.
pub type Transition = (usize, usize, f64);

/// Strongly connected components, each listed in increasing state order.
pub fn communicating_classes(n: usize, transitions: &[Transition]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b, r) in transitions {
        if r > 0.0 && a != b {
            adj[a].push(b);
        }
    }
    // Iterative Tarjan.
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut counter = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut work: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut next)) = work.last_mut() {
            if *next < adj[v].len() {
                let w = adj[v][*next];
                *next += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                work.pop();
                if let Some(&(parent, _)) = work.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
            }
        }
    }
    comps.sort();
    comps
}

/// Classes with no positive-rate transition leaving them.
pub fn closed_classes(n: usize, transitions: &[Transition]) -> Vec<Vec<usize>> {
    let comps = communicating_classes(n, transitions);
    let mut comp_of = vec![0; n];
    for (c, states) in comps.iter().enumerate() {
        for &s in states {
            comp_of[s] = c;
        }
    }
    let mut open = vec![false; comps.len()];
    for &(a, b, r) in transitions {
        if r > 0.0 && comp_of[a] != comp_of[b] {
            open[comp_of[a]] = true;
        }
    }
    comps.into_iter().zip(open).filter(|(_, o)| !o).map(|(c, _)| c).collect()
}

/// Solves pi Q = 0, sum pi = 1. Requires exactly one closed class; returns (pi, residual).
pub fn stationary_distribution(n: usize, transitions: &[Transition]) -> Result<(Vec<f64>, f64)> {
    if n == 0 {
        return Err(Error::InvalidArgument("empty state space".into()));
    }
    let closed = closed_classes(n, transitions);
    if closed.len() != 1 {
        return Err(Error::ReducibleChain { classes: closed });
    }
    let class = &closed[0];
    let mut local = vec![usize::MAX; n];
    for (i, &s) in class.iter().enumerate() {
        local[s] = i;
    }
    let m = class.len();
    let mut q = DMatrix::<f64>::zeros(m, m);
    for &(a, b, r) in transitions {
        if a == b || local[a] == usize::MAX {
            continue;
        }
        let (i, j) = (local[a], local[b]);
        q[(i, j)] += r;
        q[(i, i)] -= r;
    }
    let mut pi_local = if m == 1 {
        vec![1.0]
    } else {
        let mut a = q.transpose();
        let scale = q.amax().max(f64::MIN_POSITIVE);
        a /= scale;
        for j in 0..m {
            a[(m - 1, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(m);
        rhs[m - 1] = 1.0;
        let sol = a.lu().solve(&rhs).ok_or_else(|| Error::Singular("stationary equations".into()))?;
        sol.iter().copied().collect::<Vec<f64>>()
    };
    for p in pi_local.iter_mut() {
        if *p < 0.0 {
            if *p < -1e-10 {
                return Err(Error::Singular(format!("negative stationary mass {p:e}")));
            }
            *p = 0.0;
        }
    }
    let total: f64 = pi_local.iter().sum();
    for p in pi_local.iter_mut() {
        *p /= total;
    }
    let row = DVector::from_column_slice(&pi_local).transpose() * &q;
    let residual = row.amax() / q.amax().max(1.0);
    let mut pi = vec![0.0; n];
    for (i, &s) in class.iter().enumerate() {
        pi[s] = pi_local[i];
    }
    Ok((pi, residual))
}
