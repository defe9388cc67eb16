//! Observers that accumulate path functionals during exact simulation.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::ssa::Observer;
use crate::error::Result;
use crate::poisson::CorrectionModel;

/// Compensated increments of W = V0 - H_N along an exact path.
///
/// `value()` is a martingale in time whose quadratic variation, magnified by r_N^2,
/// approaches the integrated averaged diffusion matrix.
pub struct MartingaleProbe<'a> {
    cm: &'a CorrectionModel,
    d0: usize,
    df: usize,
    /// Sparse rows of the slow and fast coordinate maps acting on counts.
    slow_rows: Vec<Vec<(usize, f64)>>,
    fast_rows: Vec<Vec<(usize, f64)>>,
    /// Per reaction: change of slow and fast coordinates.
    dv0: Vec<Vec<f64>>,
    dy: Vec<Vec<f64>>,
    slow_reactions: Vec<usize>,
    /// Corrector coefficient U(v0), row-major, fast scale factors folded in.
    cache: HashMap<Vec<u64>, Vec<f64>>,
    v0: Vec<f64>,
    y: Vec<f64>,
    uy: Vec<f64>,
    here: Vec<f64>,
    /// Corrector coefficients at v0 shifted by each slow reaction.
    shifted: Vec<Vec<f64>>,
    /// W increments for the current state, reaction-major.
    increments: Vec<f64>,
    jumps: Vec<f64>,
    compensator: Vec<f64>,
    /// Predictable quadratic variation, row-major.
    quadratic: Vec<f64>,
    fresh: bool,
    scratch: Vec<f64>,
    error: Option<crate::Error>,
}

fn sparse_rows(m: &DMatrix<f64>, inv: &[f64]) -> Vec<Vec<(usize, f64)>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).filter(|&j| m[(i, j)] != 0.0).map(|j| (j, m[(i, j)] * inv[j])).collect())
        .collect()
}

fn apply(rows: &[Vec<(usize, f64)>], x: impl Fn(usize) -> f64, out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(rows) {
        *o = row.iter().map(|&(j, w)| w * x(j)).sum();
    }
}

impl<'a> MartingaleProbe<'a> {
    pub fn new(cm: &'a CorrectionModel) -> Self {
        let m = cm.model();
        let d0 = m.slow_dim();
        let (d1, d2) = m.fast_dims();
        let df = d1 + d2;
        let inv: Vec<f64> = m.network.species.iter().map(|sp| 1.0 / m.scaling.pow(&sp.alpha)).collect();
        let slow_rows = sparse_rows(&m.slow_basis(), &inv);
        let mut fast_rows = Vec::new();
        for level in 1..=2 {
            if (level == 1 && d1 > 0) || (level == 2 && d2 > 0) {
                fast_rows.extend(sparse_rows(&m.fast_basis(level), &inv));
            }
        }
        let mut dv0 = Vec::new();
        let mut dy = Vec::new();
        let mut slow_reactions = Vec::new();
        for (k, r) in m.network.reactions.iter().enumerate() {
            let z: Vec<f64> = r.net_change().into_iter().map(|d| d as f64).collect();
            let mut v = vec![0.0; d0];
            apply(&slow_rows, |j| z[j], &mut v);
            let mut w = vec![0.0; df];
            apply(&fast_rows, |j| z[j], &mut w);
            if v.iter().any(|x| *x != 0.0) {
                slow_reactions.push(k);
            }
            dv0.push(v);
            dy.push(w);
        }
        let r = dv0.len();
        MartingaleProbe {
            cm,
            d0,
            df,
            slow_rows,
            fast_rows,
            dv0,
            dy,
            slow_reactions,
            cache: HashMap::new(),
            v0: vec![f64::NAN; d0],
            y: vec![0.0; df],
            uy: vec![0.0; d0],
            here: vec![0.0; d0 * df],
            shifted: vec![Vec::new(); r],
            increments: vec![0.0; d0 * r],
            jumps: vec![0.0; d0],
            compensator: vec![0.0; d0],
            quadratic: vec![0.0; d0 * d0],
            fresh: true,
            scratch: Vec::new(),
            error: None,
        }
    }

    /// U(v0) with columns divided by N^{m} of their level, row-major.
    fn corrector(&mut self, v0: &[f64]) -> Result<Vec<f64>> {
        let key: Vec<u64> = v0.iter().map(|v| v.to_bits()).collect();
        if let Some(u) = self.cache.get(&key) {
            return Ok(u.clone());
        }
        let m = self.cm.model();
        let (d1, d2) = m.fast_dims();
        let mut u = vec![0.0; self.d0 * self.df];
        if m.num_levels() > 1 {
            let c = self.cm.coefficients(v0)?;
            let (s1, s2) = (m.n_pow(&m.m(1)), if d2 > 0 { m.n_pow(&m.m(2)) } else { 1.0 });
            for i in 0..self.d0 {
                for j in 0..d1 {
                    u[i * self.df + j] = c.u1[(i, j)] / s1;
                }
                for j in 0..d2 {
                    u[i * self.df + d1 + j] = (c.u2[(i, j)] + c.u3[(i, j)]) / s2;
                }
            }
        }
        self.cache.insert(key, u.clone());
        Ok(u)
    }

    fn refresh(&mut self, v0: Vec<f64>) -> Result<()> {
        let (d0, df) = (self.d0, self.df);
        self.here = self.corrector(&v0)?;
        for i in 0..self.slow_reactions.len() {
            let k = self.slow_reactions[i];
            let shifted: Vec<f64> = v0.iter().zip(&self.dv0[k]).map(|(a, b)| a + b).collect();
            self.shifted[k] = self.corrector(&shifted)?;
        }
        for k in 0..self.dv0.len() {
            if self.shifted[k].is_empty() {
                for i in 0..d0 {
                    let dot: f64 = (0..df).map(|j| self.here[i * df + j] * self.dy[k][j]).sum();
                    self.increments[k * d0 + i] = -dot;
                }
            }
        }
        self.v0 = v0;
        Ok(())
    }

    fn try_interval(&mut self, t0: f64, t1: f64, x: &[i64], a: &[f64]) -> Result<()> {
        let (d0, df) = (self.d0, self.df);
        let mut v0 = std::mem::take(&mut self.scratch);
        v0.resize(d0, 0.0);
        apply(&self.slow_rows, |j| x[j] as f64, &mut v0);
        if self.fresh || v0.iter().zip(&self.v0).any(|(a, b)| a.to_bits() != b.to_bits()) {
            self.refresh(v0.clone())?;
            self.fresh = false;
        }
        self.scratch = v0;
        apply(&self.fast_rows, |j| x[j] as f64, &mut self.y);
        for i in 0..d0 {
            self.uy[i] = (0..df).map(|j| self.here[i * df + j] * self.y[j]).sum();
        }
        for &k in &self.slow_reactions {
            let u = &self.shifted[k];
            for i in 0..d0 {
                let moved: f64 = (0..df).map(|j| u[i * df + j] * (self.y[j] + self.dy[k][j])).sum();
                self.increments[k * d0 + i] = self.dv0[k][i] - (moved - self.uy[i]);
            }
        }
        let dt = t1 - t0;
        for (k, &ak) in a.iter().enumerate() {
            if ak > 0.0 {
                let w = ak * dt;
                let inc = &self.increments[k * d0..(k + 1) * d0];
                for i in 0..d0 {
                    self.compensator[i] += w * inc[i];
                    for j in 0..d0 {
                        self.quadratic[i * d0 + j] += w * inc[i] * inc[j];
                    }
                }
            }
        }
        Ok(())
    }

    /// r_N times the compensated process, or the first evaluation error.
    pub fn value(&self) -> Result<DVector<f64>> {
        match &self.error {
            Some(e) => Err(e.clone()),
            None => Ok(DVector::from_iterator(
                self.d0,
                self.jumps.iter().zip(&self.compensator).map(|(j, c)| (j - c) * self.cm.r_n()),
            )),
        }
    }

    /// r_N^2 times the predictable quadratic variation; its mean equals the covariance of `value()`.
    pub fn quadratic_variation(&self) -> Result<DMatrix<f64>> {
        match &self.error {
            Some(e) => Err(e.clone()),
            None => Ok(DMatrix::from_row_slice(self.d0, self.d0, &self.quadratic) * self.cm.r_n().powi(2)),
        }
    }
}

impl Observer for MartingaleProbe<'_> {
    fn interval(&mut self, t0: f64, t1: f64, x: &[i64], a: &[f64]) {
        if self.error.is_none() {
            if let Err(e) = self.try_interval(t0, t1, x, a) {
                self.error = Some(e);
            }
        }
    }

    /// Relies on `interval` having just been called with the pre-jump state.
    fn fired(&mut self, _t: f64, k: usize, _x: &[i64]) {
        if self.error.is_none() {
            let d0 = self.d0;
            for i in 0..d0 {
                self.jumps[i] += self.increments[k * d0 + i];
            }
        }
    }
}
