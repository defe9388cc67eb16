//! Classical RK4 with step-halving error control.

use super::{Trajectory, TrajectoryMeta};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    /// Nominal step; each step is halved until the two-half-step estimate agrees.
    pub dt: f64,
    pub rel_tol: f64,
    pub blow_up: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { dt: 1e-3, rel_tol: 1e-8, blow_up: 1e12 }
    }
}

const MAX_HALVINGS: u32 = 20;

pub(crate) fn rk4_step<F>(f: &mut F, y: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = y.len();
    let k1 = f(y)?;
    let y2: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * h * k1[i]).collect();
    let k2 = f(&y2)?;
    let y3: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * h * k2[i]).collect();
    let k3 = f(&y3)?;
    let y4: Vec<f64> = (0..n).map(|i| y[i] + h * k3[i]).collect();
    let k4 = f(&y4)?;
    Ok((0..n).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

fn controlled_step<F>(f: &mut F, y: &[f64], h: f64, tol: f64, depth: u32) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let full = rk4_step(f, y, h)?;
    let mid = rk4_step(f, y, 0.5 * h)?;
    let half = rk4_step(f, &mid, 0.5 * h)?;
    let scale = half.iter().fold(1e-6f64, |m, v| m.max(v.abs()));
    let err = full.iter().zip(&half).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if err <= tol * scale || depth >= MAX_HALVINGS {
        return Ok(half);
    }
    let mid = controlled_step(f, y, 0.5 * h, tol, depth + 1)?;
    controlled_step(f, &mid, 0.5 * h, tol, depth + 1)
}

/// Integrates v' = f(v) and records the solution on `grid`.
pub fn ode_solve<F>(mut f: F, v0: &[f64], grid: &[f64], names: Vec<String>, opts: &OdeOptions) -> Result<Trajectory>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(opts.dt > 0.0) {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let mut y = v0.to_vec();
    let mut states = vec![y.clone()];
    for w in grid.windows(2) {
        let span = w[1] - w[0];
        let steps = (span / opts.dt).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        for i in 0..steps {
            y = controlled_step(&mut f, &y, h, opts.rel_tol, 0)?;
            if y.iter().any(|v| !v.is_finite() || v.abs() > opts.blow_up) {
                return Err(Error::BlowUp(w[0] + h * (i + 1) as f64));
            }
        }
        states.push(y.clone());
    }
    Ok(Trajectory {
        times: grid.to_vec(),
        states,
        names,
        meta: TrajectoryMeta { method: "ode".into(), ..Default::default() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::uniform_grid;

    fn logistic(z: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![7.5 * z[0] - 3.75 * z[0] * z[0]])
    }

    #[test]
    fn logistic_matches_closed_form() {
        let z0 = 0.01;
        let grid = uniform_grid(2.0, 201);
        let tr = ode_solve(logistic, &[z0], &grid, vec!["G".into()], &OdeOptions::default()).unwrap();
        let mut worst = 0.0f64;
        for (t, s) in grid.iter().zip(&tr.states) {
            let e = (7.5 * t).exp();
            let exact = 2.0 * z0 * e / (2.0 - z0 + z0 * e);
            worst = worst.max((s[0] - exact).abs());
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn fixed_point_stays_put() {
        let tr = ode_solve(logistic, &[2.0], &uniform_grid(3.0, 31), vec![], &OdeOptions::default()).unwrap();
        assert!(tr.states.iter().all(|s| s[0] == 2.0));
    }

    #[test]
    fn zero_field_is_constant() {
        let tr = ode_solve(|_| Ok(vec![0.0, 0.0]), &[1.0, -2.0], &uniform_grid(1.0, 5), vec![], &OdeOptions::default()).unwrap();
        assert!(tr.states.iter().all(|s| s == &vec![1.0, -2.0]));
    }

    #[test]
    fn blow_up_is_detected() {
        let e = ode_solve(|z| Ok(vec![z[0] * z[0]]), &[1.0], &[0.0, 2.0], vec![], &OdeOptions::default()).unwrap_err();
        assert!(matches!(e, Error::BlowUp(_)));
    }
}
