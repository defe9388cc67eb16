//! Gaussian fluctuation process, Langevin diffusion and the second-moment equation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::ode::rk4_step;
use super::{Trajectory, TrajectoryMeta, Watch};
use crate::error::{Error, Result};
use crate::poisson::CorrectionModel;

/// Slow-scale coefficients: drift, its Jacobian, diffusion matrix and correction drift.
pub trait DiffusionCoefficients: Sync {
    fn dim(&self) -> usize;
    fn drift(&self, v: &[f64]) -> Result<Vec<f64>>;
    fn jacobian(&self, v: &[f64]) -> Result<DMatrix<f64>>;
    /// Symmetric diffusion matrix, row-major.
    fn diffusion(&self, v: &[f64]) -> Result<Vec<f64>>;
    fn correction(&self, v: &[f64]) -> Result<Vec<f64>>;

    /// Drift, correction and diffusion matrix in one call.
    fn eval_into(&self, v: &[f64], drift: &mut [f64], corr: &mut [f64], g: &mut [f64]) -> Result<()> {
        drift.copy_from_slice(&self.drift(v)?);
        corr.copy_from_slice(&self.correction(v)?);
        g.copy_from_slice(&self.diffusion(v)?);
        Ok(())
    }
}

impl DiffusionCoefficients for CorrectionModel {
    fn dim(&self) -> usize {
        self.model().slow_dim()
    }

    fn drift(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.averaged.f_bar(v)?.iter().copied().collect())
    }

    fn jacobian(&self, v: &[f64]) -> Result<DMatrix<f64>> {
        self.averaged.jacobian(v)
    }

    fn diffusion(&self, v: &[f64]) -> Result<Vec<f64>> {
        let g = self.g_bar(v)?;
        let d = g.nrows();
        Ok((0..d * d).map(|i| g[(i / d, i % d)]).collect())
    }

    fn correction(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut c = self.g0_bar(v)?;
        c += self.g1_bar(v)?;
        Ok(c.iter().copied().collect())
    }
}

/// Lower-triangular factor L with L L^T = G for a positive semidefinite G (row-major).
pub fn psd_factor(g: &[f64], d: usize, out: &mut [f64]) -> Result<()> {
    out.iter_mut().for_each(|x| *x = 0.0);
    let trace: f64 = (0..d).map(|i| g[i * d + i].abs()).sum();
    let tol = 1e-12 * trace.max(f64::MIN_POSITIVE);
    for j in 0..d {
        let mut diag = g[j * d + j];
        for k in 0..j {
            diag -= out[j * d + k] * out[j * d + k];
        }
        if diag < -1e-9 * trace.max(1e-300) {
            return Err(Error::IndefiniteDiffusion(diag));
        }
        if diag <= tol {
            continue;
        }
        let l = diag.sqrt();
        out[j * d + j] = l;
        for i in j + 1..d {
            let mut s = g[i * d + j];
            for k in 0..j {
                s -= out[i * d + k] * out[j * d + k];
            }
            out[i * d + j] = s / l;
        }
    }
    Ok(())
}

/// Coefficients tabulated along the single slow coordinate the rates depend on.
pub struct TabulatedCoefficients<'a, C: DiffusionCoefficients + ?Sized> {
    inner: &'a C,
    key: usize,
    lo: f64,
    step: f64,
    /// Per node: drift, correction, diffusion matrix.
    rows: Vec<Vec<f64>>,
}

impl<'a, C: DiffusionCoefficients + ?Sized> TabulatedCoefficients<'a, C> {
    /// Samples `inner` at `nodes` points of [lo, hi] along coordinate `key`; other coordinates are
    /// set to `base`, which must not affect the coefficients.
    pub fn build(inner: &'a C, key: usize, base: &[f64], lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        let d = inner.dim();
        let nodes = nodes.max(4);
        let step = (hi - lo) / (nodes - 1) as f64;
        let mut rows = Vec::with_capacity(nodes);
        let mut v = base.to_vec();
        for i in 0..nodes {
            v[key] = lo + step * i as f64;
            let mut row = vec![0.0; 2 * d + d * d];
            let (dr, rest) = row.split_at_mut(d);
            let (co, g) = rest.split_at_mut(d);
            inner.eval_into(&v, dr, co, g)?;
            rows.push(row);
        }
        Ok(TabulatedCoefficients { inner, key, lo, step, rows })
    }

    fn lookup(&self, x: f64, out: &mut [f64]) -> bool {
        let n = self.rows.len();
        let s = (x - self.lo) / self.step;
        if !(s >= 0.0 && s <= (n - 1) as f64) {
            return false;
        }
        let i = (s.floor() as usize).clamp(1, n - 3);
        let u = s - i as f64;
        // Cubic Lagrange weights on nodes i-1, i, i+1, i+2.
        let w = [
            -u * (u - 1.0) * (u - 2.0) / 6.0,
            (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0,
            -(u + 1.0) * u * (u - 2.0) / 2.0,
            (u + 1.0) * u * (u - 1.0) / 6.0,
        ];
        let (a, b, c, e) = (&self.rows[i - 1], &self.rows[i], &self.rows[i + 1], &self.rows[i + 2]);
        for j in 0..out.len() {
            out[j] = w[0] * a[j] + w[1] * b[j] + w[2] * c[j] + w[3] * e[j];
        }
        true
    }
}

impl<C: DiffusionCoefficients + ?Sized> DiffusionCoefficients for TabulatedCoefficients<'_, C> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn drift(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.inner.drift(v)
    }

    fn jacobian(&self, v: &[f64]) -> Result<DMatrix<f64>> {
        self.inner.jacobian(v)
    }

    fn diffusion(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.inner.diffusion(v)
    }

    fn correction(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.inner.correction(v)
    }

    fn eval_into(&self, v: &[f64], drift: &mut [f64], corr: &mut [f64], g: &mut [f64]) -> Result<()> {
        let d = self.dim();
        let mut buf = [0.0; 64];
        let width = 2 * d + d * d;
        if width <= buf.len() && self.lookup(v[self.key], &mut buf[..width]) {
            drift.copy_from_slice(&buf[..d]);
            corr.copy_from_slice(&buf[d..2 * d]);
            g.copy_from_slice(&buf[2 * d..width]);
            Ok(())
        } else {
            self.inner.eval_into(v, drift, corr, g)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdeOptions {
    pub dt: f64,
    /// Multiplies the noise factor; the correction drift is scaled by the same factor.
    pub noise_scale: f64,
    pub watch: Option<Watch>,
}

/// Euler-Maruyama for dD = (F + s C) dt + s L dW with L L^T = G and s the noise scale.
pub fn diffusion_simulate<C, R>(
    coeffs: &C,
    d0: &[f64],
    grid: &[f64],
    names: Vec<String>,
    opts: &SdeOptions,
    rng: &mut R,
) -> Result<Trajectory>
where
    C: DiffusionCoefficients + ?Sized,
    R: Rng,
{
    if !(opts.noise_scale > 0.0) {
        return Err(Error::InvalidArgument("noise scale must be positive".into()));
    }
    let d = coeffs.dim();
    let s = opts.noise_scale;
    let mut v = d0.to_vec();
    let mut drift = vec![0.0; d];
    let mut corr = vec![0.0; d];
    let mut g = vec![0.0; d * d];
    let mut l = vec![0.0; d * d];
    let mut dw = vec![0.0; d];
    let mut states = vec![v.clone()];
    let mut meta = TrajectoryMeta { method: "diffusion".into(), ..Default::default() };
    let check = |v: &[f64], t: f64, meta: &mut TrajectoryMeta| {
        if let (Some(w), None) = (opts.watch, meta.exit) {
            if let Some(b) = w.check(v[w.component]) {
                meta.exit = Some((b, t));
            }
        }
    };
    check(&v, 0.0, &mut meta);
    let halt = opts.watch.is_some_and(|w| w.halt);
    let mut t = 0.0;
    for win in grid.windows(2) {
        let span = win[1] - win[0];
        let steps = (span / opts.dt).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        let sq = h.sqrt();
        for _ in 0..steps {
            if halt && meta.exit.is_some() {
                break;
            }
            coeffs.eval_into(&v, &mut drift, &mut corr, &mut g)?;
            psd_factor(&g, d, &mut l)?;
            for x in dw.iter_mut() {
                *x = rng.sample::<f64, _>(StandardNormal) * sq;
            }
            for i in 0..d {
                let mut noise = 0.0;
                for j in 0..=i {
                    noise += l[i * d + j] * dw[j];
                }
                v[i] += (drift[i] + s * corr[i]) * h + s * noise;
            }
            t += h;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(t));
            }
            check(&v, t, &mut meta);
            let stopped = halt && meta.exit.is_some();
            for x in v.iter_mut() {
                if *x < 0.0 {
                    *x = 0.0;
                    meta.clamps += u64::from(!stopped);
                }
            }
        }
        t = win[1];
        states.push(v.clone());
    }
    Ok(Trajectory { times: grid.to_vec(), states, names, meta })
}

/// Deterministic path V0 with coefficients of the fluctuation equation at each fine step.
#[derive(Debug, Clone)]
pub struct LnaPath {
    pub grid: Vec<f64>,
    pub substeps: usize,
    /// V0 at the grid times.
    pub v0: Vec<Vec<f64>>,
    /// Second moment of U at the grid times.
    pub covariance: Vec<DMatrix<f64>>,
    steps: Vec<LnaStep>,
}

#[derive(Debug, Clone)]
struct LnaStep {
    h: f64,
    jac: DMatrix<f64>,
    factor: DMatrix<f64>,
    corr: DVector<f64>,
}

impl LnaPath {
    /// Co-integrates V0 (RK4) and the second-moment equation on a shared fine grid.
    pub fn build<C: DiffusionCoefficients + ?Sized>(coeffs: &C, v0: &[f64], grid: &[f64], dt: f64) -> Result<Self> {
        let d = coeffs.dim();
        let span0 = grid.windows(2).map(|w| w[1] - w[0]).fold(0.0f64, f64::max);
        let substeps = (span0 / dt).ceil().max(1.0) as usize;
        let mut v = v0.to_vec();
        let mut cov = DMatrix::zeros(d, d);
        let mut v_grid = vec![v.clone()];
        let mut cov_grid = vec![cov.clone()];
        let mut steps = Vec::with_capacity(substeps * grid.len());
        for w in grid.windows(2) {
            let h = (w[1] - w[0]) / substeps as f64;
            for _ in 0..substeps {
                let g = coeffs.diffusion(&v)?;
                let mut l = vec![0.0; d * d];
                psd_factor(&g, d, &mut l)?;
                steps.push(LnaStep {
                    h,
                    jac: coeffs.jacobian(&v)?,
                    factor: DMatrix::from_row_slice(d, d, &l),
                    corr: DVector::from_vec(coeffs.correction(&v)?),
                });
                let (nv, nc) = moment_step(coeffs, &v, &cov, h)?;
                v = nv;
                cov = nc;
            }
            v_grid.push(v.clone());
            cov_grid.push(cov.clone());
        }
        Ok(LnaPath { grid: grid.to_vec(), substeps, v0: v_grid, covariance: cov_grid, steps })
    }

    pub fn dim(&self) -> usize {
        self.v0[0].len()
    }
}

/// One RK4 step of the joint system v' = F(v), S' = J S + S J^T + G.
fn moment_step<C: DiffusionCoefficients + ?Sized>(
    coeffs: &C,
    v: &[f64],
    cov: &DMatrix<f64>,
    h: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = v.len();
    let mut y: Vec<f64> = v.to_vec();
    y.extend(cov.iter());
    let mut f = |y: &[f64]| -> Result<Vec<f64>> {
        let v = &y[..d];
        let s = DMatrix::from_column_slice(d, d, &y[d..]);
        let j = coeffs.jacobian(v)?;
        let g = DMatrix::from_row_slice(d, d, &coeffs.diffusion(v)?);
        let ds = &j * &s + &s * j.transpose() + g;
        let mut out = coeffs.drift(v)?;
        out.extend(ds.iter());
        Ok(out)
    };
    let y = rk4_step(&mut f, &y, h)?;
    let s = DMatrix::from_column_slice(d, d, &y[d..]);
    Ok((y[..d].to_vec(), (&s + s.transpose()) * 0.5))
}

/// Second moment of U along V0 from a zero initial condition, at each grid time.
pub fn variance_ode<C: DiffusionCoefficients + ?Sized>(coeffs: &C, v0: &[f64], grid: &[f64], dt: f64) -> Result<Vec<DMatrix<f64>>> {
    let d = coeffs.dim();
    let mut v = v0.to_vec();
    let mut cov = DMatrix::zeros(d, d);
    let mut out = vec![cov.clone()];
    for w in grid.windows(2) {
        let n = ((w[1] - w[0]) / dt).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / n as f64;
        for _ in 0..n {
            let (nv, nc) = moment_step(coeffs, &v, &cov, h)?;
            v = nv;
            cov = nc;
        }
        out.push(cov.clone());
    }
    Ok(out)
}

/// Euler-Maruyama for dU = (J U + C) dt + L dW along a precomputed path.
pub fn lna_simulate<R: Rng>(path: &LnaPath, u0: &[f64], names: Vec<String>, rng: &mut R) -> Result<Trajectory> {
    let d = path.dim();
    let mut u = DVector::from_column_slice(u0);
    let mut states = vec![u.iter().copied().collect::<Vec<f64>>()];
    let mut dw = DVector::zeros(d);
    for (i, st) in path.steps.iter().enumerate() {
        let sq = st.h.sqrt();
        for x in dw.iter_mut() {
            *x = rng.sample::<f64, _>(StandardNormal) * sq;
        }
        u += (&st.jac * &u + &st.corr) * st.h + &st.factor * &dw;
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(path.grid[i / path.substeps] + st.h * (i % path.substeps + 1) as f64));
        }
        if (i + 1) % path.substeps == 0 {
            states.push(u.iter().copied().collect());
        }
    }
    Ok(Trajectory {
        times: path.grid.clone(),
        states,
        names,
        meta: TrajectoryMeta { method: "lna".into(), ..Default::default() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{trajectory_rng, uniform_grid};

    /// Scalar linear coefficients: F(v) = a v, G = g.
    struct Linear {
        a: f64,
        g: f64,
    }

    impl DiffusionCoefficients for Linear {
        fn dim(&self) -> usize {
            1
        }
        fn drift(&self, v: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![self.a * v[0]])
        }
        fn jacobian(&self, _: &[f64]) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_element(1, 1, self.a))
        }
        fn diffusion(&self, _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![self.g])
        }
        fn correction(&self, _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![0.0])
        }
    }

    fn sample_var(xs: &[f64]) -> f64 {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    }

    #[test]
    fn scalar_variance_closed_form() {
        let (a, g) = (-0.7, 2.0);
        let grid = uniform_grid(3.0, 31);
        let s = variance_ode(&Linear { a, g }, &[1.0], &grid, 1e-3).unwrap();
        for (t, m) in grid.iter().zip(&s) {
            let exact = g * ((2.0 * a * t).exp() - 1.0) / (2.0 * a);
            assert!((m[(0, 0)] - exact).abs() < 1e-10, "{t}");
        }
    }

    #[test]
    fn zero_diffusion_gives_zero_moment() {
        let s = variance_ode(&Linear { a: 1.0, g: 0.0 }, &[1.0], &uniform_grid(1.0, 5), 1e-2).unwrap();
        assert!(s.iter().all(|m| m[(0, 0)] == 0.0));
    }

    #[test]
    fn ou_stationary_variance() {
        let (a, g) = (-2.0, 3.0);
        let grid = uniform_grid(4.0, 5);
        let path = LnaPath::build(&Linear { a, g }, &[0.0], &grid, 1e-2).unwrap();
        let xs: Vec<f64> = (0..10_000)
            .map(|i| *lna_simulate(&path, &[0.0], vec![], &mut trajectory_rng(2, i)).unwrap().states[4].first().unwrap())
            .collect();
        let target = g / (-2.0 * a);
        assert!((sample_var(&xs) / target - 1.0).abs() < 0.05, "{}", sample_var(&xs));
    }

    #[test]
    fn silent_lna_stays_at_zero() {
        let path = LnaPath::build(&Linear { a: -1.0, g: 0.0 }, &[1.0], &uniform_grid(1.0, 11), 1e-2).unwrap();
        let tr = lna_simulate(&path, &[0.0], vec![], &mut trajectory_rng(0, 0)).unwrap();
        assert!(tr.states.iter().all(|u| u[0] == 0.0));
    }

    #[test]
    fn brownian_scaling() {
        let grid = [0.0, 0.5];
        let opts = SdeOptions { dt: 0.05, noise_scale: 0.1, watch: None };
        let xs: Vec<f64> = (0..10_000)
            .map(|i| {
                diffusion_simulate(&Linear { a: 0.0, g: 4.0 }, &[5.0], &grid, vec![], &opts, &mut trajectory_rng(4, i))
                    .unwrap()
                    .states[1][0]
            })
            .collect();
        let target = 4.0 * 0.5 * 0.01;
        assert!((sample_var(&xs) / target - 1.0).abs() < 0.05);
    }

    #[test]
    fn vanishing_noise_follows_ode() {
        struct Logistic;
        impl DiffusionCoefficients for Logistic {
            fn dim(&self) -> usize {
                1
            }
            fn drift(&self, v: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![7.5 * v[0] - 3.75 * v[0] * v[0]])
            }
            fn jacobian(&self, v: &[f64]) -> Result<DMatrix<f64>> {
                Ok(DMatrix::from_element(1, 1, 7.5 - 7.5 * v[0]))
            }
            fn diffusion(&self, v: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![72.5 * v[0]])
            }
            fn correction(&self, _: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![0.0])
            }
        }
        let grid = uniform_grid(1.0, 21);
        let opts = SdeOptions { dt: 1e-4, noise_scale: 1e-6, watch: None };
        let tr = diffusion_simulate(&Logistic, &[0.1], &grid, vec![], &opts, &mut trajectory_rng(0, 1)).unwrap();
        let worst = grid
            .iter()
            .zip(&tr.states)
            .map(|(t, s)| {
                let e = (7.5 * t).exp();
                (s[0] - 0.2 * e / (1.9 + 0.1 * e)).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn factor_reproduces_matrix() {
        let g = [4.0, 2.0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0];
        let mut l = [0.0; 9];
        psd_factor(&g, 3, &mut l).unwrap();
        let lm = DMatrix::from_row_slice(3, 3, &l);
        let back = &lm * lm.transpose();
        assert!((back - DMatrix::from_row_slice(3, 3, &g)).amax() < 1e-14);
        assert!(psd_factor(&[1.0, 0.0, 0.0, -1.0], 2, &mut [0.0; 4]).is_err());
    }

    #[test]
    fn table_matches_direct_evaluation() {
        let inner = Linear { a: 0.3, g: 1.5 };
        let tab = TabulatedCoefficients::build(&inner, 0, &[0.0], 0.0, 2.0, 101).unwrap();
        let (mut d, mut c, mut g) = ([0.0], [0.0], [0.0]);
        tab.eval_into(&[1.234], &mut d, &mut c, &mut g).unwrap();
        assert!((d[0] - 0.3 * 1.234).abs() < 1e-14);
        tab.eval_into(&[5.0], &mut d, &mut c, &mut g).unwrap();
        assert_eq!(d[0], 1.5);
    }
}
