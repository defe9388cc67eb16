//! Corrector functions, the central-limit exponent and the limiting diffusion matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::averaging::{inverse_checked, AveragedModel};
use crate::basis::HomogeneousBasis;
use crate::error::{Error, Result};
use crate::model::MultiscaleModel;
use crate::network::{normalized_propensity, ScalingSpec};
use crate::rational::{self, format_rational, Rat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AnsatzKind {
    H1,
    H2,
    H3,
}

/// h(v) = U(v0) y for the fast coordinates y of one level.
#[derive(Debug, Clone, Serialize)]
pub struct LinearAnsatzSolution {
    pub which: AnsatzKind,
    pub frozen: Vec<f64>,
    /// Rows index slow components, columns fast coordinates.
    #[serde(serialize_with = "ser_matrix")]
    pub coefficients: DMatrix<f64>,
    pub residual: f64,
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    serde::Serialize::serialize(&rows, s)
}

/// Coefficient matrices of all corrector functions at one slow state.
#[derive(Debug, Clone)]
pub struct PoissonCoefficients {
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub u3: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Bound {
    pub name: String,
    #[serde(serialize_with = "ser_opt_rat")]
    pub value: Option<Rat>,
}

fn ser_opt_rat<S: serde::Serializer>(q: &Option<Rat>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match q {
        Some(q) => s.serialize_str(&format_rational(q)),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TermKind {
    /// Jump reaction, gradient at the shifted state.
    ShiftedGradient,
    /// Drift reaction, gradient at the current state.
    Gradient,
    /// Drift reaction, second derivatives.
    Curvature,
    /// Jump reaction with a surviving finite increment.
    Increment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TermStatus {
    Evaluated,
    /// Needs derivatives of the coefficients multiplied by fast coordinates.
    Unevaluated,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectionTerm {
    pub level: usize,
    pub kind: TermKind,
    pub reaction: String,
    pub status: TermStatus,
    #[serde(skip)]
    reaction_index: usize,
    #[serde(skip)]
    vector: Vec<f64>,
    #[serde(skip)]
    second: Option<DMatrix<f64>>,
}

/// Leading contribution of one reaction to the rescaled quadratic variation.
#[derive(Debug, Clone)]
struct JumpTerm {
    reaction: usize,
    /// (slow index, coefficient) entering directly.
    direct: Vec<(usize, f64)>,
    /// (level, fast index within level, coefficient) entering through the corrector.
    fast: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CancellationReport {
    pub n: Vec<f64>,
    /// Largest deviation of r_N (F^N - F) from G0 over the test states.
    pub deviation: Vec<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct CorrectionModel {
    pub averaged: AveragedModel,
    pub p: Rat,
    pub bounds: Vec<Bound>,
    pub binding: Vec<String>,
    /// (slow index, reaction) pairs whose exponent gap equals p.
    pub g0_terms: Vec<(usize, usize)>,
    pub g1_ledger: Vec<CorrectionTerm>,
    jumps: Vec<JumpTerm>,
}

fn min_opt(acc: &mut Option<Rat>, v: Rat) {
    if acc.is_none_or(|a| v < a) {
        *acc = Some(v);
    }
}

impl CorrectionModel {
    pub fn build(averaged: AveragedModel) -> Result<Self> {
        let m = &averaged.model;
        if m.num_levels() > 1 && !averaged.is_affine() {
            m.require_affine()?;
        }
        let d = &m.decomposition;
        let rho = &d.rho;
        let net = &m.network;
        let zetas: Vec<Vec<Rat>> = net.reactions.iter().map(|r| rational::from_ints(&r.net_change())).collect();
        let slow = &d.levels[0].range;
        let nl = m.num_levels();
        let m_of = |l: usize| d.levels[l].level.m;

        let structural = structural_columns(&averaged)?;

        // Bounds.
        let mut b1 = None;
        for l in 0..slow.dim() {
            for (k, z) in zetas.iter().enumerate() {
                if slow.touches(l, z) && rho[k] < slow.alpha_of[l] {
                    min_opt(&mut b1, slow.alpha_of[l] - rho[k]);
                }
            }
        }
        let (mut b2, mut b3) = (None, None);
        if nl == 3 {
            let m2 = m_of(2);
            for (k, z) in zetas.iter().enumerate() {
                for (i, zi) in z.iter().enumerate() {
                    if zi.is_zero() {
                        continue;
                    }
                    let a = net.species[i].alpha;
                    let v = a + m2 - rho[k];
                    if v.is_positive() {
                        min_opt(&mut b2, v);
                    }
                    if a.is_positive() {
                        min_opt(&mut b3, a + a + m2 - rho[k]);
                    }
                }
            }
        }
        let (mut b4, mut b5) = (None, None);
        if nl >= 2 {
            let m1 = m_of(1);
            let r1 = &d.levels[1].range;
            for l in 0..r1.dim() {
                let a = r1.alpha_of[l];
                for (k, z) in zetas.iter().enumerate() {
                    if !r1.touches(l, z) {
                        continue;
                    }
                    let v = a + m1 - rho[k];
                    if v.is_positive() {
                        min_opt(&mut b4, v);
                    }
                    if a.is_positive() {
                        min_opt(&mut b5, a + a + m1 - rho[k]);
                    }
                }
            }
        }
        let bounds = vec![
            Bound { name: "pbnd1".into(), value: b1 },
            Bound { name: "pbnd2".into(), value: b2 },
            Bound { name: "pbnd3".into(), value: b3 },
            Bound { name: "pbnd4".into(), value: b4 },
            Bound { name: "pbnd5".into(), value: b5 },
        ];

        // Nontriviality: the smallest p at which some quadratic-variation term has exponent zero.
        let half = rational::rat(1, 2);
        let mut p: Option<Rat> = None;
        for (k, z) in zetas.iter().enumerate() {
            for l in 0..slow.dim() {
                if slow.touches(l, z) {
                    min_opt(&mut p, slow.alpha_of[l] - rho[k] * half);
                }
            }
            for lv in 1..nl {
                let range = &d.levels[lv].range;
                for j in 0..range.dim() {
                    if range.touches(j, z) && structural[lv - 1][j] {
                        min_opt(&mut p, m_of(lv) + range.alpha_of[j] - rho[k] * half);
                    }
                }
            }
        }
        let p = p.ok_or_else(|| Error::CltScaling("no reaction moves the slow coordinates".into()))?;
        if !p.is_positive() {
            return Err(Error::CltScaling(format!("nontriviality exponent {} is not positive", format_rational(&p))));
        }
        let mut binding = vec!["nontriviality".to_string()];
        for b in &bounds {
            if let Some(v) = b.value {
                if p > v {
                    return Err(Error::CltScaling(format!(
                        "nontriviality exponent {} exceeds {} = {}",
                        format_rational(&p),
                        b.name,
                        format_rational(&v)
                    )));
                }
                if p == v {
                    binding.push(b.name.clone());
                }
            }
        }

        let mut g0_terms = Vec::new();
        for l in 0..slow.dim() {
            for (k, z) in zetas.iter().enumerate() {
                if slow.touches(l, z) && slow.alpha_of[l] - rho[k] == p {
                    g0_terms.push((l, k));
                }
            }
        }

        // Quadratic variation terms.
        let mut jumps = Vec::new();
        for (k, z) in zetas.iter().enumerate() {
            let mut cands: Vec<(Rat, Option<(usize, f64)>, Option<(usize, usize, f64)>)> = Vec::new();
            for l in 0..slow.dim() {
                if slow.touches(l, z) {
                    let c = rational::to_f64(&rational::dot(&slow.rational_directions[l], z))
                        / rational::norm_f64(&slow.rational_directions[l]);
                    cands.push((p - slow.alpha_of[l], Some((l, c)), None));
                }
            }
            for lv in 1..nl {
                let range = &d.levels[lv].range;
                for j in 0..range.dim() {
                    if range.touches(j, z) && structural[lv - 1][j] {
                        let c = rational::to_f64(&rational::dot(&range.rational_directions[j], z))
                            / rational::norm_f64(&range.rational_directions[j]);
                        cands.push((p - m_of(lv) - range.alpha_of[j], None, Some((lv, j, c))));
                    }
                }
            }
            let Some(lead) = cands.iter().map(|c| c.0).max() else { continue };
            let total = lead + lead + rho[k];
            if total.is_positive() {
                return Err(Error::DivergentVariation(net.reactions[k].name.clone()));
            }
            if total.is_zero() {
                let direct = cands.iter().filter(|c| c.0 == lead).filter_map(|c| c.1).collect();
                let fast = cands.iter().filter(|c| c.0 == lead).filter_map(|c| c.2).collect();
                jumps.push(JumpTerm { reaction: k, direct, fast });
            }
        }
        if jumps.is_empty() {
            return Err(Error::CltScaling("no reaction contributes to the diffusion matrix".into()));
        }

        let g1_ledger = classify_g1(m, &zetas, p);
        Ok(CorrectionModel { averaged, p, bounds, binding, g0_terms, g1_ledger, jumps })
    }

    pub fn model(&self) -> &MultiscaleModel {
        &self.averaged.model
    }

    /// Name of the bound that fixes p, or "nontriviality".
    pub fn binding_bound(&self) -> &str {
        self.binding.get(1).unwrap_or(&self.binding[0])
    }

    pub fn r_n(&self) -> f64 {
        self.model().n_pow(&self.p)
    }

    pub fn coefficients(&self, v0: &[f64]) -> Result<PoissonCoefficients> {
        let m = self.model();
        let (d1, d2) = m.fast_dims();
        let d0 = m.slow_dim();
        if m.num_levels() == 1 {
            return Ok(PoissonCoefficients {
                u1: DMatrix::zeros(d0, 0),
                u2: DMatrix::zeros(d0, 0),
                u3: DMatrix::zeros(d0, 0),
            });
        }
        let sol = self.averaged.moments(v0)?;
        let slope = |terms: &[crate::model::LevelTerm], rows: usize, b: &DMatrix<f64>, off: usize, cols: usize| {
            let mut out = DMatrix::zeros(rows, cols);
            for t in terms {
                out += &t.direction * b.row(t.reaction).columns(off, cols);
            }
            out
        };
        let f1 = slope(m.level_terms(0), d0, &sol.bbar, 0, d1);
        let b1 = slope(m.level_terms(1), d1, &sol.bbar, 0, d1);
        let u1 = f1 * inverse_checked(&b1, "level-1 corrector")?;
        if d2 == 0 {
            return Ok(PoissonCoefficients { u1, u2: DMatrix::zeros(d0, 0), u3: DMatrix::zeros(d0, 0) });
        }
        let b = &sol.rates.b;
        let b22 = slope(m.level_terms(2), d2, b, d1, d2);
        let inv = inverse_checked(&b22, "level-2 corrector")?;
        let fv2 = slope(m.level_terms(0), d0, b, d1, d2);
        let u2 = fv2 * &inv;
        let mut c = DMatrix::zeros(d0, d2);
        for t in m.level_terms(1) {
            c -= &u1 * &t.direction * b.row(t.reaction).columns(d1, d2);
        }
        let u3 = c * inv;
        Ok(PoissonCoefficients { u1, u2, u3 })
    }

    /// Generator applied to the ansatz minus the right-hand side, at one fast state.
    pub fn poisson_residual(&self, which: AnsatzKind, v0: &[f64], fast: &[f64]) -> Result<f64> {
        let m = self.model();
        let avg = &self.averaged;
        let (d1, d2) = m.fast_dims();
        let u = self.coefficients(v0)?;
        let z = m.z_from(v0, fast);
        let r = m.network.num_reactions();
        let lam: Vec<f64> = (0..r).map(|k| m.lambda(k, &z)).collect();
        let apply = |uu: &DMatrix<f64>, level: usize, rates: &[f64]| {
            let mut g = DVector::zeros(m.slow_dim());
            for t in m.level_terms(level) {
                g += uu * &t.direction * rates[t.reaction];
            }
            g
        };
        let diff = match which {
            AnsatzKind::H1 if d2 == 0 => apply(&u.u1, 1, &lam) - (avg.slow_drift(&lam) - avg.f_bar(v0)?),
            AnsatzKind::H1 => {
                let lb = avg.lambda_bar(v0, &fast[..d1])?;
                apply(&u.u1, 1, &lb) - (avg.slow_drift(&lb) - avg.f_bar(v0)?)
            }
            AnsatzKind::H2 | AnsatzKind::H3 if d2 == 0 => {
                return Err(Error::InvalidArgument("two-level network has no level-2 corrector".into()))
            }
            AnsatzKind::H2 => {
                let lb = avg.lambda_bar(v0, &fast[..d1])?;
                apply(&u.u2, 2, &lam) - (avg.slow_drift(&lam) - avg.slow_drift(&lb))
            }
            AnsatzKind::H3 => {
                let lb = avg.lambda_bar(v0, &fast[..d1])?;
                let delta: Vec<f64> = lb.iter().zip(&lam).map(|(a, b)| a - b).collect();
                apply(&u.u3, 2, &lam) - apply(&u.u1, 1, &delta)
            }
        };
        Ok(diff.amax())
    }

    /// Solves one Poisson equation at a slow state and verifies it on the fast basis points.
    pub fn solve_poisson_linear_ansatz(&self, which: AnsatzKind, v0: &[f64]) -> Result<LinearAnsatzSolution> {
        let m = self.model();
        let (d1, d2) = m.fast_dims();
        let u = self.coefficients(v0)?;
        let coefficients = match which {
            AnsatzKind::H1 => u.u1,
            AnsatzKind::H2 => u.u2,
            AnsatzKind::H3 => u.u3,
        };
        let nf = d1 + d2;
        let mut residual: f64 = 0.0;
        let mut y = vec![0.0; nf];
        residual = residual.max(self.poisson_residual(which, v0, &y)?);
        for j in 0..nf {
            y[j] = 1.0;
            residual = residual.max(self.poisson_residual(which, v0, &y)?);
            y[j] = 0.0;
        }
        self.check_centering(v0)?;
        Ok(LinearAnsatzSolution { which, frozen: v0.to_vec(), coefficients, residual })
    }

    /// Fredholm check: the averaged drift matches the drift at the stationary mean.
    pub fn check_centering(&self, v0: &[f64]) -> Result<f64> {
        let m = self.model();
        if m.num_levels() == 1 {
            return Ok(0.0);
        }
        let eq = self.averaged.equilibrium(v0)?;
        let fbar = self.averaged.f_bar(v0)?;
        let z = m.z_from(v0, &eq.means);
        let lam: Vec<f64> = (0..m.network.num_reactions()).map(|k| m.lambda(k, &z)).collect();
        let gap = (self.averaged.slow_drift(&lam) - &fbar).amax();
        if gap > 1e-9 * (1.0 + fbar.amax()) {
            return Err(Error::Uncentered(gap));
        }
        Ok(gap)
    }

    /// Combined corrector H_N at a normalized state.
    pub fn h_n(&self, z: &[f64]) -> Result<DVector<f64>> {
        let m = self.model();
        let (v0, y) = m.coords(z);
        self.h_n_coords(&v0, &y)
    }

    pub fn h_n_coords(&self, v0: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        let m = self.model();
        if m.num_levels() == 1 {
            return Ok(DVector::zeros(m.slow_dim()));
        }
        let (d1, d2) = m.fast_dims();
        let u = self.coefficients(v0)?;
        let y1 = DVector::from_column_slice(&y[..d1]);
        let mut h = &u.u1 * y1 / m.n_pow(&m.m(1));
        if d2 > 0 {
            let y2 = DVector::from_column_slice(&y[d1..d1 + d2]);
            h += (&u.u2 + &u.u3) * y2 / m.n_pow(&m.m(2));
        }
        Ok(h)
    }

    fn jump_vectors(&self, v0: &[f64]) -> Result<Vec<(usize, DVector<f64>)>> {
        let m = self.model();
        let u = self.coefficients(v0)?;
        let u2 = &u.u2 + &u.u3;
        Ok(self
            .jumps
            .iter()
            .map(|j| {
                let mut v = DVector::zeros(m.slow_dim());
                for &(l, c) in &j.direct {
                    v[l] += c;
                }
                for &(lv, i, c) in &j.fast {
                    let col = if lv == 1 { u.u1.column(i) } else { u2.column(i) };
                    v -= col * c;
                }
                (j.reaction, v)
            })
            .collect())
    }

    /// Averaged diffusion matrix.
    pub fn g_bar(&self, v0: &[f64]) -> Result<DMatrix<f64>> {
        let lam = self.averaged.lambda_bar_bar(v0)?;
        let d0 = self.model().slow_dim();
        let mut g = DMatrix::zeros(d0, d0);
        for (k, j) in self.jump_vectors(v0)? {
            g += &j * j.transpose() * lam[k];
        }
        Ok((&g + g.transpose()) * 0.5)
    }

    /// Symmetric square root of the diffusion matrix.
    pub fn sigma(&self, v0: &[f64]) -> Result<DMatrix<f64>> {
        psd_sqrt(&self.g_bar(v0)?)
    }

    /// Unaveraged correction drift from exponent gaps equal to p.
    pub fn g0(&self, z: &[f64]) -> DVector<f64> {
        let m = self.model();
        let slow = &m.decomposition.levels[0].range;
        let mut g = DVector::zeros(m.slow_dim());
        for &(l, k) in &self.g0_terms {
            let zeta: Vec<f64> = m.network.reactions[k].net_change().iter().map(|&x| x as f64).collect();
            let c: f64 = slow.vectors[l].iter().zip(&zeta).map(|(a, b)| a * b).sum();
            g[l] += m.lambda(k, z) * c;
        }
        g
    }

    pub fn g0_bar(&self, v0: &[f64]) -> Result<DVector<f64>> {
        let m = self.model();
        let slow = &m.decomposition.levels[0].range;
        let lam = self.averaged.lambda_bar_bar(v0)?;
        let mut g = DVector::zeros(m.slow_dim());
        for &(l, k) in &self.g0_terms {
            let zeta: Vec<f64> = m.network.reactions[k].net_change().iter().map(|&x| x as f64).collect();
            let c: f64 = slow.vectors[l].iter().zip(&zeta).map(|(a, b)| a * b).sum();
            g[l] += lam[k] * c;
        }
        Ok(g)
    }

    pub fn unevaluated_terms(&self) -> Vec<&CorrectionTerm> {
        self.g1_ledger.iter().filter(|t| t.status == TermStatus::Unevaluated).collect()
    }

    /// Averaged sum of the evaluable second-order correction terms.
    pub fn g1_bar(&self, v0: &[f64]) -> Result<DVector<f64>> {
        let m = self.model();
        let d0 = m.slow_dim();
        let mut g = DVector::zeros(d0);
        if self.g1_ledger.iter().all(|t| t.status == TermStatus::Unevaluated) {
            return Ok(g);
        }
        let lam = self.averaged.lambda_bar_bar(v0)?;
        let u = self.coefficients(v0)?;
        for t in self.g1_ledger.iter().filter(|t| t.status == TermStatus::Evaluated) {
            let uu = if t.level == 1 { u.u1.clone() } else { &u.u2 + &u.u3 };
            let basis = m.fast_basis(t.level);
            match (&t.second, t.kind) {
                (Some(xi), _) => {
                    // Mixed slow-fast derivatives of the coefficients.
                    let s0 = m.slow_basis();
                    let cross = &s0 * xi * basis.transpose();
                    for a in 0..d0 {
                        let h = (1e-6 * v0[a].abs()).max(1e-6);
                        let mut vp = v0.to_vec();
                        let mut vm = v0.to_vec();
                        vp[a] += h;
                        vm[a] -= h;
                        let (up, um) = (self.coefficients(&vp)?, self.coefficients(&vm)?);
                        let pick = |c: &PoissonCoefficients| if t.level == 1 { c.u1.clone() } else { &c.u2 + &c.u3 };
                        let du = (pick(&up) - pick(&um)) / (2.0 * h);
                        for b in 0..du.ncols() {
                            g += du.column(b) * cross[(a, b)] * lam[t.reaction_index];
                        }
                    }
                }
                (None, _) => {
                    let w = DVector::from_column_slice(&t.vector);
                    let fast = &basis * w;
                    g += &uu * fast * lam[t.reaction_index];
                }
            }
        }
        Ok(g)
    }

    /// Compares r_N (F^N - F) with G0 at random states for increasing N.
    pub fn cancellation_check(&self) -> CancellationReport {
        let m = self.model();
        let slow = &m.decomposition.levels[0].range;
        let rho = &m.decomposition.rho;
        let net = &m.network;
        let s = m.species_count();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let states: Vec<Vec<f64>> = (0..10).map(|_| (0..s).map(|_| rng.gen_range(0.2..2.0)).collect()).collect();
        let ns: Vec<f64> = vec![1e3, 1e4, 1e5];
        let mut deviation = Vec::new();
        for &n in &ns {
            let spec = ScalingSpec::new(n as u64, m.scaling.gamma);
            let mut worst: f64 = 0.0;
            for z in &states {
                let g0 = self.g0(z);
                for l in 0..slow.dim() {
                    let mut acc = 0.0;
                    for (k, r) in net.reactions.iter().enumerate() {
                        let zeta = rational::from_ints(&r.net_change());
                        if !slow.touches(l, &zeta) {
                            continue;
                        }
                        let c = rational::to_f64(&rational::dot(&slow.rational_directions[l], &zeta))
                            / rational::norm_f64(&slow.rational_directions[l]);
                        let gap = rho[k] - slow.alpha_of[l];
                        let finite = normalized_propensity(net, k, z, &spec, false);
                        let lim = m.lambda(k, z);
                        let scaled = n.powf(rational::to_f64(&(self.p + gap)));
                        acc += if gap.is_zero() {
                            scaled * (finite - lim) * c
                        } else {
                            scaled * finite * c
                        };
                    }
                    worst = worst.max((acc - g0[l]).abs());
                }
            }
            deviation.push(worst);
        }
        let flagged = deviation[2] > 2.0 * deviation[0] + 1e-9;
        CancellationReport { n: ns, deviation, flagged }
    }
}

/// Square root of a symmetric positive semidefinite matrix; small negative eigenvalues are clamped.
pub fn psd_sqrt(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if g.nrows() == 0 {
        return Ok(g.clone());
    }
    let eig = SymmetricEigen::new(g.clone());
    let scale = g.amax().max(1.0);
    let mut d = eig.eigenvalues.clone();
    for x in d.iter_mut() {
        if *x < -1e-10 * scale {
            return Err(Error::IndefiniteDiffusion(*x));
        }
        *x = x.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Which corrector columns are nonzero somewhere on a few sample states.
fn structural_columns(avg: &AveragedModel) -> Result<Vec<Vec<bool>>> {
    let m = &avg.model;
    let (d1, d2) = m.fast_dims();
    let mut cols = vec![vec![false; d1], vec![false; d2]];
    if m.num_levels() == 1 {
        return Ok(cols);
    }
    let probe = CorrectionProbe { avg };
    let init = m.initial_slow();
    let samples: Vec<Vec<f64>> = vec![
        init.iter().map(|x| x.abs() + 0.25).collect(),
        vec![1.0; init.len()],
        init.iter().enumerate().map(|(i, x)| 0.5 * x.abs() + 1.7 + 0.3 * i as f64).collect(),
    ];
    let mut any = false;
    let mut last_err = None;
    for v0 in &samples {
        match probe.u(v0) {
            Ok((u1, u23)) => {
                any = true;
                for j in 0..d1 {
                    cols[0][j] |= u1.column(j).amax() > 1e-12;
                }
                for j in 0..d2 {
                    cols[1][j] |= u23.column(j).amax() > 1e-12;
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    if !any {
        return Err(last_err.unwrap_or(Error::Singular("corrector".into())));
    }
    Ok(cols)
}

struct CorrectionProbe<'a> {
    avg: &'a AveragedModel,
}

impl CorrectionProbe<'_> {
    fn u(&self, v0: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let cm = CorrectionModel {
            averaged: self.avg.clone(),
            p: Rat::zero(),
            bounds: vec![],
            binding: vec![],
            g0_terms: vec![],
            g1_ledger: vec![],
            jumps: vec![],
        };
        let c = cm.coefficients(v0)?;
        Ok((c.u1, &c.u2 + &c.u3))
    }
}

fn unit_coeff(b: &HomogeneousBasis, l: usize, z: &[Rat]) -> f64 {
    rational::to_f64(&rational::dot(&b.rational_directions[l], z)) / rational::norm_f64(&b.rational_directions[l])
}

/// Classifies every candidate second-order correction term by exponent arithmetic.
fn classify_g1(m: &MultiscaleModel, zetas: &[Vec<Rat>], p: Rat) -> Vec<CorrectionTerm> {
    let d = &m.decomposition;
    let rho = &d.rho;
    let s = m.species_count();
    let slow_rows = m.slow_basis();
    let mut out = Vec::new();
    for lv in 1..m.num_levels() {
        let w = &d.levels[lv].subspace;
        let ml = d.levels[lv].level.m;
        let jump = &d.levels[lv].level.jump_class;
        let drift = &d.levels[lv].level.drift_class;
        for (k, z) in zetas.iter().enumerate() {
            let touched: Vec<usize> = (0..w.dim()).filter(|&l| w.touches(l, z)).collect();
            // Surviving first-order remainder in species coordinates.
            let mut tilde = vec![0.0; s];
            let mut has_tilde = false;
            for &l in &touched {
                if w.alpha_of[l] + ml - rho[k] == p {
                    has_tilde = true;
                    let c = unit_coeff(w, l, z);
                    for (t, x) in tilde.iter_mut().zip(&w.vectors[l]) {
                        *t += c * x;
                    }
                }
            }
            let tilde_slow = (&slow_rows * DVector::from_column_slice(&tilde)).amax() > 1e-12;
            let mut xi = DMatrix::zeros(s, s);
            let mut has_xi = false;
            for &a in &touched {
                for &b in &touched {
                    if p + rho[k] - ml - w.alpha_of[a] - w.alpha_of[b] == Rat::zero() {
                        has_xi = true;
                        let c = unit_coeff(w, a, z) * unit_coeff(w, b, z);
                        let va = DVector::from_column_slice(&w.vectors[a]);
                        let vb = DVector::from_column_slice(&w.vectors[b]);
                        xi += va * vb.transpose() * c;
                    }
                }
            }
            let in_jump = jump.contains(&k);
            let in_drift = drift.contains(&k);
            let jump_p = touched.iter().any(|&l| w.alpha_of[l].is_zero() && ml - rho[k] == p);
            let drift_p =
                !in_drift && touched.iter().any(|&l| w.alpha_of[l].is_positive() && ml - rho[k] + w.alpha_of[l] == p);
            let name = m.network.reactions[k].name.clone();
            let mut push = |kind: TermKind, status: TermStatus, vector: Vec<f64>, second: Option<DMatrix<f64>>| {
                out.push(CorrectionTerm {
                    level: lv,
                    kind,
                    reaction: name.clone(),
                    status,
                    reaction_index: k,
                    vector,
                    second,
                });
            };
            let first_status = if tilde_slow { TermStatus::Unevaluated } else { TermStatus::Evaluated };
            if has_tilde && in_jump {
                push(TermKind::ShiftedGradient, first_status, tilde.clone(), None);
            }
            if has_tilde && (in_drift || drift_p) {
                push(TermKind::Gradient, first_status, tilde.clone(), None);
            }
            if has_xi && in_drift {
                let slow_slow = (&slow_rows * &xi * slow_rows.transpose()).amax() > 1e-12;
                let status = if slow_slow { TermStatus::Unevaluated } else { TermStatus::Evaluated };
                push(TermKind::Curvature, status, vec![], Some(xi.clone()));
            }
            if jump_p {
                push(TermKind::Increment, first_status, tilde.clone(), None);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin;
    use crate::rational::rat;

    fn corrected(name: &str) -> CorrectionModel {
        let m = MultiscaleModel::new(&builtin::load(name).unwrap()).unwrap();
        CorrectionModel::build(AveragedModel::build(m).unwrap()).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn viral_corrector_and_diffusion() {
        let c = corrected("viral");
        assert_eq!(c.p, rat(1, 3));
        assert!(c.g0_terms.is_empty());
        assert!(c.g1_ledger.is_empty());
        for z in [0.5, 1.0, 2.0] {
            let sol = c.solve_poisson_linear_ansatz(AnsatzKind::H1, &[z]).unwrap();
            assert!(close(sol.coefficients[(0, 0)], 1.5 * z - 4.0, 1e-12));
            assert!(close(sol.coefficients[(0, 1)], 0.375 * z, 1e-12));
            assert!(sol.residual < 1e-10);
            let g = c.g_bar(&[z]).unwrap()[(0, 0)];
            assert!(close(g, 72.5 * z - 48.75 * z * z + 11.25 * z.powi(3), 1e-12), "{g}");
        }
        assert!(close(c.g_bar(&[1.0]).unwrap()[(0, 0)], 35.0, 1e-12));
        let h = c.h_n(&[3.0, 2.0, 4.0]).unwrap()[0];
        assert!(close(h, 1000f64.powf(-2.0 / 3.0) * (3.0 * (1.5 * 2.0 - 4.0) + 0.375 * 2.0 * 4.0), 1e-12));
        assert!(!c.cancellation_check().flagged);
    }

    #[test]
    fn mm_corrector_and_diffusion() {
        let c = corrected("michaelis-menten");
        assert_eq!(c.p, rat(1, 2));
        assert!(c.g0_terms.is_empty() && c.g1_ledger.is_empty());
        let (k1, k2, k3, m) = (0.1, 5.0, 1.0, 5.0);
        for z in [0.5, 10.0, 40.0] {
            let p = (k2 + k3) / (k2 + k3 + k1 * z);
            // Corrector slopes per free-enzyme molecule; y = (E - SE)/sqrt2 so dE = dy/sqrt2.
            let u = c.coefficients(&[z, 0.0]).unwrap().u1 * 2f64.sqrt();
            let exact_u1 = (k1 * z + k2) / (k1 * z + k2 + k3);
            assert!(close(u[(0, 0)], exact_u1, 1e-10), "{} vs {exact_u1}", u[(0, 0)]);
            assert!(close(u[(0, 0)] + u[(1, 0)], 1.0, 1e-12));
            let g = c.g_bar(&[z, 0.0]).unwrap();
            let gb = m * (1.0 - exact_u1).powi(2) * (k1 * p * z + k2 * (1.0 - p)) + m * exact_u1.powi(2) * k3 * (1.0 - p);
            assert!(close(g[(0, 0)], gb, 1e-10), "{} vs {gb}", g[(0, 0)]);
            assert!(close(g[(1, 1)], gb, 1e-10) && close(g[(0, 1)], -gb, 1e-10));
            let s = c.sigma(&[z, 0.0]).unwrap();
            assert!((&s * s.transpose() - &g).amax() < 1e-8);
            assert!(c.solve_poisson_linear_ansatz(AnsatzKind::H1, &[z, 0.0]).unwrap().residual < 1e-10);
        }
    }

    #[test]
    fn enzyme_three_level_diffusion() {
        let c = corrected("enzyme3");
        assert_eq!(c.p, rat(1, 2));
        assert!(c.g0_terms.is_empty() && c.g1_ledger.is_empty());
        let (k1, k2, k3, k4, k5, m) = (0.5, 5.0, 1.0, 0.5, 0.5, 5.0);
        for v0 in [0.5, 5.0, 50.0] {
            let g = c.g_bar(&[v0, 0.0]).unwrap()[(0, 0)];
            let a = k1 * k4 * v0;
            let exact = m * k1 * k3 * k4 * v0 * (k3 * (k4 + k5).powi(2) * (2.0 * k2 + k3) + (a + k2 * (k4 + k5)).powi(2))
                / (a + (k2 + k3) * (k4 + k5)).powi(3);
            assert!(close(g, exact, 1e-10), "{g} vs {exact}");
            for which in [AnsatzKind::H1, AnsatzKind::H2, AnsatzKind::H3] {
                let sol = c.solve_poisson_linear_ansatz(which, &[v0, 0.0]).unwrap();
                assert!(sol.residual < 1e-10, "{which:?} {}", sol.residual);
            }
        }
    }

    #[test]
    fn zero_rhs_gives_zero_corrector() {
        // Slow drift independent of the fast species: corrector vanishes.
        let net = crate::network::build_network(
            "indep",
            &[("F", rational::int(0), 0), ("S", rational::int(1), 10)],
            &[
                ("on", &[], &[(1, "F")], 1.0, rational::int(1)),
                ("off", &[(1, "F")], &[], 1.0, rational::int(1)),
                ("grow", &[(1, "S")], &[(2, "S")], 1.0, rational::int(0)),
            ],
        )
        .unwrap();
        let m = MultiscaleModel::with_scaling(&net, &ScalingSpec::new(100, rational::int(0))).unwrap();
        let c = CorrectionModel::build(AveragedModel::build(m).unwrap()).unwrap();
        let sol = c.solve_poisson_linear_ansatz(AnsatzKind::H1, &[1.0]).unwrap();
        assert!(sol.coefficients.amax() < 1e-15);
    }

    #[test]
    fn exponent_gap_at_p_gives_single_g0_term() {
        let net = crate::network::build_network(
            "gap",
            &[("A", rational::int(1), 100)],
            &[
                ("birth", &[], &[(1, "A")], 2.0, rational::int(1)),
                ("death", &[(1, "A")], &[], 1.0, rational::int(0)),
                ("trickle", &[], &[(1, "A")], 0.7, rat(1, 2)),
            ],
        )
        .unwrap();
        let m = MultiscaleModel::with_scaling(&net, &ScalingSpec::new(100, rational::int(0))).unwrap();
        let c = CorrectionModel::build(AveragedModel::build(m).unwrap()).unwrap();
        assert_eq!(c.p, rat(1, 2));
        assert_eq!(c.g0_terms, vec![(0, 2)]);
        assert_eq!(c.binding_bound(), "pbnd1");
        assert!(close(c.g0(&[1.3])[0], 0.7, 1e-15));
        // Brute force: N^p (F^N - F) equals G0 for every N here.
        let report = c.cancellation_check();
        assert!(report.deviation.iter().all(|&d| d < 1e-9), "{:?}", report.deviation);
        assert!(!report.flagged);
    }

    #[test]
    fn slower_fast_flip_gives_increment_term() {
        let net = crate::network::build_network(
            "flip",
            &[("F", rational::int(0), 1), ("S", rational::int(1), 100)],
            &[
                ("on", &[], &[(1, "F")], 1.0, rational::int(1)),
                ("off", &[(1, "F")], &[], 1.0, rational::int(1)),
                ("make", &[(1, "F")], &[(1, "F"), (1, "S")], 1.0, rational::int(1)),
                ("decay", &[(1, "S")], &[], 1.0, rational::int(0)),
                ("flip", &[(1, "F")], &[], 1.0, rat(1, 2)),
            ],
        )
        .unwrap();
        let m = MultiscaleModel::with_scaling(&net, &ScalingSpec::new(100, rational::int(0))).unwrap();
        let c = CorrectionModel::build(AveragedModel::build(m).unwrap()).unwrap();
        assert_eq!(c.p, rat(1, 2));
        assert!(c.binding.contains(&"pbnd4".to_string()));
        assert_eq!(c.g1_ledger.len(), 1);
        let t = &c.g1_ledger[0];
        assert_eq!((t.kind, t.status, t.reaction.as_str()), (TermKind::Increment, TermStatus::Evaluated, "flip"));
        // U = -1 per F molecule, increment -1, mean F = 1.
        assert!(close(c.g1_bar(&[0.8]).unwrap()[0], 1.0, 1e-12));
    }

    #[test]
    fn psd_square_root() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]);
        let s = psd_sqrt(&g).unwrap();
        assert!((&s * s.transpose() - &g).amax() < 1e-12);
        let bad = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(matches!(psd_sqrt(&bad), Err(Error::IndefiniteDiffusion(_))));
    }
}
