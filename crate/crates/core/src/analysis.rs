//! The full reduction pipeline: scaling, decomposition, averaging and corrector.

use serde::Serialize;

use crate::averaging::AveragedModel;
use crate::classify::reaction_exponents;
use crate::error::Result;
use crate::model::MultiscaleModel;
use crate::network::NetworkSpec;
use crate::poisson::{Bound, CancellationReport, CorrectionModel, CorrectionTerm};
use crate::rational::format_rational;

#[derive(Debug, Clone)]
pub struct Analysis {
    /// The network as declared; its gamma may differ from the one chosen.
    pub spec: NetworkSpec,
    pub correction: CorrectionModel,
    pub cancellation: CancellationReport,
    pub warnings: Vec<String>,
}

pub fn analyze(spec: &NetworkSpec) -> Result<Analysis> {
    let model = MultiscaleModel::new(spec)?;
    let averaged = AveragedModel::build(model)?;
    let correction = CorrectionModel::build(averaged)?;
    let cancellation = correction.cancellation_check();
    let mut warnings = Vec::new();
    let m = correction.model();
    for t in correction.unevaluated_terms() {
        warnings.push(format!(
            "correction term {:?} of reaction {} at level {} needs coefficient derivatives and is omitted",
            t.kind, t.reaction, t.level
        ));
    }
    if cancellation.flagged {
        warnings.push("rescaled drift error does not settle as N grows; correction drift may be incomplete".into());
    }
    for &(l, k) in &m.decomposition.projection_mismatches {
        warnings.push(format!(
            "reaction {} at level {l}: limiting vector differs from the plain projection",
            m.network.reactions[k].name
        ));
    }
    Ok(Analysis { spec: spec.clone(), correction, cancellation, warnings })
}

#[derive(Debug, Clone, Serialize)]
pub struct ReactionRow {
    pub name: String,
    /// Exponent under the declared time scale.
    pub rho_declared: String,
    /// Exponent under the chosen time scale.
    pub rho: String,
    pub level: Option<usize>,
    pub class: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelRow {
    pub index: usize,
    pub m: String,
    pub generator: String,
    pub jump_class: Vec<String>,
    pub drift_class: Vec<String>,
    /// Integer generators of the level's coordinates, as species-indexed rationals.
    pub basis: Vec<Vec<String>>,
    pub alpha: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub network: String,
    pub species: Vec<String>,
    pub n: u64,
    pub gamma_declared: String,
    pub gamma: String,
    pub reactions: Vec<ReactionRow>,
    pub levels: Vec<LevelRow>,
    pub constants: Vec<Vec<String>>,
    pub projections: Vec<Vec<Vec<String>>>,
    pub strategy: String,
    pub p: String,
    pub bounds: Vec<Bound>,
    pub binding: Vec<String>,
    pub g0_terms: Vec<(String, String)>,
    pub g1_ledger: Vec<CorrectionTerm>,
    pub cancellation: CancellationReport,
    pub warnings: Vec<String>,
}

/// One row of the averaged-coefficient grid.
#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub v0: Vec<f64>,
    pub drift: Vec<f64>,
    pub jacobian: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Analysis {
    pub fn model(&self) -> &MultiscaleModel {
        self.correction.model()
    }

    pub fn report(&self) -> AnalysisReport {
        let m = self.model();
        let d = &m.decomposition;
        let net = &m.network;
        let rat_rows = |rows: &[Vec<crate::rational::Rat>]| -> Vec<Vec<String>> {
            rows.iter().map(|r| r.iter().map(format_rational).collect()).collect()
        };
        let declared = reaction_exponents(&self.spec.network, &self.spec.scaling);
        let reactions = (0..net.num_reactions())
            .map(|k| {
                let mut level = None;
                let mut class = "none".to_string();
                for l in &d.levels {
                    let jump = l.level.jump_class.contains(&k);
                    let drift = l.level.drift_class.contains(&k);
                    if jump || drift {
                        level = Some(l.level.index);
                        class = match (jump, drift) {
                            (true, true) => "jump+drift",
                            (true, false) => "jump",
                            _ => "drift",
                        }
                        .into();
                        break;
                    }
                }
                ReactionRow {
                    name: net.reactions[k].name.clone(),
                    rho_declared: format_rational(&declared[k]),
                    rho: format_rational(&d.rho[k]),
                    level,
                    class,
                }
            })
            .collect();
        let names = |ks: &[usize]| ks.iter().map(|&k| net.reactions[k].name.clone()).collect();
        let levels = d
            .levels
            .iter()
            .map(|l| LevelRow {
                index: l.level.index,
                m: format_rational(&l.level.m),
                generator: format!("{:?}", l.generator.kind),
                jump_class: names(&l.level.jump_class),
                drift_class: names(&l.level.drift_class),
                basis: rat_rows(&l.range.rational_directions),
                alpha: l.range.alpha_of.iter().map(format_rational).collect(),
            })
            .collect();
        AnalysisReport {
            network: net.name.clone(),
            species: net.species.iter().map(|s| s.name.clone()).collect(),
            n: m.scaling.n,
            gamma_declared: format_rational(&self.spec.scaling.gamma),
            gamma: format_rational(&m.scaling.gamma),
            reactions,
            levels,
            constants: rat_rows(&d.constants.rational_directions),
            projections: d.projections.iter().map(|p| rat_rows(p)).collect(),
            strategy: format!("{:?}", self.correction.averaged.strategy),
            p: format_rational(&self.correction.p),
            bounds: self.correction.bounds.clone(),
            binding: self.correction.binding.clone(),
            g0_terms: self
                .correction
                .g0_terms
                .iter()
                .map(|&(l, k)| (m.component_names()[l].clone(), net.reactions[k].name.clone()))
                .collect(),
            g1_ledger: self.correction.g1_ledger.clone(),
            cancellation: self.cancellation.clone(),
            warnings: self.warnings.clone(),
        }
    }

    /// Averaged drift, Jacobian, diffusion matrix and its square root at each point.
    pub fn coefficient_grid(&self, points: &[Vec<f64>]) -> Result<Vec<GridRow>> {
        let a = &self.correction.averaged;
        points
            .iter()
            .map(|v| {
                let flat = |m: nalgebra::DMatrix<f64>| -> Vec<f64> {
                    (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<f64>>()).collect()
                };
                Ok(GridRow {
                    v0: v.clone(),
                    drift: a.f_bar(v)?.iter().copied().collect(),
                    jacobian: flat(a.jacobian(v)?),
                    diffusion: flat(self.correction.g_bar(v)?),
                    sigma: flat(self.correction.sigma(v)?),
                })
            })
            .collect()
    }

    /// Points along slow coordinate `axis` from `lo` to `hi`, other coordinates at their initial values.
    pub fn axis_points(&self, axis: usize, lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
        let base = self.model().initial_slow();
        let n = n.max(2);
        (0..n)
            .map(|i| {
                let mut v = base.clone();
                v[axis] = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                v
            })
            .collect()
    }
}
