//! Ensemble commands: simulate, compare and absorb, with reproducible manifests.

use std::path::{Path, PathBuf};

use clap::Args;
use mscale::ensemble::{
    absorption_probability, compare_report, run_ensemble, AbsorptionConfig, Comparison, EnsembleSummary, Engine, Method,
    RunConfig, Scale,
};
use mscale::sim::ssa::DEFAULT_EVENT_CAP;
use mscale::sim::{fmt_num, SsaMethod};
use mscale::{analyze, Analysis};
use serde::{Deserialize, Serialize};

use crate::failure::{Failure, USAGE};
use crate::output::{Manifest, OutDir};
use crate::source::{self, blob_hash, Source};
use crate::SourceArgs;

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Master seed (the network's own when absent).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of paths (100, or 1000 for absorb).
    #[arg(long)]
    pub runs: Option<usize>,
    /// End time (the network's own when absent).
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Integration step for the ODE and stochastic integrators.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Output times as 0:t_end:n.
    #[arg(long)]
    pub grid: Option<String>,
    /// Report normalized abundances instead of molecule counts.
    #[arg(long)]
    pub normalized: bool,
    /// Leave out paths on which the first slow component dies out.
    #[arg(long)]
    pub filter_survivors: bool,
    /// Halve the step until ensemble means settle.
    #[arg(long)]
    pub auto_dt: bool,
    /// Next-reaction method for exact simulation.
    #[arg(long)]
    pub next_reaction: bool,
    /// Maximum number of events per exact path.
    #[arg(long)]
    pub event_cap: Option<u64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AbsorbSettings {
    pub k: f64,
    pub threshold: f64,
}

/// Everything that determines a command's output.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Settings {
    pub methods: Vec<String>,
    pub runs: usize,
    pub t_end: f64,
    pub grid_points: usize,
    pub seed: u64,
    pub dt: Option<f64>,
    pub auto_dt: bool,
    pub normalized: bool,
    pub filter_survivors: bool,
    pub next_reaction: bool,
    pub event_cap: u64,
    #[serde(default)]
    pub paths: usize,
    #[serde(default)]
    pub absorb: Option<AbsorbSettings>,
}

pub struct Job {
    pub command: String,
    pub source: Source,
    pub settings: Settings,
}

/// Parses `lo:hi:n`.
pub fn parse_grid(text: &str) -> Result<(f64, f64, usize), Failure> {
    let bad = || Failure::usage(format!("grid `{text}` is not lo:hi:n with lo < hi and n >= 2"));
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else { return Err(bad()) };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi && n >= 2) {
        return Err(bad());
    }
    Ok((lo, hi, n))
}

fn method(name: &str) -> Result<Method, Failure> {
    name.trim().parse::<Method>().map_err(Failure::from)
}

fn settings(src: &Source, methods: Vec<String>, run: &RunArgs, default_runs: usize) -> Result<Settings, Failure> {
    for m in &methods {
        method(m)?;
    }
    let defaults = &src.spec.defaults;
    let mut t_end = run.t_end.or(defaults.t_end).unwrap_or(1.0);
    let mut grid_points = 200;
    if let Some(g) = &run.grid {
        let (lo, hi, n) = parse_grid(g)?;
        if lo != 0.0 {
            return Err(Failure::usage("time grids start at 0"));
        }
        if run.t_end.is_some_and(|t| t != hi) {
            return Err(Failure::usage("--t-end and the end of --grid disagree"));
        }
        t_end = hi;
        grid_points = n;
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Failure::usage("end time must be positive"));
    }
    if run.dt.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
        return Err(Failure::usage("--dt must be positive"));
    }
    let runs = run.runs.unwrap_or(default_runs);
    if runs == 0 {
        return Err(Failure::usage("--runs must be at least 1"));
    }
    Ok(Settings {
        methods,
        runs,
        t_end,
        grid_points,
        seed: run.seed.or(defaults.seed).unwrap_or(0),
        dt: run.dt,
        auto_dt: run.auto_dt,
        normalized: run.normalized,
        filter_survivors: run.filter_survivors,
        next_reaction: run.next_reaction,
        event_cap: run.event_cap.unwrap_or(DEFAULT_EVENT_CAP),
        paths: 0,
        absorb: None,
    })
}

impl Job {
    pub fn simulate(source: &SourceArgs, method: &str, run: &RunArgs, paths: usize) -> Result<Job, Failure> {
        let src = source::load(source)?;
        let mut settings = settings(&src, vec![method.to_string()], run, 100)?;
        settings.paths = paths;
        Ok(Job { command: "simulate".into(), source: src, settings })
    }

    pub fn compare(source: &SourceArgs, methods: &[String], run: &RunArgs) -> Result<Job, Failure> {
        let src = source::load(source)?;
        if methods.is_empty() {
            return Err(Failure::usage("no methods to compare"));
        }
        let settings = settings(&src, methods.to_vec(), run, 100)?;
        Ok(Job { command: "compare".into(), source: src, settings })
    }

    pub fn absorb(source: &SourceArgs, method: &str, k: f64, threshold: f64, run: &RunArgs) -> Result<Job, Failure> {
        let src = source::load(source)?;
        if !(k >= 0.0 && threshold > 0.0) {
            return Err(Failure::usage("--k must be non-negative and --threshold positive"));
        }
        let mut settings = settings(&src, vec![method.to_string()], run, 1000)?;
        settings.absorb = Some(AbsorbSettings { k, threshold });
        Ok(Job { command: "absorb".into(), source: src, settings })
    }

    pub fn from_manifest(path: &Path, command: &str) -> Result<Job, Failure> {
        let text = source::read(path)?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        if m.command != command {
            return Err(Failure::usage(format!("manifest records `{}`, not `{command}`", m.command)));
        }
        if blob_hash(m.network.text.as_bytes()) != m.network.blob_sha256 {
            return Err(Failure::usage("manifest network text does not match its hash"));
        }
        let src = source::parse(&m.network.source, m.network.text)?;
        let settings: Settings =
            serde_json::from_value(m.settings).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        Ok(Job { command: command.into(), source: src, settings })
    }

    fn config(&self, method: Method) -> RunConfig {
        let s = &self.settings;
        let mut cfg = RunConfig::new(method, s.runs, s.t_end, s.seed);
        cfg.grid_points = s.grid_points;
        cfg.dt = s.dt;
        cfg.auto_dt = s.auto_dt;
        cfg.scale = if s.normalized { Scale::Normalized } else { Scale::Counts };
        cfg.filter_survivors = s.filter_survivors;
        cfg.ssa_method = if s.next_reaction { SsaMethod::NextReaction } else { SsaMethod::Direct };
        cfg.event_cap = s.event_cap;
        cfg
    }

    fn manifest(&self) -> Manifest {
        let settings = serde_json::to_value(&self.settings).expect("settings serialize");
        Manifest::new(&self.command, &self.source.label, &self.source.text, settings)
    }
}

/// Sample paths side by side: one column per component and path.
fn paths_csv(engine: &Engine, count: usize) -> Result<String, Failure> {
    let paths = (0..count as u64).map(|i| engine.path(i)).collect::<mscale::Result<Vec<_>>>()?;
    let mut out = String::from("t");
    for i in 0..count {
        for n in engine.names() {
            out.push_str(&format!(",{n}_{i}"));
        }
    }
    out.push('\n');
    for (k, t) in engine.grid().iter().enumerate() {
        out.push_str(&fmt_num(*t));
        for p in &paths {
            // Paths stopped early repeat their last state.
            let row = p.states.get(k).or(p.states.last()).expect("path has a state");
            for v in row {
                out.push(',');
                out.push_str(&fmt_num(*v));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

fn deviations_csv(c: &Comparison) -> String {
    let mut out = format!("reference,{}\nmethod,component,mean_gap,std_gap,max_z\n", c.reference);
    for d in &c.deviations {
        out.push_str(&format!("{},{},{},{},{}\n", d.method, d.component, fmt_num(d.mean), fmt_num(d.std), fmt_num(d.z)));
    }
    out
}

fn summary_note(s: &EnsembleSummary) -> String {
    let mut note = format!("{}: {} runs", s.method, s.runs);
    if s.failed > 0 {
        note.push_str(&format!(", {} failed", s.failed));
    }
    if s.excluded > 0 {
        note.push_str(&format!(", {} excluded by the survivor filter", s.excluded));
    }
    if let Some(dt) = s.dt {
        note.push_str(&format!(", step {dt}"));
    }
    note
}

fn run_job(job: &Job, a: &Analysis, out: Option<&Path>) -> Result<(), Failure> {
    let s = &job.settings;
    let mut dir = out.map(OutDir::create).transpose()?;
    match job.command.as_str() {
        "simulate" => {
            let cfg = job.config(method(&s.methods[0])?);
            let summary = run_ensemble(a, &cfg)?;
            eprintln!("{}", summary_note(&summary));
            match dir.as_mut() {
                Some(d) => {
                    d.write("summary.csv", &summary.to_csv())?;
                    if s.paths > 0 {
                        d.write("paths.csv", &paths_csv(&Engine::new(a, &cfg)?, s.paths)?)?;
                    }
                }
                None => print!("{}", summary.to_csv()),
            }
        }
        "compare" => {
            let mut summaries = Vec::new();
            for m in &s.methods {
                let summary = run_ensemble(a, &job.config(method(m)?))?;
                eprintln!("{}", summary_note(&summary));
                summaries.push(summary);
            }
            let c = compare_report(&summaries)?;
            match dir.as_mut() {
                Some(d) => {
                    d.write("comparison.csv", &c.to_csv())?;
                    d.write("deviations.csv", &deviations_csv(&c))?;
                    for sm in &summaries {
                        d.write(&format!("summary_{}.csv", sm.method), &sm.to_csv())?;
                    }
                }
                None => {
                    print!("{}", c.to_csv());
                    eprint!("{}", deviations_csv(&c));
                }
            }
        }
        "absorb" => {
            let ab = s.absorb.ok_or_else(|| Failure::usage("manifest lacks absorption settings"))?;
            let mut cfg = AbsorptionConfig::new(method(&s.methods[0])?, ab.k, s.runs, s.seed);
            cfg.upper = ab.threshold;
            cfg.dt = s.dt;
            cfg.ssa_method = if s.next_reaction { SsaMethod::NextReaction } else { SsaMethod::Direct };
            cfg.event_cap = s.event_cap;
            let record = absorption_probability(a, &cfg)?;
            let text = record.to_key_values();
            match dir.as_mut() {
                Some(d) => d.write("absorption.txt", &text)?,
                None => print!("{text}"),
            }
        }
        other => return Err(Failure::usage(format!("unknown command {other}"))),
    }
    if let Some(d) = dir {
        d.finish(job.manifest())?;
    }
    Ok(())
}

pub fn execute(job: &Job, out: Option<&Path>, threads: Option<usize>) -> Result<(), Failure> {
    let a = analyze(&job.source.spec)?;
    match threads {
        Some(0) => Err(Failure::usage("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Failure::new(USAGE, e))?;
            pool.install(|| run_job(job, &a, out))
        }
        None => run_job(job, &a, out),
    }
}

/// Reads a summary CSV written by `simulate`; the file stem labels the method.
pub fn read_summary(path: &Path) -> Result<EnsembleSummary, Failure> {
    let text = source::read(path)?;
    let bad = |msg: String| Failure::usage(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').collect();
    if header.first() != Some(&"t") {
        return Err(bad("first column must be t".into()));
    }
    let names: Vec<String> = header.iter().filter_map(|h| h.strip_prefix("mean_")).map(str::to_string).collect();
    if names.is_empty() {
        return Err(bad("no mean_ columns".into()));
    }
    let col = |name: &str| header.iter().position(|h| *h == name);
    let mut index = Vec::new();
    for n in &names {
        let mean = col(&format!("mean_{n}")).expect("found above");
        let std = col(&format!("std_{n}")).ok_or_else(|| bad(format!("missing std_{n}")))?;
        index.push((mean, std, col(&format!("se_{n}"))));
    }
    let d = names.len();
    let mut summary = EnsembleSummary {
        method: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        runs: 0,
        failed: 0,
        excluded: 0,
        dt: None,
        times: Vec::new(),
        names,
        mean: vec![Vec::new(); d],
        std: vec![Vec::new(); d],
        se: vec![Vec::new(); d],
        analytic_std: None,
        absorbed: None,
    };
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(format!("line {}: not a number", i + 2)))?;
        if row.len() != header.len() {
            return Err(bad(format!("line {}: {} fields, header has {}", i + 2, row.len(), header.len())));
        }
        summary.times.push(row[0]);
        for (c, &(m, s, se)) in index.iter().enumerate() {
            summary.mean[c].push(row[m]);
            summary.std[c].push(row[s]);
            summary.se[c].push(se.map_or(0.0, |j| row[j]));
        }
    }
    Ok(summary)
}

pub fn compare_files(paths: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let summaries = paths.iter().map(|p| read_summary(p)).collect::<Result<Vec<_>, _>>()?;
    let c = compare_report(&summaries)?;
    match out {
        Some(dir) => {
            let mut d = OutDir::create(dir)?;
            d.write("comparison.csv", &c.to_csv())?;
            d.write("deviations.csv", &deviations_csv(&c))?;
        }
        None => {
            print!("{}", c.to_csv());
            eprint!("{}", deviations_csv(&c));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parses_and_rejects() {
        assert_eq!(parse_grid("0:2.5:11").unwrap(), (0.0, 2.5, 11));
        for bad in ["0:1", "1:0:5", "0:1:1", "a:1:3", "0:1:3:4"] {
            assert_eq!(parse_grid(bad).unwrap_err().code, USAGE, "{bad}");
        }
    }

    #[test]
    fn summary_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ssa.csv");
        let text = "t,mean_G,std_G,se_G\n0.0,1.0,0.0,0.0\n0.5,2.0,0.5,0.1\n";
        std::fs::write(&path, text).unwrap();
        let s = read_summary(&path).unwrap();
        assert_eq!(s.method, "ssa");
        assert_eq!(s.to_csv(), text);
    }
}
