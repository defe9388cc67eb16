//! The `analyze` command: text report, JSON and coefficient tables.

use std::fmt::Write as _;
use std::path::Path;

use mscale::analysis::{AnalysisReport, GridRow};
use mscale::sim::fmt_num;
use mscale::analyze as run_pipeline;
use serde::Serialize;

use crate::failure::Failure;
use crate::output::{Manifest, OutDir};
use crate::run::parse_grid;
use crate::source::Source;

const DEFAULT_GRID: (f64, f64, usize) = (0.0, 2.0, 21);

#[derive(Serialize)]
struct Settings<'a> {
    axis: &'a str,
    grid: (f64, f64, usize),
}

#[derive(Serialize)]
struct JsonReport<'a> {
    #[serde(flatten)]
    report: &'a AnalysisReport,
    axis: &'a str,
    grid: &'a [GridRow],
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |out: &mut String, cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "  {}", padded.join("  ").trim_end());
    };
    line(out, &header.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    for r in rows {
        line(out, r);
    }
}

fn rational_rows(out: &mut String, rows: &[Vec<String>]) {
    for r in rows {
        let _ = writeln!(out, "    [{}]", r.join(", "));
    }
}

pub fn render(r: &AnalysisReport, names: &[String], axis: &str, grid: &[GridRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "network {}  (N = {}, species {})", r.network, r.n, r.species.join(" "));
    let _ = writeln!(out, "time scale exponent: declared {}, chosen {}", r.gamma_declared, r.gamma);
    out.push_str("\nreactions\n");
    let rows: Vec<Vec<String>> = r
        .reactions
        .iter()
        .map(|x| {
            let level = x.level.map_or("-".to_string(), |l| l.to_string());
            vec![x.name.clone(), x.rho_declared.clone(), x.rho.clone(), level, x.class.clone()]
        })
        .collect();
    table(&mut out, &["reaction", "rate exponent", "rescaled", "level", "class"], &rows);
    out.push_str("\nlevels (0 is slowest)\n");
    for l in &r.levels {
        let _ = writeln!(out, "  level {}: m = {}, limit {}", l.index, l.m, l.generator);
        let _ = writeln!(out, "    jump reactions: {}", if l.jump_class.is_empty() { "-".into() } else { l.jump_class.join(" ") });
        let _ = writeln!(out, "    drift reactions: {}", if l.drift_class.is_empty() { "-".into() } else { l.drift_class.join(" ") });
        let _ = writeln!(out, "    basis (abundance exponents {}):", l.alpha.join(" "));
        rational_rows(&mut out, &l.basis);
    }
    if !r.constants.is_empty() {
        out.push_str("  conserved directions:\n");
        rational_rows(&mut out, &r.constants);
    }
    out.push_str("\nprojections\n");
    for (i, p) in r.projections.iter().enumerate() {
        let label = ["slow and conserved", "level 1", "level 2"][i.min(2)];
        let _ = writeln!(out, "  {label}:");
        rational_rows(&mut out, p);
    }
    let _ = writeln!(out, "\nfast equilibrium: {}", r.strategy);
    let _ = writeln!(out, "fluctuation magnification: r_N = N^{}", r.p);
    for b in &r.bounds {
        let v = b.value.map_or("unbounded".to_string(), |q| mscale::rational::format_rational(&q));
        let mark = if r.binding.contains(&b.name) { "  (binding)" } else { "" };
        let _ = writeln!(out, "  bound {}: {v}{mark}", b.name);
    }
    out.push_str("first-order drift correction: ");
    if r.g0_terms.is_empty() {
        out.push_str("none\n");
    } else {
        let terms: Vec<String> = r.g0_terms.iter().map(|(c, k)| format!("{c} from {k}")).collect();
        let _ = writeln!(out, "{}", terms.join(", "));
    }
    out.push_str("second-order drift correction: ");
    if r.g1_ledger.is_empty() {
        out.push_str("none\n");
    } else {
        out.push('\n');
        for t in &r.g1_ledger {
            let _ = writeln!(out, "  level {} {} {:?} {:?}", t.level, t.reaction, t.kind, t.status);
        }
    }
    let dev: Vec<String> = r.cancellation.n.iter().zip(&r.cancellation.deviation).map(|(n, d)| format!("N={n}: {d:.3e}")).collect();
    let _ = writeln!(out, "rescaled drift error check: {}{}", dev.join(", "), if r.cancellation.flagged { "  FLAGGED" } else { "" });
    let _ = writeln!(out, "\naveraged coefficients along {axis}");
    let d = names.len();
    let mut header = vec![axis.to_string()];
    for n in names {
        header.push(format!("drift {n}"));
    }
    for i in 0..d {
        for j in i..d {
            header.push(if d == 1 { "diffusion".into() } else { format!("diffusion {}{}", names[i], names[j]) });
        }
    }
    let idx = names.iter().position(|n| n == axis).unwrap_or(0);
    let rows: Vec<Vec<String>> = grid
        .iter()
        .map(|g| {
            let mut row = vec![format!("{:.4}", g.v0[idx])];
            row.extend(g.drift.iter().map(|x| format!("{x:.6}")));
            for i in 0..d {
                for j in i..d {
                    row.push(format!("{:.6}", g.diffusion[i * d + j]));
                }
            }
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    table(&mut out, &header, &rows);
    if !r.warnings.is_empty() {
        out.push_str("\nwarnings\n");
        for w in &r.warnings {
            let _ = writeln!(out, "  {w}");
        }
    }
    out
}

/// Column names: bare for one slow coordinate, suffixed otherwise.
fn columns(prefix: &str, names: &[String], pairs: bool) -> Vec<String> {
    let d = names.len();
    if d == 1 {
        return vec![prefix.to_string()];
    }
    if pairs {
        names.iter().flat_map(|a| names.iter().map(move |b| format!("{prefix}_{a}_{b}"))).collect()
    } else {
        names.iter().map(|a| format!("{prefix}_{a}")).collect()
    }
}

fn csv(header: Vec<String>, grid: &[GridRow], pick: impl Fn(&GridRow) -> Vec<&[f64]>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for g in grid {
        let cells: Vec<String> = pick(g).into_iter().flatten().map(|x| fmt_num(*x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn drift_csv(names: &[String], grid: &[GridRow]) -> String {
    let mut header = columns("v0", names, false);
    header.extend(columns("Fbar", names, false));
    header.extend(columns("dFbar", names, true));
    csv(header, grid, |g| vec![&g.v0, &g.drift, &g.jacobian])
}

pub fn diffusion_csv(names: &[String], grid: &[GridRow]) -> String {
    let mut header = columns("v0", names, false);
    header.extend(columns("Gbar", names, true));
    header.extend(columns("sigma", names, true));
    csv(header, grid, |g| vec![&g.v0, &g.diffusion, &g.sigma])
}

pub fn analyze(src: &Source, grid: Option<&str>, axis: Option<&str>, out: Option<&Path>, json: bool) -> Result<(), Failure> {
    let (lo, hi, n) = grid.map(parse_grid).transpose()?.unwrap_or(DEFAULT_GRID);
    let a = run_pipeline(&src.spec)?;
    let names = a.model().component_names();
    let index = match axis {
        Some(name) => names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Failure::usage(format!("no slow coordinate `{name}` (have {})", names.join(", "))))?,
        None => 0,
    };
    let rows = a.coefficient_grid(&a.axis_points(index, lo, hi, n))?;
    let report = a.report();
    let text = render(&report, &names, &names[index], &rows);
    let json_text = serde_json::to_string_pretty(&JsonReport { report: &report, axis: &names[index], grid: &rows })
        .expect("report serializes")
        + "\n";
    match out {
        Some(dir) => {
            let mut d = OutDir::create(dir)?;
            d.write("report.txt", &text)?;
            d.write("report.json", &json_text)?;
            d.write("drift.csv", &drift_csv(&names, &rows))?;
            d.write("diffusion.csv", &diffusion_csv(&names, &rows))?;
            let settings = serde_json::to_value(Settings { axis: &names[index], grid: (lo, hi, n) }).expect("settings serialize");
            d.finish(Manifest::new("analyze", &src.label, &src.text, settings))?;
        }
        None if json => print!("{json_text}"),
        None => print!("{text}"),
    }
    Ok(())
}
