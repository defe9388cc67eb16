//! Standalone SVG line plots of CSV tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::failure::Failure;
use crate::output::write_atomic;
use crate::source;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Half-width of a shaded band around the line.
    pub band: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct Table {
    header: Vec<String>,
    columns: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table, Failure> {
    let text = source::read(path)?;
    let bad = |msg: String| Failure::usage(format!("{}: {msg}", path.display()));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').map(|h| h.trim().to_string()).collect();
    if header.len() < 2 {
        return Err(bad("need an abscissa column and at least one value column".into()));
    }
    let mut columns = vec![Vec::new(); header.len()];
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(bad(format!("row {} has {} cells, header has {}", row + 2, cells.len(), header.len())));
        }
        for (col, cell) in columns.iter_mut().zip(cells) {
            col.push(cell.trim().parse::<f64>().map_err(|_| bad(format!("row {}: `{cell}` is not a number", row + 2)))?);
        }
    }
    if columns[0].is_empty() {
        return Err(bad("no data rows".into()));
    }
    Ok(Table { header, columns })
}

fn matches(name: &str, component: Option<&str>) -> bool {
    match component {
        None => true,
        Some(c) => name == c || name.strip_prefix(c).is_some_and(|rest| rest.starts_with('_')),
    }
}

/// Means with a matching `std_` column become banded lines; other value columns plain lines.
fn series_of(table: &Table, component: Option<&str>, prefix: Option<&str>) -> Vec<Series> {
    let col = |name: &str| table.header.iter().position(|h| h == name);
    let label = |name: &str| prefix.map_or(name.to_string(), |p| format!("{p}: {name}"));
    let x = &table.columns[0];
    let mut out = Vec::new();
    for (i, h) in table.header.iter().enumerate().skip(1) {
        if ["std_", "se_", "analytic_std_"].iter().any(|p| h.starts_with(p)) {
            continue;
        }
        let (name, band) = match h.strip_prefix("mean_") {
            Some(rest) => (rest, col(&format!("std_{rest}")).map(|j| table.columns[j].clone())),
            None => (h.as_str(), None),
        };
        if matches(name, component) {
            out.push(Series { label: label(name), x: x.clone(), y: table.columns[i].clone(), band });
        }
    }
    out
}

/// Round step for about `target` ticks across `span`.
fn tick_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac < 1.5 {
        1.0
    } else if frac < 3.0 {
        2.0
    } else if frac < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') { s[1..].to_string() } else { s }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render(series: &[Series], x_label: &str, title: &str) -> String {
    let finite = |v: &f64| v.is_finite();
    let xs = series.iter().flat_map(|s| s.x.iter().copied()).filter(finite);
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for s in series {
        for (i, &y) in s.y.iter().enumerate() {
            let w = s.band.as_ref().map_or(0.0, |b| b[i]);
            if (y - w).is_finite() && (y + w).is_finite() {
                y_lo = y_lo.min(y - w);
                y_hi = y_hi.max(y + w);
            }
        }
    }
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    let (x_lo, x_hi) = if x_hi > x_lo { (x_lo, x_hi) } else { padded_range(x_lo, x_hi) };
    let (y_lo, y_hi) = padded_range(y_lo, y_hi);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * pw;
    let py = |y: f64| TOP + (y_hi - y) / (y_hi - y_lo) * ph;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(title));

    let xs = tick_step(x_hi - x_lo, 6.0);
    let mut t = (x_lo / xs).ceil() * xs;
    while t <= x_hi + 1e-9 * xs {
        let x = px(t);
        let _ = writeln!(svg, r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#e5e5e5"/>"##, TOP + ph);
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, tick_label(t, xs));
        t += xs;
    }
    let ys = tick_step(y_hi - y_lo, 6.0);
    let mut t = (y_lo / ys).ceil() * ys;
    while t <= y_hi + 1e-9 * ys {
        let y = py(t);
        let _ = writeln!(svg, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e5e5e5"/>"##, LEFT + pw);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, tick_label(t, ys));
        t += ys;
    }
    let _ = writeln!(svg, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0, escape(x_label));

    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<(f64, f64)> = s.x.iter().zip(&s.y).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(&x, &y)| (x, y)).collect();
        if let Some(b) = &s.band {
            let upper = s.x.iter().zip(&s.y).zip(b).map(|((&x, &y), &w)| (x, y + w));
            let lower: Vec<(f64, f64)> = s.x.iter().zip(&s.y).zip(b).map(|((&x, &y), &w)| (x, y - w)).collect();
            let ring: Vec<String> = upper
                .chain(lower.into_iter().rev())
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(svg, r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#, ring.join(" "));
        }
        let line: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"/>"#, line.join(" "));
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(svg, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 24.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn command(inputs: &[PathBuf], component: Option<&str>, title: Option<&str>, out: Option<&Path>) -> Result<(), Failure> {
    let several = inputs.len() > 1;
    let mut series = Vec::new();
    let mut x_label = String::new();
    for path in inputs {
        let table = read_table(path)?;
        if x_label.is_empty() {
            x_label = table.header[0].clone();
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        series.extend(series_of(&table, component, several.then_some(stem.as_str())));
    }
    if series.is_empty() {
        return Err(Failure::usage(match component {
            Some(c) => format!("no columns for component `{c}`"),
            None => "no value columns to plot".into(),
        }));
    }
    let default_title = inputs.iter().filter_map(|p| p.file_name()).map(|s| s.to_string_lossy()).collect::<Vec<_>>().join(", ");
    let svg = render(&series, &x_label, title.unwrap_or(&default_title));
    match out {
        Some(path) => write_atomic(path, svg.as_bytes()),
        None => {
            print!("{svg}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Table {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, text).unwrap();
        read_table(&p).unwrap()
    }

    #[test]
    fn mean_and_std_pair_into_a_band() {
        let t = table("t,mean_S_ssa,std_S_ssa,se_S_ssa,mean_S_ode,std_S_ode\n0,1,0.5,0.1,1,0\n1,2,0.5,0.1,2,0\n");
        let s = series_of(&t, None, None);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].label, "S_ssa");
        assert_eq!(s[0].band.as_deref(), Some(&[0.5, 0.5][..]));
        assert!(series_of(&t, Some("P"), None).is_empty());
        assert_eq!(series_of(&t, Some("S"), None).len(), 2);
    }

    #[test]
    fn ticks_are_round() {
        assert_eq!(tick_step(1.0, 6.0), 0.2);
        assert_eq!(tick_step(100.0, 6.0), 20.0);
        assert_eq!(tick_step(7.0, 6.0), 1.0);
    }
}
