//! Deterministic SVG rendering of report, ratio and trajectory CSVs.

use crate::report::{ReportRow, REPORT_COLUMNS, TRAJECTORY_COLUMNS};
use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// A named series of `(x, y)` points.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// One bar group per category, one bar per series.
#[derive(Clone, Debug, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub x_label: String,
    pub categories: Vec<String>,
    /// `(series name, value per category)`; `None` leaves a gap.
    pub series: Vec<(String, Vec<Option<f64>>)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + W - RIGHT) / 2.0, esc(title));
    s
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 12.0;
        let _ = writeln!(s, r#"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{}"/>"#, y - 10.0, PALETTE[i % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}">{}</text>"#, x + 18.0, esc(name));
    }
}

fn axes(s: &mut String, x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (LEFT, H - BOTTOM, W - RIGHT, TOP);
    let _ = writeln!(s, r#"<path d="M{x0:.1} {y1:.1} L{x0:.1} {y0:.1} L{x1:.1} {y0:.1}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 15.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(y_label)
    );
}

/// Grouped bar chart with a fixed `[0, 1]` value axis.
pub fn bar_chart_svg(chart: &BarChart) -> String {
    let mut s = header(&chart.title);
    axes(&mut s, &chart.x_label, "success rate");
    let plot_h = H - BOTTOM - TOP;
    let plot_w = W - RIGHT - LEFT;
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let y = H - BOTTOM - v * plot_h;
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{LEFT:.1}" y2="{y:.1}" stroke="black"/>"#, LEFT - 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, LEFT - 6.0, y + 4.0);
    }
    let groups = chart.categories.len().max(1) as f64;
    let group_w = plot_w / groups;
    let bars = chart.series.len().max(1) as f64;
    let bar_w = group_w * 0.8 / bars;
    for (c, cat) in chart.categories.iter().enumerate() {
        let gx = LEFT + group_w * c as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, gx + group_w / 2.0, H - BOTTOM + 18.0, esc(cat));
        for (i, (_, vals)) in chart.series.iter().enumerate() {
            let Some(v) = vals.get(c).copied().flatten() else { continue };
            let h = v.clamp(0.0, 1.0) * plot_h;
            let x = gx + group_w * 0.1 + bar_w * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{bar_w:.1}" height="{h:.1}" fill="{}"><title>{v:.3}</title></rect>"#,
                H - BOTTOM - h,
                PALETTE[i % PALETTE.len()]
            );
        }
    }
    let names: Vec<&str> = chart.series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

/// Line plot with a logarithmic value axis; non-positive values are dropped.
pub fn log_line_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    let pts: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).filter(|p| p.1 > 0.0 && p.1.is_finite()).collect();
    if pts.is_empty() {
        bail!("no positive values to plot for {title}");
    }
    let (xmin, xmax) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (lmin, lmax) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1.log10()), b.max(p.1.log10())));
    let (dlo, dhi) = (lmin.floor(), lmax.ceil().max(lmin.floor() + 1.0));
    let xspan = if xmax > xmin { xmax - xmin } else { 1.0 };
    let plot_h = H - BOTTOM - TOP;
    let plot_w = W - RIGHT - LEFT;
    let px = |x: f64| LEFT + (x - xmin) / xspan * plot_w;
    let py = |y: f64| H - BOTTOM - (y.log10() - dlo) / (dhi - dlo) * plot_h;

    let mut s = header(title);
    axes(&mut s, x_label, y_label);
    let mut d = dlo;
    while d <= dhi {
        let y = H - BOTTOM - (d - dlo) / (dhi - dlo) * plot_h;
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{LEFT:.1}" y2="{y:.1}" stroke="black"/>"#, LEFT - 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{}</text>"#, LEFT - 6.0, y + 4.0, d as i64);
        d += 1.0;
    }
    for k in 0..=4 {
        let x = xmin + xspan * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px(x), H - BOTTOM + 18.0, format_tick(x));
    }
    for (i, ser) in series.iter().enumerate() {
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.1 > 0.0 && p.1.is_finite())
            .enumerate()
            .map(|(j, p)| format!("{}{:.1} {:.1}", if j == 0 { "M" } else { "L" }, px(p.0), py(p.1)))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#, path.join(" "), PALETTE[i % PALETTE.len()]);
        }
    }
    let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    Ok(s)
}

fn format_tick(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e9 {
        format!("{}", x as i64)
    } else {
        format!("{x:.3}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Report,
    Ratio,
    Trajectory,
}

fn kind_of(headers: &csv::StringRecord) -> Result<Kind> {
    let h: Vec<&str> = headers.iter().collect();
    Ok(if h == REPORT_COLUMNS {
        Kind::Report
    } else if h == TRAJECTORY_COLUMNS {
        Kind::Trajectory
    } else if h == ["trial", "iter", "ratio"] {
        Kind::Ratio
    } else {
        bail!("unrecognised CSV header: {}", h.join(","))
    })
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "series".to_string(), |s| s.to_string_lossy().into_owned())
}

/// Mean of `column` per iteration across trials.
fn mean_series(path: &Path, column: &str) -> Result<Series> {
    let mut rdr = csv::Reader::from_path(path)?;
    let idx = rdr.headers()?.iter().position(|h| h == column).context("missing column")?;
    let iter_idx = rdr.headers()?.iter().position(|h| h == "iter").context("missing iter column")?;
    let mut acc: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let it: u64 = rec[iter_idx].parse().with_context(|| format!("bad iter in {}", path.display()))?;
        if rec[idx].is_empty() {
            continue;
        }
        let v: f64 = rec[idx].parse().with_context(|| format!("bad {column} in {}", path.display()))?;
        let e = acc.entry(it).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    Ok(Series { name: stem(path), points: acc.into_iter().map(|(k, (s, c))| (k as f64, s / c as f64)).collect() })
}

fn arm_name(rows: &[ReportRow], path: &Path) -> String {
    let arm = if rows.iter().all(|r| r.l.is_none()) { "unlifted" } else { "lifted" };
    let algs: Vec<&str> = {
        let mut a: Vec<&str> = rows.iter().map(|r| r.algorithm.as_str()).collect();
        a.dedup();
        a
    };
    if algs.len() == 1 && !stem(path).contains(arm) {
        format!("{arm} {}", algs[0])
    } else {
        arm.to_string()
    }
}

/// Success-rate charts, one per sweep variable that varies across rows.
pub fn report_charts(inputs: &[(String, Vec<ReportRow>)]) -> Vec<(String, BarChart)> {
    let all: Vec<&ReportRow> = inputs.iter().flat_map(|(_, rows)| rows.iter()).collect();
    type Getter = fn(&ReportRow) -> String;
    let vars: [(&str, Getter); 5] = [
        ("n", |r| r.n.to_string()),
        ("r", |r| r.r.to_string()),
        ("m", |r| r.m.to_string()),
        ("epsilon", |r| format!("{:e}", r.epsilon)),
        ("algorithm", |r| r.algorithm.clone()),
    ];
    let distinct = |key: &dyn Fn(&ReportRow) -> String| {
        let mut vals: Vec<String> = all.iter().map(|r| key(r)).collect();
        vals.sort();
        vals.dedup();
        vals.len()
    };
    // A variable that is a relabelling of one already chosen (m = n² for
    // completion) gets no chart of its own.
    let mut varying: Vec<(&str, Getter)> = Vec::new();
    for &(name, g) in &vars {
        let k = distinct(&g);
        let redundant = varying.iter().any(|&(_, p)| distinct(&|r| format!("{}\u{1f}{}", p(r), g(r))) == k && distinct(&p) == k);
        if k > 1 && !redundant {
            varying.push((name, g));
        }
    }
    if varying.is_empty() {
        varying.push(vars[0]);
    }
    let mut out = Vec::new();
    for (var, get) in varying {
        let mut categories: Vec<String> = Vec::new();
        for r in &all {
            let c = get(r);
            if !categories.contains(&c) {
                categories.push(c);
            }
        }
        let series = inputs
            .iter()
            .map(|(name, rows)| {
                let vals = categories
                    .iter()
                    .map(|c| {
                        let sel: Vec<&ReportRow> = rows.iter().filter(|r| &get(r) == c).collect();
                        (!sel.is_empty()).then(|| sel.iter().filter(|r| r.success).count() as f64 / sel.len() as f64)
                    })
                    .collect();
                (name.clone(), vals)
            })
            .collect();
        out.push((
            format!("success_by_{var}.svg"),
            BarChart { title: format!("Success rate by {var}"), x_label: var.to_string(), categories, series },
        ));
    }
    out
}

/// Render every input CSV into SVG files under `out`; returns their paths.
pub fn plot_files(inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        bail!("plot needs at least one CSV input");
    }
    let mut reports = Vec::new();
    let mut ratios = Vec::new();
    let mut trajectories = Vec::new();
    for path in inputs {
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        match kind_of(rdr.headers()?)? {
            Kind::Report => {
                let rows: Vec<ReportRow> = rdr.deserialize().collect::<Result<_, _>>().with_context(|| format!("reading {}", path.display()))?;
                if rows.is_empty() {
                    bail!("{} has no rows", path.display());
                }
                reports.push((arm_name(&rows, path), rows));
            }
            Kind::Ratio => ratios.push(mean_series(path, "ratio")?),
            Kind::Trajectory => trajectories.push(mean_series(path, "loss")?),
        }
    }
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, body: String| -> Result<()> {
        let p = out.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    if !reports.is_empty() {
        for (name, chart) in report_charts(&reports) {
            emit(&name, bar_chart_svg(&chart))?;
        }
    }
    if !ratios.is_empty() {
        emit("ratio.svg", log_line_svg("Deflation ratio", "iteration", "ratio", &ratios)?)?;
    }
    if !trajectories.is_empty() {
        emit("loss.svg", log_line_svg("Loss", "iteration", "mean loss", &trajectories)?)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n: usize, l: Option<usize>, success: bool) -> ReportRow {
        ReportRow {
            experiment: "pmc".into(),
            n,
            r: 1,
            m: n * n,
            l,
            epsilon: 1e-7,
            algorithm: "custom_gd".into(),
            seed: 0,
            trial: 0,
            success,
            recovery_error: Some(0.1),
            iters: 10,
            wall_ms: None,
        }
    }

    #[test]
    fn one_chart_per_varying_variable() {
        let lifted = vec![row(8, Some(3), true), row(10, Some(3), false)];
        let unlifted = vec![row(8, None, false), row(10, None, false)];
        let charts = report_charts(&[("lifted".into(), lifted), ("unlifted".into(), unlifted)]);
        assert_eq!(charts.len(), 1);
        let (name, chart) = &charts[0];
        assert_eq!(name, "success_by_n.svg");
        assert_eq!(chart.categories, ["8", "10"]);
        assert_eq!(chart.series[0].1, [Some(1.0), Some(0.0)]);
        let svg = bar_chart_svg(chart);
        assert!(svg.contains("lifted") && svg.contains("unlifted"));
        assert_eq!(svg, bar_chart_svg(chart));
    }

    #[test]
    fn log_plot_is_deterministic_and_skips_nonpositive() {
        let s = [
            Series { name: "a".into(), points: vec![(20.0, 0.5), (40.0, 0.01), (60.0, 0.0)] },
            Series { name: "b".into(), points: vec![(20.0, 0.3), (40.0, 0.2)] },
        ];
        let svg = log_line_svg("t", "x", "y", &s).unwrap();
        assert_eq!(svg, log_line_svg("t", "x", "y", &s).unwrap());
        assert_eq!(svg.matches("<path d=\"M").count(), 3);
        assert!(svg.contains("1e-2") && svg.contains("1e0"));
        assert!(log_line_svg("t", "x", "y", &[Series { name: "z".into(), points: vec![(1.0, 0.0)] }]).is_err());
    }

    #[test]
    fn empty_input_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(plot_files(&[], dir.path()).is_err());
        let p = dir.path().join("empty.csv");
        std::fs::write(&p, REPORT_COLUMNS.join(",") + "\n").unwrap();
        assert!(plot_files(&[p], dir.path()).is_err());
    }
}
