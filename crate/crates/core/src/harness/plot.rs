use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::trainer::csv_err;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// Success rate against step, one series per variant (or phase).
    Curves,
    /// Mean selected `k*` per state from a traces CSV.
    KstarMap,
}

impl FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curves" => Ok(PlotKind::Curves),
            "kstar-map" => Ok(PlotKind::KstarMap),
            _ => Err(Error::invalid(format!("unknown plot kind {s:?}; expected curves | kstar-map"))),
        }
    }
}

/// A CSV held as strings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let rows = rd
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(csv_err))
            .collect::<Result<_>>()?;
        Ok(Table { headers, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| Error::Format(format!("table has no column {name:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = hi - lo;
    let pad = if span > 0.0 { 0.1 * span } else if lo != 0.0 { 0.1 * lo.abs() } else { 1.0 };
    (lo - pad, hi + pad)
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, xml(title));
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line plot with markers. Axes span the data plus 10% padding on each side.
pub fn curves_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    let pts = || series.iter().flat_map(|s| s.points.iter());
    if pts().next().is_none() {
        return Err(Error::invalid("nothing to plot: empty table"));
    }
    if pts().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("plot coordinates".into()));
    }
    let (x0, x1) = padded_bounds(pts().map(|p| p.0));
    let (y0, y1) = padded_bounds(pts().map(|p| p.1));
    let (pw, ph) = (W - 2.0 * MARGIN, H - 2.0 * MARGIN);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * ph;
    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(out, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, sx(fx), H - MARGIN + 16.0, tick(fx));
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, MARGIN - 6.0, sy(fy) + 4.0, tick(fy));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, xml(x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        xml(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.points.len() > 1 {
            let path: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        }
        for &(x, y) in &s.points {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = MARGIN + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{color}" text-anchor="end">{}</text>"#,
            W - MARGIN - 6.0,
            xml(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn padded_bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = bounds(vals);
    padded(lo, hi)
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Grid of cells shaded by value, labelled with the value. `cells` is row
/// major with row 0 at the bottom; `None` cells are left blank.
pub fn heatmap_svg(title: &str, width: usize, height: usize, cells: &[Option<f64>]) -> Result<String> {
    if width == 0 || height == 0 || cells.len() != width * height {
        return Err(Error::Shape(format!("{} cells for a {width}x{height} grid", cells.len())));
    }
    let vals: Vec<f64> = cells.iter().flatten().copied().collect();
    if vals.is_empty() {
        return Err(Error::invalid("nothing to plot: empty table"));
    }
    let (lo, hi) = bounds(vals.into_iter());
    let side = ((W - 2.0 * MARGIN) / width as f64).min((H - 2.0 * MARGIN) / height as f64);
    let mut out = String::new();
    header(&mut out, title);
    for y in 0..height {
        for x in 0..width {
            let px = MARGIN + x as f64 * side;
            let py = MARGIN + (height - 1 - y) as f64 * side;
            let _ = write!(out, r#"<rect x="{px:.2}" y="{py:.2}" width="{side:.2}" height="{side:.2}" stroke="black" "#);
            match cells[y * width + x] {
                Some(v) => {
                    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                    let shade = (235.0 - 180.0 * t).round() as u8;
                    let _ = writeln!(out, r#"fill="rgb({shade},{shade},255)"/>"#);
                    let _ = writeln!(
                        out,
                        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.2}</text>"#,
                        px + side / 2.0,
                        py + side / 2.0 + 4.0
                    );
                }
                None => {
                    let _ = writeln!(out, r##"fill="#eeeeee"/>"##);
                }
            }
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn parse_f64(s: &str) -> Option<f64> {
    if s.is_empty() {
        None
    } else {
        s.parse().ok()
    }
}

/// Success curves grouped by `variant` (ablation tables) or `phase` (metrics),
/// averaged over seeds at equal steps.
pub fn curves_from_table(table: &Table) -> Result<Vec<Series>> {
    let x = table.require("step")?;
    let y = table.require("success_rate")?;
    let group = table.column("variant").or_else(|| table.column("phase"));
    let mut acc: Vec<(String, BTreeMap<u64, (f64, usize)>)> = Vec::new();
    for row in &table.rows {
        let (Some(sx), Some(sy)) = (parse_f64(&row[x]), parse_f64(&row[y])) else {
            continue;
        };
        let label = group.map(|g| row[g].clone()).unwrap_or_else(|| "success_rate".into());
        let idx = match acc.iter().position(|(l, _)| *l == label) {
            Some(i) => i,
            None => {
                acc.push((label, BTreeMap::new()));
                acc.len() - 1
            }
        };
        let e = acc[idx].1.entry(sx.to_bits()).or_insert((0.0, 0));
        e.0 += sy;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(label, m)| {
            let mut points: Vec<(f64, f64)> = m.into_iter().map(|(b, (s, n))| (f64::from_bits(b), s / n as f64)).collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { label, points }
        })
        .collect())
}

/// Mean `k_star` per state index from a traces table.
pub fn kstar_by_state(table: &Table, n_states: usize) -> Result<Vec<Option<f64>>> {
    let s = table.require("state")?;
    let k = table.require("k_star")?;
    let mut sum = vec![(0.0, 0usize); n_states];
    for row in &table.rows {
        let idx: usize = row[s].parse().map_err(|_| Error::Format(format!("state {:?} is not an index", row[s])))?;
        let kv: f64 = row[k].parse().map_err(|_| Error::Format(format!("k_star {:?}", row[k])))?;
        let slot = sum.get_mut(idx).ok_or_else(|| Error::Format(format!("state {idx} outside {n_states} states")))?;
        slot.0 += kv;
        slot.1 += 1;
    }
    Ok(sum.into_iter().map(|(t, n)| if n > 0 { Some(t / n as f64) } else { None }).collect())
}

/// Render `table` as SVG. `grid` gives the cell layout for `KstarMap`; without
/// it states are laid out in one row.
pub fn emit_plot(table: &Table, kind: PlotKind, grid: Option<(usize, usize)>, title: &str) -> Result<String> {
    if table.rows.is_empty() {
        return Err(Error::invalid("nothing to plot: empty table"));
    }
    match kind {
        PlotKind::Curves => curves_svg(title, "step", "success rate", &curves_from_table(table)?),
        PlotKind::KstarMap => {
            let (w, h) = match grid {
                Some(g) => g,
                None => {
                    let s = table.require("state")?;
                    let max = table.rows.iter().filter_map(|r| r[s].parse::<usize>().ok()).max().unwrap_or(0);
                    (max + 1, 1)
                }
            };
            heatmap_svg(title, w, h, &kstar_by_state(table, w * h)?)
        }
    }
}
