//! Self-contained SVG 1.1 line and scatter charts. Output depends only on the
//! input data, so identical inputs give byte-identical files.

use std::fmt::Write as _;

use crate::csvio::{ProfileRow, SweepRow};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// Viridis control points; fills are linear interpolations between them.
pub const RAMP: [(u8, u8, u8); 5] = [(68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMode {
    Profile,
    FdCurves,
    FdDensity,
}

impl std::str::FromStr for PlotMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "profile" => Ok(Self::Profile),
            "fd_curves" => Ok(Self::FdCurves),
            "fd_density" => Ok(Self::FdDensity),
            _ => Err(format!("unknown plot mode `{s}` (expected profile, fd_curves or fd_density)")),
        }
    }
}

/// Colour for `t ∈ [0, 1]` on [`RAMP`].
pub fn ramp(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let u = x - i as f64;
    let lerp = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * u).round() as u8;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    format!("#{:02x}{:02x}{:02x}", lerp(a.0, b.0), lerp(a.1, b.1), lerp(a.2, b.2))
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    step: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            let pad = (1e-3 * lo.abs()).max(1e-3);
            lo -= pad;
            hi += pad;
        }
        let step = nice_step((hi - lo) / 5.0);
        Self {
            lo: (lo / step).floor() * step,
            hi: (hi / step).ceil() * step,
            step,
        }
    }

    fn ticks(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step).round() as usize;
        (0..=n).map(|k| self.lo + k as f64 * self.step).collect()
    }

    fn decimals(&self) -> usize {
        (-self.step.log10().floor()).max(0.0) as usize
    }

    fn map(&self, v: f64, from: f64, to: f64) -> f64 {
        from + (v - self.lo) / (self.hi - self.lo) * (to - from)
    }
}

fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.log10().floor());
    let m = raw / mag;
    let nice = if m <= 1.0 {
        1.0
    } else if m <= 2.0 {
        2.0
    } else if m <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Series {
    label: String,
    color: String,
    points: Vec<(f64, f64)>,
    line: bool,
    /// Per-point marker fills; markers are drawn when present.
    fills: Option<Vec<String>>,
}

struct Chart {
    title: String,
    x_label: String,
    y_label: String,
    series: Vec<Series>,
    color_bar: Option<(String, f64, f64)>,
}

impl Chart {
    fn render(&self) -> String {
        let x = Axis::fit(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
        let y = Axis::fit(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (HEIGHT - BOTTOM, TOP);
        let px = |v: f64| x.map(v, x0, x1);
        let py = |v: f64| y.map(v, y0, y1);

        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            (x0 + x1) / 2.0,
            esc(&self.title)
        );

        s.push_str("<g id=\"axes\" stroke=\"black\" stroke-width=\"1\">\n");
        let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}"/>"#);
        let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/>"#);
        for t in x.ticks() {
            let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{y0:.2}" x2="{0:.2}" y2="{1:.2}"/>"#, px(t), y0 + 5.0);
        }
        for t in y.ticks() {
            let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{1:.2}" x2="{x0:.2}" y2="{1:.2}"/>"#, x0 - 5.0, py(t));
        }
        s.push_str("</g>\n<g id=\"tick-labels\">\n");
        for t in x.ticks() {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.*}</text>"#,
                px(t),
                y0 + 20.0,
                x.decimals(),
                t
            );
        }
        for t in y.ticks() {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.*}</text>"#,
                x0 - 8.0,
                py(t) + 4.0,
                y.decimals(),
                t
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 18.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="20" y="{0:.2}" text-anchor="middle" transform="rotate(-90 20 {0:.2})">{1}</text>"#,
            (y0 + y1) / 2.0,
            esc(&self.y_label)
        );
        s.push_str("</g>\n<g id=\"data\">\n");
        for series in &self.series {
            if series.line && series.points.len() > 1 {
                let pts: Vec<String> = series
                    .points
                    .iter()
                    .filter(|p| p.0.is_finite() && p.1.is_finite())
                    .map(|&(a, b)| format!("{:.2},{:.2}", px(a), py(b)))
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                    series.color,
                    pts.join(" ")
                );
            }
            if let Some(fills) = &series.fills {
                for (&(a, b), fill) in series.points.iter().zip(fills) {
                    if a.is_finite() && b.is_finite() {
                        let _ = writeln!(
                            s,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{fill}" stroke="{}" stroke-width="0.75"/>"#,
                            px(a),
                            py(b),
                            series.color
                        );
                    }
                }
            }
        }
        s.push_str("</g>\n<g id=\"legend\">\n");
        let lx = x1 + 20.0;
        let mut ly = TOP + 10.0;
        for series in self.series.iter().filter(|s| !s.label.is_empty()) {
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/>"#,
                lx + 20.0,
                series.color
            );
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, esc(&series.label));
            ly += 18.0;
        }
        if let Some((label, lo, hi)) = &self.color_bar {
            ly += 10.0;
            let _ = writeln!(s, r#"<text x="{lx:.2}" y="{ly:.2}">{}</text>"#, esc(label));
            ly += 8.0;
            let steps = 20;
            let h = 160.0 / steps as f64;
            for k in 0..steps {
                let t = 1.0 - (k as f64 + 0.5) / steps as f64;
                let _ = writeln!(
                    s,
                    r#"<rect x="{lx:.2}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
                    ly + k as f64 * h,
                    h + 0.01,
                    ramp(t)
                );
            }
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 22.0, ly + 10.0, fmt_tick(*hi));
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 22.0, ly + 160.0, fmt_tick(*lo));
            let _ = writeln!(s, r#"<text x="{lx:.2}" y="{:.2}" font-size="10">viridis ramp</text>"#, ly + 178.0);
        }
        s.push_str("</g>\n</svg>\n");
        s
    }
}

fn fmt_tick(v: f64) -> String {
    format!("{v:.4}")
}

/// `f_succ` against `r`.
pub fn profile_svg(rows: &[ProfileRow]) -> String {
    Chart {
        title: "Conditional fidelity profile".into(),
        x_label: "r = |α|".into(),
        y_label: "f_succ(r)".into(),
        series: vec![Series {
            label: "f_succ".into(),
            color: PALETTE[0].into(),
            points: rows.iter().map(|r| (r.r, r.f_succ)).collect(),
            line: true,
            fills: None,
        }],
        color_bar: None,
    }
    .render()
}

fn group_by_g(rows: &[SweepRow]) -> Vec<(f64, Vec<&SweepRow>)> {
    let mut groups: Vec<(f64, Vec<&SweepRow>)> = Vec::new();
    for row in rows.iter().filter(|r| !r.is_control()) {
        match groups.iter_mut().find(|(g, _)| *g == row.g) {
            Some((_, members)) => members.push(row),
            None => groups.push((row.g, vec![row])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, members) in &mut groups {
        members.sort_by(|a, b| a.m_c.total_cmp(&b.m_c));
    }
    groups
}

/// `D` against `F`, one polyline per gain ordered by cut-off.
pub fn fd_curves_svg(rows: &[SweepRow]) -> String {
    let mut series: Vec<Series> = group_by_g(rows)
        .into_iter()
        .enumerate()
        .map(|(i, (g, members))| Series {
            label: format!("g = {g}"),
            color: PALETTE[i % PALETTE.len()].into(),
            points: members.iter().map(|r| (r.f, r.d)).collect(),
            line: true,
            fills: Some(vec![PALETTE[i % PALETTE.len()].to_string(); members.len()]),
        })
        .collect();
    let control: Vec<&SweepRow> = rows.iter().filter(|r| r.is_control()).collect();
    if !control.is_empty() {
        series.push(Series {
            label: "accept-all".into(),
            color: "#000000".into(),
            points: control.iter().map(|r| (r.f, r.d)).collect(),
            line: false,
            fills: Some(vec!["#000000".into(); control.len()]),
        });
    }
    Chart {
        title: "Trade-off curves in the (F, D) plane".into(),
        x_label: "F".into(),
        y_label: "D".into(),
        series,
        color_bar: None,
    }
    .render()
}

/// Scatter of `(F, D)` with fill mapped linearly from `P_succ`.
pub fn fd_density_svg(rows: &[SweepRow]) -> String {
    let finite: Vec<f64> = rows.iter().map(|r| r.p_succ).filter(|p| p.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let t = |p: f64| if hi > lo { (p - lo) / (hi - lo) } else { 0.5 };
    Chart {
        title: "Joint trade-off density".into(),
        x_label: "F".into(),
        y_label: "D".into(),
        series: vec![Series {
            label: String::new(),
            color: "#333333".into(),
            points: rows.iter().map(|r| (r.f, r.d)).collect(),
            line: false,
            fills: Some(rows.iter().map(|r| ramp(t(r.p_succ))).collect()),
        }],
        color_bar: Some(("P_succ".into(), lo, hi)),
    }
    .render()
}
