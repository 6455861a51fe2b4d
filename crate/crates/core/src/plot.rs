//! Density plots of the first principal component.
//!
//! PC1 projections are min-max scaled to `[0, 1]`, then one Gaussian KDE per
//! class or per group is drawn on a shared grid so curves can be compared
//! point by point. SVG is written by hand with fixed-precision numbers so
//! output is byte-stable.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, KdeCurve};
use crate::numerics::Matrix;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;

const PALETTE: [&str; 8] = [
    "#1f78b4", "#ff7f00", "#33a02c", "#e31a1c", "#6a3d9a", "#b15928", "#a6cee3", "#fb9a99",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Class,
    Group,
}

impl Attribute {
    pub fn name(self) -> &'static str {
        match self {
            Attribute::Class => "class",
            Attribute::Group => "group",
        }
    }
}

/// PC1 projections mapped to `[0, 1]` with the constants used.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledPc1 {
    pub values: Vec<f64>,
    pub pc1_min: f64,
    pub pc1_max: f64,
    pub explained_ratio: f64,
}

pub fn scaled_pc1(z: &Matrix) -> Result<ScaledPc1> {
    let pc = metrics::pca_pc1(z)?;
    let lo = pc.projections.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pc.projections.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 1e-12 * hi.abs().max(lo.abs()).max(1.0)) {
        return Err(Error::metric(format!("degenerate PC1 range [{lo}, {hi}]")));
    }
    Ok(ScaledPc1 {
        values: pc.projections.iter().map(|p| (p - lo) / range).collect(),
        pc1_min: lo,
        pc1_max: hi,
        explained_ratio: pc.explained_ratio,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub count: usize,
    pub kde: KdeCurve,
}

/// One KDE per distinct key, ascending by key, on a common grid spanning
/// `[−3h, 1 + 3h]` with `h` the largest per-curve bandwidth. Keys with fewer
/// than two members are skipped.
pub fn density_curves(
    values: &[f64],
    keys: &[usize],
    label: impl Fn(usize) -> String,
    bandwidth: Option<f64>,
    grid: usize,
) -> Result<Vec<Curve>> {
    if values.len() != keys.len() {
        return Err(Error::contract(format!("{} values but {} keys", values.len(), keys.len())));
    }
    if grid < 2 {
        return Err(Error::metric("kde grid needs at least 2 points"));
    }
    let mut distinct: Vec<usize> = keys.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let members: Vec<(usize, Vec<f64>)> = distinct
        .into_iter()
        .map(|k| (k, values.iter().zip(keys).filter(|(_, &kk)| kk == k).map(|(&v, _)| v).collect::<Vec<_>>()))
        .filter(|(_, v)| v.len() >= 2)
        .collect();
    if members.is_empty() {
        return Err(Error::metric("no key has at least 2 values"));
    }
    let hs = members
        .iter()
        .map(|(_, v)| bandwidth.map_or_else(|| metrics::silverman_bandwidth(v), Ok))
        .collect::<Result<Vec<f64>>>()?;
    let h_max = hs.iter().copied().fold(0.0, f64::max);
    let xs = metrics::linspace(-3.0 * h_max, 1.0 + 3.0 * h_max, grid);
    members
        .iter()
        .zip(hs)
        .map(|((k, v), h)| {
            Ok(Curve {
                label: label(*k),
                count: v.len(),
                kde: metrics::kde_on_grid(v, h, xs.clone())?,
            })
        })
        .collect()
}

/// Largest trapezoid L1 distance between any two curves on their shared
/// grid; 0 with fewer than two curves.
pub fn max_l1_gap(curves: &[Curve]) -> f64 {
    let mut gap: f64 = 0.0;
    for (i, a) in curves.iter().enumerate() {
        for b in &curves[i + 1..] {
            let diff: Vec<f64> = a.kde.density.iter().zip(&b.kde.density).map(|(p, q)| (p - q).abs()).collect();
            gap = gap.max(metrics::trapezoid(&a.kde.grid, &diff));
        }
    }
    gap
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Tick positions at a 1-2-5 step covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let raw = (hi - lo) / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

/// Render curves as a standalone SVG document.
pub fn render_svg(title: &str, x_label: &str, curves: &[Curve]) -> Result<String> {
    let first = curves.first().ok_or_else(|| Error::metric("nothing to plot"))?;
    let x0 = first.kde.grid[0];
    let x1 = *first.kde.grid.last().unwrap_or(&x0);
    let y1 = curves.iter().flat_map(|c| c.kde.density.iter().copied()).fold(0.0, f64::max) * 1.05;
    if !(x1 > x0) || !(y1 > 0.0) {
        return Err(Error::metric("degenerate plot range"));
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - y / y1 * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );

    // axes
    let _ = writeln!(
        s,
        r#"<path class="axis" d="M{:.2} {:.2} L{:.2} {:.2} L{:.2} {:.2}" stroke="black" fill="none"/>"#,
        LEFT,
        TOP,
        LEFT,
        TOP + ph,
        LEFT + pw,
        TOP + ph
    );
    for t in ticks(x0, x1, 6) {
        let x = sx(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            tick_label(t)
        );
    }
    for t in ticks(0.0, y1, 5) {
        let y = sy(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">density</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        for (j, (&x, &y)) in c.kde.grid.iter().zip(&c.kde.density).enumerate() {
            let _ = write!(d, "{}{:.2} {:.2}", if j == 0 { "M" } else { " L" }, sx(x), sy(y));
        }
        let _ = writeln!(
            s,
            r#"<path class="curve" d="{d}" stroke="{color}" stroke-width="2" fill="none"/>"#
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{} (n={})</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&c.label),
            c.count
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn tick_label(t: f64) -> String {
    let r = (t * 1e6).round() / 1e6;
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub label: String,
    pub count: usize,
    pub bandwidth: f64,
}

/// Companion JSON for one run's plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSidecar {
    pub pc1_min: f64,
    pub pc1_max: f64,
    pub explained_ratio: f64,
    pub grid_points: usize,
    pub class_curves: Vec<CurveSummary>,
    pub group_curves: Vec<CurveSummary>,
    pub max_class_l1_gap: f64,
    pub max_group_l1_gap: f64,
}

/// Both SVG documents and their sidecar.
#[derive(Clone, Debug, PartialEq)]
pub struct RunPlots {
    pub class_svg: String,
    pub group_svg: String,
    pub sidecar: PlotSidecar,
}

pub fn plot_embeddings(
    z: &Matrix,
    labels: &[u8],
    groups: &[usize],
    bandwidth: Option<f64>,
    grid: usize,
    title: &str,
) -> Result<RunPlots> {
    let pc = scaled_pc1(z)?;
    let class_keys: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
    let class = density_curves(&pc.values, &class_keys, |k| format!("y={k}"), bandwidth, grid)?;
    let group = density_curves(&pc.values, groups, |k| format!("group {k}"), bandwidth, grid)?;
    let summary = |cs: &[Curve]| {
        cs.iter()
            .map(|c| CurveSummary {
                label: c.label.clone(),
                count: c.count,
                bandwidth: c.kde.bandwidth,
            })
            .collect()
    };
    let x_label = "PC1 (min-max scaled)";
    Ok(RunPlots {
        class_svg: render_svg(&format!("{title}: PC1 density by class"), x_label, &class)?,
        group_svg: render_svg(&format!("{title}: PC1 density by group"), x_label, &group)?,
        sidecar: PlotSidecar {
            pc1_min: pc.pc1_min,
            pc1_max: pc.pc1_max,
            explained_ratio: pc.explained_ratio,
            grid_points: grid,
            class_curves: summary(&class),
            group_curves: summary(&group),
            max_class_l1_gap: max_l1_gap(&class),
            max_group_l1_gap: max_l1_gap(&group),
        },
    })
}
