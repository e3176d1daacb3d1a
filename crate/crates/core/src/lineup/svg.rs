use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Bounds, Lineup, Primitive};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub rows: usize,
    pub cols: usize,
    /// Side of the square plotting area, in px.
    pub panel_px: f64,
    pub gap_px: f64,
    pub stroke: String,
    pub fill: String,
    pub band_fill: String,
    pub point_radius: f64,
    pub show_ids: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 5,
            panel_px: 150.0,
            gap_px: 6.0,
            stroke: "#1f1f1f".into(),
            fill: "#9a9a9a".into(),
            band_fill: "#d5d5d5".into(),
            point_radius: 1.6,
            show_ids: true,
        }
    }
}

const LABEL_PX: f64 = 14.0;

struct Frame {
    axes: Bounds,
    size: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        (v - self.axes.x[0]) / (self.axes.x[1] - self.axes.x[0]) * self.size
    }

    fn y(&self, v: f64) -> f64 {
        self.size - (v - self.axes.y[0]) / (self.axes.y[1] - self.axes.y[0]) * self.size
    }

    fn w(&self, dv: f64) -> f64 {
        dv / (self.axes.x[1] - self.axes.x[0]) * self.size
    }

    fn pair(&self, p: &[f64; 2]) -> String {
        format!("{:.2},{:.2}", self.x(p[0]), self.y(p[1]))
    }
}

fn grey(level: f64) -> String {
    // 0 → light, 1 → dark.
    let v = (235.0 - 175.0 * level.clamp(0.0, 1.0)).round() as u8;
    format!("#{v:02x}{v:02x}{v:02x}")
}

fn primitive(out: &mut String, p: &Primitive, f: &Frame, o: &RenderOptions) {
    match p {
        Primitive::Points { xy } => {
            for q in xy {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="{}" fill="{}"/>"#,
                    f.x(q[0]),
                    f.y(q[1]),
                    o.point_radius,
                    o.stroke
                );
            }
        }
        Primitive::Segments { lines } => {
            for [a, b] in lines {
                let _ = writeln!(
                    out,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="1"/>"#,
                    f.x(a[0]),
                    f.y(a[1]),
                    f.x(b[0]),
                    f.y(b[1]),
                    o.stroke
                );
            }
        }
        Primitive::Band { polygon } => {
            let pts: Vec<String> = polygon.iter().map(|q| f.pair(q)).collect();
            let _ = writeln!(out, r#"<polygon points="{}" fill="{}" stroke="none"/>"#, pts.join(" "), o.band_fill);
        }
        Primitive::Path { xy } => {
            let pts: Vec<String> = xy.iter().map(|q| f.pair(q)).collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.2"/>"#,
                pts.join(" "),
                o.stroke
            );
        }
        Primitive::Box(b) => {
            let cx = f.x(b.position);
            let half = f.w(b.width) / 2.0;
            let fill = b.fill.map_or_else(|| o.fill.clone(), grey);
            let _ = writeln!(
                out,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{}" stroke-width="1"/>"#,
                f.y(b.lower_whisker),
                f.y(b.upper_whisker),
                o.stroke
            );
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}" stroke="{}" stroke-width="1"/>"#,
                cx - half,
                f.y(b.q3),
                2.0 * half,
                f.y(b.q1) - f.y(b.q3),
                o.stroke
            );
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="1.5"/>"#,
                cx - half,
                f.y(b.median),
                cx + half,
                f.y(b.median),
                o.stroke
            );
            for &v in &b.outliers {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{cx:.2}" cy="{:.2}" r="{}" fill="none" stroke="{}"/>"#,
                    f.y(v),
                    o.point_radius,
                    o.stroke
                );
            }
        }
    }
}

/// One SVG holding the whole lineup in a rows × cols grid. Panels carry only
/// their 1-based number; there are no axes, titles or legends, and every
/// panel container has the same attributes apart from its position.
pub fn render_svg(lineup: &Lineup, opts: &RenderOptions) -> Result<String> {
    let m = lineup.m();
    if opts.rows * opts.cols < m {
        return Err(Error::InvalidParams(format!(
            "{}x{} grid cannot hold {m} panels",
            opts.rows, opts.cols
        )));
    }
    let cell_w = opts.panel_px + opts.gap_px;
    let cell_h = opts.panel_px + LABEL_PX + opts.gap_px;
    let width = opts.cols as f64 * cell_w + opts.gap_px;
    let height = opts.rows as f64 * cell_h + opts.gap_px;
    let frame = Frame {
        axes: lineup.axes,
        size: opts.panel_px,
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r##"<rect width="{width}" height="{height}" fill="#ffffff"/>"##);
    let _ = writeln!(
        out,
        r#"<defs><clipPath id="plot"><rect width="{0}" height="{0}"/></clipPath></defs>"#,
        opts.panel_px
    );
    for (i, panel) in lineup.panels.iter().enumerate() {
        let (r, c) = (i / opts.cols, i % opts.cols);
        let x0 = opts.gap_px + c as f64 * cell_w;
        let y0 = opts.gap_px + r as f64 * cell_h;
        let _ = writeln!(out, r#"<g class="panel" transform="translate({x0},{y0})">"#);
        if opts.show_ids {
            let _ = writeln!(
                out,
                r##"<text x="2" y="{}" font-family="sans-serif" font-size="11" fill="#000000">{}</text>"##,
                LABEL_PX - 3.0,
                i + 1
            );
        }
        let _ = writeln!(out, r#"<g class="plot" transform="translate(0,{LABEL_PX})" clip-path="url(#plot)">"#);
        let _ = writeln!(
            out,
            r##"<rect width="{0}" height="{0}" fill="#f2f2f2" stroke="#bdbdbd"/>"##,
            opts.panel_px
        );
        for p in &panel.primitives {
            primitive(&mut out, p, &frame, opts);
        }
        out.push_str("</g>\n</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}
