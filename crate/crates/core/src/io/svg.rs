//! Horizontal box plots, one row per category.
//!
//! The value axis is linear: `x = left + (v − lo)/(hi − lo)·plot_width`,
//! where `[lo, hi]` spans every whisker and outlier. Coordinates are
//! written with three decimals.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::CategoryStats;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxplotLayout {
    pub left: f64,
    pub plot_width: f64,
    pub top: f64,
    pub row_height: f64,
    pub box_height: f64,
}

impl Default for BoxplotLayout {
    fn default() -> Self {
        BoxplotLayout { left: 160.0, plot_width: 480.0, top: 40.0, row_height: 48.0, box_height: 24.0 }
    }
}

/// Value range covered by the axis; a zero-width range is widened by 0.5
/// on each side.
pub fn axis_domain(stats: &[CategoryStats]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in stats {
        for v in [s.stats.whisker_low, s.stats.whisker_high, s.stats.q1, s.stats.q3].iter().chain(&s.outlier_values) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

pub fn axis_x(v: f64, (lo, hi): (f64, f64), layout: &BoxplotLayout) -> f64 {
    layout.left + (v - lo) / (hi - lo) * layout.plot_width
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn boxplot_svg(stats: &[CategoryStats], title: &str, layout: &BoxplotLayout) -> Result<String> {
    if stats.is_empty() {
        return Err(Error::invalid("nothing to plot"));
    }
    let domain = axis_domain(stats);
    let x = |v: f64| axis_x(v, domain, layout);
    let width = layout.left + layout.plot_width + 40.0;
    let height = layout.top + layout.row_height * stats.len() as f64 + 40.0;
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.3}" height="{height:.3}" viewBox="0 0 {width:.3} {height:.3}">"#).ok();
    writeln!(w, r#"<text x="{:.3}" y="20.000" font-family="sans-serif" font-size="14">{}</text>"#, layout.left, escape(title)).ok();
    for (row, s) in stats.iter().enumerate() {
        let cy = layout.top + layout.row_height * (row as f64 + 0.5);
        let (y0, y1) = (cy - layout.box_height / 2.0, cy + layout.box_height / 2.0);
        let b = &s.stats;
        writeln!(w, r#"<g class="category" data-name="{}">"#, escape(&s.category)).ok();
        writeln!(w, r#"<text x="{:.3}" y="{:.3}" text-anchor="end" font-family="sans-serif" font-size="12">{}</text>"#, layout.left - 8.0, cy + 4.0, escape(&s.category)).ok();
        writeln!(w, r#"<line class="whisker" x1="{:.3}" y1="{cy:.3}" x2="{:.3}" y2="{cy:.3}" stroke="black"/>"#, x(b.whisker_low), x(b.q1)).ok();
        writeln!(w, r#"<line class="whisker" x1="{:.3}" y1="{cy:.3}" x2="{:.3}" y2="{cy:.3}" stroke="black"/>"#, x(b.q3), x(b.whisker_high)).ok();
        for v in [b.whisker_low, b.whisker_high] {
            writeln!(w, r#"<line class="whisker-cap" x1="{0:.3}" y1="{1:.3}" x2="{0:.3}" y2="{2:.3}" stroke="black"/>"#, x(v), cy - layout.box_height / 4.0, cy + layout.box_height / 4.0).ok();
        }
        writeln!(
            w,
            r#"<rect class="box" x="{:.3}" y="{y0:.3}" width="{:.3}" height="{:.3}" fill="lightsteelblue" stroke="black"/>"#,
            x(b.q1),
            x(b.q3) - x(b.q1),
            layout.box_height
        )
        .ok();
        writeln!(w, r#"<line class="median" x1="{0:.3}" y1="{y0:.3}" x2="{0:.3}" y2="{y1:.3}" stroke="black" stroke-width="3"/>"#, x(b.median)).ok();
        for v in &s.outlier_values {
            writeln!(w, r#"<circle class="outlier" cx="{:.3}" cy="{cy:.3}" r="3.000" fill="none" stroke="black"/>"#, x(*v)).ok();
        }
        writeln!(w, "</g>").ok();
    }
    let axis_y = layout.top + layout.row_height * stats.len() as f64 + 8.0;
    writeln!(w, r#"<line class="axis" x1="{:.3}" y1="{axis_y:.3}" x2="{:.3}" y2="{axis_y:.3}" stroke="black"/>"#, layout.left, layout.left + layout.plot_width).ok();
    for (v, anchor) in [(domain.0, "start"), (domain.1, "end")] {
        writeln!(w, r#"<text class="tick" x="{:.3}" y="{:.3}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{v:.3}</text>"#, x(v), axis_y + 16.0).ok();
    }
    writeln!(w, "</svg>").ok();
    Ok(out)
}

pub fn render_boxplot_svg(stats: &[CategoryStats], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let title = stats.first().map(|s| s.metric.name()).unwrap_or_default();
    let svg = boxplot_svg(stats, title, &BoxplotLayout::default())?;
    fs::write(path, svg).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{box_stats, Metric};

    fn stats(values: &[f64]) -> CategoryStats {
        CategoryStats {
            category: "a<b".into(),
            metric: Metric::Delta1,
            stats: box_stats(values).unwrap(),
            outlier_ids: vec![],
            outlier_values: vec![],
        }
    }

    #[test]
    fn box_and_stripe_follow_the_axis() {
        let svg = boxplot_svg(&[stats(&[1.0, 2.0, 3.0, 4.0, 5.0])], "t", &BoxplotLayout::default()).unwrap();
        // Domain [1, 5] over 480 px from x = 160.
        assert!(svg.contains(r#"<rect class="box" x="280.000" y="52.000" width="240.000""#), "{svg}");
        assert!(svg.contains(r#"<line class="median" x1="400.000""#));
        assert!(svg.contains("a&lt;b"));
    }

    #[test]
    fn constant_data_gets_a_padded_axis() {
        let s = [stats(&[2.0, 2.0])];
        assert_eq!(axis_domain(&s), (1.5, 2.5));
        assert!(boxplot_svg(&s, "t", &BoxplotLayout::default()).is_ok());
    }
}
