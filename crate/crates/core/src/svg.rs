//! Static SVG charts: interval (forest) plots for result tables and the
//! faceted bar report for benchmark metrics. Output is byte-deterministic for
//! a given input.

use std::fmt::Write as _;

use crate::estimator::{EstimateRow, Method, ResultTable};

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";
const PALETTE: [&str; 6] = [
    "#d1495b", "#00798c", "#edae49", "#66a182", "#2e4057", "#8d96a3",
];

struct Canvas {
    width: f64,
    height: f64,
    body: String,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl Canvas {
    fn new(width: f64, height: f64) -> Self {
        Canvas {
            width,
            height,
            body: String::new(),
        }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64, dashed: bool) {
        let dash = if dashed {
            " stroke-dasharray=\"4 3\""
        } else {
            ""
        };
        let _ = writeln!(
            self.body,
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\" stroke-width=\"{width:.2}\"{dash}/>"
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: Option<&str>) {
        let stroke = stroke
            .map(|s| format!(" stroke=\"{s}\""))
            .unwrap_or_default();
        let _ = writeln!(
            self.body,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"{stroke}/>"
        );
    }

    fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{r:.2}\" fill=\"{fill}\"/>"
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"{anchor}\" {FONT}>{}</text>",
            escape(s)
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect x=\"0\" y=\"0\" width=\"{w:.0}\" height=\"{h:.0}\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-9);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    }
}

fn facet_key(r: &EstimateRow) -> String {
    match &r.condvar {
        Some(c) => format!("{} | lists {}", c, r.listpair.label()),
        None => format!("lists {}", r.listpair.label()),
    }
}

fn method_color(m: Method) -> &'static str {
    match m {
        Method::DR => PALETTE[0],
        Method::PI => PALETTE[1],
    }
}

/// Interval plot of every row of `table`, one facet per list pair (and
/// sub-population), with an optional reference line at `true_n`.
pub fn forest_plot(table: &ResultTable, true_n: Option<f64>) -> String {
    let mut facets: Vec<(String, Vec<&EstimateRow>)> = Vec::new();
    for r in &table.rows {
        let key = facet_key(r);
        match facets.iter_mut().find(|(k, _)| *k == key) {
            Some((_, rows)) => rows.push(r),
            None => facets.push((key, vec![r])),
        }
    }
    let row_h = 22.0;
    let facet_gap = 28.0;
    let (left, right, top) = (170.0, 30.0, 40.0);
    let plot_w = 520.0;
    let body_h: f64 = facets
        .iter()
        .map(|(_, r)| r.len() as f64 * row_h + facet_gap)
        .sum();
    let height = top + body_h + 50.0;
    let mut c = Canvas::new(left + plot_w + right, height);

    let mut lo = table
        .rows
        .iter()
        .map(|r| r.cin_l)
        .fold(f64::INFINITY, f64::min);
    let mut hi = table
        .rows
        .iter()
        .map(|r| r.cin_u)
        .fold(f64::NEG_INFINITY, f64::max);
    if let Some(t) = true_n {
        lo = lo.min(t);
        hi = hi.max(t);
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    let pad = ((hi - lo) * 0.08).max(1.0);
    let (lo, hi) = (lo - pad, hi + pad);
    let sx = |v: f64| left + (v - lo) / (hi - lo) * plot_w;

    c.text(
        left + plot_w / 2.0,
        20.0,
        "middle",
        "Confidence intervals for n",
    );
    let bottom = top + body_h;
    for t in ticks(lo, hi, 6) {
        let x = sx(t);
        c.line(x, top, x, bottom, "#e5e5e5", 1.0, false);
        c.text(x, bottom + 16.0, "middle", &tick_label(t));
    }
    c.line(left, bottom, left + plot_w, bottom, "#333333", 1.0, false);
    c.text(left + plot_w / 2.0, bottom + 36.0, "middle", "n");

    let mut y = top;
    for (key, rows) in &facets {
        c.rect(left, y, plot_w, 16.0, "#f0f0f0", None);
        c.text(left + 6.0, y + 12.0, "start", key);
        y += facet_gap - 6.0;
        for r in rows {
            let cy = y + row_h / 2.0;
            let color = method_color(r.method);
            c.text(
                left - 8.0,
                cy + 4.0,
                "end",
                &format!("{} {}", r.model, r.method),
            );
            c.line(sx(r.cin_l), cy, sx(r.cin_u), cy, color, 2.0, false);
            c.line(
                sx(r.cin_l),
                cy - 4.0,
                sx(r.cin_l),
                cy + 4.0,
                color,
                1.5,
                false,
            );
            c.line(
                sx(r.cin_u),
                cy - 4.0,
                sx(r.cin_u),
                cy + 4.0,
                color,
                1.5,
                false,
            );
            c.circle(sx(r.n), cy, 3.5, color);
            y += row_h;
        }
        y += 6.0;
    }
    if let Some(t) = true_n {
        c.line(sx(t), top, sx(t), bottom, "#000000", 1.0, true);
    }
    c.finish()
}

/// One bar group to draw in a panel.
pub struct Bar<'a> {
    pub facet: &'a str,
    pub group: String,
    pub series: &'a str,
    pub value: f64,
}

/// Grid of bar panels: one row of panels per facet, one column per metric.
/// `bars[metric]` holds that metric's bars; `reference[metric]` draws an
/// optional dashed horizontal line.
pub fn bar_grid(titles: &[&str], bars: &[Vec<Bar<'_>>], reference: &[Option<f64>]) -> String {
    let mut facets: Vec<&str> = Vec::new();
    let mut groups: Vec<String> = Vec::new();
    let mut series: Vec<&str> = Vec::new();
    for b in bars.iter().flatten() {
        if !facets.contains(&b.facet) {
            facets.push(b.facet);
        }
        if !groups.contains(&b.group) {
            groups.push(b.group.clone());
        }
        if !series.contains(&b.series) {
            series.push(b.series);
        }
    }
    let (panel_w, panel_h) = (230.0, 170.0);
    let (left, top, gap) = (60.0, 50.0, 50.0);
    let width = left + titles.len() as f64 * (panel_w + gap) + 90.0;
    let height = top + facets.len() as f64 * (panel_h + gap) + 20.0;
    let mut c = Canvas::new(width, height);

    for (m, title) in titles.iter().enumerate() {
        let px = left + m as f64 * (panel_w + gap);
        c.text(px + panel_w / 2.0, 22.0, "middle", title);
        let vals: Vec<f64> = bars[m]
            .iter()
            .map(|b| b.value)
            .chain(reference[m])
            .collect();
        let vmax = vals.iter().cloned().fold(0.0, f64::max);
        let vmin = vals.iter().cloned().fold(0.0, f64::min);
        let (vmin, vmax) = if vmax - vmin < 1e-12 {
            (vmin, vmin + 1.0)
        } else {
            (vmin, vmax * 1.08)
        };
        for (f, facet) in facets.iter().enumerate() {
            let py = top + f as f64 * (panel_h + gap);
            let sy = |v: f64| py + panel_h - (v - vmin) / (vmax - vmin) * panel_h;
            c.rect(px, py, panel_w, panel_h, "#fafafa", Some("#999999"));
            for t in ticks(vmin, vmax, 4) {
                c.line(px, sy(t), px + panel_w, sy(t), "#e5e5e5", 1.0, false);
                c.text(px - 4.0, sy(t) + 4.0, "end", &tick_label(t));
            }
            if m + 1 == titles.len() {
                c.text(px + panel_w + 8.0, py + panel_h / 2.0, "start", facet);
            }
            let slot = panel_w / groups.len().max(1) as f64;
            let bar_w = slot * 0.8 / series.len().max(1) as f64;
            for (g, group) in groups.iter().enumerate() {
                let gx = px + g as f64 * slot + slot * 0.1;
                c.text(gx + slot * 0.4, py + panel_h + 14.0, "middle", group);
                for (s, name) in series.iter().enumerate() {
                    let Some(bar) = bars[m]
                        .iter()
                        .find(|b| b.facet == *facet && &b.group == group && b.series == *name)
                    else {
                        continue;
                    };
                    let (y0, y1) = (sy(0.0_f64.max(vmin)), sy(bar.value));
                    c.rect(
                        gx + s as f64 * bar_w,
                        y0.min(y1),
                        bar_w,
                        (y0 - y1).abs(),
                        PALETTE[s % PALETTE.len()],
                        None,
                    );
                }
            }
            if let Some(r) = reference[m] {
                c.line(px, sy(r), px + panel_w, sy(r), "#000000", 1.0, true);
            }
        }
    }
    for (s, name) in series.iter().enumerate() {
        let y = height - 12.0;
        let x = left + s as f64 * 70.0;
        c.rect(x, y - 9.0, 10.0, 10.0, PALETTE[s % PALETTE.len()], None);
        c.text(x + 14.0, y, "start", name);
    }
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(
            ticks(0.0, 1.0, 5),
            vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]
        );
        let t = ticks(4880.0, 5070.0, 6);
        assert_eq!(t.first(), Some(&4900.0));
        assert_eq!(t.last(), Some(&5050.0));
    }

    #[test]
    fn escapes_text() {
        assert_eq!(escape("a<b&\"c\""), "a&lt;b&amp;&quot;c&quot;");
    }
}
