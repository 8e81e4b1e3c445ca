//! Minimal SVG views of report data. Each builder also returns the plot
//! JSON that lists every number written into the SVG.

use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct Plot<D: Serialize> {
    pub source: String,
    pub data: D,
    /// Every number that occurs in the SVG, data and layout alike.
    pub numbers: Vec<f64>,
}

struct Svg {
    body: String,
    numbers: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl Svg {
    fn new() -> Self {
        Self {
            body: String::new(),
            numbers: Vec::new(),
        }
    }

    fn n(&mut self, x: f64) -> String {
        self.numbers.push(x);
        format!("{x}")
    }

    fn push(&mut self, s: &str) {
        self.body.push_str(s);
        self.body.push('\n');
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let (x, y, size) = (self.n(x), self.n(y), self.n(size));
        let content = escape(content);
        self.push(&format!(
            r#"<text x="{x}" y="{y}" font-size="{size}" text-anchor="{anchor}" font-family="sans-serif">{content}</text>"#
        ));
    }

    fn finish<D: Serialize>(mut self, width: f64, height: f64, source: &str, data: D) -> (String, Plot<D>) {
        let (w, h) = (self.n(width), self.n(height));
        let svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body
        );
        self.numbers.push(0.0);
        self.numbers.sort_by(f64::total_cmp);
        self.numbers.dedup();
        (
            svg,
            Plot {
                source: source.to_string(),
                data,
                numbers: self.numbers,
            },
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RocData {
    pub points: Vec<[f64; 2]>,
    pub auc: Option<f64>,
}

/// The curve is drawn in data coordinates inside a transformed group, so
/// polyline points are the `(fpr, tpr)` pairs themselves.
pub fn roc_svg(points: &[[f64; 2]], auc: Option<f64>, source: &str) -> (String, Plot<RocData>) {
    let (size, margin) = (300.0, 50.0);
    let mut s = Svg::new();
    let (m, bottom, sz, neg) = (s.n(margin), s.n(margin + size), s.n(size), s.n(-size));
    s.push(&format!(r#"<g transform="translate({m},{bottom}) scale({sz},{neg})">"#));
    let one = s.n(1.0);
    for (x2, y2) in [("1", "0"), ("0", "1")] {
        s.push(&format!(
            r#"<line class="axis" x1="0" y1="0" x2="{x2}" y2="{y2}" stroke="black" vector-effect="non-scaling-stroke"/>"#
        ));
    }
    s.push(&format!(
        r#"<line class="chance" x1="0" y1="0" x2="{one}" y2="{one}" stroke="gray" vector-effect="non-scaling-stroke"/>"#
    ));
    let pts: Vec<String> = points
        .iter()
        .map(|p| {
            let (x, y) = (s.n(p[0]), s.n(p[1]));
            format!("{x},{y}")
        })
        .collect();
    let sw = s.n(2.0);
    s.push(&format!(
        r#"<polyline id="roc" points="{}" fill="none" stroke="firebrick" stroke-width="{sw}" vector-effect="non-scaling-stroke"/>"#,
        pts.join(" ")
    ));
    s.push("</g>");
    for t in [0.0, 0.5, 1.0] {
        s.n(t);
        s.text(margin + size * t, margin + size + 18.0, 12.0, "middle", &format!("{t}"));
        s.text(margin - 8.0, margin + size * (1.0 - t) + 4.0, 12.0, "end", &format!("{t}"));
    }
    s.text(margin + size / 2.0, margin + size + 40.0, 13.0, "middle", "false positive rate");
    s.text(margin + size / 2.0, margin - 20.0, 14.0, "middle", "ROC");
    if let Some(a) = auc {
        s.n(a);
        s.text(margin + size - 4.0, margin + size - 10.0, 12.0, "end", &format!("{a}"));
    }
    s.finish(
        2.0 * margin + size,
        2.0 * margin + size,
        source,
        RocData {
            points: points.to_vec(),
            auc,
        },
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct Bar {
    pub token: String,
    pub weight: f64,
    /// Left edge and width in weight units.
    pub x: f64,
    pub width: f64,
}

/// Horizontal bars from a zero axis: positive weights extend right, negative
/// ones left.
pub fn importance_svg(title: &str, features: &[(String, f64)], source: &str) -> (String, Plot<Vec<Bar>>) {
    let (label_w, half, row_h, bar_h, top) = (170.0, 170.0, 24.0, 18.0, 40.0);
    let max_abs = features.iter().map(|(_, w)| w.abs()).fold(0.0, f64::max);
    let scale = if max_abs > 0.0 { half / max_abs } else { 1.0 };
    let mut s = Svg::new();
    let height = top + row_h * features.len() as f64 + 20.0;
    s.text(label_w + half, 20.0, 14.0, "middle", title);
    let (cx, ty, sc) = (s.n(label_w + half), s.n(top), s.n(scale));
    s.push(&format!(r#"<g transform="translate({cx},{ty}) scale({sc},1)">"#));
    s.n(1.0);
    let mut bars = Vec::with_capacity(features.len());
    for (i, (token, w)) in features.iter().enumerate() {
        let x = w.min(0.0);
        let width = w.abs();
        let class = if *w >= 0.0 { "bar positive" } else { "bar negative" };
        let (xs, ys, ws, hs) = (s.n(x), s.n(row_h * i as f64), s.n(width), s.n(bar_h));
        let fill = if *w >= 0.0 { "firebrick" } else { "steelblue" };
        s.push(&format!(
            r#"<rect class="{class}" data-token="{}" x="{xs}" y="{ys}" width="{ws}" height="{hs}" fill="{fill}"/>"#,
            escape(token)
        ));
        bars.push(Bar {
            token: token.clone(),
            weight: *w,
            x,
            width,
        });
    }
    let axis_end = s.n(row_h * features.len() as f64);
    s.push(&format!(
        r#"<line class="zero" x1="0" y1="0" x2="0" y2="{axis_end}" stroke="black" vector-effect="non-scaling-stroke"/>"#
    ));
    s.push("</g>");
    for (i, (token, _)) in features.iter().enumerate() {
        s.text(label_w - 6.0, top + row_h * i as f64 + 13.0, 12.0, "end", token);
    }
    s.finish(label_w + 2.0 * half + 20.0, height, source, bars)
}

#[derive(Clone, Debug, Serialize)]
pub struct Heatmap {
    pub tokens: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

/// One unit square per (query, key) cell, shaded by attention weight.
pub fn attention_svg(title: &str, tokens: &[String], weights: &[Vec<f64>], source: &str) -> (String, Plot<Heatmap>) {
    let (cell, left, top) = (22.0, 130.0, 130.0);
    let l = tokens.len() as f64;
    let mut s = Svg::new();
    s.text(left + cell * l / 2.0, 20.0, 14.0, "middle", title);
    let (lx, ty, c) = (s.n(left), s.n(top), s.n(cell));
    s.push(&format!(r#"<g transform="translate({lx},{ty}) scale({c})">"#));
    for (i, row) in weights.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            let (x, y, op) = (s.n(j as f64), s.n(i as f64), s.n(w));
            s.push(&format!(
                r#"<rect class="cell" x="{x}" y="{y}" width="1" height="1" fill="steelblue" fill-opacity="{op}"/>"#
            ));
        }
    }
    s.n(1.0);
    s.push("</g>");
    for (i, t) in tokens.iter().enumerate() {
        s.text(left - 6.0, top + cell * i as f64 + 15.0, 11.0, "end", t);
        let (x, y) = (left + cell * i as f64 + 15.0, top - 6.0);
        let (xs, ys) = (s.n(x), s.n(y));
        let fs = s.n(11.0);
        let angle = s.n(-60.0);
        s.push(&format!(
            r#"<text x="{xs}" y="{ys}" font-size="{fs}" font-family="sans-serif" transform="rotate({angle} {xs} {ys})">{}</text>"#,
            escape(t)
        ));
    }
    s.finish(
        left + cell * l + 20.0,
        top + cell * l + 20.0,
        source,
        Heatmap {
            tokens: tokens.to_vec(),
            weights: weights.to_vec(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roc_polyline_is_in_data_coordinates() {
        let (svg, plot) = roc_svg(&[[0.0, 0.0], [0.25, 0.5], [1.0, 1.0]], Some(0.8125), "roc.csv");
        assert!(svg.contains(r#"points="0,0 0.25,0.5 1,1""#));
        assert!(plot.numbers.contains(&0.8125));
    }

    #[test]
    fn escapes_markup() {
        let (svg, _) = importance_svg("t", &[("a<b".into(), 0.1)], "x.json");
        assert!(svg.contains("a&lt;b"));
    }
}
