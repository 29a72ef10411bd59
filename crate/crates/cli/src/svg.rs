//! Minimal hand-emitted SVG line charts. The CSV outputs are authoritative;
//! the SVG is a static rendering with one polyline per series.

use std::fmt::Write as _;

pub struct Chart {
    x_label: String,
    y_label: String,
    series: Vec<Series>,
}

struct Series {
    name: String,
    color: String,
    points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

impl Chart {
    pub fn new(x_label: &str, y_label: &str) -> Self {
        Chart { x_label: x_label.into(), y_label: y_label.into(), series: Vec::new() }
    }

    pub fn add_series(&mut self, name: &str, color: &str, points: &[(f64, f64)]) {
        self.series.push(Series { name: name.into(), color: color.into(), points: points.to_vec() });
    }

    pub fn series_count(&self) -> usize {
        self.series.len()
    }

    pub fn render(&self) -> String {
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for series in &self.series {
            for &(x, y) in &series.points {
                if x.is_finite() && y.is_finite() {
                    x_min = x_min.min(x);
                    x_max = x_max.max(x);
                    y_min = y_min.min(y);
                    y_max = y_max.max(y);
                }
            }
        }
        if !x_min.is_finite() {
            x_min = 0.0;
            x_max = 1.0;
            y_min = 0.0;
            y_max = 1.0;
        }
        if x_max == x_min {
            x_max = x_min + 1.0;
        }
        if y_max == y_min {
            y_max = y_min + 1.0;
        }
        let sx = |x: f64| MARGIN + (x - x_min) / (x_max - x_min) * (WIDTH - 2.0 * MARGIN);
        let sy = |y: f64| HEIGHT - MARGIN - (y - y_min) / (y_max - y_min) * (HEIGHT - 2.0 * MARGIN);

        let mut out = String::new();
        let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        // axes
        let _ = writeln!(
            out,
            r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black" stroke-width="1"/>"#,
            m = MARGIN,
            b = HEIGHT - MARGIN,
            r = WIDTH - MARGIN
        );
        let _ = writeln!(
            out,
            r#"<line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black" stroke-width="1"/>"#,
            m = MARGIN,
            t = MARGIN,
            b = HEIGHT - MARGIN
        );
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{y}" font-size="13" text-anchor="middle">{label}</text>"#,
            x = WIDTH / 2.0,
            y = HEIGHT - 16.0,
            label = xml_escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{y}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {y})">{label}</text>"#,
            y = HEIGHT / 2.0,
            label = xml_escape(&self.y_label)
        );
        // axis range labels
        let _ = writeln!(
            out,
            r#"<text x="{m}" y="{b}" font-size="11" text-anchor="middle">{v:.2}</text>"#,
            m = MARGIN,
            b = HEIGHT - MARGIN + 16.0,
            v = x_min
        );
        let _ = writeln!(
            out,
            r#"<text x="{r}" y="{b}" font-size="11" text-anchor="middle">{v:.2}</text>"#,
            r = WIDTH - MARGIN,
            b = HEIGHT - MARGIN + 16.0,
            v = x_max
        );
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{t}" font-size="11" text-anchor="end">{v:.3}</text>"#,
            x = MARGIN - 6.0,
            t = MARGIN + 4.0,
            v = y_max
        );
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{b}" font-size="11" text-anchor="end">{v:.3}</text>"#,
            x = MARGIN - 6.0,
            b = HEIGHT - MARGIN + 4.0,
            v = y_min
        );

        for (si, series) in self.series.iter().enumerate() {
            let (name, color, pts) = (&series.name, &series.color, &series.points);
            if pts.is_empty() {
                let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" points=""/>"#);
                continue;
            }
            let mut path = String::new();
            for &(x, y) in pts {
                let _ = write!(path, "{:.2},{:.2} ", sx(x), sy(y));
            }
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{points}"/>"#,
                points = path.trim_end()
            );
            let ly = MARGIN + 16.0 * si as f64;
            let _ = writeln!(
                out,
                r#"<line x1="{x0}" y1="{ly}" x2="{x1}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#,
                x0 = WIDTH - MARGIN - 150.0,
                x1 = WIDTH - MARGIN - 130.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{x}" y="{y}" font-size="12">{name}</text>"#,
                x = WIDTH - MARGIN - 124.0,
                y = ly + 4.0,
                name = xml_escape(name)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_svg() {
        let mut chart = Chart::new("x", "y");
        chart.add_series("a", "#ff0000", &[(0.0, 1.0), (1.0, 2.0)]);
        chart.add_series("b", "#00ff00", &[(0.0, 2.0), (1.0, 1.0)]);
        let text = chart.render();
        assert!(text.starts_with("<?xml"));
        assert!(text.ends_with("</svg>\n"));
        assert_eq!(text.matches("<polyline").count(), 2);
        // crude well-formedness: every tag closed, no stray ampersands
        assert_eq!(text.matches('<').count(), text.matches('>').count());
    }
}
