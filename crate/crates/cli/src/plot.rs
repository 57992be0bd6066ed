//! Minimal standalone SVG line charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    Linear,
    Log10,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub series: Vec<Series>,
}

impl Chart {
    fn map(v: f64, range: (f64, f64), scale: Scale) -> f64 {
        let (lo, hi) = range;
        let t = match scale {
            Scale::Linear => (v - lo) / (hi - lo),
            Scale::Log10 => (v.max(lo).log10() - lo.log10()) / (hi.log10() - lo.log10()),
        };
        t.clamp(0.0, 1.0)
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let tx = Self::map(x, self.x_range, self.x_scale);
        let ty = Self::map(y, self.y_range, self.y_scale);
        (MARGIN_LEFT + tx * plot_w, MARGIN_TOP + (1.0 - ty) * plot_h)
    }

    fn ticks(range: (f64, f64), scale: Scale) -> Vec<f64> {
        match scale {
            Scale::Log10 => {
                let (a, b) = (range.0.log10().floor() as i32, range.1.log10().ceil() as i32);
                (a..=b).map(|e| 10f64.powi(e)).filter(|t| *t >= range.0 * 0.999 && *t <= range.1 * 1.001).collect()
            }
            Scale::Linear => (0..=5).map(|i| range.0 + (range.1 - range.0) * i as f64 / 5.0).collect(),
        }
    }

    fn tick_label(v: f64, scale: Scale) -> String {
        match scale {
            Scale::Log10 => {
                let e = v.log10().round() as i32;
                if e == 0 {
                    "1".into()
                } else {
                    format!("1e{e}")
                }
            }
            Scale::Linear => format!("{}", (v * 1000.0).round() / 1000.0),
        }
    }

    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
            escape(&self.title)
        );
        let (x0, y0) = self.px(self.x_range.0, self.y_range.0);
        let (x1, y1) = self.px(self.x_range.1, self.y_range.1);
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y0 - y1
        );
        for t in Self::ticks(self.x_range, self.x_scale) {
            let (x, _) = self.px(t, self.y_range.0);
            let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 5.0);
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                y0 + 20.0,
                Self::tick_label(t, self.x_scale)
            );
        }
        for t in Self::ticks(self.y_range, self.y_scale) {
            let (_, y) = self.px(self.x_range.0, t);
            let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/>"#, x0 - 5.0);
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                x0 - 8.0,
                y + 4.0,
                Self::tick_label(t, self.y_scale)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let path: Vec<String> = series
                .points
                .iter()
                .map(|&(x, y)| {
                    let (px, py) = self.px(x, y);
                    format!("{px:.2},{py:.2}")
                })
                .collect();
            let dash = if series.dashed { r#" stroke-dasharray="5,4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.8"{dash} points="{}"/>"#,
                path.join(" ")
            );
            let ly = MARGIN_TOP + 10.0 + 20.0 * i as f64;
            let lx = WIDTH - MARGIN_RIGHT + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
                lx + 22.0
            );
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 28.0, ly + 4.0, escape(&series.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
