//! Minimal deterministic SVG line plots.

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlotError {
    #[error("plot needs at least one non-empty series")]
    EmptySeries,
    #[error("series `{0}` contains a non-finite value")]
    NonFinite(String),
    #[error("series `{0}` has a non-positive value on a log axis")]
    NonPositiveOnLogAxis(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    /// Shown verbatim, so include the unit.
    pub label: String,
    pub log: bool,
}

impl Axis {
    pub fn linear(label: &str) -> Self {
        Axis {
            label: label.into(),
            log: false,
        }
    }

    pub fn log(label: &str) -> Self {
        Axis {
            label: label.into(),
            log: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x: Axis,
    pub y: Axis,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.abs() >= 1e4 || v.abs() < 1e-3 {
        return format!("{v:e}");
    }
    let s = format!("{v:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Axis range in plot coordinates (log10 for log axes) and tick values.
struct Scale {
    lo: f64,
    hi: f64,
    log: bool,
    ticks: Vec<f64>,
}

impl Scale {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            min = min.min(v);
            max = max.max(v);
        }
        if log {
            let lo = min.floor();
            let hi = max.ceil().max(lo + 1.0);
            let ticks = (lo as i32..=hi as i32).map(|k| 10f64.powi(k)).collect();
            return Scale { lo, hi, log, ticks };
        }
        if max == min {
            let pad = if min == 0.0 { 1.0 } else { 0.5 * min.abs() };
            min -= pad;
            max += pad;
        }
        let raw = (max - min) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let lo = (min / step).floor() * step;
        let hi = (max / step).ceil() * step;
        let n = ((hi - lo) / step).round() as i64;
        let ticks = (0..=n).map(|i| lo + i as f64 * step).collect();
        Scale { lo, hi, log, ticks }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }
}

/// Renders `spec` as a standalone SVG document. Identical input gives
/// byte-identical output.
pub fn emit_svg(spec: &PlotSpec) -> Result<String, PlotError> {
    if spec.series.is_empty() || spec.series.iter().any(|s| s.points.is_empty()) {
        return Err(PlotError::EmptySeries);
    }
    for s in &spec.series {
        if s.points
            .iter()
            .any(|(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(PlotError::NonFinite(s.label.clone()));
        }
        let bad_x = spec.x.log && s.points.iter().any(|p| p.0 <= 0.0);
        let bad_y = spec.y.log && s.points.iter().any(|p| p.1 <= 0.0);
        if bad_x || bad_y {
            return Err(PlotError::NonPositiveOnLogAxis(s.label.clone()));
        }
    }
    let all = || spec.series.iter().flat_map(|s| s.points.iter());
    let xs = Scale::new(all().map(|p| p.0), spec.x.log);
    let ys = Scale::new(all().map(|p| p.1), spec.y.log);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |v: f64| LEFT + xs.frac(v) * pw;
    let py = |v: f64| TOP + (1.0 - ys.frac(v)) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&spec.title)
    );

    for &t in &xs.ticks {
        let x = px(t);
        let _ = writeln!(
            out,
            r##"<line class="grid" data-axis="x" data-value="{t:e}" x1="{x:.2}" y1="{TOP:.2}" x2="{x:.2}" y2="{:.2}" stroke="#dddddd"/>"##,
            TOP + ph
        );
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 16.0,
            format_tick(t)
        );
    }
    for &t in &ys.ticks {
        let y = py(t);
        let _ = writeln!(
            out,
            r##"<line class="grid" data-axis="y" data-value="{t:e}" x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            LEFT + pw
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            format_tick(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 18.0,
        escape(&spec.x.label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&spec.y.label)
    );

    for (i, s) in spec.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(series: Vec<Series>, log: bool) -> PlotSpec {
        let axis = |l: &str| Axis {
            label: l.into(),
            log,
        };
        PlotSpec {
            title: "t".into(),
            x: axis("x [s]"),
            y: axis("y [cm^-3]"),
            series,
        }
    }

    #[test]
    fn two_points_one_polyline() {
        let svg = emit_svg(&spec(
            vec![Series::new("a", vec![(0.0, 1.0), (1.0, 2.0)])],
            false,
        ))
        .unwrap();
        assert!(svg.starts_with("<svg xmlns"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("x [s]") && svg.contains(">a</text>"));
    }

    #[test]
    fn log_axes_put_grid_lines_on_decades() {
        let pts = vec![(2e26, 3e10), (5e29, 7e16)];
        let svg = emit_svg(&spec(vec![Series::new("ll", pts)], true)).unwrap();
        let xs: Vec<&str> = svg
            .lines()
            .filter(|l| l.contains(r#"data-axis="x""#))
            .map(|l| {
                l.split("data-value=\"")
                    .nth(1)
                    .unwrap()
                    .split('"')
                    .next()
                    .unwrap()
            })
            .collect();
        assert_eq!(xs, ["1e26", "1e27", "1e28", "1e29", "1e30"]);
        let ys = svg
            .lines()
            .filter(|l| l.contains(r#"data-axis="y""#))
            .count();
        assert_eq!(ys, 8);
    }

    #[test]
    fn overlay_of_four_series() {
        let series = (0..4)
            .map(|k| {
                Series::new(
                    &format!("{k}x"),
                    (0..50).map(|i| (i as f64, (i * k) as f64)).collect(),
                )
            })
            .collect();
        let svg = emit_svg(&spec(series, false)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 4);
    }

    #[test]
    fn deterministic() {
        let s = spec(
            vec![Series::new("a<b", vec![(1.0, 1.0), (2.0, 5.0), (3.0, 2.0)])],
            false,
        );
        assert_eq!(emit_svg(&s).unwrap(), emit_svg(&s).unwrap());
        assert!(emit_svg(&s).unwrap().contains("a&lt;b"));
    }

    #[test]
    fn errors() {
        assert_eq!(emit_svg(&spec(vec![], false)), Err(PlotError::EmptySeries));
        assert_eq!(
            emit_svg(&spec(vec![Series::new("e", vec![])], false)),
            Err(PlotError::EmptySeries)
        );
        assert_eq!(
            emit_svg(&spec(vec![Series::new("n", vec![(0.0, f64::NAN)])], false)),
            Err(PlotError::NonFinite("n".into()))
        );
        assert_eq!(
            emit_svg(&spec(vec![Series::new("z", vec![(1.0, 0.0)])], true)),
            Err(PlotError::NonPositiveOnLogAxis("z".into()))
        );
    }
}
