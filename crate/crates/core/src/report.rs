//! SVG charts and flat exports for traces and summaries.
//!
//! Charts are plain SVG text with stable class names so that tests can count
//! elements: `circle.normal|low|high` per plotted observation,
//! `polyline.mean` for the sliding mean, `path.marker` for the min/max
//! triangles, `rect.bar` for spread bars.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{OutlierClassification, PointClass, SpreadSummary};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to plot: empty classification")]
    Empty,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("no summaries to chart")]
    NoSummaries,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

const WIDTH: f64 = 1200.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 90.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 60.0;
/// Vertices kept in the mean polyline before thinning.
const MAX_MEAN_VERTICES: usize = 4000;

const STYLE: &str = "circle.normal{fill:#cc9a06}circle.low,circle.high{fill:#8c8c8c}\
polyline.mean{fill:none;stroke:#d62728;stroke-width:1.5}path.marker{fill:#d62728}\
rect.max{fill:#1f77b4}rect.min{fill:#ff7f0e}text{font-family:sans-serif;font-size:12px}\
line.axis{stroke:#000}";

pub struct PlotSpec<'a> {
    pub deltas: &'a [u64],
    pub classification: &'a OutlierClassification,
    /// Sliding mean of `deltas`; entry `i` covers `deltas[i..i + window]`.
    pub mean: &'a [f64],
    pub window: usize,
    /// Upper bound on plotted normal points; extremes are always kept.
    pub downsample: Option<usize>,
    /// Unit of the deltas, used in the axis label.
    pub unit: &'a str,
    pub title: &'a str,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Indices that survive downsampling: every extreme plus an evenly strided
/// subset of at most `limit` normal points.
pub fn downsample_indices(classes: &[PointClass], limit: Option<usize>) -> Vec<usize> {
    let normals = classes.iter().filter(|&&c| c == PointClass::Normal).count();
    let stride = match limit {
        Some(0) => usize::MAX,
        Some(l) if normals > l => normals.div_ceil(l),
        _ => 1,
    };
    let mut seen = 0usize;
    let mut out = Vec::new();
    for (i, &c) in classes.iter().enumerate() {
        if c == PointClass::Normal {
            let keep = seen % stride == 0;
            seen += 1;
            if !keep {
                continue;
            }
        }
        out.push(i);
    }
    out
}

fn first_extreme(deltas: &[u64], want_max: bool) -> usize {
    let mut best = 0;
    for (i, &d) in deltas.iter().enumerate() {
        if (want_max && d > deltas[best]) || (!want_max && d < deltas[best]) {
            best = i;
        }
    }
    best
}

pub fn timeseries_svg(spec: &PlotSpec<'_>) -> Result<String, ReportError> {
    let n = spec.deltas.len();
    if spec.classification.is_empty() {
        return Err(ReportError::Empty);
    }
    if spec.classification.len() != n {
        return Err(ReportError::LengthMismatch(format!(
            "{} classes for {n} deltas",
            spec.classification.len()
        )));
    }
    let expected_mean = if spec.window == 0 || spec.window > n { 0 } else { n - spec.window + 1 };
    if spec.mean.len() != expected_mean {
        return Err(ReportError::LengthMismatch(format!(
            "mean series has {} points, expected {expected_mean} for window {}",
            spec.mean.len(),
            spec.window
        )));
    }

    let lo = *spec.deltas.iter().min().expect("non-empty");
    let hi = *spec.deltas.iter().max().expect("non-empty");
    let y_top = if hi == 0 { 1.0 } else { hi as f64 * 1.05 };
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let x = |i: f64| MARGIN_L + if n > 1 { i / (n - 1) as f64 * plot_w } else { plot_w / 2.0 };
    let y = |v: f64| MARGIN_T + plot_h - v / y_top * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, "<style>{STYLE}</style>");
    let _ = writeln!(s, r#"<text class="title" x="{MARGIN_L}" y="18">{}</text>"#, escape(spec.title));
    axes(&mut s, "tuple index", &format!("latency [{}]", escape(spec.unit)));
    let _ = writeln!(
        s,
        r#"<text class="tick" x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
        MARGIN_L - 4.0,
        y(hi as f64) + 4.0,
        hi
    );
    let _ = writeln!(
        s,
        r#"<text class="tick" x="{:.1}" y="{:.1}" text-anchor="end">0</text>"#,
        MARGIN_L - 4.0,
        y(0.0) + 4.0
    );

    let _ = writeln!(s, r#"<g class="points">"#);
    for i in downsample_indices(&spec.classification.classes, spec.downsample) {
        let _ = writeln!(
            s,
            r#"<circle class="{}" cx="{:.2}" cy="{:.2}" r="1.2" data-i="{i}"/>"#,
            spec.classification.classes[i].as_str(),
            x(i as f64),
            y(spec.deltas[i] as f64)
        );
    }
    let _ = writeln!(s, "</g>");

    let step = spec.mean.len().div_ceil(MAX_MEAN_VERTICES).max(1);
    let mut pts = String::new();
    let offset = spec.window.saturating_sub(1) as f64;
    for (i, m) in spec.mean.iter().enumerate().step_by(step) {
        let _ = write!(pts, "{:.2},{:.2} ", x(i as f64 + offset), y(*m));
    }
    if let Some(last) = spec.mean.len().checked_sub(1).filter(|l| l % step != 0) {
        let _ = write!(pts, "{:.2},{:.2}", x(last as f64 + offset), y(spec.mean[last]));
    }
    let _ = writeln!(s, r#"<polyline class="mean" points="{}"/>"#, pts.trim_end());

    for (label, idx, value) in [
        ("min", first_extreme(spec.deltas, false), lo),
        ("max", first_extreme(spec.deltas, true), hi),
    ] {
        let (cx, cy) = (x(idx as f64), y(value as f64));
        let _ = writeln!(
            s,
            r#"<path class="marker {label}" d="M{:.2},{:.2} L{:.2},{:.2} L{:.2},{:.2} Z" data-i="{idx}"/>"#,
            cx - 5.0,
            cy - 9.0,
            cx + 5.0,
            cy - 9.0,
            cx,
            cy - 1.0
        );
        let _ = writeln!(
            s,
            r#"<text class="marker-label {label}" x="{:.2}" y="{:.2}" text-anchor="middle">{label} {value}</text>"#,
            cx,
            cy - 12.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn axes(s: &mut String, xlabel: &str, ylabel: &str) {
    let (x0, y0) = (MARGIN_L, HEIGHT - MARGIN_B);
    let _ = writeln!(s, r#"<line class="axis" x1="{x0}" y1="{MARGIN_T}" x2="{x0}" y2="{y0}"/>"#);
    let _ = writeln!(s, r#"<line class="axis" x1="{x0}" y1="{y0}" x2="{}" y2="{y0}"/>"#, WIDTH - MARGIN_R);
    let _ = writeln!(
        s,
        r#"<text class="axis-label x" x="{:.1}" y="{:.1}" text-anchor="middle">{xlabel}</text>"#,
        MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text class="axis-label y" x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">{ylabel}</text>"#,
        MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
        MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0
    );
}

pub fn render_timeseries(spec: &PlotSpec<'_>, path: impl AsRef<Path>) -> Result<(), ReportError> {
    let svg = timeseries_svg(spec)?;
    fs::write(path, svg)?;
    Ok(())
}

/// Paired bars per scenario on a log10 axis: max spread upwards, min spread
/// downwards from the 1x baseline. Bars appear in the order given.
pub fn spread_chart_svg(summaries: &[(String, SpreadSummary)]) -> Result<String, ReportError> {
    if summaries.is_empty() {
        return Err(ReportError::NoSummaries);
    }
    let decades = summaries
        .iter()
        .flat_map(|(_, s)| [s.max_spread.log10(), s.min_spread.log10()])
        .fold(0.0f64, f64::max)
        .ceil()
        .max(1.0);
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let zero = MARGIN_T + plot_h / 2.0;
    let per_decade = plot_h / 2.0 / decades;
    let slot = (WIDTH - MARGIN_L - MARGIN_R) / summaries.len() as f64;
    let bar_w = (slot * 0.6).min(80.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, "<style>{STYLE}</style>");
    let _ = writeln!(s, r#"<line class="axis" x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{}"/>"#, HEIGHT - MARGIN_B);
    let _ = writeln!(s, r#"<line class="axis" x1="{MARGIN_L}" y1="{zero:.2}" x2="{}" y2="{zero:.2}"/>"#, WIDTH - MARGIN_R);
    for d in 0..=decades as i32 {
        for sign in [1.0, -1.0] {
            if d == 0 && sign < 0.0 {
                continue;
            }
            let _ = writeln!(
                s,
                r#"<text class="tick" x="{:.1}" y="{:.1}" text-anchor="end">{}1e{d}</text>"#,
                MARGIN_L - 4.0,
                zero - sign * d as f64 * per_decade + 4.0,
                if sign < 0.0 { "-" } else { "" }
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text class="axis-label y" x="20" y="{zero:.1}" text-anchor="middle" transform="rotate(-90 20 {zero:.1})">spread relative to median (log10)</text>"#
    );
    for (k, (label, summary)) in summaries.iter().enumerate() {
        let cx = MARGIN_L + slot * (k as f64 + 0.5);
        let up = summary.max_spread.log10().max(0.0) * per_decade;
        let down = summary.min_spread.log10().max(0.0) * per_decade;
        let label = escape(label);
        let _ = writeln!(
            s,
            r#"<rect class="bar max" data-label="{label}" x="{:.2}" y="{:.2}" width="{:.2}" height="{up:.2}"/>"#,
            cx - bar_w / 2.0,
            zero - up,
            bar_w
        );
        let _ = writeln!(
            s,
            r#"<rect class="bar min" data-label="{label}" x="{:.2}" y="{zero:.2}" width="{:.2}" height="{down:.2}"/>"#,
            cx - bar_w / 2.0,
            bar_w
        );
        let _ = writeln!(
            s,
            r#"<text class="bar-label" x="{cx:.2}" y="{:.1}" text-anchor="middle">{label}</text>"#,
            HEIGHT - MARGIN_B + 18.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_spread_chart(summaries: &[(String, SpreadSummary)], path: impl AsRef<Path>) -> Result<(), ReportError> {
    let svg = spread_chart_svg(summaries)?;
    fs::write(path, svg)?;
    Ok(())
}

/// `index,delta,class` rows with a header line.
pub fn write_points_csv<W: Write>(deltas: &[u64], classification: &OutlierClassification, w: W) -> Result<(), ReportError> {
    if classification.len() != deltas.len() {
        return Err(ReportError::LengthMismatch(format!(
            "{} classes for {} deltas",
            classification.len(),
            deltas.len()
        )));
    }
    let mut w = io::BufWriter::new(w);
    writeln!(w, "index,delta,class")?;
    for (i, (d, c)) in deltas.iter().zip(&classification.classes).enumerate() {
        writeln!(w, "{i},{d},{}", c.as_str())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{classify_outliers, sliding_mean, spreads};

    fn count(svg: &str, needle: &str) -> usize {
        svg.matches(needle).count()
    }

    #[test]
    fn constant_trace_structure() {
        let d = vec![40u64; 100];
        let c = classify_outliers(&d, 0.0005, 0.9995).unwrap();
        let m = sliding_mean(&d, 10).unwrap();
        let spec = PlotSpec {
            deltas: &d,
            classification: &c,
            mean: &m,
            window: 10,
            downsample: None,
            unit: "ns",
            title: "flat",
        };
        let svg = timeseries_svg(&spec).unwrap();
        assert_eq!(count(&svg, "<circle "), 100);
        assert_eq!(count(&svg, "<polyline class=\"mean\""), 1);
        assert_eq!(count(&svg, "<path class=\"marker"), 2);
        assert!(svg.contains("min 40") && svg.contains("max 40"));
        assert!(svg.contains("latency [ns]"));
    }

    #[test]
    fn markers_at_first_occurrence() {
        let d = vec![5, 1, 9, 1, 9];
        let c = classify_outliers(&d, 0.0005, 0.9995).unwrap();
        let m = sliding_mean(&d, 5).unwrap();
        let svg = timeseries_svg(&PlotSpec {
            deltas: &d,
            classification: &c,
            mean: &m,
            window: 5,
            downsample: None,
            unit: "ticks",
            title: "",
        })
        .unwrap();
        assert!(svg.contains(r#"<path class="marker min""#));
        let min_line = svg.lines().find(|l| l.contains("marker min")).unwrap();
        let max_line = svg.lines().find(|l| l.contains("marker max")).unwrap();
        assert!(min_line.contains(r#"data-i="1""#));
        assert!(max_line.contains(r#"data-i="2""#));
    }

    #[test]
    fn empty_and_mismatch_rejected() {
        let empty = OutlierClassification { classes: vec![], q_low: 0, q_high: 0, normal: 0, low: 0, high: 0 };
        let spec = PlotSpec {
            deltas: &[],
            classification: &empty,
            mean: &[],
            window: 1,
            downsample: None,
            unit: "ns",
            title: "",
        };
        assert!(matches!(timeseries_svg(&spec), Err(ReportError::Empty)));

        let d = vec![1u64, 2, 3];
        let c = classify_outliers(&d, 0.1, 0.9).unwrap();
        let spec = PlotSpec { deltas: &d[..2], classification: &c, ..spec };
        assert!(matches!(timeseries_svg(&spec), Err(ReportError::LengthMismatch(_))));
    }

    #[test]
    fn downsampling_keeps_extremes() {
        let classes: Vec<PointClass> = (0..10_000)
            .map(|i| if i % 997 == 0 { PointClass::HighExtreme } else { PointClass::Normal })
            .collect();
        let kept = downsample_indices(&classes, Some(500));
        let normal = kept.iter().filter(|&&i| classes[i] == PointClass::Normal).count();
        let extreme = kept.iter().filter(|&&i| classes[i] != PointClass::Normal).count();
        assert!(normal <= 500 && normal > 400);
        assert_eq!(extreme, classes.iter().filter(|&&c| c != PointClass::Normal).count());
        assert_eq!(downsample_indices(&classes, None).len(), 10_000);
    }

    #[test]
    fn spread_bars() {
        let one = spreads(&[7, 7]).unwrap();
        let svg = spread_chart_svg(&[("only".into(), one.clone())]).unwrap();
        assert_eq!(count(&svg, "<rect class=\"bar"), 2);
        assert_eq!(count(&svg, r#"height="0.00""#), 2);

        let wide = spreads(&[1, 10, 1000]).unwrap();
        let items = vec![("c".to_string(), one.clone()), ("a".to_string(), wide), ("b".to_string(), one)];
        let svg = spread_chart_svg(&items).unwrap();
        assert_eq!(count(&svg, "<rect class=\"bar"), 6);
        let order: Vec<&str> = svg
            .lines()
            .filter(|l| l.contains("bar max"))
            .map(|l| l.split("data-label=\"").nth(1).unwrap().split('"').next().unwrap())
            .collect();
        assert_eq!(order, ["c", "a", "b"]);
        assert!(matches!(spread_chart_svg(&[]), Err(ReportError::NoSummaries)));
    }

    #[test]
    fn points_csv() {
        let d = vec![3u64, 3, 300];
        let c = classify_outliers(&d, 0.0, 0.5).unwrap();
        let mut out = Vec::new();
        write_points_csv(&d, &c, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "index,delta,class\n0,3,normal\n1,3,normal\n2,300,high\n");
    }
}
