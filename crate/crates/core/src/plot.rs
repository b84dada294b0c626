//! Static SVG charts rendered from the CSV reports. Presentation only; the
//! numbers live in the CSV files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Axis { lo, hi, log }
    }

    /// Position in `[0, 1]`, or `None` for values a log axis cannot show.
    fn unit(&self, v: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let v = if self.log { v.log10() } else { v };
        Some((v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.floor() as i32, self.hi.ceil() as i32);
            (a..=b)
                .map(|e| (10f64.powi(e), format!("1e{e}")))
                .filter(|(v, _)| self.unit(*v).is_some_and(|u| (-1e-9..=1.0 + 1e-9).contains(&u)))
                .collect()
        } else {
            (0..=4)
                .map(|i| {
                    let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                    (v, format!("{v:.3}"))
                })
                .collect()
        }
    }
}

impl LineChart {
    pub fn render(&self) -> String {
        let xs = Axis::fit(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), self.log_x);
        let ys = Axis::fit(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), self.log_y);
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let px = |u: f64| MARGIN_L + u * pw;
        let py = |u: f64| MARGIN_T + (1.0 - u) * ph;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            MARGIN_L + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for (v, label) in xs.ticks() {
            let x = px(xs.unit(v).unwrap_or(0.0));
            let _ = writeln!(
                svg,
                r##"<line x1="{x:.2}" y1="{MARGIN_T}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"##,
                MARGIN_T + ph,
                MARGIN_T + ph + 15.0
            );
        }
        for (v, label) in ys.ticks() {
            let y = py(ys.unit(v).unwrap_or(0.0));
            let _ = writeln!(
                svg,
                r##"<line x1="{MARGIN_L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
                MARGIN_L + pw,
                MARGIN_L - 5.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            MARGIN_T + ph / 2.0,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );

        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter_map(|&(x, y)| Some(format!("{:.2},{:.2}", px(xs.unit(x)?), py(ys.unit(y)?))))
                .collect();
            if !pts.is_empty() {
                let _ = writeln!(
                    svg,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    pts.join(" ")
                );
            }
            let ly = MARGIN_T + 12.0 + 16.0 * i as f64;
            let lx = WIDTH - MARGIN_R + 10.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                lx + 18.0,
                lx + 22.0,
                ly + 4.0,
                escape(&s.name)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let rows = reader
        .records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_owned).collect())
                .map_err(|e| Error::Csv(e.to_string()))
        })
        .collect::<Result<_>>()?;
    Ok((headers, rows))
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

/// Picks a chart for a report CSV by its header: covariance study, sweep,
/// ROC curve or eval table.
pub fn chart_for_csv(path: &Path) -> Result<LineChart> {
    let (headers, rows) = read_table(path)?;
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();

    if let (Some(metric), Some(class), Some(est), Some(pool), Some(count), Some(value)) = (
        col("metric"),
        col("class"),
        col("estimator"),
        col("pooling"),
        col("shadow_count"),
        col("value"),
    ) {
        for r in rows.iter().filter(|r| r[metric] == "frobenius_error") {
            let key = format!("{} {} {}", r[class], r[est], r[pool]);
            series.entry(key).or_default().push((num(&r[count]), num(&r[value])));
        }
        return Ok(LineChart {
            title: "Covariance approximation error".into(),
            x_label: "shadow models".into(),
            y_label: "Frobenius error to gold".into(),
            log_x: true,
            log_y: true,
            series: into_series(series),
        });
    }
    if let (Some(config), Some(count), Some(fpr), Some(tpr)) = (
        col("config"),
        col("shadow_count"),
        col("fpr_target"),
        col("tpr"),
    ) {
        for r in &rows {
            let key = format!("{} @ FPR {}", r[config], r[fpr]);
            series.entry(key).or_default().push((num(&r[count]), num(&r[tpr])));
        }
        return Ok(LineChart {
            title: "TPR vs. shadow models".into(),
            x_label: "shadow models".into(),
            y_label: "TPR".into(),
            log_x: true,
            log_y: false,
            series: into_series(series),
        });
    }
    if let (Some(fpr), Some(tpr), Some(_)) = (col("fpr"), col("tpr"), col("threshold")) {
        let pts = rows.iter().map(|r| (num(&r[fpr]), num(&r[tpr]))).collect();
        series.insert("attack".into(), pts);
        series.insert("chance".into(), vec![(1e-6, 1e-6), (1.0, 1.0)]);
        return Ok(LineChart {
            title: "ROC (log-log)".into(),
            x_label: "FPR".into(),
            y_label: "TPR".into(),
            log_x: true,
            log_y: true,
            series: into_series(series),
        });
    }
    if let (Some(scope), Some(fpr), Some(tpr)) = (col("scope"), col("fpr_target"), col("tpr")) {
        for r in rows.iter().filter(|r| r[scope] == "pooled") {
            series
                .entry("pooled".into())
                .or_default()
                .push((num(&r[fpr]), num(&r[tpr])));
        }
        return Ok(LineChart {
            title: "TPR at FPR targets".into(),
            x_label: "FPR".into(),
            y_label: "TPR".into(),
            log_x: true,
            log_y: true,
            series: into_series(series),
        });
    }
    Err(Error::Csv(format!(
        "{}: unrecognized report columns {headers:?}",
        path.display()
    )))
}

fn into_series(map: BTreeMap<String, Vec<(f64, f64)>>) -> Vec<Series> {
    map.into_iter()
        .map(|(name, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { name, points }
        })
        .collect()
}
