//! Long-format results, seed aggregation and CSV / JSON / SVG emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::mean_std;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub coord: String,
    pub c: Option<f64>,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub coord: String,
    pub c: Option<f64>,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub kind: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
    /// Wall-clock time; not written to any output file.
    pub runtime: Duration,
}

/// SHA-256 of the compact JSON form of a configuration.
pub fn config_hash<T: Serialize>(config: &T) -> Result<(serde_json::Value, String)> {
    let value = serde_json::to_value(config).map_err(|e| Error::Format(e.to_string()))?;
    let text = serde_json::to_string(&value).map_err(|e| Error::Format(e.to_string()))?;
    let digest = Sha256::digest(text.as_bytes());
    let hex = digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    });
    Ok((value, hex))
}

/// Mean and sample standard deviation across seeds, grouped by
/// `(method, coord, c, metric)` in order of first appearance.
pub fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, &str, Option<u64>, &str)> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let key = (r.method.as_str(), r.coord.as_str(), r.c.map(f64::to_bits), r.metric.as_str());
        match keys.iter().position(|k| *k == key) {
            Some(i) => values[i].push(r.value),
            None => {
                keys.push(key);
                values.push(vec![r.value]);
            }
        }
    }
    keys.into_iter()
        .zip(values)
        .map(|((method, coord, c, metric), v)| {
            let (mean, std) = mean_std(&v);
            SummaryRow {
                method: method.to_string(),
                coord: coord.to_string(),
                c: c.map(f64::from_bits),
                metric: metric.to_string(),
                mean,
                std,
                count: v.len(),
            }
        })
        .collect()
}

fn opt(c: Option<f64>) -> String {
    c.map(|v| v.to_string()).unwrap_or_default()
}

impl ExperimentReport {
    pub fn new<T: Serialize>(kind: &str, config: &T, seeds: Vec<u64>, rows: Vec<ReportRow>, runtime: Duration) -> Result<Self> {
        let (config, config_hash) = config_hash(config)?;
        let summary = summarize(&rows);
        Ok(Self {
            kind: kind.to_string(),
            config,
            config_hash,
            seeds,
            rows,
            summary,
            runtime,
        })
    }

    pub fn summary_for(&self, method: &str, coord: &str, c: Option<f64>, metric: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| {
            s.method == method
                && s.coord == coord
                && s.metric == metric
                && s.c.map(f64::to_bits) == c.map(f64::to_bits)
        })
    }

    /// Long format: `method,coord,c,seed,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,coord,c,seed,metric,value\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.method, r.coord, opt(r.c), r.seed, r.metric, r.value);
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,coord,c,metric,mean,std,count\n");
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.method,
                s.coord,
                opt(s.c),
                s.metric,
                s.mean,
                s.std,
                s.count
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            kind: &'a str,
            config_hash: &'a str,
            config: &'a serde_json::Value,
            seeds: &'a [u64],
            summary: &'a [SummaryRow],
        }
        let doc = Doc {
            kind: &self.kind,
            config_hash: &self.config_hash,
            config: &self.config,
            seeds: &self.seeds,
            summary: &self.summary,
        };
        let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// Writes `<kind>.csv`, `<kind>_summary.csv`, `<kind>.json` and
    /// `<kind>.svg` into `dir`; returns the paths written.
    pub fn write_all(&self, dir: &Path, chart: &Chart) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let files = [
            (format!("{}.csv", self.kind), self.to_csv()),
            (format!("{}_summary.csv", self.kind), self.summary_csv()),
            (format!("{}.json", self.kind), self.to_json()?),
            (format!("{}.svg", self.kind), chart.to_svg()),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// One line with per-point error bars.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    /// `(x, mean, std)`.
    pub points: Vec<(f64, f64, f64)>,
    pub dashed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Chart {
    pub panels: Vec<Panel>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#2ca02c", "#7f7f7f", "#a0a0a0", "#5a5a5a", "#d62728", "#9467bd", "#ff7f0e",
];

impl Chart {
    /// Panels side by side, each a line chart with error bars.
    pub fn to_svg(&self) -> String {
        let (pw, ph) = (420.0, 320.0);
        let (ml, mr, mt, mb) = (60.0, 20.0, 30.0, 50.0);
        let width = pw * self.panels.len().max(1) as f64;
        let legend_h = 18.0 * self.panels.iter().map(|p| p.series.len()).max().unwrap_or(0) as f64;
        let height = ph + legend_h + 10.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        for (k, panel) in self.panels.iter().enumerate() {
            let ox = k as f64 * pw;
            let pts = panel.series.iter().flat_map(|se| se.points.iter());
            let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
            for &(x, m, sd) in pts {
                if !(x.is_finite() && m.is_finite()) {
                    continue;
                }
                let sd = if sd.is_finite() { sd } else { 0.0 };
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(m - sd);
                y1 = y1.max(m + sd);
            }
            if !x0.is_finite() {
                (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
            }
            if x1 == x0 {
                x0 -= 0.5;
                x1 += 0.5;
            }
            let pad = if y1 > y0 { 0.05 * (y1 - y0) } else { 0.5 };
            y0 -= pad;
            y1 += pad;
            let iw = pw - ml - mr;
            let ih = ph - mt - mb;
            let sx = |x: f64| ox + ml + (x - x0) / (x1 - x0) * iw;
            let sy = |y: f64| mt + ih - (y - y0) / (y1 - y0) * ih;
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
                ox + ml + iw / 2.0,
                escape(&panel.title)
            );
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{mt:.2}" width="{iw:.2}" height="{ih:.2}" fill="none" stroke="black"/>"#,
                ox + ml
            );
            for t in 0..=4 {
                let fy = y0 + (y1 - y0) * t as f64 / 4.0;
                let fx = x0 + (x1 - x0) * t as f64 / 4.0;
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                    ox + ml - 4.0,
                    sy(fy) + 4.0,
                    tick(fy)
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                    sx(fx),
                    mt + ih + 15.0,
                    tick(fx)
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                ox + ml + iw / 2.0,
                mt + ih + 35.0,
                escape(&panel.x_label)
            );
            let _ = writeln!(
                s,
                r#"<text transform="translate({:.2},{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
                ox + 14.0,
                mt + ih / 2.0,
                escape(&panel.y_label)
            );
            for (j, se) in panel.series.iter().enumerate() {
                let color = PALETTE[j % PALETTE.len()];
                let dash = if se.dashed { r#" stroke-dasharray="5,3""# } else { "" };
                let finite: Vec<_> = se.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
                let path: Vec<String> = finite.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                    path.join(" ")
                );
                for p in &finite {
                    let (x, m, sd) = **p;
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(x), sy(m));
                    if sd.is_finite() && sd > 0.0 {
                        let _ = writeln!(
                            s,
                            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}"/>"#,
                            sx(x),
                            sy(m - sd),
                            sx(x),
                            sy(m + sd)
                        );
                    }
                }
                let ly = ph + 4.0 + 18.0 * j as f64;
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
                    ox + ml,
                    ox + ml + 20.0
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
                    ox + ml + 26.0,
                    ly + 4.0,
                    escape(&se.name)
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else if a < 0.1 {
        format!("{v:.3}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, seed: u64, value: f64) -> ReportRow {
        ReportRow {
            method: method.into(),
            coord: "theta_1".into(),
            c: Some(0.024),
            seed,
            metric: "correlation".into(),
            value,
        }
    }

    #[test]
    fn summary_groups_in_order() {
        let rows = vec![row("b", 0, 1.0), row("a", 0, 0.5), row("b", 1, 3.0)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].method, "b");
        assert_eq!(s[0].mean, 2.0);
        assert!((s[0].std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s[1].count, 1);
    }

    #[test]
    fn csv_and_json_are_stable() {
        #[derive(Serialize)]
        struct Cfg {
            x: f64,
        }
        let r = ExperimentReport::new("demo", &Cfg { x: 0.1 }, vec![0, 1], vec![row("a", 0, 0.25), row("a", 1, 0.75)], Duration::from_secs(3))
            .unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "method,coord,c,seed,metric,value");
        assert_eq!(csv.lines().nth(1).unwrap(), "a,theta_1,0.024,0,correlation,0.25");
        let json = r.to_json().unwrap();
        assert!(json.contains(&r.config_hash));
        assert!(!json.contains("runtime"));
        let again = ExperimentReport::new("demo", &Cfg { x: 0.1 }, vec![0, 1], r.rows.clone(), Duration::from_secs(9)).unwrap();
        assert_eq!(again.to_json().unwrap(), json);
        assert_eq!(r.config_hash.len(), 64);
        assert!(r.summary_for("a", "theta_1", Some(0.024), "correlation").is_some());
        assert!(r.summary_for("a", "theta_1", None, "correlation").is_none());
    }

    #[test]
    fn svg_is_well_formed() {
        let chart = Chart {
            panels: vec![Panel {
                title: "θ₁ <corr>".into(),
                x_label: "c".into(),
                y_label: "correlation".into(),
                series: vec![Series {
                    name: "observer".into(),
                    points: vec![(0.008, 0.5, 0.1), (0.024, 0.7, 0.05), (0.03, f64::NAN, 0.0)],
                    dashed: false,
                }],
            }],
        };
        let svg = chart.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("&lt;corr&gt;"));
        assert!(!svg.contains("NaN"));
        assert_eq!(svg, chart.to_svg());
    }
}
