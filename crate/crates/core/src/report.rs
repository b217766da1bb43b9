//! CSV export of sweep records and SVG degradation charts.
//!
//! Charts are always derived from CSV rows, never from in-memory sweep state.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sweep::SweepReport;

pub const CSV_HEADER: [&str; 8] = [
    "transform",
    "class_id",
    "class_name",
    "intensity",
    "replicate",
    "iou",
    "split",
    "seed",
];

/// Fixed palette; classes take colors in ascending id order.
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Replicate-averaged IoU per (transform, class, intensity bits).
pub fn class_curves<'a>(
    points: impl IntoIterator<Item = (&'a str, u8, f64, Option<f64>)>,
) -> BTreeMap<(String, u8), BTreeMap<u64, Option<f64>>> {
    let mut acc: BTreeMap<(String, u8), BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for (transform, class_id, x, iou) in points {
        let slot = acc
            .entry((transform.to_string(), class_id))
            .or_default()
            .entry(x.to_bits())
            .or_insert((0.0, 0));
        if let Some(v) = iou {
            slot.0 += v;
            slot.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(k, xs)| {
            let ys = xs
                .into_iter()
                .map(|(x, (sum, n))| (x, (n > 0).then(|| sum / n as f64)))
                .collect();
            (k, ys)
        })
        .collect()
}

/// Mean over classes of the replicate-averaged IoU, per (transform,
/// intensity bits). Classes with undefined IoU at a point are skipped.
pub fn mean_curves<'a>(
    points: impl IntoIterator<Item = (&'a str, u8, f64, Option<f64>)>,
) -> HashMap<(String, u64), Option<f64>> {
    let mut acc: HashMap<(String, u64), (f64, usize)> = HashMap::new();
    for ((transform, _), ys) in class_curves(points) {
        for (x, y) in ys {
            let slot = acc.entry((transform.clone(), x)).or_insert((0.0, 0));
            if let Some(v) = y {
                slot.0 += v;
                slot.1 += 1;
            }
        }
    }
    acc.into_iter()
        .map(|(k, (sum, n))| (k, (n > 0).then(|| sum / n as f64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub transform: String,
    pub class_id: u8,
    pub class_name: String,
    pub intensity: f64,
    pub replicate: u32,
    pub iou: Option<f64>,
    pub split: String,
    pub seed: u64,
}

impl CsvRow {
    fn fields(&self) -> [String; 8] {
        [
            self.transform.clone(),
            self.class_id.to_string(),
            self.class_name.clone(),
            format!("{:.6}", self.intensity),
            self.replicate.to_string(),
            self.iou.map(|v| format!("{v:.6}")).unwrap_or_default(),
            self.split.clone(),
            self.seed.to_string(),
        ]
    }
}

/// CSV rows of a report, ordered by transform (config order), class,
/// intensity and replicate.
pub fn csv_rows(report: &SweepReport) -> Vec<CsvRow> {
    let order = report.transforms();
    let mut rows: Vec<(usize, CsvRow)> = report
        .records
        .iter()
        .map(|r| {
            let rank = order
                .iter()
                .position(|t| *t == r.transform)
                .unwrap_or(usize::MAX);
            (
                rank,
                CsvRow {
                    transform: r.transform.clone(),
                    class_id: r.class_id,
                    class_name: report
                        .class_names
                        .get(&r.class_id)
                        .cloned()
                        .unwrap_or_default(),
                    intensity: r.intensity,
                    replicate: r.replicate,
                    iou: r.iou,
                    split: report.split.to_string(),
                    seed: report.seed,
                },
            )
        })
        .collect();
    rows.sort_by(|(ra, a), (rb, b)| {
        ra.cmp(rb)
            .then(a.class_id.cmp(&b.class_id))
            .then(a.intensity.total_cmp(&b.intensity))
            .then(a.replicate.cmp(&b.replicate))
    });
    rows.into_iter().map(|(_, r)| r).collect()
}

pub fn to_csv_string(report: &SweepReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)
        .map_err(|e| Error::Csv(e.to_string()))?;
    for row in csv_rows(report) {
        w.write_record(row.fields())
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn to_csv(report: &SweepReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_csv_string(report)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Csv(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Csv(format!("unexpected header {headers:?}")));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let bad = |field: &str| Error::Csv(format!("row {}: bad {field}", line + 2));
        let iou = match &record[5] {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|_| bad("iou"))?),
        };
        rows.push(CsvRow {
            transform: record[0].to_string(),
            class_id: record[1].parse().map_err(|_| bad("class_id"))?,
            class_name: record[2].to_string(),
            intensity: record[3].parse().map_err(|_| bad("intensity"))?,
            replicate: record[4].parse().map_err(|_| bad("replicate"))?,
            iou,
            split: record[6].to_string(),
            seed: record[7].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(rows)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let path = path.as_ref();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile {
                path: path.to_path_buf(),
            })
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    parse_csv(&text)
}

/// Transform labels in first-appearance order.
pub fn transforms_in(rows: &[CsvRow]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows {
        if !out.contains(&r.transform) {
            out.push(r.transform.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub class_id: u8,
    pub name: String,
    /// One value per x; `None` marks a gap.
    pub y: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    pub transform: String,
    pub x: Vec<f64>,
    pub series: Vec<Series>,
    pub mean: Vec<Option<f64>>,
    pub comparison: Option<Comparison>,
}

impl CurveSet {
    pub fn from_rows(rows: &[CsvRow], transform: &str) -> Result<Self> {
        let rows: Vec<&CsvRow> = rows.iter().filter(|r| r.transform == transform).collect();
        if rows.is_empty() {
            return Err(Error::Csv(format!("no rows for transform `{transform}`")));
        }
        let mut x: Vec<f64> = rows.iter().map(|r| r.intensity).collect();
        x.sort_by(f64::total_cmp);
        x.dedup();

        let names: BTreeMap<u8, &str> = rows
            .iter()
            .map(|r| (r.class_id, r.class_name.as_str()))
            .collect();
        let curves = class_curves(
            rows.iter()
                .map(|r| (r.transform.as_str(), r.class_id, r.intensity, r.iou)),
        );
        let series: Vec<Series> = names
            .iter()
            .map(|(&class_id, &name)| {
                let ys = &curves[&(transform.to_string(), class_id)];
                Series {
                    class_id,
                    name: name.to_string(),
                    y: x.iter()
                        .map(|xv| ys.get(&xv.to_bits()).copied().flatten())
                        .collect(),
                }
            })
            .collect();
        let mean = (0..x.len())
            .map(|i| {
                let defined: Vec<f64> = series.iter().filter_map(|s| s.y[i]).collect();
                (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
            })
            .collect();
        Ok(Self {
            transform: transform.to_string(),
            x,
            series,
            mean,
            comparison: None,
        })
    }

    /// Adds the mean curve of the same transform from another CSV as the
    /// dashed comparison series.
    pub fn with_comparison(mut self, rows: &[CsvRow], label: &str) -> Result<Self> {
        let other = CurveSet::from_rows(rows, &self.transform)?;
        self.comparison = Some(Comparison {
            label: label.to_string(),
            x: other.x,
            y: other.mean,
        });
        Ok(self)
    }
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 50.0;
const PLOT_W: f64 = 540.0;
const PLOT_H: f64 = 480.0;

fn sx(x: f64) -> f64 {
    LEFT + x * PLOT_W
}

fn sy(y: f64) -> f64 {
    TOP + (1.0 - y) * PLOT_H
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Splits a series at gaps into runs of consecutive defined points.
pub fn segments(x: &[f64], y: &[Option<f64>]) -> Vec<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut run = Vec::new();
    for (&xv, yv) in x.iter().zip(y) {
        match yv {
            Some(v) => run.push((xv, *v)),
            None if !run.is_empty() => out.push(std::mem::take(&mut run)),
            None => {}
        }
    }
    if !run.is_empty() {
        out.push(run);
    }
    out
}

fn draw_series(svg: &mut String, x: &[f64], y: &[Option<f64>], style: &str, class: &str) {
    for seg in segments(x, y) {
        // Exact values ride along so the plot can be checked against the CSV.
        let data: Vec<String> = seg
            .iter()
            .map(|&(px, py)| format!("{px:?}:{py:?}"))
            .collect();
        let data = data.join(" ");
        if let [(px, py)] = seg[..] {
            let _ = writeln!(
                svg,
                r#"<circle class="{class}" data-values="{data}" cx="{:.2}" cy="{:.2}" r="2.5" {style}/>"#,
                sx(px),
                sy(py)
            );
            continue;
        }
        let points: Vec<String> = seg
            .iter()
            .map(|&(px, py)| format!("{:.2},{:.2}", sx(px), sy(py)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="{class}" data-values="{data}" fill="none" {style} points="{}"/>"#,
            points.join(" ")
        );
    }
}

pub fn render_svg_string(curves: &CurveSet) -> String {
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="30" text-anchor="middle" font-size="16">{}</text>"#,
        LEFT + PLOT_W / 2.0,
        escape(&curves.transform)
    );

    for i in 0..=5 {
        let v = f64::from(i) / 5.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            sx(0.0),
            sx(1.0),
            y = sy(v)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            sx(0.0) - 6.0,
            sy(v) + 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#,
            sx(v),
            sy(0.0) + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{PLOT_W}" height="{PLOT_H}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">intensity</text>"#,
        LEFT + PLOT_W / 2.0,
        HEIGHT - 20.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">IoU</text>"#,
        TOP + PLOT_H / 2.0,
        TOP + PLOT_H / 2.0
    );

    for (i, s) in curves.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        draw_series(
            &mut svg,
            &curves.x,
            &s.y,
            &format!(r#"stroke="{color}" fill="{color}" stroke-width="1.5""#),
            &format!("class-{}", s.class_id),
        );
    }
    draw_series(
        &mut svg,
        &curves.x,
        &curves.mean,
        r#"stroke="black" fill="black" stroke-width="3""#,
        "mean",
    );
    if let Some(cmp) = &curves.comparison {
        draw_series(
            &mut svg,
            &cmp.x,
            &cmp.y,
            r#"stroke="black" fill="black" stroke-width="2" stroke-dasharray="8,5""#,
            "comparison",
        );
    }

    let lx = LEFT + PLOT_W + 20.0;
    let mut ly = TOP + 10.0;
    let mut legend = |svg: &mut String, label: &str, style: &str| {
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" {style}/>"#,
            lx + 24.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            escape(label)
        );
        ly += 20.0;
    };
    for (i, s) in curves.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let label = if s.name.is_empty() {
            s.class_id.to_string()
        } else {
            s.name.clone()
        };
        legend(
            &mut svg,
            &label,
            &format!(r#"stroke="{color}" stroke-width="1.5""#),
        );
    }
    legend(&mut svg, "mean", r#"stroke="black" stroke-width="3""#);
    if let Some(cmp) = &curves.comparison {
        legend(
            &mut svg,
            &cmp.label,
            r#"stroke="black" stroke-width="2" stroke-dasharray="8,5""#,
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn render_svg(curves: &CurveSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_svg_string(curves)).map_err(|e| Error::io(path, e))
}

/// Renders one `<transform>.svg` per transform found in `rows`; returns the
/// written paths.
pub fn render_all(
    rows: &[CsvRow],
    compare: Option<(&[CsvRow], &str)>,
    out_dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for transform in transforms_in(rows) {
        let mut curves = CurveSet::from_rows(rows, &transform)?;
        if let Some((other, label)) = compare {
            if other.iter().any(|r| r.transform == transform) {
                curves = curves.with_comparison(other, label)?;
            }
        }
        let path = out_dir.join(format!("{transform}.svg"));
        render_svg(&curves, &path)?;
        written.push(path);
    }
    Ok(written)
}
