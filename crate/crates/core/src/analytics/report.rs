use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Availability, CumulativeSeries, DailyStats, ReplicationSeries, SuspectGroup};
use crate::store::{Bucket, ObjectKey, ObjectStore, StoreError};
use crate::types::DayKey;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("serialization failed: {0}")]
    Serialize(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    /// Static line plots.
    Svg,
}

/// Everything written for one day.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub day: Option<DayKey>,
    pub stats: DailyStats,
    pub availability: Option<Availability>,
    pub cumulative: CumulativeSeries,
    pub top_replicated: Vec<ReplicationSeries>,
    pub top_coverage_percent: f64,
    pub coordinated: Vec<SuspectGroup>,
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| ReportError::Serialize(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| ReportError::Serialize(e.to_string()))?;
    }
    w.into_inner().map_err(|e| ReportError::Serialize(e.to_string()))
}

/// Writes the report under `datasets/<day>/reports/`. JSON and CSV output is
/// byte-identical for identical inputs.
pub fn emit_report(
    store: &dyn ObjectStore,
    day: DayKey,
    report: &Report,
    formats: &[ReportFormat],
) -> Result<Vec<ObjectKey>, ReportError> {
    let mut keys = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<(), ReportError> {
        keys.push(store.put_object(Bucket::Datasets, day, &format!("reports/{name}"), bytes)?);
        Ok(())
    };
    if formats.contains(&ReportFormat::Json) {
        let mut json = serde_json::to_vec_pretty(report).map_err(|e| ReportError::Serialize(e.to_string()))?;
        json.push(b'\n');
        put("report.json", &json)?;
    }
    if formats.contains(&ReportFormat::Csv) {
        let rows = report
            .top_replicated
            .iter()
            .enumerate()
            .map(|(i, s)| {
                vec![
                    (i + 1).to_string(),
                    s.group.to_string(),
                    s.representative.clone(),
                    s.title.clone().unwrap_or_default(),
                    s.topic.clone().unwrap_or_default(),
                    s.first_seen.iso(),
                    s.total_duplicates.to_string(),
                    s.active_days.to_string(),
                    format!("{:.2}", s.rate),
                ]
            })
            .collect();
        put(
            "top_replicated.csv",
            &csv_bytes(
                &["rank", "group", "representative", "title", "topic", "first_seen", "total_duplicates", "active_days", "rate"],
                rows,
            )?,
        )?;
        let topics: Vec<&String> = report.cumulative.series.keys().collect();
        let mut header = vec!["day"];
        header.extend(topics.iter().map(|t| t.as_str()));
        let rows = report
            .cumulative
            .days
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let mut r = vec![d.iso()];
                r.extend(topics.iter().map(|t| report.cumulative.series[*t][i].to_string()));
                r
            })
            .collect();
        put("cumulative_by_topic.csv", &csv_bytes(&header, rows)?)?;
    }
    if formats.contains(&ReportFormat::Svg) {
        let series: Vec<(String, Vec<f64>)> = report
            .cumulative
            .series
            .iter()
            .map(|(t, v)| (t.clone(), v.iter().map(|&x| x as f64).collect()))
            .collect();
        put("cumulative_by_topic.svg", render_svg_lines("Cumulative unique services per topic", &series).as_bytes())?;
        let top: Vec<(String, Vec<f64>)> = report
            .top_replicated
            .iter()
            .map(|s| {
                let mut acc = 0.0;
                let v = s
                    .daily
                    .values()
                    .map(|&c| {
                        acc += c as f64;
                        acc
                    })
                    .collect();
                (s.title.clone().unwrap_or_else(|| s.representative.clone()), v)
            })
            .collect();
        put("top_replicated.svg", render_svg_lines("Cumulative duplicates, most replicated services", &top).as_bytes())?;
    }
    Ok(keys)
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Minimal line chart with a legend.
pub fn render_svg_lines(title: &str, series: &[(String, Vec<f64>)]) -> String {
    let (w, h, m) = (800.0, 480.0, 50.0);
    let legend_w = 220.0;
    let plot_w = w - 2.0 * m - legend_w;
    let len = series.iter().map(|s| s.1.len()).max().unwrap_or(0);
    let ymax = series.iter().flat_map(|s| s.1.iter().copied()).fold(0.0f64, f64::max).max(1.0);
    let x = |i: usize| m + if len > 1 { i as f64 / (len - 1) as f64 * plot_w } else { 0.0 };
    let y = |v: f64| h - m - v / ymax * (h - 2.0 * m);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{m}" y="{}" font-family="sans-serif" font-size="14">{}</text>"#, m / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<path d="M{m} {} V{} H{}" stroke="black" fill="none"/>"#,
        m,
        h - m,
        m + plot_w
    );
    let _ = writeln!(out, r#"<text x="5" y="{}" font-family="sans-serif" font-size="10">{ymax}</text>"#, m + 4.0);
    for (k, (name, vals)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = vals.iter().enumerate().map(|(i, &v)| format!("{:.1},{:.1}", x(i), y(v))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, pts.join(" "));
        let ly = m + 14.0 * k as f64;
        let lx = w - legend_w;
        let _ = writeln!(out, r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{color}"/>"#, ly - 9.0);
        let label: String = name.chars().take(32).collect();
        let _ = writeln!(out, r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="10">{}</text>"#, lx + 14.0, escape(&label));
    }
    out.push_str("</svg>\n");
    out
}
