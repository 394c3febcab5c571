use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{write_atomic, LocalComparisonRow, ReportError};
use crate::shap::{ImportanceEntry, SummaryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Importance,
    Summary,
    Local,
}

impl PlotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::Importance => "importance",
            PlotKind::Summary => "summary",
            PlotKind::Local => "local",
        }
    }

    fn header(self) -> &'static [&'static str] {
        match self {
            PlotKind::Importance => &["feature", "index", "mean_abs_phi"],
            PlotKind::Summary => &["feature", "instance", "phi", "feature_value", "value_percentile"],
            PlotKind::Local => &[
                "feature",
                "value",
                "raw_value",
                "shap_phi",
                "shap_sign",
                "shap_rank",
                "lime_weight",
                "lime_sign",
                "lime_rank",
                "sign_match",
            ],
        }
    }
}

impl FromStr for PlotKind {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "importance" => Ok(PlotKind::Importance),
            "summary" => Ok(PlotKind::Summary),
            "local" => Ok(PlotKind::Local),
            other => Err(ReportError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlotPayload {
    Importance(Vec<ImportanceEntry>),
    Summary(Vec<SummaryRecord>),
    Local(Vec<LocalComparisonRow>),
}

impl PlotPayload {
    pub fn kind(&self) -> PlotKind {
        match self {
            PlotPayload::Importance(_) => PlotKind::Importance,
            PlotPayload::Summary(_) => PlotKind::Summary,
            PlotPayload::Local(_) => PlotKind::Local,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            PlotPayload::Importance(v) => v.is_empty(),
            PlotPayload::Summary(v) => v.is_empty(),
            PlotPayload::Local(v) => v.is_empty(),
        }
    }
}

fn write_rows<W: Write, T: Serialize>(w: W, header: &[&str], rows: &[T]) -> Result<(), ReportError> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn read_rows<R: Read, T: DeserializeOwned>(r: R, header: &[&str]) -> Result<Vec<T>, ReportError> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(header.iter().copied()) {
        return Err(ReportError::Malformed(format!("expected header {}", header.join(","))));
    }
    rdr.deserialize().map(|r| r.map_err(ReportError::from)).collect()
}

/// CSV with a header row even when the payload is empty.
pub fn write_plot_csv<W: Write>(w: W, payload: &PlotPayload) -> Result<(), ReportError> {
    let header = payload.kind().header();
    match payload {
        PlotPayload::Importance(v) => write_rows(w, header, v),
        PlotPayload::Summary(v) => write_rows(w, header, v),
        PlotPayload::Local(v) => write_rows(w, header, v),
    }
}

pub fn read_plot_csv<R: Read>(r: R, kind: PlotKind) -> Result<PlotPayload, ReportError> {
    let header = kind.header();
    Ok(match kind {
        PlotKind::Importance => PlotPayload::Importance(read_rows(r, header)?),
        PlotKind::Summary => PlotPayload::Summary(read_rows(r, header)?),
        PlotKind::Local => PlotPayload::Local(read_rows(r, header)?),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotFiles {
    pub csv: PathBuf,
    /// `None` for an empty payload.
    pub svg: Option<PathBuf>,
}

/// Writes `<dir>/<stem>.csv` and, unless the payload is empty, `<dir>/<stem>.svg`.
pub fn export_plot_data(kind: PlotKind, payload: &PlotPayload, dir: &Path, stem: &str) -> Result<PlotFiles, ReportError> {
    if payload.kind() != kind {
        return Err(ReportError::PayloadMismatch(kind.as_str()));
    }
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut buf = Vec::new();
    write_plot_csv(&mut buf, payload)?;
    write_atomic(&csv_path, &buf)?;
    let svg = match render_svg(payload) {
        Some(svg) => {
            let p = dir.join(format!("{stem}.svg"));
            write_atomic(&p, svg.as_bytes())?;
            Some(p)
        }
        None => None,
    };
    Ok(PlotFiles { csv: csv_path, svg })
}

const WIDTH: f64 = 720.0;
const LABEL_W: f64 = 200.0;
const ROW_H: f64 = 24.0;
const TOP: f64 = 40.0;
const POS_COLOR: &str = "#d6274d";
const NEG_COLOR: &str = "#1e88e5";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(s: &mut String, height: f64, title: &str) {
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();
}

fn label(s: &mut String, y: f64, text: &str) {
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
        LABEL_W - 8.0,
        y,
        escape(text)
    )
    .unwrap();
}

fn max_abs(xs: impl Iterator<Item = f64>) -> f64 {
    let m = xs.map(f64::abs).fold(0.0, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Blue (low percentile) to red (high percentile).
fn percentile_color(p: f64) -> String {
    let p = p.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * p).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(30.0, 214.0), lerp(136.0, 39.0), lerp(229.0, 77.0))
}

fn render_importance(rows: &[ImportanceEntry]) -> String {
    let mut sorted: Vec<&ImportanceEntry> = rows.iter().collect();
    sorted.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi).then(a.index.cmp(&b.index)));
    let height = TOP + ROW_H * sorted.len() as f64 + 30.0;
    let span = WIDTH - LABEL_W - 80.0;
    let scale = span / max_abs(sorted.iter().map(|e| e.mean_abs_phi));
    let mut s = String::new();
    open(&mut s, height, "mean |SHAP value|");
    for (i, e) in sorted.iter().enumerate() {
        let y = TOP + ROW_H * i as f64;
        label(&mut s, y + ROW_H / 2.0, &e.feature);
        let w = e.mean_abs_phi * scale;
        writeln!(
            s,
            r#"<rect x="{LABEL_W:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="{NEG_COLOR}"/>"#,
            y + 4.0,
            ROW_H - 8.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" dominant-baseline="middle">{:.4}</text>"#,
            LABEL_W + w + 4.0,
            y + ROW_H / 2.0,
            e.mean_abs_phi
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn render_summary(rows: &[SummaryRecord]) -> String {
    let mut features: Vec<&str> = Vec::new();
    for r in rows {
        if !features.contains(&r.feature.as_str()) {
            features.push(&r.feature);
        }
    }
    let height = TOP + ROW_H * features.len() as f64 + 30.0;
    let half = (WIDTH - LABEL_W - 40.0) / 2.0;
    let centre = LABEL_W + half;
    let scale = half / max_abs(rows.iter().map(|r| r.phi));
    let mut s = String::new();
    open(&mut s, height, "SHAP value (colour: feature value percentile)");
    let bottom = TOP + ROW_H * features.len() as f64;
    writeln!(s, r##"<line x1="{centre:.2}" y1="{TOP:.2}" x2="{centre:.2}" y2="{bottom:.2}" stroke="#888"/>"##).unwrap();
    for (i, f) in features.iter().enumerate() {
        label(&mut s, TOP + ROW_H * i as f64 + ROW_H / 2.0, f);
    }
    for r in rows {
        let row = features.iter().position(|f| *f == r.feature).unwrap_or(0);
        // deterministic vertical jitter from the instance index
        let jitter = ((r.instance as u64).wrapping_mul(2_654_435_761) % 1000) as f64 / 1000.0 - 0.5;
        let y = TOP + ROW_H * row as f64 + ROW_H / 2.0 + jitter * (ROW_H - 10.0);
        writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{y:.2}" r="2.5" fill="{}" fill-opacity="0.8"/>"#,
            centre + r.phi * scale,
            percentile_color(r.value_percentile)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn render_local(rows: &[LocalComparisonRow]) -> String {
    let height = TOP + 20.0 + ROW_H * rows.len() as f64 + 20.0;
    let panel = (WIDTH - LABEL_W - 20.0) / 2.0;
    let mut s = String::new();
    open(&mut s, height, "local explanation: SHAP (left) vs LIME (right)");
    let panels: [(&str, f64, Vec<f64>); 2] = [
        ("SHAP", LABEL_W, rows.iter().map(|r| r.shap_phi).collect()),
        ("LIME", LABEL_W + panel + 20.0, rows.iter().map(|r| r.lime_weight).collect()),
    ];
    let bottom = TOP + 20.0 + ROW_H * rows.len() as f64;
    for (title, x0, vals) in &panels {
        let centre = x0 + panel / 2.0;
        let scale = (panel / 2.0 - 4.0) / max_abs(vals.iter().copied());
        writeln!(s, r#"<text x="{centre:.2}" y="{:.2}" text-anchor="middle">{title}</text>"#, TOP + 10.0).unwrap();
        writeln!(s, r##"<line x1="{centre:.2}" y1="{:.2}" x2="{centre:.2}" y2="{bottom:.2}" stroke="#888"/>"##, TOP + 20.0).unwrap();
        for (i, v) in vals.iter().enumerate() {
            let y = TOP + 20.0 + ROW_H * i as f64 + 4.0;
            let w = v.abs() * scale;
            let x = if *v < 0.0 { centre - w } else { centre };
            let fill = if *v < 0.0 { NEG_COLOR } else { POS_COLOR };
            writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{:.2}" fill="{fill}"/>"#,
                ROW_H - 8.0
            )
            .unwrap();
        }
    }
    for (i, r) in rows.iter().enumerate() {
        label(
            &mut s,
            TOP + 20.0 + ROW_H * i as f64 + ROW_H / 2.0,
            &format!("{} = {}", r.feature, r.raw_value),
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Deterministic SVG for the payload; `None` when there is nothing to draw.
pub fn render_svg(payload: &PlotPayload) -> Option<String> {
    if payload.is_empty() {
        return None;
    }
    Some(match payload {
        PlotPayload::Importance(v) => render_importance(v),
        PlotPayload::Summary(v) => render_summary(v),
        PlotPayload::Local(v) => render_local(v),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn importance() -> Vec<ImportanceEntry> {
        [("b", 1, 0.2), ("a", 0, 0.5), ("c & d", 2, 0.1)]
            .map(|(f, i, v)| ImportanceEntry {
                feature: f.to_string(),
                index: i,
                mean_abs_phi: v,
            })
            .to_vec()
    }

    #[test]
    fn importance_bars_descending() {
        let svg = render_svg(&PlotPayload::Importance(importance())).unwrap();
        assert_eq!(svg.matches("<rect x=").count(), 3);
        let pa = svg.find(">a<").unwrap();
        let pb = svg.find(">b<").unwrap();
        let pc = svg.find(">c &amp; d<").unwrap();
        assert!(pa < pb && pb < pc);
        assert_eq!(render_svg(&PlotPayload::Importance(importance())).unwrap(), svg);
    }

    #[test]
    fn empty_payload_header_only_no_image() {
        let dir = tempfile::tempdir().unwrap();
        let files = export_plot_data(PlotKind::Summary, &PlotPayload::Summary(vec![]), dir.path(), "s").unwrap();
        assert!(files.svg.is_none());
        assert_eq!(
            std::fs::read_to_string(&files.csv).unwrap(),
            "feature,instance,phi,feature_value,value_percentile\n"
        );
        assert!(!dir.path().join("s.svg").exists());
        assert_eq!(
            read_plot_csv(std::fs::File::open(&files.csv).unwrap(), PlotKind::Summary).unwrap(),
            PlotPayload::Summary(vec![])
        );
    }

    #[test]
    fn summary_round_trip_one_row_per_pair() {
        let rows: Vec<SummaryRecord> = (0..2)
            .flat_map(|f| {
                (0..3).map(move |i| SummaryRecord {
                    feature: format!("f{f}"),
                    instance: i,
                    phi: (i as f64 - 1.0) / 7.0,
                    feature_value: i as f64,
                    value_percentile: (i as f64 + 0.5) / 3.0,
                })
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let payload = PlotPayload::Summary(rows);
        let files = export_plot_data(PlotKind::Summary, &payload, dir.path(), "summary").unwrap();
        let text = std::fs::read_to_string(&files.csv).unwrap();
        assert_eq!(text.lines().count(), 1 + 6);
        assert_eq!(read_plot_csv(text.as_bytes(), PlotKind::Summary).unwrap(), payload);
        let svg = std::fs::read_to_string(files.svg.unwrap()).unwrap();
        assert_eq!(svg.matches("<circle").count(), 6);
    }

    #[test]
    fn kind_parsing_and_mismatch() {
        assert_eq!("local".parse::<PlotKind>().unwrap(), PlotKind::Local);
        assert!(matches!("pie".parse::<PlotKind>(), Err(ReportError::UnknownKind(_))));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            export_plot_data(PlotKind::Local, &PlotPayload::Importance(importance()), dir.path(), "x"),
            Err(ReportError::PayloadMismatch("local"))
        ));
        let mut buf = Vec::new();
        write_plot_csv(&mut buf, &PlotPayload::Importance(importance())).unwrap();
        assert_eq!(
            read_plot_csv(buf.as_slice(), PlotKind::Importance).unwrap(),
            PlotPayload::Importance(importance())
        );
        assert!(matches!(read_plot_csv(buf.as_slice(), PlotKind::Summary), Err(ReportError::Malformed(_))));
    }
}
