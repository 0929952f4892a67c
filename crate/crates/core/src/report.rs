//! Report JSON and ROC plots.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::{BackendKind, InputNormalization};
use crate::error::{Error, Result};
use crate::eval::{AgeGroup, EvalReport, ExperimentReport, GroupStats, Protocol, RocPoint};
use crate::fuse::KeptIndices;
use crate::pipeline::{write_file, PipelineConfig};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSummary {
    pub name: String,
    pub kind: BackendKind,
    pub dim: usize,
    /// Only meaningful for model files.
    pub input_normalization: Option<InputNormalization>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub fit_session: u32,
    pub fit_records: usize,
    pub kept: Vec<KeptIndices>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub protocol: Protocol,
    pub n_points: usize,
    /// After clamping.
    pub perplexity: f64,
    pub final_kl: Option<f64>,
    pub unconverged_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub config: PipelineConfig,
    pub experiments: Vec<ExperimentReport>,
    pub per_gap: BTreeMap<u32, GroupStats>,
    pub per_age_group: BTreeMap<AgeGroup, GroupStats>,
    pub backends: Vec<BackendSummary>,
    pub selection: SelectionSummary,
    pub projection: Vec<ProjectionSummary>,
    pub notes: Vec<String>,
    pub versions: BTreeMap<String, String>,
}

impl RunReport {
    pub fn new(
        config: PipelineConfig,
        eval: EvalReport,
        backends: Vec<BackendSummary>,
        selection: SelectionSummary,
        projection: Vec<ProjectionSummary>,
        notes: Vec<String>,
    ) -> RunReport {
        let mut versions = BTreeMap::new();
        versions.insert("aure-core".to_string(), env!("CARGO_PKG_VERSION").to_string());
        versions.insert("report_schema".to_string(), REPORT_SCHEMA.to_string());
        RunReport {
            schema: REPORT_SCHEMA,
            config,
            experiments: eval.experiments,
            per_gap: eval.per_gap,
            per_age_group: eval.per_age_group,
            backends,
            selection,
            projection,
            notes,
            versions,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<RunReport> {
        let report: RunReport = serde_json::from_str(text)?;
        if report.schema != REPORT_SCHEMA {
            return Err(Error::input(format!(
                "report schema {} is not supported (expected {REPORT_SCHEMA})",
                report.schema
            )));
        }
        Ok(report)
    }

    pub fn read(path: &Path) -> Result<RunReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunReport::from_json(&text)
    }

    /// Pooled TAR per cross-session gap for one enrollment anchor, plus the
    /// within-anchor experiment at gap 0.
    pub fn gap_series(&self, anchor: u32) -> Vec<(u32, Option<f64>)> {
        let mut by_gap: HashMap<u32, Option<f64>> = HashMap::new();
        for e in &self.experiments {
            let gap = match e.protocol {
                Protocol::Within { session } if session == anchor => 0,
                Protocol::Cross { enroll, .. } if enroll == anchor => match e.per_gap.keys().next() {
                    Some(&g) => g,
                    None => continue,
                },
                _ => continue,
            };
            by_gap.insert(gap, e.tar);
        }
        let mut out: Vec<(u32, Option<f64>)> = by_gap.into_iter().collect();
        out.sort_by_key(|p| p.0);
        out
    }
}

const SIZE: f64 = 420.0;
const MARGIN: f64 = 50.0;

fn plot_xy(far: f64, tar: f64) -> (f64, f64) {
    let span = SIZE - 2.0 * MARGIN;
    (MARGIN + far * span, SIZE - MARGIN - tar * span)
}

/// Standalone SVG of a ROC curve on the unit square with the EER marked.
pub fn roc_svg(points: &[RocPoint], eer: f64, title: &str) -> Result<String> {
    if points.len() < 2 {
        return Err(Error::input("degenerate curve"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.far.total_cmp(&b.far).then(a.tar.total_cmp(&b.tar)));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let (x0, y0) = plot_xy(0.0, 0.0);
    let (x1, y1) = plot_xy(1.0, 1.0);
    let _ = writeln!(
        s,
        r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    let _ = writeln!(
        s,
        r##"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="#bbbbbb" stroke-dasharray="4 4"/>"##
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let (x, _) = plot_xy(tick, 0.0);
        let (_, y) = plot_xy(0.0, tick);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle">{tick}</text>"#,
            y0 + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{tick}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">FAR</text>"#,
        (x0 + x1) / 2.0,
        SIZE - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">TAR</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" font-size="13" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    );
    let coords: Vec<String> = pts
        .iter()
        .map(|p| {
            let (x, y) = plot_xy(p.far, p.tar);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f5fa8" stroke-width="2"/>"##,
        coords.join(" ")
    );
    let (ex, ey) = plot_xy(eer, 1.0 - eer);
    let _ = writeln!(s, r##"<circle cx="{ex:.2}" cy="{ey:.2}" r="4" fill="#c0392b"/>"##);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="11">EER {:.4}</text>"#,
        ex + 8.0,
        ey - 6.0,
        eer
    );
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn emit_roc_svg(points: &[RocPoint], eer: f64, title: &str, path: &Path) -> Result<()> {
    write_file(path, roc_svg(points, eer, title)?.as_bytes())
}

/// Writes `roc/<label>.svg` for every scored experiment.
pub fn render_roc_plots(report: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for e in &report.experiments {
        let Some(eer) = e.eer else { continue };
        let path = out_dir.join("roc").join(format!("{}.svg", e.protocol.label()));
        emit_roc_svg(&e.roc, eer, &e.protocol.label(), &path)?;
        written.push(path);
    }
    Ok(written)
}
