//! Output artifacts: CSV tables, self-contained SVG plots, and the manifest
//! that lists every file with its SHA-256.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_owned())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// A rectangular table with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvReport {
    header: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl CsvReport {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    /// Appends a row; panics if its width differs from the header's.
    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width must match header {:?}", self.header);
        self.rows.push(row);
    }

    /// Serializes to bytes. NaN and infinite floats become empty cells; the
    /// second value counts them.
    pub fn to_bytes(&self) -> Result<(Vec<u8>, usize), CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).map_err(runtime)?;
        let mut missing = 0;
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Int(v) => v.to_string(),
                    Cell::Float(v) if v.is_finite() => format_float(*v),
                    Cell::Float(_) => {
                        missing += 1;
                        String::new()
                    }
                    Cell::Text(s) => s.clone(),
                })
                .collect();
            w.write_record(&cells).map_err(runtime)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok((bytes, missing))
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// One named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

impl PlotStyle {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            log_y: false,
        }
    }

    pub fn log_log(mut self) -> Self {
        self.log_x = true;
        self.log_y = true;
        self
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Finite `(lo, hi)` over `values`, widened when degenerate.
fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open_svg(out: &mut String, style_title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(style_title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, log_x: bool, log_y: bool) {
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let tick = |v: f64, log: bool| {
        let v = if log { 10f64.powf(v) } else { v };
        format!("{v:.3e}")
    };
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.x.0 + t * (f.x.1 - f.x.0);
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let (px, py) = (f.px(xv), f.py(yv));
        let _ = writeln!(
            out,
            r#"<line x1="{px:.1}" y1="{y0}" x2="{px:.1}" y2="{:.1}" stroke="black"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y0 + 4.0,
            y0 + 16.0,
            tick(xv, log_x)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0}" y2="{py:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            py + 4.0,
            tick(yv, log_y)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// Line plot with one `<polyline>` per series and a legend.
pub fn line_plot(series: &[Series], style: &PlotStyle) -> String {
    let tx = |v: f64| if style.log_x { v.log10() } else { v };
    let ty = |v: f64| if style.log_y { v.log10() } else { v };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .map(|&(x, y)| (tx(x), ty(y)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect()
        })
        .collect();
    let f = Frame {
        x: extent(pts.iter().flatten().map(|p| p.0)),
        y: extent(pts.iter().flatten().map(|p| p.1)),
    };
    let mut out = String::new();
    open_svg(&mut out, &style.title);
    axes(&mut out, &f, &style.x_label, &style.y_label, style.log_x, style.log_y);
    for (i, (s, p)) in series.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = TOP + 14.0 * i as f64;
        let lx = WIDTH - RIGHT + 10.0;
        let _ = writeln!(
            out,
            r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="3" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            ly - 3.0,
            lx + 16.0,
            ly + 1.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Five-number summary used by the box plot: whiskers at min/max.
fn five_numbers(values: &[f64]) -> Option<[f64; 5]> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let q = |u: f64| {
        let pos = u * (v.len() - 1) as f64;
        let (i, frac) = (pos.floor() as usize, pos - pos.floor());
        if i + 1 < v.len() {
            v[i] + frac * (v[i + 1] - v[i])
        } else {
            v[i]
        }
    };
    Some([v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]])
}

/// Box plot with one box per labelled group.
pub fn box_plot(groups: &[(String, Vec<f64>)], title: &str, y_label: &str) -> String {
    let f = Frame {
        x: (0.0, groups.len().max(1) as f64),
        y: extent(groups.iter().flat_map(|g| g.1.iter().copied())),
    };
    let mut out = String::new();
    open_svg(&mut out, title);
    let (x0, x1, y0) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{TOP}" stroke="black"/>"#);
    for i in 0..=4 {
        let yv = f.y.0 + i as f64 / 4.0 * (f.y.1 - f.y.0);
        let py = f.py(yv);
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0}" y2="{py:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3e}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            py + 4.0
        );
    }
    if f.y.0 < 0.0 && f.y.1 > 0.0 {
        let pz = f.py(0.0);
        let _ = writeln!(
            out,
            r##"<line x1="{x0}" y1="{pz:.1}" x2="{x1}" y2="{pz:.1}" stroke="#999" stroke-dasharray="4 3"/>"##
        );
    }
    let half = 0.3 * (f.px(1.0) - f.px(0.0));
    for (i, (label, values)) in groups.iter().enumerate() {
        let cx = f.px(i as f64 + 0.5);
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y0 + 16.0,
            escape(label)
        );
        let Some([lo, q1, med, q3, hi]) = five_numbers(values) else {
            continue;
        };
        let _ = writeln!(
            out,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
            f.py(lo),
            f.py(hi)
        );
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#9ecae1" stroke="black"/>"##,
            cx - half,
            f.py(q3),
            2.0 * half,
            (f.py(q1) - f.py(q3)).max(0.5)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            f.py(med),
            cx + half,
            f.py(med)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (y0 + TOP) / 2.0,
        (y0 + TOP) / 2.0,
        escape(y_label)
    );
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Collects the files of one run; [`OutputSet::finish`] writes the manifest.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
    warnings: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        let entry = ManifestEntry {
            path: name.to_owned(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        };
        self.entries.retain(|e| e.path != name);
        self.entries.push(entry);
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, report: &CsvReport) -> Result<(), CliError> {
        let (bytes, missing) = report.to_bytes()?;
        if missing > 0 {
            self.warn(format!("{name}: {missing} non-finite value(s) written as empty cells"));
        }
        self.write_bytes(name, &bytes)
    }

    pub fn write_svg(&mut self, name: &str, svg: &str) -> Result<(), CliError> {
        self.write_bytes(name, svg.as_bytes())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes the manifest, sorted by path, and returns its entries.
    pub fn finish(mut self) -> Result<Vec<ManifestEntry>, CliError> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        #[derive(Serialize)]
        struct Manifest<'a> {
            files: &'a [ManifestEntry],
        }
        let mut text = serde_json::to_string_pretty(&Manifest { files: &self.entries }).map_err(runtime)?;
        text.push('\n');
        let path = self.dir.join(MANIFEST);
        fs::write(&path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(self.entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_seventeen_significant_digits() {
        let s = format_float(0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
        let x = std::f64::consts::PI * 1e-300;
        assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn header_only_csv() {
        let (bytes, _) = CsvReport::new(&["a", "b"]).to_bytes().unwrap();
        assert_eq!(bytes, b"a,b\n");
    }

    #[test]
    fn csv_cells_and_nan() {
        let mut r = CsvReport::new(&["name", "n", "x"]);
        r.push(vec!["p,q".into(), 3usize.into(), 0.5.into()]);
        r.push(vec!["z".into(), 1usize.into(), f64::NAN.into()]);
        let (bytes, missing) = r.to_bytes().unwrap();
        assert_eq!(missing, 1);
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "name,n,x\n\"p,q\",3,5.0000000000000000e-1\nz,1,\n"
        );
    }

    #[test]
    #[should_panic]
    fn ragged_rows_are_rejected() {
        CsvReport::new(&["a", "b"]).push(vec![1usize.into()]);
    }

    #[test]
    fn single_series_gives_one_polyline() {
        let svg = line_plot(
            &[Series::new("s", vec![(0.0, 1.0), (1.0, 2.0), (2.0, 0.5)])],
            &PlotStyle::new("t", "x", "y"),
        );
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("href"));
    }

    #[test]
    fn plots_are_deterministic() {
        let s = vec![Series::new("a<b", vec![(1.0, 1e-3), (10.0, 1e-5)])];
        let style = PlotStyle::new("rates", "K", "MSE").log_log();
        assert_eq!(line_plot(&s, &style), line_plot(&s, &style));
        assert!(line_plot(&s, &style).contains("a&lt;b"));
        let g = vec![("0".to_string(), vec![1.0, 2.0, 3.0]), ("1".to_string(), vec![])];
        assert_eq!(box_plot(&g, "t", "y"), box_plot(&g, "t", "y"));
        assert_eq!(box_plot(&g, "t", "y").matches("<rect").count(), 2);
    }

    #[test]
    fn manifest_lists_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputSet::create(dir.path()).unwrap();
        out.write_bytes("b.txt", b"hello").unwrap();
        out.write_csv("a.csv", &CsvReport::new(&["x"])).unwrap();
        let entries = out.finish().unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].path, "a.csv");
        assert_eq!(
            entries[1].sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(text.contains("b.txt"));
    }
}
