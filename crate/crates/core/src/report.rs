//! CSV + SVG report emission.
//!
//! Every figure is rendered from the CSV text it is written alongside, so a
//! figure regenerated from the CSV alone is byte-identical to the original.
//! Losses and other reals are printed at 6 significant digits, percentages at
//! 2 decimals.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mixsearch::{self, SweepRow};

pub const TOOL_NAME: &str = "synthlab";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 460.0;
const FONT: &str = "DejaVu Sans, Arial, sans-serif";
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("incomplete data for {kind}: {message}")]
    Incomplete { kind: ReportKind, message: String },
    #[error("unknown report kind {0}")]
    UnknownKind(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    ScalingCurves,
    IrreducibleBar,
    RatioHeatmap,
    Zipf,
    KlBar,
    TokenLoss,
}

impl ReportKind {
    pub const ALL: [ReportKind; 6] = [
        ReportKind::ScalingCurves,
        ReportKind::IrreducibleBar,
        ReportKind::RatioHeatmap,
        ReportKind::Zipf,
        ReportKind::KlBar,
        ReportKind::TokenLoss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReportKind::ScalingCurves => "scaling_curves",
            ReportKind::IrreducibleBar => "irreducible_bar",
            ReportKind::RatioHeatmap => "ratio_heatmap",
            ReportKind::Zipf => "zipf",
            ReportKind::KlBar => "kl_bar",
            ReportKind::TokenLoss => "token_loss",
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReportKind {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, ReportError> {
        ReportKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| ReportError::UnknownKind(s.to_string()))
    }
}

/// Provenance embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_digest: String,
    pub tool_version: String,
}

impl Stamp {
    pub fn new(config_digest: &str) -> Self {
        Self { config_digest: config_digest.to_string(), tool_version: TOOL_VERSION.to_string() }
    }

    fn comment(&self) -> String {
        format!("# {TOOL_NAME} {} config {}", self.tool_version, self.config_digest)
    }

    fn parse(line: &str) -> Option<Self> {
        let rest = line.strip_prefix('#')?.trim();
        let mut it = rest.split_whitespace();
        (it.next()? == TOOL_NAME).then_some(())?;
        let version = it.next()?;
        (it.next()? == "config").then_some(())?;
        Some(Self { tool_version: version.to_string(), config_digest: it.next()?.to_string() })
    }
}

/// `x` with 6 significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let s = format!("{:.*}", (5 - exp) as usize, x);
        // rounding can carry into a new digit (9.999995 -> 10.00000)
        if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > 6 && s.contains('.') {
            return format!("{:.*}", (4 - exp).max(0) as usize, x);
        }
        s
    } else {
        format!("{x:.5e}")
    }
}

pub fn fmt_percent(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointRole {
    /// Point used for fitting.
    Fit,
    /// Held-out validation point.
    Holdout,
    /// Sample of the fitted curve.
    Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub series: String,
    /// Axis name, "D" or "N".
    pub axis: String,
    pub x: f64,
    pub loss: f64,
    pub role: PointRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrreducibleBarRow {
    pub mixture_id: String,
    #[serde(rename = "E")]
    pub e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub synthetic_label: String,
    pub n: u64,
    pub d: u64,
    pub best_ratio_percent: f64,
    pub best_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfRow {
    pub corpus: String,
    pub rank: u64,
    pub count: u64,
    pub fit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlRow {
    pub test: String,
    pub train: String,
    pub kl_nats: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLossRow {
    pub series: String,
    pub position: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReportData {
    ScalingCurves(Vec<ScalingRow>),
    IrreducibleBar(Vec<IrreducibleBarRow>),
    RatioHeatmap(Vec<HeatmapRow>),
    Zipf(Vec<ZipfRow>),
    KlBar(Vec<KlRow>),
    TokenLoss(Vec<TokenLossRow>),
}

impl ReportData {
    pub fn kind(&self) -> ReportKind {
        match self {
            ReportData::ScalingCurves(_) => ReportKind::ScalingCurves,
            ReportData::IrreducibleBar(_) => ReportKind::IrreducibleBar,
            ReportData::RatioHeatmap(_) => ReportKind::RatioHeatmap,
            ReportData::Zipf(_) => ReportKind::Zipf,
            ReportData::KlBar(_) => ReportKind::KlBar,
            ReportData::TokenLoss(_) => ReportKind::TokenLoss,
        }
    }

    fn check(&self) -> Result<(), ReportError> {
        let kind = self.kind();
        let incomplete = |message: &str| Err(ReportError::Incomplete { kind, message: message.to_string() });
        let empty = match self {
            ReportData::ScalingCurves(r) => r.is_empty(),
            ReportData::IrreducibleBar(r) => r.is_empty(),
            ReportData::RatioHeatmap(r) => r.is_empty(),
            ReportData::Zipf(r) => r.is_empty(),
            ReportData::KlBar(r) => r.is_empty(),
            ReportData::TokenLoss(r) => r.is_empty(),
        };
        if empty {
            return incomplete("no rows");
        }
        if let ReportData::ScalingCurves(rows) = self {
            for s in series_names(rows.iter().map(|r| r.series.as_str())) {
                let has = |role| rows.iter().any(|r| r.series == s && r.role == role);
                if !has(PointRole::Curve) {
                    return incomplete(&format!("series {s} has no fitted curve"));
                }
                if !has(PointRole::Fit) {
                    return incomplete(&format!("series {s} has no fit points"));
                }
            }
            if rows.iter().any(|r| !(r.x > 0.0 && r.loss > 0.0)) {
                return incomplete("log axes need positive values");
            }
        }
        Ok(())
    }
}

/// Build a heatmap from raw sweep rows by recomputing each cell's argmin.
pub fn heatmap_from_sweep(rows: &[SweepRow]) -> Vec<HeatmapRow> {
    mixsearch::cells_from_rows(rows, 0)
        .into_iter()
        .filter_map(|c| {
            let best = c.best_ratio?;
            Some(HeatmapRow {
                synthetic_label: c.synthetic_label.clone(),
                n: c.n_capacity,
                d: c.d_budget,
                best_ratio_percent: best * 100.0,
                best_loss: c.loss_at(best).unwrap_or(f64::NAN),
            })
        })
        .collect()
}

fn csv_text(stamp: &Stamp, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv");
    format!("{}\n{body}", stamp.comment())
}

/// CSV for `data`, rows in emission order and numbers at printed precision.
pub fn to_csv(data: &ReportData, stamp: &Stamp) -> String {
    match data {
        ReportData::ScalingCurves(rows) => csv_text(
            stamp,
            &["series", "axis", "x", "loss", "role"],
            rows.iter().map(|r| {
                let role = match r.role {
                    PointRole::Fit => "fit",
                    PointRole::Holdout => "holdout",
                    PointRole::Curve => "curve",
                };
                vec![r.series.clone(), r.axis.clone(), fmt_sig(r.x), fmt_sig(r.loss), role.into()]
            }),
        ),
        ReportData::IrreducibleBar(rows) => {
            let mut sorted = rows.clone();
            sorted.sort_by(|a, b| a.e.total_cmp(&b.e).then_with(|| a.mixture_id.cmp(&b.mixture_id)));
            csv_text(stamp, &["mixture_id", "E"], sorted.into_iter().map(|r| vec![r.mixture_id, fmt_sig(r.e)]))
        }
        ReportData::RatioHeatmap(rows) => csv_text(
            stamp,
            &["synthetic_label", "n", "d", "best_ratio_percent", "best_loss"],
            rows.iter().map(|r| {
                vec![r.synthetic_label.clone(), r.n.to_string(), r.d.to_string(), format!("{:.2}", r.best_ratio_percent), fmt_sig(r.best_loss)]
            }),
        ),
        ReportData::Zipf(rows) => csv_text(
            stamp,
            &["corpus", "rank", "count", "fit"],
            rows.iter().map(|r| vec![r.corpus.clone(), r.rank.to_string(), r.count.to_string(), r.fit.map(fmt_sig).unwrap_or_default()]),
        ),
        ReportData::KlBar(rows) => csv_text(
            stamp,
            &["test", "train", "kl_nats"],
            rows.iter().map(|r| vec![r.test.clone(), r.train.clone(), fmt_sig(r.kl_nats)]),
        ),
        ReportData::TokenLoss(rows) => csv_text(
            stamp,
            &["series", "position", "loss"],
            rows.iter().map(|r| vec![r.series.clone(), r.position.to_string(), fmt_sig(r.loss)]),
        ),
    }
}

fn read_rows<T: serde::de::DeserializeOwned>(csv_text: &str) -> Result<Vec<T>, ReportError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(csv_text.as_bytes());
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

/// Parse a report CSV (as written by [`to_csv`]) back into data and stamp.
/// For `ratio_heatmap`, a raw sweep CSV (`synthetic_label,n,d,ratio,loss`)
/// is also accepted; argmins are recomputed from it.
pub fn from_csv(kind: ReportKind, text: &str) -> Result<(ReportData, Option<Stamp>), ReportError> {
    let stamp = text.lines().next().and_then(Stamp::parse);
    let data = match kind {
        ReportKind::ScalingCurves => ReportData::ScalingCurves(read_rows(text)?),
        ReportKind::IrreducibleBar => ReportData::IrreducibleBar(read_rows(text)?),
        ReportKind::RatioHeatmap => {
            let header = text.lines().find(|l| !l.starts_with('#')).unwrap_or("");
            if header.split(',').any(|h| h.trim() == "best_ratio_percent") {
                ReportData::RatioHeatmap(read_rows(text)?)
            } else {
                ReportData::RatioHeatmap(heatmap_from_sweep(&read_rows::<SweepRow>(text)?))
            }
        }
        ReportKind::Zipf => ReportData::Zipf(read_rows(text)?),
        ReportKind::KlBar => ReportData::KlBar(read_rows(text)?),
        ReportKind::TokenLoss => ReportData::TokenLoss(read_rows(text)?),
    };
    Ok((data, stamp))
}

/// Render the SVG for a CSV produced by [`to_csv`].
pub fn svg_from_csv(kind: ReportKind, csv_text: &str) -> Result<String, ReportError> {
    let (data, stamp) = from_csv(kind, csv_text)?;
    let stamp = stamp.unwrap_or_else(|| Stamp::new("unknown"));
    data.check()?;
    Ok(render(&data, &stamp))
}

/// CSV text and SVG text for `data`; the SVG is rendered from the CSV.
pub fn render_pair(data: &ReportData, stamp: &Stamp) -> Result<(String, String), ReportError> {
    data.check()?;
    let csv = to_csv(data, stamp);
    let svg = svg_from_csv(data.kind(), &csv)?;
    Ok((csv, svg))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub kind: ReportKind,
    pub data_csv_path: PathBuf,
    pub figure_svg_path: PathBuf,
}

/// Write `<out_dir>/<stem>.csv` and `<out_dir>/<stem>.svg`.
pub fn emit_report(data: &ReportData, stamp: &Stamp, out_dir: &Path, stem: &str) -> Result<Report, ReportError> {
    let (csv, svg) = render_pair(data, stamp)?;
    fs::create_dir_all(out_dir)?;
    let data_csv_path = out_dir.join(format!("{stem}.csv"));
    let figure_svg_path = out_dir.join(format!("{stem}.svg"));
    fs::write(&data_csv_path, csv)?;
    fs::write(&figure_svg_path, svg)?;
    Ok(Report { kind: data.kind(), data_csv_path, figure_svg_path })
}

fn series_names<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for n in names {
        if !out.iter().any(|o| o == n) {
            out.push(n.to_string());
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Svg {
    buf: String,
}

impl Svg {
    fn new(title: &str, stamp: &Stamp, width: f64, height: f64) -> Self {
        let mut buf = String::new();
        let _ = writeln!(
            buf,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="{FONT}" font-size="12">"#
        );
        let _ = writeln!(
            buf,
            r#"<metadata>{TOOL_NAME} {} config {}</metadata>"#,
            escape(&stamp.tool_version),
            escape(&stamp.config_digest)
        );
        let _ = writeln!(buf, r#"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#);
        let _ = writeln!(buf, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#, width / 2.0, escape(title));
        Self { buf }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(self.buf, r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="{width}"/>"#);
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(self.buf, r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{}</text>"#, escape(s));
    }

    fn text_rotated(&mut self, x: f64, y: f64, s: &str) {
        let _ = writeln!(self.buf, r#"<text x="{x:.2}" y="{y:.2}" text-anchor="middle" transform="rotate(-90 {x:.2} {y:.2})">{}</text>"#, escape(s));
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, title: &str) {
        let _ = writeln!(
            self.buf,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}" stroke="#333333" stroke-width="0.5"><title>{}</title></rect>"##,
            escape(title)
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str, title: &str) {
        let _ = writeln!(self.buf, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}"><title>{}</title></circle>"#, escape(title));
    }

    fn diamond(&mut self, x: f64, y: f64, r: f64, fill: &str, title: &str) {
        let _ = writeln!(
            self.buf,
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{fill}" stroke="black" stroke-width="0.5"><title>{}</title></polygon>"#,
            x,
            y - r,
            x + r,
            y,
            x,
            y + r,
            x - r,
            y,
            escape(title)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let mut p = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            if i > 0 {
                p.push(' ');
            }
            let _ = write!(p, "{x:.2},{y:.2}");
        }
        let _ = writeln!(self.buf, r#"<polyline points="{p}" fill="none" stroke="{stroke}" stroke-width="1.8"/>"#);
    }

    fn finish(mut self) -> String {
        self.buf.push_str("</svg>\n");
        self.buf
    }
}

#[derive(Debug, Clone, Copy)]
enum Scale {
    Lin(f64, f64),
    Log(f64, f64),
}

impl Scale {
    fn linear(values: impl Iterator<Item = f64>, include_zero: bool) -> Self {
        let (mut lo, mut hi) = bounds(values);
        if include_zero {
            lo = lo.min(0.0);
            hi = hi.max(0.0);
        }
        let span = hi - lo;
        let pad = if span > 0.0 { span * 0.05 } else { lo.abs().max(1.0) * 0.1 };
        Scale::Lin(if include_zero && lo >= 0.0 { lo } else { lo - pad }, hi + pad)
    }

    fn log(values: impl Iterator<Item = f64>) -> Self {
        let (lo, hi) = bounds(values);
        let (lo, hi) = (lo.log10(), hi.log10());
        let pad = ((hi - lo) * 0.05).max(0.05);
        Scale::Log(lo - pad, hi + pad)
    }

    /// Position in [0, 1].
    fn unit(self, v: f64) -> f64 {
        match self {
            Scale::Lin(lo, hi) => (v - lo) / (hi - lo),
            Scale::Log(lo, hi) => (v.log10() - lo) / (hi - lo),
        }
    }

    fn ticks(self) -> Vec<(f64, String)> {
        match self {
            Scale::Log(lo, hi) => {
                let (a, b) = (lo.ceil() as i32, hi.floor() as i32);
                if b >= a {
                    let step = ((b - a) / 8 + 1) as usize;
                    (a..=b).step_by(step).map(|k| (10f64.powi(k), format!("1e{k}"))).collect()
                } else {
                    let (l, h) = (10f64.powf(lo), 10f64.powf(hi));
                    vec![(l, short(l)), (h, short(h))]
                }
            }
            Scale::Lin(lo, hi) => {
                let step = nice_step((hi - lo) / 5.0);
                let mut v = (lo / step).ceil() * step;
                let mut out = Vec::new();
                while v <= hi + step * 1e-9 {
                    let clean = if v.abs() < step * 1e-9 { 0.0 } else { v };
                    out.push((clean, short(clean)));
                    v += step;
                }
                out
            }
        }
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn nice_step(raw: f64) -> f64 {
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

/// Compact tick label.
fn short(v: f64) -> String {
    let s = format!("{:.4}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    if s == "-0" {
        "0".into()
    } else if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        s
    }
}

struct Plot {
    left: f64,
    top: f64,
    w: f64,
    h: f64,
    xs: Scale,
    ys: Scale,
}

impl Plot {
    fn new(xs: Scale, ys: Scale) -> Self {
        Self { left: 80.0, top: 40.0, w: WIDTH - 80.0 - 170.0, h: HEIGHT - 40.0 - 60.0, xs, ys }
    }

    fn px(&self, x: f64) -> f64 {
        self.left + self.xs.unit(x) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.top + (1.0 - self.ys.unit(y)) * self.h
    }

    fn axes(&self, svg: &mut Svg, xlabel: &str, ylabel: &str) {
        let (l, t, r, b) = (self.left, self.top, self.left + self.w, self.top + self.h);
        for (v, label) in self.xs.ticks() {
            let x = self.px(v);
            svg.line(x, t, x, b, "#e0e0e0", 1.0);
            svg.line(x, b, x, b + 5.0, "black", 1.0);
            svg.text(x, b + 18.0, "middle", &label);
        }
        for (v, label) in self.ys.ticks() {
            let y = self.py(v);
            svg.line(l, y, r, y, "#e0e0e0", 1.0);
            svg.line(l - 5.0, y, l, y, "black", 1.0);
            svg.text(l - 8.0, y + 4.0, "end", &label);
        }
        svg.line(l, b, r, b, "black", 1.0);
        svg.line(l, t, l, b, "black", 1.0);
        svg.text((l + r) / 2.0, b + 40.0, "middle", xlabel);
        svg.text_rotated(22.0, (t + b) / 2.0, ylabel);
    }

    fn legend(&self, svg: &mut Svg, entries: &[(String, &str)]) {
        let x = self.left + self.w + 20.0;
        for (i, (name, color)) in entries.iter().enumerate() {
            let y = self.top + 10.0 + 20.0 * i as f64;
            svg.line(x, y, x + 18.0, y, color, 2.5);
            svg.text(x + 24.0, y + 4.0, "start", name);
        }
    }
}

fn render(data: &ReportData, stamp: &Stamp) -> String {
    match data {
        ReportData::ScalingCurves(rows) => render_scaling(rows, stamp),
        ReportData::IrreducibleBar(rows) => {
            render_bars("Estimated irreducible loss E", "E (nats/token)", rows.iter().map(|r| (r.mixture_id.clone(), r.e)).collect(), stamp)
        }
        ReportData::KlBar(rows) => {
            render_bars("KL divergence (test || train)", "KL (nats)", rows.iter().map(|r| (format!("{} || {}", r.test, r.train), r.kl_nats)).collect(), stamp)
        }
        ReportData::RatioHeatmap(rows) => render_heatmap(rows, stamp),
        ReportData::Zipf(rows) => render_zipf(rows, stamp),
        ReportData::TokenLoss(rows) => render_token_loss(rows, stamp),
    }
}

fn render_scaling(rows: &[ScalingRow], stamp: &Stamp) -> String {
    let axis = rows.first().map_or("D", |r| r.axis.as_str());
    let xlabel = if axis == "N" { "N (parameters)" } else { "D (tokens)" };
    let plot = Plot::new(Scale::log(rows.iter().map(|r| r.x)), Scale::log(rows.iter().map(|r| r.loss)));
    let mut svg = Svg::new(&format!("Loss vs {axis}"), stamp, WIDTH, HEIGHT);
    plot.axes(&mut svg, xlabel, "validation loss (nats/token)");
    let names = series_names(rows.iter().map(|r| r.series.as_str()));
    let mut legend = Vec::new();
    for (i, s) in names.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut curve: Vec<(f64, f64)> = rows.iter().filter(|r| &r.series == s && r.role == PointRole::Curve).map(|r| (r.x, r.loss)).collect();
        curve.sort_by(|a, b| a.0.total_cmp(&b.0));
        svg.polyline(&curve.iter().map(|&(x, y)| (plot.px(x), plot.py(y))).collect::<Vec<_>>(), color);
        for r in rows.iter().filter(|r| &r.series == s) {
            let title = format!("{s} {axis}={} loss={}", fmt_sig(r.x), fmt_sig(r.loss));
            match r.role {
                PointRole::Fit => svg.circle(plot.px(r.x), plot.py(r.loss), 3.5, color, &title),
                PointRole::Holdout => svg.diamond(plot.px(r.x), plot.py(r.loss), 6.0, color, &title),
                PointRole::Curve => {}
            }
        }
        legend.push((s.clone(), color));
    }
    plot.legend(&mut svg, &legend);
    svg.finish()
}

fn render_bars(title: &str, ylabel: &str, bars: Vec<(String, f64)>, stamp: &Stamp) -> String {
    let plot = Plot::new(Scale::Lin(0.0, 1.0), Scale::linear(bars.iter().map(|b| b.1), true));
    let mut svg = Svg::new(title, stamp, WIDTH, HEIGHT);
    let zero = plot.py(0.0);
    for (v, label) in plot.ys.ticks() {
        let y = plot.py(v);
        svg.line(plot.left, y, plot.left + plot.w, y, "#e0e0e0", 1.0);
        svg.text(plot.left - 8.0, y + 4.0, "end", &label);
    }
    let slot = plot.w / bars.len() as f64;
    for (i, (name, v)) in bars.iter().enumerate() {
        let x = plot.left + slot * (i as f64 + 0.15);
        let y = plot.py(*v);
        let (top, h) = if y < zero { (y, zero - y) } else { (zero, y - zero) };
        svg.rect(x, top, slot * 0.7, h, PALETTE[i % PALETTE.len()], &format!("{name}: {}", fmt_sig(*v)));
        svg.text(x + slot * 0.35, top - 6.0, "middle", &fmt_sig(*v));
        svg.text(x + slot * 0.35, plot.top + plot.h + 18.0, "middle", name);
    }
    svg.line(plot.left, zero, plot.left + plot.w, zero, "black", 1.0);
    svg.line(plot.left, plot.top, plot.left, plot.top + plot.h, "black", 1.0);
    svg.text_rotated(22.0, plot.top + plot.h / 2.0, ylabel);
    svg.finish()
}

fn heat_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(247.0, 69.0), lerp(236.0, 148.0))
}

fn render_heatmap(rows: &[HeatmapRow], stamp: &Stamp) -> String {
    let labels = series_names(rows.iter().map(|r| r.synthetic_label.as_str()));
    let mut ns: Vec<u64> = rows.iter().map(|r| r.n).collect();
    let mut ds: Vec<u64> = rows.iter().map(|r| r.d).collect();
    ns.sort_unstable();
    ns.dedup();
    ds.sort_unstable();
    ds.dedup();
    let mut ratios: Vec<f64> = rows.iter().map(|r| r.best_ratio_percent).collect();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    let cell_w = 64.0;
    let cell_h = 30.0;
    let panel_w = 90.0 + cell_w * ds.len() as f64;
    let width = (panel_w * labels.len() as f64 + 20.0).max(320.0);
    let height = 110.0 + cell_h * ns.len() as f64;
    let mut svg = Svg::new("Best synthetic ratio (%) per (N, D)", stamp, width, height);
    for (p, label) in labels.iter().enumerate() {
        let x0 = 10.0 + panel_w * p as f64 + 80.0;
        let y0 = 60.0;
        svg.text(x0 + cell_w * ds.len() as f64 / 2.0, 44.0, "middle", label);
        for (j, d) in ds.iter().enumerate() {
            svg.text(x0 + cell_w * (j as f64 + 0.5), y0 + cell_h * ns.len() as f64 + 16.0, "middle", &format!("D={d}"));
        }
        for (i, n) in ns.iter().rev().enumerate() {
            let y = y0 + cell_h * i as f64;
            svg.text(x0 - 6.0, y + cell_h / 2.0 + 4.0, "end", &format!("N={n}"));
            for (j, d) in ds.iter().enumerate() {
                let x = x0 + cell_w * j as f64;
                match rows.iter().find(|r| &r.synthetic_label == label && r.n == *n && r.d == *d) {
                    Some(r) => {
                        let rank = ratios.iter().position(|v| *v == r.best_ratio_percent).unwrap_or(0);
                        let t = if ratios.len() > 1 { rank as f64 / (ratios.len() - 1) as f64 } else { 0.5 };
                        let value = format!("{:.2}", r.best_ratio_percent);
                        svg.rect(x, y, cell_w, cell_h, &heat_color(t), &format!("{label} N={n} D={d} best={value}% loss={}", fmt_sig(r.best_loss)));
                        svg.text(x + cell_w / 2.0, y + cell_h / 2.0 + 4.0, "middle", &value);
                    }
                    None => svg.rect(x, y, cell_w, cell_h, "#cccccc", "missing"),
                }
            }
        }
    }
    svg.finish()
}

fn render_zipf(rows: &[ZipfRow], stamp: &Stamp) -> String {
    let ys = rows.iter().map(|r| r.count as f64).chain(rows.iter().filter_map(|r| r.fit)).filter(|v| *v > 0.0);
    let plot = Plot::new(Scale::log(rows.iter().map(|r| r.rank as f64)), Scale::log(ys));
    let mut svg = Svg::new("Token frequency by rank", stamp, WIDTH, HEIGHT);
    plot.axes(&mut svg, "rank", "count");
    let mut legend = Vec::new();
    for (i, c) in series_names(rows.iter().map(|r| r.corpus.as_str())).iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = rows.iter().filter(|r| &r.corpus == c && r.count > 0).map(|r| (plot.px(r.rank as f64), plot.py(r.count as f64))).collect();
        svg.polyline(&pts, color);
        let fit: Vec<(f64, f64)> = rows.iter().filter(|r| &r.corpus == c).filter_map(|r| r.fit.map(|f| (plot.px(r.rank as f64), plot.py(f)))).collect();
        if fit.len() > 1 {
            let _ = writeln!(
                svg.buf,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1" stroke-dasharray="5,3"/>"#,
                fit.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect::<Vec<_>>().join(" ")
            );
        }
        legend.push((c.clone(), color));
    }
    plot.legend(&mut svg, &legend);
    svg.finish()
}

fn render_token_loss(rows: &[TokenLossRow], stamp: &Stamp) -> String {
    let plot = Plot::new(Scale::linear(rows.iter().map(|r| r.position as f64), false), Scale::linear(rows.iter().map(|r| r.loss), false));
    let mut svg = Svg::new("Per-token loss (rolling mean)", stamp, WIDTH, HEIGHT);
    plot.axes(&mut svg, "token position", "loss (nats)");
    let mut legend = Vec::new();
    for (i, s) in series_names(rows.iter().map(|r| r.series.as_str())).iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = rows.iter().filter(|r| &r.series == s).map(|r| (plot.px(r.position as f64), plot.py(r.loss))).collect();
        svg.polyline(&pts, color);
        legend.push((s.clone(), color));
    }
    plot.legend(&mut svg, &legend);
    svg.finish()
}

/// Scaling-curve rows for one fitted series: fit points, holdout points and
/// `samples` log-spaced curve points spanning all of them. Joint fits are
/// drawn over D with N held at `fixed_n`.
pub fn scaling_rows(
    fit: &crate::scaling::PowerLawFit,
    series: &str,
    fit_points: &[(f64, f64)],
    holdout_points: &[(f64, f64)],
    samples: usize,
    fixed_n: Option<f64>,
) -> Vec<ScalingRow> {
    let axis = if fit.form == crate::scaling::ScalingForm::Model { "N" } else { "D" };
    let (lo, hi) = bounds(fit_points.iter().chain(holdout_points).map(|p| p.0));
    let mut rows: Vec<ScalingRow> = Vec::new();
    let mk = |x: f64, loss: f64, role| ScalingRow { series: series.to_string(), axis: axis.to_string(), x, loss, role };
    for x in crate::scaling::log_space(lo, hi, samples.max(2)) {
        let loss = if axis == "N" { crate::scaling::predict(fit, Some(x), None) } else { crate::scaling::predict(fit, fixed_n, Some(x)) };
        if let Ok(l) = loss {
            rows.push(mk(x, l, PointRole::Curve));
        }
    }
    rows.extend(fit_points.iter().map(|&(x, l)| mk(x, l, PointRole::Fit)));
    rows.extend(holdout_points.iter().map(|&(x, l)| mk(x, l, PointRole::Holdout)));
    rows
}
