use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use plotters::coord::types::RangedCoordi32;
use plotters::coord::Shift;
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::curves::LossCurves;
use super::prefix::PrefixMatrix;
use super::sweep::PrecisionCurve;
use super::transfer::{CellRates, TransferMatrix};
use crate::error::{Error, Result};

/// Any experiment result that can be rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportData {
    Transfer(TransferMatrix),
    Precision(PrecisionCurve),
    Prefix(PrefixMatrix),
    Loss(LossCurves),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Md,
    Png,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Md, ReportFormat::Png];

    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Md),
            "png" => Ok(ReportFormat::Png),
            _ => Err(Error::UnknownFormat(name.to_owned())),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Md => "md",
            ReportFormat::Png => "png",
        }
    }
}

pub fn render_report(data: &ReportData, format: ReportFormat, path: &Path) -> Result<()> {
    match format {
        ReportFormat::Csv | ReportFormat::Md => {
            let text = render_text(data, format)?;
            fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        ReportFormat::Png => render_png(data, path),
    }
}

/// CSV or Markdown rendering as a string.
pub fn render_text(data: &ReportData, format: ReportFormat) -> Result<String> {
    match (format, data) {
        (ReportFormat::Csv, ReportData::Transfer(m)) => transfer_csv(m),
        (ReportFormat::Csv, ReportData::Precision(c)) => precision_csv(c),
        (ReportFormat::Csv, ReportData::Prefix(p)) => prefix_csv(p),
        (ReportFormat::Md, ReportData::Transfer(m)) => Ok(transfer_md(m)),
        (ReportFormat::Md, ReportData::Precision(c)) => Ok(precision_md(c)),
        (ReportFormat::Csv, ReportData::Loss(l)) => loss_csv(l),
        (ReportFormat::Md, ReportData::Loss(l)) => Ok(loss_md(l)),
        (ReportFormat::Md, ReportData::Prefix(p)) => Ok(prefix_md(p)),
        (ReportFormat::Png, _) => Err(Error::Render("PNG is not a text format".into())),
    }
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.write_record(&row).map_err(|e| Error::Render(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Render(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Render(e.to_string()))
}

type Metric = (&'static str, fn(&CellRates) -> f64);

const METRICS: [Metric; 3] = [
    ("targeted_word", |r| r.targeted_word),
    ("targeted_char", |r| r.targeted_char),
    ("untargeted_word", |r| r.untargeted_word),
];

/// One row per (proxy, model) cell, in the order the matrix stores them.
/// Rates of invalid cells are empty.
fn transfer_csv(m: &TransferMatrix) -> Result<String> {
    let mut header: Vec<String> = ["model", "proxy", "clean_wer"].iter().map(|s| s.to_string()).collect();
    header.extend(METRICS.iter().map(|(name, _)| name.to_string()));
    header.extend(["examples".to_owned(), "flagged".into()]);
    let mut rows = vec![header];
    for (proxy, cells) in m.proxies.iter().zip(&m.cells) {
        for ((model, cell), wer) in m.models.iter().zip(cells).zip(&m.clean_wer) {
            let mut row = vec![model.clone(), proxy.clone(), wer.map(|v| v.to_string()).unwrap_or_default()];
            row.extend(
                METRICS.iter().map(|(_, get)| cell.rates.as_ref().map(|r| get(r).to_string()).unwrap_or_default()),
            );
            row.push(cell.examples.to_string());
            row.push(u8::from(cell.flagged).to_string());
            rows.push(row);
        }
    }
    csv_string(rows)
}

fn percent(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

fn md_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = format!("| {} |\n", header.join(" | "));
    out.push_str(&format!("|{}\n", " --- |".repeat(header.len())));
    for row in rows {
        out.push_str(&format!("| {} |\n", row.join(" | ")));
    }
    out
}

fn transfer_md(m: &TransferMatrix) -> String {
    let header: Vec<String> = std::iter::once("proxy \\ model".to_owned()).chain(m.models.iter().cloned()).collect();
    let mut out = String::new();
    let titles = ["Targeted success (word)", "Targeted success (char)", "Untargeted success (word)"];
    for ((_, get), title) in METRICS.iter().zip(titles) {
        let rows: Vec<Vec<String>> = m
            .proxies
            .iter()
            .zip(&m.cells)
            .map(|(proxy, cells)| {
                std::iter::once(proxy.clone())
                    .chain(cells.iter().map(|c| match &c.rates {
                        None => "n/a".to_owned(),
                        Some(r) if c.flagged => format!("*{}*", percent(get(r))),
                        Some(r) => percent(get(r)),
                    }))
                    .collect()
            })
            .collect();
        out.push_str(&format!("### {title}\n\n{}\n", md_table(&header, &rows)));
    }
    let wer: Vec<String> = std::iter::once("clean WER".to_owned())
        .chain(m.clean_wer.iter().map(|w| w.map(percent).unwrap_or_else(|| "n/a".into())))
        .collect();
    let mut wer_header = header.clone();
    wer_header[0] = String::new();
    out.push_str(&format!("### Clean word error rate\n\n{}\n", md_table(&wer_header, &[wer])));
    out.push_str("Italic cells do not measure transfer: the model helped generate the examples.\n");
    out
}

fn precision_csv(c: &PrecisionCurve) -> Result<String> {
    let mut rows = vec![vec!["k".to_owned(), "white_box".into(), "transfer".into()]];
    for i in 0..c.ks.len() {
        rows.push(vec![c.ks[i].to_string(), c.white_box[i].to_string(), c.transfer[i].to_string()]);
    }
    csv_string(rows)
}

fn precision_md(c: &PrecisionCurve) -> String {
    let header = ["k".to_owned(), "white-box".into(), "transfer".into()];
    let rows: Vec<Vec<String>> =
        (0..c.ks.len()).map(|i| vec![c.ks[i].to_string(), percent(c.white_box[i]), percent(c.transfer[i])]).collect();
    format!(
        "### Top-k success ({} inputs x {} repeats, {} classes)\n\n{}",
        c.n_inputs,
        c.repeats,
        c.num_classes,
        md_table(&header, &rows)
    )
}

fn prefix_csv(p: &PrefixMatrix) -> Result<String> {
    let mut rows = vec![std::iter::once("proxy".to_owned()).chain(p.models.iter().cloned()).collect::<Vec<_>>()];
    for (name, row) in p.models.iter().zip(&p.success) {
        rows.push(std::iter::once(name.clone()).chain(row.iter().map(f64::to_string)).collect());
    }
    rows.push(std::iter::once("clean".to_owned()).chain(p.clean_rate.iter().map(f64::to_string)).collect());
    csv_string(rows)
}

fn prefix_md(p: &PrefixMatrix) -> String {
    let header: Vec<String> = std::iter::once("proxy \\ model".to_owned()).chain(p.models.iter().cloned()).collect();
    let mut rows: Vec<Vec<String>> = p
        .models
        .iter()
        .zip(&p.success)
        .enumerate()
        .map(|(i, (name, row))| {
            std::iter::once(name.clone())
                .chain(row.iter().enumerate().map(
                    |(j, v)| {
                        if i == j {
                            format!("*{}*", percent(*v))
                        } else {
                            percent(*v)
                        }
                    },
                ))
                .collect()
        })
        .collect();
    rows.push(std::iter::once("clean".to_owned()).chain(p.clean_rate.iter().map(|v| percent(*v))).collect());
    let mut out = format!(
        "### \"{}\" first-word success over {} utterances\n\n{}\n",
        p.word,
        p.samples,
        md_table(&header, &rows)
    );
    if let Some(s) = p.off_diagonal {
        out.push_str(&format!("Off-diagonal mean {} (sd {}).\n", percent(s.mean), percent(s.sd)));
    }
    out
}

fn loss_csv(l: &LossCurves) -> Result<String> {
    let mut rows = vec![vec!["model".to_owned(), "role".into(), "iteration".into(), "loss".into()]];
    for s in &l.series {
        let role = if s.proxy { "proxy" } else { "private" };
        for (it, v) in &s.points {
            rows.push(vec![s.model.clone(), role.into(), it.to_string(), v.to_string()]);
        }
    }
    csv_string(rows)
}

fn loss_md(l: &LossCurves) -> String {
    let header: Vec<String> = std::iter::once("iteration".to_owned())
        .chain(l.series.iter().map(|s| if s.proxy { format!("{} (proxy)", s.model) } else { s.model.clone() }))
        .collect();
    let n = l.series.first().map_or(0, |s| s.points.len());
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            std::iter::once(l.series[0].points[i].0.to_string())
                .chain(l.series.iter().map(|s| format!("{:.3}", s.points[i].1)))
                .collect()
        })
        .collect();
    format!("### Targeted loss on `{}` -> \"{}\"\n\n{}", l.sample, l.target, md_table(&header, &rows))
}

const FONT_CANDIDATES: &[&str] = &[
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/Library/Fonts/DejaVuSans.ttf",
    "C:\\Windows\\Fonts\\arial.ttf",
];

/// Registers the first available system font as `sans-serif`. Plots are
/// drawn without text when none is found.
fn font_available() -> bool {
    static FOUND: OnceLock<bool> = OnceLock::new();
    *FOUND.get_or_init(|| {
        for path in FONT_CANDIDATES {
            if let Ok(bytes) = fs::read(path) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        log::warn!("no usable font found; plots will carry no text");
        false
    })
}

fn render_png(data: &ReportData, path: &Path) -> Result<()> {
    let text = font_available();
    let root = BitMapBackend::new(path, (900, 600)).into_drawing_area();
    let drawn = match data {
        ReportData::Precision(c) => draw_curve(&root, c, text),
        ReportData::Transfer(m) => {
            let values: Vec<Vec<Option<f64>>> =
                m.cells.iter().map(|row| row.iter().map(|c| c.rates.map(|r| r.targeted_word)).collect()).collect();
            draw_heatmap(&root, "Targeted success (word)", &m.proxies, &m.models, &values, text)
        }
        ReportData::Prefix(p) => {
            let values: Vec<Vec<Option<f64>>> =
                p.success.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect();
            let title = format!("\"{}\" first-word success", p.word);
            draw_heatmap(&root, &title, &p.models, &p.models, &values, text)
        }
        ReportData::Loss(l) => draw_losses(&root, l, text),
    };
    drawn.and_then(|_| root.present().map_err(|e| e.to_string())).map_err(Error::Render)
}

type Area<'a> = DrawingArea<BitMapBackend<'a>, Shift>;

fn draw_curve(root: &Area<'_>, c: &PrecisionCurve, text: bool) -> std::result::Result<(), String> {
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let k_max = c.ks.last().copied().unwrap_or(1) as f64;
    let mut builder = ChartBuilder::on(root);
    builder.margin(20);
    if text {
        builder
            .caption("Top-k success vs. target precision", ("sans-serif", 24))
            .x_label_area_size(40)
            .y_label_area_size(50);
    }
    let mut chart = builder.build_cartesian_2d(0.5..k_max + 0.5, 0.0..1.05).map_err(|e| e.to_string())?;
    if text {
        chart.configure_mesh().x_desc("k").y_desc("success rate").draw().map_err(|e| e.to_string())?;
    }
    let series = [("white-box", &c.white_box, BLUE), ("transfer", &c.transfer, RED)];
    for (name, values, color) in series {
        let points: Vec<(f64, f64)> = c.ks.iter().zip(values.iter()).map(|(k, v)| (*k as f64, *v)).collect();
        let drawn =
            chart.draw_series(LineSeries::new(points.clone(), color.stroke_width(2))).map_err(|e| e.to_string())?;
        if text {
            drawn.label(name).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        chart.draw_series(points.iter().map(|p| Circle::new(*p, 4, color.filled()))).map_err(|e| e.to_string())?;
    }
    let chance = 1.0 / c.num_classes as f64;
    let drawn = chart
        .draw_series(LineSeries::new(vec![(0.5, chance), (k_max + 0.5, chance)], BLACK.mix(0.4)))
        .map_err(|e| e.to_string())?;
    if text {
        drawn.label("chance").legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK.mix(0.4)));
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

const PALETTE: [RGBColor; 6] = [BLUE, RED, GREEN, MAGENTA, CYAN, RGBColor(230, 140, 0)];

fn draw_losses(root: &Area<'_>, l: &LossCurves, text: bool) -> std::result::Result<(), String> {
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let all = l.series.iter().flat_map(|s| s.points.iter());
    let x_max = all.clone().map(|p| p.0).max().unwrap_or(1) as f64;
    let (lo, hi) = all
        .map(|p| p.1)
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo.min(0.0), hi.max(lo + 1e-9) * 1.05) } else { (0.0, 1.0) };
    let mut builder = ChartBuilder::on(root);
    builder.margin(20);
    if text {
        builder
            .caption("Targeted loss over attack steps", ("sans-serif", 24))
            .x_label_area_size(40)
            .y_label_area_size(60);
    }
    let mut chart = builder.build_cartesian_2d(0.0..x_max, lo..hi).map_err(|e| e.to_string())?;
    if text {
        chart.configure_mesh().x_desc("iteration").y_desc("loss").draw().map_err(|e| e.to_string())?;
    }
    for (i, s) in l.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<(f64, f64)> = s.points.iter().map(|(x, y)| (*x as f64, *y)).collect();
        let drawn = chart.draw_series(LineSeries::new(points, color.stroke_width(2))).map_err(|e| e.to_string())?;
        if text {
            let name = if s.proxy { format!("{} (proxy)", s.model) } else { s.model.clone() };
            drawn.label(name).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
    }
    if text {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn shade(v: f64) -> RGBColor {
    let v = v.clamp(0.0, 1.0);
    let mix = |lo: f64, hi: f64| (lo + (hi - lo) * v).round() as u8;
    RGBColor(mix(247.0, 8.0), mix(251.0, 48.0), mix(255.0, 107.0))
}

fn draw_heatmap(
    root: &Area<'_>,
    title: &str,
    rows: &[String],
    cols: &[String],
    values: &[Vec<Option<f64>>],
    text: bool,
) -> std::result::Result<(), String> {
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let mut builder = ChartBuilder::on(root);
    builder.margin(20);
    if text {
        builder.caption(title, ("sans-serif", 24)).x_label_area_size(60).y_label_area_size(140);
    }
    let mut chart: ChartContext<'_, _, Cartesian2d<RangedCoordi32, RangedCoordi32>> =
        builder.build_cartesian_2d(0..cols.len() as i32, 0..rows.len() as i32).map_err(|e| e.to_string())?;
    if text {
        chart
            .configure_mesh()
            .disable_mesh()
            // zero labels overflows the integer key-point search
            .x_labels(1)
            .y_labels(1)
            .x_label_formatter(&|_| String::new())
            .y_label_formatter(&|_| String::new())
            .x_desc("model")
            .y_desc("proxy")
            .draw()
            .map_err(|e| e.to_string())?;
    }
    for (i, row) in values.iter().enumerate() {
        // first proxy at the top
        let y = (rows.len() - 1 - i) as i32;
        for (j, v) in row.iter().enumerate() {
            let x = j as i32;
            let fill = v.map(shade).unwrap_or(RGBColor(200, 200, 200));
            chart
                .draw_series(std::iter::once(Rectangle::new([(x, y), (x + 1, y + 1)], fill.filled())))
                .map_err(|e| e.to_string())?;
            if text {
                let label = v.map(percent).unwrap_or_else(|| "n/a".into());
                let color = if v.unwrap_or(0.0) > 0.5 { &WHITE } else { &BLACK };
                let (px, py) = chart.backend_coord(&(x, y + 1));
                let (qx, qy) = chart.backend_coord(&(x + 1, y));
                let centre = ((px + qx) / 2 - 24, (py + qy) / 2 - 8);
                root.draw(&Text::new(label, centre, ("sans-serif", 16).into_font().color(color)))
                    .map_err(|e| e.to_string())?;
            }
        }
    }
    if text {
        for (j, name) in cols.iter().enumerate() {
            let (px, _) = chart.backend_coord(&(j as i32, 0));
            let (qx, qy) = chart.backend_coord(&(j as i32 + 1, 0));
            root.draw(&Text::new(name.clone(), ((px + qx) / 2 - 30, qy + 8), ("sans-serif", 14)))
                .map_err(|e| e.to_string())?;
        }
        for (i, name) in rows.iter().enumerate() {
            let y = (rows.len() - 1 - i) as i32;
            let (px, py) = chart.backend_coord(&(0, y + 1));
            let (_, qy) = chart.backend_coord(&(0, y));
            root.draw(&Text::new(name.clone(), (px - 130, (py + qy) / 2 - 7), ("sans-serif", 14)))
                .map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}
