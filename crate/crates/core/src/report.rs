//! Result rendering: the per-task CSV (the single source of truth), markdown
//! summary tables and SVG accuracy-vs-task plots.
//!
//! CSV layout: header `setting,seed,task_index,accuracy,lambda_max`, one row
//! per (setting, seed, task) sorted by setting label, seed, then task index.
//! `task_index` is 1-based. `lambda_max` is empty when the task was not
//! probed. A failed run ends with a row for the failing task whose
//! `accuracy` field is empty.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::harness::{mean_per_task_change, trend_slope, RunFailure, RunRecord};
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["setting", "seed", "task_index", "accuracy", "lambda_max"];

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    setting: String,
    seed: u64,
    task_index: usize,
    accuracy: Option<f64>,
    lambda_max: Option<f64>,
}

fn sorted_refs(records: &[RunRecord]) -> Result<Vec<&RunRecord>> {
    let mut refs: Vec<&RunRecord> = records.iter().collect();
    refs.sort_by(|a, b| (&a.setting, a.seed).cmp(&(&b.setting, b.seed)));
    if let Some(w) = refs.windows(2).find(|w| w[0].setting == w[1].setting && w[0].seed == w[1].seed) {
        return Err(Error::Usage(format!(
            "duplicate record for setting {} seed {}",
            w[0].setting, w[0].seed
        )));
    }
    Ok(refs)
}

/// Renders records as CSV text.
pub fn records_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in sorted_refs(records)? {
        for (i, &acc) in r.per_task_accuracy.iter().enumerate() {
            w.serialize(CsvRow {
                setting: r.setting.clone(),
                seed: r.seed,
                task_index: i + 1,
                accuracy: Some(acc),
                lambda_max: r.per_task_lambda_max.get(i).copied().flatten(),
            })?;
        }
        if let Some(f) = &r.failure {
            w.serialize(CsvRow {
                setting: r.setting.clone(),
                seed: r.seed,
                task_index: f.task_index,
                accuracy: None,
                lambda_max: None,
            })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io("csv buffer", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_records_csv(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = records_csv(records)?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Parses CSV text produced by [`records_csv`] back into records. Only the
/// fields the CSV carries are restored.
pub fn parse_records_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::Format {
            file: "records csv".into(),
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut records: Vec<RunRecord> = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row?;
        let fresh = records
            .last()
            .map_or(true, |r| r.setting != row.setting || r.seed != row.seed);
        if fresh {
            records.push(RunRecord {
                setting: row.setting.clone(),
                seed: row.seed,
                per_task_accuracy: Vec::new(),
                per_task_lambda_max: Vec::new(),
                per_task_sharpness: Vec::new(),
                degenerate_step_count: 0,
                gradient_evals: 0,
                hvp_evals: 0,
                failure: None,
                trace: Vec::new(),
                final_params: None,
            });
        }
        let rec = records.last_mut().expect("pushed above");
        if rec.failure.is_some() {
            return Err(Error::Format {
                file: "records csv".into(),
                message: format!("rows after failure marker for {} seed {}", rec.setting, rec.seed),
            });
        }
        let expected = rec.per_task_accuracy.len() + 1;
        if row.task_index != expected {
            return Err(Error::Format {
                file: "records csv".into(),
                message: format!(
                    "{} seed {}: task_index {} where {expected} was expected",
                    rec.setting, rec.seed, row.task_index
                ),
            });
        }
        match row.accuracy {
            Some(a) if (0.0..=1.0).contains(&a) => {
                rec.per_task_accuracy.push(a);
                rec.per_task_lambda_max.push(row.lambda_max);
            }
            Some(a) => {
                return Err(Error::Data(format!("accuracy {a} outside [0, 1]")));
            }
            None => {
                rec.failure = Some(RunFailure {
                    task_index: row.task_index,
                    message: "failed".into(),
                });
            }
        }
    }
    Ok(records)
}

pub fn read_records_csv(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_records_csv(&text)
}

/// Across-seed summary of one training setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: String,
    /// Mean over successful seeds of the mean per-task accuracy change.
    pub mean_change: Option<f64>,
    /// Sample standard deviation of the per-seed changes (needs 2 seeds).
    pub std_change: Option<f64>,
    /// Mean over successful seeds of the least-squares accuracy slope.
    pub mean_trend_slope: Option<f64>,
    pub n_seeds: usize,
    /// Runs that stopped on a numerical failure.
    pub n_failed: usize,
}

/// Settings in order of first appearance.
pub fn setting_order(records: &[RunRecord]) -> Vec<String> {
    let mut order: Vec<String> = Vec::new();
    for r in records {
        if !order.contains(&r.setting) {
            order.push(r.setting.clone());
        }
    }
    order
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn sample_std(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    (xs.len() >= 2).then(|| {
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    })
}

/// One row per setting in `order`. Successful runs shorter than two tasks
/// have no per-task change and contribute to neither statistic.
pub fn summarize(records: &[RunRecord], order: &[String]) -> Vec<SummaryRow> {
    order
        .iter()
        .map(|setting| {
            let runs: Vec<&RunRecord> = records.iter().filter(|r| &r.setting == setting).collect();
            let mut changes = Vec::new();
            let mut slopes = Vec::new();
            for r in runs.iter().filter(|r| r.succeeded()) {
                if let (Ok(c), Ok(s)) = (
                    mean_per_task_change(&r.per_task_accuracy),
                    trend_slope(&r.per_task_accuracy),
                ) {
                    changes.push(c);
                    slopes.push(s);
                }
            }
            SummaryRow {
                setting: setting.clone(),
                mean_change: mean(&changes),
                std_change: sample_std(&changes),
                mean_trend_slope: mean(&slopes),
                n_seeds: runs.len(),
                n_failed: runs.iter().filter(|r| !r.succeeded()).count(),
            }
        })
        .collect()
}

fn superscript(exp: i32) -> String {
    exp.to_string()
        .chars()
        .map(|c| match c {
            '-' => '⁻',
            '0' => '⁰',
            '1' => '¹',
            '2' => '²',
            '3' => '³',
            '4' => '⁴',
            '5' => '⁵',
            '6' => '⁶',
            '7' => '⁷',
            '8' => '⁸',
            '9' => '⁹',
            other => other,
        })
        .collect()
}

/// Two-significant-digit scientific notation, e.g. `−3.2×10⁻⁴`, `+4.6×10⁻⁵`.
pub fn format_sci(x: f64) -> String {
    if x == 0.0 {
        return "0.0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let s = format!("{:.1e}", x.abs());
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if x < 0.0 { '−' } else { '+' };
    format!("{sign}{mantissa}×10{}", superscript(exp))
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_owned(), format_sci)
}

/// Markdown summary table, one row per setting.
pub fn summarize_table(records: &[RunRecord], order: &[String]) -> String {
    let mut out = String::new();
    out.push_str(
        "| Training setting | Mean per-task accuracy change | Std across seeds | Trend slope | Seeds | Failed |\n",
    );
    out.push_str("|---|---|---|---|---|---|\n");
    for row in summarize(records, order) {
        let change = match row.mean_change {
            Some(c) => format_sci(c),
            None if row.n_failed == row.n_seeds => "FAILED (no successful runs)".to_owned(),
            None => "n/a".to_owned(),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            row.setting,
            change,
            row.std_change.map_or_else(|| "n/a".to_owned(), |s| format_sci(s).trim_start_matches('+').to_owned()),
            cell(row.mean_trend_slope),
            row.n_seeds,
            row.n_failed
        );
    }
    out
}

/// Plot appearance switches.
#[derive(Debug, Clone, Default)]
pub struct PlotOptions {
    pub title: Option<String>,
    /// Also draw each seed's curve, thin and translucent.
    pub per_seed: bool,
}

pub const PLOT_WIDTH: f64 = 800.0;
pub const PLOT_HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 200.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Seed-averaged accuracy per task index over successful runs; tasks with
/// no data (shorter runs) are skipped.
pub fn seed_mean_curve(records: &[&RunRecord]) -> Vec<(usize, f64)> {
    let len = records.iter().map(|r| r.per_task_accuracy.len()).max().unwrap_or(0);
    (0..len)
        .filter_map(|t| {
            let vals: Vec<f64> = records
                .iter()
                .filter_map(|r| r.per_task_accuracy.get(t).copied())
                .collect();
            mean(&vals).map(|m| (t + 1, m))
        })
        .collect()
}

/// Renders the accuracy-vs-task plot as a self-contained SVG document.
///
/// The plot area is the `<rect id="plot-area">`; task `1..=T` maps linearly
/// onto its width and accuracy `[0, 1]` onto its height (1 at the top).
pub fn accuracy_plot_svg(records: &[RunRecord], options: &PlotOptions) -> Result<String> {
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.succeeded() && !r.per_task_accuracy.is_empty()).collect();
    if ok.is_empty() {
        return Err(Error::Usage("no successful records to plot".into()));
    }
    let order = setting_order(records);
    let n_tasks = ok.iter().map(|r| r.per_task_accuracy.len()).max().unwrap_or(1);
    let (x0, y0) = (MARGIN_LEFT, MARGIN_TOP);
    let (w, h) = (
        PLOT_WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        PLOT_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM,
    );
    let px = |task: usize| {
        if n_tasks <= 1 {
            x0 + w / 2.0
        } else {
            x0 + w * (task - 1) as f64 / (n_tasks - 1) as f64
        }
    };
    let py = |acc: f64| y0 + h * (1.0 - acc);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_WIDTH}" height="{PLOT_HEIGHT}" viewBox="0 0 {PLOT_WIDTH} {PLOT_HEIGHT}" data-tasks="{n_tasks}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let title = options
        .title
        .clone()
        .unwrap_or_else(|| "Task-specific test accuracy".to_owned());
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        x0 + w / 2.0,
        xml_escape(&title)
    );
    let _ = writeln!(
        s,
        r##"<rect id="plot-area" x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#333"/>"##
    );

    // y ticks
    for i in 0..=5 {
        let acc = i as f64 / 5.0;
        let y = py(acc);
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{y:.3}" x2="{x0}" y2="{y:.3}" stroke="#333"/><text x="{}" y="{:.3}" font-family="sans-serif" font-size="11" text-anchor="end">{acc:.1}</text>"##,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0
        );
    }
    // x ticks: at most ~10 labels
    let step = n_tasks.div_ceil(10).max(1);
    let mut ticks: Vec<usize> = (1..=n_tasks).step_by(step).collect();
    if ticks.last() != Some(&n_tasks) {
        ticks.push(n_tasks);
    }
    for t in ticks {
        let x = px(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.3}" y1="{}" x2="{x:.3}" y2="{}" stroke="#333"/><text x="{x:.3}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{t}</text>"##,
            y0 + h,
            y0 + h + 5.0,
            y0 + h + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">Task</text>"#,
        x0 + w / 2.0,
        PLOT_HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {})">Task-specific test accuracy</text>"#,
        y0 + h / 2.0,
        y0 + h / 2.0
    );

    let points = |curve: &[(usize, f64)]| {
        curve
            .iter()
            .map(|&(t, a)| format!("{:.3},{:.3}", px(t), py(a)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut legend_row = 0;
    for (k, setting) in order.iter().enumerate() {
        let runs: Vec<&RunRecord> = ok.iter().copied().filter(|r| &r.setting == setting).collect();
        if runs.is_empty() {
            continue;
        }
        let color = PALETTE[k % PALETTE.len()];
        if options.per_seed {
            for r in &runs {
                let curve: Vec<(usize, f64)> =
                    r.per_task_accuracy.iter().enumerate().map(|(i, &a)| (i + 1, a)).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline class="seed-curve" fill="none" stroke="{color}" stroke-width="0.7" stroke-opacity="0.35" points="{}"/>"#,
                    points(&curve)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<polyline class="mean-curve" data-setting="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            xml_escape(setting),
            points(&seed_mean_curve(&runs))
        );
        let ly = y0 + 10.0 + 20.0 * legend_row as f64;
        let lx = x0 + w + 15.0;
        let _ = writeln!(
            s,
            r#"<g class="legend-entry"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            xml_escape(setting)
        );
        legend_row += 1;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_accuracy_plot(records: &[RunRecord], path: impl AsRef<Path>, options: &PlotOptions) -> Result<()> {
    let path = path.as_ref();
    let svg = accuracy_plot_svg(records, options)?;
    fs::write(path, svg).map_err(|e| Error::io(path.display().to_string(), e))
}
