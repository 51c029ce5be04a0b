//! Convergence-curve emission: per-episode validation F-scores from one or
//! several runs' trace files, exponentially smoothed with factor 0.1, drawn as
//! SVG line charts (mean line plus a standard-deviation band for multi-run
//! input) with a CSV of the plotted series next to each image.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const SMOOTHING: f64 = 0.1;

/// The six emitted curves: both evaluation levels for the audio and visual
/// tracks and the pooled Event@AV aggregate.
pub const CURVES: [(&str, &str); 6] = [
    ("segment_audio", "seg_audio"),
    ("segment_visual", "seg_visual"),
    ("segment_event_at_av", "seg_event"),
    ("event_audio", "ev_audio"),
    ("event_visual", "ev_visual"),
    ("event_event_at_av", "ev_event"),
];

/// Exponential moving average with new-point weight `factor`.
pub fn smooth(series: &[f64], factor: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut state = f64::NAN;
    for (i, x) in series.iter().enumerate() {
        state = if i == 0 {
            *x
        } else {
            factor * x + (1.0 - factor) * state
        };
        out.push(state);
    }
    out
}

/// Per-episode means of one metric column, ordered by episode index.
fn episode_means(rows: &[TraceRow], column: usize) -> Vec<f64> {
    let mut by_episode: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for row in rows {
        let entry = by_episode.entry(row.episode).or_insert((0.0, 0));
        entry.0 += row.values[column];
        entry.1 += 1;
    }
    by_episode
        .values()
        .map(|(sum, n)| sum / *n as f64)
        .collect()
}

struct TraceRow {
    episode: usize,
    values: Vec<f64>,
}

/// Read the metric columns of a traces.csv, deduplicating the per-branch rows
/// (the validation columns repeat across the two branch rows of a step).
fn read_trace_metrics(path: &Path) -> Result<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 0, e.to_string()))?
        .clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(path, 1, format!("missing column '{name}'")))
    };
    let episode_col = column("episode")?;
    let step_col = column("step")?;
    let branch_col = column("branch")?;
    let metric_cols: Vec<usize> = CURVES
        .iter()
        .map(|(_, col)| column(col))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
        if &record[branch_col] != "audio" {
            continue; // keep one row per step
        }
        let episode: usize = record[episode_col]
            .parse()
            .map_err(|e| Error::parse(path, i + 2, format!("bad episode: {e}")))?;
        let _step: usize = record[step_col]
            .parse()
            .map_err(|e| Error::parse(path, i + 2, format!("bad step: {e}")))?;
        let values = metric_cols
            .iter()
            .map(|c| {
                record[*c]
                    .parse::<f64>()
                    .map_err(|e| Error::parse(path, i + 2, format!("bad value: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(TraceRow { episode, values });
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no trace rows in {}",
            path.display()
        )));
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct CurveData {
    pub name: String,
    /// Smoothed per-episode mean across runs.
    pub mean: Vec<f64>,
    /// Population standard deviation across runs (zero for a single run).
    pub std: Vec<f64>,
}

/// Assemble the six curves from one or more run directories (each holding a
/// `traces.csv`). Runs are truncated to the shortest episode count; each run's
/// series is smoothed before the cross-run mean and deviation are taken.
pub fn collect_curves(run_dirs: &[PathBuf]) -> Result<Vec<CurveData>> {
    if run_dirs.is_empty() {
        return Err(Error::Config("plot needs at least one run directory".into()));
    }
    let mut per_run: Vec<Vec<TraceRow>> = Vec::new();
    for dir in run_dirs {
        let path = if dir.is_dir() {
            dir.join("traces.csv")
        } else {
            dir.clone()
        };
        per_run.push(read_trace_metrics(&path)?);
    }

    let mut curves = Vec::new();
    for (ci, (name, _)) in CURVES.iter().enumerate() {
        let smoothed: Vec<Vec<f64>> = per_run
            .iter()
            .map(|rows| smooth(&episode_means(rows, ci), SMOOTHING))
            .collect();
        let len = smoothed.iter().map(Vec::len).min().unwrap_or(0);
        if len == 0 {
            return Err(Error::EmptyDataset("a run produced no episodes".into()));
        }
        let n = smoothed.len() as f64;
        let mut mean = Vec::with_capacity(len);
        let mut std = Vec::with_capacity(len);
        for e in 0..len {
            let m = smoothed.iter().map(|s| s[e]).sum::<f64>() / n;
            let var = smoothed.iter().map(|s| (s[e] - m) * (s[e] - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt());
        }
        curves.push(CurveData {
            name: name.to_string(),
            mean,
            std,
        });
    }
    Ok(curves)
}

/// Emit `<name>.svg` and `<name>.csv` for each curve. Returns the image paths.
pub fn emit_curves(curves: &[CurveData], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut outputs = Vec::new();
    for curve in curves {
        let svg_path = out_dir.join(format!("{}.svg", curve.name));
        fs::write(&svg_path, render_svg(curve)).map_err(|e| Error::io(&svg_path, e))?;
        let csv_path = out_dir.join(format!("{}.csv", curve.name));
        let mut body = String::from("episode,mean,std\n");
        for (e, (m, s)) in curve.mean.iter().zip(&curve.std).enumerate() {
            body.push_str(&format!("{e},{m},{s}\n"));
        }
        fs::write(&csv_path, body).map_err(|e| Error::io(&csv_path, e))?;
        outputs.push(svg_path);
    }
    Ok(outputs)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

fn render_svg(curve: &CurveData) -> String {
    let n = curve.mean.len();
    let lo = curve
        .mean
        .iter()
        .zip(&curve.std)
        .map(|(m, s)| m - s)
        .fold(f64::INFINITY, f64::min);
    let hi = curve
        .mean
        .iter()
        .zip(&curve.std)
        .map(|(m, s)| m + s)
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if (hi - lo).abs() < 1e-12 {
        (lo - 0.05, hi + 0.05)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    };
    let x = |e: usize| -> f64 {
        if n <= 1 {
            MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) / 2.0
        } else {
            MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) * e as f64 / (n - 1) as f64
        }
    };
    let y = |v: f64| -> f64 { HEIGHT - MARGIN_B - (HEIGHT - MARGIN_T - MARGIN_B) * (v - lo) / (hi - lo) };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{} (smoothing 0.1)</text>\n",
        WIDTH / 2.0,
        curve.name.replace('_', " ")
    ));

    // Deviation band (only drawn when it has width).
    if curve.std.iter().any(|s| *s > 0.0) {
        let mut points = String::new();
        for e in 0..n {
            points.push_str(&format!("{:.2},{:.2} ", x(e), y(curve.mean[e] + curve.std[e])));
        }
        for e in (0..n).rev() {
            points.push_str(&format!("{:.2},{:.2} ", x(e), y(curve.mean[e] - curve.std[e])));
        }
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"#87aade\" fill-opacity=\"0.35\" stroke=\"none\"/>\n",
            points.trim_end()
        ));
    }

    let mut line = String::new();
    for e in 0..n {
        line.push_str(&format!("{:.2},{:.2} ", x(e), y(curve.mean[e])));
    }
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f4e9e\" stroke-width=\"1.8\"/>\n",
        line.trim_end()
    ));

    // Axes with end labels.
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B
    ));
    svg.push_str(&format!(
        "<text x=\"{MARGIN_L}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">0</text>\n",
        HEIGHT - MARGIN_B + 18.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B + 18.0,
        n.saturating_sub(1)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">{lo:.3}</text>\n",
        MARGIN_L - 6.0,
        HEIGHT - MARGIN_B + 4.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">{hi:.3}</text>\n",
        MARGIN_L - 6.0,
        MARGIN_T + 4.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">episode</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str("</svg>\n");
    svg
}
