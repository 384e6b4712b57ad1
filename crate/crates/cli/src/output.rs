//! Run artifacts: traces, metrics, summaries, plots and the config echo.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::sim::MethodRun;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Paths written for one method.
#[derive(Debug, Clone, Serialize)]
pub struct MethodArtifacts {
    pub label: String,
    pub trace: Option<PathBuf>,
    pub metrics: PathBuf,
}

/// What a run left on disk.
#[derive(Debug, Clone, Serialize)]
pub struct RunArtifacts {
    pub methods: Vec<MethodArtifacts>,
    pub summary: PathBuf,
    pub errors: PathBuf,
    pub config_echo: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Per-method metrics file: the summary plus the run's energy residual.
#[derive(Serialize)]
struct MetricsFile<'a> {
    label: &'a str,
    method: &'a str,
    #[serde(flatten)]
    summary: &'a pvcurtail_core::metrics::MetricsSummary,
    energy_residual: f64,
}

pub fn write_trace(path: &Path, run: &MethodRun) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for rec in &run.trace {
        w.serialize(rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_summary(path: &Path, runs: &[MethodRun]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec![
        "label".to_string(),
        "method".into(),
        "e_sum".into(),
        "max_overshoot_w".into(),
        "overshoot_duration_s".into(),
    ];
    if let Some(first) = runs.first() {
        header.extend(
            first
                .summary
                .vdc_osc_bins
                .iter()
                .map(|b| format!("osc[{}]_v", b.label())),
        );
    }
    header.extend(["osc_total_v".to_string(), "energy_residual".into()]);
    w.write_record(&header).map_err(csv_err(path))?;
    for run in runs {
        let s = &run.summary;
        let mut row = vec![
            run.label.clone(),
            run.mprt.method.name().to_string(),
            s.e_sum.to_string(),
            s.max_overshoot.to_string(),
            s.overshoot_duration.to_string(),
        ];
        row.extend(s.vdc_osc_bins.iter().map(|b| b.volts.to_string()));
        row.extend([
            s.total_oscillation().to_string(),
            run.energy_residual.to_string(),
        ]);
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Tracking-error samples of every method, one column each, for external
/// distribution plots.
pub fn write_errors(path: &Path, runs: &[MethodRun]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["t".to_string()];
    header.extend(runs.iter().map(|r| format!("p_err_{}", r.label)));
    w.write_record(&header).map_err(csv_err(path))?;
    let n = runs.first().map_or(0, |r| r.trace.len());
    for k in 0..n {
        let mut row = vec![runs[0].trace[k].t.to_string()];
        row.extend(runs.iter().map(|r| r.summary.err_samples[k].to_string()));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#555555",
];

struct Series<'a> {
    name: String,
    points: Vec<(f64, f64)>,
    color: &'a str,
    dashed: bool,
}

/// Minimal line plot with axes and a legend.
fn svg_plot(title: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (900.0, 420.0);
    let (left, right, top, bottom) = (70.0, 160.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"##
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="white"/>"##);
    let _ = writeln!(
        s,
        r##"<text x="{}" y="24" font-size="15">{title}</text>"##,
        left
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
        w - left - right,
        h - top - bottom
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{}" text-anchor="middle">{fx:.1}</text>"##,
            px(fx),
            h - bottom + 18.0
        );
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{:.1}" text-anchor="end">{fy:.1}</text>"##,
            left - 6.0,
            py(fy) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="{}" text-anchor="middle">t (s)</text>"##,
        left + 0.5 * (w - left - right),
        h - 12.0
    );
    let _ = writeln!(
        s,
        r##"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">{y_label}</text>"##,
        top + 0.5 * (h - top - bottom),
        top + 0.5 * (h - top - bottom)
    );
    for (k, ser) in series.iter().enumerate() {
        let mut d = String::new();
        for &(x, y) in &ser.points {
            let _ = write!(d, "{:.2},{:.2} ", px(x), py(y));
        }
        let dash = if ser.dashed {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = writeln!(
            s,
            r##"<polyline fill="none" stroke="{}" stroke-width="1.2"{dash} points="{}"/>"##,
            ser.color,
            d.trim_end()
        );
        let ly = top + 16.0 + 18.0 * k as f64;
        let lx = w - right + 12.0;
        let _ = writeln!(
            s,
            r##"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"##,
            lx + 24.0,
            ser.color,
            lx + 30.0,
            ly + 4.0,
            ser.name
        );
    }
    s.push_str("</svg>\n");
    s
}

fn write_plots(dir: &Path, runs: &[MethodRun]) -> Result<Vec<PathBuf>, OutputError> {
    let Some(first) = runs.first() else {
        return Ok(Vec::new());
    };
    let mut power: Vec<Series> = runs
        .iter()
        .enumerate()
        .map(|(k, r)| Series {
            name: format!("p_pv {}", r.label),
            points: r.trace.iter().map(|x| (x.t, x.p_pv / 1e3)).collect(),
            color: PALETTE[k % PALETTE.len()],
            dashed: false,
        })
        .collect();
    power.push(Series {
        name: "p_ref".into(),
        points: first.trace.iter().map(|x| (x.t, x.p_ref / 1e3)).collect(),
        color: "#000000",
        dashed: true,
    });
    power.push(Series {
        name: "p_mpp".into(),
        points: first
            .trace
            .iter()
            .map(|x| (x.t, x.p_mpp_truth / 1e3))
            .collect(),
        color: "#888888",
        dashed: true,
    });
    let vdc: Vec<Series> = runs
        .iter()
        .enumerate()
        .map(|(k, r)| Series {
            name: format!("v_dc {}", r.label),
            points: r.trace.iter().map(|x| (x.t, x.v_dc)).collect(),
            color: PALETTE[k % PALETTE.len()],
            dashed: false,
        })
        .collect();
    let mut out = Vec::new();
    for (name, title, unit, series) in [
        ("plot_power.svg", "PV power", "kW", power),
        ("plot_vdc.svg", "dc-link voltage", "V", vdc),
    ] {
        let path = dir.join(name);
        fs::write(&path, svg_plot(title, unit, &series)).map_err(io_err(&path))?;
        out.push(path);
    }
    Ok(out)
}

/// Writes every artifact of a run into `dir` (created if missing).
pub fn write_run(
    dir: &Path,
    cfg: &RunConfig,
    runs: &[MethodRun],
) -> Result<RunArtifacts, OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut methods = Vec::new();
    for run in runs {
        let trace = if cfg.output.traces {
            let path = dir.join(format!("trace_{}.csv", run.label));
            write_trace(&path, run)?;
            Some(path)
        } else {
            None
        };
        let metrics = dir.join(format!("metrics_{}.json", run.label));
        let file = MetricsFile {
            label: &run.label,
            method: run.mprt.method.name(),
            summary: &run.summary,
            energy_residual: run.energy_residual,
        };
        let json = serde_json::to_string_pretty(&file).expect("metrics serialise");
        fs::write(&metrics, json + "\n").map_err(io_err(&metrics))?;
        methods.push(MethodArtifacts {
            label: run.label.clone(),
            trace,
            metrics,
        });
    }
    let summary = dir.join("summary.csv");
    write_summary(&summary, runs)?;
    let errors = dir.join("errors.csv");
    write_errors(&errors, runs)?;
    let config_echo = dir.join("resolved_config.toml");
    fs::write(&config_echo, cfg.to_toml()).map_err(io_err(&config_echo))?;
    let plots = if cfg.output.plots {
        write_plots(dir, runs)?
    } else {
        Vec::new()
    };
    Ok(RunArtifacts {
        methods,
        summary,
        errors,
        config_echo,
        plots,
    })
}
