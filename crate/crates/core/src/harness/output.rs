//! CSV, manifest and plot-description output.
//!
//! All floats are printed with 9 significant digits through [`fmt_sig9`], so
//! a byte comparison of two CSVs is a meaningful reproducibility check.

use super::{ConvergenceRow, ExperimentConfig, ResultRow, RunStats, ScalingRow};
use crate::Result;
use serde::Serialize;
use std::path::Path;

/// Format with 9 significant digits: plain decimal for moderate exponents,
/// scientific otherwise. `%.9g`-style but with trailing zeros kept.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0.00000000".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.8e}");
    let epos = sci.find('e').expect("scientific format");
    let exp: i32 = sci[epos + 1..].parse().expect("exponent");
    if (-4..9).contains(&exp) {
        format!("{:.*}", (8 - exp).max(0) as usize, x)
    } else {
        sci
    }
}

/// Serialize result rows; the header matches the row field names exactly.
pub fn write_rows_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(
        "method,R,N_used,rho_db,rho_pl_db,mean_sum_capacity,mean_user_capacity,\
         outage5_user_capacity,cutset,full_mi,trials,seed\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            fmt_sig9(r.r),
            r.n_used,
            fmt_sig9(r.rho_db),
            r.rho_pl_db.map(fmt_sig9).unwrap_or_default(),
            fmt_sig9(r.mean_sum_capacity),
            fmt_sig9(r.mean_user_capacity),
            fmt_sig9(r.outage5_user_capacity),
            fmt_sig9(r.cutset),
            fmt_sig9(r.full_mi),
            r.trials,
            r.seed
        ));
    }
    out
}

pub fn write_convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("method,N,sweep,mean_normalized_mi,trials,seed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method,
            r.n,
            r.sweep,
            fmt_sig9(r.mean_normalized_mi),
            r.trials,
            r.seed
        ));
    }
    out
}

pub fn write_scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out =
        String::from("method,N,rho_db,mean_joint_mi,mean_full_mi,mean_fraction,trials,seed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method,
            r.n,
            fmt_sig9(r.rho_db),
            fmt_sig9(r.mean_joint_mi),
            fmt_sig9(r.mean_full_mi),
            fmt_sig9(r.mean_fraction),
            r.trials,
            r.seed
        ));
    }
    out
}

/// One JSON-lines manifest record.
#[derive(Debug, Serialize)]
pub struct ManifestRecord<'a> {
    pub figure: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub config: &'a ExperimentConfig,
    pub stats: &'a RunStats,
}

/// Declarative plot description: axes plus one series per (method, N) pair.
#[derive(Debug, Serialize)]
struct PlotSpec<'a> {
    figure: &'a str,
    title: &'a str,
    x: PlotAxis<'a>,
    y: PlotAxis<'a>,
    series: Vec<PlotSeries>,
}

#[derive(Debug, Serialize)]
struct PlotAxis<'a> {
    column: &'a str,
    label: &'a str,
}

#[derive(Debug, Serialize)]
struct PlotSeries {
    label: String,
    filter: serde_json::Value,
    y_column: String,
}

/// Emitted files of one experiment run.
#[derive(Debug)]
pub struct FigureFiles {
    pub csv: std::path::PathBuf,
    pub plot: std::path::PathBuf,
    pub manifest: std::path::PathBuf,
}

fn series_for_rows(rows: &[ResultRow], y_column: &str) -> Vec<PlotSeries> {
    let mut keys: Vec<(String, usize, Option<String>)> = Vec::new();
    for r in rows {
        let key = (
            r.method.clone(),
            r.n_used,
            r.rho_pl_db.map(fmt_sig9),
        );
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, n, pl)| {
            let mut filter = serde_json::json!({"method": method, "N_used": n});
            let mut label = format!("{method} N={n}");
            if let Some(pl) = pl {
                filter["rho_pl_db"] = serde_json::Value::String(pl.clone());
                label.push_str(&format!(" pilot={pl}dB"));
            }
            PlotSeries {
                label,
                filter,
                y_column: y_column.to_string(),
            }
        })
        .collect()
}

/// Write `<figure>.csv`, `<figure>.plot.json` and `<figure>.manifest.jsonl`
/// into `dir`, overwriting previous runs.
pub fn write_figure_outputs(
    dir: &Path,
    figure: &str,
    csv: &str,
    plot_json: &str,
    cfg: &ExperimentConfig,
    stats: &RunStats,
    version: &str,
) -> Result<FigureFiles> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{figure}.csv"));
    std::fs::write(&csv_path, csv)?;
    let plot_path = dir.join(format!("{figure}.plot.json"));
    std::fs::write(&plot_path, plot_json)?;
    let manifest_path = dir.join(format!("{figure}.manifest.jsonl"));
    let record = ManifestRecord {
        figure,
        version,
        seed: cfg.scenario.seed,
        config: cfg,
        stats,
    };
    let line = serde_json::to_string(&record)
        .map_err(|e| crate::Error::Config(format!("manifest serialization: {e}")))?;
    std::fs::write(&manifest_path, format!("{line}\n"))?;
    Ok(FigureFiles {
        csv: csv_path,
        plot: plot_path,
        manifest: manifest_path,
    })
}

/// Plot description for a ResultRow figure.
pub fn plot_spec_rows(figure: &str, title: &str, rows: &[ResultRow], y_column: &str) -> String {
    let spec = PlotSpec {
        figure,
        title,
        x: PlotAxis {
            column: "R",
            label: "Fronthaul rate per receiver (bpcu)",
        },
        y: PlotAxis {
            column: y_column,
            label: "Capacity (bpcu)",
        },
        series: series_for_rows(rows, y_column),
    };
    serde_json::to_string_pretty(&spec).expect("static schema")
}

/// Plot description for the convergence figure.
pub fn plot_spec_convergence(rows: &[ConvergenceRow]) -> String {
    let mut dims: Vec<usize> = rows.iter().map(|r| r.n).collect();
    dims.sort_unstable();
    dims.dedup();
    let spec = PlotSpec {
        figure: "fig3",
        title: "BCA convergence",
        x: PlotAxis {
            column: "sweep",
            label: "Sweep index",
        },
        y: PlotAxis {
            column: "mean_normalized_mi",
            label: "Joint MI / converged joint MI",
        },
        series: dims
            .into_iter()
            .map(|n| PlotSeries {
                label: format!("tcklt N={n}"),
                filter: serde_json::json!({"method": "tcklt", "N": n}),
                y_column: "mean_normalized_mi".into(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&spec).expect("static schema")
}

/// Plot description for the SNR-scaling figure.
pub fn plot_spec_scaling(rows: &[ScalingRow]) -> String {
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.n);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let spec = PlotSpec {
        figure: "fig4",
        title: "Joint MI scaling with SNR",
        x: PlotAxis {
            column: "rho_db",
            label: "Transmit SNR (dB)",
        },
        y: PlotAxis {
            column: "mean_joint_mi",
            label: "Joint mutual information (bpcu)",
        },
        series: keys
            .into_iter()
            .map(|(method, n)| PlotSeries {
                label: format!("{method} N={n}"),
                filter: serde_json::json!({"method": method, "N": n}),
                y_column: "mean_joint_mi".into(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&spec).expect("static schema")
}
