//! Hyperparameter sweeps: one full pipeline run per grid point over
//! (alpha = beta) and the entropy-threshold factor, with a CSV summary.

use std::path::PathBuf;

use crate::config::RunConfig;
use crate::error::Result;
use crate::pipeline::{run_pipeline, write_incomplete};

/// Outcome of one grid point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub alpha_beta: f64,
    pub u_factor: f64,
    pub status: String,
    pub map_self_new: Option<f64>,
    pub map_cross_new_old: Option<f64>,
    pub map_self_old: Option<f64>,
    pub metrics_path: Option<PathBuf>,
}

/// Run the grid; failed points are recorded and the sweep continues.
pub fn run_sweep(
    base: &RunConfig,
    alpha_beta_values: &[f64],
    u_factor_values: &[f64],
) -> Result<(Vec<SweepRow>, PathBuf)> {
    let mut rows = Vec::new();
    for &ab in alpha_beta_values {
        for &u in u_factor_values {
            let mut cfg = base.clone();
            cfg.run_name = format!("{}_ab{}_u{}", base.run_name, ab, u);
            cfg.train_new.alpha = ab;
            cfg.train_new.beta = ab;
            cfg.train_new.u_factor = u;
            match run_pipeline(&cfg) {
                Ok(artifacts) => rows.push(SweepRow {
                    alpha_beta: ab,
                    u_factor: u,
                    status: "complete".to_string(),
                    map_self_new: Some(artifacts.metrics.self_test_new.map),
                    map_cross_new_old: Some(artifacts.metrics.cross_test_new_old.map),
                    map_self_old: Some(artifacts.metrics.self_test_old.map),
                    metrics_path: Some(artifacts.metrics_path),
                }),
                Err(err) => {
                    write_incomplete(&cfg, &err);
                    rows.push(SweepRow {
                        alpha_beta: ab,
                        u_factor: u,
                        status: format!("error: {err}"),
                        map_self_new: None,
                        map_cross_new_old: None,
                        map_self_old: None,
                        metrics_path: None,
                    });
                }
            }
        }
    }

    let summary_path = base.output_dir.join(format!("{}_sweep_summary.csv", base.run_name));
    let mut csv = String::from(
        "alpha,beta,u_factor,status,map_self_new,map_cross_new_old,map_self_old,metrics_path\n",
    );
    for row in &rows {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.alpha_beta,
            row.alpha_beta,
            row.u_factor,
            row.status.replace(',', ";"),
            fmt(row.map_self_new),
            fmt(row.map_cross_new_old),
            fmt(row.map_self_old),
            row.metrics_path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        ));
    }
    std::fs::create_dir_all(&base.output_dir)?;
    std::fs::write(&summary_path, csv)?;
    Ok((rows, summary_path))
}
