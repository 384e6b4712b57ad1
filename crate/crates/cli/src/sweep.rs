//! Parameter sweeps over controller fields.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{invalid, set_mprt_field, ConfigError, RunConfig};
use crate::output::{write_run, OutputError, RunArtifacts};
use crate::sim::{run_all, MethodRun, SimError};

/// One swept field and its values, parsed from `field=v1,v2,...`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub field: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for GridAxis {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (field, values) = s
            .split_once('=')
            .ok_or_else(|| invalid("grid", format!("`{s}` is not of the form field=v1,v2")))?;
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(invalid("grid", format!("`{field}` has no values")));
        }
        Ok(Self {
            field: field.trim().to_string(),
            values,
        })
    }
}

/// Cartesian product of the axes, first axis varying slowest.
pub fn grid_points(axes: &[GridAxis]) -> Vec<Vec<(String, String)>> {
    let mut points = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.field.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

/// The config of grid point `index`: every method gets the point's values
/// and the seed is offset by the index.
pub fn point_config(
    base: &RunConfig,
    point: &[(String, String)],
    index: usize,
) -> Result<RunConfig, ConfigError> {
    let mut cfg = base.clone();
    for m in &mut cfg.methods {
        for (field, value) in point {
            if field == "method" {
                return Err(invalid(field, "the method itself cannot be swept"));
            }
            m.mprt = set_mprt_field(&m.mprt, field, value)?;
        }
    }
    cfg.scenario.seed = base.scenario.seed.wrapping_add(index as u64);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug)]
pub struct SweepPoint {
    pub index: usize,
    pub seed: u64,
    pub values: Vec<(String, String)>,
    pub runs: Vec<MethodRun>,
    pub artifacts: RunArtifacts,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("grid point {index}: {source}")]
    Sim {
        index: usize,
        #[source]
        source: SimError,
    },
    #[error(transparent)]
    Output(#[from] OutputError),
}

/// Runs every grid point (in parallel), writing each point's artifacts to
/// `out/point_<index>` and the aggregate table to `out/sweep.csv`.
pub fn sweep(
    base: &RunConfig,
    axes: &[GridAxis],
    out: &Path,
) -> Result<Vec<SweepPoint>, SweepError> {
    let points = grid_points(axes);
    let configs = points
        .iter()
        .enumerate()
        .map(|(k, p)| point_config(base, p, k))
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<Result<SweepPoint, SweepError>> = configs
        .par_iter()
        .zip(points.par_iter())
        .enumerate()
        .map(|(index, (cfg, values))| {
            let (_, runs) = run_all(cfg).map_err(|source| SweepError::Sim { index, source })?;
            let artifacts = write_run(&out.join(format!("point_{index}")), cfg, &runs)?;
            Ok(SweepPoint {
                index,
                seed: cfg.scenario.seed,
                values: values.clone(),
                runs,
                artifacts,
            })
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    write_sweep_csv(&out.join("sweep.csv"), axes, &results)?;
    Ok(results)
}

fn write_sweep_csv(
    path: &Path,
    axes: &[GridAxis],
    points: &[SweepPoint],
) -> Result<(), OutputError> {
    let err = |source| OutputError::Csv {
        path: PathBuf::from(path),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["point".to_string(), "seed".into()];
    header.extend(axes.iter().map(|a| a.field.clone()));
    header.extend(
        [
            "label",
            "method",
            "e_sum",
            "max_overshoot_w",
            "overshoot_duration_s",
            "osc_total_v",
            "energy_residual",
        ]
        .map(String::from),
    );
    w.write_record(&header).map_err(err)?;
    for p in points {
        for run in &p.runs {
            let mut row = vec![p.index.to_string(), p.seed.to_string()];
            row.extend(p.values.iter().map(|(_, v)| v.clone()));
            row.extend([
                run.label.clone(),
                run.mprt.method.name().to_string(),
                run.summary.e_sum.to_string(),
                run.summary.max_overshoot.to_string(),
                run.summary.overshoot_duration.to_string(),
                run.summary.total_oscillation().to_string(),
                run.energy_residual.to_string(),
            ]);
            w.write_record(&row).map_err(err)?;
        }
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}
