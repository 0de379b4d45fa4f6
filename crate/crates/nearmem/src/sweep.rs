//! Cartesian parameter sweeps.
//!
//! A sweep file holds a base config, a base workload, the modes to run and a
//! grid of field names to value lists. Each grid key names either a config
//! field or a workload field.
//!
//! ```json
//! {
//!   "config": {"allocation_policy": "partitioned"},
//!   "workload": {"kind": "upc", "dataset": 2000, "requests": 500},
//!   "modes": ["chase", "host"],
//!   "grid": {"nodes": [1, 2, 4], "seed": [1, 2]}
//! }
//! ```

use std::collections::BTreeMap;

use nearmem_core::workload::{run_workload, Mode, RunMetrics, WorkloadError, WorkloadSpec};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::config::{ConfigError, ConfigFile};

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("grid key `{0}` is neither a config nor a workload field")]
    UnknownKey(String),
    #[error("grid key `{0}` has no values")]
    EmptyAxis(String),
    #[error("sweep point {index}: {source}")]
    Point { index: usize, source: serde_json::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("building the thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    #[serde(default)]
    pub config: Map<String, Value>,
    #[serde(default)]
    pub workload: Map<String, Value>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<Value>>,
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::Chase]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub config: ConfigFile,
    pub workload: WorkloadSpec,
    pub mode: Mode,
}

fn field_names<T: serde::Serialize>(value: &T) -> Vec<String> {
    match serde_json::to_value(value) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

impl SweepFile {
    /// Every grid combination times every mode, grid keys varying in
    /// lexicographic order with the last key fastest.
    pub fn points(&self) -> Result<Vec<SweepPoint>, SweepError> {
        let config_keys = field_names(&ConfigFile::default());
        let workload_keys = field_names(&WorkloadSpec::default());
        for (key, values) in &self.grid {
            if !config_keys.contains(key) && !workload_keys.contains(key) {
                return Err(SweepError::UnknownKey(key.clone()));
            }
            if values.is_empty() {
                return Err(SweepError::EmptyAxis(key.clone()));
            }
        }
        let axes: Vec<(&String, &Vec<Value>)> = self.grid.iter().collect();
        let combos: usize = axes.iter().map(|(_, v)| v.len()).product();
        let mut points = Vec::with_capacity(combos * self.modes.len());
        for i in 0..combos {
            let (mut config, mut workload) = (self.config.clone(), self.workload.clone());
            let mut rest = i;
            for (key, values) in axes.iter().rev() {
                let v = values[rest % values.len()].clone();
                rest /= values.len();
                let target = if config_keys.contains(key) { &mut config } else { &mut workload };
                target.insert((*key).clone(), v);
            }
            let index = points.len();
            let config: ConfigFile =
                serde_json::from_value(Value::Object(config)).map_err(|source| SweepError::Point { index, source })?;
            config.to_rack()?;
            let workload: WorkloadSpec = serde_json::from_value(Value::Object(workload))
                .map_err(|source| SweepError::Point { index, source })?;
            workload.validate()?;
            for &mode in &self.modes {
                points.push(SweepPoint { config: config.clone(), workload: workload.clone(), mode });
            }
        }
        Ok(points)
    }
}

/// Runs each point as its own single-threaded simulation, spread over
/// `threads` workers (all cores when `None`). Rows come back in point order.
pub fn run_sweep(points: &[SweepPoint], threads: Option<usize>) -> Result<Vec<RunMetrics>, SweepError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let config = p.config.to_rack()?;
                Ok(run_workload(&config, &p.workload, p.mode)?.metrics)
            })
            .collect()
    })
}
