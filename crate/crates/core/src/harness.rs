//! Experiment specs, parallel trial execution and CSV output.
//!
//! A spec is a TOML file with an `[experiment]` table and optional parameter
//! tables (`[system]`, `[sucre]`, `[scenario]`, `[erapid]`, `[crapid]`,
//! `[search]`). Each `(series, sweep value, trial)` triple is an independent
//! task with its own random stream; results are reduced in index order, so the
//! output does not depend on the number of workers.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::channel::SystemConfig;
use crate::crapid::{optimize_scheme, CrapidConfig, Scheme, SchemeGrid};
use crate::erapid::{default_activation_grid, default_pilot_grid, optimize_erapid_refined, ErapidConfig};
use crate::error::{ConfigError, HarnessError};
use crate::stream::{derive_stream, RandomStream};
use crate::sucre::{run_crowd_scenario, AccessMode, CrowdScenario, SucreConfig};
use crate::validate::run_suite;

pub const CSV_HEADER: [&str; 9] =
    ["experiment", "sweep_name", "sweep_value", "mode", "metric", "mean", "stderr", "trials", "seed"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SucreFig3,
    ErapidFig4,
    CrapidFig5,
    Validate,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] =
        [ExperimentKind::SucreFig3, ExperimentKind::ErapidFig4, ExperimentKind::CrapidFig5, ExperimentKind::Validate];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SucreFig3 => "sucre_fig3",
            ExperimentKind::ErapidFig4 => "erapid_fig4",
            ExperimentKind::CrapidFig5 => "crapid_fig5",
            ExperimentKind::Validate => "validate",
        }
    }

    /// Stream-derivation id.
    pub fn id(self) -> u32 {
        match self {
            ExperimentKind::SucreFig3 => 1,
            ExperimentKind::ErapidFig4 => 2,
            ExperimentKind::CrapidFig5 => 3,
            ExperimentKind::Validate => 4,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::SucreFig3 => "collision resolution vs. baseline over a crowd-size sweep",
            ExperimentKind::ErapidFig4 => "optimized pilot-hopping sum-rate bound",
            ExperimentKind::CrapidFig5 => "replica framing vs. ALOHA and scheduled MIMO throughput",
            ExperimentKind::Validate => "oracle and invariant self-test",
        }
    }

    /// Parameters a sweep or series may vary.
    pub fn sweepable(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::SucreFig3 => &[
                "num_devices",
                "activation_prob",
                "num_antennas",
                "num_pilots",
                "edge_snr_db",
                "retry_prob",
                "max_attempts",
            ],
            ExperimentKind::ErapidFig4 => {
                &["num_devices", "num_antennas", "slot_length", "snr_db", "gain_spread", "mean_gain"]
            }
            ExperimentKind::CrapidFig5 => &["num_devices", "num_antennas", "code_rate", "snr_db"],
            ExperimentKind::Validate => &["none"],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    #[serde(default = "default_sweep_name")]
    pub sweep_name: String,
    #[serde(default = "default_sweep_values")]
    pub sweep_values: Vec<f64>,
    /// Optional second parameter; each value becomes a separate `mode` tag.
    #[serde(default)]
    pub series_name: Option<String>,
    #[serde(default)]
    pub series_values: Vec<f64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_trials")]
    pub num_trials: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_sweep_name() -> String {
    "none".into()
}

fn default_sweep_values() -> Vec<f64> {
    vec![0.0]
}

fn default_trials() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("results.csv")
}

/// Search settings for the optimized experiments.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    /// Largest expected number of active devices tried by the pilot-hopping search.
    pub erapid_max_active: Option<usize>,
    pub erapid_stride: usize,
    pub crapid_grid: SchemeGrid,
    /// Frames per grid point of the replica-framing search.
    pub crapid_frames: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self { erapid_max_active: None, erapid_stride: 3, crapid_grid: SchemeGrid::default(), crapid_frames: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub sucre: SucreConfig,
    #[serde(default)]
    pub scenario: CrowdScenario,
    #[serde(default)]
    pub erapid: ErapidConfig,
    #[serde(default)]
    pub crapid: CrapidConfig,
    #[serde(default)]
    pub search: SearchSection,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::ParseSpec(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text =
            fs::read_to_string(path).map_err(|source| HarnessError::ReadSpec { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    /// Checks the sweep and every parameter set the sweep can produce.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let exp = &self.experiment;
        if exp.num_trials == 0 {
            return Err(ConfigError::invalid("num_trials", "must be at least 1"));
        }
        if exp.sweep_values.is_empty() {
            return Err(ConfigError::invalid("sweep_values", "must not be empty"));
        }
        if exp.series_name.is_some() && exp.series_values.is_empty() {
            return Err(ConfigError::invalid("series_values", "must not be empty when series_name is set"));
        }
        if exp.sweep_values.len() > u16::MAX as usize + 1 {
            return Err(ConfigError::invalid("sweep_values", "too many values"));
        }
        if exp.num_trials as u64 > u32::MAX as u64 {
            return Err(ConfigError::invalid("num_trials", "too many trials"));
        }
        let allowed = exp.kind.sweepable();
        let check_name = |field: &str, name: &str| {
            if name == "none" || allowed.contains(&name) {
                Ok(())
            } else {
                Err(ConfigError::invalid(field, format!("`{name}` cannot be swept; expected one of {allowed:?}")))
            }
        };
        check_name("sweep_name", &exp.sweep_name)?;
        if let Some(s) = &exp.series_name {
            check_name("series_name", s)?;
        }
        if exp.kind == ExperimentKind::CrapidFig5 {
            if self.search.crapid_frames == 0 {
                return Err(ConfigError::invalid("crapid_frames", "must be at least 1"));
            }
            if self.search.crapid_grid.pilots.is_empty() {
                return Err(ConfigError::invalid("crapid_grid.pilots", "must not be empty"));
            }
        }
        if self.search.erapid_stride == 0 {
            return Err(ConfigError::invalid("erapid_stride", "must be at least 1"));
        }
        for task in self.points()? {
            task.validate()?;
        }
        Ok(())
    }

    fn series(&self) -> Vec<Option<f64>> {
        match &self.experiment.series_name {
            Some(_) => self.experiment.series_values.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        }
    }

    /// Parameter sets in output order: series-major, then sweep.
    fn points(&self) -> Result<Vec<Point>, ConfigError> {
        let exp = &self.experiment;
        let mut out = Vec::new();
        for series in self.series() {
            for (sweep_index, &value) in exp.sweep_values.iter().enumerate() {
                let mut p = Point {
                    sweep_index,
                    sweep_value: value,
                    series,
                    system: self.system.clone(),
                    sucre: self.sucre.clone(),
                    scenario: self.scenario.clone(),
                    erapid: self.erapid.clone(),
                    crapid: self.crapid.clone(),
                };
                if let (Some(name), Some(v)) = (&exp.series_name, series) {
                    p.apply(exp.kind, name, "series_values", v)?;
                }
                p.apply(exp.kind, &exp.sweep_name, "sweep_values", value)?;
                out.push(p);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
struct Point {
    sweep_index: usize,
    sweep_value: f64,
    series: Option<f64>,
    system: SystemConfig,
    sucre: SucreConfig,
    scenario: CrowdScenario,
    erapid: ErapidConfig,
    crapid: CrapidConfig,
}

fn as_count(field: &str, v: f64) -> Result<usize, ConfigError> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(ConfigError::invalid(field, format!("{v} is not a non-negative integer")))
    }
}

impl Point {
    fn apply(&mut self, kind: ExperimentKind, name: &str, field: &str, v: f64) -> Result<(), ConfigError> {
        match (kind, name) {
            (_, "none") => {}
            (ExperimentKind::SucreFig3, "num_devices") => self.scenario.num_devices = as_count(field, v)?,
            (ExperimentKind::SucreFig3, "activation_prob") => self.scenario.activation_prob = v,
            (ExperimentKind::SucreFig3, "num_antennas") => self.system.num_antennas = as_count(field, v)?,
            (ExperimentKind::SucreFig3, "num_pilots") => self.system.num_pilots = as_count(field, v)?,
            (ExperimentKind::SucreFig3, "edge_snr_db") => self.system.edge_snr_db = v,
            (ExperimentKind::SucreFig3, "retry_prob") => self.sucre.retry_prob = v,
            (ExperimentKind::SucreFig3, "max_attempts") => {
                self.sucre.max_attempts = u32::try_from(as_count(field, v)?).unwrap_or(u32::MAX)
            }
            (ExperimentKind::ErapidFig4, "num_devices") => self.erapid.num_devices = as_count(field, v)?,
            (ExperimentKind::ErapidFig4, "num_antennas") => self.erapid.num_antennas = as_count(field, v)?,
            (ExperimentKind::ErapidFig4, "slot_length") => self.erapid.slot_length = as_count(field, v)?,
            (ExperimentKind::ErapidFig4, "snr_db") => self.erapid.snr_db = v,
            (ExperimentKind::ErapidFig4, "gain_spread") => self.erapid.gain_spread = v,
            (ExperimentKind::ErapidFig4, "mean_gain") => self.erapid.mean_gain = v,
            (ExperimentKind::CrapidFig5, "num_devices") => self.crapid.num_devices = as_count(field, v)?,
            (ExperimentKind::CrapidFig5, "num_antennas") => self.crapid.num_antennas = as_count(field, v)?,
            (ExperimentKind::CrapidFig5, "code_rate") => self.crapid.code_rate = v,
            (ExperimentKind::CrapidFig5, "snr_db") => self.crapid.snr_db = v,
            _ => return Err(ConfigError::invalid(field, format!("`{name}` cannot be swept for {kind}"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.system.validate()?;
        self.sucre.validate()?;
        if !(0.0..=1.0).contains(&self.scenario.activation_prob) {
            return Err(ConfigError::invalid("activation_prob", "must lie in [0, 1]"));
        }
        if self.scenario.num_slots == 0 {
            return Err(ConfigError::invalid("num_slots", "must be at least 1"));
        }
        self.erapid.validate()?;
        self.crapid.validate()
    }

    fn mode_suffix(&self, series_name: &Option<String>) -> String {
        match (series_name, self.series) {
            (Some(n), Some(v)) => format!("{n}={}", fmt_num(v)),
            _ => String::new(),
        }
    }
}

/// One output line.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub sweep_name: String,
    pub sweep_value: f64,
    pub mode: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seed: u64,
}

impl ResultRow {
    fn fields(&self) -> [String; 9] {
        [
            self.experiment.clone(),
            self.sweep_name.clone(),
            fmt_num(self.sweep_value),
            self.mode.clone(),
            self.metric.clone(),
            fmt_num(self.mean),
            fmt_num(self.stderr),
            self.trials.to_string(),
            self.seed.to_string(),
        ]
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Mean and standard error of the finite values, in the given order.
pub fn mean_stderr(values: &[f64]) -> (f64, f64, usize) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let n = finite.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = finite.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    (mean, stderr, n)
}

/// Named metrics of one trial under one mode.
type TrialMetrics = Vec<(String, Vec<(&'static str, f64)>)>;

fn run_trial(kind: ExperimentKind, spec: &ExperimentSpec, point: &Point, rng: RandomStream) -> TrialMetrics {
    match kind {
        ExperimentKind::SucreFig3 => [AccessMode::Sucre, AccessMode::Baseline]
            .into_iter()
            .map(|mode| {
                let stats = run_crowd_scenario(&point.scenario, &point.system, &point.sucre, mode, &mut rng.clone());
                (
                    mode.name().to_string(),
                    vec![
                        ("mean_attempts", stats.mean_attempts),
                        ("admission_fraction", stats.admission_fraction),
                        ("resolution_fraction", stats.resolution_fraction),
                    ],
                )
            })
            .collect(),
        ExperimentKind::ErapidFig4 => {
            let cfg = &point.erapid;
            let max_active = spec.search.erapid_max_active.unwrap_or(cfg.num_devices);
            let best = optimize_erapid_refined(
                cfg,
                &default_pilot_grid(cfg.slot_length),
                &default_activation_grid(cfg.num_devices, max_active),
                spec.search.erapid_stride,
                &rng,
            );
            vec![(
                "erapid".into(),
                vec![
                    ("sum_rate", best.bound.sum_rate),
                    ("mean_active", best.bound.mean_active),
                    ("per_active_rate", best.bound.per_active_rate),
                    ("pilot_fraction", best.pilot_fraction(cfg.slot_length)),
                ],
            )]
        }
        ExperimentKind::CrapidFig5 => {
            let cfg = &point.crapid;
            let best: Vec<_> = Scheme::ALL
                .iter()
                .map(|&s| optimize_scheme(s, cfg, &spec.search.crapid_grid, spec.search.crapid_frames, &rng))
                .collect();
            let smm = best[2].throughput;
            best.into_iter()
                .map(|b| {
                    let mut metrics = vec![
                        ("throughput", b.throughput),
                        ("ratio_to_smm", if smm > 0.0 { b.throughput / smm } else { f64::NAN }),
                        ("num_pilots", b.num_pilots as f64),
                    ];
                    if b.scheme != Scheme::Smm {
                        metrics.push(("frame_length", b.frame_length as f64));
                        metrics.push(("activation_prob", b.activation_prob));
                    }
                    (b.scheme.name().to_string(), metrics)
                })
                .collect()
        }
        ExperimentKind::Validate => {
            let outcomes = run_suite(&mut rng.clone());
            vec![("validate".into(), outcomes.iter().map(|o| (o.name, if o.passed { 1.0 } else { 0.0 })).collect())]
        }
    }
}

/// Runs every trial and aggregates in index order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>, HarnessError> {
    spec.validate()?;
    let exp = &spec.experiment;
    let points = spec.points()?;
    let tasks: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|p| (0..exp.num_trials).map(move |t| (p, t))).collect();
    let trials: Vec<TrialMetrics> = tasks
        .par_iter()
        .map(|&(p, t)| {
            let point = &points[p];
            let rng = derive_stream(exp.master_seed, exp.kind.id(), point.sweep_index as u32, t as u64);
            run_trial(exp.kind, spec, point, rng)
        })
        .collect();

    let mut rows = Vec::new();
    for (p, point) in points.iter().enumerate() {
        let per_point = &trials[p * exp.num_trials..(p + 1) * exp.num_trials];
        let suffix = point.mode_suffix(&exp.series_name);
        for (m, (mode, metrics)) in per_point[0].iter().enumerate() {
            for (k, (metric, _)) in metrics.iter().enumerate() {
                let values: Vec<f64> = per_point.iter().map(|t| t[m].1[k].1).collect();
                let (mean, stderr, n) = mean_stderr(&values);
                rows.push(ResultRow {
                    experiment: exp.kind.name().into(),
                    sweep_name: exp.sweep_name.clone(),
                    sweep_value: point.sweep_value,
                    mode: if suffix.is_empty() { mode.clone() } else { format!("{mode}/{suffix}") },
                    metric: (*metric).into(),
                    mean,
                    stderr,
                    trials: n,
                    seed: exp.master_seed,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<(), HarnessError> {
    let file = fs::File::create(path).map_err(|source| HarnessError::Output { path: path.to_path_buf(), source })?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(|source| HarnessError::Output { path: path.to_path_buf(), source })?;
    Ok(())
}

/// Runs on a pool of `workers` threads and writes the CSV.
pub fn run_to_csv(spec: &ExperimentSpec, workers: usize, out: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let rows = pool.install(|| run_experiment(spec))?;
    write_csv(&rows, out)?;
    Ok(rows)
}
