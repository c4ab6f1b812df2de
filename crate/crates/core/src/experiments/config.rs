//! Flat TOML experiment configuration.
//!
//! Every key except `experiment` has a default taken from the reference
//! scenario. Powers are given in dBm and converted to watts once, here.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::channel::{dbm_to_watts, ChannelParams};
use crate::error::{Error, Result};
use crate::geometry::{check_angle, ArrayConfig};
use crate::optimizer::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentKind {
    RateSweep,
    KldSweep,
    Multislot,
    Association,
    Mse,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::RateSweep,
        ExperimentKind::KldSweep,
        ExperimentKind::Multislot,
        ExperimentKind::Association,
        ExperimentKind::Mse,
    ];

    /// Name used in config files.
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::RateSweep => "rate_sweep",
            ExperimentKind::KldSweep => "kld_sweep",
            ExperimentKind::Multislot => "multislot",
            ExperimentKind::Association => "association",
            ExperimentKind::Mse => "mse",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> std::result::Result<Self, ConfigError> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ConfigError::Invalid {
                key: "experiment".into(),
                reason: format!(
                    "unknown experiment `{s}`, expected one of {}",
                    ExperimentKind::ALL.map(|k| k.as_str()).join(", ")
                ),
            })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("missing required config key `{key}`")]
    MissingKey { key: String },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: String,
    seed: Option<u64>,
    n_tx: Option<usize>,
    n_rx: Option<usize>,
    n_user: Option<usize>,
    target_mean: Option<f64>,
    target_variance: Option<f64>,
    user_mean: Option<f64>,
    user_variance: Option<f64>,
    user_points: Option<usize>,
    power_dbm: Option<f64>,
    noise_dbm: Option<f64>,
    reflection_variance: Option<f64>,
    symbols: Option<usize>,
    ref_gain_db: Option<f64>,
    user_distance_m: Option<f64>,
    pathloss_exp: Option<f64>,
    n_scatter: Option<usize>,
    los_nlos_ratio_db: Option<f64>,
    quadrature_nodes: Option<usize>,
    rate_target: Option<f64>,
    rate_targets: Option<Vec<f64>>,
    pilot_symbols: Option<usize>,
    benchmark_draws: Option<usize>,
    noiseless_estimates: Option<bool>,
    target_means: Option<Vec<f64>>,
    with_mse: Option<bool>,
    slots: Option<Vec<usize>>,
    cells: Option<usize>,
    scenarios: Option<usize>,
    power_sweep_dbm: Option<Vec<f64>>,
    trials: Option<usize>,
    grid_points: Option<usize>,
    max_inner_iterations: Option<usize>,
}

/// Keys accepted in a config file.
pub const KNOWN_KEYS: &[&str] = &[
    "experiment",
    "seed",
    "n_tx",
    "n_rx",
    "n_user",
    "target_mean",
    "target_variance",
    "user_mean",
    "user_variance",
    "user_points",
    "power_dbm",
    "noise_dbm",
    "reflection_variance",
    "symbols",
    "ref_gain_db",
    "user_distance_m",
    "pathloss_exp",
    "n_scatter",
    "los_nlos_ratio_db",
    "quadrature_nodes",
    "rate_target",
    "rate_targets",
    "pilot_symbols",
    "benchmark_draws",
    "noiseless_estimates",
    "target_means",
    "with_mse",
    "slots",
    "cells",
    "scenarios",
    "power_sweep_dbm",
    "trials",
    "grid_points",
    "max_inner_iterations",
];

/// User locations at desk scale and with `--paper-scale`.
pub const DESK_USER_POINTS: usize = 20;
pub const FULL_USER_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub array: ArrayConfig,
    pub target_mean: f64,
    pub target_variance: f64,
    pub user_mean: f64,
    pub user_variance: f64,
    pub user_points: usize,
    /// Watts.
    pub power_budget: f64,
    /// Watts; shared by the radar receiver and the user.
    pub sensing_noise: f64,
    pub reflection_variance: f64,
    pub symbols: usize,
    /// Includes the user's noise power in watts.
    pub channel: ChannelParams,
    pub quadrature_nodes: usize,
    pub rate_target: f64,
    pub rate_targets: Vec<f64>,
    pub pilot_symbols: usize,
    pub benchmark_draws: usize,
    pub noiseless_estimates: bool,
    pub target_means: Vec<f64>,
    pub with_mse: bool,
    pub slots: Vec<usize>,
    pub cells: usize,
    pub scenarios: usize,
    pub power_sweep_dbm: Vec<f64>,
    pub trials: usize,
    pub grid_points: usize,
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    /// Reference scenario for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let noise = dbm_to_watts(-90.0);
        ExperimentConfig {
            kind,
            seed: 1,
            array: ArrayConfig::default(),
            target_mean: -0.6,
            target_variance: 1e-3,
            user_mean: -0.3,
            user_variance: 1e-3,
            user_points: DESK_USER_POINTS,
            power_budget: dbm_to_watts(if kind == ExperimentKind::KldSweep { 40.0 } else { 30.0 }),
            sensing_noise: noise,
            reflection_variance: 2e-14,
            symbols: 25,
            channel: ChannelParams {
                noise_power: noise,
                ..ChannelParams::default()
            },
            quadrature_nodes: 200,
            rate_target: 12.0,
            rate_targets: (1..=7).map(|i| 2.0 * i as f64).collect(),
            pilot_symbols: 10,
            benchmark_draws: 8,
            noiseless_estimates: true,
            target_means: vec![-0.3, -0.4, -0.5, -0.6, -0.7],
            with_mse: true,
            slots: vec![1, 2, 4],
            cells: 8,
            scenarios: 10,
            power_sweep_dbm: vec![20.0, 25.0, 30.0, 35.0, 40.0],
            trials: 200,
            grid_points: 4001,
            tolerances: Tolerances::default(),
        }
    }

    /// Switches to the full user-location grid.
    pub fn full_scale(mut self) -> Self {
        self.user_points = FULL_USER_POINTS;
        self
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        self.array
            .validate()
            .map_err(|e| invalid("n_tx/n_rx/n_user", e.to_string()))?;
        for (key, v) in [("target_mean", self.target_mean), ("user_mean", self.user_mean)] {
            check_angle(v).map_err(|e| invalid(key, e.to_string()))?;
        }
        for &m in &self.target_means {
            check_angle(m).map_err(|e| invalid("target_means", e.to_string()))?;
        }
        let positive = [
            ("target_variance", self.target_variance),
            ("user_variance", self.user_variance),
            ("reflection_variance", self.reflection_variance),
            ("user_distance_m", self.channel.user_distance_m),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(key, format!("must be positive, got {v}")));
            }
        }
        let counts = [
            ("user_points", self.user_points, 1),
            ("symbols", self.symbols, 1),
            ("quadrature_nodes", self.quadrature_nodes, 16),
            ("benchmark_draws", self.benchmark_draws, 1),
            ("cells", self.cells, 2),
            ("scenarios", self.scenarios, 1),
            ("trials", self.trials, 50),
            ("grid_points", self.grid_points, 3),
        ];
        for (key, v, min) in counts {
            if v < min {
                return Err(invalid(key, format!("must be at least {min}, got {v}")));
            }
        }
        if self.pilot_symbols == 0 || self.pilot_symbols >= self.symbols {
            return Err(invalid("pilot_symbols", format!("must lie in 1..{}", self.symbols)));
        }
        if !(self.rate_target >= 0.0) || self.rate_targets.iter().any(|r| !(*r >= 0.0)) {
            return Err(invalid("rate_targets", "rate targets must be nonnegative"));
        }
        if self.slots.contains(&0) {
            return Err(invalid("slots", "slot counts must be at least 1"));
        }
        let sweep_empty = match self.kind {
            ExperimentKind::RateSweep => self.rate_targets.is_empty().then_some("rate_targets"),
            ExperimentKind::KldSweep => self.target_means.is_empty().then_some("target_means"),
            ExperimentKind::Multislot => self.slots.is_empty().then_some("slots"),
            ExperimentKind::Mse => self.power_sweep_dbm.is_empty().then_some("power_sweep_dbm"),
            ExperimentKind::Association => None,
        };
        if let Some(key) = sweep_empty {
            return Err(invalid(key, "sweep is empty"));
        }
        Ok(())
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn parse_error(text: &str, err: &toml::de::Error) -> ConfigError {
    let (line, column) = err.span().map_or((0, 0), |s| line_col(text, s.start));
    ConfigError::Parse {
        line,
        column,
        message: err.message().to_string(),
    }
}

/// Parses config text; `experiment` must name a known experiment.
pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, ConfigError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
    if let Some(key) = table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(ConfigError::UnknownKey { key: key.clone() });
    }
    if !table.contains_key("experiment") {
        return Err(ConfigError::MissingKey {
            key: "experiment".into(),
        });
    }
    let raw: RawConfig = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
    let kind: ExperimentKind = raw.experiment.parse()?;
    let mut cfg = ExperimentConfig::defaults(kind);
    macro_rules! take {
        ($($field:ident),*) => { $( if let Some(v) = raw.$field { cfg.$field = v; } )* };
    }
    take!(
        seed,
        target_mean,
        target_variance,
        user_mean,
        user_variance,
        user_points,
        reflection_variance,
        symbols,
        quadrature_nodes,
        rate_target,
        rate_targets,
        pilot_symbols,
        benchmark_draws,
        noiseless_estimates,
        target_means,
        with_mse,
        slots,
        cells,
        scenarios,
        power_sweep_dbm,
        trials,
        grid_points
    );
    cfg.array = ArrayConfig {
        n_tx: raw.n_tx.unwrap_or(cfg.array.n_tx),
        n_rx: raw.n_rx.unwrap_or(cfg.array.n_rx),
        n_user: raw.n_user.unwrap_or(cfg.array.n_user),
    };
    if let Some(p) = raw.power_dbm {
        cfg.power_budget = dbm_to_watts(p);
    }
    if let Some(n) = raw.noise_dbm {
        cfg.sensing_noise = dbm_to_watts(n);
        cfg.channel.noise_power = cfg.sensing_noise;
    }
    let ch = &mut cfg.channel;
    ch.ref_gain_db = raw.ref_gain_db.unwrap_or(ch.ref_gain_db);
    ch.user_distance_m = raw.user_distance_m.unwrap_or(ch.user_distance_m);
    ch.pathloss_exp = raw.pathloss_exp.unwrap_or(ch.pathloss_exp);
    ch.n_scatter = raw.n_scatter.unwrap_or(ch.n_scatter);
    ch.los_nlos_ratio_db = raw.los_nlos_ratio_db.unwrap_or(ch.los_nlos_ratio_db);
    if let Some(n) = raw.max_inner_iterations {
        cfg.tolerances.max_inner_iterations = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_config(&text)?)
}
