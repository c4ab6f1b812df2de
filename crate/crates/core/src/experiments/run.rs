//! Sweep drivers producing one row per point.

use std::time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind};
use crate::association::{
    assign_min_cost, build_cost_matrix, evaluate_network, random_assignment, CellTemplate, NetworkScenario,
};
use crate::benchmarks::{run_schemes, BenchmarkSettings, PilotPlan};
use crate::channel::{dbm_to_watts, generate_ensemble};
use crate::error::{Error, Result};
use crate::estimator::{monte_carlo_mse, MonteCarloSettings};
use crate::optimizer::{solve_p1, solve_p2, ProblemSpec, SolveReport};
use crate::priors::{
    default_user_support, discretize_user_pmf, kld_gaussian, quadrature_grid, AngularPrior, ReflectionPrior,
};
use crate::sensing::build_kernel;

#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Ok,
    Infeasible,
    NonConvergence,
    Failed(String),
}

impl RowStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::Infeasible => "infeasible",
            RowStatus::NonConvergence => "nonconvergence",
            RowStatus::Failed(_) => "error",
        }
    }

    fn of(err: &Error) -> Self {
        match err {
            e if e.is_infeasible() => RowStatus::Infeasible,
            Error::NonConvergence { .. } => RowStatus::NonConvergence,
            Error::Cell { source, .. } if matches!(**source, Error::NonConvergence { .. }) => RowStatus::NonConvergence,
            e => RowStatus::Failed(e.to_string()),
        }
    }
}

/// One sweep point. Missing quantities are left empty in the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub experiment: &'static str,
    pub x: f64,
    pub pcrb: f64,
    pub rate: Option<f64>,
    pub mse: Option<f64>,
    pub rank: Option<usize>,
    /// Largest KKT residual; for multi-slot rows the relative objective gap.
    pub kkt: Option<f64>,
    pub seed: u64,
    pub status: RowStatus,
    pub wall_ms: Option<f64>,
}

impl SweepRow {
    fn new(experiment: &'static str, x: f64, seed: u64) -> Self {
        SweepRow {
            experiment,
            x,
            pcrb: f64::INFINITY,
            rate: None,
            mse: None,
            rank: None,
            kkt: None,
            seed,
            status: RowStatus::Ok,
            wall_ms: None,
        }
    }

    fn failed(mut self, err: &Error) -> Self {
        self.status = RowStatus::of(err);
        self
    }

    fn solved(mut self, r: &SolveReport) -> Self {
        self.pcrb = r.pcrb;
        self.rate = Some(r.achieved_rate);
        self.rank = Some(r.rank);
        self.kkt = Some(r.kkt_residuals.max());
        self
    }
}

/// Experiment ids in emission order.
pub const EXPERIMENT_IDS: &[&str] = &[
    "rate_proposed",
    "rate_scheme1",
    "rate_scheme2",
    "kld",
    "multislot",
    "assoc_kld",
    "assoc_random",
    "mse",
];

fn id_rank(id: &str) -> usize {
    EXPERIMENT_IDS.iter().position(|&e| e == id).unwrap_or(usize::MAX)
}

fn map_points<T: Sync, F>(points: &[T], timing: bool, f: F) -> Vec<Vec<SweepRow>>
where
    F: Fn(&T) -> Vec<SweepRow> + Sync + Send,
{
    let timed = |p: &T| {
        let start = Instant::now();
        let mut rows = f(p);
        if timing {
            let ms = start.elapsed().as_secs_f64() * 1e3;
            rows.iter_mut().for_each(|r| r.wall_ms = Some(ms));
        }
        rows
    };
    #[cfg(feature = "parallel")]
    return points.par_iter().map(timed).collect();
    #[cfg(not(feature = "parallel"))]
    return points.iter().map(timed).collect();
}

/// Problem for the configured user prior and a target prior with the given
/// mean, at the given power and rate target.
pub fn build_problem(
    cfg: &ExperimentConfig,
    target_mean: f64,
    power_budget: f64,
    rate_target: f64,
) -> Result<ProblemSpec> {
    let prior = AngularPrior::new(target_mean, cfg.target_variance)?;
    let grid = quadrature_grid(&prior, cfg.quadrature_nodes)?;
    let reflection = ReflectionPrior::new(cfg.reflection_variance)?;
    let kernel = build_kernel(&prior, &grid, &cfg.array, &reflection, cfg.symbols, cfg.sensing_noise)?;
    let pmf = discretize_user_pmf(
        cfg.user_mean,
        cfg.user_variance,
        cfg.user_points,
        default_user_support(cfg.user_mean, cfg.user_variance),
    )?;
    let ensemble = generate_ensemble(&pmf, &cfg.array, &cfg.channel, cfg.seed)?;
    Ok(ProblemSpec::new(kernel, ensemble, power_budget, rate_target)?.with_tolerances(cfg.tolerances))
}

fn rate_sweep(cfg: &ExperimentConfig, timing: bool) -> Result<Vec<Vec<SweepRow>>> {
    let base = build_problem(cfg, cfg.target_mean, cfg.power_budget, cfg.rate_target)?;
    let plan = PilotPlan::new(cfg.array.n_tx, cfg.symbols, cfg.pilot_symbols, cfg.power_budget)?;
    let settings = BenchmarkSettings {
        draws: cfg.benchmark_draws,
        seed: cfg.seed,
        noiseless_estimates: cfg.noiseless_estimates,
    };
    Ok(map_points(&cfg.rate_targets, timing, |&r| {
        let spec = base.with_rate_target(r);
        let proposed = match solve_p1(&spec) {
            Ok(rep) => SweepRow::new("rate_proposed", r, cfg.seed).solved(&rep),
            Err(e) => SweepRow::new("rate_proposed", r, cfg.seed).failed(&e),
        };
        let (one, two) = match run_schemes(&spec, &plan, &settings) {
            Ok((a, b)) => {
                let row = |id, rep: &crate::benchmarks::BenchmarkReport| SweepRow {
                    pcrb: rep.pcrb,
                    rate: Some(rep.achieved_rate),
                    ..SweepRow::new(id, r, cfg.seed)
                };
                (row("rate_scheme1", &a), row("rate_scheme2", &b))
            }
            Err(e) => (
                SweepRow::new("rate_scheme1", r, cfg.seed).failed(&e),
                SweepRow::new("rate_scheme2", r, cfg.seed).failed(&e),
            ),
        };
        vec![proposed, one, two]
    }))
}

fn kld_sweep(cfg: &ExperimentConfig, timing: bool) -> Result<Vec<Vec<SweepRow>>> {
    let user = AngularPrior::new(cfg.user_mean, cfg.user_variance)?;
    Ok(map_points(&cfg.target_means, timing, |&m| {
        let target = match AngularPrior::new(m, cfg.target_variance) {
            Ok(t) => t,
            Err(e) => return vec![SweepRow::new("kld", f64::NAN, cfg.seed).failed(&e)],
        };
        let row = SweepRow::new("kld", kld_gaussian(&user, &target), cfg.seed);
        let solved = build_problem(cfg, m, cfg.power_budget, cfg.rate_target).and_then(|spec| {
            let rep = solve_p1(&spec)?;
            let mse = if cfg.with_mse {
                let settings = MonteCarloSettings {
                    trials: cfg.trials,
                    seed: cfg.seed,
                    grid_points: cfg.grid_points,
                };
                Some(monte_carlo_mse(&rep.w_opt, &spec.kernel, &settings)?.mse)
            } else {
                None
            };
            Ok((rep, mse))
        });
        vec![match solved {
            Ok((rep, mse)) => SweepRow {
                mse,
                ..row.solved(&rep)
            },
            Err(e) => row.failed(&e),
        }]
    }))
}

fn multislot(cfg: &ExperimentConfig, timing: bool) -> Result<Vec<Vec<SweepRow>>> {
    let spec = build_problem(cfg, cfg.target_mean, cfg.power_budget, cfg.rate_target)?;
    Ok(map_points(&cfg.slots, timing, |&m| {
        let row = SweepRow::new("multislot", m as f64, cfg.seed);
        vec![match solve_p2(&spec, m, true) {
            Ok(r) => {
                let gap = r.verification.as_ref().map(|v| v.relative_gap);
                SweepRow {
                    kkt: gap,
                    ..row.solved(&r.report)
                }
            }
            Err(e) => row.failed(&e),
        }]
    }))
}

/// Seed of association scenario `s`.
pub fn scenario_seed(seed: u64, s: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(s as u64)
}

fn association(cfg: &ExperimentConfig, timing: bool) -> Result<Vec<Vec<SweepRow>>> {
    let template = CellTemplate {
        config: cfg.array,
        channel: cfg.channel,
        power_budget: cfg.power_budget,
        rate_target: cfg.rate_target,
        l_symbols: cfg.symbols,
        sensing_noise: cfg.sensing_noise,
        reflection_variance: cfg.reflection_variance,
        user_points: cfg.user_points,
        quadrature_nodes: cfg.quadrature_nodes,
        tolerances: cfg.tolerances,
    };
    let scenarios: Vec<usize> = (0..cfg.scenarios).collect();
    Ok(map_points(&scenarios, timing, |&s| {
        let seed = scenario_seed(cfg.seed, s);
        let x = s as f64;
        let scenario = match NetworkScenario::random(cfg.cells, template, seed) {
            Ok(sc) => sc,
            Err(e) => {
                return vec![
                    SweepRow::new("assoc_kld", x, seed).failed(&e),
                    SweepRow::new("assoc_random", x, seed).failed(&e),
                ]
            }
        };
        let cost = build_cost_matrix(&scenario);
        let eval = |id, a: Result<crate::association::Assignment>| {
            let row = SweepRow::new(id, x, seed);
            match a.and_then(|a| evaluate_network(&scenario, &a)) {
                Ok(p) => SweepRow { pcrb: p, ..row },
                Err(e) => row.failed(&e),
            }
        };
        vec![
            eval("assoc_kld", assign_min_cost(&cost)),
            eval("assoc_random", random_assignment(&cost, seed)),
        ]
    }))
}

fn mse_sweep(cfg: &ExperimentConfig, timing: bool) -> Result<Vec<Vec<SweepRow>>> {
    Ok(map_points(&cfg.power_sweep_dbm, timing, |&p| {
        let row = SweepRow::new("mse", p, cfg.seed);
        let solved = build_problem(cfg, cfg.target_mean, dbm_to_watts(p), cfg.rate_target).and_then(|spec| {
            let rep = solve_p1(&spec)?;
            let settings = MonteCarloSettings {
                trials: cfg.trials,
                seed: cfg.seed,
                grid_points: cfg.grid_points,
            };
            let mse = monte_carlo_mse(&rep.w_opt, &spec.kernel, &settings)?;
            Ok((rep, mse.mse))
        });
        vec![match solved {
            Ok((rep, mse)) => SweepRow {
                mse: Some(mse),
                ..row.solved(&rep)
            },
            Err(e) => row.failed(&e),
        }]
    }))
}

/// Runs every point of the configured sweep. Per-point failures are kept in
/// the row status; only setup errors abort. With `timing`, each point's wall
/// time is recorded on the rows it produced.
pub fn run_experiment(cfg: &ExperimentConfig, timing: bool) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let groups = match cfg.kind {
        ExperimentKind::RateSweep => rate_sweep(cfg, timing)?,
        ExperimentKind::KldSweep => kld_sweep(cfg, timing)?,
        ExperimentKind::Multislot => multislot(cfg, timing)?,
        ExperimentKind::Association => association(cfg, timing)?,
        ExperimentKind::Mse => mse_sweep(cfg, timing)?,
    };
    let mut rows: Vec<SweepRow> = groups.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        id_rank(a.experiment)
            .cmp(&id_rank(b.experiment))
            .then(a.x.total_cmp(&b.x))
    });
    Ok(rows)
}
