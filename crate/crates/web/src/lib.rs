//! WebAssembly bindings for the browser demo.
//!
//! Each exported function takes a JSON scenario and returns JSON. The pure
//! Rust versions are exposed too so they can be tested natively.

use isac_pcrb::channel::dbm_to_watts;
use isac_pcrb::experiments::{build_problem, ExperimentConfig, ExperimentKind};
use isac_pcrb::geometry::{steering, ArrayConfig, ArrayKind};
use isac_pcrb::linalg::TransmitCovariance;
use isac_pcrb::optimizer::solve_p1;
use isac_pcrb::priors::{kld_gaussian, AngularPrior};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Number of angles in a beampattern.
pub const PATTERN_POINTS: usize = 361;

/// Scenario edited in the page; angles in radians.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_user: usize,
    pub target_mean: f64,
    pub target_variance: f64,
    pub user_mean: f64,
    pub user_variance: f64,
    pub user_points: usize,
    pub power_dbm: f64,
    pub rate_target: f64,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            n_tx: 10,
            n_rx: 12,
            n_user: 8,
            target_mean: -0.6,
            target_variance: 1e-3,
            user_mean: -0.3,
            user_variance: 1e-3,
            user_points: 10,
            power_dbm: 30.0,
            rate_target: 12.0,
            seed: 1,
        }
    }
}

impl Scenario {
    fn config(&self) -> Result<ExperimentConfig, String> {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::RateSweep);
        cfg.array = ArrayConfig::new(self.n_tx, self.n_rx, self.n_user).map_err(|e| e.to_string())?;
        cfg.target_mean = self.target_mean;
        cfg.target_variance = self.target_variance;
        cfg.user_mean = self.user_mean;
        cfg.user_variance = self.user_variance;
        cfg.user_points = self.user_points;
        cfg.power_budget = dbm_to_watts(self.power_dbm);
        cfg.rate_target = self.rate_target;
        cfg.seed = self.seed;
        // Fewer nodes keep in-browser solves interactive.
        cfg.quadrature_nodes = 64;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Design {
    pub case: &'static str,
    pub pcrb: f64,
    pub rate: f64,
    pub rank: usize,
    pub power: f64,
    /// `(θ, a(θ)^H W a(θ))` over `[-π/2, π/2)`.
    pub beampattern: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub x: f64,
    /// `null` in JSON when the rate target cannot be met.
    pub pcrb: Option<f64>,
    pub rate: Option<f64>,
}

/// Transmit gain `a(θ)^H W a(θ)` on a uniform angle grid.
pub fn beampattern(w: &TransmitCovariance, config: &ArrayConfig, points: usize) -> Vec<(f64, f64)> {
    let half = std::f64::consts::FRAC_PI_2;
    (0..points)
        .map(|i| {
            let theta = -half + std::f64::consts::PI * i as f64 / points as f64;
            let a = steering(ArrayKind::Tx, theta, config)
                .expect("grid lies in the angle domain")
                .entries;
            let gain = (a.adjoint() * w.matrix() * &a)[(0, 0)].re;
            (theta, gain.max(0.0))
        })
        .collect()
}

/// Optimal covariance for the scenario and its beampattern.
pub fn design(s: &Scenario) -> Result<Design, String> {
    let cfg = s.config()?;
    let spec = build_problem(&cfg, cfg.target_mean, cfg.power_budget, cfg.rate_target).map_err(|e| e.to_string())?;
    let rep = solve_p1(&spec).map_err(|e| e.to_string())?;
    Ok(Design {
        case: rep.case.as_str(),
        pcrb: rep.pcrb,
        rate: rep.achieved_rate,
        rank: rep.rank,
        power: rep.w_opt.trace(),
        beampattern: beampattern(&rep.w_opt, &cfg.array, PATTERN_POINTS),
    })
}

fn point(spec: isac_pcrb::Result<isac_pcrb::optimizer::ProblemSpec>, x: f64) -> Result<CurvePoint, String> {
    let spec = spec.map_err(|e| e.to_string())?;
    match solve_p1(&spec) {
        Ok(rep) => Ok(CurvePoint {
            x,
            pcrb: Some(rep.pcrb),
            rate: Some(rep.achieved_rate),
        }),
        Err(e) if e.is_infeasible() => Ok(CurvePoint {
            x,
            pcrb: None,
            rate: None,
        }),
        Err(e) => Err(e.to_string()),
    }
}

/// PCRB against the rate target; the scenario's own target is ignored.
pub fn tradeoff(s: &Scenario, rate_targets: &[f64]) -> Result<Vec<CurvePoint>, String> {
    let cfg = s.config()?;
    let base = build_problem(&cfg, cfg.target_mean, cfg.power_budget, 0.0).map_err(|e| e.to_string())?;
    rate_targets
        .iter()
        .map(|&r| point(Ok(base.with_rate_target(r)), r))
        .collect()
}

/// PCRB against KLD(user ‖ target) as the target mean slides.
pub fn kld_curve(s: &Scenario, target_means: &[f64]) -> Result<Vec<CurvePoint>, String> {
    let cfg = s.config()?;
    let user = AngularPrior::new(cfg.user_mean, cfg.user_variance).map_err(|e| e.to_string())?;
    target_means
        .iter()
        .map(|&m| {
            let target = AngularPrior::new(m, cfg.target_variance).map_err(|e| e.to_string())?;
            let spec = build_problem(&cfg, m, cfg.power_budget, cfg.rate_target);
            point(spec, kld_gaussian(&user, &target))
        })
        .collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepRequest {
    #[serde(default)]
    scenario: Scenario,
    values: Vec<f64>,
}

fn parse<T: for<'de> Deserialize<'de>>(json: &str) -> Result<T, String> {
    serde_json::from_str(json).map_err(|e| format!("bad request: {e}"))
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn design_json(request: &str) -> Result<String, String> {
    to_json(&design(&parse(request)?)?)
}

pub fn tradeoff_json(request: &str) -> Result<String, String> {
    let req: SweepRequest = parse(request)?;
    to_json(&tradeoff(&req.scenario, &req.values)?)
}

pub fn kld_json(request: &str) -> Result<String, String> {
    let req: SweepRequest = parse(request)?;
    to_json(&kld_curve(&req.scenario, &req.values)?)
}

/// `{scenario fields}` in, `{case, pcrb, rate, rank, power, beampattern}` out.
#[wasm_bindgen(js_name = solveDesign)]
pub fn solve_design(request: &str) -> Result<String, JsValue> {
    design_json(request).map_err(|e| JsValue::from_str(&e))
}

/// `{scenario, values: [rate targets]}` in, `[{x, pcrb, rate}]` out.
#[wasm_bindgen(js_name = tradeoffCurve)]
pub fn tradeoff_curve(request: &str) -> Result<String, JsValue> {
    tradeoff_json(request).map_err(|e| JsValue::from_str(&e))
}

/// `{scenario, values: [target means]}` in, `[{x: kld, pcrb, rate}]` out.
#[wasm_bindgen(js_name = kldCurve)]
pub fn kld_curve_js(request: &str) -> Result<String, JsValue> {
    kld_json(request).map_err(|e| JsValue::from_str(&e))
}
