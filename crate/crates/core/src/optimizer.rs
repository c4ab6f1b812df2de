//! Transmit covariance design: maximise `tr(A₁W)` subject to an expected-rate
//! floor and a trace budget over the PSD cone.
//!
//! When the principal-eigenvector beam `P q₁ q₁^H` already meets the rate
//! target it is optimal (`β = 0`). Otherwise the rate multiplier `β` is found
//! by bisection; for each `β` the Lagrangian
//! `tr(A₁W) + β Σ_k p_k log₂|I + H_k W H_k^H/σ²|` is maximised over
//! `{W ⪰ 0, tr W ≤ P}` by projected gradient ascent. The trace multiplier `μ`
//! is read off the shift of the final eigenvalue projection.
//!
//! The multi-slot variant optimises `M` covariances under the slot-averaged
//! rate and power constraints with the same machinery on a block variable.

use std::f64::consts::LN_2;

use nalgebra::Cholesky;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{complex_gaussian, expected_rate_unchecked, UserEnsemble};
use crate::error::{Error, Result};
use crate::linalg::{
    c, frobenius_inner, hermitize, project_capped_simplex, real_trace, trace_product, CMat, HermitianEigen,
    TransmitCovariance,
};
use crate::sensing::SensingKernel;

/// Relative eigenvalue threshold used for every reported rank.
pub const RANK_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Allowed rate shortfall in bps/Hz.
    pub feasibility: f64,
    /// Bound on the normalised KKT residuals of a converged solve.
    pub duality_gap: f64,
    /// Width of the final rate bracket in bps/Hz.
    pub bisection: f64,
    /// Normalised projected-gradient mapping norm that stops the inner solver.
    pub inner_gradient: f64,
    pub max_inner_iterations: usize,
    pub max_bisection_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            feasibility: 1e-4,
            duality_gap: 1e-5,
            bisection: 1e-5,
            inner_gradient: 1e-7,
            max_inner_iterations: 20_000,
            max_bisection_steps: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub kernel: SensingKernel,
    pub ensemble: UserEnsemble,
    pub power_budget: f64,
    pub rate_target: f64,
    pub tolerances: Tolerances,
}

impl ProblemSpec {
    pub fn new(kernel: SensingKernel, ensemble: UserEnsemble, power_budget: f64, rate_target: f64) -> Result<Self> {
        if !(power_budget.is_finite() && power_budget > 0.0) {
            return Err(Error::invalid(
                "power_budget",
                format!("must be positive, got {power_budget}"),
            ));
        }
        if !(rate_target.is_finite() && rate_target >= 0.0) {
            return Err(Error::invalid(
                "rate_target",
                format!("must be nonnegative, got {rate_target}"),
            ));
        }
        if ensemble.n_tx() != kernel.a1.nrows() {
            return Err(Error::Dimension(format!(
                "kernel has {} transmit antennas, channels have {}",
                kernel.a1.nrows(),
                ensemble.n_tx()
            )));
        }
        Ok(ProblemSpec {
            kernel,
            ensemble,
            power_budget,
            rate_target,
            tolerances: Tolerances::default(),
        })
    }

    pub fn with_tolerances(mut self, tolerances: Tolerances) -> Self {
        self.tolerances = tolerances;
        self
    }

    pub fn with_rate_target(&self, rate_target: f64) -> Self {
        ProblemSpec {
            rate_target,
            ..self.clone()
        }
    }

    pub fn n_tx(&self) -> usize {
        self.kernel.a1.nrows()
    }

    /// Spectral bound on the expected-rate gradient, reached at `W = 0`.
    fn rate_gradient_bound(&self) -> f64 {
        let n = self.n_tx();
        let mut acc = CMat::zeros(n, n);
        for (h, &p) in self.ensemble.channels.iter().zip(self.ensemble.masses()) {
            acc += h.ad_mul(h) * c(p);
        }
        HermitianEigen::new(&acc).max() / (LN_2 * self.ensemble.noise_power)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateCase {
    InactiveRate,
    ActiveRate,
}

impl RateCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            RateCase::InactiveRate => "inactive_rate",
            RateCase::ActiveRate => "active_rate",
        }
    }
}

/// KKT residuals, all dimensionless.
///
/// `stationarity` is the projected-gradient mapping of the Lagrangian at a
/// step normalised by the gradient bound, divided by `P`. `complementarity`
/// is `|β(R - R̄)| + |μ(tr W - P)|` over the objective scale `P·g`.
/// `feasibility` sums the rate shortfall and relative trace/PSD violations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub complementarity: f64,
    pub feasibility: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.feasibility)
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Static covariance; for multi-slot solves the slot average.
    pub w_opt: TransmitCovariance,
    /// Per-slot covariances (a single entry for the static problem).
    pub slots: Vec<TransmitCovariance>,
    pub beta: f64,
    pub mu: f64,
    pub case: RateCase,
    pub achieved_rate: f64,
    pub pcrb: f64,
    /// Slot-averaged `tr(A₁ W)`.
    pub objective: f64,
    pub lambda1: f64,
    pub kkt_residuals: KktResiduals,
    pub rank: usize,
    pub iterations: usize,
}

/// Principal-eigenvector beam `P q₁ q₁^H`.
pub fn case1_candidate(kernel: &SensingKernel, power: f64) -> Result<TransmitCovariance> {
    let eig = HermitianEigen::new(&kernel.a1);
    if !(eig.max() > 1e-300) {
        return Err(Error::Degenerate("A1 has no positive eigenvalue".into()));
    }
    let q = eig.vector(0);
    Ok(TransmitCovariance::from_psd(hermitize(
        &((&q * q.adjoint()) * c(power)),
    )))
}

/// Frobenius projection onto `{W ⪰ 0, tr W ≤ P}`.
pub fn project_psd_trace(x: &CMat, power: f64) -> TransmitCovariance {
    let (mut w, _) = project_blocks(std::slice::from_ref(x), power);
    TransmitCovariance::from_psd(w.pop().unwrap())
}

/// Projects a block-diagonal variable onto `{W_m ⪰ 0, Σ tr W_m ≤ M·P}`;
/// returns the blocks and the simplex shift.
fn project_blocks(xs: &[CMat], power: f64) -> (Vec<CMat>, f64) {
    let eigs: Vec<HermitianEigen> = xs.iter().map(HermitianEigen::new).collect();
    let pooled: Vec<f64> = eigs.iter().flat_map(|e| e.values.iter().copied()).collect();
    let (projected, shift) = project_capped_simplex(&pooled, power * xs.len() as f64);
    let mut offset = 0;
    let blocks = eigs
        .iter()
        .map(|e| {
            let n = e.values.len();
            let w = e.reconstruct(&projected[offset..offset + n]);
            offset += n;
            w
        })
        .collect();
    (blocks, shift)
}

/// Expected rate and its gradient `Σ_k p_k/(ln2 σ²) H_k^H (I + H_k W H_k^H/σ²)^{-1} H_k`.
pub(crate) fn rate_and_gradient(w: &CMat, ensemble: &UserEnsemble) -> (f64, CMat) {
    let n = w.nrows();
    let inv_noise = 1.0 / ensemble.noise_power;
    let mut rate = 0.0;
    let mut grad = CMat::zeros(n, n);
    for (h, &p) in ensemble.channels.iter().zip(ensemble.masses()) {
        if p == 0.0 {
            continue;
        }
        let nu = h.nrows();
        let s = hermitize(&(CMat::identity(nu, nu) + (h * w * h.adjoint()) * c(inv_noise)));
        let chol = Cholesky::new(s).expect("I + HWH^H is positive definite");
        let l = chol.l_dirty();
        let ln_det: f64 = 2.0 * (0..nu).map(|i| l[(i, i)].re.ln()).sum::<f64>();
        rate += p * ln_det / LN_2;
        let t = chol.solve(h);
        grad += h.ad_mul(&t) * c(p * inv_noise / LN_2);
    }
    (rate, hermitize(&grad))
}

/// `tr(A₁W)·linear_weight + rate_weight·R(W)` summed over slots.
struct Lagrangian<'a> {
    spec: &'a ProblemSpec,
    linear_weight: f64,
    rate_weight: f64,
    slots: usize,
    grad_bound: f64,
}

impl<'a> Lagrangian<'a> {
    fn new(spec: &'a ProblemSpec, linear_weight: f64, beta: f64, slots: usize, bounds: &Bounds) -> Self {
        let rate_weight = beta / slots as f64;
        let grad_bound = (linear_weight * bounds.lambda1 + rate_weight * bounds.rate_gradient).max(f64::MIN_POSITIVE);
        Lagrangian {
            spec,
            linear_weight,
            rate_weight,
            slots,
            grad_bound,
        }
    }

    fn reference_step(&self) -> f64 {
        self.spec.power_budget / self.grad_bound
    }

    fn slot_value(&self, w: &CMat) -> f64 {
        let mut v = self.linear_weight * self.spec.kernel.objective(w);
        if self.rate_weight != 0.0 {
            v += self.rate_weight * expected_rate_unchecked(w, &self.spec.ensemble);
        }
        v
    }

    fn value(&self, ws: &[CMat]) -> f64 {
        ws.iter().map(|w| self.slot_value(w)).sum()
    }

    fn value_and_gradient(&self, ws: &[CMat]) -> (f64, Vec<CMat>) {
        let mut total = 0.0;
        let grads = ws
            .iter()
            .map(|w| {
                let mut g = &self.spec.kernel.a1 * c(self.linear_weight);
                total += self.linear_weight * self.spec.kernel.objective(w);
                if self.rate_weight != 0.0 {
                    let (r, gr) = rate_and_gradient(w, &self.spec.ensemble);
                    total += self.rate_weight * r;
                    g += gr * c(self.rate_weight);
                }
                g
            })
            .collect();
        (total, grads)
    }

    fn project(&self, xs: &[CMat]) -> (Vec<CMat>, f64) {
        project_blocks(xs, self.spec.power_budget)
    }

    /// Normalised gradient-mapping norm and the implied trace multiplier.
    fn residual(&self, ws: &[CMat], grads: &[CMat]) -> (f64, f64) {
        let t = self.reference_step();
        let moved: Vec<CMat> = ws.iter().zip(grads).map(|(w, g)| w + g * c(t)).collect();
        let (proj, shift) = self.project(&moved);
        let norm: f64 = ws
            .iter()
            .zip(&proj)
            .map(|(w, p)| (w - p).norm_squared())
            .sum::<f64>()
            .sqrt();
        (norm / self.spec.power_budget, shift / t)
    }

    fn maximize(&self, init: Vec<CMat>, tol: &Tolerances) -> Result<InnerOutcome> {
        let t_ref = self.reference_step();
        let t_max = 1e8 * t_ref;
        let t_min = 1e-14 * t_ref;
        let (mut w, _) = self.project(&init);
        let (mut f, mut g) = self.value_and_gradient(&w);
        let mut history = vec![f];
        let mut step = t_ref;
        for it in 0..tol.max_inner_iterations {
            let (res, mu) = self.residual(&w, &g);
            if res <= tol.inner_gradient {
                return Ok(InnerOutcome {
                    slots: w,
                    history,
                    iterations: it,
                    residual: res,
                    mu,
                });
            }
            let mut s = step.clamp(t_min, t_max);
            let accepted = loop {
                let moved: Vec<CMat> = w.iter().zip(&g).map(|(w, g)| w + g * c(s)).collect();
                let (cand, _) = self.project(&moved);
                let ascent: f64 = cand
                    .iter()
                    .zip(&w)
                    .zip(&g)
                    .map(|((x, w), g)| frobenius_inner(g, &(x - w)))
                    .sum();
                let fc = self.value(&cand);
                if fc >= f + 1e-4 * ascent && fc >= f {
                    break Some(cand);
                }
                s *= 0.5;
                if s < t_min {
                    break None;
                }
            };
            let Some(cand) = accepted else {
                // no ascent direction left at machine precision
                if res <= 100.0 * tol.inner_gradient {
                    return Ok(InnerOutcome {
                        slots: w,
                        history,
                        iterations: it,
                        residual: res,
                        mu,
                    });
                }
                return Err(self.nonconvergence(it, res, &w));
            };
            let (fc, gc) = self.value_and_gradient(&cand);
            let mut ss = 0.0;
            let mut sy = 0.0;
            for m in 0..self.slots {
                let dw = &cand[m] - &w[m];
                let dg = &gc[m] - &g[m];
                ss += dw.norm_squared();
                sy += frobenius_inner(&dw, &dg);
            }
            step = if sy < 0.0 { ss / -sy } else { t_max };
            debug_assert!(fc >= f - 1e-12 * f.abs().max(1.0));
            w = cand;
            f = fc;
            g = gc;
            history.push(f);
        }
        let (res, _) = self.residual(&w, &g);
        Err(self.nonconvergence(tol.max_inner_iterations, res, &w))
    }

    fn nonconvergence(&self, iterations: usize, residual: f64, w: &[CMat]) -> Error {
        Error::NonConvergence {
            iterations,
            residual,
            best: Box::new(TransmitCovariance::from_psd(average(w))),
        }
    }
}

struct InnerOutcome {
    slots: Vec<CMat>,
    history: Vec<f64>,
    iterations: usize,
    residual: f64,
    mu: f64,
}

/// Result of one Lagrangian maximisation.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub w: TransmitCovariance,
    /// Lagrangian value after every accepted step; nondecreasing.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Trace multiplier implied by the final projection shift.
    pub mu: f64,
}

impl InnerSolution {
    fn from_outcome(mut o: InnerOutcome) -> Self {
        InnerSolution {
            w: TransmitCovariance::from_psd(o.slots.pop().unwrap()),
            objective_history: o.history,
            iterations: o.iterations,
            residual: o.residual,
            mu: o.mu,
        }
    }
}

struct Bounds {
    lambda1: f64,
    rate_gradient: f64,
}

impl Bounds {
    fn of(spec: &ProblemSpec) -> Self {
        Bounds {
            lambda1: HermitianEigen::new(&spec.kernel.a1).max().max(0.0),
            rate_gradient: spec.rate_gradient_bound(),
        }
    }
}

/// Maximises `tr(A₁W) + β·R(W)` over `{W ⪰ 0, tr W ≤ P}`, starting from the
/// isotropic covariance.
pub fn inner_max(spec: &ProblemSpec, beta: f64) -> Result<InnerSolution> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::invalid("beta", format!("must be nonnegative, got {beta}")));
    }
    let bounds = Bounds::of(spec);
    let lag = Lagrangian::new(spec, 1.0, beta, 1, &bounds);
    let init = TransmitCovariance::isotropic(spec.n_tx(), spec.power_budget).into_matrix();
    lag.maximize(vec![init], &spec.tolerances)
        .map(InnerSolution::from_outcome)
}

/// Maximises the expected rate alone under the power budget.
pub fn rate_only_max(spec: &ProblemSpec) -> Result<InnerSolution> {
    let bounds = Bounds::of(spec);
    let lag = Lagrangian::new(spec, 0.0, 1.0, 1, &bounds);
    let init = TransmitCovariance::isotropic(spec.n_tx(), spec.power_budget).into_matrix();
    lag.maximize(vec![init], &spec.tolerances)
        .map(InnerSolution::from_outcome)
}

fn average(ws: &[CMat]) -> CMat {
    let mut acc = ws[0].clone();
    for w in &ws[1..] {
        acc += w;
    }
    hermitize(&(acc * c(1.0 / ws.len() as f64)))
}

fn slot_rate(ws: &[CMat], ensemble: &UserEnsemble) -> f64 {
    ws.iter().map(|w| expected_rate_unchecked(w, ensemble)).sum::<f64>() / ws.len() as f64
}

fn slot_objective(ws: &[CMat], kernel: &SensingKernel) -> f64 {
    ws.iter().map(|w| kernel.objective(w)).sum::<f64>() / ws.len() as f64
}

fn blend(lo: &[CMat], hi: &[CMat], t: f64) -> Vec<CMat> {
    lo.iter()
        .zip(hi)
        .map(|(a, b)| hermitize(&(a * c(1.0 - t) + b * c(t))))
        .collect()
}

/// Starting point for the block solver.
enum SlotInit {
    Warm,
    Random(u64),
}

fn random_slots(n: usize, slots: usize, power: f64, seed: u64) -> Vec<CMat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..slots)
        .map(|_| {
            let g = CMat::from_fn(n, n, |_, _| complex_gaussian(&mut rng, 1.0));
            let w = &g * g.adjoint();
            let tr = real_trace(&w);
            hermitize(&(w * c(power / tr)))
        })
        .collect()
}

/// Core solver shared by the static and multi-slot problems.
fn solve_slots(spec: &ProblemSpec, slots: usize, init: SlotInit, rate_max: Option<f64>) -> Result<SolveReport> {
    let tol = spec.tolerances;
    let bounds = Bounds::of(spec);
    let power = spec.power_budget;
    let target = spec.rate_target;
    let candidate = case1_candidate(&spec.kernel, power)?.into_matrix();
    let rate_s = expected_rate_unchecked(&candidate, &spec.ensemble);
    if rate_s >= target {
        let ws = vec![candidate; slots];
        return Ok(finish(
            spec,
            ws,
            0.0,
            bounds.lambda1,
            RateCase::InactiveRate,
            0,
            &bounds,
        ));
    }

    let mut iterations = 0;
    let rate_max = match rate_max {
        Some(r) => r,
        None => {
            let sol = rate_only_max(spec)?;
            iterations += sol.iterations;
            expected_rate_unchecked(sol.w.matrix(), &spec.ensemble)
        }
    };
    if rate_max < target - tol.feasibility {
        return Err(Error::Infeasible {
            target,
            max_rate: rate_max,
        });
    }
    let goal = target.min(rate_max - 0.5 * tol.feasibility);

    let solve_at = |beta: f64, warm: Vec<CMat>, iterations: &mut usize| -> Result<(Vec<CMat>, f64, f64)> {
        let lag = Lagrangian::new(spec, 1.0, beta, slots, &bounds);
        let out = lag.maximize(warm, &tol)?;
        *iterations += out.iterations;
        let r = slot_rate(&out.slots, &spec.ensemble);
        Ok((out.slots, r, out.mu))
    };

    let mut lo_w = vec![candidate.clone(); slots];
    let mut lo_rate = rate_s;
    let mut lo_beta = 0.0;
    let first = match init {
        SlotInit::Warm => vec![candidate.clone(); slots],
        SlotInit::Random(seed) => random_slots(spec.n_tx(), slots, power, seed),
    };
    let mut hi_beta = bounds.lambda1 / bounds.rate_gradient.max(f64::MIN_POSITIVE);
    let (mut hi_w, mut hi_rate, _) = solve_at(hi_beta, first, &mut iterations)?;
    let mut doublings = 0;
    while hi_rate < goal {
        lo_beta = hi_beta;
        lo_w = hi_w.clone();
        lo_rate = hi_rate;
        hi_beta *= 2.0;
        let (w, r, _) = solve_at(hi_beta, hi_w, &mut iterations)?;
        hi_w = w;
        hi_rate = r;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::Infeasible {
                target,
                max_rate: hi_rate,
            });
        }
    }

    for _ in 0..tol.max_bisection_steps {
        if hi_rate - lo_rate <= tol.bisection || hi_beta - lo_beta <= 1e-13 * hi_beta {
            break;
        }
        let mid = 0.5 * (lo_beta + hi_beta);
        let (w, r, _) = solve_at(mid, hi_w.clone(), &mut iterations)?;
        if r >= goal {
            hi_beta = mid;
            hi_w = w;
            hi_rate = r;
        } else {
            lo_beta = mid;
            lo_w = w;
            lo_rate = r;
        }
    }

    // Land exactly on the rate target along the chord between the bracket
    // ends; the rate is concave along it so the crossing is unique.
    let (ws, beta) = if hi_rate - goal <= 1e-10 || lo_rate >= goal {
        (hi_w, hi_beta)
    } else {
        let (mut a, mut b) = (0.0, 1.0);
        for _ in 0..60 {
            let t = 0.5 * (a + b);
            if slot_rate(&blend(&lo_w, &hi_w, t), &spec.ensemble) >= goal {
                b = t;
            } else {
                a = t;
            }
        }
        (blend(&lo_w, &hi_w, b), lo_beta + b * (hi_beta - lo_beta))
    };
    let lag = Lagrangian::new(spec, 1.0, beta, slots, &bounds);
    let (_, grads) = lag.value_and_gradient(&ws);
    let (_, mu) = lag.residual(&ws, &grads);
    Ok(finish(spec, ws, beta, mu, RateCase::ActiveRate, iterations, &bounds))
}

fn finish(
    spec: &ProblemSpec,
    ws: Vec<CMat>,
    beta: f64,
    mu: f64,
    case: RateCase,
    iterations: usize,
    bounds: &Bounds,
) -> SolveReport {
    let mean = average(&ws);
    let objective = slot_objective(&ws, &spec.kernel);
    let achieved_rate = slot_rate(&ws, &spec.ensemble);
    let pcrb = 1.0 / (spec.kernel.prior_fisher + spec.kernel.information_scale() * objective);
    let rank = ws
        .iter()
        .map(|w| crate::linalg::numerical_rank(w, RANK_THRESHOLD))
        .max()
        .unwrap_or(0);
    let mut report = SolveReport {
        w_opt: TransmitCovariance::from_psd(mean),
        slots: ws.into_iter().map(TransmitCovariance::from_psd).collect(),
        beta,
        mu,
        case,
        achieved_rate,
        pcrb,
        objective,
        lambda1: bounds.lambda1,
        kkt_residuals: KktResiduals::default(),
        rank,
        iterations,
    };
    report.kkt_residuals = kkt_residuals(spec, &report, bounds);
    report
}

/// Solves the static problem.
pub fn solve_p1(spec: &ProblemSpec) -> Result<SolveReport> {
    solve_slots(spec, 1, SlotInit::Warm, None)
}

#[derive(Debug, Clone)]
pub struct MultiSlotCheck {
    pub independent: SolveReport,
    /// `|obj_multi - obj_static| / obj_static` on slot-averaged objectives.
    pub relative_gap: f64,
}

#[derive(Debug, Clone)]
pub struct MultiSlotReport {
    /// The static optimum replicated over every slot.
    pub report: SolveReport,
    pub verification: Option<MultiSlotCheck>,
}

/// Multi-slot design. The static optimum is returned replicated over the `M`
/// slots; with `verify` the `M`-slot problem is also solved directly from a
/// random block start and the objective gap reported.
pub fn solve_p2(spec: &ProblemSpec, slots: usize, verify: bool) -> Result<MultiSlotReport> {
    if slots == 0 {
        return Err(Error::invalid("slots", "need at least one slot"));
    }
    let base = solve_p1(spec)?;
    let mut report = base.clone();
    report.slots = vec![base.w_opt.clone(); slots];
    let verification = if verify {
        let independent = if slots == 1 {
            base.clone()
        } else {
            let rate_max = match base.case {
                RateCase::InactiveRate => None,
                RateCase::ActiveRate => {
                    Some(rate_only_max(spec)?).map(|s| expected_rate_unchecked(s.w.matrix(), &spec.ensemble))
                }
            };
            solve_slots(spec, slots, SlotInit::Random(0x5107 + slots as u64), rate_max)?
        };
        let relative_gap = (independent.objective - base.objective).abs() / base.objective.abs().max(f64::MIN_POSITIVE);
        Some(MultiSlotCheck {
            independent,
            relative_gap,
        })
    } else {
        None
    };
    Ok(MultiSlotReport { report, verification })
}

fn kkt_residuals(spec: &ProblemSpec, report: &SolveReport, bounds: &Bounds) -> KktResiduals {
    let slots = report.slots.len();
    let ws: Vec<CMat> = report.slots.iter().map(|w| w.matrix().clone()).collect();
    let lag = Lagrangian::new(spec, 1.0, report.beta, slots, bounds);
    let (_, grads) = lag.value_and_gradient(&ws);
    let (stationarity, _) = lag.residual(&ws, &grads);
    let power = spec.power_budget;
    let mean_trace = ws.iter().map(real_trace).sum::<f64>() / slots as f64;
    let scale = (power * lag.grad_bound).max(f64::MIN_POSITIVE);
    let complementarity = ((report.beta * (report.achieved_rate - spec.rate_target)).abs()
        + (report.mu * (mean_trace - power)).abs())
        / scale;
    let min_eig = ws
        .iter()
        .map(|w| HermitianEigen::new(w).min())
        .fold(f64::INFINITY, f64::min);
    let feasibility = (spec.rate_target - report.achieved_rate).max(0.0)
        + ((mean_trace - power) / power).max(0.0)
        + (-min_eig / power).max(0.0);
    KktResiduals {
        stationarity,
        complementarity,
        feasibility,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub kkt_residuals: KktResiduals,
    pub rank: usize,
    /// `Σ_k rank(H_k)`.
    pub rank_bound: usize,
    pub lambda1: f64,
    /// `Some(μ ≥ λ₁ - tol)` for active-rate solves, `None` otherwise.
    pub mu_bound_check: Option<bool>,
}

/// Recomputes KKT residuals, rank and the trace-multiplier bound for a report.
pub fn diagnostics(spec: &ProblemSpec, report: &SolveReport) -> Diagnostics {
    let bounds = Bounds::of(spec);
    let kkt = kkt_residuals(spec, report, &bounds);
    let rank = report
        .slots
        .iter()
        .map(|w| crate::linalg::numerical_rank(w.matrix(), RANK_THRESHOLD))
        .max()
        .unwrap_or(0);
    let mu_bound_check = (report.beta > 0.0).then_some(report.mu >= bounds.lambda1 - 1e-6 * bounds.lambda1);
    Diagnostics {
        kkt_residuals: kkt,
        rank,
        rank_bound: spec.ensemble.total_channel_rank(),
        lambda1: bounds.lambda1,
        mu_bound_check,
    }
}

/// `tr(A₁ W)` for a covariance.
pub fn sensing_objective(kernel: &SensingKernel, w: &CMat) -> f64 {
    trace_product(&kernel.a1, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_ensemble, ChannelParams};
    use crate::geometry::ArrayConfig;
    use crate::linalg::checked_psd;
    use crate::priors::{default_user_support, discretize_user_pmf, quadrature_grid, AngularPrior, ReflectionPrior};
    use crate::sensing::build_kernel;
    use nalgebra::DMatrix;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::Rng;

    fn kernel(config: ArrayConfig, mean: f64) -> SensingKernel {
        let prior = AngularPrior::new(mean, 1e-3).unwrap();
        let grid = quadrature_grid(&prior, 64).unwrap();
        build_kernel(&prior, &grid, &config, &ReflectionPrior::new(2e-14).unwrap(), 25, 1e-12).unwrap()
    }

    fn problem(config: ArrayConfig, k: usize, rate: f64, seed: u64) -> ProblemSpec {
        let pmf = discretize_user_pmf(-0.3, 1e-3, k, default_user_support(-0.3, 1e-3)).unwrap();
        let ens = generate_ensemble(&pmf, &config, &ChannelParams::default(), seed).unwrap();
        ProblemSpec::new(kernel(config, -0.6), ens, 1.0, rate).unwrap()
    }

    fn small() -> ProblemSpec {
        problem(ArrayConfig::new(4, 4, 2).unwrap(), 3, 4.5, 11)
    }

    fn diag(values: &[f64]) -> CMat {
        CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            values.len(),
            values.iter().map(|&v| Complex64::new(v, 0.0)),
        ))
    }

    fn random_feasible(rng: &mut impl Rng, n: usize, power: f64) -> CMat {
        let g = CMat::from_fn(n, n, |_, _| complex_gaussian(rng, 1.0));
        let w = &g * g.adjoint();
        let scale = rng.random_range(0.05..1.0) * power / real_trace(&w);
        w * c(scale)
    }

    #[test]
    fn case1_axis_aligned() {
        let mut k = kernel(ArrayConfig::new(2, 2, 1).unwrap(), 0.0);
        k.a1 = diag(&[2.0, 1.0]);
        let w = case1_candidate(&k, 3.0).unwrap();
        assert!((w.matrix() - diag(&[3.0, 0.0])).norm() < 1e-12);
        assert!((k.objective(w.matrix()) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn case1_isotropic_and_degenerate() {
        let mut k = kernel(ArrayConfig::new(3, 2, 1).unwrap(), 0.0);
        k.a1 = diag(&[1.0, 1.0, 1.0]);
        let w = case1_candidate(&k, 2.0).unwrap();
        assert!((k.objective(w.matrix()) - 2.0).abs() < 1e-12);
        assert_eq!(w.rank(RANK_THRESHOLD), 1);
        k.a1 = CMat::zeros(3, 3);
        assert!(matches!(case1_candidate(&k, 1.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn case1_dominates_random_feasible() {
        let k = kernel(ArrayConfig::default(), -0.6);
        let best = k.objective(case1_candidate(&k, 1.0).unwrap().matrix());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let w = random_feasible(&mut rng, 10, 1.0);
            assert!(k.objective(&w) <= best * (1.0 + 1e-12));
        }
    }

    #[test]
    fn projection_examples() {
        let p = project_psd_trace(&diag(&[3.0, -1.0]), 2.0);
        assert!((p.matrix() - diag(&[2.0, 0.0])).norm() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_feasible(&mut rng, 5, 1.0);
        assert!((project_psd_trace(&w, 1.0).matrix() - &w).norm() < 1e-12);
    }

    #[test]
    fn projection_is_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = CMat::from_fn(4, 4, |_, _| complex_gaussian(&mut rng, 1.0));
        let x = hermitize(&(&g + g.adjoint()));
        let p = project_psd_trace(&x, 1.0);
        let d = (p.matrix() - &x).norm();
        for _ in 0..100 {
            let w = random_feasible(&mut rng, 4, 1.0);
            assert!(d <= (&w - &x).norm() + 1e-12);
        }
    }

    #[test]
    fn inner_beta_zero_matches_case1() {
        let spec = small();
        let sol = inner_max(&spec, 0.0).unwrap();
        let c1 = spec
            .kernel
            .objective(case1_candidate(&spec.kernel, 1.0).unwrap().matrix());
        let got = spec.kernel.objective(sol.w.matrix());
        assert!((got - c1).abs() <= 1e-6 * c1, "{got} vs {c1}");
    }

    #[test]
    fn inner_history_nondecreasing() {
        let spec = small();
        for beta in [1e-3, 1.0, 30.0] {
            let sol = inner_max(&spec, beta).unwrap();
            for pair in sol.objective_history.windows(2) {
                assert!(pair[1] >= pair[0], "{pair:?}");
            }
            assert!(sol.residual <= spec.tolerances.inner_gradient);
        }
    }

    /// Classical water-filling over the eigenmodes of `H^H H`.
    fn water_filling(gains: &[f64], power: f64) -> f64 {
        let mut lo = 0.0;
        let mut hi = power + gains.iter().map(|g| 1.0 / g).fold(0.0, f64::max);
        for _ in 0..200 {
            let level = 0.5 * (lo + hi);
            let used: f64 = gains.iter().map(|g| (level - 1.0 / g).max(0.0)).sum();
            if used > power {
                hi = level;
            } else {
                lo = level;
            }
        }
        gains.iter().map(|g| (1.0 + g * (lo - 1.0 / g).max(0.0)).log2()).sum()
    }

    #[test]
    fn large_beta_reaches_water_filling() {
        let config = ArrayConfig::new(2, 2, 2).unwrap();
        let mut k = kernel(config, 0.1);
        k.a1 = CMat::zeros(2, 2);
        let h = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(1.0, 0.2),
                Complex64::new(0.3, -0.1),
                Complex64::new(0.0, 0.5),
                Complex64::new(0.4, 0.0),
            ],
        ) * c(1e-6);
        let noise = 1e-12;
        let ens = UserEnsemble::from_channels(crate::priors::UserPmf::point(0.1), vec![h.clone()], noise).unwrap();
        let spec = ProblemSpec::new(k, ens, 1.0, 0.0).unwrap();
        let sol = inner_max(&spec, 1e6).unwrap();
        let got = expected_rate_unchecked(sol.w.matrix(), &spec.ensemble);
        let gains: Vec<f64> = HermitianEigen::new(&h.ad_mul(&h))
            .values
            .iter()
            .map(|v| v / noise)
            .collect();
        let expect = water_filling(&gains, 1.0);
        assert!((got - expect).abs() <= 1e-4 * expect, "{got} vs {expect}");
    }

    #[test]
    fn zero_target_is_case1() {
        let spec = small().with_rate_target(0.0);
        let r = solve_p1(&spec).unwrap();
        assert_eq!(r.case, RateCase::InactiveRate);
        assert_eq!(r.beta, 0.0);
        let w = case1_candidate(&spec.kernel, 1.0).unwrap();
        assert!((r.w_opt.matrix() - w.matrix()).norm() < 1e-12);
        let d = diagnostics(&spec, &r);
        assert!(d.kkt_residuals.complementarity < 1e-12);
        assert!(d.mu_bound_check.is_none());
    }

    #[test]
    fn case2_meets_target_and_bounds() {
        let spec = small();
        let r = solve_p1(&spec).unwrap();
        assert_eq!(r.case, RateCase::ActiveRate);
        assert!(r.beta > 0.0);
        assert!(r.achieved_rate >= spec.rate_target - spec.tolerances.feasibility);
        assert!(r.w_opt.trace() <= 1.0 + 1e-8);
        checked_psd(r.w_opt.matrix()).unwrap();
        assert!(r.objective <= r.lambda1 * (1.0 + 1e-12));
        let d = diagnostics(&spec, &r);
        assert!(d.kkt_residuals.max() <= 1e-5, "{:?}", d.kkt_residuals);
        assert!(d.rank <= d.rank_bound);
        assert_eq!(d.mu_bound_check, Some(true));
    }

    #[test]
    fn infeasible_target_detected() {
        let spec = small().with_rate_target(200.0);
        let err = solve_p1(&spec).unwrap_err();
        assert!(err.is_infeasible());
    }

    #[test]
    fn trade_off_is_monotone() {
        let spec = small();
        let mut last = f64::INFINITY;
        for rate in [1.0, 2.0, 3.0, 4.0, 5.0] {
            let r = solve_p1(&spec.with_rate_target(rate)).unwrap();
            assert!(r.objective <= last * (1.0 + 1e-7));
            last = r.objective;
        }
    }

    #[test]
    fn multislot_single_slot_is_static() {
        let spec = small();
        let a = solve_p1(&spec).unwrap();
        let b = solve_p2(&spec, 1, true).unwrap();
        assert_eq!(a.objective, b.report.objective);
        assert_eq!(b.verification.unwrap().relative_gap, 0.0);
    }

    #[test]
    fn multislot_matches_static() {
        let spec = small();
        for m in [2, 4] {
            let r = solve_p2(&spec, m, true).unwrap();
            assert_eq!(r.report.slots.len(), m);
            let check = r.verification.unwrap();
            assert!(check.relative_gap <= 1e-5, "M={m} gap {}", check.relative_gap);
        }
    }

    #[test]
    fn averaging_slots_never_lowers_rate() {
        let spec = small();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let ws: Vec<CMat> = (0..3).map(|_| random_feasible(&mut rng, 4, 1.0)).collect();
            let mean = average(&ws);
            assert!(expected_rate_unchecked(&mean, &spec.ensemble) >= slot_rate(&ws, &spec.ensemble) - 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn projection_feasible_and_idempotent(seed in any::<u64>(), power in 0.1f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = CMat::from_fn(5, 5, |_, _| complex_gaussian(&mut rng, 1.0));
            let x = hermitize(&(&g + g.adjoint()));
            let p = project_psd_trace(&x, power);
            prop_assert!(p.trace() <= power * (1.0 + 1e-12));
            prop_assert!(HermitianEigen::new(p.matrix()).min() >= -1e-12);
            let again = project_psd_trace(p.matrix(), power);
            prop_assert!((again.matrix() - p.matrix()).norm() <= 1e-10 * power);
        }
    }
}
