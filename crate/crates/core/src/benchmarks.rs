//! Two-phase pilot-based baselines.
//!
//! The first `L_CE` symbols carry an orthogonal training matrix from which the
//! realised user channel is estimated by least squares; the remaining
//! `L_ISAC` symbols use the covariance designed for the estimated channel.
//! Scheme 1 gathers sensing information only in the second phase, scheme 2
//! also counts the pilot echoes.

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{complex_gaussian, expected_rate_unchecked, UserEnsemble};
use crate::error::{Error, Result};
use crate::linalg::{c, CMat};
use crate::optimizer::{solve_p1, ProblemSpec};
use crate::priors::UserPmf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    PilotsDiscarded,
    PilotsReused,
}

impl Scheme {
    pub fn number(&self) -> u8 {
        match self {
            Scheme::PilotsDiscarded => 1,
            Scheme::PilotsReused => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotPlan {
    pub l_ce: usize,
    pub l_isac: usize,
    /// `N_T × L_CE` training matrix.
    pub pilot: CMat,
    /// Fewer pilot symbols than transmit antennas.
    pub under_determined: bool,
}

impl PilotPlan {
    /// Scaled partial DFT pilots: with `L_CE ≥ N_T` the rows are orthogonal
    /// and `P P^H = (P_budget L_CE / N_T) I`.
    pub fn new(n_tx: usize, l_total: usize, l_ce: usize, power_budget: f64) -> Result<Self> {
        if l_ce == 0 || l_ce >= l_total {
            return Err(Error::invalid(
                "l_ce",
                format!("need 0 < L_CE < L, got L_CE={l_ce}, L={l_total}"),
            ));
        }
        if !(power_budget > 0.0) {
            return Err(Error::invalid("power_budget", "must be positive"));
        }
        let size = l_ce.max(n_tx);
        let norm = 1.0 / (size as f64).sqrt();
        let scale = (power_budget * l_ce as f64 / n_tx as f64).sqrt();
        let dft = |r: usize, t: usize| {
            Complex64::from_polar(
                norm * scale,
                -2.0 * std::f64::consts::PI * ((r * t) % size) as f64 / size as f64,
            )
        };
        let pilot = if l_ce >= n_tx {
            CMat::from_fn(n_tx, l_ce, dft)
        } else {
            // orthogonal columns with the same per-symbol power
            let fix = (n_tx as f64 / l_ce as f64).sqrt();
            CMat::from_fn(n_tx, l_ce, |r, t| dft(r, t) * fix)
        };
        Ok(PilotPlan {
            l_ce,
            l_isac: l_total - l_ce,
            pilot,
            under_determined: l_ce < n_tx,
        })
    }

    /// Pilot-phase covariance `P P^H / L_CE`.
    pub fn pilot_covariance(&self) -> CMat {
        (&self.pilot * self.pilot.adjoint()) * c(1.0 / self.l_ce as f64)
    }

    /// `Y = H P + N` with `N ~ CN(0, σ² I)`; `σ² = 0` is noiseless.
    pub fn observe(&self, h: &CMat, noise_power: f64, rng: &mut ChaCha8Rng) -> CMat {
        let mut y = h * &self.pilot;
        if noise_power > 0.0 {
            for z in y.iter_mut() {
                *z += complex_gaussian(rng, noise_power);
            }
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsEstimate {
    pub channel: CMat,
    pub under_determined: bool,
}

/// `Ĥ = Y P^H (P P^H)^{-1}`, through the pseudo-inverse when the pilot
/// Gram is singular.
pub fn ls_estimate(plan: &PilotPlan, observation: &CMat, noise_power: f64) -> Result<LsEstimate> {
    if observation.ncols() != plan.l_ce {
        return Err(Error::Dimension(format!(
            "observation has {} columns, plan has {} pilot symbols",
            observation.ncols(),
            plan.l_ce
        )));
    }
    if !(noise_power >= 0.0) {
        return Err(Error::invalid("noise_power", "must be nonnegative"));
    }
    let pinv = plan
        .pilot
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Degenerate(format!("pilot pseudo-inverse: {e}")))?;
    Ok(LsEstimate {
        channel: observation * pinv,
        under_determined: plan.under_determined,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawOutcome {
    pub location: usize,
    pub angle: f64,
    pub estimated_channel: CMat,
    pub pcrb: f64,
    /// Rate of the designed covariance on the true channel.
    pub achieved_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub scheme: Scheme,
    pub draws: Vec<DrawOutcome>,
    /// Mean PCRB over draws.
    pub pcrb: f64,
    pub achieved_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkSettings {
    /// Number of realised user locations averaged over.
    pub draws: usize,
    pub seed: u64,
    /// Skip pilot noise so the estimate equals the true channel.
    pub noiseless_estimates: bool,
}

impl BenchmarkSettings {
    pub fn new(seed: u64) -> Self {
        BenchmarkSettings {
            draws: 1,
            seed,
            noiseless_estimates: false,
        }
    }
}

struct Design {
    location: usize,
    angle: f64,
    estimated: CMat,
    w: CMat,
    rate: f64,
}

fn design(spec: &ProblemSpec, plan: &PilotPlan, settings: &BenchmarkSettings, draw: u64) -> Result<Design> {
    let ens = &spec.ensemble;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(draw);
    let pick = WeightedIndex::new(ens.masses()).map_err(|e| Error::invalid("pmf", e.to_string()))?;
    let k = pick.sample(&mut rng);
    let h = &ens.channels[k];
    let noise = if settings.noiseless_estimates {
        0.0
    } else {
        ens.noise_power
    };
    let y = plan.observe(h, noise, &mut rng);
    let estimated = ls_estimate(plan, &y, noise)?.channel;
    let known = UserEnsemble::from_channels(
        UserPmf::point(ens.pmf.angles[k]),
        vec![estimated.clone()],
        ens.noise_power,
    )?;
    let sub = ProblemSpec::new(
        spec.kernel.with_symbols(plan.l_isac),
        known,
        spec.power_budget,
        spec.rate_target,
    )?
    .with_tolerances(spec.tolerances);
    let report = solve_p1(&sub)?;
    let w = report.w_opt.into_matrix();
    let truth = UserEnsemble::from_channels(UserPmf::point(ens.pmf.angles[k]), vec![h.clone()], ens.noise_power)?;
    Ok(Design {
        location: k,
        angle: ens.pmf.angles[k],
        estimated,
        rate: expected_rate_unchecked(&w, &truth),
        w,
    })
}

/// PCRB with the true kernel and phase-weighted information.
fn scheme_pcrb(spec: &ProblemSpec, plan: &PilotPlan, scheme: Scheme, w: &CMat) -> f64 {
    let k = &spec.kernel;
    let per_symbol = 2.0 * k.gamma / k.noise_power;
    let mut info = plan.l_isac as f64 * k.objective(w);
    if scheme == Scheme::PilotsReused {
        info += plan.l_ce as f64 * k.objective(&plan.pilot_covariance());
    }
    1.0 / (k.prior_fisher + per_symbol * info)
}

fn check(spec: &ProblemSpec, plan: &PilotPlan, settings: &BenchmarkSettings) -> Result<()> {
    if settings.draws == 0 {
        return Err(Error::invalid("draws", "need at least one draw"));
    }
    if plan.l_ce + plan.l_isac != spec.kernel.l_symbols {
        return Err(Error::invalid(
            "pilot_plan",
            format!(
                "L_CE + L_ISAC = {} but L = {}",
                plan.l_ce + plan.l_isac,
                spec.kernel.l_symbols
            ),
        ));
    }
    if plan.pilot.nrows() != spec.n_tx() {
        return Err(Error::Dimension("pilot rows differ from transmit antennas".into()));
    }
    Ok(())
}

fn report(spec: &ProblemSpec, plan: &PilotPlan, scheme: Scheme, designs: &[Design]) -> BenchmarkReport {
    let draws: Vec<DrawOutcome> = designs
        .iter()
        .map(|d| DrawOutcome {
            location: d.location,
            angle: d.angle,
            estimated_channel: d.estimated.clone(),
            pcrb: scheme_pcrb(spec, plan, scheme, &d.w),
            achieved_rate: d.rate,
        })
        .collect();
    let n = draws.len() as f64;
    BenchmarkReport {
        scheme,
        pcrb: draws.iter().map(|d| d.pcrb).sum::<f64>() / n,
        achieved_rate: draws.iter().map(|d| d.achieved_rate).sum::<f64>() / n,
        draws,
    }
}

fn designs(spec: &ProblemSpec, plan: &PilotPlan, settings: &BenchmarkSettings) -> Result<Vec<Design>> {
    check(spec, plan, settings)?;
    (0..settings.draws as u64)
        .map(|d| design(spec, plan, settings, d))
        .collect()
}

/// Both schemes share the designed covariances; returns `(scheme 1, scheme 2)`.
pub fn run_schemes(
    spec: &ProblemSpec,
    plan: &PilotPlan,
    settings: &BenchmarkSettings,
) -> Result<(BenchmarkReport, BenchmarkReport)> {
    let d = designs(spec, plan, settings)?;
    Ok((
        report(spec, plan, Scheme::PilotsDiscarded, &d),
        report(spec, plan, Scheme::PilotsReused, &d),
    ))
}

pub fn run_scheme1(spec: &ProblemSpec, plan: &PilotPlan, settings: &BenchmarkSettings) -> Result<BenchmarkReport> {
    Ok(report(
        spec,
        plan,
        Scheme::PilotsDiscarded,
        &designs(spec, plan, settings)?,
    ))
}

pub fn run_scheme2(spec: &ProblemSpec, plan: &PilotPlan, settings: &BenchmarkSettings) -> Result<BenchmarkReport> {
    Ok(report(
        spec,
        plan,
        Scheme::PilotsReused,
        &designs(spec, plan, settings)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_ensemble, ChannelParams};
    use crate::geometry::ArrayConfig;
    use crate::priors::{default_user_support, discretize_user_pmf, quadrature_grid, AngularPrior, ReflectionPrior};
    use crate::sensing::build_kernel;

    fn spec(config: ArrayConfig, params: ChannelParams, rate: f64) -> ProblemSpec {
        let prior = AngularPrior::new(-0.6, 1e-3).unwrap();
        let grid = quadrature_grid(&prior, 64).unwrap();
        let kernel = build_kernel(&prior, &grid, &config, &ReflectionPrior::new(2e-14).unwrap(), 25, 1e-12).unwrap();
        let pmf = discretize_user_pmf(-0.3, 1e-3, 5, default_user_support(-0.3, 1e-3)).unwrap();
        let ens = generate_ensemble(&pmf, &config, &params, 3).unwrap();
        ProblemSpec::new(kernel, ens, 1.0, rate).unwrap()
    }

    fn max_abs(m: &CMat) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn pilot_gram_is_scaled_identity() {
        let plan = PilotPlan::new(10, 25, 10, 1.0).unwrap();
        assert_eq!((plan.l_ce, plan.l_isac), (10, 15));
        let gram = &plan.pilot * plan.pilot.adjoint();
        assert!(max_abs(&(gram - CMat::identity(10, 10) * c(1.0))) < 1e-10);
        let wp = plan.pilot_covariance();
        assert!(max_abs(&(wp - CMat::identity(10, 10) * c(0.1))) < 1e-12);
        let wide = PilotPlan::new(4, 25, 12, 2.0).unwrap();
        let g = &wide.pilot * wide.pilot.adjoint();
        assert!(max_abs(&(g - CMat::identity(4, 4) * c(6.0))) < 1e-10);
    }

    #[test]
    fn short_pilots_flagged() {
        let plan = PilotPlan::new(10, 25, 6, 1.0).unwrap();
        assert!(plan.under_determined);
        for t in 0..6 {
            assert!((plan.pilot.column(t).norm_squared() - 1.0).abs() < 1e-12);
        }
        let y = CMat::zeros(8, 6);
        assert!(ls_estimate(&plan, &y, 0.0).unwrap().under_determined);
        assert!(PilotPlan::new(10, 25, 25, 1.0).is_err());
    }

    #[test]
    fn noiseless_ls_is_exact() {
        let s = spec(ArrayConfig::default(), ChannelParams::default(), 6.0);
        let plan = PilotPlan::new(10, 25, 10, 1.0).unwrap();
        let h = &s.ensemble.channels[2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = plan.observe(h, 0.0, &mut rng);
        let est = ls_estimate(&plan, &y, 0.0).unwrap();
        assert!(max_abs(&(est.channel - h)) <= 1e-10 * max_abs(h));
    }

    #[test]
    fn ls_error_variance_matches_closed_form() {
        let plan = PilotPlan::new(10, 25, 10, 1.0).unwrap();
        let h = CMat::zeros(8, 10);
        let noise = 1e-12;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut acc = 0.0;
        let mut count = 0.0;
        while count < 1e4 {
            let y = plan.observe(&h, noise, &mut rng);
            let est = ls_estimate(&plan, &y, noise).unwrap().channel;
            acc += est.norm_squared();
            count += est.len() as f64;
        }
        let expect = noise * 10.0 / (1.0 * 10.0);
        assert!((acc / count / expect - 1.0).abs() < 0.1, "{}", acc / count);
    }

    #[test]
    fn perfect_estimates_reduce_to_known_channel_design() {
        let params = ChannelParams {
            n_scatter: 0,
            ..ChannelParams::default()
        };
        let s = spec(ArrayConfig::default(), params, 6.0);
        let plan = PilotPlan::new(10, 25, 10, 1.0).unwrap();
        let settings = BenchmarkSettings {
            draws: 1,
            seed: 5,
            noiseless_estimates: true,
        };
        let r = run_scheme1(&s, &plan, &settings).unwrap();
        let d = &r.draws[0];
        let known = UserEnsemble::from_channels(
            UserPmf::point(d.angle),
            vec![s.ensemble.channels[d.location].clone()],
            s.ensemble.noise_power,
        )
        .unwrap();
        let direct = ProblemSpec::new(s.kernel.with_symbols(15), known, 1.0, 6.0).unwrap();
        let expect = solve_p1(&direct).unwrap().pcrb;
        assert!((d.pcrb - expect).abs() <= 1e-9 * expect, "{} vs {expect}", d.pcrb);
    }

    #[test]
    fn reused_pilots_never_hurt() {
        let s = spec(ArrayConfig::default(), ChannelParams::default(), 6.0);
        let plan = PilotPlan::new(10, 25, 10, 1.0).unwrap();
        let settings = BenchmarkSettings {
            draws: 3,
            seed: 2,
            noiseless_estimates: false,
        };
        let (one, two) = run_schemes(&s, &plan, &settings).unwrap();
        assert_eq!(one.scheme.number(), 1);
        assert_eq!(two.scheme.number(), 2);
        for (a, b) in one.draws.iter().zip(&two.draws) {
            assert!(b.pcrb <= a.pcrb);
            assert!(a.pcrb > 0.0);
        }
        let proposed = solve_p1(&s).unwrap().pcrb;
        assert!(proposed <= two.pcrb, "{proposed} vs {}", two.pcrb);
    }

    #[test]
    fn plan_must_match_frame() {
        let s = spec(ArrayConfig::default(), ChannelParams::default(), 6.0);
        let plan = PilotPlan::new(10, 30, 10, 1.0).unwrap();
        assert!(run_scheme1(&s, &plan, &BenchmarkSettings::new(0)).is_err());
    }
}
