//! Echo simulation and maximum a posteriori angle estimation.
//!
//! The reflection coefficient is marginalised in closed form: with
//! `m(θ) = vec(b(θ) a(θ)^H X)` and `y = α m + n`, `α ~ CN(0, s)`,
//! `n ~ CN(0, σ² I)`, the log posterior up to a constant is
//! `ln p(θ) - ln(1 + s‖m‖²/σ²) + s|m^H y|² / (σ²(σ² + s‖m‖²))`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::channel::complex_gaussian;
use crate::error::{Error, Result};
use crate::geometry::{check_angle, steering_raw, ArrayConfig};
use crate::linalg::{c, numerical_rank, CMat, CVec, HermitianEigen, TransmitCovariance};
use crate::priors::{AngularPrior, ReflectionPrior};
use crate::sensing::{pcrb_theta, SensingKernel};

pub const DEFAULT_GRID_POINTS: usize = 4001;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoTruth {
    pub theta: f64,
    pub alpha: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoBatch {
    /// `N_R × L` received samples.
    pub observations: CMat,
    /// `N_T × L` transmitted samples.
    pub waveform: CMat,
    pub truth: EchoTruth,
    pub noise_power: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseReport {
    pub mse: f64,
    pub trials: usize,
    pub ci95_halfwidth: f64,
    pub pcrb_reference: f64,
}

/// `X = √L V diag(√λ) S^H` with `S` the first `rank(W)` columns of the
/// unitary DFT of size `L`, so that `X X^H / L = W`.
pub fn synthesize_waveform(w: &TransmitCovariance, l: usize) -> Result<CMat> {
    let m = w.matrix();
    let rank = numerical_rank(m, 1e-12);
    if l < rank {
        return Err(Error::invalid(
            "l_symbols",
            format!("{l} symbols cannot carry a rank-{rank} covariance"),
        ));
    }
    let n = m.nrows();
    let eig = HermitianEigen::new(m);
    let norm = 1.0 / (l as f64).sqrt();
    let mut x = CMat::zeros(n, l);
    for i in 0..rank {
        let amp = (eig.values[i].max(0.0) * l as f64).sqrt();
        let v = eig.vector(i);
        // row i of S^H is conj of DFT column i
        let s_row = CVec::from_fn(l, |t, _| {
            Complex64::from_polar(norm, 2.0 * std::f64::consts::PI * (t * i % l) as f64 / l as f64)
        });
        x += (&v * s_row.transpose()) * c(amp);
    }
    Ok(x)
}

/// Draws `Y = α b(θ) a(θ)^H X + N` with the kernel's sensing noise power.
pub fn simulate_echo(
    w: &TransmitCovariance,
    theta: f64,
    alpha: Complex64,
    kernel: &SensingKernel,
    seed: u64,
) -> Result<EchoBatch> {
    simulate_echo_with_noise(w, theta, alpha, kernel, kernel.noise_power, seed)
}

/// As [`simulate_echo`] with an explicit noise power; zero gives the
/// noiseless echo.
pub fn simulate_echo_with_noise(
    w: &TransmitCovariance,
    theta: f64,
    alpha: Complex64,
    kernel: &SensingKernel,
    noise_power: f64,
    seed: u64,
) -> Result<EchoBatch> {
    check_angle(theta)?;
    if !(noise_power.is_finite() && noise_power >= 0.0) {
        return Err(Error::invalid(
            "noise_power",
            format!("must be nonnegative, got {noise_power}"),
        ));
    }
    let x = synthesize_waveform(w, kernel.l_symbols)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(echo_from_waveform(
        x,
        theta,
        alpha,
        &kernel.config,
        noise_power,
        seed,
        &mut rng,
    ))
}

fn echo_from_waveform(
    x: CMat,
    theta: f64,
    alpha: Complex64,
    config: &ArrayConfig,
    noise_power: f64,
    seed: u64,
    rng: &mut impl Rng,
) -> EchoBatch {
    let a = steering_raw(config.n_tx, theta);
    let b = steering_raw(config.n_rx, theta);
    let mut y = (&b * (a.adjoint() * &x)) * alpha;
    if noise_power > 0.0 {
        for z in y.iter_mut() {
            *z += complex_gaussian(rng, noise_power);
        }
    }
    EchoBatch {
        observations: y,
        waveform: x,
        truth: EchoTruth { theta, alpha },
        noise_power,
        seed,
    }
}

/// Grid-search MAP estimator with precomputed steering vectors.
#[derive(Debug, Clone)]
pub struct MapEstimator {
    prior: AngularPrior,
    reflection_variance: f64,
    n_rx: usize,
    grid: Vec<f64>,
    ln_prior: Vec<f64>,
    tx: Vec<CVec>,
    rx: Vec<CVec>,
}

impl MapEstimator {
    /// Uniform grid of `grid_points` angles over the prior support.
    pub fn new(
        prior: &AngularPrior,
        reflection: &ReflectionPrior,
        config: &ArrayConfig,
        grid_points: usize,
    ) -> Result<Self> {
        if grid_points < 3 {
            return Err(Error::invalid("grid_points", "need at least 3 grid points"));
        }
        let (lo, hi) = prior.support();
        let step = (hi - lo) / (grid_points - 1) as f64;
        let grid: Vec<f64> = (0..grid_points).map(|i| lo + step * i as f64).collect();
        Ok(MapEstimator {
            prior: *prior,
            reflection_variance: reflection.variance,
            n_rx: config.n_rx,
            ln_prior: grid.iter().map(|&t| prior.ln_pdf(t)).collect(),
            tx: grid.iter().map(|&t| steering_raw(config.n_tx, t)).collect(),
            rx: grid.iter().map(|&t| steering_raw(config.n_rx, t)).collect(),
            grid,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn prior(&self) -> &AngularPrior {
        &self.prior
    }

    /// Log posterior (up to a constant) at every grid angle.
    pub fn scores(&self, batch: &EchoBatch) -> Vec<f64> {
        let x = &batch.waveform;
        let corr = &batch.observations * x.adjoint();
        let gram = x * x.adjoint();
        let s = self.reflection_variance;
        let sigma2 = batch.noise_power;
        let l_rx = self.n_rx as f64;
        let (nr, nt) = corr.shape();
        let mut ca = vec![Complex64::new(0.0, 0.0); nr];
        let mut ga = vec![Complex64::new(0.0, 0.0); nt];
        (0..self.grid.len())
            .map(|i| {
                let a = self.tx[i].as_slice();
                let b = self.rx[i].as_slice();
                ca.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
                ga.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
                for (col, &aj) in a.iter().enumerate() {
                    for (r, z) in ca.iter_mut().enumerate() {
                        *z += corr[(r, col)] * aj;
                    }
                    for (r, z) in ga.iter_mut().enumerate() {
                        *z += gram[(r, col)] * aj;
                    }
                }
                let proj: Complex64 = b.iter().zip(&ca).map(|(bi, z)| bi.conj() * z).sum();
                let energy = l_rx * a.iter().zip(&ga).map(|(ai, z)| (ai.conj() * z).re).sum::<f64>();
                if sigma2 == 0.0 {
                    if energy > 0.0 {
                        proj.norm_sqr() / energy
                    } else {
                        self.ln_prior[i]
                    }
                } else {
                    self.ln_prior[i] - (s * energy / sigma2).ln_1p()
                        + s * proj.norm_sqr() / (sigma2 * (sigma2 + s * energy))
                }
            })
            .collect()
    }

    /// Grid argmax refined by one parabolic step.
    pub fn estimate(&self, batch: &EchoBatch) -> f64 {
        let scores = self.scores(batch);
        let mut best = 0;
        for (i, &v) in scores.iter().enumerate() {
            if v > scores[best] {
                best = i;
            }
        }
        if best == 0 || best + 1 == scores.len() {
            return self.grid[best];
        }
        let (f0, f1, f2) = (scores[best - 1], scores[best], scores[best + 1]);
        let denom = f0 - 2.0 * f1 + f2;
        let step = self.grid[1] - self.grid[0];
        if denom < 0.0 {
            self.grid[best] + 0.5 * step * (f0 - f2) / denom
        } else {
            self.grid[best]
        }
    }
}

/// One-shot MAP estimate over `grid_points` angles.
pub fn map_estimate(
    batch: &EchoBatch,
    prior: &AngularPrior,
    reflection: &ReflectionPrior,
    config: &ArrayConfig,
    grid_points: usize,
) -> Result<f64> {
    Ok(MapEstimator::new(prior, reflection, config, grid_points)?.estimate(batch))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloSettings {
    pub trials: usize,
    pub seed: u64,
    pub grid_points: usize,
}

impl MonteCarloSettings {
    pub fn new(trials: usize, seed: u64) -> Self {
        MonteCarloSettings {
            trials,
            seed,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

fn draw_theta(prior: &AngularPrior, rng: &mut impl Rng) -> f64 {
    let (lo, hi) = prior.support();
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let t = prior.mean + prior.std_dev() * z;
        if t >= lo && t <= hi {
            return t;
        }
    }
}

/// Squared MAP error of one trial; trial `t` uses stream `t` of the seed.
fn trial_error(estimator: &MapEstimator, x: &CMat, kernel: &SensingKernel, seed: u64, trial: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let theta = draw_theta(&kernel.prior, &mut rng);
    let alpha = complex_gaussian(&mut rng, kernel.reflection_variance);
    let batch = echo_from_waveform(
        x.clone(),
        theta,
        alpha,
        &kernel.config,
        kernel.noise_power,
        seed,
        &mut rng,
    );
    let err = estimator.estimate(&batch) - theta;
    err * err
}

/// Compensated sum.
fn neumaier(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Bayesian MSE of the MAP estimator under `W`, with angle and reflection
/// drawn from their priors in every trial.
pub fn monte_carlo_mse(
    w: &TransmitCovariance,
    kernel: &SensingKernel,
    settings: &MonteCarloSettings,
) -> Result<MseReport> {
    if settings.trials < 50 {
        return Err(Error::invalid(
            "trials",
            format!("need at least 50 trials, got {}", settings.trials),
        ));
    }
    let pcrb_reference = pcrb_theta(kernel, w.matrix())?;
    let x = synthesize_waveform(w, kernel.l_symbols)?;
    let reflection = ReflectionPrior::new(kernel.reflection_variance)?;
    let estimator = MapEstimator::new(&kernel.prior, &reflection, &kernel.config, settings.grid_points)?;
    let run = |t: u64| trial_error(&estimator, &x, kernel, settings.seed, t);
    #[cfg(feature = "parallel")]
    let errors: Vec<f64> = (0..settings.trials as u64).into_par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let errors: Vec<f64> = (0..settings.trials as u64).map(run).collect();
    let n = errors.len() as f64;
    let mse = neumaier(errors.iter().copied()) / n;
    let var = neumaier(errors.iter().map(|e| (e - mse) * (e - mse))) / (n - 1.0);
    Ok(MseReport {
        mse,
        trials: settings.trials,
        ci95_halfwidth: 1.96 * (var / n).sqrt(),
        pcrb_reference,
    })
}
