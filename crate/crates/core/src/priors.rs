//! Angular priors: the Gaussian target prior with its quadrature grid, the
//! discretised user PMF, the reflection-coefficient prior, and the Gaussian
//! Kullback-Leibler divergence.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of every truncated support, in standard deviations.
pub const SUPPORT_SIGMAS: f64 = 6.0;
pub const DEFAULT_QUADRATURE_NODES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularPrior {
    pub mean: f64,
    pub variance: f64,
}

impl AngularPrior {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::invalid("variance", format!("must be positive, got {variance}")));
        }
        crate::geometry::check_angle(mean)?;
        Ok(AngularPrior { mean, variance })
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn pdf(&self, theta: f64) -> f64 {
        let z = theta - self.mean;
        (-(z * z) / (2.0 * self.variance)).exp() / (2.0 * PI * self.variance).sqrt()
    }

    pub fn ln_pdf(&self, theta: f64) -> f64 {
        let z = theta - self.mean;
        -(z * z) / (2.0 * self.variance) - 0.5 * (2.0 * PI * self.variance).ln()
    }

    /// `∂ ln p / ∂θ`.
    pub fn score(&self, theta: f64) -> f64 {
        -(theta - self.mean) / self.variance
    }

    /// `[mean - 6σ, mean + 6σ]` clipped to `[-π/2, π/2]`.
    pub fn support(&self) -> (f64, f64) {
        let half = SUPPORT_SIGMAS * self.std_dev();
        ((self.mean - half).max(-FRAC_PI_2), (self.mean + half).min(FRAC_PI_2))
    }
}

/// Fisher information carried by the prior, `E[(∂ ln p/∂θ)²] = 1/σ²`.
pub fn prior_fisher(prior: &AngularPrior) -> f64 {
    1.0 / prior.variance
}

/// Quadrature rule for `∫ f(θ) p(θ) dθ ≈ Σ w_i p(θ_i) f(θ_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    prior: AngularPrior,
}

impl QuadratureGrid {
    pub fn prior(&self) -> &AngularPrior {
        &self.prior
    }

    /// Probability weights `w_i p(θ_i)`; they sum to one.
    pub fn probability_weights(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * self.prior.pdf(x))
            .collect()
    }

    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(self.probability_weights())
            .map(|(&x, q)| q * f(x))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre grid over the prior's ±6σ support, weights rescaled so the
/// prior mass on the grid is exactly one.
pub fn quadrature_grid(prior: &AngularPrior, n_nodes: usize) -> Result<QuadratureGrid> {
    if n_nodes < 16 {
        return Err(Error::invalid(
            "n_nodes",
            format!("need at least 16 nodes, got {n_nodes}"),
        ));
    }
    let (lo, hi) = prior.support();
    if hi <= lo {
        return Err(Error::Degenerate(format!("empty prior support [{lo}, {hi})")));
    }
    let (x, w) = gauss_legendre(n_nodes);
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let nodes: Vec<f64> = x.iter().map(|t| mid + half * t).collect();
    let mut weights: Vec<f64> = w.iter().map(|t| t * half).collect();
    let mass: f64 = nodes.iter().zip(&weights).map(|(&t, &w)| w * prior.pdf(t)).sum();
    if !(mass > 0.0) {
        return Err(Error::Degenerate("prior has no mass on the grid".into()));
    }
    weights.iter_mut().for_each(|w| *w /= mass);
    Ok(QuadratureGrid {
        nodes,
        weights,
        prior: *prior,
    })
}

/// Discretised Gaussian PMF over the user's candidate angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPmf {
    pub angles: Vec<f64>,
    pub masses: Vec<f64>,
    pub source_mean: f64,
    pub source_variance: f64,
}

impl UserPmf {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Single-atom PMF at `angle`.
    pub fn point(angle: f64) -> Self {
        UserPmf {
            angles: vec![angle],
            masses: vec![1.0],
            source_mean: angle,
            source_variance: 0.0,
        }
    }

    pub fn source_prior(&self) -> Result<AngularPrior> {
        AngularPrior::new(self.source_mean, self.source_variance)
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Default user support: `[mean - 6σ, mean + 6σ]` clipped to `[-π/2, π/2)`.
pub fn default_user_support(mean: f64, variance: f64) -> (f64, f64) {
    let half = SUPPORT_SIGMAS * variance.sqrt();
    ((mean - half).max(-FRAC_PI_2), (mean + half).min(FRAC_PI_2))
}

/// Splits `support` into `k` equal intervals; each interval's Gaussian mass
/// (renormalised to sum to one) is assigned to its centre.
pub fn discretize_user_pmf(mean: f64, variance: f64, k: usize, support: (f64, f64)) -> Result<UserPmf> {
    if k == 0 {
        return Err(Error::invalid("k", "need at least one location"));
    }
    if !(variance.is_finite() && variance > 0.0) {
        return Err(Error::invalid("variance", format!("must be positive, got {variance}")));
    }
    let (lo, hi) = support;
    if !(hi > lo) {
        return Err(Error::invalid("support", format!("zero-width support [{lo}, {hi}]")));
    }
    if lo < -FRAC_PI_2 || hi > FRAC_PI_2 {
        return Err(Error::invalid("support", format!("[{lo}, {hi}] leaves [-pi/2, pi/2)")));
    }
    let sd = variance.sqrt();
    let width = (hi - lo) / k as f64;
    let edge = |i: usize| if i == k { hi } else { lo + width * i as f64 };
    let mut masses: Vec<f64> = (0..k)
        .map(|i| {
            let a = (edge(i) - mean) / sd;
            let b = (edge(i + 1) - mean) / sd;
            // the erf difference stays accurate in both tails
            0.5 * (libm::erf(b / std::f64::consts::SQRT_2) - libm::erf(a / std::f64::consts::SQRT_2))
        })
        .collect();
    let total: f64 = masses.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(format!(
            "Gaussian N({mean}, {variance}) has no mass on [{lo}, {hi}]"
        )));
    }
    masses.iter_mut().for_each(|m| *m /= total);
    let angles = (0..k).map(|i| lo + width * (i as f64 + 0.5)).collect();
    Ok(UserPmf {
        angles,
        masses,
        source_mean: mean,
        source_variance: variance,
    })
}

/// Prior on the complex reflection coefficient: zero-mean circular Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReflectionPrior {
    pub variance: f64,
}

impl ReflectionPrior {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::invalid(
                "reflection_variance",
                format!("must be positive, got {variance}"),
            ));
        }
        Ok(ReflectionPrior { variance })
    }

    /// `E|α|²`.
    pub fn mean_square(&self) -> f64 {
        self.variance
    }
}

/// `KL(p ‖ q)` in nats for two Gaussians.
pub fn kld_gaussian(p: &AngularPrior, q: &AngularPrior) -> f64 {
    let dm = p.mean - q.mean;
    0.5 * (q.variance / p.variance).ln() + (p.variance + dm * dm) / (2.0 * q.variance) - 0.5
}

/// Standard normal CDF, exposed for tests and PMF diagnostics.
pub fn normal_cdf(x: f64, mean: f64, variance: f64) -> f64 {
    std_normal_cdf((x - mean) / variance.sqrt())
}
