//! Sensing kernel and posterior Fisher information for the target angle.
//!
//! The kernel holds the prior-averaged matrices
//! `A₁ = E[Ṁ^H Ṁ]` and `A₂ = E[M^H M]` together with `γ = E|α|²`, the prior
//! Fisher information, the number of symbols `L` and the echo noise power.
//! For any transmit covariance `W` the angle bound is
//!
//! ```text
//! PCRB_θ(W) = 1 / (J_prior + (2 L γ / σ_S²) tr(A₁ W))
//! ```

use crate::error::{Error, Result};
use crate::geometry::{response_pair_raw, ArrayConfig};
use crate::linalg::{c, checked_psd, hermitize, trace_product, CMat};
use crate::priors::{prior_fisher, AngularPrior, QuadratureGrid, ReflectionPrior};

#[derive(Debug, Clone, PartialEq)]
pub struct SensingKernel {
    pub a1: CMat,
    pub a2: CMat,
    pub gamma: f64,
    pub prior_fisher: f64,
    pub l_symbols: usize,
    pub noise_power: f64,
    pub reflection_variance: f64,
    pub prior: AngularPrior,
    pub config: ArrayConfig,
}

/// Which response derivative the kernel integrates. `CentralDifference` only
/// exists to cross-check the analytic derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeRule {
    Analytic,
    CentralDifference { step_exp10: i32 },
}

pub fn build_kernel(
    prior: &AngularPrior,
    grid: &QuadratureGrid,
    config: &ArrayConfig,
    reflection: &ReflectionPrior,
    l_symbols: usize,
    noise_power: f64,
) -> Result<SensingKernel> {
    build_kernel_with(
        prior,
        grid,
        config,
        reflection,
        l_symbols,
        noise_power,
        DerivativeRule::Analytic,
    )
}

pub fn build_kernel_with(
    prior: &AngularPrior,
    grid: &QuadratureGrid,
    config: &ArrayConfig,
    reflection: &ReflectionPrior,
    l_symbols: usize,
    noise_power: f64,
    rule: DerivativeRule,
) -> Result<SensingKernel> {
    config.validate()?;
    if grid.prior() != prior {
        return Err(Error::invalid(
            "grid",
            format!("grid was built for {:?}, kernel requested {:?}", grid.prior(), prior),
        ));
    }
    if l_symbols == 0 {
        return Err(Error::invalid("l_symbols", "need at least one symbol"));
    }
    if !(noise_power.is_finite() && noise_power > 0.0) {
        return Err(Error::invalid(
            "noise_power",
            format!("must be positive, got {noise_power}"),
        ));
    }
    let n = config.n_tx;
    let mut a1 = CMat::zeros(n, n);
    let mut a2 = CMat::zeros(n, n);
    for (&theta, q) in grid.nodes.iter().zip(grid.probability_weights()) {
        let r = response_pair_raw(theta, config);
        let m_dot = match rule {
            DerivativeRule::Analytic => r.m_dot,
            DerivativeRule::CentralDifference { step_exp10 } => {
                let h = 10f64.powi(step_exp10);
                (response_pair_raw(theta + h, config).m - response_pair_raw(theta - h, config).m) * c(0.5 / h)
            }
        };
        a1 += m_dot.ad_mul(&m_dot) * c(q);
        a2 += r.m.ad_mul(&r.m) * c(q);
    }
    Ok(SensingKernel {
        a1: hermitize(&a1),
        a2: hermitize(&a2),
        gamma: reflection.mean_square(),
        prior_fisher: prior_fisher(prior),
        l_symbols,
        noise_power,
        reflection_variance: reflection.variance,
        prior: *prior,
        config: *config,
    })
}

impl SensingKernel {
    /// Replaces `γ` for a non-Gaussian zero-mean reflection prior.
    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid("gamma", format!("must be positive, got {gamma}")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_symbols(&self, l_symbols: usize) -> Self {
        SensingKernel {
            l_symbols,
            ..self.clone()
        }
    }

    /// `2 L γ / σ_S²`.
    pub fn information_scale(&self) -> f64 {
        2.0 * self.l_symbols as f64 * self.gamma / self.noise_power
    }

    /// `tr(A₁ W)` for a Hermitian `W`; no PSD check.
    pub fn objective(&self, w: &CMat) -> f64 {
        trace_product(&self.a1, w)
    }

    /// `J_prior + (2Lγ/σ_S²) tr(A₁W)`; no PSD check.
    pub fn theta_information(&self, w: &CMat) -> f64 {
        self.prior_fisher + self.information_scale() * self.objective(w)
    }

    fn check_dims(&self, w: &CMat) -> Result<()> {
        if w.shape() != self.a1.shape() {
            return Err(Error::Dimension(format!(
                "covariance is {}x{}, kernel expects {}x{}",
                w.nrows(),
                w.ncols(),
                self.a1.nrows(),
                self.a1.ncols()
            )));
        }
        Ok(())
    }
}

/// Posterior CRB of the angle for covariance `w`.
pub fn pcrb_theta(kernel: &SensingKernel, w: &CMat) -> Result<f64> {
    kernel.check_dims(w)?;
    let w = checked_psd(w)?;
    Ok(1.0 / kernel.theta_information(&w))
}

/// Multi-slot bound: the observation term uses the slot-average covariance.
pub fn pcrb_theta_multislot(kernel: &SensingKernel, slots: &[CMat]) -> Result<f64> {
    if slots.is_empty() {
        return Err(Error::invalid("slots", "need at least one slot"));
    }
    let mut info = 0.0;
    for w in slots {
        kernel.check_dims(w)?;
        let w = checked_psd(w)?;
        info += kernel.objective(&w);
    }
    Ok(1.0 / (kernel.prior_fisher + kernel.information_scale() * info / slots.len() as f64))
}

/// Posterior Fisher information for `(θ, α_R, α_I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pfim {
    pub f_theta_theta: f64,
    pub f_alpha_alpha: [[f64; 2]; 2],
    pub cross_block: [f64; 2],
}

impl Pfim {
    /// Bound on the reflection coefficient components; diagnostic only.
    pub fn alpha_bound(&self) -> [[f64; 2]; 2] {
        let [[a, b], [c, d]] = self.f_alpha_alpha;
        let det = a * d - b * c;
        [[d / det, -b / det], [-c / det, a / det]]
    }

    pub fn theta_bound(&self) -> f64 {
        1.0 / self.f_theta_theta
    }
}

pub fn assemble_pfim(kernel: &SensingKernel, w: &CMat) -> Result<Pfim> {
    kernel.check_dims(w)?;
    let w = checked_psd(w)?;
    let obs_alpha = 2.0 * kernel.l_symbols as f64 / kernel.noise_power * trace_product(&kernel.a2, &w);
    // circular Gaussian: score of each real component has variance 2/s
    let prior_alpha = 2.0 / kernel.reflection_variance;
    let diag = obs_alpha + prior_alpha;
    Ok(Pfim {
        f_theta_theta: kernel.theta_information(&w),
        f_alpha_alpha: [[diag, 0.0], [0.0, diag]],
        cross_block: [0.0, 0.0],
    })
}
