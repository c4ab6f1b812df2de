//! Geometric LoS + NLoS user channels and log-det rates.

use std::f64::consts::{FRAC_PI_2, LN_2};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{steering_raw, ArrayConfig};
use crate::linalg::{c, checked_psd, ln_det_hpd, CMat};
use crate::priors::UserPmf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub ref_gain_db: f64,
    pub user_distance_m: f64,
    pub pathloss_exp: f64,
    pub n_scatter: usize,
    pub los_nlos_ratio_db: f64,
    /// Receiver noise power at the user, watts.
    pub noise_power: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            ref_gain_db: -30.0,
            user_distance_m: 500.0,
            pathloss_exp: 3.2,
            n_scatter: 8,
            los_nlos_ratio_db: 0.8,
            noise_power: 1e-12,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.user_distance_m.is_finite() && self.user_distance_m > 0.0) {
            return Err(Error::invalid("user_distance_m", "must be positive"));
        }
        if !(self.noise_power.is_finite() && self.noise_power > 0.0) {
            return Err(Error::invalid("noise_power", "must be positive"));
        }
        if !self.pathloss_exp.is_finite() || !self.ref_gain_db.is_finite() || !self.los_nlos_ratio_db.is_finite() {
            return Err(Error::invalid("channel", "gains must be finite"));
        }
        Ok(())
    }

    /// `β_C = β₀ / r_U^η`.
    pub fn path_gain(&self) -> f64 {
        db_to_linear(self.ref_gain_db) * self.user_distance_m.powf(-self.pathloss_exp)
    }

    /// Per-path NLoS variance `β_C / (Λ_C N_sc)` with `Λ_C` in linear scale.
    pub fn nlos_path_variance(&self) -> f64 {
        if self.n_scatter == 0 {
            return 0.0;
        }
        self.path_gain() / (db_to_linear(self.los_nlos_ratio_db) * self.n_scatter as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserEnsemble {
    pub pmf: UserPmf,
    pub channels: Vec<CMat>,
    pub noise_power: f64,
    pub seed: u64,
}

impl UserEnsemble {
    /// Builds an ensemble from explicit channel matrices.
    pub fn from_channels(pmf: UserPmf, channels: Vec<CMat>, noise_power: f64) -> Result<Self> {
        if pmf.len() != channels.len() {
            return Err(Error::Dimension(format!(
                "{} masses but {} channels",
                pmf.len(),
                channels.len()
            )));
        }
        if channels.is_empty() {
            return Err(Error::invalid("channels", "ensemble is empty"));
        }
        let cols = channels[0].ncols();
        if channels.iter().any(|h| h.ncols() != cols) {
            return Err(Error::Dimension("channels disagree on transmit dimension".into()));
        }
        if !(noise_power > 0.0) {
            return Err(Error::invalid("noise_power", "must be positive"));
        }
        Ok(UserEnsemble {
            pmf,
            channels,
            noise_power,
            seed: 0,
        })
    }

    pub fn n_tx(&self) -> usize {
        self.channels[0].ncols()
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn masses(&self) -> &[f64] {
        &self.pmf.masses
    }

    /// `Σ_k rank(H_k)` at relative threshold `1e-10`.
    pub fn total_channel_rank(&self) -> usize {
        self.channels
            .iter()
            .map(|h| crate::linalg::numerical_rank(&h.ad_mul(h), 1e-10))
            .sum()
    }
}

pub(crate) fn complex_gaussian(rng: &mut impl Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

pub(crate) fn uniform_angle(rng: &mut impl Rng) -> f64 {
    rng.random_range(-FRAC_PI_2..FRAC_PI_2)
}

/// `H_k = √β_C b_U(θ_k) a(θ_k)^H + Σ_n η b_U(φ_U) a(φ_T)^H`, scatterers
/// drawn independently per location.
pub fn generate_ensemble(
    pmf: &UserPmf,
    config: &ArrayConfig,
    params: &ChannelParams,
    seed: u64,
) -> Result<UserEnsemble> {
    config.validate()?;
    params.validate()?;
    if pmf.is_empty() {
        return Err(Error::invalid("pmf", "no user locations"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let los_amp = params.path_gain().sqrt();
    let nlos_var = params.nlos_path_variance();
    let channels = pmf
        .angles
        .iter()
        .map(|&theta| {
            let mut h = steering_raw(config.n_user, theta) * steering_raw(config.n_tx, theta).adjoint() * c(los_amp);
            for _ in 0..params.n_scatter {
                let aoa = uniform_angle(&mut rng);
                let aod = uniform_angle(&mut rng);
                let eta = complex_gaussian(&mut rng, nlos_var);
                h += steering_raw(config.n_user, aoa) * steering_raw(config.n_tx, aod).adjoint() * eta;
            }
            h
        })
        .collect();
    Ok(UserEnsemble {
        pmf: pmf.clone(),
        channels,
        noise_power: params.noise_power,
        seed,
    })
}

/// `log₂ det(I + H W H^H / σ²)` without input validation.
pub(crate) fn rate_unchecked(w: &CMat, h: &CMat, noise_power: f64) -> f64 {
    let n = h.nrows();
    let s = CMat::identity(n, n) + (h * w * h.adjoint()) * c(1.0 / noise_power);
    ln_det_hpd(&s).max(0.0) / LN_2
}

pub(crate) fn expected_rate_unchecked(w: &CMat, ensemble: &UserEnsemble) -> f64 {
    ensemble
        .channels
        .iter()
        .zip(ensemble.masses())
        .map(|(h, &p)| {
            if p == 0.0 {
                0.0
            } else {
                p * rate_unchecked(w, h, ensemble.noise_power)
            }
        })
        .sum()
}

pub fn rate_at(w: &CMat, h: &CMat, noise_power: f64) -> Result<f64> {
    if w.nrows() != h.ncols() {
        return Err(Error::Dimension(format!(
            "covariance is {}x{}, channel has {} columns",
            w.nrows(),
            w.ncols(),
            h.ncols()
        )));
    }
    let w = checked_psd(w)?;
    Ok(rate_unchecked(&w, h, noise_power))
}

/// `Σ_k p_k log₂ det(I + H_k W H_k^H / σ²)`.
pub fn expected_rate(w: &CMat, ensemble: &UserEnsemble) -> Result<f64> {
    if w.nrows() != ensemble.n_tx() {
        return Err(Error::Dimension(format!(
            "covariance is {}x{}, ensemble expects {}",
            w.nrows(),
            w.ncols(),
            ensemble.n_tx()
        )));
    }
    let w = checked_psd(w)?;
    Ok(expected_rate_unchecked(&w, ensemble))
}
