//! Half-wavelength uniform linear arrays: steering vectors, their angle
//! derivatives and the round-trip response `M(θ) = b(θ) a(θ)^H`.
//!
//! Element `n` of an `N`-element array sits at offset `d_n = (2n - N + 1) / 2`
//! half-wavelengths from the array centre, so the entry is
//! `exp(j π d_n sin θ)`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_user: usize,
}

impl ArrayConfig {
    pub fn new(n_tx: usize, n_rx: usize, n_user: usize) -> Result<Self> {
        let cfg = ArrayConfig { n_tx, n_rx, n_user };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("n_tx", self.n_tx), ("n_rx", self.n_rx), ("n_user", self.n_user)] {
            if v == 0 {
                return Err(Error::invalid(name, "antenna count must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn len(&self, kind: ArrayKind) -> usize {
        match kind {
            ArrayKind::Tx => self.n_tx,
            ArrayKind::Rx => self.n_rx,
            ArrayKind::User => self.n_user,
        }
    }
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            n_tx: 10,
            n_rx: 12,
            n_user: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayKind {
    Tx,
    Rx,
    User,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub entries: CVec,
    pub kind: ArrayKind,
}

impl SteeringVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponsePair {
    pub m: CMat,
    pub m_dot: CMat,
}

pub fn check_angle(theta: f64) -> Result<()> {
    if theta.is_finite() && (-FRAC_PI_2..FRAC_PI_2).contains(&theta) {
        Ok(())
    } else {
        Err(Error::AngleDomain { value: theta })
    }
}

#[inline]
pub(crate) fn element_offset(n: usize, len: usize) -> f64 {
    (2.0 * n as f64 - len as f64 + 1.0) / 2.0
}

/// Unchecked steering vector of an `len`-element array.
pub(crate) fn steering_raw(len: usize, theta: f64) -> CVec {
    let s = theta.sin();
    CVec::from_fn(len, |n, _| Complex64::from_polar(1.0, PI * element_offset(n, len) * s))
}

pub(crate) fn steering_derivative_raw(len: usize, theta: f64) -> CVec {
    let (s, c) = theta.sin_cos();
    CVec::from_fn(len, |n, _| {
        let d = element_offset(n, len);
        Complex64::from_polar(1.0, PI * d * s) * Complex64::new(0.0, PI * d * c)
    })
}

pub fn steering(kind: ArrayKind, theta: f64, config: &ArrayConfig) -> Result<SteeringVector> {
    check_angle(theta)?;
    Ok(SteeringVector {
        entries: steering_raw(config.len(kind), theta),
        kind,
    })
}

/// Elementwise `∂/∂θ` of [`steering`]: `entry_n · j π d_n cos θ`.
pub fn steering_derivative(kind: ArrayKind, theta: f64, config: &ArrayConfig) -> Result<CVec> {
    check_angle(theta)?;
    Ok(steering_derivative_raw(config.len(kind), theta))
}

pub(crate) fn response_pair_raw(theta: f64, config: &ArrayConfig) -> ResponsePair {
    let a = steering_raw(config.n_tx, theta);
    let b = steering_raw(config.n_rx, theta);
    let a_dot = steering_derivative_raw(config.n_tx, theta);
    let b_dot = steering_derivative_raw(config.n_rx, theta);
    let m = &b * a.adjoint();
    let m_dot = &b_dot * a.adjoint() + &b * a_dot.adjoint();
    ResponsePair { m, m_dot }
}

/// `M(θ) = b a^H` and `Ṁ(θ) = ḃ a^H + b ȧ^H`.
pub fn response_pair(theta: f64, config: &ArrayConfig) -> Result<ResponsePair> {
    check_angle(theta)?;
    Ok(response_pair_raw(theta, config))
}
