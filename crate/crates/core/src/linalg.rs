//! Dense complex linear-algebra helpers shared by the sensing, channel and
//! optimizer modules. Matrices are `nalgebra::DMatrix<Complex64>`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Relative tolerance below which negative eigenvalues count as round-off.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Hermitian part `(m + m^H) / 2`.
pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_asymmetry(m: &CMat) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. Ties keep the solver's original ordering.
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermitianEigen {
    pub fn new(m: &CMat) -> Self {
        let eig = SymmetricEigen::new(hermitize(m));
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        HermitianEigen { values, vectors }
    }

    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn vector(&self, i: usize) -> CVec {
        self.vectors.column(i).into_owned()
    }

    /// `V diag(values) V^H` for the supplied eigenvalues.
    pub fn reconstruct(&self, values: &[f64]) -> CMat {
        let n = self.vectors.nrows();
        let mut out = CMat::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let q = self.vectors.column(i);
            out += (q * q.adjoint()) * Complex64::new(v, 0.0);
        }
        hermitize(&out)
    }
}

/// `Re tr(A B)`, the real inner product for Hermitian arguments.
pub fn trace_product(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..a.ncols() {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

/// Frobenius inner product `Re tr(A^H B)`.
pub fn frobenius_inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub fn real_trace(m: &CMat) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].re).sum()
}

/// `ln det(S)` for Hermitian positive-definite `S`, via Cholesky with an
/// eigenvalue fallback that clips round-off negatives.
pub fn ln_det_hpd(s: &CMat) -> f64 {
    match Cholesky::new(hermitize(s)) {
        Some(ch) => {
            let l = ch.l_dirty();
            2.0 * (0..l.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>()
        }
        None => HermitianEigen::new(s)
            .values
            .iter()
            .map(|&v| v.max(f64::MIN_POSITIVE).ln())
            .sum(),
    }
}

/// Counts eigenvalues above `rel_threshold * lambda_max`.
pub fn numerical_rank(m: &CMat, rel_threshold: f64) -> usize {
    let eig = HermitianEigen::new(m);
    let top = eig.max();
    if top <= 0.0 {
        return 0;
    }
    eig.values.iter().filter(|&&v| v > rel_threshold * top).count()
}

/// Validates Hermitian PSD input within `PSD_TOLERANCE` and returns the
/// eigenvalue-clipped Hermitian matrix.
pub fn checked_psd(m: &CMat) -> Result<CMat> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let asym = hermitian_asymmetry(m);
    if asym > 1e-9 * scale {
        return Err(Error::NotHermitian { asymmetry: asym });
    }
    let eig = HermitianEigen::new(m);
    let (lo, hi) = (eig.min(), eig.max());
    if lo < -PSD_TOLERANCE * hi.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd {
            min_eig: lo,
            max_eig: hi,
        });
    }
    if lo >= 0.0 {
        return Ok(hermitize(m));
    }
    let clipped: Vec<f64> = eig.values.iter().map(|&v| v.max(0.0)).collect();
    Ok(eig.reconstruct(&clipped))
}

/// Euclidean projection of `values` onto `{x >= 0, sum x <= cap}`.
///
/// Returns the projected values and the uniform shift applied before
/// clipping (zero when the cap is inactive).
pub fn project_capped_simplex(values: &[f64], cap: f64) -> (Vec<f64>, f64) {
    let clipped_sum: f64 = values.iter().map(|v| v.max(0.0)).sum();
    if clipped_sum <= cap {
        return (values.iter().map(|v| v.max(0.0)).collect(), 0.0);
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    let mut shift = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        prefix += v;
        let candidate = (prefix - cap) / (i + 1) as f64;
        if i + 1 == sorted.len() || sorted[i + 1] <= candidate {
            shift = candidate;
            break;
        }
    }
    (values.iter().map(|v| (v - shift).max(0.0)).collect(), shift)
}

/// Transmit covariance: Hermitian PSD, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitCovariance(CMat);

impl TransmitCovariance {
    pub fn new(m: CMat) -> Result<Self> {
        Ok(TransmitCovariance(checked_psd(&m)?))
    }

    /// Wraps a matrix already known to be Hermitian PSD.
    pub(crate) fn from_psd(m: CMat) -> Self {
        TransmitCovariance(m)
    }

    pub fn zeros(n: usize) -> Self {
        TransmitCovariance(CMat::zeros(n, n))
    }

    /// `(power / n) I`.
    pub fn isotropic(n: usize, power: f64) -> Self {
        TransmitCovariance(CMat::identity(n, n) * Complex64::new(power / n as f64, 0.0))
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> f64 {
        real_trace(&self.0)
    }

    pub fn rank(&self, rel_threshold: f64) -> usize {
        numerical_rank(&self.0, rel_threshold)
    }
}

impl AsRef<CMat> for TransmitCovariance {
    fn as_ref(&self) -> &CMat {
        &self.0
    }
}

pub(crate) fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}
