use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Diagonal loading added to both covariances.
pub const FID_EPS: f64 = 1e-6;

/// Mean and unbiased covariance (`N − 1` denominator) of the rows.
pub fn gaussian_stats(features: &Matrix) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, d) = features.shape();
    if n < 2 || d == 0 {
        return Err(Error::InvalidInput(format!("need at least 2 feature rows, got {n}x{d}")));
    }
    let x = DMatrix::from_row_slice(n, d, features.as_slice());
    let mu = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mu, cov))
}

fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new((m + m.transpose()) * 0.5)
}

/// `‖μ1−μ2‖² + Tr(Σ1 + Σ2 − 2 (Σ1 Σ2)^{1/2})` after adding `eps·I` to both.
///
/// `Tr (Σ1 Σ2)^{1/2}` is taken as the sum of square roots of the eigenvalues
/// of the symmetric `Σ1^{1/2} Σ2 Σ1^{1/2}`, which shares its spectrum with
/// `Σ1 Σ2`. Eigenvalues that are negative only by roundoff are clipped to 0.
pub fn frechet_distance(
    mu1: &DVector<f64>,
    cov1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    cov2: &DMatrix<f64>,
    eps: f64,
) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || cov1.shape() != (d, d) || cov2.shape() != (d, d) {
        return Err(Error::shape(format!(
            "feature dims differ: {} vs {}",
            d,
            mu2.len()
        )));
    }
    let eye = DMatrix::<f64>::identity(d, d) * eps;
    let s1 = cov1 + &eye;
    let s2 = cov2 + &eye;
    let e1 = sym_eigen(&s1);
    let lo1 = e1.eigenvalues.min();
    if lo1 < -1e-9 * e1.eigenvalues.amax().max(1.0) {
        return Err(Error::Numeric(format!(
            "first covariance is not PSD after regularization: min eigenvalue {lo1:e}"
        )));
    }
    let sqrt_vals = e1.eigenvalues.map(|v| v.max(0.0).sqrt());
    let root1 = &e1.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * e1.eigenvectors.transpose();
    let product = &root1 * &s2 * &root1;
    let ep = sym_eigen(&product);
    let scale = ep.eigenvalues.amax().max(1.0);
    let lo = ep.eigenvalues.min();
    if lo < -1e-8 * scale {
        return Err(Error::Numeric(format!(
            "covariance product is not PSD after regularization: eigenvalues in [{lo:e}, {:e}], condition {:e}",
            ep.eigenvalues.max(),
            scale / lo.abs().max(f64::MIN_POSITIVE)
        )));
    }
    let tr_sqrt: f64 = ep.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let diff = mu1 - mu2;
    Ok(diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * tr_sqrt)
}

/// Fréchet distance between Gaussian fits of two feature sets (rows are samples).
pub fn fid(real: &Matrix, generated: &Matrix) -> Result<f64> {
    if real.cols() != generated.cols() {
        return Err(Error::shape(format!(
            "feature dims differ: {} vs {}",
            real.cols(),
            generated.cols()
        )));
    }
    let (m1, c1) = gaussian_stats(real)?;
    let (m2, c2) = gaussian_stats(generated)?;
    frechet_distance(&m1, &c1, &m2, &c2, FID_EPS)
}
