use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn check_same_shape(u: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<()> {
    if u.shape() != d.shape() {
        return Err(Error::dim(
            "data loss",
            format!("{:?}", d.shape()),
            format!("{:?}", u.shape()),
        ));
    }
    Ok(())
}

/// Squared Euclidean misfit `||u - d||^2` over all entries.
pub fn data_loss(u: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<f64> {
    check_same_shape(u, d)?;
    Ok(u.iter().zip(d.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Gradient of [`data_loss`] with respect to `u`: `2 (u - d)`.
pub fn data_loss_grad(u: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_same_shape(u, d)?;
    Ok((u - d) * 2.0)
}
