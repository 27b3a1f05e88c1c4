//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// `max_i |analytic_i − numeric_i| / max(1, |numeric_i|)`
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
    pub coordinates: usize,
}

/// Compares the gradient returned by `f` at `point` with central differences
/// of its value over every coordinate. `h` must lie in `[1e-7, 1e-3]`.
pub fn grad_check<F>(mut f: F, point: &[f64], h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidArgument(format!("step {h} outside [1e-7, 1e-3]")));
    }
    let (_, analytic) = f(point)?;
    if analytic.len() != point.len() {
        return Err(Error::InvalidArgument(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            point.len()
        )));
    }
    let mut x = point.to_vec();
    let mut report = GradCheckReport { max_relative_error: 0.0, worst_coordinate: 0, coordinates: point.len() };
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let (up, _) = f(&x)?;
        x[i] = point[i] - h;
        let (down, _) = f(&x)?;
        x[i] = point[i];
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        if !(err <= report.max_relative_error) {
            report.max_relative_error = err;
            report.worst_coordinate = i;
        }
    }
    Ok(report)
}
