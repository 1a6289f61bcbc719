//! Least-squares helpers shared by the model fitters.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `min ||A b - t||²`. Fails when the design is rank deficient.
pub fn least_squares(design: &DMatrix<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
    if design.nrows() < design.ncols() {
        return Err(Error::InsufficientData(format!(
            "{} observations for {} coefficients",
            design.nrows(),
            design.ncols()
        )));
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * design.nrows().max(design.ncols()) as f64;
    if smax == 0.0 || svd.rank(tol) < design.ncols() {
        return Err(Error::DegenerateDesign("design matrix is rank deficient".into()));
    }
    svd.solve(target, tol)
        .map_err(|e| Error::DegenerateDesign(e.to_string()))
}

/// Coefficient of determination of `pred` against `obs`. Returns 1 for a
/// perfect fit of a constant target.
pub fn r_squared(obs: &[f64], pred: &[f64]) -> f64 {
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    let ss_tot: f64 = obs.iter().map(|o| (o - mean).powi(2)).sum();
    let ss_res: f64 = obs.iter().zip(pred).map(|(o, p)| (o - p).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

pub fn rms(residuals: impl Iterator<Item = f64>) -> f64 {
    let (n, s) = residuals.fold((0usize, 0.0), |(n, s), r| (n + 1, s + r * r));
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

pub fn is_constant(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_recovered() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let a = DMatrix::from_fn(4, 2, |i, j| if j == 0 { xs[i] } else { 1.0 });
        let t = DVector::from_iterator(4, xs.iter().map(|x| 2.0 * x - 1.0));
        let b = least_squares(&a, &t).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-12 && (b[1] + 1.0).abs() < 1e-12);
        let pred: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        assert_eq!(r_squared(t.as_slice(), &pred), 1.0);
    }

    #[test]
    fn collinear_columns_are_rejected() {
        let a = DMatrix::from_fn(5, 2, |i, _| i as f64);
        let t = DVector::from_element(5, 1.0);
        assert!(matches!(least_squares(&a, &t), Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
