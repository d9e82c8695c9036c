//! Standard normal tail function and its inverse.

use crate::error::{Error, Result};
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{PI, SQRT_2};

/// Upper tail of the standard normal distribution, `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Inverse of [`q_function`] on `(0, 1)`.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("q_inverse needs p in (0, 1), got {p}")));
    }
    if p > 0.5 {
        // 1 - p is exact here, and the lower half keeps full relative precision.
        return Ok(-q_inverse(1.0 - p)?);
    }
    let mut x = SQRT_2 * erfc_inv(2.0 * p);
    let density = normal_pdf(x);
    if density > 0.0 && density.is_finite() {
        x += (q_function(x) - p) / density;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetry_points() {
        assert_eq!(q_function(0.0), 0.5);
        assert_eq!(q_inverse(0.5).unwrap(), 0.0);
    }

    #[test]
    fn rejects_out_of_range() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(q_inverse(p), Err(Error::Domain(_))), "p = {p}");
        }
    }

    #[test]
    fn round_trip_on_grid() {
        let mut x = -6.0;
        while x <= 6.0 {
            let back = q_inverse(q_function(x)).unwrap();
            // left of zero Q(x) is near one and carries about 1e-16 absolute precision
            let tol = if x >= 0.0 {
                1e-9
            } else {
                1e-9 + 4e-16 / (-0.5 * x * x).exp()
            };
            assert!((back - x).abs() < tol, "x = {x}, back = {back}");
            x += 0.01;
        }
    }

    #[test]
    fn deep_tail_is_finite() {
        let x = q_inverse(1e-30).unwrap();
        assert!(x > 11.0 && x < 12.0);
        assert!(q_function(40.0) >= 0.0);
    }

    #[test]
    fn strictly_decreasing() {
        let mut prev = q_function(-8.0);
        let mut x = -8.0 + 0.05;
        while x < 8.0 {
            let q = q_function(x);
            assert!(q < prev);
            prev = q;
            x += 0.05;
        }
    }
}
