//! Standard normal density, cdf and hazard on plain `f64`.

use std::f64::consts::PI;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// `phi(z) = exp(-z^2/2) / sqrt(2*pi)`.
pub fn norm_pdf_f64(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `Phi(z) = erfc(-z/sqrt(2)) / 2`, accurate in both tails.
pub fn norm_cdf_f64(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// `1 - Phi(z) = erfc(z/sqrt(2)) / 2` without cancellation in the right tail.
pub fn norm_sf_f64(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

/// `phi(z) / (1 - Phi(z))`.
///
/// Beyond `z = 6` the direct quotient is replaced by the Laplace continued
/// fraction for the Mills ratio, which stays accurate where `phi` and the
/// survival function both underflow.
pub fn norm_hazard_f64(z: f64) -> f64 {
    if z <= 6.0 {
        norm_pdf_f64(z) / norm_sf_f64(z)
    } else {
        let mut t = 0.0;
        for k in (1..=40).rev() {
            t = f64::from(k) / (z + t);
        }
        z + t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cdf_sf_complement() {
        for z in [-3.0, -0.7, 0.0, 1.2, 4.0] {
            assert_relative_eq!(norm_cdf_f64(z) + norm_sf_f64(z), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn hazard_continuous_at_switch() {
        let below = norm_hazard_f64(6.0 - 1e-9);
        let above = norm_hazard_f64(6.0 + 1e-9);
        assert_relative_eq!(below, above, max_relative = 1e-9);
    }

    #[test]
    fn hazard_far_tail_is_finite() {
        let h = norm_hazard_f64(300.0);
        assert!(h.is_finite());
        // Asymptotically z + 1/z.
        assert_relative_eq!(h, 300.0 + 1.0 / 300.0, max_relative = 1e-6);
    }
}
