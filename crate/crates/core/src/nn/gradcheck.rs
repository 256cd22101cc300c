//! Central finite-difference gradient checking.

/// Default perturbation for [`central_differences`].
pub const FD_STEP: f64 = 1e-5;

/// Magnitudes below this are compared on an absolute scale in [`relative_error`].
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_differences<F: FnMut(&[f64]) -> f64>(x: &[f64], h: f64, mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Largest elementwise relative error and its index.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .fold((0.0, 0), |(best, bi), (i, e)| if e > best { (e, i) } else { (best, bi) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let g = central_differences(&[1.0, -2.0, 0.5], FD_STEP, |x| {
            x[0] * x[0] + 3.0 * x[1] + x[0] * x[2]
        });
        let exact = [2.0 + 0.5, 3.0, 1.0];
        let (err, _) = max_relative_error(&exact, &g);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn floor_applies_to_tiny_values() {
        assert!(relative_error(1e-12, 2e-12) < 1e-5);
        assert!(relative_error(1.0, 1.1) > 0.05);
    }
}
