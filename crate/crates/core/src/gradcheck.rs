//! Central finite differences for verifying analytic gradients.

/// `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate `i`.
pub fn central_differences<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let plus = f(&probe);
            probe[i] = x[i] - step;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Default denominator floor for [`max_relative_error`]: gradients smaller
/// than this are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `max_i |a_i − b_i| / max(|a_i|, |b_i|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gives_identity_gradient() {
        let x = [0.3, -1.2, 4.0];
        let g = central_differences(|v| v.iter().map(|t| t * t).sum::<f64>() / 2.0, &x, 1e-5);
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - xi).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_and_constant() {
        let c = [2.0, -3.0, 0.5];
        let g = central_differences(|v| v.iter().zip(&c).map(|(a, b)| a * b).sum(), &[1.0, 1.0, 1.0], 1e-5);
        for (gi, ci) in g.iter().zip(&c) {
            assert!((gi - ci).abs() < 1e-9);
        }
        let g = central_differences(|_| 7.0, &[1.0, 2.0], 1e-5);
        assert_eq!(g, vec![0.0, 0.0]);
    }
}
