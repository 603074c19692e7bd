//! Central finite-difference utilities for validating analytic gradients.

/// Central-difference estimate of d f / d x_i for every coordinate, step `h`.
///
/// `f` is re-evaluated with one coordinate displaced at a time; the input
/// slice is restored between evaluations.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let fp = f(&probe);
            probe[i] = orig - h;
            let fm = f(&probe);
            probe[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Worst relative error between analytic and numeric gradients.
///
/// Each pair is scaled by `max(|a|, |n|, floor)`; the floor turns the
/// comparison absolute for near-zero gradients, where finite differences
/// only produce rounding noise.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
