/// Central-difference gradient of `f` at `theta` with step `h`.
pub fn finite_diff_gradient<F>(mut f: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + h;
            let plus = f(&probe);
            probe[i] = theta[i] - h;
            let minus = f(&probe);
            probe[i] = theta[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)` used by gradient checks.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
