//! Central finite differences for checking analytic gradients.

/// Central differences of `f` at `x` along the coordinates in `indices`.
pub fn central_diff<F>(f: F, x: &[f64], indices: &[usize], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    indices
        .iter()
        .map(|&i| {
            probe[i] = x[i] + step;
            let plus = f(&probe);
            probe[i] = x[i] - step;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over paired entries.
///
/// The floor keeps coordinates whose true gradient is near zero from
/// dominating through round-off.
pub fn max_rel_error_floor(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// [`max_rel_error_floor`] with a floor of `1e-6`.
pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    max_rel_error_floor(a, b, 1e-6)
}
