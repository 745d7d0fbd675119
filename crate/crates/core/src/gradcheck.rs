//! Central finite differences for checking analytic gradients.

/// Numerical gradient of `f` at `point` with step `h`.
pub fn central_difference<F>(f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + h;
            let plus = f(&x);
            x[i] = point[i] - h;
            let minus = f(&x);
            x[i] = point[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)` in the Euclidean norm, restricted to the
/// coordinates where `keep` is true. Two zero vectors compare as 0.
pub fn relative_error_masked(analytic: &[f64], numeric: &[f64], keep: &[bool]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    assert_eq!(analytic.len(), keep.len());
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for ((&a, &n), &k) in analytic.iter().zip(numeric).zip(keep) {
        if k {
            diff += (a - n) * (a - n);
            na += a * a;
            nn += n * n;
        }
    }
    let scale = na.max(nn).sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    relative_error_masked(analytic, numeric, &vec![true; analytic.len()])
}
