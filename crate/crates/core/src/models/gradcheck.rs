/// Compares an analytic gradient with central finite differences.
///
/// `f` returns `(value, gradient)`. The result is the largest per-coordinate
/// relative error `|g_fd − g| / (|g| + 1e-8)`.
pub fn grad_check<F>(f: F, point: &[f64], epsilon: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let (_, analytic) = f(point);
    let mut probe = point.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..point.len() {
        probe[k] = point[k] + epsilon;
        let (up, _) = f(&probe);
        probe[k] = point[k] - epsilon;
        let (down, _) = f(&probe);
        probe[k] = point[k];
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max((numeric - analytic[k]).abs() / (analytic[k].abs() + 1e-8));
    }
    worst
}
