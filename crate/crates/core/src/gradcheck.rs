//! Central finite-difference gradient checking.
//!
//! Every analytic gradient in this crate (sequence log-probabilities, the
//! preference loss, the contrastive batch loss) is verified against this
//! harness. It is intentionally independent of the backward passes it checks:
//! only the forward scalar function is evaluated.

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Worst per-coordinate relative error between two gradients. Coordinates
/// where both magnitudes fall below `1e-8` are compared absolutely, so exact
/// zeros do not produce spurious 0/0 blowups.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst: f64 = 0.0;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        let err = if scale < 1e-8 { (a - n).abs() } else { (a - n).abs() / scale };
        worst = worst.max(err);
    }
    worst
}
