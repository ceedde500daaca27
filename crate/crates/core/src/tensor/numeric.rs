use super::Tensor;

/// Central-difference gradient estimate of a scalar function:
/// `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for every coordinate `i`.
pub fn finite_diff_oracle<F>(mut f: F, x: &Tensor, eps: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// `max_i |a_i - n_i| / max(1, |n_i|)`, where `n` is the numeric reference.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}
