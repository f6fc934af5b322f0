//! Central-difference gradient checking.

use super::tensor::Tensor;

/// Compares `analytic` gradients against central differences of `f`.
///
/// Returns the largest `|analytic − numeric| / max(1, |numeric|)` over every
/// parameter entry. `f` receives perturbed copies of `params`.
pub fn finite_diff_check<F>(mut f: F, params: &[Tensor], analytic: &[Tensor], h: f64) -> f64
where
    F: FnMut(&[Tensor]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    assert_eq!(params.len(), analytic.len(), "one gradient per parameter");

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0_f64;
    for (p, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.shape(), params[p].shape(), "gradient shape");
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let up = f(&work);
            work[p].data_mut()[i] = orig - h;
            let down = f(&work);
            work[p].data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let err = (grad.data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}
