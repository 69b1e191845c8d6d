//! Central finite-difference verification of analytic gradients.

/// Compare analytic gradients against central differences of `loss`.
///
/// Each coordinate is nudged by ±h; the divisor is the actually realized
/// f32 difference (x+h) - (x-h), not 2h, so rounding of the perturbation
/// itself does not pollute the estimate. Returns
/// max_i |analytic_i - fd_i| / max(1e-8, max_i max(|analytic_i|, |fd_i|)).
pub fn finite_diff_check<F>(x: &mut [f32], analytic: &[f32], mut loss: F, h: f32) -> f64
where
    F: FnMut(&[f32]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut fds = vec![0.0f64; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        let hi = orig + h;
        let lo = orig - h;
        x[i] = hi;
        let l_hi = loss(x);
        x[i] = lo;
        let l_lo = loss(x);
        x[i] = orig;
        fds[i] = (l_hi - l_lo) / (hi - lo) as f64;
    }
    let mut scale = 1e-8f64;
    for (&a, &f) in analytic.iter().zip(&fds) {
        scale = scale.max(a.abs() as f64).max(f.abs());
    }
    analytic
        .iter()
        .zip(&fds)
        .map(|(&a, &f)| (a as f64 - f).abs() / scale)
        .fold(0.0, f64::max)
}
