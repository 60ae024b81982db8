//! Central finite differences for gradient verification. Evaluates the loss
//! as a black box, so it stays independent of the tape's backward pass.

/// Default step for central differences (64-bit arithmetic).
pub const FD_STEP: f64 = 1e-3;

/// Relative error between an analytic and a finite-difference value,
/// floored so that a pair of near-zero gradients compares as equal.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-5);
    (analytic - numeric).abs() / denom
}

/// Central finite difference of `f` with respect to `data[i]`, evaluated by
/// mutating the buffer in place and restoring it afterwards.
pub fn central_diff<F>(data: &mut [f64], i: usize, step: f64, mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = data[i];
    data[i] = orig + step;
    let up = f(data);
    data[i] = orig - step;
    let down = f(data);
    data[i] = orig;
    (up - down) / (2.0 * step)
}

/// Checks every element of an analytic gradient against central finite
/// differences. Returns the worst relative error and its index.
pub fn check_grad<F>(data: &mut [f64], analytic: &[f64], step: f64, mut f: F) -> (f64, usize)
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(data.len(), analytic.len());
    let mut worst = 0.0;
    let mut worst_i = 0;
    for i in 0..data.len() {
        let numeric = central_diff(data, i, step, &mut f);
        let e = rel_err(analytic[i], numeric);
        if e > worst {
            worst = e;
            worst_i = i;
        }
    }
    (worst, worst_i)
}
