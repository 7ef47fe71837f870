//! Finite-difference gradient oracles.
//!
//! These evaluate a black-box scalar function only; they never touch the
//! graph's backward rules, so they serve as an independent check of them.

use super::Tensor;

/// Central-difference gradient of `f` at `x` with step `h`, one coordinate
/// at a time.
pub fn fd_grad(mut f: impl FnMut(&Tensor) -> f32, x: &Tensor, h: f32) -> Tensor {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Central-difference directional derivative of `f` at `x` along `v`.
pub fn fd_directional(mut f: impl FnMut(&Tensor) -> f32, x: &Tensor, v: &Tensor, h: f32) -> f32 {
    let shift = |sign: f32| {
        let mut p = x.clone();
        for (pv, dv) in p.data_mut().iter_mut().zip(v.data()) {
            *pv += sign * h * dv;
        }
        p
    };
    (f(&shift(1.0)) - f(&shift(-1.0))) / (2.0 * h)
}

/// Largest coordinate-wise relative error between two gradients.
/// Coordinates where both sides are below `floor` are ignored.
pub fn max_rel_err(analytic: &Tensor, numeric: &Tensor, floor: f32) -> f32 {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = 0.0f32;
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        let scale = a.abs().max(n.abs());
        if scale < floor {
            continue;
        }
        worst = worst.max((a - n).abs() / scale);
    }
    worst
}

pub fn rel_err(a: f32, b: f32, floor: f32) -> f32 {
    let scale = a.abs().max(b.abs()).max(floor);
    (a - b).abs() / scale
}

/// Whole-vector relative error `||a - n|| / max(||a||, ||n||)`.
///
/// Preferred over the coordinate-wise form for f32 finite differences, where
/// near-zero coordinates are dominated by evaluation round-off.
pub fn norm_rel_err(analytic: &Tensor, numeric: &Tensor) -> f32 {
    assert_eq!(analytic.shape(), numeric.shape());
    let norm = |t: &Tensor| t.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| ((a - n) as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        return 0.0;
    }
    (diff / scale) as f32
}
