//! Proximal maps for the CSC splitting.

use ndarray::{s, Array, Array2, ArrayView, ArrayView2, Dimension};

/// `sign(v) · max(|v| − t, 0)`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Proximal map of `t·‖·‖₁`, elementwise soft thresholding.
pub fn prox_l1<D: Dimension>(v: ArrayView<f64, D>, threshold: f64) -> Array<f64, D> {
    debug_assert!(threshold >= 0.0);
    v.mapv(|x| soft_threshold(x, threshold))
}

/// Projection onto `{a : ‖a‖₂ ≤ 1}`.
pub fn prox_unit_ball(kernel: ArrayView2<f64>) -> Array2<f64> {
    let norm_sq: f64 = kernel.iter().map(|v| v * v).sum();
    if norm_sq <= 1.0 {
        kernel.to_owned()
    } else {
        let scale = 1.0 / norm_sq.sqrt();
        kernel.mapv(|v| v * scale)
    }
}

/// Projection onto filters supported on the top-left `dims` window with
/// unit norm: zero outside the window, then radial projection.
pub fn prox_support_unit_ball(full: ArrayView2<f64>, dims: (usize, usize)) -> Array2<f64> {
    let mut out = Array2::zeros(full.dim());
    let window = prox_unit_ball(full.slice(s![..dims.0, ..dims.1]));
    out.slice_mut(s![..dims.0, ..dims.1]).assign(&window);
    out
}
