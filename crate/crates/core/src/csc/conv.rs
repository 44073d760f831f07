//! Circular 2-D convolution with small filters anchored at the origin,
//! in the spatial domain and through the FFT.
//!
//! `(a ⊛ x)[i, j] = Σ_{u, v} a[u, v] · x[(i − u) mod H, (j − v) mod W]`
//!
//! The adjoint is the matching circular correlation.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Zip};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Spatial circular convolution of a `d1 x d2` filter with an `H x W` map.
pub fn conv2_circular(filter: ArrayView2<f64>, map: ArrayView2<f64>) -> Array2<f64> {
    let (h, w) = map.dim();
    let mut out = Array2::zeros((h, w));
    for ((u, v), &a) in filter.indexed_iter() {
        if a == 0.0 {
            continue;
        }
        for i in 0..h {
            let si = (i + h - u % h) % h;
            for j in 0..w {
                let sj = (j + w - v % w) % w;
                out[[i, j]] += a * map[[si, sj]];
            }
        }
    }
    out
}

/// Adjoint of [`conv2_circular`] with respect to the map.
pub fn correlate2_circular(filter: ArrayView2<f64>, image: ArrayView2<f64>) -> Array2<f64> {
    let (h, w) = image.dim();
    let mut out = Array2::zeros((h, w));
    for ((u, v), &a) in filter.indexed_iter() {
        if a == 0.0 {
            continue;
        }
        for i in 0..h {
            let si = (i + u) % h;
            for j in 0..w {
                let sj = (j + v) % w;
                out[[i, j]] += a * image[[si, sj]];
            }
        }
    }
    out
}

/// Adjoint of [`conv2_circular`] with respect to the filter: the `d1 x d2`
/// window of the correlation between `image` and `map`.
pub fn filter_adjoint(
    map: ArrayView2<f64>,
    image: ArrayView2<f64>,
    dims: (usize, usize),
) -> Array2<f64> {
    let (h, w) = map.dim();
    Array2::from_shape_fn(dims, |(u, v)| {
        let mut s = 0.0;
        for i in 0..h {
            let si = (i + h - u % h) % h;
            for j in 0..w {
                s += image[[i, j]] * map[[si, (j + w - v % w) % w]];
            }
        }
        s
    })
}

/// Embeds a small filter at the origin of an `H x W` zero array.
pub fn embed(filter: ArrayView2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut out = Array2::zeros(shape);
    for ((u, v), &a) in filter.indexed_iter() {
        out[[u % shape.0, v % shape.1]] += a;
    }
    out
}

/// Cached 2-D FFT plans for one image size.
#[derive(Clone)]
pub struct Fft2 {
    shape: (usize, usize),
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("shape", &self.shape).finish()
    }
}

impl Fft2 {
    pub fn new(shape: (usize, usize)) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            shape,
            row_fwd: planner.plan_fft_forward(shape.1),
            row_inv: planner.plan_fft_inverse(shape.1),
            col_fwd: planner.plan_fft_forward(shape.0),
            col_inv: planner.plan_fft_inverse(shape.0),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    fn transform(&self, data: &mut Array2<Complex64>, inverse: bool) {
        let (h, w) = self.shape;
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let mut buf: Vec<Complex64> = data.iter().copied().collect();
        row.process(&mut buf);
        // transpose to run the column transforms on contiguous memory
        let mut t = vec![Complex64::default(); h * w];
        for i in 0..h {
            for j in 0..w {
                t[j * h + i] = buf[i * w + j];
            }
        }
        col.process(&mut t);
        for i in 0..h {
            for j in 0..w {
                data[[i, j]] = t[j * h + i];
            }
        }
    }

    pub fn forward(&self, real: ArrayView2<f64>) -> Array2<Complex64> {
        assert_eq!(
            real.dim(),
            self.shape,
            "array does not match the planned FFT size"
        );
        let mut data = real.mapv(|v| Complex64::new(v, 0.0));
        self.transform(&mut data, false);
        data
    }

    /// Inverse transform, keeping the real part.
    pub fn inverse(&self, spectrum: &Array2<Complex64>) -> Array2<f64> {
        let mut data = spectrum.clone();
        self.transform(&mut data, true);
        let scale = 1.0 / (self.shape.0 * self.shape.1) as f64;
        data.mapv(|c| c.re * scale)
    }

    /// Spectrum of a small filter embedded at the origin.
    pub fn filter_spectrum(&self, filter: ArrayView2<f64>) -> Array2<Complex64> {
        self.forward(embed(filter, self.shape).view())
    }

    /// Convolution through the FFT; agrees with [`conv2_circular`].
    pub fn convolve(&self, filter: ArrayView2<f64>, map: ArrayView2<f64>) -> Array2<f64> {
        let mut spec = self.filter_spectrum(filter);
        let m = self.forward(map);
        Zip::from(&mut spec).and(&m).for_each(|a, &b| *a *= b);
        self.inverse(&spec)
    }
}
