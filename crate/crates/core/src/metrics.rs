//! Image quality metrics.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Side of the square SSIM window.
pub const SSIM_WINDOW: usize = 7;

fn same_shape(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "images are {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("empty image"));
    }
    Ok(())
}

pub fn mse(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// `10 log10(MAX² / MSE)` in dB. Identical images give
/// [`Error::IdenticalImages`].
pub fn psnr(clean: ArrayView2<f64>, test: ArrayView2<f64>, max_value: f64) -> Result<f64> {
    if !(max_value > 0.0) || !max_value.is_finite() {
        return Err(Error::invalid("max_value must be positive"));
    }
    let e = mse(clean, test)?;
    if e == 0.0 {
        return Err(Error::IdenticalImages);
    }
    Ok(10.0 * (max_value * max_value / e).log10())
}

/// Mean SSIM over all [`SSIM_WINDOW`]-square windows fully inside the image.
pub fn ssim(a: ArrayView2<f64>, b: ArrayView2<f64>, max_value: f64) -> Result<f64> {
    ssim_with_window(a, b, max_value, SSIM_WINDOW)
}

/// Mean SSIM with a uniform `window x window` kernel and population
/// (biased) local statistics.
pub fn ssim_with_window(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    max_value: f64,
    window: usize,
) -> Result<f64> {
    same_shape(a, b)?;
    if !(max_value > 0.0) || !max_value.is_finite() {
        return Err(Error::invalid("max_value must be positive"));
    }
    let (h, w) = a.dim();
    if window == 0 || window > h || window > w {
        return Err(Error::invalid(format!(
            "window {window} does not fit a {h}x{w} image"
        )));
    }
    let c1 = (0.01 * max_value).powi(2);
    let c2 = (0.03 * max_value).powi(2);
    let n = (window * window) as f64;

    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - window {
        for j in 0..=w - window {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for u in i..i + window {
                for v in j..j + window {
                    let x = a[[u, v]];
                    let y = b[[u, v]];
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let mu_a = sa / n;
            let mu_b = sb / n;
            let var_a = (saa / n - mu_a * mu_a).max(0.0);
            let var_b = (sbb / n - mu_b * mu_b).max(0.0);
            let cov = sab / n - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
