//! Convolutional sparse coding.
//!
//! An image `b` is modelled as `Σ_k A_k ⊛ x_k` with small filters `A_k`
//! constrained to the unit ball and sparse code maps `x_k` of image size.
//! Boundaries are circular, so every quadratic sub-step is diagonal in the
//! Fourier domain up to a rank-one correction per frequency.
//!
//! The objective is
//!
//! ```text
//! ½‖b − m ⊙ Σ_k A_k ⊛ x_k‖²_F + λ Σ_k ‖x_k‖₁   s.t. ‖A_k‖₂² ≤ 1
//! ```
//!
//! where the binary mask `m` hides unobserved pixels.

pub mod conv;
pub mod prox;
mod solver;

pub use solver::{
    code_update, cogd_backtrack_codes, inpaint, kernel_update, solve_csc, CodeSnapshot, CscEpoch,
    CscRun,
};

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `K` small filters of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub filters: Vec<Array2<f64>>,
}

impl FilterBank {
    pub fn new(filters: Vec<Array2<f64>>) -> Result<Self> {
        let first = filters
            .first()
            .ok_or_else(|| Error::invalid("filter bank is empty"))?
            .dim();
        if first.0 == 0 || first.1 == 0 {
            return Err(Error::invalid("filters must be non-empty"));
        }
        if filters.iter().any(|f| f.dim() != first) {
            return Err(Error::invalid("filters differ in shape"));
        }
        Ok(FilterBank { filters })
    }

    /// Standard normal entries, then projected onto the unit ball.
    pub fn random<R: Rng>(rng: &mut R, count: usize, size: usize) -> Result<Self> {
        let filters = (0..count)
            .map(|_| {
                let f =
                    Array2::from_shape_fn((size, size), |_| rng.sample::<f64, _>(StandardNormal));
                prox::prox_unit_ball(f.view())
            })
            .collect();
        FilterBank::new(filters)
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.filters[0].dim()
    }

    pub fn norms_sq(&self) -> Vec<f64> {
        self.filters
            .iter()
            .map(|f| f.iter().map(|v| v * v).sum())
            .collect()
    }

    pub fn max_norm_sq(&self) -> f64 {
        self.norms_sq().into_iter().fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.max_norm_sq() <= 1.0 + tol
    }
}

/// One coefficient map per filter, each the size of the image.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeMaps {
    pub maps: Vec<Array2<f64>>,
}

impl CodeMaps {
    pub fn zeros(count: usize, shape: (usize, usize)) -> Self {
        CodeMaps {
            maps: vec![Array2::zeros(shape); count],
        }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn l1_norms(&self) -> Vec<f64> {
        self.maps
            .iter()
            .map(|m| m.iter().map(|v| v.abs()).sum())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.maps.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// Splitting state carried between ADMM passes. Created lazily.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdmmDuals {
    pub(crate) code_image: Option<Array2<f64>>,
    pub(crate) code_image_dual: Option<Array2<f64>>,
    pub(crate) code_duals: Vec<Array2<f64>>,
    pub(crate) kernel_image: Option<Array2<f64>>,
    pub(crate) kernel_image_dual: Option<Array2<f64>>,
    pub(crate) kernel_duals: Vec<Array2<f64>>,
}

impl AdmmDuals {
    pub fn reset(&mut self) {
        *self = AdmmDuals::default();
    }

    pub fn reset_codes(&mut self) {
        self.code_image = None;
        self.code_image_dual = None;
        self.code_duals.clear();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CscProblem {
    pub image: Array2<f64>,
    /// 1 where the pixel is observed, 0 where it is missing.
    pub mask: Array2<f64>,
    pub lambda: f64,
    /// ADMM penalty.
    pub rho: f64,
    pub max_outer_iters: usize,
    /// ADMM passes per code or kernel update.
    pub inner_iters: usize,
    pub duals: AdmmDuals,
}

impl CscProblem {
    pub fn new(image: Array2<f64>, mask: Array2<f64>, lambda: f64, rho: f64) -> Result<Self> {
        if image.dim() != mask.dim() {
            return Err(Error::invalid(format!(
                "image is {:?} but mask is {:?}",
                image.dim(),
                mask.dim()
            )));
        }
        if image.is_empty() {
            return Err(Error::invalid("empty image"));
        }
        if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::invalid("mask entries must be 0 or 1"));
        }
        if let Some(index) = image.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "image".into(),
                index,
            });
        }
        if !(lambda >= 0.0) {
            return Err(Error::invalid("lambda must be >= 0"));
        }
        if !(rho > 0.0) {
            return Err(Error::invalid("rho must be > 0"));
        }
        Ok(CscProblem {
            image,
            mask,
            lambda,
            rho,
            max_outer_iters: 20,
            inner_iters: 1,
            duals: AdmmDuals::default(),
        })
    }

    pub fn full_mask(image: Array2<f64>, lambda: f64, rho: f64) -> Result<Self> {
        let mask = Array2::ones(image.dim());
        CscProblem::new(image, mask, lambda, rho)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.image.dim()
    }

    /// `m ⊙ (reconstruction − b)`.
    pub fn masked_residual(&self, reconstruction: ArrayView2<f64>) -> Array2<f64> {
        Zip::from(reconstruction)
            .and(&self.image)
            .and(&self.mask)
            .map_collect(|&r, &b, &m| if m == 0.0 { 0.0 } else { r - b })
    }
}

/// `Σ_k A_k ⊛ x_k` in the spatial domain.
pub fn synthesize(fb: &FilterBank, cm: &CodeMaps) -> Result<Array2<f64>> {
    if fb.len() != cm.len() || cm.is_empty() {
        return Err(Error::invalid(format!(
            "{} filters but {} code maps",
            fb.len(),
            cm.len()
        )));
    }
    let shape = cm.maps[0].dim();
    let mut out = Array2::zeros(shape);
    for (f, x) in fb.filters.iter().zip(&cm.maps) {
        if x.dim() != shape {
            return Err(Error::invalid("code maps differ in shape"));
        }
        out += &conv::conv2_circular(f.view(), x.view());
    }
    Ok(out)
}

/// Slack on `‖A_k‖² ≤ 1` that absorbs the rounding of a radial projection.
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// Objective value with the unit-ball indicator reported as a flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CscObjective {
    pub data: f64,
    pub sparsity: f64,
    pub feasible: bool,
}

impl CscObjective {
    /// Data plus sparsity terms; the indicator is carried by `feasible`.
    pub fn value(&self) -> f64 {
        self.data + self.sparsity
    }
}

pub fn csc_objective(p: &CscProblem, fb: &FilterBank, cm: &CodeMaps) -> Result<CscObjective> {
    let recon = synthesize(fb, cm)?;
    if recon.dim() != p.shape() {
        return Err(Error::invalid("code maps do not match the image size"));
    }
    let r = p.masked_residual(recon.view());
    Ok(CscObjective {
        data: 0.5 * r.iter().map(|v| v * v).sum::<f64>(),
        sparsity: p.lambda * cm.l1_norms().iter().sum::<f64>(),
        feasible: fb.is_feasible(FEASIBILITY_TOL),
    })
}

/// Subtracts the mean and divides by the standard deviation, both taken
/// over observed pixels only. Returns the normalized image, mean and std.
pub fn contrast_normalize(
    image: ArrayView2<f64>,
    mask: ArrayView2<f64>,
) -> Result<(Array2<f64>, f64, f64)> {
    if image.dim() != mask.dim() {
        return Err(Error::invalid("image and mask differ in shape"));
    }
    let observed: Vec<f64> = image
        .iter()
        .zip(mask.iter())
        .filter(|(_, &m)| m != 0.0)
        .map(|(&v, _)| v)
        .collect();
    if observed.is_empty() {
        return Err(Error::invalid("no observed pixels to normalize against"));
    }
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let var = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    Ok((image.mapv(|v| (v - mean) / std), mean, std))
}
