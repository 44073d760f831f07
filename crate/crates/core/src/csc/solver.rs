//! ADMM with proximal operators for the code and kernel sub-problems, and
//! the per-filter cogradient backtracking of code maps.
//!
//! Each sub-problem splits `f1(D v) + Σ f(v_k)` as `y = D v`, `z = v`.
//! The `v` step solves `(DᴴD + I) v = Dᴴ(y − u) + (z − w)`, which is a
//! rank-one update of the identity at every frequency, so it is solved in
//! closed form with Sherman–Morrison.

use ndarray::{Array2, ArrayView2, Zip};
use rustfft::num_complex::Complex64;

use super::conv::{conv2_circular, embed, Fft2};
use super::prox::{prox_support_unit_ball, soft_threshold};
use super::{csc_objective, synthesize, CodeMaps, CscProblem, FilterBank};
use crate::coupling::{
    difference_quotient, kernelized_inner, top_fraction_flags, CouplingConfig, GateDecision,
};
use crate::error::{check_finite, Error, Result};

/// Solves `(I + conj(a) aᵀ) x = r` at every frequency, in place.
fn rank_one_solve(spectra: &[Array2<Complex64>], rhs: &mut [Array2<Complex64>]) {
    let n = spectra[0].len();
    let a: Vec<&[Complex64]> = spectra
        .iter()
        .map(|s| s.as_slice().expect("contiguous"))
        .collect();
    let mut r: Vec<&mut [Complex64]> = rhs
        .iter_mut()
        .map(|s| s.as_slice_mut().expect("contiguous"))
        .collect();
    for idx in 0..n {
        let mut denom = 1.0;
        let mut dot = Complex64::default();
        for (ak, rk) in a.iter().zip(r.iter()) {
            denom += ak[idx].norm_sqr();
            dot += ak[idx] * rk[idx];
        }
        let scale = dot / denom;
        for (ak, rk) in a.iter().zip(r.iter_mut()) {
            rk[idx] -= ak[idx].conj() * scale;
        }
    }
}

/// `Σ_k a_k ⊙ x_k` in the Fourier domain.
fn apply_spectra(spectra: &[Array2<Complex64>], x: &[Array2<Complex64>]) -> Array2<Complex64> {
    let mut out = Array2::zeros(spectra[0].dim());
    for (a, x) in spectra.iter().zip(x) {
        Zip::from(&mut out)
            .and(a)
            .and(x)
            .for_each(|o, &a, &x| *o += a * x);
    }
    out
}

/// Proximal map of `f1/ρ`: observed pixels are pulled towards `b`,
/// unobserved ones pass through.
fn prox_data(p: &CscProblem, v: &Array2<f64>) -> Array2<f64> {
    let rho = p.rho;
    Zip::from(v)
        .and(&p.image)
        .and(&p.mask)
        .map_collect(|&v, &b, &m| {
            if m == 0.0 {
                v
            } else {
                (b + rho * v) / (1.0 + rho)
            }
        })
}

/// `Dᴴ(y − u) + (z − w)` for every factor.
fn normal_rhs(
    fft: &Fft2,
    spectra: &[Array2<Complex64>],
    image_term: ArrayView2<f64>,
    splits: &[Array2<f64>],
    duals: &[Array2<f64>],
) -> Vec<Array2<Complex64>> {
    let y_hat = fft.forward(image_term);
    spectra
        .iter()
        .zip(splits.iter().zip(duals))
        .map(|(a, (z, w))| {
            let mut r = fft.forward((z - w).view());
            Zip::from(&mut r)
                .and(a)
                .and(&y_hat)
                .for_each(|r, &a, &y| *r += a.conj() * y);
            r
        })
        .collect()
}

fn check_shapes(p: &CscProblem, fb: &FilterBank, cm: &CodeMaps) -> Result<()> {
    if fb.len() != cm.len() {
        return Err(Error::invalid(format!(
            "{} filters but {} code maps",
            fb.len(),
            cm.len()
        )));
    }
    let shape = p.shape();
    if cm.maps.iter().any(|m| m.dim() != shape) {
        return Err(Error::invalid("code maps must match the image size"));
    }
    let (d1, d2) = fb.dims();
    if d1 > shape.0 || d2 > shape.1 {
        return Err(Error::invalid("filters larger than the image"));
    }
    Ok(())
}

fn ensure_finite(maps: &[Array2<f64>], context: &str) -> Result<()> {
    for (k, m) in maps.iter().enumerate() {
        let flat: Vec<f64> = m.iter().copied().collect();
        check_finite(&flat, &format!("{context} {k}"))?;
    }
    Ok(())
}

/// `p.inner_iters` ADMM passes on the codes with the filters held fixed.
pub fn code_update(p: &mut CscProblem, fb: &FilterBank, cm: &CodeMaps) -> Result<CodeMaps> {
    check_shapes(p, fb, cm)?;
    let shape = p.shape();
    let k = fb.len();
    let fft = Fft2::new(shape);
    let spectra: Vec<_> = fb
        .filters
        .iter()
        .map(|f| fft.filter_spectrum(f.view()))
        .collect();

    let mut y = p
        .duals
        .code_image
        .take()
        .unwrap_or_else(|| Array2::zeros(shape));
    let mut u = p
        .duals
        .code_image_dual
        .take()
        .unwrap_or_else(|| Array2::zeros(shape));
    let mut w = std::mem::take(&mut p.duals.code_duals);
    if w.len() != k {
        w = vec![Array2::zeros(shape); k];
    }
    let mut z = cm.maps.clone();
    let threshold = p.lambda / p.rho;

    for _ in 0..p.inner_iters {
        let mut x_hat = normal_rhs(&fft, &spectra, (&y - &u).view(), &z, &w);
        rank_one_solve(&spectra, &mut x_hat);
        let dx = fft.inverse(&apply_spectra(&spectra, &x_hat));

        let v = &dx + &u;
        y = prox_data(p, &v);
        u = v - &y;
        for ((zk, wk), xh) in z.iter_mut().zip(w.iter_mut()).zip(&x_hat) {
            let s = fft.inverse(xh) + &*wk;
            *zk = s.mapv(|v| soft_threshold(v, threshold));
            *wk = s - &*zk;
        }
    }

    ensure_finite(&z, "code map")?;
    p.duals.code_image = Some(y);
    p.duals.code_image_dual = Some(u);
    p.duals.code_duals = w;
    Ok(CodeMaps { maps: z })
}

/// `p.inner_iters` ADMM passes on the filters with the codes held fixed.
/// Every returned filter lies in the unit ball.
pub fn kernel_update(p: &mut CscProblem, fb: &FilterBank, cm: &CodeMaps) -> Result<FilterBank> {
    check_shapes(p, fb, cm)?;
    let shape = p.shape();
    let dims = fb.dims();
    let k = fb.len();
    let fft = Fft2::new(shape);
    let spectra: Vec<_> = cm.maps.iter().map(|x| fft.forward(x.view())).collect();

    let mut y = p
        .duals
        .kernel_image
        .take()
        .unwrap_or_else(|| Array2::zeros(shape));
    let mut u = p
        .duals
        .kernel_image_dual
        .take()
        .unwrap_or_else(|| Array2::zeros(shape));
    let mut w = std::mem::take(&mut p.duals.kernel_duals);
    if w.len() != k {
        w = vec![Array2::zeros(shape); k];
    }
    let mut g: Vec<Array2<f64>> = fb
        .filters
        .iter()
        .map(|f| prox_support_unit_ball(embed(f.view(), shape).view(), dims))
        .collect();

    for _ in 0..p.inner_iters {
        let mut d_hat = normal_rhs(&fft, &spectra, (&y - &u).view(), &g, &w);
        rank_one_solve(&spectra, &mut d_hat);
        let xd = fft.inverse(&apply_spectra(&spectra, &d_hat));

        let v = &xd + &u;
        y = prox_data(p, &v);
        u = v - &y;
        for ((gk, wk), dh) in g.iter_mut().zip(w.iter_mut()).zip(&d_hat) {
            let s = fft.inverse(dh) + &*wk;
            *gk = prox_support_unit_ball(s.view(), dims);
            *wk = s - &*gk;
        }
    }

    ensure_finite(&g, "filter")?;
    p.duals.kernel_image = Some(y);
    p.duals.kernel_image_dual = Some(u);
    p.duals.kernel_duals = w;
    FilterBank::new(
        g.iter()
            .map(|gk| gk.slice(ndarray::s![..dims.0, ..dims.1]).to_owned())
            .collect(),
    )
}

/// Code maps, their image-space responses and L1 masses at the last
/// backtracking point.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeSnapshot {
    pub codes: CodeMaps,
    pub responses: Vec<Array2<f64>>,
    pub masses: Vec<f64>,
    pub learning_rate: f64,
}

impl CodeSnapshot {
    pub fn new(fb: &FilterBank, cm: &CodeMaps, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        Ok(CodeSnapshot {
            codes: cm.clone(),
            responses: responses(fb, cm),
            masses: cm.l1_norms(),
            learning_rate,
        })
    }
}

fn responses(fb: &FilterBank, cm: &CodeMaps) -> Vec<Array2<f64>> {
    fb.filters
        .iter()
        .zip(&cm.maps)
        .map(|(f, x)| conv2_circular(f.view(), x.view()))
        .collect()
}

/// Per-filter asynchrony gate and backtrack of the code maps.
///
/// The sparse statistic of map `k` is `‖x_k‖₁`, compared against the mean
/// over all maps; the dense statistic is `‖A_k‖₂`, compared against the
/// median over the bank. When filter `k` fires, `x_k` becomes
/// `x_k + β_k · x_k_prev` with a scalar `β_k` built from the masked
/// residual and the difference quotient of the filter's image-space
/// response with respect to its code mass. `cfg.alpha_*` are not used.
pub fn cogd_backtrack_codes(
    p: &CscProblem,
    fb: &FilterBank,
    cm: &CodeMaps,
    cfg: &CouplingConfig,
    snapshot: &mut CodeSnapshot,
    epoch: usize,
) -> Result<(CodeMaps, Vec<GateDecision>)> {
    check_shapes(p, fb, cm)?;
    if snapshot.codes.len() != cm.len() {
        return Err(Error::invalid("snapshot holds a different number of maps"));
    }
    let k = fb.len();
    if !cfg.is_backtrack_epoch(epoch) {
        return Ok((cm.clone(), vec![GateDecision::default(); k]));
    }

    let masses = cm.l1_norms();
    let alpha_x = masses.iter().sum::<f64>() / k as f64;
    let filter_norms: Vec<f64> = fb.norms_sq().into_iter().map(f64::sqrt).collect();
    let (large, _) = top_fraction_flags(&filter_norms, 0.5);

    let current = responses(fb, cm);
    let mut recon = Array2::zeros(p.shape());
    for r in &current {
        recon += r;
    }
    let ghat = Array2::from(p.masked_residual(recon.view()));
    let ghat = ghat
        .view()
        .into_shape_with_order(ghat.len())
        .expect("contiguous");

    let mut out = cm.clone();
    let mut gates = Vec::with_capacity(k);
    for j in 0..k {
        let gate = if cfg.active() {
            GateDecision::new(masses[j] < alpha_x, large[j])
        } else {
            GateDecision::default()
        };
        if gate.fire && cfg.beta_scale != 0.0 {
            let n = current[j].len();
            let col = difference_quotient(
                current[j]
                    .view()
                    .into_shape_with_order(n)
                    .expect("contiguous"),
                snapshot.responses[j]
                    .view()
                    .into_shape_with_order(n)
                    .expect("contiguous"),
                masses[j],
                snapshot.masses[j],
                cfg.epsilon,
            )?;
            let c = kernelized_inner(ghat, col.view(), cfg.kernel_exponent);
            let beta = cfg.beta_scale * snapshot.learning_rate * c;
            out.maps[j] = Zip::from(&cm.maps[j])
                .and(&snapshot.codes.maps[j])
                .map_collect(|&next, &prev| next + beta * prev);
        }
        gates.push(gate);
    }
    ensure_finite(&out.maps, "backtracked code map")?;

    snapshot.responses = responses(fb, &out);
    snapshot.masses = out.l1_norms();
    snapshot.codes = out.clone();
    Ok((out, gates))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CscEpoch {
    pub epoch: usize,
    pub objective: f64,
    pub data: f64,
    pub sparsity: f64,
    pub max_filter_norm_sq: f64,
    pub gate_fires: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CscRun {
    pub filters: FilterBank,
    pub codes: CodeMaps,
    pub trace: Vec<CscEpoch>,
    /// Set when a numeric failure cut the run short.
    pub failure: Option<Error>,
}

/// Alternates backtracking, kernel update and code update for
/// `p.max_outer_iters` epochs. With `coupling = None` this is plain
/// proximal ADMM.
pub fn solve_csc(
    p: &mut CscProblem,
    fb0: FilterBank,
    coupling: Option<&CouplingConfig>,
) -> Result<CscRun> {
    if let Some(cfg) = coupling {
        cfg.validate()?;
    }
    let mut fb = FilterBank::new(
        fb0.filters
            .iter()
            .map(|f| super::prox::prox_unit_ball(f.view()))
            .collect(),
    )?;
    let mut cm = CodeMaps::zeros(fb.len(), p.shape());
    check_shapes(p, &fb, &cm)?;
    let mut snapshot = match coupling {
        Some(_) => Some(CodeSnapshot::new(&fb, &cm, 1.0 / p.rho)?),
        None => None,
    };

    let mut trace = Vec::with_capacity(p.max_outer_iters);
    let mut failure = None;
    for epoch in 0..p.max_outer_iters {
        let step = (|| -> Result<CscEpoch> {
            let mut fires = 0;
            if let (Some(cfg), Some(snap)) = (coupling, snapshot.as_mut()) {
                let (codes, gates) = cogd_backtrack_codes(p, &fb, &cm, cfg, snap, epoch)?;
                fires = gates.iter().filter(|g| g.fire).count();
                cm = codes;
            }
            fb = kernel_update(p, &fb, &cm)?;
            cm = code_update(p, &fb, &cm)?;
            let obj = csc_objective(p, &fb, &cm)?;
            if !obj.value().is_finite() {
                return Err(Error::Numeric(format!(
                    "objective diverged at epoch {epoch}"
                )));
            }
            Ok(CscEpoch {
                epoch,
                objective: obj.value(),
                data: obj.data,
                sparsity: obj.sparsity,
                max_filter_norm_sq: fb.max_norm_sq(),
                gate_fires: fires,
            })
        })();
        match step {
            Ok(row) => trace.push(row),
            Err(e) if e.is_numeric() => {
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(CscRun {
        filters: fb,
        codes: cm,
        trace,
        failure,
    })
}

/// Codes for `p` with the filters held fixed, from zero, with `iters`
/// ADMM passes; returns the codes and `Σ_k A_k ⊛ x_k` over the full image.
pub fn inpaint(p: &CscProblem, fb: &FilterBank, iters: usize) -> Result<(CodeMaps, Array2<f64>)> {
    let mut q = p.clone();
    q.duals.reset();
    q.inner_iters = iters;
    let codes = code_update(&mut q, fb, &CodeMaps::zeros(fb.len(), p.shape()))?;
    let recon = synthesize(fb, &codes)?;
    Ok((codes, recon))
}
