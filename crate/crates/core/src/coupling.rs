//! The cogradient coupling mechanism.
//!
//! A bilinear model couples a sparse variable `x` with a dense partner `A`.
//! When `x` collapses early (small norm) while `A` is still large, the two
//! have converged asynchronously. The coordinator detects that condition
//! and backtracks `x` towards its previous value:
//!
//! ```text
//! x_hat = x_next + beta ⊙ x_prev,   beta = scale · eta · c
//! c_j   = <ghat, dA_j/dx_j>^k
//! ```
//!
//! where `dA_j/dx_j` is estimated by a difference quotient over one
//! backtracking period. Everything here is problem independent; callers
//! supply `ghat` and the dense columns.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

/// Norm used by the sparsity indicator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Norm {
    #[default]
    L1,
    L2,
}

impl Norm {
    pub fn eval<'a>(self, values: impl IntoIterator<Item = &'a f64>) -> f64 {
        match self {
            Norm::L1 => values.into_iter().map(|v| v.abs()).sum(),
            Norm::L2 => values.into_iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

/// Everything the coordinator adds on top of a base optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingConfig {
    /// Power `k` of the polynomial kernel `(u·v)^k`.
    pub kernel_exponent: u32,
    /// Multiplies `eta · c` to form `beta`.
    pub beta_scale: f64,
    /// Threshold on the sparse variable's norm.
    pub alpha_sparse: f64,
    /// Threshold on the dense variable's norm.
    pub alpha_dense: f64,
    /// Gate and backtrack once every `period` epochs.
    pub period: usize,
    /// Below this magnitude a difference or a coordinate counts as zero.
    pub epsilon: f64,
    pub norm: Norm,
    /// When false the gate never fires.
    pub enabled: bool,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        CouplingConfig {
            kernel_exponent: 1,
            beta_scale: 0.001,
            alpha_sparse: 1.0,
            alpha_dense: 0.5,
            period: 1,
            epsilon: 1e-8,
            norm: Norm::L1,
            enabled: true,
        }
    }
}

impl CouplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_exponent < 1 {
            return Err(Error::invalid("kernel_exponent must be >= 1"));
        }
        if !(self.beta_scale >= 0.0) || !self.beta_scale.is_finite() {
            return Err(Error::invalid("beta_scale must be finite and >= 0"));
        }
        if !(self.alpha_sparse >= 0.0) || !(self.alpha_dense >= 0.0) {
            return Err(Error::invalid("thresholds must be >= 0"));
        }
        if self.period < 1 {
            return Err(Error::invalid("period must be >= 1"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon must be >= 0"));
        }
        Ok(())
    }

    /// False when the gate is switched off or `beta_scale` is zero.
    pub fn active(&self) -> bool {
        self.enabled && self.beta_scale > 0.0
    }

    /// True when `epoch` is a backtracking point.
    pub fn is_backtrack_epoch(&self, epoch: usize) -> bool {
        epoch % self.period == 0
    }
}

/// Outcome of the asynchrony test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct GateDecision {
    pub sparse_is_small: bool,
    pub dense_is_large: bool,
    pub fire: bool,
}

impl GateDecision {
    pub fn new(sparse_is_small: bool, dense_is_large: bool) -> Self {
        GateDecision {
            sparse_is_small,
            dense_is_large,
            fire: sparse_is_small && dense_is_large,
        }
    }
}

/// `s(v)`: true iff `R(v) >= alpha`.
pub fn sparsity_indicator(v: &[f64], alpha: f64, norm: Norm) -> Result<bool> {
    if v.is_empty() {
        return Err(Error::invalid("sparsity indicator of an empty array"));
    }
    if !(alpha >= 0.0) {
        return Err(Error::invalid("threshold must be >= 0"));
    }
    Ok(norm.eval(v) >= alpha)
}

/// Fires when the sparse variable is below its threshold while the dense
/// variable is still above its own.
pub fn asynchrony_gate(x: &[f64], a: &[f64], cfg: &CouplingConfig) -> Result<GateDecision> {
    let sparse_large = sparsity_indicator(x, cfg.alpha_sparse, cfg.norm)?;
    let dense_large = sparsity_indicator(a, cfg.alpha_dense, cfg.norm)?;
    Ok(GateDecision::new(!sparse_large, dense_large))
}

/// Polynomial kernel `(<u, v>)^k`.
pub fn kernelized_inner(u: ArrayView1<f64>, v: ArrayView1<f64>, k: u32) -> f64 {
    u.dot(&v).powi(k as i32)
}

/// Kernelized coupling coefficient, one entry per column of `columns`.
///
/// `columns` is `M x N`: column `j` holds `dA_j/dx_j` and must have the
/// same length as `ghat`. With `k = 1` this is the plain inner product.
pub fn coupling_coefficient(
    ghat: ArrayView1<f64>,
    columns: ArrayView2<f64>,
    k: u32,
) -> Result<Array1<f64>> {
    if k < 1 {
        return Err(Error::invalid("kernel exponent must be >= 1"));
    }
    if columns.nrows() != ghat.len() {
        return Err(Error::invalid(format!(
            "ghat has length {} but columns have length {}",
            ghat.len(),
            columns.nrows()
        )));
    }
    Ok(columns
        .axis_iter(Axis(1))
        .map(|col| kernelized_inner(ghat, col, k))
        .collect())
}

/// Difference quotient `(a_curr - a_prev) / (x_curr - x_prev)` for one
/// scalar coordinate, or the all-ones column when either the step or the
/// coordinate itself is within `epsilon` of zero.
pub fn difference_quotient(
    a_curr: ArrayView1<f64>,
    a_prev: ArrayView1<f64>,
    x_curr: f64,
    x_prev: f64,
    epsilon: f64,
) -> Result<Array1<f64>> {
    if a_curr.len() != a_prev.len() {
        return Err(Error::invalid(
            "current and previous columns differ in length",
        ));
    }
    let dx = x_curr - x_prev;
    let guarded = !(dx.abs() > epsilon) || !(x_curr.abs() > epsilon);
    if guarded {
        return Ok(Array1::ones(a_curr.len()));
    }
    let col = Zip::from(&a_curr)
        .and(&a_prev)
        .map_collect(|&c, &p| (c - p) / dx);
    if col.iter().all(|v| v.is_finite()) {
        Ok(col)
    } else {
        Ok(Array1::ones(a_curr.len()))
    }
}

/// Column-wise difference quotients of the dense variable with respect to
/// each sparse coordinate. `a_*` are `M x N`, `x_*` have length `N`.
pub fn finite_difference_coupling(
    a_curr: ArrayView2<f64>,
    a_prev: ArrayView2<f64>,
    x_curr: ArrayView1<f64>,
    x_prev: ArrayView1<f64>,
    epsilon: f64,
) -> Result<Array2<f64>> {
    if a_curr.dim() != a_prev.dim() {
        return Err(Error::invalid("dense snapshots differ in shape"));
    }
    if x_curr.len() != x_prev.len() || x_curr.len() != a_curr.ncols() {
        return Err(Error::invalid(format!(
            "sparse variable of length {} does not match {} dense columns",
            x_curr.len(),
            a_curr.ncols()
        )));
    }
    let mut out = Array2::zeros(a_curr.dim());
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let q = difference_quotient(
            a_curr.column(j),
            a_prev.column(j),
            x_curr[j],
            x_prev[j],
            epsilon,
        )?;
        col.assign(&q);
    }
    Ok(out)
}

/// Projection `x_next + beta ⊙ x_prev`.
pub fn project(
    x_next: ArrayView1<f64>,
    x_prev: ArrayView1<f64>,
    beta: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    if x_next.len() != x_prev.len() || x_next.len() != beta.len() {
        return Err(Error::invalid(format!(
            "projection operands have lengths {}, {}, {}",
            x_next.len(),
            x_prev.len(),
            beta.len()
        )));
    }
    Ok(Zip::from(&x_next)
        .and(&x_prev)
        .and(&beta)
        .map_collect(|&n, &p, &b| n + b * p))
}

/// Values at the last backtracking point.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSnapshot {
    pub x_prev: Array1<f64>,
    /// Dense variable, one column per sparse coordinate.
    pub a_prev: Array2<f64>,
    /// Step size of the sparse variable's optimizer.
    pub learning_rate: f64,
}

impl EpochSnapshot {
    pub fn new(x_prev: Array1<f64>, a_prev: Array2<f64>, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        if a_prev.ncols() != x_prev.len() {
            return Err(Error::invalid(
                "dense snapshot needs one column per sparse coordinate",
            ));
        }
        Ok(EpochSnapshot {
            x_prev,
            a_prev,
            learning_rate,
        })
    }
}

/// One coordinator step.
///
/// On a backtracking epoch the gate is evaluated on `(x_next, a_curr)`; if
/// it fires, `x_next` is projected with `beta = scale · eta · c`. The
/// snapshot is refreshed on every backtracking epoch whether or not the
/// gate fired. On other epochs `x_next` passes through untouched.
pub fn cogd_step(
    x_next: ArrayView1<f64>,
    a_curr: ArrayView2<f64>,
    ghat: ArrayView1<f64>,
    snapshot: &mut EpochSnapshot,
    cfg: &CouplingConfig,
    epoch: usize,
) -> Result<(Array1<f64>, GateDecision)> {
    if x_next.len() != snapshot.x_prev.len() || a_curr.dim() != snapshot.a_prev.dim() {
        return Err(Error::invalid("snapshot shapes changed during the run"));
    }
    if !cfg.is_backtrack_epoch(epoch) {
        return Ok((x_next.to_owned(), GateDecision::default()));
    }

    let gate = if cfg.active() {
        let a_flat: Vec<f64> = a_curr.iter().copied().collect();
        asynchrony_gate(&x_next.to_vec(), &a_flat, cfg)?
    } else {
        GateDecision::default()
    };

    let out = if gate.fire && cfg.beta_scale != 0.0 {
        let columns = finite_difference_coupling(
            a_curr,
            snapshot.a_prev.view(),
            x_next,
            snapshot.x_prev.view(),
            cfg.epsilon,
        )?;
        let c = coupling_coefficient(ghat, columns.view(), cfg.kernel_exponent)?;
        let beta = c * (cfg.beta_scale * snapshot.learning_rate);
        let out = project(x_next, snapshot.x_prev.view(), beta.view())?;
        if let Some(index) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "cogd projection".into(),
                index,
            });
        }
        out
    } else {
        x_next.to_owned()
    };

    snapshot.x_prev.assign(&out);
    snapshot.a_prev.assign(&a_curr);
    Ok((out, gate))
}

/// Owns a snapshot and a config; the stateful face of [`cogd_step`].
#[derive(Clone, Debug)]
pub struct Coordinator {
    pub cfg: CouplingConfig,
    pub snapshot: EpochSnapshot,
}

impl Coordinator {
    pub fn new(cfg: CouplingConfig, snapshot: EpochSnapshot) -> Result<Self> {
        cfg.validate()?;
        Ok(Coordinator { cfg, snapshot })
    }

    pub fn step(
        &mut self,
        x_next: ArrayView1<f64>,
        a_curr: ArrayView2<f64>,
        ghat: ArrayView1<f64>,
        epoch: usize,
    ) -> Result<(Array1<f64>, GateDecision)> {
        cogd_step(x_next, a_curr, ghat, &mut self.snapshot, &self.cfg, epoch)
    }
}

/// Flags the top `fraction` of `values` (by value, ties broken by index)
/// as large. Returns the flags and the smallest flagged value.
pub fn top_fraction_flags(values: &[f64], fraction: f64) -> (Vec<bool>, f64) {
    let n = values.len();
    let count = ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    let mut flags = vec![false; n];
    for &i in &order[n - count..] {
        flags[i] = true;
    }
    let threshold = if count == 0 {
        f64::INFINITY
    } else {
        values[order[n - count]]
    };
    (flags, threshold)
}
