//! Training loop and the two per-unit backtracking rules: soft masks
//! against weight rows (pruning), and weight rows against BN scales.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    add_penalty_gradients, backward, forward_masked, mse_loss, penalty, Gradients, TinyNet,
};
use crate::coupling::{
    difference_quotient, kernelized_inner, top_fraction_flags, CouplingConfig, GateDecision,
};
use crate::error::{check_finite, Error, Result};
use crate::optim::{Optimizer, OptimizerConfig, Schedule};

/// Which bilinear pair the coordinator watches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyMode {
    /// Trainable soft masks, no normalization; masks are backtracked.
    Prune,
    /// Batch-normalized net with masks fixed at their initial values;
    /// weight rows are backtracked against `γ`.
    Norm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Plain,
    Cogd,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Cogd => "cogd",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl ToyDataset {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() || x.nrows() == 0 {
            return Err(Error::invalid(
                "inputs and targets must have the same, non-zero, sample count",
            ));
        }
        Ok(ToyDataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToySettings {
    pub mode: ToyMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    /// L1 weight on the masks (prune mode only).
    pub lambda: f64,
    /// `reg · ‖W‖²_F` on every weight matrix.
    pub weight_reg: f64,
    /// The dense threshold flags the top `1 − a` of row norms; in norm mode
    /// the same quantile sets the threshold on `|γ|`.
    pub quantile: f64,
}

impl ToySettings {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be >= 2"));
        }
        if !(self.lambda >= 0.0) || !(self.weight_reg >= 0.0) {
            return Err(Error::invalid("penalty weights must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.quantile) {
            return Err(Error::invalid("quantile must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Result of dividing a gradient row by its sparse scale.
#[derive(Clone, Debug, PartialEq)]
pub enum GhatSignal {
    Value(Array1<f64>),
    /// The scale is within epsilon of zero.
    GuardNeeded,
}

/// `(∂L/∂W_j) / m_j`.
pub fn ghat_pruning(d_row: ArrayView1<f64>, scale: f64, epsilon: f64) -> GhatSignal {
    if !(scale.abs() > epsilon) {
        return GhatSignal::GuardNeeded;
    }
    GhatSignal::Value(d_row.mapv(|g| g / scale))
}

/// Weights and sparse scales at the last backtracking point.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepSnapshot {
    pub weights: Vec<Array2<f64>>,
    /// Masks in prune mode, `γ` in norm mode.
    pub scales: Vec<Array1<f64>>,
    pub learning_rate: f64,
}

impl DeepSnapshot {
    pub fn capture(net: &TinyNet, mode: ToyMode, learning_rate: f64) -> Self {
        DeepSnapshot {
            weights: net.hidden.iter().map(|l| l.weight.clone()).collect(),
            scales: net
                .hidden
                .iter()
                .map(|l| sparse_scales(l, mode).clone())
                .collect(),
            learning_rate,
        }
    }
}

fn sparse_scales(layer: &super::HiddenLayer, mode: ToyMode) -> &Array1<f64> {
    match mode {
        ToyMode::Prune => &layer.mask,
        ToyMode::Norm => &layer.gamma,
    }
}

/// Per-unit gates of one layer.
pub fn layer_gates(
    layer: &super::HiddenLayer,
    mode: ToyMode,
    cfg: &CouplingConfig,
    quantile: f64,
) -> Vec<GateDecision> {
    let rows = layer.row_norms(cfg.norm);
    let (large, _) = top_fraction_flags(&rows, 1.0 - quantile);
    let small: Vec<bool> = match mode {
        ToyMode::Prune => layer
            .mask
            .iter()
            .map(|m| !(m.abs() >= cfg.alpha_sparse))
            .collect(),
        ToyMode::Norm => {
            let g: Vec<f64> = layer.gamma.iter().map(|v| v.abs()).collect();
            top_fraction_flags(&g, 1.0 - quantile)
                .0
                .into_iter()
                .map(|b| !b)
                .collect()
        }
    };
    small
        .into_iter()
        .zip(large)
        .map(|(s, l)| GateDecision::new(s, l))
        .collect()
}

/// Number of (scale, weight row) pairs in the asynchronous state.
pub fn asynchrony_count(
    net: &TinyNet,
    mode: ToyMode,
    cfg: &CouplingConfig,
    quantile: f64,
) -> usize {
    net.hidden
        .iter()
        .map(|l| {
            layer_gates(l, mode, cfg, quantile)
                .iter()
                .filter(|g| g.fire)
                .count()
        })
        .sum()
}

fn backtrack(
    net: &mut TinyNet,
    grads: &Gradients,
    cfg: &CouplingConfig,
    snapshot: &mut DeepSnapshot,
    epoch: usize,
    mode: ToyMode,
    quantile: f64,
) -> Result<Vec<Vec<GateDecision>>> {
    if snapshot.weights.len() != net.hidden.len() || grads.weight.len() != net.hidden.len() {
        return Err(Error::invalid(
            "snapshot or gradients do not match the network",
        ));
    }
    if !cfg.is_backtrack_epoch(epoch) {
        return Ok(net
            .hidden
            .iter()
            .map(|l| vec![GateDecision::default(); l.units()])
            .collect());
    }
    let mut all = Vec::with_capacity(net.hidden.len());
    for (l, layer) in net.hidden.iter_mut().enumerate() {
        let gates = if cfg.active() {
            layer_gates(layer, mode, cfg, quantile)
        } else {
            vec![GateDecision::default(); layer.units()]
        };
        if cfg.beta_scale != 0.0 {
            for (j, gate) in gates.iter().enumerate() {
                if !gate.fire {
                    continue;
                }
                let scale = sparse_scales(layer, mode)[j];
                let scale_prev = snapshot.scales[l][j];
                let d_row = grads.weight[l].row(j);
                let ghat = match ghat_pruning(d_row, scale, cfg.epsilon) {
                    GhatSignal::Value(g) => g,
                    GhatSignal::GuardNeeded => d_row.to_owned(),
                };
                let col = difference_quotient(
                    layer.weight.row(j),
                    snapshot.weights[l].row(j),
                    scale,
                    scale_prev,
                    cfg.epsilon,
                )?;
                let beta = cfg.beta_scale
                    * snapshot.learning_rate
                    * kernelized_inner(ghat.view(), col.view(), cfg.kernel_exponent);
                match mode {
                    ToyMode::Prune => {
                        let v = layer.mask[j] + beta * scale_prev;
                        check_finite(&[v], &format!("mask {l}.{j}"))?;
                        layer.mask[j] = v;
                    }
                    ToyMode::Norm => {
                        let prev = snapshot.weights[l].row(j).to_owned();
                        let mut row = layer.weight.row_mut(j);
                        row.scaled_add(beta, &prev);
                        check_finite(
                            row.as_slice().unwrap_or(&[]),
                            &format!("weight row {l}.{j}"),
                        )?;
                    }
                }
            }
        }
        all.push(gates);
    }
    let lr = snapshot.learning_rate;
    *snapshot = DeepSnapshot::capture(net, mode, lr);
    Ok(all)
}

/// Backtracks soft masks whose unit is small while its weight row is
/// large. `grads` holds the data-loss gradients. Returns the gates per
/// layer and unit.
pub fn cogd_mask_update(
    net: &mut TinyNet,
    grads: &Gradients,
    cfg: &CouplingConfig,
    snapshot: &mut DeepSnapshot,
    epoch: usize,
    quantile: f64,
) -> Result<Vec<Vec<GateDecision>>> {
    backtrack(net, grads, cfg, snapshot, epoch, ToyMode::Prune, quantile)
}

/// Backtracks whole weight rows whose BN scale is small while the row is
/// large.
pub fn cogd_weight_backtrack(
    net: &mut TinyNet,
    grads: &Gradients,
    cfg: &CouplingConfig,
    snapshot: &mut DeepSnapshot,
    epoch: usize,
    quantile: f64,
) -> Result<Vec<Vec<GateDecision>>> {
    if !net.normalize {
        return Err(Error::invalid(
            "weight backtracking needs a normalized network",
        ));
    }
    backtrack(net, grads, cfg, snapshot, epoch, ToyMode::Norm, quantile)
}

/// Below this magnitude a mask or scale counts as zero in the sparsity
/// columns.
pub const SPARSITY_TOL: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyEpoch {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Data loss plus penalties on the full dataset.
    pub loss: f64,
    pub data_loss: f64,
    pub gate_fires: Vec<usize>,
    pub asynchrony: usize,
    pub mask_sparsity: f64,
    pub gamma_sparsity: f64,
    pub masks: Vec<Vec<f64>>,
    pub gammas: Vec<Vec<f64>>,
    pub row_norms: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyRun {
    pub net: TinyNet,
    pub epochs: Vec<ToyEpoch>,
    pub failure: Option<Error>,
}

fn fraction_small<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let (mut n, mut small) = (0usize, 0usize);
    for v in values {
        n += 1;
        if v.abs() < SPARSITY_TOL {
            small += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        small as f64 / n as f64
    }
}

struct Optimizers {
    weight: Vec<Optimizer>,
    mask: Vec<Optimizer>,
    gamma: Vec<Optimizer>,
    beta: Vec<Optimizer>,
    head: Optimizer,
}

impl Optimizers {
    fn new(net: &TinyNet, cfg: &OptimizerConfig) -> Result<Self> {
        let make = || Optimizer::new(cfg.clone());
        let n = net.hidden.len();
        Ok(Optimizers {
            weight: (0..n).map(|_| make()).collect::<Result<_>>()?,
            mask: (0..n).map(|_| make()).collect::<Result<_>>()?,
            gamma: (0..n).map(|_| make()).collect::<Result<_>>()?,
            beta: (0..n).map(|_| make()).collect::<Result<_>>()?,
            head: make()?,
        })
    }

    fn set_learning_rate(&mut self, lr: f64) {
        for o in self
            .weight
            .iter_mut()
            .chain(&mut self.mask)
            .chain(&mut self.gamma)
            .chain(&mut self.beta)
        {
            o.set_learning_rate(lr);
        }
        self.head.set_learning_rate(lr);
    }

    fn step(&mut self, net: &mut TinyNet, g: &Gradients, mode: ToyMode) -> Result<()> {
        for (l, layer) in net.hidden.iter_mut().enumerate() {
            step(&mut self.weight[l], &mut layer.weight, &g.weight[l])?;
            match mode {
                ToyMode::Prune => step1(&mut self.mask[l], &mut layer.mask, &g.mask[l])?,
                ToyMode::Norm => {
                    step1(&mut self.gamma[l], &mut layer.gamma, &g.gamma[l])?;
                    step1(&mut self.beta[l], &mut layer.beta, &g.beta[l])?;
                }
            }
        }
        step(&mut self.head, &mut net.head, &g.head)
    }
}

fn step(o: &mut Optimizer, p: &mut Array2<f64>, g: &Array2<f64>) -> Result<()> {
    let g = g.as_standard_layout();
    o.step_in_place(
        p.as_slice_mut().expect("parameters are contiguous"),
        g.as_slice().expect("standard layout"),
    )
}

fn step1(o: &mut Optimizer, p: &mut Array1<f64>, g: &Array1<f64>) -> Result<()> {
    o.step_in_place(
        p.as_slice_mut().expect("parameters are contiguous"),
        g.as_slice().expect("contiguous"),
    )
}

/// Data-loss gradients and loss on the whole dataset.
fn full_pass(net: &mut TinyNet, data: &ToyDataset) -> Result<(f64, Gradients)> {
    let (pred, tape) = forward_masked(net, data.x.view())?;
    let (loss, d_out) = mse_loss(pred.view(), data.y.view())?;
    let grads = backward(net, &tape, d_out.view())?;
    net.record_stats(&tape);
    Ok((loss, grads))
}

/// Mini-batch training. After every epoch the full-data gradient is taken
/// and, for the CoGD variant, masks (prune mode) or weight rows (norm
/// mode) are backtracked. The record is cut short on a numeric failure.
pub fn train_toy<R: Rng>(
    mut net: TinyNet,
    data: &ToyDataset,
    settings: &ToySettings,
    cfg: &CouplingConfig,
    variant: Variant,
    rng: &mut R,
) -> Result<ToyRun> {
    settings.validate()?;
    cfg.validate()?;
    net.validate()?;
    if data.x.ncols() != net.input_size() || data.y.ncols() != net.head.nrows() {
        return Err(Error::invalid("dataset does not match the network"));
    }
    if settings.mode == ToyMode::Norm && !net.normalize {
        return Err(Error::invalid("norm mode needs a normalized network"));
    }

    let mut opts = Optimizers::new(&net, &settings.optimizer)?;
    let mut snapshot = DeepSnapshot::capture(&net, settings.mode, settings.optimizer.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(settings.epochs);
    let mut failure = None;

    for epoch in 0..settings.epochs {
        let lr = settings
            .schedule
            .rate(settings.optimizer.learning_rate, epoch);
        let result = (|| -> Result<ToyEpoch> {
            opts.set_learning_rate(lr);
            order.shuffle(rng);
            for chunk in order.chunks(settings.batch_size) {
                if chunk.len() < 2 {
                    continue;
                }
                let xb = data.x.select(Axis(0), chunk);
                let yb = data.y.select(Axis(0), chunk);
                let (pred, tape) = forward_masked(&net, xb.view())?;
                let (loss, d_out) = mse_loss(pred.view(), yb.view())?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "batch loss diverged at epoch {epoch}"
                    )));
                }
                let mut g = backward(&net, &tape, d_out.view())?;
                let lambda = if settings.mode == ToyMode::Prune {
                    settings.lambda
                } else {
                    0.0
                };
                add_penalty_gradients(&net, &mut g, lambda, settings.weight_reg);
                opts.step(&mut net, &g, settings.mode)?;
            }

            let (_, grads) = full_pass(&mut net, data)?;
            let mut fires = vec![0; net.hidden.len()];
            if variant == Variant::Cogd {
                snapshot.learning_rate = lr;
                let gates = match settings.mode {
                    ToyMode::Prune => cogd_mask_update(
                        &mut net,
                        &grads,
                        cfg,
                        &mut snapshot,
                        epoch,
                        settings.quantile,
                    )?,
                    ToyMode::Norm => cogd_weight_backtrack(
                        &mut net,
                        &grads,
                        cfg,
                        &mut snapshot,
                        epoch,
                        settings.quantile,
                    )?,
                };
                for (f, g) in fires.iter_mut().zip(&gates) {
                    *f = g.iter().filter(|g| g.fire).count();
                }
            }

            let (data_loss, _) = full_pass(&mut net, data)?;
            let lambda = if settings.mode == ToyMode::Prune {
                settings.lambda
            } else {
                0.0
            };
            let loss = data_loss + penalty(&net, lambda, settings.weight_reg);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss diverged at epoch {epoch}")));
            }
            Ok(ToyEpoch {
                epoch,
                learning_rate: lr,
                loss,
                data_loss,
                gate_fires: fires,
                asynchrony: asynchrony_count(&net, settings.mode, cfg, settings.quantile),
                mask_sparsity: fraction_small(net.hidden.iter().flat_map(|l| l.mask.iter())),
                gamma_sparsity: fraction_small(net.hidden.iter().flat_map(|l| l.gamma.iter())),
                masks: net.hidden.iter().map(|l| l.mask.to_vec()).collect(),
                gammas: net.hidden.iter().map(|l| l.gamma.to_vec()).collect(),
                row_norms: net.hidden.iter().map(|l| l.row_norms(cfg.norm)).collect(),
            })
        })();
        match result {
            Ok(row) => epochs.push(row),
            Err(e) if e.is_numeric() => {
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ToyRun {
        net,
        epochs,
        failure,
    })
}
