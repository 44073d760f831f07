//! A small fully connected network with per-unit soft masks and batch
//! normalization, differentiated by a hand-written tape.
//!
//! Hidden layer `l` computes
//!
//! ```text
//! z = (h Wᵀ) ⊙ m          (m scales output unit j)
//! u = BN(z)               (only when the net normalizes)
//! h' = max(u, 0)
//! ```
//!
//! and a linear head maps the last hidden layer to the outputs. There are
//! no biases, so a unit with `m_j = 0` contributes exactly nothing.

mod train;

pub use train::{
    asynchrony_count, cogd_mask_update, cogd_weight_backtrack, ghat_pruning, layer_gates,
    train_toy, DeepSnapshot, GhatSignal, ToyDataset, ToyEpoch, ToyMode, ToyRun, ToySettings,
    Variant,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// How soft masks are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MaskInit {
    Ones,
    /// `|N(0, 1)|`.
    #[default]
    AbsNormal,
    /// `N(0, 1)`.
    Normal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLayer {
    /// `out x in`; row `j` holds the weights into unit `j`.
    pub weight: Array2<f64>,
    pub mask: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    /// Statistics of the last normalized batch.
    pub batch_mean: Array1<f64>,
    pub batch_var: Array1<f64>,
}

impl HiddenLayer {
    pub fn units(&self) -> usize {
        self.weight.nrows()
    }

    pub fn row_norms(&self, norm: crate::coupling::Norm) -> Vec<f64> {
        self.weight
            .rows()
            .into_iter()
            .map(|r| norm.eval(r.iter()))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TinyNet {
    pub hidden: Vec<HiddenLayer>,
    /// `outputs x last hidden width`.
    pub head: Array2<f64>,
    pub normalize: bool,
    pub epsilon: f64,
}

impl TinyNet {
    /// He-style normal weights, unit `γ`, zero `β`.
    pub fn random<R: Rng>(
        rng: &mut R,
        input: usize,
        widths: &[usize],
        outputs: usize,
        normalize: bool,
        mask_init: MaskInit,
    ) -> Result<Self> {
        if input == 0 || outputs == 0 || widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut fan_in = input;
        let mut hidden = Vec::with_capacity(widths.len());
        for &w in widths {
            let scale = (2.0 / fan_in as f64).sqrt();
            let weight = Array2::from_shape_fn((w, fan_in), |_| {
                scale * rng.sample::<f64, _>(StandardNormal)
            });
            let mask = Array1::from_shape_fn(w, |_| match mask_init {
                MaskInit::Ones => 1.0,
                MaskInit::AbsNormal => rng.sample::<f64, _>(StandardNormal).abs(),
                MaskInit::Normal => rng.sample::<f64, _>(StandardNormal),
            });
            hidden.push(HiddenLayer {
                weight,
                mask,
                gamma: Array1::ones(w),
                beta: Array1::zeros(w),
                batch_mean: Array1::zeros(w),
                batch_var: Array1::ones(w),
            });
            fan_in = w;
        }
        let scale = (1.0 / fan_in as f64).sqrt();
        let head = Array2::from_shape_fn((outputs, fan_in), |_| {
            scale * rng.sample::<f64, _>(StandardNormal)
        });
        let net = TinyNet {
            hidden,
            head,
            normalize,
            epsilon: 1e-5,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("normalization epsilon must be > 0"));
        }
        let mut fan_in = None;
        for (l, layer) in self.hidden.iter().enumerate() {
            let w = layer.units();
            if let Some(f) = fan_in {
                if layer.weight.ncols() != f {
                    return Err(Error::invalid(format!(
                        "layer {l} expects {} inputs, previous has {f}",
                        layer.weight.ncols()
                    )));
                }
            }
            if layer.mask.len() != w || layer.gamma.len() != w || layer.beta.len() != w {
                return Err(Error::invalid(format!(
                    "layer {l}: per-unit arrays must have length {w}"
                )));
            }
            fan_in = Some(w);
        }
        if let Some(f) = fan_in {
            if self.head.ncols() != f {
                return Err(Error::invalid("head does not match the last hidden layer"));
            }
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.head.ncols(), |l| l.weight.ncols())
    }

    /// Stores the batch statistics recorded on `tape`.
    pub fn record_stats(&mut self, tape: &GradientTape) {
        for (layer, rec) in self.hidden.iter_mut().zip(&tape.layers) {
            if let Some(bn) = &rec.norm {
                layer.batch_mean = bn.mean.clone();
                layer.batch_var = bn.var.clone();
            }
        }
    }

    /// Sets masks with `|m_j| < threshold` to exactly zero. Returns how many.
    pub fn zero_small_masks(&mut self, threshold: f64) -> usize {
        let mut n = 0;
        for layer in &mut self.hidden {
            for m in layer.mask.iter_mut() {
                if m.abs() < threshold && *m != 0.0 {
                    *m = 0.0;
                    n += 1;
                }
            }
        }
        n
    }

    /// Removes every hidden unit whose mask is exactly zero, along with the
    /// matching input column of the next layer. Outputs are unchanged.
    pub fn remove_pruned_units(&self) -> Result<TinyNet> {
        if self.normalize {
            return Err(Error::invalid(
                "a normalized unit with a zero mask still emits its shift; removal would change outputs",
            ));
        }
        let mut hidden = Vec::with_capacity(self.hidden.len());
        let mut keep_in: Option<Vec<usize>> = None;
        for layer in &self.hidden {
            let keep: Vec<usize> = (0..layer.units())
                .filter(|&j| layer.mask[j] != 0.0)
                .collect();
            let w = match &keep_in {
                Some(cols) => layer.weight.select(Axis(1), cols),
                None => layer.weight.clone(),
            };
            hidden.push(HiddenLayer {
                weight: w.select(Axis(0), &keep),
                mask: layer.mask.select(Axis(0), &keep),
                gamma: layer.gamma.select(Axis(0), &keep),
                beta: layer.beta.select(Axis(0), &keep),
                batch_mean: layer.batch_mean.select(Axis(0), &keep),
                batch_var: layer.batch_var.select(Axis(0), &keep),
            });
            keep_in = Some(keep);
        }
        let head = match &keep_in {
            Some(cols) => self.head.select(Axis(1), cols),
            None => self.head.clone(),
        };
        Ok(TinyNet {
            hidden,
            head,
            normalize: self.normalize,
            epsilon: self.epsilon,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden.iter().map(|l| l.weight.len()).sum::<usize>() + self.head.len()
    }

    /// Plain-text dump: one `name rows cols` header per tensor followed by
    /// its values in row-major order, one per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "tinynet {} {} {}\n",
            self.hidden.len(),
            self.normalize as u8,
            self.epsilon
        ));
        let mut put =
            |name: &str, rows: usize, cols: usize, values: &mut dyn Iterator<Item = f64>| {
                out.push_str(&format!("{name} {rows} {cols}\n"));
                for v in values {
                    out.push_str(&format!("{v:e}\n"));
                }
            };
        for (l, layer) in self.hidden.iter().enumerate() {
            let (r, c) = layer.weight.dim();
            put(
                &format!("weight{l}"),
                r,
                c,
                &mut layer.weight.iter().copied(),
            );
            for (name, arr) in [
                ("mask", &layer.mask),
                ("gamma", &layer.gamma),
                ("beta", &layer.beta),
                ("mean", &layer.batch_mean),
                ("var", &layer.batch_var),
            ] {
                put(
                    &format!("{name}{l}"),
                    1,
                    arr.len(),
                    &mut arr.iter().copied(),
                );
            }
        }
        let (r, c) = self.head.dim();
        put("head", r, c, &mut self.head.iter().copied());
        out
    }

    pub fn from_text(text: &str) -> Result<TinyNet> {
        let mut lines = text.lines();
        let bad = |msg: &str| Error::invalid(format!("model dump: {msg}"));
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("empty"))?
            .split_whitespace()
            .collect();
        if header.len() != 4 || header[0] != "tinynet" {
            return Err(bad("missing header"));
        }
        let layers: usize = header[1].parse().map_err(|_| bad("layer count"))?;
        let normalize = header[2] == "1";
        let epsilon: f64 = header[3].parse().map_err(|_| bad("epsilon"))?;

        let mut tensor = |expect: &str| -> Result<Array2<f64>> {
            let h: Vec<&str> = lines
                .next()
                .ok_or_else(|| bad("truncated"))?
                .split_whitespace()
                .collect();
            if h.len() != 3 || h[0] != expect {
                return Err(bad(&format!("expected tensor {expect}")));
            }
            let r: usize = h[1].parse().map_err(|_| bad("rows"))?;
            let c: usize = h[2].parse().map_err(|_| bad("cols"))?;
            let mut values = Vec::with_capacity(r * c);
            for _ in 0..r * c {
                let line = lines.next().ok_or_else(|| bad("truncated values"))?;
                values.push(line.trim().parse::<f64>().map_err(|_| bad("value"))?);
            }
            Array2::from_shape_vec((r, c), values).map_err(|_| bad("shape"))
        };
        let row = |a: Array2<f64>| {
            let n = a.len();
            a.into_shape_with_order(n).expect("row vector")
        };
        let mut hidden = Vec::with_capacity(layers);
        for l in 0..layers {
            let weight = tensor(&format!("weight{l}"))?;
            let mask = row(tensor(&format!("mask{l}"))?);
            let gamma = row(tensor(&format!("gamma{l}"))?);
            let beta = row(tensor(&format!("beta{l}"))?);
            let batch_mean = row(tensor(&format!("mean{l}"))?);
            let batch_var = row(tensor(&format!("var{l}"))?);
            hidden.push(HiddenLayer {
                weight,
                mask,
                gamma,
                beta,
                batch_mean,
                batch_var,
            });
        }
        let head = tensor("head")?;
        let net = TinyNet {
            hidden,
            head,
            normalize,
            epsilon,
        };
        net.validate()?;
        Ok(net)
    }
}

/// Batch normalization intermediates for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NormRecord {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub inv_std: Array1<f64>,
    pub xhat: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerRecord {
    pub input: Array2<f64>,
    /// `h Wᵀ` before masking.
    pub pre: Array2<f64>,
    pub norm: Option<NormRecord>,
    /// Activation input `u`.
    pub act_in: Array2<f64>,
}

/// Intermediates of one forward pass, enough to run the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTape {
    pub layers: Vec<LayerRecord>,
    pub last_hidden: Array2<f64>,
    pub output: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weight: Vec<Array2<f64>>,
    pub mask: Vec<Array1<f64>>,
    /// Present only for normalized nets.
    pub gamma: Vec<Array1<f64>>,
    pub beta: Vec<Array1<f64>>,
    pub head: Array2<f64>,
}

/// Batch normalization with biased batch variance.
pub fn norm_forward(
    x: ArrayView2<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    epsilon: f64,
) -> Result<(Array2<f64>, NormRecord)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid(
            "batch normalization needs at least 2 samples",
        ));
    }
    if gamma.len() != x.ncols() || beta.len() != x.ncols() {
        return Err(Error::invalid(
            "gamma/beta length does not match the unit count",
        ));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("epsilon must be >= 0"));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = &x - &mean;
    let var = centered
        .mapv(|v| v * v)
        .mean_axis(Axis(0))
        .expect("non-empty batch");
    let inv_std = var.mapv(|v| {
        let d = (v + epsilon).sqrt();
        if d > 0.0 {
            1.0 / d
        } else {
            0.0
        }
    });
    let xhat = centered * &inv_std;
    let out = &xhat * &gamma + &beta;
    Ok((
        out,
        NormRecord {
            mean,
            var,
            inv_std,
            xhat,
        },
    ))
}

/// Forward pass recording a tape.
pub fn forward_masked(
    net: &TinyNet,
    batch: ArrayView2<f64>,
) -> Result<(Array2<f64>, GradientTape)> {
    if batch.ncols() != net.input_size() {
        return Err(Error::invalid(format!(
            "batch has {} features, net expects {}",
            batch.ncols(),
            net.input_size()
        )));
    }
    if net.normalize && batch.nrows() < 2 {
        return Err(Error::invalid(
            "batch normalization needs at least 2 samples",
        ));
    }
    let mut h = batch.to_owned();
    let mut layers = Vec::with_capacity(net.hidden.len());
    for layer in &net.hidden {
        let pre = h.dot(&layer.weight.t());
        let z = &pre * &layer.mask;
        let (act_in, norm) = if net.normalize {
            let (u, rec) =
                norm_forward(z.view(), layer.gamma.view(), layer.beta.view(), net.epsilon)?;
            (u, Some(rec))
        } else {
            (z, None)
        };
        let next = act_in.mapv(|v| v.max(0.0));
        layers.push(LayerRecord {
            input: h,
            pre,
            norm,
            act_in,
        });
        h = next;
    }
    let output = h.dot(&net.head.t());
    Ok((
        output.clone(),
        GradientTape {
            layers,
            last_hidden: h,
            output,
        },
    ))
}

/// Outputs only.
pub fn predict(net: &TinyNet, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(forward_masked(net, batch)?.0)
}

/// Mean squared error over all samples and outputs, and its gradient with
/// respect to the predictions.
pub fn mse_loss(pred: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != targets.dim() {
        return Err(Error::invalid(format!(
            "predictions {:?} vs targets {:?}",
            pred.dim(),
            targets.dim()
        )));
    }
    let n = pred.len().max(1) as f64;
    let diff = &pred - &targets;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

/// Reverse pass through `tape` given `dL/d output`.
pub fn backward(net: &TinyNet, tape: &GradientTape, d_out: ArrayView2<f64>) -> Result<Gradients> {
    if d_out.dim() != tape.output.dim() {
        return Err(Error::invalid(
            "output gradient does not match the recorded output",
        ));
    }
    let head = d_out.t().dot(&tape.last_hidden);
    let mut dh = d_out.dot(&net.head);

    let count = net.hidden.len();
    let mut weight = vec![Array2::zeros((0, 0)); count];
    let mut mask = vec![Array1::zeros(0); count];
    let mut gamma = Vec::new();
    let mut beta = Vec::new();
    if net.normalize {
        gamma = vec![Array1::zeros(0); count];
        beta = vec![Array1::zeros(0); count];
    }

    for l in (0..count).rev() {
        let layer = &net.hidden[l];
        let rec = &tape.layers[l];
        let mut du = dh;
        du.zip_mut_with(&rec.act_in, |d, &u| {
            if u <= 0.0 {
                *d = 0.0;
            }
        });
        let dz = match &rec.norm {
            Some(bn) => {
                gamma[l] = (&du * &bn.xhat).sum_axis(Axis(0));
                beta[l] = du.sum_axis(Axis(0));
                let dxhat = &du * &layer.gamma;
                let n = dxhat.nrows() as f64;
                let sum_d = dxhat.sum_axis(Axis(0));
                let sum_dx = (&dxhat * &bn.xhat).sum_axis(Axis(0));
                let inner = dxhat * n - &sum_d - &(&bn.xhat * &sum_dx);
                inner * &(&bn.inv_std / n)
            }
            None => du,
        };
        mask[l] = (&dz * &rec.pre).sum_axis(Axis(0));
        let dpre = dz * &layer.mask;
        weight[l] = dpre.t().dot(&rec.input);
        dh = dpre.dot(&layer.weight);
    }
    Ok(Gradients {
        weight,
        mask,
        gamma,
        beta,
        head,
    })
}

/// `mse + λ Σ_l ‖m_l‖₁ + reg Σ ‖W‖²_F` (the head included).
pub fn pruning_loss(
    net: &TinyNet,
    batch: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    lambda: f64,
    weight_reg: f64,
) -> Result<f64> {
    let pred = predict(net, batch)?;
    let (data, _) = mse_loss(pred.view(), targets)?;
    Ok(data + penalty(net, lambda, weight_reg))
}

pub fn penalty(net: &TinyNet, lambda: f64, weight_reg: f64) -> f64 {
    let l1: f64 = net
        .hidden
        .iter()
        .flat_map(|l| l.mask.iter())
        .map(|m| m.abs())
        .sum();
    let frob: f64 = net
        .hidden
        .iter()
        .flat_map(|l| l.weight.iter())
        .chain(net.head.iter())
        .map(|w| w * w)
        .sum();
    lambda * l1 + weight_reg * frob
}

/// Adds the subgradients of [`penalty`] to `grads`.
pub fn add_penalty_gradients(net: &TinyNet, grads: &mut Gradients, lambda: f64, weight_reg: f64) {
    for (l, layer) in net.hidden.iter().enumerate() {
        if lambda != 0.0 {
            grads.mask[l].zip_mut_with(&layer.mask, |g, &m| {
                *g += lambda * crate::bilinear::sign0(m)
            });
        }
        if weight_reg != 0.0 {
            grads.weight[l].scaled_add(2.0 * weight_reg, &layer.weight);
        }
    }
    if weight_reg != 0.0 {
        grads.head.scaled_add(2.0 * weight_reg, &net.head);
    }
}
