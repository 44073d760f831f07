//! First-order optimizers with a shared stepping interface.

use std::f64::consts::PI;

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [
        OptimizerKind::Sgd,
        OptimizerKind::Momentum,
        OptimizerKind::Adam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "momentum" => Some(OptimizerKind::Momentum),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }
}

/// Hyperparameters; `Optimizer` carries the mutable state.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerConfig {
            kind,
            learning_rate,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be positive"));
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    first_moment: Option<Array1<f64>>,
    second_moment: Option<Array1<f64>>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            first_moment: None,
            second_moment: None,
            step_count: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Returns the updated parameters.
    pub fn step(&mut self, params: ArrayView1<f64>, grad: ArrayView1<f64>) -> Result<Array1<f64>> {
        let mut out = params.to_owned();
        let grad = grad.to_vec();
        self.step_in_place(
            out.as_slice_mut().expect("owned arrays are contiguous"),
            &grad,
        )?;
        Ok(out)
    }

    /// Updates `params` in place.
    pub fn step_in_place(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::invalid(format!(
                "params have length {} but gradient has length {}",
                params.len(),
                grad.len()
            )));
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: "gradient".into(),
                index,
            });
        }
        let n = params.len();
        if let Some(m) = &self.first_moment {
            if m.len() != n {
                return Err(Error::invalid("parameter dimension changed between steps"));
            }
        }
        let cfg = &self.config;
        let lr = cfg.learning_rate;
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Momentum => {
                let v = self.first_moment.get_or_insert_with(|| Array1::zeros(n));
                for ((p, g), v) in params.iter_mut().zip(grad).zip(v.iter_mut()) {
                    *v = cfg.momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerKind::Adam => {
                let t = (self.step_count + 1) as i32;
                let m = self.first_moment.get_or_insert_with(|| Array1::zeros(n));
                let v = self.second_moment.get_or_insert_with(|| Array1::zeros(n));
                let c1 = 1.0 - cfg.beta1.powi(t);
                let c2 = 1.0 - cfg.beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
                }
            }
        }
        self.step_count += 1;
        Ok(())
    }
}

/// Learning rate schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over `total` epochs.
    Cosine {
        total: usize,
    },
}

impl Schedule {
    pub fn rate(self, base: f64, epoch: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine { total } => {
                let t = epoch.min(total) as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + (PI * t).cos())
            }
        }
    }
}
