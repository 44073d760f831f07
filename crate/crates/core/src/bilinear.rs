//! Bilinear least squares with an L1-penalized factor, and the regularized
//! Beale benchmark.
//!
//! The data term carries a factor ½ so that `d/dA = (Ax - b) xᵀ` exactly.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::coupling::{Coordinator, CouplingConfig, EpochSnapshot, GateDecision};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};

/// `sign` with `sign(0) = 0`.
pub fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `½‖b − A x‖² + λ‖x‖₁ + reg·‖A‖²_F`.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearLsq {
    pub a: Array2<f64>,
    pub x: Array1<f64>,
    pub b: Array1<f64>,
    pub lambda: f64,
    pub dense_reg: f64,
}

impl BilinearLsq {
    pub fn new(
        a: Array2<f64>,
        x: Array1<f64>,
        b: Array1<f64>,
        lambda: f64,
        dense_reg: f64,
    ) -> Result<Self> {
        if a.ncols() != x.len() || a.nrows() != b.len() {
            return Err(Error::invalid(format!(
                "A is {}x{}, x has {} entries, b has {}",
                a.nrows(),
                a.ncols(),
                x.len(),
                b.len()
            )));
        }
        if !(lambda >= 0.0) || !(dense_reg >= 0.0) {
            return Err(Error::invalid("regularization weights must be >= 0"));
        }
        Ok(BilinearLsq {
            a,
            x,
            b,
            lambda,
            dense_reg,
        })
    }

    pub fn objective(&self) -> f64 {
        let r = self.ghat();
        0.5 * r.dot(&r)
            + self.lambda * self.x.iter().map(|v| v.abs()).sum::<f64>()
            + self.dense_reg * self.a.iter().map(|v| v * v).sum::<f64>()
    }

    /// Residual `A x − b`.
    pub fn ghat(&self) -> Array1<f64> {
        self.a.dot(&self.x) - &self.b
    }

    /// `(A x − b) xᵀ + 2·reg·A`.
    pub fn grad_a(&self) -> Array2<f64> {
        let r = self.ghat();
        let outer = r
            .view()
            .insert_axis(Axis(1))
            .dot(&self.x.view().insert_axis(Axis(0)));
        outer + &self.a * (2.0 * self.dense_reg)
    }

    /// `Aᵀ(A x − b) + λ·sign(x)`.
    pub fn grad_x(&self) -> Array1<f64> {
        let r = self.ghat();
        self.a.t().dot(&r) + self.x.mapv(|v| self.lambda * sign0(v))
    }
}

/// Beale's function plus `|x1| + x2²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BealeProblem {
    pub constants: [f64; 3],
}

impl Default for BealeProblem {
    fn default() -> Self {
        BealeProblem {
            constants: [1.5, 2.25, 2.625],
        }
    }
}

impl BealeProblem {
    /// Residuals `c_i − x1 + x1·x2^i`, `i = 1, 2, 3`.
    fn residuals(&self, x1: f64, x2: f64) -> [f64; 3] {
        let mut p = 1.0;
        let mut out = [0.0; 3];
        for (o, c) in out.iter_mut().zip(self.constants) {
            p *= x2;
            *o = c - x1 + x1 * p;
        }
        out
    }

    pub fn beale(&self, x1: f64, x2: f64) -> f64 {
        self.residuals(x1, x2).iter().map(|r| r * r).sum()
    }

    /// Gradient of the unregularized Beale term.
    pub fn beale_gradient(&self, x1: f64, x2: f64) -> (f64, f64) {
        let r = self.residuals(x1, x2);
        let mut g1 = 0.0;
        let mut g2 = 0.0;
        for (i, r) in r.iter().enumerate() {
            let n = (i + 1) as i32;
            g1 += 2.0 * r * (x2.powi(n) - 1.0);
            g2 += 2.0 * r * x1 * n as f64 * x2.powi(n - 1);
        }
        (g1, g2)
    }

    pub fn objective(&self, x1: f64, x2: f64) -> f64 {
        self.beale(x1, x2) + x1.abs() + x2 * x2
    }

    pub fn gradient(&self, x1: f64, x2: f64) -> (f64, f64) {
        let (g1, g2) = self.beale_gradient(x1, x2);
        (g1 + sign0(x1), g2 + 2.0 * x2)
    }

    /// Coupling factor for the sparse coordinate `x1`: the Beale term's
    /// gradient in `x2` divided by `x1`, undivided when `|x1| <= epsilon`.
    pub fn ghat(&self, x1: f64, x2: f64, epsilon: f64) -> f64 {
        let (_, g2) = self.beale_gradient(x1, x2);
        if x1.abs() > epsilon {
            g2 / x1
        } else {
            g2
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BealeRow {
    pub iteration: usize,
    pub x1: f64,
    pub x2: f64,
    pub objective: f64,
    pub gate_fired: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BealeRun {
    pub optimizer: OptimizerKind,
    pub cogd: bool,
    pub rows: Vec<BealeRow>,
    /// Sum of Euclidean step lengths.
    pub path_length: f64,
    pub diverged: bool,
}

impl BealeRun {
    pub fn final_objective(&self) -> f64 {
        self.rows.last().map(|r| r.objective).unwrap_or(f64::NAN)
    }

    pub fn gate_fires(&self) -> usize {
        self.rows.iter().filter(|r| r.gate_fired).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BealeSettings {
    pub problem: BealeProblem,
    pub start: (f64, f64),
    pub iterations: usize,
    pub coupling: CouplingConfig,
    pub sgd_lr: f64,
    pub momentum_lr: f64,
    pub adam_lr: f64,
}

impl Default for BealeSettings {
    fn default() -> Self {
        BealeSettings {
            problem: BealeProblem::default(),
            start: (-2.0, -2.0),
            iterations: 200,
            coupling: CouplingConfig {
                alpha_sparse: 1.0,
                alpha_dense: 0.5,
                beta_scale: 0.001,
                ..CouplingConfig::default()
            },
            sgd_lr: 0.001,
            momentum_lr: 0.005,
            adam_lr: 0.1,
        }
    }
}

impl BealeSettings {
    pub fn learning_rate(&self, kind: OptimizerKind) -> f64 {
        match kind {
            OptimizerKind::Sgd => self.sgd_lr,
            OptimizerKind::Momentum => self.momentum_lr,
            OptimizerKind::Adam => self.adam_lr,
        }
    }
}

/// Runs one optimizer on the regularized Beale problem, optionally with
/// the coordinator backtracking `x1` (the L1-penalized coordinate).
pub fn run_beale(settings: &BealeSettings, opt: &OptimizerConfig, cogd: bool) -> Result<BealeRun> {
    let bp = settings.problem;
    let (mut x1, mut x2) = settings.start;
    let mut opt1 = Optimizer::new(opt.clone())?;
    let mut opt2 = Optimizer::new(opt.clone())?;
    let mut coordinator = if cogd {
        Some(Coordinator::new(
            settings.coupling.clone(),
            EpochSnapshot::new(
                Array1::from(vec![x1]),
                Array2::from_elem((1, 1), x2),
                opt.learning_rate,
            )?,
        )?)
    } else {
        None
    };

    let mut rows = Vec::with_capacity(settings.iterations + 1);
    rows.push(BealeRow {
        iteration: 0,
        x1,
        x2,
        objective: bp.objective(x1, x2),
        gate_fired: false,
    });
    let mut path_length = 0.0;
    let mut diverged = false;

    for t in 0..settings.iterations {
        let (g1, g2) = bp.gradient(x1, x2);
        let mut p1 = [x1];
        let mut p2 = [x2];
        match opt1
            .step_in_place(&mut p1, &[g1])
            .and_then(|_| opt2.step_in_place(&mut p2, &[g2]))
        {
            Ok(()) => {}
            Err(e) if e.is_numeric() => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        let (mut n1, n2) = (p1[0], p2[0]);
        let mut gate = GateDecision::default();
        if let Some(c) = coordinator.as_mut() {
            let ghat = Array1::from(vec![bp.ghat(n1, n2, c.cfg.epsilon)]);
            match c.step(
                Array1::from(vec![n1]).view(),
                Array2::from_elem((1, 1), n2).view(),
                ghat.view(),
                t,
            ) {
                Ok((x, g)) => {
                    n1 = x[0];
                    gate = g;
                }
                Err(e) if e.is_numeric() => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        path_length += ((n1 - x1).powi(2) + (n2 - x2).powi(2)).sqrt();
        x1 = n1;
        x2 = n2;
        let f = bp.objective(x1, x2);
        rows.push(BealeRow {
            iteration: t + 1,
            x1,
            x2,
            objective: f,
            gate_fired: gate.fire,
        });
        if !f.is_finite() {
            diverged = true;
            break;
        }
    }

    Ok(BealeRun {
        optimizer: opt.kind,
        cogd,
        rows,
        path_length,
        diverged,
    })
}

/// Every optimizer kind, plain and coordinated, from the shared start.
pub fn run_beale_comparison(
    settings: &BealeSettings,
    kinds: &[OptimizerKind],
) -> Result<Vec<BealeRun>> {
    let mut runs = Vec::with_capacity(kinds.len() * 2);
    for &kind in kinds {
        let opt = OptimizerConfig::new(kind, settings.learning_rate(kind));
        runs.push(run_beale(settings, &opt, false)?);
        runs.push(run_beale(settings, &opt, true)?);
    }
    Ok(runs)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LsqRow {
    pub iteration: usize,
    pub objective: f64,
    pub x_l1: f64,
    pub a_frob: f64,
    pub gate_fired: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LsqRun {
    pub cogd: bool,
    pub rows: Vec<LsqRow>,
    pub final_problem: BilinearLsq,
    /// Set when a numeric failure cut the run short.
    pub failure: Option<Error>,
}

/// A random bilinear least-squares instance: planted sparse `x*` and
/// dense `A*`, observation `b = A* x* + noise`, random starting factors.
pub fn random_lsq_instance<R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    density: f64,
    noise: f64,
    lambda: f64,
    dense_reg: f64,
) -> Result<BilinearLsq> {
    let normal = |rng: &mut R| -> f64 { rng.sample(StandardNormal) };
    let a_true = Array2::from_shape_fn((rows, cols), |_| normal(rng) / (rows as f64).sqrt());
    let x_true: Array1<f64> = (0..cols)
        .map(|_| {
            if rng.random::<f64>() < density {
                normal(rng)
            } else {
                0.0
            }
        })
        .collect();
    let b = a_true.dot(&x_true) + Array1::from_shape_fn(rows, |_| noise * normal(rng));
    let a0 = Array2::from_shape_fn((rows, cols), |_| normal(rng) / (rows as f64).sqrt());
    let x0 = Array1::from_shape_fn(cols, |_| 0.1 * normal(rng));
    BilinearLsq::new(a0, x0, b, lambda, dense_reg)
}

/// Joint gradient descent on `(A, x)` with the coordinator optionally
/// backtracking `x` against the columns of `A`.
pub fn run_lsq(
    problem: &BilinearLsq,
    opt: &OptimizerConfig,
    coupling: Option<&CouplingConfig>,
    iterations: usize,
) -> Result<LsqRun> {
    let mut p = problem.clone();
    let mut opt_a = Optimizer::new(opt.clone())?;
    let mut opt_x = Optimizer::new(opt.clone())?;
    let mut coordinator = match coupling {
        Some(cfg) => Some(Coordinator::new(
            cfg.clone(),
            EpochSnapshot::new(p.x.clone(), p.a.clone(), opt.learning_rate)?,
        )?),
        None => None,
    };
    let row = |p: &BilinearLsq, iteration, gate_fired| LsqRow {
        iteration,
        objective: p.objective(),
        x_l1: p.x.iter().map(|v| v.abs()).sum(),
        a_frob: p.a.iter().map(|v| v * v).sum::<f64>().sqrt(),
        gate_fired,
    };
    let mut rows = vec![row(&p, 0, false)];
    let mut failure = None;
    for t in 0..iterations {
        let step = (|| -> Result<LsqRow> {
            let ga = p.grad_a();
            let gx = p.grad_x();
            let mut a_flat = p.a.iter().copied().collect::<Vec<_>>();
            opt_a.step_in_place(&mut a_flat, &ga.iter().copied().collect::<Vec<_>>())?;
            let a_next = Array2::from_shape_vec(p.a.dim(), a_flat).expect("shape preserved");
            let mut x_next = p.x.clone();
            opt_x.step_in_place(
                x_next.as_slice_mut().expect("contiguous"),
                gx.as_slice().expect("contiguous"),
            )?;
            p.a = a_next;
            p.x = x_next;
            let mut fired = false;
            if let Some(c) = coordinator.as_mut() {
                let ghat = p.ghat();
                let (x, gate) = c.step(p.x.view(), p.a.view(), ghat.view(), t)?;
                p.x = x;
                fired = gate.fire;
            }
            let r = row(&p, t + 1, fired);
            if !r.objective.is_finite() {
                return Err(Error::Numeric(format!(
                    "objective diverged at iteration {}",
                    t + 1
                )));
            }
            Ok(r)
        })();
        match step {
            Ok(r) => rows.push(r),
            Err(e) if e.is_numeric() => {
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(LsqRun {
        cogd: coupling.is_some(),
        rows,
        final_problem: p,
        failure,
    })
}

/// `x ↦ Σ|x_i|`, convenience for callers that only hold a view.
pub fn l1(v: ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}
