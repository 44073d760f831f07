//! One function per experiment. Each runs the plain method and its
//! coordinated counterpart from identical state and returns every trace.

use cogd_core::bilinear::{
    random_lsq_instance, run_beale_comparison, run_lsq, BealeProblem, BealeSettings,
};
use cogd_core::coupling::CouplingConfig;
use cogd_core::csc::{
    contrast_normalize, inpaint, solve_csc, synthesize, CscProblem, CscRun, FilterBank,
};
use cogd_core::deep::{predict, train_toy, TinyNet, ToyMode, ToyRun, ToySettings, Variant};
use cogd_core::metrics::{psnr, ssim_with_window, SSIM_WINDOW};
use cogd_core::optim::OptimizerKind;
use ndarray::Array2;
use rand::Rng;

use crate::config::{Experiment, ExperimentConfig};
use crate::data::{
    filter_synthesis, make_mask, rng_from_seed, teacher_dataset, FilterParams, TeacherParams,
};
use crate::error::{HarnessError, Result};
use crate::pgm::load_pgm;
use crate::record::{format_value, RunOutput, RunRecord, Table};

/// Files to write plus the numeric failure, if any, that cut a run short.
#[derive(Debug)]
pub struct Outcome {
    pub output: RunOutput,
    pub failure: Option<cogd_core::Error>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let name = cfg.experiment.name();
    let wrap = |e: cogd_core::Error| HarnessError::core(name, e);
    match cfg.experiment {
        Experiment::Beale => beale(cfg).map_err(wrap),
        Experiment::BilinearLsq => bilinear_lsq(cfg).map_err(wrap),
        Experiment::CscReconstruct | Experiment::CscInpaint => csc(cfg),
        Experiment::PruneToy | Experiment::TrainToy => toy(cfg).map_err(wrap),
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn variant_name(cogd: bool) -> &'static str {
    if cogd {
        "cogd"
    } else {
        "plain"
    }
}

fn beale(cfg: &ExperimentConfig) -> cogd_core::Result<Outcome> {
    let settings = BealeSettings {
        problem: BealeProblem::default(),
        start: (cfg.start_x1, cfg.start_x2),
        iterations: cfg.iterations,
        coupling: cfg.coupling.clone(),
        sgd_lr: cfg.lr_sgd,
        momentum_lr: cfg.lr_momentum,
        adam_lr: cfg.lr_adam,
    };
    let runs = run_beale_comparison(&settings, &OptimizerKind::ALL)?;
    let mut out = RunOutput::default();
    let mut table = Table::new(
        "paths",
        &[
            "optimizer",
            "variant",
            "path_length",
            "final_objective",
            "gate_fires",
            "diverged",
        ],
    );
    for run in &runs {
        let v = variant_name(run.cogd);
        let opt = run.optimizer.name();
        let mut rec = RunRecord::new(
            format!("beale_{opt}_{v}"),
            &["iteration", "x1", "x2", "objective", "gate_fired"],
        );
        for r in &run.rows {
            rec.push(vec![
                r.iteration as f64,
                r.x1,
                r.x2,
                r.objective,
                flag(r.gate_fired),
            ]);
        }
        out.records.push(rec);
        table.push(vec![
            opt.into(),
            v.into(),
            format_value(run.path_length),
            format_value(run.final_objective()),
            run.gate_fires().to_string(),
            run.diverged.to_string(),
        ]);
        out.summarize(
            format!("{opt}_{v}_path_length"),
            format_value(run.path_length),
        );
        out.summarize(
            format!("{opt}_{v}_final_objective"),
            format_value(run.final_objective()),
        );
        out.summarize(format!("{opt}_{v}_gate_fires"), run.gate_fires());
        out.summarize(format!("{opt}_{v}_diverged"), run.diverged);
    }
    out.tables.push(table);
    Ok(Outcome {
        output: out,
        failure: None,
    })
}

fn bilinear_lsq(cfg: &ExperimentConfig) -> cogd_core::Result<Outcome> {
    let mut rng = rng_from_seed(cfg.seed);
    let problem = random_lsq_instance(
        &mut rng,
        cfg.rows,
        cfg.cols,
        cfg.density,
        cfg.noise,
        cfg.lambda,
        cfg.dense_reg,
    )?;
    let opt = cfg.optimizer_config();
    let mut out = RunOutput::default();
    let mut failure = None;
    for cogd in [false, true] {
        let coupling = cogd.then_some(&cfg.coupling);
        let run = run_lsq(&problem, &opt, coupling, cfg.iterations)?;
        let v = variant_name(cogd);
        let mut rec = RunRecord::new(
            format!("lsq_{v}"),
            &["iteration", "objective", "x_l1", "a_frob", "gate_fired"],
        );
        for r in &run.rows {
            rec.push(vec![
                r.iteration as f64,
                r.objective,
                r.x_l1,
                r.a_frob,
                flag(r.gate_fired),
            ]);
        }
        let last = run.rows.last().expect("initial row");
        out.summarize(format!("{v}_final_objective"), format_value(last.objective));
        out.summarize(
            format!("{v}_gate_fires"),
            run.rows.iter().filter(|r| r.gate_fired).count(),
        );
        out.records.push(rec);
        if failure.is_none() {
            failure = run.failure;
        }
    }
    Ok(Outcome {
        output: out,
        failure,
    })
}

/// Clean image, observation mask, and a label for the metrics table.
fn csc_data<R: Rng>(
    cfg: &ExperimentConfig,
    rng: &mut R,
) -> Result<(Array2<f64>, Array2<f64>, String)> {
    let name = cfg.experiment.name();
    let (clean, id) = if cfg.image.is_empty() {
        let params = FilterParams {
            filters: cfg.filters,
            filter_size: cfg.filter_size,
            image_size: cfg.image_size,
            density: cfg.code_density,
        };
        let s = filter_synthesis(rng, &params).map_err(|e| HarnessError::core(name, e))?;
        (s.image, format!("synthetic-{}", cfg.seed))
    } else {
        let path = std::path::Path::new(&cfg.image);
        let img = load_pgm(path)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        (img, id)
    };
    let mask = if cfg.keep_fraction < 1.0 {
        make_mask(clean.dim(), cfg.keep_fraction, rng.random())
            .map_err(|e| HarnessError::core(name, e))?
    } else {
        Array2::ones(clean.dim())
    };
    let clean = if cfg.normalize && !cfg.image.is_empty() {
        contrast_normalize(clean.view(), mask.view())
            .map_err(|e| HarnessError::core(name, e))?
            .0
    } else {
        clean
    };
    Ok((clean, mask, id))
}

fn range(a: &Array2<f64>) -> (f64, f64) {
    a.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// PSNR with the clean image's dynamic range as peak, and SSIM with the
/// same peak.
pub fn quality(clean: &Array2<f64>, test: &Array2<f64>) -> cogd_core::Result<(f64, f64)> {
    let (lo, hi) = range(clean);
    let peak = if hi > lo { hi - lo } else { 1.0 };
    let p = match psnr(clean.view(), test.view(), peak) {
        Ok(v) => v,
        Err(cogd_core::Error::IdenticalImages) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    let (h, w) = clean.dim();
    let s = ssim_with_window(clean.view(), test.view(), peak, SSIM_WINDOW.min(h).min(w))?;
    Ok((p, s))
}

fn csc(cfg: &ExperimentConfig) -> Result<Outcome> {
    let name = cfg.experiment.name();
    let wrap = |e: cogd_core::Error| HarnessError::core(name, e);
    let mut rng = rng_from_seed(cfg.seed);
    let (clean, mask, id) = csc_data(cfg, &mut rng)?;
    if cfg.filter_size > clean.nrows() || cfg.filter_size > clean.ncols() {
        return Err(wrap(cogd_core::Error::InvalidInput(
            "filters larger than the image".into(),
        )));
    }
    let init = FilterBank::random(&mut rng, cfg.filters, cfg.filter_size).map_err(wrap)?;
    let observed = &clean * &mask;

    let (lo, hi) = range(&clean);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let to_unit = |a: &Array2<f64>| a.mapv(|v| (v - lo) / span);

    let mut out = RunOutput::default();
    out.images.push(("clean".into(), to_unit(&clean)));
    if cfg.keep_fraction < 1.0 {
        out.images
            .push(("observed".into(), to_unit(&observed) * &mask));
    }
    let mut metrics = Table::new("metrics", &["image", "variant", "psnr", "ssim"]);
    let mut failure = None;
    for cogd in [false, true] {
        let v = variant_name(cogd);
        let mut p =
            CscProblem::new(observed.clone(), mask.clone(), cfg.lambda, cfg.rho).map_err(wrap)?;
        p.max_outer_iters = cfg.epochs;
        p.inner_iters = cfg.inner_iters;
        let coupling: Option<&CouplingConfig> = cogd.then_some(&cfg.coupling);
        let run: CscRun = solve_csc(&mut p, init.clone(), coupling).map_err(wrap)?;

        let mut rec = RunRecord::new(
            format!("csc_{v}"),
            &[
                "epoch",
                "objective",
                "data",
                "sparsity",
                "max_filter_norm_sq",
                "gate_fires",
            ],
        );
        for r in &run.trace {
            rec.push(vec![
                r.epoch as f64,
                r.objective,
                r.data,
                r.sparsity,
                r.max_filter_norm_sq,
                r.gate_fires as f64,
            ]);
        }
        out.records.push(rec);

        if let Some(e) = run.failure {
            failure.get_or_insert(e);
            continue;
        }
        let recon = if cfg.experiment == Experiment::CscInpaint {
            inpaint(&p, &run.filters, cfg.inpaint_iters)
                .map_err(wrap)?
                .1
        } else {
            synthesize(&run.filters, &run.codes).map_err(wrap)?
        };
        let (ps, ss) = quality(&clean, &recon).map_err(wrap)?;
        metrics.push(vec![
            id.clone(),
            v.into(),
            format_value(ps),
            format_value(ss),
        ]);
        out.summarize(format!("psnr_{v}"), format_value(ps));
        out.summarize(format!("ssim_{v}"), format_value(ss));
        if let Some(last) = run.trace.last() {
            out.summarize(format!("{v}_final_objective"), format_value(last.objective));
        }
        out.summarize(
            format!("{v}_gate_fires"),
            run.trace.iter().map(|r| r.gate_fires).sum::<usize>(),
        );
        out.summarize(
            format!("{v}_filters_feasible"),
            run.filters.is_feasible(1e-9),
        );
        out.images.push((format!("recon_{v}"), to_unit(&recon)));
    }
    out.tables.push(metrics);
    Ok(Outcome {
        output: out,
        failure,
    })
}

fn toy_records(name: &str, run: &ToyRun, layers: usize) -> (RunRecord, RunRecord) {
    let mut cols: Vec<String> = ["epoch", "learning_rate", "loss", "data_loss", "gate_fires"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((0..layers).map(|l| format!("gate_fires_l{l}")));
    cols.extend(
        ["asynchrony", "mask_sparsity", "gamma_sparsity"]
            .iter()
            .map(|s| s.to_string()),
    );
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut rec = RunRecord::new(format!("toy_{name}"), &col_refs);
    let mut units = RunRecord::new(
        format!("units_{name}"),
        &["epoch", "layer", "unit", "mask", "gamma", "row_norm"],
    );
    for e in &run.epochs {
        let mut row = vec![
            e.epoch as f64,
            e.learning_rate,
            e.loss,
            e.data_loss,
            e.gate_fires.iter().sum::<usize>() as f64,
        ];
        row.extend(e.gate_fires.iter().map(|&f| f as f64));
        row.extend([e.asynchrony as f64, e.mask_sparsity, e.gamma_sparsity]);
        rec.push(row);
        for l in 0..layers {
            for j in 0..e.masks[l].len() {
                units.push(vec![
                    e.epoch as f64,
                    l as f64,
                    j as f64,
                    e.masks[l][j],
                    e.gammas[l][j],
                    e.row_norms[l][j],
                ]);
            }
        }
    }
    (rec, units)
}

/// Zeroes masks under `threshold`, removes those units, and returns the
/// pruned network with the largest output change the removal caused.
pub fn structural_prune(
    net: &TinyNet,
    threshold: f64,
    x: &Array2<f64>,
) -> cogd_core::Result<(TinyNet, usize, f64)> {
    let mut zeroed = net.clone();
    zeroed.zero_small_masks(threshold);
    let removed = zeroed.remove_pruned_units()?;
    let a = predict(&zeroed, x.view())?;
    let b = predict(&removed, x.view())?;
    let diff = a
        .iter()
        .zip(b.iter())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    let units_before: usize = net.hidden.iter().map(|l| l.units()).sum();
    let units_after: usize = removed.hidden.iter().map(|l| l.units()).sum();
    Ok((removed, units_before - units_after, diff))
}

fn toy(cfg: &ExperimentConfig) -> cogd_core::Result<Outcome> {
    let mode = if cfg.experiment == Experiment::TrainToy {
        ToyMode::Norm
    } else {
        ToyMode::Prune
    };
    let mut rng = rng_from_seed(cfg.seed);
    let params = TeacherParams {
        samples: cfg.samples,
        input_dim: cfg.input_dim,
        hidden: cfg.hidden.clone(),
        outputs: cfg.outputs,
        noise: cfg.noise,
    };
    let (data, _) = teacher_dataset(&mut rng, &params)?;
    let net = TinyNet::random(
        &mut rng,
        cfg.input_dim,
        &cfg.hidden,
        cfg.outputs,
        mode == ToyMode::Norm,
        cfg.mask_init,
    )?;
    let settings = ToySettings {
        mode,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        optimizer: cfg.optimizer_config(),
        schedule: cfg.schedule(),
        lambda: cfg.lambda,
        weight_reg: cfg.weight_reg,
        quantile: cfg.quantile,
    };

    let mut out = RunOutput::default();
    let mut failure = None;
    for variant in [Variant::Plain, Variant::Cogd] {
        let v = variant.name();
        let mut r = rng.clone();
        let run = train_toy(
            net.clone(),
            &data,
            &settings,
            &cfg.coupling,
            variant,
            &mut r,
        )?;
        let (rec, units) = toy_records(v, &run, cfg.hidden.len());
        out.records.push(rec);
        out.records.push(units);
        out.texts
            .push((format!("model_{v}.txt"), run.net.to_text()));
        if let (Some(first), Some(last)) = (run.epochs.first(), run.epochs.last()) {
            out.summarize(format!("{v}_final_loss"), format_value(last.loss));
            out.summarize(format!("{v}_asynchrony_first"), first.asynchrony);
            out.summarize(format!("{v}_asynchrony_last"), last.asynchrony);
            out.summarize(
                format!("{v}_gate_fires"),
                run.epochs
                    .iter()
                    .map(|e| e.gate_fires.iter().sum::<usize>())
                    .sum::<usize>(),
            );
        }
        if mode == ToyMode::Prune && run.failure.is_none() {
            let (pruned, removed, diff) = structural_prune(&run.net, cfg.prune_threshold, &data.x)?;
            out.summarize(format!("{v}_pruned_units"), removed);
            out.summarize(
                format!("{v}_params_after_pruning"),
                pruned.parameter_count(),
            );
            out.summarize(format!("{v}_removal_max_abs_diff"), format_value(diff));
        }
        if failure.is_none() {
            failure = run.failure;
        }
    }
    Ok(Outcome {
        output: out,
        failure,
    })
}
