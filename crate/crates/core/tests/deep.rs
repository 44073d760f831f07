use cogd_core::coupling::CouplingConfig;
use cogd_core::deep::{
    norm_forward, predict, train_toy, MaskInit, TinyNet, ToyDataset, ToyMode, ToyRun, ToySettings,
    Variant,
};
use cogd_core::optim::{OptimizerConfig, OptimizerKind, Schedule};
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;

fn dataset(rng: &mut Pcg64, n: usize, input: usize) -> ToyDataset {
    let teacher = TinyNet::random(rng, input, &[8], 1, false, MaskInit::Ones).unwrap();
    let x = Array2::from_shape_fn((n, input), |_| rng.sample(StandardNormal));
    let y = predict(&teacher, x.view()).unwrap();
    ToyDataset::new(x, y).unwrap()
}

fn settings(mode: ToyMode) -> ToySettings {
    ToySettings {
        mode,
        epochs: 6,
        batch_size: 20,
        optimizer: OptimizerConfig::new(OptimizerKind::Momentum, 0.05),
        schedule: Schedule::Cosine { total: 6 },
        lambda: if mode == ToyMode::Prune { 0.01 } else { 0.0 },
        weight_reg: 1e-4,
        quantile: 0.5,
    }
}

fn run(mode: ToyMode, cfg: &CouplingConfig, variant: Variant, seed: u64) -> ToyRun {
    let mut rng = Pcg64::seed_from_u64(seed);
    let data = dataset(&mut rng, 120, 6);
    let init = if mode == ToyMode::Prune {
        MaskInit::AbsNormal
    } else {
        MaskInit::Ones
    };
    let net = TinyNet::random(&mut rng, 6, &[10, 10], 1, mode == ToyMode::Norm, init).unwrap();
    let cfg = CouplingConfig {
        alpha_sparse: 0.5,
        ..cfg.clone()
    };
    train_toy(net, &data, &settings(mode), &cfg, variant, &mut rng).unwrap()
}

fn bits(run: &ToyRun) -> Vec<u64> {
    run.epochs
        .iter()
        .flat_map(|e| {
            [e.loss, e.data_loss, e.mask_sparsity, e.gamma_sparsity]
                .into_iter()
                .chain(e.masks.iter().flatten().copied())
                .chain(e.gammas.iter().flatten().copied())
                .chain(e.row_norms.iter().flatten().copied())
        })
        .map(f64::to_bits)
        .collect()
}

#[test]
fn disabled_coupling_matches_plain_bit_for_bit() {
    for mode in [ToyMode::Prune, ToyMode::Norm] {
        let plain = run(mode, &CouplingConfig::default(), Variant::Plain, 1);
        for cfg in [
            CouplingConfig {
                enabled: false,
                ..CouplingConfig::default()
            },
            CouplingConfig {
                beta_scale: 0.0,
                ..CouplingConfig::default()
            },
        ] {
            let other = run(mode, &cfg, Variant::Cogd, 1);
            assert_eq!(bits(&plain), bits(&other), "{mode:?}");
            assert_eq!(plain.net, other.net);
        }
    }
}

#[test]
fn cogd_changes_something_when_enabled() {
    let plain = run(
        ToyMode::Prune,
        &CouplingConfig::default(),
        Variant::Plain,
        2,
    );
    let cogd = run(ToyMode::Prune, &CouplingConfig::default(), Variant::Cogd, 2);
    let fires: usize = cogd.epochs.iter().flat_map(|e| e.gate_fires.iter()).sum();
    assert!(fires > 0);
    assert_ne!(bits(&plain), bits(&cogd));
}

#[test]
fn training_is_deterministic() {
    for mode in [ToyMode::Prune, ToyMode::Norm] {
        let a = run(mode, &CouplingConfig::default(), Variant::Cogd, 3);
        let b = run(mode, &CouplingConfig::default(), Variant::Cogd, 3);
        assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn training_reduces_loss() {
    let r = run(ToyMode::Norm, &CouplingConfig::default(), Variant::Plain, 4);
    assert!(r.epochs.last().unwrap().data_loss < r.epochs[0].data_loss);
}

#[test]
fn removing_zeroed_units_preserves_outputs() {
    let mut rng = Pcg64::seed_from_u64(5);
    for _ in 0..20 {
        let mut net = TinyNet::random(&mut rng, 5, &[9, 7], 2, false, MaskInit::AbsNormal).unwrap();
        let zeroed = net.zero_small_masks(0.6);
        let small = net.remove_pruned_units().unwrap();
        let units: usize = small.hidden.iter().map(|l| l.units()).sum();
        assert_eq!(units + zeroed, 16);
        let x = Array2::from_shape_fn((30, 5), |_| rng.sample(StandardNormal));
        let a = predict(&net, x.view()).unwrap();
        let b = predict(&small, x.view()).unwrap();
        let diff = (&a - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12, "{diff}");
        assert!(small.parameter_count() <= net.parameter_count());
    }
}

#[test]
fn removal_refuses_normalized_nets() {
    let mut rng = Pcg64::seed_from_u64(6);
    let net = TinyNet::random(&mut rng, 3, &[4], 1, true, MaskInit::Ones).unwrap();
    assert!(net.remove_pruned_units().is_err());
}

#[test]
fn text_dump_round_trips() {
    let mut rng = Pcg64::seed_from_u64(7);
    let net = TinyNet::random(&mut rng, 4, &[5, 3], 2, true, MaskInit::Normal).unwrap();
    let back = TinyNet::from_text(&net.to_text()).unwrap();
    assert_eq!(net, back);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn norm_forward_standardizes(seed in any::<u64>(), n in 2usize..12, d in 1usize..6) {
        let mut rng = Pcg64::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |_| 3.0 * rng.sample::<f64, _>(StandardNormal) + 1.0);
        let gamma = Array1::from_shape_fn(d, |_| rng.random_range(0.5..2.0));
        let beta = Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0));
        let eps = 1e-5;
        let (y, rec) = norm_forward(x.view(), gamma.view(), beta.view(), eps).unwrap();
        let mean = y.mean_axis(Axis(0)).unwrap();
        for j in 0..d {
            prop_assert!((mean[j] - beta[j]).abs() < 1e-9);
            let var = y.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n as f64;
            let want = gamma[j].powi(2) * rec.var[j] / (rec.var[j] + eps);
            prop_assert!((var - want).abs() < 1e-9 * (1.0 + want));
        }
    }

    #[test]
    fn norm_forward_ignores_shift_and_scale(seed in any::<u64>(), shift in -5.0f64..5.0, scale in 0.5f64..4.0) {
        let mut rng = Pcg64::seed_from_u64(seed);
        let x = Array2::from_shape_fn((8, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let g = Array1::ones(3);
        let b = Array1::zeros(3);
        let (y1, _) = norm_forward(x.view(), g.view(), b.view(), 0.0).unwrap();
        let x2 = x.mapv(|v| scale * v + shift);
        let (y2, _) = norm_forward(x2.view(), g.view(), b.view(), 0.0).unwrap();
        for (p, q) in y1.iter().zip(y2.iter()) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }
}
