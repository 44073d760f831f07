use cogd_core::coupling::{
    asynchrony_gate, cogd_step, coupling_coefficient, difference_quotient, project,
    top_fraction_flags, CouplingConfig, EpochSnapshot, Norm,
};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

/// `(x_next, x_prev, a_curr, a_prev, ghat)` with matching shapes.
fn step_inputs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Array2<f64>, Array2<f64>, Vec<f64>)>
{
    (1usize..6, 1usize..6).prop_flat_map(|(m, n)| {
        (
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-3.0f64..3.0, m * n),
            prop::collection::vec(-3.0f64..3.0, m * n),
            prop::collection::vec(-3.0f64..3.0, m),
        )
            .prop_map(move |(xn, xp, ac, ap, g)| {
                (
                    xn,
                    xp,
                    Array2::from_shape_vec((m, n), ac).unwrap(),
                    Array2::from_shape_vec((m, n), ap).unwrap(),
                    g,
                )
            })
    })
}

fn firing_cfg() -> CouplingConfig {
    // huge sparse threshold and zero dense threshold: the gate always fires
    CouplingConfig {
        alpha_sparse: 1e9,
        alpha_dense: 0.0,
        ..CouplingConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn zero_beta_scale_is_identity((xn, xp, ac, ap, g) in step_inputs(), epoch in 0usize..10) {
        let cfg = CouplingConfig { beta_scale: 0.0, ..firing_cfg() };
        let mut snap = EpochSnapshot::new(Array1::from(xp), ap, 0.1).unwrap();
        let x = Array1::from(xn);
        let (out, _) = cogd_step(x.view(), ac.view(), Array1::from(g).view(), &mut snap, &cfg, epoch).unwrap();
        prop_assert_eq!(out, x);
    }

    #[test]
    fn disabled_gate_is_identity((xn, xp, ac, ap, g) in step_inputs(), epoch in 0usize..10) {
        let cfg = CouplingConfig { enabled: false, ..firing_cfg() };
        let mut snap = EpochSnapshot::new(Array1::from(xp), ap, 0.1).unwrap();
        let x = Array1::from(xn);
        let (out, gate) = cogd_step(x.view(), ac.view(), Array1::from(g).view(), &mut snap, &cfg, epoch).unwrap();
        prop_assert!(!gate.fire);
        prop_assert_eq!(out, x);
    }

    #[test]
    fn fired_step_matches_hand_computation((xn, xp, ac, ap, g) in step_inputs(), k in 1u32..4) {
        let cfg = CouplingConfig { kernel_exponent: k, beta_scale: 0.01, ..firing_cfg() };
        let lr = 0.2;
        let mut snap = EpochSnapshot::new(Array1::from(xp.clone()), ap.clone(), lr).unwrap();
        let (out, gate) = cogd_step(
            Array1::from(xn.clone()).view(),
            ac.view(),
            Array1::from(g.clone()).view(),
            &mut snap,
            &cfg,
            0,
        )
        .unwrap();
        prop_assert!(gate.fire);
        for j in 0..xn.len() {
            let dx = xn[j] - xp[j];
            let col: Vec<f64> = if dx.abs() > cfg.epsilon && xn[j].abs() > cfg.epsilon {
                (0..g.len()).map(|i| (ac[[i, j]] - ap[[i, j]]) / dx).collect()
            } else {
                vec![1.0; g.len()]
            };
            let dot: f64 = g.iter().zip(&col).map(|(a, b)| a * b).sum();
            let beta = cfg.beta_scale * lr * dot.powi(k as i32);
            let want = xn[j] + beta * xp[j];
            prop_assert!((out[j] - want).abs() <= 1e-9 * (1.0 + want.abs()), "j={} {} vs {}", j, out[j], want);
        }
        // the snapshot now holds the projected point and the current dense value
        prop_assert_eq!(&snap.x_prev, &out);
        prop_assert_eq!(&snap.a_prev, &ac);
    }

    #[test]
    fn off_period_epochs_pass_through((xn, xp, ac, ap, g) in step_inputs(), period in 2usize..5, e in 1usize..100) {
        prop_assume!(e % period != 0);
        let cfg = CouplingConfig { period, ..firing_cfg() };
        let mut snap = EpochSnapshot::new(Array1::from(xp), ap, 0.1).unwrap();
        let before = snap.clone();
        let x = Array1::from(xn);
        let (out, gate) = cogd_step(x.view(), ac.view(), Array1::from(g).view(), &mut snap, &cfg, e).unwrap();
        prop_assert!(!gate.fire);
        prop_assert_eq!(out, x);
        prop_assert_eq!(snap, before);
    }

    #[test]
    fn gate_fires_iff_sparse_small_and_dense_large(
        x in prop::collection::vec(-2.0f64..2.0, 1..8),
        a in prop::collection::vec(-2.0f64..2.0, 1..8),
        alpha_s in 0.0f64..5.0,
        alpha_d in 0.0f64..5.0,
        l2 in any::<bool>(),
    ) {
        let norm = if l2 { Norm::L2 } else { Norm::L1 };
        let cfg = CouplingConfig { alpha_sparse: alpha_s, alpha_dense: alpha_d, norm, ..CouplingConfig::default() };
        let r = |v: &[f64]| if l2 { v.iter().map(|t| t * t).sum::<f64>().sqrt() } else { v.iter().map(|t| t.abs()).sum() };
        let gate = asynchrony_gate(&x, &a, &cfg).unwrap();
        prop_assert_eq!(gate.fire, r(&x) < alpha_s && r(&a) >= alpha_d);
    }

    #[test]
    fn projection_is_affine(
        v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -1.0f64..1.0), 1..10),
    ) {
        let n = Array1::from(v.iter().map(|t| t.0).collect::<Vec<_>>());
        let p = Array1::from(v.iter().map(|t| t.1).collect::<Vec<_>>());
        let b = Array1::from(v.iter().map(|t| t.2).collect::<Vec<_>>());
        let out = project(n.view(), p.view(), b.view()).unwrap();
        for i in 0..v.len() {
            prop_assert_eq!(out[i], v[i].0 + v[i].2 * v[i].1);
        }
        let zero = Array1::zeros(v.len());
        prop_assert_eq!(project(n.view(), p.view(), zero.view()).unwrap(), n);
    }

    #[test]
    fn top_fraction_flags_count(values in prop::collection::vec(-5.0f64..5.0, 1..30), f in 0.0f64..1.0) {
        let (flags, thr) = top_fraction_flags(&values, f);
        let count = flags.iter().filter(|&&b| b).count();
        prop_assert_eq!(count, (f * values.len() as f64).round() as usize);
        for (v, b) in values.iter().zip(&flags) {
            if *b {
                prop_assert!(*v >= thr);
            } else if count > 0 {
                prop_assert!(*v <= thr);
            }
        }
    }
}

#[test]
fn difference_quotient_guards() {
    let a = Array1::from(vec![1.0, 2.0]);
    let b = Array1::from(vec![0.0, 0.0]);
    let ones = Array1::from(vec![1.0, 1.0]);
    assert_eq!(
        difference_quotient(a.view(), b.view(), 0.5, 0.5, 1e-8).unwrap(),
        ones
    );
    assert_eq!(
        difference_quotient(a.view(), b.view(), 0.0, 1.0, 1e-8).unwrap(),
        ones
    );
    let q = difference_quotient(a.view(), b.view(), 2.0, 1.5, 1e-8).unwrap();
    assert_eq!(q, Array1::from(vec![2.0, 4.0]));
}

#[test]
fn coupling_coefficient_kernel() {
    let g = Array1::from(vec![1.0, -2.0]);
    let cols = Array2::from_shape_vec((2, 2), vec![3.0, 1.0, 1.0, 1.0]).unwrap();
    assert_eq!(
        coupling_coefficient(g.view(), cols.view(), 1).unwrap(),
        Array1::from(vec![1.0, -1.0])
    );
    assert_eq!(
        coupling_coefficient(g.view(), cols.view(), 3).unwrap(),
        Array1::from(vec![1.0, -1.0])
    );
    assert_eq!(
        coupling_coefficient(g.view(), cols.view(), 2).unwrap(),
        Array1::from(vec![1.0, 1.0])
    );
    assert!(coupling_coefficient(g.view(), cols.view(), 0).is_err());
}
