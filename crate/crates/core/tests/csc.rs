use cogd_core::coupling::CouplingConfig;
use cogd_core::csc::conv::{conv2_circular, correlate2_circular, filter_adjoint, Fft2};
use cogd_core::csc::{csc_objective, solve_csc, synthesize, CodeMaps, CscProblem, FilterBank};
use cogd_core::metrics::psnr;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;

fn arr(rng: &mut Pcg64, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.sample(StandardNormal))
}

/// Image from unit-norm filters and sparse codes, plus its ingredients.
fn synthetic(
    seed: u64,
    k: usize,
    d: usize,
    n: usize,
    density: f64,
) -> (Array2<f64>, FilterBank, CodeMaps) {
    let mut rng = Pcg64::seed_from_u64(seed);
    let filters = (0..k)
        .map(|_| {
            let f = arr(&mut rng, (d, d));
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            f / norm
        })
        .collect();
    let fb = FilterBank::new(filters).unwrap();
    let maps = (0..k)
        .map(|_| {
            Array2::from_shape_fn((n, n), |_| {
                if rng.random::<f64>() < density {
                    rng.sample(StandardNormal)
                } else {
                    0.0
                }
            })
        })
        .collect();
    let cm = CodeMaps { maps };
    (synthesize(&fb, &cm).unwrap(), fb, cm)
}

fn peak(img: &Array2<f64>) -> f64 {
    let (lo, hi) = img
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    hi - lo
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_convolution_matches_spatial(seed in any::<u64>(), h in 3usize..10, w in 3usize..10, d in 1usize..4) {
        let mut rng = Pcg64::seed_from_u64(seed);
        let f = arr(&mut rng, (d, d));
        let x = arr(&mut rng, (h, w));
        let fft = Fft2::new((h, w));
        let a = fft.convolve(f.view(), x.view());
        let b = conv2_circular(f.view(), x.view());
        for (p, q) in a.iter().zip(b.iter()) {
            prop_assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn correlation_is_the_adjoint(seed in any::<u64>(), h in 3usize..10, w in 3usize..10, d in 1usize..4) {
        let mut rng = Pcg64::seed_from_u64(seed);
        let f = arr(&mut rng, (d, d));
        let x = arr(&mut rng, (h, w));
        let y = arr(&mut rng, (h, w));
        let lhs = (&conv2_circular(f.view(), x.view()) * &y).sum();
        let rhs = (&x * &correlate2_circular(f.view(), y.view())).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
        // and with respect to the filter
        let rhs_f = (&f * &filter_adjoint(x.view(), y.view(), (d, d))).sum();
        prop_assert!((lhs - rhs_f).abs() < 1e-9 * (1.0 + lhs.abs()));
    }
}

#[test]
fn recovers_synthetic_image_with_full_mask() {
    let (img, _, _) = synthetic(3, 4, 5, 24, 0.05);
    let mut rng = Pcg64::seed_from_u64(4);
    let init = FilterBank::random(&mut rng, 4, 5).unwrap();
    let mut p = CscProblem::full_mask(img.clone(), 0.05, 1.0).unwrap();
    p.max_outer_iters = 40;
    let run = solve_csc(&mut p, init, None).unwrap();
    assert!(run.failure.is_none());
    assert!(run.filters.is_feasible(1e-9));
    let recon = synthesize(&run.filters, &run.codes).unwrap();
    let q = psnr(img.view(), recon.view(), peak(&img)).unwrap();
    assert!(q > 30.0, "psnr {q}");
}

#[test]
fn known_filters_give_high_psnr() {
    let (img, fb, _) = synthetic(5, 4, 5, 24, 0.05);
    let mut p = CscProblem::full_mask(img.clone(), 0.01, 1.0).unwrap();
    p.max_outer_iters = 40;
    let run = solve_csc(&mut p, fb, None).unwrap();
    let recon = synthesize(&run.filters, &run.codes).unwrap();
    let q = psnr(img.view(), recon.view(), peak(&img)).unwrap();
    assert!(q > 40.0, "psnr {q}");
}

#[test]
fn objective_settles() {
    let (img, _, _) = synthetic(6, 4, 5, 24, 0.05);
    let mut rng = Pcg64::seed_from_u64(7);
    let init = FilterBank::random(&mut rng, 4, 5).unwrap();
    let mut p = CscProblem::full_mask(img, 0.05, 1.0).unwrap();
    p.max_outer_iters = 30;
    let run = solve_csc(&mut p, init, None).unwrap();
    let first = run.trace[0].objective;
    let last = run.trace.last().unwrap().objective;
    assert!(last < first, "{first} -> {last}");
    for r in &run.trace {
        assert!(r.max_filter_norm_sq <= 1.0 + 1e-9);
    }
    let obj = csc_objective(&p, &run.filters, &run.codes).unwrap();
    assert!(obj.feasible);
    assert!((obj.value() - last).abs() < 1e-9 * last.abs().max(1.0));
}

#[test]
fn disabled_coupling_is_trace_identical() {
    let (img, _, _) = synthetic(8, 3, 4, 16, 0.08);
    let mut rng = Pcg64::seed_from_u64(9);
    let init = FilterBank::random(&mut rng, 3, 4).unwrap();
    let mask = Array2::from_shape_fn(
        img.dim(),
        |(i, j)| if (i * 5 + j * 3) % 4 == 0 { 0.0 } else { 1.0 },
    );
    let run = |cfg: Option<&CouplingConfig>| {
        let mut p = CscProblem::new(&img * &mask, mask.clone(), 0.05, 1.0).unwrap();
        p.max_outer_iters = 10;
        solve_csc(&mut p, init.clone(), cfg).unwrap()
    };
    let plain = run(None);
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
        let other = run(Some(&cfg));
        assert_eq!(plain.filters, other.filters);
        assert_eq!(plain.codes, other.codes);
        for (a, b) in plain.trace.iter().zip(&other.trace) {
            assert_eq!(a.objective.to_bits(), b.objective.to_bits());
            assert_eq!(a.data.to_bits(), b.data.to_bits());
            assert_eq!(a.sparsity.to_bits(), b.sparsity.to_bits());
        }
    }
}

#[test]
fn rejects_bad_problems() {
    let img = Array2::zeros((4, 4));
    assert!(CscProblem::new(img.clone(), Array2::zeros((4, 5)), 0.1, 1.0).is_err());
    assert!(CscProblem::full_mask(img.clone(), -0.1, 1.0).is_err());
    assert!(CscProblem::full_mask(img, 0.1, 0.0).is_err());
    assert!(FilterBank::new(vec![]).is_err());
}
