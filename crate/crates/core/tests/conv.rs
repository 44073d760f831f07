use cogd_core::csc::conv::*;
use ndarray::{array, Array2};

#[test]
fn delta_filter_is_identity() {
    let x = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
    let d = array![[1.0]];
    assert_eq!(conv2_circular(d.view(), x.view()), x);
    assert_eq!(correlate2_circular(d.view(), x.view()), x);
}

#[test]
fn shift_filter_wraps() {
    let x = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
    let shift = array![[0.0, 1.0]];
    let y = conv2_circular(shift.view(), x.view());
    assert_eq!(y, array![[3.0, 1.0, 2.0], [6.0, 4.0, 5.0]]);
}

#[test]
fn fft_matches_spatial() {
    let f = array![[0.5, -1.0], [0.25, 2.0], [1.0, 0.0]];
    let x = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
    let fft = Fft2::new((6, 5));
    let a = conv2_circular(f.view(), x.view());
    let b = fft.convolve(f.view(), x.view());
    for (p, q) in a.iter().zip(b.iter()) {
        assert!((p - q).abs() < 1e-10);
    }
}

#[test]
fn fft_round_trip() {
    let x = Array2::from_shape_fn((4, 6), |(i, j)| (i as f64).sin() + j as f64);
    let fft = Fft2::new((4, 6));
    let y = fft.inverse(&fft.forward(x.view()));
    for (p, q) in x.iter().zip(y.iter()) {
        assert!((p - q).abs() < 1e-12);
    }
}
