//! Analytic SLNet gradients against central finite differences.

mod common;

use common::central_difference;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slnet_core::slnet::{backward, loss, Hyperparams, SLNetModel};
use slnet_core::FlatMatrix;

/// A window whose entries sit at least `margin` away from the network output,
/// so the absolute-value kinks of the loss are not crossed by the probe step.
fn window_away_from_kinks(model: &SLNetModel, h: usize, w: usize, seed: u64, margin: f64) -> FlatMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = model.frames();
    let probe = FlatMatrix::new(k, h * w, (0..k * h * w).map(|_| rng.random_range(0.0..1.0)).collect())
        .unwrap()
        .with_shape(k, h, w)
        .unwrap();
    let out = model.forward(&probe).unwrap();
    // Keep the input, nudge nothing: instead reject seeds with near-ties.
    let min_gap = probe
        .data()
        .iter()
        .zip(out.data())
        .map(|(m, l)| (m - l).abs())
        .fold(f64::INFINITY, f64::min);
    assert!(min_gap > margin, "seed {} has a near-tie ({})", seed, min_gap);
    probe
}

fn check(model: &SLNetModel, window: &FlatMatrix, alpha: f64, tol: f64) -> f64 {
    let hp = Hyperparams {
        mu: 0.0,
        alpha,
        ..Hyperparams::default()
    };
    let (_, grads) = backward(model, window, &hp).unwrap();
    let analytic = grads.flat();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut probe = model.clone();
        let p0 = *probe.param_mut(i);
        let numeric = central_difference(
            |p| {
                *probe.param_mut(i) = p;
                loss(window, &probe.forward(window).unwrap(), 0.0, alpha).unwrap().total
            },
            p0,
            1e-5,
        );
        // Central differences of an O(1) loss carry ~1e-11 rounding noise, so
        // gradients that vanish exactly are compared against that floor.
        let scale = a.abs().max(numeric.abs());
        if scale < 1e-9 {
            assert!(
                (a - numeric).abs() < 1e-9,
                "param {}: analytic {} numeric {}",
                i,
                a,
                numeric
            );
            continue;
        }
        let rel = (a - numeric).abs() / scale;
        worst = worst.max(rel);
        assert!(
            rel <= tol,
            "param {}: analytic {} numeric {} rel {}",
            i,
            a,
            numeric,
            rel
        );
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for seed in [1, 2, 3] {
        let model = SLNetModel::new(3, 2, 3, seed).unwrap();
        let window = window_away_from_kinks(&model, 6, 5, 40 + seed, 1e-4);
        check(&model, &window, 12.0, 1e-4);
        check(&model, &window, 0.0, 1e-4);
    }
}

#[test]
fn wider_kernel_and_hidden_layer() {
    let model = SLNetModel::new(3, 4, 5, 77).unwrap();
    let window = window_away_from_kinks(&model, 7, 7, 78, 1e-4);
    check(&model, &window, 3.0, 1e-4);
}
