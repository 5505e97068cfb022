//! Library operators checked against the independent oracles in `common`.

mod common;

use common::*;
use proptest::prelude::*;
use slnet_core::baselines::{median, median_subtract, rolling_ball_background, RollingBallConfig};
use slnet_core::linalg::{svt, thin_svd_small_k};
use slnet_core::{Grid, ImageStack};

#[test]
fn jacobi_oracle_reconstructs() {
    let m = random_matrix(4, 37, 3);
    let (u, s, vt) = jacobi_svd(m.data(), 4, 37);
    for i in 0..4 {
        for j in 0..37 {
            let v: f64 = (0..4).map(|r| u[i * 4 + r] * s[r] * vt[r * 37 + j]).sum();
            assert!((v - m.get(i, j)).abs() < 1e-13);
        }
    }
    assert!(s.windows(2).all(|p| p[0] >= p[1]));
}

#[test]
fn singular_values_match_oracle() {
    for seed in 0..20 {
        let k = 1 + (seed as usize % 5);
        let m = random_matrix(k, 200, seed);
        let fast = thin_svd_small_k(&m).unwrap().sigma;
        let (_, slow, _) = jacobi_svd(m.data(), k, 200);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-9 * slow[0], "{:?} vs {:?}", fast, slow);
        }
    }
}

#[test]
fn svt_matches_oracle_across_thresholds() {
    for seed in 0..30 {
        let k = 2 + (seed as usize % 4);
        let m = random_matrix(k, 300, 100 + seed);
        let (_, s, _) = jacobi_svd(m.data(), k, 300);
        for mu in [0.0, 0.5 * s[k - 1], 0.5 * (s[0] + s[1]), 2.0 * s[0]] {
            let fast = svt(&m, mu).unwrap();
            let slow = svt_oracle(&m, mu);
            let err = fast
                .data()
                .iter()
                .zip(&slow)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-9, "seed {} mu {}: {}", seed, mu, err);
        }
    }
}

#[test]
fn svt_on_rank_deficient_input() {
    // Two identical rows: one singular value is exactly zero.
    let mut m = random_matrix(3, 50, 9);
    let r0 = m.row(0).to_vec();
    m.row_mut(2).copy_from_slice(&r0);
    for mu in [0.0, 0.1, 1.0] {
        let fast = svt(&m, mu).unwrap();
        let slow = svt_oracle(&m, mu);
        let err = fast
            .data()
            .iter()
            .zip(&slow)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-9, "mu {}: {}", mu, err);
    }
}

#[test]
fn rolling_ball_matches_oracle_on_odd_shapes() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for (w, h, r) in [(7, 5, 3), (20, 3, 4), (1, 9, 2), (12, 12, 1), (9, 6, 8)] {
        let data: Vec<f32> = (0..w * h).map(|_| rng.random_range(0..300) as f32).collect();
        let frame = Grid::from_vec(w, h, data.clone()).unwrap();
        let bg = rolling_ball_background(&frame, &RollingBallConfig::new(r)).unwrap();
        assert_eq!(
            bg.data(),
            opening_oracle(&data, w, h, r).as_slice(),
            "{}x{} r={}",
            w,
            h,
            r
        );
    }
}

proptest! {
    #[test]
    fn median_matches_sort(v in proptest::collection::vec(0u32..70000, 1..200)) {
        let f: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        prop_assert_eq!(median(&f).unwrap(), median_oracle(&f));
    }

    #[test]
    fn median_subtract_matches_sort(v in proptest::collection::vec(0u16..5000, 4..64)) {
        let n = v.len();
        let f: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        let stack = ImageStack::new(n, 1, f.clone(), Default::default()).unwrap();
        let med = median_oracle(&f);
        let expected: Vec<f32> = f.iter().map(|&x| (x - med).max(0.0)).collect();
        let got = median_subtract(&stack).unwrap();
        prop_assert_eq!(got.data(), expected.as_slice());
    }
}
