//! Calibration-matrix tests: examples, oracle matches, and invariants.

mod common;

use cdpcl_core::calibration::{
    difference_matrix, hard_weight_matrix, similarity_matrix, uncertainty_matrix,
    UncertaintyMatrix, EPS_H,
};
use cdpcl_core::numerics::Tensor;
use common::{
    oracle_difference, oracle_hard_weight, oracle_similarity, oracle_uncertainty, rand_tensor,
    rows_to_tensor, tensor_to_rows,
};
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

#[test]
fn difference_examples() {
    let src = rows_to_tensor(&[vec![1.0, 2.0]]);
    let aug = rows_to_tensor(&[vec![0.0, 4.0]]);
    let d = difference_matrix(&src, &aug, &[true]);
    assert_eq!(d.data(), &[1.0, 2.0]);

    let d0 = difference_matrix(&src, &src, &[true]);
    assert!(d0.data().iter().all(|&v| v == 0.0));
}

#[test]
fn uncertainty_examples() {
    // zero difference, two classes -> uniform softmax, U = 1 - 1/2
    let d = Tensor::zeros(&[2, 1]);
    let (u, w) = uncertainty_matrix(&d, &[true, true]);
    assert_eq!(w, 0);
    assert_eq!(u.data(), &[0.5, 0.5]);

    // column [0, ln 2] -> softmax [1/3, 2/3] -> U [2/3, 1/3]
    let d = rows_to_tensor(&[vec![0.0], vec![2.0f64.ln()]]);
    let (u, _) = uncertainty_matrix(&d, &[true, true]);
    assert!((u.data()[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((u.data()[1] - 1.0 / 3.0).abs() < 1e-15);

    // D = 0 with C = 19 -> every entry 1 - 1/19
    let d = Tensor::zeros(&[19, 3]);
    let (u, _) = uncertainty_matrix(&d, &vec![true; 19]);
    for &v in u.data() {
        assert!((v - (1.0 - 1.0 / 19.0)).abs() < 1e-15);
    }
}

#[test]
fn uncertainty_skipped_below_two_valid_classes() {
    let d = Tensor::zeros(&[3, 2]);
    let (u, warnings) = uncertainty_matrix(&d, &[true, false, false]);
    assert_eq!(warnings, 1);
    assert!(u.data().iter().all(|&v| v == 1.0));
}

#[test]
fn uncertainty_update_rules() {
    let mut s = UncertaintyMatrix::new(1, 1, 0.9);
    assert!(!s.initialized);
    s.update(&Tensor::scalar(0.8).reshape(vec![1, 1]).unwrap());
    assert_eq!(s.u.data(), &[0.8]); // first call: exact copy
    s.update(&Tensor::scalar(0.4).reshape(vec![1, 1]).unwrap());
    assert!((s.u.data()[0] - 0.76).abs() < 1e-15);
    let fixed = s.u.clone();
    s.update(&fixed);
    assert_eq!(s.u, fixed);
}

#[test]
fn similarity_examples() {
    let src = rows_to_tensor(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let aug = rows_to_tensor(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let (s, w) = similarity_matrix(&src, &aug, &[true, true]);
    assert_eq!(w, 0);
    assert_eq!(tensor_to_rows(&s), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
}

#[test]
fn zero_norm_valid_row_is_skipped_with_warning() {
    let src = rows_to_tensor(&[vec![0.0, 0.0], vec![0.0, 1.0]]);
    let aug = rows_to_tensor(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let (s, w) = similarity_matrix(&src, &aug, &[true, true]);
    assert_eq!(w, 1);
    assert_eq!(s.at2(0, 0), 1.0); // neutral diagonal
    assert_eq!(s.at2(0, 1), 0.0);
}

#[test]
fn hard_weight_examples() {
    let s = rows_to_tensor(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let h = hard_weight_matrix(&s);
    assert_eq!(tensor_to_rows(&h), vec![vec![1.0, 1.0], vec![1.0, 1.0]]);

    let s = rows_to_tensor(&[vec![0.9, 0.3], vec![0.3, 0.9]]);
    let h = hard_weight_matrix(&s);
    assert!((h.at2(0, 1) - 0.7).abs() < 1e-15);
    assert!((h.at2(0, 0) - 0.9).abs() < 1e-15);

    // hard-aligned pair clamps at EPS_H
    let s = rows_to_tensor(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
    let h = hard_weight_matrix(&s);
    assert_eq!(h.at2(0, 1), EPS_H);
}

#[test]
fn random_instances_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for round in 0..50 {
        let c = rng.gen_range(2..8);
        let n = rng.gen_range(1..6);
        let src = rand_tensor(&mut rng, &[c, n], -2.0, 2.0);
        let aug = rand_tensor(&mut rng, &[c, n], -2.0, 2.0);
        let valid: Vec<bool> = (0..c).map(|_| rng.gen_bool(0.8)).collect();

        let d = difference_matrix(&src, &aug, &valid);
        let od = oracle_difference(&tensor_to_rows(&src), &tensor_to_rows(&aug), &valid);
        assert_eq!(tensor_to_rows(&d), od, "round {round} D");

        let (u, _) = uncertainty_matrix(&d, &valid);
        let ou = oracle_uncertainty(&od, &valid);
        for (ur, or) in tensor_to_rows(&u).iter().zip(&ou) {
            for (a, b) in ur.iter().zip(or) {
                assert!((a - b).abs() <= 1e-12, "round {round} U");
            }
        }

        let (s, _) = similarity_matrix(&src, &aug, &valid);
        let os = oracle_similarity(&tensor_to_rows(&src), &tensor_to_rows(&aug), &valid);
        for (sr, or) in tensor_to_rows(&s).iter().zip(&os) {
            for (a, b) in sr.iter().zip(or) {
                assert!((a - b).abs() <= 1e-12, "round {round} S");
            }
        }

        let h = hard_weight_matrix(&s);
        let oh = oracle_hard_weight(&os);
        for (hr, or) in tensor_to_rows(&h).iter().zip(&oh) {
            for (a, b) in hr.iter().zip(or) {
                assert!((a - b).abs() <= 1e-12, "round {round} H");
            }
        }
    }
}

#[test]
fn uncertainty_columns_sum_and_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..30 {
        let c = rng.gen_range(2..10);
        let n = rng.gen_range(1..5);
        let d = rand_tensor(&mut rng, &[c, n], 0.0, 3.0);
        let valid: Vec<bool> = (0..c).map(|_| rng.gen_bool(0.7)).collect();
        let c_valid = valid.iter().filter(|&&v| v).count();
        if c_valid < 2 {
            continue;
        }
        let (u, _) = uncertainty_matrix(&d, &valid);
        for ni in 0..n {
            let col_sum: f64 = (0..c).filter(|&ci| valid[ci]).map(|ci| u.data()[ci * n + ni]).sum();
            assert!((col_sum - (c_valid as f64 - 1.0)).abs() <= 1e-9);
            for ci in 0..c {
                if valid[ci] {
                    let v = u.data()[ci * n + ni];
                    assert!(v > 0.0 && v < 1.0);
                }
            }
        }
    }
}

#[test]
fn ema_preserves_column_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = 5;
    let valid = vec![true; c];
    let mut state = UncertaintyMatrix::new(c, 3, 0.9);
    for _ in 0..10 {
        let d = rand_tensor(&mut rng, &[c, 3], 0.0, 2.0);
        let (u, _) = uncertainty_matrix(&d, &valid);
        state.update(&u);
        for ni in 0..3 {
            let col: f64 = (0..c).map(|ci| state.u.data()[ci * 3 + ni]).sum();
            assert!((col - (c as f64 - 1.0)).abs() <= 1e-9);
        }
    }
}

#[test]
fn h_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let c = 4;
    let s = rand_tensor(&mut rng, &[c, c], -1.0, 1.0);
    let h = hard_weight_matrix(&s);
    let perm = [2usize, 0, 3, 1];
    let mut sp = Tensor::zeros(&[c, c]);
    for i in 0..c {
        for k in 0..c {
            sp.set2(perm[i], perm[k], s.at2(i, k));
        }
    }
    let hp = hard_weight_matrix(&sp);
    for i in 0..c {
        for k in 0..c {
            assert_eq!(hp.at2(perm[i], perm[k]), h.at2(i, k));
            assert!(h.at2(i, k) >= EPS_H && h.at2(i, k) <= 2.0);
        }
    }
}
