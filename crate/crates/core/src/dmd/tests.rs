use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn trajectory(a: &Mat<f64>, x0: &[f64], steps: usize) -> Mat<f64> {
    let mut rows = vec![x0.to_vec()];
    for _ in 0..steps {
        let next = a.matvec(rows.last().unwrap());
        rows.push(next);
    }
    Mat::from_rows(&rows)
}

fn matrix_power_apply(a: &Mat<f64>, x0: &[f64], k: usize) -> Vec<f64> {
    let mut x = x0.to_vec();
    for _ in 0..k {
        x = a.matvec(&x);
    }
    x
}

fn close(a: Complex<f64>, b: Complex<f64>, tol: f64) -> bool {
    (a - b).norm() < tol
}

fn nalgebra_eigs(a: &Mat<f64>) -> Vec<Complex<f64>> {
    let n = a.rows();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[(i, j)]);
    let ev = m.complex_eigenvalues();
    sort_spectrum(&ev.iter().map(|z| Complex::new(z.re, z.im)).collect::<Vec<_>>())
}

fn nalgebra_dense_oracle(pair: &SnapshotPair<f64>) -> Vec<Complex<f64>> {
    let (n, p) = (pair.dim(), pair.len());
    let x = nalgebra::DMatrix::from_fn(n, p, |i, j| pair.x()[(i, j)]);
    let y = nalgebra::DMatrix::from_fn(n, p, |i, j| pair.y()[(i, j)]);
    let k = &y * x.pseudo_inverse(1e-14).unwrap();
    let ev = k.complex_eigenvalues();
    sort_spectrum(&ev.iter().map(|z| Complex::new(z.re, z.im)).collect::<Vec<_>>())
}

#[test]
fn triangular_system_eigenvalues() {
    let a = Mat::from_rows(&[vec![0.9, 0.0], vec![0.1, 0.5]]);
    let pair = SnapshotPair::from_rows(&trajectory(&a, &[1.0, 1.0], 20)).unwrap();
    let model = fit_dmd(&pair, 2).unwrap();
    let l = model.eigenvalues();
    assert!(close(l[0], Complex::new(0.9, 0.0), 1e-8));
    assert!(close(l[1], Complex::new(0.5, 0.0), 1e-8));
}

#[test]
fn scalar_geometric_sequence() {
    let rows: Vec<Vec<f64>> = (0..10).map(|k| vec![0.9f64.powi(k)]).collect();
    let pair = SnapshotPair::from_rows(&Mat::from_rows(&rows)).unwrap();
    let model = fit_dmd(&pair, 1).unwrap();
    assert!(close(model.eigenvalues()[0], Complex::new(0.9, 0.0), 1e-12));
    let phib = model.modes()[(0, 0)] * model.amplitudes()[0];
    assert!(close(phib, Complex::new(1.0, 0.0), 1e-12));
    assert!((model.predict(2)[0] - 0.81).abs() < 1e-12);
    assert!((model.predict(0)[0] - 1.0).abs() < 1e-12);
}

#[test]
fn zero_column_is_rank_deficient() {
    let x = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 0.0]]);
    let pair = SnapshotPair::new(x.clone(), x).unwrap();
    assert!(matches!(fit_dmd(&pair, 2), Err(Error::RankDeficient { rank: 2, .. })));
    assert!(fit_dmd(&pair, 1).is_ok());
    assert!(matches!(dense_dmd_oracle(&pair), Err(Error::RankDeficient { .. })));
}

#[test]
fn rank_out_of_range_rejected() {
    let x = Mat::from_rows(&[vec![1.0, 2.0], vec![0.5, 1.0], vec![3.0, 1.0]]);
    let pair = SnapshotPair::new(x.clone(), x).unwrap();
    assert!(matches!(fit_dmd(&pair, 0), Err(Error::InvalidConfig(_))));
    assert!(matches!(fit_dmd(&pair, 3), Err(Error::InvalidConfig(_))));
}

#[test]
fn invalid_snapshots_rejected() {
    let x = Mat::from_rows(&[vec![1.0, 2.0]]);
    let y = Mat::from_rows(&[vec![1.0, f64::NAN]]);
    assert!(matches!(SnapshotPair::new(x.clone(), y), Err(Error::Numeric(_))));
    assert!(matches!(SnapshotPair::new(x, Mat::zeros(2, 2)), Err(Error::Shape(_))));
    assert!(SnapshotPair::from_rows(&Mat::<f64>::zeros(1, 3)).is_err());
}

#[test]
fn rotation_predictions_are_real() {
    let th: f64 = 0.3;
    let a = Mat::from_rows(&[vec![th.cos(), -th.sin()], vec![th.sin(), th.cos()]]);
    let x0 = [1.0, 0.5];
    let pair = SnapshotPair::from_rows(&trajectory(&a, &x0, 30)).unwrap();
    let model = fit_dmd(&pair, 2).unwrap();
    let l = model.eigenvalues();
    assert!(close(l[0], Complex::from_polar(1.0, -th), 1e-8));
    assert!(close(l[1], Complex::from_polar(1.0, th), 1e-8));
    for k in 0..=50 {
        let z = model.evolve_complex(model.amplitudes(), k);
        let im = z.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
        assert!(im < 1e-8);
        let expect = matrix_power_apply(&a, &x0, k);
        for (p, e) in model.predict(k).iter().zip(&expect) {
            assert!((p - e).abs() < 1e-8);
        }
    }
}

#[test]
fn identity_and_nilpotent_oracle() {
    let x = Mat::from_rows(&[vec![1.0, 0.0, 0.0, 2.0], vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 0.0, 1.0, 3.0]]);
    let pair = SnapshotPair::new(x.clone(), x.clone()).unwrap();
    for l in dense_dmd_oracle(&pair).unwrap() {
        assert!(close(l, Complex::new(1.0, 0.0), 1e-10));
    }
    // Shift e1 -> e2 -> e3 -> 0.
    let shift = Mat::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
    let y = shift.matmul(&x);
    let pair = SnapshotPair::new(x, y).unwrap();
    for l in dense_dmd_oracle(&pair).unwrap() {
        assert!(l.norm() < 1e-5, "{l}");
    }
}

#[test]
fn oracle_equivalence_random() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=6 {
        let x = Mat::from_fn(n, 40, |_, _| rng.random_range(-1.0..1.0));
        let y = Mat::from_fn(n, 40, |_, _| rng.random_range(-1.0..1.0));
        let pair = SnapshotPair::new(x, y).unwrap();
        let fit = fit_dmd(&pair, n).unwrap();
        let dense = dense_dmd_oracle(&pair).unwrap();
        let reference = nalgebra_dense_oracle(&pair);
        for ((a, b), c) in fit.eigenvalues().iter().zip(&dense).zip(&reference) {
            assert!(close(*a, *b, 1e-8), "{a} vs {b}");
            assert!(close(*a, *c, 1e-8), "{a} vs {c}");
        }
    }
}

#[test]
fn exact_recovery_of_diagonalizable_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 2..=6 {
        // A = S D S^{-1} with a well-conditioned S.
        let d: Vec<f64> = (0..n).map(|i| 0.95 - 0.12 * i as f64).collect();
        let s = Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { rng.random_range(-0.3..0.3) });
        let sinv = pinv(&s, 1e-14);
        let a = Mat::from_fn(n, n, |i, j| s[(i, j)] * d[j]).matmul(&sinv);
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let pair = SnapshotPair::from_rows(&trajectory(&a, &x0, 3 * n)).unwrap();
        let model = fit_dmd(&pair, n).unwrap();
        for (l, e) in model.eigenvalues().iter().zip(nalgebra_eigs(&a)) {
            assert!(close(*l, e, 1e-8), "{l} vs {e}");
        }
        for k in 0..=50 {
            for (p, e) in model.predict(k).iter().zip(matrix_power_apply(&a, &x0, k)) {
                assert!((p - e).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn spectrum_is_sorted() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Mat::from_fn(5, 30, |_, _| rng.random_range(-1.0..1.0));
    let y = Mat::from_fn(5, 30, |_, _| rng.random_range(-1.0..1.0));
    let model = fit_dmd(&SnapshotPair::new(x, y).unwrap(), 5).unwrap();
    let l: &[Complex<f64>] = model.eigenvalues();
    for w in l.windows(2) {
        assert!(w[0].norm() >= w[1].norm() - 1e-10);
        if (w[0].norm() - w[1].norm()).abs() < 1e-10 {
            assert!(w[0].arg() <= w[1].arg());
        }
    }
    assert!(model.singular_values().windows(2).all(|w| w[0] >= w[1] && w[1] > 0.0));
}

#[test]
fn fit_residual_non_increasing_in_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Mat::from_fn(6, 25, |_, _| rng.random_range(-1.0..1.0));
    let y = Mat::from_fn(6, 25, |_, _| rng.random_range(-1.0..1.0));
    let pair = SnapshotPair::new(x, y).unwrap();
    let res: Vec<f64> = (1..=6).map(|r| fit_residual(&pair, r).unwrap()).collect();
    assert!(res.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn propagators_match_predictions() {
    let a = Mat::from_rows(&[vec![0.8, 0.3, 0.0], vec![-0.3, 0.8, 0.1], vec![0.0, 0.0, 0.6]]);
    let x0 = [1.0, -0.4, 0.7];
    let pair = SnapshotPair::from_rows(&trajectory(&a, &x0, 12)).unwrap();
    let model = fit_dmd(&pair, 3).unwrap();
    let ops = model.propagators(8);
    for (k, op) in ops.iter().enumerate() {
        let via_op = op.matvec(&x0);
        let via_b = model.predict(k);
        let via_prop = model.propagate(&x0, k).unwrap();
        for i in 0..3 {
            assert!((via_op[i] - via_b[i]).abs() < 1e-10);
            assert!((via_prop[i] - via_b[i]).abs() < 1e-10);
        }
    }
    assert!(model.propagate(&[1.0], 1).is_err());
}

#[test]
fn reconstruct_with_identity_map_is_prediction() {
    let a = Mat::from_rows(&[vec![0.9, 0.0], vec![0.1, 0.5]]);
    let pair = SnapshotPair::from_rows(&trajectory(&a, &[1.0, 2.0], 10)).unwrap();
    let model = fit_dmd(&pair, 2).unwrap();
    let x = model.reconstruct_state(|g| Ok(g.to_vec()), 4).unwrap();
    assert_eq!(x, model.predict(4));
}

#[test]
fn text_roundtrip() {
    let th: f64 = 0.4;
    let a = Mat::from_rows(&[vec![th.cos(), -th.sin()], vec![th.sin(), th.cos()]]);
    let pair = SnapshotPair::from_rows(&trajectory(&a, &[0.3, 1.0], 10)).unwrap();
    let model = fit_dmd(&pair, 2).unwrap();
    let back = DmdModel::<f64>::from_text(&model.to_text()).unwrap();
    assert_eq!(back.eigenvalues(), model.eigenvalues());
    assert_eq!(back.modes(), model.modes());
    assert_eq!(back.amplitudes(), model.amplitudes());
    assert_eq!(back.singular_values(), model.singular_values());
    assert_eq!(back.predict(7), model.predict(7));
    assert!(DmdModel::<f64>::from_text("koopman-flow-dmd 2\n").is_err());
}
