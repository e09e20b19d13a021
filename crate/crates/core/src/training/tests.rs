use super::*;
use crate::flows::{CouplingKind, FlowNetwork, FlowSpec};
use crate::linalg::Mat;
use crate::systems::{make_dataset, simulate_fixed_point, SplitFractions, System, Trajectory};

fn linear_traj(steps: usize) -> Mat<f64> {
    let mut x = vec![1.3, -0.7];
    let mut rows = vec![x.clone()];
    for _ in 0..steps {
        x = vec![0.9 * x[0], 0.5 * x[1]];
        rows.push(x.clone());
    }
    Mat::from_rows(&rows)
}

fn small_flow(kind: CouplingKind, seed: u64) -> FlowNetwork<f64> {
    let mut net = FlowNetwork::xavier(&FlowSpec::new(2, kind, 3, vec![6]), seed).unwrap();
    // Shrink so the affine scales stay moderate and finite differences behave.
    for p in net.params_mut() {
        *p = p.scale(0.3);
    }
    net
}

#[test]
fn identity_flow_on_linear_data_has_no_linearity_loss() {
    let x = linear_traj(30);
    let (l, _) = linearity_loss(&FlowNetwork::<f64>::identity(2), &x, 2).unwrap();
    assert!(l < 1e-16, "{l}");
    let model = fit_observable_dmd(&FlowNetwork::<f64>::identity(2), &x, 2).unwrap();
    let r = reconstruction_loss(&FlowNetwork::<f64>::identity(2), &x, &model).unwrap();
    assert!(r < 1e-12, "{r}");
}

#[test]
fn identity_flow_on_fixed_point_data_is_not_linear() {
    let x = simulate_fixed_point([2.0, 3.0], 40, 0.9, 0.5).unwrap();
    let (l, _) = linearity_loss(&FlowNetwork::<f64>::identity(2), &x, 2).unwrap();
    assert!(l > 1e-6, "{l}");
}

#[test]
fn constant_trajectory_rank_one() {
    let flow = small_flow(CouplingKind::Affine, 3);
    let x = Mat::from_fn(20, 2, |_, j| if j == 0 { 0.4 } else { -1.1 });
    let (l, _) = linearity_loss(&flow, &x, 1).unwrap();
    assert!(l < 1e-16, "{l}");
}

#[test]
fn random_flow_with_exact_dmd_reconstructs() {
    // Observables that evolve linearly: push linear data through the inverse.
    for kind in [CouplingKind::Affine, CouplingKind::Residual] {
        let flow = small_flow(kind, 11);
        let g = linear_traj(25);
        let x = flow.inverse_batch(&g).unwrap();
        let (p, model) = trajectory_losses(&flow, &x, 2, 1.0).unwrap();
        assert!(p.linear < 1e-16, "{kind:?} {}", p.linear);
        assert!(p.rec < 1e-12, "{kind:?} {}", p.rec);
        let r = reconstruction_loss(&flow, &x, &model).unwrap();
        assert!(r < 1e-12, "{r}");
    }
}

#[test]
fn perturbed_prediction_changes_loss_continuously() {
    let flow = small_flow(CouplingKind::Affine, 5);
    let x = simulate_fixed_point([1.0, 2.0], 30, 0.9, 0.5).unwrap();
    let model = fit_observable_dmd(&flow, &x, 2).unwrap();
    let base = reconstruction_loss(&flow, &x, &model).unwrap();
    let mut prev = f64::INFINITY;
    for delta in [1e-2, 1e-4, 1e-6] {
        let mut b = model.amplitudes().to_vec();
        b[0] += num_complex::Complex::new(delta, 0.0);
        let shifted = crate::dmd::DmdModel::from_parts(
            model.modes().clone(),
            model.eigenvalues().to_vec(),
            b,
            model.singular_values().to_vec(),
        )
        .unwrap();
        let d = (reconstruction_loss(&flow, &x, &shifted).unwrap() - base).abs();
        assert!(d.is_finite() && d <= prev);
        prev = d;
    }
    assert!(prev < 1e-3);
}

fn frozen_fd_check(kind: CouplingKind, alpha: f64) {
    let flow = small_flow(kind, 21);
    let x = simulate_fixed_point([0.8, 1.5], 12, 0.9, 0.5).unwrap();
    let model = fit_observable_dmd(&flow, &x, 2).unwrap();
    let (_, grads, _) = losses_and_gradients(&flow, &x, Some(&model), 2, alpha, DmdGradient::Through).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let n = flow.params().len();
    for p in 0..n {
        let shape = flow.params()[p].shape();
        for idx in 0..shape.0 * shape.1 {
            let eval = |d: f64| {
                let mut f = flow.clone();
                let mut ps = f.params_mut();
                let (r, c) = (idx / shape.1, idx % shape.1);
                ps[p][(r, c)] += d;
                frozen_losses(&f, &x, &model, alpha).unwrap().total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = grads[p].as_slice()[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-5, "{kind:?} alpha {alpha}: worst relative error {worst:e}");
}

#[test]
fn frozen_gradients_match_finite_differences() {
    for kind in [CouplingKind::Affine, CouplingKind::Residual] {
        frozen_fd_check(kind, 1.0);
        frozen_fd_check(kind, 0.0);
    }
}

#[test]
fn alpha_zero_still_reports_reconstruction() {
    let flow = small_flow(CouplingKind::Affine, 2);
    let x = simulate_fixed_point([1.0, 2.0], 30, 0.9, 0.5).unwrap();
    let (p, _) = trajectory_losses(&flow, &x, 2, 0.0).unwrap();
    assert!(p.rec.is_finite() && p.rec > 0.0);
    assert_eq!(p.total, p.linear);
}

#[test]
fn exact_dmd_baseline_on_linear_and_constant_data() {
    let lin = Trajectory {
        sample: 0,
        params: vec![],
        states: linear_traj(40),
    };
    let constant = Trajectory {
        sample: 1,
        params: vec![],
        states: Mat::from_fn(30, 2, |_, j| 1.0 + j as f64),
    };
    let r = exact_dmd_baseline(std::slice::from_ref(&lin), 2).unwrap();
    assert!(r[0].trl2e < 1e-8, "{}", r[0].trl2e);
    let r = exact_dmd_baseline(std::slice::from_ref(&constant), 1).unwrap();
    assert!(r[0].trl2e < 1e-10, "{}", r[0].trl2e);
}

#[test]
fn exact_dmd_on_fixed_point_sample_is_poor() {
    let t = Trajectory {
        sample: 0,
        params: vec![],
        states: simulate_fixed_point([3.0, 1.0], 60, 0.9, 0.5).unwrap(),
    };
    let r = exact_dmd_baseline(&[t], 2).unwrap();
    assert!(r[0].trl2e > 0.02 && r[0].trl2e < 2.0, "{}", r[0].trl2e);
}

fn tiny_dataset() -> crate::systems::Dataset<f64> {
    let mut sys = System::fixed_point();
    if let System::FixedPoint { steps, .. } = &mut sys {
        *steps = 20;
    }
    make_dataset(&sys, 10, 4, SplitFractions::default()).unwrap()
}

#[test]
fn training_is_deterministic() {
    let ds = tiny_dataset();
    let mut cfg = FlowDmdConfig::fixed_point();
    cfg.max_epochs = 15;
    let a = train_flowdmd(&cfg, &ds).unwrap();
    let b = train_flowdmd(&cfg, &ds).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.flow, b.flow);
    assert_eq!(a.history.len(), 15);
    assert_eq!(a.dmd.len(), ds.train.len());
    assert!(a.history.iter().all(|h| h.total.is_finite() && h.val_total.is_finite()));
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let ds = tiny_dataset();
    let mut cfg = FlowDmdConfig::fixed_point();
    cfg.max_epochs = 12;
    let full = train_flowdmd(&cfg, &ds).unwrap();

    let mut first = cfg.clone();
    first.max_epochs = 5;
    let mut t = Trainer::new(first, &ds).unwrap();
    t.run().unwrap();
    let text = {
        let mut buf = Vec::new();
        Checkpoint::new(cfg.rank, t.into_state()).write_text(&mut buf).unwrap();
        buf
    };
    let ck = Checkpoint::<f64>::read_text(&text[..]).unwrap();
    let mut t = Trainer::resume(cfg.clone(), &ds, ck.state).unwrap();
    t.run().unwrap();
    let resumed = t.into_model().unwrap();
    assert_eq!(resumed.history, full.history);
    assert_eq!(resumed.flow, full.flow);
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let ds = tiny_dataset();
    let mut cfg = FlowDmdConfig::fixed_point();
    cfg.max_epochs = 2;
    let mut t = Trainer::new(cfg.clone(), &ds).unwrap();
    t.run().unwrap();
    let mut buf = Vec::new();
    Checkpoint::new(2, t.into_state()).write_text(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(Checkpoint::<f64>::read_text(text.replace("moments", "moment").as_bytes()).is_err());
    assert!(Checkpoint::<f64>::read_text(&text.as_bytes()[..text.len() / 2]).is_err());
    assert!(Checkpoint::<f64>::read_text("garbage\n".as_bytes()).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = tiny_dataset();
    let mut cfg = FlowDmdConfig::<f64>::fixed_point();
    cfg.rank = 0;
    assert!(Trainer::new(cfg, &ds).is_err());
    let mut cfg = FlowDmdConfig::<f64>::fixed_point();
    cfg.alpha = -1.0;
    assert!(Trainer::new(cfg, &ds).is_err());
    let mut cfg = FlowDmdConfig::<f64>::fixed_point();
    cfg.rank = 3;
    assert!(Trainer::new(cfg, &ds).is_err());
    let cfg = FlowDmdConfig::<f64>::burgers();
    assert!(Trainer::new(cfg, &ds).is_err());
}

#[test]
fn divergence_reports_epoch() {
    let ds = tiny_dataset();
    let mut cfg = FlowDmdConfig::fixed_point();
    cfg.adam.lr = 1e6;
    cfg.max_epochs = 50;
    match train_flowdmd(&cfg, &ds) {
        Err(crate::Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn real_form_of_dmd_prediction_matches_model() {
    let flow = small_flow(CouplingKind::Residual, 8);
    let x = simulate_fixed_point([0.8, 1.5], 30, 0.9, 0.5).unwrap();
    let g = flow.forward_batch(&x).unwrap();
    let model = fit_observable_dmd(&flow, &x, 2).unwrap();
    let (pred, _) = super::dmdgrad::dmd_predict(&g, 2).unwrap();
    for t in 1..=30 {
        let want = model.propagate(g.row(0), t).unwrap();
        for j in 0..2 {
            assert!((pred[(t - 1, j)] - want[j]).abs() < 1e-10, "t {t}");
        }
    }
}

fn random_states(rows: usize, n: usize, seed: u64) -> Mat<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Mat::from_fn(rows, n, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn dmd_prediction_adjoint_matches_finite_differences() {
    // Wide and tall snapshot matrices, full and truncated rank.
    for &(rows, n, rank) in &[(9, 3, 3), (9, 3, 2), (12, 5, 2), (4, 6, 2), (5, 4, 4)] {
        let g = random_states(rows, n, (rows * 31 + n * 7 + rank) as u64);
        let w = random_states(rows - 1, n, 99);
        let f = |g: &Mat<f64>| -> f64 {
            let (p, _) = super::dmdgrad::dmd_predict(g, rank).unwrap();
            p.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
        };
        let (_, trace) = super::dmdgrad::dmd_predict(&g, rank).unwrap();
        let an = trace.backward(&w);
        let h = 1e-6;
        for i in 0..rows {
            for j in 0..n {
                let mut a = g.clone();
                a[(i, j)] += h;
                let mut b = g.clone();
                b[(i, j)] -= h;
                let fd = (f(&a) - f(&b)) / (2.0 * h);
                let err = (fd - an[(i, j)]).abs() / fd.abs().max(an[(i, j)].abs()).max(1e-3);
                assert!(err < 1e-5, "shape ({rows},{n}) r {rank} at ({i},{j}): fd {fd} analytic {}", an[(i, j)]);
            }
        }
    }
}

#[test]
fn through_gradients_match_refit_finite_differences() {
    for kind in [CouplingKind::Affine, CouplingKind::Residual] {
        let flow = small_flow(kind, 21);
        let x = simulate_fixed_point([0.8, 1.5], 12, 0.9, 0.5).unwrap();
        let (_, grads, _) = losses_and_gradients(&flow, &x, None, 2, 1.0, DmdGradient::Through).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for p in 0..flow.params().len() {
            let shape = flow.params()[p].shape();
            for idx in 0..shape.0 * shape.1 {
                let eval = |d: f64| {
                    let mut f = flow.clone();
                    let mut ps = f.params_mut();
                    ps[p][(idx / shape.1, idx % shape.1)] += d;
                    trajectory_losses(&f, &x, 2, 1.0).unwrap().0.total
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = grads[p].as_slice()[idx];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3));
            }
        }
        assert!(worst < 1e-5, "{kind:?}: {worst:e}");
    }
}
