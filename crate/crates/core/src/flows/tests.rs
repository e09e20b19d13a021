use proptest::prelude::*;

use super::*;
use crate::nn::Dense;

fn dense(w: Vec<Vec<f64>>, b: Vec<f64>) -> Dense<f64> {
    Dense {
        weight: Mat::from_rows(&w),
        bias: Mat::row_vector(&b),
    }
}

// t(z_up) = 1, raw scale = ln 2 -> s = 2.
fn hand_affine() -> CouplingLayer<f64> {
    let net = Fnn::from_layers(
        vec![dense(vec![vec![0.0], vec![0.0]], vec![1.0, 2f64.ln()])],
        Activation::Identity,
    )
    .unwrap();
    CouplingLayer::new(CouplingKind::Affine, false, 2, 1, net).unwrap()
}

#[test]
fn affine_hand_example() {
    let layer = hand_affine();
    let y = layer.forward(&[1.0, 2.0]).unwrap();
    assert!((y[0] - 1.0).abs() < 1e-15 && (y[1] - 6.0).abs() < 1e-12);
    let z = layer.inverse(&[1.0, 6.0]).unwrap();
    assert!((z[0] - 1.0).abs() < 1e-15 && (z[1] - 2.0).abs() < 1e-12);
}

#[test]
fn residual_hand_example() {
    let net = Fnn::from_layers(vec![dense(vec![vec![1.0]], vec![0.0])], Activation::Identity).unwrap();
    let layer = CouplingLayer::new(CouplingKind::Residual, false, 2, 1, net).unwrap();
    assert_eq!(layer.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 3.0]);
    assert_eq!(layer.inverse(&[1.0, 3.0]).unwrap(), vec![1.0, 2.0]);
}

#[test]
fn flipped_layer_conditions_on_lower_half() {
    // m = 3, q = 2: flipped conditions on z[2..], transforms z[..2].
    let net = Fnn::from_layers(
        vec![dense(vec![vec![1.0], vec![0.0]], vec![0.0, 0.0])],
        Activation::Identity,
    )
    .unwrap();
    let layer = CouplingLayer::new(CouplingKind::Residual, true, 3, 2, net).unwrap();
    assert_eq!(layer.forward(&[1.0, 2.0, 5.0]).unwrap(), vec![6.0, 2.0, 5.0]);
}

#[test]
fn clamp_bounds_the_scale() {
    let net = Fnn::from_layers(
        vec![dense(vec![vec![0.0], vec![0.0]], vec![0.0, 100.0])],
        Activation::Identity,
    )
    .unwrap();
    let layer = CouplingLayer::new(CouplingKind::Affine, false, 2, 1, net).unwrap();
    let y = layer.forward(&[0.0, 1.0]).unwrap();
    assert!((y[1] - 7f64.exp()).abs() < 1e-9);
    assert!((layer.inverse(&y).unwrap()[1] - 1.0).abs() < 1e-14);
}

#[test]
fn mismatched_network_rejected() {
    let net = Fnn::<f64>::zeros(&[1, 4, 1], Activation::Relu).unwrap();
    assert!(CouplingLayer::new(CouplingKind::Affine, false, 2, 1, net.clone()).is_err());
    assert!(CouplingLayer::new(CouplingKind::Residual, false, 2, 2, net).is_err());
}

#[test]
fn split_validation() {
    assert!(split(&[1.0, 2.0, 3.0], 0).is_err());
    assert!(split(&[1.0, 2.0, 3.0], 3).is_err());
    assert_eq!(split(&[1.0, 2.0, 3.0], 2).unwrap(), (&[1.0, 2.0][..], &[3.0][..]));
    assert_eq!(default_split(3), 2);
    assert_eq!(default_split(30), 15);
}

#[test]
fn zero_network_is_identity() {
    for kind in [CouplingKind::Affine, CouplingKind::Residual] {
        let net = FlowNetwork::<f64>::zeros(&FlowSpec::new(5, kind, 3, vec![4])).unwrap();
        let x = [0.3, -1.0, 2.0, 0.0, 7.5];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }
}

#[test]
fn depth_zero_is_identity() {
    let net = FlowNetwork::<f64>::identity(2);
    assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    assert_eq!(net.num_params(), 0);
}

#[test]
fn flips_alternate_starting_unflipped() {
    let net = FlowNetwork::<f64>::xavier(&FlowSpec::new(4, CouplingKind::Affine, 3, vec![3]), 1).unwrap();
    let f: Vec<bool> = net.layers().iter().map(|l| l.flipped()).collect();
    assert_eq!(f, vec![false, true, false]);
}

#[test]
fn parameter_counts() {
    let acf = FlowNetwork::<f64>::xavier(&FlowSpec::new(2, CouplingKind::Affine, 3, vec![8]), 0).unwrap();
    assert_eq!(acf.num_params(), 3 * (8 + 8 + 16 + 2));
    let rcf = FlowNetwork::<f64>::xavier(&FlowSpec::new(30, CouplingKind::Residual, 2, vec![40]), 0).unwrap();
    assert_eq!(rcf.num_params(), 2 * (15 * 40 + 40 + 40 * 15 + 15));
}

#[test]
fn deterministic_in_seed() {
    let spec = FlowSpec::new(6, CouplingKind::Affine, 4, vec![5, 5]);
    let a = FlowNetwork::<f64>::xavier(&spec, 9).unwrap();
    assert_eq!(a, FlowNetwork::xavier(&spec, 9).unwrap());
    assert_ne!(a, FlowNetwork::xavier(&spec, 10).unwrap());
}

#[test]
fn layers_mix_all_coordinates() {
    // After two layers every output depends on every input.
    let net = FlowNetwork::<f64>::xavier(&FlowSpec::new(4, CouplingKind::Affine, 2, vec![6]), 3).unwrap();
    let x = [0.5, -0.2, 1.1, 0.7];
    let base = net.forward(&x).unwrap();
    for j in 0..4 {
        let mut xp = x;
        xp[j] += 1e-3;
        let moved = net.forward(&xp).unwrap();
        let changed = (0..4).filter(|&i| (moved[i] - base[i]).abs() > 1e-12).count();
        assert!(changed >= 2, "input {j} reaches only {changed} outputs");
    }
}

#[test]
fn batch_matches_single() {
    let net = FlowNetwork::<f64>::xavier(&FlowSpec::new(3, CouplingKind::Residual, 3, vec![4]), 5).unwrap();
    let x = Mat::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 2.0, 0.5]]);
    let y = net.forward_batch(&x).unwrap();
    for r in 0..2 {
        assert_eq!(y.row(r), net.forward(x.row(r)).unwrap().as_slice());
    }
    let back = net.inverse_batch(&y).unwrap();
    assert!(back.sub(&x).max_abs() < 1e-12);
}

#[test]
fn wrong_dimension_rejected() {
    let net = FlowNetwork::<f64>::xavier(&FlowSpec::new(3, CouplingKind::Affine, 1, vec![2]), 0).unwrap();
    assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Shape(_))));
    assert!(matches!(net.inverse(&[1.0; 4]), Err(Error::Shape(_))));
}

#[test]
fn non_finite_reports_layer() {
    let net = FlowNetwork::<f64>::xavier(&FlowSpec::new(2, CouplingKind::Residual, 2, vec![2]), 0).unwrap();
    assert!(matches!(net.forward(&[f64::NAN, 1.0]), Err(Error::NonFinite { layer: 0 })));
}

#[test]
fn text_roundtrip_is_bit_exact() {
    let mut spec = FlowSpec::new(5, CouplingKind::Affine, 3, vec![7]);
    spec.split = Some(2);
    spec.activation = Activation::Tanh;
    let net = FlowNetwork::<f64>::xavier(&spec, 42).unwrap();
    let back = FlowNetwork::<f64>::from_text(&net.to_text()).unwrap();
    assert_eq!(net, back);
    for (a, b) in net.params().iter().zip(back.params()) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn corrupt_text_rejected() {
    let net = FlowNetwork::<f64>::xavier(&FlowSpec::new(2, CouplingKind::Affine, 1, vec![2]), 0).unwrap();
    let text = net.to_text();
    assert!(FlowNetwork::<f64>::from_text(&text.replace("koopman-flow-network 1", "koopman-flow-network 9")).is_err());
    assert!(FlowNetwork::<f64>::from_text(&text.replace("end", "")).is_err());
    let truncated: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
    assert!(FlowNetwork::<f64>::from_text(&truncated).is_err());
}

#[test]
fn f32_network_roundtrips() {
    let net = FlowNetwork::<f32>::xavier(&FlowSpec::new(4, CouplingKind::Affine, 2, vec![4]), 2).unwrap();
    let x = [0.3f32, -0.1, 0.8, 1.5];
    let back = net.inverse(&net.forward(&x).unwrap()).unwrap();
    for (a, b) in x.iter().zip(&back) {
        assert!((a - b).abs() < 1e-5);
    }
}

fn fd_check(kind: CouplingKind) {
    let net = FlowNetwork::<f64>::xavier(&FlowSpec::new(3, kind, 2, vec![4]), 8).unwrap();
    let x = Mat::from_rows(&[vec![0.4, -0.3, 0.9], vec![1.2, 0.1, -0.5]]);
    let loss_of = |n: &FlowNetwork<f64>| n.forward_batch(&x).unwrap().as_slice().iter().map(|v| v * v).sum::<f64>();
    let grads: Vec<Mat<f64>> = {
        let mut tape = Tape::new();
        let vars = net.register(&mut tape);
        let xv = tape.constant(x.clone());
        let y = net.forward_on(&mut tape, &vars, xv).unwrap();
        let l = tape.sum_squares(y);
        let g = tape.backward(l).unwrap();
        FlowNetwork::<f64>::param_vars(&vars).iter().map(|&v| g.get(v)).collect()
    };
    let h = 1e-6;
    for p in 0..grads.len() {
        for k in 0..grads[p].as_slice().len() {
            let mut plus = net.clone();
            plus.params_mut()[p].as_mut_slice()[k] += h;
            let mut minus = net.clone();
            minus.params_mut()[p].as_mut_slice()[k] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let an = grads[p].as_slice()[k];
            assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "param {p}[{k}]: {fd} vs {an}");
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    fd_check(CouplingKind::Affine);
    fd_check(CouplingKind::Residual);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn affine_roundtrip_shallow(
        dim_idx in 0usize..5,
        depth in 1usize..5,
        seed in any::<u64>(),
        xs in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        // Shallow stacks on unit-scale inputs keep the accumulated scale
        // moderate; deeper stacks can reach magnitudes where an absolute
        // bound is below the f64 resolution.
        let m = [2usize, 3, 20, 30, 64][dim_idx];
        let net = FlowNetwork::<f64>::xavier(&FlowSpec::new(m, CouplingKind::Affine, depth, vec![16]), seed).unwrap();
        let x = &xs[..m];
        let back = net.inverse(&net.forward(x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn residual_roundtrip_is_absolute(
        depth in 1usize..9,
        seed in any::<u64>(),
        xs in prop::collection::vec(-10.0f64..10.0, 64),
    ) {
        let net = FlowNetwork::<f64>::xavier(&FlowSpec::new(64, CouplingKind::Residual, depth, vec![16]), seed).unwrap();
        let back = net.inverse(&net.forward(&xs).unwrap()).unwrap();
        let fwd = net.forward(&net.inverse(&xs).unwrap()).unwrap();
        for ((a, b), c) in xs.iter().zip(&back).zip(&fwd) {
            prop_assert!((a - b).abs() < 1e-8 && (a - c).abs() < 1e-8);
        }
    }

    #[test]
    fn residual_equals_affine_with_unit_scale(seed in any::<u64>(), xs in prop::collection::vec(-2.0f64..2.0, 4)) {
        // Zeroing the scale head of an affine layer gives s = 1.
        let res = FlowNetwork::<f64>::xavier(&FlowSpec::new(4, CouplingKind::Residual, 2, vec![5]), seed).unwrap();
        let layers = res.layers().iter().map(|l| {
            let mut dense: Vec<Dense<f64>> = l.net().layers().to_vec();
            let last = dense.last_mut().unwrap();
            let (r, c) = last.weight.shape();
            last.weight = Mat::from_fn(2 * r, c, |i, j| if i < r { last.weight[(i, j)] } else { 0.0 });
            last.bias = Mat::from_fn(1, 2 * r, |_, j| if j < r { last.bias[(0, j)] } else { 0.0 });
            let net = Fnn::from_layers(dense, l.net().activation()).unwrap();
            CouplingLayer::new(CouplingKind::Affine, l.flipped(), 4, l.split_index(), net).unwrap()
        }).collect();
        let aff = FlowNetwork::new(4, layers).unwrap();
        let a = res.forward(&xs).unwrap();
        let b = aff.forward(&xs).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn single_affine_layer_roundtrip() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let net = FlowNetwork::<f64>::xavier(&FlowSpec::new(6, CouplingKind::Affine, 1, vec![8]), 4).unwrap();
    let layer = &net.layers()[0];
    for _ in 0..1000 {
        let z: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let back = layer.inverse(&layer.forward(&z).unwrap()).unwrap();
        let err = z.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }
}

#[test]
fn parameters_are_shared_between_directions() {
    let mut net = FlowNetwork::<f64>::xavier(&FlowSpec::new(2, CouplingKind::Affine, 2, vec![4]), 6).unwrap();
    let y = [0.5, 0.25];
    let before = net.inverse(&y).unwrap();
    net.params_mut()[1].as_mut_slice()[0] += 0.5;
    assert_ne!(before, net.inverse(&y).unwrap());
}
