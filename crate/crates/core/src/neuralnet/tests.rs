use super::*;
use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.5..1.5))
}

#[test]
fn component_widths_follow_sizing_rule() {
    let net = build_component_net(8, 6, 10, &mut rng(0)).unwrap();
    assert_eq!(net.widths(), vec![14, 140, 560, 560, 60, 6]);
    let net = build_component_net(2, 1, 15, &mut rng(0)).unwrap();
    assert_eq!(net.widths(), vec![3, 45, 180, 180, 15, 1]);
}

#[test]
fn component_parameter_count() {
    // 14*140+140 + 140*560+560 + 560*560+560 + 560*60+60 + 60*6+6, plus 560 + 560 PReLU slopes
    let net = build_component_net(8, 6, 10, &mut rng(0)).unwrap();
    assert_eq!(net.num_params(), 430_366);
}

#[test]
fn activation_schedule() {
    let specs = build_component_net(2, 1, 3, &mut rng(0))
        .unwrap()
        .layer_specs();
    let acts: Vec<_> = specs
        .iter()
        .map(|s| (s.activation, s.dropout_after))
        .collect();
    assert_eq!(
        acts,
        vec![
            (Activation::Linear, false),
            (Activation::Prelu, false),
            (Activation::Prelu, true),
            (Activation::Tanh, true),
            (Activation::Linear, false),
        ]
    );
}

#[test]
fn initialization_ranges() {
    let net = build_component_net(2, 1, 4, &mut rng(1)).unwrap();
    for l in &net.layers {
        let limit = (6.0 / (l.spec.fan_in + l.spec.fan_out) as f64).sqrt();
        assert!(net.params[l.w..l.b].iter().all(|w| w.abs() <= limit));
        assert!(net.params[l.b..l.b + l.spec.fan_out]
            .iter()
            .all(|b| *b == 0.0));
        if let Some(a) = l.slopes {
            assert!(net.params[a..a + l.spec.fan_out].iter().all(|s| *s == 0.25));
        }
    }
}

#[test]
fn zero_network_outputs_zero() {
    let net = Network::zeroed(&component_layers(component_widths(3, 1, 2))).unwrap();
    let x = random_batch(5, 3, 2);
    let (y, _) = net.forward(x.view(), Mode::Train, &mut rng(0)).unwrap();
    assert!(y.iter().all(|v| *v == 0.0));
}

#[test]
fn prelu_negative_branch() {
    let spec = LayerSpec {
        fan_in: 1,
        fan_out: 1,
        activation: Activation::Prelu,
        dropout_after: false,
    };
    let mut net = Network::zeroed(&[spec]).unwrap();
    net.params_mut()[0] = 1.0;
    assert_eq!(net.predict_one(&[-2.0]).unwrap(), vec![-0.5]);
    assert_eq!(net.predict_one(&[3.0]).unwrap(), vec![3.0]);
}

#[test]
fn inference_is_deterministic_and_pure() {
    let net = build_component_net(2, 1, 3, &mut rng(3)).unwrap();
    let before = net.params().to_vec();
    let x = random_batch(4, 3, 5);
    let (a, _) = net.forward(x.view(), Mode::Infer, &mut rng(1)).unwrap();
    let (b, _) = net.forward(x.view(), Mode::Infer, &mut rng(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, net.predict(x.view()).unwrap());
    assert_eq!(net.params(), &before[..]);
}

#[test]
fn forward_rejects_wrong_width() {
    let net = build_component_net(2, 1, 3, &mut rng(3)).unwrap();
    let x = random_batch(2, 4, 0);
    assert!(matches!(
        net.forward(x.view(), Mode::Infer, &mut rng(0)),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn mse_examples() {
    assert_eq!(
        mse_loss(array![[1.0, 2.0]].view(), array![[1.0, 2.0]].view()).unwrap(),
        0.0
    );
    assert_eq!(
        mse_loss(array![[1.0, 1.0]].view(), array![[0.0, 0.0]].view()).unwrap(),
        1.0
    );
    assert_eq!(
        mse_loss(array![[3.0]].view(), array![[1.0]].view()).unwrap(),
        4.0
    );
    assert!(mse_loss(array![[3.0]].view(), array![[1.0, 2.0]].view()).is_err());
}

#[test]
fn zero_upstream_gradient_gives_zero_gradients() {
    let net = build_component_net(2, 1, 3, &mut rng(4)).unwrap();
    let x = random_batch(3, 3, 6);
    let (y, cache) = net.forward(x.view(), Mode::Train, &mut rng(7)).unwrap();
    let mut grads = vec![1.0; net.num_params()];
    net.backward(&cache, Array2::zeros(y.dim()).view(), &mut grads)
        .unwrap();
    assert!(grads.iter().all(|g| *g == 0.0));
}

#[test]
fn single_linear_layer_bias_gradient() {
    let spec = LayerSpec {
        fan_in: 2,
        fan_out: 2,
        activation: Activation::Linear,
        dropout_after: false,
    };
    let net = Network::new(&[spec], &mut rng(8)).unwrap();
    let x = array![[0.3, -1.2]];
    let t = array![[1.0, -1.0]];
    let (y, cache) = net.forward(x.view(), Mode::Train, &mut rng(0)).unwrap();
    // loss = |y - t|^2 / 2  =>  dL/dy = y - t
    let residual = &y - &t;
    let mut grads = vec![0.0; net.num_params()];
    net.backward(&cache, residual.view(), &mut grads).unwrap();
    assert_abs_diff_eq!(grads[4], residual[[0, 0]], epsilon = 1e-15);
    assert_abs_diff_eq!(grads[5], residual[[0, 1]], epsilon = 1e-15);
}

#[test]
fn stale_cache_is_rejected() {
    let mut net = build_component_net(2, 1, 2, &mut rng(9)).unwrap();
    let other = build_component_net(2, 1, 2, &mut rng(9)).unwrap();
    let x = random_batch(2, 3, 1);
    let (y, cache) = net.forward(x.view(), Mode::Train, &mut rng(0)).unwrap();
    let mut grads = vec![0.0; net.num_params()];
    assert!(matches!(
        other.backward(&cache, y.view(), &mut grads),
        Err(Error::Inconsistent(_))
    ));
    net.params_mut()[0] += 1.0;
    assert!(matches!(
        net.backward(&cache, y.view(), &mut grads),
        Err(Error::Inconsistent(_))
    ));
}

fn analytic_gradient(
    net: &Network,
    x: &Array2<f64>,
    t: &Array2<f64>,
    seed: u64,
) -> (Vec<f64>, DropoutMasks) {
    let (y, cache) = net.forward(x.view(), Mode::Train, &mut rng(seed)).unwrap();
    let mut grads = vec![0.0; net.num_params()];
    net.backward(&cache, mse_grad(y.view(), t.view()).view(), &mut grads)
        .unwrap();
    (grads, cache.masks().clone())
}

#[test]
fn finite_difference_is_exact_for_output_bias() {
    // the loss is quadratic in the output bias, so the central difference is exact
    let net = build_component_net(2, 1, 2, &mut rng(10)).unwrap();
    let x = random_batch(6, 3, 11);
    let t = random_batch(6, 1, 12);
    let (grads, masks) = analytic_gradient(&net, &x, &t, 13);
    let idx = net.num_params() - 1;
    for step in [1e-2, 1e-4, 1e-5] {
        let fd = finite_diff_grad(&net, x.view(), t.view(), &masks, idx, step).unwrap();
        assert_abs_diff_eq!(fd, grads[idx], epsilon = 1e-9);
    }
}

#[test]
fn finite_difference_matches_backward_on_small_net() {
    let net = build_component_net(2, 1, 1, &mut rng(14)).unwrap();
    let x = random_batch(4, 3, 15);
    let t = random_batch(4, 1, 16);
    let (grads, masks) = analytic_gradient(&net, &x, &t, 17);
    for (idx, &g) in grads.iter().enumerate() {
        let fd = finite_diff_grad(&net, x.view(), t.view(), &masks, idx, 1e-5).unwrap();
        assert!((fd - g).abs() < 1e-6, "param {idx}: fd {fd} vs {g}");
    }
}

#[test]
fn stationary_point_of_symmetric_zero_net() {
    // all-zero weights with a tanh hidden layer and zero target: every
    // gradient vanishes at the origin
    let net = Network::zeroed(&component_layers(component_widths(3, 1, 2))).unwrap();
    let x = random_batch(3, 3, 18);
    let t = Array2::zeros((3, 1));
    let masks: DropoutMasks = vec![None; 5];
    for idx in [0, 10, net.num_params() - 1] {
        let fd = finite_diff_grad(&net, x.view(), t.view(), &masks, idx, 1e-5).unwrap();
        assert!(fd.abs() < 1e-12);
    }
}

fn relative_gradient_error(fd: f64, analytic: f64) -> Option<f64> {
    let scale = fd.abs().max(analytic.abs());
    if scale < 1e-3 {
        // absolute criterion for tiny gradients
        ((fd - analytic).abs() >= 1e-7).then_some(f64::INFINITY)
    } else {
        Some((fd - analytic).abs() / scale)
    }
}

#[test]
fn full_stack_gradient_check() {
    let net = build_component_net(2, 1, 5, &mut rng(19)).unwrap();
    let x = random_batch(5, 3, 20);
    let t = random_batch(5, 1, 21);
    let (grads, masks) = analytic_gradient(&net, &x, &t, 22);
    let mut pick = rng(23);
    for _ in 0..100 {
        let idx = pick.random_range(0..net.num_params());
        let fd = finite_diff_grad(&net, x.view(), t.view(), &masks, idx, 1e-5).unwrap();
        if let Some(err) = relative_gradient_error(fd, grads[idx]) {
            assert!(
                err < 1e-4,
                "param {idx}: fd {fd} vs analytic {}",
                grads[idx]
            );
        }
    }
}

#[test]
fn each_layer_type_gradient_check() {
    for activation in [Activation::Linear, Activation::Prelu, Activation::Tanh] {
        let specs = [
            LayerSpec {
                fan_in: 3,
                fan_out: 4,
                activation,
                dropout_after: true,
            },
            LayerSpec {
                fan_in: 4,
                fan_out: 2,
                activation: Activation::Linear,
                dropout_after: false,
            },
        ];
        let net = Network::new(&specs, &mut rng(24)).unwrap();
        let x = random_batch(6, 3, 25);
        let t = random_batch(6, 2, 26);
        let (grads, masks) = analytic_gradient(&net, &x, &t, 27);
        for (idx, &g) in grads.iter().enumerate() {
            let fd = finite_diff_grad(&net, x.view(), t.view(), &masks, idx, 1e-5).unwrap();
            if let Some(err) = relative_gradient_error(fd, g) {
                assert!(err < 1e-4, "{activation:?} param {idx}: fd {fd} vs {g}");
            }
        }
    }
}

#[test]
fn dropout_preserves_expectation() {
    let spec = LayerSpec {
        fan_in: 3,
        fan_out: 6,
        activation: Activation::Tanh,
        dropout_after: true,
    };
    let net = Network::new(&[spec], &mut rng(28)).unwrap();
    let x = random_batch(1, 3, 29);
    let reference = net.predict(x.view()).unwrap();
    let n = 10_000;
    let mut r = rng(30);
    let mut sum = [0.0; 6];
    let mut sum_sq = [0.0; 6];
    for _ in 0..n {
        let (y, _) = net.forward(x.view(), Mode::Train, &mut r).unwrap();
        for (u, v) in y.iter().enumerate() {
            sum[u] += v;
            sum_sq[u] += v * v;
        }
    }
    for u in 0..6 {
        let mean = sum[u] / n as f64;
        let var = sum_sq[u] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - reference[[0, u]]).abs() < 3.0 * se, "unit {u}");
    }
}

#[test]
fn fits_linear_target() {
    let mut r = rng(31);
    let x = random_batch(400, 3, 32);
    let y = x.dot(&array![[0.7], [-1.1], [0.4]]) + 0.2;
    let specs = [
        LayerSpec {
            fan_in: 3,
            fan_out: 16,
            activation: Activation::Prelu,
            dropout_after: false,
        },
        LayerSpec {
            fan_in: 16,
            fan_out: 1,
            activation: Activation::Linear,
            dropout_after: false,
        },
    ];
    let mut net = Network::new(&specs, &mut r).unwrap();
    let cfg = FitConfig {
        epochs: 150,
        minibatch: 20,
        adam: AdamConfig::default(),
    };
    let history = fit_network(&mut net, x.view(), y.view(), &cfg, &mut r).unwrap();
    assert!(history.last().unwrap() < &history[0]);
    let mse = mse_loss(net.predict(x.view()).unwrap().view(), y.view()).unwrap();
    assert!(mse < 1e-3, "training mse {mse}");
}

#[test]
fn component_net_learns_despite_dropout() {
    let mut r = rng(34);
    let x = random_batch(400, 3, 35);
    let y = x.dot(&array![[0.7], [-1.1], [0.4]]) + 0.2;
    let baseline = mse_loss(Array2::zeros((400, 1)).view(), y.view()).unwrap();
    let mut net = build_component_net(2, 1, 3, &mut r).unwrap();
    let cfg = FitConfig {
        epochs: 150,
        minibatch: 20,
        adam: AdamConfig::default(),
    };
    fit_network(&mut net, x.view(), y.view(), &cfg, &mut r).unwrap();
    let mse = mse_loss(net.predict(x.view()).unwrap().view(), y.view()).unwrap();
    assert!(
        mse < 0.2 * baseline,
        "training mse {mse} vs baseline {baseline}"
    );
}

#[test]
fn json_round_trip_is_bit_exact() {
    let net = build_component_net(2, 1, 3, &mut rng(33)).unwrap();
    let text = serde_json::to_string(&net).unwrap();
    let back: Network = serde_json::from_str(&text).unwrap();
    assert_eq!(net.params().len(), back.params().len());
    for (a, b) in net.params().iter().zip(back.params()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(net.layer_specs(), back.layer_specs());
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["widths"], serde_json::json!([3, 9, 36, 36, 3, 1]));
    assert_eq!(doc["layers"][1]["activation"], "prelu");
}

#[test]
fn corrupt_json_is_rejected() {
    let net = build_component_net(2, 1, 1, &mut rng(34)).unwrap();
    let mut doc = NetworkDoc::from(&net);
    doc.layers[0].weights.pop();
    assert!(Network::try_from(doc).is_err());
}
