mod common;

use common::*;
use selfloc::gcn::{conv_layer, train_inputs, GcnModel, GraphInput, ModelTags, TrainConfig};

use selfloc::numkit::Rng;

#[test]
fn gradients_match_central_differences() {
    let mut rng = Rng::new(101);
    let mut worst: f64 = 0.0;
    for _ in 0..40 {
        let (model, input, label) = smooth_config(&mut rng);
        let check = grad_check(&model, &input, label, 1e-5, GRAD_FLOOR);
        assert!(check.checked > 0);
        worst = worst.max(check.max_rel_error);
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn gradient_of_saturated_softmax_stays_finite() {
    let mut rng = Rng::new(5);
    let (mut model, input, _) = smooth_config(&mut rng);
    for v in model.fc_bias.as_mut_slice() {
        *v = 0.0;
    }
    model.fc_bias.as_mut_slice()[0] = 800.0;
    let trace = model.forward_input(&input).unwrap();
    let (g, loss) = model.backward(&trace, 1).unwrap();
    assert!(loss.is_finite() && loss > 20.0);
    assert!(g.w1.is_finite() && g.w2.is_finite() && g.fc_weight.is_finite());
}

#[test]
fn layered_convolution_equals_dense_oracle() {
    let mut rng = Rng::new(17);
    for _ in 0..200 {
        let n = 1 + uniform_index(&mut rng, 50);
        let d = 1 + uniform_index(&mut rng, 12);
        let out = 1 + uniform_index(&mut rng, 12);
        let (input, edges) = random_input(&mut rng, n, d, 0.15);
        let w = random_matrix(&mut rng, out, d);
        let fast = conv_layer(&input.features, &input.neighbors, &w).unwrap();
        let slow = dense_conv(&input.features, &edges, &w);
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn probabilities_invariant_under_node_relabeling() {
    let mut rng = Rng::new(23);
    for _ in 0..100 {
        let n = 1 + uniform_index(&mut rng, 30);
        let d = 1 + uniform_index(&mut rng, 10);
        let (input, _) = random_input(&mut rng, n, d, 0.3);
        let model = random_model(&mut rng, d, 16, 7);
        let perm = permutation(&mut rng, n);
        let p0 = model.predict_input(&input).unwrap().1;
        let p1 = model.predict_input(&permute_input(&input, &perm)).unwrap().1;
        for (a, b) in p0.iter().zip(&p1) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()), "{a} vs {b}");
        }
    }
}

fn separable_set(rng: &mut Rng) -> Vec<(GraphInput, usize)> {
    // Class c: node features concentrated on coordinate c.
    (0..90)
        .map(|i| {
            let c = i % 3;
            let n = 2 + uniform_index(rng, 4);
            let (mut input, _) = random_input(rng, n, 3, 0.5);
            for v in input.features.as_mut_slice() {
                *v = 0.05 * *v;
            }
            for r in 0..n {
                input.features.set(r, c, 1.0 + input.features.get(r, c));
            }
            (input, c)
        })
        .collect()
}

#[test]
fn separable_classes_are_learned_in_five_epochs() {
    let mut rng = Rng::new(31);
    let data = separable_set(&mut rng);
    let cfg = TrainConfig {
        hidden: 32,
        batch_size: 8,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let out = train_inputs(&data, 3, ModelTags::default(), &cfg).unwrap();
    let last = *out.loss_history.last().unwrap();
    assert!(last < 0.05, "final loss {last}");
    let correct = data
        .iter()
        .filter(|(g, y)| out.model.predict_input(g).unwrap().0 == *y)
        .count();
    assert!(correct as f64 / data.len() as f64 >= 0.99);
    assert_eq!(out.loss_history.len(), 5 * data.len().div_ceil(8));
}

#[test]
fn zero_learning_rate_keeps_initialization() {
    let mut rng = Rng::new(37);
    let data = separable_set(&mut rng);
    let cfg = TrainConfig {
        hidden: 8,
        learning_rate: 0.0,
        epochs: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    let out = train_inputs(&data, 3, ModelTags::default(), &cfg).unwrap();
    let dims = out.model.dims();
    let init = GcnModel::init(dims, ModelTags::default(), &mut Rng::with_stream(4, 0)).unwrap();
    assert_eq!(out.model, init);
}

#[test]
fn same_seed_same_history_different_seed_differs() {
    let mut rng = Rng::new(41);
    let data = separable_set(&mut rng);
    let cfg = TrainConfig {
        hidden: 8,
        epochs: 2,
        seed: 7,
        ..TrainConfig::default()
    };
    let a = train_inputs(&data, 3, ModelTags::default(), &cfg).unwrap();
    let b = train_inputs(&data, 3, ModelTags::default(), &cfg).unwrap();
    assert_eq!(a.loss_history, b.loss_history);
    assert_eq!(a.model, b.model);
    let c = train_inputs(&data, 3, ModelTags::default(), &TrainConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.loss_history, c.loss_history);
}

#[test]
fn training_rejects_bad_inputs() {
    let mut rng = Rng::new(43);
    let data = separable_set(&mut rng);
    let cfg = TrainConfig::default();
    assert!(train_inputs(&[], 3, ModelTags::default(), &cfg).is_err());
    assert!(train_inputs(&data, 2, ModelTags::default(), &cfg).is_err());
    let bad_layers = TrainConfig {
        layers: 3,
        ..cfg.clone()
    };
    assert!(train_inputs(&data, 3, ModelTags::default(), &bad_layers).is_err());
    let mut mixed = data.clone();
    mixed.push((random_input(&mut rng, 2, 4, 1.0).0, 0));
    assert!(train_inputs(&mixed, 3, ModelTags::default(), &cfg).is_err());
}
