use super::*;
use crate::data::Split;
use crate::pruning::{random_mask, LayerMask, PruneScope};
use crate::stats::kurtosis;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = crate::seed::rng(seed);
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn perturbed(params: &Parameters, seed: u64) -> Parameters {
    // Move BN parameters and biases off their identity init so every
    // gradient term is exercised.
    let mut rng = crate::seed::rng(seed);
    let mut p = params.clone();
    for layer in &mut p.layers {
        for b in &mut layer.bias {
            *b = rng.random_range(-0.3..0.3);
        }
        if let Some(bn) = layer.bn.as_mut() {
            for g in &mut bn.gamma {
                *g = rng.random_range(0.5..1.5);
            }
            for b in &mut bn.beta {
                *b = rng.random_range(-0.5..0.5);
            }
        }
    }
    p
}

fn train_loss(params: &Parameters, x: &Matrix, labels: &[u32]) -> f64 {
    let pass = forward_unmasked(params, x, Mode::Train).unwrap();
    softmax_cross_entropy(pass.logits(), labels).unwrap().0
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()) + 1e-8)
}

#[test]
fn init_is_deterministic_and_bounded() {
    let cfg = ModelConfig::new(vec![100, 20, 5], true, 7);
    let a = init_params(&cfg).unwrap();
    let b = init_params(&cfg).unwrap();
    assert_eq!(a, b);
    for w in a.layers[0].weight.as_slice() {
        assert!(w.abs() <= 0.1);
    }
    assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    let bn = a.layers[0].bn.as_ref().unwrap();
    assert!(bn.gamma.iter().all(|&g| g == 1.0) && bn.beta.iter().all(|&b| b == 0.0));
    assert!(a.layers[1].bn.is_none() || cfg.batch_norm.len() == 1);
}

#[test]
fn zero_width_layer_rejected() {
    let cfg = ModelConfig::new(vec![4, 0, 2], false, 1);
    assert!(matches!(init_params(&cfg), Err(Error::InvalidConfig(_))));
    let cfg = ModelConfig::new(vec![4, 2], false, 1);
    assert!(matches!(init_params(&cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn zero_weights_give_bias() {
    let cfg = ModelConfig::new(vec![4, 3, 2], false, 1);
    let mut p = init_params(&cfg).unwrap();
    p.layers[0].weight = Matrix::zeros(3, 4);
    p.layers[0].bias = vec![0.5, -1.0, 2.0];
    let x = gaussian_matrix(10, 4, 2);
    let pass = forward(&p, &Mask::ones(&p.shapes()), &x, Mode::Eval).unwrap();
    for s in 0..10 {
        assert_eq!(pass.preactivations[0].row(s), &[0.5, -1.0, 2.0]);
    }
}

#[test]
fn masked_row_gives_bias() {
    let cfg = ModelConfig::new(vec![4, 3, 2], false, 1);
    let mut p = init_params(&cfg).unwrap();
    p.layers[0].bias[1] = 0.25;
    let mut bits = vec![true; 12];
    bits[4..8].fill(false);
    let mask = Mask::from_layers(0, vec![LayerMask::from_bits(3, 4, bits).unwrap(), LayerMask::ones(2, 3)]);
    let x = gaussian_matrix(10, 4, 3);
    let pass = forward(&p, &mask, &x, Mode::Eval).unwrap();
    for s in 0..10 {
        assert_eq!(pass.preactivations[0].get(s, 1), 0.25);
    }
}

#[test]
fn shape_mismatch_is_error() {
    let p = init_params(&ModelConfig::new(vec![4, 3, 2], false, 1)).unwrap();
    let x = gaussian_matrix(5, 5, 1);
    assert!(matches!(forward(&p, &Mask::ones(&p.shapes()), &x, Mode::Eval), Err(Error::Shape(_))));
    let wrong = Mask::ones(&[(3, 5), (2, 3)]);
    assert!(forward(&p, &wrong, &gaussian_matrix(5, 4, 1), Mode::Eval).is_err());
}

#[test]
fn identity_unit_preactivation() {
    let mut p = init_params(&ModelConfig::new(vec![4, 1, 2], false, 1)).unwrap();
    p.layers[0].weight = Matrix::from_vec(1, 4, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let x = gaussian_matrix(7, 4, 9);
    let data = Dataset::new(x.clone(), vec![0, 1, 0, 1, 0, 1, 0], 2, 1, 2, Split::Test).unwrap();
    let pre = preactivations(&p, &Mask::ones(&p.shapes()), &data, 1).unwrap();
    assert_eq!(pre.row(0), x.column(0).as_slice());
}

#[test]
fn probe_matches_forward_bit_exactly() {
    let p = perturbed(&init_params(&ModelConfig::new(vec![9, 6, 5, 3], true, 4)).unwrap(), 5);
    let mask = random_mask(&p.shapes(), 0.3, 11, PruneScope::AllLayers).unwrap();
    let x = gaussian_matrix(40, 9, 6);
    let pass = forward(&p, &mask, &x, Mode::Eval).unwrap();
    for layer in 1..=2 {
        let probe = probe_layer(&p, &mask, &x, layer).unwrap();
        assert_eq!(probe.preactivations, pass.preactivations[layer - 1].transpose());
        assert_eq!(probe.inputs, pass.inputs[layer - 1]);
    }
    assert!(probe_layer(&p, &mask, &x, 3).is_err());
    assert!(probe_layer(&p, &mask, &x, 0).is_err());
}

#[test]
fn second_layer_zero_weights_give_bias() {
    let mut p = init_params(&ModelConfig::new(vec![4, 3, 2, 2], true, 1)).unwrap();
    p.layers[1].weight = Matrix::zeros(2, 3);
    p.layers[1].bias = vec![1.5, -0.5];
    let x = gaussian_matrix(6, 4, 3);
    let probe = probe_layer(&p, &Mask::ones(&p.shapes()), &x, 2).unwrap();
    assert!(probe.preactivations.row(0).iter().all(|&v| v == 1.5));
    assert!(probe.preactivations.row(1).iter().all(|&v| v == -0.5));
}

#[test]
fn gradients_match_central_differences() {
    let base = init_params(&ModelConfig::new(vec![6, 5, 4, 3], true, 21)).unwrap();
    let params = perturbed(&base, 22);
    let x = gaussian_matrix(12, 6, 23);
    let labels: Vec<u32> = (0..12).map(|i| (i % 3) as u32).collect();
    let pass = forward_unmasked(&params, &x, Mode::Train).unwrap();
    let (_, d_logits) = softmax_cross_entropy(pass.logits(), &labels).unwrap();
    let grads = backward(&params, &pass, &d_logits);

    let h = 1e-5;
    let check = |analytic: f64, bump: &dyn Fn(&mut Parameters, f64)| {
        let mut plus = params.clone();
        bump(&mut plus, h);
        let mut minus = params.clone();
        bump(&mut minus, -h);
        let numeric = (train_loss(&plus, &x, &labels) - train_loss(&minus, &x, &labels)) / (2.0 * h);
        if analytic.abs().max(numeric.abs()) > 1e-7 {
            assert!(
                relative_error(analytic, numeric) < 1e-4,
                "analytic {analytic} vs numeric {numeric}"
            );
        }
    };
    for l in 0..params.n_layers() {
        let (rows, cols) = (params.layers[l].fan_out(), params.layers[l].fan_in());
        for i in 0..rows {
            for j in 0..cols {
                check(grads.weight[l].get(i, j), &|p: &mut Parameters, d| {
                    let w = p.layers[l].weight.get(i, j);
                    p.layers[l].weight.set(i, j, w + d);
                });
            }
            check(grads.bias[l][i], &|p: &mut Parameters, d| p.layers[l].bias[i] += d);
        }
        if params.layers[l].bn.is_some() {
            for j in 0..cols {
                check(grads.gamma[l].as_ref().unwrap()[j], &|p: &mut Parameters, d| {
                    p.layers[l].bn.as_mut().unwrap().gamma[j] += d
                });
                check(grads.beta[l].as_ref().unwrap()[j], &|p: &mut Parameters, d| {
                    p.layers[l].bn.as_mut().unwrap().beta[j] += d
                });
            }
        }
    }
}

#[test]
fn softmax_cross_entropy_matches_direct_formula() {
    let logits = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![1000.0, 0.0, -1000.0]]).unwrap();
    let (loss, d) = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    let expected = (-(3.0f64.exp() / z).ln() + 0.0) / 2.0;
    assert!((loss - expected).abs() < 1e-12);
    let row_sums: Vec<f64> = (0..2).map(|r| d.row(r).iter().sum()).collect();
    assert!(row_sums.iter().all(|s| s.abs() < 1e-12));
    assert!(softmax_cross_entropy(&logits, &[3, 0]).is_err());
}

fn blob_dataset(n: usize, seed: u64) -> Dataset {
    // Two classes separated along a fixed direction in 4 dimensions.
    let mut rng = crate::seed::rng(seed);
    let dir = [0.6, -0.3, 0.5, 0.55];
    let mut data = Vec::with_capacity(n * 4);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = (i % 2) as u32;
        let sign = if y == 1 { 1.0 } else { -1.0 };
        for d in dir {
            data.push(sign * 1.5 * d + 0.5 * rng.sample::<f64, _>(StandardNormal));
        }
        labels.push(y);
    }
    Dataset::new(Matrix::from_vec(n, 4, data).unwrap(), labels, 2, 1, 2, Split::Train).unwrap()
}

/// Full-batch gradient descent on a 2-class logistic regression.
fn logistic_oracle_accuracy(data: &Dataset) -> f64 {
    let x = data.images();
    let y = data.labels();
    let (mut w, mut b) = ([0.0f64; 4], 0.0f64);
    for _ in 0..2000 {
        let mut gw = [0.0; 4];
        let mut gb = 0.0;
        for s in 0..x.rows() {
            let z: f64 = (0..4).map(|k| w[k] * x.get(s, k)).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - y[s] as f64;
            for k in 0..4 {
                gw[k] += err * x.get(s, k);
            }
            gb += err;
        }
        let n = x.rows() as f64;
        for k in 0..4 {
            w[k] -= 0.5 * gw[k] / n;
        }
        b -= 0.5 * gb / n;
    }
    let correct = (0..x.rows())
        .filter(|&s| {
            let z: f64 = (0..4).map(|k| w[k] * x.get(s, k)).sum::<f64>() + b;
            (z > 0.0) == (y[s] == 1)
        })
        .count();
    correct as f64 / x.rows() as f64
}

#[test]
fn separable_toy_problem_is_learned() {
    let data = blob_dataset(400, 3);
    let oracle = logistic_oracle_accuracy(&data);
    assert!(oracle > 0.95, "toy set not separable enough: {oracle}");
    let params = init_params(&ModelConfig::new(vec![4, 8, 2], true, 5)).unwrap();
    let mask = Mask::ones(&params.shapes());
    let cfg = TrainConfig {
        total_iterations: 2000,
        rewind_iteration: 0,
        batch_size: 20,
        learning_rate: 0.05,
        seed: 6,
    };
    let out = train(&params, &mask, &data, &cfg, 0).unwrap();
    let acc = accuracy(&out.params, &mask, &data).unwrap();
    assert!(acc > 0.95, "network accuracy {acc}, oracle {oracle}");
    assert!(acc >= oracle - 0.03);
}

#[test]
fn zero_learning_rate_changes_only_running_stats() {
    let data = blob_dataset(64, 1);
    let params = perturbed(&init_params(&ModelConfig::new(vec![4, 5, 3, 2], true, 2)).unwrap(), 3);
    let mask = Mask::ones(&params.shapes());
    let cfg = TrainConfig {
        total_iterations: 20,
        rewind_iteration: 5,
        batch_size: 8,
        learning_rate: 0.0,
        seed: 4,
    };
    let out = train(&params, &mask, &data, &cfg, 0).unwrap();
    let mut changed_stats = false;
    for (a, b) in params.layers.iter().zip(&out.params.layers) {
        assert_eq!(a.weight, b.weight);
        assert_eq!(a.bias, b.bias);
        if let (Some(x), Some(y)) = (&a.bn, &b.bn) {
            assert_eq!(x.gamma, y.gamma);
            assert_eq!(x.beta, y.beta);
            changed_stats |= x.running_mean != y.running_mean;
        }
    }
    assert!(changed_stats);
}

#[test]
fn training_is_deterministic() {
    let data = blob_dataset(64, 1);
    let params = init_params(&ModelConfig::new(vec![4, 6, 2], true, 2)).unwrap();
    let mask = Mask::ones(&params.shapes());
    let cfg = TrainConfig {
        total_iterations: 50,
        rewind_iteration: 10,
        batch_size: 10,
        learning_rate: 0.1,
        seed: 4,
    };
    let a = train(&params, &mask, &data, &cfg, 0).unwrap();
    let b = train(&params, &mask, &data, &cfg, 0).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.loss_trace.len(), 50);
}

#[test]
fn rewind_replay_is_bit_exact() {
    let data = blob_dataset(90, 8);
    let config = ModelConfig::new(vec![4, 7, 5, 2], true, 12);
    let params = init_params(&config).unwrap();
    let mask = Mask::ones(&params.shapes());
    let cfg = TrainConfig {
        total_iterations: 60,
        rewind_iteration: 17,
        batch_size: 16,
        learning_rate: 0.1,
        seed: 13,
    };
    let full = train(&params, &mask, &data, &cfg, 0).unwrap();
    let snapshot = Checkpoint::capture(full.rewind.as_ref().unwrap(), 17, &cfg, config.hash());
    let restored = Checkpoint::decode(&snapshot.encode()).unwrap();
    assert_eq!(restored, snapshot);
    let replay = train(&restored.params, &mask, &data, &cfg, restored.iteration).unwrap();
    assert_eq!(replay.params, full.params);
    assert_eq!(replay.loss_trace[..], full.loss_trace[17..]);
}

#[test]
fn divergence_reports_iteration() {
    let data = blob_dataset(32, 1);
    let mut params = init_params(&ModelConfig::new(vec![4, 3, 2], false, 2)).unwrap();
    params.layers[1].weight.set(0, 0, f64::NAN);
    let cfg = TrainConfig {
        total_iterations: 10,
        rewind_iteration: 0,
        batch_size: 8,
        learning_rate: 0.1,
        seed: 4,
    };
    match train(&params, &Mask::ones(&params.shapes()), &data, &cfg, 0) {
        Err(Error::Divergence { iteration, .. }) => assert_eq!(iteration, 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn wide_layer_preactivations_are_gaussian_at_init() {
    let n_p = 16;
    let dim = 2 * n_p * n_p;
    let x = gaussian_matrix(10_000, dim, 31);
    let labels = vec![0u32; 10_000];
    let data = Dataset::new(x, labels, 2, 2, n_p as u32, Split::Test).unwrap().standardize();
    let params = init_params(&ModelConfig::new(vec![dim, 32, 2], true, 32)).unwrap();
    let pre = preactivations(&params, &Mask::ones(&params.shapes()), &data, 1).unwrap();
    let mean: f64 = (0..pre.rows()).map(|u| kurtosis(pre.row(u)).unwrap()).sum::<f64>() / pre.rows() as f64;
    assert!((2.8..=3.2).contains(&mean), "mean kurtosis {mean}");
}

#[test]
fn checkpoint_rejects_corruption() {
    let config = ModelConfig::new(vec![4, 3, 2], true, 1);
    let params = init_params(&config).unwrap();
    let cfg = TrainConfig {
        total_iterations: 10,
        rewind_iteration: 2,
        batch_size: 2,
        learning_rate: 0.1,
        seed: 3,
    };
    let bytes = Checkpoint::capture(&params, 2, &cfg, config.hash()).encode();
    assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::decode(&extra).is_err());
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(Checkpoint::decode(&bad_magic).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn masked_weights_stay_zero(mask_seed in 0u64..1000, sparsity in 0.1f64..0.9, lr in 0.01f64..0.5) {
        let data = blob_dataset(48, 2);
        let params = init_params(&ModelConfig::new(vec![4, 6, 5, 2], true, 9)).unwrap();
        let mask = random_mask(&params.shapes(), sparsity, mask_seed, PruneScope::AllLayers).unwrap();
        let cfg = TrainConfig {
            total_iterations: 15,
            rewind_iteration: 0,
            batch_size: 8,
            learning_rate: lr,
            seed: mask_seed,
        };
        let out = train(&params, &mask, &data, &cfg, 0).unwrap();
        for (layer, m) in out.params.layers.iter().zip(mask.layers()) {
            for (w, &keep) in layer.weight.as_slice().iter().zip(m.bits()) {
                if !keep {
                    prop_assert_eq!(*w, 0.0);
                }
            }
        }
    }
}
