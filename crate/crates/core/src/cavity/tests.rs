use super::*;
use crate::data::{gen_edges, standardize_pair, EdgesSpec};
use crate::nn::{init_params, ModelConfig, TrainConfig, BN_EPSILON};
use crate::pruning::{imp_run, random_mask, PruneSchedule, PruneScope};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

fn laplace(rng: &mut impl Rng) -> f64 {
    let e: f64 = Exp::new(1.0).unwrap().sample(rng);
    if rng.random_bool(0.5) {
        e
    } else {
        -e
    }
}

/// Two-pixel inputs with the given per-pixel samplers, unit weights.
fn two_pixel(n: usize, seed: u64, a: fn(&mut rand_chacha::ChaCha8Rng) -> f64, b: fn(&mut rand_chacha::ChaCha8Rng) -> f64) -> (Matrix, Vec<f64>) {
    let mut rng = crate::seed::rng(seed);
    let mut x = Matrix::zeros(n, 2);
    for s in 0..n {
        x.set(s, 0, a(&mut rng));
        x.set(s, 1, b(&mut rng));
    }
    let lambda = (0..n).map(|s| x.get(s, 0) + x.get(s, 1)).collect();
    (x, lambda)
}

fn rademacher(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

fn gaussian(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn lap(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    laplace(rng)
}

/// Kurtosis of a sum of independent unit-variance terms from their own
/// kurtoses: cumulants add.
fn sum_kurtosis(kurts: &[f64]) -> f64 {
    let var = kurts.len() as f64;
    3.0 + kurts.iter().map(|k| k - 3.0).sum::<f64>() / (var * var)
}

#[test]
fn zero_weight_scores_zero() {
    let (x, lambda) = two_pixel(1000, 1, rademacher, gaussian);
    let s = cavity_score(&[1.0, 0.0], &lambda, &x, 1).unwrap();
    assert_eq!(s.score, 0.0);
}

#[test]
fn removing_gaussian_from_rademacher_mixture_is_positive() {
    let (x, lambda) = two_pixel(400_000, 2, rademacher, gaussian);
    let base = sum_kurtosis(&[1.0, 3.0]);
    assert_eq!(base, 2.5);
    let expected = (base - 1.0) / base;
    let s = cavity_score(&[1.0, 1.0], &lambda, &x, 1).unwrap();
    assert!(s.score > 0.0);
    assert!((s.score - expected).abs() < 0.02, "{} vs {expected}", s.score);
}

fn naive_kurtosis(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2)
}

#[test]
fn sign_follows_distance_from_gaussian() {
    let (x, lambda) = two_pixel(400_000, 3, lap, gaussian);
    let base = naive_kurtosis(&lambda);
    assert!(base > 3.0);
    // dropping the Gaussian pixel leaves a pure Laplace: further from 3
    let keep_laplace = cavity_score(&[1.0, 1.0], &lambda, &x, 1).unwrap();
    assert!(keep_laplace.score > 0.0);
    let expected = (naive_kurtosis(&x.column(0)) - base) / base;
    assert!((keep_laplace.score - expected).abs() < 1e-9);
    // dropping the Laplace pixel leaves a Gaussian: closer to 3
    let keep_gauss = cavity_score(&[1.0, 1.0], &lambda, &x, 0).unwrap();
    assert!(keep_gauss.score < 0.0);
    let expected = (naive_kurtosis(&x.column(1)) - base) / base;
    assert!((keep_gauss.score - expected).abs() < 1e-9);
}

#[test]
fn exactly_gaussian_kurtosis_is_neutral() {
    let c = cavity_from_kurtoses(3.0, 5.0);
    assert!(c.neutral);
    assert_eq!(c.score, 0.0);
    assert!(cavity_from_kurtoses(4.0, 5.0).score > 0.0);
    assert!(cavity_from_kurtoses(2.0, 1.0).score > 0.0);
    assert!(cavity_from_kurtoses(2.0, 2.5).score < 0.0);
}

#[test]
fn removing_only_weight_is_degenerate() {
    let mut rng = crate::seed::rng(4);
    let x = Matrix::from_vec(100, 1, (0..100).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let lambda = x.column(0);
    assert!(matches!(cavity_score(&[1.0], &lambda, &x, 0), Err(Error::DegenerateVariance { .. })));
}

#[test]
fn weights_remaining_rounds() {
    assert_eq!(weights_remaining(1000, 0.3, 2), 490);
    assert_eq!(weights_remaining(1000, 0.3, 0), 1000);
}

fn edge_sets() -> (Dataset, Dataset) {
    let spec = EdgesSpec {
        n_samples: 400,
        n_p: 4,
        n_classes: 4,
        contrast: 1.0,
        noise_std: 0.3,
    };
    let train = gen_edges(&spec, 10).unwrap();
    let test = gen_edges(&spec, 11).unwrap().with_split(Split::Test);
    standardize_pair(&train, &test)
}

#[test]
fn incremental_leave_one_out_matches_recomputation() {
    let (_, test) = edge_sets();
    let mut params = init_params(&ModelConfig::new(vec![16, 10, 4], true, 5)).unwrap();
    {
        let mut rng = crate::seed::rng(6);
        let bn = params.layers[0].bn.as_mut().unwrap();
        for j in 0..16 {
            bn.gamma[j] = rng.random_range(0.5..1.5);
            bn.beta[j] = rng.random_range(-0.5..0.5);
            bn.running_mean[j] = rng.random_range(-0.2..0.2);
            bn.running_var[j] = rng.random_range(0.5..2.0);
        }
        for b in &mut params.layers[0].bias {
            *b = rng.random_range(-1.0..1.0);
        }
    }
    let mask = random_mask(&params.shapes(), 0.4, 7, PruneScope::FirstLayerOnly).unwrap();
    let probe = probe_layer(&params, &mask, test.images(), 1).unwrap();
    let layer = &params.layers[0];
    let bn = layer.bn.as_ref().unwrap();
    let x = test.images();
    let normalized = |s: usize, k: usize| {
        bn.gamma[k] * (x.get(s, k) - bn.running_mean[k]) / (bn.running_var[k] + BN_EPSILON).sqrt() + bn.beta[k]
    };
    for i in 0..10 {
        let lambda: Vec<f64> = probe.preactivations.row(i).iter().map(|v| v - layer.bias[i]).collect();
        for j in (0..16).filter(|&j| mask.layer(0).get(i, j)) {
            let fast = leave_one_out(&lambda, layer.weight.get(i, j), &probe.inputs.column(j));
            for s in 0..x.rows() {
                let slow: f64 = (0..16)
                    .filter(|&k| k != j && mask.layer(0).get(i, k))
                    .map(|k| layer.weight.get(i, k) * normalized(s, k))
                    .sum();
                assert!((fast[s] - slow).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn report_groups_by_removal_round() {
    let (train, test) = edge_sets();
    let model = ModelConfig::new(vec![16, 12, 4], true, 3);
    let cfg = TrainConfig {
        total_iterations: 60,
        rewind_iteration: 10,
        batch_size: 20,
        learning_rate: 0.1,
        seed: 4,
    };
    let schedule = PruneSchedule {
        fraction: 0.3,
        rounds: 3,
        scope: PruneScope::FirstLayerOnly,
    };
    let history = imp_run(&model, &cfg, &schedule, &train, |_, _| Ok(())).unwrap();
    let removal = RemovalSchedule::from_history(&history, 0).unwrap();
    for n in 1..=3u32 {
        let (prev, cur) = (history.mask(n - 1).layer(0), history.mask(n).layer(0));
        for i in 0..12 {
            for j in 0..16 {
                let pruned_now = prev.get(i, j) && !cur.get(i, j);
                assert_eq!(pruned_now, removal.fate(i, j) == Fate::Removed(n));
            }
        }
    }

    let params = &history.rewind.params;
    let report = cavity_report(params, history.mask(0), &test, &removal, &CavityOptions::default()).unwrap();
    let fates: Vec<Fate> = report.summary.groups.iter().map(|g| g.fate).collect();
    assert_eq!(fates, vec![Fate::Removed(1), Fate::Removed(2), Fate::Removed(3), Fate::Survivor]);
    assert_eq!(report.summary.groups.iter().map(|g| g.size).sum::<usize>(), 192);
    assert_eq!(report.summary.n_weights_remaining, 192);

    for g in &report.summary.groups {
        let members: Vec<f64> = report.scores.iter().filter(|s| s.fate == g.fate).filter_map(|s| s.score).collect();
        let mean = members.iter().sum::<f64>() / members.len() as f64;
        assert!((g.mean_score.unwrap() - mean).abs() < 1e-12);
        assert!((g.normalized_mean.unwrap() - 192.0 * mean).abs() < 1e-9);
    }

    // class-average of the per-class scores from the single-weight routine
    let probe = probe_layer(params, history.mask(0), test.images(), 1).unwrap();
    let w = &params.layers[0].weight;
    for s in report.scores.iter().take(20) {
        let mut per_class = Vec::new();
        for c in 0..4 {
            let idx = test.class_indices(c);
            let lambda: Vec<f64> = idx.iter().map(|&k| probe.preactivations.get(s.unit, k) - params.layers[0].bias[s.unit]).collect();
            let inputs = probe.inputs.select_rows(&idx);
            per_class.push(cavity_score(w.row(s.unit), &lambda, &inputs, s.input).unwrap().score);
        }
        let mean = per_class.iter().sum::<f64>() / 4.0;
        assert!((s.score.unwrap() - mean).abs() < 1e-12);
        assert_eq!(s.n_classes_valid, 4);
    }

    let later = cavity_report(params, history.mask(2), &test, &removal, &CavityOptions::default()).unwrap();
    assert_eq!(later.summary.evaluation_round, 2);
    assert_eq!(later.summary.n_weights_remaining, weights_remaining(192, 0.3, 2));
    assert_eq!(later.summary.remaining_in_mask, history.mask(2).kept(0));
    assert!(later.group(Fate::Removed(1)).is_none());

    let subset = CavityOptions {
        class_subset: Some(vec![0, 2]),
    };
    let sub = cavity_report(params, history.mask(0), &test, &removal, &subset).unwrap();
    assert_eq!(sub.summary.classes_used, vec![0, 2]);
    assert!(cavity_report(params, history.mask(0), &train, &removal, &CavityOptions::default()).is_err());
}

#[test]
fn non_nested_history_is_rejected() {
    let a = Mask::from_layers(0, vec![crate::pruning::LayerMask::from_bits(1, 2, vec![true, false]).unwrap()]);
    let b = Mask::from_layers(1, vec![crate::pruning::LayerMask::from_bits(1, 2, vec![false, true]).unwrap()]);
    assert!(RemovalSchedule::from_masks(&[a, b], 0, 0.5).is_err());
}
