use super::*;
use crate::stats::kurtosis;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

fn pixel_kurtoses(data: &Dataset) -> Vec<f64> {
    let x = data.images();
    (0..x.cols()).map(|j| kurtosis(&x.column(j)).unwrap()).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn edges(n: usize, noise: f64, seed: u64) -> Dataset {
    gen_edges(
        &EdgesSpec {
            n_samples: n,
            n_p: 8,
            n_classes: 4,
            contrast: 1.0,
            noise_std: noise,
        },
        seed,
    )
    .unwrap()
}

#[test]
fn dataset_rejects_bad_labels_and_shapes() {
    let x = Matrix::zeros(2, 4);
    assert!(Dataset::new(x.clone(), vec![0, 2], 2, 1, 2, Split::Train).is_err());
    assert!(Dataset::new(x.clone(), vec![0], 2, 1, 2, Split::Train).is_err());
    assert!(Dataset::new(x.clone(), vec![0, 1], 2, 1, 3, Split::Train).is_err());
    let mut bad = x;
    bad.set(0, 0, f64::NAN);
    assert!(Dataset::new(bad, vec![0, 1], 2, 1, 2, Split::Train).is_err());
}

#[test]
fn container_round_trip_is_bit_exact() {
    let data = edges(50, 0.3, 1).standardize();
    let back = Dataset::decode(&data.encode(DType::F64)).unwrap();
    assert_eq!(back, data);
    let f32_back = Dataset::decode(&data.encode(DType::F32)).unwrap();
    for (a, b) in f32_back.images().as_slice().iter().zip(data.images().as_slice()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.plds");
    data.save(&path, DType::F64).unwrap();
    assert_eq!(Dataset::load(&path).unwrap(), data);
}

#[test]
fn container_rejects_bad_headers() {
    let bytes = edges(5, 0.0, 1).encode(DType::F64);
    let mut magic = bytes.clone();
    magic[1] = b'Q';
    assert!(matches!(Dataset::decode(&magic), Err(Error::Format(_))));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(Dataset::decode(&version), Err(Error::Format(_))));
    assert!(Dataset::decode(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn standardize_moments_and_idempotence() {
    let data = edges(500, 0.5, 2);
    let s = data.standardize();
    let x = s.images();
    for j in 0..x.cols() {
        let col = x.column(j);
        let m = mean(&col);
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(m.abs() < 1e-10);
        assert!((var.sqrt() - 1.0).abs() < 1e-10);
    }
    assert_eq!(s.standardize(), s);
    let test = edges(100, 0.5, 3).with_split(Split::Test);
    let (tr, te) = standardize_pair(&data, &test);
    assert_eq!(tr.normalization(), te.normalization());
}

#[test]
fn edges_label_is_orientation_bin_and_noise_free_values() {
    let data = edges(2000, 0.0, 4);
    assert!(data.images().as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
    let saturated = data.images().as_slice().iter().filter(|v| v.abs() == 1.0).count();
    assert!(saturated as f64 > 0.8 * data.images().as_slice().len() as f64);
    assert!(data.labels().iter().all(|&l| l < 4));
    let k = pixel_kurtoses(&data);
    assert!(mean(&k) < 1.5, "mean kurtosis {}", mean(&k));
}

#[test]
fn edges_label_matches_drawn_orientation() {
    let spec = EdgesSpec {
        n_samples: 500,
        n_p: 16,
        n_classes: 6,
        contrast: 1.0,
        noise_std: 0.0,
    };
    let (data, angles) = gen_edges_annotated(&spec, 21).unwrap();
    assert_eq!(data, gen_edges(&spec, 21).unwrap());
    for (i, (&label, &deg)) in data.labels().iter().zip(&angles).enumerate() {
        assert!((0.0..360.0).contains(&deg));
        assert_eq!(label, (deg.rem_euclid(180.0) / 30.0).floor() as u32);
        // Summed finite differences telescope to border differences, each of
        // which carries the sign of the matching direction cosine.
        let img = data.images().row(i);
        let (mut gx, mut gy) = (0.0, 0.0);
        for k in 0..16 {
            gx += img[k * 16 + 15] - img[k * 16];
            gy += img[15 * 16 + k] - img[k];
        }
        let (s, c) = deg.to_radians().sin_cos();
        assert!(gx * c >= -1e-12 && gy * s >= -1e-12, "sample {i} at {deg}°");
        assert!(gx * c + gy * s > 0.0, "sample {i} at {deg}°");
    }
    let opposite = |a: f64, b: f64| ((a - b).rem_euclid(360.0) - 180.0).abs() < 30.0;
    let flipped_pairs = angles.iter().enumerate().filter(|&(i, &a)| angles[..i].iter().any(|&b| opposite(a, b))).count();
    assert!(flipped_pairs > 0, "both polarities should occur");
}

#[test]
fn edges_are_strongly_non_gaussian() {
    let data = edges(10_000, 0.1, 5);
    let excess: Vec<f64> = pixel_kurtoses(&data).iter().map(|k| k - 3.0).collect();
    assert!(excess.iter().all(|e| e.abs() > 0.5));
    assert!(mean(&excess) < -0.5);
}

#[test]
fn edges_class_count_must_divide_bins() {
    let spec = EdgesSpec {
        n_samples: 10,
        n_p: 4,
        n_classes: 7,
        contrast: 1.0,
        noise_std: 0.0,
    };
    assert!(matches!(gen_edges(&spec, 1), Err(Error::InvalidConfig(_))));
}

#[test]
fn generators_are_deterministic_and_seed_sensitive() {
    assert_eq!(edges(30, 0.2, 9), edges(30, 0.2, 9));
    assert_ne!(edges(30, 0.2, 9), edges(30, 0.2, 10));
    let spec = NlgpSpec {
        n_samples: 20,
        n_p: 5,
        correlation_length: 1.5,
        gain: 2.0,
    };
    assert_eq!(gen_nlgp(&spec, 3).unwrap(), gen_nlgp(&spec, 3).unwrap());
}

fn nlgp_class(gain: f64, n: usize, seed: u64) -> Dataset {
    let data = gen_nlgp(
        &NlgpSpec {
            n_samples: n,
            n_p: 6,
            correlation_length: 2.0,
            gain,
        },
        seed,
    )
    .unwrap();
    data.subset(&data.class_indices(1))
}

#[test]
fn nlgp_high_gain_is_platykurtic() {
    let k = pixel_kurtoses(&nlgp_class(3.0, 20_000, 6));
    assert!(k.iter().all(|&v| v < 2.5), "max {}", k.iter().cloned().fold(0.0, f64::max));
}

#[test]
fn nlgp_low_gain_is_gaussian() {
    let k = pixel_kurtoses(&nlgp_class(0.01, 20_000, 7));
    assert!((mean(&k) - 3.0).abs() < 0.1, "mean kurtosis {}", mean(&k));
}

#[test]
fn nlgp_unit_variance_and_stationary_covariance() {
    let data = nlgp_class(3.0, 40_000, 8);
    let (_, cov) = clone::mean_and_covariance(data.images());
    let n = data.len() as f64;
    let np = 6usize;
    for a in 0..36 {
        assert!((cov[(a, a)] - 1.0).abs() < 5.0 * (2.0 / n).sqrt() * 1.5);
    }
    // Same displacement, different absolute positions.
    let pairs = [((0, 0), (1, 0)), ((2, 3), (3, 3)), ((4, 4), (5, 4))];
    let vals: Vec<f64> = pairs
        .iter()
        .map(|&((ax, ay), (bx, by))| cov[(ay * np + ax, by * np + bx)])
        .collect();
    for v in &vals {
        assert!((v - vals[0]).abs() < 5.0 * (2.0 / n).sqrt());
    }
    let g2 = 9.0f64;
    let k1 = (-1.0f64 / 8.0).exp();
    let expected = (2.0 * g2 * k1 / (1.0 + 2.0 * g2)).asin() / (2.0 * g2 / (1.0 + 2.0 * g2)).asin();
    assert!((vals[0] - expected).abs() < 0.03, "{} vs {expected}", vals[0]);
}

fn gaussian_source(n_per_class: usize, seed: u64) -> (Dataset, Vec<Vec<f64>>, Vec<DMatrix<f64>>) {
    // Two classes, one channel, 2x2 pixels, known mean and covariance.
    let means = vec![vec![1.0, -1.0, 0.5, 0.0], vec![-2.0, 0.0, 0.0, 3.0]];
    let factors = [
        DMatrix::from_row_slice(4, 4, &[1.0, 0.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0, 0.2, -0.3, 0.8, 0.0, 0.0, 0.1, 0.4, 0.6]),
        DMatrix::from_row_slice(4, 4, &[2.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.3, 0.3, 1.0, 0.0, -0.5, 0.0, 0.0, 1.0]),
    ];
    let covs: Vec<DMatrix<f64>> = factors.iter().map(|l| l * l.transpose()).collect();
    let mut rng = crate::seed::rng(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2 {
        for _ in 0..n_per_class {
            let g = nalgebra::DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &factors[c] * g;
            rows.push((0..4).map(|i| means[c][i] + x[i]).collect::<Vec<_>>());
            labels.push(c as u32);
        }
    }
    let data = Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, 2, 1, 2, Split::Train).unwrap();
    (data, means, covs)
}

#[test]
fn clone_fit_recovers_known_gaussian() {
    let n = 20_000;
    let (data, means, covs) = gaussian_source(n, 11);
    let model = fit_gaussian_clone(&data).unwrap();
    for c in 0..2u32 {
        let cell = model.cell(c, 0);
        let cov = &covs[c as usize];
        for i in 0..4 {
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((cell.mean[i] - means[c as usize][i]).abs() < 5.0 * se);
            for j in 0..4 {
                let se = ((cov[(i, j)].powi(2) + cov[(i, i)] * cov[(j, j)]) / n as f64).sqrt();
                assert!((cell.covariance[i * 4 + j] - cov[(i, j)]).abs() < 5.0 * se);
            }
        }
        // factor · factorᵀ reproduces the regularized covariance
        let l = DMatrix::from_row_slice(4, 4, &cell.factor);
        let llt = &l * l.transpose();
        for i in 0..4 {
            for j in 0..4 {
                let target = cell.covariance[i * 4 + j] + if i == j { cell.epsilon } else { 0.0 };
                assert!((llt[(i, j)] - target).abs() < 1e-8);
            }
        }
        let trace: f64 = (0..4).map(|i| cell.covariance[i * 5]).sum();
        assert!((cell.epsilon - clone::RIDGE * trace / 4.0).abs() < 1e-15);
    }
}

#[test]
fn clone_fit_is_order_invariant() {
    let (data, _, _) = gaussian_source(50, 12);
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.reverse();
    let a = fit_gaussian_clone(&data).unwrap();
    let b = fit_gaussian_clone(&data.subset(&idx)).unwrap();
    for (x, y) in a.cells.iter().zip(&b.cells) {
        for (u, v) in x.mean.iter().zip(&y.mean) {
            assert!((u - v).abs() < 1e-12);
        }
        for (u, v) in x.covariance.iter().zip(&y.covariance) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_class_has_zero_covariance() {
    let x = Matrix::from_rows(&[vec![1.0; 4], vec![1.0; 4], vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 2.0, 0.0, 5.0]]).unwrap();
    let data = Dataset::new(x, vec![0, 0, 1, 1], 2, 1, 2, Split::Train).unwrap();
    let model = fit_gaussian_clone(&data).unwrap();
    let cell = model.cell(0, 0);
    assert!(cell.covariance.iter().all(|&v| v == 0.0));
    assert!(cell.factor.iter().all(|&v| v == 0.0));
    assert_eq!(cell.epsilon, 0.0);
    let sampled = sample_clone(&model, &[3, 0], 1, Split::Train).unwrap();
    assert!(sampled.images().as_slice().iter().all(|&v| v == 1.0));
}

#[test]
fn clone_needs_two_samples_per_class() {
    let x = Matrix::from_rows(&[vec![1.0; 4], vec![2.0; 4], vec![0.0; 4]]).unwrap();
    let data = Dataset::new(x, vec![0, 0, 1], 2, 1, 2, Split::Train).unwrap();
    assert!(matches!(
        fit_gaussian_clone(&data),
        Err(Error::InsufficientSamples { class: 1, count: 1 })
    ));
}

#[test]
fn clone_samples_match_model_and_are_gaussian() {
    let (data, _, _) = gaussian_source(200, 13);
    let model = fit_gaussian_clone(&data).unwrap();
    let n = 100_000;
    let clone = sample_clone(&model, &[n, 0], 14, Split::Train).unwrap();
    assert_eq!(clone, sample_clone(&model, &[n, 0], 14, Split::Train).unwrap());
    let cell = model.cell(0, 0);
    let (m, cov) = clone::mean_and_covariance(clone.images());
    for i in 0..4 {
        let var_i = cell.covariance[i * 5] + cell.epsilon;
        assert!((m[i] - cell.mean[i]).abs() < 5.0 * (var_i / n as f64).sqrt());
        for j in 0..4 {
            let var_j = cell.covariance[j * 5] + cell.epsilon;
            let cij = cell.covariance[i * 4 + j] + if i == j { cell.epsilon } else { 0.0 };
            let se = ((cij * cij + var_i * var_j) / n as f64).sqrt();
            assert!((cov[(i, j)] - cij).abs() < 5.0 * se);
        }
    }
    for k in pixel_kurtoses(&clone) {
        assert!((k - 3.0).abs() < 0.1);
    }
}

#[test]
fn clone_sampling_needs_matching_counts() {
    let (data, _, _) = gaussian_source(10, 1);
    let model = fit_gaussian_clone(&data).unwrap();
    assert!(sample_clone(&model, &[1, 2, 3], 1, Split::Train).is_err());
}
