use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

use super::*;
use crate::nets::ModelConfig;
use crate::protocol::evaluate;

/// Brute-force symmetric eigendecomposition by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) with their eigenvectors.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> Vec<(f64, Vec<f64>)> {
    let d = a.len();
    let mut v = vec![vec![0.0f64; d]; d];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..200 {
        let mut off = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                if a[p][q].abs() < 1e-18 {
                    continue;
                }
                let theta = 0.5 * (2.0 * a[p][q]).atan2(a[q][q] - a[p][p]);
                let (s, c) = theta.sin_cos();
                for k in 0..d {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..d)
        .map(|i| (a[i][i], (0..d).map(|k| v[k][i]).collect()))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    pairs
}

fn tiny_predinet() -> Model {
    let mut c = ModelConfig::new(ArchKind::Predinet);
    c.heads = 3;
    c.relations = 2;
    c.key_size = 4;
    Model::new(c, 5)
}

#[test]
fn heat_grids_are_distributions_and_round_trip_csv() {
    let model = tiny_predinet();
    let set = enumerate_object_set(ObjectSetId::TrainPentominoes);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ex = sample_example(Task::Same, &set, &mut rng);
    let records = attention_records(&model, &[(ex.image, ex.label)]).unwrap();
    assert_eq!(records[0].masks.len(), 6);

    let dir = tempdir().unwrap();
    for mask in &records[0].masks {
        let grid = heat_grid(mask);
        let sum: f32 = grid.iter().flatten().sum();
        assert!((sum - 1.0).abs() < 1e-5);
        let path = dir.path().join("grid.csv");
        write_heat_csv(&path, &grid).unwrap();
        let back = read_heat_csv(&path).unwrap();
        for (a, b) in grid.iter().flatten().zip(back.iter().flatten()) {
            let rounded: f32 = format!("{a:.6}").parse().unwrap();
            assert_eq!(*b, rounded);
        }
    }
}

#[test]
fn one_hot_mask_lights_a_single_cell() {
    let mut mask = vec![0.0f32; 25];
    mask[13] = 1.0;
    let grid = heat_grid(&mask);
    assert_eq!(grid[2][3], 1.0);
    assert_eq!(grid.iter().flatten().filter(|&&v| v > 0.0).count(), 1);
}

#[test]
fn heat_overlay_writes_a_png() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("overlay.png");
    let image = Tensor::zeros(&[36, 36, 3]);
    let mut mask = vec![0.0f32; 25];
    mask[0] = 1.0;
    write_heat_overlay(&path, &image, &heat_grid(&mask)).unwrap();
    let img = image::open(&path).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (36, 36));
    // The attended corner glows red; the far corner stays black.
    assert!(img.get_pixel(0, 0)[0] > 100);
    assert_eq!(img.get_pixel(35, 35)[0], 0);
}

#[test]
fn pca_on_a_line_explains_everything_with_one_component() {
    let dir_vec = [3.0f32, -1.0, 2.0];
    let samples: Vec<Vec<f32>> = (0..20)
        .map(|i| dir_vec.iter().map(|d| d * i as f32 * 0.1).collect())
        .collect();
    let labels = vec![0; 20];
    let r = pca(&samples, &labels).unwrap();
    assert_eq!(r.components.len(), 1);
    assert!(r.rank_deficient);
    assert!(r.explained[0] > 0.999);
    // Component is parallel to the generating direction.
    let norm: f32 = dir_vec.iter().map(|v| v * v).sum::<f32>().sqrt();
    let dot: f32 = r.components[0]
        .iter()
        .zip(&dir_vec)
        .map(|(c, d)| c * d / norm)
        .sum();
    assert!((dot.abs() - 1.0).abs() < 1e-4);
}

#[test]
fn pca_matches_dense_jacobi_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..5 {
        let d = 6;
        let n = 40;
        let samples: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let labels = vec![0; n];
        let r = pca(&samples, &labels).unwrap();
        assert_eq!(r.components.len(), 2, "trial {trial}");

        // Oracle covariance in f64.
        let mut mean = vec![0.0f64; d];
        for s in &samples {
            for (m, &v) in mean.iter_mut().zip(s) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![vec![0.0f64; d]; d];
        for s in &samples {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] +=
                        (s[i] as f64 - mean[i]) * (s[j] as f64 - mean[j]) / (n - 1) as f64;
                }
            }
        }
        let oracle = jacobi_eigen(cov);
        for c in 0..2 {
            let rel = (r.variances[c] as f64 - oracle[c].0).abs() / oracle[c].0;
            assert!(rel < 1e-4, "trial {trial} eigenvalue {c}: {rel}");
            let dot: f64 = r.components[c]
                .iter()
                .zip(&oracle[c].1)
                .map(|(&a, &b)| a as f64 * b)
                .sum();
            assert!((dot.abs() - 1.0).abs() < 1e-4, "trial {trial} vector {c}");
        }
        let cross: f32 = r.components[0]
            .iter()
            .zip(&r.components[1])
            .map(|(a, b)| a * b)
            .sum();
        assert!(cross.abs() < 1e-5);
        assert!(r.variances[0] >= r.variances[1]);
    }
}

#[test]
fn content_scores_hit_closed_form_cases() {
    // Content mask: patch 4 fully covered, patch 9 partial, rest empty.
    let mut content = vec![0.0f32; 25];
    content[4] = 1.0;
    content[9] = 0.5;

    let one_hot = |i: usize| {
        let mut m = vec![0.0f32; 25];
        m[i] = 1.0;
        m
    };
    let records = vec![AttentionRecord {
        masks: vec![
            one_hot(4),            // fully on an object patch
            one_hot(0),            // fully on background
            vec![1.0 / 25.0; 25],  // uniform
            one_hot(9),
        ],
        label: 0,
    }];
    let scores = attention_content_scores(&records, &[content.clone()]).unwrap();
    assert_eq!(scores[0][0], 1.0);
    assert_eq!(scores[0][1], 0.0);
    let uniform_expected: f32 = content.iter().sum::<f32>() / 25.0;
    assert!((scores[1][0] - uniform_expected).abs() < 1e-6);
    assert_eq!(scores[1][1], 0.5);

    // Convex-combination bound for arbitrary masks.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mask: Vec<f32> = (0..25).map(|_| rng.gen_range(0.0..1.0)).collect();
    let z: f32 = mask.iter().sum();
    mask.iter_mut().for_each(|v| *v /= z);
    let records = vec![AttentionRecord {
        masks: vec![mask.clone(), mask],
        label: 0,
    }];
    let scores = attention_content_scores(&records, &[content]).unwrap();
    assert!(scores[0][0] >= 0.0 && scores[0][0] <= 1.0);
}

#[test]
fn position_stats_are_exact_for_fixed_one_hot_masks() {
    let mut m = vec![0.0f32; 25];
    m[7] = 1.0;
    let records: Vec<AttentionRecord> = (0..10)
        .map(|_| AttentionRecord {
            masks: vec![m.clone(), m.clone()],
            label: 0,
        })
        .collect();
    let stats = attention_position_stats(&records).unwrap();
    assert_eq!(stats[0][0], (7.0, 0.0));
    assert_eq!(stats[0][1], (7.0, 0.0));
}

#[test]
fn weight_magnitudes_group_by_head() {
    let mut model = tiny_predinet();
    let k = model.config.heads;
    let slot = model.config.relations + 4;
    // Zero everything, then set head 1's rows to a constant.
    let cols = model.mlp.w1.value.cols();
    let data = model.mlp.w1.value.data_mut();
    data.iter_mut().for_each(|v| *v = 0.0);
    for row in slot..2 * slot {
        for c in 0..cols {
            data[row * cols + c] = -0.25;
        }
    }
    let mags = mlp_weight_magnitudes(&model);
    assert_eq!(mags.len(), k);
    assert_eq!(mags[0], 0.0);
    assert!((mags[1] - 0.25).abs() < 1e-7);
    assert_eq!(mags[2], 0.0);
}

#[test]
fn ablation_full_set_matches_unablated_and_empty_set_is_chance() {
    let model = tiny_predinet();
    let k = model.config.heads;
    let result = head_ablation(
        &model,
        Task::Same,
        ObjectSetId::TrainPentominoes,
        AblationPolicy::Random,
        &[0, 1, k],
        2,
        600,
        15,
    )
    .unwrap();
    assert_eq!(result.eligible, vec![0, 1, 2]);
    let full = result.points.iter().find(|p| p.retained == k).unwrap();
    let (unablated, _) = evaluate(
        &model,
        Task::Same,
        ObjectSetId::TrainPentominoes,
        None,
        600,
        15 ^ ((k as u64) << 32),
    )
    .unwrap();
    assert_eq!(full.mean_accuracy, unablated);
    let none = result.points.iter().find(|p| p.retained == 0).unwrap();
    assert!((none.mean_accuracy - 0.5).abs() < 0.05);
}

#[test]
fn attention_records_reject_non_predinet_models() {
    let model = Model::new(ModelConfig::new(ArchKind::Mlp2), 1);
    let err = attention_records(&model, &[(Tensor::zeros(&[36, 36, 3]), 0)]);
    assert!(err.is_err());
}
