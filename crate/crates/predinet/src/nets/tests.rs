use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::fdcheck;

fn random_image(rng: &mut ChaCha8Rng) -> Tensor {
    let data: Vec<f32> = (0..36 * 36 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::new(vec![36, 36, 3], data)
}

fn small_config(arch: ArchKind) -> ModelConfig {
    ModelConfig {
        arch,
        heads: 3,
        relations: 4,
        key_size: 4,
        task_count: 0,
        label_arity: 2,
    }
}

#[test]
fn default_predinet_central_width_is_640() {
    let config = ModelConfig::new(ArchKind::Predinet);
    assert_eq!(config.central_width(), 640);
    let model = Model::new(config, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = random_image(&mut rng);
    let mut g = Graph::new();
    let pass = model
        .forward(&mut g, &[img], None, Frozen::none(), None)
        .unwrap();
    assert_eq!(g.value(pass.per_image[0].central).shape(), [1, 640]);
    assert_eq!(g.value(pass.per_image[0].feature_map).shape(), [25, 34]);
    assert_eq!(pass.per_image[0].attention.len(), 64);
}

#[test]
fn logits_have_batch_by_arity_shape_for_every_architecture() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let images: Vec<Tensor> = (0..3).map(|_| random_image(&mut rng)).collect();
    for arch in ArchKind::ALL {
        let model = Model::new(small_config(arch), 11);
        let mut g = Graph::new();
        let pass = model
            .forward(&mut g, &images, None, Frozen::none(), None)
            .unwrap();
        assert_eq!(g.value(pass.logits).shape(), [3, 2], "{}", arch.name());
        assert!(g.value(pass.logits).is_finite(), "{}", arch.name());
        assert_eq!(
            g.value(pass.per_image[0].central).shape(),
            [1, model.config.central_width()],
            "{}",
            arch.name()
        );
    }
}

#[test]
fn task_identifier_widens_output_mlp_input() {
    let mut config = small_config(ArchKind::Mlp1);
    config.task_count = 5;
    config.label_arity = 4;
    let model = Model::new(config, 3);
    assert_eq!(
        model.mlp.w1.value.shape(),
        [config.central_width() + 5, OUTPUT_HIDDEN]
    );
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = random_image(&mut rng);
    let mut g = Graph::new();
    let pass = model
        .forward(&mut g, &[img.clone()], Some(2), Frozen::none(), None)
        .unwrap();
    assert_eq!(g.value(pass.logits).shape(), [1, 4]);
    // Single-task call against a multi-task model is a usage error.
    let mut g2 = Graph::new();
    assert!(model.forward(&mut g2, &[img], None, Frozen::none(), None).is_err());
}

#[test]
fn attention_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = random_image(&mut rng);
    for arch in [ArchKind::Predinet, ArchKind::Mha] {
        let model = Model::new(small_config(arch), 13);
        let mut g = Graph::new();
        let pass = model
            .forward(&mut g, &[img.clone()], None, Frozen::none(), None)
            .unwrap();
        let expected = if arch == ArchKind::Predinet { 6 } else { 3 };
        assert_eq!(pass.per_image[0].attention.len(), expected);
        for &a in &pass.per_image[0].attention {
            let t = g.value(a);
            assert_eq!(t.cols(), FEATURE_ROWS);
            for row in 0..t.rows() {
                let sum: f32 = t.data()[row * t.cols()..(row + 1) * t.cols()].iter().sum();
                assert!((sum - 1.0).abs() < 1e-5);
            }
        }
    }
}

/// Swapping a head's two query projections must negate its relation vector
/// and exchange its position outputs, bit for bit, leaving other heads alone.
#[test]
fn query_swap_negates_relations_and_exchanges_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = random_image(&mut rng);
    let model = Model::new(small_config(ArchKind::Predinet), 17);
    let mut swapped = model.clone();
    if let CentralParams::Predinet { w_q1, w_q2, .. } = &mut swapped.central {
        std::mem::swap(&mut w_q1[1].value, &mut w_q2[1].value);
    }
    let central_of = |m: &Model| {
        let mut g = Graph::new();
        let pass = m
            .forward(&mut g, &[img.clone()], None, Frozen::none(), None)
            .unwrap();
        g.value(pass.per_image[0].central).clone()
    };
    let base = central_of(&model);
    let alt = central_of(&swapped);
    let j = model.config.relations;
    let slot = j + 4;
    for h in 0..model.config.heads {
        let b = &base.data()[h * slot..(h + 1) * slot];
        let a = &alt.data()[h * slot..(h + 1) * slot];
        if h == 1 {
            for i in 0..j {
                assert_eq!(a[i], -b[i]);
            }
            assert_eq!(&a[j..j + 2], &b[j + 2..j + 4]);
            assert_eq!(&a[j + 2..j + 4], &b[j..j + 2]);
        } else {
            assert_eq!(a, b);
        }
    }
}

/// Recomputes each head's output from the feature map and raw weights in
/// f64 — softmax attention, attended summaries, relation differences,
/// position extraction — and checks the graph's value against it.
#[test]
fn relation_vector_matches_independent_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = random_image(&mut rng);
    let model = Model::new(small_config(ArchKind::Predinet), 19);
    let mut g = Graph::new();
    let pass = model
        .forward(&mut g, &[img], None, Frozen::none(), None)
        .unwrap();
    let fmap = g.value(pass.per_image[0].feature_map).clone();
    let central = g.value(pass.per_image[0].central).clone();

    let (w_k, w_s, w_q1, w_q2) = match &model.central {
        CentralParams::Predinet {
            w_k,
            w_s,
            w_q1,
            w_q2,
        } => (w_k, w_s, w_q1, w_q2),
        _ => unreachable!(),
    };
    let m = FEATURE_COLS;
    let gsz = model.config.key_size;
    let j = model.config.relations;
    let l: Vec<f64> = fmap.data().iter().map(|&v| v as f64).collect();
    let flat = &l;

    let attend = |w_q: &Tensor| -> Vec<f64> {
        let q: Vec<f64> = (0..gsz)
            .map(|c| {
                (0..FEATURE_ROWS * m)
                    .map(|i| flat[i] * w_q.data()[i * gsz + c] as f64)
                    .sum()
            })
            .collect();
        let scores: Vec<f64> = (0..FEATURE_ROWS)
            .map(|r| {
                (0..gsz)
                    .map(|c| {
                        let key: f64 = (0..m)
                            .map(|i| l[r * m + i] * w_k.value.data()[i * gsz + c] as f64)
                            .sum();
                        q[c] * key
                    })
                    .sum()
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        (0..m)
            .map(|c| {
                (0..FEATURE_ROWS)
                    .map(|r| exps[r] / z * l[r * m + c])
                    .sum()
            })
            .collect()
    };

    let slot = j + 4;
    for h in 0..model.config.heads {
        let e1 = attend(&w_q1[h].value);
        let e2 = attend(&w_q2[h].value);
        let mut expected = vec![0.0f64; slot];
        for r in 0..j {
            expected[r] = (0..m)
                .map(|i| (e1[i] - e2[i]) * w_s.value.data()[i * j + r] as f64)
                .sum();
        }
        expected[j] = e1[m - 2];
        expected[j + 1] = e1[m - 1];
        expected[j + 2] = e2[m - 2];
        expected[j + 3] = e2[m - 1];
        for (i, &want) in expected.iter().enumerate() {
            let got = central.data()[h * slot + i] as f64;
            assert!(
                (got - want).abs() < 1e-4,
                "head {h} slot {i}: got {got}, oracle {want}"
            );
        }
    }
}

#[test]
fn rn_output_invariant_to_feature_row_permutation() {
    let model = Model::new(small_config(ArchKind::Rn), 23);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<Vec<f32>> = (0..FEATURE_ROWS)
        .map(|_| (0..FEATURE_COLS).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let output_for = |order: &[usize]| {
        let mut data = Vec::new();
        for &r in order {
            data.extend(&rows[r]);
        }
        let fmap_t = Tensor::new(vec![FEATURE_ROWS, FEATURE_COLS], data);
        let mut g = Graph::new();
        let bound = BoundModel::bind(&model, &mut g, Frozen::none());
        let fmap = g.leaf(fmap_t);
        let (out, _) = central_forward(&mut g, &model.config, &bound, fmap).unwrap();
        g.value(out).clone()
    };
    let identity: Vec<usize> = (0..FEATURE_ROWS).collect();
    let mut shuffled = identity.clone();
    for i in (1..shuffled.len()).rev() {
        shuffled.swap(i, rng.gen_range(0..=i));
    }
    let a = output_for(&identity);
    let b = output_for(&shuffled);
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn all_true_head_mask_is_bit_identical_noop() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let img = random_image(&mut rng);
    for arch in [ArchKind::Predinet, ArchKind::Mha] {
        let model = Model::new(small_config(arch), 29);
        let run = |mask: Option<&[bool]>| {
            let mut g = Graph::new();
            let pass = model
                .forward(&mut g, &[img.clone()], None, Frozen::none(), mask)
                .unwrap();
            (
                g.value(pass.per_image[0].central).clone(),
                g.value(pass.logits).clone(),
            )
        };
        let (c0, l0) = run(None);
        let (c1, l1) = run(Some(&[true, true, true]));
        assert_eq!(c0.data(), c1.data(), "{}", arch.name());
        assert_eq!(l0.data(), l1.data(), "{}", arch.name());
    }
}

#[test]
fn head_mask_zeroes_exactly_the_masked_slots() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let img = random_image(&mut rng);
    let model = Model::new(small_config(ArchKind::Predinet), 31);
    let run = |mask: Option<&[bool]>| {
        let mut g = Graph::new();
        let pass = model
            .forward(&mut g, &[img.clone()], None, Frozen::none(), mask)
            .unwrap();
        g.value(pass.per_image[0].central).clone()
    };
    let full = run(None);
    let masked = run(Some(&[true, false, true]));
    let slot = model.config.relations + 4;
    assert_eq!(&masked.data()[..slot], &full.data()[..slot]);
    assert!(masked.data()[slot..2 * slot].iter().all(|&v| v == 0.0));
    assert_eq!(&masked.data()[2 * slot..], &full.data()[2 * slot..]);
}

#[test]
fn frozen_groups_get_no_gradients_and_trainable_ones_do() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let img = random_image(&mut rng);
    let mut model = Model::new(small_config(ArchKind::Predinet), 37);
    let frozen = Frozen {
        cnn: true,
        central: true,
        mlp: false,
    };
    let mut g = Graph::new();
    let pass = model
        .forward(&mut g, &[img], None, frozen, None)
        .unwrap();
    let loss = g
        .softmax_cross_entropy(pass.logits, Tensor::one_hot(&[1], 2))
        .unwrap();
    g.backward(loss).unwrap();
    model.accumulate_grads(&g, &pass).unwrap();
    assert!(model.cnn.filters.grad.is_none());
    for p in model.central_params() {
        assert!(p.grad.is_none(), "{}", p.name);
    }
    assert!(model.mlp.w1.grad.is_some());
    assert!(model.mlp.b2.grad.is_some());
    assert_eq!(model.trainable_params_mut(frozen).len(), 4);
}

/// Finite-difference check through the whole composed model (CNN, PrediNet
/// central, output MLP, cross-entropy) with respect to the shared relation
/// weights.
#[test]
fn composed_model_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let img = random_image(&mut rng);
    let labels = Tensor::one_hot(&[0], 2);
    let mut model = Model::new(small_config(ArchKind::Predinet), 41);

    let loss_at = |w: &Tensor| -> f32 {
        let mut probe = model.clone();
        if let CentralParams::Predinet { w_s, .. } = &mut probe.central {
            w_s.value = w.clone();
        }
        let mut g = Graph::new();
        let pass = probe
            .forward(&mut g, &[img.clone()], None, Frozen::none(), None)
            .unwrap();
        let loss = g.softmax_cross_entropy(pass.logits, labels.clone()).unwrap();
        g.value(loss).item()
    };
    let w0 = match &model.central {
        CentralParams::Predinet { w_s, .. } => w_s.value.clone(),
        _ => unreachable!(),
    };
    let numeric = fdcheck::fd_grad(loss_at, &w0, 1e-2);

    let mut g = Graph::new();
    let pass = model
        .forward(&mut g, &[img], None, Frozen::none(), None)
        .unwrap();
    let loss = g.softmax_cross_entropy(pass.logits, labels).unwrap();
    g.backward(loss).unwrap();
    model.accumulate_grads(&g, &pass).unwrap();
    let analytic = match &model.central {
        CentralParams::Predinet { w_s, .. } => w_s.grad.clone().unwrap(),
        _ => unreachable!(),
    };
    let err = fdcheck::norm_rel_err(&analytic, &numeric);
    assert!(err < 5e-3, "norm relative error {err}");
}

#[test]
fn forward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let images: Vec<Tensor> = (0..2).map(|_| random_image(&mut rng)).collect();
    let model = Model::new(small_config(ArchKind::Mha), 43);
    let run = || {
        let mut g = Graph::new();
        let pass = model
            .forward(&mut g, &images, None, Frozen::none(), None)
            .unwrap();
        g.value(pass.logits).clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn coordinate_columns_span_unit_square_in_row_major_order() {
    let c = coordinate_columns();
    assert_eq!(c.shape(), [25, 2]);
    assert_eq!(&c.data()[0..2], &[0.0, 0.0]);
    // Row 7 is grid position (row 1, col 2): x = 2/4, y = 1/4.
    assert_eq!(&c.data()[14..16], &[0.5, 0.25]);
    assert_eq!(&c.data()[48..50], &[1.0, 1.0]);
}

#[test]
fn reinit_output_mlp_resizes_for_new_task_head() {
    let mut model = Model::new(small_config(ArchKind::Mlp2), 47);
    model.reinit_output_mlp(99, 8, 4);
    assert_eq!(
        model.mlp.w1.value.shape(),
        [model.config.central_width() + 8, OUTPUT_HIDDEN]
    );
    assert_eq!(model.mlp.w2.value.shape(), [OUTPUT_HIDDEN, 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let img = random_image(&mut rng);
    let mut g = Graph::new();
    let pass = model
        .forward(&mut g, &[img], Some(7), Frozen::none(), None)
        .unwrap();
    assert_eq!(g.value(pass.logits).shape(), [1, 4]);
}
