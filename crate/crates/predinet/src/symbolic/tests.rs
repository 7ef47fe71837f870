use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::game::{enumerate_object_set, sample_example, ObjectSetId, Task};
use crate::nets::{CentralParams, ModelConfig};

fn one_hot25(i: usize) -> Vec<f32> {
    let mut m = vec![0.0f32; 25];
    m[i] = 1.0;
    m
}

#[test]
fn identical_masks_collapse_to_one_cluster() {
    let samples: Vec<Vec<f32>> = (0..16).map(|_| one_hot25(3)).collect();
    let clusters = mean_shift(&samples, 0.25).unwrap();
    assert_eq!(clusters.len(), 1);
    assert_eq!(clusters[0].members.len(), 16);
    assert_eq!(clusters[0].id, "ob_1");
}

#[test]
fn well_separated_masks_form_two_clusters() {
    let mut samples = vec![one_hot25(0); 4];
    samples.extend(vec![one_hot25(24); 4]);
    let clusters = mean_shift(&samples, 0.25).unwrap();
    assert_eq!(clusters.len(), 2);
    let sizes: Vec<usize> = clusters.iter().map(|c| c.members.len()).collect();
    assert_eq!(sizes, vec![4, 4]);
}

/// Brute-force oracle: find modes by grid search over the 2-D unit square —
/// points whose flat-kernel window mean maps (approximately) onto
/// themselves — then partition samples by nearest mode.
fn grid_search_partition(samples: &[Vec<f32>], bandwidth: f32) -> Vec<Vec<usize>> {
    let bw = bandwidth as f64;
    let pts: Vec<(f64, f64)> = samples.iter().map(|s| (s[0] as f64, s[1] as f64)).collect();
    let window_mean = |x: f64, y: f64| -> Option<(f64, f64)> {
        let near: Vec<&(f64, f64)> = pts
            .iter()
            .filter(|(px, py)| ((px - x).powi(2) + (py - y).powi(2)).sqrt() <= bw)
            .collect();
        if near.is_empty() {
            return None;
        }
        let n = near.len() as f64;
        Some((
            near.iter().map(|(px, _)| px).sum::<f64>() / n,
            near.iter().map(|(_, py)| py).sum::<f64>() / n,
        ))
    };
    let step = 0.005;
    let mut modes: Vec<(f64, f64)> = Vec::new();
    let cells = (1.0 / step) as usize + 1;
    for gi in 0..cells {
        for gj in 0..cells {
            let (x, y) = (gi as f64 * step, gj as f64 * step);
            if let Some((mx, my)) = window_mean(x, y) {
                // Stable grid point: the window mean stays within one cell.
                if (mx - x).abs() < step && (my - y).abs() < step {
                    let dup = modes
                        .iter()
                        .any(|(ax, ay)| ((ax - mx).powi(2) + (ay - my).powi(2)).sqrt() < bw / 2.0);
                    if !dup {
                        modes.push((mx, my));
                    }
                }
            }
        }
    }
    let mut partition = vec![Vec::new(); modes.len()];
    for (i, (px, py)) in pts.iter().enumerate() {
        let nearest = (0..modes.len())
            .min_by(|&a, &b| {
                let da = (modes[a].0 - px).powi(2) + (modes[a].1 - py).powi(2);
                let db = (modes[b].0 - px).powi(2) + (modes[b].1 - py).powi(2);
                da.total_cmp(&db)
            })
            .unwrap();
        partition[nearest].push(i);
    }
    partition.retain(|p| !p.is_empty());
    partition.iter_mut().for_each(|p| p.sort());
    partition.sort();
    partition
}

#[test]
fn mean_shift_agrees_with_grid_search_oracle_in_2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    // Ten samples: two blobs and a lone point.
    let mut samples: Vec<Vec<f32>> = Vec::new();
    for _ in 0..4 {
        samples.push(vec![0.2 + rng.gen_range(-0.02..0.02), 0.2 + rng.gen_range(-0.02..0.02)]);
    }
    for _ in 0..5 {
        samples.push(vec![0.8 + rng.gen_range(-0.02..0.02), 0.7 + rng.gen_range(-0.02..0.02)]);
    }
    samples.push(vec![0.1, 0.9]);

    let bandwidth = 0.15;
    let clusters = mean_shift(&samples, bandwidth).unwrap();
    let mut ours: Vec<Vec<usize>> = clusters
        .iter()
        .map(|c| {
            let mut m = c.members.clone();
            m.sort();
            m
        })
        .collect();
    ours.sort();
    let oracle = grid_search_partition(&samples, bandwidth);
    assert_eq!(ours, oracle);
}

#[test]
fn cluster_ids_are_stable_under_sample_reordering() {
    let mut samples = vec![one_hot25(24); 3];
    samples.extend(vec![one_hot25(0); 5]);
    let a = mean_shift(&samples, 0.25).unwrap();
    samples.reverse();
    let b = mean_shift(&samples, 0.25).unwrap();
    // Same modes get the same names regardless of input order.
    for (ca, cb) in a.iter().zip(&b) {
        assert_eq!(ca.id, cb.id);
        assert_eq!(ca.mode, cb.mode);
        assert_eq!(ca.members.len(), cb.members.len());
    }
}

fn tiny_predinet(seed: u64) -> crate::nets::Model {
    let mut c = ModelConfig::new(crate::nets::ArchKind::Predinet);
    c.heads = 8;
    c.relations = 8;
    c.key_size = 4;
    crate::nets::Model::new(c, seed)
}

fn probe_image() -> Tensor {
    let set = enumerate_object_set(ObjectSetId::TrainPentominoes);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    sample_example(Task::Between, &set, &mut rng).image
}

#[test]
fn export_emits_j_times_k_parseable_facts_with_matching_values() {
    let model = tiny_predinet(51);
    let image = probe_image();
    let text = emit_prolog(&model, &image, DEFAULT_BANDWIDTH).unwrap();
    let facts = parse_program(&text).unwrap();
    let props: Vec<&Fact> = facts.iter().filter(|f| f.functor == "prop").collect();
    assert_eq!(props.len(), 64);

    // Values must match the central output at print precision, in
    // (head, relation) order.
    let frozen = crate::nets::Frozen {
        cnn: true,
        central: true,
        mlp: true,
    };
    let mut g = crate::tensor::Graph::new();
    let pass = model
        .forward(&mut g, &[image], None, frozen, None)
        .unwrap();
    let central = g.value(pass.per_image[0].central);
    let slot = model.config.relations + 4;
    for (idx, fact) in props.iter().enumerate() {
        let (h, rel) = (idx / 8, idx % 8);
        match &fact.args[0] {
            Term::Atom(a) => assert_eq!(a, &format!("rel_{}", rel + 1)),
            t => panic!("bad relation term {t:?}"),
        }
        let want = central.data()[h * slot + rel] as f64;
        match fact.args[1] {
            Term::Number(v) => assert!((v - want).abs() <= 5e-5 + 1e-9, "{v} vs {want}"),
            ref t => panic!("bad value term {t:?}"),
        }
        assert!(matches!(&fact.args[2], Term::Atom(a) if a.starts_with("ob_")));
        assert!(matches!(&fact.args[3], Term::Atom(a) if a.starts_with("ob_")));
    }

    // Position facts cover every cluster id referenced by the propositions.
    let pos_ids: Vec<&String> = facts
        .iter()
        .filter(|f| f.functor == "pos")
        .filter_map(|f| match &f.args[0] {
            Term::Atom(a) => Some(a),
            _ => None,
        })
        .collect();
    for fact in &props {
        for arg in &fact.args[2..] {
            if let Term::Atom(a) = arg {
                assert!(pos_ids.contains(&a), "no pos fact for {a}");
            }
        }
    }
}

#[test]
fn equal_query_weights_give_reflexive_zero_valued_facts() {
    let mut model = tiny_predinet(52);
    if let CentralParams::Predinet { w_q1, w_q2, .. } = &mut model.central {
        let clone = w_q1[2].value.clone();
        w_q2[2].value = clone;
    }
    let text = emit_prolog(&model, &probe_image(), DEFAULT_BANDWIDTH).unwrap();
    let facts = parse_program(&text).unwrap();
    let props: Vec<&Fact> = facts.iter().filter(|f| f.functor == "prop").collect();
    for fact in &props[2 * 8..3 * 8] {
        assert_eq!(fact.args[2], fact.args[3], "head 2 should be reflexive");
        match fact.args[1] {
            Term::Number(v) => assert!(v.abs() <= 1e-6),
            ref t => panic!("bad value term {t:?}"),
        }
    }
}

#[test]
fn degenerate_clustering_is_emitted_with_a_warning() {
    // A huge bandwidth collapses every mask into one cluster.
    let model = tiny_predinet(53);
    let text = emit_prolog(&model, &probe_image(), 50.0).unwrap();
    assert!(text.contains("% warning"));
    assert_eq!(
        parse_program(&text)
            .unwrap()
            .iter()
            .filter(|f| f.functor == "prop")
            .count(),
        64
    );
}

#[test]
fn parser_rejects_malformed_programs() {
    assert!(parse_program("prop(rel_1, 0.5, ob_1, ob_2)").is_err()); // no dot
    assert!(parse_program("Prop(rel_1, 0.5, ob_1, ob_2).").is_err()); // upper-case functor
    assert!(parse_program("prop(rel_1, 0.5, Ob_1).").is_err()); // upper-case constant
    assert!(parse_program("prop().").is_err()); // no args
    assert!(parse_program("% just a comment\n").unwrap().is_empty());
}
