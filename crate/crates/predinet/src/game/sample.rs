//! Online example sampling with 50/50 label balance and "tricky" negative
//! stratification: negatives that share colour or shape with their partner
//! appear as often as ones that differ in both.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tasks::{evaluate_label, lines, Pattern, Task};
use super::{render_scene, LabeledExample, ObjectSet, ObjectSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stratum {
    SameColourDiffShape,
    SameShapeDiffColour,
    BothDiffer,
}

fn applicable_strata(set: &ObjectSet) -> Vec<Stratum> {
    let mut v = Vec::new();
    if set.shapes.len() > 1 {
        v.push(Stratum::SameColourDiffShape);
    }
    if set.colours.len() > 1 {
        v.push(Stratum::SameShapeDiffColour);
    }
    if set.shapes.len() > 1 && set.colours.len() > 1 {
        v.push(Stratum::BothDiffer);
    }
    assert!(!v.is_empty(), "object set too small to build negatives");
    v
}

fn random_object(set: &ObjectSet, rng: &mut ChaCha8Rng, cell: (usize, usize)) -> ObjectSpec {
    ObjectSpec {
        shape: rng.gen_range(0..set.shapes.len()),
        colour: rng.gen_range(0..set.colours.len()),
        cell,
    }
}

fn other_index(rng: &mut ChaCha8Rng, n: usize, avoid: usize) -> usize {
    loop {
        let i = rng.gen_range(0..n);
        if i != avoid {
            return i;
        }
    }
}

/// An object differing from `from` according to the given confounder
/// stratum.
fn differing(
    set: &ObjectSet,
    rng: &mut ChaCha8Rng,
    from: &ObjectSpec,
    stratum: Stratum,
    cell: (usize, usize),
) -> ObjectSpec {
    let (shape, colour) = match stratum {
        Stratum::SameColourDiffShape => (
            other_index(rng, set.shapes.len(), from.shape),
            from.colour,
        ),
        Stratum::SameShapeDiffColour => (
            from.shape,
            other_index(rng, set.colours.len(), from.colour),
        ),
        Stratum::BothDiffer => (
            other_index(rng, set.shapes.len(), from.shape),
            other_index(rng, set.colours.len(), from.colour),
        ),
    };
    ObjectSpec { shape, colour, cell }
}

fn differing_any(
    set: &ObjectSet,
    rng: &mut ChaCha8Rng,
    from: &ObjectSpec,
    cell: (usize, usize),
) -> ObjectSpec {
    let strata = applicable_strata(set);
    let s = *strata.choose(rng).unwrap();
    differing(set, rng, from, s, cell)
}

fn distinct_cells(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    let mut cells: Vec<(usize, usize)> =
        (0..3).flat_map(|r| (0..3).map(move |c| (r, c))).collect();
    cells.shuffle(rng);
    cells.truncate(n);
    cells
}

/// Builds a row of three objects realizing a pattern, against arbitrary
/// anchor objects. `cells` gives the three placements in order.
fn build_pattern(
    set: &ObjectSet,
    rng: &mut ChaCha8Rng,
    pattern: Pattern,
    cells: [(usize, usize); 3],
) -> Vec<ObjectSpec> {
    let a = random_object(set, rng, cells[0]);
    let b = loop {
        let cand = differing_any(set, rng, &a, cells[0]);
        if cand.identity() != a.identity() {
            break cand;
        }
    };
    let c = loop {
        let cand = differing_any(set, rng, &a, cells[0]);
        if cand.identity() != a.identity() && cand.identity() != b.identity() {
            break cand;
        }
    };
    let ids = match pattern {
        Pattern::Aaa => [a, a, a],
        Pattern::Aab => [a, a, b],
        Pattern::Aba => [a, b, a],
        Pattern::Abb => [a, b, b],
        Pattern::Abc => [a, b, c],
    };
    ids.iter()
        .zip(cells)
        .map(|(o, cell)| ObjectSpec { cell, ..*o })
        .collect()
}

fn construct(task: Task, set: &ObjectSet, rng: &mut ChaCha8Rng, want: usize) -> Vec<ObjectSpec> {
    match task {
        Task::Same => {
            let cells = distinct_cells(rng, 2);
            let a = random_object(set, rng, cells[0]);
            let b = if want == 1 {
                ObjectSpec { cell: cells[1], ..a }
            } else {
                let s = *applicable_strata(set).choose(rng).unwrap();
                differing(set, rng, &a, s, cells[1])
            };
            vec![a, b]
        }
        Task::Between => {
            let line = *lines().choose(rng).unwrap();
            let a = random_object(set, rng, line[0]);
            let mid = random_object(set, rng, line[1]);
            let c = if want == 1 {
                ObjectSpec { cell: line[2], ..a }
            } else {
                let s = *applicable_strata(set).choose(rng).unwrap();
                differing(set, rng, &a, s, line[2])
            };
            vec![a, mid, c]
        }
        Task::Occurs | Task::XOccurs => {
            let top = random_object(set, rng, (0, 1));
            let bottom_cells = [(2, 0), (2, 1), (2, 2)];
            let mut bottom: Vec<ObjectSpec> = Vec::new();
            if want == 1 {
                let hit = rng.gen_range(0..3);
                for (i, &cell) in bottom_cells.iter().enumerate() {
                    if i == hit {
                        bottom.push(ObjectSpec { cell, ..top });
                    } else if task == Task::XOccurs {
                        // The two non-matching objects must be mutually
                        // distinct (and distinct from the top object).
                        let prev = bottom
                            .iter()
                            .filter(|o| o.cell != bottom_cells[hit])
                            .last()
                            .copied();
                        loop {
                            let cand = differing_any(set, rng, &top, cell);
                            if prev.is_none_or(|p| p.identity() != cand.identity()) {
                                bottom.push(cand);
                                break;
                            }
                        }
                    } else {
                        bottom.push(random_object(set, rng, cell));
                    }
                }
            } else if task == Task::XOccurs && rng.gen_bool(0.5) {
                // Tricky negative: the top object does occur, but the
                // remaining pair is identical.
                let hit = rng.gen_range(0..3);
                let twin = differing_any(set, rng, &top, (0, 0));
                for (i, &cell) in bottom_cells.iter().enumerate() {
                    if i == hit {
                        bottom.push(ObjectSpec { cell, ..top });
                    } else {
                        bottom.push(ObjectSpec { cell, ..twin });
                    }
                }
            } else {
                for &cell in &bottom_cells {
                    bottom.push(differing_any(set, rng, &top, cell));
                }
            }
            let mut objs = vec![top];
            objs.extend(bottom);
            objs
        }
        Task::ColourShape => {
            let cells = distinct_cells(rng, 2);
            let a = random_object(set, rng, cells[0]);
            let b = match want {
                0 => ObjectSpec { cell: cells[1], ..a },
                1 => differing(set, rng, &a, Stratum::SameShapeDiffColour, cells[1]),
                2 => differing(set, rng, &a, Stratum::SameColourDiffShape, cells[1]),
                _ => differing(set, rng, &a, Stratum::BothDiffer, cells[1]),
            };
            vec![a, b]
        }
        Task::RowPattern(p) | Task::ColumnPattern(p) => {
            let idx = rng.gen_range(0..3);
            let cells: [(usize, usize); 3] = match task {
                Task::RowPattern(_) => [(idx, 0), (idx, 1), (idx, 2)],
                _ => [(0, idx), (1, idx), (2, idx)],
            };
            let target = if want == 1 {
                p
            } else {
                loop {
                    let q = *Pattern::ALL.choose(rng).unwrap();
                    if q != p {
                        break q;
                    }
                }
            };
            build_pattern(set, rng, target, cells)
        }
        Task::MatchRows => {
            let top_p = *Pattern::ALL.choose(rng).unwrap();
            let bottom_p = if want == 1 {
                top_p
            } else {
                loop {
                    let q = *Pattern::ALL.choose(rng).unwrap();
                    if q != top_p {
                        break q;
                    }
                }
            };
            let mut objs = build_pattern(set, rng, top_p, [(0, 0), (0, 1), (0, 2)]);
            objs.extend(build_pattern(set, rng, bottom_p, [(2, 0), (2, 1), (2, 2)]));
            objs
        }
    }
}

fn applicable_labels(task: Task, set: &ObjectSet) -> Vec<usize> {
    match task {
        Task::ColourShape => {
            let many_shapes = set.shapes.len() > 1;
            let many_colours = set.colours.len() > 1;
            (0..4)
                .filter(|&l| {
                    (l & 1 == 0 || many_colours) && (l & 2 == 0 || many_shapes)
                })
                .collect()
        }
        _ => vec![0, 1],
    }
}

/// Draws one labelled example. Labels are balanced by construction and
/// always verified by the predicate evaluator.
pub fn sample_example(task: Task, set: &ObjectSet, rng: &mut ChaCha8Rng) -> LabeledExample {
    let labels = applicable_labels(task, set);
    loop {
        let want = *labels.choose(rng).unwrap();
        let objects = construct(task, set, rng, want);
        let label = evaluate_label(task, &objects);
        if label != want {
            // Construction should realize its intent; resample if a random
            // draw collided into the wrong class.
            continue;
        }
        let image = render_scene(&objects, set).expect("sampler placed objects on distinct cells");
        return LabeledExample {
            image,
            label,
            objects,
            task,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{enumerate_object_set, ObjectSetId};
    use rand::SeedableRng;

    #[test]
    fn same_task_positive_is_verified_by_evaluator() {
        let set = enumerate_object_set(ObjectSetId::TrainPentominoes);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let ex = sample_example(Task::Same, &set, &mut rng);
            assert_eq!(ex.label, evaluate_label(Task::Same, &ex.objects));
        }
    }

    #[test]
    fn labels_are_balanced() {
        let set = enumerate_object_set(ObjectSetId::TrainPentominoes);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut pos = 0;
        for _ in 0..n {
            pos += sample_example(Task::Between, &set, &mut rng).label;
        }
        let rate = pos as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.02, "positive rate {rate}");
    }

    #[test]
    fn negative_strata_are_uniform_for_same() {
        let set = enumerate_object_set(ObjectSetId::TrainPentominoes);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 3];
        let mut negs = 0;
        for _ in 0..10_000 {
            let ex = sample_example(Task::Same, &set, &mut rng);
            if ex.label == 0 {
                negs += 1;
                let (a, b) = (&ex.objects[0], &ex.objects[1]);
                match (a.shape == b.shape, a.colour == b.colour) {
                    (false, true) => counts[0] += 1,
                    (true, false) => counts[1] += 1,
                    (false, false) => counts[2] += 1,
                    (true, true) => panic!("negative with identical objects"),
                }
            }
        }
        for c in counts {
            let f = c as f64 / negs as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.03, "stratum frequency {f}");
        }
    }

    #[test]
    fn stripes_set_samples_all_tasks() {
        let set = enumerate_object_set(ObjectSetId::HoldoutStripes);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for task in [Task::Same, Task::Between, Task::Occurs, Task::XOccurs, Task::MatchRows] {
            for _ in 0..50 {
                let ex = sample_example(task, &set, &mut rng);
                assert_eq!(ex.label, evaluate_label(task, &ex.objects));
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let set = enumerate_object_set(ObjectSetId::TrainPentominoes);
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(55);
            sample_example(Task::XOccurs, &set, &mut rng)
        };
        let (a, b) = (draw(), draw());
        assert_eq!(a.image, b.image);
        assert_eq!(a.label, b.label);
        assert_eq!(a.objects, b.objects);
    }
}
