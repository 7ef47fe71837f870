//! Ground-truth content and position masks over the 5x5 grid of CNN
//! receptive-field patches (12x12 windows at stride 6).

use super::render::{occupancy, IMG_SIZE};
use super::{LabeledExample, ObjectSet};

const PATCHES: usize = 5;
const PATCH_PX: usize = 12;
const STRIDE: usize = 6;

/// Per-patch object coverage, quantized to {0.0, 0.5, 1.0}:
/// 1.0 above 90% coverage, 0.0 at exactly zero, 0.5 otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentMask {
    pub grid: [[f32; PATCHES]; PATCHES],
}

impl ContentMask {
    pub fn flat(&self) -> Vec<f32> {
        self.grid.iter().flatten().copied().collect()
    }
}

pub fn make_content_mask(example: &LabeledExample, set: &ObjectSet) -> ContentMask {
    let occ = occupancy(&example.objects, set);
    let mut grid = [[0.0f32; PATCHES]; PATCHES];
    for (pr, row) in grid.iter_mut().enumerate() {
        for (pc, out) in row.iter_mut().enumerate() {
            let mut covered = 0usize;
            for dy in 0..PATCH_PX {
                for dx in 0..PATCH_PX {
                    if occ[(pr * STRIDE + dy) * IMG_SIZE + (pc * STRIDE + dx)] {
                        covered += 1;
                    }
                }
            }
            let frac = covered as f32 / (PATCH_PX * PATCH_PX) as f32;
            *out = if covered == 0 {
                0.0
            } else if frac > 0.9 {
                1.0
            } else {
                0.5
            };
        }
    }
    ContentMask { grid }
}

/// Fixed grid of unique location indices 0..24.
pub fn make_position_mask() -> [[f32; PATCHES]; PATCHES] {
    let mut grid = [[0.0f32; PATCHES]; PATCHES];
    for (r, row) in grid.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (r * PATCHES + c) as f32;
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{
        enumerate_object_set, render_scene, ObjectSetId, Task,
    };

    #[test]
    fn empty_scene_has_all_zero_mask() {
        let set = enumerate_object_set(ObjectSetId::TrainPentominoes);
        let ex = LabeledExample {
            image: render_scene(&[], &set).unwrap(),
            label: 0,
            objects: vec![],
            task: Task::Same,
        };
        let mask = make_content_mask(&ex, &set);
        assert!(mask.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quantization_matches_independent_coverage_count() {
        let set = enumerate_object_set(ObjectSetId::TrainPentominoes);
        let mut rng = rand::SeedableRng::seed_from_u64(21);
        for _ in 0..50 {
            let ex = crate::game::sample_example(Task::MatchRows, &set, &mut rng);
            let mask = make_content_mask(&ex, &set);
            let occ = occupancy(&ex.objects, &set);
            for pr in 0..PATCHES {
                for pc in 0..PATCHES {
                    let mut covered = 0;
                    for dy in 0..PATCH_PX {
                        for dx in 0..PATCH_PX {
                            if occ[(pr * STRIDE + dy) * IMG_SIZE + pc * STRIDE + dx] {
                                covered += 1;
                            }
                        }
                    }
                    let expect = if covered == 0 {
                        0.0
                    } else if covered as f32 > 0.9 * 144.0 {
                        1.0
                    } else {
                        0.5
                    };
                    assert_eq!(mask.grid[pr][pc], expect);
                }
            }
        }
    }

    #[test]
    fn position_mask_is_a_permutation_of_indices() {
        let mask = make_position_mask();
        let mut seen: Vec<f32> = mask.iter().flatten().copied().collect();
        seen.sort_by(f32::total_cmp);
        let expect: Vec<f32> = (0..25).map(|i| i as f32).collect();
        assert_eq!(seen, expect);
    }
}
