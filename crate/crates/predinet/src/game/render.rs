//! Scene rasterization: 3x3 grid of 12x12-pixel cells on a black background,
//! polyomino unit cell = 2x2 pixels, objects centered in their grid cell.

use super::{Colouring, GameError, ObjectSet, ObjectSpec};
use crate::tensor::Tensor;

pub const IMG_SIZE: usize = 36;
const CELL_PX: usize = 12;
const UNIT_PX: usize = 2;

/// Pixel footprint of one object: list of (row, col) pixels and the object's
/// top pixel row (stripe phase is relative to it).
fn footprint(spec: &ObjectSpec, set: &ObjectSet) -> Vec<(usize, usize, usize)> {
    let shape = &set.shapes[spec.shape];
    let h = shape.cells.iter().map(|c| c.0).max().unwrap() as usize + 1;
    let w = shape.cells.iter().map(|c| c.1).max().unwrap() as usize + 1;
    let oy = spec.cell.0 * CELL_PX + (CELL_PX - UNIT_PX * h) / 2;
    let ox = spec.cell.1 * CELL_PX + (CELL_PX - UNIT_PX * w) / 2;
    let mut px = Vec::with_capacity(shape.cells.len() * UNIT_PX * UNIT_PX);
    for &(r, c) in &shape.cells {
        for dy in 0..UNIT_PX {
            for dx in 0..UNIT_PX {
                px.push((
                    oy + r as usize * UNIT_PX + dy,
                    ox + c as usize * UNIT_PX + dx,
                    oy,
                ));
            }
        }
    }
    px
}

/// Renders objects into a `[36, 36, 3]` tensor. Deterministic.
pub fn render_scene(objects: &[ObjectSpec], set: &ObjectSet) -> Result<Tensor, GameError> {
    let mut seen = [[false; 3]; 3];
    for o in objects {
        let (r, c) = o.cell;
        if seen[r][c] {
            return Err(GameError::CellCollision(r, c));
        }
        seen[r][c] = true;
    }
    let mut img = Tensor::zeros(&[IMG_SIZE, IMG_SIZE, 3]);
    for o in objects {
        for (py, px, oy) in footprint(o, set) {
            let rgb = match set.colours[o.colour] {
                Colouring::Solid(c) => c,
                // 2-pixel horizontal stripes alternating through the pair.
                Colouring::Stripes(a, b) => {
                    if ((py - oy) / UNIT_PX) % 2 == 0 {
                        a
                    } else {
                        b
                    }
                }
            };
            let base = (py * IMG_SIZE + px) * 3;
            img.data_mut()[base..base + 3].copy_from_slice(&rgb);
        }
    }
    Ok(img)
}

/// Boolean object-occupancy image, used for content masks.
pub fn occupancy(objects: &[ObjectSpec], set: &ObjectSet) -> Vec<bool> {
    let mut occ = vec![false; IMG_SIZE * IMG_SIZE];
    for o in objects {
        for (py, px, _) in footprint(o, set) {
            occ[py * IMG_SIZE + px] = true;
        }
    }
    occ
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{enumerate_object_set, ObjectSetId};

    #[test]
    fn empty_scene_is_black() {
        let set = enumerate_object_set(ObjectSetId::TrainPentominoes);
        let img = render_scene(&[], &set).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn object_pixels_stay_inside_their_grid_cell() {
        let set = enumerate_object_set(ObjectSetId::TrainPentominoes);
        // X pentomino is the last base shape; find it by orbit size 1.
        let x_idx = set.shapes.iter().position(|s| s.base == 7).unwrap();
        let img = render_scene(
            &[ObjectSpec {
                shape: x_idx,
                colour: 0,
                cell: (0, 0),
            }],
            &set,
        )
        .unwrap();
        for py in 0..IMG_SIZE {
            for px in 0..IMG_SIZE {
                let lit = (0..3).any(|ch| img.data()[(py * IMG_SIZE + px) * 3 + ch] != 0.0);
                if lit {
                    assert!(py < 12 && px < 12, "pixel ({py},{px}) outside cell (0,0)");
                }
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let set = enumerate_object_set(ObjectSetId::HoldoutStripes);
        let objs = [
            ObjectSpec { shape: 0, colour: 3, cell: (1, 1) },
            ObjectSpec { shape: 0, colour: 9, cell: (2, 0) },
        ];
        let a = render_scene(&objs, &set).unwrap();
        let b = render_scene(&objs, &set).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cell_collision_is_an_error() {
        let set = enumerate_object_set(ObjectSetId::TrainPentominoes);
        let objs = [
            ObjectSpec { shape: 0, colour: 0, cell: (1, 1) },
            ObjectSpec { shape: 1, colour: 1, cell: (1, 1) },
        ];
        assert!(matches!(
            render_scene(&objs, &set),
            Err(GameError::CellCollision(1, 1))
        ));
    }
}
