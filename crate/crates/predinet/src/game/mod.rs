//! The Relations Game: procedurally generated 36x36 images of coloured
//! polyominoes on a 3x3 grid, with balanced labels for a family of
//! relational classification tasks.

mod mask;
mod render;
mod sample;
pub mod shapes;
mod shard;
mod tasks;

pub use mask::{make_content_mask, make_position_mask, ContentMask};
pub use render::{render_scene, IMG_SIZE};
pub use tasks::lines;
pub use sample::sample_example;
pub use render::occupancy;
pub use shard::{dump_png, read_shard, write_shard, ShardHeader};
pub use tasks::{evaluate_label, pattern_of, Pattern, Task};

use crate::tensor::Tensor;
use shapes::Cell;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("two objects placed in grid cell ({0}, {1})")]
    CellCollision(usize, usize),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown object set `{0}`")]
    UnknownObjectSet(String),
    #[error("shard io: {0}")]
    Io(#[from] std::io::Error),
    #[error("shard format: {0}")]
    Format(String),
}

pub type Rgb = [f32; 3];

/// Colour of one object: uniform fill, or a two-colour horizontal stripe
/// pattern (held-out `stripes` set only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Colouring {
    Solid(Rgb),
    Stripes(Rgb, Rgb),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectSetId {
    TrainPentominoes,
    HoldoutHexominoes,
    HoldoutStripes,
}

impl ObjectSetId {
    pub fn parse(s: &str) -> Result<Self, GameError> {
        match s {
            "train" | "pentominoes" => Ok(ObjectSetId::TrainPentominoes),
            "hexominoes" => Ok(ObjectSetId::HoldoutHexominoes),
            "stripes" => Ok(ObjectSetId::HoldoutStripes),
            other => Err(GameError::UnknownObjectSet(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObjectSetId::TrainPentominoes => "train",
            ObjectSetId::HoldoutHexominoes => "hexominoes",
            ObjectSetId::HoldoutStripes => "stripes",
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            ObjectSetId::TrainPentominoes => 0,
            ObjectSetId::HoldoutHexominoes => 1,
            ObjectSetId::HoldoutStripes => 2,
        }
    }
}

/// One oriented shape: normalized cells plus provenance (base shape index,
/// orientation index within its orbit).
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedShape {
    pub cells: Vec<Cell>,
    pub base: usize,
    pub orientation: usize,
}

/// A full object vocabulary: every oriented shape crossed with every colour.
#[derive(Debug, Clone)]
pub struct ObjectSet {
    pub id: ObjectSetId,
    pub shapes: Vec<OrientedShape>,
    pub colours: Vec<Colouring>,
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> Rgb {
    let c = v * s;
    let hp = h * 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// 25 training colours: evenly spaced hues at full saturation and value.
pub fn train_colours() -> Vec<Rgb> {
    (0..25).map(|i| hsv_to_rgb(i as f32 / 25.0, 1.0, 1.0)).collect()
}

/// 25 held-out colours: hues offset by half a step, softer saturation and
/// value, so the two palettes are disjoint by construction.
pub fn holdout_colours() -> Vec<Rgb> {
    (0..25)
        .map(|i| hsv_to_rgb((i as f32 + 0.5) / 25.0, 0.6, 0.85))
        .collect()
}

/// Deterministic enumeration of an object set.
pub fn enumerate_object_set(id: ObjectSetId) -> ObjectSet {
    let oriented = |bases: Vec<(&'static str, Vec<Cell>)>| {
        let mut out = Vec::new();
        for (base_idx, (_, cells)) in bases.iter().enumerate() {
            for (orient_idx, img) in shapes::orbit(cells).into_iter().enumerate() {
                out.push(OrientedShape {
                    cells: img,
                    base: base_idx,
                    orientation: orient_idx,
                });
            }
        }
        out
    };
    match id {
        ObjectSetId::TrainPentominoes => ObjectSet {
            id,
            shapes: oriented(shapes::pentominoes()),
            colours: train_colours().into_iter().map(Colouring::Solid).collect(),
        },
        ObjectSetId::HoldoutHexominoes => ObjectSet {
            id,
            shapes: oriented(shapes::hexominoes()),
            colours: holdout_colours().into_iter().map(Colouring::Solid).collect(),
        },
        ObjectSetId::HoldoutStripes => {
            let held = holdout_colours();
            // Pair each held-out colour with the one 7 steps along; 7 is
            // coprime to 25 so every colour appears in exactly two pairs.
            let colours = (0..25)
                .map(|i| Colouring::Stripes(held[i], held[(i + 7) % 25]))
                .collect();
            ObjectSet {
                id,
                shapes: vec![OrientedShape {
                    cells: shapes::stripe_square(),
                    base: 0,
                    orientation: 0,
                }],
                colours,
            }
        }
    }
}

/// One placed object: indices into an [`ObjectSet`] plus a 3x3 grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectSpec {
    pub shape: usize,
    pub colour: usize,
    pub cell: (usize, usize),
}

impl ObjectSpec {
    /// Object identity for the task predicates: shape (with orientation
    /// baked in) and colour, position excluded.
    pub fn identity(&self) -> (usize, usize) {
        (self.shape, self.colour)
    }
}

/// A rendered training or evaluation example.
#[derive(Debug, Clone)]
pub struct LabeledExample {
    /// `[36, 36, 3]` image, values in [0, 1].
    pub image: Tensor,
    pub label: usize,
    pub objects: Vec<ObjectSpec>,
    pub task: Task,
}
