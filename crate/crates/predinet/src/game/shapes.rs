//! Polyomino cell sets and their dihedral orbits.
//!
//! A base shape is a set of unit cells in canonical orientation. Its orbit
//! under the 8 symmetries of the square (4 rotations x optional reflection)
//! gives the distinct oriented shapes an object set exposes.

pub type Cell = (i32, i32);

/// Normalized, sorted cell set: translated so min row and col are 0.
pub fn normalize(cells: &[Cell]) -> Vec<Cell> {
    let min_r = cells.iter().map(|c| c.0).min().unwrap();
    let min_c = cells.iter().map(|c| c.1).min().unwrap();
    let mut out: Vec<Cell> = cells.iter().map(|&(r, c)| (r - min_r, c - min_c)).collect();
    out.sort_unstable();
    out
}

/// The 8 dihedral transforms of a cell set, normalized.
pub fn dihedral_images(cells: &[Cell]) -> Vec<Vec<Cell>> {
    let maps: [fn(Cell) -> Cell; 8] = [
        |(r, c)| (r, c),
        |(r, c)| (c, -r),
        |(r, c)| (-r, -c),
        |(r, c)| (-c, r),
        |(r, c)| (r, -c),
        |(r, c)| (-r, c),
        |(r, c)| (c, r),
        |(r, c)| (-c, -r),
    ];
    maps.iter()
        .map(|m| normalize(&cells.iter().map(|&c| m(c)).collect::<Vec<_>>()))
        .collect()
}

/// Distinct orientations of a shape, in deterministic order: the canonical
/// (lexicographically smallest) image first, then the rest sorted.
pub fn orbit(cells: &[Cell]) -> Vec<Vec<Cell>> {
    let mut images = dihedral_images(cells);
    images.sort();
    images.dedup();
    images
}

/// The 8 training pentominoes: F, L, T, U, V, W, Z, X.
/// Orbit sizes 8+8+4+4+4+4+4+1 = 37.
pub fn pentominoes() -> Vec<(&'static str, Vec<Cell>)> {
    vec![
        ("F", vec![(0, 1), (0, 2), (1, 0), (1, 1), (2, 1)]),
        ("L", vec![(0, 0), (1, 0), (2, 0), (3, 0), (3, 1)]),
        ("T", vec![(0, 0), (0, 1), (0, 2), (1, 1), (2, 1)]),
        ("U", vec![(0, 0), (0, 2), (1, 0), (1, 1), (1, 2)]),
        ("V", vec![(0, 0), (1, 0), (2, 0), (2, 1), (2, 2)]),
        ("W", vec![(0, 0), (1, 0), (1, 1), (2, 1), (2, 2)]),
        ("Z", vec![(0, 0), (0, 1), (1, 1), (2, 1), (2, 2)]),
        ("X", vec![(0, 1), (1, 0), (1, 1), (1, 2), (2, 1)]),
    ]
}

/// The 8 held-out hexominoes. Orbit sizes 8+8+8+8+4+4+4+2 = 46.
pub fn hexominoes() -> Vec<(&'static str, Vec<Cell>)> {
    vec![
        // Orbit 8: no symmetry.
        ("hL", vec![(0, 0), (1, 0), (2, 0), (3, 0), (4, 0), (4, 1)]),
        ("hF", vec![(0, 1), (0, 2), (1, 0), (1, 1), (2, 1), (3, 1)]),
        ("hY", vec![(0, 0), (1, 0), (2, 0), (3, 0), (4, 0), (1, 1)]),
        ("hJ", vec![(0, 1), (1, 1), (2, 0), (2, 1), (3, 0), (0, 2)]),
        // Orbit 4: one mirror symmetry.
        ("hT", vec![(0, 0), (0, 1), (0, 2), (1, 1), (2, 1), (3, 1)]),
        ("hPlus", vec![(0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (3, 1)]),
        ("hA", vec![(0, 1), (1, 0), (1, 1), (1, 2), (2, 0), (2, 2)]),
        // Orbit 2: full rectangle symmetry.
        ("hRect", vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]),
    ]
}

/// The single "shape" of the striped object set: a 4x4-cell square.
pub fn stripe_square() -> Vec<Cell> {
    (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).collect()
}
