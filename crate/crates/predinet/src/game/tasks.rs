//! Task definitions and the ground-truth predicate evaluator.
//!
//! Labels are always computed here, from object specs, never trusted from
//! the sampler's construction intent.

use super::{GameError, ObjectSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pattern {
    Aaa,
    Aab,
    Aba,
    Abb,
    Abc,
}

impl Pattern {
    pub const ALL: [Pattern; 5] = [
        Pattern::Aaa,
        Pattern::Aab,
        Pattern::Aba,
        Pattern::Abb,
        Pattern::Abc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Pattern::Aaa => "AAA",
            Pattern::Aab => "AAB",
            Pattern::Aba => "ABA",
            Pattern::Abb => "ABB",
            Pattern::Abc => "ABC",
        }
    }

    pub fn parse(s: &str) -> Option<Pattern> {
        Pattern::ALL.iter().find(|p| p.name().eq_ignore_ascii_case(s)).copied()
    }
}

/// Equality pattern of three objects under (shape, orientation, colour)
/// identity. The five patterns are the set partitions of three elements.
pub fn pattern_of(row: &[ObjectSpec; 3]) -> Pattern {
    let (a, b, c) = (row[0].identity(), row[1].identity(), row[2].identity());
    match (a == b, a == c, b == c) {
        (true, true, _) => Pattern::Aaa,
        (true, false, _) => Pattern::Aab,
        (false, true, _) => Pattern::Aba,
        (false, _, true) => Pattern::Abb,
        _ => Pattern::Abc,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Same,
    Between,
    Occurs,
    XOccurs,
    ColourShape,
    RowPattern(Pattern),
    ColumnPattern(Pattern),
    MatchRows,
}

impl Task {
    pub fn label_arity(&self) -> usize {
        match self {
            Task::ColourShape => 4,
            _ => 2,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Task::Same => "same".into(),
            Task::Between => "between".into(),
            Task::Occurs => "occurs".into(),
            Task::XOccurs => "xoccurs".into(),
            Task::ColourShape => "colour_shape".into(),
            Task::RowPattern(p) => format!("row_{}", p.name().to_lowercase()),
            Task::ColumnPattern(p) => format!("col_{}", p.name().to_lowercase()),
            Task::MatchRows => "match_rows".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Task, GameError> {
        let t = s.trim();
        match t {
            "same" => return Ok(Task::Same),
            "between" => return Ok(Task::Between),
            "occurs" => return Ok(Task::Occurs),
            "xoccurs" => return Ok(Task::XOccurs),
            "colour_shape" | "color_shape" => return Ok(Task::ColourShape),
            "match_rows" => return Ok(Task::MatchRows),
            _ => {}
        }
        if let Some(p) = t.strip_prefix("row_").and_then(Pattern::parse) {
            return Ok(Task::RowPattern(p));
        }
        if let Some(p) = t.strip_prefix("col_").and_then(Pattern::parse) {
            return Ok(Task::ColumnPattern(p));
        }
        Err(GameError::UnknownTask(s.to_string()))
    }

    /// Stable numeric id, used in shard headers and task identifiers.
    pub fn id(&self) -> u8 {
        match self {
            Task::Same => 0,
            Task::Between => 1,
            Task::Occurs => 2,
            Task::XOccurs => 3,
            Task::ColourShape => 4,
            Task::RowPattern(p) => 5 + Pattern::ALL.iter().position(|q| q == p).unwrap() as u8,
            Task::ColumnPattern(p) => 10 + Pattern::ALL.iter().position(|q| q == p).unwrap() as u8,
            Task::MatchRows => 15,
        }
    }

    pub fn from_id(id: u8) -> Option<Task> {
        match id {
            0 => Some(Task::Same),
            1 => Some(Task::Between),
            2 => Some(Task::Occurs),
            3 => Some(Task::XOccurs),
            4 => Some(Task::ColourShape),
            5..=9 => Some(Task::RowPattern(Pattern::ALL[(id - 5) as usize])),
            10..=14 => Some(Task::ColumnPattern(Pattern::ALL[(id - 10) as usize])),
            15 => Some(Task::MatchRows),
            _ => None,
        }
    }
}

/// The 8 lines of the 3x3 grid: rows, columns, both diagonals.
pub fn lines() -> Vec<[(usize, usize); 3]> {
    let mut out = Vec::with_capacity(8);
    for r in 0..3 {
        out.push([(r, 0), (r, 1), (r, 2)]);
    }
    for c in 0..3 {
        out.push([(0, c), (1, c), (2, c)]);
    }
    out.push([(0, 0), (1, 1), (2, 2)]);
    out.push([(0, 2), (1, 1), (2, 0)]);
    out
}

fn at(objects: &[ObjectSpec], cell: (usize, usize)) -> Option<&ObjectSpec> {
    objects.iter().find(|o| o.cell == cell)
}

fn row_objects(objects: &[ObjectSpec], row: usize) -> Vec<&ObjectSpec> {
    let mut v: Vec<&ObjectSpec> = objects.iter().filter(|o| o.cell.0 == row).collect();
    v.sort_by_key(|o| o.cell.1);
    v
}

fn full_triple<'a>(objs: Vec<&'a ObjectSpec>) -> Option<[ObjectSpec; 3]> {
    if objs.len() == 3 {
        Some([*objs[0], *objs[1], *objs[2]])
    } else {
        None
    }
}

/// Ground-truth label for a scene under a task. Independent of how the
/// scene was sampled.
pub fn evaluate_label(task: Task, objects: &[ObjectSpec]) -> usize {
    match task {
        Task::Same => {
            let hit = objects.iter().enumerate().any(|(i, a)| {
                objects[i + 1..].iter().any(|b| a.identity() == b.identity())
            });
            hit as usize
        }
        Task::Between => {
            let hit = lines().into_iter().any(|line| {
                match (at(objects, line[0]), at(objects, line[1]), at(objects, line[2])) {
                    (Some(a), Some(_), Some(c)) => a.identity() == c.identity(),
                    _ => false,
                }
            });
            hit as usize
        }
        Task::Occurs => {
            let top = row_objects(objects, 0);
            let bottom = row_objects(objects, 2);
            let hit = top.len() == 1
                && bottom.iter().any(|b| b.identity() == top[0].identity());
            hit as usize
        }
        Task::XOccurs => {
            let top = row_objects(objects, 0);
            let bottom = row_objects(objects, 2);
            if top.len() != 1 || bottom.len() != 3 {
                return 0;
            }
            let t = top[0].identity();
            let hit = (0..3).any(|i| {
                let rest: Vec<_> = (0..3).filter(|&j| j != i).collect();
                bottom[i].identity() == t
                    && bottom[rest[0]].identity() != bottom[rest[1]].identity()
            });
            hit as usize
        }
        Task::ColourShape => {
            assert_eq!(objects.len(), 2, "colour_shape scenes hold two objects");
            let (a, b) = (&objects[0], &objects[1]);
            let same_shape = a.shape == b.shape;
            let same_colour = a.colour == b.colour;
            match (same_shape, same_colour) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            }
        }
        Task::RowPattern(p) => {
            let hit = (0..3).any(|r| {
                full_triple(row_objects(objects, r)).is_some_and(|t| pattern_of(&t) == p)
            });
            hit as usize
        }
        Task::ColumnPattern(p) => {
            let hit = (0..3).any(|c| {
                let mut col: Vec<&ObjectSpec> =
                    objects.iter().filter(|o| o.cell.1 == c).collect();
                col.sort_by_key(|o| o.cell.0);
                full_triple(col).is_some_and(|t| pattern_of(&t) == p)
            });
            hit as usize
        }
        Task::MatchRows => {
            let top = full_triple(row_objects(objects, 0));
            let bottom = full_triple(row_objects(objects, 2));
            match (top, bottom) {
                (Some(t), Some(b)) => (pattern_of(&t) == pattern_of(&b)) as usize,
                _ => 0,
            }
        }
    }
}
