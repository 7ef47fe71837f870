//! Propositional export: clusters a trained PrediNet's attention masks with
//! mean shift and emits the per-head relation values as a Prolog-syntax
//! program.
//!
//! Output grammar (one fact per line, `%` comments):
//!
//! ```text
//! program := { comment | fact }
//! fact    := atom "(" term { "," term } ")" "."
//! term    := atom | number
//! atom    := [a-z][a-z0-9_]*
//! number  := "-"? digits ("." digits)?
//! ```
//!
//! Constants start with lower-case letters; upper-case variables are left to
//! user-written clauses.

use thiserror::Error;

use crate::nets::{ArchKind, Frozen, Model, NetError};
use crate::tensor::{Graph, Tensor};

#[cfg(test)]
mod tests;

pub const DEFAULT_BANDWIDTH: f32 = 0.25;

#[derive(Debug, Error)]
pub enum SymbolicError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("{0}")]
    Input(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, SymbolicError>;

/// One attention mask with its origin.
#[derive(Debug, Clone)]
pub struct MaskSample {
    pub mask: Vec<f32>,
    pub head: usize,
    /// 1 or 2, matching the two attention slots of Eq. 6.
    pub slot: usize,
}

/// A mean-shift cluster of masks. Ids are `ob_N`, assigned in lexicographic
/// order of the mode vectors so naming is independent of sample order.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub id: String,
    pub mode: Vec<f32>,
    /// Indices into the input sample list.
    pub members: Vec<usize>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Flat-kernel mean shift in Euclidean mask space. Modes closer than
/// `bandwidth / 2` are merged; every sample joins its nearest mode.
pub fn mean_shift(samples: &[Vec<f32>], bandwidth: f32) -> Result<Vec<Cluster>> {
    if bandwidth <= 0.0 {
        return Err(SymbolicError::Input(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if samples.is_empty() {
        return Err(SymbolicError::Input("no samples to cluster".into()));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(SymbolicError::Input("ragged samples".into()));
    }
    let points: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.iter().map(|&v| v as f64).collect())
        .collect();
    let bw = bandwidth as f64;

    // Run each sample to its fixed point.
    let mut modes: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    for start in &points {
        let mut x = start.clone();
        for _ in 0..200 {
            let mut mean = vec![0.0f64; d];
            let mut count = 0usize;
            for p in &points {
                if dist(&x, p) <= bw {
                    for (m, v) in mean.iter_mut().zip(p) {
                        *m += v;
                    }
                    count += 1;
                }
            }
            // The neighborhood always holds the walker's own start point's
            // fixed point; an empty window cannot occur for bw > 0 once x
            // stays near the data, but guard anyway.
            if count == 0 {
                break;
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            let shift = dist(&x, &mean);
            x = mean;
            if shift < 1e-9 {
                break;
            }
        }
        modes.push(x);
    }

    // Merge modes within bandwidth / 2 of an already-kept mode.
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for m in &modes {
        if !kept.iter().any(|k| dist(k, m) < bw / 2.0) {
            kept.push(m.clone());
        }
    }
    // Assign every sample to its nearest kept mode.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); kept.len()];
    for (i, mode) in modes.iter().enumerate() {
        let nearest = (0..kept.len())
            .min_by(|&a, &b| dist(&kept[a], mode).total_cmp(&dist(&kept[b], mode)))
            .unwrap();
        members[nearest].push(i);
    }
    // Name clusters by lexicographic mode order.
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.sort_by(|&a, &b| {
        kept[a]
            .iter()
            .zip(&kept[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(rank, idx)| Cluster {
            id: format!("ob_{}", rank + 1),
            mode: kept[idx].iter().map(|&v| v as f32).collect(),
            members: members[idx].clone(),
        })
        .collect())
}

/// Runs a PrediNet on one image, clusters all `2k` attention masks, and
/// emits the full proposition set in Prolog syntax: one
/// `prop(rel_I, V, ob_A, ob_B).` fact per (head, relation), sorted by
/// (head, relation), followed by `pos(ob_N, X, Y).` location facts.
pub fn emit_prolog(model: &Model, image: &Tensor, bandwidth: f32) -> Result<String> {
    if model.config.arch != ArchKind::Predinet {
        return Err(SymbolicError::Input(format!(
            "prolog export needs a predinet model, got {}",
            model.config.arch.name()
        )));
    }
    let (k, j) = (model.config.heads, model.config.relations);
    let frozen = Frozen {
        cnn: true,
        central: true,
        mlp: true,
    };
    let mut g = Graph::new();
    let pass = model.forward(&mut g, std::slice::from_ref(image), None, frozen, None)?;
    let trace = &pass.per_image[0];
    let central = g.value(trace.central).clone();
    let samples: Vec<Vec<f32>> = trace
        .attention
        .iter()
        .map(|&a| g.value(a).data().to_vec())
        .collect();

    let clusters = mean_shift(&samples, bandwidth)?;
    // Sample index -> cluster id. Samples are ordered (A1, A2) per head.
    let mut owner = vec![0usize; samples.len()];
    for (c, cluster) in clusters.iter().enumerate() {
        for &m in &cluster.members {
            owner[m] = c;
        }
    }

    let mut out = String::new();
    out.push_str(&format!(
        "% predinet propositions: k={k} j={j} bandwidth={bandwidth} clusters={}\n",
        clusters.len()
    ));
    if clusters.len() == 1 {
        out.push_str("% warning: clustering is degenerate, all masks fell in one cluster\n");
    }
    let slot = j + 4;
    for h in 0..k {
        let subj = &clusters[owner[2 * h]].id;
        let obj = &clusters[owner[2 * h + 1]].id;
        for rel in 0..j {
            let value = central.data()[h * slot + rel];
            out.push_str(&format!("prop(rel_{}, {value:.4}, {subj}, {obj}).\n", rel + 1));
        }
    }
    for cluster in &clusters {
        // Expected grid coordinates of the mode, in the [0, 1] frame the
        // feature map uses.
        let (mut x, mut y) = (0.0f32, 0.0f32);
        for (i, &w) in cluster.mode.iter().enumerate() {
            x += w * (i % 5) as f32 / 4.0;
            y += w * (i / 5) as f32 / 4.0;
        }
        out.push_str(&format!("pos({}, {x:.4}, {y:.4}).\n", cluster.id));
    }
    Ok(out)
}

/// One parsed fact.
#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub functor: String,
    pub args: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Atom(String),
    Number(f64),
}

fn is_atom(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Parses a program under the module grammar. Comments and blank lines are
/// skipped; anything else must be a well-formed fact.
pub fn parse_program(text: &str) -> Result<Vec<Fact>> {
    let mut facts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let err = |message: &str| SymbolicError::Parse {
            line: i + 1,
            message: message.to_string(),
        };
        let body = line
            .strip_suffix('.')
            .ok_or_else(|| err("missing terminating `.`"))?;
        let open = body.find('(').ok_or_else(|| err("missing `(`"))?;
        let functor = &body[..open];
        if !is_atom(functor) {
            return Err(err("functor is not a lower-case atom"));
        }
        let inner = body[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| err("missing `)`"))?;
        let mut args = Vec::new();
        for piece in inner.split(',') {
            let t = piece.trim();
            if is_atom(t) {
                args.push(Term::Atom(t.to_string()));
            } else if let Ok(v) = t.parse::<f64>() {
                args.push(Term::Number(v));
            } else {
                return Err(err(&format!("bad term `{t}`")));
            }
        }
        if args.is_empty() {
            return Err(err("fact has no arguments"));
        }
        facts.push(Fact {
            functor: functor.to_string(),
            args,
        });
    }
    Ok(facts)
}
