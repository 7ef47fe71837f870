//! Post-hoc interpretability tooling: attention heatmaps, PCA over head
//! outputs, attention content/position scoring, output-MLP weight
//! inspection, and head-ablation studies.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::game::{
    enumerate_object_set, make_content_mask, sample_example, ObjectSetId, Task,
};
use crate::nets::{ArchKind, Frozen, Model, NetError};
use crate::protocol::{evaluate_with_mask, ProtocolError};
use crate::tensor::{Graph, Tensor};

#[cfg(test)]
mod tests;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Attention masks recorded for one image: `2k` rows of 25 probabilities,
/// ordered `A1, A2` for each head.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub masks: Vec<Vec<f32>>,
    pub label: usize,
}

/// Runs the model over `examples` and collects every attention mask.
/// Only PrediNet exposes per-slot masks.
pub fn attention_records(
    model: &Model,
    examples: &[(Tensor, usize)],
) -> Result<Vec<AttentionRecord>> {
    if model.config.arch != ArchKind::Predinet {
        return Err(AnalysisError::Input(format!(
            "attention records need a predinet model, got {}",
            model.config.arch.name()
        )));
    }
    let frozen = Frozen {
        cnn: true,
        central: true,
        mlp: true,
    };
    let mut out = Vec::with_capacity(examples.len());
    for (image, label) in examples {
        let mut g = Graph::new();
        let pass = model.forward(&mut g, std::slice::from_ref(image), None, frozen, None)?;
        let masks = pass.per_image[0]
            .attention
            .iter()
            .map(|&a| g.value(a).data().to_vec())
            .collect();
        out.push(AttentionRecord {
            masks,
            label: *label,
        });
    }
    Ok(out)
}

/// Reshapes a 25-entry attention mask to the 5x5 patch grid.
pub fn heat_grid(mask: &[f32]) -> [[f32; 5]; 5] {
    assert_eq!(mask.len(), 25);
    let mut grid = [[0.0f32; 5]; 5];
    for r in 0..5 {
        for c in 0..5 {
            grid[r][c] = mask[r * 5 + c];
        }
    }
    grid
}

/// Writes a heat grid as CSV at 6 decimal places, one grid row per line.
pub fn write_heat_csv(path: &Path, grid: &[[f32; 5]; 5]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in grid {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_heat_csv(path: &Path) -> Result<[[f32; 5]; 5]> {
    let text = std::fs::read_to_string(path)?;
    let mut grid = [[0.0f32; 5]; 5];
    let mut rows = 0;
    for (r, line) in text.lines().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if r >= 5 || cells.len() != 5 {
            return Err(AnalysisError::Input(format!("bad heat grid at {path:?}")));
        }
        for (c, cell) in cells.iter().enumerate() {
            grid[r][c] = cell
                .trim()
                .parse()
                .map_err(|_| AnalysisError::Input(format!("bad number `{cell}`")))?;
        }
        rows += 1;
    }
    if rows != 5 {
        return Err(AnalysisError::Input(format!("bad heat grid at {path:?}")));
    }
    Ok(grid)
}

/// Upsamples a 5x5 heat grid to image resolution. Each 12x12 patch (stride
/// 6) spreads its weight evenly over its pixels; overlapping contributions
/// average.
pub fn upsample_heat(grid: &[[f32; 5]; 5]) -> Vec<f32> {
    let mut acc = vec![0.0f32; 36 * 36];
    let mut hits = vec![0.0f32; 36 * 36];
    for r in 0..5 {
        for c in 0..5 {
            for py in 6 * r..6 * r + 12 {
                for px in 6 * c..6 * c + 12 {
                    acc[py * 36 + px] += grid[r][c];
                    hits[py * 36 + px] += 1.0;
                }
            }
        }
    }
    acc.iter().zip(&hits).map(|(a, h)| a / h).collect()
}

/// Writes a PNG overlay: the image dimmed, with attention weight added to
/// the red channel (scaled so the brightest patch saturates).
pub fn write_heat_overlay(path: &Path, image: &Tensor, grid: &[[f32; 5]; 5]) -> Result<()> {
    let heat = upsample_heat(grid);
    let peak = heat.iter().cloned().fold(0.0f32, f32::max).max(1e-6);
    let mut buf = image::RgbImage::new(36, 36);
    for y in 0..36usize {
        for x in 0..36usize {
            let base = |c: usize| image.data()[(y * 36 + x) * 3 + c] * 0.5;
            let h = heat[y * 36 + x] / peak;
            let px = [
                ((base(0) + 0.5 * h) * 255.0).round().clamp(0.0, 255.0) as u8,
                (base(1) * 255.0).round() as u8,
                (base(2) * 255.0).round() as u8,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)
        .map_err(|e| AnalysisError::Input(format!("png write failed: {e}")))?;
    Ok(())
}

/// Top-2 principal components of a sample matrix, with projected points.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// Orthonormal components, largest variance first; may hold fewer than
    /// two entries for rank-deficient input.
    pub components: Vec<Vec<f32>>,
    /// Eigenvalues of the sample covariance for the kept components.
    pub variances: Vec<f32>,
    /// Fraction of total variance per kept component.
    pub explained: Vec<f32>,
    /// Per-sample projections onto the kept components, with labels.
    pub projections: Vec<(Vec<f32>, usize)>,
    pub rank_deficient: bool,
}

const POWER_ITERS: usize = 500;
const POWER_TOL: f64 = 1e-9;

/// Dominant eigenpair of `cov` by power iteration. Each iterate is
/// re-orthogonalized against `previous` components so that deflation error
/// cannot leak back in.
fn power_iteration(cov: &[Vec<f64>], previous: &[Vec<f64>], seed: u64) -> (f64, Vec<f64>) {
    let d = cov.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let orthogonalize = |v: &mut Vec<f64>| {
        for p in previous {
            let dot: f64 = v.iter().zip(p).map(|(a, b)| a * b).sum();
            for (x, &pi) in v.iter_mut().zip(p) {
                *x -= dot * pi;
            }
        }
    };
    orthogonalize(&mut v);
    let n = norm(&v).max(1e-30);
    v.iter_mut().for_each(|x| *x /= n);
    let mut lambda = 0.0f64;
    for _ in 0..POWER_ITERS {
        let mut next = vec![0.0f64; d];
        for i in 0..d {
            for j in 0..d {
                next[i] += cov[i][j] * v[j];
            }
        }
        orthogonalize(&mut next);
        let new_lambda: f64 = next.iter().zip(&v).map(|(a, b)| a * b).sum();
        let n = norm(&next);
        if n < 1e-30 {
            return (0.0, v);
        }
        next.iter_mut().for_each(|x| *x /= n);
        let done = (new_lambda - lambda).abs() <= POWER_TOL * new_lambda.abs().max(1e-30);
        v = next;
        lambda = new_lambda;
        if done {
            break;
        }
    }
    (lambda, v)
}

/// PCA via mean-centered covariance and power iteration with deflation.
pub fn pca(samples: &[Vec<f32>], labels: &[usize]) -> Result<PcaResult> {
    let n = samples.len();
    if n < 3 {
        return Err(AnalysisError::Input(format!(
            "pca needs at least 3 samples, got {n}"
        )));
    }
    if labels.len() != n {
        return Err(AnalysisError::Input("labels do not match samples".into()));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(AnalysisError::Input("ragged sample matrix".into()));
    }

    let mut mean = vec![0.0f64; d];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.iter().zip(&mean).map(|(&v, m)| v as f64 - m).collect())
        .collect();
    let mut cov = vec![vec![0.0f64; d]; d];
    for row in &centered {
        for i in 0..d {
            for j in i..d {
                cov[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i][i]).sum();

    let mut components = Vec::new();
    let mut variances = Vec::new();
    let mut kept = Vec::<Vec<f64>>::new();
    let mut deflated = cov;
    for comp in 0..2.min(d) {
        let (lambda, v) = power_iteration(&deflated, &kept, 1 + comp as u64);
        if lambda <= trace.max(1e-30) * 1e-9 {
            break;
        }
        for i in 0..d {
            for j in 0..d {
                deflated[i][j] -= lambda * v[i] * v[j];
            }
        }
        components.push(v.iter().map(|&x| x as f32).collect::<Vec<f32>>());
        variances.push(lambda as f32);
        kept.push(v);
    }
    let rank_deficient = components.len() < 2.min(d);
    let explained = variances
        .iter()
        .map(|&v| if trace > 0.0 { v / trace as f32 } else { 0.0 })
        .collect();
    let projections = centered
        .iter()
        .zip(labels)
        .map(|(row, &label)| {
            let p = components
                .iter()
                .map(|c| {
                    row.iter()
                        .zip(c)
                        .map(|(&x, &ci)| (x * ci as f64) as f32)
                        .sum::<f32>()
                })
                .collect();
            (p, label)
        })
        .collect();
    Ok(PcaResult {
        components,
        variances,
        explained,
        projections,
        rank_deficient,
    })
}

/// Per-head, per-slot content scores: the mean over records of
/// `<attention mask, content mask>`. Returns a `[k][2]` table.
pub fn attention_content_scores(
    records: &[AttentionRecord],
    content: &[Vec<f32>],
) -> Result<Vec<[f32; 2]>> {
    if records.is_empty() || records.len() != content.len() {
        return Err(AnalysisError::Input(
            "content scores need one content mask per record".into(),
        ));
    }
    let k = records[0].masks.len() / 2;
    let mut scores = vec![[0.0f32; 2]; k];
    for (rec, cm) in records.iter().zip(content) {
        for h in 0..k {
            for slot in 0..2 {
                let dot: f32 = rec.masks[2 * h + slot]
                    .iter()
                    .zip(cm)
                    .map(|(a, c)| a * c)
                    .sum();
                scores[h][slot] += dot;
            }
        }
    }
    let n = records.len() as f32;
    for row in &mut scores {
        row[0] /= n;
        row[1] /= n;
    }
    Ok(scores)
}

/// Per-head, per-slot expected patch index (0..24) under each attention
/// mask: mean and standard deviation across records. A small deviation
/// marks a head that attends by location rather than content.
pub fn attention_position_stats(records: &[AttentionRecord]) -> Result<Vec<[(f32, f32); 2]>> {
    if records.is_empty() {
        return Err(AnalysisError::Input("no records".into()));
    }
    let k = records[0].masks.len() / 2;
    let index: Vec<f32> = (0..25).map(|i| i as f32).collect();
    let mut out = vec![[(0.0f32, 0.0f32); 2]; k];
    for h in 0..k {
        for slot in 0..2 {
            let values: Vec<f64> = records
                .iter()
                .map(|r| {
                    r.masks[2 * h + slot]
                        .iter()
                        .zip(&index)
                        .map(|(a, i)| (a * i) as f64)
                        .sum()
                })
                .collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            out[h][slot] = (mean as f32, var.sqrt() as f32);
        }
    }
    Ok(out)
}

/// Mean absolute first-layer output-MLP weight per head group. Each head
/// owns `j + 4` consecutive R* slots; any appended task-id inputs are
/// excluded.
pub fn mlp_weight_magnitudes(model: &Model) -> Vec<f32> {
    let k = model.config.heads;
    let slot = model.config.relations + 4;
    let w = &model.mlp.w1.value;
    let cols = w.cols();
    (0..k)
        .map(|h| {
            let mut sum = 0.0f64;
            for row in h * slot..(h + 1) * slot {
                for c in 0..cols {
                    sum += w.data()[row * cols + c].abs() as f64;
                }
            }
            (sum / (slot * cols) as f64) as f32
        })
        .collect()
}

/// How pruned head subsets are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AblationPolicy {
    /// Uniformly random subsets of the given size.
    Random,
    /// Subsets drawn only from heads whose content scores exceed the
    /// threshold for both attention slots (the PrediNet* setting).
    ObjectAttending { content_threshold: f32 },
}

/// Default PrediNet* threshold: both masks' mean content scores above 0.9.
pub const CONTENT_THRESHOLD: f32 = 0.9;

#[derive(Debug, Clone)]
pub struct AblationPoint {
    pub retained: usize,
    pub mean_accuracy: f32,
    pub std_accuracy: f32,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub points: Vec<AblationPoint>,
    /// Heads the policy allowed subsets to be drawn from.
    pub eligible: Vec<usize>,
}

/// Heads whose content scores exceed `threshold` on both slots, measured
/// over a fresh probe set.
pub fn object_attending_heads(
    model: &Model,
    task: Task,
    set_id: ObjectSetId,
    probes: usize,
    threshold: f32,
    seed: u64,
) -> Result<Vec<usize>> {
    let set = enumerate_object_set(set_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(probes);
    let mut content = Vec::with_capacity(probes);
    for _ in 0..probes {
        let ex = sample_example(task, &set, &mut rng);
        content.push(make_content_mask(&ex, &set).flat());
        examples.push((ex.image, ex.label));
    }
    let records = attention_records(model, &examples)?;
    let scores = attention_content_scores(&records, &content)?;
    Ok(scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s[0] > threshold && s[1] > threshold)
        .map(|(h, _)| h)
        .collect())
}

/// Prunes head subsets at test time by zeroing their R* slots and measures
/// accuracy per retained-head count over `trials` random subsets each.
#[allow(clippy::too_many_arguments)]
pub fn head_ablation(
    model: &Model,
    task: Task,
    set_id: ObjectSetId,
    policy: AblationPolicy,
    retained_counts: &[usize],
    trials: usize,
    eval_examples: usize,
    seed: u64,
) -> Result<AblationResult> {
    let k = model.config.heads;
    let eligible = match policy {
        AblationPolicy::Random => (0..k).collect::<Vec<_>>(),
        AblationPolicy::ObjectAttending { content_threshold } => object_attending_heads(
            model,
            task,
            set_id,
            200,
            content_threshold,
            seed.wrapping_add(77),
        )?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for &retained in retained_counts {
        if retained > eligible.len() {
            // No subset of this size exists under the policy; skip.
            continue;
        }
        // All trials collapse to the same subset at the extremes.
        let effective_trials = if retained == 0 || retained == eligible.len() {
            1
        } else {
            trials
        };
        let mut accs = Vec::with_capacity(effective_trials);
        for trial in 0..effective_trials {
            let mut pool = eligible.clone();
            for i in (1..pool.len()).rev() {
                pool.swap(i, rng.gen_range(0..=i));
            }
            let mut mask = vec![false; k];
            for &h in &pool[..retained] {
                mask[h] = true;
            }
            let (acc, _) = evaluate_with_mask(
                model,
                task,
                set_id,
                None,
                eval_examples,
                seed ^ ((retained as u64) << 32) ^ trial as u64,
                Some(&mask),
            )?;
            accs.push(acc as f64);
        }
        let n = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / n;
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        points.push(AblationPoint {
            retained,
            mean_accuracy: mean as f32,
            std_accuracy: var.sqrt() as f32,
            trials: effective_trials,
        });
    }
    Ok(AblationResult { points, eligible })
}
