//! Training and evaluation engine: single-task and multi-task training with
//! online batch generation, the four-stage curriculum protocol, and
//! side-effect-free evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::game::{enumerate_object_set, sample_example, ObjectSet, ObjectSetId, Task};
use crate::nets::{ArchKind, Frozen, Model, ModelConfig, NetError};
use crate::tensor::{Graph, Optimizer, Tensor, TensorError};

#[cfg(test)]
mod tests;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// How a metric row was measured: on training batches, or on fresh examples
/// from a named object set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Holdout(ObjectSetId),
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Holdout(set) => set.name(),
        }
    }
}

/// One evaluation point, matching the metrics CSV row
/// `batch,task,split,accuracy,loss,seed`.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub batch: usize,
    pub task: Task,
    pub split: Split,
    pub accuracy: f32,
    pub loss: f32,
    pub seed: u64,
}

/// Optimizer choice without state, instantiated fresh per training stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerSpec {
    Sgd { lr: f32 },
    Adam { lr: f32 },
}

impl OptimizerSpec {
    pub fn build(self) -> Optimizer {
        match self {
            OptimizerSpec::Sgd { lr } => Optimizer::sgd(lr),
            OptimizerSpec::Adam { lr } => Optimizer::adam(lr),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub tasks: Vec<Task>,
    /// Train through batch index `batches` (1-based, inclusive).
    pub batches: usize,
    /// First batch index to run, exclusive; nonzero when resuming from a
    /// checkpoint. Batch randomness is derived from (seed, batch index), so
    /// a resumed run replays the unbroken one exactly.
    pub start_batch: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    pub frozen: Frozen,
    /// Emit metrics every this many batches (and at the final batch).
    pub eval_every: usize,
    /// Fresh examples per held-out object set at each evaluation point.
    pub eval_examples: usize,
    pub eval_sets: Vec<ObjectSetId>,
}

impl TrainConfig {
    pub fn single_task(task: Task, batches: usize) -> Self {
        TrainConfig {
            tasks: vec![task],
            batches,
            start_batch: 0,
            batch_size: 10,
            optimizer: OptimizerSpec::Sgd { lr: 0.01 },
            frozen: Frozen::none(),
            eval_every: 500,
            eval_examples: 2000,
            eval_sets: vec![ObjectSetId::HoldoutHexominoes, ObjectSetId::HoldoutStripes],
        }
    }

    fn validate(&self, model: &Model) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(ProtocolError::Config("empty task list".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(ProtocolError::Config(
                "batch_size and eval_every must be positive".into(),
            ));
        }
        let arity = self.tasks[0].label_arity();
        if self.tasks.iter().any(|t| t.label_arity() != arity) {
            return Err(ProtocolError::Config(
                "all tasks in one stage must share a label arity".into(),
            ));
        }
        if arity != model.config.label_arity {
            return Err(ProtocolError::Config(format!(
                "model outputs {} classes but tasks have {arity}",
                model.config.label_arity
            )));
        }
        let want_ids = if self.tasks.len() > 1 { self.tasks.len() } else { 0 };
        if model.config.task_count != want_ids {
            return Err(ProtocolError::Config(format!(
                "model task_count {} does not match task list of {}",
                model.config.task_count,
                self.tasks.len()
            )));
        }
        Ok(())
    }
}

fn task_index(config: &TrainConfig, slot: usize) -> Option<usize> {
    if config.tasks.len() > 1 {
        Some(slot)
    } else {
        None
    }
}

/// Runs one forward/backward/step over a freshly sampled batch.
/// Returns (loss, correct count).
fn train_batch(
    model: &mut Model,
    optimizer: &mut Optimizer,
    config: &TrainConfig,
    set: &ObjectSet,
    slot: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f32, usize)> {
    let task = config.tasks[slot];
    let mut images = Vec::with_capacity(config.batch_size);
    let mut labels = Vec::with_capacity(config.batch_size);
    for _ in 0..config.batch_size {
        let ex = sample_example(task, set, rng);
        images.push(ex.image);
        labels.push(ex.label);
    }
    let mut g = Graph::new();
    let pass = model.forward(&mut g, &images, task_index(config, slot), config.frozen, None)?;
    let one_hot = Tensor::one_hot(&labels, model.config.label_arity);
    let correct = count_correct(g.value(pass.logits), &labels);
    let loss = g.softmax_cross_entropy(pass.logits, one_hot)?;
    let loss_value = g.value(loss).item();
    g.backward(loss)?;
    model.accumulate_grads(&g, &pass)?;
    let mut trainable = model.trainable_params_mut(config.frozen);
    optimizer.step(&mut trainable)?;
    Ok((loss_value, correct))
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let c = logits.cols();
    labels
        .iter()
        .enumerate()
        .filter(|(row, &label)| {
            let r = &logits.data()[row * c..(row + 1) * c];
            let argmax = (0..c).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
            argmax == label
        })
        .count()
}

/// Counters from one training stage.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    /// Batches drawn per task slot; sums to the configured batch count.
    pub task_batches: Vec<usize>,
}

/// Trains `model` in place for `config.batches` batches, sampling the task
/// uniformly per batch and generating every example online from the training
/// object set. Metrics rows are pushed to `sink` at each evaluation point.
pub fn train(
    model: &mut Model,
    config: &TrainConfig,
    seed: u64,
    sink: &mut dyn FnMut(MetricsRow),
) -> Result<TrainSummary> {
    config.validate(model)?;
    if config.start_batch > config.batches {
        return Err(ProtocolError::Config(format!(
            "start_batch {} past final batch {}",
            config.start_batch, config.batches
        )));
    }
    let train_set = enumerate_object_set(ObjectSetId::TrainPentominoes);
    let mut optimizer = config.optimizer.build();

    let mut task_batches = vec![0usize; config.tasks.len()];
    // Per-task running counts since the last evaluation point.
    let mut seen = vec![0usize; config.tasks.len()];
    let mut correct = vec![0usize; config.tasks.len()];
    let mut loss_sum = vec![0.0f64; config.tasks.len()];

    for batch in config.start_batch + 1..=config.batches {
        // Each batch owns an rng derived from (seed, batch index), so runs
        // can be resumed mid-stream without replaying earlier batches.
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (batch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let slot = rng.gen_range(0..config.tasks.len());
        let (loss, ok) = train_batch(model, &mut optimizer, config, &train_set, slot, &mut rng)?;
        task_batches[slot] += 1;
        seen[slot] += config.batch_size;
        correct[slot] += ok;
        loss_sum[slot] += loss as f64;

        if batch % config.eval_every == 0 || batch == config.batches {
            for (slot, &task) in config.tasks.iter().enumerate() {
                if seen[slot] > 0 {
                    sink(MetricsRow {
                        batch,
                        task,
                        split: Split::Train,
                        accuracy: correct[slot] as f32 / seen[slot] as f32,
                        loss: (loss_sum[slot]
                            / (seen[slot] / config.batch_size).max(1) as f64)
                            as f32,
                        seed,
                    });
                }
                for &set_id in &config.eval_sets {
                    let (acc, loss) = evaluate(
                        model,
                        task,
                        set_id,
                        task_index(config, slot),
                        config.eval_examples,
                        seed ^ batch as u64,
                    )?;
                    sink(MetricsRow {
                        batch,
                        task,
                        split: Split::Holdout(set_id),
                        accuracy: acc,
                        loss,
                        seed,
                    });
                }
            }
            seen.iter_mut().for_each(|v| *v = 0);
            correct.iter_mut().for_each(|v| *v = 0);
            loss_sum.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok(TrainSummary { task_batches })
}

/// Accuracy and mean loss over `n` fresh examples from `set_id`. Pure:
/// no parameter updates, and a fixed `eval_seed` reproduces the result
/// exactly.
pub fn evaluate(
    model: &Model,
    task: Task,
    set_id: ObjectSetId,
    task_index: Option<usize>,
    n: usize,
    eval_seed: u64,
) -> Result<(f32, f32)> {
    evaluate_with_mask(model, task, set_id, task_index, n, eval_seed, None)
}

/// [`evaluate`] with an optional head mask, used by test-time head
/// ablation: masked heads have their central-output slots zeroed.
pub fn evaluate_with_mask(
    model: &Model,
    task: Task,
    set_id: ObjectSetId,
    task_index: Option<usize>,
    n: usize,
    eval_seed: u64,
    head_mask: Option<&[bool]>,
) -> Result<(f32, f32)> {
    if n == 0 {
        return Err(ProtocolError::Config("evaluate over 0 examples".into()));
    }
    let set = enumerate_object_set(set_id);
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed);
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    let chunk = 10.min(n);
    let mut done = 0;
    while done < n {
        let size = chunk.min(n - done);
        let mut images = Vec::with_capacity(size);
        let mut labels = Vec::with_capacity(size);
        for _ in 0..size {
            let ex = sample_example(task, &set, &mut rng);
            images.push(ex.image);
            labels.push(ex.label);
        }
        let mut g = Graph::new();
        let frozen = Frozen {
            cnn: true,
            central: true,
            mlp: true,
        };
        let pass = model.forward(&mut g, &images, task_index, frozen, head_mask)?;
        correct += count_correct(g.value(pass.logits), &labels);
        let one_hot = Tensor::one_hot(&labels, model.config.label_arity);
        let loss = g.softmax_cross_entropy(pass.logits, one_hot)?;
        loss_sum += g.value(loss).item() as f64 * size as f64;
        done += size;
    }
    Ok((correct as f32 / n as f32, (loss_sum / n as f64) as f32))
}

/// Configuration for the four-stage curriculum protocol.
#[derive(Debug, Clone)]
pub struct CurriculumConfig {
    pub arch: ArchKind,
    pub heads: usize,
    pub relations: usize,
    pub key_size: usize,
    pub curriculum_tasks: Vec<Task>,
    pub target_tasks: Vec<Task>,
    pub stage1_batches: usize,
    pub stage3_batches: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSpec,
    pub eval_every: usize,
    pub eval_examples: usize,
    pub eval_sets: Vec<ObjectSetId>,
}

impl CurriculumConfig {
    fn model_config(&self, tasks: &[Task]) -> Result<ModelConfig> {
        if tasks.is_empty() {
            return Err(ProtocolError::Config("empty task list".into()));
        }
        let mut c = ModelConfig::new(self.arch);
        c.heads = self.heads;
        c.relations = self.relations;
        c.key_size = self.key_size;
        c.task_count = if tasks.len() > 1 { tasks.len() } else { 0 };
        c.label_arity = tasks[0].label_arity();
        Ok(c)
    }

    fn train_config(&self, tasks: &[Task], batches: usize, frozen: Frozen) -> TrainConfig {
        TrainConfig {
            tasks: tasks.to_vec(),
            batches,
            start_batch: 0,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            frozen,
            eval_every: self.eval_every,
            eval_examples: self.eval_examples,
            eval_sets: self.eval_sets.clone(),
        }
    }
}

/// Metrics and final models from one curriculum run.
pub struct CurriculumOutcome {
    /// Metrics per stage, indexed 0..4. Stage 2 (freeze + re-init) trains
    /// nothing and has no rows.
    pub stage_metrics: [Vec<MetricsRow>; 4],
    /// Model after stage 3: pretrained core, target-trained output MLP.
    pub transfer_model: Model,
    /// Stage-4 control: pretrained CNN, fresh frozen central, trained MLP.
    pub control_model: Model,
}

/// Runs the four-stage protocol for one seed: (1) pretrain on the curriculum
/// tasks; (2) freeze the CNN and central module and re-initialize the output
/// MLP for the target tasks; (3) train the MLP on the targets; (4) control —
/// same as stage 3 but with the central module replaced by a frozen fresh
/// initialization, isolating what the pretrained CNN alone explains.
pub fn run_curriculum(config: &CurriculumConfig, seed: u64) -> Result<CurriculumOutcome> {
    // Stage 1: pretrain everything on the curriculum tasks.
    let mut model = Model::new(config.model_config(&config.curriculum_tasks)?, seed);
    let mut stage1 = Vec::new();
    let c1 = config.train_config(&config.curriculum_tasks, config.stage1_batches, Frozen::none());
    train(&mut model, &c1, seed, &mut |row| stage1.push(row))?;
    let pretrained = model.clone();

    // Stage 2: freeze the core, re-initialize the output MLP for the targets.
    let target_ids = if config.target_tasks.len() > 1 {
        config.target_tasks.len()
    } else {
        0
    };
    let target_arity = config.model_config(&config.target_tasks)?.label_arity;
    model.reinit_output_mlp(seed.wrapping_add(1), target_ids, target_arity);

    // Stage 3: train the fresh MLP on the target tasks over the frozen core.
    let frozen_core = Frozen {
        cnn: true,
        central: true,
        mlp: false,
    };
    let mut stage3 = Vec::new();
    let c3 = config.train_config(&config.target_tasks, config.stage3_batches, frozen_core);
    train(&mut model, &c3, seed, &mut |row| stage3.push(row))?;

    // Stage 4: control with a frozen, freshly initialized central module on
    // top of the stage-1 CNN.
    let mut control = pretrained;
    control.reinit_central(seed.wrapping_add(2));
    control.reinit_output_mlp(seed.wrapping_add(3), target_ids, target_arity);
    let mut stage4 = Vec::new();
    train(&mut control, &c3, seed, &mut |row| stage4.push(row))?;

    Ok(CurriculumOutcome {
        stage_metrics: [stage1, Vec::new(), stage3, stage4],
        transfer_model: model,
        control_model: control,
    })
}
