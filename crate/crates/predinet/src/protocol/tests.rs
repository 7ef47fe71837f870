use super::*;
use crate::game::Task;
use crate::nets::CentralParams;

fn tiny_model(arch: ArchKind, tasks: &[Task]) -> Model {
    let mut c = ModelConfig::new(arch);
    c.heads = 2;
    c.relations = 2;
    c.key_size = 4;
    c.task_count = if tasks.len() > 1 { tasks.len() } else { 0 };
    c.label_arity = tasks[0].label_arity();
    Model::new(c, 100)
}

fn quiet_config(tasks: &[Task], batches: usize) -> TrainConfig {
    TrainConfig {
        tasks: tasks.to_vec(),
        batches,
        start_batch: 0,
        batch_size: 2,
        optimizer: OptimizerSpec::Sgd { lr: 0.01 },
        frozen: Frozen::none(),
        eval_every: batches,
        eval_examples: 20,
        eval_sets: vec![],
    }
}

fn param_snapshot(model: &Model) -> Vec<Vec<f32>> {
    model.params().iter().map(|p| p.value.data().to_vec()).collect()
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let tasks = [Task::Same];
    let mut model = tiny_model(ArchKind::Mlp1, &tasks);
    let before = param_snapshot(&model);
    let mut config = quiet_config(&tasks, 1);
    config.optimizer = OptimizerSpec::Sgd { lr: 0.0 };
    train(&mut model, &config, 1, &mut |_| {}).unwrap();
    assert_eq!(param_snapshot(&model), before);
}

#[test]
fn frozen_groups_are_bit_identical_across_a_stage() {
    let tasks = [Task::Same];
    let mut model = tiny_model(ArchKind::Predinet, &tasks);
    let cnn_before = model.cnn.filters.value.data().to_vec();
    let central_before: Vec<Vec<f32>> = match &model.central {
        CentralParams::Predinet { w_k, w_s, w_q1, w_q2 } => [w_k, w_s]
            .into_iter()
            .chain(w_q1.iter())
            .chain(w_q2.iter())
            .map(|p| p.value.data().to_vec())
            .collect(),
        _ => unreachable!(),
    };
    let mlp_before = model.mlp.w1.value.data().to_vec();
    let mut config = quiet_config(&tasks, 30);
    config.frozen = Frozen {
        cnn: true,
        central: true,
        mlp: false,
    };
    train(&mut model, &config, 2, &mut |_| {}).unwrap();
    assert_eq!(model.cnn.filters.value.data(), &cnn_before[..]);
    let central_after: Vec<Vec<f32>> = match &model.central {
        CentralParams::Predinet { w_k, w_s, w_q1, w_q2 } => [w_k, w_s]
            .into_iter()
            .chain(w_q1.iter())
            .chain(w_q2.iter())
            .map(|p| p.value.data().to_vec())
            .collect(),
        _ => unreachable!(),
    };
    assert_eq!(central_after, central_before);
    assert_ne!(model.mlp.w1.value.data(), &mlp_before[..]);
}

#[test]
fn multi_task_sampling_is_uniform() {
    let tasks = [Task::Same, Task::Between, Task::Occurs];
    let mut model = tiny_model(ArchKind::Mlp1, &tasks);
    let mut config = quiet_config(&tasks, 3000);
    config.batch_size = 1;
    // Sampling statistics only; keep every group frozen so the run is
    // forward-only.
    config.frozen = Frozen {
        cnn: true,
        central: true,
        mlp: true,
    };
    let summary = train(&mut model, &config, 3, &mut |_| {}).unwrap();
    assert_eq!(summary.task_batches.iter().sum::<usize>(), 3000);
    for &count in &summary.task_batches {
        let freq = count as f32 / 3000.0;
        assert!((freq - 1.0 / 3.0).abs() < 0.05, "frequency {freq}");
    }
}

#[test]
fn untrained_models_sit_at_chance() {
    let binary = tiny_model(ArchKind::Mlp2, &[Task::Same]);
    let (acc, _) = evaluate(
        &binary,
        Task::Same,
        ObjectSetId::HoldoutHexominoes,
        None,
        2000,
        7,
    )
    .unwrap();
    assert!((acc - 0.5).abs() < 0.05, "binary chance accuracy {acc}");

    let four_way = tiny_model(ArchKind::Mlp2, &[Task::ColourShape]);
    let (acc, _) = evaluate(
        &four_way,
        Task::ColourShape,
        ObjectSetId::HoldoutHexominoes,
        None,
        2000,
        8,
    )
    .unwrap();
    assert!((acc - 0.25).abs() < 0.05, "four-way chance accuracy {acc}");
}

#[test]
fn evaluation_is_side_effect_free_and_deterministic() {
    let model = tiny_model(ArchKind::Predinet, &[Task::Between]);
    let run = || {
        evaluate(
            &model,
            Task::Between,
            ObjectSetId::HoldoutStripes,
            None,
            100,
            42,
        )
        .unwrap()
    };
    let (a1, l1) = run();
    let (a2, l2) = run();
    assert_eq!(a1, a2);
    assert_eq!(l1, l2);
}

#[test]
fn training_is_deterministic_for_fixed_seed() {
    let tasks = [Task::Same];
    let run = || {
        let mut model = tiny_model(ArchKind::Mlp1, &tasks);
        let mut config = quiet_config(&tasks, 10);
        config.eval_every = 5;
        config.eval_examples = 10;
        config.eval_sets = vec![ObjectSetId::HoldoutStripes];
        let mut rows = Vec::new();
        train(&mut model, &config, 11, &mut |r| rows.push(r)).unwrap();
        let metrics: Vec<(usize, f32, f32)> = rows
            .iter()
            .map(|r| (r.batch, r.accuracy, r.loss))
            .collect();
        (param_snapshot(&model), metrics)
    };
    assert_eq!(run(), run());
}

#[test]
fn config_validation_rejects_mismatches() {
    let mut model = tiny_model(ArchKind::Mlp1, &[Task::Same]);
    // Mixed arity in one stage.
    let config = quiet_config(&[Task::Same, Task::ColourShape], 1);
    assert!(train(&mut model, &config, 1, &mut |_| {}).is_err());
    // Multi-task list against a model without task-id inputs.
    let config = quiet_config(&[Task::Same, Task::Between], 1);
    assert!(train(&mut model, &config, 1, &mut |_| {}).is_err());
    // Empty task list.
    let config = quiet_config(&[], 1);
    assert!(train(&mut model, &config, 1, &mut |_| {}).is_err());
}

#[test]
fn curriculum_stages_share_the_cnn_and_differ_in_the_core() {
    let config = CurriculumConfig {
        arch: ArchKind::Predinet,
        heads: 2,
        relations: 2,
        key_size: 4,
        curriculum_tasks: vec![Task::Between],
        target_tasks: vec![Task::ColumnPattern(crate::game::Pattern::Aab)],
        stage1_batches: 4,
        stage3_batches: 4,
        batch_size: 2,
        optimizer: OptimizerSpec::Sgd { lr: 0.01 },
        eval_every: 4,
        eval_examples: 10,
        eval_sets: vec![ObjectSetId::HoldoutStripes],
    };
    let out = run_curriculum(&config, 21).unwrap();
    // Stage 2 trains nothing.
    assert!(out.stage_metrics[1].is_empty());
    assert!(!out.stage_metrics[0].is_empty());
    assert!(!out.stage_metrics[2].is_empty());
    assert!(!out.stage_metrics[3].is_empty());
    // Both final models carry the stage-1 CNN, bit for bit.
    assert_eq!(
        out.transfer_model.cnn.filters.value.data(),
        out.control_model.cnn.filters.value.data()
    );
    // The control's central module is a fresh draw, not the pretrained one.
    let (a, b) = match (&out.transfer_model.central, &out.control_model.central) {
        (
            CentralParams::Predinet { w_k: a, .. },
            CentralParams::Predinet { w_k: b, .. },
        ) => (a, b),
        _ => unreachable!(),
    };
    assert_ne!(a.value.data(), b.value.data());
    // Output heads were rebuilt for the target task.
    assert_eq!(out.transfer_model.config.label_arity, 2);
    assert_eq!(out.transfer_model.config.task_count, 0);
}
