//! Command-line harness for the relations-game laboratory.

use std::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use predinet::analysis::{
    attention_content_scores, attention_position_stats, attention_records, head_ablation,
    heat_grid, mlp_weight_magnitudes, pca, write_heat_csv, write_heat_overlay, AblationPolicy,
    AblationResult, CONTENT_THRESHOLD,
};
use predinet::game::{
    dump_png, enumerate_object_set, make_content_mask, sample_example, write_shard, ObjectSetId,
    Task,
};
use predinet::harness::{
    load_checkpoint, load_experiment, plot_curves, read_png, save_checkpoint, write_metrics_csv,
};
use predinet::nets::{ArchKind, Frozen, Model};
use predinet::protocol::{evaluate, run_curriculum, train, MetricsRow, Split};
use predinet::symbolic::{emit_prolog, DEFAULT_BANDWIDTH};
use predinet::tensor::Graph;

#[derive(Parser)]
#[command(name = "predinet", about = "Relations Game laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a shard of labelled examples to disk.
    Generate {
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "train")]
        set: String,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also dump each image as a PNG into this directory.
        #[arg(long)]
        png_dir: Option<PathBuf>,
    },
    /// Train per the config file, one run per seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the four-stage curriculum protocol per seed.
    Curriculum {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Measure accuracy of a checkpoint on fresh examples.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "hexominoes")]
        set: String,
        #[arg(long, default_value_t = 2000)]
        examples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Interpretability outputs: heatmaps, scores, PCA, weights, ablation.
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "train")]
        set: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also run the head-ablation study (PrediNet and MHA only).
        #[arg(long)]
        ablation: bool,
    },
    /// Emit the propositional program for one image.
    ExportProlog {
        #[arg(long)]
        ckpt: PathBuf,
        /// A 36x36 PNG; omitted, a fresh example is sampled.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value = "between")]
        task: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_BANDWIDTH)]
        bandwidth: f32,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn seeds_for(configured: &[u64], requested: Option<u64>) -> Vec<u64> {
    match requested {
        Some(s) => vec![s],
        None => configured.to_vec(),
    }
}

fn curve_series(rows: &[MetricsRow]) -> Vec<(String, Vec<(f32, f32)>)> {
    let mut series: Vec<(String, Vec<(f32, f32)>)> = Vec::new();
    for row in rows {
        let key = format!("{}/{}", row.task.name(), row.split.name());
        let entry = match series.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e,
            None => {
                series.push((key, Vec::new()));
                series.last_mut().unwrap()
            }
        };
        entry.1.push((row.batch as f32, row.accuracy));
    }
    series
}

fn write_ablation_csv(path: &std::path::Path, result: &AblationResult) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "retained,mean_accuracy,std_accuracy,trials")?;
    for p in &result.points {
        writeln!(
            w,
            "{},{},{},{}",
            p.retained, p.mean_accuracy, p.std_accuracy, p.trials
        )?;
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Box<dyn Error>> {
    match command {
        Command::Generate {
            task,
            set,
            count,
            seed,
            out,
            png_dir,
        } => {
            let task = Task::parse(&task)?;
            let set_id = ObjectSetId::parse(&set)?;
            let object_set = enumerate_object_set(set_id);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let examples: Vec<_> = (0..count)
                .map(|_| sample_example(task, &object_set, &mut rng))
                .collect();
            let header = predinet::game::ShardHeader {
                task,
                set: set_id,
                count: examples.len() as u32,
            };
            write_shard(&out, header, &examples)?;
            if let Some(dir) = png_dir {
                std::fs::create_dir_all(&dir)?;
                for (i, ex) in examples.iter().enumerate() {
                    dump_png(&dir.join(format!("{i:05}.png")), &ex.image)?;
                }
            }
            println!("wrote {count} examples to {}", out.display());
        }
        Command::Train { config, seed } => {
            let exp = load_experiment(&config)?;
            std::fs::create_dir_all(&exp.out_dir)?;
            for seed in seeds_for(&exp.seeds, seed) {
                let mut model = Model::new(exp.model, seed);
                let mut rows = Vec::new();
                train(&mut model, &exp.train, seed, &mut |r| rows.push(r))?;
                write_metrics_csv(&exp.out_dir.join(format!("metrics_seed{seed}.csv")), &rows)?;
                plot_curves(
                    &exp.out_dir.join(format!("curves_seed{seed}.png")),
                    &curve_series(&rows),
                )?;
                save_checkpoint(&model, &exp.out_dir.join(format!("final_seed{seed}.pnet")))?;
                if let Some(last) = rows.iter().rev().find(|r| r.split == Split::Train) {
                    println!(
                        "seed {seed}: final train accuracy {:.3} over {} batches",
                        last.accuracy, exp.train.batches
                    );
                }
            }
        }
        Command::Curriculum { config, seed } => {
            let exp = load_experiment(&config)?;
            let plan = exp
                .curriculum
                .ok_or("config has no [curriculum] section")?;
            std::fs::create_dir_all(&exp.out_dir)?;
            for seed in seeds_for(&exp.seeds, seed) {
                let outcome = run_curriculum(&plan, seed)?;
                for (i, rows) in outcome.stage_metrics.iter().enumerate() {
                    write_metrics_csv(
                        &exp.out_dir.join(format!("stage{}_seed{seed}.csv", i + 1)),
                        rows,
                    )?;
                }
                save_checkpoint(
                    &outcome.transfer_model,
                    &exp.out_dir.join(format!("transfer_seed{seed}.pnet")),
                )?;
                save_checkpoint(
                    &outcome.control_model,
                    &exp.out_dir.join(format!("control_seed{seed}.pnet")),
                )?;
                println!("seed {seed}: curriculum complete");
            }
        }
        Command::Eval {
            ckpt,
            task,
            set,
            examples,
            seed,
        } => {
            let model = load_checkpoint(&ckpt)?;
            let task = Task::parse(&task)?;
            let set_id = ObjectSetId::parse(&set)?;
            let (acc, loss) = evaluate(&model, task, set_id, None, examples, seed)?;
            println!(
                "{} on {}: accuracy {acc:.4}, loss {loss:.4} ({examples} examples)",
                task.name(),
                set_id.name()
            );
        }
        Command::Analyze {
            ckpt,
            task,
            set,
            out,
            probes,
            seed,
            ablation,
        } => {
            let model = load_checkpoint(&ckpt)?;
            let task = Task::parse(&task)?;
            let set_id = ObjectSetId::parse(&set)?;
            std::fs::create_dir_all(&out)?;
            analyze(&model, task, set_id, &out, probes, seed, ablation)?;
            println!("analysis written to {}", out.display());
        }
        Command::ExportProlog {
            ckpt,
            image,
            task,
            seed,
            bandwidth,
        } => {
            let model = load_checkpoint(&ckpt)?;
            let image = match image {
                Some(path) => read_png(&path)?,
                None => {
                    let task = Task::parse(&task)?;
                    let set = enumerate_object_set(ObjectSetId::TrainPentominoes);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    sample_example(task, &set, &mut rng).image
                }
            };
            print!("{}", emit_prolog(&model, &image, bandwidth)?);
        }
    }
    Ok(())
}

fn analyze(
    model: &Model,
    task: Task,
    set_id: ObjectSetId,
    out: &std::path::Path,
    probes: usize,
    seed: u64,
    ablation: bool,
) -> Result<(), Box<dyn Error>> {
    use std::io::Write;

    let set = enumerate_object_set(set_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(probes);
    let mut content = Vec::with_capacity(probes);
    for _ in 0..probes {
        let ex = sample_example(task, &set, &mut rng);
        content.push(make_content_mask(&ex, &set).flat());
        examples.push((ex.image, ex.label));
    }

    if model.config.arch == ArchKind::Predinet {
        let records = attention_records(model, &examples)?;

        // Heatmaps and overlays for the first probe image.
        for (h, pair) in records[0].masks.chunks(2).enumerate() {
            for (slot, mask) in pair.iter().enumerate() {
                let grid = heat_grid(mask);
                let stem = format!("head{h}_slot{}", slot + 1);
                write_heat_csv(&out.join(format!("{stem}.csv")), &grid)?;
                write_heat_overlay(&out.join(format!("{stem}.png")), &examples[0].0, &grid)?;
            }
        }

        let scores = attention_content_scores(&records, &content)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("content_scores.csv"))?);
        writeln!(w, "head,slot1,slot2")?;
        for (h, s) in scores.iter().enumerate() {
            writeln!(w, "{h},{},{}", s[0], s[1])?;
        }

        let stats = attention_position_stats(&records)?;
        let mut w =
            std::io::BufWriter::new(std::fs::File::create(out.join("position_stats.csv"))?);
        writeln!(w, "head,slot,mean_index,std_index")?;
        for (h, s) in stats.iter().enumerate() {
            for (slot, (mean, std)) in s.iter().enumerate() {
                writeln!(w, "{h},{},{mean},{std}", slot + 1)?;
            }
        }

        // Per-head PCA over the head's slice of the central output.
        let frozen = Frozen {
            cnn: true,
            central: true,
            mlp: true,
        };
        let slot_width = model.config.relations + 4;
        let mut head_vectors: Vec<Vec<Vec<f32>>> = vec![Vec::new(); model.config.heads];
        let mut labels = Vec::with_capacity(examples.len());
        for (image, label) in &examples {
            let mut g = Graph::new();
            let pass = model.forward(&mut g, std::slice::from_ref(image), None, frozen, None)?;
            let central = g.value(pass.per_image[0].central);
            for h in 0..model.config.heads {
                head_vectors[h].push(central.data()[h * slot_width..(h + 1) * slot_width].to_vec());
            }
            labels.push(*label);
        }
        for (h, vectors) in head_vectors.iter().enumerate() {
            let r = pca(vectors, &labels)?;
            let mut w = std::io::BufWriter::new(std::fs::File::create(
                out.join(format!("pca_head{h}.csv")),
            )?);
            writeln!(w, "pc1,pc2,label")?;
            for (p, label) in &r.projections {
                let x = p.first().copied().unwrap_or(0.0);
                let y = p.get(1).copied().unwrap_or(0.0);
                writeln!(w, "{x},{y},{label}")?;
            }
        }
    }

    let mags = mlp_weight_magnitudes(model);
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("mlp_weights.csv"))?);
    writeln!(w, "head,mean_abs_weight")?;
    for (h, m) in mags.iter().enumerate() {
        writeln!(w, "{h},{m}")?;
    }

    if ablation {
        let k = model.config.heads;
        let counts: Vec<usize> = (0..=k).step_by((k / 8).max(1)).collect();
        let random = head_ablation(
            model,
            task,
            set_id,
            AblationPolicy::Random,
            &counts,
            30,
            500,
            seed,
        )?;
        write_ablation_csv(&out.join("ablation_random.csv"), &random)?;
        if model.config.arch == ArchKind::Predinet {
            let informed = head_ablation(
                model,
                task,
                set_id,
                AblationPolicy::ObjectAttending {
                    content_threshold: CONTENT_THRESHOLD,
                },
                &counts,
                30,
                500,
                seed,
            )?;
            write_ablation_csv(&out.join("ablation_object_attending.csv"), &informed)?;
        }
    }
    Ok(())
}
