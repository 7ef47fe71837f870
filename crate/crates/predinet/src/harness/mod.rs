//! Experiment plumbing: key=value config files, checkpoint persistence,
//! metrics CSV output, and a small PNG learning-curve plotter.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::game::{GameError, ObjectSetId, Task};
use crate::nets::{ArchKind, Model, ModelConfig, NetError};
use crate::protocol::{CurriculumConfig, MetricsRow, OptimizerSpec, TrainConfig};
use crate::tensor::Tensor;


/// Environment variable that, when set, is prepended to the configured
/// output directory.
pub const OUTPUT_ROOT_ENV: &str = "PREDINET_OUT";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint corrupt at byte {offset}: {message}")]
    Corrupt { offset: usize, message: String },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

// ---------------------------------------------------------------------------
// Config files: flat key=value lines under [section] headers, `#` comments.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    sections: Vec<(String, Vec<(String, String)>)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<(String, Vec<(String, String)>)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                sections.push((name.trim().to_string(), Vec::new()));
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1))
            })?;
            let section = sections.last_mut().ok_or_else(|| {
                HarnessError::Config(format!("line {}: key before any [section]", i + 1))
            })?;
            section
                .1
                .push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(RawConfig { sections })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .iter()
            .filter(|(name, _)| name == section)
            .flat_map(|(_, kv)| kv.iter())
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.iter().any(|(name, _)| name == section)
    }

    fn parsed<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                HarnessError::Config(format!("[{section}] {key}: cannot parse `{v}`"))
            }),
        }
    }
}

fn parse_tasks(value: &str) -> Result<Vec<Task>> {
    value
        .split(',')
        .map(|t| Task::parse(t).map_err(HarnessError::Game))
        .collect()
}

fn parse_sets(value: &str) -> Result<Vec<ObjectSetId>> {
    value
        .split(',')
        .map(|s| ObjectSetId::parse(s.trim()).map_err(HarnessError::Game))
        .collect()
}

fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad seed `{s}`")))
        })
        .collect()
}

/// A fully resolved experiment: model shape, training plan, optional
/// curriculum, seeds, and output directory.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub curriculum: Option<CurriculumConfig>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

/// Builds an [`Experiment`] from a config file. Unspecified keys fall back
/// to the standard defaults (SGD 0.01, batch 10, k=32, j=16, g=16).
pub fn load_experiment(path: &Path) -> Result<Experiment> {
    let raw = RawConfig::load(path)?;

    let arch = ArchKind::parse(raw.get("model", "arch").unwrap_or("predinet"))
        .map_err(HarnessError::Net)?;
    let mut model = ModelConfig::new(arch);
    model.heads = raw.parsed("model", "heads", model.heads)?;
    model.relations = raw.parsed("model", "relations", model.relations)?;
    model.key_size = raw.parsed("model", "key_size", model.key_size)?;

    let tasks = parse_tasks(raw.get("train", "tasks").unwrap_or("same"))?;
    model.task_count = if tasks.len() > 1 { tasks.len() } else { 0 };
    model.label_arity = tasks[0].label_arity();

    let optimizer = match raw.get("train", "optimizer").unwrap_or("sgd") {
        "sgd" => OptimizerSpec::Sgd {
            lr: raw.parsed("train", "lr", 0.01)?,
        },
        "adam" => OptimizerSpec::Adam {
            lr: raw.parsed("train", "lr", 1e-4)?,
        },
        other => {
            return Err(HarnessError::Config(format!("unknown optimizer `{other}`")));
        }
    };
    let eval_sets = match raw.get("train", "eval_sets") {
        Some(v) => parse_sets(v)?,
        None => vec![ObjectSetId::HoldoutHexominoes, ObjectSetId::HoldoutStripes],
    };
    let train = TrainConfig {
        tasks,
        batches: raw.parsed("train", "batches", 100_000)?,
        start_batch: 0,
        batch_size: raw.parsed("train", "batch_size", 10)?,
        optimizer,
        frozen: Default::default(),
        eval_every: raw.parsed("train", "eval_every", 500)?,
        eval_examples: raw.parsed("train", "eval_examples", 2000)?,
        eval_sets: eval_sets.clone(),
    };

    let curriculum = if raw.has_section("curriculum") {
        let curriculum_tasks = parse_tasks(
            raw.get("curriculum", "curriculum_tasks")
                .ok_or_else(|| HarnessError::Config("[curriculum] curriculum_tasks missing".into()))?,
        )?;
        let target_tasks = parse_tasks(
            raw.get("curriculum", "target_tasks")
                .ok_or_else(|| HarnessError::Config("[curriculum] target_tasks missing".into()))?,
        )?;
        Some(CurriculumConfig {
            arch,
            heads: model.heads,
            relations: model.relations,
            key_size: model.key_size,
            curriculum_tasks,
            target_tasks,
            stage1_batches: raw.parsed("curriculum", "stage1_batches", 100_000)?,
            stage3_batches: raw.parsed("curriculum", "stage3_batches", 100_000)?,
            batch_size: train.batch_size,
            optimizer,
            eval_every: train.eval_every,
            eval_examples: train.eval_examples,
            eval_sets,
        })
    } else {
        None
    };

    let seeds = match raw.get("train", "seeds") {
        Some(v) => parse_seeds(v)?,
        None => vec![0],
    };
    if seeds.is_empty() {
        return Err(HarnessError::Config("seeds must be nonempty".into()));
    }

    let dir = raw.get("output", "dir").unwrap_or("runs");
    let out_dir = match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(dir),
        None => PathBuf::from(dir),
    };

    Ok(Experiment {
        model,
        train,
        curriculum,
        seeds,
        out_dir,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints.
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 5] = b"PNET1";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn config_echo(c: &ModelConfig) -> String {
    format!(
        "arch={} heads={} relations={} key_size={} task_count={} label_arity={}",
        c.arch.name(),
        c.heads,
        c.relations,
        c.key_size,
        c.task_count,
        c.label_arity
    )
}

fn parse_config_echo(s: &str) -> Result<ModelConfig> {
    let mut fields = std::collections::HashMap::new();
    for pair in s.split_whitespace() {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("bad config echo `{s}`")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| HarnessError::Config(format!("config echo missing `{k}`")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| HarnessError::Config(format!("bad config echo field `{k}`")))
    };
    Ok(ModelConfig {
        arch: ArchKind::parse(get("arch")?).map_err(HarnessError::Net)?,
        heads: num("heads")?,
        relations: num("relations")?,
        key_size: num("key_size")?,
        task_count: num("task_count")?,
        label_arity: num("label_arity")?,
    })
}

/// Serializes every named parameter: magic, config echo, tensor table,
/// trailing FNV-1a checksum. All integers little-endian.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    let echo = config_echo(&model.config);
    buf.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    buf.extend_from_slice(echo.as_bytes());
    let params = model.params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a(&buf[CKPT_MAGIC.len()..]);
    buf.extend_from_slice(&checksum.to_le_bytes());
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(HarnessError::Corrupt {
                offset: self.pos,
                message: format!("file truncated while reading {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint written by [`save_checkpoint`]. The returned model is
/// bit-identical to the saved one; corrupt or truncated files fail cleanly
/// with the offending byte offset.
pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(CKPT_MAGIC.len(), "magic")? != CKPT_MAGIC {
        return Err(HarnessError::Corrupt {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    if bytes.len() < CKPT_MAGIC.len() + 8 {
        return Err(HarnessError::Corrupt {
            offset: bytes.len(),
            message: "file truncated before checksum".into(),
        });
    }
    let body = &bytes[CKPT_MAGIC.len()..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let actual = fnv1a(body);
    if stored != actual {
        return Err(HarnessError::Corrupt {
            offset: bytes.len() - 8,
            message: format!("checksum mismatch: stored {stored:016x}, computed {actual:016x}"),
        });
    }

    let echo_len = r.u32("config length")? as usize;
    let echo = std::str::from_utf8(r.take(echo_len, "config echo")?)
        .map_err(|_| HarnessError::Corrupt {
            offset: r.pos,
            message: "config echo is not utf-8".into(),
        })?
        .to_string();
    let config = parse_config_echo(&echo)?;
    let mut model = Model::new(config, 0);

    let count = r.u32("tensor count")? as usize;
    let mut loaded: Vec<(String, Tensor)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| HarnessError::Corrupt {
                offset: r.pos,
                message: "tensor name is not utf-8".into(),
            })?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(4 * numel, "tensor data")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        loaded.push((name, Tensor::new(shape, data)));
    }
    if r.pos != bytes.len() - 8 {
        return Err(HarnessError::Corrupt {
            offset: r.pos,
            message: "trailing bytes before checksum".into(),
        });
    }

    let mut params = model.params_mut();
    if loaded.len() != params.len() {
        return Err(HarnessError::Config(format!(
            "checkpoint has {} tensors, model expects {}",
            loaded.len(),
            params.len()
        )));
    }
    for (name, tensor) in loaded {
        let param = params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| HarnessError::Config(format!("unexpected tensor `{name}`")))?;
        if param.value.shape() != tensor.shape() {
            return Err(HarnessError::Config(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                tensor.shape(),
                param.value.shape()
            )));
        }
        param.value = tensor;
        param.grad = None;
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// Metrics and figures.
// ---------------------------------------------------------------------------

pub const METRICS_HEADER: &str = "batch,task,split,accuracy,loss,seed";

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.batch,
            r.task.name(),
            r.split.name(),
            r.accuracy,
            r.loss,
            r.seed
        )?;
    }
    Ok(())
}

const PLOT_W: u32 = 640;
const PLOT_H: u32 = 400;
const PLOT_MARGIN: u32 = 40;

const PLOT_COLOURS: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

/// Renders accuracy-vs-batch line charts (y fixed to [0, 1]) into a PNG.
pub fn plot_curves(path: &Path, series: &[(String, Vec<(f32, f32)>)]) -> Result<()> {
    let mut img = image::RgbImage::from_pixel(PLOT_W, PLOT_H, image::Rgb([255, 255, 255]));
    let (x0, y0) = (PLOT_MARGIN, PLOT_H - PLOT_MARGIN);
    let (x1, y1) = (PLOT_W - PLOT_MARGIN / 2, PLOT_MARGIN / 2);
    for x in x0..=x1 {
        img.put_pixel(x, y0, image::Rgb([0, 0, 0]));
        img.put_pixel(x, y1, image::Rgb([220, 220, 220]));
    }
    for y in y1..=y0 {
        img.put_pixel(x0, y, image::Rgb([0, 0, 0]));
    }
    let max_batch = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|&(b, _)| b))
        .fold(1.0f32, f32::max);
    let project = |batch: f32, acc: f32| -> (i64, i64) {
        let px = x0 as f32 + (batch / max_batch) * (x1 - x0) as f32;
        let py = y0 as f32 - acc.clamp(0.0, 1.0) * (y0 - y1) as f32;
        (px.round() as i64, py.round() as i64)
    };
    for (i, (_, pts)) in series.iter().enumerate() {
        let colour = image::Rgb(PLOT_COLOURS[i % PLOT_COLOURS.len()]);
        for pair in pts.windows(2) {
            let (ax, ay) = project(pair[0].0, pair[0].1);
            let (bx, by) = project(pair[1].0, pair[1].1);
            let steps = (bx - ax).abs().max((by - ay).abs()).max(1);
            for s in 0..=steps {
                let x = ax + (bx - ax) * s / steps;
                let y = ay + (by - ay) * s / steps;
                if (0..PLOT_W as i64).contains(&x) && (0..PLOT_H as i64).contains(&y) {
                    img.put_pixel(x as u32, y as u32, colour);
                }
            }
        }
    }
    img.save(path)
        .map_err(|e| HarnessError::Config(format!("plot write failed: {e}")))?;
    Ok(())
}

/// Loads a 36x36 RGB PNG as a `[36, 36, 3]` tensor in [0, 1].
pub fn read_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {path:?}: {e}")))?
        .to_rgb8();
    if img.dimensions() != (36, 36) {
        return Err(HarnessError::Config(format!(
            "expected a 36x36 image, got {:?}",
            img.dimensions()
        )));
    }
    let mut data = Vec::with_capacity(36 * 36 * 3);
    for y in 0..36 {
        for x in 0..36 {
            let px = img.get_pixel(x, y);
            for c in 0..3 {
                data.push(px[c] as f32 / 255.0);
            }
        }
    }
    Ok(Tensor::new(vec![36, 36, 3], data))
}
