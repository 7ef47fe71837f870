//! The five architectures under comparison: a shared CNN front end, one of
//! five "central" modules, and a small output MLP.
//!
//! Parameters live outside the graph as [`Param`] structs. Each forward call
//! binds them into a fresh [`Graph`] (as trainable params or frozen leaves),
//! builds one subgraph per image, and concatenates the per-image logits into
//! a `[batch, arity]` matrix. After `backward`, [`Model::accumulate_grads`]
//! copies gradients back into the owning `Param`s by name.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{init_params, Graph, InitScheme, NodeId, Param, Tensor, TensorError};

#[cfg(test)]
mod tests;

/// Rows of the convolved feature map: 5 x 5 spatial positions.
pub const FEATURE_ROWS: usize = 25;
/// Columns of the feature map: 32 channels plus (x, y) coordinates.
pub const FEATURE_COLS: usize = 34;
pub const CNN_CHANNELS: usize = 32;
pub const CONV_FILTER: usize = 12;
pub const CONV_STRIDE: usize = 6;
/// Hidden width of the output MLP.
pub const OUTPUT_HIDDEN: usize = 8;
/// Hidden width of the relation network's pair MLP.
pub const RN_HIDDEN: usize = 256;
/// Hidden width of the two-layer MLP baseline.
pub const MLP2_HIDDEN: usize = 1024;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    Predinet,
    Mlp1,
    Mlp2,
    Rn,
    Mha,
}

impl ArchKind {
    pub const ALL: [ArchKind; 5] = [
        ArchKind::Predinet,
        ArchKind::Mlp1,
        ArchKind::Mlp2,
        ArchKind::Rn,
        ArchKind::Mha,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Predinet => "predinet",
            ArchKind::Mlp1 => "mlp1",
            ArchKind::Mlp2 => "mlp2",
            ArchKind::Rn => "rn",
            ArchKind::Mha => "mha",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| NetError::Config(format!("unknown architecture `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub arch: ArchKind,
    /// Number of heads `k` (PrediNet and MHA).
    pub heads: usize,
    /// Relations per head `j`.
    pub relations: usize,
    /// Key/query size `g`.
    pub key_size: usize,
    /// Width of the one-hot task identifier appended to the central output;
    /// 0 in single-task mode.
    pub task_count: usize,
    /// Number of output classes.
    pub label_arity: usize,
}

impl ModelConfig {
    pub fn new(arch: ArchKind) -> Self {
        ModelConfig {
            arch,
            heads: 32,
            relations: 16,
            key_size: 16,
            task_count: 0,
            label_arity: 2,
        }
    }

    /// Width of the central module's output vector: `k * (j + 4)`.
    pub fn central_width(&self) -> usize {
        self.heads * (self.relations + 4)
    }
}

#[derive(Debug, Clone)]
pub struct CnnParams {
    pub filters: Param,
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct MhaHeadParams {
    pub w_q: Param,
    pub w_k: Param,
    pub w_v: Param,
    /// Learned mixing weights over the 25 attended rows.
    pub mix: Param,
}

#[derive(Debug, Clone)]
pub enum CentralParams {
    Predinet {
        /// Shared key projection, `[34, g]`.
        w_k: Param,
        /// Shared relation projection, `[34, j]`.
        w_s: Param,
        /// Per-head query projections from the flattened map, `[850, g]`.
        w_q1: Vec<Param>,
        w_q2: Vec<Param>,
    },
    Mha {
        heads: Vec<MhaHeadParams>,
    },
    Rn {
        w1: Param,
        w2: Param,
    },
    Mlp1 {
        w: Param,
        b: Param,
    },
    Mlp2 {
        w1: Param,
        b1: Param,
        w2: Param,
        b2: Param,
    },
}

#[derive(Debug, Clone)]
pub struct OutputMlpParams {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
}

/// Which parameter groups are excluded from gradient computation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Frozen {
    pub cnn: bool,
    pub central: bool,
    pub mlp: bool,
}

impl Frozen {
    pub fn none() -> Self {
        Frozen::default()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub cnn: CnnParams,
    pub central: CentralParams,
    pub mlp: OutputMlpParams,
}

fn weight(name: &str, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Param {
    Param::new(name, init_params(shape, rng, InitScheme::fan_in(fan_in)))
}

fn zeros(name: &str, shape: &[usize]) -> Param {
    Param::new(name, Tensor::zeros(shape))
}

fn make_central(config: &ModelConfig, rng: &mut ChaCha8Rng) -> CentralParams {
    let (k, j, g) = (config.heads, config.relations, config.key_size);
    let flat = FEATURE_ROWS * FEATURE_COLS;
    match config.arch {
        ArchKind::Predinet => CentralParams::Predinet {
            w_k: weight("central.w_k", &[FEATURE_COLS, g], FEATURE_COLS, rng),
            w_s: weight("central.w_s", &[FEATURE_COLS, j], FEATURE_COLS, rng),
            w_q1: (0..k)
                .map(|h| weight(&format!("central.w_q1.{h}"), &[flat, g], flat, rng))
                .collect(),
            w_q2: (0..k)
                .map(|h| weight(&format!("central.w_q2.{h}"), &[flat, g], flat, rng))
                .collect(),
        },
        ArchKind::Mha => CentralParams::Mha {
            heads: (0..k)
                .map(|h| MhaHeadParams {
                    w_q: weight(
                        &format!("central.{h}.w_q"),
                        &[FEATURE_COLS, g],
                        FEATURE_COLS,
                        rng,
                    ),
                    w_k: weight(
                        &format!("central.{h}.w_k"),
                        &[FEATURE_COLS, g],
                        FEATURE_COLS,
                        rng,
                    ),
                    w_v: weight(
                        &format!("central.{h}.w_v"),
                        &[FEATURE_COLS, j + 4],
                        FEATURE_COLS,
                        rng,
                    ),
                    mix: weight(&format!("central.{h}.mix"), &[1, FEATURE_ROWS], FEATURE_ROWS, rng),
                })
                .collect(),
        },
        ArchKind::Rn => CentralParams::Rn {
            w1: weight(
                "central.w1",
                &[2 * FEATURE_COLS, RN_HIDDEN],
                2 * FEATURE_COLS,
                rng,
            ),
            w2: weight(
                "central.w2",
                &[RN_HIDDEN, config.central_width()],
                RN_HIDDEN,
                rng,
            ),
        },
        ArchKind::Mlp1 => CentralParams::Mlp1 {
            w: weight("central.w", &[flat, config.central_width()], flat, rng),
            b: zeros("central.b", &[config.central_width()]),
        },
        ArchKind::Mlp2 => CentralParams::Mlp2 {
            w1: weight("central.w1", &[flat, MLP2_HIDDEN], flat, rng),
            b1: zeros("central.b1", &[MLP2_HIDDEN]),
            w2: weight(
                "central.w2",
                &[MLP2_HIDDEN, config.central_width()],
                MLP2_HIDDEN,
                rng,
            ),
            b2: zeros("central.b2", &[config.central_width()]),
        },
    }
}

fn make_output_mlp(config: &ModelConfig, rng: &mut ChaCha8Rng) -> OutputMlpParams {
    let input = config.central_width() + config.task_count;
    OutputMlpParams {
        w1: weight("mlp.w1", &[input, OUTPUT_HIDDEN], input, rng),
        b1: zeros("mlp.b1", &[OUTPUT_HIDDEN]),
        w2: weight(
            "mlp.w2",
            &[OUTPUT_HIDDEN, config.label_arity],
            OUTPUT_HIDDEN,
            rng,
        ),
        b2: zeros("mlp.b2", &[config.label_arity]),
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan = CONV_FILTER * CONV_FILTER * 3;
        let cnn = CnnParams {
            filters: weight(
                "cnn.filters",
                &[CONV_FILTER, CONV_FILTER, 3, CNN_CHANNELS],
                fan,
                &mut rng,
            ),
            bias: zeros("cnn.bias", &[CNN_CHANNELS]),
        };
        let central = make_central(&config, &mut rng);
        let mlp = make_output_mlp(&config, &mut rng);
        Model {
            config,
            cnn,
            central,
            mlp,
        }
    }

    /// Reinitializes the central module in place (curriculum stage 2).
    pub fn reinit_central(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.central = make_central(&self.config, &mut rng);
    }

    /// Replaces the output MLP with a freshly initialized one sized for
    /// `task_count` appended task bits and `label_arity` classes.
    pub fn reinit_output_mlp(&mut self, seed: u64, task_count: usize, label_arity: usize) {
        self.config.task_count = task_count;
        self.config.label_arity = label_arity;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.mlp = make_output_mlp(&self.config, &mut rng);
    }

    fn central_params(&self) -> Vec<&Param> {
        match &self.central {
            CentralParams::Predinet {
                w_k,
                w_s,
                w_q1,
                w_q2,
            } => {
                let mut v = vec![w_k, w_s];
                v.extend(w_q1.iter());
                v.extend(w_q2.iter());
                v
            }
            CentralParams::Mha { heads } => heads
                .iter()
                .flat_map(|h| [&h.w_q, &h.w_k, &h.w_v, &h.mix])
                .collect(),
            CentralParams::Rn { w1, w2 } => vec![w1, w2],
            CentralParams::Mlp1 { w, b } => vec![w, b],
            CentralParams::Mlp2 { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
        }
    }

    /// All parameters in a fixed, deterministic order.
    pub fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.cnn.filters, &self.cnn.bias];
        v.extend(self.central_params());
        v.extend([&self.mlp.w1, &self.mlp.b1, &self.mlp.w2, &self.mlp.b2]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let (cnn, central, mlp) = (&mut self.cnn, &mut self.central, &mut self.mlp);
        let mut v = vec![&mut cnn.filters, &mut cnn.bias];
        v.extend(match central {
            CentralParams::Predinet {
                w_k,
                w_s,
                w_q1,
                w_q2,
            } => {
                let mut c: Vec<&mut Param> = vec![w_k, w_s];
                c.extend(w_q1.iter_mut());
                c.extend(w_q2.iter_mut());
                c
            }
            CentralParams::Mha { heads } => heads
                .iter_mut()
                .flat_map(|h| [&mut h.w_q, &mut h.w_k, &mut h.w_v, &mut h.mix])
                .collect(),
            CentralParams::Rn { w1, w2 } => vec![w1, w2],
            CentralParams::Mlp1 { w, b } => vec![w, b],
            CentralParams::Mlp2 { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
        });
        v.extend([&mut mlp.w1, &mut mlp.b1, &mut mlp.w2, &mut mlp.b2]);
        v
    }

    /// Parameters that should receive optimizer updates under `frozen`.
    pub fn trainable_params_mut(&mut self, frozen: Frozen) -> Vec<&mut Param> {
        let n_central = self.central_params().len();
        let all = self.params_mut();
        all.into_iter()
            .enumerate()
            .filter(|(i, _)| {
                if *i < 2 {
                    !frozen.cnn
                } else if *i < 2 + n_central {
                    !frozen.central
                } else {
                    !frozen.mlp
                }
            })
            .map(|(_, p)| p)
            .collect()
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        images: &[Tensor],
        task_index: Option<usize>,
        frozen: Frozen,
        head_mask: Option<&[bool]>,
    ) -> Result<ForwardPass> {
        if images.is_empty() {
            return Err(NetError::Config("forward on empty batch".into()));
        }
        match (self.config.task_count, task_index) {
            (0, None) => {}
            (t, Some(i)) if i < t => {}
            (t, i) => {
                return Err(NetError::Config(format!(
                    "task_index {i:?} incompatible with task_count {t}"
                )))
            }
        }
        if let Some(mask) = head_mask {
            if mask.len() != self.config.heads {
                return Err(NetError::Config(format!(
                    "head mask has {} entries for {} heads",
                    mask.len(),
                    self.config.heads
                )));
            }
            if !matches!(
                self.config.arch,
                ArchKind::Predinet | ArchKind::Mha
            ) {
                return Err(NetError::Config(format!(
                    "head mask not applicable to {}",
                    self.config.arch.name()
                )));
            }
        }

        let bound = BoundModel::bind(self, g, frozen);
        let coords = g.leaf(coordinate_columns());
        let mask_node = match head_mask {
            Some(mask) => {
                let slot = self.config.relations + 4;
                let mut data = Vec::with_capacity(self.config.heads * slot);
                for &keep in mask {
                    data.extend(std::iter::repeat(if keep { 1.0 } else { 0.0 }).take(slot));
                }
                Some(Tensor::new(vec![1, data.len()], data))
            }
            None => None,
        };
        let task_node = task_index.map(|i| g.leaf(Tensor::one_hot(&[i], self.config.task_count)));

        let mut per_image = Vec::with_capacity(images.len());
        let mut logit_rows = Vec::with_capacity(images.len());
        for img in images {
            // Pixels arrive in [0, 1]; the CNN sees them remapped to [-1, 1].
            // With a black background the raw range leaves most feature rows
            // near zero and plain SGD never leaves the chance plateau.
            let mut centred = img.clone();
            for v in centred.data_mut() {
                *v = 2.0 * *v - 1.0;
            }
            let img_node = g.leaf(centred);
            let fmap = cnn_forward(g, img_node, bound.cnn_filters, bound.cnn_bias, coords)?;
            let (central_raw, attention) =
                central_forward(g, &self.config, &bound, fmap)?;
            let central = match &mask_node {
                Some(m) => g.mul_const(central_raw, m.clone())?,
                None => central_raw,
            };
            let mlp_in = match task_node {
                Some(t) => g.concat_cols(&[central, t])?,
                None => central,
            };
            let h = g.matmul(mlp_in, bound.mlp_w1)?;
            let h = g.add_bias(h, bound.mlp_b1)?;
            let h = g.relu(h);
            let out = g.matmul(h, bound.mlp_w2)?;
            let logits = g.add_bias(out, bound.mlp_b2)?;
            logit_rows.push(logits);
            per_image.push(ImageTrace {
                feature_map: fmap,
                central,
                attention,
            });
        }
        let logits = g.concat_rows(&logit_rows)?;
        Ok(ForwardPass {
            logits,
            per_image,
            bound: bound.trainable,
        })
    }

    /// Copies gradients for every trainable bound parameter back into the
    /// owning [`Param`], accumulating across calls.
    pub fn accumulate_grads(&mut self, g: &Graph, pass: &ForwardPass) -> Result<()> {
        for (name, id) in &pass.bound {
            let grad = g.grad(*id).ok_or_else(|| {
                TensorError::MissingGrad { name: name.clone() }
            })?;
            let grad = grad.clone();
            let param = self
                .params_mut()
                .into_iter()
                .find(|p| &p.name == name)
                .ok_or_else(|| NetError::Config(format!("unknown parameter `{name}`")))?;
            param.accumulate_grad(&grad);
        }
        Ok(())
    }
}

/// One forward pass over a batch. `logits` has shape `[batch, arity]`.
pub struct ForwardPass {
    pub logits: NodeId,
    pub per_image: Vec<ImageTrace>,
    /// Names and graph ids of the parameters bound as trainable.
    bound: Vec<(String, NodeId)>,
}

impl ForwardPass {
    /// Names and graph ids of the parameters bound as trainable.
    pub fn bound(&self) -> &[(String, NodeId)] {
        &self.bound
    }
}

/// Graph handles retained per image for analysis.
pub struct ImageTrace {
    /// `[25, 34]` feature map (channels plus coordinates).
    pub feature_map: NodeId,
    /// Central module output, `[1, k(j+4)]`, after any head mask.
    pub central: NodeId,
    /// PrediNet: `2k` attention rows `[1, 25]`, ordered `A1, A2` per head.
    /// MHA: `k` attention matrices `[25, 25]`. Empty otherwise.
    pub attention: Vec<NodeId>,
}

struct BoundModel {
    cnn_filters: NodeId,
    cnn_bias: NodeId,
    central: Vec<NodeId>,
    mlp_w1: NodeId,
    mlp_b1: NodeId,
    mlp_w2: NodeId,
    mlp_b2: NodeId,
    trainable: Vec<(String, NodeId)>,
}

impl BoundModel {
    fn bind(model: &Model, g: &mut Graph, frozen: Frozen) -> BoundModel {
        let mut trainable = Vec::new();
        let mut bind_one = |g: &mut Graph, p: &Param, train: bool| {
            if train {
                let id = g.param(p.value.clone());
                trainable.push((p.name.clone(), id));
                id
            } else {
                g.leaf(p.value.clone())
            }
        };
        let cnn_filters = bind_one(g, &model.cnn.filters, !frozen.cnn);
        let cnn_bias = bind_one(g, &model.cnn.bias, !frozen.cnn);
        let central = model
            .central_params()
            .into_iter()
            .map(|p| bind_one(g, p, !frozen.central))
            .collect();
        let mlp_w1 = bind_one(g, &model.mlp.w1, !frozen.mlp);
        let mlp_b1 = bind_one(g, &model.mlp.b1, !frozen.mlp);
        let mlp_w2 = bind_one(g, &model.mlp.w2, !frozen.mlp);
        let mlp_b2 = bind_one(g, &model.mlp.b2, !frozen.mlp);
        BoundModel {
            cnn_filters,
            cnn_bias,
            central,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
            trainable,
        }
    }
}

/// The constant `[25, 2]` coordinate columns appended to the CNN output:
/// row `5r + c` carries `(c/4, r/4)`.
pub fn coordinate_columns() -> Tensor {
    let mut data = Vec::with_capacity(FEATURE_ROWS * 2);
    for r in 0..5 {
        for c in 0..5 {
            data.push(c as f32 / 4.0);
            data.push(r as f32 / 4.0);
        }
    }
    Tensor::new(vec![FEATURE_ROWS, 2], data)
}

/// Convolved feature map: conv (F=12, stride 6, 32 channels, bias), ReLU,
/// reshaped to `[25, 32]` and extended with the coordinate columns.
fn cnn_forward(
    g: &mut Graph,
    img: NodeId,
    filters: NodeId,
    bias: NodeId,
    coords: NodeId,
) -> Result<NodeId> {
    let conv = g.conv2d(img, filters, bias, CONV_STRIDE)?;
    let conv = g.relu(conv);
    let channels = g.reshape(conv, vec![FEATURE_ROWS, CNN_CHANNELS])?;
    Ok(g.concat_cols(&[channels, coords])?)
}

fn central_forward(
    g: &mut Graph,
    config: &ModelConfig,
    bound: &BoundModel,
    fmap: NodeId,
) -> Result<(NodeId, Vec<NodeId>)> {
    let (k, j) = (config.heads, config.relations);
    match config.arch {
        ArchKind::Predinet => {
            // Bound order: w_k, w_s, w_q1[0..k], w_q2[0..k].
            let (w_k, w_s) = (bound.central[0], bound.central[1]);
            let flat = g.flatten(fmap);
            let keys = g.matmul(fmap, w_k)?;
            let keys_t = g.transpose(keys)?;
            let mut heads = Vec::with_capacity(k);
            let mut attention = Vec::with_capacity(2 * k);
            for h in 0..k {
                let attend = |g: &mut Graph, w_q: NodeId| -> Result<(NodeId, NodeId)> {
                    let q = g.matmul(flat, w_q)?;
                    let scores = g.matmul(q, keys_t)?;
                    let a = g.softmax_rows(scores)?;
                    Ok((g.matmul(a, fmap)?, a))
                };
                let (e1, a1) = attend(g, bound.central[2 + h])?;
                let (e2, a2) = attend(g, bound.central[2 + k + h])?;
                let s1 = g.matmul(e1, w_s)?;
                let s2 = g.matmul(e2, w_s)?;
                let d = g.sub(s1, s2)?;
                let p1 = g.slice_cols(e1, CNN_CHANNELS, FEATURE_COLS)?;
                let p2 = g.slice_cols(e2, CNN_CHANNELS, FEATURE_COLS)?;
                heads.push(g.concat_cols(&[d, p1, p2])?);
                attention.push(a1);
                attention.push(a2);
            }
            Ok((g.concat_cols(&heads)?, attention))
        }
        ArchKind::Mha => {
            let mut heads = Vec::with_capacity(k);
            let mut attention = Vec::with_capacity(k);
            for h in 0..k {
                let base = 4 * h;
                let q = g.matmul(fmap, bound.central[base])?;
                let keys = g.matmul(fmap, bound.central[base + 1])?;
                let v = g.matmul(fmap, bound.central[base + 2])?;
                let keys_t = g.transpose(keys)?;
                let scores = g.matmul(q, keys_t)?;
                let a = g.softmax_rows(scores)?;
                let attended = g.matmul(a, v)?;
                heads.push(g.matmul(bound.central[base + 3], attended)?);
                attention.push(a);
            }
            Ok((g.concat_cols(&heads)?, attention))
        }
        ArchKind::Rn => {
            let pairs = g.all_pairs_concat(fmap)?;
            let h1 = g.matmul(pairs, bound.central[0])?;
            let h1 = g.relu(h1);
            let out = g.matmul(h1, bound.central[1])?;
            Ok((g.mean_rows(out)?, Vec::new()))
        }
        ArchKind::Mlp1 => {
            let flat = g.flatten(fmap);
            let out = g.matmul(flat, bound.central[0])?;
            let out = g.add_bias(out, bound.central[1])?;
            Ok((g.relu(out), Vec::new()))
        }
        ArchKind::Mlp2 => {
            let flat = g.flatten(fmap);
            let h = g.matmul(flat, bound.central[0])?;
            let h = g.add_bias(h, bound.central[1])?;
            let h = g.relu(h);
            let out = g.matmul(h, bound.central[2])?;
            let out = g.add_bias(out, bound.central[3])?;
            Ok((g.relu(out), Vec::new()))
        }
    }
    .map(|(node, attn)| {
        debug_assert_eq!(g.value(node).cols(), k * (j + 4));
        (node, attn)
    })
}
