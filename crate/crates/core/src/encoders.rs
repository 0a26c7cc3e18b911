//! Policy network: transformer instruction encoder, convolutional vision
//! encoder, proprio/tactile encoder, fusion, and the actor and critic heads.
//!
//! Parameter names are stable and double as checkpoint keys:
//! `lang.embed`, `lang.l{i}.{wq,wk,wv,ln1.g,ln1.b,ff1.w,ff1.b,ff2.w,ff2.b,ln2.g,ln2.b}`,
//! `vision.{conv1,conv2,fc1,fc2}.{w,b}`, `pt.fc.{w,b}`, `actor.fc{1..4}.{w,b}`,
//! `critic.fc{1..4}.{w,b}`.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{State, MAX_TOKENS, PAD, STACK_DEPTH, VOCAB};
use crate::numerics::{ops, Graph, NumericsError, ParamStore, Tensor, Var};

pub const ACTION_STD: f64 = 0.36;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("network config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangEncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ff_width: usize,
    pub max_len: usize,
    pub vocab: usize,
}

impl Default for LangEncoderConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            heads: 2,
            hidden: 50,
            ff_width: 100,
            max_len: MAX_TOKENS,
            vocab: VOCAB.len(),
        }
    }
}

/// Everything that fixes parameter shapes, plus the action bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub lang: LangEncoderConfig,
    pub cameras: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub conv_channels: [usize; 2],
    pub vision_hidden: usize,
    pub vision_out: usize,
    pub pt_out: usize,
    pub head_widths: [usize; 3],
    pub dof: usize,
    pub tactile_dim: usize,
    pub limits_min: Vec<f64>,
    pub limits_max: Vec<f64>,
    pub action_std: f64,
}

impl NetConfig {
    /// Widths used throughout, with image size and robot bounds from the caller.
    pub fn standard(
        cameras: usize,
        image_height: usize,
        image_width: usize,
        limits_min: Vec<f64>,
        limits_max: Vec<f64>,
        tactile_dim: usize,
    ) -> Self {
        Self {
            lang: LangEncoderConfig::default(),
            cameras,
            image_height,
            image_width,
            conv_channels: [16, 32],
            vision_hidden: 256,
            vision_out: 256,
            pt_out: 128,
            head_widths: [500, 256, 128],
            dof: limits_min.len(),
            tactile_dim,
            limits_min,
            limits_max,
            action_std: ACTION_STD,
        }
    }

    pub fn image_channels(&self) -> usize {
        STACK_DEPTH * self.cameras * 3
    }

    pub fn pt_input(&self) -> usize {
        STACK_DEPTH * (self.dof + self.tactile_dim)
    }

    pub fn fused_width(&self) -> usize {
        self.lang.hidden + self.vision_out + self.pt_out
    }

    fn vision_flat(&self) -> usize {
        (self.image_height / 4) * (self.image_width / 4) * self.conv_channels[1]
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let err = |m: String| Err(EncoderError::Config(m));
        let l = &self.lang;
        if l.layers == 0 || l.heads == 0 || !l.hidden.is_multiple_of(l.heads) {
            return err(format!(
                "hidden width {} is not divisible by {} heads",
                l.hidden, l.heads
            ));
        }
        if self.image_height == 0
            || self.image_width == 0
            || !self.image_height.is_multiple_of(4)
            || !self.image_width.is_multiple_of(4)
        {
            return err(format!(
                "image resolution {}x{} must be a positive multiple of 4",
                self.image_width, self.image_height
            ));
        }
        if self.dof == 0 || self.limits_max.len() != self.dof {
            return err("joint limits do not match the action size".into());
        }
        if self
            .limits_min
            .iter()
            .zip(&self.limits_max)
            .any(|(lo, hi)| !(hi > lo))
        {
            return err("joint limits must satisfy min < max".into());
        }
        if !(self.action_std > 0.0) {
            return err("action std must be positive".into());
        }
        Ok(())
    }
}

fn glorot(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Fresh parameters: Glorot-uniform weights, zero biases, N(0, 0.02²)
/// embeddings, unit layer-norm gains.
pub fn init_params(cfg: &NetConfig, rng: &mut impl Rng) -> Result<ParamStore, EncoderError> {
    cfg.validate()?;
    let mut p = ParamStore::new();
    let linear = |p: &mut ParamStore, rng: &mut _, name: &str, fan_in, fan_out| {
        p.insert(format!("{name}.w"), glorot(rng, &[fan_out, fan_in], fan_in, fan_out))?;
        p.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]))
    };

    let l = &cfg.lang;
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    let embed = (0..l.vocab * l.hidden).map(|_| normal.sample(rng)).collect();
    p.insert("lang.embed", Tensor::new(vec![l.vocab, l.hidden], embed)?)?;
    for i in 0..l.layers {
        for m in ["wq", "wk", "wv"] {
            let w = glorot(rng, &[l.hidden, l.hidden], l.hidden, l.hidden);
            p.insert(format!("lang.l{i}.{m}"), w)?;
        }
        for ln in ["ln1", "ln2"] {
            p.insert(format!("lang.l{i}.{ln}.g"), Tensor::full(&[l.hidden], 1.0))?;
            p.insert(format!("lang.l{i}.{ln}.b"), Tensor::zeros(&[l.hidden]))?;
        }
        linear(&mut p, rng, &format!("lang.l{i}.ff1"), l.hidden, l.ff_width)?;
        linear(&mut p, rng, &format!("lang.l{i}.ff2"), l.ff_width, l.hidden)?;
    }

    let [c1, c2] = cfg.conv_channels;
    let cin = cfg.image_channels();
    p.insert("vision.conv1.w", glorot(rng, &[c1, cin, 3, 3], cin * 9, c1 * 9))?;
    p.insert("vision.conv1.b", Tensor::zeros(&[c1]))?;
    p.insert("vision.conv2.w", glorot(rng, &[c2, c1, 3, 3], c1 * 9, c2 * 9))?;
    p.insert("vision.conv2.b", Tensor::zeros(&[c2]))?;
    linear(&mut p, rng, "vision.fc1", cfg.vision_flat(), cfg.vision_hidden)?;
    linear(&mut p, rng, "vision.fc2", cfg.vision_hidden, cfg.vision_out)?;

    linear(&mut p, rng, "pt.fc", cfg.pt_input(), cfg.pt_out)?;

    for (head, out) in [("actor", cfg.dof), ("critic", 1)] {
        let [h1, h2, h3] = cfg.head_widths;
        let widths = [cfg.fused_width(), h1, h2, h3, out];
        for k in 0..4 {
            linear(&mut p, rng, &format!("{head}.fc{}", k + 1), widths[k], widths[k + 1])?;
        }
    }
    Ok(p)
}

/// Sinusoidal position codes `[len, width]`.
pub fn positional_encoding(len: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; len * width];
    for pos in 0..len {
        for i in 0..width {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / width as f64);
            data[pos * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, width], data).expect("shape and data agree")
}

/// Output of [`encode_instruction`]: per-token outputs `[len, hidden]`, the
/// pooled `[1, hidden]` embedding and one attention map per layer and head.
pub struct Encoded {
    pub tokens: Var,
    pub embedding: Var,
    pub attention: Vec<Vec<Tensor>>,
}

/// Transformer encoder over one token sequence, mean-pooled over non-pad positions.
pub fn encode_instruction(
    g: &mut Graph,
    cfg: &LangEncoderConfig,
    tokens: &[usize],
) -> Result<Encoded, EncoderError> {
    if tokens.is_empty() || tokens.len() > cfg.max_len {
        return Err(EncoderError::Config(format!(
            "token sequence length {} outside 1..={}",
            tokens.len(),
            cfg.max_len
        )));
    }
    let len = tokens.len();
    let table = g.param("lang.embed")?;
    let emb = g.embedding(table, tokens)?;
    let pe = g.constant(positional_encoding(len, cfg.hidden));
    let mut x = g.add(emb, pe)?;

    let keep: Vec<bool> = tokens.iter().map(|&t| t != PAD).collect();
    let head_dim = cfg.hidden / cfg.heads;
    let inv_sqrt = 1.0 / (head_dim as f64).sqrt();
    let mut attention = Vec::with_capacity(cfg.layers);
    for i in 0..cfg.layers {
        let p = |n: &str| format!("lang.l{i}.{n}");
        let (wq, wk, wv) = (g.param(&p("wq"))?, g.param(&p("wk"))?, g.param(&p("wv"))?);
        let q = g.matmul_nt(x, wq)?;
        let k = g.matmul_nt(x, wk)?;
        let v = g.matmul_nt(x, wv)?;
        let mut heads = Vec::with_capacity(cfg.heads);
        let mut maps = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = g.slice_cols(q, h * head_dim, head_dim)?;
            let kh = g.slice_cols(k, h * head_dim, head_dim)?;
            let vh = g.slice_cols(v, h * head_dim, head_dim)?;
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, inv_sqrt);
            let attn = g.softmax_rows(scores, Some(&keep))?;
            maps.push(g.value(attn).clone());
            heads.push(g.matmul(attn, vh)?);
        }
        attention.push(maps);
        let mixed = g.concat_cols(&heads)?;
        let res = g.add(x, mixed)?;
        let (g1, b1) = (g.param(&p("ln1.g"))?, g.param(&p("ln1.b"))?);
        let x1 = g.layer_norm(res, g1, b1)?;

        let (w1, c1) = (g.param(&p("ff1.w"))?, g.param(&p("ff1.b"))?);
        let (w2, c2) = (g.param(&p("ff2.w"))?, g.param(&p("ff2.b"))?);
        let f = g.linear(x1, w1, c1)?;
        let f = g.tanh(f);
        let f = g.linear(f, w2, c2)?;
        let res = g.add(x1, f)?;
        let (g2, b2) = (g.param(&p("ln2.g"))?, g.param(&p("ln2.b"))?);
        x = g.layer_norm(res, g2, b2)?;
    }

    let n_keep = keep.iter().filter(|k| **k).count().max(1) as f64;
    let weights: Vec<f64> = keep.iter().map(|&k| if k { 1.0 / n_keep } else { 0.0 }).collect();
    let embedding = g.weighted_row_sum(x, &weights)?;
    Ok(Encoded {
        tokens: x,
        embedding,
        attention,
    })
}

fn dense(g: &mut Graph, x: Var, name: &str) -> Result<Var, EncoderError> {
    let w = g.param(&format!("{name}.w"))?;
    let b = g.param(&format!("{name}.b"))?;
    Ok(g.linear(x, w, b)?)
}

/// `images: [N, C, H, W]` → `[N, vision_out]`.
pub fn encode_vision(g: &mut Graph, images: Var) -> Result<Var, EncoderError> {
    let mut x = images;
    for conv in ["vision.conv1", "vision.conv2"] {
        let w = g.param(&format!("{conv}.w"))?;
        let b = g.param(&format!("{conv}.b"))?;
        let y = g.conv2d(x, w, b)?;
        // tanh is increasing, so it commutes with the max pool; applying it
        // afterwards touches a quarter of the values.
        let y = g.maxpool2(y)?;
        x = g.tanh(y);
    }
    let n = g.shape(x)[0];
    let flat: usize = g.shape(x)[1..].iter().product();
    let x = g.reshape(x, &[n, flat])?;
    let h = dense(g, x, "vision.fc1")?;
    let h = g.tanh(h);
    dense(g, h, "vision.fc2")
}

/// `x: [N, 3·(dof + tactile)]` → `[N, pt_out]`.
pub fn encode_proprio_tactile(g: &mut Graph, x: Var) -> Result<Var, EncoderError> {
    let h = dense(g, x, "pt.fc")?;
    Ok(g.tanh(h))
}

/// Concatenation in the order language, vision, proprio/tactile.
pub fn fuse(g: &mut Graph, lang: Var, vision: Var, pt: Var) -> Result<Var, EncoderError> {
    Ok(g.concat_cols(&[lang, vision, pt])?)
}

fn trunk(g: &mut Graph, x: Var, head: &str) -> Result<Var, EncoderError> {
    let mut h = x;
    for k in 1..=3 {
        h = dense(g, h, &format!("{head}.fc{k}"))?;
        h = g.tanh(h);
    }
    dense(g, h, &format!("{head}.fc4"))
}

/// Mean joint targets `[N, dof]`, squashed into the joint limits.
pub fn actor_forward(g: &mut Graph, cfg: &NetConfig, fused: Var) -> Result<Var, EncoderError> {
    let out = trunk(g, fused, "actor")?;
    let squashed = g.tanh(out);
    let (scale, shift): (Vec<f64>, Vec<f64>) = cfg
        .limits_min
        .iter()
        .zip(&cfg.limits_max)
        .map(|(lo, hi)| ((hi - lo) / 2.0, (hi + lo) / 2.0))
        .unzip();
    Ok(g.affine_cols(squashed, &scale, &shift)?)
}

/// State values `[N, 1]`.
pub fn critic_forward(g: &mut Graph, fused: Var) -> Result<Var, EncoderError> {
    trunk(g, fused, "critic")
}

/// Network input for a batch of states, in the layout the encoders expect.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentInput {
    /// Distinct token sequences in the batch.
    pub sequences: Vec<Vec<usize>>,
    /// Per row, index into `sequences`.
    pub sequence_of: Vec<usize>,
    /// `[N, C, H, W]`, channels ordered newest frame first, then camera, then RGB.
    pub images: Tensor,
    /// `[N, 3·(dof + tactile)]`, newest frame first.
    pub proprio_tactile: Tensor,
}

/// Which non-visual channels reach the network; disabled ones are fed as zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorMask {
    pub proprio: bool,
    pub tactile: bool,
}

/// One state's contribution to an [`AgentInput`].
#[derive(Clone, Debug, PartialEq)]
pub struct StateFeatures {
    pub tokens: Vec<usize>,
    pub image: Vec<f64>,
    pub proprio_tactile: Vec<f64>,
}

impl StateFeatures {
    pub fn from_state(state: &State, mask: SensorMask) -> Self {
        let mut image = Vec::new();
        let mut pt = Vec::new();
        for frame in &state.frames {
            for img in &frame.images {
                let hw = img.width * img.height;
                let start = image.len();
                image.resize(start + 3 * hw, 0.0);
                for (p, px) in img.pixels().enumerate() {
                    for ch in 0..3 {
                        image[start + ch * hw + p] = px[ch];
                    }
                }
            }
            pt.extend(frame.proprio.iter().map(|&a| if mask.proprio { a } else { 0.0 }));
            pt.extend(frame.tactile.iter().map(|&t| {
                if mask.tactile && t {
                    1.0
                } else {
                    0.0
                }
            }));
        }
        Self {
            tokens: state.instruction().tokens.clone(),
            image,
            proprio_tactile: pt,
        }
    }
}

impl AgentInput {
    pub fn from_features(cfg: &NetConfig, rows: &[&StateFeatures]) -> Result<Self, EncoderError> {
        let n = rows.len();
        let img_len = cfg.image_channels() * cfg.image_height * cfg.image_width;
        let pt_len = cfg.pt_input();
        let mut sequences: Vec<Vec<usize>> = Vec::new();
        let mut sequence_of = Vec::with_capacity(n);
        let mut images = Vec::with_capacity(n * img_len);
        let mut pt = Vec::with_capacity(n * pt_len);
        for f in rows {
            if f.image.len() != img_len || f.proprio_tactile.len() != pt_len {
                return Err(EncoderError::Config(format!(
                    "state features have {} image / {} proprio-tactile values, network expects {} / {}",
                    f.image.len(),
                    f.proprio_tactile.len(),
                    img_len,
                    pt_len
                )));
            }
            let idx = match sequences.iter().position(|s| *s == f.tokens) {
                Some(i) => i,
                None => {
                    sequences.push(f.tokens.clone());
                    sequences.len() - 1
                }
            };
            sequence_of.push(idx);
            images.extend_from_slice(&f.image);
            pt.extend_from_slice(&f.proprio_tactile);
        }
        Ok(Self {
            sequences,
            sequence_of,
            images: Tensor::new(
                vec![n, cfg.image_channels(), cfg.image_height, cfg.image_width],
                images,
            )?,
            proprio_tactile: Tensor::new(vec![n, pt_len], pt)?,
        })
    }

    pub fn len(&self) -> usize {
        self.sequence_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence_of.is_empty()
    }
}

/// Tape handles for a full forward pass.
pub struct PolicyVars {
    pub fused: Var,
    pub mean: Var,
    pub value: Var,
}

/// Full network on a batch; each distinct instruction is encoded once.
pub fn policy_forward(
    g: &mut Graph,
    cfg: &NetConfig,
    input: &AgentInput,
) -> Result<PolicyVars, EncoderError> {
    let mut pooled = Vec::with_capacity(input.sequences.len());
    for seq in &input.sequences {
        pooled.push(encode_instruction(g, &cfg.lang, seq)?.embedding);
    }
    let lang_rows = g.concat_rows(&pooled)?;
    let lang = g.gather_rows(lang_rows, &input.sequence_of)?;
    let images = g.constant(input.images.clone());
    let vision = encode_vision(g, images)?;
    let pt_in = g.constant(input.proprio_tactile.clone());
    let pt = encode_proprio_tactile(g, pt_in)?;
    let fused = fuse(g, lang, vision, pt)?;
    let mean = actor_forward(g, cfg, fused)?;
    let value = critic_forward(g, fused)?;
    Ok(PolicyVars { fused, mean, value })
}

/// Actor mean and critic value for one row.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub mean_action: Vec<f64>,
    pub value: f64,
}

/// Forward pass without keeping the tape around.
pub fn evaluate(
    params: &ParamStore,
    cfg: &NetConfig,
    input: &AgentInput,
) -> Result<Vec<PolicyOutput>, EncoderError> {
    let mut g = Graph::new(params);
    let vars = policy_forward(&mut g, cfg, input)?;
    let mean = g.value(vars.mean);
    let value = g.value(vars.value);
    Ok((0..input.len())
        .map(|r| PolicyOutput {
            mean_action: mean.row(r).to_vec(),
            value: value.data()[r],
        })
        .collect())
}

/// Diagonal Gaussian with a shared, fixed standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl ActionDistribution {
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.mean
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.std * z
            })
            .collect()
    }

    pub fn log_prob(&self, action: &[f64]) -> f64 {
        ops::gaussian_log_prob(&self.mean, action, self.std)
    }
}
