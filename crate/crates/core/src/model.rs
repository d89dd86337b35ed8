//! The PAT classifier: patch embedding, pattern-attention stages, canonical
//! full-window stages, patch merging and a pooled linear head.

use std::fmt;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionPlan, AttentionVars, BiasMode, BiasSharing};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::pattern::{plan_octagon_pattern, PatternLayout};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PATCH: usize = 4;
pub const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

/// Architecture hyperparameters. Serialized as a flat JSON object whose
/// keys must match exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub embed_dim: usize,
    pub depths: [usize; 4],
    pub heads: [usize; 4],
    pub mlp_ratio: usize,
    pub bias_modes: [BiasMode; 4],
    pub bias_sharing: BiasSharing,
    pub block_bias: bool,
    pub winnow: bool,
    pub num_classes: usize,
    pub image_side: usize,
}

impl ModelConfig {
    /// Desk-scale model: 64x64 inputs, 24 channels, depths 1-1-2-1.
    pub fn toy() -> Self {
        Self {
            in_channels: 3,
            embed_dim: 24,
            depths: [1, 1, 2, 1],
            heads: [3, 6, 12, 24],
            mlp_ratio: 4,
            bias_modes: [BiasMode::Absolute; 4],
            bias_sharing: BiasSharing::PerHead,
            block_bias: false,
            winnow: true,
            num_classes: 10,
            image_side: 64,
        }
    }

    /// ImageNet-scale model with 96 channels and the given depths.
    pub fn imagenet(depths: [usize; 4], sharing: BiasSharing) -> Self {
        Self {
            in_channels: 3,
            embed_dim: 96,
            depths,
            heads: [3, 6, 12, 24],
            mlp_ratio: 4,
            bias_modes: [BiasMode::Absolute; 4],
            bias_sharing: sharing,
            block_bias: false,
            winnow: true,
            num_classes: 1000,
            image_side: 224,
        }
    }

    pub fn pat_s() -> Self {
        Self::imagenet([1, 1, 15, 2], BiasSharing::PerHead)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.embed_dim << stage
    }

    pub fn stage_side(&self, stage: usize) -> usize {
        self.image_side / (PATCH << stage)
    }

    pub fn total_blocks(&self) -> usize {
        self.depths.iter().sum()
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_side == 0 || !self.image_side.is_multiple_of(32) {
            return bad(format!("image_side {} is not a positive multiple of 32", self.image_side));
        }
        if self.in_channels == 0 || self.embed_dim == 0 || self.num_classes == 0 || self.mlp_ratio == 0 {
            return bad("in_channels, embed_dim, num_classes and mlp_ratio must be positive".into());
        }
        for s in 0..4 {
            let c = self.stage_channels(s);
            if self.heads[s] == 0 || !c.is_multiple_of(self.heads[s]) {
                return bad(format!("stage {s}: {c} channels not divisible by {} heads", self.heads[s]));
            }
        }
        Ok(())
    }
}

/// How a stage attends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Pattern,
    Canonical,
}

#[derive(Clone, Debug)]
pub struct StagePlan {
    pub side: usize,
    pub channels: usize,
    pub heads: usize,
    pub kind: AttentionKind,
    /// Octagon pattern for pattern stages, the full window otherwise.
    /// Absent for stages without blocks.
    pub layout: Option<PatternLayout>,
    pub attention: Option<AttentionPlan>,
}

pub fn stage_plans(config: &ModelConfig) -> Result<Vec<StagePlan>> {
    config.check()?;
    let sharing = config.bias_sharing;
    (0..4)
        .map(|s| {
            let side = config.stage_side(s);
            let channels = config.stage_channels(s);
            let kind = if s < 2 { AttentionKind::Pattern } else { AttentionKind::Canonical };
            let (layout, attention) = if config.depths[s] == 0 {
                (None, None)
            } else {
                let layout = match kind {
                    AttentionKind::Pattern => plan_octagon_pattern(side, side, (0, 0))?,
                    AttentionKind::Canonical => PatternLayout::full_window(side, side)?,
                };
                let bias = Some((config.bias_modes[s], sharing));
                let plan = AttentionPlan::new(&layout, channels, config.heads[s], bias, config.block_bias)?;
                (Some(layout), Some(plan))
            };
            Ok(StagePlan { side, channels, heads: config.heads[s], kind, layout, attention })
        })
        .collect()
}

/// Initial value rule for one parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zeros,
    Ones,
    /// Affine weight on a residual branch output; zero under
    /// [`InitScheme::ZeroResidual`].
    ResidualOut,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitScheme {
    #[default]
    Standard,
    /// Attention output projection and second MLP layer start at zero, so
    /// every block is the identity at step 0.
    ZeroResidual,
}

/// Counting bucket for parameter tallies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bucket {
    Weights,
    KernelBias,
    BlockBias,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub bucket: Bucket,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn push(specs: &mut Vec<ParamSpec>, name: String, shape: Vec<usize>, init: Init, bucket: Bucket) {
    specs.push(ParamSpec { name, shape, init, bucket });
}

fn push_norm(specs: &mut Vec<ParamSpec>, prefix: &str, n: usize) {
    push(specs, format!("{prefix}.gain"), vec![n], Init::Ones, Bucket::Weights);
    push(specs, format!("{prefix}.shift"), vec![n], Init::Zeros, Bucket::Weights);
}

fn push_linear(specs: &mut Vec<ParamSpec>, prefix: &str, i: usize, o: usize, init: Init) {
    push(specs, format!("{prefix}.weight"), vec![i, o], init, Bucket::Weights);
    push(specs, format!("{prefix}.bias"), vec![o], Init::Zeros, Bucket::Weights);
}

/// Every parameter tensor of the model in canonical order.
pub fn param_specs(config: &ModelConfig, stages: &[StagePlan]) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let c0 = config.embed_dim;
    let patch_in = config.in_channels * PATCH * PATCH;
    push_linear(&mut specs, "patch_embed", patch_in, c0, Init::TruncNormal);
    push_norm(&mut specs, "patch_embed.norm", c0);
    for (s, stage) in stages.iter().enumerate() {
        let c = stage.channels;
        for b in 0..config.depths[s] {
            let p = format!("stages.{s}.blocks.{b}");
            push_norm(&mut specs, &format!("{p}.norm1"), c);
            let plan = stage.attention.as_ref().expect("stage with blocks has a plan");
            for (name, shape) in plan.param_shapes() {
                let (init, bucket) = match name.as_str() {
                    "w_o" => (Init::ResidualOut, Bucket::Weights),
                    n if n.starts_with("w_") => (Init::TruncNormal, Bucket::Weights),
                    n if n.starts_with("b_") => (Init::Zeros, Bucket::Weights),
                    "block_bias" => (Init::Zeros, Bucket::BlockBias),
                    _ => (Init::Zeros, Bucket::KernelBias),
                };
                push(&mut specs, format!("{p}.attn.{name}"), shape, init, bucket);
            }
            push_norm(&mut specs, &format!("{p}.norm2"), c);
            let hidden = c * config.mlp_ratio;
            push_linear(&mut specs, &format!("{p}.mlp.fc1"), c, hidden, Init::TruncNormal);
            push_linear(&mut specs, &format!("{p}.mlp.fc2"), hidden, c, Init::ResidualOut);
        }
        if s < 3 {
            push_norm(&mut specs, &format!("stages.{s}.merge.norm"), 4 * c);
            push(&mut specs, format!("stages.{s}.merge.reduction"), vec![4 * c, 2 * c], Init::TruncNormal, Bucket::Weights);
        }
    }
    let c_last = config.stage_channels(3);
    push_norm(&mut specs, "norm", c_last);
    push_linear(&mut specs, "head", c_last, config.num_classes, Init::TruncNormal);
    specs
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamGroups {
    pub weights: usize,
    pub kernel_bias: usize,
    pub block_bias: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub by_group: ParamGroups,
}

impl fmt::Display for ParamCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total {} ({:.2}M): weights {}, kernel_bias {}, block_bias {}",
            self.total,
            self.total as f64 / 1e6,
            self.by_group.weights,
            self.by_group.kernel_bias,
            self.by_group.block_bias
        )
    }
}

/// Parameter tally from shapes alone; no tensor is allocated.
pub fn count_params(config: &ModelConfig) -> Result<ParamCount> {
    let stages = stage_plans(config)?;
    let mut count = ParamCount::default();
    for spec in param_specs(config, &stages) {
        let n = spec.len();
        count.total += n;
        match spec.bucket {
            Bucket::Weights => count.by_group.weights += n,
            Bucket::KernelBias => count.by_group.kernel_bias += n,
            Bucket::BlockBias => count.by_group.block_bias += n,
        }
    }
    Ok(count)
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { tensors: IndexMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| Error::UnknownParam(name.into()))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn element_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Borrows every tensor into `g` as a parameter leaf.
    pub fn bind<'p>(&'p self, g: &mut Graph<'p, T>) -> Bound {
        Bound { vars: self.tensors.iter().map(|(k, v)| (k.clone(), g.param_ref(v))).collect() }
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self.tensors.iter().zip(&other.tensors).all(|((ka, a), (kb, b))| ka == kb && a.bitwise_eq(b))
    }
}

/// Graph handles of a bound [`ParamStore`], by name.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::UnknownParam(name.into()))
    }
}

fn trunc_normal(rng: &mut impl Rng, std: f64) -> f64 {
    let n = Normal::new(0.0, std).expect("valid std");
    loop {
        let v = n.sample(rng);
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

/// Result of one batched forward/backward pass.
#[derive(Clone, Debug)]
pub struct BatchOutput<T> {
    /// Mean cross-entropy over the batch, accumulated in 64-bit.
    pub loss: f64,
    pub correct: usize,
    /// Gradient of the mean loss, in parameter order.
    pub grads: IndexMap<String, Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub stages: Vec<StagePlan>,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_init(config, seed, InitScheme::Standard)
    }

    pub fn with_init(config: ModelConfig, seed: u64, scheme: InitScheme) -> Result<Self> {
        let stages = stage_plans(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for spec in param_specs(&config, &stages) {
            let t = match (spec.init, scheme) {
                (Init::TruncNormal, _) | (Init::ResidualOut, InitScheme::Standard) => {
                    Tensor::from_fn(&spec.shape, |_| T::of(trunc_normal(&mut rng, INIT_STD)))
                }
                (Init::Ones, _) => Tensor::full(&spec.shape, T::one()),
                _ => Tensor::zeros(&spec.shape),
            };
            params.insert(spec.name, t);
        }
        Ok(Self { config, stages, params })
    }

    /// Wraps existing tensors after checking names and shapes against the
    /// config.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let stages = stage_plans(&config)?;
        let specs = param_specs(&config, &stages);
        if specs.len() != params.len() {
            return Err(Error::Shape {
                op: "model",
                detail: format!("config needs {} tensors, got {}", specs.len(), params.len()),
            });
        }
        for (spec, (name, t)) in specs.iter().zip(params.iter()) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Shape {
                    op: "model",
                    detail: format!("expected {} {:?}, got {name} {:?}", spec.name, spec.shape, t.shape()),
                });
            }
        }
        Ok(Self { config, stages, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.element_count()
    }

    /// `(stage, block)` of a global block index.
    pub fn locate_layer(&self, layer: usize) -> Result<(usize, usize)> {
        let mut rest = layer;
        for (s, &d) in self.config.depths.iter().enumerate() {
            if rest < d {
                return Ok((s, rest));
            }
            rest -= d;
        }
        Err(Error::InvalidArgument(format!("layer {layer} out of range ({} blocks)", self.config.total_blocks())))
    }

    /// Coarse parameter family used when sampling gradient checks.
    pub fn param_group(&self, name: &str) -> String {
        let parts: Vec<&str> = name.split('.').collect();
        if let Some(pos) = parts.iter().position(|&p| p == "attn") {
            let field = parts[pos + 1];
            return match field {
                "kernel_bias" => {
                    let stage: usize = parts[1].parse().unwrap_or(0);
                    format!("kernel_bias.{}", self.config.bias_modes[stage])
                }
                "block_bias" => "block_bias".into(),
                f => format!("attn.{}", &f[2..]),
            };
        }
        if parts.iter().any(|p| p.starts_with("norm")) {
            return "norm".into();
        }
        match parts[0] {
            "patch_embed" => "embed".into(),
            "head" => "head".into(),
            _ if parts.contains(&"mlp") => "mlp".into(),
            _ if parts.contains(&"merge") => "merge".into(),
            other => other.into(),
        }
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<()> {
        let side = self.config.image_side;
        if image.shape() != [self.config.in_channels, side, side] {
            return Err(Error::Shape {
                op: "patch_embed",
                detail: format!("image {:?}, expected [{}, {side}, {side}]", image.shape(), self.config.in_channels),
            });
        }
        Ok(())
    }

    /// `[(side/4)^2, in_channels*16]` patch matrix; features ordered
    /// (channel, dy, dx), patches row-major.
    pub fn patchify(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_image(image)?;
        let side = self.config.image_side;
        let grid = side / PATCH;
        let ch = self.config.in_channels;
        let feat = ch * PATCH * PATCH;
        let px = image.data();
        let mut out = Vec::with_capacity(grid * grid * feat);
        for pr in 0..grid {
            for pc in 0..grid {
                for c in 0..ch {
                    for dy in 0..PATCH {
                        let row = pr * PATCH + dy;
                        let base = (c * side + row) * side + pc * PATCH;
                        out.extend_from_slice(&px[base..base + PATCH]);
                    }
                }
            }
        }
        Tensor::new(vec![grid * grid, feat], out)
    }

    fn norm(&self, g: &mut Graph<'_, T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
        g.layer_norm(x, p.get(&format!("{prefix}.gain"))?, p.get(&format!("{prefix}.shift"))?, T::of(LN_EPS))
    }

    fn linear(&self, g: &mut Graph<'_, T>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.get(&format!("{prefix}.weight"))?)?;
        g.add_row(y, p.get(&format!("{prefix}.bias"))?)
    }

    pub fn embed_graph(&self, g: &mut Graph<'_, T>, p: &Bound, image: &Tensor<T>) -> Result<Var> {
        let patches = g.constant(self.patchify(image)?);
        let x = self.linear(g, p, "patch_embed", patches)?;
        self.norm(g, p, "patch_embed.norm", x)
    }

    fn attention_vars(&self, p: &Bound, prefix: &str, plan: &AttentionPlan) -> Result<AttentionVars> {
        let get = |n: &str| p.get(&format!("{prefix}.{n}"));
        let kernel_bias = plan
            .bias_index
            .keys()
            .map(|id| Ok((id.clone(), get(&format!("kernel_bias.{id}"))?)))
            .collect::<Result<_>>()?;
        Ok(AttentionVars {
            w_q: get("w_q")?,
            b_q: get("b_q")?,
            w_k: get("w_k")?,
            b_k: get("b_k")?,
            w_v: get("w_v")?,
            b_v: get("b_v")?,
            w_o: get("w_o")?,
            b_o: get("b_o")?,
            kernel_bias,
            block_bias: if plan.block_bias { Some(get("block_bias")?) } else { None },
        })
    }

    /// Pre-norm residual block: `x + attn(LN x)`, then `+ MLP(LN .)`.
    pub fn block_graph(&self, g: &mut Graph<'_, T>, p: &Bound, stage: usize, block: usize, x: Var) -> Result<Var> {
        let plan = self.stages[stage]
            .attention
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("stage {stage} has no blocks")))?;
        let pre = format!("stages.{stage}.blocks.{block}");
        let h = self.norm(g, p, &format!("{pre}.norm1"), x)?;
        let vars = self.attention_vars(p, &format!("{pre}.attn"), plan)?;
        let a = plan.forward(g, h, &vars, self.config.winnow)?;
        let x = g.add(x, a)?;
        let h = self.norm(g, p, &format!("{pre}.norm2"), x)?;
        let h = self.linear(g, p, &format!("{pre}.mlp.fc1"), h)?;
        let h = g.gelu(h);
        let h = self.linear(g, p, &format!("{pre}.mlp.fc2"), h)?;
        g.add(x, h)
    }

    /// 2x2 neighbourhood concat, layer norm, linear `4C -> 2C` without bias.
    pub fn merge_graph(&self, g: &mut Graph<'_, T>, p: &Bound, stage: usize, x: Var) -> Result<Var> {
        let side = self.stages[stage].side;
        let (n, _) = g.value(x).dims2("patch_merge")?;
        if !side.is_multiple_of(2) || n != side * side {
            return Err(Error::Shape { op: "patch_merge", detail: format!("{n} rows for a {side}x{side} map") });
        }
        let half = side / 2;
        let pick = |dr: usize, dc: usize| -> Vec<usize> {
            (0..half * half).map(|i| (2 * (i / half) + dr) * side + 2 * (i % half) + dc).collect()
        };
        let mut quads = Vec::with_capacity(4);
        for (dr, dc) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            quads.push(g.gather_rows(x, &pick(dr, dc))?);
        }
        let cat = g.concat_cols(&quads)?;
        let h = self.norm(g, p, &format!("stages.{stage}.merge.norm"), cat)?;
        g.matmul(h, p.get(&format!("stages.{stage}.merge.reduction"))?)
    }

    pub fn head_graph(&self, g: &mut Graph<'_, T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.norm(g, p, "norm", x)?;
        let pooled = g.mean_rows(h)?;
        self.linear(g, p, "head", pooled)
    }

    /// Full network on one image, giving `[1, num_classes]` logits.
    pub fn forward_graph(&self, g: &mut Graph<'_, T>, p: &Bound, image: &Tensor<T>) -> Result<Var> {
        let mut x = self.embed_graph(g, p, image)?;
        for s in 0..4 {
            for b in 0..self.config.depths[s] {
                x = self.block_graph(g, p, s, b, x)?;
            }
            if s < 3 {
                x = self.merge_graph(g, p, s, x)?;
            }
        }
        self.head_graph(g, p, x)
    }

    /// Logits `[batch, num_classes]`. Samples run on the current rayon pool;
    /// each is independent so the result does not depend on thread count.
    pub fn forward(&self, images: &[Tensor<T>]) -> Result<Tensor<T>> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let rows: Vec<Tensor<T>> = images
            .par_iter()
            .map(|img| {
                let mut g = Graph::new();
                let p = self.params.bind(&mut g);
                let out = self.forward_graph(&mut g, &p, img)?;
                Ok(g.value(out).clone())
            })
            .collect::<Result<_>>()?;
        let k = self.config.num_classes;
        let data = rows.into_iter().flat_map(Tensor::into_data).collect();
        Tensor::new(vec![images.len(), k], data)
    }

    pub fn patch_embed(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(|m, g, p| m.embed_graph(g, p, image))
    }

    pub fn block_forward(&self, stage: usize, block: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        if stage >= 4 || block >= self.config.depths[stage] {
            return Err(Error::InvalidArgument(format!("no block {block} in stage {stage}")));
        }
        self.run(|m, g, p| {
            let xv = g.constant(x.clone());
            m.block_graph(g, p, stage, block, xv)
        })
    }

    pub fn patch_merge(&self, stage: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        if stage >= 3 {
            return Err(Error::InvalidArgument(format!("no merge after stage {stage}")));
        }
        self.run(|m, g, p| {
            let xv = g.constant(x.clone());
            m.merge_graph(g, p, stage, xv)
        })
    }

    pub fn head(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(|m, g, p| {
            let xv = g.constant(x.clone());
            m.head_graph(g, p, xv)
        })
    }

    fn run<'s>(&'s self, f: impl FnOnce(&Self, &mut Graph<'s, T>, &Bound) -> Result<Var>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let out = f(self, &mut g, &p)?;
        Ok(g.value(out).clone())
    }

    /// Mean cross-entropy and its gradient over a batch. Per-sample
    /// gradients are reduced in sample order.
    pub fn batch_gradients(&self, images: &[Tensor<T>], labels: &[usize]) -> Result<BatchOutput<T>> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(Error::InvalidArgument(format!("{} images, {} labels", images.len(), labels.len())));
        }
        let inv = T::one() / T::of(images.len() as f64);
        let per_sample: Vec<(f64, bool, Vec<Option<Tensor<T>>>)> = images
            .par_iter()
            .zip(labels.par_iter())
            .map(|(img, &label)| {
                let mut g = Graph::new();
                let p = self.params.bind(&mut g);
                let logits = self.forward_graph(&mut g, &p, img)?;
                let loss = g.cross_entropy(logits, &[label])?;
                let lv = g.value(loss).data()[0];
                if !lv.is_finite() {
                    return Err(Error::NonFinite(format!("loss {lv} on a sample with label {label}")));
                }
                let row = g.value(logits).data();
                let argmax = (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best });
                let mut grads = g.backward_from(loss, Tensor::full(&[1], inv))?;
                let gs = p.vars.values().map(|&v| grads.take(v)).collect();
                Ok((lv.to_f64_lossy(), argmax == label, gs))
            })
            .collect::<Result<_>>()?;
        let mut grads: IndexMap<String, Tensor<T>> =
            self.params.iter().map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape()))).collect();
        let (mut loss, mut correct) = (0.0, 0);
        for (lv, ok, gs) in per_sample {
            loss += lv;
            correct += ok as usize;
            for (acc, g) in grads.values_mut().zip(gs) {
                if let Some(g) = g {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
        }
        Ok(BatchOutput { loss: loss / images.len() as f64, correct, grads })
    }

    /// Materialized kernel bias of one block and head. `shape_id` defaults
    /// to the stage's most frequent shape class.
    pub fn bias_matrix(&self, layer: usize, head: usize, shape_id: Option<&str>) -> Result<Tensor<T>> {
        let (stage, block) = self.locate_layer(layer)?;
        let plan = self.stages[stage].attention.as_ref().expect("stage with blocks has a plan");
        if plan.bias_mode.is_none() {
            return Err(Error::InvalidArgument("model has no kernel bias".into()));
        }
        if head >= plan.heads {
            return Err(Error::InvalidArgument(format!("head {head} out of range ({} heads)", plan.heads)));
        }
        let layout = self.stages[stage].layout.as_ref().expect("stage with blocks has a layout");
        let id = match shape_id {
            Some(id) => id.to_string(),
            None => layout.dominant_shape().expect("non-empty layout").id().to_string(),
        };
        let ix = plan.bias_index.get(&id).ok_or_else(|| Error::MissingBiasTable(id.clone()))?;
        let theta = self.params.expect(&format!("stages.{stage}.blocks.{block}.attn.kernel_bias.{id}"))?;
        let slot = if plan.sharing == BiasSharing::PerHead { head } else { 0 };
        let data = ix.keys.iter().map(|&k| theta.data()[slot * ix.key_count + k]).collect();
        Tensor::new(vec![ix.core_len, ix.sensor_len], data)
    }
}
