//! Pattern multi-head self-attention.
//!
//! For every kernel instance the sensor rows are gathered, attention is
//! computed inside the instance with a trainable position bias, and only the
//! update-core rows are written back. Because cores partition the grid every
//! output row is written exactly once.
//!
//! Two evaluation paths produce identical results:
//! - full: queries for every sensor row, an `S x S` score matrix, non-core
//!   rows dropped afterwards;
//! - winnow: queries only for core rows, a `U x S` score matrix.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::geometry::{displacements, KernelShape};
use crate::pattern::PatternLayout;
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

/// Parameterization of the kernel position bias `B[u, s]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// One free value per (update cell, sensor cell) pair.
    Absolute,
    /// Tied by displacement vector.
    Vector,
    /// Tied by `|dr| + |dc|`.
    Manhattan,
    /// Tied by `dr^2 + dc^2`.
    Sqeuclid,
}

impl BiasMode {
    pub const ALL: [BiasMode; 4] = [BiasMode::Absolute, BiasMode::Vector, BiasMode::Manhattan, BiasMode::Sqeuclid];

    pub fn name(self) -> &'static str {
        match self {
            BiasMode::Absolute => "absolute",
            BiasMode::Vector => "vector",
            BiasMode::Manhattan => "manhattan",
            BiasMode::Sqeuclid => "sqeuclid",
        }
    }
}

impl fmt::Display for BiasMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BiasMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BiasMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown bias mode {s}")))
    }
}

/// Whether heads share one bias table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasSharing {
    PerHead,
    Common,
    /// No kernel bias at all.
    None,
}

impl BiasSharing {
    pub fn slots(self, heads: usize) -> usize {
        match self {
            BiasSharing::PerHead => heads,
            BiasSharing::Common => 1,
            BiasSharing::None => 0,
        }
    }
}

/// How one shape class maps (update, sensor) pairs onto bias parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BiasIndex {
    pub core_len: usize,
    pub sensor_len: usize,
    /// `U * S` parameter keys, update-major.
    pub keys: Vec<usize>,
    pub key_count: usize,
}

impl BiasIndex {
    pub fn new(shape: &KernelShape, mode: BiasMode) -> Self {
        let (u, s) = (shape.core_len(), shape.sensor_len());
        let (keys, key_count) = match mode {
            BiasMode::Absolute => ((0..u * s).collect(), u * s),
            BiasMode::Vector => {
                let t = displacements(shape);
                (t.index, t.distinct.len())
            }
            BiasMode::Manhattan | BiasMode::Sqeuclid => {
                let t = displacements(shape);
                let raw: Vec<u32> = t
                    .index
                    .iter()
                    .map(|&i| match mode {
                        BiasMode::Manhattan => t.distinct[i].manhattan(),
                        _ => t.distinct[i].squared_euclid(),
                    })
                    .collect();
                let mut distinct = raw.clone();
                distinct.sort_unstable();
                distinct.dedup();
                let keys = raw.iter().map(|v| distinct.binary_search(v).expect("present")).collect();
                (keys, distinct.len())
            }
        };
        Self { core_len: u, sensor_len: s, keys, key_count }
    }

    /// Flat indices into a `[slots, key_count]` parameter tensor for `slot`.
    fn flat_for_slot(&self, slot: usize) -> Vec<usize> {
        self.keys.iter().map(|&k| slot * self.key_count + k).collect()
    }
}

/// Trainable kernel bias for one attention layer: per shape class, a
/// `[slots, key_count]` parameter tensor plus the index map onto `U x S`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasTable<T> {
    pub mode: BiasMode,
    pub sharing: BiasSharing,
    pub heads: usize,
    pub index: BTreeMap<String, BiasIndex>,
    pub theta: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> BiasTable<T> {
    /// Zero-initialized table for every shape class of `layout`.
    pub fn zeros(layout: &PatternLayout, mode: BiasMode, sharing: BiasSharing, heads: usize) -> Result<Self> {
        let slots = sharing.slots(heads);
        if slots == 0 {
            return Err(Error::InvalidArgument("a bias table needs per_head or common sharing".into()));
        }
        let index: BTreeMap<String, BiasIndex> =
            layout.shapes.iter().map(|(id, s)| (id.clone(), BiasIndex::new(s, mode))).collect();
        let theta = index.iter().map(|(id, ix)| (id.clone(), Tensor::zeros(&[slots, ix.key_count]))).collect();
        Ok(Self { mode, sharing, heads, index, theta })
    }

    pub fn slot(&self, head: usize) -> usize {
        match self.sharing {
            BiasSharing::PerHead => head,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.theta.values().map(Tensor::len).sum()
    }

    /// Parameters per slot for one shape class.
    pub fn slot_len(&self, shape_id: &str) -> Option<usize> {
        self.index.get(shape_id).map(|ix| ix.key_count)
    }

    /// Materialized `U x S` bias of one shape class for `head`.
    pub fn bias_matrix(&self, shape_id: &str, head: usize) -> Result<Tensor<T>> {
        if head >= self.heads {
            return Err(Error::InvalidArgument(format!("head {head} out of range ({} heads)", self.heads)));
        }
        let ix = self.index.get(shape_id).ok_or_else(|| Error::MissingBiasTable(shape_id.into()))?;
        let theta = &self.theta[shape_id];
        let data = ix.flat_for_slot(self.slot(head)).into_iter().map(|i| theta.data()[i]).collect();
        Tensor::new(vec![ix.core_len, ix.sensor_len], data)
    }

    pub fn randomize(&mut self, rng: &mut impl Rng, std: f64) {
        let normal = Normal::new(0.0, std).expect("valid std");
        for t in self.theta.values_mut() {
            for v in t.data_mut() {
                *v = T::of(normal.sample(rng));
            }
        }
    }
}

/// Evaluation switches for one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AttentionFlags {
    pub winnow: bool,
    pub block_bias: bool,
}

/// Weights of one attention layer. Linear maps are stored `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayerParams<T> {
    pub heads: usize,
    pub w_q: Tensor<T>,
    pub b_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub b_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub b_v: Tensor<T>,
    pub w_o: Tensor<T>,
    pub b_o: Tensor<T>,
    pub bias: Option<BiasTable<T>>,
    /// One scalar per kernel instance.
    pub block_bias: Option<Tensor<T>>,
}

impl<T: Scalar> AttentionLayerParams<T> {
    /// Normal(0, `std`) projections, zero vectors, zero bias tables.
    pub fn init(
        layout: &PatternLayout,
        channels: usize,
        heads: usize,
        bias: Option<(BiasMode, BiasSharing)>,
        block_bias: bool,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        check_heads(channels, heads)?;
        let normal = Normal::new(0.0, std).expect("valid std");
        let mut mat = || Tensor::from_fn(&[channels, channels], |_| T::of(normal.sample(rng)));
        let (w_q, w_k, w_v, w_o) = (mat(), mat(), mat(), mat());
        let vec0 = || Tensor::zeros(&[channels]);
        let bias = match bias {
            Some((_, BiasSharing::None)) | None => None,
            Some((mode, sharing)) => Some(BiasTable::zeros(layout, mode, sharing, heads)?),
        };
        let block_bias = block_bias.then(|| Tensor::zeros(&[layout.instances.len()]));
        Ok(Self { heads, w_q, b_q: vec0(), w_k, b_k: vec0(), w_v, b_v: vec0(), w_o, b_o: vec0(), bias, block_bias })
    }

    pub fn channels(&self) -> usize {
        self.w_q.rows()
    }

    /// Fills every bias vector, bias table and block bias with Normal(0, std).
    pub fn randomize_biases(&mut self, rng: &mut impl Rng, std: f64) {
        let normal = Normal::new(0.0, std).expect("valid std");
        for t in [&mut self.b_q, &mut self.b_k, &mut self.b_v, &mut self.b_o] {
            for v in t.data_mut() {
                *v = T::of(normal.sample(rng));
            }
        }
        if let Some(b) = &mut self.bias {
            b.randomize(rng, std);
        }
        if let Some(b) = &mut self.block_bias {
            for v in b.data_mut() {
                *v = T::of(normal.sample(rng));
            }
        }
    }

    /// Registers every tensor on `g` as a borrowed parameter leaf.
    pub fn bind<'p>(&'p self, g: &mut Graph<'p, T>) -> AttentionVars {
        AttentionVars {
            w_q: g.param_ref(&self.w_q),
            b_q: g.param_ref(&self.b_q),
            w_k: g.param_ref(&self.w_k),
            b_k: g.param_ref(&self.b_k),
            w_v: g.param_ref(&self.w_v),
            b_v: g.param_ref(&self.b_v),
            w_o: g.param_ref(&self.w_o),
            b_o: g.param_ref(&self.b_o),
            kernel_bias: self
                .bias
                .iter()
                .flat_map(|b| b.theta.iter())
                .map(|(id, t)| (id.clone(), g.param_ref(t)))
                .collect(),
            block_bias: self.block_bias.as_ref().map(|t| g.param_ref(t)),
        }
    }
}

fn check_heads(channels: usize, heads: usize) -> Result<()> {
    if heads == 0 || channels == 0 || !channels.is_multiple_of(heads) {
        return Err(Error::InvalidArgument(format!("{channels} channels cannot be split into {heads} heads")));
    }
    Ok(())
}

/// Graph handles for one layer's parameters.
#[derive(Clone, Debug)]
pub struct AttentionVars {
    pub w_q: Var,
    pub b_q: Var,
    pub w_k: Var,
    pub b_k: Var,
    pub w_v: Var,
    pub b_v: Var,
    pub w_o: Var,
    pub b_o: Var,
    pub kernel_bias: BTreeMap<String, Var>,
    pub block_bias: Option<Var>,
}

#[derive(Clone, Debug)]
struct InstancePlan {
    shape_id: String,
    sensor_rows: Vec<usize>,
    core_rows: Vec<usize>,
    /// Position of each core cell within the sensor ordering.
    core_in_sensor: Vec<usize>,
}

/// Everything about a layer that does not depend on parameter values.
#[derive(Clone, Debug)]
pub struct AttentionPlan {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub heads: usize,
    pub bias_mode: Option<BiasMode>,
    pub sharing: BiasSharing,
    pub bias_index: BTreeMap<String, BiasIndex>,
    pub block_bias: bool,
    instances: Vec<InstancePlan>,
}

impl AttentionPlan {
    pub fn new(
        layout: &PatternLayout,
        channels: usize,
        heads: usize,
        bias: Option<(BiasMode, BiasSharing)>,
        block_bias: bool,
    ) -> Result<Self> {
        check_heads(channels, heads)?;
        layout.validate().map_err(Error::InvalidLayout)?;
        let (bias_mode, sharing) = match bias {
            Some((_, BiasSharing::None)) | None => (None, BiasSharing::None),
            Some((m, s)) => (Some(m), s),
        };
        let bias_index = match bias_mode {
            Some(m) => layout.shapes.iter().map(|(id, s)| (id.clone(), BiasIndex::new(s, m))).collect(),
            None => BTreeMap::new(),
        };
        let w = layout.width;
        let instances = layout
            .instances
            .iter()
            .map(|inst| {
                let shape = layout.shape_of(inst).expect("validated layout");
                InstancePlan {
                    shape_id: inst.shape_id.clone(),
                    sensor_rows: inst.sensor_rows(w),
                    core_rows: inst.core_rows(w),
                    core_in_sensor: shape.core_rows_in_sensor(),
                }
            })
            .collect();
        Ok(Self {
            height: layout.height,
            width: layout.width,
            channels,
            heads,
            bias_mode,
            sharing,
            bias_index,
            block_bias,
            instances,
        })
    }

    /// Plan matching an existing parameter set.
    pub fn for_params<T: Scalar>(layout: &PatternLayout, params: &AttentionLayerParams<T>) -> Result<Self> {
        let bias = params.bias.as_ref().map(|b| (b.mode, b.sharing));
        let plan = Self::new(layout, params.channels(), params.heads, bias, params.block_bias.is_some())?;
        if let Some(b) = &params.block_bias {
            if b.len() != plan.instances.len() {
                return Err(Error::Shape {
                    op: "attention",
                    detail: format!("{} block biases for {} instances", b.len(), plan.instances.len()),
                });
            }
        }
        Ok(plan)
    }

    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// `(name, shape)` of every parameter tensor this layer needs, in
    /// binding order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.channels;
        let mut out = Vec::new();
        for name in ["w_q", "w_k", "w_v", "w_o"] {
            out.push((name.to_string(), vec![c, c]));
            out.push((format!("b_{}", &name[2..]), vec![c]));
        }
        let slots = self.sharing.slots(self.heads);
        for (id, ix) in &self.bias_index {
            out.push((format!("kernel_bias.{id}"), vec![slots, ix.key_count]));
        }
        if self.block_bias {
            out.push(("block_bias".into(), vec![self.instances.len()]));
        }
        out
    }

    fn bias_slot(&self, head: usize) -> usize {
        match self.sharing {
            BiasSharing::PerHead => head,
            _ => 0,
        }
    }

    fn check_input(&self, shape: &[usize], vars: &AttentionVars) -> Result<()> {
        let ok = shape.len() == 2 && shape[0] == self.height * self.width && shape[1] == self.channels;
        if !ok {
            return Err(Error::Shape {
                op: "attention",
                detail: format!("input {shape:?} for a {}x{} grid with {} channels", self.height, self.width, self.channels),
            });
        }
        if self.bias_mode.is_some() {
            for id in self.bias_index.keys() {
                if !vars.kernel_bias.contains_key(id) {
                    return Err(Error::MissingBiasTable(id.clone()));
                }
            }
        }
        if self.block_bias && vars.block_bias.is_none() {
            return Err(Error::InvalidArgument("block bias enabled but not bound".into()));
        }
        Ok(())
    }

    /// Records the layer on `g`. `x` is `[H*W, C]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, vars: &AttentionVars, winnow: bool) -> Result<Var> {
        self.check_input(g.shape(x), vars)?;
        let mut parts = Vec::with_capacity(self.instances.len());
        for (i, inst) in self.instances.iter().enumerate() {
            let xs = g.gather_rows(x, &inst.sensor_rows)?;
            let xq = if winnow { g.gather_rows(x, &inst.core_rows)? } else { xs };
            let o = self.instance(g, i, xs, xq, vars, winnow)?;
            parts.push((o, inst.core_rows.clone()));
        }
        g.assemble_rows(self.height * self.width, parts)
    }

    /// Forward-only evaluation with instances spread over the current rayon
    /// pool. Each instance runs the same op sequence as [`Self::forward`], so
    /// results are bitwise identical for any thread count.
    pub fn infer<T: Scalar>(&self, x: &Tensor<T>, params: &AttentionLayerParams<T>, winnow: bool) -> Result<Tensor<T>> {
        let mut probe = Graph::new();
        let probe_vars = params.bind(&mut probe);
        self.check_input(x.shape(), &probe_vars)?;
        let outs: Vec<Tensor<T>> = (0..self.instances.len())
            .into_par_iter()
            .map(|i| {
                let inst = &self.instances[i];
                let mut g = Graph::new();
                let vars = params.bind(&mut g);
                let xs = g.constant(tensor::gather_rows(x, &inst.sensor_rows)?);
                let xq = if winnow { g.constant(tensor::gather_rows(x, &inst.core_rows)?) } else { xs };
                let o = self.instance(&mut g, i, xs, xq, &vars, winnow)?;
                Ok(g.value(o).clone())
            })
            .collect::<Result<_>>()?;
        let mut out = Tensor::zeros(x.shape());
        let c = self.channels;
        for (inst, o) in self.instances.iter().zip(&outs) {
            for (&row, src) in inst.core_rows.iter().zip(o.data().chunks_exact(c)) {
                out.data_mut()[row * c..(row + 1) * c].copy_from_slice(src);
            }
        }
        Ok(out)
    }

    /// One instance: `xs` are the sensor rows, `xq` the query rows (core rows
    /// with winnow, otherwise `xs`). Returns the `U x C` core output.
    fn instance<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        i: usize,
        xs: Var,
        xq: Var,
        vars: &AttentionVars,
        winnow: bool,
    ) -> Result<Var> {
        let inst = &self.instances[i];
        let (u, s) = (inst.core_rows.len(), inst.sensor_rows.len());
        let d = self.head_dim();
        let scale = T::one() / T::of(d as f64).sqrt();
        let q = affine(g, xq, vars.w_q, vars.b_q)?;
        let k = affine(g, xs, vars.w_k, vars.b_k)?;
        let v = affine(g, xs, vars.w_v, vars.b_v)?;
        let q_rows = if winnow { u } else { s };
        let block = match (self.block_bias, vars.block_bias) {
            (true, Some(b)) => Some(g.gather_elems(b, vec![i; q_rows * s], &[q_rows, s])?),
            _ => None,
        };
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * d, d)?;
            let kh = g.slice_cols(k, h * d, d)?;
            let vh = g.slice_cols(v, h * d, d)?;
            let scores = g.matmul_nt(qh, kh)?;
            let mut p = g.scale(scores, scale);
            if let (Some(_), Some(&theta)) = (self.bias_mode, vars.kernel_bias.get(&inst.shape_id)) {
                let ix = &self.bias_index[&inst.shape_id];
                let b = g.gather_elems(theta, ix.flat_for_slot(self.bias_slot(h)), &[u, s])?;
                let b = if winnow {
                    b
                } else {
                    // non-core rows get zero bias; they are discarded below
                    let zeros = g.constant(Tensor::zeros(&[s, s]));
                    g.scatter_rows(zeros, b, &inst.core_in_sensor)?
                };
                p = g.add(p, b)?;
            }
            if let Some(bb) = block {
                p = g.add(p, bb)?;
            }
            let attn = g.softmax_rows(p)?;
            let out = g.matmul(attn, vh)?;
            let out = if winnow { out } else { g.gather_rows(out, &inst.core_in_sensor)? };
            heads.push(out);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        affine(g, cat, vars.w_o, vars.b_o)
    }
}

fn affine<T: Scalar>(g: &mut Graph<'_, T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Pattern attention on plain tensors.
pub fn pattern_attention_forward<T: Scalar>(
    x: &Tensor<T>,
    layout: &PatternLayout,
    params: &AttentionLayerParams<T>,
    flags: AttentionFlags,
) -> Result<Tensor<T>> {
    if flags.block_bias != params.block_bias.is_some() {
        return Err(Error::InvalidArgument("block_bias flag does not match the parameters".into()));
    }
    AttentionPlan::for_params(layout, params)?.infer(x, params, flags.winnow)
}

/// Full-window attention over an `height x width` map: one instance whose
/// core and sensor are the whole grid.
pub fn canonical_attention_forward<T: Scalar>(
    x: &Tensor<T>,
    height: usize,
    width: usize,
    params: &AttentionLayerParams<T>,
) -> Result<Tensor<T>> {
    let layout = PatternLayout::full_window(height, width)?;
    let flags = AttentionFlags { winnow: false, block_bias: params.block_bias.is_some() };
    pattern_attention_forward(x, &layout, params, flags)
}

/// Triple-sum evaluation of `A[r,c] = sum_j sum_i Q[r,j] K[i,j] V[i,c]`
/// exactly as written: no softmax, no scaling.
pub fn qkva_oracle(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (h, w) = q.dims2("qkva_oracle")?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::Shape {
            op: "qkva_oracle",
            detail: format!("Q {:?}, K {:?}, V {:?}", q.shape(), k.shape(), v.shape()),
        });
    }
    let mut out = Tensor::zeros(&[h, w]);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for j in 0..w {
                for i in 0..h {
                    acc += q.at(r, j) * k.at(i, j) * v.at(i, c);
                }
            }
            out.data_mut()[r * w + c] = acc;
        }
    }
    Ok(out)
}

/// Multiply-add counts of one pattern attention layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FlopCount {
    pub p_stage_madds: u64,
    pub av_stage_madds: u64,
    pub proj_madds: u64,
    pub total: u64,
}

impl std::ops::Add for FlopCount {
    type Output = FlopCount;

    fn add(self, o: FlopCount) -> FlopCount {
        FlopCount {
            p_stage_madds: self.p_stage_madds + o.p_stage_madds,
            av_stage_madds: self.av_stage_madds + o.av_stage_madds,
            proj_madds: self.proj_madds + o.proj_madds,
            total: self.total + o.total,
        }
    }
}

/// Counts for one instance with `u` core and `s` sensor cells. Query rows
/// are `u` with winnow and `s` without; the output projection only ever
/// touches core rows.
pub fn instance_flops(u: usize, s: usize, channels: usize, heads: usize, winnow: bool) -> FlopCount {
    let (u, s, c, h) = (u as u64, s as u64, channels as u64, heads as u64);
    let d = c / h;
    let rows = if winnow { u } else { s };
    let p = h * rows * s * d;
    let av = h * rows * s * d;
    let proj = rows * c * c + 2 * s * c * c + u * c * c;
    FlopCount { p_stage_madds: p, av_stage_madds: av, proj_madds: proj, total: p + av + proj }
}

pub fn flop_count(layout: &PatternLayout, channels: usize, heads: usize, flags: AttentionFlags) -> FlopCount {
    layout
        .instances
        .iter()
        .map(|i| instance_flops(i.core_cells.len(), i.sensor_cells.len(), channels, heads, flags.winnow))
        .fold(FlopCount::default(), |a, b| a + b)
}

/// C-style `%.9e` rendering, e.g. `-1.250000000e-03`.
pub fn format_sci(v: f64) -> String {
    let s = format!("{v:.9e}");
    match s.split_once('e') {
        Some((mant, exp)) => {
            let (sign, digits) = match exp.strip_prefix('-') {
                Some(d) => ('-', d),
                None => ('+', exp),
            };
            format!("{mant}e{sign}{digits:0>2}")
        }
        None => s,
    }
}

/// Row-major CSV of a matrix with `%.9e` values.
pub fn matrix_csv<T: Scalar>(m: &Tensor<T>) -> Result<String> {
    let (rows, cols) = m.dims2("matrix_csv")?;
    let mut out = String::new();
    for r in 0..rows {
        let line: Vec<String> = (0..cols).map(|c| format_sci(m.at(r, c).to_f64_lossy())).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}
