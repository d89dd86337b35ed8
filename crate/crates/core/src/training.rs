//! Optimization and verification at desk scale: AdamW with a cosine
//! schedule, a seeded synthetic classification set, the training loop,
//! finite-difference gradient audits and binary checkpoints.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.05 }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub step: u64,
    pub m: IndexMap<String, Tensor<T>>,
    pub v: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape()))).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }

    pub fn cast<U: Scalar>(&self) -> OptimState<U> {
        let c = |m: &IndexMap<String, Tensor<T>>| m.iter().map(|(k, v)| (k.clone(), v.cast())).collect();
        OptimState { step: self.step, m: c(&self.m), v: c(&self.v) }
    }
}

/// Decoupled weight decay followed by a bias-corrected Adam update. Every
/// gradient is checked before any parameter changes.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &IndexMap<String, Tensor<T>>,
    state: &mut OptimState<T>,
    hyper: &AdamWConfig,
    lr: f64,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| Error::UnknownParam(format!("no gradient for {name}")))?;
        let (m, v) = (state.m.get(name), state.v.get(name));
        if g.shape() != p.shape() || m.map(Tensor::shape) != Some(p.shape()) || v.map(Tensor::shape) != Some(p.shape()) {
            return Err(Error::Shape { op: "adamw_step", detail: format!("{name}: parameter {:?}", p.shape()) });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::of(1.0 - hyper.beta1.powi(t));
    let bc2 = T::of(1.0 - hyper.beta2.powi(t));
    let (b1, b2) = (T::of(hyper.beta1), T::of(hyper.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - hyper.beta1), T::of(1.0 - hyper.beta2));
    let decay = T::of(1.0 - lr * hyper.weight_decay);
    let (lr, eps) = (T::of(lr), T::of(hyper.eps));
    for (name, p) in params.iter_mut() {
        let g = grads[name].data();
        let m = state.m.get_mut(name).expect("checked").data_mut();
        let v = state.v.get_mut(name).expect("checked").data_mut();
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *p *= decay;
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Cosine decay from `base` at step 0 towards zero at `total`.
pub fn cosine_lr(base: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    let t = (step.min(total) as f64) / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Parameters of the synthetic dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub num_classes: usize,
    pub channels: usize,
    pub side: usize,
    pub noise: f64,
    /// Number of distinct training samples; batches cycle through them.
    pub size: usize,
}

/// Class `c` images are a fixed random template for `c` plus Gaussian
/// noise. Sample `i` has class `i % k`, so every prefix of length `k` is
/// balanced, and depends only on `(seed, i)`.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    templates: Vec<Vec<f64>>,
}

const TEMPLATE_STREAM: u64 = 1 << 63;

impl SynthDataset {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        if spec.num_classes == 0 || spec.size == 0 || spec.channels == 0 || spec.side == 0 {
            return Err(Error::InvalidArgument("dataset dimensions must be positive".into()));
        }
        if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise {} is not a non-negative number", spec.noise)));
        }
        let n = spec.channels * spec.side * spec.side;
        let templates = (0..spec.num_classes as u64)
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(TEMPLATE_STREAM | c);
                (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
            })
            .collect();
        Ok(Self { spec, templates })
    }

    /// Dataset matching a model's input geometry.
    pub fn for_model(config: &ModelConfig, seed: u64, noise: f64, size: usize) -> Result<Self> {
        Self::new(SynthSpec {
            seed,
            num_classes: config.num_classes,
            channels: config.in_channels,
            side: config.image_side,
            noise,
            size,
        })
    }

    pub fn label(&self, index: usize) -> usize {
        index % self.spec.num_classes
    }

    pub fn sample<T: Scalar>(&self, index: usize) -> (Tensor<T>, usize) {
        let label = self.label(index);
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(index as u64);
        let noise = Normal::new(0.0, self.spec.noise).expect("validated noise");
        let s = &self.spec;
        let img = Tensor::from_fn(&[s.channels, s.side, s.side], |i| {
            T::of(self.templates[label][i] + noise.sample(&mut rng))
        });
        (img, label)
    }

    /// Indices of the batch used at `step`.
    pub fn batch_indices(&self, step: u64, batch: usize) -> Vec<usize> {
        (0..batch).map(|j| (step as usize * batch + j) % self.spec.size).collect()
    }

    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> (Vec<Tensor<T>>, Vec<usize>) {
        indices.iter().map(|&i| self.sample(i)).unzip()
    }
}

/// Everything besides the architecture needed to run or resume training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub steps: u64,
    pub seed: u64,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub dataset: SynthSpec,
}

impl TrainSpec {
    /// Desk-scale defaults: batch 32, lr 1e-3, weight decay 0.05, 512
    /// samples at noise 0.1.
    pub fn desk(config: &ModelConfig, steps: u64, seed: u64) -> Self {
        Self {
            steps,
            seed,
            batch_size: 32,
            optimizer: AdamWConfig::default(),
            dataset: SynthSpec {
                seed,
                num_classes: config.num_classes,
                channels: config.in_channels,
                side: config.image_side,
                noise: 0.1,
                size: 512,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

/// Model, optimizer state and data for one training run.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: Model<T>,
    pub optim: OptimState<T>,
    pub spec: TrainSpec,
    pub dataset: SynthDataset,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: ModelConfig, spec: TrainSpec) -> Result<Self> {
        if spec.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let d = &spec.dataset;
        if d.num_classes != config.num_classes || d.channels != config.in_channels || d.side != config.image_side {
            return Err(Error::Config("dataset geometry does not match the model".into()));
        }
        let model = Model::new(config, spec.seed)?;
        let optim = OptimState::new(&model.params);
        let dataset = SynthDataset::new(spec.dataset)?;
        Ok(Self { model, optim, spec, dataset })
    }

    pub fn step_count(&self) -> u64 {
        self.optim.step
    }

    pub fn is_done(&self) -> bool {
        self.optim.step >= self.spec.steps
    }

    /// One optimizer step on the next batch. Aborts on a non-finite loss.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let step = self.optim.step;
        let idx = self.dataset.batch_indices(step, self.spec.batch_size);
        let (images, labels) = self.dataset.batch::<T>(&idx);
        let out = self.model.batch_gradients(&images, &labels)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {} at step {step}", out.loss)));
        }
        let lr = cosine_lr(self.spec.optimizer.lr, step, self.spec.steps);
        adamw_step(&mut self.model.params, &out.grads, &mut self.optim, &self.spec.optimizer, lr)?;
        Ok(StepMetrics { step, loss: out.loss, accuracy: out.correct as f64 / images.len() as f64, lr })
    }

    /// Runs until the configured step count, calling `log` after each step.
    pub fn run(&mut self, mut log: impl FnMut(&StepMetrics)) -> Result<Vec<StepMetrics>> {
        let mut out = Vec::new();
        while !self.is_done() {
            let m = self.step()?;
            log(&m);
            out.push(m);
        }
        Ok(out)
    }

    /// Accuracy over every distinct training sample.
    pub fn train_accuracy(&self) -> Result<f64> {
        let n = self.dataset.spec.size;
        let mut correct = 0;
        for chunk in (0..n).collect::<Vec<_>>().chunks(64) {
            let (images, labels) = self.dataset.batch::<T>(chunk);
            let logits = self.model.forward(&images)?;
            for (r, &label) in labels.iter().enumerate() {
                let row = logits.row(r);
                let arg = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
                correct += (arg == label) as usize;
            }
        }
        Ok(correct as f64 / n as f64)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config.clone(),
            train: self.spec.clone(),
            params: self.model.params.cast(),
            optim: self.optim.cast(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = Model::from_params(ck.config.clone(), ck.params.cast())?;
        for (name, t) in model.params.iter() {
            let ok = |m: &IndexMap<String, Tensor<f32>>| m.get(name).map(Tensor::shape) == Some(t.shape());
            if !ok(&ck.optim.m) || !ok(&ck.optim.v) {
                return Err(Error::Checkpoint(format!("optimizer state for {name} missing or misshapen")));
            }
        }
        if ck.optim.m.len() != model.params.len() || ck.optim.v.len() != model.params.len() {
            return Err(Error::Checkpoint("optimizer state has extra tensors".into()));
        }
        let dataset = SynthDataset::new(ck.train.dataset)?;
        Ok(Self { model, optim: ck.optim.cast(), spec: ck.train.clone(), dataset })
    }
}

/// Trains `config` from scratch for `spec.steps` steps.
pub fn train<T: Scalar>(config: ModelConfig, spec: TrainSpec) -> Result<(Trainer<T>, Vec<StepMetrics>)> {
    let mut t = Trainer::new(config, spec)?;
    let log = t.run(|_| {})?;
    Ok((t, log))
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PATC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Saved training state. Tensors are stored as 32-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub train: TrainSpec,
    pub params: ParamStore<f32>,
    pub optim: OptimState<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Echo {
    model: ModelConfig,
    train: TrainSpec,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Little-endian layout: magic, version, parameter tensors, optimizer
/// section (step, then `m.*` and `v.*` tensors), JSON echo of the config
/// and training spec, CRC32 of everything before it.
pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ck.params.len() as u64).to_le_bytes());
    for (name, t) in ck.params.iter() {
        put_tensor(&mut out, name, t);
    }
    out.extend_from_slice(&ck.optim.step.to_le_bytes());
    out.extend_from_slice(&((ck.optim.m.len() + ck.optim.v.len()) as u64).to_le_bytes());
    for (prefix, map) in [("m", &ck.optim.m), ("v", &ck.optim.v)] {
        for (name, t) in map {
            put_tensor(&mut out, &format!("{prefix}.{name}"), t);
        }
    }
    let echo = serde_json::to_vec(&Echo { model: ck.config.clone(), train: ck.train.clone() }).expect("serializable");
    out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    out.extend_from_slice(&echo);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn count(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).ok().filter(|&n| n <= self.buf.len()).ok_or_else(|| Error::Checkpoint(format!("bad count {n}")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.count()?);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.filter(|&n| n <= self.buf.len()).ok_or_else(|| Error::Checkpoint(format!("{name}: bad shape")))?;
        let bytes = self.take(n * 4)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        Ok((name, t))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("CRC mismatch (corrupt or truncated file)".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let mut params = ParamStore::new();
    for _ in 0..r.count()? {
        let (name, t) = r.tensor()?;
        if params.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    let step = r.u64()?;
    let (mut m, mut v) = (IndexMap::new(), IndexMap::new());
    for _ in 0..r.count()? {
        let (name, t) = r.tensor()?;
        let (target, key) = match name.split_once('.') {
            Some(("m", k)) => (&mut m, k),
            Some(("v", k)) => (&mut v, k),
            _ => return Err(Error::Checkpoint(format!("unexpected optimizer tensor {name}"))),
        };
        if target.insert(key.to_string(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    let len = r.u32()? as usize;
    let echo: Echo = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("config echo: {e}")))?;
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
    }
    echo.model.check()?;
    // shape check against the echoed config
    Model::from_params(echo.model.clone(), params.clone())?;
    Ok(Checkpoint { config: echo.model, train: echo.train, params, optim: OptimState { step, m, v } })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(ck))?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Gradient audit settings.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub tol: f64,
    pub samples: usize,
    pub step: f64,
    pub batch: usize,
    /// Parameter groups treated as frozen; reported as skipped.
    pub frozen: Vec<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { tol: 1e-4, samples: 200, step: 1e-3, batch: 2, frozen: Vec::new() }
    }
}

/// Denominator floor of the relative error. Central differences at
/// `h = 1e-3` carry an `O(h^2)` truncation error, so coordinates whose
/// gradient is below this are held to an absolute `tol * 1e-6` instead.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupReport {
    pub status: &'static str,
    pub samples: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub passed: bool,
    pub tol: f64,
    pub samples: usize,
    pub max_rel_error: f64,
    pub groups: BTreeMap<String, GroupReport>,
    pub worst: Option<Probe>,
}

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADCHECK_FLOOR)
}

/// Compares backprop against 64-bit central differences on randomly chosen
/// coordinates, stratified so every parameter group is probed.
pub fn gradcheck(config: &ModelConfig, seed: u64, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut model = Model::<f64>::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    // move off the symmetric init so zero-initialized tables get generic gradients
    let jitter = Normal::new(0.0, 0.05).expect("valid std");
    for (_, t) in model.params.iter_mut() {
        for v in t.data_mut() {
            *v += jitter.sample(&mut rng);
        }
    }
    let data = SynthDataset::for_model(config, seed, 0.1, opts.batch.max(1))?;
    let idx: Vec<usize> = (0..opts.batch.max(1)).collect();
    let (images, labels) = data.batch::<f64>(&idx);
    let analytic = model.batch_gradients(&images, &labels)?.grads;

    let mut groups: BTreeMap<String, Vec<(String, usize)>> = BTreeMap::new();
    for (name, t) in model.params.iter() {
        groups.entry(model.param_group(name)).or_default().push((name.to_string(), t.len()));
    }
    let active: Vec<&String> = groups.keys().filter(|g| !opts.frozen.contains(g)).collect();
    let per_group = if active.is_empty() { 0 } else { opts.samples.div_ceil(active.len()) };

    let mut report = GradcheckReport {
        passed: true,
        tol: opts.tol,
        samples: 0,
        max_rel_error: 0.0,
        groups: BTreeMap::new(),
        worst: None,
    };
    let loss = |m: &Model<f64>| -> Result<f64> { tensor::cross_entropy(&m.forward(&images)?, &labels) };
    for (group, members) in &groups {
        if opts.frozen.contains(group) {
            report.groups.insert(group.clone(), GroupReport { status: "skipped", samples: 0, max_rel_error: 0.0 });
            continue;
        }
        let total: usize = members.iter().map(|m| m.1).sum();
        let mut worst = 0.0f64;
        for _ in 0..per_group {
            let mut flat = rng.random_range(0..total);
            let (name, len) = members.iter().find(|(_, len)| {
                let hit = flat < *len;
                if !hit {
                    flat -= len;
                }
                hit
            }).expect("index within group");
            debug_assert!(flat < *len);
            let orig = model.params.get(name).expect("present").data()[flat];
            model.params.get_mut(name).expect("present").data_mut()[flat] = orig + opts.step;
            let plus = loss(&model)?;
            model.params.get_mut(name).expect("present").data_mut()[flat] = orig - opts.step;
            let minus = loss(&model)?;
            model.params.get_mut(name).expect("present").data_mut()[flat] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[name.as_str()].data()[flat];
            let e = rel_error(a, numeric);
            worst = worst.max(e);
            report.samples += 1;
            if report.worst.as_ref().is_none_or(|w| e > w.rel_error) {
                report.worst = Some(Probe { param: name.clone(), index: flat, analytic: a, numeric, rel_error: e });
            }
        }
        report.groups.insert(group.clone(), GroupReport { status: "checked", samples: per_group, max_rel_error: worst });
        report.max_rel_error = report.max_rel_error.max(worst);
    }
    report.passed = report.max_rel_error <= opts.tol && report.max_rel_error.is_finite();
    Ok(report)
}
