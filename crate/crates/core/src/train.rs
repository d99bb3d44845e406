//! Adam optimisation of a [`Model`] on patch batches with the soft-Dice loss,
//! case-level train/validation splitting, and checkpoint files.
//!
//! Checkpoint layout, little-endian:
//!
//! | field        | type                                  |
//! |--------------|---------------------------------------|
//! | magic        | `b"PWCK"`                             |
//! | version      | `u32` = 1                             |
//! | meta length  | `u64`                                 |
//! | meta         | UTF-8 JSON ([`CheckpointMeta`])       |
//! | tensor count | `u32`                                 |
//! | per tensor   | `u32` name length, name, `u64` blob length, `.pwt` blob |
//!
//! Adam moments are stored as `adam.m.<param>` and `adam.v.<param>`.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Init, ParamStore, DICE_EPS};
use crate::error::{Error, Result};
use crate::io::raw;
use crate::model::{ArchConfig, Inputs, Model, ModelKind};
use crate::preproc::Patch;
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Validation share of cases; the default is 7 of 43.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            val_fraction: 7.0 / 43.0,
        }
    }
}

impl TrainConfig {
    pub const PUBLISHED_LEARNING_RATE: f64 = 1e-5;

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Number of validation cases for a corpus of `n` cases.
    pub fn n_val(&self, n: usize) -> usize {
        let v = (n as f64 * self.val_fraction).round() as usize;
        v.min(n.saturating_sub(1))
    }
}

/// First and second moment estimates per parameter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState<T: Scalar = f32> {
    pub t: u64,
    pub m: IndexMap<String, Tensor<T>>,
    pub v: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(k, p)| (k.to_string(), Tensor::zeros(p.dims())))
                .collect()
        };
        Self {
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update of every parameter present in `grads`.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &IndexMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Shape(format!("gradient for unknown parameter {name:?}")))?;
        if p.dims() != g.dims() {
            return Err(Error::Shape(format!(
                "gradient {name} has dims {:?}, parameter has {:?}",
                g.dims(),
                p.dims()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (b1t, b2t) = (T::from_f64(b1), T::from_f64(b2));
    let (ib1, ib2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
    let (c1, c2) = (T::from_f64(c1), T::from_f64(c2));
    let lr = T::from_f64(cfg.learning_rate);
    let eps = T::from_f64(cfg.adam_eps);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.dims()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.dims()));
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1t * *mi + ib1 * gi;
            *vi = b2t * *vi + ib2 * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Builds `(inputs, labels)` for a batch of patches.
pub fn batch_inputs(
    patches: &[&Patch],
    n_pwi: usize,
    n_maps: usize,
) -> Result<(Inputs<f32>, Tensor<f32>)> {
    let first = patches
        .first()
        .ok_or_else(|| Error::Data("empty batch".into()))?;
    let d = first.channels.dims();
    let (c, p) = (d[0], d[1]);
    if c < n_pwi + n_maps {
        return Err(Error::Shape(format!(
            "patches carry {c} channels, model needs {}",
            n_pwi + n_maps
        )));
    }
    let pp = p * p;
    let b = patches.len();
    let mut pwi = Vec::with_capacity(b * n_pwi * pp);
    let mut maps = Vec::with_capacity(b * n_maps * pp);
    let mut gt = Vec::with_capacity(b * pp);
    for pt in patches {
        if pt.channels.dims() != d {
            return Err(Error::Shape("patches in a batch differ in shape".into()));
        }
        let data = pt.channels.data();
        pwi.extend_from_slice(&data[..n_pwi * pp]);
        maps.extend_from_slice(&data[n_pwi * pp..(n_pwi + n_maps) * pp]);
        gt.extend_from_slice(pt.gt.data());
    }
    Ok((
        Inputs {
            pwi: Some(Tensor::from_vec(&[b, n_pwi, p, p], pwi)?),
            maps: Some(Tensor::from_vec(&[b, n_maps, p, p], maps)?),
        },
        Tensor::from_vec(&[b, 1, p, p], gt)?,
    ))
}

/// A model with its optimiser state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(&model.params);
        Ok(Self {
            model,
            adam,
            config,
        })
    }

    /// One forward/backward/update on a batch; returns the batch loss.
    pub fn step(&mut self, inputs: &Inputs<f32>, labels: &Tensor<f32>) -> Result<f64> {
        let mut g = Graph::new();
        let f = self.model.forward_graph(&mut g, inputs)?;
        let loss_id = g.soft_dice_loss(f.prob, labels, DICE_EPS)?;
        let loss = g.value(loss_id).data()[0].as_f64();
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training loss became {loss}")));
        }
        let grads = g.backward(loss_id)?.into_params();
        drop(g);
        if grads
            .values()
            .any(|t| t.data().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        adam_step(&mut self.model.params, &grads, &mut self.adam, &self.config)?;
        Ok(loss)
    }

    /// Loss of a batch without updating.
    pub fn loss(&self, inputs: &Inputs<f32>, labels: &Tensor<f32>) -> Result<f64> {
        let mut g = Graph::new();
        let f = self.model.forward_graph(&mut g, inputs)?;
        let l = g.soft_dice_loss(f.prob, labels, DICE_EPS)?;
        Ok(g.value(l).data()[0].as_f64())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean soft Dice over validation patches; absent without validation cases.
    pub val_dice: Option<f64>,
}

/// Case ids on each side of the split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Case ids in first-appearance order, shuffled by `rng`; the first
/// `n_val` become validation cases.
pub fn split_cases(patches: &[Patch], cfg: &TrainConfig, rng: &SeededRng) -> Result<Split> {
    let mut ids: Vec<String> = Vec::new();
    for p in patches {
        if !ids.contains(&p.case_id) {
            ids.push(p.case_id.clone());
        }
    }
    if ids.is_empty() {
        return Err(Error::Data("no training patches".into()));
    }
    let n_val = cfg.n_val(ids.len());
    let mut order = ids.clone();
    rng.split("split").shuffle(&mut order);
    let val: Vec<String> = order[..n_val].to_vec();
    let train = ids.into_iter().filter(|id| !val.contains(id)).collect();
    Ok(Split { train, val })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub config: TrainConfig,
    pub split: Split,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters are kept.
    pub best_epoch: usize,
    /// Side of the training patches; the default inference tile.
    pub patch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub arch: ArchConfig,
    pub params: ParamStore<f32>,
    pub adam: AdamState<f32>,
    pub meta: TrainMeta,
}

impl Checkpoint {
    /// Validates the parameter layout and optionally the model kind.
    pub fn into_model(self, expected: Option<ModelKind>) -> Result<Model<f32>> {
        if let Some(k) = expected {
            if k != self.kind {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "checkpoint holds a {} model, {k} requested",
                    self.kind
                )));
            }
        }
        Model::from_params(self.kind, self.arch, self.params)
    }
}

fn mean_val_dice(model: &Model<f32>, patches: &[&Patch], batch: usize) -> Result<f64> {
    let cfg = &model.config;
    let mut total = 0.0;
    for chunk in patches.chunks(batch) {
        let (inputs, labels) = batch_inputs(chunk, cfg.pwi_channels, cfg.map_channels)?;
        let mut g = Graph::new();
        let f = model.forward_graph(&mut g, &inputs)?;
        let l = g.soft_dice_loss(f.prob, &labels, DICE_EPS)?;
        total += (1.0 - g.value(l).data()[0].as_f64()) * chunk.len() as f64;
    }
    Ok(total / patches.len() as f64)
}

/// Full training run. `on_epoch` sees every record as it is produced.
pub fn train(
    patches: &[Patch],
    kind: ModelKind,
    arch: &ArchConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    cfg.validate()?;
    let rng = SeededRng::new(cfg.seed);
    let split = split_cases(patches, cfg, &rng)?;
    let train_set: Vec<&Patch> = patches
        .iter()
        .filter(|p| split.train.contains(&p.case_id))
        .collect();
    let val_set: Vec<&Patch> = patches
        .iter()
        .filter(|p| split.val.contains(&p.case_id))
        .collect();
    let model = Model::<f32>::build(kind, arch.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore<f32>, AdamState<f32>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        rng.split(&format!("epoch-{epoch}")).shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Patch> = chunk.iter().map(|&i| train_set[i]).collect();
            let (inputs, labels) = batch_inputs(&batch, arch.pwi_channels, arch.map_channels)?;
            total += trainer.step(&inputs, &labels)? * batch.len() as f64;
        }
        let val_dice = if val_set.is_empty() {
            None
        } else {
            Some(mean_val_dice(&trainer.model, &val_set, cfg.batch_size)?)
        };
        let rec = EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_dice,
        };
        on_epoch(&rec);
        let score = val_dice.unwrap_or(f64::NEG_INFINITY);
        if best
            .as_ref()
            .is_none_or(|b| score > b.0 || val_dice.is_none())
        {
            best = Some((
                score,
                epoch,
                trainer.model.params.clone(),
                trainer.adam.clone(),
            ));
        }
        history.push(rec);
    }
    let (params, adam, best_epoch) = match best {
        Some((_, e, p, a)) => (p, a, e),
        None => (trainer.model.params.clone(), trainer.adam.clone(), 0),
    };
    Ok(Checkpoint {
        kind,
        arch: arch.clone(),
        params,
        adam,
        meta: TrainMeta {
            config: cfg.clone(),
            split,
            history,
            best_epoch,
            patch_size: patches[0].gt.dims()[0],
        },
    })
}

/// `loss.csv` contents: `epoch,train_loss,val_dice`.
pub fn loss_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_dice\n");
    for r in history {
        let v = r
            .val_dice
            .map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        s.push_str(&format!("{},{:.6},{}\n", r.epoch, r.train_loss, v));
    }
    s
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PWCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    kind: ModelKind,
    arch: ArchConfig,
    adam_t: u64,
    inits: Vec<Init>,
    train: TrainMeta,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        kind: ck.kind,
        arch: ck.arch.clone(),
        adam_t: ck.adam.t,
        inits: ck
            .params
            .names()
            .map(|n| ck.params.init_of(n).expect("listed"))
            .collect(),
        train: ck.meta.clone(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let mut tensors: Vec<(String, &Tensor<f32>)> =
        ck.params.iter().map(|(k, t)| (k.to_string(), t)).collect();
    for (k, t) in &ck.adam.m {
        tensors.push((format!("adam.m.{k}"), t));
    }
    for (k, t) in &ck.adam.v {
        tensors.push((format!("adam.v.{k}"), t));
    }
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let blob = raw::write_tensor(t);
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        out.extend_from_slice(&blob);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let len = r.u64()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(len)?)?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    let mut adam = AdamState {
        t: meta.adam_t,
        m: IndexMap::new(),
        v: IndexMap::new(),
    };
    let mut inits = meta.inits.iter();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let blen = r.u64()? as usize;
        let t = match raw::read_raw(r.take(blen)?)?.data {
            raw::RawData::F32(t) => t,
            raw::RawData::F64(_) => return Err(Error::Format(format!("tensor {name} is not f32"))),
        };
        if let Some(k) = name.strip_prefix("adam.m.") {
            adam.m.insert(k.to_string(), t);
        } else if let Some(k) = name.strip_prefix("adam.v.") {
            adam.v.insert(k.to_string(), t);
        } else {
            let init = *inits
                .next()
                .ok_or_else(|| Error::Format("checkpoint lists fewer inits than tensors".into()))?;
            params.insert(&name, t, init)?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    // layout check against the declared architecture
    let model = Model::from_params(meta.kind, meta.arch.clone(), params)?;
    Ok(Checkpoint {
        kind: meta.kind,
        arch: meta.arch,
        params: model.params,
        adam,
        meta: meta.train,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    raw::save(path, &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
