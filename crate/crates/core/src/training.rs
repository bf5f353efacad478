//! Mini-batch SGD on the joint objective, checkpoints and fine-tuning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::model::{derive_seed, total_loss, Ablation, GradBuffer, LossBreakdown, Model, Objective};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Step between consecutive training window starts.
    pub window_stride: usize,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma1: 1.0,
            gamma2: 1.0,
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 600,
            batch_size: 128,
            seed: 0,
            window_stride: 1,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.gamma1 >= 0.0 && self.gamma2 >= 0.0) {
            return bad("train.gamma1 and train.gamma2 must be non-negative");
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("train.learning_rate must be >= 0 and train.momentum in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("train.weight_decay must be non-negative");
        }
        if self.batch_size < 2 {
            return bad("train.batch_size must be at least 2 so every step has negatives");
        }
        if self.window_stride == 0 {
            return bad("train.window_stride must be positive");
        }
        Ok(())
    }

    /// Loss definition for this run.
    pub fn objective(&self, lambda: f64, augment: &AugmentConfig) -> Objective {
        Objective {
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            lambda,
            augment: augment.clone(),
            ablation: self.ablation.clone(),
        }
    }
}

/// SGD with momentum and decoupled-from-exempt weight decay:
/// `v ← m·v + g + W·p`, `p ← p − lr·v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(store: &ParamStore, learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            weight_decay,
            velocity: store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) {
        for ((p, g), v) in store.iter_mut().zip(grads.iter()).zip(&mut self.velocity) {
            let decay = if p.weight_decay_exempt { 0.0 } else { self.weight_decay };
            let (pd, gd, vd) = (p.value.data_mut(), g.data(), v.data_mut());
            for i in 0..pd.len() {
                vd[i] = self.momentum * vd[i] + gd[i] + decay * pd[i];
                pd[i] -= self.learning_rate * vd[i];
            }
        }
    }
}

/// One epoch of training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's steps.
    pub mean: LossBreakdown,
    pub steps: Vec<LossBreakdown>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean.total).collect()
    }
}

/// Trains `model` on `train` windows for `cfg.epochs` epochs.
pub fn fit(model: &mut Model, train: &[Tensor], cfg: &TrainConfig, objective: &Objective) -> Result<History> {
    fit_with(model, train, cfg, objective, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with(
    model: &mut Model,
    train: &[Tensor],
    cfg: &TrainConfig,
    objective: &Objective,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    let mut history = History::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    if train.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "the training split yields {} windows, fewer than batch_size {}",
            train.len(),
            cfg.batch_size
        )));
    }
    let mut opt = Sgd::new(model.store(), cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    let mut grads = GradBuffer::zeros(model.store());
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, epoch as u64);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut steps = Vec::new();
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let batch: Vec<Tensor> = idx.iter().map(|&i| train[i].clone()).collect();
            grads.reset();
            let loss = total_loss(
                model,
                &batch,
                objective,
                derive_seed(epoch_seed, step as u64),
                true,
                Some(&mut grads),
            )?;
            if !grads.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at epoch {epoch}, step {step}"
                )));
            }
            opt.step(model.store_mut(), &grads);
            steps.push(loss);
        }
        let n = steps.len() as f64;
        let mean = LossBreakdown {
            total: steps.iter().map(|s| s.total).sum::<f64>() / n,
            time: steps.iter().map(|s| s.time).sum::<f64>() / n,
            freq: steps.iter().map(|s| s.freq).sum::<f64>() / n,
        };
        let record = EpochRecord { epoch, mean, steps };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok(history)
}

/// Continues training a pretrained model on new data. A change in the
/// number of input features requires `reinit_input`, which replaces the
/// input projection with a fresh one sized for the new data.
pub fn fine_tune(
    model: &Model,
    train: &[Tensor],
    cfg: &TrainConfig,
    objective: &Objective,
    reinit_input: bool,
) -> Result<(Model, History)> {
    let d = match train.first() {
        Some(w) => w.dims2()?.1,
        None => {
            return Err(Error::Config("fine-tuning data yields no windows".into()));
        }
    };
    let expected = model.config().backbone.input_dim;
    let mut tuned = if reinit_input {
        model.with_input_dim(d, derive_seed(cfg.seed, 0x1A))?
    } else if d != expected {
        return Err(Error::Config(format!(
            "checkpoint was trained on {expected} input features but the fine-tuning data has {d}; \
             re-initialize the input layer (--reinit-input) to transfer"
        )));
    } else {
        model.clone()
    };
    let history = fit(&mut tuned, train, cfg, objective)?;
    Ok((tuned, history))
}

const MAGIC: &[u8; 8] = b"MFFCKPT\0";
const FORMAT_VERSION: u32 = 1;

/// Serialized training state: resolved configuration text, epoch counter,
/// RNG seed and every named parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub epoch: u64,
    /// All sampling in training derives from this seed and the epoch counter.
    pub rng_seed: u64,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn capture(model: &Model, config_text: impl Into<String>, epoch: u64, rng_seed: u64) -> Self {
        Checkpoint {
            config_text: config_text.into(),
            epoch,
            rng_seed,
            params: model.store().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    /// Copies the stored parameters into `model`; names and shapes must match.
    pub fn restore(&self, model: &mut Model) -> Result<()> {
        if self.params.len() != model.store().len() {
            return Err(Error::Validation(format!(
                "checkpoint holds {} parameters, model has {}",
                self.params.len(),
                model.store().len()
            )));
        }
        for (name, value) in &self.params {
            if model.store().by_name(name).is_none() {
                return Err(Error::Validation(format!("model has no parameter {name:?}")));
            }
            model.store_mut().set(name, value.clone())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_text.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.rng_seed.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Validation("not a checkpoint file (bad magic bytes)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let len = r.u64()? as usize;
        let config_text = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Validation("checkpoint config is not UTF-8".into()))?;
        let epoch = r.u64()?;
        let rng_seed = r.u64()?;
        let count = r.u64()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Validation("parameter name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let payload = r.take(n.checked_mul(8).ok_or_else(|| truncated())?)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Validation("trailing bytes after checkpoint payload".into()));
        }
        Ok(Checkpoint {
            config_text,
            epoch,
            rng_seed,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn truncated() -> Error {
    Error::Validation("checkpoint is truncated".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap(), false).unwrap();
        s.add("b", Tensor::new(vec![1], vec![3.0]).unwrap(), true).unwrap();
        s
    }

    fn grads(s: &ParamStore, g: &[f64]) -> GradBuffer {
        let mut buf = GradBuffer::zeros(s);
        let mut tape = crate::tape::Tape::new(s);
        let w = tape.param(s.id("w").unwrap());
        let b = tape.param(s.id("b").unwrap());
        let c = tape.constant(Tensor::new(vec![2], g[..2].to_vec()).unwrap());
        let wc = tape.mul(w, c).unwrap();
        let l = tape.sum(wc);
        let cb = tape.constant(Tensor::new(vec![1], vec![g[2]]).unwrap());
        let bc = tape.mul(b, cb).unwrap();
        let lb = tape.sum(bc);
        let loss = tape.add(l, lb).unwrap();
        buf.accumulate(tape.backward(loss).unwrap(), 1.0);
        buf
    }

    #[test]
    fn vanilla_step() {
        let mut s = store();
        let g = grads(&s, &[0.5, 0.25, -1.0]);
        Sgd::new(&s, 1.0, 0.0, 0.0).step(&mut s, &g);
        assert_eq!(s.by_name("w").unwrap().value.data(), &[0.5, -2.25]);
        assert_eq!(s.by_name("b").unwrap().value.data(), &[4.0]);
    }

    #[test]
    fn decay_skips_exempt_parameters() {
        let mut s = store();
        let g = grads(&s, &[0.0, 0.0, 0.0]);
        let mut opt = Sgd::new(&s, 0.1, 0.0, 0.5);
        opt.step(&mut s, &g);
        assert_eq!(s.by_name("w").unwrap().value.data(), &[0.95, -1.9]);
        assert_eq!(s.by_name("b").unwrap().value.data(), &[3.0]);
        let before = s.clone();
        let mut frozen = Sgd::new(&s, 0.0, 0.9, 0.5);
        frozen.step(&mut s, &g);
        assert_eq!(s, before);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let ck = Checkpoint {
            config_text: "a = 1\n".into(),
            epoch: 3,
            rng_seed: 9,
            params: vec![("p".into(), Tensor::new(vec![1, 2], vec![0.1, f64::MIN_POSITIVE]).unwrap())],
        };
        let bytes = ck.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
