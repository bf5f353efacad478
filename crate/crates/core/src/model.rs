//! The assembled network and its joint objective
//! `L_total = γ₁·L_time + γ₂·L_freq`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_view, AugmentConfig};
use crate::ctcm::{time_loss_on_tape, Ctcm, CtcmConfig, Fusion};
use crate::encoder::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::facm::{freq_loss_on_tape, Facm, FacmConfig, FacmOutput};
use crate::params::ParamStore;
use crate::tape::{reborrow, Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Switches for the ablation variants. Flags compose freely.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Feed the raw window as both views.
    pub disable_augmentation: bool,
    /// Skip the frequency module; its fusion input becomes zeros and `L_freq` drops out.
    pub disable_facm_loss: bool,
    /// Skip the time-domain module; its fusion input becomes zeros.
    pub disable_ctcm: bool,
    /// Use GELU instead of SiLU in the backbone.
    pub activation_gelu: bool,
}

impl Ablation {
    /// The named variants of the ablation table.
    pub const VARIANTS: [&'static str; 8] = [
        "full",
        "w/o DA",
        "w/o FM",
        "w/o CM",
        "w/o DA+FM",
        "w/o DA+CM",
        "w/o CM+FM",
        "w/o Si",
    ];

    /// Flag set for a variant name such as `"w/o DA+CM"` (case and spaces ignored).
    pub fn from_variant(name: &str) -> Result<Self> {
        let norm: String = name
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_ascii_lowercase();
        if norm == "full" {
            return Ok(Ablation::default());
        }
        let parts = norm
            .strip_prefix("w/o")
            .ok_or_else(|| Error::Config(format!("unknown ablation variant {name:?}")))?;
        let mut a = Ablation::default();
        for part in parts.split('+') {
            match part {
                "da" => a.disable_augmentation = true,
                "fm" => a.disable_facm_loss = true,
                "cm" => a.disable_ctcm = true,
                "si" => a.activation_gelu = true,
                _ => return Err(Error::Config(format!("unknown ablation variant {name:?}"))),
            }
        }
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Window length `T` the spectral weights are sized for.
    pub window: usize,
    pub backbone: BackboneConfig,
    pub facm: FacmConfig,
    pub ctcm: CtcmConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.facm.validate()?;
        self.ctcm.validate()?;
        if self.window < 2 {
            return Err(Error::Config(format!("window must be at least 2, got {}", self.window)));
        }
        if self.ctcm.max_kernel() > self.window {
            return Err(Error::Config(format!(
                "largest CTCM kernel {} exceeds the window length {}",
                self.ctcm.max_kernel(),
                self.window
            )));
        }
        Ok(())
    }
}

/// Per-view nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct ViewNodes {
    pub r: Var,
    pub facm: Option<FacmOutput>,
    pub time: Option<Var>,
    pub h: Var,
}

/// Values of every intermediate representation for one window.
#[derive(Clone, Debug)]
pub struct Representations {
    pub r: Tensor,
    pub h_freq: Tensor,
    pub h_time: Tensor,
    pub h: Tensor,
}

#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    store: ParamStore,
    backbone: Backbone,
    facm: Facm,
    ctcm: Ctcm,
    fusion: Fusion,
}

impl Model {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let k = cfg.backbone.output_dim;
        let backbone = Backbone::new(&cfg.backbone, &mut store, &mut rng)?;
        let facm = Facm::new(&cfg.facm, k, cfg.window, &mut store, &mut rng)?;
        let ctcm = Ctcm::new(&cfg.ctcm, k, &mut store, &mut rng)?;
        let fusion = Fusion::new(k, &mut store, &mut rng)?;
        Ok(Model {
            cfg: cfg.clone(),
            store,
            backbone,
            facm,
            ctcm,
            fusion,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// A copy sized for `d` input features whose input layer is freshly
    /// initialized from `seed`; every other parameter is carried over.
    pub fn with_input_dim(&self, d: usize, seed: u64) -> Result<Model> {
        let mut cfg = self.cfg.clone();
        cfg.backbone.input_dim = d;
        let mut out = Model::new(&cfg, seed)?;
        let skip = [self.backbone.input_weight(), self.backbone.input_bias()];
        for (i, p) in self.store.iter().enumerate() {
            if skip.iter().any(|s| s.index() == i) {
                continue;
            }
            out.store.set(&p.name, p.value.clone())?;
        }
        Ok(out)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn facm(&self) -> &Facm {
        &self.facm
    }

    pub fn ctcm(&self) -> &Ctcm {
        &self.ctcm
    }

    pub fn fusion(&self) -> &Fusion {
        &self.fusion
    }

    /// Representation width `K`.
    pub fn width(&self) -> usize {
        self.cfg.backbone.output_dim
    }

    /// Backbone output for one `T×D` window, inference mode.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(&self.store);
        let v = tape.constant(x.clone());
        let r = self.backbone.forward(&mut tape, v, None)?;
        Ok(tape.value(r).clone())
    }

    /// Runs every module on a window in inference mode.
    pub fn represent(&self, x: &Tensor) -> Result<Representations> {
        let mut tape = Tape::new(&self.store);
        let v = tape.constant(x.clone());
        let nodes = self.forward_view(&mut tape, v, &Ablation::default(), None)?;
        let facm = nodes.facm.expect("frequency module runs without ablation");
        Ok(Representations {
            r: tape.value(nodes.r).clone(),
            h_freq: tape.value(facm.h).clone(),
            h_time: tape.value(nodes.time.expect("time module runs")).clone(),
            h: tape.value(nodes.h).clone(),
        })
    }

    /// Backbone, frequency and time modules plus fusion for one view.
    pub fn forward_view(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        ablation: &Ablation,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<ViewNodes> {
        let r = self.backbone.forward(tape, x, reborrow(&mut rng))?;
        let (t, k) = tape.value(r).dims2()?;
        let facm = if ablation.disable_facm_loss {
            None
        } else {
            Some(self.facm.forward(tape, r, reborrow(&mut rng))?)
        };
        let time = if ablation.disable_ctcm {
            None
        } else {
            Some(self.ctcm.forward(tape, r)?)
        };
        let freq_in = match &facm {
            Some(out) => out.h,
            None => tape.constant(Tensor::zeros(vec![t, k / 2])),
        };
        let time_in = match time {
            Some(v) => v,
            None => tape.constant(Tensor::zeros(vec![t, k / 2])),
        };
        let h = self.fusion.forward(tape, time_in, freq_in)?;
        Ok(ViewNodes { r, facm, time, h })
    }
}

/// Everything besides the parameters that defines the training loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub gamma1: f64,
    pub gamma2: f64,
    pub lambda: f64,
    pub augment: AugmentConfig,
    pub ablation: Ablation,
}

/// Scalar loss components averaged over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub time: f64,
    pub freq: f64,
}

/// Loss nodes for one window.
#[derive(Clone, Copy, Debug)]
pub struct WindowLoss {
    pub total: Var,
    pub time: Var,
    pub freq: Option<Var>,
}

/// SplitMix64 finalizer over two words; derives independent sub-seeds.
pub fn derive_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the per-window objective on `tape`: two views, both modules,
/// fusion, `L_time` averaged over the views, `L_freq` across the views.
pub fn window_loss(
    model: &Model,
    tape: &mut Tape<'_>,
    x: &Tensor,
    objective: &Objective,
    window_seed: u64,
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<WindowLoss> {
    let ab = &objective.ablation;
    let (x1, x2) = if ab.disable_augmentation {
        (x.clone(), x.clone())
    } else {
        let cfg = AugmentConfig {
            seed: derive_seed(objective.augment.seed, window_seed),
            ..objective.augment.clone()
        };
        (augment_view(x, &cfg, 1)?, augment_view(x, &cfg, 2)?)
    };
    let v1 = tape.constant(x1);
    let v2 = tape.constant(x2);
    let n1 = model.forward_view(tape, v1, ab, reborrow(&mut dropout_rng))?;
    let n2 = model.forward_view(tape, v2, ab, reborrow(&mut dropout_rng))?;

    let t1 = time_loss_on_tape(tape, n1.r, n1.h)?;
    let t2 = time_loss_on_tape(tape, n2.r, n2.h)?;
    let time = tape.add(t1, t2)?;
    let time = tape.scale(time, 0.5);
    let weighted_time = tape.scale(time, objective.gamma1);

    let (total, freq) = match (&n1.facm, &n2.facm) {
        (Some(f1), Some(f2)) => {
            let l = freq_loss_on_tape(
                tape,
                (f1.spec_re, f1.spec_im),
                (f2.spec_re, f2.spec_im),
                objective.lambda,
            )?;
            let weighted = tape.scale(l.total, objective.gamma2);
            (tape.add(weighted_time, weighted)?, Some(l.total))
        }
        _ => (weighted_time, None),
    };
    Ok(WindowLoss { total, time, freq })
}

/// Summed parameter gradients, aligned with the store's parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer {
    grads: Vec<Tensor>,
}

impl GradBuffer {
    pub fn zeros(store: &ParamStore) -> Self {
        GradBuffer {
            grads: store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect(),
        }
    }

    /// Adds `scale · g` for every parameter reached by `g`.
    pub fn accumulate(&mut self, g: Gradients, scale: f64) {
        for (acc, g) in self.grads.iter_mut().zip(g.into_params()) {
            if let Some(g) = g {
                acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, v)| *a += scale * v);
            }
        }
    }

    pub fn reset(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn get(&self, index: usize) -> &Tensor {
        &self.grads[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }
}

/// Mean loss over `batch` and, when `grads` is given, its gradient added into it.
///
/// `training` enables dropout. Augmentation and dropout draws are functions
/// of `(objective.augment.seed, step_seed, window index)` only.
pub fn total_loss(
    model: &Model,
    batch: &[Tensor],
    objective: &Objective,
    step_seed: u64,
    training: bool,
    mut grads: Option<&mut GradBuffer>,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Contract("total_loss needs at least one window".into()));
    }
    let inv = 1.0 / batch.len() as f64;
    let (mut time_sum, mut freq_sum) = (0.0, 0.0);
    for (i, x) in batch.iter().enumerate() {
        let window_seed = derive_seed(step_seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(window_seed, 0xD0));
        let mut tape = Tape::new(model.store());
        let dropout: Option<&mut dyn RngCore> = if training { Some(&mut rng) } else { None };
        let loss = window_loss(model, &mut tape, x, objective, window_seed, dropout)?;
        time_sum += tape.value(loss.time).item();
        freq_sum += loss.freq.map_or(0.0, |f| tape.value(f).item());
        if let Some(buf) = grads.as_deref_mut() {
            buf.accumulate(tape.backward(loss.total)?, inv);
        }
    }
    let time = time_sum * inv;
    let freq = freq_sum * inv;
    let total = if objective.ablation.disable_facm_loss {
        objective.gamma1 * time
    } else {
        objective.gamma1 * time + objective.gamma2 * freq
    };
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss (time {time}, freq {freq})"
        )));
    }
    Ok(LossBreakdown { total, time, freq })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_map_to_flags() {
        let a = Ablation::from_variant("w/o CM+FM").unwrap();
        assert!(a.disable_ctcm && a.disable_facm_loss && !a.disable_augmentation && !a.activation_gelu);
        assert_eq!(Ablation::from_variant("full").unwrap(), Ablation::default());
        assert!(Ablation::from_variant("w/o Si").unwrap().activation_gelu);
        assert!(Ablation::from_variant("w/o XY").is_err());
        let distinct: std::collections::HashSet<_> = Ablation::VARIANTS
            .iter()
            .map(|v| format!("{:?}", Ablation::from_variant(v).unwrap()))
            .collect();
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn seeds_decorrelate() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(0, 1), derive_seed(1, 0));
    }
}
