//! Complementary time-domain contrastive module, cross-domain fusion and the
//! time contrastive loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{kaiming_uniform, ParamId, ParamStore};
use crate::tape::{Padding, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CtcmConfig {
    /// Causal kernel sizes, one convolution per scale.
    pub kernels: Vec<usize>,
    /// Channels between the two fusion convolutions.
    pub msff_hidden: usize,
}

impl Default for CtcmConfig {
    fn default() -> Self {
        CtcmConfig {
            kernels: vec![1, 2, 4, 8, 16, 32, 64, 128],
            msff_hidden: 96,
        }
    }
}

impl CtcmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(Error::Config("ctcm.kernels must not be empty".into()));
        }
        if self.kernels[0] == 0 || self.kernels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "ctcm.kernels must be positive and strictly increasing, got {:?}",
                self.kernels
            )));
        }
        if self.msff_hidden == 0 {
            return Err(Error::Config("ctcm.msff_hidden must be positive".into()));
        }
        Ok(())
    }

    pub fn max_kernel(&self) -> usize {
        self.kernels.last().copied().unwrap_or(0)
    }
}

type Affine = (ParamId, ParamId);

#[derive(Clone, Debug)]
pub struct Ctcm {
    cfg: CtcmConfig,
    width: usize,
    scales: Vec<Affine>,
    msff_in: Affine,
    msff_out: Affine,
    projection: Affine,
}

impl Ctcm {
    pub fn new(cfg: &CtcmConfig, width: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if width == 0 || width % 2 != 0 {
            return Err(Error::Config(format!("CTCM width must be even, got {width}")));
        }
        let (k, half, hid) = (width, width / 2, cfg.msff_hidden);
        let mut scales = Vec::with_capacity(cfg.kernels.len());
        for (j, &ks) in cfg.kernels.iter().enumerate() {
            scales.push((
                store.add(format!("ctcm.scale{j}.weight"), kaiming_uniform(&[ks, k, k], ks * k, rng), false)?,
                store.add(format!("ctcm.scale{j}.bias"), Tensor::zeros(vec![k]), true)?,
            ));
        }
        let msff_in = (
            store.add("ctcm.msff.conv1.weight", kaiming_uniform(&[3, 3, k, hid], 9 * k, rng), false)?,
            store.add("ctcm.msff.conv1.bias", Tensor::zeros(vec![hid]), true)?,
        );
        let msff_out = (
            store.add("ctcm.msff.conv2.weight", kaiming_uniform(&[1, 1, hid, half], hid, rng), false)?,
            store.add("ctcm.msff.conv2.bias", Tensor::zeros(vec![half]), true)?,
        );
        let projection = (
            store.add("ctcm.projection.weight", kaiming_uniform(&[half, half], half, rng), false)?,
            store.add("ctcm.projection.bias", Tensor::zeros(vec![half]), true)?,
        );
        Ok(Ctcm {
            cfg: cfg.clone(),
            width,
            scales,
            msff_in,
            msff_out,
            projection,
        })
    }

    pub fn config(&self) -> &CtcmConfig {
        &self.cfg
    }

    /// Parallel causal convolutions, one per kernel size, each `K→K`
    /// channels and cut to `T` steps, stacked into a `K×n×T` map.
    pub fn multiscale_conv(&self, tape: &mut Tape<'_>, r: Var) -> Result<Var> {
        let (t, k) = tape.value(r).dims2()?;
        if k != self.width {
            return Err(Error::Dimension(format!(
                "CTCM expects {} channels, got {k}",
                self.width
            )));
        }
        let mut outs = Vec::with_capacity(self.scales.len());
        for (&ks, &(w, b)) in self.cfg.kernels.iter().zip(&self.scales) {
            if ks > t {
                return Err(Error::Parameter(format!(
                    "CTCM kernel {ks} is longer than the window ({t} steps)"
                )));
            }
            let w = tape.param(w);
            let b = tape.param(b);
            let y = tape.causal_conv1d(r, w, 1)?;
            outs.push(tape.add_row_bias(y, b)?);
        }
        tape.stack_scales(&outs)
    }

    /// 3×3 convolution to the hidden width, SiLU, mean over the scale axis,
    /// 1×1 convolution to `K/2`. Input `K×n×T`, output `(K/2)×1×T`.
    pub fn msff(&self, tape: &mut Tape<'_>, h_d: Var) -> Result<Var> {
        let n = tape.shape(h_d)[1];
        let (w, b) = (tape.param(self.msff_in.0), tape.param(self.msff_in.1));
        let y = tape.conv2d(h_d, w, Padding::Same)?;
        let y = tape.add_channel_bias(y, b)?;
        let y = tape.silu(y);
        let y = tape.avg_pool2d(y, (n, 1))?;
        let (w, b) = (tape.param(self.msff_out.0), tape.param(self.msff_out.1));
        let y = tape.conv2d(y, w, Padding::None)?;
        tape.add_channel_bias(y, b)
    }

    /// `T×K` representation to `T×K/2` time-domain features.
    pub fn forward(&self, tape: &mut Tape<'_>, r: Var) -> Result<Var> {
        let h_d = self.multiscale_conv(tape, r)?;
        let h_2d = self.msff(tape, h_d)?;
        let (half, _, t) = match tape.shape(h_2d)[..] {
            [a, b, c] => (a, b, c),
            _ => unreachable!("msff emits rank-3 maps"),
        };
        let flat = tape.reshape(h_2d, &[half, t])?;
        let flat = tape.transpose(flat)?;
        let (w, b) = (tape.param(self.projection.0), tape.param(self.projection.1));
        let y = tape.matmul(flat, w)?;
        tape.add_row_bias(y, b)
    }
}

/// Linear layer over the concatenated time and frequency features.
#[derive(Clone, Debug)]
pub struct Fusion {
    weight: ParamId,
    bias: ParamId,
}

impl Fusion {
    pub fn new(width: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        Ok(Fusion {
            weight: store.add("fusion.weight", kaiming_uniform(&[width, width], width, rng), false)?,
            bias: store.add("fusion.bias", Tensor::zeros(vec![width]), true)?,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    /// `[h̃ ‖ ĥ]·W + b`.
    pub fn forward(&self, tape: &mut Tape<'_>, time: Var, freq: Var) -> Result<Var> {
        let joined = tape.concat_cols(time, freq)?;
        let (w, b) = (tape.param(self.weight), tape.param(self.bias));
        let y = tape.matmul(joined, w)?;
        tape.add_row_bias(y, b)
    }
}

/// `Σ_t −log softmax_t'(r_t·h_t')[t]` on a tape.
pub fn time_loss_on_tape(tape: &mut Tape<'_>, r: Var, h: Var) -> Result<Var> {
    tape.info_nce(r, h)
}

/// Time contrastive loss for one `T×K` pair.
pub fn time_contrastive_loss(r: &Tensor, h: &Tensor) -> Result<f64> {
    let mut tape = Tape::detached();
    let (rv, hv) = (tape.constant(r.clone()), tape.constant(h.clone()));
    let l = time_loss_on_tape(&mut tape, rv, hv)?;
    Ok(tape.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_list_validation() {
        let ok = CtcmConfig::default();
        assert!(ok.validate().is_ok());
        for kernels in [vec![], vec![2, 2], vec![4, 2], vec![0, 1]] {
            let c = CtcmConfig { kernels, msff_hidden: 4 };
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn kernel_longer_than_window_names_the_kernel() {
        let cfg = CtcmConfig { kernels: vec![1, 8], msff_hidden: 4 };
        let mut store = ParamStore::new();
        let ctcm = Ctcm::new(&cfg, 4, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut tape = Tape::new(&store);
        let r = tape.constant(Tensor::zeros(vec![5, 4]));
        let err = ctcm.forward(&mut tape, r).unwrap_err();
        assert!(matches!(err, Error::Parameter(ref m) if m.contains("kernel 8")), "{err}");
    }

    #[test]
    fn one_step_time_loss_is_zero() {
        let r = Tensor::from_rows(&[&[1.0, 2.0]]);
        let h = Tensor::from_rows(&[&[-3.0, 0.5]]);
        assert_eq!(time_contrastive_loss(&r, &h).unwrap(), 0.0);
    }

    #[test]
    fn time_loss_shape_mismatch() {
        let r = Tensor::zeros(vec![3, 2]);
        let h = Tensor::zeros(vec![3, 4]);
        assert!(matches!(time_contrastive_loss(&r, &h), Err(Error::Contract(_))));
    }

    #[test]
    fn fusion_length_mismatch_is_contract_error() {
        let mut store = ParamStore::new();
        let fusion = Fusion::new(4, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut tape = Tape::new(&store);
        let a = tape.constant(Tensor::zeros(vec![3, 2]));
        let b = tape.constant(Tensor::zeros(vec![4, 2]));
        assert!(matches!(fusion.forward(&mut tape, a, b), Err(Error::Contract(_))));
    }
}
