//! Backbone encoder: linear lift, residual dilated causal convolution blocks,
//! per-timestep projection to `K` channels.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{kaiming_uniform, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    Gelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Input features `D`; zero means "take it from the data".
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Representation width `K`, must be even.
    pub output_dim: usize,
    pub num_blocks: usize,
    pub kernel_size: usize,
    pub activation: Activation,
    pub dropout: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            input_dim: 0,
            hidden_dim: 32,
            output_dim: 320,
            num_blocks: 8,
            kernel_size: 3,
            activation: Activation::Silu,
            dropout: 0.1,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("backbone.input_dim is not set".into()));
        }
        if self.output_dim == 0 || self.output_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "backbone.output_dim must be even and positive, got {}",
                self.output_dim
            )));
        }
        if self.hidden_dim == 0 || self.num_blocks == 0 || self.kernel_size == 0 {
            return Err(Error::Config(
                "backbone.hidden_dim, num_blocks and kernel_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "backbone.dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Scalar weight count implied by the layer list.
    pub fn param_count(&self) -> usize {
        let (d, h, k, l, ks) = (
            self.input_dim,
            self.hidden_dim,
            self.output_dim,
            self.num_blocks,
            self.kernel_size,
        );
        (d * h + h) + l * 2 * (ks * h * h + h) + (h * k + k)
    }

    /// Number of input steps that can influence one output step.
    pub fn receptive_field(&self) -> usize {
        let dilations: usize = (0..self.num_blocks).map(|i| 1usize << i).sum();
        1 + (self.kernel_size - 1) * 2 * dilations
    }
}

#[derive(Clone, Debug)]
struct Block {
    conv1: (ParamId, ParamId),
    conv2: (ParamId, ParamId),
    dilation: usize,
}

#[derive(Clone, Debug)]
pub struct Backbone {
    cfg: BackboneConfig,
    input: (ParamId, ParamId),
    blocks: Vec<Block>,
    projection: (ParamId, ParamId),
}

impl Backbone {
    /// Registers freshly initialized backbone parameters in `store`.
    /// Weights are Kaiming-uniform by fan-in; biases start at zero.
    pub fn new(cfg: &BackboneConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, h, k, ks) = (cfg.input_dim, cfg.hidden_dim, cfg.output_dim, cfg.kernel_size);
        let input = (
            store.add("backbone.input.weight", kaiming_uniform(&[d, h], d, rng), false)?,
            store.add("backbone.input.bias", Tensor::zeros(vec![h]), true)?,
        );
        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for i in 0..cfg.num_blocks {
            let mut conv = |name: &str| -> Result<(ParamId, ParamId)> {
                Ok((
                    store.add(
                        format!("backbone.block{i}.{name}.weight"),
                        kaiming_uniform(&[ks, h, h], ks * h, rng),
                        false,
                    )?,
                    store.add(format!("backbone.block{i}.{name}.bias"), Tensor::zeros(vec![h]), true)?,
                ))
            };
            let conv1 = conv("conv1")?;
            let conv2 = conv("conv2")?;
            blocks.push(Block {
                conv1,
                conv2,
                dilation: 1 << i,
            });
        }
        let projection = (
            store.add("backbone.projection.weight", kaiming_uniform(&[1, h, k], h, rng), false)?,
            store.add("backbone.projection.bias", Tensor::zeros(vec![k]), true)?,
        );
        Ok(Backbone {
            cfg: cfg.clone(),
            input,
            blocks,
            projection,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn input_weight(&self) -> ParamId {
        self.input.0
    }

    pub fn input_bias(&self) -> ParamId {
        self.input.1
    }

    /// Maps a `T×D` window to a `T×K` representation. Dropout is active only
    /// when `rng` is supplied.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, rng: Option<&mut dyn RngCore>) -> Result<Var> {
        let (_, d) = tape.value(x).dims2()?;
        if d != self.cfg.input_dim {
            return Err(Error::Dimension(format!(
                "backbone expects {} input features, got {d}",
                self.cfg.input_dim
            )));
        }
        let w = tape.param(self.input.0);
        let b = tape.param(self.input.1);
        let lifted = tape.matmul(x, w)?;
        let mut h = tape.add_row_bias(lifted, b)?;
        for block in &self.blocks {
            let y = conv(tape, h, block.conv1, block.dilation)?;
            let y = match self.cfg.activation {
                Activation::Silu => tape.silu(y),
                Activation::Gelu => tape.gelu(y),
            };
            let y = conv(tape, y, block.conv2, block.dilation)?;
            h = tape.add(h, y)?;
        }
        let h = tape.dropout(h, self.cfg.dropout, rng)?;
        conv(tape, h, self.projection, 1)
    }
}

fn conv(tape: &mut Tape<'_>, x: Var, (w, b): (ParamId, ParamId), dilation: usize) -> Result<Var> {
    let w = tape.param(w);
    let b = tape.param(b);
    let y = tape.causal_conv1d(x, w, dilation)?;
    tape.add_row_bias(y, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> BackboneConfig {
        BackboneConfig {
            input_dim: 3,
            hidden_dim: 8,
            output_dim: 6,
            num_blocks: 3,
            kernel_size: 3,
            activation: Activation::Silu,
            dropout: 0.0,
        }
    }

    fn encode(store: &ParamStore, net: &Backbone, x: &Tensor) -> Tensor {
        let mut tape = Tape::new(store);
        let v = tape.constant(x.clone());
        let r = net.forward(&mut tape, v, None).unwrap();
        tape.value(r).clone()
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut store = ParamStore::new();
        let net = Backbone::new(&cfg(), &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for p in store.iter_mut() {
            p.value = Tensor::zeros(p.value.shape().to_vec());
        }
        let x = Tensor::from_fn(vec![10, 3], |i| i as f64);
        assert!(encode(&store, &net, &x).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn parameter_count_matches_enumeration() {
        let mut store = ParamStore::new();
        let c = cfg();
        Backbone::new(&c, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(store.num_scalars(), c.param_count());
    }

    #[test]
    fn seeds_control_init() {
        let build = |seed| {
            let mut store = ParamStore::new();
            Backbone::new(&cfg(), &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            store
        };
        assert_eq!(build(4), build(4));
        assert_ne!(build(4), build(5));
    }

    #[test]
    fn gelu_switch_changes_output() {
        let mut c = cfg();
        let x = Tensor::from_fn(vec![12, 3], |i| (i as f64 * 0.37).sin());
        let mut store = ParamStore::new();
        let net = Backbone::new(&c, &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let silu = encode(&store, &net, &x);
        c.activation = Activation::Gelu;
        let mut store2 = ParamStore::new();
        let net2 = Backbone::new(&c, &mut store2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_ne!(silu, encode(&store2, &net2, &x));
    }

    #[test]
    fn wrong_feature_count_is_dimension_error() {
        let mut store = ParamStore::new();
        let net = Backbone::new(&cfg(), &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut tape = Tape::new(&store);
        let v = tape.constant(Tensor::zeros(vec![5, 2]));
        assert!(matches!(net.forward(&mut tape, v, None), Err(Error::Dimension(_))));
    }

    #[test]
    fn odd_output_dim_rejected() {
        let mut c = cfg();
        c.output_dim = 7;
        assert!(c.validate().is_err());
    }

    #[test]
    fn receptive_field_formula() {
        let c = BackboneConfig {
            input_dim: 7,
            ..Default::default()
        };
        assert_eq!(c.receptive_field(), 1021);
    }
}
