#![allow(dead_code)]

use std::path::PathBuf;

use mff_ftnet::augment::AugmentConfig;
use mff_ftnet::ctcm::CtcmConfig;
use mff_ftnet::encoder::{Activation, BackboneConfig};
use mff_ftnet::facm::FacmConfig;
use mff_ftnet::model::{total_loss, Ablation, GradBuffer, Model, ModelConfig, Objective};
use mff_ftnet::Tensor;

pub fn data_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data").join(name)
}

/// T=16, K=8, D=2 with dropout off.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        window: 16,
        backbone: BackboneConfig {
            input_dim: 2,
            hidden_dim: 4,
            output_dim: 8,
            num_blocks: 2,
            kernel_size: 3,
            activation: Activation::Silu,
            dropout: 0.0,
        },
        facm: FacmConfig {
            mask_ratio: 0.5,
            lambda: 0.5,
            dropout: 0.0,
        },
        ctcm: CtcmConfig {
            kernels: vec![1, 2, 4],
            msff_hidden: 4,
        },
    }
}

pub fn toy_objective(ablation: Ablation) -> Objective {
    Objective {
        gamma1: 1.0,
        gamma2: 1.0,
        lambda: 0.5,
        augment: AugmentConfig::default(),
        ablation,
    }
}

pub fn toy_batch(n: usize, t: usize, d: usize) -> Vec<Tensor> {
    (0..n)
        .map(|b| {
            Tensor::from_fn(vec![t, d], |i| {
                let (row, col) = ((i / d) as f64, (i % d) as f64);
                (0.6 * row + 1.1 * col + b as f64).sin() + 0.3 * (0.23 * row * (col + 1.0)).cos()
            })
        })
        .collect()
}

/// Norm-wise relative error between the analytic gradient of the batch
/// loss and central differences, over all parameters stacked into one
/// vector. Per-tensor ratios are meaningless for biases whose gradient is
/// identically zero (the contrastive loss ignores a constant shift of `h`).
pub fn full_loss_gradient_error(model: &Model, batch: &[Tensor], objective: &Objective, step: f64) -> f64 {
    let mut grads = GradBuffer::zeros(model.store());
    total_loss(model, batch, objective, 3, false, Some(&mut grads)).unwrap();
    let (mut analytic, mut numeric_all) = (Vec::new(), Vec::new());
    let mut probe = model.clone();
    for (idx, p) in model.store().iter().enumerate() {
        let mut numeric = Vec::with_capacity(p.value.len());
        for i in 0..p.value.len() {
            let orig = p.value.data()[i];
            let mut eval = |v: f64| {
                let mut t = p.value.clone();
                t.data_mut()[i] = v;
                probe.store_mut().set(&p.name, t).unwrap();
                total_loss(&probe, batch, objective, 3, false, None).unwrap().total
            };
            let up = eval(orig + step);
            let down = eval(orig - step);
            numeric.push((up - down) / (2.0 * step));
        }
        probe.store_mut().set(&p.name, p.value.clone()).unwrap();
        analytic.extend_from_slice(grads.get(idx).data());
        numeric_all.extend(numeric);
    }
    let n = analytic.len();
    mff_ftnet::gradcheck::relative_error(
        &Tensor::new(vec![n], analytic).unwrap(),
        &Tensor::new(vec![n], numeric_all).unwrap(),
    )
}

/// `−log(exp(s_ii) / Σ_k exp(s_ik))` summed over rows, computed directly.
pub fn brute_info_nce(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    (0..a.len())
        .map(|i| {
            let denom: f64 = b.iter().map(|bk| dot(&a[i], bk).exp()).sum();
            -(dot(&a[i], &b[i]).exp() / denom).ln()
        })
        .sum()
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let (_, c) = t.dims2().unwrap();
    t.data().chunks_exact(c).map(|r| r.to_vec()).collect()
}
