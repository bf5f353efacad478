mod common;

use proptest::prelude::*;

use mff_ftnet::augment::{augment_view, AugmentConfig};
use mff_ftnet::config::RunConfig;
use mff_ftnet::ctcm::time_contrastive_loss;
use mff_ftnet::dataio::{inject, split, window_starts, PerturbationKind, PerturbationSpec, SeriesTable, SplitRule};
use mff_ftnet::facm::{freq_contrastive_loss, select_topk, topk_count};
use mff_ftnet::spectral::{self, naive_dft};
use mff_ftnet::training::Checkpoint;
use mff_ftnet::Tensor;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (2..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |d| Tensor::new(vec![r, c], d).unwrap())
    })
}

fn matrix_pair(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (Tensor, Tensor)> {
    (2..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0f64..3.0, 2 * r * c).prop_map(move |d| {
            let (a, b) = d.split_at(r * c);
            (Tensor::new(vec![r, c], a.to_vec()).unwrap(), Tensor::new(vec![r, c], b.to_vec()).unwrap())
        })
    })
}

fn table(rows: usize, cols: usize, data: Vec<f64>) -> SeriesTable {
    SeriesTable::new(
        "prop",
        (0..rows).map(|i| format!("{i:06}")).collect(),
        Tensor::new(vec![rows, cols], data).unwrap(),
        (0..cols).map(|c| format!("x{c}")).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn rfft_agrees_with_direct_sum(x in matrix(40, 3)) {
        let fast = spectral::rfft(&x).unwrap();
        let slow = naive_dft(&x).unwrap();
        prop_assert!(fast.re().max_abs_diff(slow.re()) < 1e-10);
        prop_assert!(fast.im().max_abs_diff(slow.im()) < 1e-10);
        prop_assert_eq!(fast.num_bins(), x.shape()[0] / 2 + 1);
    }

    #[test]
    fn inverse_transform_restores_input(x in matrix(40, 3)) {
        let back = spectral::irfft(&spectral::rfft(&x).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn topk_keeps_the_largest(amp in prop::collection::vec(0.0f64..10.0, 1..60), ratio in 0.01f64..1.0) {
        let kept = select_topk(&amp, ratio);
        prop_assert_eq!(kept.len(), topk_count(amp.len(), ratio));
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        let floor = kept.iter().map(|&j| amp[j]).fold(f64::INFINITY, f64::min);
        for (j, a) in amp.iter().enumerate() {
            if !kept.contains(&j) {
                prop_assert!(*a <= floor);
            }
        }
    }

    #[test]
    fn time_loss_ignores_a_shared_shift(
        r in matrix(8, 3),
        shift in prop::collection::vec(-2.0f64..2.0, 3),
        seed in 0u64..1000,
    ) {
        let (t, k) = r.dims2().unwrap();
        let h = Tensor::from_fn(vec![t, k], |i| ((i as u64 * 2654435761 + seed) % 97) as f64 / 50.0 - 1.0);
        let shifted = Tensor::from_fn(vec![t, k], |i| h.data()[i] + shift[i % k % shift.len()]);
        let a = time_contrastive_loss(&r, &h).unwrap();
        let b = time_contrastive_loss(&r, &shifted).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        // each row term is -log of a probability
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn frequency_loss_is_convex_combination((x, y) in matrix_pair(16, 2), lambda in 0.0f64..=1.0) {
        let (s1, s2) = (spectral::rfft(&x).unwrap(), spectral::rfft(&y).unwrap());
        let (amp, phase, total) = freq_contrastive_loss(&s1, &s2, lambda).unwrap();
        prop_assert!((total - (lambda * amp + (1.0 - lambda) * phase)).abs() < 1e-12);
    }

    #[test]
    fn augmentation_without_noise_is_identity(x in matrix(20, 4), seed in any::<u64>()) {
        let cfg = AugmentConfig { alpha: 0.0, beta: 0.0, seed };
        prop_assert_eq!(augment_view(&x, &cfg, 1).unwrap(), x);
    }

    #[test]
    fn augmentation_is_affine_per_column(x in matrix(20, 3), seed in any::<u64>()) {
        let cfg = AugmentConfig { alpha: 0.5, beta: 0.1, seed };
        let v = augment_view(&x, &cfg, 2).unwrap();
        prop_assert_eq!(&v, &augment_view(&x, &cfg, 2).unwrap());
        let (t, d) = x.dims2().unwrap();
        for f in 0..d {
            // (v_i − v_0) = s·(x_i − x_0) with one s per column
            let s = (0..t)
                .find(|&i| (x.at2(i, f) - x.at2(0, f)).abs() > 1e-3)
                .map(|i| (v.at2(i, f) - v.at2(0, f)) / (x.at2(i, f) - x.at2(0, f)));
            if let Some(s) = s {
                for i in 0..t {
                    let lhs = v.at2(i, f) - v.at2(0, f);
                    prop_assert!((lhs - s * (x.at2(i, f) - x.at2(0, f))).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn injection_touches_exactly_the_requested_cells(
        rows in 2usize..40,
        cols in 1usize..5,
        ratio in 0.0f64..=1.0,
        seed in any::<u64>(),
        missing in any::<bool>(),
    ) {
        let data: Vec<f64> = (0..rows * cols).map(|i| 1.0 + i as f64).collect();
        let t = table(rows, cols, data);
        let kind = if missing { PerturbationKind::Missing } else { PerturbationKind::Noise };
        let spec = PerturbationSpec::new(kind, ratio, seed);
        let out = inject(&t, &spec).unwrap();
        let changed = t.values().data().iter().zip(out.values().data()).filter(|(a, b)| a != b).count();
        prop_assert_eq!(changed, spec.cell_count(rows * cols));
        if missing {
            let mask = out.mask().unwrap();
            prop_assert_eq!(mask.iter().filter(|m| **m).count(), changed);
        }
    }

    #[test]
    fn ratio_splits_partition_the_table(rows in 30usize..500, a in 1u32..10, b in 1u32..10, c in 1u32..10) {
        let t = table(rows, 1, (0..rows).map(|i| i as f64).collect());
        let sum = (a + b + c) as f64;
        let s = split(&t, &SplitRule::Ratios([a as f64 / sum, b as f64 / sum, c as f64 / sum])).unwrap();
        prop_assert_eq!(s.train().start, 0);
        prop_assert_eq!(s.train().end, s.valid().start);
        prop_assert_eq!(s.valid().end, s.test().start);
        prop_assert!(s.test().end <= rows);
        prop_assert!(!s.train().is_empty() && !s.valid().is_empty() && !s.test().is_empty());
    }

    #[test]
    fn window_starts_cover_the_range(start in 0usize..50, len in 1usize..200, t in 1usize..50, stride in 1usize..10) {
        prop_assume!(t <= len);
        let starts = window_starts(start..start + len, t, stride).unwrap();
        prop_assert_eq!(starts.len(), (len - t) / stride + 1);
        prop_assert_eq!(starts[0], start);
        prop_assert!(starts.iter().all(|s| s + t <= start + len));
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        epoch in any::<u64>(),
        seed in any::<u64>(),
        tensors in prop::collection::vec(matrix(6, 4), 0..4),
    ) {
        let ck = Checkpoint {
            config_text: "train.epochs = 3\n".into(),
            epoch,
            rng_seed: seed,
            params: tensors.into_iter().enumerate().map(|(i, t)| (format!("p{i}"), t)).collect(),
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes.clone());
        prop_assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn overrides_survive_the_canonical_form(epochs in 1usize..1000, ratio in 0.01f64..1.0, lr in 1e-6f64..1.0) {
        let cfg = RunConfig::resolve(
            Some("desk"),
            None,
            &[
                ("train.epochs".into(), epochs.to_string()),
                ("facm.mask_ratio".into(), format!("{ratio:?}")),
                ("train.learning_rate".into(), format!("{lr:?}")),
            ],
        )
        .unwrap();
        prop_assert_eq!(cfg.train.epochs, epochs);
        prop_assert_eq!(cfg.facm.mask_ratio, ratio);
        prop_assert_eq!(RunConfig::from_canonical(&cfg.canonical_text()).unwrap(), cfg);
    }
}
