use proptest::prelude::*;
use tcm_core::data::{
    decode_features, encode_features, fix_length, parse_protocol, render_protocol, Label, LengthMode, Utterance,
};
use tcm_core::metrics::{
    compute_eer, compute_min_tdcf, det_points, parse_scores, render_scores, ScoreRecord, TdcfCosts,
};
use tcm_core::model::{generate_head_tokens, Classifier, ModelConfig, ParamStore, TokenSequence};
use tcm_core::train::{adam_step, average_checkpoints, early_stop, sample_loss, AdamConfig, AdamState, Checkpoint};
use tcm_core::{Tape, Tensor};

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, scale: f64) -> impl Strategy<Value = Tensor> {
    (rows, cols).prop_flat_map(move |(r, c)| {
        prop::collection::vec(-scale..scale, r * c).prop_map(move |d| Tensor::new([r, c], d).unwrap())
    })
}

/// Scores on a coarse grid so ties within and across classes are common.
fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-16i32..16).prop_map(|k| k as f64 / 8.0), 1..60)
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        feature_dim: 3,
        model_dim: 8,
        heads: 2,
        blocks: 1,
        conv_kernel: 3,
        ..ModelConfig::desk_scale()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(x in matrix(1..6, 1..40, 50.0)) {
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let s = tape.softmax_rows(v).unwrap();
        let (_, c) = tape.value(s).dims2().unwrap();
        for row in tape.value(s).data().chunks(c) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(x in matrix(1..5, 2..20, 100.0)) {
        let (_, c) = x.dims2().unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let g = tape.constant(Tensor::full([c], 1.0));
        let b = tape.constant(Tensor::zeros([c]));
        let y = tape.layer_norm(v, g, b, 1e-5).unwrap();
        for (row_in, row) in x.data().chunks(c).zip(tape.value(y).data().chunks(c)) {
            let m_in = row_in.iter().sum::<f64>() / c as f64;
            let var_in = row_in.iter().map(|v| (v - m_in).powi(2)).sum::<f64>() / c as f64;
            prop_assume!(var_in >= 10.0);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mean_over_time_ignores_row_order(x in matrix(1..30, 1..6, 10.0), seed in any::<u64>()) {
        let (r, c) = x.dims2().unwrap();
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by_key(|&i| tcm_core::rng::mix(&[seed, i as u64]));
        let permuted = Tensor::new([r, c], order.iter().flat_map(|&i| x.row(i).to_vec()).collect()).unwrap();
        let mean = |t: Tensor| {
            let mut tape = Tape::new();
            let v = tape.constant(t);
            let m = tape.mean_rows(v).unwrap();
            tape.value(m).clone()
        };
        prop_assert!(mean(x).max_abs_diff(&mean(permuted)) <= 1e-12);
    }

    #[test]
    fn head_tokens_ignore_temporal_order(t in 1usize..12, seed in any::<u64>(), with_cls in any::<bool>()) {
        let cfg = ModelConfig { head_pool_includes_cls: with_cls, ..tiny_model() };
        let model = Classifier::new(cfg.clone(), seed).unwrap();
        let x = {
            let mut r = tcm_core::rng::keyed(&[seed, 1]);
            use rand::Rng;
            Tensor::new([t + 1, 8], (0..(t + 1) * 8).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
        };
        let mut order: Vec<usize> = (1..=t).collect();
        order.sort_by_key(|&i| tcm_core::rng::mix(&[seed, i as u64]));
        order.insert(0, 0);
        let permuted = Tensor::new([t + 1, 8], order.iter().flat_map(|&i| x.row(i).to_vec()).collect()).unwrap();
        let tokens = |input: Tensor| {
            let mut tape = Tape::new();
            let (p, _) = model.bind(&mut tape, false).unwrap();
            let seq = TokenSequence { tokens: tape.constant(input), len: t };
            let hp = p.blocks[0].attention().head_tokens.clone().unwrap();
            let h = generate_head_tokens(&mut tape, &seq, &hp, &cfg).unwrap();
            tape.value(h).clone()
        };
        prop_assert!(tokens(x).max_abs_diff(&tokens(permuted)) <= 1e-12);
    }

    #[test]
    fn forward_is_bit_deterministic(t in 1usize..20, seed in any::<u64>()) {
        let model = Classifier::new(tiny_model(), seed).unwrap();
        let x = Tensor::new([t, 3], (0..t * 3).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let (a, b) = (model.score(&x).unwrap(), model.score(&x).unwrap());
        prop_assert_eq!(a.score.to_bits(), b.score.to_bits());
    }

    #[test]
    fn fix_length_hits_target_and_variable_is_identity(t in 1usize..40, target in 1usize..60) {
        let u = Utterance {
            id: "u".into(),
            label: Label::Bonafide,
            features: Tensor::new([t, 2], (0..t * 2).map(|i| i as f64).collect()).unwrap(),
        };
        let fixed = fix_length(&u, target);
        prop_assert_eq!(fixed.shape(), &[target, 2]);
        for r in 0..target {
            prop_assert_eq!(fixed.row(r), u.features.row(r % t));
        }
        prop_assert_eq!(LengthMode::Variable.prepare(&u, target), u.features);
    }

    #[test]
    fn eer_is_bounded_and_monotone_invariant(bona in scores(), spoof in scores()) {
        let (eer, _) = compute_eer(&bona, &spoof).unwrap();
        prop_assert!((0.0..=1.0).contains(&eer));
        let affine = |v: &[f64]| v.iter().map(|s| 4.0 * s - 3.0).collect::<Vec<_>>();
        let exp = |v: &[f64]| v.iter().map(|s| s.exp()).collect::<Vec<_>>();
        prop_assert_eq!(compute_eer(&affine(&bona), &affine(&spoof)).unwrap().0, eer);
        prop_assert_eq!(compute_eer(&exp(&bona), &exp(&spoof)).unwrap().0, eer);
    }

    #[test]
    fn swapping_classes_and_negating_keeps_eer(bona in scores(), spoof in scores()) {
        let neg = |v: &[f64]| v.iter().map(|s| -s).collect::<Vec<_>>();
        let eer = compute_eer(&bona, &spoof).unwrap().0;
        prop_assert_eq!(compute_eer(&neg(&spoof), &neg(&bona)).unwrap().0, eer);
        let costs = TdcfCosts { c0: 0.1, c1: 0.7, c2: 1.9 };
        let swapped = TdcfCosts { c0: 0.1, c1: 1.9, c2: 0.7 };
        // Same terms summed in the other order, so allow float reassociation.
        let a = compute_min_tdcf(&bona, &spoof, &costs).unwrap();
        let b = compute_min_tdcf(&neg(&spoof), &neg(&bona), &swapped).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn det_points_are_monotone(bona in scores(), spoof in scores()) {
        let d = det_points(&bona, &spoof).unwrap();
        prop_assert_eq!(d[0], (0.0, 1.0));
        prop_assert_eq!(*d.last().unwrap(), (1.0, 0.0));
        for w in d.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn averaging_ignores_input_order(
        values in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..9),
        losses in prop::collection::vec(0.0f64..2.0, 9),
        k in 1usize..7,
        seed in any::<u64>(),
    ) {
        let cks: Vec<Checkpoint> = values.iter().enumerate().map(|(i, v)| {
            let mut params = ParamStore::new();
            params.push("w", Tensor::new([3], v.clone()).unwrap()).unwrap();
            Checkpoint { params, config: "{}".into(), val_loss: losses[i], epoch: i as u32 + 1 }
        }).collect();
        let mut shuffled = cks.clone();
        shuffled.sort_by_key(|c| tcm_core::rng::mix(&[seed, c.epoch as u64]));
        prop_assert_eq!(average_checkpoints(&cks, k).unwrap().params, average_checkpoints(&shuffled, k).unwrap().params);
        let same = vec![cks[0].clone(); k];
        prop_assert_eq!(&average_checkpoints(&same, k).unwrap().params, &cks[0].params);
    }

    #[test]
    fn early_stop_waits_for_patience(history in prop::collection::vec(0.0f64..1.0, 0..30), patience in 1usize..10) {
        if early_stop(&history, patience) {
            prop_assert!(history.len() > patience);
        }
    }

    #[test]
    fn weighted_loss_is_non_negative(a in -50.0f64..50.0, b in -50.0f64..50.0, w in 0.01f64..5.0, spoof in any::<bool>()) {
        let label = if spoof { Label::Spoof } else { Label::Bonafide };
        prop_assert!(sample_loss([a, b], label, [w, 1.0 / w]) >= 0.0);
    }

    #[test]
    fn adam_with_zero_lr_is_identity(values in prop::collection::vec(-3.0f64..3.0, 1..10), g in -3.0f64..3.0) {
        let mut params = ParamStore::new();
        params.push("w", Tensor::new([values.len()], values.clone()).unwrap()).unwrap();
        let before = params.clone();
        let mut state = AdamState::zeros(&params);
        let grads = vec![Tensor::full([values.len()], g)];
        adam_step(&mut params, &grads, &mut state, &AdamConfig::new(0.0, 1e-4)).unwrap();
        prop_assert_eq!(params, before);
    }

    #[test]
    fn feature_files_round_trip(
        id in "[a-z0-9_]{1,12}",
        spoof in any::<bool>(),
        (t, f) in (0usize..6, 1usize..5),
        seed in any::<u64>(),
    ) {
        let data: Vec<f64> = (0..t * f).map(|i| f32::from_bits(tcm_core::rng::mix(&[seed, i as u64]) as u32 & 0x7F7F_FFFF) as f64).collect();
        let u = Utterance {
            id,
            label: if spoof { Label::Spoof } else { Label::Bonafide },
            features: Tensor::new([t, f], data).unwrap(),
        };
        let bytes = encode_features(&u).unwrap();
        let back = decode_features(&bytes).unwrap();
        prop_assert_eq!(encode_features(&back).unwrap(), bytes);
        prop_assert_eq!(back, u);
    }

    #[test]
    fn protocol_and_score_text_round_trip(
        ids in prop::collection::vec("[A-Za-z0-9_.-]{1,10}", 0..8),
        vals in prop::collection::vec(-1e6f64..1e6, 8),
    ) {
        let entries: Vec<(String, Label)> = ids.iter().enumerate()
            .map(|(i, id)| (id.clone(), if i % 2 == 0 { Label::Spoof } else { Label::Bonafide }))
            .collect();
        let text = render_protocol(&entries);
        prop_assert_eq!(render_protocol(&parse_protocol(&text).unwrap()), text);
        let recs: Vec<ScoreRecord> = ids.iter().zip(&vals).map(|(id, &score)| ScoreRecord { id: id.clone(), score }).collect();
        let text = render_scores(&recs).unwrap();
        prop_assert_eq!(render_scores(&parse_scores(&text).unwrap()).unwrap(), text);
    }

    #[test]
    fn checkpoints_round_trip_any_bits(bits in prop::collection::vec(any::<u64>(), 1..20), loss in any::<u64>(), epoch in any::<u32>()) {
        let mut params = ParamStore::new();
        params.push("p.0", Tensor::new([bits.len()], bits.iter().map(|&b| f64::from_bits(b)).collect()).unwrap()).unwrap();
        let c = Checkpoint { params, config: "{\"k\":1}".into(), val_loss: f64::from_bits(loss), epoch };
        let bytes = c.encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(back.encode().unwrap(), bytes);
        let got: Vec<u64> = back.params.by_index(0).1.data().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, bits);
    }
}
