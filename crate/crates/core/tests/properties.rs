mod common;

use common::{random_instance, tiny_config, KINDS};
use metafilm_core::data::{kfold, parse_record, plan_fixed_split, plan_ratio_split, Instance};
use metafilm_core::embeddings::EmbeddingTable;
use metafilm_core::metrics::{confusion, paired_ttest_one_tailed, prf_accuracy};
use metafilm_core::model::{
    attend, forward_input, init_params, ModelConfig, ModelParams, Pooling, SequenceInput, Variant,
};
use metafilm_core::optim::{adadelta_step, AdadeltaState};
use metafilm_core::vocab::PAD;
use metafilm_core::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn mask_strategy(max: usize) -> impl Strategy<Value = Vec<bool>> {
    proptest::collection::vec(any::<bool>(), 1..=max).prop_filter("one true", |m| m.iter().any(|&b| b))
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn softmax_is_a_distribution_on_the_mask(
        scores in proptest::collection::vec(-50.0f64..50.0, 1..12),
        seed in any::<u64>(),
        shift in -100.0f64..100.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask: Vec<bool> = scores.iter().map(|_| rng.gen_bool(0.7)).collect();
        let k = rng.gen_range(0..mask.len());
        mask[k] = true;
        let run = |s: Vec<f64>| {
            let mut tape = Tape::new();
            let id = tape.constant(Tensor::vector(s));
            let out = tape.masked_softmax(id, &mask).unwrap();
            tape.value(out).data().to_vec()
        };
        let a = run(scores.clone());
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (v, &m) in a.iter().zip(&mask) {
            prop_assert!(*v >= 0.0);
            if !m {
                prop_assert_eq!(*v, 0.0);
            }
        }
        // Shift invariance.
        let b = run(scores.iter().map(|s| s + shift).collect());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn broadcast_matches_explicit_loop(seed in any::<u64>(), n in 1usize..6, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut tape = Tape::new();
        let mi = tape.constant(Tensor::new(vec![n, d], m.clone()).unwrap());
        let vi = tape.constant(Tensor::vector(v.clone()));
        let prod = tape.mul(mi, vi).unwrap();
        let sum = tape.add(vi, mi).unwrap();
        for i in 0..n {
            for j in 0..d {
                prop_assert_eq!(tape.value(prod).data()[i * d + j], m[i * d + j] * v[j]);
                prop_assert_eq!(tape.value(sum).data()[i * d + j], v[j] + m[i * d + j]);
            }
        }
    }

    #[test]
    fn mean_pool_averages_masked_rows(seed in any::<u64>(), mask in mask_strategy(8)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = mask.len();
        let data: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::new(vec![n, 3], data.clone()).unwrap());
        let p = tape.mean_pool(s, &mask).unwrap();
        let k = mask.iter().filter(|&&m| m).count() as f64;
        for j in 0..3 {
            let e: f64 = (0..n).filter(|&i| mask[i]).map(|i| data[i * 3 + j]).sum::<f64>() / k;
            prop_assert!((tape.value(p).data()[j] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_contract(seed in any::<u64>(), mask in mask_strategy(9), d in 1usize..6, a in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = mask.len();
        let mut rand_t = |shape: &[usize], scale: f64| {
            let mut t = Tensor::zeros(shape);
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
            t
        };
        let feats = rand_t(&[n, d], 5.0);
        let mut p = ModelParams::new();
        p.insert("attn.w", rand_t(&[d, a], 2.0));
        p.insert("attn.b", rand_t(&[a], 1.0));
        p.insert("attn.u", rand_t(&[a], 3.0));
        let (r, alpha) = attend(&feats, &p, &mask).unwrap();
        prop_assert!((alpha.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for j in 0..d {
            let col = (0..n).filter(|&i| mask[i]).map(|i| feats.row(i)[j]);
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            prop_assert!(r.data()[j] >= lo - 1e-12 && r.data()[j] <= hi + 1e-12);
        }
        for (w, &m) in alpha.data().iter().zip(&mask) {
            if !m {
                prop_assert_eq!(*w, 0.0);
            }
        }
    }

    #[test]
    fn confusion_matches_brute_force(pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..200)) {
        let (preds, golds): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let c = confusion(&preds, &golds).unwrap();
        let count = |p, g| pairs.iter().filter(|&&x| x == (p, g)).count();
        prop_assert_eq!((c.tp, c.fp, c.fn_, c.tn), (count(1, 1), count(1, 0), count(0, 1), count(0, 0)));
        let r = prf_accuracy(&c);
        let hits = pairs.iter().filter(|(p, g)| p == g).count();
        prop_assert_eq!(r.accuracy, hits as f64 / pairs.len() as f64);
        prop_assert!((0.0..=1.0).contains(&r.f1));
        if r.precision > 0.0 && r.recall > 0.0 {
            let h = 2.0 * r.precision * r.recall / (r.precision + r.recall);
            prop_assert!((r.f1 - h).abs() < 1e-15);
        }
    }

    #[test]
    fn ttest_is_antisymmetric(a in proptest::collection::vec(-1.0f64..1.0, 2..30), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ab = paired_ttest_one_tailed(&a, &b).unwrap();
        let ba = paired_ttest_one_tailed(&b, &a).unwrap();
        prop_assert_eq!(ab.t_statistic, -ba.t_statistic);
        prop_assert!((ab.p_value_one_tailed - (1.0 - ba.p_value_one_tailed)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab.p_value_one_tailed));
        prop_assert_eq!(ab.degrees_of_freedom, a.len() - 1);
    }

    #[test]
    fn adadelta_accumulators_stay_non_negative(grads in proptest::collection::vec(-1e3f64..1e3, 1..20)) {
        let mut p = ModelParams::new();
        p.insert("x", Tensor::zeros(&[1]));
        let mut state = AdadeltaState::new(&p);
        for g in grads {
            let mut gp = ModelParams::new();
            gp.insert("x", Tensor::vector(vec![g]));
            adadelta_step(&mut p, &gp, &mut state, 0.95, 1e-6).unwrap();
            let acc = state.get("x").unwrap();
            prop_assert!(acc.sq_grad[0] >= 0.0 && acc.sq_delta[0] >= 0.0);
            prop_assert!(p.get("x").unwrap().data()[0].is_finite());
        }
    }

    #[test]
    fn kfold_is_a_balanced_partition(n in 2usize..300, k in 2usize..20, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let plan = kfold(n, k, seed).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = plan.folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let (train, test) = plan.train_test(0);
        prop_assert_eq!(train.len() + test.len(), n);
        prop_assert_eq!(plan, kfold(n, k, seed).unwrap());
    }

    #[test]
    fn ratio_split_partitions_the_input(n in 3usize..500, seed in any::<u64>()) {
        let plan = plan_ratio_split(n, (0.7, 0.1, 0.2), seed).unwrap();
        let mut all = [plan.train.clone(), plan.validation.clone(), plan.test.clone()].concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(plan.validation.len(), (n as f64 * 0.1 + 1e-9).floor() as usize);
        prop_assert_eq!(plan.clone(), plan_ratio_split(n, (0.7, 0.1, 0.2), seed).unwrap());
    }

    #[test]
    fn fixed_split_honours_sizes(a in 1usize..50, b in 1usize..50, c in 1usize..50, extra in 0usize..20, seed in any::<u64>()) {
        let n = a + b + c + extra;
        let plan = plan_fixed_split(n, (a, b, c), seed).unwrap();
        prop_assert_eq!((plan.train.len(), plan.validation.len(), plan.test.len(), plan.unused.len()), (a, b, c, extra));
        prop_assert!(plan_fixed_split(a + b + c - 1, (a, b, c), seed).is_err());
    }

    #[test]
    fn record_round_trip(
        tokens in proptest::collection::vec("[a-z0-9]{1,6}", 1..12),
        picks in proptest::collection::vec(any::<bool>(), 12),
        label in proptest::option::of(0u8..2),
        cond in proptest::option::of(proptest::collection::vec(-1e3f64..1e3, 1..5)),
    ) {
        let mut cand: Vec<usize> = (0..tokens.len()).filter(|&i| picks[i]).collect();
        if cand.is_empty() {
            cand.push(tokens.len() - 1);
        }
        let mut inst = Instance::new(tokens, cand, label).unwrap();
        if let Some(c) = cond {
            inst = inst.with_conditioning(c);
        }
        let parsed = parse_record(&inst.to_record()).unwrap().unwrap();
        prop_assert_eq!(parsed.instance, inst);
    }
}

proptest! {
    #![proptest_config(config(100))]

    #[test]
    fn padding_never_changes_a_probability(seed in any::<u64>(), pads in 1usize..=20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = EmbeddingTable::random(15, 8, 0.8, seed);
        for variant in Variant::ALL {
            for (kind, pooling) in KINDS.iter().flat_map(|&k| [(k, Pooling::LastStep), (k, Pooling::Mean)]) {
                let cfg = ModelConfig { pooling, ..tiny_config(variant, kind) };
                let params = init_params(&cfg, seed);
                let inst = random_instance(&mut rng, 15, 8, cfg.candidate_encoder.d_cond);
                let plain = forward_input(inst.input(), &table, &params, &cfg).unwrap().probability;
                let mut ids = inst.ids.clone();
                ids.resize(ids.len() + pads, PAD);
                let mask: Vec<bool> = (0..ids.len()).map(|i| i < inst.ids.len()).collect();
                let padded = SequenceInput { ids: &ids, mask: Some(&mask), ..inst.input() };
                let p = forward_input(padded, &table, &params, &cfg).unwrap().probability;
                prop_assert_eq!(plain.to_bits(), p.to_bits(), "{} {:?}", variant.name(), kind);
            }
        }
    }
}
