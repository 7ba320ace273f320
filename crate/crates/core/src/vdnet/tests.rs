use std::sync::Arc;

use ndarray::Array1;
use rand::Rng;

use super::*;
use crate::analysis::{gen_synthetic, synthetic_embeddings, PredicateRule, SynthSpec};
use crate::pairgeom::{pair_embedding, NormBox};
use crate::util::{argmax, seeded_rng, softmax};

const EMBED: usize = 6;

fn small_config() -> VdNetConfig {
    VdNetConfig {
        word_proj_dim: 5,
        hidden_dim: 7,
        ..VdNetConfig::default()
    }
}

fn random_box(rng: &mut impl Rng) -> NormBox {
    let w = rng.gen_range(0.05..0.5);
    let h = rng.gen_range(0.05..0.5);
    NormBox::new(
        rng.gen_range(0.0..1.0 - w),
        rng.gen_range(0.0..1.0 - h),
        w,
        h,
    )
    .unwrap()
}

pub(crate) fn random_samples(n: usize, n_predicates: usize, seed: u64) -> Vec<PairSample> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| {
            let v_s: Arc<[f64]> = (0..EMBED).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v_o: Arc<[f64]> = (0..EMBED).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p_s = random_box(&mut rng);
            let p_o = random_box(&mut rng);
            PairSample {
                v_s,
                v_o,
                p_s,
                p_o,
                p_j: pair_embedding(&p_s, &p_o).unwrap(),
                target: rng.gen_range(0..n_predicates) as LabelId,
            }
        })
        .collect()
}

#[test]
fn init_is_deterministic_and_shaped() {
    let cfg = VdNetConfig::default();
    let a = init_vdnet(&cfg, 300, 4).unwrap();
    assert_eq!(a, init_vdnet(&cfg, 300, 4).unwrap());
    assert_eq!(a.hidden.weight.dim(), (148, 128));
    assert_eq!(a.output.weight.dim(), (128, 4));
    assert_eq!(a.subject_proj.weight.dim(), (300, 64));
    assert_ne!(a.subject_proj.weight, a.object_proj.weight);
    assert!(a.bn_hidden.gamma.iter().all(|&g| g == 1.0));
    assert!(a.bn_output.running_var.iter().all(|&v| v == 1.0));
    assert!(init_vdnet(&cfg, 300, 1).is_err());
}

#[test]
fn glorot_bound_and_variance() {
    let cfg = VdNetConfig::default();
    let p = init_vdnet(&cfg, 300, 4).unwrap();
    let w = &p.subject_proj.weight;
    let bound = (6.0f64 / 364.0).sqrt();
    assert!(w.iter().all(|v| v.abs() < bound));
    let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
    assert!((var - 2.0 / 364.0).abs() < 0.1 * 2.0 / 364.0, "{var}");
}

#[test]
fn eval_forward_is_pure() {
    let mut p = init_vdnet(&small_config(), EMBED, 3).unwrap();
    let batch = random_samples(10, 3, 1);
    let before = p.clone();
    let a = p.forward(&batch, Mode::Eval, 0.9).unwrap().logits;
    let b = p.forward(&batch, Mode::Eval, 0.9).unwrap().logits;
    assert_eq!(a, b);
    assert_eq!(p, before);
    // batch composition does not matter in eval mode
    let single = p.predict(&batch[3..4]).unwrap();
    assert_eq!(single.row(0), a.row(3));
}

#[test]
fn zero_weights_give_uniform_softmax() {
    let mut p = init_vdnet(&small_config(), EMBED, 3).unwrap();
    for (_, t) in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v = 0.0);
    }
    let logits = p.predict(&random_samples(4, 3, 2)).unwrap();
    assert!(logits.iter().all(|&v| v == 0.0));
    let probs = softmax(logits.row(0).as_slice().unwrap());
    assert!(probs.iter().all(|&q| (q - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn train_forward_moves_running_mean() {
    let mut p = init_vdnet(&small_config(), EMBED, 3).unwrap();
    let batch = random_samples(8, 3, 3);
    let old = p.bn_hidden.running_mean.clone();
    let pass = p.forward(&batch, Mode::Train, 0.9).unwrap();
    let batch_mean = pass.activations.hidden_batch_mean().unwrap().clone();
    let expected: Array1<f64> = &old * 0.9 + &batch_mean * 0.1;
    for (a, b) in p.bn_hidden.running_mean.iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(p.forward(&batch[..1], Mode::Train, 0.9).is_err());
}

#[test]
fn uniform_logits_give_log_c_loss() {
    let mut p = init_vdnet(&small_config(), EMBED, 5).unwrap();
    p.output.weight.fill(0.0);
    p.output.bias.fill(0.0);
    let (loss, _) = p.loss_and_grads(&random_samples(6, 5, 4)).unwrap();
    assert!((loss - 5f64.ln()).abs() < 1e-12, "{loss}");
}

#[test]
fn gradients_match_finite_differences() {
    let p = init_vdnet(&small_config(), EMBED, 4).unwrap();
    for seed in 0..3 {
        let err = grad_check(&p, &random_samples(8, 4, seed), 1e-5).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn gradients_without_batchnorm_are_tighter() {
    let cfg = VdNetConfig {
        batch_norm: false,
        ..small_config()
    };
    let p = init_vdnet(&cfg, EMBED, 4).unwrap();
    let err = grad_check(&p, &random_samples(8, 4, 11), 1e-5).unwrap();
    assert!(err < 1e-6, "{err}");
    assert!(grad_check(&p, &random_samples(8, 4, 11), 0.0).is_err());
}

#[test]
fn duplicated_batch_has_same_loss_and_grads() {
    let p = init_vdnet(&small_config(), EMBED, 4).unwrap();
    let batch = random_samples(6, 4, 5);
    let doubled: Vec<PairSample> = batch.iter().chain(batch.iter()).cloned().collect();
    let (l1, g1) = p.loss_and_grads(&batch).unwrap();
    let (l2, g2) = p.loss_and_grads(&doubled).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for ((name, a), (_, b)) in g1.tensors().into_iter().zip(g2.tensors()) {
        for (x, y) in a.iter().zip(b) {
            assert!(
                (x - y).abs() <= 1e-10 * x.abs().max(1.0),
                "{name}: {x} vs {y}"
            );
        }
    }
}

#[test]
fn out_of_range_target_is_rejected() {
    let p = init_vdnet(&small_config(), EMBED, 3).unwrap();
    let mut batch = random_samples(4, 3, 6);
    batch[2].target = 3;
    assert!(p.loss_and_grads(&batch).is_err());
}

#[test]
fn zero_epochs_leave_params_alone() {
    let cfg = VdNetConfig {
        epochs: 0,
        ..small_config()
    };
    let p = init_vdnet(&cfg, EMBED, 3).unwrap();
    let (q, hist) = train(
        p.clone(),
        &random_samples(10, 3, 7),
        &cfg,
        &mut seeded_rng(0),
    )
    .unwrap();
    assert_eq!(p, q);
    assert!(hist.is_empty());
    assert!(train(p, &[], &cfg, &mut seeded_rng(0)).is_err());
}

/// Geometry-only synthetic samples: two predicates decided by vertical order.
fn geometric_samples(n_images: usize, seed: u64) -> (Vec<PairSample>, usize) {
    let spec = SynthSpec {
        n_images,
        instances_per_image: 4,
        rules: vec![
            PredicateRule::geometric("above", crate::analysis::GeoRule::Above),
            PredicateRule::geometric("left_of", crate::analysis::GeoRule::LeftOf),
        ],
        n_classes: 3,
        seed,
    };
    let d = gen_synthetic(&spec).unwrap();
    let labels: Vec<&str> = d.object_vocab.labels().iter().map(|s| s.as_str()).collect();
    let table = synthetic_embeddings(labels, EMBED, seed).unwrap();
    let (samples, _) = build_samples(&d, &table).unwrap();
    (samples, d.predicate_vocab.len())
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let (samples, n_pred) = geometric_samples(200, 1);
    let cfg = VdNetConfig {
        epochs: 8,
        batch_size: 32,
        learning_rate: 0.01,
        ..small_config()
    };
    let p = init_vdnet(&cfg, EMBED, n_pred).unwrap();
    let (a, hist_a) = train(p.clone(), &samples, &cfg, &mut seeded_rng(3)).unwrap();
    let (b, hist_b) = train(p, &samples, &cfg, &mut seeded_rng(3)).unwrap();
    assert_eq!(hist_a.len(), 8);
    assert!(
        hist_a.last().unwrap() < hist_a.first().unwrap(),
        "{hist_a:?}"
    );
    assert_eq!(hist_a, hist_b);
    assert_eq!(a, b);
}

#[test]
fn trailing_single_sample_batch_is_skipped() {
    let cfg = VdNetConfig {
        epochs: 1,
        batch_size: 4,
        ..small_config()
    };
    let p = init_vdnet(&cfg, EMBED, 3).unwrap();
    // 9 samples -> batches of 4, 4 and a dropped 1
    assert!(train(p, &random_samples(9, 3, 8), &cfg, &mut seeded_rng(0)).is_ok());
}

#[test]
fn constant_predictor_scores_one_on_its_class() {
    let mut p = init_vdnet(&small_config(), EMBED, 3).unwrap();
    p.output.weight.fill(0.0);
    p.output.bias.fill(0.0);
    p.bn_output.beta = Array1::from(vec![0.0, 0.0, 5.0]);
    let mut test = random_samples(20, 3, 9);
    test.iter_mut().for_each(|s| s.target = 2);
    let r = evaluate(&p, &test).unwrap();
    assert_eq!(r.accuracy(2), Some(1.0));
    assert_eq!(r.per_predicate.len(), 1);
    assert_eq!(r.overall_accuracy, 1.0);
}

#[test]
fn coin_predicates_score_near_chance() {
    let spec = SynthSpec {
        n_images: 2000,
        instances_per_image: 2,
        rules: vec![PredicateRule::coin("coin", 2)],
        n_classes: 3,
        seed: 4,
    };
    let d = gen_synthetic(&spec).unwrap();
    let labels: Vec<&str> = d.object_vocab.labels().iter().map(|s| s.as_str()).collect();
    let table = synthetic_embeddings(labels, EMBED, 4).unwrap();
    let (train_d, test_d) = crate::sgdata::split_dataset(&d, 0.5, 1).unwrap();
    let (train_s, _) = build_samples(&train_d, &table).unwrap();
    let (test_s, _) = build_samples(&test_d, &table).unwrap();
    let cfg = VdNetConfig {
        epochs: 10,
        batch_size: 32,
        learning_rate: 0.01,
        ..small_config()
    };
    let p = init_vdnet(&cfg, EMBED, 2).unwrap();
    let (p, _) = train(p, &train_s, &cfg, &mut seeded_rng(0)).unwrap();
    let r = evaluate(&p, &test_s).unwrap();
    assert!(r.per_predicate.values().all(|a| a.support >= 200));
    // Predictions carry no information about the coin, so each label's
    // accuracy is just how often it gets predicted: the two add up to one and
    // the pooled accuracy sits at chance. Which side the argmax favours is
    // arbitrary, so the labels are not individually near 0.5.
    let sum: f64 = r.per_predicate.values().map(|a| a.accuracy).sum();
    assert!((sum - 1.0).abs() <= 0.1, "{r:?}");
    assert!((r.overall_accuracy - 0.5).abs() <= 0.1, "{r:?}");
}

#[test]
fn report_overall_is_support_weighted() {
    let r = AccuracyReport::from_predictions([(0, 0), (0, 1), (1, 1), (1, 1), (1, 0), (2, 2)]);
    assert_eq!(r.accuracy(0), Some(0.5));
    assert_eq!(r.accuracy(1), Some(2.0 / 3.0));
    let weighted: f64 = r
        .per_predicate
        .values()
        .map(|a| a.accuracy * a.support as f64)
        .sum::<f64>()
        / 6.0;
    assert!((r.overall_accuracy - weighted).abs() < 1e-15);
}

#[test]
fn shifting_output_bias_keeps_argmax() {
    let p = init_vdnet(&small_config(), EMBED, 4).unwrap();
    let batch = random_samples(12, 4, 10);
    let base = p.predict(&batch).unwrap();
    let mut shifted = p.clone();
    shifted.bn_output.beta += 3.25;
    let moved = shifted.predict(&batch).unwrap();
    for (a, b) in base.rows().into_iter().zip(moved.rows()) {
        assert_eq!(argmax(a.as_slice().unwrap()), argmax(b.as_slice().unwrap()));
        let (pa, pb) = (
            softmax(a.as_slice().unwrap()),
            softmax(b.as_slice().unwrap()),
        );
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn label_permutation_is_symmetric() {
    // relabel k -> perm[k] and permute the output columns to match
    let perm = [2usize, 0, 3, 1];
    let p = init_vdnet(&small_config(), EMBED, 4).unwrap();
    let mut q = p.clone();
    for k in 0..4 {
        q.output
            .weight
            .column_mut(perm[k])
            .assign(&p.output.weight.column(k));
        q.output.bias[perm[k]] = p.output.bias[k];
        q.bn_output.gamma[perm[k]] = p.bn_output.gamma[k];
        q.bn_output.beta[perm[k]] = p.bn_output.beta[k];
    }
    let batch = random_samples(16, 4, 12);
    let permuted: Vec<PairSample> = batch
        .iter()
        .map(|s| PairSample {
            target: perm[s.target as usize] as LabelId,
            ..s.clone()
        })
        .collect();
    let cfg = VdNetConfig {
        epochs: 3,
        batch_size: 8,
        learning_rate: 0.01,
        ..small_config()
    };
    let (_, ha) = train(p, &batch, &cfg, &mut seeded_rng(1)).unwrap();
    let (_, hb) = train(q, &permuted, &cfg, &mut seeded_rng(1)).unwrap();
    for (a, b) in ha.iter().zip(&hb) {
        assert!((a - b).abs() < 1e-12, "{ha:?} vs {hb:?}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let mut p = init_vdnet(&small_config(), EMBED, 3).unwrap();
    p.forward(&random_samples(4, 3, 1), Mode::Train, 0.9)
        .unwrap();
    let labels = vec!["a".to_string(), "b".into(), "c".into()];
    save_checkpoint(&p, &labels, &path).unwrap();
    let (q, l) = load_checkpoint(&path).unwrap();
    assert_eq!(p, q);
    assert_eq!(l, labels);
    assert!(save_checkpoint(&p, &labels[..2], &path).is_err());

    let mut csv = Vec::new();
    write_loss_history(&[1.5, 0.25], &mut csv).unwrap();
    assert_eq!(
        String::from_utf8(csv).unwrap(),
        "epoch,mean_loss\n1,1.5\n2,0.25\n"
    );
}
