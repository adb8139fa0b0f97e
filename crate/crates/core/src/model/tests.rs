use super::*;
use crate::data::{generate_synthetic, SyntheticConfig};
use crate::numerics::{finite_diff_gradient, relative_error, softmax};
use rand::Rng;

fn random_params(vocab: usize, d: usize, kind: SimilarityKind, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(vocab, d, kind, seed).unwrap();
    // non-zero biases so their gradients are exercised
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    for b in [
        &mut p.mix_b,
        &mut p.start_b,
        &mut p.end_b,
        &mut p.joint_b,
        &mut p.cond.b,
    ] {
        b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    p
}

fn random_ids(rng: &mut ChaCha8Rng, vocab: usize, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..vocab)).collect()
}

/// Scalar re-implementation of the forward pass.
fn straight_line(
    p: &ModelParams,
    question: &[usize],
    passage: &[usize],
) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let d = p.dim();
    let l = passage.len();
    let e = |id: usize, k: usize| p.embedding[[id, k]];
    let mut q = vec![0.0; d];
    for k in 0..d {
        for &id in question {
            q[k] += e(id, k);
        }
        q[k] /= question.len() as f64;
    }
    let mut h = vec![vec![0.0; l]; d];
    for t in 0..l {
        let mut feat = vec![0.0; 7 * d];
        for (slot, pos) in [t.checked_sub(1), Some(t), Some(t + 1)]
            .into_iter()
            .enumerate()
        {
            if let Some(pos) = pos.filter(|&x| x < l) {
                for k in 0..d {
                    feat[slot * d + k] = e(passage[pos], k);
                    feat[(slot + 3) * d + k] = e(passage[pos], k) * q[k];
                }
            }
        }
        feat[6 * d..].copy_from_slice(&q);
        for r in 0..d {
            let mut z = p.mix_b[r];
            for c in 0..7 * d {
                z += p.mix_w[[r, c]] * feat[c];
            }
            h[r][t] = z.tanh();
        }
    }
    let logits = |w: &Array1<f64>, b: f64| -> Vec<f64> {
        (0..l)
            .map(|t| b + (0..d).map(|k| w[k] * h[k][t]).sum::<f64>())
            .collect()
    };
    let start = logits(&p.start_w, p.start_b[0]);
    let end = logits(&p.end_w, p.end_b[0]);
    // dot similarity over H_s = W H + b, H_e = H
    let mut joint = vec![vec![0.0; l]; l];
    for i in 0..l {
        let hs: Vec<f64> = (0..d)
            .map(|r| p.joint_b[r] + (0..d).map(|c| p.joint_w[[r, c]] * h[c][i]).sum::<f64>())
            .collect();
        for j in 0..l {
            joint[i][j] = (0..d).map(|k| hs[k] * h[k][j]).sum();
        }
    }
    (start, end, joint)
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random_params(12, 6, SimilarityKind::Dot, 3);
    let question = random_ids(&mut rng, 12, 3);
    let passage = random_ids(&mut rng, 12, 5);
    let cache = forward(&p, &question, &passage, MaskPolicy::ValidSpans).unwrap();
    let (start, end, joint) = straight_line(&p, &question, &passage);
    for t in 0..5 {
        assert!((cache.start.as_slice()[t] - start[t]).abs() < 1e-12);
        assert!((cache.end.as_slice()[t] - end[t]).abs() < 1e-12);
        for j in 0..5 {
            assert!((cache.joint.values()[[t, j]] - joint[t][j]).abs() < 1e-12);
        }
    }
    assert_eq!(cache.h.dim(), (6, 5));
}

#[test]
fn zero_embeddings_give_uniform_boundaries() {
    let mut p = random_params(5, 4, SimilarityKind::Dot, 0);
    p.embedding.fill(0.0);
    let cache = forward(&p, &[1, 2], &[3, 4, 1, 2], MaskPolicy::ValidSpans).unwrap();
    for probs in [
        softmax(cache.start.as_slice()).unwrap(),
        softmax(cache.end.as_slice()).unwrap(),
    ] {
        for v in probs {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }
}

#[test]
fn single_token_passage_has_one_span() {
    let p = random_params(5, 4, SimilarityKind::Dot, 0);
    let dist = predict_distribution(
        &p,
        &[1],
        &[2],
        ObjectiveKind::Joint,
        MaskPolicy::ValidSpans,
        10,
    )
    .unwrap();
    assert_eq!(dist.len(), 1);
    assert_eq!(dist.entries()[0].probability, 1.0);
}

#[test]
fn unknown_ids_are_rejected() {
    let p = random_params(5, 4, SimilarityKind::Dot, 0);
    let err = forward(&p, &[1], &[7], MaskPolicy::ValidSpans).unwrap_err();
    assert!(matches!(err, Error::Vocabulary { id: 7, vocab: 5 }));
    assert_eq!(
        Vocab::build([&Passage::new("b a")]).encode(&Passage::new("a zzz")),
        vec![1, 0]
    );
}

fn check_gradient<F>(p: &ModelParams, loss_and_grad: F, label: &str)
where
    F: Fn(&ModelParams) -> (f64, ModelParams),
{
    let (_, analytic) = loss_and_grad(p);
    let mut probe = p.clone();
    let numeric = finite_diff_gradient(
        |flat| {
            probe.set_flat(flat).unwrap();
            loss_and_grad(&probe).0
        },
        &p.to_flat(),
        1e-5,
    )
    .unwrap();
    let err = relative_error(&analytic.to_flat(), &numeric);
    assert!(err < 1e-4, "{label}: relative error {err}");
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (case, kind) in SimilarityKind::ALL.into_iter().enumerate() {
        let p = random_params(10, 8, kind, case as u64);
        let l = 3 + case;
        let question = random_ids(&mut rng, 10, 3);
        let passage = random_ids(&mut rng, 10, l);
        let target = SpanTarget::new(1, l - 1).unwrap();
        for objective in [
            ObjectiveKind::Independent,
            ObjectiveKind::Joint,
            ObjectiveKind::JointConditional,
            ObjectiveKind::Compound,
        ] {
            check_gradient(
                &p,
                |m| {
                    example_loss(
                        m,
                        &question,
                        &passage,
                        target,
                        objective,
                        MaskPolicy::ValidSpans,
                    )
                    .unwrap()
                },
                &format!("{objective} / {kind}"),
            );
        }
    }
}

#[test]
fn shared_norm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_params(10, 8, SimilarityKind::Dot, 11);
    let inst = DssInstance {
        id: "q".into(),
        question: random_ids(&mut rng, 10, 3),
        passages: vec![random_ids(&mut rng, 10, 6), random_ids(&mut rng, 10, 8)],
        gt: vec![
            vec![
                SpanTarget::new(1, 2).unwrap(),
                SpanTarget::new(4, 5).unwrap(),
            ],
            vec![SpanTarget::new(0, 0).unwrap()],
        ],
    };
    for scope in [DssScope::AllFactors, DssScope::JointOnly] {
        check_gradient(
            &p,
            |m| dss_loss(m, &inst, scope, MaskPolicy::ValidSpans).unwrap(),
            &format!("{scope:?}"),
        );
    }
}

#[test]
fn unused_heads_get_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = random_params(10, 8, SimilarityKind::Dot, 1);
    let question = random_ids(&mut rng, 10, 3);
    let passage = random_ids(&mut rng, 10, 6);
    let t = SpanTarget::new(2, 4).unwrap();
    let policy = MaskPolicy::ValidSpans;
    let (_, g) = example_loss(
        &p,
        &question,
        &passage,
        t,
        ObjectiveKind::Independent,
        policy,
    )
    .unwrap();
    assert!(g.joint_w.iter().chain(g.joint_b.iter()).all(|&v| v == 0.0));
    let (_, g) = example_loss(&p, &question, &passage, t, ObjectiveKind::Joint, policy).unwrap();
    assert!(g.start_w.iter().chain(g.end_w.iter()).all(|&v| v == 0.0));
}

#[test]
fn doubling_the_loss_doubles_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p = random_params(10, 8, SimilarityKind::WeightedDot, 2);
    let question = random_ids(&mut rng, 10, 3);
    let passage = random_ids(&mut rng, 10, 6);
    let cache = forward(&p, &question, &passage, MaskPolicy::ValidSpans).unwrap();
    let r = compound_loss(
        &cache.start,
        &cache.end,
        &cache.joint,
        SpanTarget::new(0, 3).unwrap(),
    )
    .unwrap();
    let g1 = backward(&p, &cache, &r, None).unwrap().to_flat();
    let g2 = backward(&p, &cache, &r.scaled(2.0), None)
        .unwrap()
        .to_flat();
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(2.0 * a, *b);
    }
}

/// Single-token passages under J have a one-span softmax, hence zero gradient.
fn zero_gradient_items() -> Vec<TrainItem> {
    (1..5)
        .map(|i| TrainItem::Single {
            question: vec![i],
            passage: vec![i + 1],
            target: SpanTarget::new(0, 0).unwrap(),
        })
        .collect()
}

#[test]
fn zero_gradients_only_decay() {
    let items = zero_gradient_items();
    let batch: Vec<&TrainItem> = items.iter().collect();
    for decay in [0.0, 0.1] {
        let config = TrainConfig {
            objective: ObjectiveKind::Joint,
            d_emb: 4,
            weight_decay: decay,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(8, &config).unwrap();
        let before = state.params.to_flat();
        let loss = train_step(&mut state, &batch, &config).unwrap();
        assert_eq!(loss, 0.0);
        for (a, b) in before.iter().zip(state.params.to_flat()) {
            assert_eq!(a * (1.0 - 0.01 * decay), b);
        }
    }
}

fn tiny_corpus(n: usize) -> (Vec<Example>, Vocab) {
    let config = SyntheticConfig {
        n_train: n,
        n_dev: 1,
        ..SyntheticConfig::default()
    };
    let corpus = generate_synthetic(&config, 5).unwrap();
    let vocab = Vocab::build(corpus.train.iter().flat_map(|e| [&e.question, &e.passage]));
    (corpus.train, vocab)
}

#[test]
fn memorizes_ten_examples() {
    let (train_set, vocab) = tiny_corpus(10);
    let config = TrainConfig {
        objective: ObjectiveKind::Compound,
        lr: 0.01,
        epochs: 200,
        batch_size: 4,
        d_emb: 16,
        ..TrainConfig::default()
    };
    let (_, log) = train(&train_set, &train_set, &vocab, &config, None).unwrap();
    let first_perfect = log.epochs.iter().position(|e| e.dev_em == Some(100.0));
    assert!(
        first_perfect.is_some(),
        "final EM {:?}",
        log.epochs.last().unwrap().dev_em
    );
    assert!(log.epochs.last().unwrap().loss < log.epochs[0].loss);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let (train_set, vocab) = tiny_corpus(12);
    let config = TrainConfig {
        objective: ObjectiveKind::JointConditional,
        lr: 0.01,
        epochs: 4,
        batch_size: 5,
        d_emb: 8,
        ..TrainConfig::default()
    };
    let (a, log_a) = train(&train_set, &[], &vocab, &config, None).unwrap();
    let (b, log_b) = train(&train_set, &[], &vocab, &config, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);

    let half = TrainConfig {
        epochs: 2,
        ..config.clone()
    };
    let (mid, _) = train(&train_set, &[], &vocab, &half, None).unwrap();
    let text = Checkpoint::new(vocab.clone(), mid, &half)
        .to_text()
        .unwrap();
    let restored = Checkpoint::from_text(&text).unwrap();
    assert_eq!(restored.to_text().unwrap(), text);
    let (resumed, _) = train(
        &train_set,
        &[],
        &restored.vocab,
        &config,
        Some(restored.state),
    )
    .unwrap();
    assert_eq!(resumed, a);
}

#[test]
fn checkpoint_rejects_corruption() {
    let (train_set, vocab) = tiny_corpus(3);
    let config = TrainConfig {
        epochs: 1,
        d_emb: 4,
        ..TrainConfig::default()
    };
    let (state, _) = train(&train_set, &[], &vocab, &config, None).unwrap();
    let text = Checkpoint::new(vocab, state, &config).to_text().unwrap();
    assert!(Checkpoint::from_text(&text.replace("param mix_w", "param mix_x")).is_err());
    assert!(Checkpoint::from_text(&text[..text.len() / 2]).is_err());
    assert!(Checkpoint::from_text("hello").is_err());
}

fn single_passage_instances(examples: &[Example], vocab: &Vocab) -> Vec<DssInstance> {
    examples
        .iter()
        .map(|ex| DssInstance {
            id: ex.id.clone(),
            question: vocab.encode(&ex.question),
            passages: vec![vocab.encode(&ex.passage)],
            gt: vec![vec![ex.gold]],
        })
        .collect()
}

#[test]
fn single_passage_dss_matches_compound_training() {
    let (train_set, vocab) = tiny_corpus(12);
    let config = TrainConfig {
        objective: ObjectiveKind::Compound,
        lr: 0.01,
        epochs: 3,
        batch_size: 4,
        d_emb: 8,
        ..TrainConfig::default()
    };
    let (plain, plain_log) = train(&train_set, &[], &vocab, &config, None).unwrap();
    let dss_config = TrainConfig {
        objective: ObjectiveKind::CompoundDss,
        ..config
    };
    let instances = single_passage_instances(&train_set, &vocab);
    let (dss, dss_log) = train_dss(&instances, &[], &vocab, &dss_config, None).unwrap();
    assert_eq!(plain.params, dss.params);
    assert_eq!(plain_log.epochs, dss_log.epochs);
}

#[test]
fn duplicate_answer_passage_lowers_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = random_params(10, 8, SimilarityKind::Dot, 4);
    let question = random_ids(&mut rng, 10, 3);
    let passage = random_ids(&mut rng, 10, 6);
    let target = SpanTarget::new(2, 3).unwrap();
    let one = DssInstance {
        id: "q".into(),
        question: question.clone(),
        passages: vec![passage.clone()],
        gt: vec![vec![target]],
    };
    let two = DssInstance {
        passages: vec![passage.clone(), passage],
        gt: vec![vec![target], vec![target]],
        ..one.clone()
    };
    let (l1, _) = dss_loss(&p, &one, DssScope::AllFactors, MaskPolicy::ValidSpans).unwrap();
    let (l2, _) = dss_loss(&p, &two, DssScope::AllFactors, MaskPolicy::ValidSpans).unwrap();
    // an identical copy doubles both numerator and denominator mass
    assert!((l1 - l2).abs() < 1e-12);

    let other = random_ids(&mut rng, 10, 6);
    let three = DssInstance {
        passages: vec![two.passages[0].clone(), other],
        gt: vec![vec![target], vec![SpanTarget::new(0, 1).unwrap()]],
        ..one.clone()
    };
    let (l3, _) = dss_loss(&p, &three, DssScope::AllFactors, MaskPolicy::ValidSpans).unwrap();
    // explicit pooled evaluation: −log((a + b)/(A + B)) for each factor
    let c1 = forward(&p, &question, &three.passages[0], MaskPolicy::ValidSpans).unwrap();
    let c2 = forward(&p, &question, &three.passages[1], MaskPolicy::ValidSpans).unwrap();
    let factor = |num: f64, den: f64| -(num / den).ln();
    let sum_exp = |v: &[f64]| v.iter().map(|x| x.exp()).sum::<f64>();
    let joint_mass = |c: &ForwardCache| {
        let m = c.joint.values();
        (0..m.nrows())
            .flat_map(|i| (i..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]].exp())
            .sum::<f64>()
    };
    let expected = factor(
        c1.joint.values()[[2, 3]].exp() + c2.joint.values()[[0, 1]].exp(),
        joint_mass(&c1) + joint_mass(&c2),
    ) + (factor(
        c1.start.as_slice()[2].exp() + c2.start.as_slice()[0].exp(),
        sum_exp(c1.start.as_slice()) + sum_exp(c2.start.as_slice()),
    ) + factor(
        c1.end.as_slice()[3].exp() + c2.end.as_slice()[1].exp(),
        sum_exp(c1.end.as_slice()) + sum_exp(c2.end.as_slice()),
    ));
    assert!((l3 - expected).abs() < 1e-10);

    // a second occurrence inside the same passage strictly lowers the loss
    let both = DssInstance {
        gt: vec![vec![target, SpanTarget::new(4, 5).unwrap()]],
        ..one.clone()
    };
    let (lb, _) = dss_loss(&p, &both, DssScope::AllFactors, MaskPolicy::ValidSpans).unwrap();
    assert!(lb < l1);
}

#[test]
fn unsupervised_contexts_are_skipped_and_counted() {
    let (train_set, vocab) = tiny_corpus(4);
    let mut instances = single_passage_instances(&train_set, &vocab);
    instances[1].gt = vec![vec![]];
    let config = TrainConfig {
        objective: ObjectiveKind::CompoundDss,
        epochs: 1,
        d_emb: 4,
        ..TrainConfig::default()
    };
    let (_, log) = train_dss(&instances, &[], &vocab, &config, None).unwrap();
    assert_eq!(log.skipped, 1);
    for inst in &mut instances {
        inst.gt = vec![vec![]];
    }
    assert!(matches!(
        train_dss(&instances, &[], &vocab, &config, None),
        Err(Error::NoSupervision(_))
    ));
}

#[test]
fn objective_names_round_trip() {
    for k in ObjectiveKind::ALL {
        assert_eq!(k.as_str().parse::<ObjectiveKind>().unwrap(), k);
        let json = serde_json::to_string(&k).unwrap();
        assert_eq!(json, format!("\"{}\"", k.as_str()));
    }
    assert!("X".parse::<ObjectiveKind>().is_err());
}
