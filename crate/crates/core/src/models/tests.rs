use super::*;
use crate::autodiff::{grad_check, Tape};
use crate::corpus::{split, DatasetBuilder, Part, SplitDataset};
use crate::synth::{planted_topic, PlantedConfig, TopicTextConfig};
use crate::text::{build_documents, length_caps, train_embeddings, DocCaps, SgnsConfig, Vocab};
use crate::{eval, stream};
use std::sync::Arc;

fn topic_split(n: usize, seed: u64) -> SplitDataset {
    let cfg = PlantedConfig {
        n_users: (n / 6).max(8),
        n_items: (n / 12).max(4),
        n_interactions: n,
        cold_items: 0,
        seed,
        ..Default::default()
    };
    split(
        Arc::new(planted_topic(&cfg, &TopicTextConfig::default())),
        seed,
    )
    .unwrap()
}

fn text_inputs(s: &SplitDataset, layout: crate::text::DocLayout) -> TrainInputs {
    let vocab = Arc::new(Vocab::build(&s.train(), 50_000));
    let caps = DocCaps::new(48, length_caps(&s.train()));
    let docs = Arc::new(build_documents(s, &vocab, &caps, layout));
    let sgns = SgnsConfig {
        dim: 8,
        epochs: 1,
        ..Default::default()
    };
    let embeddings = Arc::new(train_embeddings(&s.train(), &vocab, &sgns, 3).unwrap());
    TrainInputs {
        docs: Some(docs),
        embeddings: Some(embeddings),
        vocab: Some(vocab),
    }
}

fn small_cfg(k: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        latent_dim: k,
        l2: 0.0,
        conv_filters: 6,
        batch_size: 64,
        seed,
        ..Default::default()
    }
}

fn set_param(model: &mut dyn Model, name: &str, values: &[f64]) {
    let id = model.common().store.id(name).unwrap();
    model
        .common_mut()
        .store
        .value_mut(id)
        .copy_from_slice(values);
}

fn zero_param(model: &mut dyn Model, name: &str) {
    let id = model.common().store.id(name).unwrap();
    model.common_mut().store.value_mut(id).fill(0.0);
}

// ---- bias ----------------------------------------------------------------

#[test]
fn bias_prediction_is_alpha_plus_betas() {
    let s = topic_split(200, 1);
    let mut model = BiasModel::new(&s, small_cfg(4, 1));
    // all parameters zero → 0 pre-clip
    set_param(&mut model, "alpha", &[0.0]);
    assert_eq!(score_one(&model, 0, 0).unwrap(), 0.0);

    set_param(&mut model, "alpha", &[3.0]);
    let n_users = s.data().n_users();
    let n_items = s.data().n_items();
    let mut bu = vec![0.0; n_users];
    bu[0] = 0.5;
    let mut bi = vec![0.0; n_items];
    bi[0] = -0.2;
    set_param(&mut model, "beta_user", &bu);
    set_param(&mut model, "beta_item", &bi);
    let got = score_one(&model, 0, 0).unwrap();
    assert!((got - 3.3).abs() < 1e-15);
}

#[test]
fn bias_alpha_converges_to_mean_with_single_user_item() {
    // one user, one item, λ=0: the squared-loss minimizer puts
    // α + β_u + β_i at the mean rating; α starts at the mean and must
    // stay there
    let mut b = DatasetBuilder::new();
    for k in 0..20 {
        b.push("u0", "i0", if k % 2 == 0 { 2.0 } else { 4.0 }, &[]);
    }
    let s = split(Arc::new(b.build()), 3).unwrap();
    let mean = ModelCommon::train_mean(&s.train());
    let mut model = BiasModel::new(
        &s,
        TrainConfig {
            l2: 0.0,
            max_epochs: 10,
            patience: 0,
            ..small_cfg(1, 5)
        },
    );
    train(&mut model, &s).unwrap();
    let alpha = model
        .common()
        .store
        .value(model.common().store.id("alpha").unwrap())[0];
    assert!((alpha - mean).abs() < 1e-3, "alpha {alpha} vs mean {mean}");
}

// ---- mf -------------------------------------------------------------------

#[test]
fn mf_with_zero_factors_equals_bias() {
    let s = topic_split(240, 2);
    let cfg = small_cfg(4, 7);
    let mut mf = MfModel::new(&s, cfg.clone());
    let bias = BiasModel::new(&s, cfg);
    zero_param(&mut mf, "gamma_user");
    zero_param(&mut mf, "gamma_item");
    for pair in [(0u32, 0u32), (1, 2), (3, 1)] {
        assert_eq!(
            score_one(&mf, pair.0, pair.1).unwrap(),
            score_one(&bias, pair.0, pair.1).unwrap()
        );
    }
}

#[test]
fn mf_inner_product_arithmetic() {
    let s = topic_split(240, 2);
    let mut mf = MfModel::new(&s, small_cfg(2, 7));
    set_param(&mut mf, "alpha", &[0.0]);
    zero_param(&mut mf, "beta_user");
    zero_param(&mut mf, "beta_item");
    let n_users = s.data().n_users();
    let n_items = s.data().n_items();
    let mut gu = vec![0.0; n_users * 2];
    gu[0] = 1.0;
    gu[1] = 2.0;
    let mut gi = vec![0.0; n_items * 2];
    gi[0] = 3.0;
    gi[1] = -1.0;
    set_param(&mut mf, "gamma_user", &gu);
    set_param(&mut mf, "gamma_item", &gi);
    // (1,2)·(3,−1) = 1
    assert!((score_one(&mf, 0, 0).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn mf_grad_check() {
    let s = topic_split(300, 3);
    let model = MfModel::new(
        &s,
        TrainConfig {
            l2: 1e-4,
            ..small_cfg(4, 9)
        },
    );
    let report = check_model_gradients(&model, &s, 11);
    assert!(
        report.worst_rel_err < 1e-3,
        "worst {}",
        report.worst_rel_err
    );
}

/// Builds one deterministic training batch and runs the finite
/// difference checker over the model's full loss.
fn check_model_gradients(
    model: &dyn Model,
    s: &SplitDataset,
    seed: u64,
) -> crate::autodiff::GradCheckReport {
    let rows: Vec<u32> = (0..s.train().len().min(24) as u32).collect();
    let train = s.train();
    let users: Vec<u32> = rows.iter().map(|&r| train.get(r as usize).user).collect();
    let items: Vec<u32> = rows.iter().map(|&r| train.get(r as usize).item).collect();
    let ratings: Vec<f64> = rows.iter().map(|&r| train.get(r as usize).rating).collect();
    let (user_seen, item_seen) = model.common().batch_masks(&users, &items);
    let batch = Batch {
        users,
        items,
        ratings,
        user_seen,
        item_seen,
        train_rows: Some(rows),
    };
    grad_check(
        &model.common().store,
        |tape, bound| {
            let mut rng = stream(0, "gc-unused");
            let mut cx = ForwardCx {
                mode: Mode::Eval, // dropout disabled
                dropout_rng: &mut rng,
            };
            model
                .loss(tape, bound, &batch, &mut cx)
                .map_err(|e| match e {
                    ModelError::Ad(ad) => ad,
                    other => panic!("unexpected model error in grad check: {other}"),
                })
        },
        1e-4,
        60,
        seed,
    )
    .unwrap()
}

// ---- neumf ----------------------------------------------------------------

#[test]
fn neumf_with_zero_mlp_equals_bias() {
    let s = topic_split(240, 4);
    let cfg = small_cfg(4, 13);
    let mut neumf = NeuMfModel::new(&s, cfg.clone());
    let bias = BiasModel::new(&s, cfg);
    for name in ["mlp_w0", "mlp_w1", "mlp_w2", "mlp_b0", "mlp_b1", "mlp_b2"] {
        zero_param(&mut neumf, name);
    }
    for pair in [(0u32, 0u32), (2, 3), (5, 1)] {
        assert_eq!(
            score_one(&neumf, pair.0, pair.1).unwrap(),
            score_one(&bias, pair.0, pair.1).unwrap()
        );
    }
}

#[test]
fn neumf_single_linear_layer_can_realize_the_inner_product() {
    // with constant item factors c, a single linear layer with weights
    // [c; 0] computes γ_u·c = γ_u·γ_i
    let s = topic_split(240, 4);
    let k = 3;
    let cfg = TrainConfig {
        neumf_hidden: Some(vec![]),
        ..small_cfg(k, 13)
    };
    let mut neumf = NeuMfModel::new(&s, cfg.clone());
    let mut mf = MfModel::new(&s, cfg);

    let n_users = s.data().n_users();
    let n_items = s.data().n_items();
    let c = [0.7, -1.3, 0.4];
    let mut rng = stream(21, "gamma-user");
    use rand::RngExt;
    let gu: Vec<f64> = (0..n_users * k)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let gi: Vec<f64> = (0..n_items).flat_map(|_| c).collect();
    for model in [&mut neumf as &mut dyn Model, &mut mf as &mut dyn Model] {
        set_param(model, "gamma_user", &gu);
        set_param(model, "gamma_item", &gi);
    }
    let mut w = vec![0.0; 2 * k];
    w[..k].copy_from_slice(&c);
    set_param(&mut neumf, "mlp_w0", &w);
    zero_param(&mut neumf, "mlp_b0");

    for pair in [(0u32, 0u32), (4, 2), (7, 3)] {
        let a = score_one(&neumf, pair.0, pair.1).unwrap();
        let b = score_one(&mf, pair.0, pair.1).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn neumf_grad_check() {
    let s = topic_split(300, 5);
    let model = NeuMfModel::new(
        &s,
        TrainConfig {
            l2: 1e-4,
            ..small_cfg(4, 17)
        },
    );
    let report = check_model_gradients(&model, &s, 19);
    assert!(
        report.worst_rel_err < 1e-3,
        "worst {}",
        report.worst_rel_err
    );
}

// ---- hft -------------------------------------------------------------------

#[test]
fn hft_with_mu_zero_records_the_exact_mf_loss() {
    let s = topic_split(300, 6);
    let inputs = text_inputs(&s, crate::text::DocLayout::Concat);
    let cfg = TrainConfig {
        hft_mu: 0.0,
        l2: 1e-5,
        ..small_cfg(4, 23)
    };
    let hft = HftModel::new(&s, &inputs, cfg.clone()).unwrap();
    let mf = MfModel::new(&s, cfg);

    let rows: Vec<u32> = (0..32u32).collect();
    let train = s.train();
    let users: Vec<u32> = rows.iter().map(|&r| train.get(r as usize).user).collect();
    let items: Vec<u32> = rows.iter().map(|&r| train.get(r as usize).item).collect();
    let ratings: Vec<f64> = rows.iter().map(|&r| train.get(r as usize).rating).collect();
    let (user_seen, item_seen) = hft.common().batch_masks(&users, &items);
    let batch = Batch {
        users,
        items,
        ratings,
        user_seen,
        item_seen,
        train_rows: Some(rows),
    };
    let loss_of = |model: &dyn Model| {
        let mut tape = Tape::new();
        let bound = model.common().store.bind(&mut tape);
        let mut rng = stream(0, "unused");
        let mut cx = ForwardCx {
            mode: Mode::Train,
            dropout_rng: &mut rng,
        };
        let loss = model.loss(&mut tape, &bound, &batch, &mut cx).unwrap();
        tape.scalar_value(loss)
    };
    assert_eq!(loss_of(&hft), loss_of(&mf));
}

#[test]
fn hft_mu_zero_training_trace_is_identical_to_mf() {
    let s = topic_split(400, 7);
    let inputs = text_inputs(&s, crate::text::DocLayout::Concat);
    let cfg = TrainConfig {
        hft_mu: 0.0,
        l2: 1e-5,
        max_epochs: 10,
        patience: 0,
        ..small_cfg(4, 29)
    };
    let mut hft = HftModel::new(&s, &inputs, cfg.clone()).unwrap();
    let mut mf = MfModel::new(&s, cfg);
    let hft_out = train(&mut hft, &s).unwrap();
    let mf_out = train(&mut mf, &s).unwrap();
    assert_eq!(hft_out.val_trace.len(), 10);
    for (a, b) in hft_out.val_trace.iter().zip(&mf_out.val_trace) {
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
}

#[test]
fn hft_single_topic_likelihood_is_maximized_by_the_empirical_unigram() {
    let s = topic_split(300, 8);
    let inputs = text_inputs(&s, crate::text::DocLayout::Concat);
    let cfg = TrainConfig {
        hft_mu: 1.0,
        l2: 0.0,
        ..small_cfg(1, 31)
    };
    let vocab = inputs.vocab.as_ref().unwrap();
    let v = vocab.len();
    let mut hft = HftModel::new(&s, &inputs, cfg).unwrap();

    // empirical unigram over training tokens (vocab ids)
    let mut counts = vec![0.0f64; v];
    let mut total = 0.0;
    for it in s.train().iter() {
        for t in vocab.encode(&it.review) {
            counts[t as usize] += 1.0;
            total += 1.0;
        }
    }
    let lik_with = |hft: &mut HftModel, probs: &[f64]| -> f64 {
        let logits: Vec<f64> = probs.iter().map(|&p| (p + 1e-12).ln()).collect();
        hft.set_topic_word_logits(&logits);
        // K=1: lik = Σ_tokens ln φ_{1,w}; recover it from the objective
        let sse_minus_mu_lik = hft.objective(&s);
        let phi = hft.phi(0);
        let _ = phi;
        sse_minus_mu_lik
    };
    let empirical: Vec<f64> = counts.iter().map(|&c| c / total).collect();
    let objective_at_empirical = lik_with(&mut hft, &empirical);
    // any mixture with the uniform distribution must not beat it
    for blend in [0.2, 0.5, 0.9] {
        let perturbed: Vec<f64> = empirical
            .iter()
            .map(|&p| (1.0 - blend) * p + blend / v as f64)
            .collect();
        let objective_perturbed = lik_with(&mut hft, &perturbed);
        assert!(
            objective_at_empirical <= objective_perturbed + 1e-9,
            "objective {objective_at_empirical} vs {objective_perturbed} at blend {blend}"
        );
    }
}

#[test]
fn hft_single_topic_resample_assigns_topic_zero() {
    let s = topic_split(200, 9);
    let inputs = text_inputs(&s, crate::text::DocLayout::Concat);
    let mut hft = HftModel::new(&s, &inputs, small_cfg(1, 37)).unwrap();
    let mut rng = stream(1, "resample");
    hft.resample(&mut rng);
    for review in hft.assignments() {
        assert!(review.iter().all(|&z| z == 0));
    }
}

#[test]
fn hft_resample_matches_analytic_posterior() {
    // φ_0 concentrated on one word, φ_1 near-uniform, θ uniform (κ=0)
    let mut b = DatasetBuilder::new();
    let mut word_tokens = 0usize;
    for k in 0..400 {
        // reviews are 25 copies of the special word plus one filler
        let mut toks = vec!["special"; 25];
        toks.push(if k % 2 == 0 { "other" } else { "noise" });
        word_tokens += 25;
        b.push(&format!("u{}", k % 40), &format!("i{}", k % 10), 3.0, &toks);
    }
    let s = split(Arc::new(b.build()), 11).unwrap();
    let vocab = Arc::new(Vocab::build(&s.train(), 100));
    let inputs = TrainInputs {
        vocab: Some(Arc::clone(&vocab)),
        ..Default::default()
    };
    let mut hft = HftModel::new(&s, &inputs, small_cfg(2, 41)).unwrap();
    set_param(&mut hft, "kappa", &[0.0]); // uniform θ
    let v = vocab.len();
    let special = (2..v as u32)
        .find(|&id| vocab.token(id) == "special")
        .unwrap() as usize;
    let mut logits = vec![0.0; 2 * v];
    logits[special] = 6.0; // topic 0 loves the word
    hft.set_topic_word_logits(&logits);

    let phi0 = hft.phi(0)[special];
    let phi1 = hft.phi(1)[special];
    let posterior = phi0 / (phi0 + phi1);

    let mut rng = stream(5, "resample-posterior");
    hft.resample(&mut rng);
    let mut topic0 = 0usize;
    let mut seen = 0usize;
    let train = s.train();
    for (row, review) in hft.assignments().iter().enumerate() {
        let it = train.get(row);
        for (pos, &z) in review.iter().enumerate() {
            if vocab.encode(&it.review)[pos] as usize == special {
                seen += 1;
                topic0 += (z == 0) as usize;
            }
        }
    }
    assert!(seen >= 7_000, "want ≥10k-ish draws, got {seen}");
    let _ = word_tokens;
    let freq = topic0 as f64 / seen as f64;
    assert!(
        (freq - posterior).abs() < 0.02,
        "frequency {freq} vs analytic posterior {posterior}"
    );
}

#[test]
fn hft_resample_is_deterministic_per_seed() {
    let s = topic_split(250, 10);
    let inputs = text_inputs(&s, crate::text::DocLayout::Concat);
    let mut a = HftModel::new(&s, &inputs, small_cfg(3, 43)).unwrap();
    let mut b = HftModel::new(&s, &inputs, small_cfg(3, 43)).unwrap();
    a.resample(&mut stream(9, "z"));
    b.resample(&mut stream(9, "z"));
    assert_eq!(a.assignments(), b.assignments());
    let mut c = HftModel::new(&s, &inputs, small_cfg(3, 43)).unwrap();
    c.resample(&mut stream(10, "z"));
    assert_ne!(a.assignments(), c.assignments());
}

#[test]
fn hft_alternation_does_not_increase_the_objective_on_a_small_fixture() {
    // 50 interactions, gentle steps
    let mut b = DatasetBuilder::new();
    let words = ["alpha", "beta", "gamma", "delta"];
    for k in 0..50 {
        let toks: Vec<&str> = (0..6).map(|j| words[(k + j) % 4]).collect();
        b.push(
            &format!("u{}", k % 10),
            &format!("i{}", k % 5),
            1.0 + (k % 5) as f64,
            &toks,
        );
    }
    let s = split(Arc::new(b.build()), 13).unwrap();
    let vocab = Arc::new(Vocab::build(&s.train(), 100));
    let inputs = TrainInputs {
        vocab: Some(vocab),
        ..Default::default()
    };
    let cfg = TrainConfig {
        hft_mu: 0.05,
        l2: 0.0,
        learning_rate: 2e-3,
        batch_size: 64,
        ..small_cfg(2, 47)
    };
    let mut hft = HftModel::new(&s, &inputs, cfg).unwrap();
    let mut hook_rng = stream(3, "alternation");
    let rows: Vec<u32> = (0..s.train().len() as u32).collect();
    let train_view = s.train();
    let users: Vec<u32> = train_view.iter().map(|it| it.user).collect();
    let items: Vec<u32> = train_view.iter().map(|it| it.item).collect();
    let ratings: Vec<f64> = train_view.iter().map(|it| it.rating).collect();
    let (user_seen, item_seen) = hft.common().batch_masks(&users, &items);
    let batch = Batch {
        users,
        items,
        ratings,
        user_seen,
        item_seen,
        train_rows: Some(rows),
    };

    let mut last = f64::INFINITY;
    for _round in 0..6 {
        hft.resample(&mut hook_rng);
        for _step in 0..30 {
            let mut tape = Tape::new();
            let bound = hft.common().store.bind(&mut tape);
            let mut rng = stream(0, "unused");
            let mut cx = ForwardCx {
                mode: Mode::Train,
                dropout_rng: &mut rng,
            };
            let loss = hft.loss(&mut tape, &bound, &batch, &mut cx).unwrap();
            tape.backward(loss).unwrap();
            let lr = hft.common().cfg.learning_rate;
            hft.common_mut().store.adam_step(&tape, &bound, lr);
        }
        let objective = hft.objective(&s);
        assert!(
            objective <= last + 1e-9,
            "objective rose from {last} to {objective}"
        );
        last = objective;
    }
}

#[test]
fn hft_theta_and_phi_are_probability_vectors() {
    let s = topic_split(300, 11);
    let inputs = text_inputs(&s, crate::text::DocLayout::Concat);
    let cfg = TrainConfig {
        hft_mu: 0.1,
        max_epochs: 3,
        patience: 0,
        ..small_cfg(3, 53)
    };
    let mut hft = HftModel::new(&s, &inputs, cfg).unwrap();
    train(&mut hft, &s).unwrap();
    for t in 0..hft.topics() {
        let phi = hft.phi(t);
        assert!((phi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(phi.iter().all(|&p| p >= 0.0));
    }
    for item in 0..s.data().n_items() as u32 {
        let theta = hft.theta(item);
        assert!((theta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

// ---- deepconn ---------------------------------------------------------------

#[test]
fn deepconn_all_padding_documents_yield_the_regressor_bias() {
    // no review text at all → every document is padding
    let cfg_data = PlantedConfig {
        n_users: 30,
        n_items: 10,
        n_interactions: 200,
        cold_items: 0,
        seed: 3,
        ..Default::default()
    };
    let s = split(Arc::new(crate::synth::planted_factor(&cfg_data)), 3).unwrap();
    let inputs = text_fixture_for_empty_corpus(&s);
    let cfg = small_cfg(4, 59);
    let mut plain = DeepConnModel::new(&s, &inputs, cfg.clone(), false).unwrap();
    set_param(&mut plain, "top_b", &[1.7]);
    let got = score_one(&plain, 0, 0).unwrap();
    assert!((got - 1.7).abs() < 1e-15);

    let mut pp = DeepConnModel::new(&s, &inputs, cfg.clone(), true).unwrap();
    set_param(&mut pp, "top_b", &[1.7]);
    let bias = BiasModel::new(&s, cfg);
    let expect = 1.7 + score_one(&bias, 0, 0).unwrap();
    assert!((score_one(&pp, 0, 0).unwrap() - expect).abs() < 1e-12);
}

/// Documents for a corpus with no text: an embedding table over the
/// two reserved tokens is still required.
fn text_fixture_for_empty_corpus(s: &SplitDataset) -> TrainInputs {
    let vocab = Arc::new(Vocab::build(&s.train(), 50_000));
    let caps = DocCaps::new(
        12,
        crate::text::LengthCaps {
            review_len: 4,
            review_count: 2,
        },
    );
    let docs = Arc::new(build_documents(
        s,
        &vocab,
        &caps,
        crate::text::DocLayout::Concat,
    ));
    let embeddings = Arc::new(crate::text::EmbeddingTable::zeros(
        vocab.len(),
        6,
        vocab.tokens().to_vec(),
    ));
    TrainInputs {
        docs: Some(docs),
        embeddings: Some(embeddings),
        vocab: Some(vocab),
    }
}

#[test]
fn deepconn_pp_with_zero_network_equals_bias() {
    let s = topic_split(300, 12);
    let inputs = text_inputs(&s, crate::text::DocLayout::Concat);
    let cfg = small_cfg(3, 61);
    let mut pp = DeepConnModel::new(&s, &inputs, cfg.clone(), true).unwrap();
    pp.zero_network();
    let bias = BiasModel::new(&s, cfg);
    for pair in [(0u32, 0u32), (3, 2), (6, 5)] {
        assert_eq!(
            score_one(&pp, pair.0, pair.1).unwrap(),
            score_one(&bias, pair.0, pair.1).unwrap()
        );
    }
}

#[test]
fn deepconn_grad_check_both_variants() {
    let s = topic_split(220, 13);
    let inputs = text_inputs(&s, crate::text::DocLayout::Concat);
    for with_biases in [false, true] {
        let model = DeepConnModel::new(
            &s,
            &inputs,
            TrainConfig {
                l2: 1e-4,
                ..small_cfg(3, 67)
            },
            with_biases,
        )
        .unwrap();
        let report = check_model_gradients(&model, &s, 71);
        assert!(
            report.worst_rel_err < 1e-3,
            "worst {} (biases: {with_biases})",
            report.worst_rel_err
        );
    }
}

#[test]
fn deepconn_fine_tuned_embeddings_receive_gradients() {
    let s = topic_split(220, 14);
    let inputs = text_inputs(&s, crate::text::DocLayout::Concat);
    let cfg = TrainConfig {
        fine_tune_embeddings: true,
        l2: 0.0,
        max_epochs: 2,
        patience: 0,
        ..small_cfg(3, 73)
    };
    let mut model = DeepConnModel::new(&s, &inputs, cfg, false).unwrap();
    let embed_id = model.common().store.id("embed").unwrap();
    let before = model.common().store.value(embed_id).to_vec();
    train(&mut model, &s).unwrap();
    let after = model.common().store.value(embed_id);
    assert_ne!(before, after);
}

// ---- narre -----------------------------------------------------------------

#[test]
fn narre_attention_normalizes_and_single_review_gets_weight_one() {
    let mut b = DatasetBuilder::new();
    // u0 writes exactly one review; other users write several
    b.push("u0", "i0", 4.0, &["lone", "review", "here"]);
    for k in 0..60 {
        b.push(
            &format!("u{}", 1 + k % 6),
            &format!("i{}", k % 5),
            3.0,
            &["some", "words", "again"],
        );
    }
    let s = split(Arc::new(b.build()), 17).unwrap();
    let inputs = text_inputs(&s, crate::text::DocLayout::PerReview);
    let model = NarreModel::new(&s, &inputs, small_cfg(3, 79)).unwrap();

    let u0 = s.data().users.get("u0").unwrap();
    let in_train = s.train().iter().any(|it| it.user == u0);
    if in_train {
        let w = model.attention_weights(u0, true).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(w.iter().filter(|&&x| x > 0.0).count(), 1);
        assert!((w.iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-9);
    }
    for user in 0..s.data().n_users() as u32 {
        let w = model.attention_weights(user, true).unwrap();
        let total: f64 = w.iter().sum();
        assert!(
            (total - 1.0).abs() < 1e-9 || total == 0.0,
            "user {user} weights sum {total}"
        );
    }
}

#[test]
fn narre_entity_with_only_empty_reviews_has_zero_attention() {
    let mut b = DatasetBuilder::new();
    for k in 0..15 {
        b.push("u0", &format!("i{k}"), 3.0, &[]);
    }
    for k in 0..45 {
        b.push(
            &format!("u{}", 1 + k % 5),
            &format!("i{}", k % 15),
            3.0,
            &["w1", "w2"],
        );
    }
    let s = split(Arc::new(b.build()), 19).unwrap();
    let inputs = text_inputs(&s, crate::text::DocLayout::PerReview);
    let model = NarreModel::new(&s, &inputs, small_cfg(3, 83)).unwrap();
    let u0 = s.data().users.get("u0").unwrap();
    let w = model.attention_weights(u0, true).unwrap();
    assert!(w.iter().all(|&x| x == 0.0));
}

#[test]
fn narre_with_zero_network_equals_bias() {
    let s = topic_split(300, 15);
    let inputs = text_inputs(&s, crate::text::DocLayout::PerReview);
    let cfg = small_cfg(3, 89);
    let mut narre = NarreModel::new(&s, &inputs, cfg.clone()).unwrap();
    narre.zero_network();
    let bias = BiasModel::new(&s, cfg);
    for pair in [(0u32, 0u32), (2, 1), (5, 3)] {
        assert_eq!(
            score_one(&narre, pair.0, pair.1).unwrap(),
            score_one(&bias, pair.0, pair.1).unwrap()
        );
    }
}

#[test]
fn narre_grad_check() {
    let s = topic_split(220, 16);
    let inputs = text_inputs(&s, crate::text::DocLayout::PerReview);
    let model = NarreModel::new(
        &s,
        &inputs,
        TrainConfig {
            l2: 1e-4,
            ..small_cfg(3, 97)
        },
    )
    .unwrap();
    let report = check_model_gradients(&model, &s, 101);
    assert!(
        report.worst_rel_err < 1e-3,
        "worst {}",
        report.worst_rel_err
    );
}

// ---- training loop -----------------------------------------------------------

#[test]
fn bias_model_fits_constant_ratings_immediately() {
    let mut b = DatasetBuilder::new();
    for k in 0..100 {
        b.push(&format!("u{}", k % 10), &format!("i{}", k % 7), 3.0, &[]);
    }
    let s = split(Arc::new(b.build()), 23).unwrap();
    let mut model = BiasModel::new(
        &s,
        TrainConfig {
            max_epochs: 20,
            ..small_cfg(1, 103)
        },
    );
    let out = train(&mut model, &s).unwrap();
    assert!(out.best_val_mse < 1e-4, "val mse {}", out.best_val_mse);
    assert!(out.val_trace.len() <= 20);
}

#[test]
fn early_stopping_halts_patience_epochs_after_the_best() {
    // training ratings reverse the validation ratings per user, so
    // every epoch of fitting strictly worsens validation MSE
    let mut b = DatasetBuilder::new();
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();
    let mut pos = 0u32;
    for u in 0..20 {
        let (train_r, val_r) = if u % 2 == 0 { (5.0, 1.0) } else { (1.0, 5.0) };
        for j in 0..8 {
            b.push(
                &format!("u{u}"),
                &format!("i{}", (u * 8 + j) % 30),
                train_r,
                &[],
            );
            train_idx.push(pos);
            pos += 1;
        }
        b.push(&format!("u{u}"), &format!("iv{u}"), val_r, &[]);
        val_idx.push(pos);
        pos += 1;
        b.push(&format!("u{u}"), &format!("it{u}"), val_r, &[]);
        test_idx.push(pos);
        pos += 1;
    }
    let s = SplitDataset::from_parts(Arc::new(b.build()), train_idx, val_idx, test_idx, 0);
    let mut model = BiasModel::new(
        &s,
        TrainConfig {
            patience: 2,
            max_epochs: 30,
            learning_rate: 5e-2,
            ..small_cfg(1, 107)
        },
    );
    let out = train(&mut model, &s).unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.best_epoch, 0);
    // stops at epoch best + patience
    assert_eq!(out.val_trace.len(), out.best_epoch + 2 + 1);
    assert!(out.val_trace[1] > out.val_trace[0]);
    assert!(out.val_trace[2] > out.val_trace[1]);
    // the returned parameters are the best-epoch snapshot
    let val_now = evaluate_part(&model, &s, Part::Validation).unwrap();
    assert!((val_now - out.val_trace[0]).abs() < 1e-12);
}

#[test]
fn divergence_is_reported_with_location() {
    let s = topic_split(300, 18);
    let mut model = MfModel::new(
        &s,
        TrainConfig {
            learning_rate: 1e160,
            max_epochs: 3,
            ..small_cfg(4, 109)
        },
    );
    match train(&mut model, &s) {
        Err(ModelError::Diverged { .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn training_is_bitwise_deterministic() {
    let s = topic_split(300, 19);
    let run = || {
        let mut model = MfModel::new(
            &s,
            TrainConfig {
                max_epochs: 4,
                patience: 0,
                l2: 1e-5,
                ..small_cfg(4, 113)
            },
        );
        let out = train(&mut model, &s).unwrap();
        (out.val_trace, model.common().store.hash())
    };
    let (trace_a, hash_a) = run();
    let (trace_b, hash_b) = run();
    assert_eq!(trace_a, trace_b);
    assert_eq!(hash_a, hash_b);
}

#[test]
fn unseen_entities_fall_back_to_existing_bias_terms() {
    // u9 appears only in validation/test
    let mut b = DatasetBuilder::new();
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();
    let mut pos = 0u32;
    for k in 0..80 {
        b.push(
            &format!("u{}", k % 8),
            &format!("i{}", k % 6),
            3.0 + (k % 3) as f64 * 0.5,
            &[],
        );
        train_idx.push(pos);
        pos += 1;
    }
    b.push("u9", "i0", 4.0, &[]);
    val_idx.push(pos);
    pos += 1;
    b.push("u9", "i1", 2.0, &[]);
    test_idx.push(pos);
    let s = SplitDataset::from_parts(Arc::new(b.build()), train_idx, val_idx, test_idx, 0);

    let mut model = MfModel::new(
        &s,
        TrainConfig {
            max_epochs: 3,
            patience: 0,
            ..small_cfg(4, 127)
        },
    );
    train(&mut model, &s).unwrap();
    let store = &model.common().store;
    let alpha = store.value(store.id("alpha").unwrap())[0];
    let beta_item = store.value(store.id("beta_item").unwrap());
    let u9 = s.data().users.get("u9").unwrap();
    let i1 = s.data().items.get("i1").unwrap();
    let got = score_one(&model, u9, i1).unwrap();
    assert!(
        (got - (alpha + beta_item[i1 as usize])).abs() < 1e-12,
        "unseen-user prediction should be α + β_i"
    );
}

#[test]
fn evaluation_clips_to_the_rating_scale() {
    let s = topic_split(200, 20);
    let mut model = BiasModel::new(&s, small_cfg(1, 131));
    set_param(&mut model, "alpha", &[40.0]);
    let preds = predict_part(&model, &s, Part::Test).unwrap();
    assert!(preds.iter().all(|&p| p == 5.0));
    assert!(score_one(&model, 0, 0).unwrap() > 5.0);
}
