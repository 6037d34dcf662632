use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabdx_core::cohort::{synth_cohort, SynthConfig};
use tabdx_core::lm::{
    encode_example, forward, lora_inject, lora_merge, lora_param_count, train_sft, Example, LmError, LoraConfig, LoraTarget,
    ModelConfig, ModelParams, Tokenizer, TrainConfig,
};
use tabdx_core::promptgen::{build_corpus, verbalize, NarrativeMode, TemplateKind};

fn cfg(dim: usize, layers: usize, vocab: usize) -> ModelConfig {
    ModelConfig { layers, heads: 4, embed_dim: dim, mlp_dim: 2 * dim, context_len: 32, vocab_size: vocab }
}

fn random_ids(n: usize, vocab: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(4..vocab as u32)).collect()
}

fn randomize_b(adapter: &mut tabdx_core::lm::LoraAdapter<f32>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, p) in adapter.pairs_mut() {
        p.b.mapv_inplace(|_| rng.random_range(-0.05..0.05));
    }
}

#[test]
fn adapter_is_identity_at_init() {
    let base = ModelParams::<f32>::init(cfg(32, 2, 50), 1).unwrap();
    let lc = LoraConfig { targets: vec![LoraTarget::Q, LoraTarget::K, LoraTarget::V, LoraTarget::O, LoraTarget::Up, LoraTarget::Down, LoraTarget::Head], ..LoraConfig::default() };
    let adapter = lora_inject(&base, &lc).unwrap();
    let ids = random_ids(20, 50, 3);
    assert_eq!(forward(&base, Some(&adapter), &ids).unwrap(), forward(&base, None, &ids).unwrap());
}

#[test]
fn trainable_parameter_counts() {
    let qv = LoraConfig { rank: 8, targets: vec![LoraTarget::Q, LoraTarget::V], ..LoraConfig::default() };
    assert_eq!(lora_param_count(&cfg(32, 2, 50), &qv), 2048);

    let mlp = LoraConfig { rank: 4, targets: vec![LoraTarget::Up, LoraTarget::Down], ..LoraConfig::default() };
    // 3 layers x 2 matrices x 4 x (16 + 32)
    assert_eq!(lora_param_count(&cfg(16, 3, 50), &mlp), 1152);

    let head = LoraConfig { rank: 2, targets: vec![LoraTarget::O, LoraTarget::Head], ..LoraConfig::default() };
    // 1 layer x 2 x (24 + 24) + 2 x (24 + 70)
    assert_eq!(lora_param_count(&cfg(24, 1, 70), &head), 96 + 188);

    for (model, lc) in [(cfg(32, 2, 50), qv), (cfg(16, 3, 50), mlp), (cfg(24, 1, 70), head)] {
        let base = ModelParams::<f32>::init(model, 0).unwrap();
        assert_eq!(lora_inject(&base, &lc).unwrap().num_params(), lora_param_count(&model, &lc));
    }
}

#[test]
fn merged_matches_runtime_adapter() {
    let base = ModelParams::<f32>::init(cfg(32, 2, 50), 4).unwrap();
    let lc = LoraConfig { rank: 4, targets: vec![LoraTarget::Q, LoraTarget::V, LoraTarget::Up, LoraTarget::Head], ..LoraConfig::default() };
    let mut adapter = lora_inject(&base, &lc).unwrap();
    randomize_b(&mut adapter, 8);
    let merged = lora_merge(&base, &adapter).unwrap();
    for seed in 0..5 {
        let ids = random_ids(24, 50, seed);
        let runtime = forward(&base, Some(&adapter), &ids).unwrap();
        let folded = forward(&merged, None, &ids).unwrap();
        let diff = (&runtime - &folded).mapv(f32::abs).fold(0.0f32, |a, &b| a.max(b));
        assert!(diff <= 1e-6, "max diff {diff}");
    }
}

#[test]
fn zero_merge_is_identity_and_double_merge_adds_twice() {
    let base = ModelParams::<f64>::init(cfg(16, 2, 40), 5).unwrap();
    let lc = LoraConfig { rank: 2, ..LoraConfig::default() };
    let zero = lora_inject(&base, &lc).unwrap();
    assert_eq!(lora_merge(&base, &zero).unwrap(), base);

    let mut adapter = zero.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (_, p) in adapter.pairs_mut() {
        p.b.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
    let once = lora_merge(&base, &adapter).unwrap();
    let twice = lora_merge(&once, &adapter).unwrap();
    assert_ne!(once, twice);
    let d1 = &once.layers[0].wq - &base.layers[0].wq;
    let d2 = &twice.layers[0].wq - &base.layers[0].wq;
    let err = (&d2 - &(&d1 * 2.0)).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    assert!(err < 1e-14, "{err}");
}

#[test]
fn invalid_adapter_configs() {
    let base = ModelParams::<f32>::init(cfg(16, 1, 40), 0).unwrap();
    let r0 = LoraConfig { rank: 0, ..LoraConfig::default() };
    assert!(matches!(lora_inject(&base, &r0), Err(LmError::Config(_))));
    assert!(matches!(LoraTarget::parse("attn.x"), Err(LmError::UnknownTarget(_))));
    assert_eq!(LoraTarget::parse("v").unwrap(), LoraTarget::V);
    assert_eq!(LoraTarget::parse("head").unwrap(), LoraTarget::Head);

    let other = ModelParams::<f32>::init(cfg(32, 1, 40), 0).unwrap();
    let adapter = lora_inject(&other, &LoraConfig::default()).unwrap();
    assert!(matches!(lora_merge(&base, &adapter), Err(LmError::Shape(_))));
}

fn synthetic_corpus(n: usize) -> (Tokenizer, Vec<Example>) {
    let mut sc = SynthConfig::preset("strong-signal").unwrap();
    sc.n = n;
    let cohort = synth_cohort(&sc, 11).unwrap().cohort;
    let ids: Vec<String> = cohort.records.iter().map(|r| r.patient_id.clone()).collect();
    let corpus = build_corpus(&cohort, &ids, TemplateKind::List, &NarrativeMode::Fallback).unwrap();
    let texts: Vec<String> = corpus.iter().map(|r| format!("{}{}", r.prompt(), verbalize(&r.output))).collect();
    let tok = Tokenizer::build(texts.iter().map(String::as_str), 1);
    let examples = corpus.iter().map(|r| encode_example(&tok, &r.prompt(), &verbalize(&r.output)).unwrap()).collect();
    (tok, examples)
}

#[test]
fn training_reduces_loss_freezes_base_and_is_deterministic() {
    let (tok, examples) = synthetic_corpus(40);
    let longest = examples.iter().map(|e| e.ids.len()).max().unwrap();
    let model = ModelConfig { layers: 1, heads: 2, embed_dim: 32, mlp_dim: 64, context_len: longest, vocab_size: tok.len() };
    let base = ModelParams::<f32>::init(model, 2).unwrap();
    let before = base.clone();
    let tc = TrainConfig { peak_lr: 3e-3, batch_size: 8, epochs: 5, ..TrainConfig::default() };
    let lc = LoraConfig { rank: 4, targets: vec![LoraTarget::Q, LoraTarget::V, LoraTarget::Head], ..LoraConfig::default() };
    let a = train_sft(&base, &examples, &tc, &lc).unwrap();
    assert_eq!(base, before);
    let h = &a.history;
    assert_eq!(h.epoch_loss.len(), 5);
    assert!(h.epoch_loss[4] < h.epoch_loss[0], "{:?}", h.epoch_loss);
    assert_eq!(h.step_lr[0], 0.0);

    let b = train_sft(&base, &examples, &tc, &lc).unwrap();
    assert_eq!(a.adapter, b.adapter);
    assert_eq!(a.history.step_loss, b.history.step_loss);
}

#[test]
fn vocabulary_covers_the_corpus() {
    let (tok, examples) = synthetic_corpus(30);
    assert!(examples.iter().all(|e| !e.ids.contains(&tabdx_core::lm::UNK)));
    assert!(tok.id("yes").is_some() && tok.id("no").is_some());
}
