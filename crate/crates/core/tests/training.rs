use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stcap::data::{generate_synthetic, SynthConfig};
use stcap::training::{
    build_vocabulary, dataset_loss, grad_check, prepare_examples, train, Adam, TrainConfig, GRAD_CHECK_EPSILON,
};
use stcap::{
    BBox, CaptionSample, HeadInit, Model, ModelConfig, ObjectRegion, SourceId, SpecialToken, TrainState,
    VectorProvider, Vocabulary,
};

fn small_config(d_fr: usize, d_ft: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        layers: 1,
        heads: 2,
        d_ffn: 16,
        d_pointer: 8,
        d_fr,
        d_ft,
        num_sources: 2,
        t_max: 12,
        dropout: 0.0,
    }
}

fn feature(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn bbox(rng: &mut ChaCha8Rng) -> BBox {
    let x = rng.random_range(0.0..0.5);
    let y = rng.random_range(0.0..0.5);
    BBox([x, y, x + rng.random_range(0.1..0.5), y + rng.random_range(0.1..0.5)])
}

fn fixture(seed: u64) -> (Model<f64>, CaptionSample) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = Vocabulary::new(["waves", "near", "a", "sign", "reading"]);
    let mut model = Model::<f64>::new(small_config(4, 4), vocab, VectorProvider::hash(4), seed, HeadInit::Random).unwrap();
    for (_, m) in model.params.named_mut() {
        for v in m.as_mut_slice() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let special_tokens = vec![
        SpecialToken::new("Mira Tor", SourceId::FACE, bbox(&mut rng), feature(&mut rng, 4)),
        SpecialToken::new("exit", SourceId::OCR, bbox(&mut rng), feature(&mut rng, 4)),
        SpecialToken::new("Ola Fen", SourceId::FACE, bbox(&mut rng), feature(&mut rng, 4)),
        SpecialToken::new("open", SourceId::OCR, bbox(&mut rng), feature(&mut rng, 4)),
    ];
    let objects = (0..3)
        .map(|_| ObjectRegion {
            bbox: bbox(&mut rng),
            visual_feature: feature(&mut rng, 4),
        })
        .collect();
    let sample = CaptionSample {
        image_id: "img".into(),
        objects,
        special_tokens,
        references: vec!["mira tor waves near a sign reading exit".into()],
    };
    (model, sample)
}

#[test]
fn gradient_check_passes_and_respects_frozen_groups() {
    let (model, sample) = fixture(3);
    let ex = prepare_examples(&model, std::slice::from_ref(&sample)).unwrap().remove(0);
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    let frozen: Vec<&str> = names.iter().step_by(2).map(String::as_str).collect();
    let report = grad_check(&model, &ex, GRAD_CHECK_EPSILON, &frozen).unwrap();
    assert_eq!(report.groups.len(), names.len());
    for g in &report.groups {
        if frozen.contains(&g.name.as_str()) {
            assert_eq!((g.entries, g.max_rel_error), (0, 0.0), "{}", g.name);
        } else {
            assert!(g.entries > 0, "{}", g.name);
            assert!(g.max_rel_error < 1e-4, "{}: {:.3e}", g.name, g.max_rel_error);
        }
    }
}

#[test]
fn loss_is_invariant_to_token_order() {
    let (model, sample) = fixture(8);
    let base = prepare_examples(&model, std::slice::from_ref(&sample)).unwrap();
    let mut permuted = sample.clone();
    permuted.special_tokens.reverse();
    permuted.special_tokens.swap(0, 2);
    let moved = prepare_examples(&model, std::slice::from_ref(&permuted)).unwrap();
    let a = dataset_loss(&model, &base).unwrap();
    let b = dataset_loss(&model, &moved).unwrap();
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");

    let mut shuffled_objects = sample.clone();
    shuffled_objects.objects.rotate_left(1);
    let c = dataset_loss(&model, &prepare_examples(&model, &[shuffled_objects]).unwrap()).unwrap();
    assert!((a - c).abs() < 1e-12, "{a} vs {c}");
}

#[test]
fn adam_with_zero_gradient_leaves_parameters_unchanged() {
    let (mut model, _) = fixture(1);
    let before = model.params.clone();
    let mut adam = Adam::new(&model.params);
    let zero = model.params.zeros_like();
    for _ in 0..5 {
        adam.update(&mut model.params, &zero, 1e-2);
    }
    assert_eq!(model.params, before);
    assert_eq!(adam.step, 5);
}

fn synth_samples() -> Vec<CaptionSample> {
    generate_synthetic(&SynthConfig {
        seed: 4,
        samples: 24,
        test_fraction: 0.0,
        zero_shot_samples: 0,
        d_fr: 8,
        ..SynthConfig::default()
    })
    .unwrap()
    .train
}

fn run(samples: &[CaptionSample], cfg: &TrainConfig) -> (Model<f32>, TrainState<f32>) {
    let vocab = build_vocabulary(samples, 1);
    let mut model = Model::<f32>::new(small_config(8, 8), vocab, VectorProvider::hash(8), cfg.seed, HeadInit::Random).unwrap();
    let examples = prepare_examples(&model, samples).unwrap();
    let mut state = TrainState::new(&model);
    train(&mut model, &examples, cfg, &mut state).unwrap();
    (model, state)
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let samples = synth_samples();
    let cfg = TrainConfig {
        batch_size: 8,
        learning_rate: 3e-3,
        epochs: 6,
        seed: 21,
        ..TrainConfig::default()
    };
    let (m1, s1) = run(&samples, &cfg);
    let (m2, s2) = run(&samples, &cfg);
    assert_eq!(s1.loss_history, s2.loss_history);
    assert_eq!(m1.params, m2.params);
    assert_eq!(s1.loss_history.len(), cfg.total_steps(samples.len()));
    let first = s1.loss_history[0];
    let last = *s1.loss_history.last().unwrap();
    assert!(last < first, "{first} -> {last}");

    let (_, s3) = run(&samples, &TrainConfig { seed: 22, ..cfg });
    assert_ne!(s1.loss_history, s3.loss_history);
}
