//! Acceptance gate for the whole pipeline. Each test checks one release
//! criterion and prints a single pass/fail line; run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use nikud::corpus::{self, Document, LabeledSentence};
use nikud::hebrew::{
    self, eligibility, is_hebrew_letter, AnalysisMode, AnalyzedText, LetterLabel, Nikud, MASK,
    SIN_SHIN_DOT,
};
use nikud::infer::{self, InferOptions};
use nikud::metrics::{self, oracle, VocEquivalence};
use nikud::model::{self, Batch, CharVocab, ModelParams, OptimizerKind, TrainingConfig};
use nikud::train::{self, Optimizer, TrainerState};

fn report(id: usize, name: &str, ok: bool) {
    println!(
        "criterion {id:>2} {name}: {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {id} ({name}) failed");
}

const ALPHABET: [char; 27] = [
    'א', 'ב', 'ג', 'ד', 'ה', 'ו', 'ז', 'ח', 'ט', 'י', 'כ', 'ך', 'ל', 'מ', 'ם', 'נ', 'ן', 'ס',
    'ע', 'פ', 'ף', 'צ', 'ץ', 'ק', 'ר', 'ש', 'ת',
];

/// A random label that is legal for `c`: real class ids on eligible heads,
/// MASK elsewhere.
fn random_label(c: char, rng: &mut ChaCha8Rng) -> LetterLabel {
    let (n, d, s) = eligibility(c);
    LetterLabel {
        nikud: if n { rng.gen_range(0..12) } else { MASK },
        dagesh: if d { rng.gen_range(0..2) } else { MASK },
        sin: if s { rng.gen_range(0..3) } else { MASK },
    }
}

/// Random plain text mixing Hebrew words with spaces and punctuation.
fn random_plain(rng: &mut ChaCha8Rng, words: usize) -> Vec<char> {
    let mut plain = Vec::new();
    for w in 0..words {
        if w > 0 {
            plain.push(' ');
        }
        for _ in 0..rng.gen_range(1..=5) {
            plain.push(ALPHABET[rng.gen_range(0..ALPHABET.len())]);
        }
        if rng.gen_bool(0.2) {
            plain.push([',', '.', '!', '?'][rng.gen_range(0..4)]);
        }
    }
    plain
}

fn random_analyzed(rng: &mut ChaCha8Rng, words: usize) -> AnalyzedText {
    let plain = random_plain(rng, words);
    let labels = plain
        .iter()
        .map(|&c| {
            if is_hebrew_letter(c) {
                random_label(c, rng)
            } else {
                LetterLabel::MASKED
            }
        })
        .collect();
    AnalyzedText { plain, labels }
}

fn tiny_batch(rng: &mut ChaCha8Rng, max_length: usize) -> Batch {
    let analyzed = random_analyzed(rng, 2);
    let plain: Vec<char> = analyzed.plain.into_iter().take(max_length).collect();
    let labels = analyzed.labels.into_iter().take(plain.len()).collect();
    let s = LabeledSentence {
        plain,
        labels,
        source: (String::from("t"), 0),
    };
    let packs = corpus::pack(&[s], max_length, &CharVocab::standard()).unwrap();
    let refs: Vec<&corpus::PackedSequence> = packs.iter().collect();
    Batch::from_packs(&refs).unwrap()
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let vocab = CharVocab::standard();
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = TrainingConfig {
            embed_size: 2 + (seed as usize % 3),
            hidden_size: 2 + (seed as usize / 3 % 3),
            max_length: 6,
            dropout: 0.0,
            ..TrainingConfig::default()
        };
        let params = ModelParams::init(&cfg, &vocab, seed.wrapping_add(1000));
        let batch = tiny_batch(&mut rng, 6);
        let err = model::grad_check(&params, &batch, 1e-5).unwrap();
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    println!("  grad check: max relative error {worst:.2e} in {elapsed:.1?}");
    report(
        1,
        "gradient correctness",
        worst < 1e-4 && elapsed.as_secs() < 60,
    );
}

#[test]
fn criterion_02_frozen_embedding() {
    let vocab = CharVocab::standard();
    let cfg = TrainingConfig {
        embed_size: 6,
        hidden_size: 6,
        max_length: 16,
        freeze_encoder: true,
        dropout: 0.0,
        ..TrainingConfig::default()
    };
    let mut params = ModelParams::init(&cfg, &vocab, 7);
    assert!(params.encoder_frozen);
    let before: Vec<u64> = params.embedding.iter().map(|v| v.to_bits()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let batch = tiny_batch(&mut rng, 16);
    let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, &params);
    for _ in 0..100 {
        let logits = model::forward_cache(&params, &batch, model::Mode::Eval).unwrap();
        let (_, grads) = model::backward(&params, &batch, &logits.0, &logits.1);
        opt.step(&mut params, &grads);
    }
    let after: Vec<u64> = params.embedding.iter().map(|v| v.to_bits()).collect();
    let moved = params
        .dense
        .weight
        .iter()
        .zip(ModelParams::init(&cfg, &vocab, 7).dense.weight.iter())
        .any(|(a, b)| a != b);
    report(2, "frozen embedding", before == after && moved);
}

/// Deterministic per-letter labeling, trivially learnable.
fn teacher_label(c: char) -> LetterLabel {
    let (n, d, s) = eligibility(c);
    let code = c as u32;
    LetterLabel {
        nikud: if n { (code % 12) as u8 } else { MASK },
        dagesh: if d { (code % 2) as u8 } else { MASK },
        sin: if s { 1 + (code % 2) as u8 } else { MASK },
    }
}

#[test]
fn criterion_03_overfit_sanity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vocab = CharVocab::standard();
    let mut sentences = Vec::new();
    for i in 0..50 {
        let words = rng.gen_range(2..=4);
        let mut plain = random_plain(&mut rng, words);
        plain.push('.');
        let labels = plain
            .iter()
            .map(|&c| {
                if is_hebrew_letter(c) {
                    teacher_label(c)
                } else {
                    LetterLabel::MASKED
                }
            })
            .collect();
        sentences.push(LabeledSentence {
            plain,
            labels,
            source: (String::from("synthetic"), i),
        });
    }
    let packs = corpus::pack(&sentences, 64, &vocab).unwrap();

    let mut cfg = TrainingConfig {
        hidden_size: 32,
        embed_size: 16,
        learning_rate: 0.01,
        batch_size: 8,
        dropout: 0.0,
        max_length: 64,
        epochs: 0,
        seed: 3,
        ..TrainingConfig::default()
    };
    let mut resume: Option<TrainerState> = None;
    let mut acc = 0.0;
    let mut epochs_used = 0;
    while epochs_used < 200 {
        cfg.epochs = epochs_used + 25;
        let outcome = train::train(&cfg, &packs, &packs, resume.take()).unwrap();
        epochs_used = cfg.epochs;
        acc = train::evaluate_dev(&outcome.state.params, &packs, cfg.batch_size)
            .unwrap()
            .letter_acc;
        resume = Some(outcome.state);
        if acc >= 0.99 {
            break;
        }
    }
    let elapsed = start.elapsed();
    println!("  overfit: letter acc {acc:.4} after {epochs_used} epochs, {elapsed:.1?}");
    report(3, "overfit sanity", acc >= 0.99 && elapsed.as_secs() < 300);
}

#[test]
fn criterion_04_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut exact = 0usize;
    let lines = 1000usize;
    for _ in 0..lines {
        let words = rng.gen_range(1..=6);
        let pointed = hebrew::compose(&random_analyzed(&mut rng, words)).unwrap();
        let normalized = hebrew::normalize(&pointed);
        let analysis = hebrew::analyze(&normalized, AnalysisMode::Strict).unwrap();
        let recomposed = hebrew::compose(&analysis.text).unwrap();
        if recomposed == normalized {
            exact += 1;
        }
    }
    report(4, "round trip", exact == lines);
}

fn scores_equal(a: &metrics::PairScore, b: &metrics::PairScore) -> bool {
    a.counts == b.counts
        && (a.dec - b.dec).abs() < 1e-12
        && (a.cha - b.cha).abs() < 1e-12
        && (a.wor - b.wor).abs() < 1e-12
        && (a.voc - b.voc).abs() < 1e-12
}

#[test]
fn criterion_05_metric_oracle_equivalence() {
    let voc = VocEquivalence::default_table();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut all_equal = true;
    for _ in 0..1000 {
        let words = rng.gen_range(1..=5);
        let gold = random_analyzed(&mut rng, words);
        // pred shares plain text; labels agree with gold ~70% of the time
        let labels = gold
            .plain
            .iter()
            .zip(&gold.labels)
            .map(|(&c, g)| {
                if is_hebrew_letter(c) && rng.gen_bool(0.3) {
                    random_label(c, &mut rng)
                } else {
                    *g
                }
            })
            .collect();
        let pred = AnalyzedText {
            plain: gold.plain.clone(),
            labels,
        };
        let fast = metrics::score_pair(&gold, &pred, &voc).unwrap();
        let slow = oracle::oracle_score(&gold, &pred, &voc).unwrap();
        if !scores_equal(&fast, &slow) {
            all_equal = false;
            break;
        }
    }

    // one word, one decision wrong, the error pronunciation-equivalent
    let shalom = |shin_nikud: u8| AnalyzedText {
        plain: vec!['ש', 'ל', 'ו', 'ם'],
        labels: vec![
            LetterLabel {
                nikud: shin_nikud,
                dagesh: 0,
                sin: SIN_SHIN_DOT,
            },
            LetterLabel {
                nikud: Nikud::None as u8,
                dagesh: 0,
                sin: MASK,
            },
            LetterLabel {
                nikud: Nikud::Holam as u8,
                dagesh: 0,
                sin: MASK,
            },
            LetterLabel::MASKED,
        ],
    };
    let gold = shalom(Nikud::Qamats as u8);
    let pred = shalom(Nikud::Patah as u8);
    let s = metrics::score_pair(&gold, &pred, &voc).unwrap();
    let fixture_ok = s.counts.total == 7
        && s.counts.correct == 6
        && (s.dec - 6.0 / 7.0).abs() < 1e-12
        && (s.cha - 3.0 / 4.0).abs() < 1e-12
        && s.wor == 0.0
        && s.voc == 1.0;
    report(5, "metric oracle equivalence", all_equal && fixture_ok);
}

#[test]
fn criterion_06_perfect_prediction_calibration() {
    let voc = VocEquivalence::default_table();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let docs: Vec<metrics::EvalDoc> = (0..8)
        .map(|i| metrics::EvalDoc {
            id: format!("doc{i}"),
            genre: if i % 2 == 0 { "a" } else { "b" }.to_string(),
            text: random_analyzed(&mut rng, 6),
        })
        .collect();
    let report_data = metrics::evaluate_corpus(&docs, &docs, &voc).unwrap();
    let exact = report_data.macro_dec == 1.0
        && report_data.macro_cha == 1.0
        && report_data.macro_wor == 1.0
        && report_data.macro_voc == 1.0;
    let shown = report_data.table().contains("100.00");
    report(6, "perfect-prediction calibration", exact && shown);
}

#[test]
fn criterion_07_eligibility_soundness() {
    let opts = InferOptions {
        max_length: 64,
        ..InferOptions::default()
    };
    let vocab = CharVocab::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut letter_predictions = 0usize;
    let mut violations = 0usize;
    let mut both_dots = 0usize;
    for model_seed in 0..2u64 {
        let cfg = TrainingConfig {
            hidden_size: 8,
            embed_size: 6,
            max_length: 64,
            ..TrainingConfig::default()
        };
        let params = ModelParams::init(&cfg, &vocab, model_seed);
        for _ in 0..500 {
            let words = rng.gen_range(2..=8);
            let plain: String = random_plain(&mut rng, words).into_iter().collect();
            let predicted = infer::predict_labels(&params, &plain, &opts).unwrap();
            for (&c, l) in predicted.plain.iter().zip(&predicted.labels) {
                if is_hebrew_letter(c) {
                    letter_predictions += 1;
                }
                let (n, d, s) = eligibility(c);
                if (!n && l.nikud != MASK) || (!d && l.dagesh != MASK) || (!s && l.sin != MASK) {
                    violations += 1;
                }
            }
            let composed = hebrew::compose(&predicted).unwrap();
            let mut has_shin = false;
            let mut has_sin = false;
            for ch in composed.chars() {
                if is_hebrew_letter(ch) {
                    has_shin = false;
                    has_sin = false;
                }
                has_shin |= ch == hebrew::SHIN_DOT;
                has_sin |= ch == hebrew::SIN_DOT;
                if has_shin && has_sin {
                    both_dots += 1;
                }
            }
        }
    }
    println!("  eligibility: {letter_predictions} letter predictions checked");
    report(
        7,
        "eligibility soundness",
        letter_predictions >= 10_000 && violations == 0 && both_dots == 0,
    );
}

#[test]
fn criterion_08_packing_efficiency() {
    let vocab = CharVocab::standard();
    let max_length = 128usize;
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    // short sentences, mean length well under max_length / 6
    let sentences: Vec<LabeledSentence> = (0..60)
        .map(|i| {
            let a = random_analyzed(&mut rng, 2);
            LabeledSentence {
                plain: a.plain,
                labels: a.labels,
                source: (String::from("d"), i),
            }
        })
        .collect();
    let mean_len: f64 =
        sentences.iter().map(|s| s.len() as f64).sum::<f64>() / sentences.len() as f64;
    assert!(mean_len <= max_length as f64 / 6.0);

    let packed = corpus::pack(&sentences, max_length, &vocab).unwrap();
    let unpacked = corpus::pack_unpacked(&sentences, max_length, &vocab).unwrap();
    let (pf_packed, _) = corpus::pack_stats(&packed);
    let (pf_unpacked, _) = corpus::pack_stats(&unpacked);

    let cfg = TrainingConfig {
        hidden_size: 16,
        embed_size: 8,
        max_length,
        ..TrainingConfig::default()
    };
    let params = ModelParams::init(&cfg, &vocab, 1);
    let chars: usize = sentences.iter().map(|s| s.len()).sum();
    let time_rows = |rows: &[corpus::PackedSequence]| {
        let start = Instant::now();
        for chunk in rows.chunks(8) {
            let refs: Vec<&corpus::PackedSequence> = chunk.iter().collect();
            let batch = Batch::from_packs(&refs).unwrap();
            model::forward(&params, &batch, model::Mode::Eval).unwrap();
        }
        start.elapsed().as_secs_f64()
    };
    // warm up, then take the best of three to reduce timer noise
    time_rows(&packed);
    time_rows(&unpacked);
    let t_packed = (0..3).map(|_| time_rows(&packed)).fold(f64::MAX, f64::min);
    let t_unpacked = (0..3)
        .map(|_| time_rows(&unpacked))
        .fold(f64::MAX, f64::min);
    let speedup = (chars as f64 / t_packed) / (chars as f64 / t_unpacked);
    println!(
        "  packing: pad fraction {pf_packed:.3} vs {pf_unpacked:.3}, throughput x{speedup:.1}"
    );
    report(
        8,
        "packing efficiency",
        pf_packed < 0.5 * pf_unpacked && speedup >= 2.0,
    );
}

#[test]
fn criterion_09_split_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let docs: Vec<Document> = (0..100)
        .map(|i| {
            let a = random_analyzed(&mut rng, 3);
            Document {
                id: format!("g{}/d{i}", i % 4),
                genre: format!("g{}", i % 4),
                sentences: vec![LabeledSentence {
                    plain: a.plain,
                    labels: a.labels,
                    source: (format!("g{}/d{i}", i % 4), 0),
                }],
                violations: vec![],
            }
        })
        .collect();
    let split1 = corpus::split_dataset(docs.clone(), (0.9, 0.05, 0.05), 5).unwrap();
    let split2 = corpus::split_dataset(docs, (0.9, 0.05, 0.05), 5).unwrap();
    let sizes_ok = split1.train.len() == 90
        && split1.validation.len() == 5
        && split1.test.len() == 5;
    let deterministic = corpus::manifest_string(&split1) == corpus::manifest_string(&split2);
    report(9, "split determinism", sizes_ok && deterministic);
}

fn params_identical(a: &ModelParams, b: &ModelParams) -> bool {
    a.param_slices()
        .iter()
        .zip(b.param_slices().iter())
        .all(|((_, x), (_, y))| {
            x.len() == y.len()
                && x.iter()
                    .zip(y.iter())
                    .all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

#[test]
fn criterion_10_checkpoint_resume_equivalence() {
    let vocab = CharVocab::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let sentences: Vec<LabeledSentence> = (0..12)
        .map(|i| {
            let a = random_analyzed(&mut rng, 3);
            LabeledSentence {
                plain: a.plain,
                labels: a.labels,
                source: (String::from("d"), i),
            }
        })
        .collect();
    let packs = corpus::pack(&sentences, 48, &vocab).unwrap();
    let cfg = TrainingConfig {
        hidden_size: 10,
        embed_size: 8,
        batch_size: 4,
        max_length: 48,
        dropout: 0.1,
        epochs: 2,
        seed: 9,
        ..TrainingConfig::default()
    };

    let unbroken = train::train(&cfg, &packs, &packs, None).unwrap();

    let mut first_cfg = cfg.clone();
    first_cfg.epochs = 1;
    let first = train::train(&first_cfg, &packs, &packs, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    nikud::checkpoint::save(
        &first.state.params,
        &vocab,
        &first.state.encode_extra(),
        &path,
    )
    .unwrap();
    let (loaded, extra) = nikud::checkpoint::load(&path, &vocab).unwrap();
    let state = TrainerState::from_parts(loaded, &extra).unwrap();
    let resumed = train::train(&cfg, &packs, &packs, Some(state)).unwrap();

    report(
        10,
        "checkpoint-resume equivalence",
        params_identical(&unbroken.state.params, &resumed.state.params),
    );
}

#[test]
fn criterion_11_logging_regimen() {
    let vocab = CharVocab::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let sentences: Vec<LabeledSentence> = (0..7)
        .map(|i| {
            let a = random_analyzed(&mut rng, 2);
            LabeledSentence {
                plain: a.plain,
                labels: a.labels,
                source: (String::from("d"), i),
            }
        })
        .collect();
    // one row per sentence so the mini-batch count is exact
    let packs = corpus::pack_unpacked(&sentences, 32, &vocab).unwrap();
    assert_eq!(packs.len(), 7);
    let epochs = 130usize;
    let cfg = TrainingConfig {
        hidden_size: 6,
        embed_size: 4,
        batch_size: 2,
        max_length: 32,
        dropout: 0.0,
        epochs,
        seed: 13,
        ..TrainingConfig::default()
    };
    let steps_per_epoch = packs.len().div_ceil(cfg.batch_size);
    let total_steps = epochs * steps_per_epoch;
    let outcome = train::train(&cfg, &packs, &packs, None).unwrap();
    let steps_ok = outcome.log.steps.len() == total_steps / 100;
    let epochs_ok = outcome.log.epochs.len() == epochs
        && outcome.log.epochs.iter().all(|e| {
            [e.nikud_acc, e.dagesh_acc, e.sin_acc, e.letter_acc, e.word_acc]
                .iter()
                .all(|a| a.is_finite() && (0.0..=1.0).contains(a))
        });
    println!(
        "  logging: {} mini-batches, {} step records, {} epoch records",
        total_steps,
        outcome.log.steps.len(),
        outcome.log.epochs.len()
    );
    report(11, "logging regimen", steps_ok && epochs_ok);
}
