use std::collections::BTreeMap;

use distill_core::Seq2SeqModel;
use distill_core::eval::{
    compute_las, refinement_from_answers, refinement_gain, sensitivity, simulator_input, train_simulator, LabelSource,
    Labels, OptionClassifier, SimItem, SimulatorPair,
};
use distill_core::forge::{build_factual_instance, QAInstance, Split};
use distill_core::pipeline::default_simulator;
use distill_core::student::{predict, train_student};
use distill_core::synthetic::{World, WorldConfig};
use distill_core::util::rng_for;
use distill_core::{TrainConfig, Vocab};
use rand::Rng;

fn yes_no(question: String) -> QAInstance {
    QAInstance {
        id: question.replace(' ', "-"),
        question,
        options: vec!["yes".into(), "no".into()],
        gold_answer: "yes".into(),
        human_rationale: None,
        split: Split::Test,
    }
}

/// Random labels; the rationale spells the label out, the question says
/// nothing about it.
fn leaky_items(n: usize, offset: usize, seed: u64) -> (Vec<SimItem>, Labels) {
    let mut rng = rng_for(seed, "leaky");
    let mut items = Vec::new();
    let mut values = Vec::new();
    for i in 0..n {
        let label = if rng.gen_bool(0.5) { "yes" } else { "no" };
        items.push(SimItem {
            question: format!("is thing{} fine ?", i + offset),
            options: vec!["yes".into(), "no".into()],
            rationale: format!("clearly {label} ."),
        });
        values.push(label.to_string());
    }
    (items, Labels { source: LabelSource::Gold, values })
}

#[test]
fn simulator_without_rationale_never_sees_it() {
    let item = SimItem {
        question: "is it red ?".into(),
        options: vec!["yes".into(), "no".into()],
        rationale: "secret words".into(),
    };
    assert_eq!(simulator_input(&item, false), "question is it red ?");
    assert_eq!(simulator_input(&item, true), "question is it red ? rationale secret words");
}

#[test]
fn leaking_rationales_make_the_simulator_perfect() {
    let (train, train_labels) = leaky_items(120, 0, 1);
    let (test, test_labels) = leaky_items(60, 1000, 2);
    let cfg = default_simulator();
    let pair = SimulatorPair {
        with_rationale: train_simulator::<f64>(&train, &train_labels, true, &cfg, 0).unwrap(),
        without_rationale: train_simulator::<f64>(&train, &train_labels, false, &cfg, 0).unwrap(),
        label_source: LabelSource::Gold,
    };
    let report = compute_las(&pair, &test, &test_labels).unwrap();
    assert_eq!(report.acc_with, 1.0);
    assert!(report.acc_without < 0.7, "{report:?}");
    assert!(report.las > 0.3);
    assert_eq!(report.las, report.acc_with - report.acc_without);

    let student_labels = Labels {
        source: LabelSource::StudentPrediction,
        values: test_labels.values.clone(),
    };
    assert!(compute_las(&pair, &test, &student_labels).is_err());
}

#[test]
fn simulator_training_is_seeded() {
    let (train, labels) = leaky_items(40, 0, 3);
    let (test, _) = leaky_items(30, 500, 4);
    let cfg = default_simulator();
    let a = train_simulator::<f64>(&train, &labels, false, &cfg, 7).unwrap();
    let b = train_simulator::<f64>(&train, &labels, false, &cfg, 7).unwrap();
    assert_eq!(a, b);
    let pa: Vec<String> = test.iter().map(|it| a.classify(it)).collect();
    let pb: Vec<String> = test.iter().map(|it| b.classify(it)).collect();
    assert_eq!(pa, pb);

    let mut bad = labels.clone();
    bad.values[0] = "maybe".into();
    assert!(train_simulator::<f64>(&train, &bad, false, &cfg, 7).is_err());
}

/// Emits three filler tokens, then "So the answer is" and an answer chosen
/// from the encoder alone. The prefix matters only through its length.
struct Blind {
    vocab: Vocab,
}

impl Blind {
    fn new() -> Self {
        Blind {
            vocab: Vocab::new(["x", "y", "So", "the", "answer", "is", "yes", "no", "would", "could"]),
        }
    }
}

impl Seq2SeqModel<f64> for Blind {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }
    fn next_token_logits(&self, encoder: &[u32], prefix: &[u32]) -> Vec<f64> {
        let v = &self.vocab;
        let word = match prefix.len() {
            1..=3 => "x",
            4 => "So",
            5 => "the",
            6 => "answer",
            7 => "is",
            8 if encoder.contains(&v.id("would").unwrap()) => "yes",
            8 => "no",
            _ => "",
        };
        let pick = if word.is_empty() { v.eos_id() } else { v.id(word).unwrap() };
        let mut logits = vec![0.0; v.len()];
        logits[pick as usize] = 10.0;
        logits
    }
}

fn synthetic_test_split() -> Vec<QAInstance> {
    let w = World::generate(&WorldConfig {
        n_test: 80,
        ..WorldConfig::default()
    })
    .unwrap();
    w.dataset().into_iter().filter(|q| q.split == Split::Test).collect()
}

#[test]
fn rationale_blind_model_has_zero_sensitivity() {
    let model = Blind::new();
    let test = synthetic_test_split();
    let own = predict(&model, &test[0], 16);
    assert_eq!(own.rationale, "x x x");
    for fraction in [0.25, 0.5, 1.0] {
        let r = sensitivity(&model, &test, fraction, 16, &mut rng_for(0, "s")).unwrap();
        assert_eq!(r.sensitivity, 0.0);
        assert_eq!(r.acc_forced, r.acc_perturbed);
        assert_eq!((r.n, r.excluded), (test.len(), 0));
    }
}

#[test]
fn refinement_is_zero_when_oracle_equals_own_rationale() {
    let model = Blind::new();
    let test = synthetic_test_split();
    let oracle: BTreeMap<String, String> = test.iter().map(|q| (q.id.clone(), "x x x".to_string())).collect();
    let r = refinement_gain(&model, &test, &oracle, 16).unwrap();
    assert_eq!(r.refinement_gain, 0.0);
    assert_eq!(r.acc_oracle, r.acc_own);

    let answers = ["yes", "no", "no"];
    assert_eq!(refinement_from_answers(&answers, &answers, &["yes", "yes", "no"]).unwrap().refinement_gain, 0.0);

    let mut partial = oracle.clone();
    partial.remove(&test[3].id);
    assert!(refinement_gain(&model, &test, &partial, 16).is_err());
}

#[test]
fn student_learns_a_constant_target() {
    let questions: Vec<QAInstance> = (0..30).map(|i| yes_no(format!("is item{i} here ?"))).collect();
    let forged: Vec<_> = questions
        .iter()
        .map(|q| build_factual_instance(q, "it is always so .", "yes").unwrap())
        .collect();
    let cfg = TrainConfig {
        seeds: vec![0],
        epochs: 30,
        ..TrainConfig::default()
    };
    let trained = train_student::<f64>(&forged, &cfg, 0).unwrap();
    let first = trained.epochs.first().unwrap().total;
    let last = trained.epochs.last().unwrap().total;
    assert!(last < first / 10.0, "{first} -> {last}");
    let unseen = yes_no("is item99 here ?".into());
    let p = predict(&trained.model, &unseen, 32);
    assert_eq!(p.rationale, "it is always so .");
    assert_eq!(p.answer, "yes");

    let again = train_student::<f64>(&forged, &cfg, 0).unwrap();
    assert_eq!(trained.model, again.model);
}
