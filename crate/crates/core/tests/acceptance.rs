//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use distill_core::backend::seq2seq::{masked_nll, Seq2SeqExample, Seq2SeqModel};
use distill_core::backend::{ProviderConfig, ToyModel};
use distill_core::decoder::{
    candidate_set, contrastive_score, contrastive_step, greedy_step, plausibility_growth, DecodeConfig, Strategy,
};
use distill_core::eval::{
    accuracy, compute_las, perturb_rationale, refinement_gain, sensitivity, train_simulator, LabelSource, Labels,
    OptionClassifier, SimItem, SimulatorPair,
};
use distill_core::forge::{
    build_counterfactual_instance, build_factual_instance, forge_from_rationales, rationalize_dataset, Mode,
    QAInstance, RationaleRecord, Split, TrainingInstance,
};
use distill_core::pipeline::{self, DatasetConfig, EvalConfig, RunConfig, TeacherConfig};
use distill_core::student::{compute_counterfactual_loss, instance_loss, train_student, TrainConfig, DEFAULT_SEEDS};
use distill_core::synthetic::{World, WorldConfig};
use distill_core::util::rng_for;
use distill_core::{LogProbs, Vocab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_dist(rng: &mut ChaCha8Rng, v: usize) -> LogProbs {
    let logits: Vec<f64> = (0..v)
        .map(|_| {
            // Coarse values make exact ties common enough to exercise the
            // tie-breaking rule.
            if rng.gen_bool(0.3) {
                rng.gen_range(0..4) as f64
            } else {
                rng.gen_range(-8.0..8.0)
            }
        })
        .collect();
    LogProbs::from_logits(&logits).unwrap()
}

fn brute_force(gold: &[f64], pert: &[f64]) -> u32 {
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for i in 0..gold.len() {
        let s = 2.0 * gold[i] - pert[i];
        if s > best_score {
            best_score = s;
            best = i;
        }
    }
    best as u32
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let v = rng.gen_range(2..60);
        let gold = random_dist(&mut rng, v);
        let pert = random_dist(&mut rng, v);
        for t in 0..v as u32 {
            let s = contrastive_score(&gold, &pert, t).unwrap();
            let g = plausibility_growth(&gold, &pert, t).unwrap();
            let lg = gold.as_slice()[t as usize];
            let lp = pert.as_slice()[t as usize];
            worst = worst.max((s - (2.0 * lg - lp)).abs()).max((s - (lg + g)).abs());
        }
        let all = candidate_set(&gold, None);
        if contrastive_step(&gold, &pert, &all).unwrap() != brute_force(gold.as_slice(), pert.as_slice()) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-9 && mismatches == 0 && elapsed < Duration::from_secs(1),
        format!("max |score - (2 lp_gold - lp_pert)| = {worst:.2e}, argmax mismatches {mismatches}/1000, {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let v = rng.gen_range(1..80);
        let d = random_dist(&mut rng, v);
        let all = candidate_set(&d, None);
        if contrastive_step(&d, &d, &all).unwrap() != greedy_step(&d).unwrap() {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches == 0 && elapsed < Duration::from_secs(1),
        format!("mismatches {mismatches}/1000, {elapsed:.2?}"),
    )
}

fn tiny_question() -> QAInstance {
    QAInstance {
        id: "q".into(),
        question: "would ent1 be prop2 ?".into(),
        options: vec!["yes".into(), "no".into()],
        gold_answer: "yes".into(),
        human_rationale: None,
        split: Split::Train,
    }
}

/// Adds `delta` to one logit at one decoder position of an inner model.
struct Shifted<'a, M> {
    inner: &'a M,
    position: usize,
    token: usize,
    delta: f64,
}

impl<M: Seq2SeqModel<f64>> Seq2SeqModel<f64> for Shifted<'_, M> {
    fn vocab(&self) -> &Vocab {
        self.inner.vocab()
    }

    fn next_token_logits(&self, encoder: &[u32], prefix: &[u32]) -> Vec<f64> {
        let mut l = self.inner.next_token_logits(encoder, prefix);
        if prefix.len() == self.position {
            l[self.token] += self.delta;
        }
        l
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let q = tiny_question();
    let cf = build_counterfactual_instance(&q, "ent1 is attr9 because of many reasons .", "no").unwrap();
    let fact = build_factual_instance(&q, "ent1 is attr2 .", "yes").unwrap();
    let trained = train_student::<f64>(
        &[fact, cf.clone()],
        &TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        },
        0,
    )
    .unwrap();
    let model = &trained.model;
    let v = model.vocab().len();
    let base = compute_counterfactual_loss(std::slice::from_ref(&cf), model).unwrap();
    let ex = Seq2SeqExample::from_instance(model.vocab(), &cf).unwrap();

    let mut rationale_changes = 0usize;
    let mut rationale_probes = 0usize;
    let mut answer_min = f64::INFINITY;
    for (pos, &supervised) in ex.mask.iter().enumerate() {
        for token in 0..v {
            for delta in [1e-3, -0.5, 3.0] {
                let shifted = Shifted {
                    inner: model,
                    position: pos,
                    token,
                    delta,
                };
                let loss = compute_counterfactual_loss(std::slice::from_ref(&cf), &shifted).unwrap();
                let change = (loss - base).abs();
                if supervised {
                    answer_min = answer_min.min(change);
                } else {
                    rationale_probes += 1;
                    if loss != base {
                        rationale_changes += 1;
                    }
                }
            }
        }
    }
    // The same property directly on a random logit matrix.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let logits: Vec<Vec<f64>> = (0..ex.target.len())
        .map(|_| (0..v).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();
    let l0 = masked_nll(&logits, &ex.target, &ex.mask).unwrap();
    for (pos, &supervised) in ex.mask.iter().enumerate() {
        let mut l = logits.clone();
        l[pos][ex.target[pos] as usize] += 0.25;
        let d = (masked_nll(&l, &ex.target, &ex.mask).unwrap() - l0).abs();
        if supervised {
            answer_min = answer_min.min(d);
        } else {
            rationale_probes += 1;
            if d != 0.0 {
                rationale_changes += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        rationale_changes == 0 && answer_min > 0.0 && elapsed < Duration::from_secs(10),
        format!(
            "rationale-position probes changing the loss: {rationale_changes}/{rationale_probes}, \
             smallest answer-position change {answer_min:.3e}, {elapsed:.2?}"
        ),
    )
}

/// Independent masked NLL: target is the decoder words plus end-of-sequence,
/// supervised where the instance mask says so (end-of-sequence only for
/// factual instances).
fn oracle_nll<M: Seq2SeqModel<f64>>(model: &M, inst: &TrainingInstance) -> f64 {
    let vocab = model.vocab();
    let encoder = vocab.encode(&inst.encoder_text);
    let mut target = vocab.encode(&inst.decoder_target);
    target.push(vocab.eos_id());
    let mut mask = inst.loss_mask.clone();
    mask.push(inst.mode == Mode::Factual);
    let mut sum = 0.0;
    let mut n = 0;
    for (i, &t) in target.iter().enumerate() {
        if !mask[i] {
            continue;
        }
        let logits = model.next_token_logits(&encoder, &target[..i]);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|x| (x - max).exp()).sum();
        sum -= logits[t as usize] - max - z.ln();
        n += 1;
    }
    sum / n as f64
}

fn synthetic_forged(seed: u64, n_train: usize) -> (World, Vec<QAInstance>, Vec<TrainingInstance>) {
    let world = World::generate(&WorldConfig {
        seed,
        n_train,
        n_test: 40,
        ..WorldConfig::default()
    })
    .unwrap();
    let data = world.dataset();
    let train: Vec<_> = data.iter().filter(|q| q.split == Split::Train).cloned().collect();
    let cfg = DecodeConfig {
        seed,
        ..DecodeConfig::with_strategy(Strategy::CdWrong)
    };
    let set = rationalize_dataset(
        &world.teacher::<f64>(),
        &train,
        &world.demonstrations(3),
        &cfg,
        true,
        &mut rng_for(seed, "counterfactual-answers"),
    )
    .unwrap();
    let forged = forge_from_rationales(&train, &set.records).unwrap();
    (world, data, forged)
}

fn criterion_4() -> Outcome {
    let (_, _, forged) = synthetic_forged(4, 120);
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let trained = train_student::<f64>(&forged, &cfg, 0).unwrap();
    let worst_sum = trained
        .steps
        .iter()
        .chain(&trained.epochs)
        .map(|r| (r.total - (r.factual_loss + r.counterfactual_loss)).abs())
        .fold(0.0, f64::max);

    // Before any update every position is uniform, so the first logged step
    // must report ln V for both parts.
    let ln_v = (trained.model.vocab().len() as f64).ln();
    let first = trained.steps[0];
    let first_err = (first.factual_loss - ln_v).abs().max((first.counterfactual_loss - ln_v).abs());

    let worst_nll = forged
        .iter()
        .map(|inst| (instance_loss(&trained.model, inst).unwrap() - oracle_nll(&trained.model, inst)).abs())
        .fold(0.0, f64::max);
    check(
        worst_sum <= 1e-9 && worst_nll <= 1e-6 && first_err <= 1e-6,
        format!(
            "{} steps, max |total - (F + CF)| = {worst_sum:.2e}, max |loss - oracle NLL| = {worst_nll:.2e} over {} instances, \
             first step vs ln V: {first_err:.2e}",
            trained.steps.len(),
            forged.len()
        ),
    )
}

fn criterion_5() -> Outcome {
    let vocab = Vocab::new((0..30).map(|i| format!("w{i}")));
    let pool = vocab.ordinary_ids();
    let mut failures = Vec::new();
    let mut cases = 0;
    for len in 1..=64usize {
        for fraction in [0.0, 0.25, 0.5, 1.0] {
            cases += 1;
            let mut r = ChaCha8Rng::seed_from_u64(len as u64);
            let tokens: Vec<u32> = (0..len).map(|_| pool[r.gen_range(0..pool.len())]).collect();
            let seed = 1000 + len as u64;
            let a = perturb_rationale(&tokens, fraction, &vocab, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = perturb_rationale(&tokens, fraction, &vocab, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let differing = a.iter().zip(&tokens).filter(|(x, y)| x != y).count();
            let expected = (fraction * len as f64).round() as usize;
            if a.len() != len || differing != expected || a != b || a.iter().any(|&t| vocab.is_special(t)) {
                failures.push(format!("len {len} fraction {fraction}: {differing} differ, expected {expected}"));
            }
        }
    }
    check(
        failures.is_empty(),
        match failures.first() {
            None => format!("{cases} length/fraction cases exact and seed-deterministic"),
            Some(f) => format!("{} of {cases} cases violate the contract, first: {f}", failures.len()),
        },
    )
}

/// Answers from a fixed table keyed by question.
struct TableSim(BTreeMap<String, String>);

impl OptionClassifier for TableSim {
    fn classify(&self, item: &SimItem) -> String {
        self.0[&item.question].clone()
    }
}

fn criterion_6() -> Outcome {
    // Twenty items: label, with-rationale prediction, without-rationale
    // prediction. Hand count: with-rationale right on 17 (misses at 4, 9,
    // 15), without-rationale right on 12 (misses at 0, 2, 4, 6, 9, 11, 13,
    // 18).
    let rows: [(&str, &str, &str); 20] = [
        ("A", "A", "B"),
        ("B", "B", "B"),
        ("C", "C", "A"),
        ("A", "A", "A"),
        ("B", "C", "A"),
        ("C", "C", "C"),
        ("A", "A", "C"),
        ("B", "B", "B"),
        ("C", "C", "C"),
        ("A", "B", "B"),
        ("B", "B", "B"),
        ("C", "C", "B"),
        ("A", "A", "A"),
        ("B", "B", "C"),
        ("C", "C", "C"),
        ("A", "C", "A"),
        ("B", "B", "B"),
        ("C", "C", "C"),
        ("A", "A", "B"),
        ("B", "B", "B"),
    ];
    let items: Vec<SimItem> = (0..20)
        .map(|i| SimItem {
            question: format!("question {i}"),
            options: vec!["A".into(), "B".into(), "C".into()],
            rationale: format!("rationale {i}"),
        })
        .collect();
    let table = |col: usize| {
        TableSim(
            rows.iter()
                .enumerate()
                .map(|(i, r)| (format!("question {i}"), [r.0, r.1, r.2][col].to_string()))
                .collect(),
        )
    };
    let labels = Labels {
        source: LabelSource::Gold,
        values: rows.iter().map(|r| r.0.to_string()).collect(),
    };
    let pair = SimulatorPair {
        with_rationale: table(1),
        without_rationale: table(2),
        label_source: LabelSource::Gold,
    };
    let report = compute_las(&pair, &items, &labels).unwrap();
    let expected = 17.0 / 20.0 - 12.0 / 20.0;
    let identity = compute_las(
        &SimulatorPair {
            with_rationale: table(1),
            without_rationale: table(1),
            label_source: LabelSource::Gold,
        },
        &items,
        &labels,
    )
    .unwrap();
    check(
        report.las == expected
            && report.acc_with == 0.85
            && report.acc_without == 0.6
            && report.las == report.acc_with - report.acc_without
            && identity.las == 0.0,
        format!(
            "las {} (expected {expected}), acc_with {}, acc_without {}, identity las {}",
            report.las, report.acc_with, report.acc_without, identity.las
        ),
    )
}

fn small_run_config(dir: &Path) -> RunConfig {
    let world = WorldConfig {
        seed: 7,
        n_train: 120,
        n_dev: 10,
        n_test: 40,
        ..WorldConfig::default()
    };
    let mut provider = ProviderConfig::local(ToyModel::Synthetic { world });
    provider.cache_path = Some(dir.join("teacher-cache.jsonl"));
    RunConfig {
        run_id: "determinism".into(),
        dataset: DatasetConfig {
            name: "synthetic".into(),
            path: dir.join("data.jsonl"),
        },
        teacher: TeacherConfig {
            provider,
            decode: DecodeConfig::default(),
            num_demos: 3,
            demos_path: None,
            counterfactual: true,
        },
        student: TrainConfig {
            seeds: vec![0, 1],
            epochs: 4,
            ..TrainConfig::default()
        },
        eval: EvalConfig::default(),
        output_dir: dir.to_path_buf(),
    }
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run_config(dir.path());
    let Some(ToyModel::Synthetic { world }) = &cfg.teacher.provider.toy else {
        unreachable!()
    };
    pipeline::write_instances(&cfg.dataset.path, &World::generate(world).unwrap().dataset()).unwrap();

    pipeline::run_all(&cfg).unwrap();
    let first = files_under(dir.path());
    let cache_len = first[Path::new("teacher-cache.jsonl")].len();

    for (p, _) in first.iter() {
        if p != Path::new("data.jsonl") && p != Path::new("teacher-cache.jsonl") {
            std::fs::remove_file(dir.path().join(p)).unwrap();
        }
    }
    pipeline::run_all(&cfg).unwrap();
    let second = files_under(dir.path());

    let differing: Vec<_> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let compared = ["forged.jsonl", "manifest.json", "determinism/train_manifest.json", "determinism/0/eval.json"];
    let present = compared.iter().all(|c| second.contains_key(Path::new(c)));
    check(
        differing.is_empty() && present && second[Path::new("teacher-cache.jsonl")].len() == cache_len,
        format!(
            "{} artifacts compared, differing: {differing:?}, second run served from cache: {}",
            first.len(),
            second[Path::new("teacher-cache.jsonl")].len() == cache_len
        ),
    )
}

struct SeedResult {
    sens_f: f64,
    sens_fcf: f64,
    refine_f: f64,
    refine_fcf: f64,
}

fn split_of(data: &[QAInstance], s: Split) -> Vec<QAInstance> {
    data.iter().filter(|q| q.split == s).cloned().collect()
}

fn directional_seed(seed: u64) -> SeedResult {
    let world = World::generate(&WorldConfig {
        seed,
        ..WorldConfig::default()
    })
    .unwrap();
    let data = world.dataset();
    let train = split_of(&data, Split::Train);
    let test = split_of(&data, Split::Test);
    let teacher = world.teacher::<f64>();
    let demos = world.demonstrations(3);
    let decode = DecodeConfig {
        seed,
        ..DecodeConfig::with_strategy(Strategy::CdWrong)
    };
    let mut rng = rng_for(seed, "counterfactual-answers");
    let set = rationalize_dataset(&teacher, &train, &demos, &decode, true, &mut rng).unwrap();
    let forged = forge_from_rationales(&train, &set.records).unwrap();
    let factual_only: Vec<_> = forged.iter().filter(|t| t.mode == Mode::Factual).cloned().collect();
    let oracle: BTreeMap<String, String> = rationalize_dataset(&teacher, &test, &demos, &decode, false, &mut rng)
        .unwrap()
        .records
        .into_iter()
        .map(|r| (r.id, r.rationale))
        .collect();

    let cfg = TrainConfig::default();
    let measure = |instances: &[TrainingInstance]| {
        let model = train_student::<f64>(instances, &cfg, seed).unwrap().model;
        let s = sensitivity(&model, &test, 0.5, cfg.max_target_tokens, &mut rng_for(seed, "sensitivity")).unwrap();
        let r = refinement_gain(&model, &test, &oracle, cfg.max_target_tokens).unwrap();
        (s.sensitivity, r.refinement_gain)
    };
    let (sens_f, refine_f) = measure(&factual_only);
    let (sens_fcf, refine_fcf) = measure(&forged);
    SeedResult {
        sens_f,
        sens_fcf,
        refine_f,
        refine_fcf,
    }
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let results: Vec<SeedResult> = DEFAULT_SEEDS.iter().map(|&s| directional_seed(s)).collect();
    let wins = results.iter().filter(|r| r.sens_fcf > r.sens_f).count();
    let n = results.len() as f64;
    let mean = |f: fn(&SeedResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let (rf, rfcf) = (mean(|r| r.refine_f), mean(|r| r.refine_fcf));
    let elapsed = start.elapsed();
    let per_seed: Vec<String> = results
        .iter()
        .map(|r| format!("{:.3}/{:.3}", r.sens_f, r.sens_fcf))
        .collect();
    check(
        wins >= 4 && rfcf >= rf && elapsed < Duration::from_secs(30 * 60),
        format!(
            "sensitivity F/F+CF per seed [{}], F+CF higher on {wins}/5; mean refinement gain F {rf:.3} vs F+CF {rfcf:.3}; \
             mean sensitivity F {:.3} vs F+CF {:.3}; {elapsed:.1?}",
            per_seed.join(", "),
            mean(|r| r.sens_f),
            mean(|r| r.sens_fcf)
        ),
    )
}

fn simulator_accuracy(seed: u64, strategy: Strategy) -> f64 {
    let world = World::generate(&WorldConfig {
        seed,
        ..WorldConfig::default()
    })
    .unwrap();
    let data = world.dataset();
    let teacher = world.teacher::<f64>();
    let demos = world.demonstrations(3);
    let decode = DecodeConfig {
        seed,
        ..DecodeConfig::with_strategy(strategy)
    };
    let mut rng = rng_for(seed, "counterfactual-answers");
    let sim_data = |qs: &[QAInstance], rng: &mut ChaCha8Rng| {
        let records: Vec<RationaleRecord> = rationalize_dataset(&teacher, qs, &demos, &decode, false, rng)
            .unwrap()
            .records;
        let by_id: BTreeMap<&str, &QAInstance> = qs.iter().map(|q| (q.id.as_str(), q)).collect();
        let items: Vec<SimItem> = records
            .iter()
            .map(|r| SimItem {
                question: by_id[r.id.as_str()].question.clone(),
                options: by_id[r.id.as_str()].options.clone(),
                rationale: r.rationale.clone(),
            })
            .collect();
        let labels = Labels {
            source: LabelSource::Gold,
            values: records.iter().map(|r| by_id[r.id.as_str()].gold_answer.clone()).collect(),
        };
        (items, labels)
    };
    let (train_items, train_labels) = sim_data(&split_of(&data, Split::Train), &mut rng);
    let (test_items, test_labels) = sim_data(&split_of(&data, Split::Test), &mut rng);
    let sim = train_simulator::<f64>(&train_items, &train_labels, true, &pipeline::default_simulator(), seed).unwrap();
    let preds: Vec<String> = test_items.iter().map(|it| sim.classify(it)).collect();
    accuracy(&preds, &test_labels.values).unwrap()
}

fn criterion_9() -> Outcome {
    let n = DEFAULT_SEEDS.len() as f64;
    let greedy: Vec<f64> = DEFAULT_SEEDS.iter().map(|&s| simulator_accuracy(s, Strategy::Greedy)).collect();
    let cd: Vec<f64> = DEFAULT_SEEDS.iter().map(|&s| simulator_accuracy(s, Strategy::CdWrong)).collect();
    let (mg, mc) = (greedy.iter().sum::<f64>() / n, cd.iter().sum::<f64>() / n);
    check(
        mc >= mg,
        format!("mean with-rationale simulator accuracy: cd-wrong {mc:.3} vs greedy {mg:.3} (per seed {cd:.3?} vs {greedy:.3?})"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 contrastive score identity and brute-force argmax", criterion_1),
        ("2 contrastive decoding reduces to greedy", criterion_2),
        ("3 counterfactual loss ignores rationale positions", criterion_3),
        ("4 loss additivity and NLL oracle", criterion_4),
        ("5 rationale perturbation contract", criterion_5),
        ("6 LAS arithmetic on handcrafted tables", criterion_6),
        ("7 end-to-end determinism", criterion_7),
        ("8 counterfactual training raises faithfulness", criterion_8),
        ("9 contrastive teacher rationales help the simulator", criterion_9),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
