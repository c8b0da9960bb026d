//! Faithfulness metrics: accuracy, leakage-adjusted simulatability (LAS),
//! sensitivity to rationale perturbation and gain from rationale refinement.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::seq2seq::{fine_tune, Seq2SeqExample, Seq2SeqModel, TinySeq2Seq};
use crate::error::{Error, Result};
use crate::forge::{flatten, Mode, QAInstance};
use crate::scalar::{log_softmax_in_place, Scalar};
use crate::student::{predict, predict_with_forced_rationale, predict_with_forced_tokens, TrainConfig, INVALID_ANSWER};
use crate::vocab::Vocab;

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Fraction of exact (trimmed, case-insensitive) matches. The invalid
/// sentinel never matches.
pub fn accuracy<P: AsRef<str>, L: AsRef<str>>(predictions: &[P], labels: &[L]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("accuracy over zero items"));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| {
            let p = normalize(p.as_ref());
            p != INVALID_ANSWER && p == normalize(l.as_ref())
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    /// Teacher consistency: simulate the gold answers.
    Gold,
    /// Student faithfulness: simulate the student's own predictions.
    StudentPrediction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub source: LabelSource,
    pub values: Vec<String>,
}

/// What a simulator sees for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimItem {
    pub question: String,
    pub options: Vec<String>,
    pub rationale: String,
}

pub trait OptionClassifier {
    fn classify(&self, item: &SimItem) -> String;
}

/// `"question {q} rationale {r}"` or `"question {q}"`.
pub fn simulator_input(item: &SimItem, use_rationale: bool) -> String {
    if use_rationale {
        flatten(&format!("question {} rationale {}", item.question, item.rationale))
    } else {
        flatten(&format!("question {}", item.question))
    }
}

/// A seq-to-seq model that picks the option with the highest sequence
/// log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulator<T> {
    pub model: TinySeq2Seq<T>,
    pub use_rationale: bool,
    pub label_source: LabelSource,
}

fn option_target(vocab: &Vocab, option: &str) -> Vec<u32> {
    let mut t = vocab.encode(option);
    t.push(vocab.eos_id());
    t
}

impl<T: Scalar> OptionClassifier for Simulator<T> {
    fn classify(&self, item: &SimItem) -> String {
        let vocab = self.model.vocab();
        let enc = vocab.encode(&simulator_input(item, self.use_rationale));
        let mut best: Option<(usize, T)> = None;
        for (i, opt) in item.options.iter().enumerate() {
            let target = option_target(vocab, opt);
            let mut score = T::zero();
            for (pos, &t) in target.iter().enumerate() {
                let mut lp = self.model.next_token_logits(&enc, &target[..pos]);
                log_softmax_in_place(&mut lp);
                score += lp[t as usize];
            }
            if best.map_or(true, |(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        best.map(|(i, _)| item.options[i].clone())
            .unwrap_or_else(|| INVALID_ANSWER.to_string())
    }
}

/// Fits a simulator on `(question[, rationale]) -> label`.
pub fn train_simulator<T: Scalar>(
    items: &[SimItem],
    labels: &Labels,
    use_rationale: bool,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Simulator<T>> {
    if items.len() != labels.values.len() {
        return Err(Error::invalid("simulator items and labels differ in length"));
    }
    for (i, (item, l)) in items.iter().zip(&labels.values).enumerate() {
        if !item.options.iter().any(|o| o == l) {
            return Err(Error::invalid(format!(
                "simulator label {l:?} at item {} is not an option",
                i + 1
            )));
        }
    }
    let inputs: Vec<String> = items.iter().map(|it| simulator_input(it, use_rationale)).collect();
    let vocab = Vocab::from_texts(
        inputs
            .iter()
            .map(String::as_str)
            .chain(items.iter().flat_map(|it| it.options.iter().map(String::as_str))),
    );
    let examples: Vec<Seq2SeqExample> = inputs
        .iter()
        .zip(&labels.values)
        .map(|(inp, l)| {
            let target = option_target(&vocab, l);
            Seq2SeqExample {
                encoder: vocab.encode(inp),
                mask: vec![true; target.len()],
                target,
                mode: Mode::Factual,
            }
        })
        .collect();
    let trained = fine_tune(vocab, &examples, cfg, seed)?;
    Ok(Simulator {
        model: trained.model,
        use_rationale,
        label_source: labels.source,
    })
}

#[derive(Debug, Clone)]
pub struct SimulatorPair<C> {
    pub with_rationale: C,
    pub without_rationale: C,
    pub label_source: LabelSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LasReport {
    pub las: f64,
    pub acc_with: f64,
    pub acc_without: f64,
    pub n: usize,
    pub label_source: LabelSource,
}

/// `Acc(qr -> label) - Acc(q -> label)` from precomputed predictions.
pub fn las_from_predictions<S: AsRef<str>>(
    with_rationale: &[S],
    without_rationale: &[S],
    labels: &Labels,
) -> Result<LasReport> {
    let acc_with = accuracy(with_rationale, &labels.values)?;
    let acc_without = accuracy(without_rationale, &labels.values)?;
    Ok(LasReport {
        las: acc_with - acc_without,
        acc_with,
        acc_without,
        n: labels.values.len(),
        label_source: labels.source,
    })
}

pub fn compute_las<C: OptionClassifier>(
    pair: &SimulatorPair<C>,
    eval_set: &[SimItem],
    labels: &Labels,
) -> Result<LasReport> {
    if pair.label_source != labels.source {
        return Err(Error::invalid(format!(
            "simulators trained on {:?} labels evaluated against {:?} labels",
            pair.label_source, labels.source
        )));
    }
    let with: Vec<String> = eval_set.iter().map(|it| pair.with_rationale.classify(it)).collect();
    let without: Vec<String> = eval_set.iter().map(|it| pair.without_rationale.classify(it)).collect();
    las_from_predictions(&with, &without, labels)
}

/// Replaces exactly `round(fraction * len)` positions, chosen uniformly
/// without replacement, each by a uniformly drawn non-special token that
/// differs from the original.
pub fn perturb_rationale<R: Rng + ?Sized>(
    tokens: &[u32],
    fraction: f64,
    vocab: &Vocab,
    rng: &mut R,
) -> Result<Vec<u32>> {
    if tokens.is_empty() {
        return Err(Error::invalid("cannot perturb an empty rationale"));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("perturbation fraction {fraction} outside [0, 1]")));
    }
    let pool = vocab.ordinary_ids();
    let k = (fraction * tokens.len() as f64).round() as usize;
    if k > 0 && pool.len() < 2 {
        return Err(Error::invalid("vocabulary too small to draw replacement tokens"));
    }
    let mut out = tokens.to_vec();
    let mut positions = index::sample(rng, tokens.len(), k).into_vec();
    positions.sort_unstable();
    for pos in positions {
        let original = out[pos];
        out[pos] = match pool.binary_search(&original) {
            Ok(skip) => {
                let j = rng.gen_range(0..pool.len() - 1);
                pool[if j >= skip { j + 1 } else { j }]
            }
            Err(_) => pool[rng.gen_range(0..pool.len())],
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub sensitivity: f64,
    pub acc_forced: f64,
    pub acc_perturbed: f64,
    pub n: usize,
    pub excluded: usize,
}

const MAX_EXCLUDED_PCT: u32 = 5;

/// `Acc(qr -> a*) - Acc(qr' -> a*)` over already collected answers.
pub fn sensitivity_from_answers<S: AsRef<str>>(forced: &[S], perturbed: &[S], gold: &[S]) -> Result<f64> {
    Ok(accuracy(forced, gold)? - accuracy(perturbed, gold)?)
}

/// Generates each item's rationale, then answers with it forced and with a
/// perturbed copy forced. Items whose rationale cannot be forced (empty) are
/// excluded; more than 5% exclusions abort.
pub fn sensitivity<T, M, R>(
    model: &M,
    eval_set: &[QAInstance],
    fraction: f64,
    max_target_tokens: usize,
    rng: &mut R,
) -> Result<SensitivityReport>
where
    T: Scalar,
    M: Seq2SeqModel<T>,
    R: Rng + ?Sized,
{
    let vocab = model.vocab();
    let mut forced = Vec::new();
    let mut perturbed = Vec::new();
    let mut gold = Vec::new();
    let mut excluded = 0;
    for q in eval_set {
        let pred = predict(model, q, max_target_tokens);
        let ids = vocab.encode(&flatten(&pred.rationale));
        let answers = predict_with_forced_tokens(model, q, &ids, max_target_tokens).and_then(|a| {
            let pert = perturb_rationale(&ids, fraction, vocab, rng)?;
            Ok((a, predict_with_forced_tokens(model, q, &pert, max_target_tokens)?))
        });
        match answers {
            Ok((a, b)) => {
                forced.push(a);
                perturbed.push(b);
                gold.push(q.gold_answer.clone());
            }
            Err(e) => {
                log::debug!("{}: excluded from sensitivity: {e}", q.id);
                excluded += 1;
            }
        }
    }
    if excluded * 100 > eval_set.len() * MAX_EXCLUDED_PCT as usize || gold.is_empty() {
        return Err(Error::TooManyFailures {
            what: "forced-rationale prediction",
            failed: excluded,
            total: eval_set.len(),
            limit_pct: MAX_EXCLUDED_PCT,
        });
    }
    Ok(SensitivityReport {
        sensitivity: sensitivity_from_answers(&forced, &perturbed, &gold)?,
        acc_forced: accuracy(&forced, &gold)?,
        acc_perturbed: accuracy(&perturbed, &gold)?,
        n: gold.len(),
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub refinement_gain: f64,
    pub acc_oracle: f64,
    pub acc_own: f64,
    pub n: usize,
}

/// `Acc(qr* -> a*) - Acc(qr -> a*)` over already collected answers.
pub fn refinement_from_answers<S: AsRef<str>>(oracle: &[S], own: &[S], gold: &[S]) -> Result<RefinementReport> {
    let acc_oracle = accuracy(oracle, gold)?;
    let acc_own = accuracy(own, gold)?;
    Ok(RefinementReport {
        refinement_gain: acc_oracle - acc_own,
        acc_oracle,
        acc_own,
        n: gold.len(),
    })
}

/// Accuracy with the oracle rationale forced minus accuracy of the student's
/// own generation.
pub fn refinement_gain<T, M>(
    model: &M,
    eval_set: &[QAInstance],
    oracle_rationales: &BTreeMap<String, String>,
    max_target_tokens: usize,
) -> Result<RefinementReport>
where
    T: Scalar,
    M: Seq2SeqModel<T>,
{
    let mut oracle = Vec::with_capacity(eval_set.len());
    let mut own = Vec::with_capacity(eval_set.len());
    let mut gold = Vec::with_capacity(eval_set.len());
    for q in eval_set {
        let r = oracle_rationales
            .get(&q.id)
            .ok_or_else(|| Error::invalid(format!("no oracle rationale for {}", q.id)))?;
        oracle.push(predict_with_forced_rationale(model, q, r, max_target_tokens)?);
        own.push(predict(model, q, max_target_tokens).answer);
        gold.push(q.gold_answer.clone());
    }
    refinement_from_answers(&oracle, &own, &gold)
}

/// Per-seed evaluation summary. Every LAS is stored with its two accuracy
/// components and equals their difference exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seed: u64,
    pub n: usize,
    pub accuracy: f64,
    pub las: f64,
    pub las_with: f64,
    pub las_without: f64,
    pub teacher_las: f64,
    pub teacher_las_with: f64,
    pub teacher_las_without: f64,
    pub sensitivity: f64,
    pub sensitivity_excluded: usize,
    pub refinement_gain: f64,
}

impl EvalReport {
    pub fn las_is_consistent(&self) -> bool {
        self.las == self.las_with - self.las_without
            && self.teacher_las == self.teacher_las_with - self.teacher_las_without
    }
}

/// Plain-text table with one row per seed and a mean row.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>6} {:>6} {:>9} {:>9} {:>12} {:>12} {:>11}",
        "seed", "n", "accuracy", "las", "teacher_las", "sensitivity", "refinement"
    );
    let row = |out: &mut String, label: &str, n: String, v: [f64; 5]| {
        let _ = writeln!(
            out,
            "{:>6} {:>6} {:>9.4} {:>9.4} {:>12.4} {:>12.4} {:>11.4}",
            label, n, v[0], v[1], v[2], v[3], v[4]
        );
    };
    for r in reports {
        row(
            &mut out,
            &r.seed.to_string(),
            r.n.to_string(),
            [r.accuracy, r.las, r.teacher_las, r.sensitivity, r.refinement_gain],
        );
    }
    if !reports.is_empty() {
        let m = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
        row(
            &mut out,
            "mean",
            String::new(),
            [
                m(|r| r.accuracy),
                m(|r| r.las),
                m(|r| r.teacher_las),
                m(|r| r.sensitivity),
                m(|r| r.refinement_gain),
            ],
        );
    }
    out
}
