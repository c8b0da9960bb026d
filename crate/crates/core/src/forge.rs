//! Teacher prompts, student training instances and dataset persistence.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::backend::LogProbProvider;
use crate::decoder::{generate_rationale, perturb_answer, DecodeConfig, PerturbMode, Strategy};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vocab::{words, COUNTERFACTUAL_KEYWORD, FACTUAL_KEYWORD, NEWLINE};

/// Phrase separating the student's rationale from its answer.
pub const ANSWER_ANCHOR: &str = "So the answer is";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAInstance {
    pub id: String,
    pub question: String,
    pub options: Vec<String>,
    #[serde(rename = "answer")]
    pub gold_answer: String,
    #[serde(rename = "rationale", default, skip_serializing_if = "Option::is_none")]
    pub human_rationale: Option<String>,
    #[serde(default)]
    pub split: Split,
}

impl QAInstance {
    pub fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() {
            return Err(Error::invalid(format!("{}: empty question", self.id)));
        }
        if !(2..=8).contains(&self.options.len()) {
            return Err(Error::invalid(format!(
                "{}: {} answer options, expected 2 to 8",
                self.id,
                self.options.len()
            )));
        }
        if !self.options.contains(&self.gold_answer) {
            return Err(Error::invalid(format!(
                "{}: gold answer {:?} is not an option",
                self.id, self.gold_answer
            )));
        }
        Ok(())
    }

    /// Case-insensitive lookup of `text` among the options.
    pub fn canonical_option(&self, text: &str) -> Option<&str> {
        let t = text.trim();
        self.options
            .iter()
            .find(|o| o.eq_ignore_ascii_case(t))
            .map(String::as_str)
    }
}

/// Checks per-instance validity and id uniqueness.
pub fn validate_dataset(instances: &[QAInstance]) -> Result<()> {
    let mut seen = HashMap::new();
    for (i, q) in instances.iter().enumerate() {
        q.validate()?;
        if let Some(prev) = seen.insert(q.id.as_str(), i) {
            return Err(Error::invalid(format!(
                "duplicate id {:?} at records {} and {}",
                q.id,
                prev + 1,
                i + 1
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub question: String,
    pub options: Vec<String>,
    pub gold_answer: String,
    pub rationale: String,
}

impl Demonstration {
    pub fn new(
        question: impl Into<String>,
        options: Vec<String>,
        gold_answer: impl Into<String>,
        rationale: impl Into<String>,
    ) -> Result<Self> {
        let d = Demonstration {
            question: question.into(),
            options,
            gold_answer: gold_answer.into(),
            rationale: rationale.into(),
        };
        if d.question.trim().is_empty()
            || d.gold_answer.trim().is_empty()
            || d.rationale.trim().is_empty()
        {
            return Err(Error::invalid("demonstration fields must be non-empty"));
        }
        Ok(d)
    }

    /// Uses the instance's human rationale; `None` if it has none.
    pub fn from_instance(q: &QAInstance) -> Option<Self> {
        let r = q.human_rationale.as_deref()?;
        Demonstration::new(&q.question, q.options.clone(), &q.gold_answer, r).ok()
    }
}

/// Few-shot prompt handed to the teacher.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RenderedPrompt(String);

impl RenderedPrompt {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

pub fn render_options(options: &[String]) -> String {
    options.join(", ")
}

/// Demonstration blocks, then the query block left open where the rationale
/// begins:
///
/// ```text
/// Q: {question}
/// Answer choices: {options}
/// A: {answer}. Why? {rationale}
///
/// ```
pub fn render_prompt(demos: &[Demonstration], q: &QAInstance, answer: &str) -> Result<RenderedPrompt> {
    if demos.is_empty() {
        return Err(Error::invalid("at least one demonstration is required"));
    }
    if !answer.is_empty() && !q.options.iter().any(|o| o == answer) {
        return Err(Error::invalid(format!(
            "{}: answer {answer:?} is not among the options",
            q.id
        )));
    }
    let mut out = String::new();
    for d in demos {
        out.push_str(&format!(
            "Q: {}\nAnswer choices: {}\nA: {}. Why? {}\n\n",
            d.question.trim(),
            render_options(&d.options),
            d.gold_answer.trim(),
            flatten(&d.rationale)
        ));
    }
    out.push_str(&format!(
        "Q: {}\nAnswer choices: {}\nA: {}. Why?",
        q.question.trim(),
        render_options(&q.options),
        answer
    ));
    Ok(RenderedPrompt(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Factual,
    Counterfactual,
}

impl Mode {
    pub fn keyword(self) -> &'static str {
        match self {
            Mode::Factual => FACTUAL_KEYWORD,
            Mode::Counterfactual => COUNTERFACTUAL_KEYWORD,
        }
    }
}

/// Half-open token range `[start, end)` over the whitespace tokens of the
/// decoder target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub id: String,
    pub mode: Mode,
    pub encoder_text: String,
    pub decoder_target: String,
    pub answer_span: TokenSpan,
    pub loss_mask: Vec<bool>,
}

impl TrainingInstance {
    pub fn target_tokens(&self) -> Vec<&str> {
        words(&self.decoder_target).collect()
    }

    /// The answer text recovered from the span.
    pub fn span_text(&self) -> String {
        let toks = self.target_tokens();
        toks.get(self.answer_span.start..self.answer_span.end)
            .map(|s| s.join(" "))
            .unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let kw = self.mode.keyword();
        let bad = |m: &str| Err(Error::invalid(format!("{}: {m}", self.id)));
        if words(&self.encoder_text).next() != Some(kw) {
            return bad("encoder text lacks the mode keyword");
        }
        let toks = self.target_tokens();
        if toks.first() != Some(&kw) {
            return bad("decoder target lacks the mode keyword");
        }
        if self.loss_mask.len() != toks.len() {
            return bad("loss mask length differs from target length");
        }
        let span = self.answer_span;
        if span.is_empty() || span.end > toks.len() {
            return bad("answer span out of range");
        }
        let ok = match self.mode {
            Mode::Factual => self.loss_mask.iter().all(|&m| m),
            Mode::Counterfactual => self
                .loss_mask
                .iter()
                .enumerate()
                .all(|(i, &m)| m == (span.start..span.end).contains(&i)),
        };
        if !ok {
            return bad("loss mask inconsistent with mode");
        }
        Ok(())
    }
}

/// Words of `text` joined by single spaces, newlines dropped.
pub fn flatten(text: &str) -> String {
    words(text)
        .filter(|&w| w != NEWLINE)
        .collect::<Vec<_>>()
        .join(" ")
}

/// `"{keyword} Q: {question} Answer choices: {options}"`
pub fn encoder_text(mode: Mode, q: &QAInstance) -> String {
    flatten(&format!(
        "{} Q: {} Answer choices: {}",
        mode.keyword(),
        q.question,
        render_options(&q.options)
    ))
}

fn build_instance(q: &QAInstance, mode: Mode, rationale: &str, answer: &str) -> Result<TrainingInstance> {
    let rationale = flatten(rationale);
    if rationale.is_empty() {
        return Err(Error::invalid(format!("{}: empty rationale", q.id)));
    }
    let answer = flatten(answer);
    let head = format!("{} {} {}", mode.keyword(), rationale, ANSWER_ANCHOR);
    let start = words(&head).count();
    let end = start + words(&answer).count();
    let decoder_target = format!("{head} {answer}");
    let loss_mask = (0..end)
        .map(|i| mode == Mode::Factual || (start..end).contains(&i))
        .collect();
    let inst = TrainingInstance {
        id: q.id.clone(),
        mode,
        encoder_text: encoder_text(mode, q),
        decoder_target,
        answer_span: TokenSpan { start, end },
        loss_mask,
    };
    inst.validate()?;
    Ok(inst)
}

/// Full-sequence target `"[Factual] {r} So the answer is {a*}"`, every
/// token supervised.
pub fn build_factual_instance(q: &QAInstance, rationale: &str, gold: &str) -> Result<TrainingInstance> {
    if gold != q.gold_answer {
        return Err(Error::invalid(format!(
            "{}: factual answer {gold:?} is not the gold answer",
            q.id
        )));
    }
    build_instance(q, Mode::Factual, rationale, gold)
}

/// Target `"[Counterfactual] {r'} So the answer is {a'}"` supervised only on
/// the answer tokens; the rationale is teacher-forced.
pub fn build_counterfactual_instance(
    q: &QAInstance,
    rationale: &str,
    wrong: &str,
) -> Result<TrainingInstance> {
    if wrong == q.gold_answer {
        return Err(Error::invalid(format!(
            "{}: counterfactual answer equals the gold answer",
            q.id
        )));
    }
    if !q.options.iter().any(|o| o == wrong) {
        return Err(Error::invalid(format!(
            "{}: counterfactual answer {wrong:?} is not an option",
            q.id
        )));
    }
    build_instance(q, Mode::Counterfactual, rationale, wrong)
}

/// One teacher generation, as persisted between the rationalize and forge
/// stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleRecord {
    pub id: String,
    pub split: Split,
    pub mode: Mode,
    pub strategy: Strategy,
    pub answer: String,
    pub rationale: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RationaleSet {
    pub records: Vec<RationaleRecord>,
    pub skipped: Vec<String>,
}

const MAX_SKIP_PCT: u32 = 10;

/// Teacher rationales for the gold answers and, with `counterfactual`, for
/// one sampled wrong answer per instance.
///
/// Instances the teacher fails on are skipped with a warning; the run aborts
/// when more than 10% are skipped.
pub fn rationalize_dataset<T, P, R>(
    provider: &P,
    instances: &[QAInstance],
    demos: &[Demonstration],
    cfg: &DecodeConfig,
    counterfactual: bool,
    rng: &mut R,
) -> Result<RationaleSet>
where
    T: Scalar,
    P: LogProbProvider<T>,
    R: Rng,
{
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for q in instances {
        q.validate()?;
        let wrong = if counterfactual {
            Some(perturb_answer(q, PerturbMode::Wrong, rng)?)
        } else {
            None
        };
        let mut answers = vec![(Mode::Factual, q.gold_answer.clone())];
        if let Some(w) = wrong {
            answers.push((Mode::Counterfactual, w.text));
        }
        let mut out = Vec::with_capacity(answers.len());
        let mut failure = None;
        for (mode, answer) in answers {
            match generate_rationale(provider, q, &answer, demos, cfg) {
                Ok(g) if !g.text.trim().is_empty() => out.push(RationaleRecord {
                    id: q.id.clone(),
                    split: q.split,
                    mode,
                    strategy: cfg.strategy,
                    answer,
                    token_count: g.token_ids.len(),
                    rationale: flatten(&g.text),
                }),
                Ok(_) => {
                    failure = Some("teacher produced an empty rationale".to_string());
                    break;
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        match failure {
            Some(msg) => {
                log::warn!("skipping {}: {msg}", q.id);
                skipped.push(q.id.clone());
            }
            None => records.extend(out),
        }
    }
    if skipped.len() * 100 > instances.len() * MAX_SKIP_PCT as usize {
        return Err(Error::TooManyFailures {
            what: "teacher rationalization",
            failed: skipped.len(),
            total: instances.len(),
            limit_pct: MAX_SKIP_PCT,
        });
    }
    Ok(RationaleSet { records, skipped })
}

/// Builds training instances from persisted teacher rationales, in record
/// order.
pub fn forge_from_rationales(
    instances: &[QAInstance],
    records: &[RationaleRecord],
) -> Result<Vec<TrainingInstance>> {
    let by_id: HashMap<&str, &QAInstance> =
        instances.iter().map(|q| (q.id.as_str(), q)).collect();
    records
        .iter()
        .map(|r| {
            let q = by_id
                .get(r.id.as_str())
                .ok_or_else(|| Error::invalid(format!("rationale for unknown instance {}", r.id)))?;
            match r.mode {
                Mode::Factual => build_factual_instance(q, &r.rationale, &r.answer),
                Mode::Counterfactual => build_counterfactual_instance(q, &r.rationale, &r.answer),
            }
        })
        .collect()
}

/// Rationalize then build: one factual instance per input plus one
/// counterfactual instance per input when enabled.
pub fn forge_dataset<T, P, R>(
    provider: &P,
    instances: &[QAInstance],
    demos: &[Demonstration],
    teacher_cfg: &DecodeConfig,
    counterfactual: bool,
    rng: &mut R,
) -> Result<Vec<TrainingInstance>>
where
    T: Scalar,
    P: LogProbProvider<T>,
    R: Rng,
{
    let set = rationalize_dataset(provider, instances, demos, teacher_cfg, counterfactual, rng)?;
    forge_from_rationales(instances, &set.records)
}

pub fn save_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads one JSON record per line; blank lines are skipped. Errors name the
/// 1-based line number.
pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
