//! Config-driven orchestration: rationalize, forge, train across seeds,
//! evaluate. Every command writes under `output_dir` and refreshes a
//! manifest index of artifact hashes keyed by the config hash.
//!
//! Layout:
//!
//! ```text
//! {output_dir}/manifest.json
//! {output_dir}/rationales.jsonl
//! {output_dir}/forged.jsonl
//! {output_dir}/{run_id}/train_manifest.json
//! {output_dir}/{run_id}/{seed}/model.json, model.bin, manifest.json, eval.json
//! {output_dir}/{run_id}/eval_summary.json, eval_table.txt, perturb_analysis.json
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::seq2seq::TinySeq2Seq;
use crate::backend::{
    BigramProvider, CachedProvider, LogProbProvider, ProviderConfig, ProviderKind, RemoteProvider, ToyModel,
};
use crate::decoder::DecodeConfig;
use crate::error::{Error, Result};
use crate::eval::{
    accuracy, compute_las, refinement_gain, render_table, sensitivity, train_simulator, EvalReport, LabelSource,
    Labels, SimItem, SimulatorPair,
};
use crate::forge::{
    forge_from_rationales, load_jsonl, rationalize_dataset, save_jsonl, validate_dataset, Demonstration, Mode,
    QAInstance, RationaleRecord, Split, TrainingInstance,
};
use crate::student::{predict, train_student, LossReport, TrainConfig, INVALID_ANSWER};
use crate::synthetic::World;
use crate::util::{rng_for, sha256_hex};

pub type Teacher = Box<dyn LogProbProvider<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    /// QAInstance JSON lines, as written by `ingest` or `synth`.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub provider: ProviderConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default = "default_num_demos")]
    pub num_demos: usize,
    /// Demonstration JSON lines; defaults to the first training instances
    /// that carry a human rationale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demos_path: Option<PathBuf>,
    /// Also rationalize one sampled wrong answer per training instance.
    #[serde(default = "yes")]
    pub counterfactual: bool,
}

fn default_num_demos() -> usize {
    3
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_simulator")]
    pub simulator: TrainConfig,
    #[serde(default = "default_fraction")]
    pub perturbation_fraction: f64,
    #[serde(default = "default_fractions")]
    pub analysis_fractions: Vec<f64>,
}

pub fn default_simulator() -> TrainConfig {
    TrainConfig {
        max_target_tokens: 8,
        ..TrainConfig::default()
    }
}

fn default_fraction() -> f64 {
    0.5
}

fn default_fractions() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            simulator: default_simulator(),
            perturbation_fraction: default_fraction(),
            analysis_fractions: default_fractions(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_run_id")]
    pub run_id: String,
    pub dataset: DatasetConfig,
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub student: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

fn default_run_id() -> String {
    "run".into()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    /// Checks settings and that every referenced input path exists.
    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(Error::Config(format!("run_id {:?} is not a plain name", self.run_id)));
        }
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} {} does not exist", p.display())))
            }
        };
        must_exist(&self.dataset.path, "dataset path")?;
        if let Some(p) = &self.teacher.demos_path {
            must_exist(p, "demos_path")?;
        }
        if let Some(ToyModel::Bigram { corpus_path, .. }) = &self.teacher.provider.toy {
            must_exist(corpus_path, "corpus_path")?;
        }
        if let Some(p) = &self.teacher.provider.vocab_path {
            must_exist(p, "vocab_path")?;
        }
        self.teacher.provider.validate()?;
        self.teacher.decode.validate()?;
        self.student.validate()?;
        self.eval.simulator.validate()?;
        if self.teacher.num_demos == 0 {
            return Err(Error::Config("num_demos must be at least 1".into()));
        }
        let frac_ok = |f: f64| (0.0..=1.0).contains(&f);
        if !frac_ok(self.eval.perturbation_fraction) || !self.eval.analysis_fractions.iter().all(|&f| frac_ok(f)) {
            return Err(Error::Config("perturbation fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// sha256 of the canonical JSON form. Credentials never take part.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.run_dir().join(seed.to_string())
    }

    pub fn rationales_path(&self) -> PathBuf {
        self.output_dir.join("rationales.jsonl")
    }

    pub fn forged_path(&self) -> PathBuf {
        self.output_dir.join("forged.jsonl")
    }
}

/// Instantiates the configured teacher, wrapped in the response cache when
/// a cache path is set.
pub fn build_provider(cfg: &ProviderConfig) -> Result<Teacher> {
    let cfg = cfg.clone().with_env();
    cfg.validate()?;
    let base: Teacher = match cfg.kind {
        ProviderKind::LocalToy => match cfg.toy.as_ref().expect("validated") {
            ToyModel::Bigram { corpus_path, smoothing } => {
                let corpus = std::fs::read_to_string(corpus_path)?;
                Box::new(BigramProvider::<f64>::from_corpus(&corpus, *smoothing)?)
            }
            ToyModel::Synthetic { world } => Box::new(World::generate(world)?.teacher::<f64>()),
        },
        ProviderKind::Remote => {
            let vocab = RemoteProvider::<f64>::load_vocab(cfg.vocab_path.as_deref().expect("validated"))?;
            Box::new(RemoteProvider::<f64>::new(
                cfg.endpoint.clone().expect("validated"),
                cfg.credentials.clone(),
                vocab,
                Duration::from_secs_f64(cfg.request_timeout),
            ))
        }
    };
    Ok(match &cfg.cache_path {
        Some(p) => Box::new(CachedProvider::open(base, p)?),
        None => base,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestIndex {
    pub config_hash: String,
    /// Path relative to `output_dir` → sha256 of the file.
    pub artifacts: BTreeMap<String, String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// Records the hashes of `written` in `{output_dir}/manifest.json`. Entries
/// from a different config are discarded.
fn index_artifacts(cfg: &RunConfig, written: &[PathBuf]) -> Result<()> {
    let path = cfg.output_dir.join("manifest.json");
    let hash = cfg.hash();
    let mut index = match read_json::<ManifestIndex>(&path) {
        Ok(m) if m.config_hash == hash => m,
        _ => ManifestIndex {
            config_hash: hash,
            artifacts: BTreeMap::new(),
        },
    };
    for p in written {
        let rel = p
            .strip_prefix(&cfg.output_dir)
            .unwrap_or(p)
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        index.artifacts.insert(rel, sha256_hex(&std::fs::read(p)?));
    }
    write_json(&path, &index)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<QAInstance>> {
    let data: Vec<QAInstance> = load_jsonl(&cfg.dataset.path)?;
    validate_dataset(&data)?;
    Ok(data)
}

fn dataset_hash(cfg: &RunConfig) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(&cfg.dataset.path)?))
}

fn split(data: &[QAInstance], s: Split) -> Vec<QAInstance> {
    data.iter().filter(|q| q.split == s).cloned().collect()
}

pub fn load_demos(cfg: &RunConfig, data: &[QAInstance]) -> Result<Vec<Demonstration>> {
    let demos: Vec<Demonstration> = match &cfg.teacher.demos_path {
        Some(p) => load_jsonl(p)?,
        None => data
            .iter()
            .filter(|q| q.split == Split::Train)
            .filter_map(Demonstration::from_instance)
            .collect(),
    };
    let demos: Vec<_> = demos.into_iter().take(cfg.teacher.num_demos).collect();
    if demos.is_empty() {
        return Err(Error::Config(
            "no demonstrations: set teacher.demos_path or include human rationales in the training split".into(),
        ));
    }
    Ok(demos)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalizeSummary {
    pub records: usize,
    pub skipped: Vec<String>,
}

/// Teacher rationales for the training split (factual, plus counterfactual
/// when enabled) and gold-answer rationales for the test split, which serve
/// as oracle rationales during evaluation.
pub fn cmd_rationalize(cfg: &RunConfig) -> Result<RationalizeSummary> {
    cfg.validate()?;
    let teacher = build_provider(&cfg.teacher.provider)?;
    cmd_rationalize_with(cfg, &teacher)
}

pub fn cmd_rationalize_with<P: LogProbProvider<f64>>(cfg: &RunConfig, teacher: &P) -> Result<RationalizeSummary> {
    let data = load_dataset(cfg)?;
    let demos = load_demos(cfg, &data)?;
    let decode = &cfg.teacher.decode;
    let mut rng = rng_for(decode.seed, "counterfactual-answers");
    let train = rationalize_dataset(
        teacher,
        &split(&data, Split::Train),
        &demos,
        decode,
        cfg.teacher.counterfactual,
        &mut rng,
    )?;
    let test = rationalize_dataset(teacher, &split(&data, Split::Test), &demos, decode, false, &mut rng)?;
    let mut records = train.records;
    records.extend(test.records);
    let mut skipped = train.skipped;
    skipped.extend(test.skipped);
    save_jsonl(&cfg.rationales_path(), &records)?;
    index_artifacts(cfg, &[cfg.rationales_path()])?;
    Ok(RationalizeSummary {
        records: records.len(),
        skipped,
    })
}

pub fn load_rationales(cfg: &RunConfig) -> Result<Vec<RationaleRecord>> {
    let path = cfg.rationales_path();
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run the rationalize command first",
            path.display()
        )));
    }
    load_jsonl(&path)
}

/// Builds training instances from the training-split rationales.
pub fn cmd_forge(cfg: &RunConfig) -> Result<Vec<TrainingInstance>> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let records: Vec<RationaleRecord> = load_rationales(cfg)?
        .into_iter()
        .filter(|r| r.split == Split::Train)
        .collect();
    let forged = forge_from_rationales(&data, &records)?;
    save_jsonl(&cfg.forged_path(), &forged)?;
    index_artifacts(cfg, &[cfg.forged_path()])?;
    Ok(forged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub config_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
    pub steps: usize,
    pub epochs: Vec<LossReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum SeedOutcome {
    Ok { final_loss: LossReport },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub dataset_hash: String,
    pub seeds: BTreeMap<u64, SeedOutcome>,
    /// Mean of the final-epoch losses over successful seeds.
    pub mean_final_loss: Option<LossReport>,
    pub failed_seeds: Vec<u64>,
}

/// Trains one student per configured seed. A failing seed is recorded in
/// the run manifest and does not stop the others.
pub fn cmd_train(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let path = cfg.forged_path();
    if !path.exists() {
        return Err(Error::Config(format!("{} not found; run the forge command first", path.display())));
    }
    let forged: Vec<TrainingInstance> = load_jsonl(&path)?;
    let config_hash = cfg.hash();
    let dataset_hash = dataset_hash(cfg)?;
    let mut seeds = BTreeMap::new();
    let mut written = Vec::new();
    for &seed in &cfg.student.seeds {
        let dir = cfg.seed_dir(seed);
        let outcome = train_student::<f64>(&forged, &cfg.student, seed).and_then(|trained| {
            trained.model.save(&dir)?;
            let manifest = SeedManifest {
                config_hash: config_hash.clone(),
                dataset_hash: dataset_hash.clone(),
                seed,
                steps: trained.steps.len(),
                epochs: trained.epochs.clone(),
            };
            write_json(&dir.join("manifest.json"), &manifest)?;
            written.extend(["model.json", "model.bin", "manifest.json"].map(|f| dir.join(f)));
            Ok(*trained.epochs.last().expect("at least one epoch"))
        });
        let outcome = match outcome {
            Ok(final_loss) => SeedOutcome::Ok { final_loss },
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                SeedOutcome::Failed { error: e.to_string() }
            }
        };
        seeds.insert(seed, outcome);
    }
    let finals: Vec<LossReport> = seeds
        .values()
        .filter_map(|o| match o {
            SeedOutcome::Ok { final_loss } => Some(*final_loss),
            SeedOutcome::Failed { .. } => None,
        })
        .collect();
    let manifest = RunManifest {
        config_hash,
        dataset_hash,
        failed_seeds: seeds
            .iter()
            .filter(|(_, o)| matches!(o, SeedOutcome::Failed { .. }))
            .map(|(s, _)| *s)
            .collect(),
        mean_final_loss: (!finals.is_empty()).then(|| LossReport::mean_of(&finals)),
        seeds,
    };
    let path = cfg.run_dir().join("train_manifest.json");
    write_json(&path, &manifest)?;
    written.push(path);
    index_artifacts(cfg, &written)?;
    Ok(manifest)
}

pub fn load_student(cfg: &RunConfig, seed: u64) -> Result<TinySeq2Seq<f64>> {
    let dir = cfg.seed_dir(seed);
    if !dir.join("model.json").exists() {
        return Err(Error::Config(format!(
            "no checkpoint for seed {seed} in {}; run the train command first",
            dir.display()
        )));
    }
    TinySeq2Seq::load(&dir)
}

/// Teacher rationales for the gold answers, by instance id.
fn factual_rationales(records: &[RationaleRecord], s: Split) -> BTreeMap<String, String> {
    records
        .iter()
        .filter(|r| r.split == s && r.mode == Mode::Factual)
        .map(|r| (r.id.clone(), r.rationale.clone()))
        .collect()
}

fn sim_items(qs: &[&QAInstance], rationales: &[String]) -> Vec<SimItem> {
    qs.iter()
        .zip(rationales)
        .map(|(q, r)| SimItem {
            question: q.question.clone(),
            options: q.options.clone(),
            rationale: r.clone(),
        })
        .collect()
}

/// Trains a with/without pair on `train` and scores it on `test`.
fn las_for(
    train: (Vec<SimItem>, Labels),
    test: (Vec<SimItem>, Labels),
    sim_cfg: &TrainConfig,
    seed: u64,
) -> Result<crate::eval::LasReport> {
    let pair = SimulatorPair {
        with_rationale: train_simulator::<f64>(&train.0, &train.1, true, sim_cfg, seed)?,
        without_rationale: train_simulator::<f64>(&train.0, &train.1, false, sim_cfg, seed)?,
        label_source: train.1.source,
    };
    compute_las(&pair, &test.0, &test.1)
}

/// Student-faithfulness simulator data: the student's own rationales and
/// predictions; items predicted as invalid are left out.
fn student_sim_data(
    model: &TinySeq2Seq<f64>,
    qs: &[QAInstance],
    max_target_tokens: usize,
) -> (Vec<SimItem>, Labels) {
    let mut items = Vec::new();
    let mut values = Vec::new();
    for q in qs {
        let p = predict(model, q, max_target_tokens);
        if p.answer == INVALID_ANSWER {
            continue;
        }
        items.push(SimItem {
            question: q.question.clone(),
            options: q.options.clone(),
            rationale: p.rationale,
        });
        values.push(p.answer);
    }
    (
        items,
        Labels {
            source: LabelSource::StudentPrediction,
            values,
        },
    )
}

/// Teacher-consistency simulator data: teacher rationales with gold labels.
fn teacher_sim_data(qs: &[QAInstance], rationales: &BTreeMap<String, String>) -> (Vec<SimItem>, Labels) {
    let kept: Vec<&QAInstance> = qs.iter().filter(|q| rationales.contains_key(&q.id)).collect();
    let rs: Vec<String> = kept.iter().map(|q| rationales[&q.id].clone()).collect();
    (
        sim_items(&kept, &rs),
        Labels {
            source: LabelSource::Gold,
            values: kept.iter().map(|q| q.gold_answer.clone()).collect(),
        },
    )
}

/// All metrics for one trained student.
pub fn evaluate_student(
    cfg: &RunConfig,
    model: &TinySeq2Seq<f64>,
    seed: u64,
    data: &[QAInstance],
    records: &[RationaleRecord],
) -> Result<EvalReport> {
    let train = split(data, Split::Train);
    let test = split(data, Split::Test);
    if test.is_empty() {
        return Err(Error::Config("dataset has no test split".into()));
    }
    let oracle = factual_rationales(records, Split::Test);
    if let Some(q) = test.iter().find(|q| !oracle.contains_key(&q.id)) {
        return Err(Error::Config(format!(
            "no oracle rationale for test item {}; rerun the rationalize command so the test split is covered",
            q.id
        )));
    }
    let max = cfg.student.max_target_tokens;
    let preds: Vec<String> = test.iter().map(|q| predict(model, q, max).answer).collect();
    let gold: Vec<String> = test.iter().map(|q| q.gold_answer.clone()).collect();
    let acc = accuracy(&preds, &gold)?;

    let sim = &cfg.eval.simulator;
    let student_las = las_for(
        student_sim_data(model, &train, max),
        student_sim_data(model, &test, max),
        sim,
        seed,
    )?;
    let teacher_las = las_for(
        teacher_sim_data(&train, &factual_rationales(records, Split::Train)),
        teacher_sim_data(&test, &oracle),
        sim,
        seed,
    )?;

    let mut rng = rng_for(seed, "sensitivity");
    let sens = sensitivity(model, &test, cfg.eval.perturbation_fraction, max, &mut rng)?;

    let refine = refinement_gain(model, &test, &oracle, max)?;

    Ok(EvalReport {
        config_hash: cfg.hash(),
        seed,
        n: test.len(),
        accuracy: acc,
        las: student_las.las,
        las_with: student_las.acc_with,
        las_without: student_las.acc_without,
        teacher_las: teacher_las.las,
        teacher_las_with: teacher_las.acc_with,
        teacher_las_without: teacher_las.acc_without,
        sensitivity: sens.sensitivity,
        sensitivity_excluded: sens.excluded,
        refinement_gain: refine.refinement_gain,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub reports: Vec<EvalReport>,
    pub failed_seeds: BTreeMap<u64, String>,
    pub mean_accuracy: Option<f64>,
    pub mean_las: Option<f64>,
    pub mean_teacher_las: Option<f64>,
    pub mean_sensitivity: Option<f64>,
    pub mean_refinement_gain: Option<f64>,
}

fn mean_of(reports: &[EvalReport], f: fn(&EvalReport) -> f64) -> Option<f64> {
    (!reports.is_empty()).then(|| reports.iter().map(f).sum::<f64>() / reports.len() as f64)
}

/// Evaluates every seed's checkpoint. Seeds without a usable checkpoint are
/// listed as gaps in the summary.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvalSummary> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let records = load_rationales(cfg)?;
    let mut reports = Vec::new();
    let mut failed = BTreeMap::new();
    let mut written = Vec::new();
    for &seed in &cfg.student.seeds {
        let result = load_student(cfg, seed).and_then(|m| evaluate_student(cfg, &m, seed, &data, &records));
        match result {
            Ok(report) => {
                let path = cfg.seed_dir(seed).join("eval.json");
                write_json(&path, &report)?;
                written.push(path);
                reports.push(report);
            }
            Err(e @ Error::Config(_)) if reports.is_empty() && cfg.student.seeds.len() == 1 => return Err(e),
            Err(e) => {
                log::warn!("seed {seed}: evaluation failed: {e}");
                failed.insert(seed, e.to_string());
            }
        }
    }
    let summary = EvalSummary {
        config_hash: cfg.hash(),
        mean_accuracy: mean_of(&reports, |r| r.accuracy),
        mean_las: mean_of(&reports, |r| r.las),
        mean_teacher_las: mean_of(&reports, |r| r.teacher_las),
        mean_sensitivity: mean_of(&reports, |r| r.sensitivity),
        mean_refinement_gain: mean_of(&reports, |r| r.refinement_gain),
        reports,
        failed_seeds: failed,
    };
    let dir = cfg.run_dir();
    write_json(&dir.join("eval_summary.json"), &summary)?;
    let table = format!("config {}\n{}", summary.config_hash, render_table(&summary.reports));
    std::fs::write(dir.join("eval_table.txt"), table)?;
    written.extend([dir.join("eval_summary.json"), dir.join("eval_table.txt")]);
    index_artifacts(cfg, &written)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbPoint {
    pub fraction: f64,
    pub sensitivity: f64,
    pub acc_forced: f64,
    pub acc_perturbed: f64,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbAnalysis {
    pub config_hash: String,
    pub by_seed: BTreeMap<u64, Vec<PerturbPoint>>,
}

/// Sensitivity at each configured perturbation fraction, per seed.
pub fn cmd_perturb_analysis(cfg: &RunConfig) -> Result<PerturbAnalysis> {
    cfg.validate()?;
    let test = split(&load_dataset(cfg)?, Split::Test);
    let mut by_seed = BTreeMap::new();
    for &seed in &cfg.student.seeds {
        let model = load_student(cfg, seed)?;
        let mut points = Vec::new();
        for &fraction in &cfg.eval.analysis_fractions {
            let mut rng = rng_for(seed, &format!("perturb-analysis-{fraction}"));
            let s = sensitivity(&model, &test, fraction, cfg.student.max_target_tokens, &mut rng)?;
            points.push(PerturbPoint {
                fraction,
                sensitivity: s.sensitivity,
                acc_forced: s.acc_forced,
                acc_perturbed: s.acc_perturbed,
                excluded: s.excluded,
            });
        }
        by_seed.insert(seed, points);
    }
    let out = PerturbAnalysis {
        config_hash: cfg.hash(),
        by_seed,
    };
    let path = cfg.run_dir().join("perturb_analysis.json");
    write_json(&path, &out)?;
    index_artifacts(cfg, &[path])?;
    Ok(out)
}

/// Writes QAInstance JSON lines; identical input gives identical bytes.
pub fn write_instances(path: &Path, instances: &[QAInstance]) -> Result<()> {
    save_jsonl(path, instances)
}

/// Rationalize, forge, train and evaluate in sequence.
pub fn run_all(cfg: &RunConfig) -> Result<EvalSummary> {
    cmd_rationalize(cfg)?;
    cmd_forge(cfg)?;
    cmd_train(cfg)?;
    cmd_evaluate(cfg)
}

/// Applies `key=value` overrides to a config using dotted TOML paths, e.g.
/// `student.epochs=3` or `teacher.decode.strategy="greedy"`. Values are
/// parsed as TOML and fall back to plain strings.
pub fn apply_overrides(cfg: &RunConfig, overrides: &[String]) -> Result<RunConfig> {
    if overrides.is_empty() {
        return Ok(cfg.clone());
    }
    let mut doc: toml::Table = toml::from_str(&cfg.to_toml()?).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        let value = toml::from_str::<HashMap<String, toml::Value>>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut m| m.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let parts: Vec<&str> = key.trim().split('.').collect();
        let (last, parents) = parts.split_last().expect("split yields one part");
        let mut table = &mut doc;
        for p in parents {
            table = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override path {key:?} crosses a non-table value")))?;
        }
        table.insert(last.to_string(), value);
    }
    let text = toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))?;
    RunConfig::from_toml(&text)
}
