//! A small trainable encoder-conditioned decoder.
//!
//! Next-token logits are a sum of learned rows selected by sparse features:
//!
//! ```text
//! logits = bias + pos[i] + prev[t_{i-1}]
//!        + sum_{d in t_<i} bag[d] / sqrt(i) + sum_{e in enc} enc[e] / sqrt(|enc|)
//! ```
//!
//! The decoder therefore sees the encoder tokens, the previous token, its
//! position and everything it has emitted so far, which is all the student
//! needs to condition an answer on its own rationale.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::{Mode, TrainingInstance};
use crate::scalar::{log_softmax_in_place, Scalar};
use crate::student::{LossReport, TrainConfig};
use crate::vocab::Vocab;

/// Anything that scores the next decoder token given encoder ids and the
/// decoder prefix (without `<bos>`).
pub trait Seq2SeqModel<T: Scalar> {
    fn vocab(&self) -> &Vocab;

    fn next_token_logits(&self, encoder: &[u32], prefix: &[u32]) -> Vec<T>;

    /// Row `i` scores `target[i]` given `target[..i]`.
    fn teacher_forced_logits(&self, encoder: &[u32], target: &[u32]) -> Vec<Vec<T>> {
        (0..target.len())
            .map(|i| self.next_token_logits(encoder, &target[..i]))
            .collect()
    }
}

impl<T: Scalar, M: Seq2SeqModel<T> + ?Sized> Seq2SeqModel<T> for &M {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }
    fn next_token_logits(&self, encoder: &[u32], prefix: &[u32]) -> Vec<T> {
        (**self).next_token_logits(encoder, prefix)
    }
    fn teacher_forced_logits(&self, encoder: &[u32], target: &[u32]) -> Vec<Vec<T>> {
        (**self).teacher_forced_logits(encoder, target)
    }
}

/// One tokenized training sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seq2SeqExample {
    pub encoder: Vec<u32>,
    pub target: Vec<u32>,
    pub mask: Vec<bool>,
    pub mode: Mode,
}

impl Seq2SeqExample {
    pub fn validate(&self) -> Result<()> {
        if self.target.is_empty() {
            return Err(Error::invalid("empty target sequence"));
        }
        if self.mask.len() != self.target.len() {
            return Err(Error::invalid(format!(
                "loss mask has {} entries for {} target tokens",
                self.mask.len(),
                self.target.len()
            )));
        }
        if !self.mask.iter().any(|&m| m) {
            return Err(Error::invalid("loss mask selects no target tokens"));
        }
        Ok(())
    }
}

impl Seq2SeqExample {
    /// Tokenizes a training instance. The target gets a trailing `<eos>`,
    /// supervised for factual instances only.
    pub fn from_instance(vocab: &Vocab, inst: &TrainingInstance) -> Result<Self> {
        inst.validate()?;
        let mut target = vocab.encode(&inst.decoder_target);
        target.push(vocab.eos_id());
        let mut mask = inst.loss_mask.clone();
        mask.push(inst.mode == Mode::Factual);
        Ok(Seq2SeqExample {
            encoder: vocab.encode(&inst.encoder_text),
            target,
            mask,
            mode: inst.mode,
        })
    }
}

/// Mean negative log-likelihood over the mask-true positions.
pub fn masked_nll<T: Scalar>(logits: &[Vec<T>], target: &[u32], mask: &[bool]) -> Result<T> {
    if logits.len() != target.len() || mask.len() != target.len() {
        return Err(Error::invalid("logits, target and mask lengths differ"));
    }
    let mut total = T::zero();
    let mut count = 0usize;
    for ((row, &t), &m) in logits.iter().zip(target).zip(mask) {
        if !m {
            continue;
        }
        let mut lp = row.clone();
        log_softmax_in_place(&mut lp);
        let v = lp
            .get(t as usize)
            .copied()
            .ok_or(Error::TokenOutOfSupport(t))?;
        total -= v;
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("loss mask selects no target tokens"));
    }
    Ok(total / T::lit(count as f64))
}

/// Gradient of `scale * masked_nll` with respect to every logit. Rows at
/// mask-false positions are exactly zero.
pub fn masked_nll_grads<T: Scalar>(
    logits: &[Vec<T>],
    target: &[u32],
    mask: &[bool],
    scale: T,
) -> Vec<Vec<T>> {
    let count = mask.iter().filter(|&&m| m).count().max(1);
    let w = scale / T::lit(count as f64);
    logits
        .iter()
        .zip(target)
        .zip(mask)
        .map(|((row, &t), &m)| {
            if !m {
                return vec![T::zero(); row.len()];
            }
            let mut p = row.clone();
            log_softmax_in_place(&mut p);
            for (j, x) in p.iter_mut().enumerate() {
                let prob = x.exp();
                *x = w * (if j == t as usize { prob - T::one() } else { prob });
            }
            p
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct Matrix<T> {
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Param {
    Encoder,
    Prev,
    Bag,
    Pos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    vocab: Vocab,
    max_positions: usize,
}

const FORMAT: &str = "tiny-seq2seq/1";

/// Log-linear sequence-to-sequence model over a word vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TinySeq2Seq<T> {
    vocab: Vocab,
    max_positions: usize,
    encoder_w: Matrix<T>,
    prev_w: Matrix<T>,
    bag_w: Matrix<T>,
    pos_w: Matrix<T>,
    bias: Vec<T>,
}

impl<T: Scalar> TinySeq2Seq<T> {
    /// All-zero parameters: the uniform distribution everywhere.
    pub fn new(vocab: Vocab, max_positions: usize) -> Self {
        let v = vocab.len();
        let p = max_positions.max(1);
        TinySeq2Seq {
            encoder_w: Matrix::zeros(v, v),
            prev_w: Matrix::zeros(v, v),
            bag_w: Matrix::zeros(v, v),
            pos_w: Matrix::zeros(p, v),
            bias: vec![T::zero(); v],
            max_positions: p,
            vocab,
        }
    }

    pub fn max_positions(&self) -> usize {
        self.max_positions
    }

    fn prev_of(&self, prefix: &[u32]) -> usize {
        prefix
            .last()
            .copied()
            .unwrap_or(self.vocab.bos_id()) as usize
    }

    fn param(&self, p: Param) -> &Matrix<T> {
        match p {
            Param::Encoder => &self.encoder_w,
            Param::Prev => &self.prev_w,
            Param::Bag => &self.bag_w,
            Param::Pos => &self.pos_w,
        }
    }

    fn param_mut(&mut self, p: Param) -> &mut Matrix<T> {
        match p {
            Param::Encoder => &mut self.encoder_w,
            Param::Prev => &mut self.prev_w,
            Param::Bag => &mut self.bag_w,
            Param::Pos => &mut self.pos_w,
        }
    }

    /// Sparse rows feeding position `prefix.len()`, with their weights.
    fn active_rows(&self, encoder: &[u32], prefix: &[u32]) -> Vec<(Param, usize, T)> {
        let v = self.vocab.len();
        let clamp = |id: u32| (id as usize).min(v - 1);
        let mut rows = Vec::with_capacity(2 + prefix.len() + encoder.len());
        rows.push((Param::Pos, prefix.len().min(self.max_positions - 1), T::one()));
        rows.push((Param::Prev, clamp(self.prev_of(prefix) as u32), T::one()));
        if !prefix.is_empty() {
            let w = T::one() / T::lit(prefix.len() as f64).sqrt();
            rows.extend(prefix.iter().map(|&d| (Param::Bag, clamp(d), w)));
        }
        if !encoder.is_empty() {
            let w = T::one() / T::lit(encoder.len() as f64).sqrt();
            rows.extend(encoder.iter().map(|&e| (Param::Encoder, clamp(e), w)));
        }
        rows
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let header = Header {
            format: FORMAT.into(),
            vocab: self.vocab.clone(),
            max_positions: self.max_positions,
        };
        std::fs::write(dir.join("model.json"), serde_json::to_vec(&header)?)?;
        let mut out = BufWriter::new(File::create(dir.join("model.bin"))?);
        for m in [&self.encoder_w, &self.prev_w, &self.bag_w, &self.pos_w] {
            for &x in &m.data {
                out.write_all(&x.as_f64().to_le_bytes())?;
            }
        }
        for &x in &self.bias {
            out.write_all(&x.as_f64().to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: Header = serde_json::from_slice(&std::fs::read(dir.join("model.json"))?)?;
        if header.format != FORMAT {
            return Err(Error::Config(format!("unknown model format {}", header.format)));
        }
        let mut model = TinySeq2Seq::new(header.vocab, header.max_positions);
        let mut input = BufReader::new(File::open(dir.join("model.bin"))?);
        let mut buf = [0u8; 8];
        let mut read_into = |xs: &mut [T]| -> Result<()> {
            for x in xs.iter_mut() {
                input.read_exact(&mut buf)?;
                *x = T::lit(f64::from_le_bytes(buf));
            }
            Ok(())
        };
        for p in [Param::Encoder, Param::Prev, Param::Bag, Param::Pos] {
            read_into(&mut model.param_mut(p).data)?;
        }
        read_into(&mut model.bias)?;
        Ok(model)
    }
}

impl<T: Scalar> Seq2SeqModel<T> for TinySeq2Seq<T> {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_token_logits(&self, encoder: &[u32], prefix: &[u32]) -> Vec<T> {
        let mut logits = self.bias.clone();
        for (p, r, w) in self.active_rows(encoder, prefix) {
            for (l, &x) in logits.iter_mut().zip(self.param(p).row(r)) {
                *l += w * x;
            }
        }
        logits
    }
}

/// A fitted model with its loss trajectory.
#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub model: TinySeq2Seq<T>,
    pub steps: Vec<LossReport>,
    pub epochs: Vec<LossReport>,
}

#[derive(Default)]
struct Gradient<T> {
    rows: HashMap<(Param, usize), Vec<T>>,
    bias: Vec<T>,
}

/// Mini-batch SGD on `factual + counterfactual_weight * counterfactual`,
/// where each part is the mean over its instances in the batch of the
/// per-instance masked token NLL.
///
/// Deterministic given `(examples, cfg, seed)`.
pub fn fine_tune<T: Scalar>(
    vocab: Vocab,
    examples: &[Seq2SeqExample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Trained<T>> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    for ex in examples {
        ex.validate()?;
    }
    let v = vocab.len();
    let mut model = TinySeq2Seq::<T>::new(vocab, cfg.max_target_tokens + 1);
    let lr = T::lit(cfg.learning_rate);
    let cf_weight = T::lit(cfg.counterfactual_weight);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut steps = Vec::new();
    let mut epochs = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let first_step = steps.len();
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let n_fact = batch
                .iter()
                .filter(|&&i| examples[i].mode == Mode::Factual)
                .count();
            let n_cf = batch.len() - n_fact;
            let mut grad = Gradient {
                rows: HashMap::new(),
                bias: vec![T::zero(); v],
            };
            let (mut fact_sum, mut cf_sum) = (T::zero(), T::zero());

            for &i in batch {
                let ex = &examples[i];
                let logits = model.teacher_forced_logits(&ex.encoder, &ex.target);
                let loss = masked_nll(&logits, &ex.target, &ex.mask)?;
                let scale = match ex.mode {
                    Mode::Factual => {
                        fact_sum += loss;
                        T::one() / T::lit(n_fact as f64)
                    }
                    Mode::Counterfactual => {
                        cf_sum += loss;
                        cf_weight / T::lit(n_cf as f64)
                    }
                };
                let g = masked_nll_grads(&logits, &ex.target, &ex.mask, scale);
                for (pos, row_grad) in g.iter().enumerate() {
                    if !ex.mask[pos] {
                        continue;
                    }
                    for (b, &x) in grad.bias.iter_mut().zip(row_grad) {
                        *b += x;
                    }
                    for (p, r, w) in model.active_rows(&ex.encoder, &ex.target[..pos]) {
                        let acc = grad
                            .rows
                            .entry((p, r))
                            .or_insert_with(|| vec![T::zero(); v]);
                        for (a, &x) in acc.iter_mut().zip(row_grad) {
                            *a += w * x;
                        }
                    }
                }
            }

            let mean = |sum: T, n: usize| {
                if n == 0 {
                    0.0
                } else {
                    (sum / T::lit(n as f64)).as_f64()
                }
            };
            let report = LossReport::new(mean(fact_sum, n_fact), mean(cf_sum, n_cf));
            if !report.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: report.total,
                });
            }
            steps.push(report);

            for (b, g) in model.bias.iter_mut().zip(&grad.bias) {
                *b -= lr * *g;
            }
            let mut touched: Vec<_> = grad.rows.into_iter().collect();
            touched.sort_by_key(|(k, _)| *k);
            for ((p, r), g) in touched {
                for (x, &d) in model.param_mut(p).row_mut(r).iter_mut().zip(&g) {
                    *x -= lr * d;
                }
            }
        }
        epochs.push(LossReport::mean_of(&steps[first_step..]));
    }
    Ok(Trained {
        model,
        steps,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            learning_rate: 0.5,
            ..TrainConfig::default()
        }
    }

    fn constant_examples(vocab: &Vocab, n: usize) -> Vec<Seq2SeqExample> {
        let k = vocab.id("k").unwrap();
        (0..n)
            .map(|i| {
                let enc = vocab.encode(if i % 2 == 0 { "x y" } else { "y z x" });
                Seq2SeqExample {
                    encoder: enc,
                    target: vec![k, vocab.eos_id()],
                    mask: vec![true, true],
                    mode: Mode::Factual,
                }
            })
            .collect()
    }

    #[test]
    fn zero_model_is_uniform() {
        let vocab = Vocab::new(["a", "b", "c"]);
        let m = TinySeq2Seq::<f64>::new(vocab, 4);
        let logits = m.teacher_forced_logits(&[3, 4], &[5, 3]);
        let nll = masked_nll(&logits, &[5, 3], &[true, true]).unwrap();
        assert!((nll - (6f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn grads_match_finite_differences() {
        let logits = vec![vec![0.3f64, -1.2, 0.8], vec![1.0, 0.0, -0.5], vec![0.1, 0.2, 0.3]];
        let target = [2u32, 0, 1];
        let mask = [true, false, true];
        let g = masked_nll_grads(&logits, &target, &mask, 1.0);
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut plus = logits.clone();
                plus[i][j] += h;
                let mut minus = logits.clone();
                minus[i][j] -= h;
                let fd = (masked_nll(&plus, &target, &mask).unwrap()
                    - masked_nll(&minus, &target, &mask).unwrap())
                    / (2.0 * h);
                assert!((fd - g[i][j]).abs() < 1e-6, "({i},{j}) fd {fd} vs {}", g[i][j]);
            }
        }
        assert!(g[1].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_target_is_learned() {
        let vocab = Vocab::new(["x", "y", "z", "k"]);
        let ex = constant_examples(&vocab, 50);
        let trained = fine_tune::<f64>(vocab.clone(), &ex, &cfg(30), 0).unwrap();
        let lp = probs(&trained.model.next_token_logits(&ex[0].encoder, &[]));
        assert!(lp[vocab.id("k").unwrap() as usize] > 0.98);
        let first = trained.epochs.first().unwrap().total;
        let last = trained.epochs.last().unwrap().total;
        assert!(last < first);
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let vocab = Vocab::new(["x", "y", "z", "k"]);
        let ex = constant_examples(&vocab, 50);
        let a = fine_tune::<f32>(vocab.clone(), &ex, &cfg(3), 0).unwrap();
        let b = fine_tune::<f32>(vocab.clone(), &ex, &cfg(3), 0).unwrap();
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn rejects_bad_training_sets() {
        let vocab = Vocab::new(["k"]);
        assert!(fine_tune::<f64>(vocab.clone(), &[], &cfg(1), 0).is_err());
        let bad = Seq2SeqExample {
            encoder: vec![],
            target: vec![3, 2],
            mask: vec![true],
            mode: Mode::Factual,
        };
        assert!(fine_tune::<f64>(vocab, &[bad], &cfg(1), 0).is_err());
    }

    #[test]
    fn counterfactual_masked_positions_get_no_update() {
        // Only the last target position carries loss: the position row for
        // the rationale slot must stay untouched.
        let vocab = Vocab::new(["r", "a"]);
        let ex = Seq2SeqExample {
            encoder: vec![],
            target: vec![3, 4],
            mask: vec![false, true],
            mode: Mode::Counterfactual,
        };
        let trained = fine_tune::<f64>(vocab, &[ex], &cfg(2), 0).unwrap();
        assert!(trained.model.pos_w.row(0).iter().all(|&x| x == 0.0));
        assert!(trained.model.pos_w.row(1).iter().any(|&x| x != 0.0));
        assert!(trained.steps.iter().all(|s| s.factual_loss == 0.0));
    }

    #[test]
    fn save_load_round_trip() {
        let vocab = Vocab::new(["x", "y", "z", "k"]);
        let ex = constant_examples(&vocab, 8);
        let trained = fine_tune::<f64>(vocab, &ex, &cfg(2), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        trained.model.save(dir.path()).unwrap();
        let back = TinySeq2Seq::<f64>::load(dir.path()).unwrap();
        assert_eq!(back, trained.model);
    }

    fn probs(logits: &[f64]) -> Vec<f64> {
        let mut lp = logits.to_vec();
        log_softmax_in_place(&mut lp);
        lp.iter().map(|x| x.exp()).collect()
    }
}

/// Fits a fresh model on forged instances over a vocabulary built from
/// their texts.
pub fn fine_tune_seq2seq<T: Scalar>(
    train: &[TrainingInstance],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Trained<T>> {
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let vocab = Vocab::from_texts(
        train
            .iter()
            .flat_map(|t| [t.encoder_text.as_str(), t.decoder_target.as_str()]),
    );
    let examples = train
        .iter()
        .map(|t| Seq2SeqExample::from_instance(&vocab, t))
        .collect::<Result<Vec<_>>>()?;
    fine_tune(vocab, &examples, cfg, seed)
}
