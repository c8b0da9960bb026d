//! A generated yes/no task whose answers are fully determined by a short
//! rationale, plus a toy teacher whose next-token distribution depends on the
//! answer it is asked to justify.
//!
//! Every entity carries one attribute and every attribute has a polarity.
//! Questions ask whether an entity "would"/"could" have some property; the
//! answer is the polarity of the entity's attribute. The cue word agrees with
//! the answer with probability `cue_strength`, so the question alone is only
//! partially informative for entities never seen in training.

use std::collections::HashMap;
use std::marker::PhantomData;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{LogProbProvider, ScoringContext, TokenDistribution};
use crate::error::{Error, Result};
use crate::forge::{Demonstration, QAInstance, Split};
use crate::scalar::Scalar;
use crate::util::{rng_for, sha256_hex};
use crate::vocab::{words, Vocab, NEWLINE};

pub const YES: &str = "yes";
pub const NO: &str = "no";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_entities: usize,
    pub attributes_per_polarity: usize,
    pub n_properties: usize,
    pub cue_strength: f64,
    /// Fraction of entities that only ever appear in the test split.
    pub heldout_fraction: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 0,
            n_entities: 60,
            attributes_per_polarity: 6,
            n_properties: 8,
            cue_strength: 0.75,
            heldout_fraction: 0.3,
            n_train: 600,
            n_dev: 0,
            n_test: 200,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_entities < 2 || self.attributes_per_polarity < 2 || self.n_properties == 0 {
            return Err(Error::Config("synthetic world is too small".into()));
        }
        if !(0.0..=1.0).contains(&self.cue_strength) {
            return Err(Error::Config("cue_strength must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::Config("heldout_fraction must lie in [0, 1)".into()));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("synthetic splits must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entity {
    name: String,
    positive: bool,
    attribute: String,
    /// Attribute of the opposite polarity used when arguing for the wrong
    /// answer.
    counter_attribute: String,
    heldout: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    config: WorldConfig,
    entities: Vec<Entity>,
    by_name: HashMap<String, usize>,
    positive_attributes: Vec<String>,
    negative_attributes: Vec<String>,
    properties: Vec<String>,
}

impl World {
    pub fn generate(config: &WorldConfig) -> Result<World> {
        config.validate()?;
        let mut rng = rng_for(config.seed, "synthetic-world");
        let k = config.attributes_per_polarity;
        let positive_attributes: Vec<String> = (0..k).map(|i| format!("attr{i}")).collect();
        let negative_attributes: Vec<String> = (k..2 * k).map(|i| format!("attr{i}")).collect();
        let properties = (0..config.n_properties).map(|i| format!("prop{i}")).collect();
        let n_heldout = ((config.n_entities as f64) * config.heldout_fraction).round() as usize;
        let mut heldout: Vec<bool> = (0..config.n_entities).map(|i| i < n_heldout).collect();
        heldout.shuffle(&mut rng);
        let width = config.n_entities.to_string().len();
        let entities: Vec<Entity> = heldout
            .into_iter()
            .enumerate()
            .map(|(i, heldout)| {
                let positive = rng.gen_bool(0.5);
                let (own, other) = if positive {
                    (&positive_attributes, &negative_attributes)
                } else {
                    (&negative_attributes, &positive_attributes)
                };
                Entity {
                    name: format!("ent{i:0width$}"),
                    positive,
                    attribute: own[rng.gen_range(0..k)].clone(),
                    counter_attribute: other[rng.gen_range(0..k)].clone(),
                    heldout,
                }
            })
            .collect();
        if entities.iter().all(|e| e.heldout) {
            return Err(Error::Config("every entity is held out".into()));
        }
        let by_name = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), i))
            .collect();
        Ok(World {
            config: config.clone(),
            entities,
            by_name,
            positive_attributes,
            negative_attributes,
            properties,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    fn answer_of(positive: bool) -> &'static str {
        if positive {
            YES
        } else {
            NO
        }
    }

    fn is_positive_attribute(&self, attr: &str) -> Option<bool> {
        if self.positive_attributes.iter().any(|a| a == attr) {
            Some(true)
        } else if self.negative_attributes.iter().any(|a| a == attr) {
            Some(false)
        } else {
            None
        }
    }

    /// `"{entity} is {attribute} ."`
    pub fn rationale_for(entity: &str, attribute: &str) -> String {
        format!("{entity} is {attribute} .")
    }

    fn instance<R: Rng>(&self, rng: &mut R, id: usize, split: Split, pool: &[usize]) -> QAInstance {
        let e = &self.entities[*pool.choose(rng).expect("non-empty pool")];
        let prop = self.properties.choose(rng).expect("non-empty properties");
        let agrees = rng.gen_bool(self.config.cue_strength);
        let cue = if e.positive == agrees { "would" } else { "could" };
        QAInstance {
            id: format!("syn-{id:05}"),
            question: format!("{cue} {} be {prop} ?", e.name),
            options: vec![YES.to_string(), NO.to_string()],
            gold_answer: World::answer_of(e.positive).to_string(),
            human_rationale: Some(World::rationale_for(&e.name, &e.attribute)),
            split,
        }
    }

    /// Train and dev draw from non-held-out entities; test draws from all.
    pub fn dataset(&self) -> Vec<QAInstance> {
        let mut rng = rng_for(self.config.seed, "synthetic-dataset");
        let seen: Vec<usize> = (0..self.entities.len()).filter(|&i| !self.entities[i].heldout).collect();
        let all: Vec<usize> = (0..self.entities.len()).collect();
        let c = &self.config;
        let mut out = Vec::with_capacity(c.n_train + c.n_dev + c.n_test);
        for (split, n, pool) in [
            (Split::Train, c.n_train, &seen),
            (Split::Dev, c.n_dev, &seen),
            (Split::Test, c.n_test, &all),
        ] {
            for _ in 0..n {
                let id = out.len();
                out.push(self.instance(&mut rng, id, split, pool));
            }
        }
        out
    }

    /// Demonstrations built from fresh non-test questions with human
    /// rationales.
    pub fn demonstrations(&self, n: usize) -> Vec<Demonstration> {
        let mut rng = rng_for(self.config.seed, "synthetic-demos");
        let seen: Vec<usize> = (0..self.entities.len()).filter(|&i| !self.entities[i].heldout).collect();
        (0..n)
            .map(|i| {
                let q = self.instance(&mut rng, i, Split::Train, &seen);
                Demonstration::from_instance(&q).expect("synthetic instances carry rationales")
            })
            .collect()
    }

    /// Every word the world can produce, in a fixed order.
    pub fn vocab(&self) -> Vocab {
        let mut words: Vec<String> = vec![NEWLINE.into()];
        for w in ["is", "a", "thing", ".", "would", "could", "be", "?", YES, NO] {
            words.push(w.into());
        }
        words.extend(self.entities.iter().map(|e| e.name.clone()));
        words.extend(self.positive_attributes.iter().cloned());
        words.extend(self.negative_attributes.iter().cloned());
        words.extend(self.properties.iter().cloned());
        Vocab::new(words)
    }

    pub fn teacher<T: Scalar>(&self) -> SyntheticTeacher<T> {
        SyntheticTeacher::new(self.clone())
    }
}

/// Toy teacher over a [`World`].
///
/// After `"{entity} is"` it prefers the generic `"a thing"` regardless of the
/// conditioning answer, so greedy decoding yields uninformative rationales.
/// An attribute consistent with the conditioning answer is the runner-up and
/// gains most from contrasting against a different answer.
#[derive(Debug, Clone)]
pub struct SyntheticTeacher<T> {
    world: World,
    vocab: Vocab,
    identity: String,
    _scalar: PhantomData<fn() -> T>,
}

const PEAK: f64 = 0.6;
const GENERIC: f64 = 0.40;
const GROUNDED: f64 = 0.30;
const CONTRARY: f64 = 0.02;
const UNCOMMITTED: f64 = 0.04;

impl<T: Scalar> SyntheticTeacher<T> {
    pub fn new(world: World) -> Self {
        let vocab = world.vocab();
        let config = serde_json::to_string(&world.config).expect("config serializes");
        let identity = format!("synthetic:{}", &sha256_hex(config.as_bytes())[..16]);
        SyntheticTeacher {
            world,
            vocab,
            identity,
            _scalar: PhantomData,
        }
    }

    fn id(&self, w: &str) -> usize {
        self.vocab.id(w).expect("teacher vocabulary covers world words") as usize
    }

    /// Probability masses for the next token given the query block.
    fn masses(&self, entity: Option<&Entity>, answer: &str, generated: &[&str]) -> Vec<(usize, f64)> {
        let Some(e) = entity else {
            return Vec::new();
        };
        match generated {
            [] => vec![(self.id(&e.name), PEAK)],
            [_] => vec![(self.id("is"), PEAK)],
            [_, _] => {
                let mut m = vec![(self.id("a"), GENERIC)];
                let target = match answer {
                    YES => Some(true),
                    NO => Some(false),
                    _ => None,
                };
                match target {
                    Some(pos) => {
                        let grounded = if pos == e.positive {
                            &e.attribute
                        } else {
                            &e.counter_attribute
                        };
                        m.push((self.id(grounded), GROUNDED));
                        let contrary = if pos {
                            &self.world.negative_attributes
                        } else {
                            &self.world.positive_attributes
                        };
                        m.extend(contrary.iter().map(|a| (self.id(a), CONTRARY)));
                    }
                    None => {
                        for a in self.world.positive_attributes.iter().chain(&self.world.negative_attributes) {
                            m.push((self.id(a), UNCOMMITTED));
                        }
                    }
                }
                m
            }
            [_, _, "a"] => vec![(self.id("thing"), PEAK)],
            [.., w] if *w == "thing" || self.world.is_positive_attribute(w).is_some() => {
                vec![(self.id("."), PEAK)]
            }
            _ => vec![(self.vocab.eos_id() as usize, PEAK)],
        }
    }
}

/// Splits the text after the last `"A: "` into the conditioning answer and
/// the words generated after `". Why?"`.
fn parse_query(text: &str) -> Option<(&str, &str, Vec<&str>)> {
    let q_at = text.rfind("Q: ")?;
    let a_at = q_at + text[q_at..].find("\nA: ")?;
    let question = text[q_at + 3..a_at].lines().next().unwrap_or("");
    let rest = &text[a_at + 4..];
    let why = rest.find(". Why?")?;
    let generated = words(&rest[why + 6..]).filter(|&w| w != NEWLINE).collect();
    Some((question, rest[..why].trim(), generated))
}

impl<T: Scalar> LogProbProvider<T> for SyntheticTeacher<T> {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_token_logprobs(&self, ctx: &ScoringContext) -> Result<TokenDistribution<T>> {
        if ctx.prompt_text.is_empty() {
            return Err(Error::invalid("empty prompt"));
        }
        let text = ctx.context_text(&self.vocab);
        let (question, answer, generated) =
            parse_query(&text).ok_or_else(|| Error::invalid("context has no query block"))?;
        let entity = words(question)
            .find_map(|w| self.world.by_name.get(w))
            .map(|&i| &self.world.entities[i]);
        let masses = self.masses(entity, answer, &generated);

        let v = self.vocab.len();
        let assigned: f64 = masses.iter().map(|&(_, p)| p).sum();
        let rest = (1.0 - assigned) / (v - masses.len()) as f64;
        let mut probs = vec![rest; v];
        for (i, p) in masses {
            probs[i] = p;
        }
        let lp: Vec<T> = probs.iter().map(|&p| T::lit(p.ln())).collect();
        TokenDistribution::from_logprobs(lp)
    }
}
