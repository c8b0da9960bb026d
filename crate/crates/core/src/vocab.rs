//! Word-level vocabulary used by both the teacher providers and the student.
//!
//! Text is split on spaces and tabs; every `'\n'` is its own token so that a
//! blank line (the prompt delimiter) survives a decode round trip.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const NEWLINE: &str = "\n";
pub const FACTUAL_KEYWORD: &str = "[Factual]";
pub const COUNTERFACTUAL_KEYWORD: &str = "[Counterfactual]";

const RESERVED: [&str; 3] = [UNK, BOS, EOS];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Reserved tokens first, then `words` in first-seen order.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for w in words {
            let w = w.as_ref();
            if !index.contains_key(w) {
                index.insert(w.to_string(), tokens.len() as u32);
                tokens.push(w.to_string());
            }
        }
        Vocab { tokens, index }
    }

    /// Sorted word set of all `texts`, so the id assignment does not depend on
    /// the order texts were seen in.
    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = BTreeSet::new();
        for t in texts {
            for w in words(t.as_ref()) {
                set.insert(w.to_string());
            }
        }
        Vocab::new(set)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn unk_id(&self) -> u32 {
        0
    }

    pub fn bos_id(&self) -> u32 {
        1
    }

    pub fn eos_id(&self) -> u32 {
        2
    }

    /// Reserved markers and the two control keywords.
    pub fn is_special(&self, id: u32) -> bool {
        match self.token(id) {
            Some(t) => {
                RESERVED.contains(&t) || t == FACTUAL_KEYWORD || t == COUNTERFACTUAL_KEYWORD
            }
            None => false,
        }
    }

    /// Ids eligible as random replacements: everything except specials.
    pub fn ordinary_ids(&self) -> Vec<u32> {
        (0..self.len() as u32).filter(|&i| !self.is_special(i)).collect()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        words(text)
            .map(|w| self.id(w).unwrap_or_else(|| self.unk_id()))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).unwrap_or(UNK);
            if tok == NEWLINE {
                out.push('\n');
            } else {
                if !out.is_empty() && !out.ends_with('\n') {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
        out
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = String;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(format!("vocabulary must start with {RESERVED:?}"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(format!("duplicate token {t:?}"));
            }
        }
        Ok(Vocab { tokens, index })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Split text into word tokens; each newline becomes a `"\n"` token.
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    let mut out = Vec::new();
    let mut lines = text.split('\n').peekable();
    while let Some(line) = lines.next() {
        out.extend(line.split([' ', '\t', '\r']).filter(|w| !w.is_empty()));
        if lines.peek().is_some() {
            out.push(NEWLINE);
        }
    }
    out.into_iter()
}

/// Collapse runs of spaces so that `decode(encode(s)) == normalize_spaces(s)`
/// for texts made of known words.
pub fn normalize_spaces(text: &str) -> String {
    let ws: Vec<&str> = words(text).collect();
    let mut out = String::new();
    for w in ws {
        if w == NEWLINE {
            out.push('\n');
        } else {
            if !out.is_empty() && !out.ends_with('\n') {
                out.push(' ');
            }
            out.push_str(w);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocab::new(["a", "b", "a"]);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id(UNK), Some(v.unk_id()));
        assert_eq!(v.id(BOS), Some(v.bos_id()));
        assert_eq!(v.id(EOS), Some(v.eos_id()));
        assert_eq!(v.id("b"), Some(4));
    }

    #[test]
    fn newline_tokens_round_trip() {
        let v = Vocab::from_texts(["x y\n\nQ: z"]);
        let ids = v.encode("x y\n\nQ: z");
        assert_eq!(ids.len(), 6);
        assert_eq!(v.decode(&ids), "x y\n\nQ: z");
        assert_eq!(v.decode(&v.encode("x  y ")), "x y");
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let v = Vocab::new(["a"]);
        assert_eq!(v.encode("a zz"), vec![3, v.unk_id()]);
    }

    #[test]
    fn keywords_are_special() {
        let v = Vocab::new([FACTUAL_KEYWORD, "w"]);
        assert!(v.is_special(v.id(FACTUAL_KEYWORD).unwrap()));
        assert_eq!(v.ordinary_ids(), vec![v.id("w").unwrap()]);
    }

    #[test]
    fn serde_rejects_bad_header() {
        let r: Result<Vocab, _> = serde_json::from_str(r#"["a","b","c"]"#);
        assert!(r.is_err());
        let v = Vocab::new(["q"]);
        let back: Vocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
    }
}
