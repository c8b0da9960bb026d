use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_full_vocab, LogProbProvider, ScoringContext, TokenDistribution};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vocab::Vocab;

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    logprobs: Vec<f64>,
}

/// Wraps a provider with an append-only JSONL cache keyed by
/// `sha256(identity, context text)`.
///
/// Each entry is written with a single `write_all` of one full line under a
/// lock, so concurrent scorers never interleave partial records.
pub struct CachedProvider<T, P> {
    inner: P,
    path: PathBuf,
    entries: Mutex<HashMap<String, Vec<f64>>>,
    file: Mutex<File>,
    _scalar: PhantomData<T>,
}

impl<T: Scalar, P: LogProbProvider<T>> CachedProvider<T, P> {
    pub fn open(inner: P, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(line) {
                    Ok(e) => {
                        entries.insert(e.key, e.logprobs);
                    }
                    // A torn final write from an interrupted run is dropped.
                    Err(err) if i + 1 == last => {
                        log::warn!("{}: ignoring torn cache line {}: {err}", path.display(), i + 1);
                    }
                    Err(err) => {
                        return Err(Error::Parse {
                            path,
                            line: i + 1,
                            message: err.to_string(),
                        })
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(CachedProvider {
            inner,
            path,
            entries: Mutex::new(entries),
            file: Mutex::new(file),
            _scalar: PhantomData,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn key(&self, ctx: &ScoringContext) -> String {
        let mut h = Sha256::new();
        h.update(self.inner.identity().as_bytes());
        h.update([0u8]);
        h.update(ctx.context_text(self.inner.vocab()).as_bytes());
        hex::encode(h.finalize())
    }
}

impl<T: Scalar, P: LogProbProvider<T>> LogProbProvider<T> for CachedProvider<T, P> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn vocab(&self) -> &Vocab {
        self.inner.vocab()
    }

    fn next_token_logprobs(&self, ctx: &ScoringContext) -> Result<TokenDistribution<T>> {
        let key = self.key(ctx);
        if let Some(lp) = self.entries.lock().expect("cache lock").get(&key) {
            let dist = TokenDistribution::from_logprobs(lp.iter().map(|&x| T::lit(x)).collect())?;
            check_full_vocab(&dist, self.vocab())?;
            return Ok(dist);
        }
        let dist = self.inner.next_token_logprobs(ctx)?;
        let entry = CacheEntry {
            key: key.clone(),
            logprobs: dist.as_slice().iter().map(|x| x.as_f64()).collect(),
        };
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        {
            let mut f = self.file.lock().expect("cache file lock");
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.entries
            .lock()
            .expect("cache lock")
            .insert(key, entry.logprobs);
        Ok(dist)
    }
}
