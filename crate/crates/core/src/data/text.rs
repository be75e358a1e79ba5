use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rnn::LmBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    /// Whitespace-separated tokens; id 0 is `<unk>`.
    Word,
    /// One token per byte.
    Char,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// A tokenized corpus with contiguous train/valid/test ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct TextCorpus {
    pub tokens: Vec<usize>,
    pub vocab: Vec<String>,
    /// `tokens[..train_end]` train, `[train_end..valid_end]` valid, rest test.
    pub train_end: usize,
    pub valid_end: usize,
}

impl TextCorpus {
    /// Tokenizes `text` with an 80/10/10 split.
    pub fn from_text(text: &str, level: Level) -> Result<Self> {
        let mut vocab: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        if level == Level::Word {
            vocab.push("<unk>".into());
            index.insert("<unk>".into(), 0);
        }
        let mut tokens = Vec::new();
        let mut push = |tok: String, vocab: &mut Vec<String>| {
            let next = vocab.len();
            let id = *index.entry(tok.clone()).or_insert_with(|| {
                vocab.push(tok);
                next
            });
            tokens.push(id);
        };
        match level {
            Level::Word => text.split_whitespace().for_each(|w| push(w.to_string(), &mut vocab)),
            Level::Char => text.bytes().for_each(|b| push((b as char).to_string(), &mut vocab)),
        }
        if tokens.is_empty() {
            return Err(Error::Empty("corpus has no tokens".into()));
        }
        Self::with_splits(tokens, vocab, 0.8, 0.1)
    }

    pub fn with_splits(tokens: Vec<usize>, vocab: Vec<String>, train: f64, valid: f64) -> Result<Self> {
        if !(train > 0.0 && valid >= 0.0 && train + valid <= 1.0) {
            return Err(Error::InvalidArgument(format!("split fractions {train}/{valid}")));
        }
        if let Some(bad) = tokens.iter().find(|t| **t >= vocab.len()) {
            return Err(Error::Data(format!("token id {bad} outside vocabulary of {}", vocab.len())));
        }
        let n = tokens.len();
        let train_end = ((n as f64 * train).round() as usize).min(n);
        let valid_end = ((n as f64 * (train + valid)).round() as usize).clamp(train_end, n);
        Ok(TextCorpus {
            tokens,
            vocab,
            train_end,
            valid_end,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn split(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.tokens[..self.train_end],
            Split::Valid => &self.tokens[self.train_end..self.valid_end],
            Split::Test => &self.tokens[self.valid_end..],
        }
    }

    /// Consecutive windows of `steps` over `batch` parallel columns of a
    /// split. Hidden state may be carried from one window to the next.
    pub fn windows(&self, split: Split, batch: usize, steps: usize) -> Result<Vec<LmBatch>> {
        lm_windows(self.split(split), batch, steps)
    }
}

pub fn load_text(path: &Path, level: Level) -> Result<TextCorpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    TextCorpus::from_text(&text, level)
}

pub fn lm_windows(stream: &[usize], batch: usize, steps: usize) -> Result<Vec<LmBatch>> {
    if batch == 0 || steps == 0 {
        return Err(Error::InvalidArgument("window batch and steps must be positive".into()));
    }
    let col = stream.len() / batch;
    if col < 2 {
        return Err(Error::Empty(format!("{} tokens cannot fill {batch} columns", stream.len())));
    }
    let mut out = Vec::new();
    let mut t0 = 0;
    while t0 + 1 < col {
        let len = steps.min(col - 1 - t0);
        let mut inputs = Vec::with_capacity(len * batch);
        let mut targets = Vec::with_capacity(len * batch);
        for t in 0..len {
            for b in 0..batch {
                inputs.push(stream[b * col + t0 + t]);
                targets.push(stream[b * col + t0 + t + 1]);
            }
        }
        out.push(LmBatch {
            inputs,
            targets,
            batch,
            steps: len,
        });
        t0 += len;
    }
    Ok(out)
}
