//! Synthetic character sources with analytically known entropy rates.

use rand::Rng;

use super::text::TextCorpus;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Grammar {
    /// `abab...`: entropy rate 0.
    Alternating,
    /// i.i.d. uniform over 4 symbols.
    Uniform4,
    /// 6 symbols; each symbol is followed by its successor (mod 6) with
    /// probability `stay`, otherwise by a uniform symbol.
    Markov1 { stay: f64 },
    /// `symbols` symbols; with probability `copy` the next symbol is the
    /// successor of the one `lag` steps back, otherwise uniform.
    Lagged { symbols: usize, lag: usize, copy: f64 },
}

impl Grammar {
    pub fn parse(id: &str) -> Result<Self> {
        match id {
            "alternating" => Ok(Grammar::Alternating),
            "uniform4" => Ok(Grammar::Uniform4),
            "markov1" => Ok(Grammar::Markov1 { stay: 0.7 }),
            "lagged" => Ok(Grammar::Lagged {
                symbols: 8,
                lag: 3,
                copy: 0.85,
            }),
            other => Err(Error::InvalidArgument(format!("unknown grammar `{other}`"))),
        }
    }

    fn symbols(&self) -> usize {
        match *self {
            Grammar::Alternating => 2,
            Grammar::Uniform4 => 4,
            Grammar::Markov1 { .. } => 6,
            Grammar::Lagged { symbols, .. } => symbols,
        }
    }

    /// Entropy rate in nats per symbol.
    pub fn entropy_rate(&self) -> f64 {
        match *self {
            Grammar::Alternating => 0.0,
            Grammar::Uniform4 => 4f64.ln(),
            Grammar::Markov1 { stay } => mixture_entropy(stay, 6),
            Grammar::Lagged { symbols, copy, .. } => mixture_entropy(copy, symbols),
        }
    }

    /// Best achievable perplexity, `exp(entropy rate)`.
    pub fn optimal_perplexity(&self) -> f64 {
        self.entropy_rate().exp()
    }
}

/// Entropy of "one fixed symbol with probability q, else uniform over v".
fn mixture_entropy(q: f64, v: usize) -> f64 {
    let rest = (1.0 - q) / v as f64;
    let top = q + rest;
    let mut h = -top * top.ln();
    if rest > 0.0 {
        h -= (v - 1) as f64 * rest * rest.ln();
    }
    h
}

/// Draws `length` symbols from `grammar` as a char-level corpus.
pub fn synth_lm_corpus<R: Rng + ?Sized>(grammar: Grammar, length: usize, rng: &mut R) -> Result<TextCorpus> {
    if length < 2 {
        return Err(Error::InvalidArgument("synthetic corpus needs at least two symbols".into()));
    }
    let v = grammar.symbols();
    let mut seq: Vec<usize> = Vec::with_capacity(length);
    for t in 0..length {
        let next = match grammar {
            Grammar::Alternating => t % 2,
            Grammar::Uniform4 => rng.gen_range(0..4),
            Grammar::Markov1 { stay } => {
                if t == 0 || !rng.gen_bool(stay) {
                    rng.gen_range(0..v)
                } else {
                    (seq[t - 1] + 1) % v
                }
            }
            Grammar::Lagged { lag, copy, .. } => {
                if t < lag || !rng.gen_bool(copy) {
                    rng.gen_range(0..v)
                } else {
                    (seq[t - lag] + 1) % v
                }
            }
        };
        seq.push(next);
    }
    // Map symbol k to the k-th letter, then re-tokenize so ids follow
    // first occurrence like any loaded corpus.
    let text: String = seq.iter().map(|s| (b'a' + *s as u8) as char).collect();
    TextCorpus::from_text(&text, super::text::Level::Char)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn known_perplexities() {
        assert_eq!(Grammar::Alternating.optimal_perplexity(), 1.0);
        assert!((Grammar::Uniform4.optimal_perplexity() - 4.0).abs() < 1e-12);
        // q = 0 reduces to uniform
        assert!((mixture_entropy(0.0, 6) - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn alternating_corpus() {
        let c = synth_lm_corpus(Grammar::Alternating, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(c.tokens, vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn markov_empirical_entropy_matches() {
        let g = Grammar::Markov1 { stay: 0.7 };
        let c = synth_lm_corpus(g, 200_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let v = c.vocab_size();
        let mut counts = vec![vec![0f64; v]; v];
        for w in c.tokens.windows(2) {
            counts[w[0]][w[1]] += 1.0;
        }
        let total: f64 = counts.iter().flatten().sum();
        let mut h = 0.0;
        for row in &counts {
            let r: f64 = row.iter().sum();
            for x in row.iter().filter(|x| **x > 0.0) {
                h -= x / total * (x / r).ln();
            }
        }
        assert!((h - g.entropy_rate()).abs() < 0.01, "{h} vs {}", g.entropy_rate());
    }

    #[test]
    fn unknown_grammar() {
        assert!(Grammar::parse("nope").is_err());
    }
}
