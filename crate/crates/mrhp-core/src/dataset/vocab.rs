//! Convenience raw-text ingestion: whitespace tokenization with a
//! frequency-filtered vocabulary. Token-id manifests are the canonical path;
//! this exists for quickly turning plain text into them.

use std::collections::BTreeMap;

/// Id 0 is reserved for out-of-vocabulary tokens.
pub const UNKNOWN_ID: u32 = 0;

#[derive(Debug, Clone)]
pub struct Vocabulary {
    ids: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Build from a corpus, keeping tokens that occur at least `min_freq`
    /// times. Ids are assigned in lexicographic order starting at 1, so the
    /// same corpus always produces the same mapping.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for text in texts {
            for token in text.split_whitespace() {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut ids = BTreeMap::new();
        let mut next = 1u32;
        for (token, count) in counts {
            if count >= min_freq {
                ids.insert(token.to_string(), next);
                next += 1;
            }
        }
        Vocabulary { ids }
    }

    /// Total id space: kept tokens plus the unknown slot.
    pub fn size(&self) -> usize {
        self.ids.len() + 1
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNKNOWN_ID)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|t| self.id(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_frequency_filters_rare_tokens() {
        let vocab = Vocabulary::build(["the pot the lid", "the steel pot"], 2);
        assert_ne!(vocab.id("the"), UNKNOWN_ID);
        assert_ne!(vocab.id("pot"), UNKNOWN_ID);
        assert_eq!(vocab.id("lid"), UNKNOWN_ID);
        assert_eq!(vocab.id("steel"), UNKNOWN_ID);
        assert_eq!(vocab.size(), 3);
    }

    #[test]
    fn encode_maps_unknowns_to_zero() {
        let vocab = Vocabulary::build(["a a b b"], 2);
        assert_eq!(vocab.encode("a b zzz"), vec![vocab.id("a"), vocab.id("b"), 0]);
    }

    #[test]
    fn build_is_deterministic() {
        let a = Vocabulary::build(["x y z x y z"], 1);
        let b = Vocabulary::build(["x y z x y z"], 1);
        assert_eq!(a.encode("x y z"), b.encode("x y z"));
    }
}
