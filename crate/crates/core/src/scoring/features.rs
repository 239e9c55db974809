//! Text and tabular featurization for the trainable scorer.

use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::num::Scalar;
use crate::tokenize;

/// Start times are normalized by this cap.
pub const START_TIME_CAP_S: f64 = 180.0;
pub const DEFAULT_HASH_DIM: u32 = 1 << 18;
pub const DEFAULT_MAX_NGRAM: usize = 3;
pub const DEFAULT_MAX_TOKENS: usize = 150;

/// Which tabular features are visible to the model. Masked features are fed as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub start_time: bool,
    pub side: bool,
}

impl FeatureSet {
    pub const TEXT_ONLY: FeatureSet = FeatureSet { start_time: false, side: false };
    pub const TEXT_START: FeatureSet = FeatureSet { start_time: true, side: false };
    pub const TEXT_SIDE: FeatureSet = FeatureSet { start_time: false, side: true };
    pub const ALL: FeatureSet = FeatureSet { start_time: true, side: true };

    pub fn label(self) -> &'static str {
        match (self.start_time, self.side) {
            (false, false) => "text",
            (true, false) => "text+start_time",
            (false, true) => "text+call_side",
            (true, true) => "text+start_time+call_side",
        }
    }
}

impl Default for FeatureSet {
    fn default() -> Self {
        FeatureSet::ALL
    }
}

/// Utterance start time and call side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularFeatures<T> {
    /// `start_time_s / 180`, clamped to [0, 1].
    pub start_time: T,
    /// 1 when the speaker is the call initiator.
    pub initiator: T,
}

impl<T: Scalar> TabularFeatures<T> {
    pub const WIDTH: usize = 2;

    pub fn new(start_time_s: f64, is_initiator: bool) -> Self {
        let t = if start_time_s.is_finite() {
            (start_time_s / START_TIME_CAP_S).clamp(0.0, 1.0)
        } else {
            1.0
        };
        TabularFeatures {
            start_time: T::lit(t),
            initiator: if is_initiator { T::one() } else { T::zero() },
        }
    }

    pub fn masked(self, set: FeatureSet) -> [T; 2] {
        [
            if set.start_time { self.start_time } else { T::zero() },
            if set.side { self.initiator } else { T::zero() },
        ]
    }
}

/// Hashed word n-gram featurizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub hash_dim: u32,
    pub max_ngram: usize,
    pub max_tokens: usize,
}

impl Default for Featurizer {
    fn default() -> Self {
        Featurizer {
            hash_dim: DEFAULT_HASH_DIM,
            max_ngram: DEFAULT_MAX_NGRAM,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl Featurizer {
    /// Lowercased word tokens, truncated to `max_tokens`.
    pub fn tokens(&self, text: &str) -> Vec<String> {
        tokenize::words(text)
            .take(self.max_tokens)
            .map(str::to_lowercase)
            .collect()
    }

    /// One bucket per n-gram occurrence (duplicates kept for mean pooling).
    pub fn buckets(&self, text: &str) -> Vec<u32> {
        let tokens = self.tokens(text);
        let mut out = Vec::with_capacity(tokens.len() * self.max_ngram);
        for n in 1..=self.max_ngram {
            for gram in tokens.windows(n) {
                let mut h = FnvHasher::default();
                h.write_u8(n as u8);
                for (i, tok) in gram.iter().enumerate() {
                    if i > 0 {
                        h.write_u8(b' ');
                    }
                    h.write(tok.as_bytes());
                }
                out.push((h.finish() % self.hash_dim as u64) as u32);
            }
        }
        out
    }
}
