#![allow(dead_code)]

use metafilm_core::embeddings::{CandidateEncoderConfig, EncoderKind};
use metafilm_core::model::{EncodedInstance, ModelConfig, Pooling, Variant};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(variant: Variant, kind: EncoderKind) -> ModelConfig {
    let (d_word, d_cond) = (8, if kind == EncoderKind::StaticMean { 8 } else { 10 });
    ModelConfig {
        variant,
        d_word,
        d_hidden: 6,
        d_attn: Some(5),
        max_len: 30,
        pooling: Pooling::LastStep,
        candidate_encoder: CandidateEncoderConfig { kind, d_cond },
    }
}

/// Sentence of 1..=max_n ids drawn from `2..vocab_len` (never PAD) with a
/// sorted non-empty candidate.
pub fn random_instance(rng: &mut ChaCha8Rng, vocab_len: usize, max_n: usize, d_cond: usize) -> EncodedInstance {
    let n = rng.gen_range(1..=max_n);
    let ids = (0..n).map(|_| rng.gen_range(1..vocab_len)).collect();
    let mut candidate: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.4)).collect();
    if candidate.is_empty() {
        candidate.push(rng.gen_range(0..n));
    }
    EncodedInstance {
        ids,
        candidate,
        label: Some(rng.gen_range(0..=1)),
        conditioning: Some((0..d_cond).map(|_| rng.gen_range(-1.0..1.0)).collect()),
    }
}

pub const KINDS: [EncoderKind; 3] = [
    EncoderKind::StaticMean,
    EncoderKind::ContextualRecurrent,
    EncoderKind::Precomputed,
];
