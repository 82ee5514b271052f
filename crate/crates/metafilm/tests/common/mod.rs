#![allow(dead_code)]

use std::path::Path;

use metafilm_core::data::Instance;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FILLER: [&str; 16] = [
    "the", "a", "of", "and", "to", "in", "that", "it", "was", "for", "on", "with", "as", "at", "by", "this",
];
const META_VERBS: [&str; 6] = ["devour", "ignite", "drown", "sculpt", "unleash", "plant"];
const META_NOUNS: [&str; 6] = ["idea", "hope", "anger", "debt", "doubt", "silence"];
const LIT_VERBS: [&str; 6] = ["carry", "wash", "paint", "cook", "fix", "lift"];
const LIT_NOUNS: [&str; 6] = ["table", "car", "bread", "door", "shirt", "box"];

/// One sentence holding a metaphoric span (verb + noun from the first
/// pools) and a literal one, in random order among filler words.
fn paired_sentence(rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<usize>, Vec<usize>) {
    let pick = |rng: &mut ChaCha8Rng, pool: &[&str]| pool[rng.gen_range(0..pool.len())].to_string();
    let filler = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> Vec<String> {
        let n = rng.gen_range(lo..hi);
        (0..n).map(|_| pick(rng, &FILLER)).collect()
    };
    let meta = [pick(rng, &META_VERBS), pick(rng, &META_NOUNS)];
    let lit = [pick(rng, &LIT_VERBS), pick(rng, &LIT_NOUNS)];
    let meta_first = rng.gen_bool(0.5);
    let (first, second) = if meta_first { (meta, lit) } else { (lit, meta) };
    let mut s = filler(rng, 0, 3);
    let a = vec![s.len(), s.len() + 1];
    s.extend(first);
    s.extend(filler(rng, 1, 4));
    let b = vec![s.len(), s.len() + 1];
    s.extend(second);
    s.extend(filler(rng, 0, 3));
    if meta_first {
        (s, a, b)
    } else {
        (s, b, a)
    }
}

/// `sentences` sentences, each emitted twice: with its metaphoric span
/// (label 1) and with its literal span (label 0). Pairs are adjacent.
pub fn conditional_pairs(sentences: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * sentences);
    for _ in 0..sentences {
        let (s, meta, lit) = paired_sentence(&mut rng);
        out.push(Instance::new(s.clone(), meta, Some(1)).unwrap());
        out.push(Instance::new(s, lit, Some(0)).unwrap());
    }
    out
}

/// Label 1 iff the sentence contains "spark"; the candidate is the first
/// two tokens.
pub fn separable(n: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(3..8);
            let mut s: Vec<String> = (0..len)
                .map(|_| FILLER[rng.gen_range(0..FILLER.len())].to_string())
                .collect();
            let label = (i % 2) as u8;
            if label == 1 {
                let at = rng.gen_range(0..len);
                s[at] = "spark".into();
            }
            Instance::new(s, vec![0, 1], Some(label)).unwrap()
        })
        .collect()
}

/// `n` instances of which exactly `metaphors` are labelled 1, shuffled.
pub fn corpus_with_rate(n: usize, metaphors: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < metaphors)).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .map(|l| {
            let len = rng.gen_range(4..12);
            let s: Vec<String> = (0..len)
                .map(|_| FILLER[rng.gen_range(0..FILLER.len())].to_string())
                .collect();
            Instance::new(s, vec![1, 2], Some(l)).unwrap()
        })
        .collect()
}

pub fn write_dataset(path: &Path, instances: &[Instance]) {
    let text: String = instances.iter().map(|i| i.to_record() + "\n").collect();
    std::fs::write(path, text).unwrap();
}

/// Runs the CLI in-process and returns (exit code, stdout, stderr).
pub fn run_cli(args: &[&str]) -> (u8, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("metafilm").chain(args.iter().copied());
    let code = metafilm::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}
