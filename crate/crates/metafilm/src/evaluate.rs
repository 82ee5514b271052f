//! Read-only inference sharded over threads.

use std::num::NonZeroUsize;
use std::thread;

use metafilm_core::model::{forward_input, EncodedInstance, ModelConfig};
use metafilm_core::train::Checkpoint;

use crate::error::Result;

pub fn default_threads() -> usize {
    thread::available_parallelism().map_or(1, NonZeroUsize::get)
}

/// Probabilities for `instances` in input order. Every instance is an
/// independent forward pass, so the result does not depend on `threads`.
/// `max_len` is raised to the longest sentence: padding never changes a
/// prediction, and nothing is truncated.
pub fn predict(ck: &Checkpoint, instances: &[EncodedInstance], threads: usize) -> Result<Vec<f64>> {
    let longest = instances.iter().map(|i| i.ids.len()).max().unwrap_or(0);
    let cfg = ModelConfig {
        max_len: ck.model.max_len.max(longest),
        ..ck.model
    };
    let threads = threads.clamp(1, instances.len().max(1));
    let chunk = instances.len().div_ceil(threads).max(1);
    let run = |part: &[EncodedInstance]| -> Result<Vec<f64>> {
        part.iter()
            .map(|i| Ok(forward_input(i.input(), &ck.table, &ck.params, &cfg)?.probability))
            .collect()
    };
    if threads == 1 {
        return run(instances);
    }
    thread::scope(|s| {
        let handles: Vec<_> = instances.chunks(chunk).map(|part| s.spawn(move || run(part))).collect();
        let mut out = Vec::with_capacity(instances.len());
        for h in handles {
            out.extend(h.join().expect("inference thread panicked")?);
        }
        Ok(out)
    })
}
