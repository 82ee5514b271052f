//! Loss, batching and the training loop.
//!
//! The objective for a batch of `m` instances is the mean binary
//! cross-entropy plus `λ · Σ w²` over the contextual-modulator tensors
//! (`W_γ`, `b_γ`, `W_β`, `b_β`). Parameters are updated with Adadelta after
//! every batch, the training order is reshuffled every epoch from a
//! seed-derived stream, and the returned checkpoint is the epoch with the
//! best validation accuracy (earliest epoch on ties).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplits, Instance};
use crate::embeddings::{mask_frozen_rows, EmbeddingTable};
use crate::error::{Error, Result};
use crate::gradcheck::Objective;
use crate::metrics::{aggregate_runs, evaluate_probabilities, MetricsReport};
use crate::model::params::MODULATOR;
use crate::model::{
    forward_input, forward_on_tape, init_params, BoundParams, EncodedInstance, ModelConfig, ModelParams, SequenceInput,
};
use crate::optim::{adadelta_step, check_rho_eps, Accumulators, AdadeltaState};
use crate::tape::{bce_value, Tape};
use crate::vocab::{Vocabulary, PAD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub l2_modulator_weight: f64,
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
    pub seeds: Vec<u64>,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            max_epochs: 100,
            l2_modulator_weight: 0.01,
            adadelta_rho: 0.95,
            adadelta_eps: 1e-6,
            seeds: vec![1, 2, 3, 4, 5],
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be at least 1"));
        }
        if !self.l2_modulator_weight.is_finite() || self.l2_modulator_weight < 0.0 {
            return Err(Error::config("l2_modulator_weight", "must be finite and non-negative"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if self.patience == Some(0) {
            return Err(Error::config("patience", "must be at least 1 when set"));
        }
        check_rho_eps(self.adadelta_rho, self.adadelta_eps)
    }
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[1e-12, 1 − 1e-12]`.
pub fn bce_loss(probabilities: &[f64], labels: &[f64]) -> Result<f64> {
    if probabilities.is_empty() {
        return Err(Error::degenerate("bce_loss", "empty batch"));
    }
    if probabilities.len() != labels.len() {
        return Err(Error::Shape {
            op: "bce_loss",
            left: vec![probabilities.len()],
            right: vec![labels.len()],
        });
    }
    Ok(bce_value(probabilities, labels))
}

/// `weight · Σ` of squared modulator entries.
pub fn l2_penalty(params: &ModelParams, weight: f64) -> f64 {
    let total: f64 = MODULATOR
        .iter()
        .filter_map(|name| params.get(name))
        .map(|t| t.sum_squares())
        .sum();
    weight * total
}

/// Rows padded with PAD ids to a common length.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    pub candidates: Vec<Vec<usize>>,
    pub conditioning: Vec<Option<Vec<f64>>>,
    pub labels: Vec<Option<u8>>,
}

impl PaddedBatch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> SequenceInput<'_> {
        SequenceInput {
            ids: &self.ids[i],
            mask: Some(&self.mask[i]),
            candidate: &self.candidates[i],
            conditioning: self.conditioning[i].as_deref(),
        }
    }

    /// Labels as 0.0/1.0; errors on unlabelled rows.
    pub fn targets(&self) -> Result<Vec<f64>> {
        self.labels
            .iter()
            .map(|l| {
                l.map(f64::from)
                    .ok_or_else(|| Error::contract("train", "unlabelled instance in training data"))
            })
            .collect()
    }
}

/// Pads encoded instances to `max_len`. Overlong sentences are an error;
/// nothing is truncated.
pub fn pad_encoded<'a, I>(instances: I, max_len: usize) -> Result<PaddedBatch>
where
    I: IntoIterator<Item = &'a EncodedInstance>,
{
    let mut batch = PaddedBatch {
        ids: Vec::new(),
        mask: Vec::new(),
        candidates: Vec::new(),
        conditioning: Vec::new(),
        labels: Vec::new(),
    };
    for inst in instances {
        let n = inst.ids.len();
        if n > max_len {
            return Err(Error::contract(
                "pad_batch",
                format!("sentence of length {n} exceeds max_len {max_len}"),
            ));
        }
        let mut ids = inst.ids.clone();
        ids.resize(max_len, PAD);
        let mut mask = vec![true; n];
        mask.resize(max_len, false);
        batch.ids.push(ids);
        batch.mask.push(mask);
        batch.candidates.push(inst.candidate.clone());
        batch.conditioning.push(inst.conditioning.clone());
        batch.labels.push(inst.label);
    }
    Ok(batch)
}

pub fn pad_batch(instances: &[Instance], vocab: &Vocabulary, max_len: usize) -> Result<PaddedBatch> {
    let encoded: Vec<EncodedInstance> = instances.iter().map(|i| EncodedInstance::encode(i, vocab)).collect();
    pad_encoded(&encoded, max_len)
}

/// Gradients of the batch objective.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub params: ModelParams,
    /// Gradient for the embedding table when it is trainable.
    pub table: Option<Vec<f64>>,
}

/// Mean BCE plus modulator L2 over one batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchObjective<'a> {
    pub cfg: &'a ModelConfig,
    pub table: &'a EmbeddingTable,
    pub batch: &'a PaddedBatch,
    pub l2_weight: f64,
}

impl BatchObjective<'_> {
    fn build(&self, tape: &mut Tape, params: &ModelParams, track: bool) -> Result<(BoundParams, crate::tape::NodeId)> {
        if self.batch.is_empty() {
            return Err(Error::degenerate("bce_loss", "empty batch"));
        }
        let bound = BoundParams::bind(tape, self.cfg, params, self.table, track)?;
        let mut probs = Vec::with_capacity(self.batch.len());
        for i in 0..self.batch.len() {
            probs.push(forward_on_tape(tape, &bound, self.batch.row(i))?.probability);
        }
        let stacked = tape.stack_rows(&probs)?;
        let mut loss = tape.bce(stacked, &self.batch.targets()?)?;
        if self.l2_weight > 0.0 {
            let mut penalty = None;
            for node in bound.modulator() {
                let sq = tape.mul(node, node)?;
                let s = tape.sum(sq);
                penalty = Some(match penalty {
                    None => s,
                    Some(acc) => tape.add(acc, s)?,
                });
            }
            if let Some(p) = penalty {
                let scaled = tape.scale(p, self.l2_weight);
                loss = tape.add(loss, scaled)?;
            }
        }
        Ok((bound, loss))
    }

    pub fn gradients(&self, params: &ModelParams) -> Result<BatchGradients> {
        let mut tape = Tape::new();
        let (bound, loss) = self.build(&mut tape, params, true)?;
        let loss_value = tape.value(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::NonFinite {
                what: "batch loss".into(),
            });
        }
        let grads = tape.backward(loss)?;
        let mut out = ModelParams::new();
        for (name, id) in bound.named() {
            out.insert(name.clone(), grads.get_or_zeros(*id, tape.value(*id)));
        }
        let table = self
            .table
            .trainable
            .then(|| grads.get_or_zeros(bound.table(), tape.value(bound.table())).into_data());
        Ok(BatchGradients {
            loss: loss_value,
            params: out,
            table,
        })
    }
}

impl Objective for BatchObjective<'_> {
    fn value(&self, params: &ModelParams) -> Result<f64> {
        let mut tape = Tape::new();
        let (_, loss) = self.build(&mut tape, params, false)?;
        Ok(tape.value(loss).data()[0])
    }

    fn value_and_gradient(&self, params: &ModelParams) -> Result<(f64, ModelParams)> {
        let g = self.gradients(params)?;
        Ok((g.loss, g.params))
    }
}

/// Per-epoch permutations of `0..n` from a seed-derived stream.
#[derive(Debug, Clone)]
pub struct Shuffler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl Shuffler {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Stream 0 is left for parameter initialization.
        rng.set_stream(1);
        Shuffler {
            rng,
            order: (0..n).collect(),
        }
    }

    pub fn next_epoch(&mut self) -> &[usize] {
        self.order.shuffle(&mut self.rng);
        &self.order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub validation_accuracy: f64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    /// 1-based epoch the parameters were taken from.
    pub epoch: usize,
    pub validation_accuracy: f64,
}

/// Everything needed to replay predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub table: EmbeddingTable,
    pub meta: TrainMeta,
}

impl Checkpoint {
    pub fn encode(&self, inst: &Instance) -> EncodedInstance {
        EncodedInstance::encode(inst, &self.vocab)
    }

    pub fn probability(&self, inst: &Instance) -> Result<f64> {
        Ok(forward_input(self.encode(inst).input(), &self.table, &self.params, &self.model)?.probability)
    }

    pub fn probabilities(&self, instances: &[Instance]) -> Result<Vec<f64>> {
        instances.iter().map(|i| self.probability(i)).collect()
    }
}

/// Hooks into the epoch loop. The clock lives here so the loop itself
/// needs no operating-system time source.
pub trait TrainMonitor {
    fn elapsed_secs(&self) -> f64 {
        0.0
    }

    fn on_run_start(&mut self, _seed: u64) {}

    fn on_epoch(&mut self, _log: &EpochLog, _params: &ModelParams) {}
}

/// Monitor that ignores everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct Silent;

impl TrainMonitor for Silent {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
}

/// Probabilities for encoded instances, one forward pass each.
pub fn predict_encoded(
    instances: &[EncodedInstance],
    table: &EmbeddingTable,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    instances
        .iter()
        .map(|i| Ok(forward_input(i.input(), table, params, cfg)?.probability))
        .collect()
}

fn labels_of(instances: &[EncodedInstance], split: &str) -> Result<Vec<u8>> {
    instances
        .iter()
        .map(|i| {
            i.label
                .ok_or_else(|| Error::contract("train", format!("unlabelled instance in {split} split")))
        })
        .collect()
}

fn accuracy(probs: &[f64], labels: &[u8]) -> f64 {
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| crate::model::classify(p) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Trains one model from `seed` and returns the best-validation checkpoint.
pub fn train(
    splits: &DatasetSplits,
    table: &EmbeddingTable,
    vocab: &Vocabulary,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    monitor: &mut dyn TrainMonitor,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if splits.train.is_empty() {
        return Err(Error::contract("train", "empty training split"));
    }
    if splits.validation.is_empty() {
        return Err(Error::contract("train", "empty validation split"));
    }
    if table.vocab_len() != vocab.len() {
        return Err(Error::contract(
            "train",
            format!(
                "table has {} rows, vocabulary {} entries",
                table.vocab_len(),
                vocab.len()
            ),
        ));
    }
    let encode =
        |xs: &[Instance]| -> Vec<EncodedInstance> { xs.iter().map(|i| EncodedInstance::encode(i, vocab)).collect() };
    let train_set = encode(&splits.train);
    let val_set = encode(&splits.validation);
    labels_of(&train_set, "train")?;
    let val_labels = labels_of(&val_set, "validation")?;

    monitor.on_run_start(seed);
    let mut params = init_params(model_cfg, seed);
    let mut table = table.clone();
    let mut state = AdadeltaState::new(&params);
    let mut table_acc = Accumulators::new(table.matrix().numel());
    let mut shuffler = Shuffler::new(train_set.len(), seed);
    let (rho, eps) = (train_cfg.adadelta_rho, train_cfg.adadelta_eps);

    let mut logs = Vec::new();
    let mut best: Option<(TrainMeta, ModelParams, EmbeddingTable)> = None;
    for epoch in 1..=train_cfg.max_epochs {
        let started = monitor.elapsed_secs();
        let order = shuffler.next_epoch().to_vec();
        let mut weighted_loss = 0.0;
        for chunk in order.chunks(train_cfg.batch_size) {
            let batch = pad_encoded(chunk.iter().map(|&i| &train_set[i]), model_cfg.max_len)?;
            let objective = BatchObjective {
                cfg: model_cfg,
                table: &table,
                batch: &batch,
                l2_weight: train_cfg.l2_modulator_weight,
            };
            let grads = objective.gradients(&params)?;
            adadelta_step(&mut params, &grads.params, &mut state, rho, eps)?;
            if let Some(mut g) = grads.table {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "gradient of embedding table".into(),
                    });
                }
                // Zero gradient means a zero Adadelta step, so PAD and UNK
                // rows stay exactly as they are.
                mask_frozen_rows(&mut g, table.d_word());
                table_acc.step(table.data_mut(), &g, rho, eps);
            }
            weighted_loss += grads.loss * chunk.len() as f64;
        }
        let val_probs = predict_encoded(&val_set, &table, &params, model_cfg)?;
        let validation_accuracy = accuracy(&val_probs, &val_labels);
        let log = EpochLog {
            epoch,
            mean_train_loss: weighted_loss / train_set.len() as f64,
            validation_accuracy,
            wall_time_secs: monitor.elapsed_secs() - started,
        };
        monitor.on_epoch(&log, &params);
        logs.push(log);

        let improved = best
            .as_ref()
            .is_none_or(|(meta, _, _)| validation_accuracy > meta.validation_accuracy);
        if improved {
            let meta = TrainMeta {
                seed,
                epoch,
                validation_accuracy,
            };
            best = Some((meta, params.clone(), table.clone()));
        }
        if let (Some(patience), Some((meta, _, _))) = (train_cfg.patience, &best) {
            if epoch - meta.epoch >= patience {
                break;
            }
        }
    }
    let (meta, params, table) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model: *model_cfg,
            params,
            vocab: vocab.clone(),
            table,
            meta,
        },
        logs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: TrainOutcome,
    pub test: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSeedReport {
    pub runs: Vec<SeedRun>,
    pub mean: MetricsReport,
}

/// Trains once per seed in `train_cfg.seeds`, scores each best checkpoint
/// on the test split and averages the metrics.
pub fn multi_seed_run(
    splits: &DatasetSplits,
    table: &EmbeddingTable,
    vocab: &Vocabulary,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    monitor: &mut dyn TrainMonitor,
) -> Result<MultiSeedReport> {
    train_cfg.validate()?;
    if splits.test.is_empty() {
        return Err(Error::contract("multi_seed_run", "empty test split"));
    }
    let test_set: Vec<EncodedInstance> = splits.test.iter().map(|i| EncodedInstance::encode(i, vocab)).collect();
    let test_labels = labels_of(&test_set, "test")?;
    let mut runs = Vec::with_capacity(train_cfg.seeds.len());
    for &seed in &train_cfg.seeds {
        let outcome = train(splits, table, vocab, model_cfg, train_cfg, seed, monitor)?;
        let ck = &outcome.checkpoint;
        let probs = predict_encoded(&test_set, &ck.table, &ck.params, &ck.model)?;
        let test = evaluate_probabilities(&probs, &test_labels)?;
        runs.push(SeedRun { seed, outcome, test });
    }
    let reports: Vec<MetricsReport> = runs.iter().map(|r| r.test.clone()).collect();
    let mean = aggregate_runs(&reports)?;
    Ok(MultiSeedReport { runs, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{FILM_B_BETA, FILM_B_GAMMA, FILM_W_BETA, FILM_W_GAMMA};
    use crate::tensor::Tensor;
    use alloc::string::ToString;

    #[test]
    fn bce_examples() {
        let ln2 = core::f64::consts::LN_2;
        assert!((bce_loss(&[0.5], &[1.0]).unwrap() - ln2).abs() < 1e-15);
        assert!((bce_loss(&[0.5, 0.5], &[0.0, 1.0]).unwrap() - ln2).abs() < 1e-15);
        assert!((bce_loss(&[0.9, 0.2], &[1.0, 0.0]).unwrap() - 0.164_252_033_486_018).abs() < 1e-14);
        assert!(matches!(bce_loss(&[], &[]), Err(Error::Degenerate { .. })));
        assert!(bce_loss(&[0.0], &[1.0]).unwrap().is_finite());
        assert!(bce_loss(&[1.0], &[0.0]).unwrap().is_finite());
    }

    fn modulator_only(w_gamma: Tensor) -> ModelParams {
        let mut p = ModelParams::new();
        p.insert(FILM_W_GAMMA, w_gamma);
        p.insert(FILM_B_GAMMA, Tensor::zeros(&[2]));
        p.insert(FILM_W_BETA, Tensor::zeros(&[1, 2]));
        p.insert(FILM_B_BETA, Tensor::zeros(&[2]));
        p.insert("out.w", Tensor::full(&[2], 7.0));
        p
    }

    #[test]
    fn l2_examples() {
        let p = modulator_only(Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap());
        assert_eq!(l2_penalty(&p, 0.0), 0.0);
        assert!((l2_penalty(&p, 0.01) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn l2_gradient_matches_finite_differences() {
        let w = 0.37;
        let weight = 0.01;
        let p = modulator_only(Tensor::from_rows(&[vec![w, -1.2]]).unwrap());
        let h = 1e-5;
        let bump = |d: f64| {
            let mut q = p.clone();
            q.get_mut(FILM_W_GAMMA).unwrap().data_mut()[0] += d;
            l2_penalty(&q, weight)
        };
        let numeric = (bump(h) - bump(-h)) / (2.0 * h);
        assert!((numeric - 2.0 * weight * w).abs() < 1e-9);
    }

    fn inst(tokens: &[&str]) -> Instance {
        Instance::new(tokens.iter().map(|t| t.to_string()).collect(), vec![0], Some(1)).unwrap()
    }

    #[test]
    fn pad_batch_examples() {
        let a = inst(&["a", "b"]);
        let b = inst(&["a", "b", "c", "d"]);
        let vocab = Vocabulary::build([a.sentence.as_slice(), b.sentence.as_slice()], 1).unwrap();
        let batch = pad_batch(&[a.clone(), b.clone()], &vocab, 4).unwrap();
        assert_eq!(batch.mask[0], [true, true, false, false]);
        assert_eq!(batch.mask[1], [true; 4]);
        assert_eq!(&batch.ids[0][2..], &[PAD, PAD]);
        let full = pad_batch(core::slice::from_ref(&b), &vocab, 4).unwrap();
        assert!(full.ids[0].iter().all(|&i| i != PAD));
        assert!(matches!(pad_batch(&[b], &vocab, 3), Err(Error::Contract { .. })));
    }

    #[test]
    fn shuffler_yields_permutations_and_is_seeded() {
        let mut s = Shuffler::new(50, 7);
        let mut t = Shuffler::new(50, 7);
        let first = s.next_epoch().to_vec();
        assert_eq!(first, t.next_epoch());
        let second = s.next_epoch().to_vec();
        assert_ne!(first, second);
        for order in [first, second] {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        }
        assert_ne!(Shuffler::new(50, 8).next_epoch(), Shuffler::new(50, 7).next_epoch());
    }

    #[test]
    fn train_config_validation_names_fields() {
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(Error::Config {
                field: "batch_size",
                ..
            })
        ));
        let bad = TrainConfig {
            adadelta_rho: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            l2_modulator_weight: -1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(Error::Config {
                field: "l2_modulator_weight",
                ..
            })
        ));
        assert!(TrainConfig::default().validate().is_ok());
    }
}
