//! The five subcommands. Each writes human-readable progress to `out` and
//! its files to the configured output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use metafilm_core::data::{
    kfold, locate_expression, plan_fixed_split, plan_ratio_split, preset_sizes, DatasetSplits, Instance, SplitPlan,
    SplitProvenance,
};
use metafilm_core::embeddings::{EmbeddingTable, EncoderKind};
use metafilm_core::gradcheck::{grad_check, GradCheckReport, Objective};
use metafilm_core::metrics::{aggregate_runs, evaluate_probabilities, MetricsReport};
use metafilm_core::model::{init_params, EncodedInstance, ModelConfig, ModelParams, Pooling, Variant};
use metafilm_core::train::{multi_seed_run, pad_encoded, BatchObjective, Checkpoint, EpochLog, TrainMonitor};
use metafilm_core::vocab::tokenize;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{RunConfig, SplitMode};
use crate::dataset::{write_records, CorpusStats, LoadedDataset};
use crate::error::{CliError, Result};
use crate::evaluate;
use crate::report::{self, PredictionRecord};
use crate::vectors::{build_vocab_and_table, read_vectors};

pub const CONFIG_ECHO: &str = "config.toml";
pub const METRICS_TEXT: &str = "metrics.txt";
pub const METRICS_TABLE: &str = "metrics.tsv";
pub const PREDICTIONS: &str = "predictions.csv";
pub const EPOCHS: &str = "epochs.tsv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const SKIPPED: &str = "skipped.txt";
pub const STATS: &str = "stats.txt";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) {
    // Console output is best-effort; files carry the results.
    let _ = out.write_fmt(text);
    let _ = out.write_all(b"\n");
}

fn load_dataset(path: &Path, report_to: &Path, out: &mut dyn Write) -> Result<LoadedDataset> {
    let d = LoadedDataset::read(path)?;
    write_file(report_to, d.skip_report())?;
    if !d.skips.is_empty() {
        say(
            out,
            format_args!(
                "{}: skipped {} line(s), see {}",
                path.display(),
                d.skips.len(),
                report_to.display()
            ),
        );
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareArgs {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    pub split: SplitMode,
    pub ratios: [f64; 3],
    pub sizes: Option<[usize; 3]>,
    pub preset: Option<String>,
    pub folds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub stats: CorpusStats,
    pub skipped: usize,
    /// `(file name, instance count)` for every written split file.
    pub files: Vec<(String, usize)>,
}

fn fixed_sizes(sizes: Option<[usize; 3]>, preset: Option<&str>) -> Result<(usize, usize, usize)> {
    match (sizes, preset) {
        (Some([a, b, c]), None) => Ok((a, b, c)),
        (None, Some(p)) => preset_sizes(p).ok_or_else(|| CliError::Usage(format!("unknown preset {p:?}"))),
        (Some(_), Some(_)) => Err(CliError::Usage("give either --sizes or --preset, not both".into())),
        (None, None) => Err(CliError::Usage("a fixed split needs --sizes or --preset".into())),
    }
}

/// Parses a dataset, writes split files and a statistics report.
pub fn prepare(args: &PrepareArgs, out: &mut dyn Write) -> Result<PrepareSummary> {
    create_dir(&args.output_dir)?;
    let data = load_dataset(&args.dataset, &args.output_dir.join(SKIPPED), out)?;
    if data.instances.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no instance survived parsing ({} line(s) skipped)",
            args.dataset.display(),
            data.skips.len()
        )));
    }
    let n = data.instances.len();
    let stats = CorpusStats::of(&data.instances);
    let mut report = stats.to_key_values();
    report.push_str(&format!("skipped={}\n", data.skips.len()));
    let mut files = Vec::new();
    let mut emit = |name: String, ids: &[usize], report: &mut String| -> Result<()> {
        let picked: Vec<Instance> = ids.iter().map(|&i| data.instances[i].clone()).collect();
        write_records(&args.output_dir.join(&name), &picked)?;
        report.push_str(&format!("{}={}\n", name.trim_end_matches(".tsv"), picked.len()));
        files.push((name, picked.len()));
        Ok(())
    };
    let plan: Option<SplitPlan> = match args.split {
        SplitMode::Ratio => {
            let [a, b, c] = args.ratios;
            Some(plan_ratio_split(n, (a, b, c), args.seed)?)
        }
        SplitMode::Fixed => Some(plan_fixed_split(
            n,
            fixed_sizes(args.sizes, args.preset.as_deref())?,
            args.seed,
        )?),
        SplitMode::Kfold => {
            let folds = kfold(n, args.folds, args.seed)?;
            for (i, fold) in folds.folds.iter().enumerate() {
                emit(format!("fold-{:02}.tsv", i + 1), fold, &mut report)?;
            }
            None
        }
        SplitMode::Files => {
            return Err(CliError::Usage(
                "prepare splits one dataset; --split files is for training".into(),
            ))
        }
    };
    if let Some(plan) = plan {
        emit("train.tsv".into(), &plan.train, &mut report)?;
        emit("dev.tsv".into(), &plan.validation, &mut report)?;
        emit("test.tsv".into(), &plan.test, &mut report)?;
        report.push_str(&format!("unused={}\n", plan.unused.len()));
    }
    write_file(&args.output_dir.join(STATS), &report)?;
    say(out, format_args!("{}", report.trim_end()));
    Ok(PrepareSummary {
        stats,
        skipped: data.skips.len(),
        files,
    })
}

/// One train/validation/test assignment to run every seed on.
struct Job {
    name: Option<String>,
    splits: DatasetSplits,
}

fn jobs(cfg: &RunConfig, out: &mut dyn Write) -> Result<Vec<Job>> {
    let d = &cfg.data;
    let dir = &cfg.output_dir;
    let single = |splits| vec![Job { name: None, splits }];
    let main = || -> Result<LoadedDataset> {
        let path = d.dataset.as_ref().expect("validated");
        LoadedDataset::read(path)
    };
    let nonempty = |data: &LoadedDataset| -> Result<()> {
        if data.instances.is_empty() {
            return Err(CliError::Usage(format!("{}: no usable instances", data.path.display())));
        }
        Ok(())
    };
    Ok(match d.split {
        SplitMode::Files => {
            let mut load = |p: &Option<PathBuf>, tag: &str| -> Result<Vec<Instance>> {
                let data = load_dataset(
                    p.as_ref().expect("validated"),
                    &dir.join(format!("skipped-{tag}.txt")),
                    out,
                )?;
                nonempty(&data)?;
                Ok(data.instances)
            };
            single(DatasetSplits {
                train: load(&d.train, "train")?,
                validation: load(&d.validation, "validation")?,
                test: load(&d.test, "test")?,
                provenance: SplitProvenance::Files,
            })
        }
        SplitMode::Ratio | SplitMode::Fixed => {
            let data = main()?;
            write_file(&dir.join(SKIPPED), data.skip_report())?;
            nonempty(&data)?;
            let n = data.instances.len();
            let (plan, provenance) = if d.split == SplitMode::Ratio {
                let [a, b, c] = d.ratios;
                (
                    plan_ratio_split(n, (a, b, c), d.seed)?,
                    SplitProvenance::Ratio { seed: d.seed },
                )
            } else {
                let sizes = fixed_sizes(d.sizes, d.preset.as_deref())?;
                (
                    plan_fixed_split(n, sizes, d.seed)?,
                    SplitProvenance::FixedSizes { seed: d.seed },
                )
            };
            single(DatasetSplits::from_plan(&data.instances, &plan, provenance))
        }
        SplitMode::Kfold => {
            let data = main()?;
            write_file(&dir.join(SKIPPED), data.skip_report())?;
            nonempty(&data)?;
            let folds = kfold(data.instances.len(), d.folds, d.seed)?;
            let f = d.validation_fraction;
            (0..folds.k())
                .map(|i| {
                    let (train_ids, test_ids) = folds.train_test(i);
                    // Model selection needs a validation set; carve it from
                    // this fold's training part.
                    let inner =
                        plan_ratio_split(train_ids.len(), (1.0 - f, f, 0.0), d.seed.wrapping_add(i as u64 + 1))?;
                    let pick = |ids: &[usize]| -> Vec<Instance> {
                        ids.iter().map(|&j| data.instances[train_ids[j]].clone()).collect()
                    };
                    Ok(Job {
                        name: Some(format!("fold-{:02}", i + 1)),
                        splits: DatasetSplits {
                            train: pick(&inner.train),
                            validation: pick(&inner.validation),
                            test: test_ids.iter().map(|&j| data.instances[j].clone()).collect(),
                            provenance: SplitProvenance::Ratio { seed: d.seed },
                        },
                    })
                })
                .collect::<Result<_>>()?
        }
    })
}

struct ConsoleMonitor<'a> {
    out: &'a mut dyn Write,
    started: Instant,
    label: String,
    seed: u64,
}

impl TrainMonitor for ConsoleMonitor<'_> {
    fn elapsed_secs(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    fn on_run_start(&mut self, seed: u64) {
        self.seed = seed;
    }

    fn on_epoch(&mut self, log: &EpochLog, _params: &ModelParams) {
        say(
            self.out,
            format_args!(
                "{}seed {} epoch {:>3}  loss {:.6}  val_acc {:.4}",
                self.label, self.seed, log.epoch, log.mean_train_loss, log.validation_accuracy
            ),
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub mean: MetricsReport,
    /// `(run name, test report)` per fold and seed.
    pub runs: Vec<(String, MetricsReport)>,
    pub checkpoints: Vec<PathBuf>,
}

/// Trains every seed (and fold) described by `cfg` and writes the fixed
/// output layout:
///
/// ```text
/// config.toml                 effective configuration
/// skipped*.txt                dataset skip-reports
/// metrics.txt, metrics.tsv    per-run and mean test metrics
/// [fold-NN/]seed-S/           checkpoint.bin, epochs.tsv, predictions.csv, metrics.txt
/// ```
pub fn train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainSummary> {
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    write_file(&dir.join(CONFIG_ECHO), cfg.to_toml())?;
    let jobs = jobs(cfg, out)?;
    let all = || {
        jobs.iter()
            .flat_map(|j| [&j.splits.train, &j.splits.validation, &j.splits.test])
            .flatten()
    };
    let longest = all().map(|i| i.sentence.len()).max().unwrap_or(1);
    let cond_width = all().find_map(|i| i.conditioning.as_ref().map(Vec::len));
    let model_cfg = cfg.model_config(longest, cond_width)?;
    let vectors = match &cfg.embeddings.path {
        Some(p) => {
            let wanted: std::collections::HashSet<&str> =
                all().flat_map(|i| i.sentence.iter().map(String::as_str)).collect();
            let v = read_vectors(p, Some(cfg.embeddings.d_word), |w| wanted.contains(w))?;
            say(
                out,
                format_args!("loaded {} vectors from {}", v.vectors.len(), p.display()),
            );
            Some(v)
        }
        None => None,
    };

    let mut summary = TrainSummary {
        mean: MetricsReport::default(),
        runs: Vec::new(),
        checkpoints: Vec::new(),
    };
    let mut text = String::new();
    for job in &jobs {
        let s = &job.splits;
        let (vocab, table, coverage) = build_vocab_and_table(
            &s.train,
            &[&s.validation, &s.test],
            cfg.data.min_count,
            vectors.as_ref(),
            cfg.embeddings.d_word,
            cfg.embeddings.seed,
            cfg.embeddings.trainable,
        )?;
        let label = job.name.as_ref().map_or(String::new(), |n| format!("{n} "));
        say(
            out,
            format_args!(
                "{label}train={} validation={} test={} vocab={} pretrained={}",
                s.train.len(),
                s.validation.len(),
                s.test.len(),
                coverage.vocab,
                coverage.pretrained
            ),
        );
        let mut monitor = ConsoleMonitor {
            out: &mut *out,
            started: Instant::now(),
            label: label.clone(),
            seed: 0,
        };
        let result = multi_seed_run(s, &table, &vocab, &model_cfg, &cfg.train, &mut monitor)?;
        let job_dir = job.name.as_ref().map_or(dir.clone(), |n| dir.join(n));
        for run in &result.runs {
            let run_dir = job_dir.join(format!("seed-{}", run.seed));
            create_dir(&run_dir)?;
            let ck = &run.outcome.checkpoint;
            let ck_path = run_dir.join(CHECKPOINT);
            checkpoint::save(&ck_path, ck)?;
            write_file(&run_dir.join(EPOCHS), report::epoch_table(&run.outcome.logs))?;
            let records: Vec<PredictionRecord> = s
                .test
                .iter()
                .zip(&run.test.probabilities)
                .enumerate()
                .map(|(i, (inst, &p))| PredictionRecord::new(i + 1, inst, p))
                .collect();
            report::write_predictions(&run_dir.join(PREDICTIONS), &records)?;
            let mut m = format!(
                "best_epoch={}\nvalidation_accuracy={}\n",
                ck.meta.epoch, ck.meta.validation_accuracy
            );
            m.push_str(&report::metrics_key_values("", &run.test));
            write_file(&run_dir.join(METRICS_TEXT), m)?;
            let name = format!("{label}seed-{}", run.seed).replace(' ', "/");
            text.push_str(&report::metrics_key_values(&format!("{name}."), &run.test));
            say(
                out,
                format_args!(
                    "{name}: test f1 {:.4} accuracy {:.4} (best epoch {})",
                    run.test.f1, run.test.accuracy, ck.meta.epoch
                ),
            );
            summary.runs.push((name, run.test.clone()));
            summary.checkpoints.push(ck_path);
        }
    }
    let reports: Vec<MetricsReport> = summary.runs.iter().map(|(_, r)| r.clone()).collect();
    summary.mean = aggregate_runs(&reports)?;
    summary.mean.probabilities.clear();
    summary.mean.golds.clear();
    text.push_str(&report::metrics_key_values("mean.", &summary.mean));
    write_file(&dir.join(METRICS_TEXT), &text)?;
    let mut rows: Vec<(String, &MetricsReport)> = summary.runs.iter().map(|(n, r)| (n.clone(), r)).collect();
    rows.push(("mean".into(), &summary.mean));
    write_file(&dir.join(METRICS_TABLE), report::metrics_table(&rows))?;
    say(
        out,
        format_args!(
            "mean over {} run(s): precision {:.4} recall {:.4} f1 {:.4} accuracy {:.4}",
            reports.len(),
            summary.mean.precision,
            summary.mean.recall,
            summary.mean.f1,
            summary.mean.accuracy
        ),
    );
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub records: Vec<PredictionRecord>,
    /// `None` when no instance carries a gold label.
    pub metrics: Option<MetricsReport>,
}

fn check_conditioning(ck: &Checkpoint, instances: &[Instance]) -> Result<()> {
    let cfg = &ck.model;
    if cfg.variant.uses_film() && cfg.candidate_encoder.kind == EncoderKind::Precomputed {
        let want = cfg.candidate_encoder.d_cond;
        if let Some(i) = instances
            .iter()
            .position(|i| i.conditioning.as_ref().map(Vec::len) != Some(want))
        {
            return Err(CliError::Usage(format!(
                "instance {} lacks a {want}-value conditioning column required by this checkpoint",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Scores a dataset with a checkpoint. Files go to `output_dir` when given.
pub fn eval(
    checkpoint_path: &Path,
    dataset: &Path,
    output_dir: Option<&Path>,
    threads: usize,
    out: &mut dyn Write,
) -> Result<EvalSummary> {
    let ck = checkpoint::load(checkpoint_path)?;
    let data = match output_dir {
        Some(d) => {
            create_dir(d)?;
            load_dataset(dataset, &d.join(SKIPPED), out)?
        }
        None => LoadedDataset::read(dataset)?,
    };
    if data.instances.is_empty() {
        return Err(CliError::Usage(format!("{}: no usable instances", dataset.display())));
    }
    check_conditioning(&ck, &data.instances)?;
    let encoded: Vec<EncodedInstance> = data.instances.iter().map(|i| ck.encode(i)).collect();
    let probs = evaluate::predict(&ck, &encoded, threads)?;
    let records: Vec<PredictionRecord> = data
        .instances
        .iter()
        .zip(&probs)
        .zip(&data.lines)
        .map(|((inst, &p), &line)| PredictionRecord::new(line, inst, p))
        .collect();
    let labelled: Vec<(f64, u8)> = records
        .iter()
        .filter_map(|r| r.gold.map(|g| (r.probability, g)))
        .collect();
    let metrics = if labelled.is_empty() {
        say(
            out,
            format_args!("warning: no gold labels in {}; metrics skipped", dataset.display()),
        );
        None
    } else {
        if labelled.len() < records.len() {
            say(
                out,
                format_args!(
                    "warning: {} of {} instances are unlabelled; metrics cover the labelled ones",
                    records.len() - labelled.len(),
                    records.len()
                ),
            );
        }
        let (p, g): (Vec<f64>, Vec<u8>) = labelled.into_iter().unzip();
        Some(evaluate_probabilities(&p, &g)?)
    };
    if let Some(d) = output_dir {
        report::write_predictions(&d.join(PREDICTIONS), &records)?;
        if let Some(m) = &metrics {
            write_file(&d.join(METRICS_TEXT), report::metrics_key_values("", m))?;
            write_file(&d.join(METRICS_TABLE), report::metrics_table(&[("eval".into(), m)]))?;
        }
    }
    match &metrics {
        Some(m) => say(out, format_args!("{}", report::metrics_key_values("", m).trim_end())),
        None => say(out, format_args!("predicted {} instance(s)", records.len())),
    }
    Ok(EvalSummary { records, metrics })
}

/// Scores one sentence/expression pair and prints the record as CSV.
pub fn predict(
    checkpoint_path: &Path,
    sentence: &str,
    expression: &str,
    conditioning: Option<Vec<f64>>,
    out: &mut dyn Write,
) -> Result<PredictionRecord> {
    let ck = checkpoint::load(checkpoint_path)?;
    let tokens = tokenize(sentence);
    let (candidate, _) = locate_expression(&tokens, &tokenize(expression)).map_err(|e| {
        CliError::Usage(format!(
            "{e}. Expression tokens are matched in order, each at its first occurrence after the previous match, \
             against the lowercased sentence tokens: {tokens:?}"
        ))
    })?;
    let mut inst = Instance::new(tokens, candidate, None)?;
    if let Some(c) = conditioning {
        inst = inst.with_conditioning(c);
    }
    check_conditioning(&ck, std::slice::from_ref(&inst))?;
    let p = evaluate::predict(&ck, &[ck.encode(&inst)], 1)?[0];
    let record = PredictionRecord::new(1, &inst, p);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(&record).expect("in-memory write");
    let bytes = w.into_inner().expect("in-memory write");
    let _ = out.write_all(&bytes);
    Ok(record)
}

/// Model dimensions for the gradient check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub d_word: usize,
    pub d_hidden: usize,
    pub d_cond: usize,
    pub d_attn: Option<usize>,
    pub encoder: EncoderKind,
    pub pooling: Pooling,
    pub max_len: usize,
    pub batch: usize,
    pub vocab: usize,
    pub l2: f64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            d_word: 8,
            d_hidden: 6,
            d_cond: 10,
            d_attn: None,
            encoder: EncoderKind::ContextualRecurrent,
            pooling: Pooling::LastStep,
            max_len: 7,
            batch: 3,
            vocab: 20,
            l2: 0.01,
            step: 1e-4,
            tolerance: 1e-4,
        }
    }
}

/// Largest hidden width accepted, to keep the check fast.
pub const GRADCHECK_MAX_HIDDEN: usize = 8;

impl GradCheckConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if c.d_hidden > GRADCHECK_MAX_HIDDEN {
            return Err(CliError::Config(format!(
                "d_hidden: at most {GRADCHECK_MAX_HIDDEN} for a gradient check, got {}",
                c.d_hidden
            )));
        }
        if c.batch == 0 || c.max_len == 0 || c.vocab < 3 {
            return Err(CliError::Config(
                "batch, max_len and vocab (≥ 3) must be positive".into(),
            ));
        }
        Ok(c)
    }

    fn model(&self, variant: Variant) -> ModelConfig {
        let d_cond = if self.encoder == EncoderKind::StaticMean {
            self.d_word
        } else {
            self.d_cond
        };
        ModelConfig {
            variant,
            d_word: self.d_word,
            d_hidden: self.d_hidden,
            d_attn: self.d_attn,
            max_len: self.max_len,
            pooling: self.pooling,
            candidate_encoder: metafilm_core::embeddings::CandidateEncoderConfig {
                kind: self.encoder,
                d_cond,
            },
        }
    }
}

/// Objective whose analytic gradient for one tensor is deliberately wrong.
struct Corrupted<'a> {
    inner: BatchObjective<'a>,
    param: &'a str,
}

impl Objective for Corrupted<'_> {
    fn value(&self, params: &ModelParams) -> metafilm_core::Result<f64> {
        self.inner.value(params)
    }

    fn value_and_gradient(&self, params: &ModelParams) -> metafilm_core::Result<(f64, ModelParams)> {
        let (v, mut g) = self.inner.value_and_gradient(params)?;
        if let Some(t) = g.get_mut(self.param) {
            t.data_mut().iter_mut().for_each(|x| *x = *x * 1.5 + 1e-3);
        }
        Ok((v, g))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSummary {
    pub per_variant: Vec<(Variant, GradCheckReport)>,
    pub max_relative_error: f64,
}

/// Central-difference check of every parameter of all four variants on a
/// random batch, at a random point with every parameter drawn from
/// [-1, 1]. Fails when any relative error reaches the tolerance.
pub fn gradcheck(
    cfg: &GradCheckConfig,
    seed: u64,
    corrupt: Option<&str>,
    out: &mut dyn Write,
) -> Result<GradCheckSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = EmbeddingTable::random(cfg.vocab, cfg.d_word, 0.5, seed);
    let instances: Vec<EncodedInstance> = (0..cfg.batch)
        .map(|_| {
            let n = rng.gen_range(1..=cfg.max_len);
            let ids = (0..n).map(|_| rng.gen_range(1..cfg.vocab)).collect();
            let start = rng.gen_range(0..n);
            let end = rng.gen_range(start..n.min(start + 3));
            EncodedInstance {
                ids,
                candidate: (start..=end).collect(),
                label: Some(rng.gen_range(0..=1)),
                conditioning: Some((0..cfg.d_cond).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            }
        })
        .collect();
    let batch = pad_encoded(&instances, cfg.max_len)?;
    let mut summary = GradCheckSummary {
        per_variant: Vec::new(),
        max_relative_error: 0.0,
    };
    let mut worst: Option<(String, f64)> = None;
    for variant in Variant::ALL {
        let model = cfg.model(variant);
        model.validate()?;
        let mut params = init_params(&model, seed);
        for p in params.iter_mut() {
            p.value
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-1.0..1.0));
        }
        let inner = BatchObjective {
            cfg: &model,
            table: &table,
            batch: &batch,
            l2_weight: cfg.l2,
        };
        let report = match corrupt {
            Some(param) => grad_check(&Corrupted { inner, param }, &params, cfg.step)?,
            None => grad_check(&inner, &params, cfg.step)?,
        };
        say(
            out,
            format_args!(
                "{}: max relative error {:.3e}",
                variant.name(),
                report.max_relative_error
            ),
        );
        for (name, err) in report.per_param() {
            let flag = if err < cfg.tolerance { "ok" } else { "FAIL" };
            say(out, format_args!("  {name:<24} {err:.3e}  {flag}"));
            if worst.as_ref().is_none_or(|(_, w)| err > *w) {
                worst = Some((format!("{}/{name}", variant.name()), err));
            }
        }
        summary.max_relative_error = summary.max_relative_error.max(report.max_relative_error);
        summary.per_variant.push((variant, report));
    }
    let passed = summary.max_relative_error < cfg.tolerance;
    say(
        out,
        format_args!(
            "max_relative_error={:e} tolerance={:e} {}",
            summary.max_relative_error,
            cfg.tolerance,
            if passed { "PASS" } else { "FAIL" }
        ),
    );
    if !passed {
        let (param, error) = worst.expect("at least one parameter");
        return Err(CliError::GradCheck {
            param,
            error,
            tolerance: cfg.tolerance,
        });
    }
    Ok(summary)
}
