use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{self, GradCheckConfig, PrepareArgs};
use crate::config::{RunConfig, SplitMode};
use crate::error::{CliError, Result};
use crate::evaluate::default_threads;

#[derive(Debug, Parser)]
#[command(
    name = "metafilm",
    version,
    about = "Relation-level metaphor classification with feature-wise linear modulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrepareSplit {
    Ratio,
    Fixed,
    Kfold,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a dataset, write split files, a statistics report and a skip-report.
    Prepare {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, value_enum, default_value = "ratio")]
        split: PrepareSplit,
        /// Train, validation and test shares.
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.1, 0.2])]
        ratios: Vec<f64>,
        /// Fixed train, validation and test sizes.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        sizes: Option<Vec<usize>>,
        /// Named fixed sizes: zaytw, trofi, vuamc or tsv.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one model per seed (and fold) and report test metrics.
    Train(TrainArgs),
    /// Score a dataset with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Score a single sentence and expression.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sentence: String,
        #[arg(long)]
        expression: String,
        /// Whitespace-separated conditioning vector for precomputed encoders.
        #[arg(long)]
        conditioning: Option<String>,
    },
    /// Compare analytic and finite-difference gradients for all variants.
    Gradcheck {
        /// TOML with d_word, d_hidden, d_cond, d_attn, encoder, pooling,
        /// max_len, batch, vocab, l2, step, tolerance.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Test hook: perturb the analytic gradient of this tensor.
        #[arg(long, hide = true)]
        corrupt_gradient: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (TOML). Defaults apply without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set train.max_epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// simple, simple-attn, film or film-attn.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub d_hidden: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
}

fn quoted(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

impl TrainArgs {
    /// Generic overrides first, then the dedicated flags.
    fn overrides(&self) -> Vec<String> {
        let mut o = self.overrides.clone();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push(format!("{k}={v}"));
            }
        };
        push("output_dir", self.output_dir.as_deref().map(quoted));
        push("data.dataset", self.dataset.as_deref().map(quoted));
        push("embeddings.path", self.embeddings.as_deref().map(quoted));
        push("model.variant", self.variant.as_ref().map(|v| format!("{v:?}")));
        push(
            "train.seeds",
            self.seeds
                .as_ref()
                .map(|s| format!("[{}]", s.iter().map(u64::to_string).collect::<Vec<_>>().join(","))),
        );
        push("train.max_epochs", self.epochs.map(|v| v.to_string()));
        push("train.batch_size", self.batch_size.map(|v| v.to_string()));
        push("model.d_hidden", self.d_hidden.map(|v| v.to_string()));
        push("train.l2_modulator_weight", self.l2.map(|v| format!("{v:?}")));
        o
    }
}

fn array3<T: Copy>(v: &[T], flag: &str) -> Result<[T; 3]> {
    v.try_into()
        .map_err(|_| CliError::Usage(format!("--{flag} takes exactly three comma-separated values")))
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Prepare {
            dataset,
            output_dir,
            split,
            ratios,
            sizes,
            preset,
            folds,
            seed,
        } => {
            let args = PrepareArgs {
                dataset,
                output_dir,
                split: match split {
                    PrepareSplit::Ratio => SplitMode::Ratio,
                    PrepareSplit::Fixed => SplitMode::Fixed,
                    PrepareSplit::Kfold => SplitMode::Kfold,
                },
                ratios: array3(&ratios, "ratios")?,
                sizes: sizes.as_deref().map(|s| array3(s, "sizes")).transpose()?,
                preset,
                folds,
                seed,
            };
            commands::prepare(&args, out).map(drop)
        }
        Command::Train(args) => {
            let cfg = RunConfig::load(args.config.as_deref(), &args.overrides())?;
            commands::train(&cfg, out).map(drop)
        }
        Command::Eval {
            checkpoint,
            dataset,
            output_dir,
            threads,
        } => commands::eval(
            &checkpoint,
            &dataset,
            output_dir.as_deref(),
            threads.unwrap_or_else(default_threads),
            out,
        )
        .map(drop),
        Command::Predict {
            checkpoint,
            sentence,
            expression,
            conditioning,
        } => {
            let conditioning = conditioning
                .map(|c| {
                    c.split_whitespace()
                        .map(|v| {
                            v.parse::<f64>()
                                .map_err(|_| CliError::Usage(format!("bad conditioning value {v:?}")))
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .transpose()?;
            commands::predict(&checkpoint, &sentence, &expression, conditioning, out).map(drop)
        }
        Command::Gradcheck {
            config,
            overrides,
            seed,
            corrupt_gradient,
        } => {
            let mut text = match &config {
                Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
                None => String::new(),
            };
            for o in &overrides {
                let (k, v) = o
                    .split_once('=')
                    .ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
                text.push_str(&format!("\n{} = {}\n", k.trim(), v.trim()));
            }
            let cfg = GradCheckConfig::from_toml(&text)?;
            commands::gradcheck(&cfg, seed, corrupt_gradient.as_deref(), out).map(drop)
        }
    }
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 for usage or configuration errors, 2 for numeric
/// failures.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
