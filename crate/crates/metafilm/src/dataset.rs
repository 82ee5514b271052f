//! Record files: `sentence<TAB>expression<TAB>label[<TAB>extra]...` where an
//! extra column is either explicit candidate indices (`i:3,4,5`) or
//! whitespace-separated conditioning floats.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use metafilm_core::data::{parse_record, Instance, RecordErrorKind};

use crate::error::{CliError, Result};

/// A line that did not become an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Skip {
    pub line: usize,
    pub reason: String,
    pub text: String,
}

/// A parsed line whose expression tokens matched more than one position.
#[derive(Debug, Clone, PartialEq)]
pub struct Ambiguity {
    pub line: usize,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedDataset {
    pub path: PathBuf,
    pub instances: Vec<Instance>,
    /// 1-based source line of each instance.
    pub lines: Vec<usize>,
    pub skips: Vec<Skip>,
    pub ambiguities: Vec<Ambiguity>,
}

impl LoadedDataset {
    pub fn parse_str(path: impl Into<PathBuf>, text: &str) -> Self {
        let mut out = LoadedDataset {
            path: path.into(),
            ..Default::default()
        };
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            match parse_record(line) {
                Ok(None) => {}
                Ok(Some(rec)) => {
                    if !rec.ambiguous_tokens.is_empty() {
                        out.ambiguities.push(Ambiguity {
                            line: line_no,
                            tokens: rec.ambiguous_tokens,
                        });
                    }
                    out.instances.push(rec.instance);
                    out.lines.push(line_no);
                }
                Err(e) => {
                    let reason = match e.kind {
                        RecordErrorKind::UnmatchedExpression => e.message,
                        _ => format!("parse error: {e}"),
                    };
                    out.skips.push(Skip {
                        line: line_no,
                        reason,
                        text: line.to_string(),
                    });
                }
            }
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self::parse_str(path, &text))
    }

    /// Text of the skip-report sidecar.
    pub fn skip_report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# source: {}", self.path.display());
        let _ = writeln!(
            s,
            "# parsed={} skipped={} ambiguous={}",
            self.instances.len(),
            self.skips.len(),
            self.ambiguities.len()
        );
        for skip in &self.skips {
            let _ = writeln!(s, "line {}\tskipped\t{}\t{}", skip.line, skip.reason, skip.text);
        }
        for a in &self.ambiguities {
            let _ = writeln!(
                s,
                "line {}\tambiguous\tfirst occurrence used for: {}",
                a.line,
                a.tokens.join(" ")
            );
        }
        s
    }
}

pub fn write_records(path: &Path, instances: &[Instance]) -> Result<()> {
    let mut s = String::new();
    for inst in instances {
        s.push_str(&inst.to_record());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| CliError::io(path, e))
}

/// Corpus statistics: size, share of metaphors and mean sentence length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusStats {
    pub instances: usize,
    pub labelled: usize,
    pub metaphors: usize,
    pub mean_sentence_length: f64,
}

impl CorpusStats {
    pub fn of(instances: &[Instance]) -> Self {
        let labelled = instances.iter().filter(|i| i.label.is_some()).count();
        let metaphors = instances.iter().filter(|i| i.is_metaphor()).count();
        let tokens: usize = instances.iter().map(|i| i.sentence.len()).sum();
        CorpusStats {
            instances: instances.len(),
            labelled,
            metaphors,
            mean_sentence_length: if instances.is_empty() {
                0.0
            } else {
                tokens as f64 / instances.len() as f64
            },
        }
    }

    /// Percentage of labelled instances that are metaphors.
    pub fn metaphor_percent(&self) -> f64 {
        if self.labelled == 0 {
            0.0
        } else {
            100.0 * self.metaphors as f64 / self.labelled as f64
        }
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "instances={}\nlabelled={}\nmetaphors={}\nmetaphor_percent={:.1}\nmean_sentence_length={:.2}\n",
            self.instances,
            self.labelled,
            self.metaphors,
            self.metaphor_percent(),
            self.mean_sentence_length
        )
    }
}
