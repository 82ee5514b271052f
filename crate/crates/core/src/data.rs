//! Labelled instances, the tab-separated record line, splits and folds.
//!
//! A record line is
//!
//! ```text
//! sentence<TAB>expression<TAB>label[<TAB>extra]...
//! ```
//!
//! where `label` is `0`, `1`, or empty/`?` for unlabelled input, and each
//! optional extra column is either `i:3,4,5` (explicit candidate token
//! positions, overriding expression matching) or whitespace-separated floats
//! (a precomputed conditioning vector). Without explicit positions, each
//! expression token is matched to its first occurrence after the previous
//! match.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vocab::tokenize;

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub sentence: Vec<String>,
    /// Strictly increasing token positions of the candidate expression.
    pub candidate: Vec<usize>,
    /// `None` for unlabelled input.
    pub label: Option<u8>,
    pub conditioning: Option<Vec<f64>>,
}

impl Instance {
    pub fn new(sentence: Vec<String>, candidate: Vec<usize>, label: Option<u8>) -> Result<Self> {
        let inst = Instance {
            sentence,
            candidate,
            label,
            conditioning: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_conditioning(mut self, conditioning: Vec<f64>) -> Self {
        self.conditioning = Some(conditioning);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sentence.is_empty() {
            return Err(Error::degenerate("Instance", "empty sentence"));
        }
        if self.candidate.is_empty() {
            return Err(Error::degenerate("Instance", "empty candidate"));
        }
        if self.candidate.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(
                "Instance",
                "candidate positions must be strictly increasing",
            ));
        }
        let last = *self.candidate.last().expect("non-empty");
        if last >= self.sentence.len() {
            return Err(Error::Bounds {
                what: "candidate position",
                index: last,
                len: self.sentence.len(),
            });
        }
        if matches!(self.label, Some(l) if l > 1) {
            return Err(Error::contract("Instance", "label must be 0 or 1"));
        }
        Ok(())
    }

    pub fn candidate_tokens(&self) -> Vec<&str> {
        self.candidate.iter().map(|&i| self.sentence[i].as_str()).collect()
    }

    pub fn is_metaphor(&self) -> bool {
        self.label == Some(1)
    }

    /// Serializes to a record line that parses back to an equal instance.
    pub fn to_record(&self) -> String {
        let mut line = self.sentence.join(" ");
        line.push('\t');
        line.push_str(&self.candidate_tokens().join(" "));
        line.push('\t');
        if let Some(l) = self.label {
            line.push_str(&l.to_string());
        }
        line.push_str("\ti:");
        let idx: Vec<String> = self.candidate.iter().map(usize::to_string).collect();
        line.push_str(&idx.join(","));
        if let Some(c) = &self.conditioning {
            line.push('\t');
            let vals: Vec<String> = c.iter().map(|v| format!("{v:?}")).collect();
            line.push_str(&vals.join(" "));
        }
        line
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordErrorKind {
    WrongArity,
    BadLabel,
    BadIndices,
    BadConditioning,
    UnmatchedExpression,
}

/// Why a record line was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub kind: RecordErrorKind,
    pub message: String,
}

impl core::fmt::Display for RecordError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.message)
    }
}

impl RecordError {
    fn new(kind: RecordErrorKind, message: impl Into<String>) -> Self {
        RecordError {
            kind,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRecord {
    pub instance: Instance,
    /// Expression tokens that also occur later in the sentence than the
    /// position chosen by first-match.
    pub ambiguous_tokens: Vec<String>,
}

/// Parses one record line. Blank and `#` comment lines yield `Ok(None)`.
pub fn parse_record(line: &str) -> core::result::Result<Option<ParsedRecord>, RecordError> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.trim().is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < 3 {
        return Err(RecordError::new(
            RecordErrorKind::WrongArity,
            format!("expected at least 3 tab-separated fields, found {}", fields.len()),
        ));
    }
    let sentence = tokenize(fields[0]);
    if sentence.is_empty() {
        return Err(RecordError::new(RecordErrorKind::WrongArity, "empty sentence"));
    }
    let label = match fields[2].trim() {
        "" | "?" => None,
        "0" => Some(0),
        "1" => Some(1),
        other => {
            return Err(RecordError::new(
                RecordErrorKind::BadLabel,
                format!("label must be 0 or 1, found {other:?}"),
            ))
        }
    };

    let mut explicit = None;
    let mut conditioning = None;
    for extra in &fields[3..] {
        let extra = extra.trim();
        if let Some(list) = extra.strip_prefix("i:") {
            let parsed: core::result::Result<Vec<usize>, _> =
                list.split(',').map(|s| s.trim().parse::<usize>()).collect();
            explicit = Some(parsed.map_err(|_| {
                RecordError::new(RecordErrorKind::BadIndices, format!("malformed index list {extra:?}"))
            })?);
        } else if !extra.is_empty() {
            let parsed: core::result::Result<Vec<f64>, _> = extra.split_whitespace().map(str::parse::<f64>).collect();
            let vals = parsed.map_err(|_| {
                RecordError::new(
                    RecordErrorKind::BadConditioning,
                    "conditioning column must hold whitespace-separated floats",
                )
            })?;
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(RecordError::new(
                    RecordErrorKind::BadConditioning,
                    "conditioning values must be finite",
                ));
            }
            conditioning = Some(vals);
        }
    }

    let (candidate, ambiguous_tokens) = match explicit {
        Some(idx) => (idx, Vec::new()),
        None => locate_expression(&sentence, &tokenize(fields[1]))?,
    };
    let instance = Instance {
        sentence,
        candidate,
        label,
        conditioning,
    };
    if let Err(e) = instance.validate() {
        return Err(RecordError::new(RecordErrorKind::BadIndices, e.to_string()));
    }
    Ok(Some(ParsedRecord {
        instance,
        ambiguous_tokens,
    }))
}

/// First left-to-right match of each expression token after the previous
/// match. Returns the positions and the tokens with later alternatives.
pub fn locate_expression(
    sentence: &[String],
    expression: &[String],
) -> core::result::Result<(Vec<usize>, Vec<String>), RecordError> {
    if expression.is_empty() {
        return Err(RecordError::new(
            RecordErrorKind::UnmatchedExpression,
            "empty expression",
        ));
    }
    let mut positions = Vec::with_capacity(expression.len());
    let mut ambiguous = Vec::new();
    let mut start = 0;
    for tok in expression {
        let found = sentence[start..].iter().position(|s| s == tok);
        let Some(offset) = found else {
            return Err(RecordError::new(
                RecordErrorKind::UnmatchedExpression,
                format!("unmatched expression token {tok:?}"),
            ));
        };
        let pos = start + offset;
        if sentence[pos + 1..].contains(tok) {
            ambiguous.push(tok.clone());
        }
        positions.push(pos);
        start = pos + 1;
    }
    Ok((positions, ambiguous))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitProvenance {
    Ratio { seed: u64 },
    FixedSizes { seed: u64 },
    Files,
}

/// Index-level train/validation/test assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Indices left out by a fixed-size plan whose sizes sum below `n`.
    pub unused: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<Instance>,
    pub validation: Vec<Instance>,
    pub test: Vec<Instance>,
    pub provenance: SplitProvenance,
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Sizes for a ratio split: validation and test take the floor of their
/// share, train takes the remainder.
pub fn ratio_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "ratios",
            format!("must be in [0, 1] and sum to 1, got ({tr}, {va}, {te})"),
        ));
    }
    // The epsilon absorbs products such as 0.7 * 10 = 6.999...
    let share = |r: f64| libm::floor(n as f64 * r + 1e-9) as usize;
    let (v, t) = (share(va), share(te));
    Ok((n - v - t, v, t))
}

pub fn plan_ratio_split(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitPlan> {
    if n < 3 {
        return Err(Error::contract("split", format!("need at least 3 instances, got {n}")));
    }
    let (a, b, _) = ratio_sizes(n, ratios)?;
    let idx = shuffled(n, seed);
    Ok(SplitPlan {
        train: idx[..a].to_vec(),
        validation: idx[a..a + b].to_vec(),
        test: idx[a + b..].to_vec(),
        unused: Vec::new(),
    })
}

/// Split with prescribed sizes; any surplus instances are left unused.
pub fn plan_fixed_split(n: usize, sizes: (usize, usize, usize), seed: u64) -> Result<SplitPlan> {
    let (a, b, c) = sizes;
    if a + b + c > n {
        return Err(Error::contract(
            "split",
            format!("fixed sizes {a}+{b}+{c} exceed the {n} available instances"),
        ));
    }
    if a == 0 || b == 0 || c == 0 {
        return Err(Error::contract("split", "fixed sizes must be positive"));
    }
    let idx = shuffled(n, seed);
    Ok(SplitPlan {
        train: idx[..a].to_vec(),
        validation: idx[a..a + b].to_vec(),
        test: idx[a + b..a + b + c].to_vec(),
        unused: idx[a + b + c..].to_vec(),
    })
}

impl DatasetSplits {
    pub fn from_plan(instances: &[Instance], plan: &SplitPlan, provenance: SplitProvenance) -> Self {
        let pick = |ids: &[usize]| ids.iter().map(|&i| instances[i].clone()).collect();
        DatasetSplits {
            train: pick(&plan.train),
            validation: pick(&plan.validation),
            test: pick(&plan.test),
            provenance,
        }
    }
}

/// Deterministic shuffle then contiguous 70-10-20 style cut.
pub fn split(instances: &[Instance], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplits> {
    let plan = plan_ratio_split(instances.len(), ratios, seed)?;
    Ok(DatasetSplits::from_plan(
        instances,
        &plan,
        SplitProvenance::Ratio { seed },
    ))
}

/// Named fixed split sizes (train, validation, test).
pub fn preset_sizes(name: &str) -> Option<(usize, usize, usize)> {
    match name.to_ascii_lowercase().as_str() {
        "zaytw" => Some((1661, 360, 510)),
        "trofi" => Some((1074, 150, 312)),
        "vuamc" => Some((3535, 885, 1398)),
        "tsv" => Some((1566, 200, 200)),
        _ => None,
    }
}

/// `k` balanced folds over a shuffled index set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Iteration `i`: fold `i` is the test set, the rest (in fold order)
    /// is the training set.
    pub fn train_test(&self, i: usize) -> (Vec<usize>, &[usize]) {
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        (train, &self.folds[i])
    }
}

pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::contract("kfold", format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::contract("kfold", format!("k = {k} exceeds n = {n}")));
    }
    let idx = shuffled(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(idx[start..start + size].to_vec());
        start += size;
    }
    Ok(FoldPlan { folds })
}
