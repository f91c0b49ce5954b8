//! Sample records, their line-delimited wire format, dataset manifests and the
//! stratified calibration/evaluation split.
//!
//! A record file holds one JSON object per line:
//!
//! ```text
//! {"v":1,"sample_id":"m-0","label":"member","condition":"class-3",
//!  "layout":[[1,1],[2,2]],
//!  "tokens":[{"scale":1,"pos":0,"clp":-1.2,"ulp":-2.0,"mu":-3.1,"sigma":0.8,
//!             "renyi":{"1":2.9,"inf":1.2},"maxlp":-1.2}, ...]}
//! ```
//!
//! The full-distribution debug format uses the same envelope, with tokens
//! carrying `gt`, `clp_vec` and `ulp` instead of the summary fields.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, RenyiOrder};

pub const SCHEMA_VERSION: u32 = 1;
pub const MAX_DEBUG_VOCAB: usize = 65_536;
pub const DEFAULT_CALIBRATION_FRACTION: f64 = 0.2;

/// A violated record invariant, naming the offending field.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid `{field}`: {reason}")]
pub struct ValidationError {
    pub field: String,
    pub reason: String,
}

impl ValidationError {
    fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ValidationError { field: field.into(), reason: reason.into() }
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line} (sample `{sample_id}`): {source}")]
    Invalid { line: usize, sample_id: String, source: ValidationError },
    #[error("record `{sample_id}`: {source}")]
    Unwritable { sample_id: String, source: ValidationError },
    #[error("manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("{class} class has {n} samples; need at least 2 to both calibrate and evaluate")]
    TooFewSamples { class: &'static str, n: usize },
    #[error("calibration fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("fraction {fraction} of {n} {class} samples leaves none for evaluation")]
    NothingToEvaluate { class: &'static str, n: usize, fraction: f64 },
    #[error("sample id `{0}` appears more than once")]
    DuplicateId(String),
}

/// Token-map sizes `(h_k, w_k)` for scales `k = 1..=K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScaleLayout(Vec<(u32, u32)>);

impl ScaleLayout {
    pub fn new(sides: Vec<(u32, u32)>) -> Result<Self, ValidationError> {
        let layout = ScaleLayout(sides);
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.0.is_empty() {
            return Err(ValidationError::new("layout", "at least one scale is required"));
        }
        if let Some(k) = self.0.iter().position(|&(h, w)| h == 0 || w == 0) {
            return Err(ValidationError::new("layout", format!("scale {} has a zero side {:?}", k + 1, self.0[k])));
        }
        Ok(())
    }

    pub fn sides(&self) -> &[(u32, u32)] {
        &self.0
    }

    pub fn num_scales(&self) -> usize {
        self.0.len()
    }

    /// Number of tokens `h_k · w_k` at 1-based scale `k`.
    pub fn scale_size(&self, scale: u32) -> Option<usize> {
        let k = (scale as usize).checked_sub(1)?;
        self.0.get(k).map(|&(h, w)| h as usize * w as usize)
    }

    /// `N = Σ h_k · w_k`.
    pub fn total_tokens(&self) -> usize {
        self.0.iter().map(|&(h, w)| h as usize * w as usize).sum()
    }

    /// Maps a flat token index in `0..N` to `(scale, position)`.
    pub fn locate(&self, index: usize) -> Option<(u32, u32)> {
        let mut rest = index;
        for (k, &(h, w)) in self.0.iter().enumerate() {
            let size = h as usize * w as usize;
            if rest < size {
                return Some((k as u32 + 1, rest as u32));
            }
            rest -= size;
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Member,
    Nonmember,
    Unknown,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Member => "member",
            Label::Nonmember => "nonmember",
            Label::Unknown => "unknown",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "member" => Ok(Label::Member),
            "nonmember" => Ok(Label::Nonmember),
            "unknown" => Ok(Label::Unknown),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// Per-token observation of the target model under teacher forcing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenObservation {
    pub scale: u32,
    #[serde(rename = "pos")]
    pub position: u32,
    /// `log p(x_i | c)` of the ground-truth token.
    #[serde(rename = "clp")]
    pub cond_lp: f64,
    /// `log p(x_i)` of the ground-truth token, from the unconditional pathway.
    #[serde(rename = "ulp")]
    pub uncond_lp: f64,
    #[serde(rename = "mu")]
    pub vocab_mean: f64,
    #[serde(rename = "sigma")]
    pub vocab_std: f64,
    pub renyi: BTreeMap<String, f64>,
    #[serde(rename = "maxlp")]
    pub max_cond_lp: f64,
}

impl TokenObservation {
    pub fn key(&self) -> (u32, u32) {
        (self.scale, self.position)
    }

    fn validate(&self, idx: usize) -> Result<(), ValidationError> {
        let field = |name: &str| format!("tokens[{idx}].{name}");
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ValidationError::new(field(name), format!("{v} is not finite")))
            }
        };
        finite("clp", self.cond_lp)?;
        finite("ulp", self.uncond_lp)?;
        finite("mu", self.vocab_mean)?;
        finite("sigma", self.vocab_std)?;
        finite("maxlp", self.max_cond_lp)?;
        for (name, v) in [("clp", self.cond_lp), ("ulp", self.uncond_lp), ("maxlp", self.max_cond_lp)] {
            if v > 0.0 {
                return Err(ValidationError::new(field(name), format!("log-probability {v} > 0")));
            }
        }
        if self.cond_lp > self.max_cond_lp {
            return Err(ValidationError::new(
                field("clp"),
                format!("{} exceeds maxlp {}", self.cond_lp, self.max_cond_lp),
            ));
        }
        if self.vocab_std < 0.0 {
            return Err(ValidationError::new(field("sigma"), "negative standard deviation"));
        }
        for (key, &h) in &self.renyi {
            let name = format!("renyi[{key}]");
            RenyiOrder::parse_canonical(key).map_err(|e| ValidationError::new(field(&name), e.to_string()))?;
            finite(&name, h)?;
        }
        if let Some(&h_inf) = self.renyi.get("inf") {
            let expect = -self.max_cond_lp;
            if (h_inf - expect).abs() > 1e-9 * expect.abs().max(1.0) {
                return Err(ValidationError::new(
                    field("renyi[inf]"),
                    format!("{h_inf} differs from -maxlp = {expect}"),
                ));
            }
        }
        Ok(())
    }
}

/// One query sample `(x, c)` with its per-token observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: String,
    pub label: Label,
    pub condition: String,
    pub layout: ScaleLayout,
    pub tokens: Vec<TokenObservation>,
}

fn validate_token_grid<'a>(
    layout: &ScaleLayout,
    keys: impl ExactSizeIterator<Item = (u32, u32)> + 'a,
) -> Result<(), ValidationError> {
    layout.validate()?;
    let n = keys.len();
    if n != layout.total_tokens() {
        return Err(ValidationError::new("tokens", format!("{n} tokens but layout holds {}", layout.total_tokens())));
    }
    let mut prev: Option<(u32, u32)> = None;
    for (i, key) in keys.enumerate() {
        let size = layout.scale_size(key.0).ok_or_else(|| {
            ValidationError::new(
                format!("tokens[{i}].scale"),
                format!("scale {} outside 1..={}", key.0, layout.num_scales()),
            )
        })?;
        if key.1 as usize >= size {
            return Err(ValidationError::new(
                format!("tokens[{i}].pos"),
                format!("position {} outside scale {} of size {size}", key.1, key.0),
            ));
        }
        if let Some(p) = prev {
            if key <= p {
                return Err(ValidationError::new(
                    "tokens",
                    format!("token {i} at {key:?} is not strictly after {p:?}"),
                ));
            }
        }
        prev = Some(key);
    }
    Ok(())
}

impl SampleRecord {
    pub fn validate(&self) -> Result<(), ValidationError> {
        validate_token_grid(&self.layout, self.tokens.iter().map(|t| t.key()))?;
        self.tokens.iter().enumerate().try_for_each(|(i, t)| t.validate(i))
    }
}

/// Debug token carrying the full conditional log-prob vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FullToken {
    pub scale: u32,
    #[serde(rename = "pos")]
    pub position: u32,
    pub gt: u32,
    pub clp_vec: Vec<f64>,
    #[serde(rename = "ulp")]
    pub uncond_lp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullDistributionRecord {
    pub sample_id: String,
    pub label: Label,
    pub condition: String,
    pub layout: ScaleLayout,
    pub tokens: Vec<FullToken>,
}

impl FullDistributionRecord {
    pub fn validate(&self) -> Result<(), ValidationError> {
        validate_token_grid(&self.layout, self.tokens.iter().map(|t| (t.scale, t.position)))?;
        let vocab = self.tokens.first().map_or(2, |t| t.clp_vec.len());
        for (i, t) in self.tokens.iter().enumerate() {
            let field = format!("tokens[{i}].clp_vec");
            let v = t.clp_vec.len();
            if !(2..=MAX_DEBUG_VOCAB).contains(&v) {
                return Err(ValidationError::new(field, format!("vocabulary size {v} outside 2..=65536")));
            }
            if v != vocab {
                return Err(ValidationError::new(field, format!("length {v} differs from {vocab}")));
            }
            if let Some(j) = t.clp_vec.iter().position(|x| !x.is_finite()) {
                return Err(ValidationError::new(field, format!("entry {j} is not finite")));
            }
            let lse = stats::log_sum_exp(&t.clp_vec);
            if lse.abs() > stats::NORMALIZATION_TOL {
                return Err(ValidationError::new(field, format!("logsumexp {lse:e} is not 0")));
            }
            if !t.uncond_lp.is_finite() || t.uncond_lp > 0.0 {
                return Err(ValidationError::new(
                    format!("tokens[{i}].ulp"),
                    format!("{} is not a finite log-probability", t.uncond_lp),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireIn<T> {
    v: u32,
    sample_id: String,
    label: Label,
    condition: String,
    layout: ScaleLayout,
    tokens: Vec<T>,
}

#[derive(Serialize)]
struct WireOut<'a, T> {
    v: u32,
    sample_id: &'a str,
    label: Label,
    condition: &'a str,
    layout: &'a ScaleLayout,
    tokens: &'a [T],
}

/// Record kinds that share the line-delimited envelope.
pub trait WireRecord: Sized {
    type Token: Serialize + DeserializeOwned;

    fn sample_id(&self) -> &str;
    fn validate(&self) -> Result<(), ValidationError>;
    fn from_wire(
        sample_id: String,
        label: Label,
        condition: String,
        layout: ScaleLayout,
        tokens: Vec<Self::Token>,
    ) -> Self;
    fn wire_parts(&self) -> (Label, &str, &ScaleLayout, &[Self::Token]);
}

impl WireRecord for SampleRecord {
    type Token = TokenObservation;

    fn sample_id(&self) -> &str {
        &self.sample_id
    }
    fn validate(&self) -> Result<(), ValidationError> {
        SampleRecord::validate(self)
    }
    fn from_wire(
        sample_id: String,
        label: Label,
        condition: String,
        layout: ScaleLayout,
        tokens: Vec<TokenObservation>,
    ) -> Self {
        SampleRecord { sample_id, label, condition, layout, tokens }
    }
    fn wire_parts(&self) -> (Label, &str, &ScaleLayout, &[TokenObservation]) {
        (self.label, &self.condition, &self.layout, &self.tokens)
    }
}

impl WireRecord for FullDistributionRecord {
    type Token = FullToken;

    fn sample_id(&self) -> &str {
        &self.sample_id
    }
    fn validate(&self) -> Result<(), ValidationError> {
        FullDistributionRecord::validate(self)
    }
    fn from_wire(
        sample_id: String,
        label: Label,
        condition: String,
        layout: ScaleLayout,
        tokens: Vec<FullToken>,
    ) -> Self {
        FullDistributionRecord { sample_id, label, condition, layout, tokens }
    }
    fn wire_parts(&self) -> (Label, &str, &ScaleLayout, &[FullToken]) {
        (self.label, &self.condition, &self.layout, &self.tokens)
    }
}

/// Streaming reader: one validated record per non-blank line, in file order.
pub struct RecordReader<R, T = SampleRecord> {
    lines: io::Lines<R>,
    line_no: usize,
    path: PathBuf,
    _kind: PhantomData<T>,
}

impl<R: BufRead, T: WireRecord> RecordReader<R, T> {
    pub fn new(reader: R) -> Self {
        Self::with_path(reader, PathBuf::from("<stream>"))
    }

    fn with_path(reader: R, path: PathBuf) -> Self {
        RecordReader { lines: reader.lines(), line_no: 0, path, _kind: PhantomData }
    }

    fn parse_line(&self, line: &str) -> Result<T, RecordError> {
        let line_no = self.line_no;
        let wire: WireIn<T::Token> =
            serde_json::from_str(line).map_err(|e| RecordError::Parse { line: line_no, message: e.to_string() })?;
        if wire.v != SCHEMA_VERSION {
            return Err(RecordError::Invalid {
                line: line_no,
                sample_id: wire.sample_id,
                source: ValidationError::new("v", format!("unsupported schema version {}", wire.v)),
            });
        }
        let record = T::from_wire(wire.sample_id, wire.label, wire.condition, wire.layout, wire.tokens);
        record.validate().map_err(|source| RecordError::Invalid {
            line: line_no,
            sample_id: record.sample_id().to_string(),
            source,
        })?;
        Ok(record)
    }
}

impl<R: BufRead, T: WireRecord> Iterator for RecordReader<R, T> {
    type Item = Result<T, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(source) => return Some(Err(RecordError::Io { path: self.path.clone(), source })),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse_line(&line));
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, RecordError> {
    File::open(path).map(BufReader::new).map_err(|source| RecordError::Io { path: path.to_path_buf(), source })
}

pub fn read_records(path: impl AsRef<Path>) -> Result<RecordReader<BufReader<File>>, RecordError> {
    let path = path.as_ref();
    Ok(RecordReader::with_path(open(path)?, path.to_path_buf()))
}

pub fn read_full_records(
    path: impl AsRef<Path>,
) -> Result<RecordReader<BufReader<File>, FullDistributionRecord>, RecordError> {
    let path = path.as_ref();
    Ok(RecordReader::with_path(open(path)?, path.to_path_buf()))
}

/// Writes records one per line, validating each first.
pub struct RecordWriter<W: Write> {
    out: W,
    path: PathBuf,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(out: W) -> Self {
        RecordWriter { out, path: PathBuf::from("<stream>") }
    }

    pub fn write<T: WireRecord>(&mut self, record: &T) -> Result<(), RecordError> {
        record
            .validate()
            .map_err(|source| RecordError::Unwritable { sample_id: record.sample_id().to_string(), source })?;
        let (label, condition, layout, tokens) = record.wire_parts();
        let wire = WireOut { v: SCHEMA_VERSION, sample_id: record.sample_id(), label, condition, layout, tokens };
        let io_err = |source: io::Error| RecordError::Io { path: self.path.clone(), source };
        serde_json::to_writer(&mut self.out, &wire).map_err(|e| io_err(e.into()))?;
        self.out.write_all(b"\n").map_err(io_err)
    }

    pub fn finish(mut self) -> Result<W, RecordError> {
        self.out.flush().map_err(|source| RecordError::Io { path: self.path.clone(), source })?;
        Ok(self.out)
    }
}

fn create(path: &Path) -> Result<RecordWriter<BufWriter<File>>, RecordError> {
    let file = File::create(path).map_err(|source| RecordError::Io { path: path.to_path_buf(), source })?;
    Ok(RecordWriter { out: BufWriter::new(file), path: path.to_path_buf() })
}

pub fn write_records<'a, I>(records: I, path: impl AsRef<Path>) -> Result<(), RecordError>
where
    I: IntoIterator<Item = &'a SampleRecord>,
{
    let mut writer = create(path.as_ref())?;
    for record in records {
        writer.write(record)?;
    }
    writer.finish().map(drop)
}

pub fn write_full_records<'a, I>(records: I, path: impl AsRef<Path>) -> Result<(), RecordError>
where
    I: IntoIterator<Item = &'a FullDistributionRecord>,
{
    let mut writer = create(path.as_ref())?;
    for record in records {
        writer.write(record)?;
    }
    writer.finish().map(drop)
}

/// Locations of the member and hold-out record files plus split settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub member_path: PathBuf,
    pub nonmember_path: PathBuf,
    pub seed: u64,
    pub calibration_fraction: f64,
}

impl DatasetManifest {
    /// Loads a `key = value` manifest; relative paths resolve against the
    /// manifest's own directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RecordError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| RecordError::Io { path: path.to_path_buf(), source })?;
        let manifest_err = |message: String| RecordError::Manifest { path: path.to_path_buf(), message };
        let mut manifest = kv::from_str(&text).map_err(manifest_err)?;
        if !(manifest.calibration_fraction > 0.0 && manifest.calibration_fraction < 1.0) {
            return Err(manifest_err(format!(
                "calibration_fraction {} must lie strictly between 0 and 1",
                manifest.calibration_fraction
            )));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut manifest.member_path, &mut manifest.nonmember_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.is_file() {
                return Err(manifest_err(format!("record file {} does not exist", p.display())));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RecordError> {
        let path = path.as_ref();
        std::fs::write(path, kv::to_string(self)).map_err(|source| RecordError::Io { path: path.to_path_buf(), source })
    }
}

/// Minimal `key = value` codec for the manifest's four scalar fields.
mod kv {
    use super::DatasetManifest;
    use std::path::PathBuf;

    fn quote(s: &str) -> String {
        serde_json::to_string(s).expect("string serialization is infallible")
    }

    pub fn to_string(m: &DatasetManifest) -> String {
        format!(
            "member_path = {}\nnonmember_path = {}\nseed = {}\ncalibration_fraction = {}\n",
            quote(&m.member_path.to_string_lossy()),
            quote(&m.nonmember_path.to_string_lossy()),
            m.seed,
            m.calibration_fraction,
        )
    }

    pub fn from_str(text: &str) -> Result<DatasetManifest, String> {
        let mut member = None;
        let mut nonmember = None;
        let mut seed = None;
        let mut fraction = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| format!("line {}: invalid {what} `{value}`", i + 1);
            let string = || -> Result<String, String> {
                if value.starts_with('"') {
                    serde_json::from_str(value).map_err(|_| bad("string"))
                } else {
                    Ok(value.to_string())
                }
            };
            match key {
                "member_path" => member = Some(PathBuf::from(string()?)),
                "nonmember_path" => nonmember = Some(PathBuf::from(string()?)),
                "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("seed"))?),
                "calibration_fraction" => {
                    fraction = Some(value.parse::<f64>().map_err(|_| bad("calibration_fraction"))?)
                }
                other => return Err(format!("line {}: unknown key `{other}`", i + 1)),
            }
        }
        Ok(DatasetManifest {
            member_path: member.ok_or("missing member_path")?,
            nonmember_path: nonmember.ok_or("missing nonmember_path")?,
            seed: seed.ok_or("missing seed")?,
            calibration_fraction: fraction.unwrap_or(super::DEFAULT_CALIBRATION_FRACTION),
        })
    }
}

/// Disjoint calibration / evaluation id sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalibrationSplit {
    pub calibration: BTreeSet<String>,
    pub evaluation: BTreeSet<String>,
}

/// Stratified split: `⌈fraction · n⌉` ids of each class go to calibration.
///
/// Each class is sorted, then shuffled with a ChaCha8 stream seeded by
/// `seed`, so the outcome does not depend on input order.
pub fn split_calibration(
    ids_member: &[String],
    ids_nonmember: &[String],
    seed: u64,
    fraction: f64,
) -> Result<CalibrationSplit, SplitError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SplitError::BadFraction(fraction));
    }
    let mut seen = HashSet::new();
    for id in ids_member.iter().chain(ids_nonmember) {
        if !seen.insert(id.as_str()) {
            return Err(SplitError::DuplicateId(id.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = CalibrationSplit { calibration: BTreeSet::new(), evaluation: BTreeSet::new() };
    for (class, ids) in [("member", ids_member), ("nonmember", ids_nonmember)] {
        let n = ids.len();
        if n < 2 {
            return Err(SplitError::TooFewSamples { class, n });
        }
        let take = crate::ceil_count(fraction, n);
        if take >= n {
            return Err(SplitError::NothingToEvaluate { class, n, fraction });
        }
        let mut sorted: Vec<&String> = ids.iter().collect();
        sorted.sort();
        sorted.shuffle(&mut rng);
        split.calibration.extend(sorted[..take].iter().map(|s| s.to_string()));
        split.evaluation.extend(sorted[take..].iter().map(|s| s.to_string()));
    }
    Ok(split)
}
