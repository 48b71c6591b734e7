// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation datasets: the `ATRW` binary interchange format, the JSON-lines
//! sidecar, class statistics and title-disjoint splitting.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic       4 bytes  "ATRW"
//! version     u32      (currently 1)
//! layers      u32      L >= 1
//! hidden      u32      H >= 1
//! count       u64      N
//! model_id    str
//! N records:
//!   id        str
//!   title     str
//!   label     u8       0 = contextual, 1 = parametric
//!   token_tag u8       0 = FTG, 1 = LTE
//!   correct   u8       0 = false, 1 = true, 0xFF = absent
//!   required  u8       0 = parametric, 1 = contextual, 0xFF = absent
//!   tensor    f32 x L*H, row-major (one row per layer)
//! ```
//!
//! `str` is a `u32` byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"ATRW";
pub const DATASET_VERSION: u32 = 1;

const ABSENT: u8 = 0xFF;

/// Knowledge source that drove a generation. Parametric is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Contextual = 0,
    Parametric = 1,
}

impl Source {
    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            0 => Some(Source::Contextual),
            1 => Some(Source::Parametric),
            _ => None,
        }
    }

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn is_positive(self) -> bool {
        self == Source::Parametric
    }

    pub fn target(self) -> f64 {
        f64::from(self.label())
    }
}

/// Token position at which the hidden state was captured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenTag {
    /// First generated token.
    #[serde(rename = "FTG")]
    Ftg,
    /// Last token of the entity span.
    #[serde(rename = "LTE")]
    Lte,
}

/// An `L x H` stack of per-layer hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: usize,
    hidden: usize,
    data: Vec<f32>,
}

impl LayerStack {
    pub fn new(layers: usize, hidden: usize, data: Vec<f32>) -> Result<Self> {
        if layers == 0 || hidden == 0 {
            return Err(Error::Validation(format!(
                "layer stack must be non-empty, got {layers}x{hidden}"
            )));
        }
        if data.len() != layers * hidden {
            return Err(Error::dims(layers * hidden, data.len()));
        }
        Ok(Self { layers, hidden, data })
    }

    pub fn zeros(layers: usize, hidden: usize) -> Self {
        Self { layers, hidden, data: vec![0.0; layers * hidden] }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let hidden = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * hidden);
        for row in rows {
            if row.len() != hidden {
                return Err(Error::dims(hidden, row.len()));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), hidden, data)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn row(&self, layer: usize) -> &[f32] {
        &self.data[layer * self.hidden..(layer + 1) * self.hidden]
    }

    pub fn row_mut(&mut self, layer: usize) -> &mut [f32] {
        &mut self.data[layer * self.hidden..(layer + 1) * self.hidden]
    }

    /// Final layer, `h_L`.
    pub fn last_row(&self) -> &[f32] {
        self.row(self.layers - 1)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One labelled example.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    pub id: String,
    pub label: Source,
    pub title: String,
    pub token_tag: TokenTag,
    pub tensor: LayerStack,
    pub correct: Option<bool>,
    pub source_required: Option<Source>,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub layers: usize,
    pub hidden: usize,
    pub count: usize,
    pub model_id: String,
}

/// Header plus records; every record matches the header's `(L, H, model_id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    header: DatasetHeader,
    records: Vec<ActivationRecord>,
}

impl Dataset {
    pub fn new(
        model_id: impl Into<String>,
        layers: usize,
        hidden: usize,
        records: Vec<ActivationRecord>,
    ) -> Result<Self> {
        let model_id = model_id.into();
        if layers == 0 || hidden == 0 {
            return Err(Error::Validation(format!(
                "header dimensions must be positive, got L={layers} H={hidden}"
            )));
        }
        for r in &records {
            if r.tensor.layers() != layers || r.tensor.hidden() != hidden {
                return Err(Error::dims(
                    format!("{layers}x{hidden}"),
                    format!("{}x{} (record {})", r.tensor.layers(), r.tensor.hidden(), r.id),
                ));
            }
            if r.model_id != model_id {
                return Err(Error::Validation(format!(
                    "record {} has model_id {:?}, dataset has {:?}",
                    r.id, r.model_id, model_id
                )));
            }
            if !r.tensor.is_finite() {
                return Err(Error::Validation(format!("record {} has non-finite entries", r.id)));
            }
        }
        let header = DatasetHeader {
            version: DATASET_VERSION,
            layers,
            hidden,
            count: records.len(),
            model_id,
        };
        Ok(Self { header, records })
    }

    /// Builds a dataset taking `(L, H, model_id)` from the first record.
    pub fn from_records(records: Vec<ActivationRecord>) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::InsufficientData("cannot infer dimensions from zero records".into()))?;
        let (model, l, h) = (first.model_id.clone(), first.tensor.layers(), first.tensor.hidden());
        Self::new(model, l, h, records)
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn layers(&self) -> usize {
        self.header.layers
    }

    pub fn hidden(&self) -> usize {
        self.header.hidden
    }

    pub fn model_id(&self) -> &str {
        &self.header.model_id
    }

    pub fn records(&self) -> &[ActivationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records whose index passes `keep`, in original order.
    pub fn filter<F: FnMut(&ActivationRecord) -> bool>(&self, mut keep: F) -> Dataset {
        let records: Vec<_> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Dataset {
            header: DatasetHeader { count: records.len(), ..self.header.clone() },
            records,
        }
    }

    pub fn labels(&self) -> Vec<Source> {
        self.records.iter().map(|r| r.label).collect()
    }
}

// ---------------------------------------------------------------------------
// Encoding

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn opt_bool(v: Option<bool>) -> u8 {
    match v {
        Some(b) => u8::from(b),
        None => ABSENT,
    }
}

fn opt_source(v: Option<Source>) -> u8 {
    match v {
        Some(Source::Parametric) => 0,
        Some(Source::Contextual) => 1,
        None => ABSENT,
    }
}

/// Serializes a dataset into the `ATRW` byte layout.
pub fn encode_dataset(dataset: &Dataset) -> Vec<u8> {
    let h = &dataset.header;
    let stride = h.layers * h.hidden * 4;
    let mut buf = Vec::with_capacity(32 + dataset.len() * (stride + 64));
    buf.extend_from_slice(&DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(h.layers as u32).to_le_bytes());
    buf.extend_from_slice(&(h.hidden as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    put_str(&mut buf, &h.model_id);
    for r in &dataset.records {
        put_str(&mut buf, &r.id);
        put_str(&mut buf, &r.title);
        buf.push(r.label.label());
        buf.push(match r.token_tag {
            TokenTag::Ftg => 0,
            TokenTag::Lte => 1,
        });
        buf.push(opt_bool(r.correct));
        buf.push(opt_source(r.source_required));
        for v in r.tensor.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Corruption(format!(
                "truncated while reading {what} at byte {} ({} bytes available)",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format(format!("{what} is not valid UTF-8")))
    }
}

/// Parses `ATRW` bytes. Exact inverse of [`encode_dataset`].
pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut rd = Reader { bytes, pos: 0 };
    let magic = rd
        .take(4, "magic")
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if magic != DATASET_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"ATRW\"")));
    }
    let version = rd.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let layers = rd.u32("layers")? as usize;
    let hidden = rd.u32("hidden")? as usize;
    let count = rd.u64("count")? as usize;
    let model_id = rd.string("model_id")?;
    if layers == 0 || hidden == 0 {
        return Err(Error::Validation(format!("header has L={layers} H={hidden}")));
    }

    let n_floats = layers * hidden;
    // `count` is untrusted; cap the preallocation by what the payload could hold.
    let mut records = Vec::with_capacity(count.min(bytes.len() / (n_floats * 4 + 12)));
    for i in 0..count {
        let id = rd.string("record id")?;
        let title = rd.string("record title")?;
        let label = rd.u8("label")?;
        let label = Source::from_label(label)
            .ok_or_else(|| Error::Validation(format!("record {i}: label {label} not in {{0, 1}}")))?;
        let token_tag = match rd.u8("token tag")? {
            0 => TokenTag::Ftg,
            1 => TokenTag::Lte,
            t => return Err(Error::Validation(format!("record {i}: token tag {t} not in {{FTG, LTE}}"))),
        };
        let correct = match rd.u8("correct flag")? {
            0 => Some(false),
            1 => Some(true),
            ABSENT => None,
            t => return Err(Error::Validation(format!("record {i}: correct flag {t}"))),
        };
        let source_required = match rd.u8("source_required")? {
            0 => Some(Source::Parametric),
            1 => Some(Source::Contextual),
            ABSENT => None,
            t => return Err(Error::Validation(format!("record {i}: source_required tag {t}"))),
        };
        let raw = rd.take(n_floats * 4, "tensor")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "record {i} ({id}): non-finite value at layer {} dim {}",
                bad / hidden,
                bad % hidden
            )));
        }
        records.push(ActivationRecord {
            id,
            label,
            title,
            token_tag,
            tensor: LayerStack { layers, hidden, data },
            correct,
            source_required,
            model_id: model_id.clone(),
        });
    }
    if rd.pos != bytes.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - rd.pos
        )));
    }
    Ok(Dataset {
        header: DatasetHeader { version, layers, hidden, count, model_id },
        records,
    })
}

#[derive(Serialize)]
struct SidecarLine<'a> {
    id: &'a str,
    title: &'a str,
    label: u8,
    token_tag: TokenTag,
    correct: Option<bool>,
    source_required: Option<Source>,
}

/// Path of the JSON-lines sidecar written next to a binary dataset.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".jsonl");
    path.with_file_name(name)
}

pub fn sidecar_lines(dataset: &Dataset) -> Result<String> {
    let mut out = String::new();
    for r in &dataset.records {
        let line = SidecarLine {
            id: &r.id,
            title: &r.title,
            label: r.label.label(),
            token_tag: r.token_tag,
            correct: r.correct,
            source_required: r.source_required,
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes the binary file and its `<path>.jsonl` sidecar.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode_dataset(dataset))?;
    w.flush()?;
    fs::write(sidecar_path(path), sidecar_lines(dataset)?)?;
    Ok(())
}

/// Builds a dataset from `records` (shared `L`, `H`, model) and writes it.
pub fn write_records(records: Vec<ActivationRecord>, path: &Path) -> Result<Dataset> {
    let ds = Dataset::from_records(records)?;
    write_dataset(&ds, path)?;
    Ok(ds)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Class statistics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub positives: usize,
    pub negatives: usize,
    /// `#neg / #pos`, the positive-class loss multiplier.
    pub pos_weight: f64,
}

pub fn class_stats_of(labels: &[Source]) -> Result<ClassStats> {
    let positives = labels.iter().filter(|l| l.is_positive()).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateDataset(format!(
            "need both classes, got {positives} parametric and {negatives} contextual"
        )));
    }
    Ok(ClassStats {
        positives,
        negatives,
        pos_weight: negatives as f64 / positives as f64,
    })
}

pub fn class_stats(dataset: &Dataset) -> Result<ClassStats> {
    class_stats_of(&dataset.labels())
}

// ---------------------------------------------------------------------------
// Title-disjoint splitting

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub fractions: [f64; 3],
    pub seed: u64,
    pub assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn split_of(&self, title: &str) -> Option<Split> {
        self.assignment.get(title).copied()
    }

    pub fn titles_in(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(t, _)| t.as_str())
    }

    /// Records of `dataset` assigned to `split`, in dataset order.
    pub fn subset(&self, dataset: &Dataset, split: Split) -> Dataset {
        dataset.filter(|r| self.split_of(&r.title) == Some(split))
    }

    /// `(train, val, test)` subsets.
    pub fn apply(&self, dataset: &Dataset) -> (Dataset, Dataset, Dataset) {
        (
            self.subset(dataset, Split::Train),
            self.subset(dataset, Split::Val),
            self.subset(dataset, Split::Test),
        )
    }
}

fn check_fractions(fractions: [f64; 3]) -> Result<()> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidConfig(format!("split fractions must be non-negative: {fractions:?}")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split fractions sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Nearest prefix-sum index to `target` in `cum[lo..]`; ties go to the larger
/// index so the boundary title lands in the earlier split.
fn nearest_cut(cum: &[usize], lo: usize, target: f64) -> usize {
    let mut best = lo;
    let mut best_dev = f64::INFINITY;
    for (i, &c) in cum.iter().enumerate().skip(lo) {
        let dev = (c as f64 - target).abs();
        if dev <= best_dev {
            best = i;
            best_dev = dev;
        }
    }
    best
}

/// Title-disjoint train/val/test assignment.
///
/// The sorted title list is shuffled with a ChaCha8 stream seeded by `seed`;
/// cut points are then placed where cumulative *record* counts come closest
/// to the target fractions.
pub fn split_title_disjoint(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    check_fractions(fractions)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &dataset.records {
        *counts.entry(r.title.as_str()).or_default() += 1;
    }
    let mut titles: Vec<(&str, usize)> = counts.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    titles.shuffle(&mut rng);

    let mut cum = Vec::with_capacity(titles.len() + 1);
    cum.push(0usize);
    for (_, c) in &titles {
        cum.push(cum.last().unwrap() + c);
    }
    let total = *cum.last().unwrap() as f64;
    let cut_train = nearest_cut(&cum, 0, fractions[0] * total);
    let cut_val = nearest_cut(&cum, cut_train, (fractions[0] + fractions[1]) * total);

    let assignment = titles
        .iter()
        .enumerate()
        .map(|(i, (t, _))| {
            let split = if i < cut_train {
                Split::Train
            } else if i < cut_val {
                Split::Val
            } else {
                Split::Test
            };
            (t.to_string(), split)
        })
        .collect();
    Ok(SplitAssignment { fractions, seed, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, title: &str, label: Source, l: usize, h: usize) -> ActivationRecord {
        let data = (0..l * h).map(|i| i as f32 * 0.5 - 1.0).collect();
        ActivationRecord {
            id: id.into(),
            label,
            title: title.into(),
            token_tag: TokenTag::Ftg,
            tensor: LayerStack::new(l, h, data).unwrap(),
            correct: Some(true),
            source_required: None,
            model_id: "m".into(),
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = Dataset::new("m", 3, 4, vec![]).unwrap();
        let bytes = encode_dataset(&ds);
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back.header().count, 0);
        assert_eq!(back, ds);
    }

    #[test]
    fn mixed_hidden_sizes_rejected() {
        let a = rec("a", "t", Source::Parametric, 1, 4096);
        let b = rec("b", "t", Source::Contextual, 1, 3584);
        assert!(matches!(Dataset::from_records(vec![a, b]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let ds = Dataset::from_records(vec![rec("a", "t", Source::Parametric, 2, 3)]).unwrap();
        let mut bytes = encode_dataset(&ds);
        let full = bytes.clone();
        bytes[0] = b'X';
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format(_))));
        let cut = &full[..full.len() - 5];
        assert!(matches!(decode_dataset(cut), Err(Error::Corruption(_))));
        let mut v2 = full.clone();
        v2[4] = 2;
        assert!(matches!(decode_dataset(&v2), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_rejected_at_read() {
        let ds = Dataset::from_records(vec![rec("a", "t", Source::Parametric, 1, 2)]).unwrap();
        let mut bytes = encode_dataset(&ds);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_dataset(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn class_stats_examples() {
        let mk = |p: usize, n: usize| {
            let mut v = vec![Source::Parametric; p];
            v.extend(vec![Source::Contextual; n]);
            v
        };
        assert_eq!(class_stats_of(&mk(5, 5)).unwrap().pos_weight, 1.0);
        assert_eq!(class_stats_of(&mk(5, 10)).unwrap().pos_weight, 2.0);
        assert!(matches!(class_stats_of(&mk(0, 10)), Err(Error::DegenerateDataset(_))));
    }

    #[test]
    fn single_title_stays_whole() {
        let recs = (0..10)
            .map(|i| rec(&i.to_string(), "only", Source::from_label((i % 2) as u8).unwrap(), 1, 1))
            .collect();
        let ds = Dataset::from_records(recs).unwrap();
        let s = split_title_disjoint(&ds, [0.64, 0.16, 0.20], 42).unwrap();
        assert_eq!(s.assignment.len(), 1);
    }

    #[test]
    fn hundred_titles_split_64_16_20() {
        let recs = (0..100)
            .map(|i| rec(&i.to_string(), &format!("t{i:03}"), Source::Parametric, 1, 1))
            .collect();
        let ds = Dataset::from_records(recs).unwrap();
        let s = split_title_disjoint(&ds, [0.64, 0.16, 0.20], 42).unwrap();
        let (tr, va, te) = s.apply(&ds);
        assert_eq!((tr.len(), va.len(), te.len()), (64, 16, 20));
    }

    #[test]
    fn bad_fractions_rejected() {
        let ds = Dataset::new("m", 1, 1, vec![]).unwrap();
        assert!(split_title_disjoint(&ds, [0.5, 0.6, 0.0], 1).is_err());
        assert!(split_title_disjoint(&ds, [-0.1, 0.6, 0.5], 1).is_err());
        assert!(split_title_disjoint(&ds, [0.6, 0.2, 0.2], 1).unwrap().assignment.is_empty());
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("/x/data.atrw")), PathBuf::from("/x/data.atrw.jsonl"));
    }
}
