//! Labeled, split-tagged embedding vectors and their on-disk formats.
//!
//! Two interchange formats are supported:
//!
//! * **binary** (`EMB1`): magic `EMB1`, then little-endian `u32` version (1),
//!   `u32` count, `u32` dim, then per record a `u16` id length, the UTF-8 id,
//!   a `u8` label (0 = Positive, 1 = Negative, 2 = Ambiguous), a `u8` split
//!   (0 = Train, 1 = Test) and `dim` little-endian `f32` components.
//! * **csv**: header `id,label,split,e0,...,e{dim-1}` with labels spelled
//!   `Positive|Negative|Ambiguous` and splits `Train|Test`.
//!
//! Components are `f32` on disk and `f64` in memory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const FORMAT_VERSION: u32 = 1;

/// Three-way intent annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Positive,
    Negative,
    Ambiguous,
}

/// Two-way view used for training and verification: ambiguous merges into
/// positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinaryLabel {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Positive, Label::Negative, Label::Ambiguous];

    pub fn binary(self) -> BinaryLabel {
        match self {
            Label::Positive | Label::Ambiguous => BinaryLabel::Positive,
            Label::Negative => BinaryLabel::Negative,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
            Label::Ambiguous => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Label::Positive),
            1 => Some(Label::Negative),
            2 => Some(Label::Ambiguous),
            _ => None,
        }
    }

    /// Class index used by the three-way linear probe.
    pub fn index(self) -> usize {
        self.code() as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "Positive",
            Label::Negative => "Negative",
            Label::Ambiguous => "Ambiguous",
        }
    }
}

impl BinaryLabel {
    /// Output index of this class in a binary classifier.
    pub fn index(self) -> usize {
        match self {
            BinaryLabel::Positive => 0,
            BinaryLabel::Negative => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(BinaryLabel::Positive),
            1 => Some(BinaryLabel::Negative),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            BinaryLabel::Positive => BinaryLabel::Negative,
            BinaryLabel::Negative => BinaryLabel::Positive,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BinaryLabel::Positive => "positive",
            BinaryLabel::Negative => "negative",
        }
    }
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "Train",
            Split::Test => "Test",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "Positive" => Ok(Label::Positive),
            "Negative" => Ok(Label::Negative),
            "Ambiguous" => Ok(Label::Ambiguous),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

impl FromStr for BinaryLabel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "positive" => Ok(BinaryLabel::Positive),
            "negative" => Ok(BinaryLabel::Negative),
            other => Err(format!("unknown binary label {other:?}")),
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "Train" => Ok(Split::Train),
            "Test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
    pub label: Label,
    pub split: Split,
}

/// Which labels a partition selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelFilter {
    /// Match under the merged two-way view.
    Binary(BinaryLabel),
    /// Match the original three-way annotation.
    Exact(Label),
}

impl LabelFilter {
    pub fn matches(self, label: Label) -> bool {
        match self {
            LabelFilter::Binary(b) => label.binary() == b,
            LabelFilter::Exact(l) => label == l,
        }
    }
}

impl From<BinaryLabel> for LabelFilter {
    fn from(b: BinaryLabel) -> Self {
        LabelFilter::Binary(b)
    }
}

impl From<Label> for LabelFilter {
    fn from(l: Label) -> Self {
        LabelFilter::Exact(l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    Csv,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "binary" | "bin" | "emb" => Ok(Format::Binary),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown dataset format {other:?}")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Binary => "binary",
            Format::Csv => "csv",
        })
    }
}

impl Format {
    /// Guesses the format from a file extension; anything but `.csv` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    dim: usize,
    records: Vec<EmbeddingRecord>,
}

impl EmbeddingDataset {
    /// Builds a dataset, checking dimensions, finiteness and id uniqueness.
    pub fn new(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::BadSpec("dataset dimension must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.vector.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: r.vector.len(),
                });
            }
            if let Some(c) = r.vector.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    record: i,
                    component: c,
                });
            }
            if r.id.len() > u16::MAX as usize {
                return Err(Error::BadSpec(format!("record {i}: id longer than 65535 bytes")));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self { dim, records })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Vectors matching both filters, ordered by id.
    pub fn partition(&self, split: Split, filter: impl Into<LabelFilter>) -> Vec<Vec<f64>> {
        let filter = filter.into();
        let mut hits: Vec<&EmbeddingRecord> = self
            .records
            .iter()
            .filter(|r| r.split == split && filter.matches(r.label))
            .collect();
        hits.sort_by(|a, b| a.id.cmp(&b.id));
        hits.into_iter().map(|r| r.vector.clone()).collect()
    }

    /// Records of one split, ordered by id.
    pub fn split_records(&self, split: Split) -> Vec<&EmbeddingRecord> {
        let mut hits: Vec<&EmbeddingRecord> =
            self.records.iter().filter(|r| r.split == split).collect();
        hits.sort_by(|a, b| a.id.cmp(&b.id));
        hits
    }

    /// Record count per (split, three-way label).
    pub fn count(&self, split: Split, label: Label) -> usize {
        self.records
            .iter()
            .filter(|r| r.split == split && r.label == label)
            .count()
    }

    pub fn load(path: impl AsRef<Path>, format: Format) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        match format {
            Format::Binary => Self::from_bytes(&bytes),
            Format::Csv => {
                let text = std::str::from_utf8(&bytes)
                    .map_err(|e| Error::malformed(e.valid_up_to() as u64, "invalid UTF-8"))?;
                Self::from_csv(text)
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, format: Format) -> Result<()> {
        let path = path.as_ref();
        let bytes = match format {
            Format::Binary => self.to_bytes(),
            Format::Csv => self.to_csv()?.into_bytes(),
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.records.len() * (8 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.id.len() as u16).to_le_bytes());
            out.extend_from_slice(r.id.as_bytes());
            out.push(r.label.code());
            out.push(r.split.code());
            for v in &r.vector {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::malformed(0, format!("bad magic {magic:?}")));
        }
        let version = cur.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::malformed(4, format!("unsupported version {version}")));
        }
        let count = cur.u32("record count")? as usize;
        let dim = cur.u32("dimension")? as usize;
        if dim == 0 {
            return Err(Error::malformed(12, "dimension is zero"));
        }
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for i in 0..count {
            let id_len = cur.u16("id length")? as usize;
            let at = cur.pos as u64;
            let id = std::str::from_utf8(cur.take(id_len, "id")?)
                .map_err(|_| Error::malformed(at, format!("record {i}: id is not UTF-8")))?
                .to_string();
            let at = cur.pos as u64;
            let label = Label::from_code(cur.u8("label")?)
                .ok_or_else(|| Error::malformed(at, format!("record {i}: bad label code")))?;
            let at = cur.pos as u64;
            let split = Split::from_code(cur.u8("split")?)
                .ok_or_else(|| Error::malformed(at, format!("record {i}: bad split code")))?;
            let raw = cur.take(4 * dim, "vector")?;
            let mut vector = Vec::with_capacity(dim);
            for (c, chunk) in raw.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue {
                        record: i,
                        component: c,
                    });
                }
                vector.push(v as f64);
            }
            records.push(EmbeddingRecord {
                id,
                vector,
                label,
                split,
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::malformed(
                cur.pos as u64,
                format!("{} trailing bytes", bytes.len() - cur.pos),
            ));
        }
        Self::new(dim, records)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::from("id,label,split");
        for i in 0..self.dim {
            out.push_str(&format!(",e{i}"));
        }
        out.push('\n');
        for r in &self.records {
            if r.id.contains([',', '\n', '\r']) {
                return Err(Error::BadSpec(format!(
                    "id {:?} cannot be written as csv",
                    r.id
                )));
            }
            out.push_str(&r.id);
            out.push(',');
            out.push_str(r.label.as_str());
            out.push(',');
            out.push_str(r.split.as_str());
            for v in &r.vector {
                out.push(',');
                out.push_str(&format!("{}", *v as f32));
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut offset = 0u64;
        let mut lines = text.split_inclusive('\n');
        let header = lines
            .next()
            .ok_or_else(|| Error::malformed(0, "missing csv header"))?;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        if cols.len() < 4 || cols[..3] != ["id", "label", "split"] {
            return Err(Error::malformed(0, "header must start with id,label,split"));
        }
        for (i, c) in cols[3..].iter().enumerate() {
            if *c != format!("e{i}") {
                return Err(Error::malformed(0, format!("unexpected header column {c:?}")));
            }
        }
        let dim = cols.len() - 3;
        offset += header.len() as u64;
        let mut records = Vec::new();
        for line in lines {
            let row = line.trim_end();
            let here = offset;
            offset += line.len() as u64;
            if row.is_empty() {
                continue;
            }
            let fields: Vec<&str> = row.split(',').collect();
            if fields.len() != dim + 3 {
                return Err(Error::malformed(
                    here,
                    format!("row has {} values, expected {dim}", fields.len().saturating_sub(3)),
                ));
            }
            let label = fields[1]
                .parse::<Label>()
                .map_err(|e| Error::malformed(here, e))?;
            let split = fields[2]
                .parse::<Split>()
                .map_err(|e| Error::malformed(here, e))?;
            let record = records.len();
            let mut vector = Vec::with_capacity(dim);
            for (c, tok) in fields[3..].iter().enumerate() {
                let v: f32 = tok
                    .trim()
                    .parse()
                    .map_err(|_| Error::malformed(here, format!("bad number {tok:?}")))?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue {
                        record,
                        component: c,
                    });
                }
                vector.push(v as f64);
            }
            records.push(EmbeddingRecord {
                id: fields[0].to_string(),
                vector,
                label,
                split,
            });
        }
        Self::new(dim, records)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::malformed(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, v: &[f64], label: Label, split: Split) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.into(),
            vector: v.to_vec(),
            label,
            split,
        }
    }

    #[test]
    fn single_record_binary() {
        let ds = EmbeddingDataset::new(
            2,
            vec![rec("a", &[0.0, 0.0], Label::Positive, Split::Train)],
        )
        .unwrap();
        let bytes = ds.to_bytes();
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(bytes.len(), 16 + 2 + 1 + 2 + 8);
        let back = EmbeddingDataset::from_bytes(&bytes).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.dim(), 2);
        assert_eq!(back, ds);
    }

    #[test]
    fn empty_dataset_has_zero_count() {
        let ds = EmbeddingDataset::new(4, vec![]).unwrap();
        let bytes = ds.to_bytes();
        assert_eq!(&bytes[8..12], &0u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(EmbeddingDataset::from_bytes(&bytes).unwrap().dim(), 4);
    }

    #[test]
    fn csv_row_format() {
        let ds = EmbeddingDataset::new(
            2,
            vec![rec("id", &[0.5, -1.25], Label::Positive, Split::Train)],
        )
        .unwrap();
        let csv = ds.to_csv().unwrap();
        assert_eq!(csv, "id,label,split,e0,e1\nid,Positive,Train,0.5,-1.25\n");
        assert_eq!(EmbeddingDataset::from_csv(&csv).unwrap(), ds);
    }

    #[test]
    fn csv_arity_violation() {
        let mut csv = String::from("id,label,split");
        for i in 0..384 {
            csv.push_str(&format!(",e{i}"));
        }
        csv.push_str("\nx,Negative,Test");
        for _ in 0..383 {
            csv.push_str(",0.1");
        }
        csv.push('\n');
        assert!(matches!(
            EmbeddingDataset::from_csv(&csv),
            Err(Error::MalformedFile { .. })
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        let ds = EmbeddingDataset::new(
            1,
            vec![
                rec("a", &[1.0], Label::Positive, Split::Train),
                rec("b", &[2.0], Label::Negative, Split::Test),
            ],
        )
        .unwrap();
        let mut bytes = ds.to_bytes();
        // magic
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            EmbeddingDataset::from_bytes(&bad),
            Err(Error::MalformedFile { offset: 0, .. })
        ));
        // truncation reports the offset where reading stopped
        let cut = bytes.len() - 2;
        match EmbeddingDataset::from_bytes(&bytes[..cut]) {
            Err(Error::MalformedFile { offset, .. }) => assert_eq!(offset, 16 + 9 + 5),
            other => panic!("{other:?}"),
        }
        // NaN in second record
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingDataset::from_bytes(&bytes),
            Err(Error::NonFiniteValue {
                record: 1,
                component: 0
            })
        ));
        assert!(matches!(
            EmbeddingDataset::new(
                1,
                vec![
                    rec("a", &[1.0], Label::Positive, Split::Train),
                    rec("a", &[2.0], Label::Negative, Split::Test),
                ]
            ),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn partitions() {
        let ds = EmbeddingDataset::new(
            1,
            vec![
                rec("b", &[2.0], Label::Positive, Split::Train),
                rec("a", &[1.0], Label::Positive, Split::Train),
                rec("c", &[3.0], Label::Negative, Split::Test),
            ],
        )
        .unwrap();
        assert_eq!(
            ds.partition(Split::Train, BinaryLabel::Positive),
            vec![vec![1.0], vec![2.0]]
        );
        assert!(ds.partition(Split::Train, Label::Ambiguous).is_empty());
        assert!(ds.partition(Split::Train, BinaryLabel::Negative).is_empty());
    }

    #[test]
    fn binary_view_is_total() {
        for l in Label::ALL {
            let b = l.binary();
            assert!(b == BinaryLabel::Positive || b == BinaryLabel::Negative);
        }
        assert_eq!(Label::Ambiguous.binary(), BinaryLabel::Positive);
    }
}
