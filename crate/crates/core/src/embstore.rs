//! On-disk corpus of per-video frame embeddings.
//!
//! A corpus is the hand-off point between the (external) pretrained
//! captioning/encoding backbones and the detector. Each record carries one
//! video's label and two `T x d` matrices of `f32`: per-frame visual
//! embeddings and per-frame caption embeddings. Captions themselves may be
//! stored for audit; nothing downstream reads them.
//!
//! # Binary layout
//!
//! All integers are little-endian.
//!
//! ```text
//! header   magic "ATSS" (4 bytes) | version u16 = 1 | reserved u16 = 0
//! record*  id_len u16 | video_id [u8; id_len]
//!          label u8 (0 real, 1 fake)
//!          T u16 | d u32
//!          visual  [f32; T*d]   frame-major
//!          textual [f32; T*d]   frame-major
//!          caption_count u16 (0 or T)
//!          caption_count x (cap_len u16 | caption [u8; cap_len])
//! ```
//!
//! Records run until end of file; there is no record count.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::atomic_write;

/// File magic, `b"ATSS"`.
pub const MAGIC: [u8; 4] = *b"ATSS";
/// The only format version this crate reads and writes.
pub const VERSION: u16 = 1;
/// Header length in bytes.
pub const HEADER_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("reserved header field is {0}, expected 0")]
    ReservedNonZero(u16),
    #[error("truncated record {record}")]
    Truncated { record: usize },
    #[error("record {record}: invalid label byte {value}")]
    InvalidLabel { record: usize, value: u8 },
    #[error("record {record}: {field} is not valid UTF-8")]
    InvalidUtf8 { record: usize, field: &'static str },
    #[error("{video_id}: frame count and embedding dimension must be positive")]
    EmptyShape { video_id: String },
    #[error("{video_id}: {modality} matrix is {found_frames}x{found_dim}, expected {frames}x{dim}")]
    ShapeMismatch {
        video_id: String,
        modality: Modality,
        frames: usize,
        dim: usize,
        found_frames: usize,
        found_dim: usize,
    },
    #[error("{video_id}: shape {found:?} differs from corpus shape {expected:?}")]
    NonUniformShape {
        video_id: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{video_id}: non-finite {modality} embedding at frame {frame}")]
    NonFinite {
        video_id: String,
        modality: Modality,
        frame: usize,
    },
    #[error("{video_id}: all-zero {modality} embedding at frame {frame}")]
    ZeroRow {
        video_id: String,
        modality: Modality,
        frame: usize,
    },
    #[error("{video_id}: {found} captions for {expected} frames")]
    CaptionCount {
        video_id: String,
        expected: usize,
        found: usize,
    },
    #[error("{video_id}: {field} does not fit the format's length field")]
    FieldTooLong {
        video_id: String,
        field: &'static str,
    },
    #[error("duplicate video_id {0:?}")]
    DuplicateId(String),
    #[error("cannot split {n} records with val_fraction {val_fraction}: one side would be empty")]
    InvalidSplit { n: usize, val_fraction: f64 },
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
}

/// Which embedding stream of a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Visual,
    Textual,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Visual => "visual",
            Modality::Textual => "textual",
        })
    }
}

/// Ground-truth class of a video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn from_u8(value: u8) -> Option<Self> {
        match value {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }

    pub fn inverted(self) -> Self {
        match self {
            Label::Real => Label::Fake,
            Label::Fake => Label::Real,
        }
    }
}

/// Row-major `frames x dim` block of `f32` embeddings, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Returns `None` when `data.len() != frames * dim`.
    pub fn new(frames: usize, dim: usize, data: Vec<f32>) -> Option<Self> {
        (frames.checked_mul(dim)? == data.len()).then_some(Self { frames, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Option<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        Some(Self {
            frames: rows.len(),
            dim,
            data: rows.concat(),
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.data[frame * self.dim..(frame + 1) * self.dim]
    }

    pub fn row_mut(&mut self, frame: usize) -> &mut [f32] {
        &mut self.data[frame * self.dim..(frame + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.frames)
    }
}

/// One video: label plus aligned visual and caption embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameEmbeddingRecord {
    pub video_id: String,
    pub label: Label,
    pub visual: EmbeddingMatrix,
    pub textual: EmbeddingMatrix,
    /// Per-frame captions, kept for audit only.
    pub captions: Option<Vec<String>>,
}

impl FrameEmbeddingRecord {
    pub fn frames(&self) -> usize {
        self.visual.frames()
    }

    pub fn dim(&self) -> usize {
        self.visual.dim()
    }

    /// Checks the per-record invariants: matching non-empty shapes, finite
    /// entries, no all-zero rows, one caption per frame when captions exist.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let (frames, dim) = (self.visual.frames(), self.visual.dim());
        if frames == 0 || dim == 0 {
            return Err(CorpusError::EmptyShape {
                video_id: self.video_id.clone(),
            });
        }
        if self.textual.frames() != frames || self.textual.dim() != dim {
            return Err(CorpusError::ShapeMismatch {
                video_id: self.video_id.clone(),
                modality: Modality::Textual,
                frames,
                dim,
                found_frames: self.textual.frames(),
                found_dim: self.textual.dim(),
            });
        }
        for (modality, matrix) in [
            (Modality::Visual, &self.visual),
            (Modality::Textual, &self.textual),
        ] {
            for (frame, row) in matrix.rows().enumerate() {
                if row.iter().any(|x| !x.is_finite()) {
                    return Err(CorpusError::NonFinite {
                        video_id: self.video_id.clone(),
                        modality,
                        frame,
                    });
                }
                if row.iter().all(|&x| x == 0.0) {
                    return Err(CorpusError::ZeroRow {
                        video_id: self.video_id.clone(),
                        modality,
                        frame,
                    });
                }
            }
        }
        if let Some(captions) = &self.captions {
            if captions.len() != frames {
                return Err(CorpusError::CaptionCount {
                    video_id: self.video_id.clone(),
                    expected: frames,
                    found: captions.len(),
                });
            }
        }
        Ok(())
    }

    fn check_encodable(&self) -> Result<(), CorpusError> {
        let too_long = |field| CorpusError::FieldTooLong {
            video_id: self.video_id.clone(),
            field,
        };
        let max16 = u16::MAX as usize;
        if self.video_id.len() > max16 {
            return Err(too_long("video_id"));
        }
        if self.frames() > max16 {
            return Err(too_long("frame count"));
        }
        if self.dim() > u32::MAX as usize {
            return Err(too_long("dimension"));
        }
        if let Some(captions) = &self.captions {
            if captions.iter().any(|c| c.len() > max16) {
                return Err(too_long("caption"));
            }
        }
        Ok(())
    }
}

/// An ordered, validated collection of records sharing one `(T, d)`.
///
/// Immutable once built; construct with [`Corpus::new`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    records: Vec<FrameEmbeddingRecord>,
}

impl Corpus {
    pub fn new(records: Vec<FrameEmbeddingRecord>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(records.len());
        let mut shape = None;
        for record in &records {
            record.validate()?;
            let this = (record.frames(), record.dim());
            match shape {
                None => shape = Some(this),
                Some(expected) if expected != this => {
                    return Err(CorpusError::NonUniformShape {
                        video_id: record.video_id.clone(),
                        expected,
                        found: this,
                    })
                }
                Some(_) => {}
            }
            if !seen.insert(record.video_id.as_str()) {
                return Err(CorpusError::DuplicateId(record.video_id.clone()));
            }
        }
        Ok(Self { records })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[FrameEmbeddingRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<FrameEmbeddingRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(T, d)` shared by every record, or `None` for an empty corpus.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.records.first().map(|r| (r.frames(), r.dim()))
    }

    pub fn get(&self, video_id: &str) -> Option<&FrameEmbeddingRecord> {
        self.records.iter().find(|r| r.video_id == video_id)
    }

    /// Number of `(real, fake)` records.
    pub fn class_counts(&self) -> (usize, usize) {
        let fake = self.records.iter().filter(|r| r.label.is_fake()).count();
        (self.records.len() - fake, fake)
    }
}

/// Serializes a corpus to the binary format.
pub fn encode_corpus(corpus: &Corpus) -> Result<Vec<u8>, CorpusError> {
    for record in corpus.records() {
        record.check_encodable()?;
    }
    let payload: usize = corpus
        .records()
        .iter()
        .map(|r| 2 + r.video_id.len() + 1 + 2 + 4 + 8 * r.frames() * r.dim() + 2)
        .sum();
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for r in corpus.records() {
        out.extend_from_slice(&(r.video_id.len() as u16).to_le_bytes());
        out.extend_from_slice(r.video_id.as_bytes());
        out.push(r.label.as_u8());
        out.extend_from_slice(&(r.frames() as u16).to_le_bytes());
        out.extend_from_slice(&(r.dim() as u32).to_le_bytes());
        for x in r.visual.data().iter().chain(r.textual.data()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        match &r.captions {
            None => out.extend_from_slice(&0u16.to_le_bytes()),
            Some(captions) => {
                out.extend_from_slice(&(captions.len() as u16).to_le_bytes());
                for c in captions {
                    out.extend_from_slice(&(c.len() as u16).to_le_bytes());
                    out.extend_from_slice(c.as_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let bytes = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(bytes)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4)?)?;
        Some(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        )
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Parses the binary format, enforcing every corpus invariant.
pub fn decode_corpus(bytes: &[u8]) -> Result<Corpus, CorpusError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(CorpusError::BadMagic);
    }
    let mut rd = Reader { buf: bytes, pos: 4 };
    let version = rd.u16().ok_or(CorpusError::Truncated { record: 0 })?;
    if version != VERSION {
        return Err(CorpusError::UnsupportedVersion(version));
    }
    let reserved = rd.u16().ok_or(CorpusError::Truncated { record: 0 })?;
    if reserved != 0 {
        return Err(CorpusError::ReservedNonZero(reserved));
    }

    let mut records = Vec::new();
    while !rd.at_end() {
        let record = records.len();
        let truncated = CorpusError::Truncated { record };
        let utf8 = |field| move |_| CorpusError::InvalidUtf8 { record, field };

        let id_len = rd.u16().ok_or(truncated)? as usize;
        let id = rd.take(id_len).ok_or(CorpusError::Truncated { record })?;
        let video_id = String::from_utf8(id.to_vec()).map_err(utf8("video_id"))?;
        let label_byte = rd.u8().ok_or(CorpusError::Truncated { record })?;
        let label = Label::from_u8(label_byte).ok_or(CorpusError::InvalidLabel {
            record,
            value: label_byte,
        })?;
        let frames = rd.u16().ok_or(CorpusError::Truncated { record })? as usize;
        let dim = rd.u32().ok_or(CorpusError::Truncated { record })? as usize;
        let n = frames * dim;
        let visual = rd.f32s(n).ok_or(CorpusError::Truncated { record })?;
        let textual = rd.f32s(n).ok_or(CorpusError::Truncated { record })?;
        let caption_count = rd.u16().ok_or(CorpusError::Truncated { record })? as usize;
        let captions = if caption_count == 0 {
            None
        } else {
            let mut captions = Vec::with_capacity(caption_count);
            for _ in 0..caption_count {
                let len = rd.u16().ok_or(CorpusError::Truncated { record })? as usize;
                let raw = rd.take(len).ok_or(CorpusError::Truncated { record })?;
                captions.push(String::from_utf8(raw.to_vec()).map_err(utf8("caption"))?);
            }
            Some(captions)
        };
        records.push(FrameEmbeddingRecord {
            video_id,
            label,
            visual: EmbeddingMatrix {
                frames,
                dim,
                data: visual,
            },
            textual: EmbeddingMatrix {
                frames,
                dim,
                data: textual,
            },
            captions,
        });
    }
    Corpus::new(records)
}

/// Writes `corpus` to `path` atomically. Nothing is written if the corpus
/// cannot be encoded.
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let bytes = encode_corpus(corpus)?;
    atomic_write(path, &bytes).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_corpus(&bytes)
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    video_id: String,
    label: u8,
    visual: Vec<Vec<f32>>,
    textual: Vec<Vec<f32>>,
    captions: Option<Vec<String>>,
}

/// Writes the debug JSON-lines form: one record object per line.
pub fn write_corpus_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in corpus.records() {
        let rec = JsonRecord {
            video_id: r.video_id.clone(),
            label: r.label.as_u8(),
            visual: r.visual.rows().map(<[f32]>::to_vec).collect(),
            textual: r.textual.rows().map(<[f32]>::to_vec).collect(),
            captions: r.captions.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes()).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_corpus_jsonl(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_owned(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let json_err = |message: String| CorpusError::Json {
            line: i + 1,
            message,
        };
        let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| json_err(e.to_string()))?;
        let label = Label::from_u8(rec.label)
            .ok_or_else(|| json_err(format!("invalid label {}", rec.label)))?;
        let visual = EmbeddingMatrix::from_rows(&rec.visual)
            .ok_or_else(|| json_err("ragged visual rows".into()))?;
        let textual = EmbeddingMatrix::from_rows(&rec.textual)
            .ok_or_else(|| json_err("ragged textual rows".into()))?;
        records.push(FrameEmbeddingRecord {
            video_id: rec.video_id,
            label,
            visual,
            textual,
            captions: rec.captions,
        });
    }
    Corpus::new(records)
}

/// Seeded random partition into `(train, validation)`.
///
/// The validation side holds `round(val_fraction * N)` records. Both sides
/// keep the corpus' original record order.
pub fn split_train_val(
    corpus: &Corpus,
    val_fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus), CorpusError> {
    let n = corpus.len();
    let invalid = CorpusError::InvalidSplit { n, val_fraction };
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(invalid);
    }
    let n_val = (val_fraction * n as f64).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(invalid);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_val = vec![false; n];
    for &i in &order[..n_val] {
        in_val[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (record, is_val) in corpus.records().iter().zip(in_val) {
        if is_val {
            val.push(record.clone());
        } else {
            train.push(record.clone());
        }
    }
    Ok((Corpus { records: train }, Corpus { records: val }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, label: Label, frames: usize, dim: usize, fill: f32) -> FrameEmbeddingRecord {
        let data: Vec<f32> = (0..frames * dim).map(|i| fill + i as f32).collect();
        FrameEmbeddingRecord {
            video_id: id.to_owned(),
            label,
            visual: EmbeddingMatrix::new(frames, dim, data.clone()).unwrap(),
            textual: EmbeddingMatrix::new(frames, dim, data).unwrap(),
            captions: None,
        }
    }

    fn corpus_of(n: usize) -> Corpus {
        let records = (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
                record(&format!("v{i}"), label, 3, 2, 1.0 + i as f32)
            })
            .collect();
        Corpus::new(records).unwrap()
    }

    #[test]
    fn empty_corpus_is_header_only() {
        let bytes = encode_corpus(&Corpus::empty()).unwrap();
        assert_eq!(bytes, [0x41, 0x54, 0x53, 0x53, 1, 0, 0, 0]);
        assert!(decode_corpus(&bytes).unwrap().is_empty());
    }

    #[test]
    fn single_record_length() {
        let r = record("clip", Label::Fake, 8, 64, 0.5);
        let bytes = encode_corpus(&Corpus::new(vec![r]).unwrap()).unwrap();
        assert_eq!(bytes.len(), 8 + 2 + 4 + 1 + 2 + 4 + 2 * 8 * 64 * 4 + 2);
    }

    #[test]
    fn captions_round_trip() {
        let mut r = record("c", Label::Real, 2, 3, 1.0);
        r.captions = Some(vec!["a dog".into(), "ünïcode".into()]);
        let c = Corpus::new(vec![r]).unwrap();
        assert_eq!(decode_corpus(&encode_corpus(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = encode_corpus(&corpus_of(1)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_corpus(&bytes), Err(CorpusError::BadMagic)));
        assert_eq!(decode_corpus(&bytes).unwrap_err().to_string(), "bad magic");

        let mut bytes = encode_corpus(&corpus_of(1)).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_corpus(&bytes),
            Err(CorpusError::UnsupportedVersion(2))
        ));
        assert!(matches!(decode_corpus(b"AT"), Err(CorpusError::BadMagic)));
    }

    #[test]
    fn rejects_truncation_at_every_cut() {
        let bytes = encode_corpus(&corpus_of(2)).unwrap();
        let first_end = bytes.len() - (bytes.len() - HEADER_LEN) / 2;
        for cut in HEADER_LEN + 1..bytes.len() {
            if cut == first_end {
                continue;
            }
            let err = decode_corpus(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, CorpusError::Truncated { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn rejects_zero_row_and_nonfinite() {
        let mut r = record("z", Label::Real, 2, 2, 1.0);
        r.textual.row_mut(1).fill(0.0);
        assert!(matches!(
            Corpus::new(vec![r]),
            Err(CorpusError::ZeroRow {
                modality: Modality::Textual,
                frame: 1,
                ..
            })
        ));
        let mut r = record("n", Label::Real, 2, 2, 1.0);
        r.visual.row_mut(0)[1] = f32::NAN;
        assert!(matches!(
            Corpus::new(vec![r]),
            Err(CorpusError::NonFinite {
                modality: Modality::Visual,
                frame: 0,
                ..
            })
        ));
    }

    #[test]
    fn rejects_duplicate_ids_and_mixed_shapes() {
        let a = record("same", Label::Real, 2, 2, 1.0);
        let b = record("same", Label::Fake, 2, 2, 2.0);
        assert!(matches!(
            Corpus::new(vec![a.clone(), b]),
            Err(CorpusError::DuplicateId(id)) if id == "same"
        ));
        let c = record("other", Label::Fake, 3, 2, 2.0);
        assert!(matches!(
            Corpus::new(vec![a, c]),
            Err(CorpusError::NonUniformShape { .. })
        ));
    }

    #[test]
    fn invalid_record_is_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.atss");
        let mut r = record("long", Label::Real, 1, 1, 1.0);
        r.video_id = "x".repeat(70_000);
        let c = Corpus { records: vec![r] };
        assert!(matches!(
            write_corpus(&c, &path),
            Err(CorpusError::FieldTooLong { .. })
        ));
        assert!(!path.exists());
    }

    #[test]
    fn split_sizes() {
        let (train, val) = split_train_val(&corpus_of(10), 0.1, 3).unwrap();
        assert_eq!((train.len(), val.len()), (9, 1));
        let (train, val) = split_train_val(&corpus_of(2), 0.5, 3).unwrap();
        assert_eq!((train.len(), val.len()), (1, 1));
        assert!(split_train_val(&corpus_of(4), 0.1, 3).is_err());
        assert!(split_train_val(&corpus_of(4), 0.9, 3).is_err());
        assert!(split_train_val(&corpus_of(4), 1.0, 3).is_err());
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let corpus = corpus_of(25);
        let a = split_train_val(&corpus, 0.2, 11).unwrap();
        let b = split_train_val(&corpus, 0.2, 11).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<&str> = a
            .0
            .records()
            .iter()
            .chain(a.1.records())
            .map(|r| r.video_id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 25);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let corpus = corpus_of(3);
        write_corpus_jsonl(&corpus, &path).unwrap();
        assert_eq!(read_corpus_jsonl(&path).unwrap(), corpus);
    }
}
