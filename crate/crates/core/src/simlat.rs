//! Temporal self-similarity matrices.
//!
//! For a video with per-frame visual embeddings `v_1..v_T` and caption
//! embeddings `e_1..e_T`, three `T x T` cosine-similarity matrices are built:
//!
//! - visual: `S_v[i][j] = cos(v_i, v_j)`
//! - textual: `S_t[i][j] = cos(e_i, e_j)`
//! - cross-modal: `S_c[i][j] = cos(v_i, e_j)`, rows indexed by the visual
//!   frame and columns by the caption frame.
//!
//! The visual and textual matrices are symmetric with unit diagonal; the
//! cross-modal one is neither in general. Everything is computed in `f64`.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::embstore::{FrameEmbeddingRecord, Modality};
use crate::fsutil::atomic_write;

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("cosine of a zero-norm vector")]
    ZeroNorm,
    #[error("cosine of vectors with lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite vector entry")]
    NonFinite,
    #[error("zero-norm {modality} embedding at frame {frame}")]
    ZeroNormFrame { modality: Modality, frame: usize },
    #[error("non-finite {modality} embedding at frame {frame}")]
    NonFiniteFrame { modality: Modality, frame: usize },
    #[error("record has {visual} visual and {textual} textual frames")]
    FrameMismatch { visual: usize, textual: usize },
    #[error("malformed similarity CSV: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Cosine similarity `a.b / (|a| |b|)`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::LengthMismatch(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(SimilarityError::NonFinite);
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    Ok(dot(a, b) / (na * nb))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Dense row-major `n x n` matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    /// Returns `None` unless `data.len() == n * n`.
    pub fn new(n: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == n * n).then_some(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Self {
            n,
            data: vec![value; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Largest `|m[i][j] - m[j][i]|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Mean of the off-diagonal entries; `None` when `n < 2`.
    pub fn off_diagonal_mean(&self) -> Option<f64> {
        if self.n < 2 {
            return None;
        }
        let trace: f64 = (0..self.n).map(|i| self.get(i, i)).sum();
        let total: f64 = self.data.iter().sum();
        Some((total - trace) / (self.n * (self.n - 1)) as f64)
    }
}

/// The visual, textual and cross-modal similarity matrices of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityTriplet {
    pub visual: SquareMatrix,
    pub textual: SquareMatrix,
    pub cross: SquareMatrix,
}

impl SimilarityTriplet {
    pub fn frames(&self) -> usize {
        self.visual.size()
    }

    /// The three matrices in branch order: visual, textual, cross.
    pub fn matrices(&self) -> [&SquareMatrix; 3] {
        [&self.visual, &self.textual, &self.cross]
    }
}

fn unit_rows(
    rows: impl Iterator<Item = impl AsRef<[f32]>>,
    modality: Modality,
) -> Result<Vec<Vec<f64>>, SimilarityError> {
    rows.enumerate()
        .map(|(frame, row)| {
            let v: Vec<f64> = row.as_ref().iter().map(|&x| f64::from(x)).collect();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(SimilarityError::NonFiniteFrame { modality, frame });
            }
            let n = norm(&v);
            if n == 0.0 {
                return Err(SimilarityError::ZeroNormFrame { modality, frame });
            }
            Ok(v.into_iter().map(|x| x / n).collect())
        })
        .collect()
}

/// Builds the three self-similarity matrices of a record.
pub fn build_triplet(record: &FrameEmbeddingRecord) -> Result<SimilarityTriplet, SimilarityError> {
    if record.visual.frames() != record.textual.frames() {
        return Err(SimilarityError::FrameMismatch {
            visual: record.visual.frames(),
            textual: record.textual.frames(),
        });
    }
    let v = unit_rows(record.visual.rows(), Modality::Visual)?;
    let e = unit_rows(record.textual.rows(), Modality::Textual)?;
    let t = v.len();
    let symmetric = |rows: &[Vec<f64>]| {
        let mut m = SquareMatrix::filled(t, 1.0);
        for i in 0..t {
            for j in i + 1..t {
                let s = dot(&rows[i], &rows[j]);
                m.data[i * t + j] = s;
                m.data[j * t + i] = s;
            }
        }
        m
    };
    Ok(SimilarityTriplet {
        visual: symmetric(&v),
        textual: symmetric(&e),
        cross: SquareMatrix::from_fn(t, |i, j| dot(&v[i], &e[j])),
    })
}

const BLOCKS: [&str; 3] = ["S_VISUAL", "S_TEXTUAL", "S_CROSS"];

/// Renders the triplet as three CSV blocks headed `S_VISUAL`, `S_TEXTUAL`,
/// `S_CROSS`, each followed by `T` rows. Values use the shortest decimal
/// form that round-trips exactly.
pub fn triplet_to_csv(triplet: &SimilarityTriplet) -> String {
    let mut out = String::new();
    for (name, m) in BLOCKS.iter().zip(triplet.matrices()) {
        out.push_str(name);
        out.push('\n');
        for i in 0..m.size() {
            for (j, x) in m.row(i).iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{x}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_triplet_csv(text: &str) -> Result<SimilarityTriplet, SimilarityError> {
    let parse_err = |m: String| SimilarityError::Parse(m);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    let mut mats = Vec::with_capacity(3);
    for name in BLOCKS {
        match lines.next() {
            Some(h) if h.trim() == name => {}
            other => return Err(parse_err(format!("expected {name}, found {other:?}"))),
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        while let Some(line) = lines.peek() {
            if BLOCKS.contains(&line.trim()) {
                break;
            }
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("{name}: {e}")))?;
            rows.push(row);
            lines.next();
        }
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(parse_err(format!("{name} is not square")));
        }
        mats.push(SquareMatrix::new(n, rows.concat()).expect("square by construction"));
    }
    if lines.next().is_some() {
        return Err(parse_err("trailing content".into()));
    }
    let cross = mats.pop().unwrap();
    let textual = mats.pop().unwrap();
    let visual = mats.pop().unwrap();
    if textual.size() != visual.size() || cross.size() != visual.size() {
        return Err(parse_err("blocks differ in size".into()));
    }
    Ok(SimilarityTriplet {
        visual,
        textual,
        cross,
    })
}

pub fn export_triplet_csv(
    triplet: &SimilarityTriplet,
    path: impl AsRef<Path>,
) -> Result<(), SimilarityError> {
    let path = path.as_ref();
    atomic_write(path, triplet_to_csv(triplet).as_bytes()).map_err(|e| SimilarityError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embstore::{EmbeddingMatrix, Label};

    fn record(visual: &[Vec<f32>], textual: &[Vec<f32>]) -> FrameEmbeddingRecord {
        FrameEmbeddingRecord {
            video_id: "r".into(),
            label: Label::Real,
            visual: EmbeddingMatrix::from_rows(visual).unwrap(),
            textual: EmbeddingMatrix::from_rows(textual).unwrap(),
            captions: None,
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[3.0, 4.0], &[4.0, 3.0]).unwrap() - 0.96).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(SimilarityError::ZeroNorm));
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn two_frame_hand_example() {
        let r = record(
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[vec![1.0, 0.0], vec![1.0, 0.0]],
        );
        let t = build_triplet(&r).unwrap();
        assert_eq!(t.visual.data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(t.textual.data(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(t.cross.data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_sequence_is_all_ones() {
        let row = vec![0.3, -1.2, 2.0];
        let r = record(&vec![row.clone(); 5], &vec![row; 5]);
        let t = build_triplet(&r).unwrap();
        assert!(t.visual.data().iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_row_names_frame_and_modality() {
        let mut r = record(&[vec![1.0, 0.0], vec![0.5, 0.5]], &[vec![1.0, 0.0], vec![1.0, 0.0]]);
        r.textual.row_mut(1).fill(0.0);
        assert_eq!(
            build_triplet(&r),
            Err(SimilarityError::ZeroNormFrame {
                modality: Modality::Textual,
                frame: 1
            })
        );
    }

    #[test]
    fn single_frame_csv() {
        let r = record(&[vec![1.0, 1.0]], &[vec![1.0, 0.0]]);
        let t = build_triplet(&r).unwrap();
        let csv = triplet_to_csv(&t);
        let expected = format!("S_VISUAL\n1\nS_TEXTUAL\n1\nS_CROSS\n{}\n", t.cross.get(0, 0));
        assert_eq!(csv, expected);
        assert!((t.cross.get(0, 0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7);
    }

    #[test]
    fn all_ones_exports_literal_ones() {
        let row = vec![2.0, 0.0];
        let t = build_triplet(&record(&vec![row.clone(); 4], &vec![row; 4])).unwrap();
        let csv = triplet_to_csv(&t);
        let block: Vec<&str> = csv.lines().skip(1).take(4).collect();
        assert!(block.iter().all(|l| *l == "1,1,1,1"));
    }

    #[test]
    fn off_diagonal_mean() {
        assert_eq!(SquareMatrix::filled(3, 1.0).off_diagonal_mean(), Some(1.0));
        assert_eq!(SquareMatrix::identity(4).off_diagonal_mean(), Some(0.0));
        let m = SquareMatrix::new(2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        assert_eq!(m.off_diagonal_mean(), Some(0.5));
        assert_eq!(SquareMatrix::identity(1).off_diagonal_mean(), None);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(parse_triplet_csv("S_VISUAL\n1,2\n").is_err());
        assert!(parse_triplet_csv("nope").is_err());
    }
}
