//! Synthetic corpora with a built-in real/fake dichotomy.
//!
//! Real videos follow a normalized random walk, so frames decorrelate as the
//! clip goes on. Fake videos are mixtures of a fixed per-video anchor and a
//! small residual, so every frame stays close to every other frame:
//!
//! ```text
//! real:  v_1 = n(g),  v_(t+1) = n(v_t + sigma_real eps_t)
//!        e_t = n(rho v_t + (1 - rho) eta_t)
//! fake:  a_v = n(g),  a_e = n(rho a_v + (1 - rho) xi)
//!        v_t = n(alpha a_v + (1 - alpha) sigma_fake eps_t)
//!        e_t = n(alpha a_e + (1 - alpha) sigma_fake eta_t)
//! ```
//!
//! `n` is L2 normalization and every noise vector is standard Gaussian.
//! Record `k` draws from its own ChaCha8 stream `k` of the seed, so its
//! content does not depend on how many records precede it or on which thread
//! generated it. Reals come first (`real_00000`, ...), then fakes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::embstore::{Corpus, CorpusError, EmbeddingMatrix, FrameEmbeddingRecord, Label};
use crate::simlat::SimilarityTriplet;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("density statistic needs at least 2 frames")]
    TooFewFrames,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_real: usize,
    pub n_fake: usize,
    pub frames: usize,
    pub dim: usize,
    /// Anchor weight of fake frames, in `[0, 1)`.
    pub alpha: f64,
    pub sigma_real: f64,
    pub sigma_fake: f64,
    /// Visual/textual coupling, in `[0, 1]`.
    pub rho_cross: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_real: 500,
            n_fake: 500,
            frames: 8,
            dim: 64,
            alpha: 0.85,
            sigma_real: 0.8,
            sigma_fake: 0.15,
            rho_cross: 0.7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidConfig(msg));
        if self.frames == 0 || self.dim == 0 {
            return bad(format!("frames and dim must be positive, got {} x {}", self.frames, self.dim));
        }
        if self.frames > u16::MAX as usize || self.dim > u16::MAX as usize {
            return bad("frames and dim must fit in 16 bits".into());
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0, 1), got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.rho_cross) {
            return bad(format!("rho_cross must be in [0, 1], got {}", self.rho_cross));
        }
        for (name, v) in [("sigma_real", self.sigma_real), ("sigma_fake", self.sigma_fake)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// `n(a x + b y)`. A zero result (probability zero for Gaussian input) falls
/// back to `x`, which is always a unit vector here.
fn mix(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    let v: Vec<f64> = x.iter().zip(y).map(|(p, q)| a * p + b * q).collect();
    let n = v.iter().map(|z| z * z).sum::<f64>().sqrt();
    if n > 0.0 && n.is_finite() {
        v.into_iter().map(|z| z / n).collect()
    } else {
        x.to_vec()
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let g = gaussian(rng, dim);
        let n = g.iter().map(|z| z * z).sum::<f64>().sqrt();
        if n > 0.0 {
            return g.into_iter().map(|z| z / n).collect();
        }
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
    let rows: Vec<Vec<f32>> = rows.into_iter().map(|r| r.into_iter().map(|x| x as f32).collect()).collect();
    EmbeddingMatrix::from_rows(&rows).expect("rows share one width")
}

fn real_record(c: &SynthConfig, rng: &mut ChaCha8Rng) -> (EmbeddingMatrix, EmbeddingMatrix) {
    let mut visual = Vec::with_capacity(c.frames);
    let mut textual = Vec::with_capacity(c.frames);
    let mut v = unit_gaussian(rng, c.dim);
    for t in 0..c.frames {
        if t > 0 {
            let eps = gaussian(rng, c.dim);
            v = mix(1.0, &v, c.sigma_real, &eps);
        }
        let eta = gaussian(rng, c.dim);
        textual.push(mix(c.rho_cross, &v, 1.0 - c.rho_cross, &eta));
        visual.push(v.clone());
    }
    (to_matrix(visual), to_matrix(textual))
}

fn fake_record(c: &SynthConfig, rng: &mut ChaCha8Rng) -> (EmbeddingMatrix, EmbeddingMatrix) {
    let a_v = unit_gaussian(rng, c.dim);
    let xi = gaussian(rng, c.dim);
    let a_e = mix(c.rho_cross, &a_v, 1.0 - c.rho_cross, &xi);
    let residual = (1.0 - c.alpha) * c.sigma_fake;
    let mut visual = Vec::with_capacity(c.frames);
    let mut textual = Vec::with_capacity(c.frames);
    for _ in 0..c.frames {
        let eps = gaussian(rng, c.dim);
        let eta = gaussian(rng, c.dim);
        visual.push(mix(c.alpha, &a_v, residual, &eps));
        textual.push(mix(c.alpha, &a_e, residual, &eta));
    }
    (to_matrix(visual), to_matrix(textual))
}

/// Generates `n_real` real records followed by `n_fake` fake ones.
pub fn generate(config: &SynthConfig) -> Result<Corpus, SynthError> {
    config.validate()?;
    let total = config.n_real + config.n_fake;
    let records = (0..total)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64);
            let (label, video_id, (visual, textual)) = if k < config.n_real {
                (Label::Real, format!("real_{k:05}"), real_record(config, &mut rng))
            } else {
                let i = k - config.n_real;
                (Label::Fake, format!("fake_{i:05}"), fake_record(config, &mut rng))
            };
            FrameEmbeddingRecord {
                video_id,
                label,
                visual,
                textual,
                captions: None,
            }
        })
        .collect();
    Ok(Corpus::new(records)?)
}

/// Mean off-diagonal similarity of each matrix of a triplet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityStatistic {
    pub visual: f64,
    pub textual: f64,
    pub cross: f64,
}

impl DensityStatistic {
    pub fn as_array(&self) -> [f64; 3] {
        [self.visual, self.textual, self.cross]
    }
}

pub fn density_statistic(triplet: &SimilarityTriplet) -> Result<DensityStatistic, SynthError> {
    let [v, t, c] = triplet.matrices().map(|m| m.off_diagonal_mean());
    match (v, t, c) {
        (Some(visual), Some(textual), Some(cross)) => Ok(DensityStatistic { visual, textual, cross }),
        _ => Err(SynthError::TooFewFrames),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embstore::encode_corpus;
    use crate::simlat::{build_triplet, SquareMatrix};

    fn small(n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_real: n,
            n_fake: n,
            seed,
            ..SynthConfig::default()
        }
    }

    fn triplet_of(m: SquareMatrix) -> SimilarityTriplet {
        SimilarityTriplet {
            visual: m.clone(),
            textual: m.clone(),
            cross: m,
        }
    }

    #[test]
    fn density_statistic_examples() {
        assert_eq!(density_statistic(&triplet_of(SquareMatrix::filled(4, 1.0))).unwrap().visual, 1.0);
        assert_eq!(density_statistic(&triplet_of(SquareMatrix::identity(4))).unwrap().textual, 0.0);
        let m = SquareMatrix::new(2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        assert_eq!(density_statistic(&triplet_of(m)).unwrap().cross, 0.5);
        assert!(matches!(
            density_statistic(&triplet_of(SquareMatrix::identity(1))),
            Err(SynthError::TooFewFrames)
        ));
    }

    #[test]
    fn ids_labels_and_shapes() {
        let c = generate(&SynthConfig {
            n_real: 3,
            n_fake: 2,
            frames: 5,
            dim: 7,
            ..SynthConfig::default()
        })
        .unwrap();
        let ids: Vec<&str> = c.records().iter().map(|r| r.video_id.as_str()).collect();
        assert_eq!(ids, ["real_00000", "real_00001", "real_00002", "fake_00000", "fake_00001"]);
        assert_eq!(c.class_counts(), (3, 2));
        assert_eq!(c.shape(), Some((5, 7)));
    }

    #[test]
    fn rows_are_unit_norm() {
        for r in generate(&small(10, 3)).unwrap().records() {
            for row in r.visual.rows().chain(r.textual.rows()) {
                let n = row.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = encode_corpus(&generate(&small(5, 11)).unwrap()).unwrap();
        let b = encode_corpus(&generate(&small(5, 11)).unwrap()).unwrap();
        let c = encode_corpus(&generate(&small(5, 12)).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn records_do_not_depend_on_corpus_size() {
        let a = generate(&small(3, 4)).unwrap();
        let b = generate(&SynthConfig {
            n_real: 6,
            n_fake: 0,
            seed: 4,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(a.records()[..3], b.records()[..3]);
    }

    #[test]
    fn anchor_dominant_limit() {
        let c = generate(&SynthConfig {
            n_real: 0,
            n_fake: 20,
            alpha: 0.999,
            sigma_fake: 1e-6,
            ..SynthConfig::default()
        })
        .unwrap();
        for r in c.records() {
            let d = density_statistic(&build_triplet(r).unwrap()).unwrap();
            assert!(d.visual > 0.999, "{}", d.visual);
        }
    }

    #[test]
    fn fake_is_denser_than_real() {
        for seed in [1, 2, 3] {
            let c = generate(&small(200, seed)).unwrap();
            let mut sums = [[0.0; 3]; 2];
            for r in c.records() {
                let d = density_statistic(&build_triplet(r).unwrap()).unwrap();
                for (s, x) in sums[r.label.as_u8() as usize].iter_mut().zip(d.as_array()) {
                    *s += x / 200.0;
                }
            }
            for k in 0..3 {
                assert!(sums[1][k] > sums[0][k], "seed {seed} matrix {k}: {:?}", sums);
            }
        }
    }

    #[test]
    fn invalid_configs() {
        for bad in [
            SynthConfig { alpha: 1.0, ..SynthConfig::default() },
            SynthConfig { alpha: -0.1, ..SynthConfig::default() },
            SynthConfig { rho_cross: 1.5, ..SynthConfig::default() },
            SynthConfig { sigma_real: 0.0, ..SynthConfig::default() },
            SynthConfig { sigma_fake: f64::NAN, ..SynthConfig::default() },
            SynthConfig { frames: 0, ..SynthConfig::default() },
            SynthConfig { dim: 0, ..SynthConfig::default() },
        ] {
            assert!(matches!(generate(&bad), Err(SynthError::InvalidConfig(_))), "{bad:?}");
        }
    }

    #[test]
    fn empty_config_gives_empty_corpus() {
        let c = generate(&small(0, 0)).unwrap();
        assert!(c.is_empty());
    }
}
