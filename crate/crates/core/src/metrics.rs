//! Classification metrics over scored videos.
//!
//! The score of a video is its `p_fake`; label 1 means fake. Accuracy
//! predicts fake when `score >= threshold`. AUC is the Mann-Whitney
//! statistic with ties worth one half. AP walks the ranking from the top and
//! sums `(R_k - R_(k-1)) P_k`, treating a run of tied scores as a single
//! step whose precision and recall are taken after the whole run.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::atssnet::{AtssModel, ModelError};
use crate::embstore::Corpus;
use crate::simlat::{build_triplet, SimilarityError};

/// Default decision threshold on `p_fake`.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no samples to score")]
    Empty,
    #[error("average precision needs at least one positive sample")]
    NoPositives,
    #[error("ROC-AUC needs both classes, got {positives} positive and {negatives} negative")]
    SingleClass { positives: usize, negatives: usize },
    #[error("sample {index} has score {score}, expected a finite value in [0, 1]")]
    InvalidScore { index: usize, score: f64 },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub score: f64,
    /// `true` for fake.
    pub label: bool,
    pub video_id: String,
}

impl ScoredSample {
    pub fn new(score: f64, label: bool) -> Self {
        Self {
            score,
            label,
            video_id: String::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }
}

fn check_scores(samples: &[ScoredSample]) -> Result<(), MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    for (index, s) in samples.iter().enumerate() {
        if !(0.0..=1.0).contains(&s.score) {
            return Err(MetricError::InvalidScore { index, score: s.score });
        }
    }
    Ok(())
}

/// Accuracy and confusion counts at `threshold`.
pub fn accuracy(samples: &[ScoredSample], threshold: f64) -> Result<(f64, Confusion), MetricError> {
    check_scores(samples)?;
    let mut c = Confusion::default();
    for s in samples {
        match (s.score >= threshold, s.label) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok((c.accuracy(), c))
}

/// Runs of tied scores in descending order, as `(positives, negatives)`.
fn tie_groups(samples: &[ScoredSample]) -> Vec<(usize, usize)> {
    let mut sorted: Vec<(f64, bool)> = samples.iter().map(|s| (s.score, s.label)).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last = f64::NAN;
    for (score, label) in sorted {
        if score != last {
            groups.push((0, 0));
            last = score;
        }
        let g = groups.last_mut().expect("group pushed above");
        if label {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

pub fn average_precision(samples: &[ScoredSample]) -> Result<f64, MetricError> {
    check_scores(samples)?;
    let positives = samples.iter().filter(|s| s.label).count();
    if positives == 0 {
        return Err(MetricError::NoPositives);
    }
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    for (pos, neg) in tie_groups(samples) {
        tp += pos;
        seen += pos + neg;
        if pos > 0 {
            ap += (pos as f64 / positives as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

pub fn roc_auc(samples: &[ScoredSample]) -> Result<f64, MetricError> {
    check_scores(samples)?;
    let positives = samples.iter().filter(|s| s.label).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass { positives, negatives });
    }
    // walk from the lowest score up, counting negatives already passed
    let mut below = 0usize;
    let mut wins = 0.0;
    for (pos, neg) in tie_groups(samples).into_iter().rev() {
        wins += pos as f64 * (below as f64 + 0.5 * neg as f64);
        below += neg;
    }
    Ok(wins / (positives as f64 * negatives as f64))
}

/// Full evaluation of one scored set. `ap` and `auc` are absent when the
/// set lacks the classes they need.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ap: Option<f64>,
    pub auc: Option<f64>,
    pub acc: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl MetricsReport {
    pub fn from_samples(samples: &[ScoredSample]) -> Result<Self, MetricError> {
        let (acc, c) = accuracy(samples, THRESHOLD)?;
        let n_pos = samples.iter().filter(|s| s.label).count();
        let n_neg = samples.len() - n_pos;
        let ap = if n_pos > 0 { Some(average_precision(samples)?) } else { None };
        let auc = if n_pos > 0 && n_neg > 0 { Some(roc_auc(samples)?) } else { None };
        Ok(Self {
            ap,
            auc,
            acc,
            tp: c.tp,
            tn: c.tn,
            fp: c.fp,
            fn_: c.fn_,
            n_pos,
            n_neg,
        })
    }

    /// JSON object with every real rounded to 12 significant digits and
    /// absent metrics as `null`.
    pub fn to_json(&self) -> String {
        let mut rounded = self.clone();
        rounded.ap = rounded.ap.map(round_sig12);
        rounded.auc = rounded.auc.map(round_sig12);
        rounded.acc = round_sig12(rounded.acc);
        serde_json::to_string_pretty(&rounded).expect("report serializes")
    }
}

fn round_sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Scores every record of `corpus` with `model` (in parallel, results kept
/// in corpus order).
pub fn score_corpus(model: &AtssModel, corpus: &Corpus) -> Result<Vec<ScoredSample>, MetricError> {
    corpus
        .records()
        .par_iter()
        .map(|r| {
            let triplet = build_triplet(r)?;
            let p = model.forward(&triplet)?;
            Ok(ScoredSample {
                score: p.p_fake,
                label: r.label.is_fake(),
                video_id: r.video_id.clone(),
            })
        })
        .collect()
}

pub fn evaluate(model: &AtssModel, corpus: &Corpus) -> Result<MetricsReport, MetricError> {
    MetricsReport::from_samples(&score_corpus(model, corpus)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn samples(scores: &[f64], labels: &[u8]) -> Vec<ScoredSample> {
        scores.iter().zip(labels).map(|(&s, &l)| ScoredSample::new(s, l == 1)).collect()
    }

    /// Pairwise Mann-Whitney count.
    fn auc_oracle(s: &[ScoredSample]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for p in s.iter().filter(|x| x.label) {
            for n in s.iter().filter(|x| !x.label) {
                den += 1.0;
                num += if p.score > n.score {
                    1.0
                } else if p.score == n.score {
                    0.5
                } else {
                    0.0
                };
            }
        }
        num / den
    }

    /// Precision/recall staircase over distinct thresholds, high to low.
    fn ap_oracle(s: &[ScoredSample]) -> f64 {
        let mut thresholds: Vec<f64> = s.iter().map(|x| x.score).collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let positives = s.iter().filter(|x| x.label).count() as f64;
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for th in thresholds {
            let predicted: Vec<&ScoredSample> = s.iter().filter(|x| x.score >= th).collect();
            let tp = predicted.iter().filter(|x| x.label).count() as f64;
            let recall = tp / positives;
            let precision = tp / predicted.len() as f64;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        ap
    }

    #[test]
    fn accuracy_examples() {
        let (acc, c) = accuracy(&samples(&[1.0; 4], &[1; 4]), THRESHOLD).unwrap();
        assert_eq!((acc, c.tp), (1.0, 4));
        let (acc, c) = accuracy(&samples(&[0.6, 0.4], &[0, 1]), THRESHOLD).unwrap();
        assert_eq!((acc, c.fp, c.fn_), (0.0, 1, 1));
        let (_, c) = accuracy(&samples(&[0.5], &[1]), THRESHOLD).unwrap();
        assert_eq!(c.tp, 1);
        assert!(matches!(accuracy(&[], THRESHOLD), Err(MetricError::Empty)));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&samples(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])).unwrap(), 1.0);
        let ap = average_precision(&samples(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0])).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        let ap = average_precision(&samples(&[0.9, 0.8, 0.7, 0.6], &[0, 0, 0, 1])).unwrap();
        assert!((ap - 0.25).abs() < 1e-15);
        assert!(matches!(average_precision(&samples(&[0.3], &[0])), Err(MetricError::NoPositives)));
    }

    #[test]
    fn ap_groups_ties() {
        // one group holding everything: recall jumps to 1 at precision 1/2
        let ap = average_precision(&samples(&[0.5; 4], &[1, 0, 1, 0])).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&samples(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(roc_auc(&samples(&[0.3; 6], &[1, 0, 1, 0, 0, 1])).unwrap(), 0.5);
        assert_eq!(roc_auc(&samples(&[0.8, 0.6, 0.4, 0.2], &[1, 0, 1, 0])).unwrap(), 0.75);
        assert!(matches!(
            roc_auc(&samples(&[0.3, 0.4], &[1, 1])),
            Err(MetricError::SingleClass { positives: 2, negatives: 0 })
        ));
    }

    #[test]
    fn scores_outside_unit_interval_rejected() {
        assert!(matches!(
            roc_auc(&samples(&[0.3, f64::NAN], &[1, 0])),
            Err(MetricError::InvalidScore { index: 1, .. })
        ));
        assert!(accuracy(&samples(&[1.5], &[1]), THRESHOLD).is_err());
    }

    #[test]
    fn report_single_class_and_json() {
        let r = MetricsReport::from_samples(&samples(&[0.7, 0.2], &[0, 0])).unwrap();
        assert_eq!((r.ap, r.auc, r.acc, r.n_neg), (None, None, 0.5, 2));
        let json = r.to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["ap"].is_null() && v["auc"].is_null());
        assert_eq!(v["fn"], 0);
        assert_eq!(v["fp"], 1);

        let r = MetricsReport::from_samples(&samples(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0])).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["ap"].as_f64().unwrap(), 0.833333333333);
    }

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(round_sig12(1.0 / 3.0), 0.333333333333);
        assert_eq!(round_sig12(2.0 / 3.0), 0.666666666667);
        assert_eq!(round_sig12(1.0), 1.0);
        assert_eq!(round_sig12(0.0), 0.0);
    }

    fn scored_set() -> impl Strategy<Value = Vec<ScoredSample>> {
        // a coarse score grid forces plenty of ties
        prop::collection::vec((0u8..=10, any::<bool>()), 2..=64).prop_filter_map("needs both classes", |v| {
            let s: Vec<ScoredSample> = v.into_iter().map(|(k, l)| ScoredSample::new(k as f64 / 10.0, l)).collect();
            let pos = s.iter().filter(|x| x.label).count();
            (pos > 0 && pos < s.len()).then_some(s)
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(s in scored_set()) {
            prop_assert!((roc_auc(&s).unwrap() - auc_oracle(&s)).abs() < 1e-12);
        }

        #[test]
        fn ap_matches_staircase_oracle(s in scored_set()) {
            prop_assert!((average_precision(&s).unwrap() - ap_oracle(&s)).abs() < 1e-12);
        }

        #[test]
        fn rank_statistics_ignore_monotone_maps(s in scored_set()) {
            let mapped: Vec<ScoredSample> = s.iter().map(|x| ScoredSample::new(x.score.powi(3) * 0.5 + 0.25, x.label)).collect();
            prop_assert!((roc_auc(&s).unwrap() - roc_auc(&mapped).unwrap()).abs() < 1e-12);
            prop_assert!((average_precision(&s).unwrap() - average_precision(&mapped).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn inverting_labels_and_scores_keeps_auc(s in scored_set()) {
            let flipped: Vec<ScoredSample> = s.iter().map(|x| ScoredSample::new(1.0 - x.score, !x.label)).collect();
            prop_assert!((roc_auc(&s).unwrap() - roc_auc(&flipped).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn inverting_labels_complements_auc(s in scored_set()) {
            let flipped: Vec<ScoredSample> = s.iter().map(|x| ScoredSample::new(x.score, !x.label)).collect();
            // ties contribute one half on both sides, so the identity holds with ties too
            prop_assert!((roc_auc(&s).unwrap() + roc_auc(&flipped).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn accuracy_and_error_rate_sum_to_one(s in scored_set()) {
            let (acc, c) = accuracy(&s, THRESHOLD).unwrap();
            prop_assert_eq!(c.total(), s.len());
            let err = (c.fp + c.fn_) as f64 / s.len() as f64;
            prop_assert!((acc + err - 1.0).abs() < 1e-15);
        }
    }
}
