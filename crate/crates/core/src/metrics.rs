//! Accuracy, calibration error and confidence-gated selective classification.
//!
//! Everything here works in fractions; percentages are a presentation concern.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProbMatrix;

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_LEVELS: [f64; 5] = [0.99, 0.95, 0.90, 0.85, 0.80];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub confidence: f64,
    pub predicted: usize,
    pub label: usize,
}

impl PredictionRecord {
    pub fn correct(&self) -> bool {
        self.predicted == self.label
    }
}

/// One record per row: confidence is the row max, prediction the row argmax.
pub fn records_from_probs(p: &ProbMatrix, labels: &[usize]) -> Result<Vec<PredictionRecord>> {
    if p.nrows() != labels.len() {
        return Err(Error::shape(format!(
            "{} probability rows but {} labels",
            p.nrows(),
            labels.len()
        )));
    }
    Ok(p.confidences()
        .into_iter()
        .zip(p.predictions())
        .zip(labels)
        .map(|((confidence, predicted), &label)| PredictionRecord {
            confidence,
            predicted,
            label,
        })
        .collect())
}

fn check_records(records: &[PredictionRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::input("no prediction records"));
    }
    if let Some(r) = records.iter().find(|r| !(0.0..=1.0).contains(&r.confidence)) {
        return Err(Error::input(format!("confidence {} outside [0, 1]", r.confidence)));
    }
    Ok(())
}

fn check_bins(bins: usize) -> Result<()> {
    if bins == 0 {
        return Err(Error::param("need at least one bin"));
    }
    Ok(())
}

pub fn accuracy(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::input("no prediction records"));
    }
    Ok(records.iter().filter(|r| r.correct()).count() as f64 / records.len() as f64)
}

/// Index of the equal-width bin `(k/B, (k+1)/B]` holding `conf`; zero maps to bin 0.
pub fn bin_index(conf: f64, bins: usize) -> usize {
    let b = bins as f64;
    let mut k = ((conf * b).ceil() as usize).saturating_sub(1).min(bins - 1);
    // ceil on a product can be off by one ulp near an edge; settle against the edges themselves.
    while k > 0 && conf <= k as f64 / b {
        k -= 1;
    }
    while k + 1 < bins && conf > (k + 1) as f64 / b {
        k += 1;
    }
    k
}

#[derive(Debug, Clone, Default)]
struct Acc {
    count: usize,
    conf_sum: f64,
    correct: usize,
}

impl Acc {
    fn push(&mut self, r: &PredictionRecord) {
        self.count += 1;
        self.conf_sum += r.confidence;
        self.correct += usize::from(r.correct());
    }

    fn gap(&self) -> f64 {
        let n = self.count as f64;
        (self.correct as f64 / n - self.conf_sum / n).abs()
    }
}

fn equal_width_bins(records: &[PredictionRecord], bins: usize) -> Vec<Acc> {
    let mut accs = vec![Acc::default(); bins];
    for r in records {
        accs[bin_index(r.confidence, bins)].push(r);
    }
    accs
}

fn weighted_gap(groups: &[Acc], n: usize) -> f64 {
    groups
        .iter()
        .filter(|g| g.count > 0)
        .map(|g| g.count as f64 / n as f64 * g.gap())
        .sum()
}

/// Expected calibration error with `bins` equal-width confidence bins.
pub fn ece(records: &[PredictionRecord], bins: usize) -> Result<f64> {
    check_records(records)?;
    check_bins(bins)?;
    Ok(weighted_gap(&equal_width_bins(records, bins), records.len()))
}

/// Sizes of the equal-count groups: the first `n mod B` get one extra record.
pub fn adaptive_group_sizes(n: usize, bins: usize) -> Vec<usize> {
    let base = n / bins;
    let extra = n % bins;
    (0..bins)
        .map(|b| base + usize::from(b < extra))
        .filter(|&s| s > 0)
        .collect()
}

/// Adaptive ECE: records sorted by descending confidence (stable on ties)
/// and split into `bins` contiguous groups of near-equal size.
pub fn aece(records: &[PredictionRecord], bins: usize) -> Result<f64> {
    check_records(records)?;
    check_bins(bins)?;
    let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut groups = Vec::new();
    let mut start = 0;
    for size in adaptive_group_sizes(records.len(), bins) {
        let mut acc = Acc::default();
        sorted[start..start + size].iter().for_each(|r| acc.push(r));
        groups.push(acc);
        start += size;
    }
    Ok(weighted_gap(&groups, records.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub level: f64,
    pub coverage: f64,
    pub selected: usize,
    pub selected_accuracy: Option<f64>,
    pub reliable: bool,
    pub classwise_coverage: f64,
}

/// Keeps records with `confidence ≥ level`. The selection is reliable when it
/// is non-empty and its accuracy reaches `level`.
pub fn coverage_at(records: &[PredictionRecord], level: f64, num_classes: usize) -> Result<CoverageReport> {
    if records.is_empty() {
        return Err(Error::input("no prediction records"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::param(format!("confidence level {level} not in (0, 1)")));
    }
    if num_classes == 0 {
        return Err(Error::param("number of classes must be positive"));
    }
    let mut seen = vec![false; num_classes];
    let mut selected = 0usize;
    let mut correct = 0usize;
    for r in records.iter().filter(|r| r.confidence >= level) {
        selected += 1;
        correct += usize::from(r.correct());
        if r.label >= num_classes {
            return Err(Error::LabelOutOfRange {
                row: 0,
                label: r.label,
                classes: num_classes,
            });
        }
        seen[r.label] = true;
    }
    let selected_accuracy = (selected > 0).then(|| correct as f64 / selected as f64);
    Ok(CoverageReport {
        level,
        coverage: selected as f64 / records.len() as f64,
        selected,
        selected_accuracy,
        reliable: selected_accuracy.is_some_and(|a| a >= level),
        classwise_coverage: seen.iter().filter(|&&s| s).count() as f64 / num_classes as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub ece: f64,
    pub aece: f64,
    pub overall_accuracy: f64,
    pub overall_mean_confidence: f64,
}

/// Reliability-diagram table over equal-width bins, with ECE and AECE.
pub fn calibration_bins(records: &[PredictionRecord], bins: usize) -> Result<CalibrationReport> {
    check_records(records)?;
    check_bins(bins)?;
    let n = records.len();
    let accs = equal_width_bins(records, bins);
    let table = accs
        .iter()
        .enumerate()
        .map(|(k, a)| CalibrationBin {
            lo: k as f64 / bins as f64,
            hi: (k + 1) as f64 / bins as f64,
            count: a.count,
            mean_confidence: (a.count > 0).then(|| a.conf_sum / a.count as f64),
            accuracy: (a.count > 0).then(|| a.correct as f64 / a.count as f64),
            weight: a.count as f64 / n as f64,
        })
        .collect();
    Ok(CalibrationReport {
        bins: table,
        ece: weighted_gap(&accs, n),
        aece: aece(records, bins)?,
        overall_accuracy: accuracy(records)?,
        overall_mean_confidence: records.iter().map(|r| r.confidence).sum::<f64>() / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn recs(conf: &[f64], correct: &[bool]) -> Vec<PredictionRecord> {
        conf.iter()
            .zip(correct)
            .enumerate()
            .map(|(i, (&c, &ok))| PredictionRecord {
                confidence: c,
                predicted: i % 3,
                label: if ok { i % 3 } else { (i + 1) % 3 },
            })
            .collect()
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&recs(&[0.5; 3], &[true; 3])).unwrap(), 1.0);
        assert_eq!(accuracy(&recs(&[0.5; 4], &[true, false, true, false])).unwrap(), 0.5);
        let c = [true, false, false, true, false, true, false, false];
        assert_eq!(accuracy(&recs(&[0.5; 8], &c)).unwrap(), 0.375);
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn bin_edges_are_half_open() {
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.3, 10), 2);
        assert_eq!(bin_index(0.30000001, 10), 3);
        assert_eq!(bin_index(0.7, 10), 6);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(0.55, 1), 0);
    }

    #[test]
    fn ece_hand_examples() {
        let r = recs(&[0.95, 0.85, 0.65, 0.55], &[true, true, false, true]);
        assert_relative_eq!(ece(&r, 10).unwrap(), 0.325, epsilon = 1e-12);
        let r = recs(&[0.7], &[false]);
        assert_relative_eq!(ece(&r, 10).unwrap(), 0.7, epsilon = 1e-15);
    }

    #[test]
    fn ece_zero_when_bins_match_accuracy() {
        // bin (0.7, 0.8]: 4 records at 0.75 with 3 correct
        let r = recs(&[0.75; 4], &[true, true, true, false]);
        assert_eq!(ece(&r, 10).unwrap(), 0.0);
    }

    #[test]
    fn aece_hand_examples() {
        let r = recs(&[0.9, 0.8, 0.6, 0.5], &[true, true, false, true]);
        assert_relative_eq!(aece(&r, 2).unwrap(), 0.10, epsilon = 1e-12);

        let r = recs(&[0.9, 0.2, 0.6], &[true, true, false]);
        let expected = (0.1 + 0.8 + 0.6) / 3.0;
        assert_relative_eq!(aece(&r, 10).unwrap(), expected, epsilon = 1e-12);

        let r = recs(&[0.5; 6], &[true, false, true, false, true, false]);
        assert_relative_eq!(aece(&r, 3).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn group_sizes() {
        assert_eq!(adaptive_group_sizes(23, 10), vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
        assert_eq!(adaptive_group_sizes(3, 10), vec![1, 1, 1]);
    }

    #[test]
    fn coverage_examples() {
        let r = recs(&[0.99, 0.98, 0.50], &[true, true, false]);
        let rep = coverage_at(&r, 0.95, 3).unwrap();
        assert_relative_eq!(rep.coverage, 2.0 / 3.0);
        assert_eq!(rep.selected_accuracy, Some(1.0));
        assert!(rep.reliable);

        let rep = coverage_at(&r, 0.1, 3).unwrap();
        assert_eq!(rep.coverage, 1.0);

        // 9 of 10 selected correct at 0.95 → not reliable but coverage still reported
        let mut c = vec![true; 9];
        c.push(false);
        let r = recs(&[0.97; 10], &c);
        let rep = coverage_at(&r, 0.95, 3).unwrap();
        assert!(!rep.reliable);
        assert_eq!(rep.coverage, 1.0);
        assert_relative_eq!(rep.selected_accuracy.unwrap(), 0.9);
    }

    #[test]
    fn empty_selection_is_unreliable() {
        let r = recs(&[0.5, 0.6], &[true, true]);
        let rep = coverage_at(&r, 0.99, 3).unwrap();
        assert_eq!(rep.coverage, 0.0);
        assert_eq!(rep.selected_accuracy, None);
        assert!(!rep.reliable);
        assert_eq!(rep.classwise_coverage, 0.0);
        assert!(coverage_at(&[], 0.9, 3).is_err());
        assert!(coverage_at(&r, 1.0, 3).is_err());
    }

    #[test]
    fn report_matches_standalone_metrics() {
        let conf: Vec<f64> = (0..10).map(|k| 0.05 + 0.1 * k as f64).collect();
        let r = recs(&conf, &[true, false, true, true, false, true, true, true, false, true]);
        let rep = calibration_bins(&r, 10).unwrap();
        assert_eq!(rep.ece, ece(&r, 10).unwrap());
        assert_eq!(rep.aece, aece(&r, 10).unwrap());
        for b in &rep.bins {
            assert_relative_eq!(b.weight, 0.1);
        }
        let weights: f64 = rep.bins.iter().map(|b| b.weight).sum();
        assert_relative_eq!(weights, 1.0, epsilon = 1e-12);
    }

    fn arb_records() -> impl Strategy<Value = Vec<PredictionRecord>> {
        prop::collection::vec((0.0f64..=1.0, 0usize..4, 0usize..4), 1..200).prop_map(|v| {
            v.into_iter()
                .map(|(confidence, predicted, label)| PredictionRecord {
                    confidence,
                    predicted,
                    label,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn calibration_errors_in_unit_interval(r in arb_records()) {
            let e = ece(&r, 10).unwrap();
            let a = aece(&r, 10).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn ece_is_permutation_invariant(r in arb_records(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = r.clone();
            shuffled.shuffle(&mut crate::rng::seeded(seed));
            prop_assert!((ece(&r, 10).unwrap() - ece(&shuffled, 10).unwrap()).abs() < 1e-12);
            // distinct confidences make the AECE sort order unique
            let mut dedup: Vec<f64> = r.iter().map(|x| x.confidence).collect();
            dedup.sort_by(f64::total_cmp);
            dedup.dedup();
            if dedup.len() == r.len() {
                prop_assert!((aece(&r, 10).unwrap() - aece(&shuffled, 10).unwrap()).abs() < 1e-12);
            }
        }

        #[test]
        fn coverage_monotone_in_level(r in arb_records()) {
            let mut prev = (f64::INFINITY, f64::INFINITY);
            for level in [0.05, 0.2, 0.5, 0.8, 0.9, 0.99] {
                let rep = coverage_at(&r, level, 4).unwrap();
                prop_assert!(rep.coverage <= prev.0);
                prop_assert!(rep.classwise_coverage <= prev.1 && rep.classwise_coverage <= 1.0);
                prev = (rep.coverage, rep.classwise_coverage);
            }
        }

        #[test]
        fn constant_confidence_ece_equals_aece(c in 0.0f64..=1.0, correct in prop::collection::vec(any::<bool>(), 1..100)) {
            let r = recs(&vec![c; correct.len()], &correct);
            let acc = accuracy(&r).unwrap();
            let e = ece(&r, 10).unwrap();
            prop_assert!((e - (acc - c).abs()).abs() < 1e-12);
            // AECE groups each see a slice of the labels; only equal when groups share the accuracy.
            if correct.iter().all(|&b| b) || correct.iter().all(|&b| !b) {
                prop_assert!((aece(&r, 10).unwrap() - e).abs() < 1e-12);
            }
        }
    }
}
