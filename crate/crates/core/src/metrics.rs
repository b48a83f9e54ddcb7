//! Classification quality and calibration metrics.
//!
//! Quality is summarised by the multiclass Matthews correlation coefficient,
//! computed from a confusion matrix; calibration by the expected calibration
//! error over equal-width confidence bins, where a prediction's confidence
//! is its highest class probability.

use serde::Serialize;

use crate::error::{Error, Result};

/// `K x K` table of prediction counts indexed `(true class, predicted
/// class)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config(
                "a confusion matrix needs at least two classes",
            ));
        }
        Ok(ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Records one prediction.
    pub fn update(&mut self, true_class: usize, predicted: usize) -> Result<()> {
        if true_class >= self.num_classes || predicted >= self.num_classes {
            return Err(Error::input(format!(
                "class pair ({true_class}, {predicted}) out of range for {} classes",
                self.num_classes
            )));
        }
        self.counts[true_class * self.num_classes + predicted] += 1;
        Ok(())
    }

    pub fn get(&self, true_class: usize, predicted: usize) -> u64 {
        assert!(
            true_class < self.num_classes && predicted < self.num_classes,
            "class index out of range"
        );
        self.counts[true_class * self.num_classes + predicted]
    }

    /// Total number of recorded predictions.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Number of correct predictions (the diagonal).
    pub fn correct(&self) -> u64 {
        (0..self.num_classes).map(|k| self.get(k, k)).sum()
    }

    /// Adds another matrix's counts into this one.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::shape(format!(
                "cannot merge a {}-class matrix into a {}-class one",
                other.num_classes, self.num_classes
            )));
        }
        for (a, &b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Multiclass Matthews correlation coefficient:
    ///
    /// ```text
    /// (c*s - sum_k p_k t_k) / sqrt((s^2 - sum p_k^2)(s^2 - sum t_k^2))
    /// ```
    ///
    /// where `c` is the number of correct predictions, `s` the total,
    /// `t_k` the true count and `p_k` the predicted count of class `k`.
    /// Degenerate matrices (all mass in one true class or one predicted
    /// class, making a factor under the root zero) score 0. Errors when
    /// empty.
    pub fn mcc(&self) -> Result<f64> {
        let s = self.total();
        if s == 0 {
            return Err(Error::state("confusion matrix is empty"));
        }
        let sf = s as f64;
        let c = self.correct() as f64;
        let mut sum_pt = 0.0;
        let mut sum_p2 = 0.0;
        let mut sum_t2 = 0.0;
        for k in 0..self.num_classes {
            let t: u64 = (0..self.num_classes).map(|j| self.get(k, j)).sum();
            let p: u64 = (0..self.num_classes).map(|j| self.get(j, k)).sum();
            sum_pt += p as f64 * t as f64;
            sum_p2 += (p as f64) * (p as f64);
            sum_t2 += (t as f64) * (t as f64);
        }
        let denom = (sf * sf - sum_p2) * (sf * sf - sum_t2);
        if denom <= 0.0 {
            return Ok(0.0);
        }
        Ok((c * sf - sum_pt) / denom.sqrt())
    }
}

/// Equal-width confidence histogram accumulating calibration statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationBins {
    num_bins: usize,
    counts: Vec<u64>,
    confidence_sums: Vec<f64>,
    correct: Vec<u64>,
}

impl CalibrationBins {
    pub fn new(num_bins: usize) -> Result<Self> {
        if num_bins == 0 {
            return Err(Error::config("at least one calibration bin is required"));
        }
        Ok(CalibrationBins {
            num_bins,
            counts: vec![0; num_bins],
            confidence_sums: vec![0.0; num_bins],
            correct: vec![0; num_bins],
        })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Total number of recorded predictions.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Records one prediction's confidence (its highest class probability)
    /// and whether it was correct. Bin `floor(confidence * B)`, clamped to
    /// the last bin so confidence 1.0 lands in `[1 - 1/B, 1]`.
    pub fn update(&mut self, confidence: f64, is_correct: bool) -> Result<()> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::input(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        let bin = ((confidence * self.num_bins as f64) as usize).min(self.num_bins - 1);
        self.counts[bin] += 1;
        self.confidence_sums[bin] += confidence;
        self.correct[bin] += is_correct as u64;
        Ok(())
    }

    /// Adds another histogram's tallies into this one.
    pub fn merge(&mut self, other: &CalibrationBins) -> Result<()> {
        if other.num_bins != self.num_bins {
            return Err(Error::shape(format!(
                "cannot merge {}-bin histogram into {}-bin one",
                other.num_bins, self.num_bins
            )));
        }
        for b in 0..self.num_bins {
            self.counts[b] += other.counts[b];
            self.confidence_sums[b] += other.confidence_sums[b];
            self.correct[b] += other.correct[b];
        }
        Ok(())
    }

    /// Expected calibration error: the count-weighted mean of
    /// `|accuracy - average confidence|` over non-empty bins. Each bin's
    /// weighted term `(n_b / N) * |sum_conf_b / n_b - correct_b / n_b|`
    /// is computed as `|sum_conf_b - correct_b| / N`, which is the same
    /// number with two fewer roundings. Errors when no predictions were
    /// recorded.
    pub fn ece(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::state("no predictions recorded"));
        }
        let mut gap_sum = 0.0;
        for b in 0..self.num_bins {
            if self.counts[b] == 0 {
                continue;
            }
            gap_sum += (self.confidence_sums[b] - self.correct[b] as f64).abs();
        }
        Ok(gap_sum / total as f64)
    }

    /// Per-bin reliability rows, including empty bins (their averages are
    /// absent). `gap = average confidence - accuracy`, positive when the
    /// model is overconfident.
    pub fn reliability(&self) -> Vec<ReliabilityRecord> {
        let width = 1.0 / self.num_bins as f64;
        (0..self.num_bins)
            .map(|b| {
                let (avg_confidence, accuracy, gap) = if self.counts[b] == 0 {
                    (None, None, None)
                } else {
                    let n = self.counts[b] as f64;
                    let conf = self.confidence_sums[b] / n;
                    let acc = self.correct[b] as f64 / n;
                    (Some(conf), Some(acc), Some(conf - acc))
                };
                ReliabilityRecord {
                    bin_low: b as f64 * width,
                    bin_high: if b + 1 == self.num_bins {
                        1.0
                    } else {
                        (b + 1) as f64 * width
                    },
                    count: self.counts[b],
                    avg_confidence,
                    accuracy,
                    gap,
                }
            })
            .collect()
    }
}

/// One row of a reliability diagram.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityRecord {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: u64,
    pub avg_confidence: Option<f64>,
    pub accuracy: Option<f64>,
    /// `avg_confidence - accuracy`; positive means overconfident.
    pub gap: Option<f64>,
}

/// Summary of one stream run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub mcc: f64,
    pub ece: f64,
    /// Online sample indices at which retraining was triggered, ascending.
    pub retraining_positions: Vec<usize>,
    pub retraining_count: usize,
    /// Wall-clock duration of the run in seconds. Excluded from serialised
    /// output so that reruns produce identical files.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RunMetrics {
    pub fn new(
        mcc: f64,
        ece: f64,
        retraining_positions: Vec<usize>,
        wall_time_s: f64,
    ) -> Result<Self> {
        if !(-1.0..=1.0).contains(&mcc) {
            return Err(Error::input(format!("MCC {mcc} outside [-1, 1]")));
        }
        if !(0.0..=1.0).contains(&ece) {
            return Err(Error::input(format!("ECE {ece} outside [0, 1]")));
        }
        if retraining_positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::input(
                "retraining positions must be strictly increasing",
            ));
        }
        Ok(RunMetrics {
            mcc,
            ece,
            retraining_count: retraining_positions.len(),
            retraining_positions,
            wall_time_s,
        })
    }
}

/// Mean or spread of the per-run metrics, one value per metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricMoments {
    pub mcc: f64,
    pub ece: f64,
    pub retrainings: f64,
    pub wall_time_s: f64,
}

/// Mean and population standard deviation over a set of runs (typically one
/// run per seed).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedAggregate {
    pub runs: usize,
    pub mean: MetricMoments,
    pub std: MetricMoments,
}

/// Aggregates per-seed runs into mean and population standard deviation
/// (divide by `n`, not `n - 1`). Errors on an empty slice.
pub fn aggregate_seeds(runs: &[RunMetrics]) -> Result<SeedAggregate> {
    if runs.is_empty() {
        return Err(Error::input("cannot aggregate zero runs"));
    }
    let n = runs.len() as f64;
    let extract = |f: &dyn Fn(&RunMetrics) -> f64| -> (f64, f64) {
        let mean = runs.iter().map(f).sum::<f64>() / n;
        let var = runs
            .iter()
            .map(|r| (f(r) - mean) * (f(r) - mean))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    };
    let (mcc_mean, mcc_std) = extract(&|r| r.mcc);
    let (ece_mean, ece_std) = extract(&|r| r.ece);
    let (rt_mean, rt_std) = extract(&|r| r.retraining_count as f64);
    let (wt_mean, wt_std) = extract(&|r| r.wall_time_s);
    Ok(SeedAggregate {
        runs: runs.len(),
        mean: MetricMoments {
            mcc: mcc_mean,
            ece: ece_mean,
            retrainings: rt_mean,
            wall_time_s: wt_mean,
        },
        std: MetricMoments {
            mcc: mcc_std,
            ece: ece_std,
            retrainings: rt_std,
            wall_time_s: wt_std,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_matrix_basics() {
        assert!(ConfusionMatrix::new(1).is_err());
        let mut m = ConfusionMatrix::new(3).unwrap();
        m.update(0, 0).unwrap();
        m.update(0, 2).unwrap();
        m.update(2, 2).unwrap();
        assert!(m.update(3, 0).is_err());
        assert_eq!(m.get(0, 2), 1);
        assert_eq!(m.total(), 3);
        assert_eq!(m.correct(), 2);
    }

    #[test]
    fn mcc_perfect_and_empty() {
        let mut m = ConfusionMatrix::new(4).unwrap();
        assert!(matches!(m.mcc(), Err(Error::State(_))));
        for k in 0..4 {
            for _ in 0..(k + 1) * 3 {
                m.update(k, k).unwrap();
            }
        }
        assert_eq!(m.mcc().unwrap(), 1.0);
    }

    #[test]
    fn mcc_matches_binary_closed_form() {
        // tp=40, fn=10, fp=5, tn=45 with true class 1 = "positive".
        let mut m = ConfusionMatrix::new(2).unwrap();
        for _ in 0..40 {
            m.update(1, 1).unwrap();
        }
        for _ in 0..10 {
            m.update(1, 0).unwrap();
        }
        for _ in 0..5 {
            m.update(0, 1).unwrap();
        }
        for _ in 0..45 {
            m.update(0, 0).unwrap();
        }
        let (tp, fn_, fp, tn) = (40.0_f64, 10.0_f64, 5.0_f64, 45.0_f64);
        let expected =
            (tp * tn - fp * fn_) / ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        assert!((m.mcc().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn mcc_degenerate_single_class_is_zero() {
        let mut m = ConfusionMatrix::new(2).unwrap();
        for _ in 0..10 {
            m.update(0, 0).unwrap();
        }
        assert_eq!(m.mcc().unwrap(), 0.0);
        // All predictions in one column is degenerate too.
        let mut m = ConfusionMatrix::new(2).unwrap();
        for _ in 0..5 {
            m.update(0, 1).unwrap();
            m.update(1, 1).unwrap();
        }
        assert_eq!(m.mcc().unwrap(), 0.0);
    }

    #[test]
    fn inverted_predictions_score_minus_one() {
        let mut m = ConfusionMatrix::new(2).unwrap();
        for _ in 0..7 {
            m.update(0, 1).unwrap();
        }
        for _ in 0..9 {
            m.update(1, 0).unwrap();
        }
        assert!((m.mcc().unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn merge_sums_counts() {
        let mut a = ConfusionMatrix::new(2).unwrap();
        a.update(0, 0).unwrap();
        let mut b = ConfusionMatrix::new(2).unwrap();
        b.update(0, 0).unwrap();
        b.update(1, 0).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a.get(0, 0), 2);
        assert_eq!(a.get(1, 0), 1);
        let c = ConfusionMatrix::new(3).unwrap();
        assert!(a.merge(&c).is_err());
    }

    #[test]
    fn calibration_bin_routing() {
        let mut bins = CalibrationBins::new(10).unwrap();
        bins.update(0.0, true).unwrap(); // bin 0
        bins.update(0.05, false).unwrap(); // bin 0
        bins.update(0.1, true).unwrap(); // bin 1 (floor(0.1*10) = 1)
        bins.update(0.95, true).unwrap(); // bin 9
        bins.update(1.0, true).unwrap(); // clamped into bin 9
        assert!(bins.update(1.5, true).is_err());
        assert!(bins.update(-0.1, true).is_err());
        assert_eq!(bins.counts, vec![2, 1, 0, 0, 0, 0, 0, 0, 0, 2]);
        assert_eq!(bins.total(), 5);
    }

    #[test]
    fn ece_of_a_perfectly_calibrated_bin_is_zero() {
        let mut bins = CalibrationBins::new(10).unwrap();
        // Confidence 0.75, accuracy 3/4 = 0.75: gap zero.
        bins.update(0.75, true).unwrap();
        bins.update(0.75, true).unwrap();
        bins.update(0.75, true).unwrap();
        bins.update(0.75, false).unwrap();
        assert_eq!(bins.ece().unwrap(), 0.0);
    }

    #[test]
    fn ece_single_overconfident_bin_is_exact() {
        let mut bins = CalibrationBins::new(10).unwrap();
        for i in 0..1000 {
            bins.update(1.0, i % 5 != 0).unwrap(); // 80% correct
        }
        // |1000 - 800| / 1000 involves no inexact operation.
        assert_eq!(bins.ece().unwrap(), 0.2);
    }

    #[test]
    fn ece_errors_when_empty() {
        let bins = CalibrationBins::new(10).unwrap();
        assert!(matches!(bins.ece(), Err(Error::State(_))));
    }

    #[test]
    fn reliability_rows_cover_all_bins_and_report_gaps() {
        let mut bins = CalibrationBins::new(4).unwrap();
        bins.update(0.9, false).unwrap();
        bins.update(0.9, true).unwrap();
        let rows = bins.reliability();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].count, 0);
        assert_eq!(rows[0].avg_confidence, None);
        let top = &rows[3];
        assert_eq!(top.bin_low, 0.75);
        assert_eq!(top.bin_high, 1.0);
        assert_eq!(top.count, 2);
        assert!((top.gap.unwrap() - (0.9 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn ece_equals_weighted_gap_sum_from_reliability() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut bins = CalibrationBins::new(10).unwrap();
        for _ in 0..500 {
            let conf: f64 = rng.random();
            let correct = rng.random::<f64>() < 0.7;
            bins.update(conf, correct).unwrap();
        }
        let total = bins.total() as f64;
        let recomputed: f64 = bins
            .reliability()
            .iter()
            .map(|row| row.gap.map_or(0.0, |g| row.count as f64 / total * g.abs()))
            .sum();
        assert!((bins.ece().unwrap() - recomputed).abs() < 1e-12);
    }

    #[test]
    fn run_metrics_validation() {
        assert!(RunMetrics::new(0.5, 0.1, vec![3, 9, 20], 1.0).is_ok());
        assert!(RunMetrics::new(1.5, 0.1, vec![], 1.0).is_err());
        assert!(RunMetrics::new(0.5, -0.1, vec![], 1.0).is_err());
        assert!(RunMetrics::new(0.5, 0.1, vec![9, 3], 1.0).is_err());
        assert!(RunMetrics::new(0.5, 0.1, vec![3, 3], 1.0).is_err());
        let m = RunMetrics::new(0.5, 0.1, vec![1, 2], 1.0).unwrap();
        assert_eq!(m.retraining_count, 2);
    }

    #[test]
    fn aggregate_mean_and_population_std() {
        let runs = vec![
            RunMetrics::new(0.4, 0.10, vec![1], 2.0).unwrap(),
            RunMetrics::new(0.6, 0.20, vec![1, 5, 7], 4.0).unwrap(),
        ];
        let agg = aggregate_seeds(&runs).unwrap();
        assert_eq!(agg.runs, 2);
        assert!((agg.mean.mcc - 0.5).abs() < 1e-15);
        assert!((agg.std.mcc - 0.1).abs() < 1e-15);
        assert!((agg.mean.retrainings - 2.0).abs() < 1e-15);
        assert!((agg.std.retrainings - 1.0).abs() < 1e-15);
        assert!(aggregate_seeds(&[]).is_err());
    }

    #[test]
    fn aggregate_of_identical_runs_has_negligible_std() {
        let run = RunMetrics::new(0.3, 0.05, vec![2, 4], 1.5).unwrap();
        let agg = aggregate_seeds(&[run.clone(), run.clone(), run]).unwrap();
        // The float means round (0.3 summed thrice is not 0.9 exactly), so
        // the std is bounded by summation round-off rather than exactly zero.
        assert!(agg.std.mcc.abs() < 1e-15);
        assert!(agg.std.ece.abs() < 1e-15);
        // Integer counts survive the round trip exactly.
        assert_eq!(agg.std.retrainings, 0.0);
    }

    proptest! {
        #[test]
        fn mcc_stays_in_range(counts in prop::collection::vec(0u64..50, 9)) {
            let mut m = ConfusionMatrix::new(3).unwrap();
            for (i, &c) in counts.iter().enumerate() {
                for _ in 0..c {
                    m.update(i / 3, i % 3).unwrap();
                }
            }
            if m.total() > 0 {
                let mcc = m.mcc().unwrap();
                prop_assert!((-1.0..=1.0).contains(&mcc));
            }
        }

        #[test]
        fn ece_stays_in_range(picks in prop::collection::vec((0.0f64..=1.0, prop::bool::ANY), 1..200)) {
            let mut bins = CalibrationBins::new(10).unwrap();
            for (conf, correct) in picks {
                bins.update(conf, correct).unwrap();
            }
            let ece = bins.ece().unwrap();
            prop_assert!((0.0..=1.0).contains(&ece));
        }
    }
}
