//! Adaptive-windowing change detector for real-valued streams.
//!
//! The detector keeps a variable-length window of the most recent inputs in
//! an exponential histogram: row `i` holds buckets summarising `2^i` values
//! each (sum and variance contribution), at most [`MAX_BUCKETS_PER_ROW`]
//! buckets per row. When a row overflows, its two oldest buckets merge into
//! one bucket of the next row, so `n` values need only `O(log n)` memory.
//!
//! After every insertion the window is scanned at every bucket boundary
//! splitting it into an old part and a recent part (each at least
//! [`MIN_SUBWINDOW`] values). A split is a change point when the sub-window
//! means differ by more than a variance-aware deviation bound:
//!
//! ```text
//! eps = sqrt((2/m) * sigma2 * ln(2/delta')) + (2/(3m)) * ln(2/delta')
//! ```
//!
//! with `m` the harmonic mean of the sub-window sizes, `sigma2` the window
//! variance, and `delta' = delta / ln(n)`. While any split exceeds the
//! bound, the oldest bucket is dropped and the scan repeats, so stale data
//! disappears the moment it stops looking like the recent data.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Maximum number of buckets per histogram row before the two oldest merge.
pub const MAX_BUCKETS_PER_ROW: usize = 5;

/// Minimum number of values on each side of a candidate split.
pub const MIN_SUBWINDOW: usize = 5;

/// Sum and variance contribution of a group of `2^row` values.
#[derive(Debug, Clone, Copy)]
struct Bucket {
    total: f64,
    /// Sum of squared deviations from the bucket mean (zero for row 0).
    variance_acc: f64,
}

/// Outcome of one insertion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftVerdict {
    /// True when at least one bucket was dropped by this insertion.
    pub drift_detected: bool,
    /// Window length after any shrinking.
    pub width_after: usize,
    /// Window mean after any shrinking.
    pub mean_after: f64,
}

/// Adaptive sliding-window detector over a stream of finite reals.
#[derive(Debug, Clone)]
pub struct AdwinDetector {
    delta: f64,
    /// `rows[i]` holds buckets of `2^i` values, oldest at the front.
    rows: Vec<VecDeque<Bucket>>,
    width: usize,
    total_sum: f64,
    /// Sum of squared deviations of the whole window from its mean.
    variance_acc: f64,
}

impl AdwinDetector {
    /// Creates a detector with confidence parameter `delta` in (0, 1);
    /// smaller values make detections rarer but more reliable.
    pub fn new(delta: f64) -> Result<Self> {
        if !delta.is_finite() || delta <= 0.0 || delta >= 1.0 {
            return Err(Error::config(format!(
                "delta must lie strictly between 0 and 1, got {delta}"
            )));
        }
        Ok(AdwinDetector {
            delta,
            rows: Vec::new(),
            width: 0,
            total_sum: 0.0,
            variance_acc: 0.0,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Current window length.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Mean of the current window. Errors while the window is empty.
    pub fn mean(&self) -> Result<f64> {
        if self.width == 0 {
            return Err(Error::state("window is empty"));
        }
        Ok(self.total_sum / self.width as f64)
    }

    /// Population variance of the current window. Errors while the window
    /// is empty.
    pub fn variance(&self) -> Result<f64> {
        if self.width == 0 {
            return Err(Error::state("window is empty"));
        }
        Ok((self.variance_acc / self.width as f64).max(0.0))
    }

    /// Discards the window but keeps `delta`; afterwards the detector
    /// behaves exactly like a freshly constructed one.
    pub fn reset(&mut self) {
        self.rows.clear();
        self.width = 0;
        self.total_sum = 0.0;
        self.variance_acc = 0.0;
    }

    /// Appends one value, shrinks the window while any split shows a
    /// significant mean difference, and reports the outcome. Non-finite
    /// values are rejected.
    pub fn insert(&mut self, value: f64) -> Result<DriftVerdict> {
        if !value.is_finite() {
            return Err(Error::input(format!(
                "cannot insert non-finite value {value}"
            )));
        }

        // Window aggregates (Welford update of the deviation sum).
        if self.width > 0 {
            let old = self.width as f64;
            let diff = value - self.total_sum / old;
            self.variance_acc += diff * diff * old / (old + 1.0);
        }
        self.width += 1;
        self.total_sum += value;

        // New value enters row 0 as its newest bucket.
        if self.rows.is_empty() {
            self.rows.push(VecDeque::new());
        }
        self.rows[0].push_back(Bucket {
            total: value,
            variance_acc: 0.0,
        });
        self.compress();

        let drift_detected = self.shrink_while_significant();

        Ok(DriftVerdict {
            drift_detected,
            width_after: self.width,
            mean_after: if self.width == 0 {
                0.0
            } else {
                self.total_sum / self.width as f64
            },
        })
    }

    /// Merges the two oldest buckets of every overfull row into the next
    /// row, cascading upward.
    fn compress(&mut self) {
        let mut row = 0;
        while row < self.rows.len() {
            if self.rows[row].len() <= MAX_BUCKETS_PER_ROW {
                row += 1;
                continue;
            }
            let older = self.rows[row].pop_front().expect("row is overfull");
            let newer = self.rows[row].pop_front().expect("row is overfull");
            let count = (1usize << row) as f64;
            // Combining two groups of equal size n adds n/2 * (mean
            // difference)^2 to the pooled deviation sum.
            let mean_older = older.total / count;
            let mean_newer = newer.total / count;
            let merged = Bucket {
                total: older.total + newer.total,
                variance_acc: older.variance_acc
                    + newer.variance_acc
                    + count / 2.0 * (mean_older - mean_newer) * (mean_older - mean_newer),
            };
            if self.rows.len() == row + 1 {
                self.rows.push(VecDeque::new());
            }
            self.rows[row + 1].push_back(merged);
            row += 1;
        }
    }

    /// Drops the oldest bucket while any bucket-aligned split of the window
    /// has sub-window means further apart than the deviation bound. Returns
    /// whether anything was dropped.
    fn shrink_while_significant(&mut self) -> bool {
        let mut dropped_any = false;
        while self.width >= 2 * MIN_SUBWINDOW && self.has_significant_split() {
            self.drop_oldest_bucket();
            dropped_any = true;
        }
        dropped_any
    }

    /// Scans every bucket boundary, oldest first, for a significant split.
    fn has_significant_split(&self) -> bool {
        let n = self.width as f64;
        let delta_prime = self.delta / n.ln();
        let log_term = (2.0 / delta_prime).ln();
        let sigma2 = (self.variance_acc / n).max(0.0);
        let total = self.total_sum;

        let mut n0 = 0usize;
        let mut sum0 = 0.0;
        for row in (0..self.rows.len()).rev() {
            let count = 1usize << row;
            for bucket in &self.rows[row] {
                n0 += count;
                sum0 += bucket.total;
                let n1 = self.width - n0;
                if n0 < MIN_SUBWINDOW || n1 < MIN_SUBWINDOW {
                    continue;
                }
                let mean0 = sum0 / n0 as f64;
                let mean1 = (total - sum0) / n1 as f64;
                let m = 1.0 / (1.0 / n0 as f64 + 1.0 / n1 as f64);
                let eps = (2.0 / m * sigma2 * log_term).sqrt() + 2.0 / (3.0 * m) * log_term;
                if (mean0 - mean1).abs() >= eps {
                    return true;
                }
            }
        }
        false
    }

    /// Removes the single oldest bucket (front of the highest row) and
    /// updates the window aggregates.
    fn drop_oldest_bucket(&mut self) {
        let top = self.rows.len() - 1;
        let bucket = self.rows[top].pop_front().expect("window is not empty");
        let count = 1usize << top;
        let rest = self.width - count;
        if rest == 0 {
            self.width = 0;
            self.total_sum = 0.0;
            self.variance_acc = 0.0;
        } else {
            let bucket_mean = bucket.total / count as f64;
            let rest_sum = self.total_sum - bucket.total;
            let rest_mean = rest_sum / rest as f64;
            let cross = (count as f64 * rest as f64 / self.width as f64)
                * (bucket_mean - rest_mean)
                * (bucket_mean - rest_mean);
            self.variance_acc = (self.variance_acc - bucket.variance_acc - cross).max(0.0);
            self.width = rest;
            self.total_sum = rest_sum;
        }
        while self.rows.len() > 1 && self.rows.last().is_some_and(VecDeque::is_empty) {
            self.rows.pop();
        }
    }

    /// Total buckets currently held, across all rows.
    #[cfg(test)]
    fn bucket_count(&self) -> usize {
        self.rows.iter().map(VecDeque::len).sum()
    }

    /// Sum of the value counts implied by the bucket structure.
    #[cfg(test)]
    fn structural_width(&self) -> usize {
        self.rows
            .iter()
            .enumerate()
            .map(|(row, buckets)| buckets.len() << row)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delta_must_be_a_probability() {
        assert!(AdwinDetector::new(0.0).is_err());
        assert!(AdwinDetector::new(1.0).is_err());
        assert!(AdwinDetector::new(-0.5).is_err());
        assert!(AdwinDetector::new(f64::NAN).is_err());
        assert!(AdwinDetector::new(0.002).is_ok());
    }

    #[test]
    fn rejects_non_finite_values() {
        let mut det = AdwinDetector::new(0.01).unwrap();
        assert!(det.insert(f64::NAN).is_err());
        assert!(det.insert(f64::INFINITY).is_err());
        assert_eq!(det.width(), 0);
    }

    #[test]
    fn constant_stream_keeps_the_full_window() {
        let mut det = AdwinDetector::new(0.002).unwrap();
        for i in 0..1000 {
            let verdict = det.insert(0.7).unwrap();
            assert!(!verdict.drift_detected);
            assert_eq!(verdict.width_after, i + 1);
        }
        assert_eq!(det.width(), 1000);
        assert!((det.mean().unwrap() - 0.7).abs() < 1e-12);
        assert!(det.variance().unwrap() < 1e-12);
    }

    #[test]
    fn empty_window_statistics_are_state_errors() {
        let det = AdwinDetector::new(0.1).unwrap();
        assert!(matches!(det.mean(), Err(Error::State(_))));
        assert!(matches!(det.variance(), Err(Error::State(_))));
    }

    #[test]
    fn bucket_rows_never_exceed_capacity_and_counts_stay_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut det = AdwinDetector::new(0.002).unwrap();
        for _ in 0..3000 {
            det.insert(rng.random::<f64>()).unwrap();
            for row in &det.rows {
                assert!(row.len() <= MAX_BUCKETS_PER_ROW);
            }
            assert_eq!(det.structural_width(), det.width());
        }
        // Logarithmic memory: 3000 values fit in a handful of buckets.
        assert!(det.bucket_count() <= MAX_BUCKETS_PER_ROW * det.rows.len());
        assert!(det.rows.len() <= 14);
    }

    #[test]
    fn window_mean_and_variance_track_the_raw_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut det = AdwinDetector::new(1e-9).unwrap(); // effectively never cuts
        let mut values = Vec::new();
        for _ in 0..500 {
            let v = rng.random::<f64>() * 3.0 - 1.0;
            values.push(v);
            det.insert(v).unwrap();
        }
        assert_eq!(det.width(), 500);
        let mean: f64 = values.iter().sum::<f64>() / 500.0;
        let var: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 500.0;
        assert!((det.mean().unwrap() - mean).abs() < 1e-10);
        assert!((det.variance().unwrap() - var).abs() < 1e-10);
    }

    #[test]
    fn abrupt_mean_shift_is_detected_and_shrinks_the_window() {
        let mut det = AdwinDetector::new(0.002).unwrap();
        let mut detected_at = None;
        for i in 0..600 {
            let value = if i < 300 { 0.0 } else { 1.0 };
            let verdict = det.insert(value).unwrap();
            if verdict.drift_detected && detected_at.is_none() {
                detected_at = Some(i);
                assert!(verdict.width_after < i + 1);
            }
        }
        let at = detected_at.expect("a unit step must be detected");
        assert!(at >= 300, "false alarm at {at}");
        assert!(at < 350, "detection too slow: {at}");
        // After the cuts the window mean reflects the new regime.
        assert!(det.mean().unwrap() > 0.9);
    }

    #[test]
    fn smaller_delta_is_more_conservative() {
        let detect_index = |delta: f64| {
            let mut det = AdwinDetector::new(delta).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            for i in 0..2000 {
                let base = if i < 1000 { 0.3 } else { 0.45 };
                let value = base + 0.05 * (rng.random::<f64>() - 0.5);
                if det.insert(value).unwrap().drift_detected {
                    return Some(i);
                }
            }
            None
        };
        let eager = detect_index(0.1);
        let cautious = detect_index(1e-7);
        let eager_at = eager.expect("delta 0.1 should flag a 0.15 shift");
        // `None` is acceptable too: even more conservative than "later".
        if let Some(at) = cautious {
            assert!(at >= eager_at);
        }
    }

    #[test]
    fn drops_exactly_one_bucket_per_cut_iteration() {
        // A hard step makes several consecutive splits significant; each
        // drop removes one bucket, so the bucket count decreases in single
        // steps while the loop runs.
        let mut det = AdwinDetector::new(0.01).unwrap();
        for i in 0..400 {
            let value = if i < 200 { 0.0 } else { 1.0 };
            let before = det.bucket_count();
            let verdict = det.insert(value).unwrap();
            if verdict.drift_detected {
                // At least one bucket was removed; the structure stays
                // consistent afterwards.
                assert!(det.bucket_count() <= before + 1);
                assert_eq!(det.structural_width(), det.width());
            }
        }
    }

    #[test]
    fn reset_behaves_like_a_fresh_detector() {
        let mut dirty = AdwinDetector::new(0.002).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            dirty.insert(rng.random::<f64>()).unwrap();
        }
        dirty.reset();
        assert_eq!(dirty.width(), 0);

        let mut fresh = AdwinDetector::new(0.002).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v = rng.random::<f64>();
            let a = dirty.insert(v).unwrap();
            let b = fresh.insert(v).unwrap();
            assert_eq!(a, b);
        }
    }
}
