//! Stochastic weight averaging posterior.
//!
//! During training the posterior observes the flattened parameter vector
//! after every epoch and maintains a running mean, a running second moment,
//! and the most recent deviation columns (a low-rank sketch of the iterate
//! covariance). After training, weight samples are drawn as
//!
//! ```text
//! theta = theta_bar + (1/sqrt(2)) * sigma_diag .* z1
//!                   + (1/sqrt(2(R-1))) * D z2
//! ```
//!
//! with `z1`, `z2` standard normal, `sigma_diag` the square root of the
//! diagonal variance estimate, `D` the deviation matrix, and `R` its current
//! column count. The sample covariance therefore approaches
//! `diag/2 + D Dᵀ / (2(R-1))`.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{ArchitectureSpec, ModelParams};

/// Running posterior moments over flattened parameter vectors.
#[derive(Debug, Clone)]
pub struct SwagPosterior {
    theta_bar: Vec<f64>,
    second_moment: Vec<f64>,
    deviations: VecDeque<Vec<f64>>,
    max_columns: usize,
    num_collected: usize,
}

impl SwagPosterior {
    /// Empty posterior over a `dim`-dimensional parameter space keeping at
    /// most `max_columns` deviation columns (`max_columns >= 2`, so sampling
    /// never sees a single-column deviation matrix).
    pub fn new(dim: usize, max_columns: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("posterior dimension must be positive"));
        }
        if max_columns < 2 {
            return Err(Error::config(
                "posterior needs room for at least two deviation columns",
            ));
        }
        Ok(SwagPosterior {
            theta_bar: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            deviations: VecDeque::new(),
            max_columns,
            num_collected: 0,
        })
    }

    /// Builds a posterior directly from its moments; used to test sampling
    /// against analytically known covariances. `deviations` may be empty
    /// (purely diagonal posterior). The posterior is treated as ready for
    /// sampling.
    pub fn from_moments(
        theta_bar: Vec<f64>,
        second_moment: Vec<f64>,
        deviations: Vec<Vec<f64>>,
        max_columns: usize,
    ) -> Result<Self> {
        if theta_bar.is_empty() {
            return Err(Error::config("posterior dimension must be positive"));
        }
        if second_moment.len() != theta_bar.len() {
            return Err(Error::shape("second moment length does not match the mean"));
        }
        if deviations.len() > max_columns {
            return Err(Error::config(format!(
                "{} deviation columns exceed the maximum of {max_columns}",
                deviations.len()
            )));
        }
        for (i, col) in deviations.iter().enumerate() {
            if col.len() != theta_bar.len() {
                return Err(Error::shape(format!(
                    "deviation column {i} has length {}, expected {}",
                    col.len(),
                    theta_bar.len()
                )));
            }
        }
        if max_columns < 2 {
            return Err(Error::config(
                "posterior needs room for at least two deviation columns",
            ));
        }
        let num_collected = deviations.len().max(2);
        Ok(SwagPosterior {
            theta_bar,
            second_moment,
            deviations: deviations.into(),
            max_columns,
            num_collected,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_bar.len()
    }

    /// Number of parameter vectors observed so far.
    pub fn num_collected(&self) -> usize {
        self.num_collected
    }

    pub fn num_columns(&self) -> usize {
        self.deviations.len()
    }

    pub fn theta_bar(&self) -> &[f64] {
        &self.theta_bar
    }

    /// Diagonal variance estimate `max(second_moment - theta_bar^2, 0)`.
    pub fn diagonal_variance(&self) -> Vec<f64> {
        self.theta_bar
            .iter()
            .zip(&self.second_moment)
            .map(|(&m, &s)| (s - m * m).max(0.0))
            .collect()
    }

    /// Folds one parameter vector into the running moments and appends its
    /// deviation from the updated mean as a new column, discarding the
    /// oldest column beyond the capacity. Incremental form: observing a
    /// vector equal to the current mean leaves the moments exactly
    /// unchanged.
    pub fn observe(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.dim() {
            return Err(Error::shape(format!(
                "parameter vector has length {}, posterior expects {}",
                flat.len(),
                self.dim()
            )));
        }
        if let Some(&bad) = flat.iter().find(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite parameter value {bad}")));
        }
        let next = (self.num_collected + 1) as f64;
        let mut column = Vec::with_capacity(self.dim());
        for ((mean, second), &theta) in self
            .theta_bar
            .iter_mut()
            .zip(self.second_moment.iter_mut())
            .zip(flat)
        {
            *mean += (theta - *mean) / next;
            *second += (theta * theta - *second) / next;
            column.push(theta - *mean);
        }
        self.deviations.push_back(column);
        if self.deviations.len() > self.max_columns {
            self.deviations.pop_front();
        }
        self.num_collected += 1;
        Ok(())
    }

    /// Convenience wrapper over [`SwagPosterior::observe`] for structured
    /// parameters.
    pub fn observe_params(&mut self, params: &ModelParams) -> Result<()> {
        self.observe(&params.flatten())
    }

    /// Draws one flattened parameter vector. Requires at least two observed
    /// vectors; the low-rank term needs either no columns (diagonal-only
    /// posterior) or at least two.
    pub fn sample_flat<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        if self.num_collected < 2 {
            return Err(Error::state(format!(
                "posterior has seen {} parameter vectors, sampling needs at least 2",
                self.num_collected
            )));
        }
        if self.deviations.len() == 1 {
            return Err(Error::state(
                "a single deviation column cannot be scaled; observe more epochs",
            ));
        }
        let dim = self.dim();
        let variance = self.diagonal_variance();
        let mut sample = Vec::with_capacity(dim);
        let half_sqrt = 0.5f64.sqrt();
        for (i, &mean) in self.theta_bar.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            sample.push(mean + half_sqrt * variance[i].sqrt() * z);
        }
        if !self.deviations.is_empty() {
            let columns = self.deviations.len();
            let scale = 1.0 / (2.0 * (columns as f64 - 1.0)).sqrt();
            for column in &self.deviations {
                let z: f64 = rng.sample(StandardNormal);
                let zs = z * scale;
                for (s, &d) in sample.iter_mut().zip(column) {
                    *s += zs * d;
                }
            }
        }
        Ok(sample)
    }

    /// Draws `count` structured parameter sets for `arch`. This is done once
    /// per (re)training; scoring then reuses the same samples for every
    /// stream sample.
    pub fn sample_params<R: Rng>(
        &self,
        arch: &ArchitectureSpec,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<ModelParams>> {
        if count == 0 {
            return Err(Error::config("at least one weight sample is required"));
        }
        if arch.param_count() != self.dim() {
            return Err(Error::shape(format!(
                "architecture has {} parameters, posterior tracks {}",
                arch.param_count(),
                self.dim()
            )));
        }
        (0..count)
            .map(|_| ModelParams::from_flat(arch, &self.sample_flat(rng)?))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn construction_validates_dimensions_and_rank() {
        assert!(SwagPosterior::new(0, 5).is_err());
        assert!(SwagPosterior::new(3, 1).is_err());
        assert!(SwagPosterior::new(3, 2).is_ok());
        assert!(SwagPosterior::from_moments(vec![0.0], vec![0.0, 1.0], vec![], 5).is_err());
        assert!(
            SwagPosterior::from_moments(vec![0.0, 1.0], vec![0.0, 1.0], vec![vec![1.0]], 5)
                .is_err()
        );
    }

    #[test]
    fn observe_tracks_mean_and_variance_of_a_simple_sequence() {
        let mut posterior = SwagPosterior::new(2, 4).unwrap();
        posterior.observe(&[1.0, -1.0]).unwrap();
        posterior.observe(&[3.0, 1.0]).unwrap();
        assert_eq!(posterior.num_collected(), 2);
        assert_eq!(posterior.theta_bar(), &[2.0, 0.0]);
        // Second moments: (1 + 9)/2 = 5 and (1 + 1)/2 = 1; variance is the
        // population variance of the observations.
        let var = posterior.diagonal_variance();
        assert!((var[0] - 1.0).abs() < 1e-12);
        assert!((var[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deviation_columns_keep_only_the_most_recent() {
        let mut posterior = SwagPosterior::new(1, 2).unwrap();
        for i in 0..5 {
            posterior.observe(&[i as f64]).unwrap();
        }
        assert_eq!(posterior.num_columns(), 2);
        assert_eq!(posterior.num_collected(), 5);
        // Means after 4th and 5th observations are 1.5 and 2.0, so the kept
        // columns are 3-1.5 and 4-2.0.
        let cols: Vec<f64> = posterior.deviations.iter().map(|c| c[0]).collect();
        assert_eq!(cols, vec![1.5, 2.0]);
    }

    #[test]
    fn constant_iterates_collapse_sampling_to_the_mean_exactly() {
        let theta = [0.7, -1.3, 2.5];
        let mut posterior = SwagPosterior::new(3, 4).unwrap();
        for _ in 0..6 {
            posterior.observe(&theta).unwrap();
        }
        assert_eq!(posterior.theta_bar(), &theta);
        assert_eq!(posterior.diagonal_variance(), vec![0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let sample = posterior.sample_flat(&mut rng).unwrap();
            assert_eq!(sample.as_slice(), &theta);
        }
    }

    #[test]
    fn sampling_needs_two_observations() {
        let mut posterior = SwagPosterior::new(2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(posterior.sample_flat(&mut rng).is_err());
        posterior.observe(&[1.0, 2.0]).unwrap();
        assert!(posterior.sample_flat(&mut rng).is_err());
        posterior.observe(&[2.0, 1.0]).unwrap();
        assert!(posterior.sample_flat(&mut rng).is_ok());
    }

    #[test]
    fn low_rank_term_contributes_its_analytic_covariance() {
        // Known diagonal variance plus three deviation columns whose
        // contribution to coordinate i is (D D^T)_ii / (2 (R - 1)).
        let theta_bar = vec![1.0, -2.0, 0.5];
        let diag = [0.8, 0.5, 1.2];
        let second: Vec<f64> = theta_bar
            .iter()
            .zip(&diag)
            .map(|(&m, &v)| m * m + v)
            .collect();
        let columns = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![1.0, 1.0, 1.0],
        ];
        let posterior = SwagPosterior::from_moments(theta_bar.clone(), second, columns, 5).unwrap();
        let rowsq = [2.0, 5.0, 1.0]; // squared row norms of D
        let expected: Vec<f64> = diag
            .iter()
            .zip(&rowsq)
            .map(|(&v, &r)| v / 2.0 + r / (2.0 * 2.0))
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 200_000;
        let mut sum = [0.0; 3];
        let mut sumsq = [0.0; 3];
        for _ in 0..n {
            let s = posterior.sample_flat(&mut rng).unwrap();
            for i in 0..3 {
                sum[i] += s[i];
                sumsq[i] += s[i] * s[i];
            }
        }
        for i in 0..3 {
            let mean = sum[i] / n as f64;
            let var = sumsq[i] / n as f64 - mean * mean;
            let se = (expected[i] / n as f64).sqrt();
            assert!(
                (mean - theta_bar[i]).abs() < 3.0 * se,
                "coordinate {i}: mean {mean} vs {}",
                theta_bar[i]
            );
            assert!(
                (var - expected[i]).abs() < 0.05 * expected[i],
                "coordinate {i}: variance {var} vs expected {}",
                expected[i]
            );
        }
    }

    #[test]
    fn sample_params_round_trip_shapes() {
        let arch = ArchitectureSpec::new(3, vec![4], 2, 0.0, 1).unwrap();
        let mut posterior = SwagPosterior::new(arch.param_count(), 3).unwrap();
        for seed in 0..3 {
            posterior
                .observe(&crate::nn::init_params(&arch, seed).flatten())
                .unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples = posterior.sample_params(&arch, 7, &mut rng).unwrap();
        assert_eq!(samples.len(), 7);
        assert!(samples.iter().all(|p| p.matches(&arch)));
        assert!(posterior.sample_params(&arch, 0, &mut rng).is_err());
        let other = ArchitectureSpec::new(4, vec![4], 2, 0.0, 1).unwrap();
        assert!(posterior.sample_params(&other, 1, &mut rng).is_err());
    }
}
