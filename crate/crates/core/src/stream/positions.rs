//! Fixed retraining-position generators for detection-free comparison runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `count` positions spread evenly over an online segment of `online_len`
/// samples: position `k` (1-based) is `floor(k * online_len / (count + 1))`.
/// Fails if the segment is too short to keep them strictly increasing.
pub fn equal_positions(count: usize, online_len: usize) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::config("at least one position is required"));
    }
    let positions: Vec<usize> = (1..=count).map(|k| k * online_len / (count + 1)).collect();
    if positions.windows(2).any(|w| w[0] >= w[1]) || online_len == 0 {
        return Err(Error::input(format!(
            "online segment of {online_len} cannot hold {count} distinct equally spaced positions"
        )));
    }
    Ok(positions)
}

/// `count` distinct positions drawn uniformly from `0..online_len`, sorted
/// ascending. The draw is fully determined by `seed`.
pub fn random_positions(count: usize, online_len: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::config("at least one position is required"));
    }
    if count > online_len {
        return Err(Error::input(format!(
            "cannot draw {count} distinct positions from an online segment of {online_len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = rand::seq::index::sample(&mut rng, online_len, count).into_vec();
    positions.sort_unstable();
    Ok(positions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_positions_match_the_closed_form() {
        assert_eq!(equal_positions(3, 100).unwrap(), vec![25, 50, 75]);
        assert_eq!(equal_positions(1, 7).unwrap(), vec![3]);
        assert_eq!(equal_positions(4, 10).unwrap(), vec![2, 4, 6, 8]);
    }

    #[test]
    fn equal_positions_reject_overcrowding() {
        assert!(equal_positions(0, 100).is_err());
        assert!(equal_positions(10, 5).is_err());
        assert!(equal_positions(5, 0).is_err());
    }

    #[test]
    fn random_positions_are_sorted_distinct_and_seeded() {
        let a = random_positions(10, 500, 7).unwrap();
        let b = random_positions(10, 500, 7).unwrap();
        let c = random_positions(10, 500, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&p| p < 500));
    }

    #[test]
    fn random_positions_bounds() {
        assert!(random_positions(0, 10, 1).is_err());
        assert!(random_positions(11, 10, 1).is_err());
        let all = random_positions(10, 10, 1).unwrap();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
