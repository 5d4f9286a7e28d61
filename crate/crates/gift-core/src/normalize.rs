//! Running observation normalization (Welford), frozen after pre-training.
//!
//! The same frozen statistics feed three consumers: the policy/value input
//! path, reference-trajectory distance computations, and the closed-loop
//! map used for stability estimation. Freezing keeps all of them in one
//! fixed metric.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    mean: Vec<f64>,
    /// Sum of squared deviations from the running mean.
    m2: Vec<f64>,
    count: u64,
    frozen: bool,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        ObsNormalizer {
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            count: 0,
            frozen: false,
        }
    }

    /// Identity normalizer (zero mean, unit variance) that never updates.
    pub fn identity(dim: usize) -> Self {
        let mut n = Self::new(dim);
        n.frozen = true;
        n
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Fold one observation into the running statistics. No-op once frozen.
    pub fn update(&mut self, obs: &[f64]) {
        if self.frozen {
            return;
        }
        debug_assert_eq!(obs.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for ((m, m2), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(obs) {
            let d = x - *m;
            *m += d / n;
            *m2 += d * (x - *m);
        }
    }

    fn std(&self, i: usize) -> f64 {
        if self.count < 2 {
            1.0
        } else {
            (self.m2[i] / self.count as f64).sqrt().max(1e-8)
        }
    }

    /// `(x - mean) / std`, clipped to `[-10, 10]` per component.
    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(obs.len(), self.mean.len());
        obs.iter()
            .enumerate()
            .map(|(i, &x)| ((x - self.mean[i]) / self.std(i)).clamp(-10.0, 10.0))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fresh_normalizer_is_identity() {
        let n = ObsNormalizer::new(3);
        assert_eq!(n.normalize(&[1.0, -2.0, 0.5]), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn matches_population_statistics() {
        let data = [[1.0, 10.0], [2.0, 20.0], [3.0, 30.0], [4.0, 40.0]];
        let mut n = ObsNormalizer::new(2);
        for row in &data {
            n.update(row);
        }
        // population mean 2.5, std sqrt(1.25) for the first column
        let z = n.normalize(&[2.5, 25.0]);
        assert_abs_diff_eq!(z[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], 0.0, epsilon = 1e-12);
        let z = n.normalize(&[3.5, 25.0]);
        assert_abs_diff_eq!(z[0], 1.0 / 1.25f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn frozen_stats_stop_moving() {
        let mut n = ObsNormalizer::new(1);
        n.update(&[1.0]);
        n.update(&[3.0]);
        n.freeze();
        let before = n.normalize(&[2.0]);
        n.update(&[1000.0]);
        assert_eq!(n.normalize(&[2.0]), before);
        assert_eq!(n.count(), 2);
    }

    #[test]
    fn output_is_clipped() {
        let mut n = ObsNormalizer::new(1);
        for x in [0.0, 1.0, 0.5, 0.4, 0.6] {
            n.update(&[x]);
        }
        assert_eq!(n.normalize(&[1e9])[0], 10.0);
        assert_eq!(n.normalize(&[-1e9])[0], -10.0);
    }
}
