//! Evaluation statistics: interquartile mean and percentile bootstrap.

use rand::Rng;

use crate::error::{Error, Result};

/// Interquartile mean: drop `floor(n/4)` samples from each end of the
/// sorted list and average the rest.
pub fn iqm(samples: &[f64]) -> Result<f64> {
    if samples.len() < 4 {
        return Err(Error::TooFewSamples {
            got: samples.len(),
            need: 4,
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let drop = sorted.len() / 4;
    let mid = &sorted[drop..sorted.len() - drop];
    Ok(mid.iter().sum::<f64>() / mid.len() as f64)
}

/// Linear-interpolation quantile of already sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Percentile bootstrap confidence interval for an arbitrary reducer:
/// resample with replacement, apply the reducer, take the
/// `(1 - level)/2` and `(1 + level)/2` quantiles.
pub fn bootstrap_ci<R, F>(
    samples: &[f64],
    statistic: F,
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Result<(f64, f64)>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64,
{
    if samples.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    if resamples < 1000 {
        return Err(Error::InvalidConfig(format!(
            "bootstrap needs >= 1000 resamples, got {resamples}"
        )));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence level must be in (0, 1), got {level}"
        )));
    }
    let mut stats = Vec::with_capacity(resamples);
    let mut resample = vec![0.0; samples.len()];
    for _ in 0..resamples {
        for slot in resample.iter_mut() {
            *slot = samples[rng.random_range(0..samples.len())];
        }
        stats.push(statistic(&resample));
    }
    stats.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&stats, (1.0 - level) / 2.0);
    let hi = quantile_sorted(&stats, (1.0 + level) / 2.0);
    Ok((lo, hi))
}

/// Plain mean; the reducer used for reward confidence intervals.
pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Median of a sample (linear-interpolation at the midpoint).
pub fn median(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sub_rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn iqm_hand_case() {
        assert_eq!(iqm(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        // order must not matter
        assert_eq!(iqm(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
    }

    #[test]
    fn iqm_constant_list() {
        assert_eq!(iqm(&[7.5; 9]).unwrap(), 7.5);
    }

    #[test]
    fn iqm_matches_brute_force_on_integers() {
        let mut rng = sub_rng(0, "stats", 0);
        for n in 4..40 {
            let samples: Vec<f64> = (0..n).map(|_| rng.random_range(0..50) as f64).collect();
            let mut sorted = samples.clone();
            sorted.sort_by(f64::total_cmp);
            let drop = n / 4;
            let brute: f64 =
                sorted[drop..n - drop].iter().sum::<f64>() / (n - 2 * drop) as f64;
            assert_eq!(iqm(&samples).unwrap(), brute);
        }
    }

    #[test]
    fn iqm_rejects_small_samples() {
        assert!(matches!(
            iqm(&[1.0, 2.0, 3.0]),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn iqm_of_standard_normal_near_zero() {
        let mut rng = sub_rng(1, "stats", 1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let samples: Vec<f64> = (0..1000).map(|_| normal.sample(&mut rng)).collect();
        assert!(iqm(&samples).unwrap().abs() < 0.05);
    }

    #[test]
    fn bootstrap_constant_samples_collapse() {
        let mut rng = sub_rng(2, "stats", 2);
        let (lo, hi) = bootstrap_ci(&[3.0; 20], mean, 1000, 0.95, &mut rng).unwrap();
        assert_eq!((lo, hi), (3.0, 3.0));
    }

    #[test]
    fn bootstrap_contains_plugin_statistic() {
        let mut rng = sub_rng(3, "stats", 3);
        let normal = Normal::new(5.0, 2.0).unwrap();
        for trial in 0..10 {
            let samples: Vec<f64> = (0..80).map(|_| normal.sample(&mut rng)).collect();
            let plug = iqm(&samples).unwrap();
            let (lo, hi) =
                bootstrap_ci(&samples, |s| iqm(s).unwrap(), 2000, 0.95, &mut rng).unwrap();
            assert!(lo <= plug && plug <= hi, "trial {trial}: {lo} {plug} {hi}");
        }
    }

    #[test]
    fn bootstrap_width_matches_clt() {
        // 500 samples from N(5, 1): the 95% CI for the mean has width
        // ~2 * 1.96 / sqrt(500) = 0.175.
        let mut rng = sub_rng(4, "stats", 4);
        let normal = Normal::new(5.0, 1.0).unwrap();
        let samples: Vec<f64> = (0..500).map(|_| normal.sample(&mut rng)).collect();
        let (lo, hi) = bootstrap_ci(&samples, mean, 10_000, 0.95, &mut rng).unwrap();
        let width = hi - lo;
        let expected = 2.0 * 1.96 / (500.0f64).sqrt();
        assert!(
            (width - expected).abs() < 0.3 * expected,
            "width {width} vs {expected}"
        );
    }

    #[test]
    fn bootstrap_validates_inputs() {
        let mut rng = sub_rng(5, "stats", 5);
        assert!(bootstrap_ci(&[1.0, 2.0], mean, 10, 0.95, &mut rng).is_err());
        assert!(bootstrap_ci(&[1.0, 2.0], mean, 1000, 1.5, &mut rng).is_err());
        assert!(bootstrap_ci(&[], mean, 1000, 0.95, &mut rng).is_err());
    }
}
