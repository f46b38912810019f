//! Compensated summation and sample statistics.

use serde::Serialize;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    sum: f64,
    compensation: f64,
}

impl Accumulator {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for Accumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Accumulator::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated sum of an iterator.
pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().collect::<Accumulator>().sum()
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Two-pass mean and `s / √n`, summed in slice order.
    pub fn from_samples(values: &[f64]) -> Estimate {
        let n = values.len();
        if n == 0 {
            return Estimate { n, mean: f64::NAN, stderr: f64::NAN };
        }
        let mean = sum(values.iter().copied()) / n as f64;
        if n == 1 {
            return Estimate { n, mean, stderr: f64::NAN };
        }
        let ss = sum(values.iter().map(|v| (v - mean) * (v - mean)));
        let var = ss / (n - 1) as f64;
        Estimate { n, mean, stderr: (var / n as f64).sqrt() }
    }

    /// `(mean − target) / stderr`; zero when both the gap and the error vanish.
    pub fn z_score(&self, target: f64) -> f64 {
        z_score(self.mean - target, self.stderr)
    }
}

pub fn z_score(gap: f64, stderr: f64) -> f64 {
    if stderr > 0.0 {
        gap / stderr
    } else if gap == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(gap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_keeps_small_terms() {
        let values = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(values), 2.0);
        assert_ne!(values.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn estimate_of_constant_has_zero_error() {
        let est = Estimate::from_samples(&[3.0; 10]);
        assert_eq!(est.mean, 3.0);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.z_score(3.0), 0.0);
        assert!(est.z_score(2.0).is_infinite());
    }

    #[test]
    fn estimate_matches_hand_computation() {
        let est = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(est.mean, 2.5);
        // s² = 5/3
        assert!((est.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
