use crate::gp::OUTPUTS;
use crate::scalar::Scalar;

/// Smallest standard deviation a normalizer will divide by.
pub const STD_FLOOR: f64 = 1e-12;

/// Per-output standardization `(y − mean) / std`.
///
/// The stored mean doubles as the constant mean function of each output GP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputNormalizer<T> {
    pub mean: [T; OUTPUTS],
    pub std: [T; OUTPUTS],
}

impl<T: Scalar> OutputNormalizer<T> {
    pub fn identity() -> Self {
        Self { mean: [T::zero(); OUTPUTS], std: [T::one(); OUTPUTS] }
    }

    /// Fits means and population standard deviations; `targets` must be non-empty.
    pub fn fit(targets: &[[T; OUTPUTS]]) -> Self {
        let n = T::from_usize(targets.len().max(1)).unwrap();
        let mut mean = [T::zero(); OUTPUTS];
        let mut std = [T::zero(); OUTPUTS];
        for o in 0..OUTPUTS {
            let m = targets.iter().map(|t| t[o]).sum::<T>() / n;
            let var = targets.iter().map(|t| (t[o] - m) * (t[o] - m)).sum::<T>() / n;
            mean[o] = m;
            std[o] = var.sqrt().max(T::lit(STD_FLOOR));
        }
        Self { mean, std }
    }

    #[inline]
    pub fn normalize(&self, output: usize, v: T) -> T {
        (v - self.mean[output]) / self.std[output]
    }

    #[inline]
    pub fn denormalize(&self, output: usize, v: T) -> T {
        v * self.std[output] + self.mean[output]
    }

    #[inline]
    pub fn denormalize_variance(&self, output: usize, v: T) -> T {
        v * self.std[output] * self.std[output]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_output_gets_floored_std() {
        let t = vec![[1.0, 2.0, 3.0, 0.5, 0.5, 0.5], [3.0, 2.0, 5.0, 0.5, 0.5, 0.5]];
        let n = OutputNormalizer::<f64>::fit(&t);
        assert_eq!(n.mean[0], 2.0);
        assert_eq!(n.std[0], 1.0);
        assert_eq!(n.std[1], STD_FLOOR);
        assert!(n.std.iter().all(|s| *s > 0.0));
        assert!((n.denormalize(2, n.normalize(2, 4.2)) - 4.2).abs() < 1e-15);
    }
}
