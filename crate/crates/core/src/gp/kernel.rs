//! Stationary covariance functions: the Matérn family at half-integer smoothness and the
//! squared-exponential (RBF) kernel.
//!
//! Every kernel is evaluated through its closed form in the scaled distance
//! `t = ‖a − b‖ / ℓ`, so no Gamma or Bessel function is needed at run time.

use std::fmt;
use std::str::FromStr;

use crate::gp::GpError;
use crate::scalar::Scalar;

/// Smoothness `ν` of a Matérn kernel. Only the half-integer values with closed forms exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Smoothness {
    /// ν = 1/2, the exponential kernel.
    Half,
    /// ν = 3/2
    ThreeHalves,
    /// ν = 5/2
    FiveHalves,
}

impl Smoothness {
    pub const ALL: [Smoothness; 3] = [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves];

    pub fn nu(self) -> f64 {
        match self {
            Smoothness::Half => 0.5,
            Smoothness::ThreeHalves => 1.5,
            Smoothness::FiveHalves => 2.5,
        }
    }

    pub fn from_nu(nu: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.nu() == nu)
    }
}

impl fmt::Display for Smoothness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.nu())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    Matern(Smoothness),
    Rbf,
}

impl KernelFamily {
    /// Family name as written in model files and accepted on the command line.
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Matern(_) => "matern",
            KernelFamily::Rbf => "rbf",
        }
    }

    /// `t·k'(t)` recovered from a (possibly scaled) kernel value `k` at `t`.
    pub(crate) fn slope_from_value<T: Scalar>(self, t: T, k: T) -> T {
        match self {
            KernelFamily::Matern(Smoothness::Half) => t * k,
            KernelFamily::Matern(Smoothness::ThreeHalves) => {
                let s = T::lit(3f64.sqrt()) * t;
                s * s * k / (T::one() + s)
            }
            KernelFamily::Matern(Smoothness::FiveHalves) => {
                let s = T::lit(5f64.sqrt()) * t;
                let s2 = s * s;
                k * s2 * (T::one() + s) / (T::lit(3.0) * (T::one() + s) + s2)
            }
            KernelFamily::Rbf => t * t * k,
        }
    }

    /// Kernel value and its derivative with respect to `log ℓ`, both for unit signal
    /// variance, at scaled distance `t ≥ 0`.
    #[inline]
    pub(crate) fn profile<T: Scalar>(self, t: T) -> (T, T) {
        match self {
            KernelFamily::Matern(Smoothness::Half) => {
                let e = (-t).exp();
                (e, t * e)
            }
            KernelFamily::Matern(Smoothness::ThreeHalves) => {
                let s = T::lit(3f64.sqrt()) * t;
                let e = (-s).exp();
                ((T::one() + s) * e, s * s * e)
            }
            KernelFamily::Matern(Smoothness::FiveHalves) => {
                let s = T::lit(5f64.sqrt()) * t;
                let e = (-s).exp();
                let third = T::lit(1.0 / 3.0);
                ((T::one() + s + s * s * third) * e, s * s * (T::one() + s) * e * third)
            }
            KernelFamily::Rbf => {
                let q = t * t;
                let e = (-q * T::lit(0.5)).exp();
                (e, q * e)
            }
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelFamily::Matern(s) => write!(f, "matern(nu={s})"),
            KernelFamily::Rbf => f.write_str("rbf"),
        }
    }
}

impl FromStr for KernelFamily {
    type Err = GpError;

    /// Parses `matern` (ν = 1/2), `matern12`, `matern32`, `matern52` or `rbf`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "matern" | "matern12" => Ok(KernelFamily::Matern(Smoothness::Half)),
            "matern32" => Ok(KernelFamily::Matern(Smoothness::ThreeHalves)),
            "matern52" => Ok(KernelFamily::Matern(Smoothness::FiveHalves)),
            "rbf" => Ok(KernelFamily::Rbf),
            other => Err(GpError::InvalidConfig(format!("unknown kernel family `{other}`"))),
        }
    }
}

/// Smallest observation noise variance the engine will use.
pub const NOISE_FLOOR: f64 = 1e-10;

/// Kernel family plus its three hyperparameters, all stored in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig<T> {
    pub family: KernelFamily,
    /// log σ_f²
    pub log_signal_var: T,
    /// log ℓ
    pub log_lengthscale: T,
    /// log σ_n²
    pub log_noise_var: T,
}

impl<T: Scalar> KernelConfig<T> {
    /// Starting point for training: σ_f² = 1, ℓ = 0.1 (inputs live in the unit square),
    /// σ_n² = 1e-4.
    pub fn new(family: KernelFamily) -> Self {
        Self {
            family,
            log_signal_var: T::zero(),
            log_lengthscale: T::lit(0.1f64.ln()),
            log_noise_var: T::lit(1e-4f64.ln()),
        }
    }

    pub fn matern(smoothness: Smoothness) -> Self {
        Self::new(KernelFamily::Matern(smoothness))
    }

    pub fn rbf() -> Self {
        Self::new(KernelFamily::Rbf)
    }

    /// Builds a configuration from linear-scale values.
    pub fn with_values(family: KernelFamily, signal_var: T, lengthscale: T, noise_var: T) -> Self {
        Self {
            family,
            log_signal_var: signal_var.ln(),
            log_lengthscale: lengthscale.ln(),
            log_noise_var: noise_var.ln(),
        }
    }

    pub fn signal_var(&self) -> T {
        self.log_signal_var.exp()
    }

    pub fn lengthscale(&self) -> T {
        self.log_lengthscale.exp()
    }

    /// σ_n², floored at [`NOISE_FLOOR`].
    pub fn noise_var(&self) -> T {
        self.log_noise_var.exp().max(T::lit(NOISE_FLOOR))
    }

    /// True when the noise parameter sits below the floor and therefore has no effect.
    pub(crate) fn noise_floored(&self) -> bool {
        self.log_noise_var.exp() < T::lit(NOISE_FLOOR)
    }

    /// `[log σ_f², log ℓ, log σ_n²]`, the vector the optimizer works on.
    pub fn params(&self) -> [T; 3] {
        [self.log_signal_var, self.log_lengthscale, self.log_noise_var]
    }

    pub fn with_params(mut self, p: [T; 3]) -> Self {
        self.log_signal_var = p[0];
        self.log_lengthscale = p[1];
        self.log_noise_var = p[2];
        self
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let names = ["signal variance", "lengthscale", "noise variance"];
        for (name, p) in names.iter().zip(self.params()) {
            let v = p.exp();
            if !v.is_finite() || !(v > T::zero()) {
                return Err(GpError::InvalidConfig(format!("{name} exp({p}) is not a finite positive value")));
            }
        }
        Ok(())
    }

    /// Kernel value at Euclidean distance `r`.
    #[inline]
    pub fn at_distance(&self, r: T) -> T {
        let t = r / self.lengthscale();
        self.signal_var() * self.family.profile(t).0
    }
}

/// Euclidean distance between two input vectors of equal length.
#[inline]
pub(crate) fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum::<T>().sqrt()
}

/// `k(a, b)` for the given configuration.
pub fn kernel_value<T: Scalar>(cfg: &KernelConfig<T>, a: &[T], b: &[T]) -> Result<T, GpError> {
    if a.len() != b.len() {
        return Err(GpError::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    Ok(cfg.at_distance(distance(a, b)))
}
