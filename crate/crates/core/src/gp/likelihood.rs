//! Gram matrices, the regularized negative log marginal likelihood and its analytic
//! gradient with respect to the log-hyperparameters.

use crate::gp::kernel::{distance, KernelConfig};
use crate::gp::GpError;
use crate::linalg::{Cholesky, Matrix, Workspace};
use crate::scalar::{dot, Scalar};

/// Largest diagonal jitter tried before a factorization is declared failed.
pub const MAX_JITTER: f64 = 1e-2;

/// Pairwise input distances, packed lower triangle (`j < i`).
#[derive(Debug, Clone)]
pub(crate) struct Distances<T> {
    n: usize,
    packed: Vec<T>,
}

impl<T: Scalar> Distances<T> {
    pub(crate) fn new(x: &Matrix<T>) -> Self {
        let n = x.rows();
        let mut packed = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in 0..i {
                packed.push(distance(x.row(i), x.row(j)));
            }
        }
        Self { n, packed }
    }

    pub(crate) fn len(&self) -> usize {
        self.n
    }

    /// Strictly-lower row `i`: distances to inputs `0..i`.
    #[inline]
    fn row(&self, i: usize) -> &[T] {
        let start = i * (i.saturating_sub(1)) / 2;
        &self.packed[start..start + i]
    }
}

/// Covariance of the noisy observations with only the lower triangle filled.
fn covariance_lower<T: Scalar>(cfg: &KernelConfig<T>, dist: &Distances<T>, jitter: T) -> Matrix<T> {
    let mut k = Matrix::default();
    covariance_lower_into(cfg, dist, jitter, &mut k);
    k
}

fn covariance_lower_into<T: Scalar>(cfg: &KernelConfig<T>, dist: &Distances<T>, jitter: T, k: &mut Matrix<T>) {
    let n = dist.len();
    let sf2 = cfg.signal_var();
    let inv_l = T::one() / cfg.lengthscale();
    let diag = sf2 + cfg.noise_var() + jitter;
    k.reset(n, n);
    for i in 0..n {
        let row = k.row_mut(i);
        for (kij, &r) in row.iter_mut().zip(dist.row(i)) {
            *kij = sf2 * cfg.family.profile(r * inv_l).0;
        }
        row[i] = diag;
    }
}

/// `K + (σ_n² + jitter) I` over the rows of `x`.
pub fn gram_matrix<T: Scalar>(cfg: &KernelConfig<T>, x: &Matrix<T>, jitter: T) -> Matrix<T> {
    let mut k = covariance_lower(cfg, &Distances::new(x), jitter);
    let n = k.rows();
    for i in 0..n {
        for j in 0..i {
            let v = k.get(i, j);
            k.set(j, i, v);
        }
    }
    k
}

fn next_jitter<T: Scalar>(j: T) -> T {
    if j > T::zero() {
        j * T::lit(10.0)
    } else {
        T::lit(1e-10)
    }
}

/// Buffers reused by every likelihood evaluation of one training run.
#[derive(Debug)]
pub(crate) struct EvalWorkspace<T: Scalar> {
    cov: Matrix<T>,
    chol: Cholesky<T>,
    inv: Matrix<T>,
    linalg: Workspace<T>,
}

impl<T: Scalar> Default for EvalWorkspace<T> {
    fn default() -> Self {
        Self { cov: Matrix::default(), chol: Cholesky::default(), inv: Matrix::default(), linalg: Workspace::default() }
    }
}

/// Factorizes the noisy covariance into `ws`, escalating the diagonal jitter ×10 (up to
/// [`MAX_JITTER`]) until the Cholesky succeeds. Returns the jitter used.
fn factor_covariance_into<T: Scalar>(
    cfg: &KernelConfig<T>,
    dist: &Distances<T>,
    jitter: T,
    ws: &mut EvalWorkspace<T>,
) -> Result<T, GpError> {
    let ceiling = T::lit(MAX_JITTER * (1.0 + 1e-9));
    let mut j = jitter;
    loop {
        covariance_lower_into(cfg, dist, j, &mut ws.cov);
        if ws.chol.refactor(&ws.cov, &mut ws.linalg) {
            return Ok(j);
        }
        let next = next_jitter(j);
        if next > ceiling {
            return Err(GpError::NotPositiveDefinite { jitter: j.as_f64() });
        }
        j = next;
    }
}

/// [`factor_covariance_into`] with fresh buffers; returns the factor and the jitter used.
pub(crate) fn factor_covariance<T: Scalar>(
    cfg: &KernelConfig<T>,
    dist: &Distances<T>,
    jitter: T,
) -> Result<(Cholesky<T>, T), GpError> {
    let mut ws = EvalWorkspace::default();
    let j = factor_covariance_into(cfg, dist, jitter, &mut ws)?;
    Ok((ws.chol, j))
}

/// Loss, gradient and the jitter the factorization ended up needing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossAndGradient<T> {
    pub loss: T,
    /// ∂L/∂[log σ_f², log ℓ, log σ_n²]
    pub gradient: [T; 3],
    pub jitter: T,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn evaluate<T: Scalar>(
    cfg: &KernelConfig<T>,
    dist: &Distances<T>,
    y: &[T],
    l2_weight: T,
    jitter: T,
    with_gradient: bool,
    ws: &mut EvalWorkspace<T>,
) -> Result<LossAndGradient<T>, GpError> {
    let n = dist.len();
    if y.len() != n {
        return Err(GpError::DimensionMismatch { expected: n, found: y.len() });
    }
    let used_jitter = factor_covariance_into(cfg, dist, jitter, ws)?;
    let (chol, cov) = (&ws.chol, &ws.cov);
    let alpha = chol.solve(y);
    let half = T::lit(0.5);
    let theta = cfg.params();
    let penalty = l2_weight * theta.iter().map(|p| *p * *p).sum::<T>();
    let loss = half * dot(y, &alpha)
        + half * chol.log_det()
        + half * T::from_usize(n).unwrap() * T::lit((2.0 * std::f64::consts::PI).ln())
        + penalty;
    if !loss.is_finite() {
        return Err(GpError::NonFinite(format!("loss evaluated to {loss}")));
    }
    let mut gradient = [T::zero(); 3];
    if with_gradient {
        // ½ tr((K⁻¹ − ααᵀ) ∂K/∂θ) summed over the lower triangle.
        chol.inverse_lower_into(&mut ws.inv, &mut ws.linalg);
        let inv = &ws.inv;
        let sf2 = cfg.signal_var();
        let inv_l = T::one() / cfg.lengthscale();
        let two = T::lit(2.0);
        let (mut g_sig, mut g_len, mut g_noise) = (T::zero(), T::zero(), T::zero());
        // Off-diagonal covariance entries already carry σ_f², so only the
        // diagonal term is scaled here.
        for i in 0..n {
            let inv_row = &inv.row(i)[..i];
            let ai = alpha[i];
            let (mut s_sig, mut s_len) = (T::zero(), T::zero());
            for (((&kinv, &r), &aj), &k) in inv_row.iter().zip(dist.row(i)).zip(&alpha[..i]).zip(cov.row(i)) {
                let w = kinv - ai * aj;
                s_sig = s_sig + w * k;
                s_len = s_len + w * cfg.family.slope_from_value(r * inv_l, k);
            }
            let w_ii = inv.get(i, i) - ai * ai;
            g_sig = g_sig + two * s_sig + sf2 * w_ii;
            g_len = g_len + two * s_len;
            g_noise = g_noise + w_ii;
        }
        let noise_scale = if cfg.noise_floored() { T::zero() } else { cfg.noise_var() };
        gradient = [half * g_sig, half * g_len, half * noise_scale * g_noise];
        for (g, p) in gradient.iter_mut().zip(theta) {
            *g = *g + two * l2_weight * p;
        }
        if gradient.iter().any(|g| !g.is_finite()) {
            return Err(GpError::NonFinite("gradient has a non-finite component".into()));
        }
    }
    Ok(LossAndGradient { loss, gradient, jitter: used_jitter })
}

fn check_rows<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<(), GpError> {
    if x.rows() == 0 {
        return Err(GpError::EmptyDataset);
    }
    if x.rows() != y.len() {
        return Err(GpError::DimensionMismatch { expected: x.rows(), found: y.len() });
    }
    Ok(())
}

/// `½ yᵀK⁻¹y + ½ log|K| + (n/2) log 2π + λ‖θ‖²`, computed through a Cholesky factor.
pub fn nll<T: Scalar>(cfg: &KernelConfig<T>, x: &Matrix<T>, y: &[T], l2_weight: T, jitter: T) -> Result<T, GpError> {
    check_rows(x, y)?;
    Ok(evaluate(cfg, &Distances::new(x), y, l2_weight, jitter, false, &mut EvalWorkspace::default())?.loss)
}

/// Analytic gradient of [`nll`] with respect to `[log σ_f², log ℓ, log σ_n²]`.
pub fn nll_gradient<T: Scalar>(
    cfg: &KernelConfig<T>,
    x: &Matrix<T>,
    y: &[T],
    l2_weight: T,
    jitter: T,
) -> Result<[T; 3], GpError> {
    Ok(nll_with_gradient(cfg, x, y, l2_weight, jitter)?.gradient)
}

pub fn nll_with_gradient<T: Scalar>(
    cfg: &KernelConfig<T>,
    x: &Matrix<T>,
    y: &[T],
    l2_weight: T,
    jitter: T,
) -> Result<LossAndGradient<T>, GpError> {
    check_rows(x, y)?;
    evaluate(cfg, &Distances::new(x), y, l2_weight, jitter, true, &mut EvalWorkspace::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::kernel::{kernel_value, KernelFamily, Smoothness};

    fn cfg(signal: f64, noise: f64) -> KernelConfig<f64> {
        KernelConfig::with_values(KernelFamily::Matern(Smoothness::Half), signal, 1.0, noise)
    }

    #[test]
    fn gram_of_identical_inputs() {
        let x = Matrix::from_row_major(2, 1, vec![0.5, 0.5]);
        let k = gram_matrix(&cfg(1.0, 0.1), &x, 0.0);
        let want = [1.1, 1.0, 1.0, 1.1];
        for (a, b) in k.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gram_single_point() {
        let x = Matrix::from_row_major(1, 2, vec![0.1, 0.9]);
        let k = gram_matrix(&cfg(2.0, 0.25), &x, 1e-8);
        assert!((k.get(0, 0) - (2.0 + 0.25 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn gram_matches_entrywise_kernel_loop() {
        let x = Matrix::from_row_major(3, 2, vec![0.1, 0.7, 0.35, 0.2, 0.9, 0.95]);
        let c = KernelConfig::<f64>::with_values(KernelFamily::Matern(Smoothness::FiveHalves), 1.7, 0.4, 0.01);
        let k = gram_matrix(&c, &x, 1e-8);
        for i in 0..3 {
            for j in 0..3 {
                let mut want = kernel_value(&c, x.row(i), x.row(j)).unwrap();
                if i == j {
                    want += 0.01 + 1e-8;
                }
                assert!((k.get(i, j) - want).abs() < 1e-14);
            }
        }
        assert!(k.asymmetry() <= 1e-12);
    }

    #[test]
    fn nll_closed_form_single_point() {
        // K = [[1]] requires σ_f² + σ_n² = 1; the noise floor makes it 1 + 1e-10.
        let x = Matrix::from_row_major(1, 1, vec![0.0]);
        let c = cfg(1.0 - 1e-10, 1e-10);
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let l0 = nll(&c, &x, &[0.0], 0.0, 0.0).unwrap();
        assert!((l0 - 0.918939).abs() < 1e-6);
        assert!((l0 - half_log_2pi).abs() < 1e-12);
        let l2 = nll(&c, &x, &[2.0], 0.0, 0.0).unwrap();
        assert!((l2 - 2.918939).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let x = Matrix::from_row_major(6, 2, vec![0.1, 0.7, 0.35, 0.2, 0.9, 0.95, 0.5, 0.5, 0.05, 0.3, 0.6, 0.1]);
        let y = [0.4, -1.1, 0.8, 0.2, -0.3, 1.5];
        let families = [
            KernelFamily::Matern(Smoothness::Half),
            KernelFamily::Matern(Smoothness::ThreeHalves),
            KernelFamily::Matern(Smoothness::FiveHalves),
            KernelFamily::Rbf,
        ];
        for fam in families {
            let c = KernelConfig::<f64>::with_values(fam, 1.4, 0.3, 0.05);
            let g = nll_gradient(&c, &x, &y, 1e-3, 1e-8).unwrap();
            let h = 1e-6;
            for k in 0..3 {
                let shifted = |d: f64| {
                    let mut p = c.params();
                    p[k] += d;
                    nll(&c.with_params(p), &x, &y, 1e-3, 1e-8).unwrap()
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "{fam} θ{k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn l2_term_is_additive() {
        let x = Matrix::from_row_major(3, 1, vec![0.0, 0.3, 0.8]);
        let y = [0.5, -0.2, 1.0];
        let c = KernelConfig::with_values(KernelFamily::Rbf, 1.3, 0.2, 0.05);
        let a = nll(&c, &x, &y, 0.0, 1e-8).unwrap();
        let b = nll(&c, &x, &y, 1e-6, 1e-8).unwrap();
        let theta: f64 = c.params().iter().map(|p| p * p).sum();
        assert!(((b - a) - 1e-6 * theta).abs() < 1e-15);

        let ga = nll_gradient(&c, &x, &y, 0.0, 1e-8).unwrap();
        let gb = nll_gradient(&c, &x, &y, 0.5, 1e-8).unwrap();
        for k in 0..3 {
            assert!(((gb[k] - ga[k]) - 2.0 * 0.5 * c.params()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn jitter_escalates_on_duplicate_inputs() {
        // Identical inputs with zero noise are singular until jitter is added.
        let x = Matrix::from_row_major(2, 1, vec![0.25, 0.25]);
        let c = cfg(1.0, 1e-12);
        let (chol, used) = factor_covariance(&c, &Distances::new(&x), 0.0).unwrap();
        assert!(chol.min_diagonal() > 0.0);
        assert!(used >= 0.0);
    }

    #[test]
    fn hopeless_matrix_reports_last_jitter() {
        let x = Matrix::from_row_major(2, 1, vec![0.0, 1.0]);
        let mut c = cfg(1.0, 1e-4);
        c.log_signal_var = f64::NAN;
        match factor_covariance(&c, &Distances::new(&x), 1e-8) {
            Err(GpError::NotPositiveDefinite { jitter }) => assert!((jitter - 1e-2).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }
}
