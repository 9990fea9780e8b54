//! Training by plain gradient descent in log-hyperparameter space, and posterior
//! inference through the cached Cholesky factors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gp::kernel::{distance, KernelConfig, NOISE_FLOOR};
use crate::gp::likelihood::{evaluate, factor_covariance, Distances, EvalWorkspace};
use crate::gp::{GpError, OutputNormalizer, OUTPUTS};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::{dot, Scalar};
use crate::sfm::{PixelSample, PixelToPointDataset};

/// Optimizer settings shared by the six output GPs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Gradient steps per output; at least one.
    pub iterations: usize,
    /// Fixed step size η.
    pub learning_rate: f64,
    /// Weight λ of the `λ‖θ‖²` penalty.
    pub l2_weight: f64,
    /// Diagonal stabilizer added on top of the noise variance.
    pub jitter: f64,
    /// Seeded uniform subsample size for large datasets; `None` keeps every sample.
    pub max_train_points: Option<usize>,
    pub seed: u64,
    pub objective: Objective,
}

/// Scale of the likelihood term that gradient descent minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    /// `nll / n + λ‖θ‖²`: the likelihood averaged over training points, so that a fixed
    /// step size behaves the same for any dataset size.
    #[default]
    PerPoint,
    /// `nll + λ‖θ‖²` as returned by [`nll`](crate::gp::nll). With η = 0.01 this oscillates
    /// once n reaches a few hundred points.
    Total,
}

impl Objective {
    /// Objective and gradient from the unregularized likelihood and its gradient.
    pub fn combine<T: Scalar>(self, n: usize, nll: T, grad: [T; 3], theta: [T; 3], l2_weight: T) -> (T, [T; 3]) {
        let scale = match self {
            Objective::PerPoint => T::one() / T::from_usize(n.max(1)).unwrap(),
            Objective::Total => T::one(),
        };
        let penalty = l2_weight * theta.iter().map(|p| *p * *p).sum::<T>();
        let two = T::lit(2.0);
        let mut g = grad;
        for (g, p) in g.iter_mut().zip(theta) {
            *g = *g * scale + two * l2_weight * p;
        }
        (nll * scale + penalty, g)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            learning_rate: 0.01,
            l2_weight: 1e-6,
            jitter: 1e-8,
            max_train_points: Some(2000),
            seed: 0,
            objective: Objective::PerPoint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GpError> {
        if self.iterations == 0 {
            return Err(GpError::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(GpError::InvalidConfig(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(self.l2_weight >= 0.0) || !(self.jitter >= 0.0) {
            return Err(GpError::InvalidConfig("l2 weight and jitter must be >= 0".into()));
        }
        if self.max_train_points == Some(0) {
            return Err(GpError::InvalidConfig("max_train_points must be at least 1".into()));
        }
        Ok(())
    }
}

/// One single-output GP: hyperparameters plus the cached factorization of `K + σ_n² I`.
#[derive(Debug, Clone)]
pub struct OutputGp<T> {
    kernel: KernelConfig<T>,
    jitter: T,
    chol: Cholesky<T>,
    alpha: Vec<T>,
    loss_curve: Vec<T>,
}

impl<T: Scalar> OutputGp<T> {
    /// Factorizes the covariance for fixed hyperparameters; `jitter` is the starting
    /// value for escalation.
    pub fn fit(kernel: KernelConfig<T>, inputs: &Matrix<T>, targets: &[T], jitter: T) -> Result<Self, GpError> {
        if inputs.rows() == 0 {
            return Err(GpError::EmptyDataset);
        }
        if targets.len() != inputs.rows() {
            return Err(GpError::DimensionMismatch { expected: inputs.rows(), found: targets.len() });
        }
        Self::fit_with_distances(kernel, &Distances::new(inputs), targets, jitter)
    }

    fn fit_with_distances(
        kernel: KernelConfig<T>,
        dist: &Distances<T>,
        targets: &[T],
        jitter: T,
    ) -> Result<Self, GpError> {
        kernel.validate()?;
        let (chol, jitter) = factor_covariance(&kernel, dist, jitter)?;
        let alpha = chol.solve(targets);
        Ok(Self { kernel, jitter, chol, alpha, loss_curve: Vec::new() })
    }

    pub fn kernel(&self) -> &KernelConfig<T> {
        &self.kernel
    }

    /// Jitter the cached factorization was built with.
    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn cholesky(&self) -> &Cholesky<T> {
        &self.chol
    }

    /// `α = (K + σ_n² I)⁻¹ y`.
    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    /// Loss at the start of every training iteration; empty for models that were not
    /// trained in this process.
    pub fn loss_curve(&self) -> &[T] {
        &self.loss_curve
    }

    /// Posterior mean and unclamped variance at one query.
    pub fn predict(&self, inputs: &Matrix<T>, query: &[T]) -> (T, T) {
        let sf2 = self.kernel.signal_var();
        let inv_l = T::one() / self.kernel.lengthscale();
        let mut k: Vec<T> = (0..inputs.rows())
            .map(|i| sf2 * self.kernel.family.profile(distance(inputs.row(i), query) * inv_l).0)
            .collect();
        let mean = dot(&k, &self.alpha);
        self.chol.solve_lower_in_place(&mut k);
        (mean, sf2 - dot(&k, &k))
    }
}

/// Six trained output GPs sharing one set of training inputs.
#[derive(Debug, Clone)]
pub struct TrainedGp<T> {
    outputs: Vec<OutputGp<T>>,
    normalizer: OutputNormalizer<T>,
    inputs: Matrix<T>,
    targets: Vec<[T; OUTPUTS]>,
    width: u32,
    height: u32,
    image_id: Option<u32>,
}

/// Posterior over a batch of queries.
#[derive(Debug, Clone)]
pub struct PosteriorBatch<T> {
    /// Means in normalized target space.
    pub mean_normalized: Vec<[T; OUTPUTS]>,
    /// Means mapped back through the output normalizer.
    pub mean: Vec<[T; OUTPUTS]>,
    /// Variances in normalized target space, clamped at zero.
    pub variance: Vec<[T; OUTPUTS]>,
    /// Smallest variance seen before clamping.
    pub min_raw_variance: T,
    std: [T; OUTPUTS],
}

impl<T: Scalar> PosteriorBatch<T> {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Variances of query `i` in target units (scaled by each output's std²).
    pub fn variance_denormalized(&self, i: usize) -> [T; OUTPUTS] {
        let mut v = self.variance[i];
        for (vo, s) in v.iter_mut().zip(self.std) {
            *vo = *vo * s * s;
        }
        v
    }
}

fn split_dataset<T: Scalar>(ds: &PixelToPointDataset<T>) -> Result<(Matrix<T>, Vec<[T; OUTPUTS]>), GpError> {
    if ds.samples.is_empty() {
        return Err(GpError::EmptyDataset);
    }
    let inputs = ds.input_matrix().map_err(|_| GpError::DimensionMismatch {
        expected: 2,
        found: ds.samples.iter().filter(|s| s.input.depth.is_some()).count(),
    })?;
    let targets = ds.samples.iter().map(|s| s.target.0).collect();
    Ok((inputs, targets))
}

fn column<T: Scalar>(targets: &[[T; OUTPUTS]], o: usize) -> Vec<T> {
    targets.iter().map(|t| t[o]).collect()
}

impl<T: Scalar> TrainedGp<T> {
    /// Assembles a model from fixed hyperparameters and already-normalized targets,
    /// factorizing each output's covariance.
    pub fn from_parts(
        kernels: [KernelConfig<T>; OUTPUTS],
        jitters: [T; OUTPUTS],
        normalizer: OutputNormalizer<T>,
        inputs: Matrix<T>,
        normalized_targets: Vec<[T; OUTPUTS]>,
        width: u32,
        height: u32,
    ) -> Result<Self, GpError> {
        if inputs.rows() == 0 {
            return Err(GpError::EmptyDataset);
        }
        if normalized_targets.len() != inputs.rows() {
            return Err(GpError::DimensionMismatch { expected: inputs.rows(), found: normalized_targets.len() });
        }
        let dist = Distances::new(&inputs);
        let outputs = (0..OUTPUTS)
            .map(|o| OutputGp::fit_with_distances(kernels[o], &dist, &column(&normalized_targets, o), jitters[o]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { outputs, normalizer, inputs, targets: normalized_targets, width, height, image_id: None })
    }

    /// Fits the output normalizer on `ds` and factorizes with the given hyperparameters,
    /// without any optimization.
    pub fn fit_fixed(
        ds: &PixelToPointDataset<T>,
        kernels: [KernelConfig<T>; OUTPUTS],
        jitter: T,
    ) -> Result<Self, GpError> {
        let (inputs, raw) = split_dataset(ds)?;
        let normalizer = OutputNormalizer::fit(&raw);
        let targets = normalize_all(&normalizer, &raw);
        let mut gp = Self::from_parts(kernels, [jitter; OUTPUTS], normalizer, inputs, targets, ds.width, ds.height)?;
        gp.image_id = Some(ds.image_id);
        Ok(gp)
    }

    pub fn outputs(&self) -> &[OutputGp<T>] {
        &self.outputs
    }

    pub fn normalizer(&self) -> &OutputNormalizer<T> {
        &self.normalizer
    }

    /// Training inputs, one row per sample: `(u_norm, v_norm[, depth])`.
    pub fn inputs(&self) -> &Matrix<T> {
        &self.inputs
    }

    /// Normalized training targets.
    pub fn targets(&self) -> &[[T; OUTPUTS]] {
        &self.targets
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn image_id(&self) -> Option<u32> {
        self.image_id
    }

    pub fn set_image_id(&mut self, id: Option<u32>) {
        self.image_id = id;
    }

    /// Training inputs mapped back to pixel coordinates.
    pub fn training_pixels(&self) -> Vec<[T; 2]> {
        let (w, h) = (T::from_u32(self.width).unwrap(), T::from_u32(self.height).unwrap());
        (0..self.inputs.rows()).map(|i| [self.inputs.get(i, 0) * w, self.inputs.get(i, 1) * h]).collect()
    }

    /// Training objective of each output at the trained hyperparameters.
    pub fn final_losses(&self, cfg: &TrainConfig) -> Result<[T; OUTPUTS], GpError> {
        let dist = Distances::new(&self.inputs);
        let mut out = [T::zero(); OUTPUTS];
        for (o, gp) in self.outputs.iter().enumerate() {
            let eval = evaluate(
                &gp.kernel,
                &dist,
                &column(&self.targets, o),
                T::zero(),
                gp.jitter,
                false,
                &mut EvalWorkspace::default(),
            )?;
            let theta = gp.kernel.params();
            out[o] = cfg.objective.combine(self.len(), eval.loss, [T::zero(); 3], theta, T::lit(cfg.l2_weight)).0;
        }
        Ok(out)
    }

    /// Posterior at every row of `queries`.
    pub fn posterior(&self, queries: &Matrix<T>) -> Result<PosteriorBatch<T>, GpError> {
        if queries.rows() > 0 && queries.cols() != self.input_dim() {
            return Err(GpError::DimensionMismatch { expected: self.input_dim(), found: queries.cols() });
        }
        let m = queries.rows();
        let mut mean_normalized = vec![[T::zero(); OUTPUTS]; m];
        let mut variance = vec![[T::zero(); OUTPUTS]; m];
        let mut min_raw = T::infinity();
        for (o, gp) in self.outputs.iter().enumerate() {
            for q in 0..m {
                let (mu, var) = gp.predict(&self.inputs, queries.row(q));
                min_raw = min_raw.min(var);
                mean_normalized[q][o] = mu;
                variance[q][o] = var.max(T::zero());
            }
        }
        let mean = mean_normalized
            .iter()
            .map(|row| {
                let mut d = *row;
                for (o, v) in d.iter_mut().enumerate() {
                    *v = self.normalizer.denormalize(o, *v);
                }
                d
            })
            .collect();
        Ok(PosteriorBatch { mean_normalized, mean, variance, min_raw_variance: min_raw, std: self.normalizer.std })
    }

    /// Posterior at pixel samples; depth is used when the model was trained with it.
    pub fn posterior_samples(&self, samples: &[PixelSample<T>]) -> Result<PosteriorBatch<T>, GpError> {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(samples.len() * d);
        for s in samples {
            let row = s.features();
            if row.len() != d {
                return Err(GpError::DimensionMismatch { expected: d, found: row.len() });
            }
            data.extend(row);
        }
        self.posterior(&Matrix::from_row_major(samples.len(), d, data))
    }
}

fn normalize_all<T: Scalar>(n: &OutputNormalizer<T>, raw: &[[T; OUTPUTS]]) -> Vec<[T; OUTPUTS]> {
    raw.iter()
        .map(|t| {
            let mut z = *t;
            for (o, v) in z.iter_mut().enumerate() {
                *v = n.normalize(o, *v);
            }
            z
        })
        .collect()
}

fn optimize_output<T: Scalar>(
    template: KernelConfig<T>,
    dist: &Distances<T>,
    y: &[T],
    cfg: &TrainConfig,
) -> Result<OutputGp<T>, GpError> {
    let eta = T::lit(cfg.learning_rate);
    let l2 = T::lit(cfg.l2_weight);
    let jitter = T::lit(cfg.jitter);
    let noise_floor = T::lit(NOISE_FLOOR.ln());
    let mut theta = template.params();
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut ws = EvalWorkspace::default();
    for _ in 0..cfg.iterations {
        let eval = evaluate(&template.with_params(theta), dist, y, T::zero(), jitter, true, &mut ws)?;
        let (loss, grad) = cfg.objective.combine(y.len(), eval.loss, eval.gradient, theta, l2);
        curve.push(loss);
        for (p, g) in theta.iter_mut().zip(grad) {
            *p = *p - eta * g;
        }
        theta[2] = theta[2].max(noise_floor);
    }
    let mut gp = OutputGp::fit_with_distances(template.with_params(theta), dist, y, jitter)?;
    gp.loss_curve = curve;
    Ok(gp)
}

/// Trains the six output GPs on `ds`, each starting from `template`.
///
/// Targets are standardized per output, then every output runs `cfg.iterations` steps of
/// `θ ← θ − η ∇L` independently. Datasets larger than `cfg.max_train_points` are first
/// reduced to a seeded uniform subsample.
pub fn train_gp<T: Scalar>(
    ds: &PixelToPointDataset<T>,
    template: &KernelConfig<T>,
    cfg: &TrainConfig,
) -> Result<TrainedGp<T>, GpError> {
    cfg.validate()?;
    template.validate()?;
    let (mut inputs, mut raw) = split_dataset(ds)?;
    if let Some(cap) = cfg.max_train_points.filter(|cap| raw.len() > *cap) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut keep = rand::seq::index::sample(&mut rng, raw.len(), cap).into_vec();
        keep.sort_unstable();
        let d = inputs.cols();
        let mut data = Vec::with_capacity(cap * d);
        for &i in &keep {
            data.extend_from_slice(inputs.row(i));
        }
        inputs = Matrix::from_row_major(cap, d, data);
        raw = keep.iter().map(|&i| raw[i]).collect();
    }
    let normalizer = OutputNormalizer::fit(&raw);
    let targets = normalize_all(&normalizer, &raw);
    let dist = Distances::new(&inputs);

    // One worker per core: oversubscribing makes the workers evict each other's
    // n × n buffers from cache.
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(OUTPUTS);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<OutputGp<T>, GpError>>> = (0..OUTPUTS).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                let (dist, targets, next) = (&dist, &targets, &next);
                scope.spawn(move || {
                    let mut done = Vec::new();
                    loop {
                        let o = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if o >= OUTPUTS {
                            return done;
                        }
                        done.push((o, optimize_output(*template, dist, &column(targets, o), cfg)));
                    }
                })
            })
            .collect();
        for h in handles {
            for (o, r) in h.join().expect("training thread panicked") {
                slots[o] = Some(r);
            }
        }
    });
    let results = slots.into_iter().map(|r| r.expect("every output is trained"));
    let outputs = results.collect::<Result<Vec<_>, _>>()?;
    Ok(TrainedGp {
        outputs,
        normalizer,
        inputs,
        targets,
        width: ds.width,
        height: ds.height,
        image_id: Some(ds.image_id),
    })
}
