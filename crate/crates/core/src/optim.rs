//! Adam optimization, the training loop, and finite-difference gradient
//! checking.
//!
//! Training is deterministic given a seed: example order is shuffled with the
//! run's own generator, batch gradients are plain averages of per-example
//! gradients, and the optimizer carries no hidden randomness. Two runs with
//! the same data, configuration and seed produce bit-identical parameters.

use crate::data::CaptionRecord;
use crate::error::{Error, Result};
use crate::layers::ActivationConfig;
use crate::model::{self, LossBreakdown, ModelDims, ModelParams};
use crate::numcore::{Matrix, Rng, Vector};

/// Adam hyperparameters. The defaults are the pinned training settings;
/// tests and experiments override the learning rate freely.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 2e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam state: bias-corrected first and second moments, one buffer per
/// parameter tensor, plus the step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ModelParams, cfg: AdamConfig) -> Adam {
        let shapes: Vec<Matrix> = params
            .tensors()
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Adam { cfg, step: 0, first: shapes.clone(), second: shapes }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Rejects non-finite gradients before
    /// touching any state, naming the offending tensor.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        for (name, g) in grads.tensors() {
            if !g.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in {name}; aborting the update"
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let grad_tensors = grads.tensors();
        for (idx, (_, theta)) in params.tensors_mut().into_iter().enumerate() {
            let g = grad_tensors[idx].1.data();
            let m = self.first[idx].data_mut();
            let v = self.second[idx].data_mut();
            let out = theta.data_mut();
            for k in 0..out.len() {
                m[k] = self.cfg.beta1 * m[k] + (1.0 - self.cfg.beta1) * g[k];
                v[k] = self.cfg.beta2 * v[k] + (1.0 - self.cfg.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                out[k] -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
            }
        }
        Ok(())
    }
}

/// Scales the gradients down to `max_norm` when their global norm exceeds
/// it, leaving them untouched otherwise. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Mean loss breakdown and mean gradients over a batch of examples.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &[CaptionRecord],
    alpha: f64,
    act: &ActivationConfig,
) -> Result<(LossBreakdown, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Input("cannot take gradients of an empty batch".into()));
    }
    let mut grads = ModelParams::zeros(params.dims());
    let mut total = 0.0;
    let mut textual = 0.0;
    let mut visual = 0.0;
    let mut clamped = 0;
    for record in batch {
        let (bd, g) = model::example_gradients(params, &record.tokens, &record.target, alpha, act)?;
        grads.add_scaled(&g, 1.0)?;
        total += bd.total;
        textual += bd.textual;
        visual += bd.visual;
        clamped += bd.clamped;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((
        LossBreakdown { total: total / n, textual: textual / n, visual: visual / n, clamped },
        grads,
    ))
}

/// Per-example loss averages for one pass over the training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub textual: f64,
    pub visual: f64,
    pub total: f64,
    /// Count of probability clamps across the whole epoch.
    pub clamped: usize,
}

/// Full training configuration for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Textual loss weight in [0, 1]; the visual loss gets 1 - alpha.
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Global gradient norm cap, off by default.
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            epochs: 8,
            batch_size: 4,
            adam: AdamConfig::default(),
            max_grad_norm: None,
            seed: 1,
        }
    }
}

/// One shuffled pass over the examples with batched Adam updates.
#[allow(clippy::too_many_arguments)]
fn train_epoch(
    params: &mut ModelParams,
    opt: &mut Adam,
    examples: &[CaptionRecord],
    cfg: &TrainConfig,
    act: &ActivationConfig,
    rng: &mut Rng,
    epoch: usize,
) -> Result<EpochStats> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    rng.shuffle(&mut order);
    let mut total = 0.0;
    let mut textual = 0.0;
    let mut visual = 0.0;
    let mut clamped = 0;
    for chunk in order.chunks(cfg.batch_size) {
        let batch: Vec<CaptionRecord> = chunk.iter().map(|&i| examples[i].clone()).collect();
        let (bd, mut grads) = batch_gradients(params, &batch, cfg.alpha, act)?;
        if let Some(cap) = cfg.max_grad_norm {
            clip_gradients(&mut grads, cap);
        }
        opt.step(params, &grads)?;
        let w = chunk.len() as f64;
        total += bd.total * w;
        textual += bd.textual * w;
        visual += bd.visual * w;
        clamped += bd.clamped;
    }
    let n = examples.len() as f64;
    Ok(EpochStats {
        epoch,
        textual: textual / n,
        visual: visual / n,
        total: total / n,
        clamped,
    })
}

/// Trains in place for the configured number of epochs. `on_epoch` runs after
/// every epoch with the fresh statistics and the current parameters, so
/// callers can log or checkpoint; an error from it aborts the run.
pub fn run_training(
    params: &mut ModelParams,
    examples: &[CaptionRecord],
    cfg: &TrainConfig,
    act: &ActivationConfig,
    mut on_epoch: impl FnMut(&EpochStats, &ModelParams) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    if examples.is_empty() {
        return Err(Error::Config("training needs at least one example".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", cfg.alpha)));
    }
    let mut opt = Adam::new(params, cfg.adam.clone());
    let mut rng = Rng::new(cfg.seed);
    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let s = train_epoch(params, &mut opt, examples, cfg, act, &mut rng, epoch)?;
        on_epoch(&s, params)?;
        stats.push(s);
    }
    Ok(stats)
}

/// Symmetric difference quotient (f(x + eps) - f(x - eps)) / (2 eps).
pub fn central_difference(
    mut f: impl FnMut(f64) -> Result<f64>,
    x: f64,
    epsilon: f64,
) -> Result<f64> {
    Ok((f(x + epsilon)? - f(x - epsilon)?) / (2.0 * epsilon))
}

/// |a - b| / max(|a|, |b|, 1e-8), the scale-free error used to compare
/// analytic and numerical derivatives.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Settings for a gradient check run.
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Probe size for the difference quotient.
    pub epsilon: f64,
    /// How many coordinates to sample per tensor; smaller tensors are
    /// checked exhaustively.
    pub samples_per_tensor: usize,
    /// Largest acceptable relative error.
    pub tolerance: f64,
    /// Coordinates where analytic and numerical derivatives are both below
    /// this magnitude count as exact. The difference quotient carries
    /// roundoff of order |loss| * 2^-52 / (2 * epsilon), so on a dead
    /// coordinate the comparison measures noise, not the backward pass.
    pub dead_zone: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-5,
            samples_per_tensor: 30,
            tolerance: 1e-4,
            dead_zone: 1e-6,
            seed: 0x5EED,
        }
    }
}

/// Worst relative error found in one tensor.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: &'static str,
    pub coords_checked: usize,
    pub max_rel_error: f64,
}

/// Outcome of a gradient check over every parameter tensor.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    /// The tensor with the largest error, for reporting.
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn set_coord(params: &mut ModelParams, tensor: usize, coord: usize, value: f64) {
    let mut tensors = params.tensors_mut();
    tensors[tensor].1.data_mut()[coord] = value;
}

/// Compares `analytic` gradients against central differences of the loss on
/// sampled coordinates of every tensor. The parameters are probed in place
/// and restored bit for bit. The analytic gradients are passed in rather
/// than computed here so callers can vet an arbitrary gradient source.
pub fn grad_check(
    params: &mut ModelParams,
    sentence: &[usize],
    target: &Vector,
    alpha: f64,
    analytic: &ModelParams,
    act: &ActivationConfig,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = Rng::new(cfg.seed);
    let n_tensors = params.tensors().len();
    let mut tensors = Vec::with_capacity(n_tensors);
    let mut overall: f64 = 0.0;
    for ti in 0..n_tensors {
        let (name, len) = {
            let ts = params.tensors();
            (ts[ti].0, ts[ti].1.data().len())
        };
        let mut coords: Vec<usize> = (0..len).collect();
        if len > cfg.samples_per_tensor {
            rng.shuffle(&mut coords);
            coords.truncate(cfg.samples_per_tensor);
        }
        let mut worst: f64 = 0.0;
        for &ci in &coords {
            let original = params.tensors()[ti].1.data()[ci];
            let numeric = central_difference(
                |x| {
                    set_coord(params, ti, ci, x);
                    let trace = model::forward(params, sentence, act)?;
                    Ok(model::loss(&trace, sentence, target, alpha)?.total)
                },
                original,
                cfg.epsilon,
            );
            set_coord(params, ti, ci, original);
            let numeric = numeric?;
            let exact = analytic.tensors()[ti].1.data()[ci];
            if exact.abs() < cfg.dead_zone && numeric.abs() < cfg.dead_zone {
                continue;
            }
            worst = worst.max(relative_error(exact, numeric));
        }
        overall = overall.max(worst);
        tensors.push(TensorCheck { name, coords_checked: coords.len(), max_rel_error: worst });
    }
    Ok(GradCheckReport { tensors, max_rel_error: overall })
}

/// Smallest distance from any clip pre-activation to a kink of the clipped
/// rectifier, over both pathways' candidates and the image projection. The
/// analytic subgradient is exact everywhere, but a difference quotient
/// straddling a kink is not, so instances this close to one are unusable for
/// checking.
pub fn min_kink_distance(
    params: &ModelParams,
    trace: &model::ForwardTrace,
    act: &ActivationConfig,
) -> Result<f64> {
    let mut min_dist = f64::INFINITY;
    let mut note = |pre: &Vector| {
        for &q in pre.as_slice() {
            min_dist = min_dist.min((q - act.clip_lo).abs()).min((q - act.clip_hi).abs());
        }
    };
    for (gru, steps) in [(&params.visual_gru, &trace.visual), (&params.textual_gru, &trace.textual)]
    {
        for step in steps.iter() {
            let gated = step.reset.hadamard(&step.hidden_prev)?;
            let mut pre = gru.w_cand.matvec(&step.input)?;
            pre.add_scaled(&gru.u_cand.matvec(&gated)?, 1.0)?;
            note(&pre);
        }
    }
    let last = trace
        .visual
        .last()
        .ok_or_else(|| Error::Input("trace has no steps".into()))?;
    note(&params.image_head.matvec(&last.hidden)?);
    Ok(min_dist)
}

/// Draws random parameters, a random token sentence and a random feature
/// target for gradient checking.
pub fn random_instance(
    dims: ModelDims,
    sentence_len: usize,
    rng: &mut Rng,
) -> (ModelParams, Vec<usize>, Vector) {
    let params = ModelParams::init(dims, 0.5, rng);
    let sentence: Vec<usize> = (0..sentence_len)
        .map(|_| rng.below(dims.vocab_size as u64) as usize)
        .collect();
    let mut target = Vector::zeros(dims.feature_dim);
    for v in target.as_mut_slice() {
        *v = rng.uniform_in(0.0, 5.0);
    }
    (params, sentence, target)
}

/// Like [`random_instance`], but rejects draws whose clip pre-activations
/// come within `margin` of a kink and resamples, up to `max_tries` attempts.
pub fn checked_random_instance(
    dims: ModelDims,
    sentence_len: usize,
    margin: f64,
    rng: &mut Rng,
    max_tries: usize,
    act: &ActivationConfig,
) -> Result<(ModelParams, Vec<usize>, Vector)> {
    for _ in 0..max_tries {
        let (params, sentence, target) = random_instance(dims, sentence_len, rng);
        let trace = model::forward(&params, &sentence, act)?;
        if min_kink_distance(&params, &trace, act)? >= margin {
            return Ok((params, sentence, target));
        }
    }
    Err(Error::Numerical(format!(
        "no instance clear of clip kinks after {max_tries} draws; margin {margin} may be too wide"
    )))
}
