//! Gradient-descent baseline on the same fixed architecture: hand-derived
//! backpropagation with Adam or plain SGD, an epoch loop over shuffled
//! mini-batches, and per-epoch validation.
//!
//! The loss is mean cross-entropy (`-(1/n) Σ log q[true class]`), the
//! standard minimization form of the batch fitness; accuracy comparisons
//! between the two trainers are unaffected by the different normalization.

use rand::Rng;
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::fitness::{full_set_accuracy, one_hot_indices, FitnessError, PROBABILITY_FLOOR};
use crate::model::{ModelError, NetworkSpec, PopulationParams};
use crate::rng::{Purpose, RunRng};
use crate::scalar::Scalar;
use crate::tensor::{dot, maxpool2x2, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum GradError {
    #[error("parameter/gradient length mismatch: {params} vs {grads}")]
    LengthMismatch { params: usize, grads: usize },
    #[error("genome has {actual} values, spec requires {expected}")]
    GenomeLength { expected: usize, actual: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Adam hyperparameters (the optimizer's standard defaults).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second-moment accumulators plus the timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    m: Vec<F>,
    v: Vec<F>,
    t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            t: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<F: Scalar>(
    params: &mut [F],
    grads: &[F],
    state: &mut AdamState<F>,
    hyper: &AdamHyper,
) -> Result<(), GradError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(GradError::LengthMismatch {
            params: params.len(),
            grads: grads.len(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = F::cast(hyper.beta1);
    let b2 = F::cast(hyper.beta2);
    let one = F::one();
    let lr = F::cast(hyper.lr);
    let eps = F::cast(hyper.epsilon);
    let m_corr = F::cast(1.0 / (1.0 - hyper.beta1.powi(t)));
    let v_corr = F::cast(1.0 / (1.0 - hyper.beta2.powi(t)));

    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] * m_corr;
        let v_hat = state.v[i] * v_corr;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Plain gradient descent step in place.
pub fn sgd_step<F: Scalar>(params: &mut [F], grads: &[F], lr: f64) -> Result<(), GradError> {
    if params.len() != grads.len() {
        return Err(GradError::LengthMismatch {
            params: params.len(),
            grads: grads.len(),
        });
    }
    let lr = F::cast(lr);
    for (p, &g) in params.iter_mut().zip(grads) {
        *p = *p - lr * g;
    }
    Ok(())
}

/// Forward and backward pass for a single network on one batch.
///
/// Returns the mean cross-entropy loss and the gradient as a flat vector in
/// genome layout (per layer: row-major weights, then biases). Pooling is
/// applied to the input before the first layer, so no parameter gradient
/// flows through it. ReLU passes gradient only where the pre-activation is
/// strictly positive.
pub fn backprop<F: Scalar>(
    spec: &NetworkSpec,
    genome: &[F],
    images: &Tensor<F>,
    labels_onehot: &Tensor<F>,
) -> Result<(F, Vec<F>), GradError> {
    if genome.len() != spec.param_count() {
        return Err(GradError::GenomeLength {
            expected: spec.param_count(),
            actual: genome.len(),
        });
    }
    if images.rank() != 3
        || images.shape()[1] != spec.input_hw().0
        || images.shape()[2] != spec.input_hw().1
    {
        return Err(GradError::Model(ModelError::ImageShape {
            expected: spec.input_hw(),
            actual: images.shape().to_vec(),
        }));
    }
    let b = images.shape()[0];
    let hot = one_hot_indices(labels_onehot)?;
    if labels_onehot.shape()[0] != b {
        return Err(GradError::Fitness(FitnessError::AxisMismatch {
            op: "backprop",
            axis: "batch",
            left: labels_onehot.shape()[0],
            right: b,
        }));
    }
    let d = spec.num_classes();
    if labels_onehot.shape()[1] != d {
        return Err(GradError::Fitness(FitnessError::AxisMismatch {
            op: "backprop",
            axis: "class",
            left: labels_onehot.shape()[1],
            right: d,
        }));
    }

    let layers = spec.layer_shapes();
    let offsets = spec.layer_offsets();
    let num_layers = layers.len();

    let pooled = maxpool2x2(images)?;
    let x0 = pooled.reshape(vec![b, spec.input_dim()])?;

    // Forward with cached activations: acts[l] feeds layer l, zs[l] is its
    // pre-activation output.
    let mut acts: Vec<Vec<F>> = Vec::with_capacity(num_layers);
    let mut zs: Vec<Vec<F>> = Vec::with_capacity(num_layers);
    acts.push(x0.data().to_vec());
    for (l, &(out, inp)) in layers.iter().enumerate() {
        let (w_off, b_off) = offsets[l];
        let w = &genome[w_off..w_off + out * inp];
        let bias = &genome[b_off..b_off + out];
        let x = &acts[l];
        let mut z = vec![F::zero(); b * out];
        for i in 0..b {
            let xi = &x[i * inp..(i + 1) * inp];
            for j in 0..out {
                z[i * out + j] = bias[j] + dot(&w[j * inp..(j + 1) * inp], xi);
            }
        }
        if l + 1 < num_layers {
            let a: Vec<F> = z
                .iter()
                .map(|&v| if v > F::zero() { v } else { F::zero() })
                .collect();
            acts.push(a);
        }
        zs.push(z);
    }

    // Softmax probabilities and mean cross-entropy loss.
    let logits = &zs[num_layers - 1];
    let mut probs = logits.clone();
    for row in probs.chunks_mut(d) {
        let mut max = row[0];
        for &v in row.iter().skip(1) {
            if v > max {
                max = v;
            }
        }
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    let mut loss_acc = 0.0f64;
    for (i, &y) in hot.iter().enumerate() {
        let q = probs[i * d + y].as_f64().max(PROBABILITY_FLOOR);
        loss_acc -= q.ln();
    }
    let loss = F::cast(loss_acc / b as f64);

    // Output delta for softmax + cross-entropy: (q - onehot) / b.
    let inv_b = F::cast(1.0 / b as f64);
    let mut delta: Vec<F> = probs;
    for (i, &y) in hot.iter().enumerate() {
        delta[i * d + y] = delta[i * d + y] - F::one();
    }
    for v in delta.iter_mut() {
        *v = *v * inv_b;
    }

    // Backward through the layers.
    let mut grads = vec![F::zero(); genome.len()];
    for l in (0..num_layers).rev() {
        let (out, inp) = layers[l];
        let (w_off, b_off) = offsets[l];
        let x = &acts[l];

        let gw = &mut grads[w_off..w_off + out * inp];
        for j in 0..out {
            for mcol in 0..inp {
                let mut acc = F::zero();
                for i in 0..b {
                    acc = acc + delta[i * out + j] * x[i * inp + mcol];
                }
                gw[j * inp + mcol] = acc;
            }
        }
        let gb = &mut grads[b_off..b_off + out];
        for j in 0..out {
            let mut acc = F::zero();
            for i in 0..b {
                acc = acc + delta[i * out + j];
            }
            gb[j] = acc;
        }

        if l > 0 {
            let w = &genome[w_off..w_off + out * inp];
            let z_prev = &zs[l - 1];
            let mut next_delta = vec![F::zero(); b * inp];
            for i in 0..b {
                for mcol in 0..inp {
                    if z_prev[i * inp + mcol] > F::zero() {
                        let mut acc = F::zero();
                        for j in 0..out {
                            acc = acc + delta[i * out + j] * w[j * inp + mcol];
                        }
                        next_delta[i * inp + mcol] = acc;
                    }
                }
            }
            delta = next_delta;
        }
    }

    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam(AdamHyper),
    Sgd { lr: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub epochs: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GradError> {
        if self.batch_size == 0 {
            return Err(GradError::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(GradError::Config("epochs must be at least 1".into()));
        }
        let lr = match self.optimizer {
            Optimizer::Adam(h) => {
                for (name, v) in [("beta1", h.beta1), ("beta2", h.beta2)] {
                    if !v.is_finite() || !(0.0..1.0).contains(&v) {
                        return Err(GradError::Config(format!("{name} {v} must lie in [0, 1)")));
                    }
                }
                if !h.epsilon.is_finite() || h.epsilon <= 0.0 {
                    return Err(GradError::Config(format!(
                        "epsilon {} must be positive",
                        h.epsilon
                    )));
                }
                h.lr
            }
            Optimizer::Sgd { lr } => lr,
        };
        if !lr.is_finite() || lr < 0.0 {
            return Err(GradError::Config(format!(
                "learning rate {lr} must be finite and non-negative"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Example-weighted mean training loss over the epoch.
    pub mean_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult<F> {
    /// Network with the highest validation accuracy seen (earliest epoch on
    /// ties).
    pub best_genome: Vec<F>,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    /// Network after the last epoch.
    pub final_genome: Vec<F>,
    pub final_val_accuracy: f64,
}

/// Epoch loop with shuffled mini-batches and per-epoch validation.
/// Initialization and shuffling draw from streams derived from `run_seed`,
/// so a seed fully determines the result.
pub fn train<F: Scalar>(
    spec: &NetworkSpec,
    train_set: &Dataset<F>,
    val_set: &Dataset<F>,
    cfg: &TrainConfig,
    run_seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainResult<F>, GradError> {
    cfg.validate()?;
    let rng = RunRng::new(run_seed);
    let mut init_rng = rng.stream(Purpose::Init, 0, 0);
    let init = PopulationParams::<F>::glorot_uniform_init(spec.clone(), 1, &mut init_rng)?;
    let mut genome = init.flatten(0)?;

    let mut adam_state = AdamState::new(genome.len());
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();

    let mut best_genome = genome.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut final_val = 0.0f64;

    for epoch in 1..=cfg.epochs {
        let mut shuffle_rng = rng.stream(Purpose::Batch, epoch as u64, 0);
        // Fisher–Yates over the whole index set, one fresh permutation per epoch.
        for i in (1..n).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.batch_at(chunk)?;
            let (loss, grads) = backprop(spec, &genome, &batch.images, &batch.onehot)?;
            match cfg.optimizer {
                Optimizer::Adam(ref hyper) => {
                    adam_step(&mut genome, &grads, &mut adam_state, hyper)?
                }
                Optimizer::Sgd { lr } => sgd_step(&mut genome, &grads, lr)?,
            }
            loss_sum += loss.as_f64() * chunk.len() as f64;
        }
        let mean_loss = loss_sum / n as f64;

        let params = PopulationParams::from_genome(spec.clone(), &genome)?;
        let val_accuracy = full_set_accuracy(&params, val_set, 1024)?[0];
        final_val = val_accuracy;
        if val_accuracy > best_val {
            best_val = val_accuracy;
            best_epoch = epoch;
            best_genome = genome.clone();
        }
        on_epoch(&EpochRecord {
            epoch,
            mean_loss,
            val_accuracy,
        });
    }

    Ok(TrainResult {
        best_genome,
        best_val_accuracy: best_val,
        best_epoch,
        final_genome: genome,
        final_val_accuracy: final_val,
    })
}
