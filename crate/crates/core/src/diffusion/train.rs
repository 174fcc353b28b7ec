//! Denoising score-matching training with condition masking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::denoiser::DiffusionModel;
use crate::error::{ensure_dim, Error, Result};
use crate::nn::{adam_step, cosine_lr, OptimizerState};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Probability of replacing the condition with the zero vector.
    pub p_mask: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub warmup: u64,
    pub peak_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p_mask: 0.1,
            batch_size: 128,
            total_steps: 20_000,
            warmup: 1_000,
            peak_lr: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Large-scale recipe: 2M steps, 10k warm-up, peak rate 1e-5.
    pub fn large_scale() -> Self {
        Self {
            p_mask: 0.1,
            batch_size: 4096,
            total_steps: 2_000_000,
            warmup: 10_000,
            peak_lr: 1e-5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_mask) {
            return Err(Error::Config(format!("p_mask {} outside [0, 1]", self.p_mask)));
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err(Error::Config("batch_size and total_steps must be positive".into()));
        }
        if self.warmup > self.total_steps {
            return Err(Error::Config("warmup exceeds total_steps".into()));
        }
        if !(self.peak_lr > 0.0) {
            return Err(Error::Config("peak_lr must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used for the update that brings the step counter to `step`.
    pub fn lr_at(&self, step: u64) -> Result<f64> {
        cosine_lr(step, self.warmup, self.total_steps, self.peak_lr)
    }
}

/// Model plus optimizer state for the diffusion objective.
#[derive(Debug, Clone)]
pub struct DiffusionTrainer {
    pub model: DiffusionModel,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
}

impl DiffusionTrainer {
    pub fn new(model: DiffusionModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(&model.params);
        Ok(Self {
            model,
            optimizer,
            config,
        })
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    /// Weighted denoising loss and its parameter gradient for one batch.
    ///
    /// Per row: `σ ~ η`, `z̃ = z + σε`, condition masked with probability
    /// `p_mask`; the loss is the batch mean of `λ(σ)·‖D(z̃, σ, q) − z‖²`.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        queries: &Matrix,
        targets: &Matrix,
        rng: &mut R,
    ) -> Result<(f64, crate::nn::ParamGradients)> {
        let model = &self.model;
        let spec = model.params.spec();
        ensure_dim("training targets", spec.input_dim, targets.cols)?;
        ensure_dim("training queries", spec.cond_dim, queries.cols)?;
        ensure_dim("training batch rows", targets.rows, queries.rows)?;
        if targets.rows == 0 {
            return Err(Error::Empty("training batch"));
        }
        let rows = targets.rows;
        let sched = &model.schedule;

        let mut x_in = Matrix::zeros(rows, spec.input_dim);
        let mut z_noisy = Matrix::zeros(rows, spec.input_dim);
        let mut cond = queries.clone();
        let mut noise_feat = Vec::with_capacity(rows);
        let mut pcs = Vec::with_capacity(rows);
        for r in 0..rows {
            let sigma = sched.sample_train_sigma(rng);
            let pc = sched.precond(sigma);
            for ((zn, xi), &z) in z_noisy.row_mut(r).iter_mut().zip(x_in.row_mut(r)).zip(targets.row(r)) {
                let e: f64 = StandardNormal.sample(rng);
                let noisy = z as f64 + sigma * e;
                *zn = noisy as f32;
                *xi = (pc.c_in * noisy) as f32;
            }
            if rng.gen::<f64>() < self.config.p_mask {
                cond.row_mut(r).fill(0.0);
            }
            noise_feat.push(pc.c_noise as f32);
            pcs.push((sigma, pc));
        }

        let trace = model.params.forward_batch(&x_in, &noise_feat, &cond)?;
        let f = trace.output();
        let mut upstream = Matrix::zeros(rows, spec.output_dim);
        let mut loss = 0.0f64;
        for r in 0..rows {
            let (sigma, pc) = pcs[r];
            let lambda = sched.loss_weight(sigma);
            let mut sq = 0.0f64;
            let up = upstream.row_mut(r);
            for j in 0..spec.output_dim {
                let d = pc.c_skip * z_noisy.row(r)[j] as f64 + pc.c_out * f.row(r)[j] as f64;
                let err = d - targets.row(r)[j] as f64;
                sq += err * err;
                up[j] = (2.0 * lambda * pc.c_out * err / rows as f64) as f32;
            }
            loss += lambda * sq;
        }
        loss /= rows as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", self.step())));
        }
        let grads = model.params.grad_params(&trace, &upstream)?;
        Ok((loss, grads))
    }

    /// One optimizer step on `(queries, targets)`; returns the batch loss.
    pub fn train_step<R: Rng + ?Sized>(&mut self, queries: &Matrix, targets: &Matrix, rng: &mut R) -> Result<f64> {
        let (loss, grads) = self.loss_and_grad(queries, targets, rng)?;
        let lr = self.config.lr_at(self.optimizer.step + 1)?;
        if lr > 0.0 {
            adam_step(&mut self.optimizer, &mut self.model.params, &grads, lr)?;
        } else {
            self.optimizer.step += 1;
        }
        Ok(loss)
    }
}

/// Copies rows `idx` of `queries` and `targets` into a fresh batch.
pub fn gather_batch(queries: &Matrix, targets: &Matrix, idx: &[usize]) -> (Matrix, Matrix) {
    let mut q = Matrix::zeros(idx.len(), queries.cols);
    let mut z = Matrix::zeros(idx.len(), targets.cols);
    for (r, &i) in idx.iter().enumerate() {
        q.row_mut(r).copy_from_slice(queries.row(i));
        z.row_mut(r).copy_from_slice(targets.row(i));
    }
    (q, z)
}

/// Runs `config.total_steps` steps on minibatches drawn with replacement.
/// `on_step(step, loss)` is called after every update.
pub fn train_diffusion(
    model: DiffusionModel,
    queries: &Matrix,
    targets: &Matrix,
    config: TrainConfig,
    mut on_step: impl FnMut(u64, f64),
) -> Result<DiffusionModel> {
    ensure_dim("training rows", queries.rows, targets.rows)?;
    if queries.rows == 0 {
        return Err(Error::Empty("training dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trainer = DiffusionTrainer::new(model, config)?;
    let mut idx = vec![0usize; trainer.config.batch_size];
    while trainer.step() < trainer.config.total_steps {
        idx.iter_mut().for_each(|i| *i = rng.gen_range(0..queries.rows));
        let (q, z) = gather_batch(queries, targets, &idx);
        let loss = trainer.train_step(&q, &z, &mut rng)?;
        on_step(trainer.step(), loss);
    }
    Ok(trainer.model)
}
