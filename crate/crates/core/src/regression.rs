//! Deterministic query-to-target baseline on the denoiser backbone.
//!
//! The network sees a zero noisy-input vector and a constant noise feature
//! `c_noise(σ_data)`, so only the condition varies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{gather_batch, ScheduleConfig, TrainConfig};
use crate::error::{ensure_dim, Error, Result};
use crate::nn::{adam_step, NetworkSpec, OptimizerState, Params};
use crate::tensor::{normalized, Matrix};

#[derive(Debug, Clone)]
pub struct RegressionModel {
    pub params: Params,
    pub noise_feature: f32,
}

impl RegressionModel {
    pub fn new(params: Params, sigma_data: f64) -> Self {
        let noise_feature = ScheduleConfig::with_sigma_data(sigma_data).precond(sigma_data).c_noise as f32;
        Self { params, noise_feature }
    }

    /// Fresh model with every weight drawn, including condition columns.
    pub fn init(spec: NetworkSpec, sigma_data: f64, seed: u64) -> Result<Self> {
        Ok(Self::new(Params::init_conditioned(spec, seed)?, sigma_data))
    }

    pub fn dim(&self) -> usize {
        self.params.spec().output_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.params.spec().cond_dim
    }

    /// One prediction per row of `queries`.
    pub fn predict_batch(&self, queries: &Matrix) -> Result<Matrix> {
        let spec = self.params.spec();
        ensure_dim("regression query", spec.cond_dim, queries.cols)?;
        let x = Matrix::zeros(queries.rows, spec.input_dim);
        let noise = vec![self.noise_feature; queries.rows];
        Ok(self.params.forward_batch(&x, &noise, queries)?.into_output())
    }

    pub fn predict(&self, query: &[f32]) -> Result<Vec<f32>> {
        let q = Matrix::from_vec(1, query.len(), query.to_vec());
        Ok(self.predict_batch(&q)?.data)
    }

    /// Prediction rescaled to unit norm, as used for retrieval.
    pub fn predict_normalized(&self, query: &[f32]) -> Result<Vec<f32>> {
        let p = self.predict(query)?;
        normalized(&p).ok_or(Error::NonFinite("regression prediction has zero norm".into()))
    }

    /// Mean squared error `‖f(q) − z‖²` over the batch and its gradient.
    pub fn loss_and_grad(&self, queries: &Matrix, targets: &Matrix) -> Result<(f64, crate::nn::ParamGradients)> {
        let spec = self.params.spec();
        ensure_dim("regression targets", spec.output_dim, targets.cols)?;
        ensure_dim("regression batch rows", queries.rows, targets.rows)?;
        if queries.rows == 0 {
            return Err(Error::Empty("regression batch"));
        }
        let x = Matrix::zeros(queries.rows, spec.input_dim);
        let noise = vec![self.noise_feature; queries.rows];
        let trace = self.params.forward_batch(&x, &noise, queries)?;
        let n = queries.rows as f64;
        let mut upstream = Matrix::zeros(queries.rows, spec.output_dim);
        let mut loss = 0.0f64;
        for ((u, &f), &z) in upstream.data.iter_mut().zip(&trace.output().data).zip(&targets.data) {
            let e = f as f64 - z as f64;
            loss += e * e;
            *u = (2.0 * e / n) as f32;
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("regression loss".into()));
        }
        Ok((loss, self.params.grad_params(&trace, &upstream)?))
    }
}

/// Fits the regressor with the diffusion recipe's optimizer and schedule;
/// `cfg.p_mask` is ignored.
pub fn train_regression(
    mut model: RegressionModel,
    queries: &Matrix,
    targets: &Matrix,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(u64, f64),
) -> Result<RegressionModel> {
    cfg.validate()?;
    ensure_dim("training rows", queries.rows, targets.rows)?;
    if queries.rows == 0 {
        return Err(Error::Empty("training dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(&model.params);
    let mut idx = vec![0usize; cfg.batch_size];
    while opt.step < cfg.total_steps {
        idx.iter_mut().for_each(|i| *i = rng.gen_range(0..queries.rows));
        let (q, z) = gather_batch(queries, targets, &idx);
        let (loss, grads) = model.loss_and_grad(&q, &z)?;
        let lr = cfg.lr_at(opt.step + 1)?;
        if lr > 0.0 {
            adam_step(&mut opt, &mut model.params, &grads, lr)?;
        } else {
            opt.step += 1;
        }
        on_step(opt.step, loss);
    }
    Ok(model)
}
