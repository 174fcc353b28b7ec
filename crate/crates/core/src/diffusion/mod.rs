//! Diffusion prior over the target embedding space.

mod denoiser;
mod sampler;
mod schedule;
mod train;

pub use denoiser::{cfg_denoise, combined_steer, steer_denoise, Denoiser, DiffusionModel, GaussianDenoiser, SteerSignal};
pub use sampler::{sample, sample_rows, slerp_steer, DriftForm, SamplerConfig, SlerpSteer};
pub use schedule::{karras_sigmas, Precond, ScheduleConfig};
pub use train::{gather_batch, train_diffusion, DiffusionTrainer, TrainConfig};
