//! Runs the sampler with the exact denoiser of a known Gaussian and reports
//! how well each drift form recovers its mean and covariance.
//!
//! cargo run --release --example gaussian_oracle

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seedprior::diffusion::{sample, DriftForm, GaussianDenoiser, SamplerConfig, ScheduleConfig};
use seedprior::linalg::SquareMatrix;
use seedprior::metrics::moments;

fn main() -> seedprior::Result<()> {
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.gen_range(-0.3..0.3)).collect()).collect();
    let mut cov = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            let v: f64 = (0..d).map(|k| a[k][i] * a[k][j]).sum();
            cov.set(i, j, v + if i == j { 0.01 } else { 0.0 });
        }
    }
    let mean: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let oracle = GaussianDenoiser::new(mean.clone(), &cov, 1)?;
    let schedule = ScheduleConfig::with_sigma_data(0.5);

    for drift in [DriftForm::StandardVe, DriftForm::UnitCoefficient] {
        let cfg = SamplerConfig {
            drift_form: drift,
            post_normalize: false,
            ..SamplerConfig::default()
        };
        match sample(&oracle, &[0.0], &schedule, &cfg, 4096) {
            Ok(xs) => {
                let m = moments(&xs)?;
                let mean_err = m.mean.iter().zip(&mean).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                let cov_err = m.covariance.sub(&cov).frobenius() / cov.frobenius();
                println!("{drift:?}: max mean error {mean_err:.4}, covariance relative error {cov_err:.4}");
            }
            Err(e) => println!("{drift:?}: {e}"),
        }
    }
    Ok(())
}
