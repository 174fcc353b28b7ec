//! Euler–Maruyama sampler for the reverse-time SDE, plus slerp steering.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::denoiser::{cfg_denoise, combined_steer, steer_with_direction, Denoiser, SteerSignal};
use super::schedule::{karras_sigmas, ScheduleConfig};
use crate::error::{ensure_dim, Error, Result};
use crate::tensor::{dot, normalized, Matrix};

/// Drift of the reverse SDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftForm {
    /// `(σ̇/σ)·z − 2(σ̇/σ)·D`, coefficient 1 on the state term.
    #[serde(rename = "paper_eq2")]
    UnitCoefficient,
    /// `2(σ̇/σ)·(z − D)`, the variance-exploding reverse drift.
    StandardVe,
}

/// Spherical interpolation toward a fixed direction applied to each sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlerpSteer {
    pub vector: Vec<f32>,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub rho: f64,
    pub omega: f64,
    pub steers: Vec<SteerSignal>,
    pub drift_form: DriftForm,
    pub post_normalize: bool,
    pub slerp: Option<SlerpSteer>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 256,
            rho: 7.0,
            omega: 0.0,
            steers: Vec::new(),
            drift_form: DriftForm::StandardVe,
            post_normalize: true,
            slerp: None,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Config(format!("sampler needs at least 2 steps, got {}", self.steps)));
        }
        if !(self.rho > 0.0) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if !self.omega.is_finite() {
            return Err(Error::Config("omega must be finite".into()));
        }
        if let Some(s) = &self.slerp {
            if !(0.0..=1.0).contains(&s.ratio) {
                return Err(Error::Config(format!("slerp ratio {} outside [0, 1]", s.ratio)));
            }
        }
        Ok(())
    }
}

/// Draw `n` samples for a single condition vector.
pub fn sample<D: Denoiser + ?Sized>(
    model: &D,
    cond: &[f32],
    schedule: &ScheduleConfig,
    cfg: &SamplerConfig,
    n: usize,
) -> Result<Vec<Vec<f32>>> {
    ensure_dim("sampler condition", model.cond_dim(), cond.len())?;
    let conds = Matrix::repeat_row(cond, n);
    Ok(sample_rows(model, &conds, schedule, cfg)?.to_rows())
}

/// Draw one sample per condition row, all rows integrated together.
///
/// Row `r` uses its own random stream derived from `(cfg.seed, r)`, so a
/// row's sample does not depend on how many other rows share the batch.
pub fn sample_rows<D: Denoiser + ?Sized>(
    model: &D,
    conds: &Matrix,
    schedule: &ScheduleConfig,
    cfg: &SamplerConfig,
) -> Result<Matrix> {
    cfg.validate()?;
    schedule.validate()?;
    ensure_dim("sampler condition", model.cond_dim(), conds.cols)?;
    let dim = model.dim();
    let rows = conds.rows;
    let steer_dir = combined_steer(&cfg.steers, dim)?;
    if let Some(s) = &cfg.slerp {
        ensure_dim("slerp vector", dim, s.vector.len())?;
    }

    let mut rngs: Vec<ChaCha8Rng> = (0..rows)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            rng
        })
        .collect();

    let top = schedule.sigma_top();
    let sigmas = karras_sigmas(cfg.steps, cfg.rho, schedule.sigma_min, top)?;
    let times: Vec<f64> = sigmas.iter().map(|&s| schedule.t_of_sigma(s)).collect::<Result<_>>()?;

    let mut z = Matrix::zeros(rows, dim);
    for (r, rng) in rngs.iter_mut().enumerate() {
        for v in z.row_mut(r) {
            let e: f64 = StandardNormal.sample(rng);
            *v = (top * e) as f32;
        }
    }

    let denoise = |z: &Matrix, sigma: f64| -> Result<Matrix> {
        match &steer_dir {
            None => cfg_denoise(model, z, sigma, conds, cfg.omega),
            Some(dir) => steer_with_direction(model, z, sigma, conds, cfg.omega, dir),
        }
    };

    for i in 0..cfg.steps - 1 {
        let sigma = sigmas[i];
        let t = times[i];
        let dt = times[i + 1] - t;
        let d = denoise(&z, sigma)?;
        let sdot = schedule.sigma_dot(t);
        let rate = sdot / sigma;
        let noise_scale = (2.0 * sdot * sigma * dt.abs()).sqrt();
        for (r, rng) in rngs.iter_mut().enumerate() {
            let zr = z.row_mut(r);
            let dr = d.row(r);
            for (zv, &dv) in zr.iter_mut().zip(dr) {
                let (zf, df) = (*zv as f64, dv as f64);
                let drift = match cfg.drift_form {
                    DriftForm::StandardVe => 2.0 * rate * (zf - df),
                    DriftForm::UnitCoefficient => rate * zf - 2.0 * rate * df,
                };
                let e: f64 = StandardNormal.sample(rng);
                *zv = (zf + drift * dt + noise_scale * e) as f32;
            }
        }
        if !z.is_finite() {
            return Err(Error::SamplerDiverged { step: i });
        }
    }

    let mut out = denoise(&z, sigmas[cfg.steps - 1])?;
    if !out.is_finite() {
        return Err(Error::SamplerDiverged { step: cfg.steps - 1 });
    }
    for r in 0..rows {
        let row = out.row_mut(r);
        if cfg.post_normalize || cfg.slerp.is_some() {
            if let Some(u) = normalized(row) {
                row.copy_from_slice(&u);
            }
        }
        if let Some(s) = &cfg.slerp {
            let steered = slerp_steer(row, &s.vector, s.ratio)?;
            row.copy_from_slice(&steered);
        }
    }
    Ok(out)
}

/// Spherical linear interpolation from `z` toward `target` by `ratio`.
pub fn slerp_steer(z: &[f32], target: &[f32], ratio: f64) -> Result<Vec<f32>> {
    ensure_dim("slerp target", z.len(), target.len())?;
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("slerp ratio {ratio} outside [0, 1]")));
    }
    let a = normalized(z).ok_or(Error::Empty("slerp source is the zero vector"))?;
    let b = normalized(target).ok_or(Error::Empty("slerp target is the zero vector"))?;
    let cos = dot(&a, &b).clamp(-1.0, 1.0);
    let phi = cos.acos();
    if std::f64::consts::PI - phi < 1e-6 {
        return Err(Error::Config("slerp between antipodal vectors is undefined".into()));
    }
    if ratio == 0.0 {
        return Ok(a);
    }
    if ratio == 1.0 {
        return Ok(b);
    }
    if phi < 1e-9 {
        return Ok(a);
    }
    let s = phi.sin();
    let wa = ((1.0 - ratio) * phi).sin() / s;
    let wb = (ratio * phi).sin() / s;
    let out: Vec<f32> = a
        .iter()
        .zip(&b)
        .map(|(&x, &y)| (wa * x as f64 + wb * y as f64) as f32)
        .collect();
    Ok(out)
}
