//! Tangent variance-exploding noise schedule, EDM preconditioning and
//! loss weighting, training-time noise sampling and the Karras solver grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Population standard deviation of the target embeddings.
    pub sigma_data: f64,
    pub alpha_max: f64,
    /// Largest noise level in units of `sigma_data`.
    pub sigma_max: f64,
    /// Floor on noise levels used in sampling and training.
    pub sigma_min: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            sigma_data: 0.088,
            alpha_max: 1.5,
            sigma_max: 100.0,
            sigma_min: 1e-4,
        }
    }
}

/// Preconditioning coefficients at one noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precond {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

impl ScheduleConfig {
    pub fn with_sigma_data(sigma_data: f64) -> Self {
        Self {
            sigma_data,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_min > 0.0
            && self.sigma_data > 0.0
            && self.alpha_max > 0.0
            && self.alpha_max < std::f64::consts::FRAC_PI_2
            && self.sigma_data * self.sigma_max > self.sigma_min;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid schedule {self:?}")))
        }
    }

    /// `σ(1) = σ_data·σ_max`, the noise level the sampler starts from.
    pub fn sigma_top(&self) -> f64 {
        self.sigma_data * self.sigma_max
    }

    /// Unclamped `σ(t) = σ_data·σ_max·tan(α_max t)/tan(α_max)`.
    pub fn sigma_of_t_raw(&self, t: f64) -> f64 {
        self.sigma_top() * (self.alpha_max * t).tan() / self.alpha_max.tan()
    }

    /// `σ(t)` clamped below at `sigma_min`.
    pub fn sigma_of_t(&self, t: f64) -> f64 {
        self.sigma_of_t_raw(t).max(self.sigma_min)
    }

    /// `dσ/dt = σ_data·σ_max·α_max·sec²(α_max t)/tan(α_max)`.
    pub fn sigma_dot(&self, t: f64) -> f64 {
        let c = (self.alpha_max * t).cos();
        self.sigma_top() * self.alpha_max / (c * c * self.alpha_max.tan())
    }

    /// Inverse of the unclamped schedule on `[0, σ(1)]`.
    pub fn t_of_sigma(&self, sigma: f64) -> Result<f64> {
        let top = self.sigma_top();
        // allow one ulp-scale overshoot at the top end
        if !(0.0..=top * (1.0 + 1e-12)).contains(&sigma) {
            return Err(Error::Config(format!("sigma {sigma} outside [0, {top}]")));
        }
        let t = (sigma * self.alpha_max.tan() / top).atan() / self.alpha_max;
        Ok(t.min(1.0))
    }

    pub fn precond(&self, sigma: f64) -> Precond {
        let sd2 = self.sigma_data * self.sigma_data;
        let s2 = sigma * sigma;
        Precond {
            c_skip: sd2 / (s2 + sd2),
            c_out: sigma * self.sigma_data / (sd2 + s2).sqrt(),
            c_in: 1.0 / (s2 + sd2).sqrt(),
            c_noise: 0.25 * sigma.ln(),
        }
    }

    /// EDM weighting `λ(σ) = (σ_data² + σ²)/(σ_data·σ)²`, so that
    /// `λ·c_out² = 1`.
    pub fn loss_weight(&self, sigma: f64) -> f64 {
        let p = self.sigma_data * sigma;
        (self.sigma_data * self.sigma_data + sigma * sigma) / (p * p)
    }

    /// Training noise level for a uniform draw `δ ∈ [0, 1]`:
    /// `σ_min·(σ_data·σ_max/σ_min)^δ`.
    pub fn train_sigma_from_uniform(&self, delta: f64) -> f64 {
        self.sigma_min * (self.sigma_top() / self.sigma_min).powf(delta)
    }

    /// Log-uniform training noise level on `[σ_min, σ_data·σ_max]`.
    pub fn sample_train_sigma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.train_sigma_from_uniform(rng.gen::<f64>())
    }
}

/// Karras solver levels `(σ_hi^{1/ρ} + i/(N−1)(σ_lo^{1/ρ} − σ_hi^{1/ρ}))^ρ`, `i = 0..N`.
pub fn karras_sigmas(steps: usize, rho: f64, sigma_lo: f64, sigma_hi: f64) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::Config(format!("need at least 2 solver steps, got {steps}")));
    }
    if !(rho > 0.0) || !(sigma_lo > 0.0) || !(sigma_hi > sigma_lo) {
        return Err(Error::Config(format!(
            "invalid Karras grid (rho {rho}, sigma_lo {sigma_lo}, sigma_hi {sigma_hi})"
        )));
    }
    let hi = sigma_hi.powf(1.0 / rho);
    let lo = sigma_lo.powf(1.0 / rho);
    let last = (steps - 1) as f64;
    let mut out: Vec<f64> = (0..steps)
        .map(|i| (hi + i as f64 / last * (lo - hi)).powf(rho))
        .collect();
    out[0] = sigma_hi;
    out[steps - 1] = sigma_lo;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference() -> ScheduleConfig {
        ScheduleConfig::default()
    }

    #[test]
    fn endpoints_of_the_tangent_schedule() {
        let s = reference();
        assert_eq!(s.sigma_of_t_raw(0.0), 0.0);
        assert_eq!(s.sigma_of_t(0.0), 1e-4);
        assert!((s.sigma_of_t(1.0) - 8.8).abs() < 1e-12);
        let mid = 0.088 * 100.0 * (0.75f64).tan() / (1.5f64).tan();
        assert!((s.sigma_of_t(0.5) - mid).abs() < 1e-12);
    }

    #[test]
    fn sigma_dot_limit_at_zero() {
        let s = reference();
        let expected = 0.088 * 100.0 * 1.5 / (1.5f64).tan();
        assert!((s.sigma_dot(0.0) - expected).abs() < 1e-12);
        assert!(s.sigma_dot(0.2) < s.sigma_dot(0.8));
    }

    #[test]
    fn inverse_endpoints() {
        let s = reference();
        assert_eq!(s.t_of_sigma(0.0).unwrap(), 0.0);
        assert!((s.t_of_sigma(8.8).unwrap() - 1.0).abs() < 1e-12);
        assert!(s.t_of_sigma(9.0).is_err());
        assert!(s.t_of_sigma(-0.1).is_err());
    }

    #[test]
    fn precond_at_sigma_data() {
        let s = reference();
        let p = s.precond(0.088);
        assert!((p.c_skip - 0.5).abs() < 1e-15);
        assert!((p.c_out - 0.088 / 2f64.sqrt()).abs() < 1e-15);
        assert!((p.c_in - 1.0 / (0.088 * 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(s.precond(1.0).c_noise, 0.0);
        assert!(s.precond(1e6).c_skip < 1e-10);
        assert!((s.loss_weight(0.088) * 0.088 * 0.088 - 2.0).abs() < 1e-12);
        assert!((ScheduleConfig::with_sigma_data(1.0).loss_weight(1.0) - 2.0).abs() < 1e-15);
        assert!(s.loss_weight(1e-12) > 1e9);
    }

    #[test]
    fn train_sigma_endpoints() {
        let s = reference();
        assert!((s.train_sigma_from_uniform(0.0) - 1e-4).abs() < 1e-18);
        assert!((s.train_sigma_from_uniform(1.0) - 8.8).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let v = s.sample_train_sigma(&mut rng);
            assert!((1e-4..=8.8).contains(&v));
        }
    }

    #[test]
    fn karras_grid_properties() {
        let g = karras_sigmas(256, 7.0, 1e-4, 8.8).unwrap();
        assert_eq!(g.len(), 256);
        assert_eq!(g[0], 8.8);
        assert_eq!(g[255], 1e-4);
        assert!(g.windows(2).all(|w| w[1] < w[0]) && g.iter().all(|&v| v > 0.0));

        let lin = karras_sigmas(5, 1.0, 1.0, 5.0).unwrap();
        for (a, b) in lin.iter().zip([5.0, 4.0, 3.0, 2.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(karras_sigmas(1, 7.0, 1e-4, 8.8).is_err());
    }
}
