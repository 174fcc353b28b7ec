//! Denoisers, classifier-free guidance and gradient-based text steering.

use serde::{Deserialize, Serialize};

use super::schedule::ScheduleConfig;
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{jacobi_eigen, SquareMatrix, SymmetricEigen};
use crate::nn::{NetworkSpec, Params};
use crate::tensor::Matrix;

/// A conditional denoiser over batches. A zero condition row means
/// "unconditional".
pub trait Denoiser: Sync {
    /// Target embedding dimension.
    fn dim(&self) -> usize;

    fn cond_dim(&self) -> usize;

    /// Clean-embedding prediction for every row of `z` at noise level `sigma`.
    fn denoise(&self, z: &Matrix, sigma: f64, cond: &Matrix) -> Result<Matrix>;

    /// The prediction together with `∇_z ⟨D(z)_r, v_r⟩` for every row `r`.
    fn denoise_vjp(&self, z: &Matrix, sigma: f64, cond: &Matrix, v: &Matrix) -> Result<(Matrix, Matrix)>;
}

/// One text-steering signal: a target-space direction and its strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerSignal {
    pub vector: Vec<f32>,
    pub strength: f64,
}

/// Preconditioned network denoiser
/// `D(z, σ, q) = c_skip·z + c_out·F(c_in·z, c_noise, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub params: Params,
    pub schedule: ScheduleConfig,
}

impl DiffusionModel {
    pub fn new(params: Params, schedule: ScheduleConfig) -> Result<Self> {
        schedule.validate()?;
        let spec = params.spec();
        if spec.input_dim != spec.output_dim {
            return Err(Error::Config("denoiser input and output dims differ".into()));
        }
        Ok(Self { params, schedule })
    }

    pub fn init(spec: NetworkSpec, schedule: ScheduleConfig, seed: u64) -> Result<Self> {
        Self::new(Params::init(spec, seed)?, schedule)
    }

    fn check(&self, z: &Matrix, cond: &Matrix) -> Result<()> {
        ensure_dim("denoiser input", self.dim(), z.cols)?;
        ensure_dim("denoiser condition", self.cond_dim(), cond.cols)?;
        ensure_dim("denoiser condition rows", z.rows, cond.rows)
    }

    fn scaled_input(&self, z: &Matrix, c_in: f64) -> Matrix {
        let mut x = z.clone();
        x.data.iter_mut().for_each(|v| *v = (*v as f64 * c_in) as f32);
        x
    }

    fn combine(&self, z: &Matrix, f: &Matrix, c_skip: f64, c_out: f64) -> Matrix {
        let mut out = Matrix::zeros(z.rows, z.cols);
        for ((o, &zv), &fv) in out.data.iter_mut().zip(&z.data).zip(&f.data) {
            *o = (c_skip * zv as f64 + c_out * fv as f64) as f32;
        }
        out
    }
}

impl Denoiser for DiffusionModel {
    fn dim(&self) -> usize {
        self.params.spec().input_dim
    }

    fn cond_dim(&self) -> usize {
        self.params.spec().cond_dim
    }

    fn denoise(&self, z: &Matrix, sigma: f64, cond: &Matrix) -> Result<Matrix> {
        self.check(z, cond)?;
        let pc = self.schedule.precond(sigma);
        let noise = vec![pc.c_noise as f32; z.rows];
        let trace = self.params.forward_batch(&self.scaled_input(z, pc.c_in), &noise, cond)?;
        Ok(self.combine(z, trace.output(), pc.c_skip, pc.c_out))
    }

    fn denoise_vjp(&self, z: &Matrix, sigma: f64, cond: &Matrix, v: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check(z, cond)?;
        ensure_dim("steering direction", self.dim(), v.cols)?;
        ensure_dim("steering rows", z.rows, v.rows)?;
        let pc = self.schedule.precond(sigma);
        let noise = vec![pc.c_noise as f32; z.rows];
        let trace = self.params.forward_batch(&self.scaled_input(z, pc.c_in), &noise, cond)?;
        let jt_v = self.params.vjp_input(&trace, v)?;
        let d = self.combine(z, trace.output(), pc.c_skip, pc.c_out);
        // ∇_z⟨c_skip z + c_out F(c_in z), v⟩ = c_skip v + c_out c_in Jᵀv
        let mut grad = Matrix::zeros(z.rows, z.cols);
        let k = pc.c_out * pc.c_in;
        for ((g, &vv), &jv) in grad.data.iter_mut().zip(&v.data).zip(&jt_v.data) {
            *g = (pc.c_skip * vv as f64 + k * jv as f64) as f32;
        }
        Ok((d, grad))
    }
}

/// Exact posterior-mean denoiser for a Gaussian target `N(m, C)`:
/// `D(z, σ) = m + C(C + σ²I)⁻¹(z − m)`. Ignores the condition.
#[derive(Debug, Clone)]
pub struct GaussianDenoiser {
    mean: Vec<f64>,
    eigen: SymmetricEigen,
    cond_dim: usize,
}

impl GaussianDenoiser {
    pub fn new(mean: Vec<f64>, cov: &SquareMatrix, cond_dim: usize) -> Result<Self> {
        ensure_dim("gaussian covariance", mean.len(), cov.n)?;
        let eigen = jacobi_eigen(cov)?;
        if eigen.values.iter().any(|&l| l < -1e-12) {
            return Err(Error::Config("covariance is not positive semi-definite".into()));
        }
        Ok(Self { mean, eigen, cond_dim })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `C(C + σ²I)⁻¹`, symmetric.
    pub fn shrinkage(&self, sigma: f64) -> SquareMatrix {
        let s2 = sigma * sigma;
        self.eigen.reconstruct_with(|l| {
            let l = l.max(0.0);
            l / (l + s2)
        })
    }

    fn apply(&self, a: &SquareMatrix, z: &[f32]) -> Vec<f32> {
        let centered: Vec<f64> = z.iter().zip(&self.mean).map(|(&v, m)| v as f64 - m).collect();
        a.mul_vec(&centered)
            .iter()
            .zip(&self.mean)
            .map(|(v, m)| (v + m) as f32)
            .collect()
    }
}

impl Denoiser for GaussianDenoiser {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn denoise(&self, z: &Matrix, sigma: f64, cond: &Matrix) -> Result<Matrix> {
        ensure_dim("gaussian denoiser input", self.dim(), z.cols)?;
        ensure_dim("gaussian denoiser condition", self.cond_dim, cond.cols)?;
        let a = self.shrinkage(sigma);
        let rows: Vec<Vec<f32>> = (0..z.rows).map(|i| self.apply(&a, z.row(i))).collect();
        Ok(Matrix::from_rows(&rows, self.dim()))
    }

    fn denoise_vjp(&self, z: &Matrix, sigma: f64, cond: &Matrix, v: &Matrix) -> Result<(Matrix, Matrix)> {
        let d = self.denoise(z, sigma, cond)?;
        ensure_dim("steering direction", self.dim(), v.cols)?;
        let a = self.shrinkage(sigma);
        let rows: Vec<Vec<f32>> = (0..v.rows)
            .map(|i| {
                let vi: Vec<f64> = v.row(i).iter().map(|&x| x as f64).collect();
                a.mul_vec(&vi).into_iter().map(|x| x as f32).collect()
            })
            .collect();
        Ok((d, Matrix::from_rows(&rows, self.dim())))
    }
}

/// `(1 + ω)·a − ω·b`, element-wise in `f64`.
fn guide(a: &Matrix, b: &Matrix, omega: f64) -> Matrix {
    let mut out = Matrix::zeros(a.rows, a.cols);
    for ((o, &x), &y) in out.data.iter_mut().zip(&a.data).zip(&b.data) {
        *o = ((1.0 + omega) * x as f64 - omega * y as f64) as f32;
    }
    out
}

/// Classifier-free guidance `D' = (1 + ω)·D(·, q) − ω·D(·, 0)`.
pub fn cfg_denoise<D: Denoiser + ?Sized>(
    model: &D,
    z: &Matrix,
    sigma: f64,
    cond: &Matrix,
    omega: f64,
) -> Result<Matrix> {
    let uncond = Matrix::zeros(cond.rows, cond.cols);
    // ω = 0 and ω = −1 need only one branch
    if omega == 0.0 {
        return model.denoise(z, sigma, cond);
    }
    if omega == -1.0 {
        return model.denoise(z, sigma, &uncond);
    }
    let dc = model.denoise(z, sigma, cond)?;
    let du = model.denoise(z, sigma, &uncond)?;
    Ok(guide(&dc, &du, omega))
}

/// Sum `Σ k_n z_n` of the steering signals, or `None` when it is exactly zero.
pub fn combined_steer(steers: &[SteerSignal], dim: usize) -> Result<Option<Vec<f32>>> {
    let mut acc = vec![0.0f64; dim];
    for s in steers {
        ensure_dim("steer vector", dim, s.vector.len())?;
        if !s.strength.is_finite() {
            return Err(Error::Config(format!("steer strength {} is not finite", s.strength)));
        }
        for (a, &v) in acc.iter_mut().zip(&s.vector) {
            *a += s.strength * v as f64;
        }
    }
    if acc.iter().all(|&a| a == 0.0) {
        Ok(None)
    } else {
        Ok(Some(acc.into_iter().map(|a| a as f32).collect()))
    }
}

/// Steered guidance `D'' = D' + Σ_n k_n ∇_z ⟨D', z_n⟩`.
///
/// The gradient is linear in the contraction vector, so all signals are
/// folded into one direction `Σ k_n z_n` and differentiated once per
/// guidance branch. Signals that sum to zero return `D'` unchanged.
pub fn steer_denoise<D: Denoiser + ?Sized>(
    model: &D,
    z: &Matrix,
    sigma: f64,
    cond: &Matrix,
    omega: f64,
    steers: &[SteerSignal],
) -> Result<Matrix> {
    match combined_steer(steers, model.dim())? {
        None => cfg_denoise(model, z, sigma, cond, omega),
        Some(dir) => steer_with_direction(model, z, sigma, cond, omega, &dir),
    }
}

pub(crate) fn steer_with_direction<D: Denoiser + ?Sized>(
    model: &D,
    z: &Matrix,
    sigma: f64,
    cond: &Matrix,
    omega: f64,
    dir: &[f32],
) -> Result<Matrix> {
    let v = Matrix::repeat_row(dir, z.rows);
    let uncond = Matrix::zeros(cond.rows, cond.cols);
    let (mut out, grad) = if omega == 0.0 {
        model.denoise_vjp(z, sigma, cond, &v)?
    } else if omega == -1.0 {
        model.denoise_vjp(z, sigma, &uncond, &v)?
    } else {
        let (dc, gc) = model.denoise_vjp(z, sigma, cond, &v)?;
        let (du, gu) = model.denoise_vjp(z, sigma, &uncond, &v)?;
        (guide(&dc, &du, omega), guide(&gc, &gu, omega))
    };
    for (o, g) in out.data.iter_mut().zip(&grad.data) {
        *o += g;
    }
    Ok(out)
}
