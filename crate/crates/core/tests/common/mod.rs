#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use seedprior::nn::{NetworkSpec, Params};

/// Straightforward f64 evaluation of the backbone from its flat parameters,
/// written against the layout only (no shared code with the library).
pub fn reference_forward(spec: &NetworkSpec, p: &[f64], x: &[f64], noise: f64, cond: &[f64]) -> Vec<f64> {
    let mut seg = std::collections::HashMap::new();
    let mut at = 0;
    for (name, r, c) in spec.layout() {
        seg.insert(name, (at, r, c));
        at += r * c;
    }
    let dense = |name: &str, bias: &str, input: &[f64]| -> Vec<f64> {
        let (wa, rows, cols) = seg[name];
        let (ba, _, _) = seg[bias];
        assert_eq!(cols, input.len());
        (0..rows)
            .map(|i| p[ba + i] + (0..cols).map(|j| p[wa + i * cols + j] * input[j]).sum::<f64>())
            .collect()
    };
    let silu = |v: f64| v / (1.0 + (-v).exp());
    let e: Vec<f64> = dense("noise.w1", "noise.b1", &[noise]).into_iter().map(silu).collect();
    let m = dense("noise.w2", "noise.b2", &e);
    let cat = |a: &[f64]| -> Vec<f64> { a.iter().chain(cond).copied().collect() };
    let mut h = dense("input.w", "input.b", &cat(x));
    let w = spec.width;
    for k in 0..spec.num_blocks {
        let u: Vec<f64> = (0..w).map(|j| (1.0 + m[2 * w * k + j]) * h[j] + m[2 * w * k + w + j]).collect();
        let a: Vec<f64> = dense(&format!("block{k}.w1"), &format!("block{k}.b1"), &cat(&u))
            .into_iter()
            .map(silu)
            .collect();
        let r = dense(&format!("block{k}.w2"), &format!("block{k}.b2"), &a);
        for j in 0..w {
            h[j] += r[j];
        }
    }
    dense("output.w", "output.b", &h)
}

/// Params with every segment random (including the normally zero output).
pub fn random_params(spec: NetworkSpec, seed: u64, scale: f64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.num_params();
    let data = (0..n)
        .map(|_| (scale * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect();
    Params::from_flat(spec, data).unwrap()
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect()
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub struct GradientReport {
    pub probes: usize,
    pub worst_rel_err: f64,
    pub worst_forward_gap: f64,
}

/// Central differences of the f64 reference versus the library's
/// `grad_params` and `vjp_input`, `probes_per_net / 2` of each kind per net.
pub fn gradient_suite(nets: usize, probes_per_net: usize, seed: u64) -> GradientReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradientReport {
        probes: 0,
        worst_rel_err: 0.0,
        worst_forward_gap: 0.0,
    };
    let h = 1e-5;
    for n in 0..nets {
        let spec = NetworkSpec::new(rng.gen_range(2..6), rng.gen_range(1..5), rng.gen_range(3..9), rng.gen_range(1..4));
        let params = random_params(spec, seed * 100 + n as u64, 0.4);
        let x = gaussian_vec(&mut rng, spec.input_dim);
        let cond = gaussian_vec(&mut rng, spec.cond_dim);
        let noise: f32 = rng.gen_range(-2.0..2.0);
        let up = gaussian_vec(&mut rng, spec.output_dim);

        let (out, trace) = params.forward(&x, noise, &cond).unwrap();
        let pf = to_f64(params.as_slice());
        let (xf, cf, uf) = (to_f64(&x), to_f64(&cond), to_f64(&up));
        let ref_out = reference_forward(&spec, &pf, &xf, noise as f64, &cf);
        for (a, b) in out.iter().zip(&ref_out) {
            report.worst_forward_gap = report.worst_forward_gap.max((*a as f64 - b).abs());
        }
        let objective =
            |p: &[f64], x: &[f64]| -> f64 { reference_forward(&spec, p, x, noise as f64, &cf).iter().zip(&uf).map(|(o, u)| o * u).sum() };

        let upm = seedprior::tensor::Matrix::from_vec(1, up.len(), up.clone());
        let gp = params.grad_params(&trace, &upm).unwrap();
        let gx = params.vjp_input(&trace, &upm).unwrap();
        for probe in 0..probes_per_net {
            let (analytic, numeric) = if probe % 2 == 0 {
                let j = rng.gen_range(0..pf.len());
                let (mut lo, mut hi) = (pf.clone(), pf.clone());
                hi[j] += h;
                lo[j] -= h;
                (gp.data[j] as f64, (objective(&hi, &xf) - objective(&lo, &xf)) / (2.0 * h))
            } else {
                let j = rng.gen_range(0..xf.len());
                let (mut lo, mut hi) = (xf.clone(), xf.clone());
                hi[j] += h;
                lo[j] -= h;
                (gx.data[j] as f64, (objective(&pf, &hi) - objective(&pf, &lo)) / (2.0 * h))
            };
            report.worst_rel_err = report.worst_rel_err.max(rel_err(analytic, numeric, 1e-3));
            report.probes += 1;
        }
    }
    report
}

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

/// CFG endpoints and the empty-steer identity on a random-weight model.
pub fn cfg_identities(seed: u64) -> Outcome {
    use seedprior::diffusion::{cfg_denoise, steer_denoise, Denoiser, DiffusionModel, ScheduleConfig, SteerSignal};
    use seedprior::tensor::Matrix;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = NetworkSpec::new(6, 4, 16, 2);
    let model = DiffusionModel::new(random_params(spec, seed, 0.3), ScheduleConfig::with_sigma_data(0.25)).unwrap();
    let rows = 7;
    let z = Matrix::from_rows(&(0..rows).map(|_| gaussian_vec(&mut rng, 6)).collect::<Vec<_>>(), 6);
    let q = Matrix::from_rows(&(0..rows).map(|_| gaussian_vec(&mut rng, 4)).collect::<Vec<_>>(), 4);
    let zero = Matrix::zeros(rows, 4);
    let mut worst: f64 = 0.0;
    let mut bitwise = true;
    for sigma in [1e-3, 0.05, 0.3, 2.0, 25.0] {
        let dc = model.denoise(&z, sigma, &q).unwrap();
        let du = model.denoise(&z, sigma, &zero).unwrap();
        let c0 = cfg_denoise(&model, &z, sigma, &q, 0.0).unwrap();
        let cm = cfg_denoise(&model, &z, sigma, &q, -1.0).unwrap();
        for (a, b) in c0.data.iter().zip(&dc.data).chain(cm.data.iter().zip(&du.data)) {
            worst = worst.max((*a as f64 - *b as f64).abs());
        }
        let steer_dir = gaussian_vec(&mut rng, 6);
        for omega in [-1.0, 0.0, 0.5, 3.0, 19.0] {
            let plain = cfg_denoise(&model, &z, sigma, &q, omega).unwrap();
            for steers in [
                vec![],
                vec![SteerSignal { vector: steer_dir.clone(), strength: 0.0 }],
                vec![
                    SteerSignal { vector: steer_dir.clone(), strength: 0.0 },
                    SteerSignal { vector: steer_dir.iter().map(|x| -x).collect(), strength: 0.0 },
                ],
            ] {
                let s = steer_denoise(&model, &z, sigma, &q, omega, &steers).unwrap();
                bitwise &= s.data.iter().zip(&plain.data).all(|(a, b)| a.to_bits() == b.to_bits());
            }
        }
    }
    Outcome {
        pass: worst <= 1e-12 && bitwise,
        detail: format!("max |cfg − branch| = {worst:.1e}, zero-steer bitwise equal: {bitwise}"),
    }
}

pub struct GaussianOracleReport {
    pub mean_err: f64,
    pub cov_rel_err: f64,
}

/// Samples `N(m, C)` through the analytic denoiser, d = 8.
pub fn gaussian_oracle(drift: seedprior::diffusion::DriftForm, samples: usize, steps: usize) -> GaussianOracleReport {
    use seedprior::diffusion::{sample, GaussianDenoiser, SamplerConfig, ScheduleConfig};
    use seedprior::linalg::SquareMatrix;
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let a: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| 0.25 * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let mut cov = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            let v: f64 = (0..d).map(|k| a[k][i] * a[k][j]).sum();
            cov.set(i, j, v + if i == j { 0.02 } else { 0.0 });
        }
    }
    let mean: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let oracle = GaussianDenoiser::new(mean.clone(), &cov, 1).unwrap();
    let schedule = ScheduleConfig::with_sigma_data(0.5);
    let cfg = SamplerConfig {
        steps,
        drift_form: drift,
        post_normalize: false,
        seed: 5,
        ..SamplerConfig::default()
    };
    let xs = match sample(&oracle, &[0.0], &schedule, &cfg, samples) {
        Ok(xs) => xs,
        Err(_) => {
            return GaussianOracleReport {
                mean_err: f64::INFINITY,
                cov_rel_err: f64::INFINITY,
            }
        }
    };
    let m = seedprior::metrics::moments(&xs).unwrap();
    let mean_err = m.mean.iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let cov_rel_err = m.covariance.sub(&cov).frobenius() / cov.frobenius();
    GaussianOracleReport {
        mean_err: if mean_err.is_finite() { mean_err } else { f64::INFINITY },
        cov_rel_err: if cov_rel_err.is_finite() { cov_rel_err } else { f64::INFINITY },
    }
}

/// Preconditioning and schedule identities with the paper constants.
pub fn schedule_identities() -> Outcome {
    use seedprior::diffusion::ScheduleConfig;
    let s = ScheduleConfig::default();
    let (lo, hi) = (s.sigma_min, s.sigma_top());
    let mut weight_gap: f64 = 0.0;
    let mut round_trip: f64 = 0.0;
    for i in 0..100 {
        let sigma = lo * (hi / lo).powf(i as f64 / 99.0);
        let p = s.precond(sigma);
        weight_gap = weight_gap.max((s.loss_weight(sigma) * p.c_out * p.c_out - 1.0).abs());
        let back = s.sigma_of_t(s.t_of_sigma(sigma).unwrap());
        round_trip = round_trip.max(rel_err(back, sigma, 0.0));
    }
    let mut dot_err: f64 = 0.0;
    let h = 1e-6;
    for i in 0..100 {
        let t = 0.01 + 0.98 * i as f64 / 99.0;
        let fd = (s.sigma_of_t_raw(t + h) - s.sigma_of_t_raw(t - h)) / (2.0 * h);
        dot_err = dot_err.max(rel_err(s.sigma_dot(t), fd, 0.0));
        let back = s.t_of_sigma(s.sigma_of_t_raw(t)).unwrap();
        round_trip = round_trip.max((back - t).abs());
    }
    Outcome {
        pass: weight_gap <= 1e-6 && round_trip <= 1e-6 && dot_err <= 1e-6,
        detail: format!("|λ·c_out² − 1| ≤ {weight_gap:.1e}, round trip ≤ {round_trip:.1e}, σ̇ rel err ≤ {dot_err:.1e}"),
    }
}

/// FMD, MISCS and entropy closed forms.
pub fn metric_closed_forms(seed: u64) -> Outcome {
    use seedprior::linalg::SquareMatrix;
    use seedprior::metrics::{entropy_at_k, fmd, frechet_distance, miscs, moments, GaussianMoments};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 16;
    let xs: Vec<Vec<f32>> = (0..500).map(|_| gaussian_vec(&mut rng, d)).collect();
    let m = moments(&xs).unwrap();
    let self_fmd = fmd(&xs, &m).unwrap();

    let mut a = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            let v: f64 = (0..d).map(|k| ((i * 7 + k * 3) % 11) as f64 * ((j * 7 + k * 3) % 11) as f64).sum::<f64>() / 100.0;
            a.set(i, j, v + if i == j { 0.5 } else { 0.0 });
        }
    }
    let mu1: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mu2: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g = |mean: &[f64], cov: &SquareMatrix| GaussianMoments {
        mean: mean.to_vec(),
        covariance: cov.clone(),
        sample_count: 2,
    };
    let dmu: f64 = mu1.iter().zip(&mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let eq_cov_gap = (frechet_distance(&g(&mu1, &a), &g(&mu2, &a)).unwrap() - dmu).abs();

    let mut one_d_gap: f64 = 0.0;
    for _ in 0..20 {
        let (m1, m2): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let (s1, s2): (f64, f64) = (rng.gen_range(0.01..3.0), rng.gen_range(0.01..3.0));
        let fd = frechet_distance(
            &g(&[m1], &SquareMatrix::from_diag(&[s1 * s1])),
            &g(&[m2], &SquareMatrix::from_diag(&[s2 * s2])),
        )
        .unwrap();
        one_d_gap = one_d_gap.max((fd - ((m1 - m2).powi(2) + (s1 - s2).powi(2))).abs());
    }

    let v = gaussian_vec(&mut rng, d);
    let same = miscs(&vec![v; 50]).unwrap();
    let labels: Vec<usize> = (0..10).collect();
    let h = entropy_at_k(&labels, 10).unwrap();
    let h_gap = (h - 10f64.ln()).abs();
    Outcome {
        pass: self_fmd <= 1e-6 && eq_cov_gap <= 1e-6 && one_d_gap <= 1e-4 && same == 1.0 && h_gap <= 1e-9,
        detail: format!(
            "self FMD {self_fmd:.1e}, equal-cov gap {eq_cov_gap:.1e}, 1-D gap {one_d_gap:.1e}, MISCS(identical) {same}, |H − ln 10| {h_gap:.1e}"
        ),
    }
}
