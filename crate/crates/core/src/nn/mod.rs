//! Dense residual backbone with hand-written reverse mode.
//!
//! The raw network `F(x, c_noise, cond)`:
//!
//! ```text
//! e      = silu(W_e1 · c_noise + b_e1)            noise sub-network
//! [s,t]  = W_e2 · e + b_e2                        per-block scale/shift
//! h      = W_in · [x ; cond] + b_in
//! repeat per block k:
//!     u  = (1 + s_k) ⊙ h + t_k
//!     h  = h + W2_k · silu(W1_k · [u ; cond] + b1_k) + b2_k
//! out    = W_out · h + b_out                      zero-initialized
//! ```
//!
//! Everything operates on batches (one row per example). Parameters live in
//! one flat `f32` buffer whose segment order is given by [`Params::layout`].

mod checkpoint;
mod optim;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader,
    LayerEntry, CHECKPOINT_MAGIC,
};
pub use optim::{adam_step, cosine_lr, OptimizerState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::tensor::{
    dense_backward_input, dense_backward_params, dense_forward, silu, silu_grad, Matrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub cond_dim: usize,
    pub width: usize,
    pub num_blocks: usize,
    pub output_dim: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, cond_dim: usize, width: usize, num_blocks: usize) -> Self {
        Self {
            input_dim,
            cond_dim,
            width,
            num_blocks,
            output_dim: input_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("cond_dim", self.cond_dim),
            ("width", self.width),
            ("num_blocks", self.num_blocks),
            ("output_dim", self.output_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("network {name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Hidden width of the noise-conditioning sub-network.
    fn noise_hidden(&self) -> usize {
        self.width
    }

    /// Width of the scale/shift vector produced for all blocks.
    fn modulation_dim(&self) -> usize {
        2 * self.width * self.num_blocks
    }

    /// Ordered `(name, rows, cols)` segments; biases have `cols == 1`.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let w = self.width;
        let e = self.noise_hidden();
        let mut out = vec![
            ("noise.w1".to_string(), e, 1),
            ("noise.b1".to_string(), e, 1),
            ("noise.w2".to_string(), self.modulation_dim(), e),
            ("noise.b2".to_string(), self.modulation_dim(), 1),
            ("input.w".to_string(), w, self.input_dim + self.cond_dim),
            ("input.b".to_string(), w, 1),
        ];
        for k in 0..self.num_blocks {
            out.push((format!("block{k}.w1"), w, w + self.cond_dim));
            out.push((format!("block{k}.b1"), w, 1));
            out.push((format!("block{k}.w2"), w, w));
            out.push((format!("block{k}.b2"), w, 1));
        }
        out.push(("output.w".to_string(), self.output_dim, w));
        out.push(("output.b".to_string(), self.output_dim, 1));
        out
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(|(_, r, c)| r * c).sum()
    }
}

/// Byte-free view of where each segment starts in the flat buffer.
#[derive(Debug, Clone)]
struct Offsets {
    noise_w1: usize,
    noise_b1: usize,
    noise_w2: usize,
    noise_b2: usize,
    input_w: usize,
    input_b: usize,
    /// `(w1, b1, w2, b2)` per block.
    blocks: Vec<[usize; 4]>,
    output_w: usize,
    output_b: usize,
}

impl Offsets {
    fn new(spec: &NetworkSpec) -> Self {
        let layout = spec.layout();
        let mut starts = Vec::with_capacity(layout.len());
        let mut at = 0;
        for (_, r, c) in &layout {
            starts.push(at);
            at += r * c;
        }
        let blocks = (0..spec.num_blocks)
            .map(|k| {
                let base = 6 + 4 * k;
                [starts[base], starts[base + 1], starts[base + 2], starts[base + 3]]
            })
            .collect();
        let n = starts.len();
        Self {
            noise_w1: starts[0],
            noise_b1: starts[1],
            noise_w2: starts[2],
            noise_b2: starts[3],
            input_w: starts[4],
            input_b: starts[5],
            blocks,
            output_w: starts[n - 2],
            output_b: starts[n - 1],
        }
    }
}

/// Network parameters: a spec plus one flat buffer in [`NetworkSpec::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    spec: NetworkSpec,
    data: Vec<f32>,
}

/// Parameter gradients share the [`Params`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub data: Vec<f32>,
}

impl ParamGradients {
    pub fn zeros_like(params: &Params) -> Self {
        Self {
            data: vec![0.0; params.data.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|g| g.is_finite())
    }
}

impl Params {
    /// Fan-in scaled Gaussian weights, zero biases, zero output projection.
    ///
    /// Columns that read the condition vector start at zero: a network that
    /// only ever sees the zero (masked) condition keeps them at zero and is
    /// exactly unconditional.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        Self::init_inner(spec, seed, true)
    }

    /// Like [`Params::init`] but condition columns are drawn like the rest.
    /// Needed when the noisy input is always zero: with zero condition
    /// columns every hidden state would be zero and no weight would move.
    pub fn init_conditioned(spec: NetworkSpec, seed: u64) -> Result<Self> {
        Self::init_inner(spec, seed, false)
    }

    fn init_inner(spec: NetworkSpec, seed: u64, zero_cond: bool) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(spec.num_params());
        for (name, rows, cols) in spec.layout() {
            if cols == 1 || name.starts_with("output.") {
                data.extend(std::iter::repeat(0.0).take(rows * cols));
                continue;
            }
            let cond_cols = if name == "input.w" || name.ends_with(".w1") && name.starts_with("block") {
                spec.cond_dim
            } else {
                0
            };
            let drawn = if zero_cond { cols - cond_cols } else { cols };
            let std = (1.0 / drawn as f64).sqrt();
            for _ in 0..rows {
                for c in 0..cols {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    data.push(if c < drawn { (g * std) as f32 } else { 0.0 });
                }
            }
        }
        Ok(Self { spec, data })
    }

    pub fn from_flat(spec: NetworkSpec, data: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        ensure_dim("parameter buffer", spec.num_params(), data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter buffer".into()));
        }
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Mutable view of one named segment.
    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        let mut at = 0;
        for (n, r, c) in self.spec.layout() {
            if n == name {
                return Some(&mut self.data[at..at + r * c]);
            }
            at += r * c;
        }
        None
    }

    pub fn segment(&self, name: &str) -> Option<&[f32]> {
        let mut at = 0;
        for (n, r, c) in self.spec.layout() {
            if n == name {
                return Some(&self.data[at..at + r * c]);
            }
            at += r * c;
        }
        None
    }

    /// Single-example forward pass.
    pub fn forward(&self, x: &[f32], noise_feature: f32, cond: &[f32]) -> Result<(Vec<f32>, ForwardTrace)> {
        let xm = Matrix::from_vec(1, x.len(), x.to_vec());
        let cm = Matrix::from_vec(1, cond.len(), cond.to_vec());
        let trace = self.forward_batch(&xm, &[noise_feature], &cm)?;
        Ok((trace.output.row(0).to_vec(), trace))
    }

    /// Batched forward pass; one row per example, one noise feature per row.
    pub fn forward_batch(&self, x: &Matrix, noise: &[f32], cond: &Matrix) -> Result<ForwardTrace> {
        let s = &self.spec;
        ensure_dim("forward input", s.input_dim, x.cols)?;
        ensure_dim("forward condition", s.cond_dim, cond.cols)?;
        ensure_dim("forward condition rows", x.rows, cond.rows)?;
        ensure_dim("forward noise features", x.rows, noise.len())?;
        let off = Offsets::new(s);
        let p = &self.data;
        let w = s.width;
        let e_dim = s.noise_hidden();
        let m_dim = s.modulation_dim();
        let in_cat = s.input_dim + s.cond_dim;

        let noise_m = Matrix::from_vec(x.rows, 1, noise.to_vec());
        let e_pre = dense_forward(
            &noise_m,
            &p[off.noise_w1..off.noise_w1 + e_dim],
            &p[off.noise_b1..off.noise_b1 + e_dim],
            e_dim,
        );
        let mut e = e_pre.clone();
        e.data.iter_mut().for_each(|v| *v = silu(*v));
        let modulation = dense_forward(
            &e,
            &p[off.noise_w2..off.noise_w2 + m_dim * e_dim],
            &p[off.noise_b2..off.noise_b2 + m_dim],
            m_dim,
        );

        let x0 = x.hcat(cond);
        let mut h = dense_forward(
            &x0,
            &p[off.input_w..off.input_w + w * in_cat],
            &p[off.input_b..off.input_b + w],
            w,
        );

        let mut blocks = Vec::with_capacity(s.num_blocks);
        for (k, o) in off.blocks.iter().enumerate() {
            let mut u = h.clone();
            for i in 0..u.rows {
                let mrow = modulation.row(i);
                let (scale, shift) = (&mrow[2 * w * k..2 * w * k + w], &mrow[2 * w * k + w..2 * w * (k + 1)]);
                for ((uv, sc), sh) in u.row_mut(i).iter_mut().zip(scale).zip(shift) {
                    *uv = (1.0 + sc) * *uv + sh;
                }
            }
            let u_cat = u.hcat(cond);
            let v = dense_forward(&u_cat, &p[o[0]..o[0] + w * (w + s.cond_dim)], &p[o[1]..o[1] + w], w);
            let mut a = v.clone();
            a.data.iter_mut().for_each(|z| *z = silu(*z));
            let r = dense_forward(&a, &p[o[2]..o[2] + w * w], &p[o[3]..o[3] + w], w);
            let h_in = h.clone();
            for (hv, rv) in h.data.iter_mut().zip(&r.data) {
                *hv += rv;
            }
            blocks.push(BlockTrace { h_in, u_cat, v, a });
        }

        let output = dense_forward(
            &h,
            &p[off.output_w..off.output_w + s.output_dim * w],
            &p[off.output_b..off.output_b + s.output_dim],
            s.output_dim,
        );
        Ok(ForwardTrace {
            spec: *s,
            x0,
            noise: noise_m,
            e_pre,
            e,
            modulation,
            blocks,
            h_final: h,
            output,
        })
    }

    /// Parameter gradient of `Σ_rows ⟨output, upstream⟩`.
    pub fn grad_params(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<ParamGradients> {
        let (g, _) = self.backward(trace, upstream, true)?;
        Ok(g.expect("parameter gradients requested"))
    }

    /// Input gradient of `⟨output_row, upstream_row⟩` for every row.
    pub fn vjp_input(&self, trace: &ForwardTrace, upstream: &Matrix) -> Result<Matrix> {
        let (_, dx) = self.backward(trace, upstream, false)?;
        Ok(dx)
    }

    /// Reverse pass. Always returns the input gradient; parameter gradients
    /// only when `want_params`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: &Matrix,
        want_params: bool,
    ) -> Result<(Option<ParamGradients>, Matrix)> {
        let s = &self.spec;
        if trace.spec != *s {
            return Err(Error::Config("trace was produced by a different network".into()));
        }
        ensure_dim("upstream width", s.output_dim, upstream.cols)?;
        ensure_dim("upstream rows", trace.output.rows, upstream.rows)?;
        let off = Offsets::new(s);
        let p = &self.data;
        let w = s.width;
        let e_dim = s.noise_hidden();
        let m_dim = s.modulation_dim();
        let in_cat = s.input_dim + s.cond_dim;
        let rows = upstream.rows;
        let mut grads = want_params.then(|| ParamGradients::zeros_like(self));

        if let Some(g) = grads.as_mut() {
            let (dw, db) = split_wb(&mut g.data, off.output_w, s.output_dim * w, off.output_b, s.output_dim);
            dense_backward_params(upstream, &trace.h_final, dw, db);
        }
        let mut dh = dense_backward_input(upstream, &p[off.output_w..off.output_w + s.output_dim * w], w);
        let mut dmod = Matrix::zeros(rows, m_dim);

        for (k, o) in off.blocks.iter().enumerate().rev() {
            let bt = &trace.blocks[k];
            // residual: dr == dh
            if let Some(g) = grads.as_mut() {
                let (dw, db) = split_wb(&mut g.data, o[2], w * w, o[3], w);
                dense_backward_params(&dh, &bt.a, dw, db);
            }
            let mut dv = dense_backward_input(&dh, &p[o[2]..o[2] + w * w], w);
            for (d, &v) in dv.data.iter_mut().zip(&bt.v.data) {
                *d *= silu_grad(v);
            }
            if let Some(g) = grads.as_mut() {
                let (dw, db) = split_wb(&mut g.data, o[0], w * (w + s.cond_dim), o[1], w);
                dense_backward_params(&dv, &bt.u_cat, dw, db);
            }
            let du_cat = dense_backward_input(&dv, &p[o[0]..o[0] + w * (w + s.cond_dim)], w + s.cond_dim);
            for i in 0..rows {
                let mrow = trace.modulation.row(i);
                let scale = &mrow[2 * w * k..2 * w * k + w];
                let du = &du_cat.row(i)[..w];
                let h_in = bt.h_in.row(i);
                let drow = dmod.row_mut(i);
                for j in 0..w {
                    drow[2 * w * k + j] = du[j] * h_in[j];
                    drow[2 * w * k + w + j] = du[j];
                }
                let dh_row = dh.row_mut(i);
                for j in 0..w {
                    dh_row[j] += du[j] * (1.0 + scale[j]);
                }
            }
        }

        if let Some(g) = grads.as_mut() {
            let (dw, db) = split_wb(&mut g.data, off.input_w, w * in_cat, off.input_b, w);
            dense_backward_params(&dh, &trace.x0, dw, db);

            let (dw, db) = split_wb(&mut g.data, off.noise_w2, m_dim * e_dim, off.noise_b2, m_dim);
            dense_backward_params(&dmod, &trace.e, dw, db);
            let mut de = dense_backward_input(&dmod, &p[off.noise_w2..off.noise_w2 + m_dim * e_dim], e_dim);
            for (d, &v) in de.data.iter_mut().zip(&trace.e_pre.data) {
                *d *= silu_grad(v);
            }
            let (dw, db) = split_wb(&mut g.data, off.noise_w1, e_dim, off.noise_b1, e_dim);
            dense_backward_params(&de, &trace.noise, dw, db);
        }

        let dx0 = dense_backward_input(&dh, &p[off.input_w..off.input_w + w * in_cat], in_cat);
        Ok((grads, dx0.col_slice(0, s.input_dim)))
    }
}

fn split_wb(buf: &mut [f32], w_at: usize, w_len: usize, b_at: usize, b_len: usize) -> (&mut [f32], &mut [f32]) {
    debug_assert!(w_at + w_len <= b_at);
    let (lo, hi) = buf.split_at_mut(b_at);
    (&mut lo[w_at..w_at + w_len], &mut hi[..b_len])
}

#[derive(Debug, Clone)]
struct BlockTrace {
    h_in: Matrix,
    u_cat: Matrix,
    v: Matrix,
    a: Matrix,
}

/// Cached activations of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    spec: NetworkSpec,
    x0: Matrix,
    noise: Matrix,
    e_pre: Matrix,
    e: Matrix,
    modulation: Matrix,
    blocks: Vec<BlockTrace>,
    h_final: Matrix,
    output: Matrix,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn into_output(self) -> Matrix {
        self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkSpec {
        NetworkSpec {
            input_dim: 4,
            cond_dim: 4,
            width: 8,
            num_blocks: 2,
            output_dim: 4,
        }
    }

    #[test]
    fn zero_output_projection_gives_zero_output() {
        let p = Params::init(small(), 0).unwrap();
        assert!(p.as_slice().iter().all(|v| v.is_finite()));
        let (y, _) = p.forward(&[0.0; 4], 0.3, &[0.0; 4]).unwrap();
        assert_eq!(y, vec![0.0; 4]);
        let (y, _) = p.forward(&[0.5, -1.0, 2.0, 0.1], -1.2, &[1.0, 0.0, 0.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0; 4]);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = Params::init(small(), 7).unwrap();
        let b = Params::init(small(), 7).unwrap();
        let c = Params::init(small(), 8).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice().iter().zip(c.as_slice()).any(|(x, y)| x != y));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut p = Params::init(small(), 1).unwrap();
        p.segment_mut("output.w").unwrap().iter_mut().enumerate().for_each(|(i, v)| *v = (i as f32 * 0.3).sin());
        let (_, trace) = p.forward(&[0.1, 0.2, 0.3, 0.4], 0.5, &[1.0, -1.0, 0.0, 0.5]).unwrap();
        let up = Matrix::zeros(1, 4);
        let g = p.grad_params(&trace, &up).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
        let dx = p.vjp_input(&trace, &up).unwrap();
        assert!(dx.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = Params::init(small(), 0).unwrap();
        assert!(matches!(
            p.forward(&[0.0; 3], 0.0, &[0.0; 4]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            p.forward(&[0.0; 4], 0.0, &[0.0; 5]),
            Err(Error::DimensionMismatch { .. })
        ));
        let (_, trace) = p.forward(&[0.0; 4], 0.0, &[0.0; 4]).unwrap();
        assert!(p.grad_params(&trace, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn identity_network_has_identity_vjp() {
        let spec = small();
        let mut p = Params::init(spec, 3).unwrap();
        // W_in = [I 0], block residual branches off, modulation off, W_out = [I 0]
        for name in ["noise.w2", "noise.b2"] {
            p.segment_mut(name).unwrap().fill(0.0);
        }
        for k in 0..spec.num_blocks {
            p.segment_mut(&format!("block{k}.w2")).unwrap().fill(0.0);
        }
        let win = p.segment_mut("input.w").unwrap();
        win.fill(0.0);
        for i in 0..4 {
            win[i * 8 + i] = 1.0;
        }
        let wout = p.segment_mut("output.w").unwrap();
        wout.fill(0.0);
        for i in 0..4 {
            wout[i * 8 + i] = 1.0;
        }
        let x = [0.3, -0.2, 1.5, 0.0];
        let (y, trace) = p.forward(&x, 0.7, &[0.2, 0.1, -0.4, 1.0]).unwrap();
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).abs() < 1e-6);
        }
        let v = Matrix::from_vec(1, 4, vec![1.0, -2.0, 0.5, 3.0]);
        let dx = p.vjp_input(&trace, &v).unwrap();
        assert_eq!(dx.data, v.data);
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut p = Params::init(small(), 5).unwrap();
        p.segment_mut("output.w").unwrap().iter_mut().enumerate().for_each(|(i, v)| *v = (i as f32).cos() * 0.2);
        let xs = Matrix::from_vec(2, 4, vec![0.1, 0.2, 0.3, 0.4, -1.0, 0.0, 0.5, 2.0]);
        let cs = Matrix::from_vec(2, 4, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let t = p.forward_batch(&xs, &[0.1, -0.3], &cs).unwrap();
        for i in 0..2 {
            let (y, _) = p.forward(xs.row(i), [0.1, -0.3][i], cs.row(i)).unwrap();
            for (a, b) in y.iter().zip(t.output().row(i)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
