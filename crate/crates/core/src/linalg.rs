//! Small dense symmetric linear algebra in `f64`.

use crate::error::{Error, Result};

/// Square row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.data[i * d.len() + i] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::dims("square matrix row", n, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t.data[j * n + i] = self.data[i * n + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        assert_eq!(n, other.n);
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * n..(k + 1) * n];
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.data[i * self.n..(i + 1) * self.n].iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Largest |A_ij − A_ji| relative to the largest entry magnitude.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrized(&self) -> Self {
        let n = self.n;
        let mut out = self.clone();
        for i in 0..n {
            for j in i + 1..n {
                let v = 0.5 * (self.get(i, j) + self.get(j, i));
                out.set(i, j, v);
                out.set(j, i, v);
            }
        }
        out
    }
}

/// Eigendecomposition `A = V · diag(λ) · Vᵀ`; eigenvectors are the columns of `V`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: SquareMatrix,
    pub sweeps: usize,
}

impl SymmetricEigen {
    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SquareMatrix {
        let n = self.vectors.n;
        let fl: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for (k, &w) in fl.iter().enumerate() {
                    acc += self.vectors.get(i, k) * w * self.vectors.get(j, k);
                }
                out.set(i, j, acc);
                out.set(j, i, acc);
            }
        }
        out
    }
}

pub const JACOBI_TOLERANCE: f64 = 1e-10;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigen-solver for symmetric matrices.
///
/// Sweeps over every off-diagonal pair with a plane rotation until the
/// off-diagonal Frobenius norm falls below `JACOBI_TOLERANCE` times the
/// matrix norm (or `JACOBI_MAX_SWEEPS` sweeps elapse).
pub fn jacobi_eigen(a: &SquareMatrix) -> Result<SymmetricEigen> {
    let n = a.n;
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigen-solver input".into()));
    }
    let mut m = a.symmetrized();
    let mut v = SquareMatrix::identity(n);
    let total = m.frobenius().max(f64::MIN_POSITIVE);
    let mut sweeps = 0;
    while sweeps < JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOLERANCE * total {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Ok(SymmetricEigen {
        values: (0..n).map(|i| m.get(i, i)).collect(),
        vectors: v,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_sym(n: usize, seed: u64) -> SquareMatrix {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut m = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = next();
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }

    #[test]
    fn reconstructs_random_symmetric() {
        for seed in 0..5 {
            let a = random_sym(12, seed);
            let eig = jacobi_eigen(&a).unwrap();
            let back = eig.reconstruct_with(|l| l);
            assert!(back.sub(&a).frobenius() < 1e-9 * a.frobenius());
            // orthonormal eigenvectors
            let vtv = eig.vectors.transpose().matmul(&eig.vectors);
            assert!(vtv.sub(&SquareMatrix::identity(12)).frobenius() < 1e-10);
        }
    }

    #[test]
    fn diagonal_input_is_immediate() {
        let a = SquareMatrix::from_diag(&[3.0, 1.0, 2.0]);
        let eig = jacobi_eigen(&a).unwrap();
        assert_eq!(eig.sweeps, 0);
        assert_eq!(eig.values, vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn two_by_two_known_values() {
        let a = SquareMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let mut vals = jacobi_eigen(&a).unwrap().values;
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] - 1.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);
    }
}
