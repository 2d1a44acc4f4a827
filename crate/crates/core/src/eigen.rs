//! Smallest eigenpairs of a symmetric pencil `A v = λ B v` (`B` SPD) by
//! shift-invert Lanczos with full reorthogonalization in the `B` inner
//! product.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::{dot, norm2, CsrMatrix, SkylineLdlt};

#[derive(Debug, Clone)]
pub struct EigenResult {
    /// Increasing.
    pub values: Vec<f64>,
    /// `B`-orthonormal.
    pub vectors: Vec<Vec<f64>>,
    /// Normwise backward error `‖A v − λ B v‖ / ((‖A‖∞ + |λ| ‖B‖∞) ‖v‖)`.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    pub tol: f64,
    pub seed: u64,
    pub max_dim: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            seed: 0x5eed,
            max_dim: 400,
        }
    }
}

/// `k` smallest eigenpairs of `(a, b)`; `shift` must lie strictly below the
/// spectrum so that `a − shift·b` is positive definite.
pub fn smallest_eigenpairs(a: &CsrMatrix, b: &CsrMatrix, k: usize, shift: f64, opts: LanczosOptions) -> Result<EigenResult> {
    let n = a.dim();
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!("need 1 <= k < n, got k = {k}, n = {n}")));
    }
    let shifted = a.linear_combination(1.0, b, -shift);
    let fac = SkylineLdlt::factor(&shifted)?;
    if !fac.is_positive_definite() {
        return Err(Error::InvalidInput(format!(
            "shift {shift} is not below the spectrum ({} negative pivots)",
            fac.negative_pivots()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let max_dim = opts.max_dim.min(n);
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut bq: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();

    let mut start = random_vector(&mut rng, n);
    orthogonalize(&mut start, &q, &bq);
    normalize_into(b, start, &mut q, &mut bq)?;

    let mut next_check = (2 * k + 10).min(max_dim);
    let result = loop {
        let j = q.len() - 1;
        let mut w = fac.solve(&bq[j]);
        let a_j = dot(&bq[j], &w);
        alpha.push(a_j);
        orthogonalize(&mut w, &q, &bq);
        orthogonalize(&mut w, &q, &bq);
        let bw = b.mul_vec(&w);
        let b_j = dot(&w, &bw).max(0.0).sqrt();

        let m = q.len();
        if m >= next_check || m == max_dim {
            let result = ritz(a, b, &q, &alpha, &beta, k, shift);
            let done = result.residuals.iter().all(|&r| r <= opts.tol);
            if done || m == max_dim {
                break result;
            }
            next_check = (m + m / 2).min(max_dim);
        }

        let scale = alpha.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if b_j <= 1e-12 * scale {
            // Invariant subspace: continue from a fresh direction.
            beta.push(0.0);
            let mut r = random_vector(&mut rng, n);
            orthogonalize(&mut r, &q, &bq);
            orthogonalize(&mut r, &q, &bq);
            normalize_into(b, r, &mut q, &mut bq)?;
        } else {
            beta.push(b_j);
            let inv = 1.0 / b_j;
            q.push(w.iter().map(|v| v * inv).collect());
            bq.push(bw.iter().map(|v| v * inv).collect());
        }
    };

    let worst = result.residuals.iter().fold(0.0f64, |m, r| m.max(*r));
    if worst > opts.tol.max(1e-8) {
        return Err(Error::NotConverged {
            what: "shift-invert Lanczos",
            iterations: q.len(),
            residual: worst,
        });
    }
    Ok(result)
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn orthogonalize(w: &mut [f64], q: &[Vec<f64>], bq: &[Vec<f64>]) {
    for (qi, bqi) in q.iter().zip(bq) {
        let c = dot(bqi, w);
        for (wv, qv) in w.iter_mut().zip(qi) {
            *wv -= c * qv;
        }
    }
}

fn normalize_into(b: &CsrMatrix, v: Vec<f64>, q: &mut Vec<Vec<f64>>, bq: &mut Vec<Vec<f64>>) -> Result<()> {
    let bv = b.mul_vec(&v);
    let nrm = dot(&v, &bv).sqrt();
    if !(nrm > 0.0) {
        return Err(Error::NotConverged {
            what: "Lanczos start vector",
            iterations: q.len(),
            residual: nrm,
        });
    }
    q.push(v.iter().map(|x| x / nrm).collect());
    bq.push(bv.iter().map(|x| x / nrm).collect());
    Ok(())
}

fn inf_norm(a: &CsrMatrix) -> f64 {
    (0..a.dim()).map(|i| a.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn ritz(a: &CsrMatrix, b: &CsrMatrix, q: &[Vec<f64>], alpha: &[f64], beta: &[f64], k: usize, shift: f64) -> EigenResult {
    let (na, nb) = (inf_norm(a), inf_norm(b));
    let m = alpha.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    // Largest θ of the inverted operator are the smallest λ = shift + 1/θ.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let n = q[0].len();
    let mut values = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    let mut residuals = Vec::with_capacity(k);
    for &idx in order.iter().take(k.min(m)) {
        let theta = eig.eigenvalues[idx];
        let lambda = shift + 1.0 / theta;
        let mut v = vec![0.0; n];
        for (c, qi) in eig.eigenvectors.column(idx).iter().zip(q) {
            for (vv, qv) in v.iter_mut().zip(qi) {
                *vv += c * qv;
            }
        }
        let bv = b.mul_vec(&v);
        let nrm = dot(&v, &bv).sqrt();
        v.iter_mut().for_each(|x| *x /= nrm);
        let mut bv: Vec<f64> = bv.iter().map(|x| x / nrm).collect();
        if needs_flip(&v, &bv) {
            v.iter_mut().for_each(|x| *x = -*x);
            bv.iter_mut().for_each(|x| *x = -*x);
        }
        let av = a.mul_vec(&v);
        let r: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x - lambda * y).collect();
        let res = norm2(&r) / ((na + lambda.abs() * nb) * norm2(&v));
        values.push(lambda);
        vectors.push(v);
        residuals.push(res);
    }
    // Fill with infinite residuals when fewer than k Ritz pairs exist yet.
    while values.len() < k {
        values.push(f64::NAN);
        vectors.push(vec![0.0; n]);
        residuals.push(f64::INFINITY);
    }
    EigenResult {
        values,
        vectors,
        residuals,
    }
}

/// Makes `Σ (Bv)_i` positive, or the largest entry positive when that sum
/// vanishes (odd modes).
fn needs_flip(v: &[f64], bv: &[f64]) -> bool {
    let total: f64 = bv.iter().sum();
    let l1: f64 = bv.iter().map(|x| x.abs()).sum();
    if total.abs() > 1e-8 * l1 {
        total < 0.0
    } else {
        let (_, big) = v.iter().fold((0.0f64, 0.0f64), |(m, s), &x| if x.abs() > m { (x.abs(), x) } else { (m, s) });
        big < 0.0
    }
}
