//! Multivariate and univariate Gaussian machinery: densities, conditioning,
//! KL divergence, entropy, and reparameterised sampling.

use crate::error::{Error, Result};
use crate::linalg::{
    chol_inverse, chol_log_det, chol_solve, cholesky_jittered, dot, Mat,
};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Mean vector and symmetric positive-definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: Vec<f64>,
    pub cov: Mat,
}

impl GaussianMoments {
    pub fn new(mean: Vec<f64>, cov: Mat) -> Result<Self> {
        if cov.rows() != cov.cols() || cov.rows() != mean.len() {
            return Err(Error::InvalidArgument(format!(
                "moments shape mismatch: mean {} cov {}x{}",
                mean.len(),
                cov.rows(),
                cov.cols()
            )));
        }
        for i in 0..cov.rows() {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 {
                    return Err(Error::InvalidArgument(format!(
                        "covariance asymmetric at ({i},{j}): {} vs {}",
                        cov[(i, j)],
                        cov[(j, i)]
                    )));
                }
            }
        }
        Ok(GaussianMoments { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Exact log N(x; mean, cov) via Cholesky.
pub fn mvn_logpdf(g: &GaussianMoments, x: &[f64]) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::InvalidArgument(format!(
            "point dimension {} does not match Gaussian dimension {}",
            x.len(),
            g.dim()
        )));
    }
    let l = cholesky_jittered(&g.cov)?;
    let r: Vec<f64> = x.iter().zip(&g.mean).map(|(a, b)| a - b).collect();
    let u = chol_solve(&l, &r);
    let quad = dot(&r, &u);
    Ok(-0.5 * (g.dim() as f64 * LN_2PI + chol_log_det(&l) + quad))
}

/// Condition on `obs_idx`/`obs_vals`; the result covers the complement index
/// set in ascending original order (Schur complement).
pub fn mvn_condition(g: &GaussianMoments, obs_idx: &[usize], obs_vals: &[f64]) -> Result<GaussianMoments> {
    let d = g.dim();
    if obs_idx.len() != obs_vals.len() {
        return Err(Error::InvalidArgument(format!(
            "{} observed indices but {} values",
            obs_idx.len(),
            obs_vals.len()
        )));
    }
    let mut seen = vec![false; d];
    for &i in obs_idx {
        if i >= d {
            return Err(Error::InvalidArgument(format!("index {i} out of range for dim {d}")));
        }
        if seen[i] {
            return Err(Error::InvalidArgument(format!("duplicate observed index {i}")));
        }
        seen[i] = true;
    }
    if obs_idx.is_empty() {
        return Ok(g.clone());
    }
    let keep: Vec<usize> = (0..d).filter(|i| !seen[*i]).collect();
    if keep.is_empty() {
        return Err(Error::InvalidArgument(
            "conditioning on every dimension leaves an empty conditional".into(),
        ));
    }

    let cov_oo = g.cov.select(obs_idx, obs_idx);
    let cov_ko = g.cov.select(&keep, obs_idx);
    let cov_kk = g.cov.select(&keep, &keep);
    let l = cholesky_jittered(&cov_oo)?;

    let resid: Vec<f64> = obs_idx
        .iter()
        .zip(obs_vals)
        .map(|(&i, &v)| v - g.mean[i])
        .collect();
    let w = chol_solve(&l, &resid);
    let mut mean: Vec<f64> = keep.iter().map(|&i| g.mean[i]).collect();
    for (m, row) in mean.iter_mut().zip(0..keep.len()) {
        *m += dot(cov_ko.row(row), &w);
    }

    // cov_kk - cov_ko cov_oo^{-1} cov_ok
    let inv_oo = chol_inverse(&l);
    let cov = cov_kk.sub(&cov_ko.matmul(&inv_oo).matmul(&cov_ko.transpose()));
    // Symmetrise away round-off before handing the moments back.
    let mut cov_sym = cov.clone();
    for i in 0..cov_sym.rows() {
        for j in 0..i {
            let avg = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov_sym[(i, j)] = avg;
            cov_sym[(j, i)] = avg;
        }
    }
    GaussianMoments::new(mean, cov_sym)
}

/// Closed-form KL(p || q) between Gaussians of equal dimension.
pub fn mvn_kl(p: &GaussianMoments, q: &GaussianMoments) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::InvalidArgument(format!(
            "KL dimensions differ: {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    let d = p.dim();
    let lq = cholesky_jittered(&q.cov)?;
    let lp = cholesky_jittered(&p.cov)?;
    let q_inv = chol_inverse(&lq);
    let trace = {
        let prod = q_inv.matmul(&p.cov);
        (0..d).map(|i| prod[(i, i)]).sum::<f64>()
    };
    let diff: Vec<f64> = q.mean.iter().zip(&p.mean).map(|(a, b)| a - b).collect();
    let quad = dot(&diff, &q_inv.matvec(&diff));
    let kl = 0.5 * (trace + quad - d as f64 + chol_log_det(&lq) - chol_log_det(&lp));
    Ok(kl.max(0.0))
}

/// KL(N(m1, v1) || N(m2, v2)) for scalars.
pub fn uv_kl(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    (0.5 * (v1 / v2 + (m2 - m1) * (m2 - m1) / v2 - 1.0 + (v2 / v1).ln())).max(0.0)
}

/// Entropy of N(mu, exp(log_var)): 0.5 ln(2 pi sigma^2) + 0.5.
pub fn uv_entropy(log_var: f64) -> f64 {
    0.5 * (LN_2PI + log_var) + 0.5
}

/// log N(x; mu, exp(log_var)).
pub fn uv_logpdf(x: f64, mu: f64, log_var: f64) -> f64 {
    let r = x - mu;
    -0.5 * (LN_2PI + log_var + r * r * (-log_var).exp())
}

/// Reparameterised draw mu + sigma*eps with its pathwise partials
/// (d sample/d mu, d sample/d log_var).
pub fn uv_reparam_sample(mu: f64, log_var: f64, eps: f64) -> (f64, f64, f64) {
    let sigma = (0.5 * log_var).exp();
    (mu + sigma * eps, 1.0, 0.5 * sigma * eps)
}
