//! The factor analysis model p(x) = N(x; mu, F F^T + Psi) with
//! Psi = exp(gamma) elementwise: marginal moments, exact univariate
//! conditionals, log-likelihood with analytic gradients, sampling, and KL
//! divergence between two models.

use crate::error::{Error, Result};
use crate::gaussians::{mvn_condition, mvn_kl, mvn_logpdf, GaussianMoments, LN_2PI};
use crate::linalg::{chol_inverse, chol_log_det, cholesky_jittered, dot, Mat};
use crate::rng::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Factor analysis parameters: d x k loading matrix, length-d mean, and
/// length-d log-variances of the diagonal observation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct FaParams {
    pub f: Mat,
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FaParamsWire {
    d: usize,
    k: usize,
    f: Vec<f64>,
    mu: Vec<f64>,
    gamma: Vec<f64>,
}

impl Serialize for FaParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FaParamsWire {
            d: self.dim(),
            k: self.latent_dim(),
            f: self.f.data().to_vec(),
            mu: self.mu.clone(),
            gamma: self.gamma.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FaParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = FaParamsWire::deserialize(d)?;
        if wire.f.len() != wire.d * wire.k || wire.mu.len() != wire.d || wire.gamma.len() != wire.d
        {
            return Err(serde::de::Error::custom("inconsistent factor analysis parameter shapes"));
        }
        Ok(FaParams {
            f: Mat::from_vec(wire.d, wire.k, wire.f),
            mu: wire.mu,
            gamma: wire.gamma,
        })
    }
}

impl FaParams {
    pub fn new(f: Mat, mu: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if f.rows() != mu.len() || f.rows() != gamma.len() || f.rows() == 0 || f.cols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "factor analysis shapes inconsistent: F {}x{}, mu {}, gamma {}",
                f.rows(),
                f.cols(),
                mu.len(),
                gamma.len()
            )));
        }
        Ok(FaParams { f, mu, gamma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.f.cols()
    }

    /// Training initialisation: F entries standard normal, mu = 0, gamma = 1.
    pub fn init_for_training(d: usize, k: usize, rng: &mut Rng) -> Self {
        let mut f = Mat::zeros(d, k);
        for v in f.data_mut() {
            *v = StandardNormal.sample(rng);
        }
        FaParams { f, mu: vec![0.0; d], gamma: vec![1.0; d] }
    }

    pub fn psi(&self) -> Vec<f64> {
        self.gamma.iter().map(|g| g.exp()).collect()
    }

    /// Flat parameter vector: F row-major, then mu, then gamma.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.f.data().to_vec();
        out.extend_from_slice(&self.mu);
        out.extend_from_slice(&self.gamma);
        out
    }

    pub fn from_flat(d: usize, k: usize, flat: &[f64]) -> Self {
        let f = Mat::from_vec(d, k, flat[..d * k].to_vec());
        let mu = flat[d * k..d * k + d].to_vec();
        let gamma = flat[d * k + d..].to_vec();
        FaParams { f, mu, gamma }
    }
}

/// Marginal moments N(mu, F F^T + Psi).
pub fn fa_marginal(p: &FaParams) -> GaussianMoments {
    let mut cov = p.f.matmul(&p.f.transpose());
    for (i, psi) in p.psi().iter().enumerate() {
        cov[(i, i)] += psi;
    }
    GaussianMoments { mean: p.mu.clone(), cov }
}

/// Log-density gradients for a complete observation.
#[derive(Debug, Clone)]
pub struct FaLoglikGrads {
    pub loglik: f64,
    pub d_f: Mat,
    pub d_mu: Vec<f64>,
    pub d_gamma: Vec<f64>,
    pub d_x: Vec<f64>,
}

/// log N(x; mu, F F^T + Psi) with analytic gradients with respect to the
/// parameters and the point itself.
pub fn fa_loglik_grads(p: &FaParams, x: &[f64]) -> Result<FaLoglikGrads> {
    let d = p.dim();
    if x.len() != d {
        return Err(Error::InvalidArgument(format!(
            "point dimension {} does not match model dimension {d}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("point contains non-finite entries".into()));
    }
    let marg = fa_marginal(p);
    let l = cholesky_jittered(&marg.cov)?;
    let precision = chol_inverse(&l);
    let r: Vec<f64> = x.iter().zip(&p.mu).map(|(a, b)| a - b).collect();
    let u = precision.matvec(&r);
    let quad = dot(&r, &u);
    let loglik = -0.5 * (d as f64 * LN_2PI + chol_log_det(&l) + quad);

    // dl/dSigma = 0.5 (u u^T - Sigma^{-1}), symmetric.
    let mut g_sigma = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            g_sigma[(i, j)] = 0.5 * (u[i] * u[j] - precision[(i, j)]);
        }
    }
    // Sigma = F F^T + diag(exp gamma): dl/dF = 2 G F, dl/dgamma_i = G_ii e^{gamma_i}.
    let d_f = g_sigma.matmul(&p.f).scale(2.0);
    let d_gamma: Vec<f64> = (0..d).map(|i| g_sigma[(i, i)] * p.gamma[i].exp()).collect();
    let d_mu = u.clone();
    let d_x: Vec<f64> = u.iter().map(|v| -v).collect();
    Ok(FaLoglikGrads { loglik, d_f, d_mu, d_gamma, d_x })
}

/// Exact univariate conditional of dimension `j` given values for every other
/// dimension. Returns (mean, variance).
pub fn fa_exact_conditional(p: &FaParams, j: usize, x_rest: &[f64]) -> Result<(f64, f64)> {
    let d = p.dim();
    if j >= d {
        return Err(Error::InvalidArgument(format!("dimension {j} out of range for d={d}")));
    }
    if x_rest.len() != d - 1 {
        return Err(Error::InvalidArgument(format!(
            "expected {} conditioning values, got {}",
            d - 1,
            x_rest.len()
        )));
    }
    let marg = fa_marginal(p);
    let rest_idx: Vec<usize> = (0..d).filter(|&i| i != j).collect();
    let cond = mvn_condition(&marg, &rest_idx, x_rest)?;
    Ok((cond.mean[0], cond.cov[(0, 0)]))
}

/// Sample n rows of x = F z + mu + eps with z ~ N(0, I) and eps ~ N(0, Psi).
pub fn fa_sample(p: &FaParams, n: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let (d, k) = (p.dim(), p.latent_dim());
    let noise_std: Vec<f64> = p.gamma.iter().map(|g| (0.5 * g).exp()).collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let mut x = p.f.matvec(&z);
        for i in 0..d {
            let eps: f64 = StandardNormal.sample(rng);
            x[i] += p.mu[i] + noise_std[i] * eps;
        }
        out.push(x);
    }
    Ok(out)
}

/// KL between the marginals of two factor analysis models.
pub fn fa_model_kl(truth: &FaParams, fit: &FaParams) -> Result<f64> {
    mvn_kl(&fa_marginal(truth), &fa_marginal(fit))
}

/// Average complete-data log-likelihood over a set of rows.
pub fn fa_avg_loglik(p: &FaParams, rows: &[Vec<f64>]) -> Result<f64> {
    let marg = fa_marginal(p);
    let mut total = 0.0;
    for row in rows {
        total += mvn_logpdf(&marg, row)?;
    }
    Ok(total / rows.len() as f64)
}
