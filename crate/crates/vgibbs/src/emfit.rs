//! Exact expectation-maximisation for factor analysis with incomplete data.
//! This is the best-case estimator the stochastic methods are compared
//! against, plus the observed-data log-likelihood it monotonically improves.

use crate::datagen::IncompleteDataset;
use crate::error::{Error, Result};
use crate::famodel::{fa_marginal, FaParams};
use crate::gaussians::{mvn_logpdf, GaussianMoments};
use crate::linalg::{chol_inverse, chol_solve_mat, cholesky_jittered, Mat};

/// Expected sufficient statistics averaged over the data set.
#[derive(Debug, Clone)]
pub struct EmAccumulators {
    /// k x k average of E[z z^T].
    pub h: Mat,
    /// d x k average of E[(x - mu_hat) z^T].
    pub a: Mat,
    /// d x d average of E[(x - mu_hat)(x - mu_hat)^T].
    pub v: Mat,
    /// Mean of the expected completions.
    pub mu_hat: Vec<f64>,
}

/// Per-row posterior statistics given the observed block.
#[derive(Debug, Clone)]
pub struct RowPosterior {
    /// Missing dimension indices the blocks below refer to.
    pub missing: Vec<usize>,
    pub sigma_z: Mat,
    pub mu_z: Vec<f64>,
    pub sigma_mis: Mat,
    pub mu_mis: Vec<f64>,
    /// Cross-covariance of (x_mis, z) given the observed block.
    pub c_mis_z: Mat,
}

/// Posterior moments of (x_mis, z) for one row, from the closed-form
/// conditional of the joint Gaussian over (x, z).
pub fn row_posterior(p: &FaParams, values: &[f64], mask: &[bool]) -> Result<RowPosterior> {
    let k = p.latent_dim();
    let obs: Vec<usize> = (0..p.dim()).filter(|&j| mask[j]).collect();
    let mis: Vec<usize> = (0..p.dim()).filter(|&j| !mask[j]).collect();
    if obs.is_empty() {
        return Err(Error::InvalidData("row with no observed entries in the E-step".into()));
    }
    let all_cols: Vec<usize> = (0..k).collect();
    let f_obs = p.f.select(&obs, &all_cols);
    let f_mis = p.f.select(&mis, &all_cols);
    let psi = p.psi();

    // Sigma_z = (I + F_o^T Psi_o^{-1} F_o)^{-1}
    let mut inner = Mat::identity(k);
    for (r, &j) in obs.iter().enumerate() {
        let inv_psi = 1.0 / psi[j];
        for a in 0..k {
            for b in 0..k {
                inner[(a, b)] += f_obs[(r, a)] * inv_psi * f_obs[(r, b)];
            }
        }
    }
    let l = cholesky_jittered(&inner)?;
    let sigma_z = chol_inverse(&l);

    // mu_z = Sigma_z F_o^T Psi_o^{-1} (x_o - mu_o)
    let mut w = vec![0.0; k];
    for (r, &j) in obs.iter().enumerate() {
        let resid = (values[j] - p.mu[j]) / psi[j];
        for a in 0..k {
            w[a] += f_obs[(r, a)] * resid;
        }
    }
    let mu_z = sigma_z.matvec(&w);

    // Missing block given the observed one.
    let mut sigma_mis = f_mis.matmul(&sigma_z).matmul(&f_mis.transpose());
    for (r, &j) in mis.iter().enumerate() {
        sigma_mis[(r, r)] += psi[j];
    }
    let mu_mis: Vec<f64> = mis
        .iter()
        .enumerate()
        .map(|(r, &j)| {
            p.mu[j]
                + (0..k)
                    .map(|a| f_mis[(r, a)] * mu_z[a])
                    .sum::<f64>()
        })
        .collect();
    let c_mis_z = f_mis.matmul(&sigma_z);

    Ok(RowPosterior { missing: mis, sigma_z, mu_z, sigma_mis, mu_mis, c_mis_z })
}

/// E-step: accumulate H, A, V and the expected-completion mean over all rows,
/// zero-padding the per-row missing blocks back to full dimension.
pub fn em_estep(p: &FaParams, data: &IncompleteDataset) -> Result<EmAccumulators> {
    let (d, k) = (p.dim(), p.latent_dim());
    if data.dim() != d {
        return Err(Error::InvalidArgument(format!(
            "data dimension {} does not match model dimension {d}",
            data.dim()
        )));
    }
    let n = data.n_rows();
    if n == 0 {
        return Err(Error::InvalidData("empty dataset".into()));
    }

    let mut posteriors = Vec::with_capacity(n);
    let mut completions = Vec::with_capacity(n);
    let mut mu_hat = vec![0.0; d];
    for i in 0..n {
        let post = row_posterior(p, data.values_row(i), data.mask_row(i))?;
        let mut x_hat = data.values_row(i).to_vec();
        for (r, &j) in post.missing.iter().enumerate() {
            x_hat[j] = post.mu_mis[r];
        }
        for (acc, v) in mu_hat.iter_mut().zip(&x_hat) {
            *acc += v;
        }
        posteriors.push(post);
        completions.push(x_hat);
    }
    for v in &mut mu_hat {
        *v /= n as f64;
    }

    let mut h = Mat::zeros(k, k);
    let mut a = Mat::zeros(d, k);
    let mut v = Mat::zeros(d, d);
    for (post, x_hat) in posteriors.iter().zip(&completions) {
        for p_ in 0..k {
            for q in 0..k {
                h[(p_, q)] += post.sigma_z[(p_, q)] + post.mu_z[p_] * post.mu_z[q];
            }
        }
        let centered: Vec<f64> = x_hat.iter().zip(&mu_hat).map(|(x, m)| x - m).collect();
        for (r, &j) in post.missing.iter().enumerate() {
            for q in 0..k {
                a[(j, q)] += post.c_mis_z[(r, q)];
            }
        }
        for j in 0..d {
            for q in 0..k {
                a[(j, q)] += centered[j] * post.mu_z[q];
            }
        }
        for (r, &j1) in post.missing.iter().enumerate() {
            for (s, &j2) in post.missing.iter().enumerate() {
                v[(j1, j2)] += post.sigma_mis[(r, s)];
            }
        }
        for j1 in 0..d {
            for j2 in 0..d {
                v[(j1, j2)] += centered[j1] * centered[j2];
            }
        }
    }
    let scale = 1.0 / n as f64;
    Ok(EmAccumulators {
        h: h.scale(scale),
        a: a.scale(scale),
        v: v.scale(scale),
        mu_hat,
    })
}

/// Noise-variance floor applied before taking logs in the M-step.
const PSI_FLOOR: f64 = 1e-8;

/// M-step: F = A H^{-1}, Psi = diag(V - 2 F A^T + F H F^T) clamped positive,
/// mu from the expected completions.
pub fn em_mstep(acc: &EmAccumulators) -> Result<FaParams> {
    let d = acc.mu_hat.len();
    let l = cholesky_jittered(&acc.h)?;
    // F^T = H^{-1} A^T
    let f = chol_solve_mat(&l, &acc.a.transpose()).transpose();
    let fat = f.matmul(&acc.a.transpose());
    let fhf = f.matmul(&acc.h).matmul(&f.transpose());
    let mut gamma = Vec::with_capacity(d);
    for i in 0..d {
        let psi = acc.v[(i, i)] - 2.0 * fat[(i, i)] + fhf[(i, i)];
        if !psi.is_finite() {
            return Err(Error::Numeric(format!("noise variance update for dim {i} is {psi}")));
        }
        gamma.push(psi.max(PSI_FLOOR).ln());
    }
    FaParams::new(f, acc.mu_hat.clone(), gamma)
}

/// Average per-row log-density of the observed coordinates under the model
/// marginal.
pub fn observed_loglik(p: &FaParams, data: &IncompleteDataset) -> Result<f64> {
    let marg = fa_marginal(p);
    let mut total = 0.0;
    for i in 0..data.n_rows() {
        let obs = data.observed_indices(i);
        if obs.is_empty() {
            return Err(Error::InvalidData(format!("row {i} has no observed entries")));
        }
        let vals: Vec<f64> = obs.iter().map(|&j| data.value(i, j)).collect();
        if obs.len() == data.dim() {
            total += mvn_logpdf(&marg, &vals)?;
        } else {
            let sub = GaussianMoments {
                mean: obs.iter().map(|&j| marg.mean[j]).collect(),
                cov: marg.cov.select(&obs, &obs),
            };
            total += mvn_logpdf(&sub, &vals)?;
        }
    }
    Ok(total / data.n_rows() as f64)
}

/// Alternate E- and M-steps until the observed log-likelihood improves by
/// less than `tol` or `max_iters` is reached. Fully-missing rows are dropped
/// up front. The trace holds the observed log-likelihood per iteration,
/// starting with the initial parameters.
pub fn em_fit(
    data: &IncompleteDataset,
    init: &FaParams,
    max_iters: usize,
    tol: f64,
) -> Result<(FaParams, Vec<f64>)> {
    let (data, _) = data.drop_empty_rows();
    let mut params = init.clone();
    let mut trace = vec![observed_loglik(&params, &data)?];
    for _ in 0..max_iters {
        let acc = em_estep(&params, &data)?;
        params = em_mstep(&acc)?;
        let ll = observed_loglik(&params, &data)?;
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if ll - prev < tol {
            break;
        }
    }
    Ok((params, trace))
}

/// Default convergence tolerance on the average observed log-likelihood.
pub const EM_DEFAULT_TOL: f64 = 1e-6;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{apply_mcar, make_toy_dataset, toy_truth};
    use crate::famodel::{fa_avg_loglik, fa_loglik_grads, fa_model_kl};
    use crate::gaussians::mvn_condition;
    use crate::rng::{substream, Purpose, Rng};
    use rand::Rng as _;

    fn rng(ix: u64) -> Rng {
        substream(47, Purpose::Mask, ix)
    }

    fn random_params(d: usize, k: usize, r: &mut Rng) -> FaParams {
        let mut p = FaParams::init_for_training(d, k, r);
        for v in p.mu.iter_mut() {
            *v = r.random_range(-1.0..1.0);
        }
        for v in p.gamma.iter_mut() {
            *v = r.random_range(-0.5..0.5);
        }
        p
    }

    /// Explicit joint Gaussian over (x, z): mean (mu, 0) and covariance
    /// [[F F^T + Psi, F], [F^T, I]].
    fn explicit_joint(p: &FaParams) -> GaussianMoments {
        let (d, k) = (p.dim(), p.latent_dim());
        let marg = fa_marginal(p);
        let mut cov = Mat::zeros(d + k, d + k);
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] = marg.cov[(i, j)];
            }
            for a in 0..k {
                cov[(i, d + a)] = p.f[(i, a)];
                cov[(d + a, i)] = p.f[(i, a)];
            }
        }
        for a in 0..k {
            cov[(d + a, d + a)] = 1.0;
        }
        let mut mean = p.mu.clone();
        mean.extend(std::iter::repeat(0.0).take(k));
        GaussianMoments { mean, cov }
    }

    #[test]
    fn posterior_matches_joint_gaussian_conditioning() {
        let mut r = rng(1);
        for _ in 0..10 {
            let p = random_params(5, 2, &mut r);
            let values: Vec<f64> = (0..5).map(|_| r.random_range(-3.0..3.0)).collect();
            let mask = [true, false, true, false, true];
            let post = row_posterior(&p, &values, &mask).unwrap();

            let joint = explicit_joint(&p);
            let obs: Vec<usize> = (0..5).filter(|&j| mask[j]).collect();
            let obs_vals: Vec<f64> = obs.iter().map(|&j| values[j]).collect();
            let cond = mvn_condition(&joint, &obs, &obs_vals).unwrap();
            // Conditioned joint covers (missing x dims, z) in ascending order.
            let n_mis = post.missing.len();
            for (r_, _) in post.missing.iter().enumerate() {
                assert!((cond.mean[r_] - post.mu_mis[r_]).abs() < 1e-8);
                for (s, _) in post.missing.iter().enumerate() {
                    assert!((cond.cov[(r_, s)] - post.sigma_mis[(r_, s)]).abs() < 1e-8);
                }
                for a in 0..2 {
                    assert!((cond.cov[(r_, n_mis + a)] - post.c_mis_z[(r_, a)]).abs() < 1e-8);
                }
            }
            for a in 0..2 {
                assert!((cond.mean[n_mis + a] - post.mu_z[a]).abs() < 1e-8);
                for b in 0..2 {
                    assert!((cond.cov[(n_mis + a, n_mis + b)] - post.sigma_z[(a, b)]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn fully_observed_row_has_empty_missing_block() {
        let mut r = rng(2);
        let p = random_params(4, 2, &mut r);
        let values = [0.4, -1.0, 2.0, 0.0];
        let post = row_posterior(&p, &values, &[true; 4]).unwrap();
        assert!(post.missing.is_empty());
        assert_eq!(post.sigma_mis.rows(), 0);
    }

    #[test]
    fn fully_missing_row_is_rejected() {
        let mut r = rng(3);
        let p = random_params(3, 1, &mut r);
        assert!(row_posterior(&p, &[f64::NAN; 3], &[false; 3]).is_err());
    }

    #[test]
    fn estep_accumulators_are_symmetric_psd() {
        let mut r = rng(4);
        let (rows, _, truth) = make_toy_dataset(300, 1, 5).unwrap();
        let data = apply_mcar(&rows, 0.33, &mut r).unwrap();
        let acc = em_estep(&truth, &data).unwrap();
        assert!(acc.h.max_abs_diff(&acc.h.transpose()) < 1e-8);
        assert!(acc.v.max_abs_diff(&acc.v.transpose()) < 1e-8);
        assert!(cholesky_jittered(&acc.h).is_ok());
        assert!(cholesky_jittered(&acc.v).is_ok());
    }

    #[test]
    fn mstep_complete_data_mean_is_sample_mean() {
        let mut r = rng(5);
        let (rows, _, truth) = make_toy_dataset(200, 1, 6).unwrap();
        let data = IncompleteDataset::complete(&rows).unwrap();
        let acc = em_estep(&truth, &data).unwrap();
        let fitted = em_mstep(&acc).unwrap();
        for j in 0..truth.dim() {
            let mean = rows.iter().map(|row| row[j]).sum::<f64>() / rows.len() as f64;
            assert!((fitted.mu[j] - mean).abs() < 1e-12);
        }
        let _ = r;
    }

    #[test]
    fn mstep_zero_cross_moment_gives_zero_loading() {
        let acc = EmAccumulators {
            h: Mat::identity(2),
            a: Mat::zeros(3, 2),
            v: Mat::diag(&[1.0, 2.0, 3.0]),
            mu_hat: vec![0.0; 3],
        };
        let p = em_mstep(&acc).unwrap();
        assert!(p.f.data().iter().all(|&v| v == 0.0));
        for (g, v) in p.gamma.iter().zip([1.0, 2.0, 3.0]) {
            assert!((g.exp() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_variances_stay_positive_across_iterations() {
        let mut r = rng(6);
        let (rows, _, _) = make_toy_dataset(400, 1, 7).unwrap();
        let data = apply_mcar(&rows, 0.33, &mut r).unwrap();
        let mut params = random_params(6, 2, &mut r);
        for _ in 0..50 {
            let acc = em_estep(&params, &data).unwrap();
            params = em_mstep(&acc).unwrap();
            assert!(params.gamma.iter().all(|g| g.exp() > 0.0 && g.is_finite()));
        }
    }

    #[test]
    fn em_fit_zero_iters_returns_init() {
        let mut r = rng(7);
        let (rows, _, _) = make_toy_dataset(50, 1, 8).unwrap();
        let data = apply_mcar(&rows, 0.2, &mut r).unwrap();
        let init = random_params(6, 2, &mut r);
        let (fit, trace) = em_fit(&data, &init, 0, EM_DEFAULT_TOL).unwrap();
        assert_eq!(fit, init);
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn em_monotone_on_random_datasets() {
        let mut r = rng(8);
        for trial in 0..20 {
            let truth = random_params(4, 2, &mut r);
            let rows = crate::famodel::fa_sample(&truth, 120, &mut r).unwrap();
            let frac = r.random_range(0.1..0.5);
            let data = apply_mcar(&rows, frac, &mut r).unwrap();
            let init = random_params(4, 2, &mut r);
            let (_, trace) = em_fit(&data, &init, 30, 0.0).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "trial {trial}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn em_complete_data_reaches_stationarity() {
        let mut r = rng(9);
        let (rows, _, _) = make_toy_dataset(800, 1, 9).unwrap();
        let data = IncompleteDataset::complete(&rows).unwrap();
        let init = random_params(6, 2, &mut r);
        let (fit, _) = em_fit(&data, &init, 3000, 0.0).unwrap();
        // At the fixed point the complete-data likelihood gradient vanishes.
        let mut grad = vec![0.0; 6 * 2 + 6 + 6];
        for row in &rows {
            let g = fa_loglik_grads(&fit, row).unwrap();
            let mut flat = g.d_f.data().to_vec();
            flat.extend_from_slice(&g.d_mu);
            flat.extend_from_slice(&g.d_gamma);
            for (acc, v) in grad.iter_mut().zip(&flat) {
                *acc += v / rows.len() as f64;
            }
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-4, "gradient norm at the EM fixed point: {norm}");
        let ll = fa_avg_loglik(&fit, &rows).unwrap();
        assert!(ll.is_finite());
    }

    #[test]
    fn em_improves_over_init_on_complete_toy_data() {
        let mut r = rng(10);
        let (rows, _, truth) = make_toy_dataset(6400, 1, 10).unwrap();
        let data = IncompleteDataset::complete(&rows).unwrap();
        let init = random_params(6, 2, &mut r);
        let (fit, _) = em_fit(&data, &init, 200, 1e-8).unwrap();
        let kl_init = fa_model_kl(&truth, &init).unwrap();
        let kl_fit = fa_model_kl(&truth, &fit).unwrap();
        assert!(
            kl_fit * 100.0 < kl_init,
            "EM should improve KL by 100x: init {kl_init}, fit {kl_fit}"
        );
    }

    #[test]
    fn em_drops_fully_missing_rows() {
        let mut r = rng(11);
        let (rows, _, _) = make_toy_dataset(60, 1, 11).unwrap();
        let clean = apply_mcar(&rows, 0.3, &mut r).unwrap();
        let d = clean.dim();
        // Insert a fully-missing row in the middle.
        let mut values = Vec::new();
        let mut mask = Vec::new();
        for i in 0..clean.n_rows() {
            values.extend_from_slice(clean.values_row(i));
            mask.extend_from_slice(clean.mask_row(i));
            if i == 10 {
                values.extend(std::iter::repeat(f64::NAN).take(d));
                mask.extend(std::iter::repeat(false).take(d));
            }
        }
        let dirty =
            IncompleteDataset::from_parts(clean.n_rows() + 1, d, values, mask).unwrap();
        let init = random_params(6, 2, &mut r);
        let (fit_clean, _) = em_fit(&clean, &init, 20, 0.0).unwrap();
        let (fit_dirty, _) = em_fit(&dirty, &init, 20, 0.0).unwrap();
        assert!(fit_clean.f.max_abs_diff(&fit_dirty.f) < 1e-12);
        for (a, b) in fit_clean.mu.iter().zip(&fit_dirty.mu) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in fit_clean.gamma.iter().zip(&fit_dirty.gamma) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn observed_loglik_complete_matches_full_density() {
        let (rows, _, truth) = make_toy_dataset(100, 1, 12).unwrap();
        let data = IncompleteDataset::complete(&rows).unwrap();
        let a = observed_loglik(&truth, &data).unwrap();
        let b = fa_avg_loglik(&truth, &rows).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn observed_loglik_single_dim_closed_form() {
        let truth = toy_truth();
        let j = 2;
        let x = 1.5;
        let mut values = vec![f64::NAN; 6];
        values[j] = x;
        let mut mask = vec![false; 6];
        mask[j] = true;
        let data = IncompleteDataset::new(1, 6, values, mask).unwrap();
        let ll = observed_loglik(&truth, &data).unwrap();
        let marg = fa_marginal(&truth);
        let var = marg.cov[(j, j)];
        let expect = -0.5
            * (crate::gaussians::LN_2PI
                + var.ln()
                + (x - truth.mu[j]) * (x - truth.mu[j]) / var);
        assert!((ll - expect).abs() < 1e-12);
    }

    #[test]
    fn observed_loglik_average_identity() {
        let mut r = rng(13);
        let (rows, _, truth) = make_toy_dataset(40, 1, 13).unwrap();
        let data = apply_mcar(&rows, 0.2, &mut r).unwrap();
        let old = observed_loglik(&truth, &data).unwrap();
        let n = data.n_rows() as f64;
        // Appending a fully-observed duplicate of the first row.
        let mut values: Vec<f64> = Vec::new();
        let mut mask = Vec::new();
        for i in 0..data.n_rows() {
            values.extend_from_slice(data.values_row(i));
            mask.extend_from_slice(data.mask_row(i));
        }
        let extra = rows[0].clone();
        values.extend_from_slice(&extra);
        mask.extend(std::iter::repeat(true).take(6));
        let bigger =
            IncompleteDataset::new(data.n_rows() + 1, 6, values, mask).unwrap();
        let new = observed_loglik(&truth, &bigger).unwrap();
        let row_ll = fa_avg_loglik(&truth, &[extra]).unwrap();
        assert!((new - (n * old + row_ll) / (n + 1.0)).abs() < 1e-12);
    }
}
