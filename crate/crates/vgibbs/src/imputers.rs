//! Baseline imputation and impute-then-fit: draws from the marginal
//! empirical distribution, chained-equation imputation with Bayesian linear
//! ridge conditionals, and weighted fitting on the stacked imputations.

use crate::datagen::{ImputedDataset, IncompleteDataset};
use crate::error::{Error, Result};
use crate::famodel::FaParams;
use crate::linalg::{chol_solve, cholesky_jittered, dot, solve_lower_transpose, Mat};
use crate::rng::Rng;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Chained-equation imputer configuration. The conditional model per column
/// is Bayesian linear ridge regression with a conjugate normal-inverse-gamma
/// prior: coefficients N(0, prior_scale * I) given the residual variance,
/// residual variance IG(shape, scale).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MiceConfig {
    pub sweeps: usize,
    pub prior_scale: f64,
    pub noise_prior: (f64, f64),
}

impl Default for MiceConfig {
    fn default() -> Self {
        MiceConfig { sweeps: 10, prior_scale: 1e2, noise_prior: (1e-3, 1e-3) }
    }
}

impl MiceConfig {
    fn validate(&self) -> Result<()> {
        if self.sweeps == 0 {
            return Err(Error::InvalidArgument("sweep count must be at least 1".into()));
        }
        if self.prior_scale <= 0.0 || self.noise_prior.0 <= 0.0 || self.noise_prior.1 <= 0.0 {
            return Err(Error::InvalidArgument("prior scales must be positive".into()));
        }
        Ok(())
    }
}

fn observed_columns(data: &IncompleteDataset) -> Result<Vec<Vec<f64>>> {
    let mut cols = Vec::with_capacity(data.dim());
    for j in 0..data.dim() {
        let col: Vec<f64> = (0..data.n_rows())
            .filter(|&i| data.observed(i, j))
            .map(|i| data.value(i, j))
            .collect();
        if col.is_empty() {
            return Err(Error::InvalidData(format!("column {j} has no observed values")));
        }
        cols.push(col);
    }
    Ok(cols)
}

/// Fill every missing entry of every chain with a uniform draw from that
/// column's observed values (the marginal empirical distribution).
pub fn empirical_impute(data: &IncompleteDataset, k: usize, rng: &mut Rng) -> Result<ImputedDataset> {
    let cols = observed_columns(data)?;
    let mut imputed = ImputedDataset::uninitialised(data.clone(), k);
    for chain in 0..k {
        for i in 0..data.n_rows() {
            for j in data.missing_indices(i) {
                let col = &cols[j];
                let pick = rng.random_range(0..col.len());
                imputed.set_imputed(chain, i, j, col[pick]);
            }
        }
    }
    Ok(imputed)
}

/// One Bayesian ridge fit-and-sample for column `target`: regress the
/// observed x_target on all other columns (current imputations filling their
/// gaps), draw (sigma^2, w) from the conjugate posterior, then redraw the
/// missing x_target entries.
fn mice_column_pass(
    table: &mut [f64],
    data: &IncompleteDataset,
    target: usize,
    cfg: &MiceConfig,
    rng: &mut Rng,
) -> Result<()> {
    let d = data.dim();
    let n = data.n_rows();
    let preds: Vec<usize> = (0..d).filter(|&j| j != target).collect();
    let p = preds.len() + 1; // intercept last

    let train_rows: Vec<usize> = (0..n).filter(|&i| data.observed(i, target)).collect();
    if train_rows.is_empty() {
        return Err(Error::InvalidData(format!(
            "column {target} has no observed rows to fit on"
        )));
    }
    let design_row = |table: &[f64], i: usize| -> Vec<f64> {
        let mut row: Vec<f64> = preds.iter().map(|&j| table[i * d + j]).collect();
        row.push(1.0);
        row
    };

    // Posterior precision V_n^{-1} = X^T X + I / prior_scale and X^T y.
    let mut xtx = Mat::zeros(p, p);
    let mut xty = vec![0.0; p];
    for &i in &train_rows {
        let row = design_row(table, i);
        let y = table[i * d + target];
        for a in 0..p {
            xty[a] += row[a] * y;
            for b in 0..p {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    let mut y_sq = 0.0;
    for &i in &train_rows {
        let y = table[i * d + target];
        y_sq += y * y;
    }
    for a in 0..p {
        xtx[(a, a)] += 1.0 / cfg.prior_scale;
    }
    let l = cholesky_jittered(&xtx)?;
    let w_mean = chol_solve(&l, &xty);

    // Residual-variance posterior IG(a_n, b_n).
    let (a0, b0) = cfg.noise_prior;
    let a_n = a0 + train_rows.len() as f64 / 2.0;
    let b_n = (b0 + 0.5 * (y_sq - dot(&w_mean, &xty))).max(b0);
    let gamma = Gamma::new(a_n, 1.0 / b_n)
        .map_err(|e| Error::Numeric(format!("invalid residual-variance posterior: {e}")))?;
    let sigma2 = 1.0 / gamma.sample(rng).max(1e-300);

    // w ~ N(w_mean, sigma^2 V_n): solve L^T u = z scales by the factor of
    // V_n^{-1} = L L^T, since V_n = L^{-T} L^{-1}.
    let z: Vec<f64> = (0..p)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            e * sigma2.sqrt()
        })
        .collect();
    let noise = solve_lower_transpose(&l, &z);
    let w: Vec<f64> = w_mean.iter().zip(&noise).map(|(m, n)| m + n).collect();

    let sigma = sigma2.sqrt();
    for i in 0..n {
        if !data.observed(i, target) {
            let row = design_row(table, i);
            let eps: f64 = StandardNormal.sample(rng);
            table[i * d + target] = dot(&w, &row) + sigma * eps;
        }
    }
    Ok(())
}

/// K independent chained-equation repetitions. Each repetition seeds its
/// table from the empirical marginals, then cycles `sweeps` times over all
/// columns with a fit-and-redraw pass per column.
pub fn mice_impute(
    data: &IncompleteDataset,
    k: usize,
    cfg: &MiceConfig,
    rng: &mut Rng,
) -> Result<ImputedDataset> {
    cfg.validate()?;
    let d = data.dim();
    let n = data.n_rows();
    let mut imputed = empirical_impute(data, k, rng)?;
    let any_missing: Vec<usize> =
        (0..d).filter(|&j| (0..n).any(|i| !data.observed(i, j))).collect();
    if any_missing.is_empty() {
        return Ok(imputed);
    }
    for chain in 0..k {
        let mut table: Vec<f64> = Vec::with_capacity(n * d);
        for i in 0..n {
            table.extend_from_slice(imputed.chain_row(chain, i));
        }
        for _sweep in 0..cfg.sweeps {
            for &j in &any_missing {
                mice_column_pass(&mut table, data, j, cfg, rng)?;
            }
        }
        for i in 0..n {
            for j in data.missing_indices(i) {
                imputed.set_imputed(chain, i, j, table[i * d + j]);
            }
        }
    }
    Ok(imputed)
}

/// Stack the K completed copies into one (K*N)-row complete dataset and fit
/// it with the supplied complete-data routine; uniform 1/K weights reduce to
/// a plain average, so stacking realises the weighted maximum likelihood.
pub fn stacked_fit<F>(imputed: &ImputedDataset, fitter: F) -> Result<FaParams>
where
    F: FnOnce(&IncompleteDataset) -> Result<FaParams>,
{
    let n = imputed.base.n_rows();
    let d = imputed.base.dim();
    let k = imputed.n_chains();
    let mut rows = Vec::with_capacity(k * n);
    for chain in 0..k {
        for i in 0..n {
            let row = imputed.chain_row(chain, i);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "chain {chain} row {i} is not fully imputed"
                )));
            }
            rows.push(row.to_vec());
        }
    }
    let _ = d;
    let stacked = IncompleteDataset::complete(&rows)?;
    fitter(&stacked)
}
