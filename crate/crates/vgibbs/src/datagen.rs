//! Dataset synthesis, MCAR masking, splitting/standardisation, and CSV I/O
//! for incomplete tables.

use crate::error::{Error, Result};
use crate::famodel::{fa_sample, FaParams};
use crate::linalg::Mat;
use crate::rng::Rng;
use rand::seq::SliceRandom;
use rand::Rng as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// N x d value table plus N x d observedness mask (true = observed). Entries
/// under mask = false are undefined and stored as a quiet NaN sentinel.
#[derive(Debug, Clone)]
pub struct IncompleteDataset {
    n: usize,
    d: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

/// Equality over the mask and the observed entries; missing positions are
/// undefined and do not participate.
impl PartialEq for IncompleteDataset {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.d == other.d
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.mask)
                .all(|((a, b), &m)| !m || a == b)
    }
}

impl IncompleteDataset {
    /// Build a dataset, checking that observed entries are finite and every
    /// row keeps at least one observed entry.
    pub fn new(n: usize, d: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let ds = Self::from_parts(n, d, values, mask)?;
        for i in 0..n {
            if !ds.mask_row(i).iter().any(|&m| m) {
                return Err(Error::InvalidData(format!("row {i} has no observed entries")));
            }
        }
        Ok(ds)
    }

    /// Like [`IncompleteDataset::new`] but permits fully-missing rows, which
    /// can arise in intermediate states before they are dropped.
    pub fn from_parts(n: usize, d: usize, mut values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != n * d || mask.len() != n * d {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries for a {n}x{d} table",
                n * d
            )));
        }
        for (i, (v, &m)) in values.iter_mut().zip(&mask).enumerate() {
            if m {
                if !v.is_finite() {
                    return Err(Error::InvalidData(format!(
                        "observed entry at row {} col {} is not finite",
                        i / d,
                        i % d
                    )));
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(IncompleteDataset { n, d, values, mask })
    }

    /// A fully-observed dataset from complete rows.
    pub fn complete(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = if n == 0 { 0 } else { rows[0].len() };
        let mut values = Vec::with_capacity(n * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::InvalidArgument("ragged rows".into()));
            }
            values.extend_from_slice(row);
        }
        Self::new(n, d, values, vec![true; n * d])
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d + j]
    }

    pub fn observed(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.d + j]
    }

    pub fn values_row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn mask_row(&self, i: usize) -> &[bool] {
        &self.mask[i * self.d..(i + 1) * self.d]
    }

    pub fn observed_indices(&self, i: usize) -> Vec<usize> {
        (0..self.d).filter(|&j| self.observed(i, j)).collect()
    }

    pub fn missing_indices(&self, i: usize) -> Vec<usize> {
        (0..self.d).filter(|&j| !self.observed(i, j)).collect()
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Copy without fully-missing rows, plus the surviving row indices.
    pub fn drop_empty_rows(&self) -> (IncompleteDataset, Vec<usize>) {
        let keep: Vec<usize> = (0..self.n)
            .filter(|&i| self.mask_row(i).iter().any(|&m| m))
            .collect();
        let mut values = Vec::with_capacity(keep.len() * self.d);
        let mut mask = Vec::with_capacity(keep.len() * self.d);
        for &i in &keep {
            values.extend_from_slice(self.values_row(i));
            mask.extend_from_slice(self.mask_row(i));
        }
        (
            IncompleteDataset { n: keep.len(), d: self.d, values, mask },
            keep,
        )
    }

    pub fn subset(&self, rows: &[usize]) -> IncompleteDataset {
        let mut values = Vec::with_capacity(rows.len() * self.d);
        let mut mask = Vec::with_capacity(rows.len() * self.d);
        for &i in rows {
            values.extend_from_slice(self.values_row(i));
            mask.extend_from_slice(self.mask_row(i));
        }
        IncompleteDataset { n: rows.len(), d: self.d, values, mask }
    }
}

/// An incomplete dataset carrying K persistent imputation chains per row.
/// Observed coordinates are identical across chains and equal to the base.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedDataset {
    pub base: IncompleteDataset,
    k: usize,
    /// K x N x d, chain-major.
    chains: Vec<f64>,
}

impl ImputedDataset {
    /// Create with every chain initialised to the base values; missing
    /// coordinates start as NaN and must be filled by an imputer.
    pub fn uninitialised(base: IncompleteDataset, k: usize) -> Self {
        let n = base.n_rows();
        let d = base.dim();
        let mut chains = Vec::with_capacity(k * n * d);
        for _ in 0..k {
            chains.extend_from_slice(&base.values);
        }
        ImputedDataset { base, k, chains }
    }

    pub fn n_chains(&self) -> usize {
        self.k
    }

    pub fn chain_row(&self, k: usize, i: usize) -> &[f64] {
        let d = self.base.dim();
        let off = (k * self.base.n_rows() + i) * d;
        &self.chains[off..off + d]
    }

    /// Write one imputed coordinate; observed coordinates are not writable.
    pub fn set_imputed(&mut self, k: usize, i: usize, j: usize, value: f64) {
        assert!(!self.base.observed(i, j), "observed coordinates are immutable");
        let d = self.base.dim();
        self.chains[(k * self.base.n_rows() + i) * d + j] = value;
    }

    /// Checks the chain/base coherence invariant, used by tests and the
    /// training loop's per-epoch assertion.
    pub fn check_observed_integrity(&self) -> Result<()> {
        let d = self.base.dim();
        for k in 0..self.k {
            for i in 0..self.base.n_rows() {
                let row = self.chain_row(k, i);
                for j in 0..d {
                    if self.base.observed(i, j) && row[j] != self.base.value(i, j) {
                        return Err(Error::InvalidData(format!(
                            "chain {k} row {i} col {j} diverged from the observed value"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Independent Bernoulli mask over an n x d table; rows left with zero
/// observed entries are dropped. Returns the surviving mask (true = observed)
/// and the surviving row indices.
pub fn mcar_mask(n: usize, d: usize, frac: f64, rng: &mut Rng) -> Result<(Vec<bool>, Vec<usize>)> {
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::InvalidArgument(format!(
            "missingness fraction must be in [0, 1), got {frac}"
        )));
    }
    let mut mask = Vec::with_capacity(n * d);
    let mut keep = Vec::with_capacity(n);
    for i in 0..n {
        let row_start = mask.len();
        let mut any = false;
        for _ in 0..d {
            let observed = rng.random::<f64>() >= frac;
            any |= observed;
            mask.push(observed);
        }
        if any {
            keep.push(i);
        } else {
            mask.truncate(row_start);
        }
    }
    Ok((mask, keep))
}

/// Apply an MCAR mask to complete rows, dropping fully-missing rows.
pub fn apply_mcar(rows: &[Vec<f64>], frac: f64, rng: &mut Rng) -> Result<IncompleteDataset> {
    let d = if rows.is_empty() { 0 } else { rows[0].len() };
    let (mask, keep) = mcar_mask(rows.len(), d, frac, rng)?;
    let mut values = Vec::with_capacity(keep.len() * d);
    for &i in &keep {
        values.extend_from_slice(&rows[i]);
    }
    IncompleteDataset::new(keep.len(), d, values, mask)
}

/// Ground-truth 6-dimensional, 2-factor model behind the toy datasets.
pub fn toy_truth() -> FaParams {
    let f = Mat::from_rows(&[
        vec![-5.0, -2.0],
        vec![4.0, 0.0],
        vec![-3.0, -1.0],
        vec![-3.0, -3.0],
        vec![1.0, 5.0],
        vec![-1.0, 2.0],
    ]);
    let mu = vec![3.0, -1.0, 0.0, 2.0, -1.0, 0.0];
    let psi: [f64; 6] = [50.4794, 30.0988, 6.766, 17.3357, 40.9839, 25.1122];
    let gamma = psi.iter().map(|p| p.ln()).collect();
    FaParams::new(f, mu, gamma).unwrap()
}

/// Default training/test sizes for the toy datasets.
pub const TOY_N_TRAIN: usize = 6400;
pub const TOY_N_TEST: usize = 5000;

/// Sample complete train/test tables from the toy ground truth.
pub fn make_toy_dataset(
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, FaParams)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidArgument("dataset sizes must be positive".into()));
    }
    let truth = toy_truth();
    let mut rng = crate::rng::substream(seed, crate::rng::Purpose::Data, 0);
    let train = fa_sample(&truth, n_train, &mut rng)?;
    let test = fa_sample(&truth, n_test, &mut rng)?;
    Ok((train, test, truth))
}

/// Write an incomplete table as CSV with a header row; missing entries are
/// empty fields. Float formatting is shortest round-trip, so write-then-read
/// is value-exact.
pub fn write_csv<W: Write>(ds: &IncompleteDataset, out: &mut W) -> Result<()> {
    let header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..ds.n_rows() {
        let fields: Vec<String> = (0..ds.dim())
            .map(|j| {
                if ds.observed(i, j) {
                    format!("{}", ds.value(i, j))
                } else {
                    String::new()
                }
            })
            .collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn write_csv_file(ds: &IncompleteDataset, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(ds, &mut file)
}

/// Sibling 0/1 mask table (1 = observed).
pub fn write_mask_csv_file(ds: &IncompleteDataset, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..ds.dim()).map(|j| format!("m{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..ds.n_rows() {
        let fields: Vec<String> = (0..ds.dim())
            .map(|j| if ds.observed(i, j) { "1" } else { "0" }.to_string())
            .collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Read a CSV written by [`write_csv`]. Malformed rows (wrong arity or an
/// unparseable number) are reported with their 1-based data row index.
pub fn read_csv<R: BufRead>(input: R) -> Result<IncompleteDataset> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse { row: 0, msg: "missing header row".into() })??;
    let d = header.split(',').count();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut n = 0usize;
    for (ix, line) in lines.enumerate() {
        let row = ix + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d {
            return Err(Error::Parse {
                row,
                msg: format!("expected {d} fields, found {}", fields.len()),
            });
        }
        for field in fields {
            let field = field.trim();
            if field.is_empty() {
                values.push(f64::NAN);
                mask.push(false);
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    row,
                    msg: format!("cannot parse number from {field:?}"),
                })?;
                values.push(v);
                mask.push(true);
            }
        }
        n += 1;
    }
    IncompleteDataset::from_parts(n, d, values, mask)
}

pub fn read_csv_file(path: &Path) -> Result<IncompleteDataset> {
    read_csv(BufReader::new(std::fs::File::open(path)?))
}

/// Deterministic shuffled split plus per-column standardisation. Location and
/// scale come from the observed entries of the train split only and are
/// applied to both splits.
pub fn split_standardize(
    data: &IncompleteDataset,
    val_frac: f64,
    seed: u64,
) -> Result<(IncompleteDataset, IncompleteDataset, Vec<(f64, f64)>)> {
    if !(0.0..1.0).contains(&val_frac) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction must be in [0, 1), got {val_frac}"
        )));
    }
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    let mut rng = crate::rng::substream(seed, crate::rng::Purpose::Split, 0);
    order.shuffle(&mut rng);
    let n_val = (data.n_rows() as f64 * val_frac).floor() as usize;
    let (val_rows, train_rows) = order.split_at(n_val);
    let mut train_rows = train_rows.to_vec();
    let mut val_rows = val_rows.to_vec();
    train_rows.sort_unstable();
    val_rows.sort_unstable();
    let mut train = data.subset(&train_rows);
    let mut val = data.subset(&val_rows);

    let mut loc_scale = Vec::with_capacity(data.dim());
    for j in 0..data.dim() {
        let obs: Vec<f64> = (0..train.n_rows())
            .filter(|&i| train.observed(i, j))
            .map(|i| train.value(i, j))
            .collect();
        if obs.is_empty() {
            return Err(Error::InvalidData(format!(
                "column {j} has no observed entries in the training split"
            )));
        }
        let loc = crate::linalg::mean(&obs);
        let var = obs.iter().map(|v| (v - loc) * (v - loc)).sum::<f64>() / obs.len() as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        loc_scale.push((loc, scale));
    }
    for ds in [&mut train, &mut val] {
        let d = ds.d;
        for (ix, v) in ds.values.iter_mut().enumerate() {
            if ds.mask[ix] {
                let (loc, scale) = loc_scale[ix % d];
                *v = (*v - loc) / scale;
            }
        }
    }
    Ok((train, val, loc_scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};

    fn rng(ix: u64) -> Rng {
        substream(31, Purpose::Mask, ix)
    }

    #[test]
    fn new_rejects_fully_missing_rows() {
        let err = IncompleteDataset::new(1, 2, vec![1.0, 2.0], vec![false, false]);
        assert!(err.is_err());
        let ok = IncompleteDataset::from_parts(1, 2, vec![1.0, 2.0], vec![false, false]);
        assert!(ok.is_ok());
    }

    #[test]
    fn new_rejects_non_finite_observed() {
        let err = IncompleteDataset::new(1, 2, vec![f64::NAN, 2.0], vec![true, true]);
        assert!(err.is_err());
    }

    #[test]
    fn missing_entries_are_nan_sentinels() {
        let ds = IncompleteDataset::new(1, 2, vec![7.0, 2.0], vec![false, true]).unwrap();
        assert!(ds.value(0, 0).is_nan());
        assert_eq!(ds.value(0, 1), 2.0);
    }

    #[test]
    fn mcar_zero_fraction_keeps_everything() {
        let mut r = rng(0);
        let (mask, keep) = mcar_mask(50, 4, 0.0, &mut r).unwrap();
        assert_eq!(keep.len(), 50);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn mcar_extreme_fraction_may_drop_all() {
        let mut r = rng(1);
        let (mask, keep) = mcar_mask(5, 2, 0.9999, &mut r).unwrap();
        assert_eq!(mask.len(), keep.len() * 2);
    }

    #[test]
    fn mcar_rejects_bad_fraction() {
        let mut r = rng(2);
        assert!(mcar_mask(5, 2, 1.0, &mut r).is_err());
        assert!(mcar_mask(5, 2, -0.1, &mut r).is_err());
    }

    #[test]
    fn mcar_observed_fraction_concentrates() {
        let mut r = rng(3);
        let (n, d, frac) = (6400, 6, 1.0 / 3.0);
        let (mask, _) = mcar_mask(n, d, frac, &mut r).unwrap();
        let observed = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
        assert!((observed - (1.0 - frac)).abs() < 0.01, "observed fraction {observed}");
    }

    #[test]
    fn mcar_per_column_rates_are_mcar() {
        let mut r = rng(4);
        let (n, d, frac) = (4000, 6, 0.3);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64; d]).collect();
        let ds = apply_mcar(&rows, frac, &mut r).unwrap();
        let tol = 3.0 * (frac * (1.0 - frac) / ds.n_rows() as f64).sqrt();
        for j in 0..d {
            let missing = (0..ds.n_rows()).filter(|&i| !ds.observed(i, j)).count() as f64
                / ds.n_rows() as f64;
            // Row dropping removes a tiny amount of mass at this fraction.
            assert!((missing - frac).abs() < tol + 0.01, "col {j} rate {missing}");
        }
    }

    #[test]
    fn toy_truth_matches_printed_parameters() {
        let t = toy_truth();
        assert_eq!(t.f.row(0), &[-5.0, -2.0]);
        assert_eq!(t.mu[0], 3.0);
        assert!((t.gamma[2].exp() - 6.766).abs() < 1e-12);
        assert_eq!((TOY_N_TRAIN, TOY_N_TEST), (6400, 5000));
    }

    #[test]
    fn toy_dataset_is_seeded() {
        let (a_train, a_test, _) = make_toy_dataset(64, 32, 9).unwrap();
        let (b_train, b_test, _) = make_toy_dataset(64, 32, 9).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_test, b_test);
        let (c_train, _, _) = make_toy_dataset(64, 32, 10).unwrap();
        assert_ne!(a_train, c_train);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut r = rng(5);
        let (rows, _, _) = make_toy_dataset(40, 1, 3).map(|(tr, te, t)| (tr, te, t)).unwrap();
        let ds = apply_mcar(&rows, 0.3, &mut r).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = read_csv(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn csv_parses_partial_row() {
        let text = "x0,x1,x2\n1.0,,3.0\n";
        let ds = read_csv(std::io::BufReader::new(text.as_bytes())).unwrap();
        assert_eq!(ds.mask_row(0), &[true, false, true]);
        assert_eq!(ds.value(0, 0), 1.0);
        assert_eq!(ds.value(0, 2), 3.0);
    }

    #[test]
    fn csv_reports_bad_rows() {
        let text = "x0,x1,x2\n1.0,2.0\n";
        match read_csv(std::io::BufReader::new(text.as_bytes())) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "x0,x1\n1.0,abc\n";
        assert!(read_csv(std::io::BufReader::new(text.as_bytes())).is_err());
    }

    #[test]
    fn split_standardize_moments() {
        let mut r = rng(6);
        let (rows, _, _) = make_toy_dataset(500, 1, 4).unwrap();
        let ds = apply_mcar(&rows, 0.25, &mut r).unwrap();
        let (train, val, _) = split_standardize(&ds, 0.2, 77).unwrap();
        assert_eq!(train.n_rows() + val.n_rows(), ds.n_rows());
        for j in 0..train.dim() {
            let obs: Vec<f64> = (0..train.n_rows())
                .filter(|&i| train.observed(i, j))
                .map(|i| train.value(i, j))
                .collect();
            let m = crate::linalg::mean(&obs);
            let sd = (obs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / obs.len() as f64)
                .sqrt();
            assert!(m.abs() < 1e-9, "col {j} mean {m}");
            assert!((sd - 1.0).abs() < 1e-9, "col {j} std {sd}");
        }
    }

    #[test]
    fn split_zero_fraction_gives_empty_val() {
        let mut r = rng(7);
        let (rows, _, _) = make_toy_dataset(50, 1, 4).unwrap();
        let ds = apply_mcar(&rows, 0.1, &mut r).unwrap();
        let (train, val, _) = split_standardize(&ds, 0.0, 77).unwrap();
        assert_eq!(val.n_rows(), 0);
        assert_eq!(train.n_rows(), ds.n_rows());
    }

    #[test]
    fn scale_depends_only_on_train_rows() {
        let mut r = rng(8);
        let (rows, _, _) = make_toy_dataset(100, 1, 4).unwrap();
        let ds = apply_mcar(&rows, 0.1, &mut r).unwrap();
        let (_, _, ls1) = split_standardize(&ds, 0.2, 5).unwrap();
        let (_, _, ls2) = split_standardize(&ds, 0.2, 5).unwrap();
        assert_eq!(ls1, ls2);
    }

    #[test]
    fn imputed_dataset_guards_observed_coordinates() {
        let ds = IncompleteDataset::new(
            2,
            2,
            vec![1.0, f64::NAN, f64::NAN, 4.0],
            vec![true, false, false, true],
        )
        .unwrap();
        let mut imp = ImputedDataset::uninitialised(ds, 2);
        imp.set_imputed(0, 0, 1, 9.0);
        imp.set_imputed(1, 1, 0, -3.0);
        assert!(imp.check_observed_integrity().is_ok());
        assert_eq!(imp.chain_row(0, 0), &[1.0, 9.0]);
        assert_eq!(imp.chain_row(1, 1), &[-3.0, 4.0]);
    }

    #[test]
    #[should_panic(expected = "observed coordinates are immutable")]
    fn imputed_dataset_rejects_observed_write() {
        let ds = IncompleteDataset::new(1, 2, vec![1.0, f64::NAN], vec![true, false]).unwrap();
        let mut imp = ImputedDataset::uninitialised(ds, 1);
        imp.set_imputed(0, 0, 0, 5.0);
    }
}
