//! Standardization, PCA with cumulative-variance component selection, and
//! tolerance / VIF multicollinearity diagnostics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, GridStack};
use crate::sampling::FeatureMatrix;
use crate::util::sha256_hex;

/// Standard deviations below this are treated as zero variance.
pub const STD_EPSILON: f64 = 1e-12;
/// Lower clamp on tolerance before taking its reciprocal.
pub const TOLERANCE_FLOOR: f64 = 1e-12;
pub const TOLERANCE_THRESHOLD: f64 = 0.1;
pub const VIF_THRESHOLD: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum ReduceError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("need at least {needed} features, got {got}")]
    TooFewFeatures { needed: usize, got: usize },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("regression is underdetermined: n = {n} <= p = {p}")]
    Underdetermined { n: usize, p: usize },
    #[error("k = {k} out of range 1..={p}")]
    BadK { k: usize, p: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon: f64,
    /// Columns with zero variance; their std is stored as 1.
    pub degenerate: Vec<bool>,
}

impl Standardizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (row[j] - self.mean[j]) / self.std[j];
        }
    }

    pub fn transform(&self, x: &FeatureMatrix) -> Result<FeatureMatrix, ReduceError> {
        if x.p != self.dim() {
            return Err(ReduceError::DimensionMismatch {
                expected: self.dim(),
                got: x.p,
            });
        }
        let mut data = vec![0.0; x.data.len()];
        for i in 0..x.n {
            self.apply_row(x.row(i), &mut data[i * x.p..(i + 1) * x.p]);
        }
        Ok(FeatureMatrix {
            n: x.n,
            p: x.p,
            data,
            labels: x.labels.clone(),
        })
    }

    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| v * self.std[j] + self.mean[j])
            .collect()
    }
}

fn check_finite(x: &FeatureMatrix) -> Result<(), ReduceError> {
    if x.data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ReduceError::NonFinite)
    }
}

/// Column means and sample (n - 1) standard deviations.
pub fn fit_standardizer(x: &FeatureMatrix) -> Result<Standardizer, ReduceError> {
    if x.n < 2 {
        return Err(ReduceError::TooFewSamples { needed: 2, got: x.n });
    }
    check_finite(x)?;
    let mut mean = vec![0.0; x.p];
    for i in 0..x.n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= x.n as f64);
    let mut var = vec![0.0; x.p];
    for i in 0..x.n {
        for (j, v) in x.row(i).iter().enumerate() {
            var[j] += (v - mean[j]).powi(2);
        }
    }
    let mut std = Vec::with_capacity(x.p);
    let mut degenerate = Vec::with_capacity(x.p);
    for v in var {
        let s = (v / (x.n as f64 - 1.0)).sqrt();
        let flat = s < STD_EPSILON;
        degenerate.push(flat);
        std.push(if flat { 1.0 } else { s });
    }
    Ok(Standardizer {
        mean,
        std,
        epsilon: STD_EPSILON,
        degenerate,
    })
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition

/// Cyclic Jacobi eigendecomposition of a symmetric `p x p` row-major matrix.
/// Returns (eigenvalues, eigenvectors) unsorted; `vectors[i]` pairs with `values[i]`.
pub fn jacobi_eigen(a: &[f64], p: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; p * p];
    for i in 0..p {
        v[i * p + i] = 1.0;
    }
    let norm: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..p)
            .flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * p + j].powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * norm.max(f64::MIN_POSITIVE) {
            break;
        }
        for k in 0..p {
            for l in k + 1..p {
                let akl = m[k * p + l];
                if akl == 0.0 {
                    continue;
                }
                let theta = (m[l * p + l] - m[k * p + k]) / (2.0 * akl);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // rotate rows/columns k and l
                for i in 0..p {
                    let (mik, mil) = (m[i * p + k], m[i * p + l]);
                    m[i * p + k] = c * mik - s * mil;
                    m[i * p + l] = s * mik + c * mil;
                }
                for j in 0..p {
                    let (mkj, mlj) = (m[k * p + j], m[l * p + j]);
                    m[k * p + j] = c * mkj - s * mlj;
                    m[l * p + j] = s * mkj + c * mlj;
                }
                for i in 0..p {
                    let (vik, vil) = (v[i * p + k], v[i * p + l]);
                    v[i * p + k] = c * vik - s * vil;
                    v[i * p + l] = s * vik + c * vil;
                }
            }
        }
    }
    let values = (0..p).map(|i| m[i * p + i]).collect();
    let vectors = (0..p).map(|j| (0..p).map(|i| v[i * p + j]).collect()).collect();
    (values, vectors)
}

/// Applies `f` to the band vector of every valid cell, producing a stack with
/// `names.len()` bands; invalid cells stay nodata in every output band.
fn map_stack(stack: &GridStack, names: Vec<String>, f: impl Fn(&[f64], &mut [f64])) -> GridStack {
    let h = stack.header;
    let q = names.len();
    let mask = stack.valid_mask();
    let mut out: Vec<Vec<f64>> = vec![vec![h.nodata; h.len()]; q];
    let mut row = vec![0.0; stack.band_count()];
    let mut z = vec![0.0; q];
    for (i, valid) in mask.into_iter().enumerate() {
        if !valid {
            continue;
        }
        for (b, band) in stack.bands.iter().enumerate() {
            row[b] = band.values[i];
        }
        f(&row, &mut z);
        for (b, v) in z.iter().enumerate() {
            out[b][i] = *v;
        }
    }
    GridStack {
        header: h,
        band_names: names,
        bands: out.into_iter().map(|values| Grid { header: h, values }).collect(),
    }
}

/// Per-band standardization of every valid cell.
pub fn standardize_stack(stack: &GridStack, s: &Standardizer) -> GridStack {
    map_stack(stack, stack.band_names.clone(), |row, out| s.apply_row(row, out))
}

// ---------------------------------------------------------------------------
// PCA

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// All p eigenvectors (unit length), ordered by descending eigenvalue.
    /// The projection W is formed by the first `k` of them as columns.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Nonincreasing, negatives clamped to 0.
    pub eigenvalues: Vec<f64>,
    pub cum_explained: Vec<f64>,
    pub k: usize,
    pub standardizer: Standardizer,
}

impl PcaModel {
    pub fn p(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn with_k(mut self, k: usize) -> Result<Self, ReduceError> {
        if k == 0 || k > self.p() {
            return Err(ReduceError::BadK { k, p: self.p() });
        }
        self.k = k;
        Ok(self)
    }

    /// W as a p x k row-major matrix.
    pub fn projection(&self) -> Vec<f64> {
        let (p, k) = (self.p(), self.k);
        let mut w = vec![0.0; p * k];
        for (j, vec) in self.eigenvectors[..k].iter().enumerate() {
            for i in 0..p {
                w[i * k + j] = vec[i];
            }
        }
        w
    }

    /// Projects one raw (unstandardized) row onto the first k components.
    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        let p = self.p();
        let mut s = vec![0.0; p];
        self.standardizer.apply_row(row, &mut s);
        for (j, o) in out.iter_mut().enumerate().take(self.k) {
            *o = self.eigenvectors[j].iter().zip(&s).map(|(a, b)| a * b).sum();
        }
    }

    /// Maps component scores back to the raw feature space.
    pub fn inverse_row(&self, z: &[f64]) -> Vec<f64> {
        let p = self.p();
        let mut s = vec![0.0; p];
        for (j, zj) in z.iter().enumerate() {
            for i in 0..p {
                s[i] += zj * self.eigenvectors[j][i];
            }
        }
        self.standardizer.inverse_row(&s)
    }
}

/// Sample covariance of the standardized matrix.
/// Projects every valid cell onto the first k components (bands `pc1..pck`).
pub fn transform_stack(stack: &GridStack, model: &PcaModel) -> GridStack {
    let names = (1..=model.k).map(|i| format!("pc{i}")).collect();
    map_stack(stack, names, |row, out| model.transform_row(row, out))
}

/// Content hash identifying a fitted PCA model.
pub fn pca_hash(model: &PcaModel) -> String {
    sha256_hex(serde_json::to_string(model).expect("pca model serializes").as_bytes())
}

pub fn covariance(xs: &FeatureMatrix) -> Vec<f64> {
    let p = xs.p;
    let mut c = vec![0.0; p * p];
    for i in 0..xs.n {
        let row = xs.row(i);
        for a in 0..p {
            let ra = row[a];
            for b in a..p {
                c[a * p + b] += ra * row[b];
            }
        }
    }
    let denom = xs.n as f64 - 1.0;
    for a in 0..p {
        for b in a..p {
            let v = c[a * p + b] / denom;
            c[a * p + b] = v;
            c[b * p + a] = v;
        }
    }
    c
}

pub fn pca_fit(x: &FeatureMatrix, standardizer: &Standardizer) -> Result<PcaModel, ReduceError> {
    if x.n < 2 {
        return Err(ReduceError::TooFewSamples { needed: 2, got: x.n });
    }
    if x.p < 1 {
        return Err(ReduceError::TooFewFeatures { needed: 1, got: x.p });
    }
    check_finite(x)?;
    let xs = standardizer.transform(x)?;
    let c = covariance(&xs);
    let (values, vectors) = jacobi_eigen(&c, x.p);

    let mut order: Vec<usize> = (0..x.p).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    let mut eigenvalues = Vec::with_capacity(x.p);
    let mut eigenvectors = Vec::with_capacity(x.p);
    for &i in &order {
        eigenvalues.push(values[i].max(0.0));
        let mut v = vectors[i].clone();
        // sign convention: largest-magnitude entry positive
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
        if lead < 0.0 {
            v.iter_mut().for_each(|e| *e = -*e);
        }
        eigenvectors.push(v);
    }
    let total: f64 = eigenvalues.iter().sum();
    let mut acc = 0.0;
    let cum_explained = eigenvalues
        .iter()
        .map(|l| {
            acc += l;
            if total > 0.0 {
                (acc / total).min(1.0)
            } else {
                1.0
            }
        })
        .collect();
    Ok(PcaModel {
        eigenvectors,
        eigenvalues,
        cum_explained,
        k: x.p,
        standardizer: standardizer.clone(),
    })
}

/// Smallest k whose cumulative explained variance reaches `threshold`.
pub fn select_k(model: &PcaModel, threshold: f64) -> usize {
    model
        .cum_explained
        .iter()
        .position(|&c| c >= threshold)
        .map_or(model.p(), |i| i + 1)
}

pub fn pca_transform(x: &FeatureMatrix, model: &PcaModel) -> Result<FeatureMatrix, ReduceError> {
    if x.p != model.p() {
        return Err(ReduceError::DimensionMismatch {
            expected: model.p(),
            got: x.p,
        });
    }
    let k = model.k;
    let mut data = vec![0.0; x.n * k];
    for i in 0..x.n {
        model.transform_row(x.row(i), &mut data[i * k..(i + 1) * k]);
    }
    Ok(FeatureMatrix {
        n: x.n,
        p: k,
        data,
        labels: x.labels.clone(),
    })
}

// ---------------------------------------------------------------------------
// Multicollinearity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCollinearity {
    pub feature: String,
    pub r2: f64,
    pub tolerance: f64,
    pub vif: f64,
    pub tolerance_ok: bool,
    pub vif_ok: bool,
    /// Set when the tolerance hit the floor (perfect linear dependence).
    pub infinite_vif: bool,
}

impl FeatureCollinearity {
    pub fn from_r2(feature: String, r2: f64) -> Self {
        let r2 = r2.clamp(0.0, 1.0);
        let raw = 1.0 - r2;
        let infinite_vif = raw < TOLERANCE_FLOOR;
        let tolerance = raw.max(TOLERANCE_FLOOR);
        let vif = 1.0 / tolerance;
        Self {
            feature,
            r2,
            tolerance,
            vif,
            tolerance_ok: tolerance > TOLERANCE_THRESHOLD,
            vif_ok: vif < VIF_THRESHOLD,
            infinite_vif,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollinearityReport {
    pub features: Vec<FeatureCollinearity>,
}

impl CollinearityReport {
    pub fn with_names(mut self, names: &[String]) -> Self {
        for (f, n) in self.features.iter_mut().zip(names) {
            f.feature = n.clone();
        }
        self
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,r2,tolerance,vif,tolerance_ok,vif_ok\n");
        for f in &self.features {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f.feature, f.r2, f.tolerance, f.vif, f.tolerance_ok, f.vif_ok
            ));
        }
        out
    }
}

/// R^2 of the least-squares regression (with intercept) of `y` on the columns
/// of `x`, solved through the normal equations. Linearly dependent regressors
/// are dropped during the Cholesky factorization.
pub fn r_squared(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let n = y.len();
    let q = x.len();
    let center = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / n as f64;
        v.iter().map(|e| e - m).collect::<Vec<f64>>()
    };
    let yc = center(y);
    let tss: f64 = yc.iter().map(|e| e * e).sum();
    if tss <= 0.0 {
        // constant response is fully explained by the intercept
        return 1.0;
    }
    let xc: Vec<Vec<f64>> = x.iter().map(|c| center(c)).collect();
    let mut g = vec![0.0; q * q];
    let mut rhs = vec![0.0; q];
    for a in 0..q {
        for b in a..q {
            let v: f64 = xc[a].iter().zip(&xc[b]).map(|(u, w)| u * w).sum();
            g[a * q + b] = v;
            g[b * q + a] = v;
        }
        rhs[a] = xc[a].iter().zip(&yc).map(|(u, w)| u * w).sum();
    }
    let beta = cholesky_solve(&mut g, &rhs, q);
    let rss: f64 = (0..n)
        .map(|i| {
            let fit: f64 = (0..q).map(|a| beta[a] * xc[a][i]).sum();
            (yc[i] - fit).powi(2)
        })
        .sum();
    (1.0 - rss / tss).clamp(0.0, 1.0)
}

/// Solves G b = r for symmetric positive semidefinite G; columns whose pivot
/// collapses relative to the diagonal scale get coefficient zero.
fn cholesky_solve(g: &mut [f64], r: &[f64], q: usize) -> Vec<f64> {
    let scale = (0..q).map(|i| g[i * q + i]).fold(0.0f64, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; q * q];
    let mut active = vec![true; q];
    for j in 0..q {
        let mut d = g[j * q + j];
        for k in 0..j {
            d -= l[j * q + k] * l[j * q + k];
        }
        if d <= tol {
            active[j] = false;
            continue;
        }
        let d = d.sqrt();
        l[j * q + j] = d;
        for i in j + 1..q {
            let mut s = g[i * q + j];
            for k in 0..j {
                s -= l[i * q + k] * l[j * q + k];
            }
            l[i * q + j] = s / d;
        }
    }
    let mut z = vec![0.0; q];
    for i in 0..q {
        if !active[i] {
            continue;
        }
        let mut s = r[i];
        for k in 0..i {
            s -= l[i * q + k] * z[k];
        }
        z[i] = s / l[i * q + i];
    }
    let mut b = vec![0.0; q];
    for i in (0..q).rev() {
        if !active[i] {
            continue;
        }
        let mut s = z[i];
        for k in i + 1..q {
            s -= l[k * q + i] * b[k];
        }
        b[i] = s / l[i * q + i];
    }
    b
}

pub fn collinearity(x: &FeatureMatrix) -> Result<CollinearityReport, ReduceError> {
    if x.p < 2 {
        return Err(ReduceError::TooFewFeatures { needed: 2, got: x.p });
    }
    if x.n <= x.p {
        return Err(ReduceError::Underdetermined { n: x.n, p: x.p });
    }
    check_finite(x)?;
    let cols: Vec<Vec<f64>> = (0..x.p).map(|j| x.column(j)).collect();
    let features = (0..x.p)
        .map(|i| {
            let others: Vec<Vec<f64>> = (0..x.p).filter(|&j| j != i).map(|j| cols[j].clone()).collect();
            FeatureCollinearity::from_r2(format!("x{}", i + 1), r_squared(&others, &cols[i]))
        })
        .collect();
    Ok(CollinearityReport { features })
}
