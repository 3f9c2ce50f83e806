//! Deterministic numerical primitives: covariance (plain, weighted and
//! streamed), symmetric eigendecomposition, whitening and least squares.
//!
//! Covariances use the population normalization (divide by the total
//! weight, not weight minus one). Streamed accumulation is sequential in
//! input order, so results are reproducible bit for bit.

mod eigen;

pub use eigen::{eigh, SymmetricEigen};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Default relative eigenvalue cutoff for whitening.
pub const DEFAULT_RANK_TOL: f64 = 1e-7;

fn check_finite(data: ArrayView2<'_, f64>, what: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn validate_weights(weights: ArrayView1<'_, f64>, expected: usize) -> Result<f64> {
    if weights.len() != expected {
        return Err(Error::WeightLength {
            expected,
            found: weights.len(),
        });
    }
    let mut total = 0.0;
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidWeights);
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::InvalidWeights);
    }
    Ok(total)
}

/// Covariance matrix and mean of the rows of `data`.
///
/// With weights the result is `Σ w_i (x_i-μ_w)(x_i-μ_w)ᵀ / Σ w_i` around the
/// weighted mean `μ_w`.
pub fn covariance(
    data: ArrayView2<'_, f64>,
    weights: Option<ArrayView1<'_, f64>>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let t = data.nrows();
    if t < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: t,
        });
    }
    check_finite(data, "covariance input")?;
    let mut mean_acc = MeanAccumulator::new(data.ncols());
    let mut gram = GramAccumulator::new(data.ncols());
    match weights {
        None => {
            mean_acc.add_rows(data, None)?;
            let mean = mean_acc.finish()?;
            let centered = &data - &mean.view().insert_axis(Axis(0));
            gram.add_rows(centered.view(), None)?;
            Ok((gram.finish()?, mean))
        }
        Some(w) => {
            validate_weights(w, t)?;
            mean_acc.add_rows(data, Some(w))?;
            let mean = mean_acc.finish()?;
            let centered = &data - &mean.view().insert_axis(Axis(0));
            gram.add_rows(centered.view(), Some(w))?;
            Ok((gram.finish()?, mean))
        }
    }
}

/// Running (optionally weighted) mean of streamed rows.
#[derive(Debug, Clone)]
pub struct MeanAccumulator {
    sum: Array1<f64>,
    weight: f64,
}

impl MeanAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: Array1::zeros(dim),
            weight: 0.0,
        }
    }

    pub fn add_rows(
        &mut self,
        rows: ArrayView2<'_, f64>,
        weights: Option<ArrayView1<'_, f64>>,
    ) -> Result<()> {
        if rows.ncols() != self.sum.len() {
            return Err(Error::DimensionMismatch {
                what: "mean accumulator",
                expected: self.sum.len(),
                found: rows.ncols(),
            });
        }
        match weights {
            None => {
                for row in rows.rows() {
                    self.sum += &row;
                }
                self.weight += rows.nrows() as f64;
            }
            Some(w) => {
                if w.len() != rows.nrows() {
                    return Err(Error::WeightLength {
                        expected: rows.nrows(),
                        found: w.len(),
                    });
                }
                for (row, &wi) in rows.rows().into_iter().zip(w) {
                    self.sum.scaled_add(wi, &row);
                }
                self.weight += w.sum();
            }
        }
        Ok(())
    }

    pub fn total_weight(&self) -> f64 {
        self.weight
    }

    pub fn finish(self) -> Result<Array1<f64>> {
        if self.weight <= 0.0 {
            return Err(Error::TooFewSamples {
                needed: 1,
                found: 0,
            });
        }
        Ok(self.sum / self.weight)
    }
}

/// Running second-moment matrix `Σ w_i x_i x_iᵀ / Σ w_i` of streamed rows.
///
/// Rows are not centered here; callers center them (second pass of a
/// two-pass covariance) or pass differences, whose raw second moment is
/// the slowness measure.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    sum: Array2<f64>,
    weight: f64,
    rows: usize,
}

impl GramAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: Array2::zeros((dim, dim)),
            weight: 0.0,
            rows: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.sum.nrows()
    }

    pub fn add_rows(
        &mut self,
        rows: ArrayView2<'_, f64>,
        weights: Option<ArrayView1<'_, f64>>,
    ) -> Result<()> {
        if rows.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "gram accumulator",
                expected: self.dim(),
                found: rows.ncols(),
            });
        }
        if rows.nrows() == 0 {
            return Ok(());
        }
        match weights {
            None => {
                general_mat_mul(1.0, &rows.t(), &rows, 1.0, &mut self.sum);
                self.weight += rows.nrows() as f64;
            }
            Some(w) => {
                if w.len() != rows.nrows() {
                    return Err(Error::WeightLength {
                        expected: rows.nrows(),
                        found: w.len(),
                    });
                }
                // Scaling by sqrt(w) keeps unit weights bit-identical to the
                // unweighted path.
                let mut scaled = rows.to_owned();
                for (mut row, &wi) in scaled.rows_mut().into_iter().zip(w) {
                    if wi != 1.0 {
                        row *= wi.sqrt();
                    }
                }
                general_mat_mul(1.0, &scaled.t(), &scaled, 1.0, &mut self.sum);
                self.weight += w.sum();
            }
        }
        self.rows += rows.nrows();
        Ok(())
    }

    pub fn rows_seen(&self) -> usize {
        self.rows
    }

    pub fn total_weight(&self) -> f64 {
        self.weight
    }

    /// Normalized, exactly symmetric moment matrix.
    pub fn finish(self) -> Result<Array2<f64>> {
        if self.weight <= 0.0 {
            return Err(if self.rows == 0 {
                Error::TooFewSamples {
                    needed: 1,
                    found: 0,
                }
            } else {
                Error::InvalidWeights
            });
        }
        let mut m = self.sum / self.weight;
        symmetrize(&mut m);
        Ok(m)
    }
}

pub(crate) fn symmetrize(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

/// Flips `v` so its entry of largest magnitude (first one on ties) is positive.
pub(crate) fn fix_sign(mut v: ndarray::ArrayViewMut1<'_, f64>) -> bool {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.mapv_inplace(|x| -x);
        true
    } else {
        false
    }
}

/// Affine map to zero mean and identity covariance on its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    mean: Array1<f64>,
    /// K×N, rows are eigenvectors scaled by `1/sqrt(eigenvalue)`, largest
    /// variance first.
    projection: Array2<f64>,
}

impl WhiteningTransform {
    pub fn from_parts(mean: Array1<f64>, projection: Array2<f64>) -> Result<Self> {
        if projection.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                what: "whitening projection",
                expected: mean.len(),
                found: projection.ncols(),
            });
        }
        Ok(Self { mean, projection })
    }

    /// Builds the transform from an already accumulated mean and covariance.
    pub fn from_moments(
        mean: Array1<f64>,
        cov: ArrayView2<'_, f64>,
        rank_tol: f64,
    ) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "whitening covariance",
                expected: n,
                found: cov.nrows(),
            });
        }
        let eig = eigh(cov)?;
        let largest = eig.values.iter().cloned().fold(0.0f64, f64::max);
        let scale = 1.0 + mean.iter().fold(0.0f64, |m, v| m.max(v * v));
        if largest <= 1e-24 * scale {
            return Err(Error::ConstantData);
        }
        let cutoff = rank_tol * largest;
        let keep: Vec<usize> = (0..n).rev().filter(|&i| eig.values[i] > cutoff).collect();
        let mut projection = Array2::zeros((keep.len(), n));
        for (row, &i) in keep.iter().enumerate() {
            let mut r = projection.row_mut(row);
            r.assign(&eig.vectors.column(i));
            fix_sign(r.view_mut());
            r /= eig.values[i].sqrt();
        }
        Ok(Self { mean, projection })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn projection(&self) -> &Array2<f64> {
        &self.projection
    }

    pub fn apply(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if data.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "whitening input",
                expected: self.input_dim(),
                found: data.ncols(),
            });
        }
        let centered = &data - &self.mean.view().insert_axis(Axis(0));
        Ok(centered.dot(&self.projection.t()))
    }
}

pub fn fit_whitening(data: ArrayView2<'_, f64>, rank_tol: f64) -> Result<WhiteningTransform> {
    let (cov, mean) = covariance(data, None)?;
    WhiteningTransform::from_moments(mean, cov.view(), rank_tol)
}

/// Ordinary least squares `y ≈ X·coef + intercept`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegressor {
    pub coef: Array1<f64>,
    pub intercept: f64,
}

impl LinearRegressor {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.coef.len() {
            return Err(Error::DimensionMismatch {
                what: "regression input",
                expected: self.coef.len(),
                found: x.ncols(),
            });
        }
        Ok(x.dot(&self.coef) + self.intercept)
    }

    pub fn predict_one(&self, x: ArrayView1<'_, f64>) -> f64 {
        x.dot(&self.coef) + self.intercept
    }
}

const REGRESSION_RANK_TOL: f64 = 1e-12;

/// Least squares through the centered normal equations, solved in the
/// eigenbasis of the input covariance. Directions with (relative) zero
/// variance are dropped, which yields the minimum-norm solution when `x` is
/// rank deficient. Constant inputs give zero coefficients.
pub fn fit_linear_regression(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
) -> Result<LinearRegressor> {
    let t = x.nrows();
    if y.len() != t {
        return Err(Error::DimensionMismatch {
            what: "regression targets",
            expected: t,
            found: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression targets"));
    }
    let (cov, mean) = covariance(x, None)?;
    let y_mean = y.sum() / t as f64;
    let centered = &x - &mean.view().insert_axis(Axis(0));
    let yc = y.mapv(|v| v - y_mean);
    let cross = centered.t().dot(&yc) / t as f64;

    let eig = eigh(cov.view())?;
    let largest = eig.values.iter().cloned().fold(0.0f64, f64::max);
    let mut coef = Array1::zeros(x.ncols());
    if largest > 0.0 {
        let cutoff = REGRESSION_RANK_TOL * largest;
        for (i, &lambda) in eig.values.iter().enumerate() {
            if lambda > cutoff {
                let v = eig.vectors.column(i);
                let proj = v.dot(&cross) / lambda;
                coef.scaled_add(proj, &v);
            }
        }
    }
    let intercept = y_mean - mean.dot(&coef);
    Ok(LinearRegressor { coef, intercept })
}

/// Orthonormalizes the columns of `q` in place with two rounds of modified
/// Gram–Schmidt. The result matches the Q factor of a QR decomposition with
/// a positive diagonal in R.
pub fn orthonormalize_columns(q: &mut Array2<f64>) {
    let l = q.ncols();
    for _ in 0..2 {
        for j in 0..l {
            for i in 0..j {
                let d = q.column(i).dot(&q.column(j));
                let (ci, mut cj) = q.multi_slice_mut((s![.., i], s![.., j]));
                cj.scaled_add(-d, &ci);
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            if norm > 0.0 {
                q.column_mut(j).mapv_inplace(|v| v / norm);
            }
        }
    }
}
