//! Linear and quadratic slow feature analysis.
//!
//! Linear SFA whitens the input, takes temporal differences of the whitened
//! signal and keeps the directions in which those differences have the
//! least variance. Outputs are therefore zero mean, unit variance,
//! decorrelated and ordered by slowness `Δ = ⟨ẏ²⟩`.
//!
//! A [`QuadraticSfaNode`] is one layer of a hierarchical network:
//! linear SFA reduction, quadratic expansion, training-time noise, a second
//! linear SFA and clipping.
//!
//! Fitting streams its input through the [`SeriesSource`] trait so patch
//! data never has to be materialized at once. Every fit makes two passes
//! over the data (mean, then centered moments).

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numcore::{
    eigh, fix_sign, symmetrize, GramAccumulator, MeanAccumulator, WhiteningTransform,
    DEFAULT_RANK_TOL,
};

pub const DEFAULT_CLIP_BOUND: f64 = 4.0;
pub const DEFAULT_NOISE_STD: f64 = 1e-4;
pub const DEFAULT_MID_DIM: usize = 32;

/// One non-negative weight per consecutive difference of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights(Array1<f64>);

impl SampleWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let mut positive = false;
        for &w in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidWeights);
            }
            positive |= w > 0.0;
        }
        if !positive {
            return Err(Error::InvalidWeights);
        }
        Ok(Self(Array1::from(weights)))
    }

    pub fn uniform(len: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }
}

/// How a series is cut into differences: episode starts, optional weights
/// and whether pairs across an episode start are dropped.
#[derive(Debug, Clone, Copy)]
pub struct TimeStructure<'a> {
    /// Indices at which a new episode begins (strictly increasing, > 0).
    pub boundaries: &'a [usize],
    pub weights: Option<&'a SampleWeights>,
    pub skip_boundaries: bool,
}

impl<'a> TimeStructure<'a> {
    pub fn contiguous() -> Self {
        Self {
            boundaries: &[],
            weights: None,
            skip_boundaries: true,
        }
    }

    pub fn new(boundaries: &'a [usize], weights: Option<&'a SampleWeights>) -> Self {
        Self {
            boundaries,
            weights,
            skip_boundaries: true,
        }
    }

    pub fn with_skip(mut self, skip: bool) -> Self {
        self.skip_boundaries = skip;
        self
    }

    /// Resolves the structure for a series of `len` steps.
    pub(crate) fn plan(&self, len: usize) -> Result<DifferencePlan> {
        if len < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                found: len,
            });
        }
        let mut prev = 0usize;
        for &b in self.boundaries {
            if b == 0 || b >= len || b <= prev && prev != 0 {
                return Err(Error::BoundaryOutOfRange { boundary: b, len });
            }
            prev = b;
        }
        if let Some(w) = self.weights {
            if w.len() != len - 1 {
                return Err(Error::WeightLength {
                    expected: len - 1,
                    found: w.len(),
                });
            }
        }
        let mut starts = Vec::with_capacity(len - 1);
        let mut next_boundary = self.boundaries.iter().peekable();
        for k in 0..(len - 1) {
            while next_boundary.peek().is_some_and(|&&b| b <= k) {
                next_boundary.next();
            }
            let crosses = next_boundary.peek().is_some_and(|&&b| b == k + 1);
            if crosses && self.skip_boundaries {
                continue;
            }
            starts.push(k);
        }
        if starts.is_empty() {
            return Err(Error::TooFewSamples {
                needed: 1,
                found: 0,
            });
        }
        let weights = self
            .weights
            .map(|w| Array1::from_iter(starts.iter().map(|&k| w.0[k])));
        if let Some(w) = &weights {
            if w.sum() <= 0.0 {
                return Err(Error::InvalidWeights);
            }
        }
        Ok(DifferencePlan {
            len,
            starts,
            weights,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DifferencePlan {
    len: usize,
    /// `k` for every used pair `(k, k+1)`.
    starts: Vec<usize>,
    weights: Option<Array1<f64>>,
}

impl DifferencePlan {
    fn differences(&self, data: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.starts.len(), data.ncols()));
        for (mut row, &k) in out.rows_mut().into_iter().zip(&self.starts) {
            row.assign(&data.row(k + 1));
            row -= &data.row(k);
        }
        out
    }

    fn weights(&self) -> Option<ArrayView1<'_, f64>> {
        self.weights.as_ref().map(|w| w.view())
    }
}

/// Consecutive differences `x(t+1) - x(t)`, skipping pairs that straddle an
/// episode boundary unless `skip_boundaries` is false.
pub fn temporal_differences(
    data: ArrayView2<'_, f64>,
    boundaries: &[usize],
    skip_boundaries: bool,
) -> Result<Array2<f64>> {
    let plan = TimeStructure::new(boundaries, None)
        .with_skip(skip_boundaries)
        .plan(data.nrows())?;
    Ok(plan.differences(data))
}

/// A collection of equally long, parallel time series of the same
/// dimension (e.g. one per patch position). Differences are taken within
/// each series only.
pub trait SeriesSource {
    fn dim(&self) -> usize;
    /// Time steps in every series.
    fn len(&self) -> usize;
    fn series_count(&self) -> usize;
    /// Series `index` as a `len × dim` matrix.
    fn series(&self, index: usize) -> Result<Array2<f64>>;
}

/// A single in-memory series.
pub struct MatrixSource<'a>(pub ArrayView2<'a, f64>);

impl SeriesSource for MatrixSource<'_> {
    fn dim(&self) -> usize {
        self.0.ncols()
    }
    fn len(&self) -> usize {
        self.0.nrows()
    }
    fn series_count(&self) -> usize {
        1
    }
    fn series(&self, _index: usize) -> Result<Array2<f64>> {
        Ok(self.0.to_owned())
    }
}

/// Affine map realizing linear slow features: whitening followed by a
/// rotation in whitened space.
#[derive(Debug, Clone)]
pub struct LinearSfaTransform {
    whitening: WhiteningTransform,
    /// M×K, orthonormal rows.
    rotation: Array2<f64>,
    /// Slowness of each output, ascending.
    delta: Array1<f64>,
    // combined map, derived from the above
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl PartialEq for LinearSfaTransform {
    fn eq(&self, other: &Self) -> bool {
        self.whitening == other.whitening
            && self.rotation == other.rotation
            && self.delta == other.delta
    }
}

impl LinearSfaTransform {
    pub fn from_parts(
        whitening: WhiteningTransform,
        rotation: Array2<f64>,
        delta: Array1<f64>,
    ) -> Result<Self> {
        if rotation.ncols() != whitening.output_dim() {
            return Err(Error::DimensionMismatch {
                what: "sfa rotation",
                expected: whitening.output_dim(),
                found: rotation.ncols(),
            });
        }
        if delta.len() != rotation.nrows() {
            return Err(Error::DimensionMismatch {
                what: "sfa slowness values",
                expected: rotation.nrows(),
                found: delta.len(),
            });
        }
        let weight = rotation.dot(whitening.projection());
        let bias = -weight.dot(whitening.mean());
        Ok(Self {
            whitening,
            rotation,
            delta,
            weight,
            bias,
        })
    }

    /// Solves the SFA eigenproblem from accumulated statistics: `cov` is the
    /// input covariance around `mean`, `diff_moment` the (weighted) second
    /// moment of temporal differences.
    pub fn from_moments(
        mean: Array1<f64>,
        cov: ArrayView2<'_, f64>,
        diff_moment: ArrayView2<'_, f64>,
        out_dim: usize,
        rank_tol: f64,
    ) -> Result<Self> {
        if out_dim == 0 {
            return Err(Error::Config("output dimension must be positive".into()));
        }
        let whitening = WhiteningTransform::from_moments(mean, cov, rank_tol)?;
        let k = whitening.output_dim();
        if out_dim > k {
            return Err(Error::RankDeficient {
                requested: out_dim,
                available: k,
            });
        }
        let p = whitening.projection();
        let mut white_diff = p.dot(&diff_moment).dot(&p.t());
        symmetrize(&mut white_diff);
        let eig = eigh(white_diff.view())?;
        let mut rotation = eig.vectors.slice(s![.., ..out_dim]).t().to_owned();
        let delta = eig.values.slice(s![..out_dim]).to_owned();

        // Sign convention: largest input loading positive.
        let weight = rotation.dot(p);
        for (j, w) in weight.rows().into_iter().enumerate() {
            let mut w = w.to_owned();
            if fix_sign(w.view_mut()) {
                rotation.row_mut(j).mapv_inplace(|v| -v);
            }
        }
        Self::from_parts(whitening, rotation, delta)
    }

    pub fn input_dim(&self) -> usize {
        self.whitening.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.rotation.nrows()
    }

    pub fn whitening(&self) -> &WhiteningTransform {
        &self.whitening
    }

    pub fn rotation(&self) -> &Array2<f64> {
        &self.rotation
    }

    pub fn delta(&self) -> &Array1<f64> {
        &self.delta
    }

    /// Combined `M×N` input loadings.
    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn apply(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if data.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "sfa input",
                expected: self.input_dim(),
                found: data.ncols(),
            });
        }
        let mut out = data.dot(&self.weight.t());
        out += &self.bias.view().insert_axis(Axis(0));
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SfaOptions {
    pub rank_tol: f64,
}

impl Default for SfaOptions {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

/// Fits linear SFA on a single series.
pub fn fit_linear_sfa(
    data: ArrayView2<'_, f64>,
    out_dim: usize,
    boundaries: &[usize],
    weights: Option<&SampleWeights>,
) -> Result<LinearSfaTransform> {
    fit_linear_sfa_stream(
        &MatrixSource(data),
        out_dim,
        TimeStructure::new(boundaries, weights),
        SfaOptions::default(),
    )
}

/// Fits linear SFA over all series of `source`.
pub fn fit_linear_sfa_stream(
    source: &dyn SeriesSource,
    out_dim: usize,
    timing: TimeStructure<'_>,
    opts: SfaOptions,
) -> Result<LinearSfaTransform> {
    let plan = timing.plan(source.len())?;
    let dim = source.dim();

    let mut mean_acc = MeanAccumulator::new(dim);
    for i in 0..source.series_count() {
        let x = source.series(i)?;
        check_series(&x, source)?;
        mean_acc.add_rows(x.view(), None)?;
    }
    let mean = mean_acc.finish()?;

    let mut cov = GramAccumulator::new(dim);
    let mut diff = GramAccumulator::new(dim);
    for i in 0..source.series_count() {
        let mut x = source.series(i)?;
        diff.add_rows(plan.differences(x.view()).view(), plan.weights())?;
        x -= &mean.view().insert_axis(Axis(0));
        cov.add_rows(x.view(), None)?;
    }
    LinearSfaTransform::from_moments(
        mean,
        cov.finish()?.view(),
        diff.finish()?.view(),
        out_dim,
        opts.rank_tol,
    )
}

fn check_series(x: &Array2<f64>, source: &dyn SeriesSource) -> Result<()> {
    if x.nrows() != source.len() || x.ncols() != source.dim() {
        return Err(Error::DimensionMismatch {
            what: "series shape",
            expected: source.len() * source.dim(),
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sfa input"));
    }
    Ok(())
}

/// Dimension of the quadratic expansion of a `k`-vector.
pub fn expanded_dim(k: usize) -> usize {
    k + k * (k + 1) / 2
}

/// `[v_1..v_K, v_i·v_j for i ≤ j]`, quadratic terms in row-major upper
/// triangular order. No constant term.
pub fn quadratic_expand(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let k = v.len();
    let mut out = Array1::zeros(expanded_dim(k));
    expand_into(v, out.as_slice_mut().expect("fresh array is contiguous"));
    out
}

/// Row-wise [`quadratic_expand`].
pub fn quadratic_expand_rows(data: ArrayView2<'_, f64>) -> Array2<f64> {
    let k = data.ncols();
    let mut out = Array2::zeros((data.nrows(), expanded_dim(k)));
    for (row, mut dst) in data.rows().into_iter().zip(out.rows_mut()) {
        expand_into(row, dst.as_slice_mut().expect("fresh array is contiguous"));
    }
    out
}

fn expand_into(v: ArrayView1<'_, f64>, out: &mut [f64]) {
    let k = v.len();
    let owned;
    let v = match v.as_slice() {
        Some(s) => s,
        None => {
            owned = v.to_vec();
            &owned
        }
    };
    let (lin, quad) = out.split_at_mut(k);
    lin.copy_from_slice(v);
    let mut rest = quad;
    for (i, &vi) in v.iter().enumerate() {
        let (head, tail) = rest.split_at_mut(k - i);
        for (o, &vj) in head.iter_mut().zip(&v[i..]) {
            *o = vi * vj;
        }
        rest = tail;
    }
}

/// Zero mean, unit variance, decorrelation and ordering as measured on a
/// concrete output signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    pub samples: usize,
    pub max_abs_mean: f64,
    pub max_var_deviation: f64,
    pub max_abs_corr: f64,
    /// Measured `⟨ẏ_j²⟩` per output.
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ConstraintTolerance {
    pub mean: f64,
    pub var: f64,
    pub corr: f64,
}

impl ConstraintTolerance {
    pub const STRICT: Self = Self {
        mean: 1e-8,
        var: 1e-6,
        corr: 1e-6,
    };
}

impl ConstraintReport {
    pub fn delta_ascending(&self) -> bool {
        self.delta
            .windows(2)
            .all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0))
    }

    pub fn satisfies(&self, tol: ConstraintTolerance) -> bool {
        self.max_abs_mean <= tol.mean
            && self.max_var_deviation <= tol.var
            && self.max_abs_corr <= tol.corr
            && self.delta_ascending()
    }
}

impl std::fmt::Display for ConstraintReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "n={} |mean|≤{:.2e} |var-1|≤{:.2e} |corr|≤{:.2e} Δ[0]={:.4e} Δ ascending={}",
            self.samples,
            self.max_abs_mean,
            self.max_var_deviation,
            self.max_abs_corr,
            self.delta.first().copied().unwrap_or(f64::NAN),
            self.delta_ascending()
        )
    }
}

/// Streams output signals into a [`ConstraintReport`].
pub(crate) struct ConstraintAccumulator<'p> {
    plan: &'p DifferencePlan,
    sum: Array1<f64>,
    gram: GramAccumulator,
    diff: GramAccumulator,
}

impl<'p> ConstraintAccumulator<'p> {
    pub(crate) fn new(dim: usize, plan: &'p DifferencePlan) -> Self {
        Self {
            plan,
            sum: Array1::zeros(dim),
            gram: GramAccumulator::new(dim),
            diff: GramAccumulator::new(dim),
        }
    }

    pub(crate) fn add_series(&mut self, y: ArrayView2<'_, f64>) -> Result<()> {
        debug_assert_eq!(y.nrows(), self.plan.len);
        self.sum += &y.sum_axis(Axis(0));
        self.gram.add_rows(y, None)?;
        self.diff
            .add_rows(self.plan.differences(y).view(), self.plan.weights())?;
        Ok(())
    }

    pub(crate) fn finish(self) -> Result<ConstraintReport> {
        let samples = self.gram.rows_seen();
        let mean = &self.sum / samples as f64;
        let mut cov = self.gram.finish()?;
        // Outputs are centered to ~1e-15, so the one-pass correction is exact
        // enough here.
        for i in 0..cov.nrows() {
            for j in 0..cov.ncols() {
                cov[[i, j]] -= mean[i] * mean[j];
            }
        }
        let diff = self.diff.finish()?;
        let m = cov.nrows();
        let mut max_var_deviation = 0.0f64;
        let mut max_abs_corr = 0.0f64;
        for i in 0..m {
            max_var_deviation = max_var_deviation.max((cov[[i, i]] - 1.0).abs());
            for j in 0..i {
                let corr = cov[[i, j]] / (cov[[i, i]] * cov[[j, j]]).sqrt();
                max_abs_corr = max_abs_corr.max(corr.abs());
            }
        }
        Ok(ConstraintReport {
            samples,
            max_abs_mean: mean.iter().fold(0.0f64, |a, v| a.max(v.abs())),
            max_var_deviation,
            max_abs_corr,
            delta: (0..m).map(|j| diff[[j, j]]).collect(),
        })
    }
}

/// Measures the SFA constraints on an output series.
pub fn constraint_report(
    outputs: ArrayView2<'_, f64>,
    timing: TimeStructure<'_>,
) -> Result<ConstraintReport> {
    let plan = timing.plan(outputs.nrows())?;
    let mut acc = ConstraintAccumulator::new(outputs.ncols(), &plan);
    acc.add_series(outputs)?;
    acc.finish()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeParams {
    pub mid_dim: usize,
    pub out_dim: usize,
    pub noise_std: f64,
    pub clip_bound: f64,
    pub rank_tol: f64,
    pub seed: u64,
}

impl Default for NodeParams {
    fn default() -> Self {
        Self {
            mid_dim: DEFAULT_MID_DIM,
            out_dim: 32,
            noise_std: DEFAULT_NOISE_STD,
            clip_bound: DEFAULT_CLIP_BOUND,
            rank_tol: DEFAULT_RANK_TOL,
            seed: 0,
        }
    }
}

/// One quadratic SFA layer: reduce → expand → (noise) → extract → clip.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSfaNode {
    reduce: LinearSfaTransform,
    extract: LinearSfaTransform,
    /// Training-time noise level, kept for reference only.
    noise_std: f64,
    clip_bound: f64,
}

#[derive(Debug, Clone)]
pub struct NodeFitReport {
    pub reduce: ConstraintReport,
    /// Measured on the noisy expanded training signal, before clipping.
    pub extract: ConstraintReport,
    /// Fraction of training outputs that clipping changes.
    pub clip_fraction: f64,
}

impl QuadraticSfaNode {
    pub fn from_parts(
        reduce: LinearSfaTransform,
        extract: LinearSfaTransform,
        noise_std: f64,
        clip_bound: f64,
    ) -> Result<Self> {
        if extract.input_dim() != expanded_dim(reduce.output_dim()) {
            return Err(Error::DimensionMismatch {
                what: "node expansion",
                expected: expanded_dim(reduce.output_dim()),
                found: extract.input_dim(),
            });
        }
        if !(clip_bound > 0.0) {
            return Err(Error::Config("clip bound must be positive".into()));
        }
        Ok(Self {
            reduce,
            extract,
            noise_std,
            clip_bound,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.reduce.input_dim()
    }

    pub fn mid_dim(&self) -> usize {
        self.reduce.output_dim()
    }

    pub fn expanded_dim(&self) -> usize {
        self.extract.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.extract.output_dim()
    }

    pub fn reduce(&self) -> &LinearSfaTransform {
        &self.reduce
    }

    pub fn extract(&self) -> &LinearSfaTransform {
        &self.extract
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip_bound
    }

    /// Node output before clipping.
    pub fn apply_unclipped(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if data.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "node input",
                expected: self.input_dim(),
                found: data.ncols(),
            });
        }
        let reduced = self.reduce.apply(data)?;
        self.extract
            .apply(quadratic_expand_rows(reduced.view()).view())
    }

    pub fn apply(&self, data: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut out = self.apply_unclipped(data)?;
        let b = self.clip_bound;
        out.mapv_inplace(|v| v.clamp(-b, b));
        Ok(out)
    }
}

/// Fits a quadratic node on a single series.
pub fn fit_quadratic_node(
    data: ArrayView2<'_, f64>,
    params: NodeParams,
    boundaries: &[usize],
    weights: Option<&SampleWeights>,
) -> Result<QuadraticSfaNode> {
    fit_quadratic_node_stream(
        &MatrixSource(data),
        params,
        TimeStructure::new(boundaries, weights),
    )
    .map(|(node, _)| node)
}

struct ExpandedSource<'a> {
    inner: &'a dyn SeriesSource,
    reduce: &'a LinearSfaTransform,
    noise: Option<Normal<f64>>,
    seed: u64,
}

impl ExpandedSource<'_> {
    /// Returns the reduced signal and its (noisy) expansion.
    fn series_pair(&self, index: usize) -> Result<(Array2<f64>, Array2<f64>)> {
        let x = self.inner.series(index)?;
        check_series(&x, self.inner)?;
        let reduced = self.reduce.apply(x.view())?;
        let mut expanded = quadratic_expand_rows(reduced.view());
        if let Some(noise) = &self.noise {
            // One independent, reproducible stream per series.
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(index as u64);
            for v in expanded.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        Ok((reduced, expanded))
    }
}

impl SeriesSource for ExpandedSource<'_> {
    fn dim(&self) -> usize {
        expanded_dim(self.reduce.output_dim())
    }
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn series_count(&self) -> usize {
        self.inner.series_count()
    }
    fn series(&self, index: usize) -> Result<Array2<f64>> {
        self.series_pair(index).map(|(_, e)| e)
    }
}

/// Fits a quadratic node over every series of `source` and reports the
/// constraint suite of both linear stages on their own training signals.
pub fn fit_quadratic_node_stream(
    source: &dyn SeriesSource,
    params: NodeParams,
    timing: TimeStructure<'_>,
) -> Result<(QuadraticSfaNode, NodeFitReport)> {
    if params.out_dim > expanded_dim(params.mid_dim) {
        return Err(Error::RankDeficient {
            requested: params.out_dim,
            available: expanded_dim(params.mid_dim),
        });
    }
    if !(params.noise_std >= 0.0) {
        return Err(Error::Config("noise std must be non-negative".into()));
    }
    let opts = SfaOptions {
        rank_tol: params.rank_tol,
    };
    let plan = timing.plan(source.len())?;
    let reduce = fit_linear_sfa_stream(source, params.mid_dim, timing, opts)?;

    let expanded_source = ExpandedSource {
        inner: source,
        reduce: &reduce,
        noise: (params.noise_std > 0.0)
            .then(|| Normal::new(0.0, params.noise_std).expect("validated std")),
        seed: params.seed,
    };
    let dim = expanded_source.dim();

    // Pass 1: mean of the expanded signal, constraint check of the reduction.
    let mut reduce_check = ConstraintAccumulator::new(reduce.output_dim(), &plan);
    let mut mean_acc = MeanAccumulator::new(dim);
    for i in 0..source.series_count() {
        let (reduced, expanded) = expanded_source.series_pair(i)?;
        reduce_check.add_series(reduced.view())?;
        mean_acc.add_rows(expanded.view(), None)?;
    }
    let mean = mean_acc.finish()?;

    // Pass 2: centered covariance and difference moments.
    let mut cov = GramAccumulator::new(dim);
    let mut diff = GramAccumulator::new(dim);
    for i in 0..source.series_count() {
        let mut e = expanded_source.series(i)?;
        diff.add_rows(plan.differences(e.view()).view(), plan.weights())?;
        e -= &mean.view().insert_axis(Axis(0));
        cov.add_rows(e.view(), None)?;
    }
    let extract = LinearSfaTransform::from_moments(
        mean,
        cov.finish()?.view(),
        diff.finish()?.view(),
        params.out_dim,
        params.rank_tol,
    )?;

    // Pass 3: verify the extraction on its own training signal.
    let mut extract_check = ConstraintAccumulator::new(extract.output_dim(), &plan);
    let mut clipped = 0usize;
    let mut total = 0usize;
    for i in 0..source.series_count() {
        let e = expanded_source.series(i)?;
        let y = extract.apply(e.view())?;
        clipped += y.iter().filter(|v| v.abs() > params.clip_bound).count();
        total += y.len();
        extract_check.add_series(y.view())?;
    }

    let report = NodeFitReport {
        reduce: reduce_check.finish()?,
        extract: extract_check.finish()?,
        clip_fraction: clipped as f64 / total.max(1) as f64,
    };
    let node = QuadraticSfaNode::from_parts(reduce, extract, params.noise_std, params.clip_bound)?;
    Ok((node, report))
}

/// Per-action point weights for learning rate adaptation, aggregated over
/// consecutive steps by the geometric mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LraConfig {
    /// Indexed by action id.
    pub point_weights: Vec<f64>,
}

impl LraConfig {
    pub fn new(point_weights: Vec<f64>) -> Result<Self> {
        if point_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeights);
        }
        Ok(Self { point_weights })
    }

    fn point_weight(&self, action: u8) -> Result<f64> {
        self.point_weights
            .get(action as usize)
            .copied()
            .ok_or(Error::UnknownAction(action))
    }
}

/// Difference weight for steps `(i, i+1)` is `sqrt(w_i · w_{i+1})`.
pub fn lra_weights(actions: &[u8], config: &LraConfig) -> Result<SampleWeights> {
    let points = actions
        .iter()
        .map(|&a| config.point_weight(a))
        .collect::<Result<Vec<_>>>()?;
    SampleWeights::new(points.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect())
}
