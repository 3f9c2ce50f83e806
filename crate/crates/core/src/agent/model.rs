//! Actor-critic MLP with hand-written gradients.
//!
//! A shared tanh trunk `in → 64 → 64` feeds a policy head with one logit per
//! action and a scalar value head. All parameters live in one flat vector so
//! the optimizer and the finite-difference checks can treat them uniformly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numcore::orthonormalize_columns;

const MAGIC: &[u8; 8] = b"SLOWPPO\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub const HIDDEN: usize = 64;

/// Layer sizes of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub input: usize,
    pub hidden: usize,
    pub actions: usize,
}

impl ModelShape {
    pub fn new(input: usize, actions: usize) -> Self {
        Self {
            input,
            hidden: HIDDEN,
            actions,
        }
    }

    /// Offsets of w1, b1, w2, b2, wa, ba, wv, bv and the total length.
    fn offsets(&self) -> [usize; 9] {
        let (i, h, a) = (self.input, self.hidden, self.actions);
        let sizes = [h * i, h, h * h, h, a * h, a, h, 1];
        let mut out = [0; 9];
        for (k, n) in sizes.iter().enumerate() {
            out[k + 1] = out[k] + n;
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.offsets()[8]
    }
}

/// Borrowed views of the eight parameter blocks.
struct Blocks<'a> {
    w1: ArrayView2<'a, f64>,
    b1: ArrayView1<'a, f64>,
    w2: ArrayView2<'a, f64>,
    b2: ArrayView1<'a, f64>,
    wa: ArrayView2<'a, f64>,
    ba: ArrayView1<'a, f64>,
    wv: ArrayView1<'a, f64>,
    bv: f64,
}

struct BlocksMut<'a> {
    w1: ArrayViewMut2<'a, f64>,
    b1: ArrayViewMut1<'a, f64>,
    w2: ArrayViewMut2<'a, f64>,
    b2: ArrayViewMut1<'a, f64>,
    wa: ArrayViewMut2<'a, f64>,
    ba: ArrayViewMut1<'a, f64>,
    wv: ArrayViewMut1<'a, f64>,
    bv: ArrayViewMut1<'a, f64>,
}

fn split(shape: ModelShape, p: &[f64]) -> Blocks<'_> {
    let o = shape.offsets();
    let (i, h, a) = (shape.input, shape.hidden, shape.actions);
    let m = |k: usize, r: usize, c: usize| {
        ArrayView2::from_shape((r, c), &p[o[k]..o[k + 1]]).expect("block size")
    };
    let v = |k: usize| ArrayView1::from(&p[o[k]..o[k + 1]]);
    Blocks {
        w1: m(0, h, i),
        b1: v(1),
        w2: m(2, h, h),
        b2: v(3),
        wa: m(4, a, h),
        ba: v(5),
        wv: v(6),
        bv: p[o[7]],
    }
}

/// `x·wᵀ + bias` for row-major `x` (batch×in) and `w` (out×in). Policy
/// batches are small, where plain row dot products beat a packed GEMM.
fn affine(x: &Array2<f64>, w: ArrayView2<'_, f64>, bias: ArrayView1<'_, f64>) -> Array2<f64> {
    let (n, k) = x.dim();
    let m = w.nrows();
    let xs = x.as_slice().expect("standard layout");
    let ws = w.as_slice().expect("parameter blocks are contiguous");
    let bs = bias.as_slice().expect("parameter blocks are contiguous");
    let mut out = Vec::with_capacity(n * m);
    for row in xs.chunks_exact(k) {
        for (wr, &b) in ws.chunks_exact(k).zip(bs) {
            out.push(b + dot(row, wr));
        }
    }
    Array2::from_shape_vec((n, m), out).expect("shape matches")
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn split_mut(shape: ModelShape, p: &mut [f64]) -> BlocksMut<'_> {
    let o = shape.offsets();
    let (i, h, a) = (shape.input, shape.hidden, shape.actions);
    let (w1, rest) = p.split_at_mut(o[1]);
    let (b1, rest) = rest.split_at_mut(o[2] - o[1]);
    let (w2, rest) = rest.split_at_mut(o[3] - o[2]);
    let (b2, rest) = rest.split_at_mut(o[4] - o[3]);
    let (wa, rest) = rest.split_at_mut(o[5] - o[4]);
    let (ba, rest) = rest.split_at_mut(o[6] - o[5]);
    let (wv, bv) = rest.split_at_mut(o[7] - o[6]);
    BlocksMut {
        w1: ArrayViewMut2::from_shape((h, i), w1).expect("block size"),
        b1: ArrayViewMut1::from(b1),
        w2: ArrayViewMut2::from_shape((h, h), w2).expect("block size"),
        b2: ArrayViewMut1::from(b2),
        wa: ArrayViewMut2::from_shape((a, h), wa).expect("block size"),
        ba: ArrayViewMut1::from(ba),
        wv: ArrayViewMut1::from(wv),
        bv: ArrayViewMut1::from(bv),
    }
}

/// Activations of a batch forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Array2<f64>,
    pub h1: Array2<f64>,
    pub h2: Array2<f64>,
    pub logits: Array2<f64>,
    pub values: Array1<f64>,
}

impl ForwardCache {
    /// Row-wise softmax of the logits.
    pub fn probs(&self) -> Array2<f64> {
        let mut p = self.logits.clone();
        for mut row in p.rows_mut() {
            softmax_in_place(row.view_mut());
        }
        p
    }
}

pub(crate) fn softmax_in_place(mut row: ArrayViewMut1<'_, f64>) {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    row.mapv_inplace(|v| (v - max).exp());
    let sum = row.sum();
    row /= sum;
}

/// Log-softmax of one logit row.
pub fn log_softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.mapv(|v| v - lse)
}

/// Orthogonal `rows×cols` matrix scaled by `gain`, from a seeded Gaussian.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let mut q = Array2::from_shape_simple_fn((tall, short), || StandardNormal.sample(rng));
    orthonormalize_columns(&mut q);
    let q = if rows >= cols { q } else { q.reversed_axes() };
    q.as_standard_layout().mapv(|v| v * gain)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    shape: ModelShape,
    params: Vec<f64>,
}

impl PolicyModel {
    /// Orthogonal initialization with gains √2 (trunk), 0.01 (policy head)
    /// and 1 (value head); zero biases.
    pub fn new(shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; shape.param_count()];
        let (i, h, a) = (shape.input, shape.hidden, shape.actions);
        let root2 = std::f64::consts::SQRT_2;
        let w1 = orthogonal(h, i, root2, &mut rng);
        let w2 = orthogonal(h, h, root2, &mut rng);
        let wa = orthogonal(a, h, 0.01, &mut rng);
        let wv = orthogonal(1, h, 1.0, &mut rng);
        let mut b = split_mut(shape, &mut params);
        b.w1.assign(&w1);
        b.w2.assign(&w2);
        b.wa.assign(&wa);
        b.wv.assign(&wv.row(0));
        Self { shape, params }
    }

    pub fn from_params(shape: ModelShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: shape.param_count(),
                found: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Zeroes both heads, giving a uniform policy and zero values.
    pub fn zero_heads(&mut self) {
        let o = self.shape.offsets();
        self.params[o[4]..].fill(0.0);
    }

    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if input.ncols() != self.shape.input {
            return Err(Error::DimensionMismatch {
                what: "policy input",
                expected: self.shape.input,
                found: input.ncols(),
            });
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        let b = split(self.shape, &self.params);
        let input = input.as_standard_layout().into_owned();
        let mut h1 = affine(&input, b.w1, b.b1);
        h1.mapv_inplace(f64::tanh);
        let mut h2 = affine(&h1, b.w2, b.b2);
        h2.mapv_inplace(f64::tanh);
        let logits = affine(&h2, b.wa, b.ba);
        let values = h2.dot(&b.wv) + b.bv;
        Ok(ForwardCache {
            input,
            h1,
            h2,
            logits,
            values,
        })
    }

    /// Action probabilities and value for one feature vector.
    pub fn forward(&self, features: ArrayView1<'_, f64>) -> Result<(Array1<f64>, f64)> {
        let cache = self.forward_batch(features.insert_axis(Axis(0)))?;
        let probs = cache.probs().row(0).to_owned();
        Ok((probs, cache.values[0]))
    }

    /// Gradient of a loss given its derivatives with respect to the logits
    /// (B×A) and values (B).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: ArrayView2<'_, f64>,
        d_values: ArrayView1<'_, f64>,
    ) -> Vec<f64> {
        let b = split(self.shape, &self.params);
        let mut grad = vec![0.0; self.params.len()];
        let g = split_mut(self.shape, &mut grad);
        let BlocksMut {
            mut w1,
            mut b1,
            mut w2,
            mut b2,
            mut wa,
            mut ba,
            mut wv,
            mut bv,
        } = g;

        wa.assign(&d_logits.t().dot(&cache.h2));
        ba.assign(&d_logits.sum_axis(Axis(0)));
        wv.assign(&cache.h2.t().dot(&d_values));
        bv[0] = d_values.sum();

        let mut dh2 = d_logits.dot(&b.wa);
        for (mut row, &dv) in dh2.rows_mut().into_iter().zip(d_values) {
            row.scaled_add(dv, &b.wv);
        }
        let dz2 = dh2 * cache.h2.mapv(|v| 1.0 - v * v);
        w2.assign(&dz2.t().dot(&cache.h1));
        b2.assign(&dz2.sum_axis(Axis(0)));

        let dh1 = dz2.dot(&b.w2);
        let dz1 = dh1 * cache.h1.mapv(|v| 1.0 - v * v);
        w1.assign(&dz1.t().dot(&cache.input));
        b1.assign(&dz1.sum_axis(Axis(0)));
        grad
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        for d in [self.shape.input, self.shape.hidden, self.shape.actions] {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in &self.params {
            w.write_f64::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Corrupt("not a policy checkpoint (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = r.read_u32::<LittleEndian>()? as usize;
            if *d == 0 || *d > 1 << 16 {
                return Err(Error::Corrupt(format!("implausible layer size {d}")));
            }
        }
        let shape = ModelShape {
            input: dims[0],
            hidden: dims[1],
            actions: dims[2],
        };
        let mut params = vec![0.0; shape.param_count()];
        r.read_f64_into::<LittleEndian>(&mut params)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Corrupt("trailing bytes after checkpoint".into()));
        }
        Self::from_params(shape, params).map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Views of the first-layer weights, for tests against an independent
    /// matrix chain.
    pub fn layer(&self, index: usize) -> (Array2<f64>, Array1<f64>) {
        let b = split(self.shape, &self.params);
        match index {
            0 => (b.w1.to_owned(), b.b1.to_owned()),
            1 => (b.w2.to_owned(), b.b2.to_owned()),
            2 => (b.wa.to_owned(), b.ba.to_owned()),
            _ => (
                b.wv.to_owned().insert_axis(Axis(0)),
                Array1::from_elem(1, b.bv),
            ),
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / (norm + 1e-6);
        grad.iter_mut().for_each(|g| *g *= k);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn orthogonal_blocks() {
        let m = PolicyModel::new(ModelShape::new(32, 3), 4);
        let (w1, b1) = m.layer(0);
        // 64×32: orthonormal columns scaled by √2.
        let g = w1.t().dot(&w1) / 2.0;
        for i in 0..32 {
            for j in 0..32 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - e).abs() < 1e-12);
            }
        }
        assert!(b1.iter().all(|&v| v == 0.0));
        // 3×64: orthonormal rows scaled by 0.01.
        let (wa, _) = m.layer(2);
        let g = wa.dot(&wa.t()) / 1e-4;
        for i in 0..3 {
            assert!((g[[i, i]] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_heads_give_uniform_policy() {
        let mut m = PolicyModel::new(ModelShape::new(5, 3), 0);
        m.zero_heads();
        let (p, v) = m.forward(Array1::linspace(-1.0, 1.0, 5).view()).unwrap();
        for &q in &p {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(v, 0.0);
    }

    #[test]
    fn forward_matches_explicit_chain() {
        let m = PolicyModel::new(ModelShape::new(6, 3), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (w1, b1) = m.layer(0);
        let (w2, b2) = m.layer(1);
        let (wa, ba) = m.layer(2);
        // Scalar loops, independent of the ndarray products in forward.
        let dense = |w: &Array2<f64>, b: &Array1<f64>, v: &[f64], act: bool| -> Vec<f64> {
            (0..w.nrows())
                .map(|r| {
                    let mut s = b[r];
                    for c in 0..w.ncols() {
                        s += w[[r, c]] * v[c];
                    }
                    if act {
                        s.tanh()
                    } else {
                        s
                    }
                })
                .collect()
        };
        let h1 = dense(&w1, &b1, &x, true);
        let h2 = dense(&w2, &b2, &h1, true);
        let logits = dense(&wa, &ba, &h2, false);
        let cache = m
            .forward_batch(ArrayView2::from_shape((1, 6), &x).unwrap())
            .unwrap();
        for (a, b) in cache.logits.row(0).iter().zip(&logits) {
            assert!((a - b).abs() <= 1e-12);
        }
        let (p, _) = m.forward(ArrayView1::from(&x)).unwrap();
        assert!((p.sum() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = PolicyModel::new(ModelShape::new(4, 3), 2);
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(PolicyModel::read_from(&mut buf.as_slice()).unwrap(), m);
        assert!(PolicyModel::read_from(&mut &buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[8] = 7;
        assert!(matches!(
            PolicyModel::read_from(&mut bad.as_slice()),
            Err(Error::UnsupportedVersion { .. })
        ));
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let mut m = PolicyModel::new(ModelShape::new(4, 3), 2);
        m.params_mut()[3] = f64::NAN;
        assert!(m.forward(Array1::zeros(4).view()).is_err());
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(2, 0.1);
        opt.step(&mut p, &[2.0, -3.0]);
        // First Adam step moves each coordinate by about lr.
        assert!((p[0] - 0.9).abs() < 1e-5);
        assert!((p[1] + 0.9).abs() < 1e-5);
    }

    #[test]
    fn grad_clip() {
        let mut g = vec![3.0, 4.0];
        let n = clip_grad_norm(&mut g, 0.5);
        assert_eq!(n, 5.0);
        assert!((g[0].hypot(g[1]) - 0.5).abs() < 1e-6);
    }
}
